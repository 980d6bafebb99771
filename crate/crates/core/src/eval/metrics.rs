use serde::{Deserialize, Serialize};

/// Binary confusion counts with "yes" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// What a decoded answer amounted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    /// Neither answer token; always scored against the labelled class.
    Other,
}

impl Confusion {
    pub fn record(&mut self, label_yes: bool, answer: Answer) {
        match (label_yes, answer) {
            (true, Answer::Yes) => self.tp += 1,
            (true, _) => self.fn_ += 1,
            (false, Answer::No) => self.tn += 1,
            (false, _) => self.fp += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Scores as fractions in `[0, 1]`. Empty denominators give 0.
    pub fn scores(&self) -> Scores {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (`n - 1` denominator; 0 for a
    /// single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Scores aggregated over runs, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopeMetrics {
    pub n_items: usize,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub per_run: Vec<Confusion>,
}

impl PopeMetrics {
    pub fn from_runs(per_run: Vec<Confusion>) -> Self {
        let scores: Vec<Scores> = per_run.iter().map(Confusion::scores).collect();
        let pct = |f: fn(&Scores) -> f64| MeanStd::of(&scores.iter().map(|s| 100.0 * f(s)).collect::<Vec<_>>());
        Self {
            n_items: per_run.first().map_or(0, Confusion::total),
            runs: per_run.len(),
            accuracy: pct(|s| s.accuracy),
            precision: pct(|s| s.precision),
            recall: pct(|s| s.recall),
            f1: pct(|s| s.f1),
            per_run,
        }
    }
}
