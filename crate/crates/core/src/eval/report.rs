//! Tabular reports in three interchangeable encodings.
//!
//! Every report has a fixed column schema chosen by its [`ReportKind`] and a
//! header carrying the engine version, a hash of the producing
//! configuration, the seeds, and optional extra key/value lines.
//!
//! * `records`: one JSON object per line; the first line is the header.
//! * `table`: `# key: value` header lines, a line of column names, then
//!   whitespace-aligned rows with floats to four decimals.
//! * `csv`: the same `#` header lines, then comma-separated values with
//!   floats at full precision.
//!
//! Missing values are `null`, `-`, and an empty field respectively. Parsing
//! any emitted report and emitting it again reproduces the same bytes.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::EvalError;
use crate::eval::analysis::{EntropyRow, PositionRow, SubsetDivergence, SubsetDivergenceReport, TimingRow};
use crate::eval::pope::PopeEvaluation;
use crate::eval::sweep::SweepTable;
use crate::synthetic::Setting;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Int,
    Float,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportKind {
    Pope,
    Sweep,
    Entropy,
    Divergence,
    Position,
    Timing,
}

const POPE_COLUMNS: &[(&str, ColumnKind)] = &[
    ("strategy", ColumnKind::Text),
    ("setting", ColumnKind::Text),
    ("n_items", ColumnKind::Int),
    ("runs", ColumnKind::Int),
    ("accuracy", ColumnKind::Float),
    ("accuracy_std", ColumnKind::Float),
    ("precision", ColumnKind::Float),
    ("precision_std", ColumnKind::Float),
    ("recall", ColumnKind::Float),
    ("recall_std", ColumnKind::Float),
    ("f1", ColumnKind::Float),
    ("f1_std", ColumnKind::Float),
];
const SWEEP_COLUMNS: &[(&str, ColumnKind)] = &[
    ("value", ColumnKind::Float),
    ("model", ColumnKind::Text),
    ("accuracy", ColumnKind::Float),
    ("precision", ColumnKind::Float),
    ("recall", ColumnKind::Float),
    ("f1", ColumnKind::Float),
];
const ENTROPY_COLUMNS: &[(&str, ColumnKind)] = &[("decoding", ColumnKind::Text), ("entropy", ColumnKind::Float)];
const DIVERGENCE_COLUMNS: &[(&str, ColumnKind)] = &[
    ("subset", ColumnKind::Text),
    ("kl_m_u", ColumnKind::Float),
    ("kl_u_m", ColumnKind::Float),
    ("js", ColumnKind::Float),
    ("n_items", ColumnKind::Int),
];
const POSITION_COLUMNS: &[(&str, ColumnKind)] = &[
    ("position", ColumnKind::Int),
    ("kl_value", ColumnKind::Float),
    ("n_traces", ColumnKind::Int),
];
const TIMING_COLUMNS: &[(&str, ColumnKind)] = &[
    ("decoding", ColumnKind::Text),
    ("seconds_per_token", ColumnKind::Float),
    ("queries_per_token", ColumnKind::Float),
    ("tokens", ColumnKind::Int),
];

impl ReportKind {
    pub const ALL: [ReportKind; 6] = [
        ReportKind::Pope,
        ReportKind::Sweep,
        ReportKind::Entropy,
        ReportKind::Divergence,
        ReportKind::Position,
        ReportKind::Timing,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ReportKind::Pope => "pope",
            ReportKind::Sweep => "sweep",
            ReportKind::Entropy => "entropy",
            ReportKind::Divergence => "divergence",
            ReportKind::Position => "position",
            ReportKind::Timing => "timing",
        }
    }

    pub fn columns(&self) -> &'static [(&'static str, ColumnKind)] {
        match self {
            ReportKind::Pope => POPE_COLUMNS,
            ReportKind::Sweep => SWEEP_COLUMNS,
            ReportKind::Entropy => ENTROPY_COLUMNS,
            ReportKind::Divergence => DIVERGENCE_COLUMNS,
            ReportKind::Position => POSITION_COLUMNS,
            ReportKind::Timing => TIMING_COLUMNS,
        }
    }

    pub fn column_names(&self) -> Vec<&'static str> {
        self.columns().iter().map(|c| c.0).collect()
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Records,
    Table,
    Csv,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Records => "jsonl",
            ReportFormat::Table => "txt",
            ReportFormat::Csv => "csv",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Records => "records",
            ReportFormat::Table => "table",
            ReportFormat::Csv => "csv",
        })
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "records" => Ok(ReportFormat::Records),
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected records, table or csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Missing,
}

impl Cell {
    /// Non-finite values become [`Cell::Missing`].
    pub fn float(v: f64) -> Self {
        if v.is_finite() {
            Cell::Float(v)
        } else {
            Cell::Missing
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn int(v: usize) -> Self {
        Cell::Int(v as i64)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Float(v) => Some(v),
            Cell::Int(v) => Some(v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn kind_matches(&self, kind: ColumnKind) -> bool {
        matches!(
            (self, kind),
            (Cell::Missing, _) | (Cell::Int(_), ColumnKind::Int) | (Cell::Float(_), ColumnKind::Float) | (Cell::Text(_), ColumnKind::Text)
        )
    }
}

/// Provenance lines carried by every report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportHeader {
    pub engine_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Extra `key: value` lines in emission order.
    pub meta: Vec<(String, String)>,
}

impl ReportHeader {
    pub fn new(config_hash: impl Into<String>, seeds: Vec<u64>) -> Self {
        Self {
            engine_version: ENGINE_VERSION.to_string(),
            config_hash: config_hash.into(),
            seeds,
            meta: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.push((key.into(), value.into()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Lowercase hex SHA-256 of the compact JSON encoding of `config`.
pub fn config_hash<T: Serialize + ?Sized>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes to JSON");
    Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: ReportKind,
    pub header: ReportHeader,
    pub rows: Vec<Vec<Cell>>,
}

fn parse_err(line: usize, message: impl Into<String>) -> EvalError {
    EvalError::ReportParse {
        line,
        message: message.into(),
    }
}

const RESERVED_KEYS: [&str; 4] = ["report", "engine_version", "config_hash", "seeds"];

impl Report {
    pub fn new(kind: ReportKind, header: ReportHeader) -> Self {
        Self {
            kind,
            header,
            rows: Vec::new(),
        }
    }

    /// Appends a row after checking it against the schema.
    pub fn push(&mut self, row: Vec<Cell>) -> Result<(), EvalError> {
        let cols = self.kind.columns();
        if row.len() != cols.len() {
            return Err(parse_err(0, format!("{} report rows have {} cells, got {}", self.kind, cols.len(), row.len())));
        }
        if let Some(((name, _), _)) = cols.iter().zip(&row).find(|((_, k), c)| !c.kind_matches(*k)) {
            return Err(parse_err(0, format!("cell for column `{name}` has the wrong type")));
        }
        if let Some(Cell::Text(t)) = row.iter().find(|c| matches!(c, Cell::Text(t) if t.is_empty() || t.contains(char::is_whitespace) || t == "-")) {
            return Err(parse_err(0, format!("text cell `{t}` must be non-empty, without whitespace, and not `-`")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.kind.columns().iter().position(|c| c.0 == name)
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&Cell> {
        self.rows.get(row)?.get(self.column(column)?)
    }

    pub fn emit(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Records => self.emit_records(),
            ReportFormat::Table => self.emit_table(),
            ReportFormat::Csv => self.emit_csv(),
        }
    }

    pub fn parse(text: &str, format: ReportFormat) -> Result<Self, EvalError> {
        match format {
            ReportFormat::Records => Self::parse_records(text),
            ReportFormat::Table | ReportFormat::Csv => Self::parse_delimited(text, format),
        }
    }

    fn header_lines(&self) -> Vec<(String, String)> {
        let h = &self.header;
        let seeds: Vec<String> = h.seeds.iter().map(u64::to_string).collect();
        let mut lines = vec![
            ("report".to_string(), self.kind.name().to_string()),
            ("engine_version".to_string(), h.engine_version.clone()),
            ("config_hash".to_string(), h.config_hash.clone()),
            ("seeds".to_string(), seeds.join(",")),
        ];
        lines.extend(h.meta.iter().cloned());
        lines
    }

    fn emit_records(&self) -> String {
        let mut head = Map::new();
        for (k, v) in self.header_lines() {
            let value = match k.as_str() {
                "seeds" => Value::from(self.header.seeds.clone()),
                _ => Value::String(v),
            };
            head.insert(k, value);
        }
        head.insert("columns".into(), Value::from(self.kind.column_names()));
        let mut out = serde_json::to_string(&head).expect("header serializes");
        out.push('\n');
        for row in &self.rows {
            let record: Map<String, Value> = self
                .kind
                .columns()
                .iter()
                .zip(row)
                .map(|((name, _), cell)| {
                    let v = match cell {
                        Cell::Int(i) => Value::from(*i),
                        Cell::Float(f) => Value::from(*f),
                        Cell::Text(s) => Value::from(s.as_str()),
                        Cell::Missing => Value::Null,
                    };
                    (name.to_string(), v)
                })
                .collect();
            out.push_str(&serde_json::to_string(&record).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    fn parse_records(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty report"))?;
        let head: Map<String, Value> = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
        let get_str = |k: &str| {
            head.get(k)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| parse_err(1, format!("header lacks `{k}`")))
        };
        let kind_name = get_str("report")?;
        let kind = ReportKind::from_name(&kind_name).ok_or_else(|| parse_err(1, format!("unknown report `{kind_name}`")))?;
        let seeds = head
            .get("seeds")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(1, "header lacks `seeds`"))?
            .iter()
            .map(|s| s.as_u64().ok_or_else(|| parse_err(1, "seeds must be unsigned integers")))
            .collect::<Result<Vec<_>, _>>()?;
        let columns: Vec<&str> = head
            .get("columns")
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(1, "header lacks `columns`"))?
            .iter()
            .map(|c| c.as_str().unwrap_or(""))
            .collect();
        if columns != kind.column_names() {
            return Err(parse_err(1, format!("columns do not match the {kind} schema")));
        }
        let mut meta = Vec::new();
        for (k, v) in &head {
            if RESERVED_KEYS.contains(&k.as_str()) || k == "columns" {
                continue;
            }
            let v = v.as_str().ok_or_else(|| parse_err(1, format!("header value `{k}` must be a string")))?;
            meta.push((k.clone(), v.to_string()));
        }
        let header = ReportHeader {
            engine_version: get_str("engine_version")?,
            config_hash: get_str("config_hash")?,
            seeds,
            meta,
        };
        let mut report = Report::new(kind, header);
        for (n, line) in lines {
            let record: Map<String, Value> = serde_json::from_str(line).map_err(|e| parse_err(n + 1, e.to_string()))?;
            if record.len() != columns.len() {
                return Err(parse_err(n + 1, "row does not match the column set"));
            }
            let mut row = Vec::with_capacity(columns.len());
            for (name, kind) in kind.columns() {
                let v = record.get(*name).ok_or_else(|| parse_err(n + 1, format!("row lacks `{name}`")))?;
                let cell = match (kind, v) {
                    (_, Value::Null) => Cell::Missing,
                    (ColumnKind::Int, v) => Cell::Int(v.as_i64().ok_or_else(|| parse_err(n + 1, format!("`{name}` must be an integer")))?),
                    (ColumnKind::Float, v) => Cell::Float(v.as_f64().ok_or_else(|| parse_err(n + 1, format!("`{name}` must be a number")))?),
                    (ColumnKind::Text, Value::String(s)) => Cell::Text(s.clone()),
                    (ColumnKind::Text, _) => return Err(parse_err(n + 1, format!("`{name}` must be a string"))),
                };
                row.push(cell);
            }
            report.push(row).map_err(|e| parse_err(n + 1, e.to_string()))?;
        }
        Ok(report)
    }

    fn comment_block(&self) -> String {
        self.header_lines().into_iter().map(|(k, v)| format!("# {k}: {v}\n")).collect()
    }

    fn emit_table(&self) -> String {
        let rendered: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| match c {
                        Cell::Int(i) => i.to_string(),
                        Cell::Float(f) => format!("{f:.4}"),
                        Cell::Text(s) => s.clone(),
                        Cell::Missing => "-".to_string(),
                    })
                    .collect()
            })
            .collect();
        let cols = self.kind.columns();
        let widths: Vec<usize> = cols
            .iter()
            .enumerate()
            .map(|(i, (name, _))| rendered.iter().map(|r| r[i].len()).chain([name.len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: Vec<&str>| {
            let parts: Vec<String> = cells
                .iter()
                .zip(cols)
                .zip(&widths)
                .map(|((c, (_, kind)), &w)| match kind {
                    ColumnKind::Text => format!("{c:<w$}"),
                    _ => format!("{c:>w$}"),
                })
                .collect();
            let mut s = parts.join("  ").trim_end().to_string();
            s.push('\n');
            s
        };
        let mut out = self.comment_block();
        out.push_str(&line(self.kind.column_names()));
        for r in &rendered {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
        }
        out
    }

    fn emit_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(self.kind.column_names()).expect("in-memory write");
        for row in &self.rows {
            let fields: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(i) => i.to_string(),
                    Cell::Float(f) => format!("{f:?}"),
                    Cell::Text(s) => s.clone(),
                    Cell::Missing => String::new(),
                })
                .collect();
            writer.write_record(&fields).expect("in-memory write");
        }
        let body = String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is UTF-8");
        self.comment_block() + &body
    }

    fn parse_delimited(text: &str, format: ReportFormat) -> Result<Self, EvalError> {
        let mut fields: Vec<(usize, String, String)> = Vec::new();
        let mut body_start = None;
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once(": ")
                    .or_else(|| rest.strip_suffix(':').map(|k| (k, "")))
                    .ok_or_else(|| parse_err(n + 1, "header line must be `# key: value`"))?;
                fields.push((n + 1, k.to_string(), v.to_string()));
            } else {
                body_start = Some(n);
                break;
            }
        }
        let lookup = |key: &str| {
            fields
                .iter()
                .find(|f| f.1 == key)
                .map(|f| f.2.clone())
                .ok_or_else(|| parse_err(1, format!("header lacks `{key}`")))
        };
        let kind_name = lookup("report")?;
        let kind = ReportKind::from_name(&kind_name).ok_or_else(|| parse_err(1, format!("unknown report `{kind_name}`")))?;
        let seeds_text = lookup("seeds")?;
        let seeds = if seeds_text.is_empty() {
            Vec::new()
        } else {
            seeds_text
                .split(',')
                .map(|s| s.parse::<u64>().map_err(|e| parse_err(1, format!("seed `{s}`: {e}"))))
                .collect::<Result<_, _>>()?
        };
        let header = ReportHeader {
            engine_version: lookup("engine_version")?,
            config_hash: lookup("config_hash")?,
            seeds,
            meta: fields
                .iter()
                .filter(|f| !RESERVED_KEYS.contains(&f.1.as_str()))
                .map(|f| (f.1.clone(), f.2.clone()))
                .collect(),
        };
        let start = body_start.ok_or_else(|| parse_err(fields.len() + 1, "missing column line"))?;
        let body: Vec<&str> = text.lines().skip(start).collect();
        let mut records: Vec<Vec<String>> = Vec::new();
        match format {
            ReportFormat::Csv => {
                let joined = body.join("\n");
                let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(joined.as_bytes());
                for (i, rec) in reader.records().enumerate() {
                    let rec = rec.map_err(|e| parse_err(start + i + 1, e.to_string()))?;
                    records.push(rec.iter().map(str::to_string).collect());
                }
            }
            _ => {
                for line in body.iter().filter(|l| !l.trim().is_empty()) {
                    records.push(line.split_whitespace().map(str::to_string).collect());
                }
            }
        }
        let mut records = records.into_iter().enumerate();
        let names = records.next().map(|r| r.1).unwrap_or_default();
        if names != kind.column_names() {
            return Err(parse_err(start + 1, format!("columns do not match the {kind} schema")));
        }
        let mut report = Report::new(kind, header);
        let missing = if format == ReportFormat::Csv { "" } else { "-" };
        for (i, rec) in records {
            let line = start + i + 1;
            if rec.len() != names.len() {
                return Err(parse_err(line, format!("expected {} fields, found {}", names.len(), rec.len())));
            }
            let mut row = Vec::with_capacity(rec.len());
            for (field, (name, kind)) in rec.iter().zip(kind.columns()) {
                let cell = if field == missing {
                    Cell::Missing
                } else {
                    match kind {
                        ColumnKind::Int => Cell::Int(field.parse().map_err(|e| parse_err(line, format!("`{name}`: {e}")))?),
                        ColumnKind::Float => Cell::Float(field.parse().map_err(|e| parse_err(line, format!("`{name}`: {e}")))?),
                        ColumnKind::Text => Cell::Text(field.clone()),
                    }
                };
                row.push(cell);
            }
            report.push(row).map_err(|e| parse_err(line, e.to_string()))?;
        }
        Ok(report)
    }
}

/// One row per evaluated strategy; metric columns are percentages.
pub fn pope_report(header: ReportHeader, setting: Setting, evaluations: &[PopeEvaluation]) -> Result<Report, EvalError> {
    let mut report = Report::new(ReportKind::Pope, header);
    for e in evaluations {
        let m = &e.metrics;
        let mut row = vec![
            Cell::text(&e.strategy.name),
            Cell::text(setting.to_string()),
            Cell::int(m.n_items),
            Cell::int(m.runs),
        ];
        for s in [m.accuracy, m.precision, m.recall, m.f1] {
            row.push(Cell::float(s.mean));
            row.push(Cell::float(s.std));
        }
        report.push(row)?;
    }
    Ok(report)
}

/// Mean metrics per sweep value, with a `param` header line.
pub fn sweep_report(header: ReportHeader, table: &SweepTable) -> Result<Report, EvalError> {
    let mut report = Report::new(ReportKind::Sweep, header.with_meta("param", table.param.to_string()));
    for r in &table.rows {
        let m = &r.metrics;
        report.push(vec![
            Cell::float(r.value),
            Cell::text(&r.model),
            Cell::float(m.accuracy.mean),
            Cell::float(m.precision.mean),
            Cell::float(m.recall.mean),
            Cell::float(m.f1.mean),
        ])?;
    }
    Ok(report)
}

pub fn entropy_table(header: ReportHeader, rows: &[EntropyRow]) -> Result<Report, EvalError> {
    let mut report = Report::new(ReportKind::Entropy, header);
    for r in rows {
        report.push(vec![Cell::text(&r.decoding), Cell::float(r.entropy)])?;
    }
    Ok(report)
}

/// Both subsets always appear; an empty subset has missing values and
/// `n_items` 0.
pub fn divergence_table(header: ReportHeader, rep: &SubsetDivergenceReport) -> Result<Report, EvalError> {
    let mut report = Report::new(ReportKind::Divergence, header);
    let row = |name: &str, d: Option<SubsetDivergence>| match d {
        Some(d) => vec![
            Cell::text(name),
            Cell::float(d.kl_m_u),
            Cell::float(d.kl_u_m),
            Cell::float(d.js),
            Cell::int(d.n_items),
        ],
        None => vec![Cell::text(name), Cell::Missing, Cell::Missing, Cell::Missing, Cell::int(0)],
    };
    report.push(row("hallucination", rep.hallucination))?;
    report.push(row("no_hallucination", rep.no_hallucination))?;
    Ok(report)
}

pub fn position_table(header: ReportHeader, rows: &[PositionRow]) -> Result<Report, EvalError> {
    let mut report = Report::new(ReportKind::Position, header);
    for r in rows {
        report.push(vec![Cell::int(r.position), Cell::float(r.kl_value), Cell::int(r.n_traces)])?;
    }
    Ok(report)
}

pub fn timing_table(header: ReportHeader, rows: &[TimingRow]) -> Result<Report, EvalError> {
    let mut report = Report::new(ReportKind::Timing, header);
    let opt = |v: Option<f64>| v.map_or(Cell::Missing, Cell::float);
    for r in rows {
        report.push(vec![
            Cell::text(&r.decoding),
            opt(r.seconds_per_token),
            opt(r.queries_per_token),
            Cell::int(r.tokens),
        ])?;
    }
    Ok(report)
}
