//! Brute-force recomputation of the per-step distribution.
//!
//! Everything here is written out longhand from the definitions, without
//! calling the engine's modulation or math routines, so agreement with the
//! engine is evidence rather than tautology. Sums use Neumaier compensation.

use crate::engine::Mode;
use crate::error::SyntheticError;
use crate::math::ProbDist;
use crate::modulation::AlphaPolicy;
use crate::synthetic::model::SyntheticLvlm;
use crate::synthetic::scene::Scene;
use crate::synthetic::ORACLE_MAX_VOCAB;
use crate::vocab::TokenId;

fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

fn log_normalize(x: &[f64]) -> Vec<f64> {
    let mut top = x[0];
    for &v in x {
        if v > top {
            top = v;
        }
    }
    let z = neumaier(x.iter().map(|v| (v - top).exp())).ln();
    x.iter().map(|v| v - top - z).collect()
}

fn relative_entropy(log_p: &[f64], log_q: &[f64]) -> f64 {
    neumaier(log_p.iter().zip(log_q).map(|(a, b)| a.exp() * (a - b)))
}

/// Logits of one stream of `scene` at `context`, rebuilt from the model's
/// tables.
fn stream(
    model: &SyntheticLvlm,
    scene: &Scene,
    context: &[TokenId],
    visual: bool,
) -> Result<Vec<f64>, SyntheticError> {
    let g = model.grammar();
    let mut logits = model.prior().row(context.last().copied()).as_slice().to_vec();
    if !visual {
        return Ok(logits);
    }
    let mut present = Vec::new();
    for name in &scene.objects {
        present.push(g.object_id(name)?);
    }
    let strength = scene.visual_boost * (1.0 - scene.distortion_level);
    let n = context.len();
    let asked = if n >= 2 && context[n - 2] == g.is() && g.is_object(context[n - 1]) {
        Some(context[n - 1])
    } else {
        None
    };
    match asked {
        None => {
            for &s in &present {
                logits[s as usize] += strength;
            }
        }
        Some(o) if present.contains(&o) => logits[g.yes() as usize] += strength,
        Some(o) if !present.is_empty() => {
            let mut worst = 0.0f64;
            for &s in &present {
                let seen = model.stats().frequency(s);
                if seen > 0 {
                    worst = worst.max(model.stats().cooccurrence(s, o) as f64 / seen as f64);
                }
            }
            let keep = 1.0 - model.confusability() * worst;
            logits[g.no() as usize] += strength * if keep > 0.0 { keep } else { 0.0 };
        }
        Some(_) => {}
    }
    Ok(logits)
}

/// The exact distribution the engine should sample from at `context` for
/// `scene` under `mode` and `policy`.
///
/// `GenericContrast` contrasts `scene` against `contrast` (both visual
/// streams) and requires it; other modes ignore it.
pub fn oracle_step_distribution(
    model: &SyntheticLvlm,
    scene: &Scene,
    policy: &AlphaPolicy,
    mode: Mode,
    context: &[TokenId],
    contrast: Option<&Scene>,
) -> Result<ProbDist, SyntheticError> {
    let v = model.grammar().vocab_size();
    if v > ORACLE_MAX_VOCAB {
        return Err(SyntheticError::VocabTooLarge(v));
    }
    let final_logits = match mode {
        Mode::Regular => stream(model, scene, context, true)?,
        Mode::TextOnly => stream(model, scene, context, false)?,
        Mode::NoLan | Mode::GenericContrast => {
            let m = stream(model, scene, context, true)?;
            let u = match (mode, contrast) {
                (Mode::NoLan, _) => stream(model, scene, context, false)?,
                (_, Some(other)) => stream(model, other, context, true)?,
                (_, None) => {
                    return Err(SyntheticError::InvalidScene {
                        scene_id: scene.scene_id.clone(),
                        reason: "generic contrast needs a contrast scene".into(),
                    })
                }
            };
            let (lp, lq) = (log_normalize(&m), log_normalize(&u));
            let gamma = 0.5 * (relative_entropy(&lp, &lq).max(0.0) + relative_entropy(&lq, &lp).max(0.0));
            let alpha = match *policy {
                AlphaPolicy::Constant { alpha } => alpha,
                AlphaPolicy::KlTanh { beta } if gamma > 0.0 => {
                    let x = 1.0 / gamma;
                    let t = if x > 20.0 { 1.0 } else { (x.exp() - (-x).exp()) / (x.exp() + (-x).exp()) };
                    beta * (t + 1.0)
                }
                AlphaPolicy::KlSigmoid { beta } if gamma > 0.0 => 2.0 * beta / (1.0 + (-1.0 / gamma).exp()),
                AlphaPolicy::KlTanh { beta } | AlphaPolicy::KlSigmoid { beta } => 2.0 * beta,
            };
            m.iter().zip(&u).map(|(a, b)| (1.0 + alpha) * a - alpha * b).collect()
        }
    };
    let probs: Vec<f64> = log_normalize(&final_logits).into_iter().map(f64::exp).collect();
    Ok(ProbDist::new(probs)?)
}
