//! Detection metrics. The positive class is `Generated` everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    pub fn is_generated(self) -> bool {
        self == Label::Generated
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Generated => "generated",
        })
    }
}

/// A detection score (higher = more likely generated) with its truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: Label,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: format!("{a} labels"),
            actual: format!("{b} labels"),
        });
    }
    Ok(())
}

pub fn accuracy(preds: &[Label], labels: &[Label]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Step-interpolated average precision: mean of the precision at the rank
/// of every positive, ranking by descending score with ties kept in input
/// order.
pub fn average_precision(scored: &[ScoredLabel]) -> Result<f64> {
    if scored.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let positives = scored.iter().filter(|s| s.label.is_generated()).count();
    if positives == 0 {
        return Err(Error::invalid("average precision needs at least one generated example"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    // stable sort keeps input order among equal scores
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].label.is_generated() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// F1 of the generated class; 0 when precision and recall are both 0.
pub fn f1(preds: &[Label], labels: &[Label]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (p, l) in preds.iter().zip(labels) {
        match (p.is_generated(), l.is_generated()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` data; identical inputs
/// give `f64::INFINITY`.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}x{}", a.width(), a.height(), a.channels()),
            actual: format!("{}x{}x{}", b.width(), b.height(), b.channels()),
        });
    }
    let mut se = 0.0;
    let mut count = 0usize;
    for (p, q) in a.planes().iter().zip(b.planes()) {
        for (x, y) in p.data().iter().zip(q.data()) {
            se += (x - y) * (x - y);
            count += 1;
        }
    }
    let mse = se / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
