//! Ranking quality against ground truth: Pearson correlation, a
//! least-squares trendline, the top-k worst-accuracy curve, and min-max
//! normalization of metric values.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation summary attached to a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Sample Pearson correlation between metric values and ground truth.
    pub pcc: f64,
    /// Trendline over (normalized metric, ground truth).
    pub slope: f64,
    pub intercept: f64,
    /// Entry k: the worst ground-truth value among the top-k ranked
    /// candidates (minimum accuracy, or maximum loss when lower is better).
    pub topk_curve: Vec<(usize, f64)>,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFewPoints { need: 2, got: x.len() });
    }
    if let Some(i) = x.iter().chain(y.iter()).position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    Ok(())
}

fn all_equal(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Sample Pearson correlation coefficient of two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if all_equal(x) {
        return Err(Error::ZeroVariance("x"));
    }
    if all_equal(y) {
        return Err(Error::ZeroVariance("y"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Least-squares line y = slope * x + intercept.
pub fn least_squares_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        sxx += dx * dx;
        sxy += dx * (b - my);
    }
    if all_equal(x) || sxx == 0.0 {
        return Err(Error::DegenerateX);
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Worst ground-truth value among the top-k ranked candidates, for
/// k = 1..=min(K, ranking length). With `lower_better` (loss-like truth) the
/// curve reports the running maximum instead of the running minimum.
pub fn topk_lowest_accuracy(
    ranking: &[String],
    accuracies: &HashMap<String, f64>,
    k: usize,
    lower_better: bool,
) -> Result<Vec<(usize, f64)>> {
    let depth = k.min(ranking.len());
    let mut curve = Vec::with_capacity(depth);
    let mut worst = if lower_better { f64::NEG_INFINITY } else { f64::INFINITY };
    for (i, id) in ranking.iter().take(depth).enumerate() {
        let &acc = accuracies
            .get(id)
            .ok_or_else(|| Error::MissingAccuracy(id.clone()))?;
        worst = if lower_better { worst.max(acc) } else { worst.min(acc) };
        curve.push((i + 1, worst));
    }
    Ok(curve)
}

/// Maps values to [0, 1] by (v - min)/(max - min); an all-equal input maps
/// to all 0.5.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("minmax_normalize"));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(i));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![0.5; values.len()]);
    }
    let span = max - min;
    Ok(values.iter().map(|v| (v - min) / span).collect())
}
