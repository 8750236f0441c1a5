//! Ranking and calibration metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concordant and tied positive/negative pair counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub concordant: u64,
    pub tied: u64,
    pub positives: u64,
    pub negatives: u64,
}

impl PairCounts {
    /// `(concordant + tied/2) / (positives·negatives)`.
    pub fn auc(&self) -> f64 {
        (2 * self.concordant + self.tied) as f64 / (2 * self.positives * self.negatives) as f64
    }
}

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

/// Pair counts by sorting, `O(n log n)`.
pub fn pair_counts(scores: &[f64], labels: &[bool]) -> Result<PairCounts> {
    check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut counts = PairCounts::default();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        // Every negative seen so far scores strictly lower.
        counts.concordant += pos * counts.negatives;
        counts.tied += pos * neg;
        counts.positives += pos;
        counts.negatives += neg;
    }
    if counts.positives == 0 || counts.negatives == 0 {
        return Err(Error::Data("AUC needs both classes".into()));
    }
    Ok(counts)
}

/// Area under the ROC curve, Mann–Whitney form with midrank ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    pair_counts(scores, labels).map(|c| c.auc())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_predicted: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Nonempty bins only, ascending.
    pub bins: Vec<CalibrationBin>,
    pub mse: f64,
}

/// Observed vs. predicted positive rate over `n_bins` equal-width bins of
/// `[0, 1]`. Scores are clamped into range; 1.0 lands in the last bin.
pub fn calibration(scores: &[f64], labels: &[bool], n_bins: usize) -> Result<Calibration> {
    check(scores, labels)?;
    if n_bins < 2 {
        return Err(Error::Config("calibration needs at least 2 bins".into()));
    }
    let mut sum_pred = vec![0.0f64; n_bins];
    let mut pos = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&s, &y) in scores.iter().zip(labels) {
        let s = s.clamp(0.0, 1.0);
        let b = ((s * n_bins as f64) as usize).min(n_bins - 1);
        sum_pred[b] += s;
        count[b] += 1;
        pos[b] += y as usize;
    }
    let width = 1.0 / n_bins as f64;
    let bins: Vec<CalibrationBin> = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| CalibrationBin {
            lower: b as f64 * width,
            upper: (b + 1) as f64 * width,
            count: count[b],
            mean_predicted: sum_pred[b] / count[b] as f64,
            observed: pos[b] as f64 / count[b] as f64,
        })
        .collect();
    let mse = if bins.is_empty() {
        0.0
    } else {
        bins.iter().map(|b| (b.mean_predicted - b.observed).powi(2)).sum::<f64>() / bins.len() as f64
    };
    Ok(Calibration { bins, mse })
}
