//! Localization quality metrics: probability of detection (recall),
//! precision, F1 and the RMSE over detected scatters.
//!
//! All four follow the nearest-neighbor indicator definitions (no one-to-one
//! assignment): a true scatter counts as detected when *some* estimate lands
//! within radius `r`, and an estimate counts as correct when *some* true
//! scatter is within `r`.

use serde::{Deserialize, Serialize};

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn nearest(p: [f64; 2], others: &[[f64; 2]]) -> Option<f64> {
    others.iter().map(|&q| dist(p, q)).min_by(|a, b| a.partial_cmp(b).unwrap())
}

/// Fraction of true scatters with an estimate within `r`. `None` when there
/// are no true scatters (undefined, excluded from averages). Empty estimates
/// with true scatters present give 0.
pub fn metric_pd(true_pos: &[[f64; 2]], est_pos: &[[f64; 2]], r: f64) -> Option<f64> {
    if true_pos.is_empty() {
        return None;
    }
    let hits = true_pos
        .iter()
        .filter(|&&p| nearest(p, est_pos).map_or(false, |d| d < r))
        .count();
    Some(hits as f64 / true_pos.len() as f64)
}

/// Fraction of estimates with a true scatter within `r`. An empty estimate
/// list is reported as 0 by convention (the accompanying `n_est` count makes
/// the case visible to consumers).
pub fn metric_precision(true_pos: &[[f64; 2]], est_pos: &[[f64; 2]], r: f64) -> f64 {
    if est_pos.is_empty() {
        return 0.0;
    }
    let hits = est_pos
        .iter()
        .filter(|&&p| nearest(p, true_pos).map_or(false, |d| d < r))
        .count();
    hits as f64 / est_pos.len() as f64
}

/// Harmonic mean of precision and recall; 0 when both vanish.
pub fn metric_f1(pd: f64, precision: f64) -> f64 {
    if pd + precision == 0.0 {
        0.0
    } else {
        2.0 * precision * pd / (precision + pd)
    }
}

/// RMSE over the set of *detected* true scatters (nearest estimate within
/// `r`). `None` when that set is empty, which is distinct from 0.
pub fn metric_rmse(true_pos: &[[f64; 2]], est_pos: &[[f64; 2]], r: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &p in true_pos {
        if let Some(d) = nearest(p, est_pos) {
            if d < r {
                sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        None
    } else {
        Some((sum / count as f64).sqrt())
    }
}

/// All per-realization metrics in one pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub pd: Option<f64>,
    pub precision: f64,
    pub f1: Option<f64>,
    pub rmse: Option<f64>,
    pub n_true: usize,
    pub n_est: usize,
}

pub fn evaluate_sample(true_pos: &[[f64; 2]], est_pos: &[[f64; 2]], r: f64) -> SampleMetrics {
    let pd = metric_pd(true_pos, est_pos, r);
    let precision = metric_precision(true_pos, est_pos, r);
    SampleMetrics {
        pd,
        precision,
        f1: pd.map(|p| metric_f1(p, precision)),
        rmse: metric_rmse(true_pos, est_pos, r),
        n_true: true_pos.len(),
        n_est: est_pos.len(),
    }
}

/// Experiment condition tags attached to a report row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionTags {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_s_range: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Mean metrics over a split, with undefined per-sample values excluded
/// from their averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pd: f64,
    pub precision: f64,
    pub f1: f64,
    /// `None` when no sample had a detected scatter.
    pub rmse: Option<f64>,
    pub n_true: usize,
    pub n_est: usize,
    pub n_samples: usize,
    /// Mean |precision - recall|; small values mean estimated counts track
    /// true counts.
    pub mean_abs_precision_minus_recall: f64,
    #[serde(flatten)]
    pub tags: ConditionTags,
}

pub fn aggregate(samples: &[SampleMetrics], tags: ConditionTags) -> MetricsReport {
    let mut pd_sum = 0.0;
    let mut pd_n = 0usize;
    let mut f1_sum = 0.0;
    let mut gap_sum = 0.0;
    let mut prec_sum = 0.0;
    let mut rmse_sum = 0.0;
    let mut rmse_n = 0usize;
    let mut n_true = 0;
    let mut n_est = 0;
    for s in samples {
        prec_sum += s.precision;
        if let Some(pd) = s.pd {
            pd_sum += pd;
            f1_sum += s.f1.unwrap_or(0.0);
            gap_sum += (s.precision - pd).abs();
            pd_n += 1;
        }
        if let Some(rmse) = s.rmse {
            rmse_sum += rmse;
            rmse_n += 1;
        }
        n_true += s.n_true;
        n_est += s.n_est;
    }
    let denom = pd_n.max(1) as f64;
    MetricsReport {
        pd: pd_sum / denom,
        precision: prec_sum / samples.len().max(1) as f64,
        f1: f1_sum / denom,
        rmse: (rmse_n > 0).then(|| rmse_sum / rmse_n as f64),
        n_true,
        n_est,
        n_samples: samples.len(),
        mean_abs_precision_minus_recall: gap_sum / denom,
        tags,
    }
}
