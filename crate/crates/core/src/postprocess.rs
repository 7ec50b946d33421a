//! Inference-side decoding and ghost-target removal: raw anchor outputs ->
//! absolute coordinates -> coarse confidence filter -> proximity merge ->
//! adaptive fine filter -> physical parameters.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::Result;
use crate::net::{DetectorConfig, RawDetections};
use crate::num::Real;
use crate::transform::{coords_to_params, GridCoord};

/// One candidate scatter on the truncated grid. `coord.tau_bar` is the
/// absolute delay bin (map row + 1); confidence lives in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionCandidate {
    pub tau_bar: f64,
    pub theta_bar: f64,
    pub confidence: f64,
}

impl DetectionCandidate {
    pub fn coord(&self) -> GridCoord {
        GridCoord { tau_bar: self.tau_bar, theta_bar: self.theta_bar }
    }
}

/// Thresholds of the ghost-removal stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Coarse confidence threshold.
    pub t1: f64,
    /// Squared grid distance under which candidates merge (radius 2 bins:
    /// about one mainlobe of the unwindowed transform).
    pub t_d: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { t1: 0.5, t_d: 4.0 }
    }
}

/// Decode every anchor into an absolute candidate. For anchor `(i, j)` of a
/// head with `a x b` cells over an `R x N_t` map, the cell spans
/// `R/a x N_t/b` bins and offsets are measured from its upper-left corner.
pub fn decode<T: Real>(raw: &RawDetections<T>, cfg: &DetectorConfig) -> Vec<DetectionCandidate> {
    let mut out = Vec::with_capacity(cfg.n_anchors());
    for head in raw {
        let (a, b) = head.scale;
        let cell_rows = cfg.input_rows as f64 / a as f64;
        let cell_cols = cfg.input_cols as f64 / b as f64;
        for i in 0..a {
            for j in 0..b {
                let d_row = head.data[(0, i, j)].to_f64_lossy();
                let d_col = head.data[(1, i, j)].to_f64_lossy();
                let conf = head.data[(2, i, j)].to_f64_lossy();
                let row = (i as f64 + d_row) * cell_rows;
                let col = (j as f64 + d_col) * cell_cols;
                out.push(DetectionCandidate {
                    tau_bar: row + 1.0,
                    theta_bar: col,
                    confidence: conf,
                });
            }
        }
    }
    out
}

/// Keep candidates at or above the coarse threshold.
pub fn coarse_filter(cands: Vec<DetectionCandidate>, t1: f64) -> Vec<DetectionCandidate> {
    cands.into_iter().filter(|c| c.confidence >= t1).collect()
}

/// Squared grid distance with the angular axis wrapped modulo `n_t`.
fn grid_dist_sq(a: &DetectionCandidate, b: &DetectionCandidate, n_t: f64) -> f64 {
    let dt = a.tau_bar - b.tau_bar;
    let mut da = (a.theta_bar - b.theta_bar).abs() % n_t;
    if da > n_t / 2.0 {
        da = n_t - da;
    }
    dt * dt + da * da
}

/// Single-linkage merge: candidates closer than `sqrt(t_d)` bins (transitively)
/// collapse to their maximum-confidence member.
pub fn merge(cands: Vec<DetectionCandidate>, t_d: f64, n_t: usize) -> Vec<DetectionCandidate> {
    let n = cands.len();
    if n == 0 {
        return cands;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if grid_dist_sq(&cands[i], &cands[j], n_t as f64) < t_d {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj.max(ri)] = rj.min(ri);
                }
            }
        }
    }
    // One representative per group: the highest confidence, earliest index on
    // ties; output keeps the representative order stable.
    let mut best: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match best[r] {
            None => best[r] = Some(i),
            Some(b) if cands[i].confidence > cands[b].confidence => best[r] = Some(i),
            _ => {}
        }
    }
    let mut keep: Vec<usize> = best.into_iter().flatten().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| cands[i]).collect()
}

/// Adaptive fine filter: threshold at one third of the mean confidence of the
/// surviving candidates.
pub fn fine_filter(cands: Vec<DetectionCandidate>) -> Vec<DetectionCandidate> {
    if cands.is_empty() {
        return cands;
    }
    let t2 = cands.iter().map(|c| c.confidence).sum::<f64>() / cands.len() as f64 / 3.0;
    cands.into_iter().filter(|c| c.confidence >= t2).collect()
}

/// Full ghost-removal chain on decoded candidates.
pub fn postprocess(
    cands: Vec<DetectionCandidate>,
    post: &PostprocessConfig,
    n_t: usize,
) -> Vec<DetectionCandidate> {
    fine_filter(merge(coarse_filter(cands, post.t1), post.t_d, n_t))
}

/// Physical `(tau, theta, confidence)` triples of the surviving candidates.
pub fn to_params(
    cands: &[DetectionCandidate],
    cfg: &SystemConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    cands
        .iter()
        .map(|c| coords_to_params(c.coord(), cfg).map(|(tau, theta)| (tau, theta, c.confidence)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::HeadOut;
    use ndarray::Array3;

    fn cand(tau_bar: f64, theta_bar: f64, confidence: f64) -> DetectionCandidate {
        DetectionCandidate { tau_bar, theta_bar, confidence }
    }

    #[test]
    fn decode_inverts_anchor_assignment_example() {
        let cfg = DetectorConfig::default();
        // Single 16x16 head with one "interesting" anchor at (2, 8).
        let mut data = Array3::from_elem((3, 16, 16), 0.1);
        data[(0, 2, 8)] = 0.625;
        data[(1, 2, 8)] = 0.3125;
        data[(2, 2, 8)] = 0.9;
        let raw = vec![HeadOut { scale: (16, 16), data }];
        let cands = decode::<f64>(&raw, &cfg);
        assert_eq!(cands.len(), 256);
        let c = cands[2 * 16 + 8];
        assert!((c.tau_bar - 11.5).abs() < 1e-12);
        assert!((c.theta_bar - 33.25).abs() < 1e-12);
        assert!((c.confidence - 0.9).abs() < 1e-12);

        // Zero offsets at anchor (0, 0) decode to the cell corner.
        let mut data = Array3::from_elem((3, 16, 16), 0.0);
        data[(2, 0, 0)] = 0.5;
        let raw = vec![HeadOut { scale: (16, 16), data }];
        let c0 = decode::<f64>(&raw, &cfg)[0];
        assert_eq!((c0.tau_bar, c0.theta_bar), (1.0, 0.0));
    }

    #[test]
    fn decode_counts_every_anchor() {
        let cfg = DetectorConfig::default();
        let raw: Vec<HeadOut<f64>> = cfg
            .head_scales
            .iter()
            .map(|&(a, b)| HeadOut { scale: (a, b), data: Array3::from_elem((3, a, b), 0.5) })
            .collect();
        assert_eq!(decode(&raw, &cfg).len(), cfg.n_anchors());
    }

    #[test]
    fn coarse_filter_thresholds() {
        let cands = vec![cand(5.0, 5.0, 0.9), cand(9.0, 9.0, 0.4)];
        assert_eq!(coarse_filter(cands.clone(), 0.5).len(), 1);
        assert_eq!(coarse_filter(cands.clone(), 0.95).len(), 0);
        assert_eq!(coarse_filter(cands, 0.0).len(), 2);
    }

    #[test]
    fn merge_keeps_max_confidence_of_close_pair() {
        let cands = vec![cand(10.2, 33.1, 0.9), cand(10.6, 33.4, 0.7)];
        // Squared distance 0.4^2 + 0.3^2 = 0.25 < 4.
        let merged = merge(cands, 4.0, 64);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].confidence, 0.9);
    }

    #[test]
    fn merge_leaves_distant_candidates() {
        let cands = vec![cand(10.0, 10.0, 0.9), cand(20.0, 10.0, 0.8)];
        assert_eq!(merge(cands, 4.0, 64).len(), 2);
    }

    #[test]
    fn merge_wraps_angular_axis() {
        // Columns 0.5 and 63.5 are one bin apart modulo 64.
        let cands = vec![cand(10.0, 0.5, 0.6), cand(10.0, 63.5, 0.8)];
        let merged = merge(cands, 4.0, 64);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].confidence, 0.8);
    }

    #[test]
    fn merge_is_single_linkage() {
        // Chain: a-b close, b-c close, a-c far; all three must collapse.
        let cands = vec![cand(10.0, 10.0, 0.5), cand(11.5, 10.0, 0.9), cand(13.0, 10.0, 0.6)];
        let merged = merge(cands, 4.0, 64);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].confidence, 0.9);
    }

    #[test]
    fn fine_filter_examples() {
        let cands = vec![cand(1.0, 1.0, 0.9), cand(5.0, 5.0, 0.9), cand(9.0, 9.0, 0.05)];
        let kept = fine_filter(cands);
        // Mean 0.61667, threshold 0.2056: the 0.05 candidate drops.
        assert_eq!(kept.len(), 2);

        let single = fine_filter(vec![cand(1.0, 1.0, 0.2)]);
        assert_eq!(single.len(), 1);

        assert!(fine_filter(Vec::new()).is_empty());
    }

    #[test]
    fn pipeline_is_idempotent_on_its_output() {
        let post = PostprocessConfig::default();
        let cands = vec![
            cand(10.2, 33.1, 0.9),
            cand(10.6, 33.4, 0.7),
            cand(30.0, 50.0, 0.8),
            cand(40.0, 1.0, 0.1),
        ];
        let once = postprocess(cands, &post, 64);
        let twice = postprocess(once.clone(), &post, 64);
        assert_eq!(once, twice);
    }

    #[test]
    fn to_params_recovers_transform_examples() {
        let sys = SystemConfig::default();
        let params =
            to_params(&[cand(102.0, 16.0, 0.9), cand(1.0, 0.0, 0.8)], &sys).unwrap();
        assert!((params[0].0 - 0.99609e-6).abs() < 1e-11);
        assert!((params[0].1.to_degrees() - 30.0).abs() < 1e-9);
        // One delay bin: 1/(delta_f n_c) = 9.7656 ns, broadside.
        assert!((params[1].0 - 9.7656e-9).abs() < 1e-13);
        assert_eq!(params[1].1, 0.0);
    }
}
