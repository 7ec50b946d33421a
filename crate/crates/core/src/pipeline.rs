//! End-to-end inference: magnitude image -> normalized input -> network ->
//! decode/ghost removal -> physical parameters -> positions.

use ndarray::{Array2, Array3};

use crate::config::SystemConfig;
use crate::dataset::Sample;
use crate::error::Result;
use crate::locate::{locate_all, LocalizationInput, LocatedScatter};
use crate::net::{forward, DetectorConfig, NetPlan, ParameterSet};
use crate::num::Real;
use crate::postprocess::{decode, postprocess, to_params, DetectionCandidate, PostprocessConfig};
use crate::transform::normalize_magnitude;

/// A trained detector bundled with its postprocessing thresholds.
pub struct Detector<T: Real> {
    pub plan: NetPlan,
    pub params: ParameterSet<T>,
    pub post: PostprocessConfig,
}

impl<T: Real> Detector<T> {
    pub fn new(cfg: &DetectorConfig, params: ParameterSet<T>) -> Result<Self> {
        Ok(Self { plan: NetPlan::new(cfg)?, params, post: PostprocessConfig::default() })
    }

    /// Candidates surviving the full ghost-removal chain.
    pub fn detect(&self, magnitude: &Array2<T>) -> Result<Vec<DetectionCandidate>> {
        let norm = normalize_magnitude(magnitude);
        let (r, c) = norm.dim();
        let x = Array3::from_shape_fn((1, r, c), |(_, i, j)| norm[(i, j)]);
        let raw = forward(&self.plan, &self.params, &x)?;
        let cands = decode(&raw, &self.plan.cfg);
        Ok(postprocess(cands, &self.post, self.plan.cfg.input_cols))
    }

    /// Detections as physical parameters plus localized positions.
    pub fn detect_and_locate(
        &self,
        magnitude: &Array2<T>,
        sys: &SystemConfig,
        bs_pos: [f64; 2],
        ue_pos: [f64; 2],
    ) -> Result<(Vec<(f64, f64, f64)>, Vec<LocatedScatter>)> {
        let cands = self.detect(magnitude)?;
        let params = to_params(&cands, sys)?;
        let input = LocalizationInput { bs_pos, ue_pos, detections: params.clone() };
        let (located, _skipped) = locate_all(&input, sys.c);
        Ok((params, located))
    }

    /// Positions only, for one dataset sample.
    pub fn locate_sample(&self, sample: &Sample<T>, sys: &SystemConfig) -> Result<Vec<[f64; 2]>> {
        let (_, located) =
            self.detect_and_locate(&sample.magnitude, sys, sample.scene.bs_pos, sample.scene.ue_pos)?;
        Ok(located.into_iter().map(|l| l.pos).collect())
    }
}
