//! Frequency-antenna <-> angular-delay domain conversion and the
//! truncation/normalization preprocessing in front of the detector.
//!
//! The domain transform is the *unnormalized* 2D inverse DFT
//! `G[tb, ab] = sum_{m,n} H[m,n] exp(+j2pi m tb / N_c) exp(+j2pi n ab / N_t)`,
//! so an on-grid unit path concentrates into a single bin of magnitude
//! `N_c * N_t`. The angular axis is periodic; the delay axis is not.

use std::sync::Arc;

use ndarray::{s, Array2};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::scene::ChannelMatrix;

/// Truncated angular-delay map: `n_c_trunc x n_t`, row `r` is delay bin
/// `tau_bar = r + 1` (bin 0, the LoS ridge, is dropped by truncation).
pub type AngularDelayMap<T> = Array2<Complex<T>>;

/// Continuous position on the full angular-delay grid.
///
/// `tau_bar` lives in `[0, n_c)`; `theta_bar` in `[0, n_t)` and wraps
/// modulo `n_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCoord {
    pub tau_bar: f64,
    pub theta_bar: f64,
}

/// Reusable 2D inverse-DFT plan for a fixed `(n_c, n_t)`.
pub struct AngularDelayTransform<T: Real> {
    n_c: usize,
    n_t: usize,
    row_fft: Arc<dyn Fft<T>>,
    col_fft: Arc<dyn Fft<T>>,
}

impl<T: Real> AngularDelayTransform<T> {
    pub fn new(cfg: &SystemConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_c: cfg.n_c,
            n_t: cfg.n_t,
            row_fft: planner.plan_fft_inverse(cfg.n_t),
            col_fft: planner.plan_fft_inverse(cfg.n_c),
        }
    }

    /// Full `n_c x n_t` angular-delay image of `h`.
    pub fn apply(&self, h: &ChannelMatrix<T>) -> Result<Array2<Complex<T>>> {
        if h.dim() != (self.n_c, self.n_t) {
            return Err(Error::DimensionMismatch(format!(
                "channel is {:?}, transform expects ({}, {})",
                h.dim(),
                self.n_c,
                self.n_t
            )));
        }
        let mut out = h.clone();
        // Inverse DFT across antennas (each row is contiguous).
        for mut row in out.rows_mut() {
            let buf = row.as_slice_mut().expect("row-major layout");
            self.row_fft.process(buf);
        }
        // Inverse DFT down each sub-carrier column.
        let mut col_buf = vec![Complex::new(T::zero(), T::zero()); self.n_c];
        for j in 0..self.n_t {
            for (i, v) in col_buf.iter_mut().enumerate() {
                *v = out[(i, j)];
            }
            self.col_fft.process(&mut col_buf);
            for (i, v) in col_buf.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        Ok(out)
    }
}

/// One-shot full-map transform (plans are cached by [`AngularDelayTransform`]
/// when called in a loop).
pub fn to_angular_delay<T: Real>(
    h: &ChannelMatrix<T>,
    cfg: &SystemConfig,
) -> Result<Array2<Complex<T>>> {
    AngularDelayTransform::new(cfg).apply(h)
}

/// Keep delay bins `1..=n_c_trunc`: drops the LoS bin 0 and everything past
/// the delay window of interest.
pub fn preprocess_truncate<T: Real>(
    full: &Array2<Complex<T>>,
    cfg: &SystemConfig,
) -> AngularDelayMap<T> {
    full.slice(s![1..=cfg.n_c_trunc, ..]).to_owned()
}

/// Continuous grid coordinate of physical path parameters.
///
/// The delay coordinate is deliberately unfloored: integer coordinates are
/// the grid bins, but labels and detections carry the continuous value.
pub fn params_to_coords(tau: f64, theta: f64, cfg: &SystemConfig) -> Result<GridCoord> {
    let tau_bar = cfg.delta_f * tau * cfg.n_c as f64;
    if tau_bar >= cfg.n_c as f64 {
        return Err(Error::OutOfWindow(format!(
            "tau_bar {tau_bar:.3} >= n_c {}",
            cfg.n_c
        )));
    }
    let half_sin = theta.sin() / 2.0;
    let frac = if half_sin >= 0.0 { half_sin } else { half_sin + 1.0 };
    Ok(GridCoord { tau_bar, theta_bar: frac * cfg.n_t as f64 })
}

/// Physical `(tau, theta)` from a continuous grid coordinate; exact inverse
/// of [`params_to_coords`].
pub fn coords_to_params(c: GridCoord, cfg: &SystemConfig) -> Result<(f64, f64)> {
    let tau = c.tau_bar / (cfg.delta_f * cfg.n_c as f64);
    let n_t = cfg.n_t as f64;
    let wrap = if c.theta_bar > n_t / 2.0 { 2.0 } else { 0.0 };
    let sin_theta = 2.0 * c.theta_bar / n_t - wrap;
    if sin_theta.abs() > 1.0 {
        return Err(Error::InvalidCoordinate(format!(
            "theta_bar {} maps to sin(theta) = {sin_theta}",
            c.theta_bar
        )));
    }
    Ok((tau, sin_theta.asin()))
}

/// Floored grid bin of a continuous coordinate (quantization helper).
pub fn quantize(c: GridCoord) -> (usize, usize) {
    (c.tau_bar.floor() as usize, c.theta_bar.floor() as usize)
}

/// Detector input image: `log(1 + |g|)` scaled by its own maximum into
/// `[0, 1]`. An all-zero map stays all-zero.
pub fn normalize_input<T: Real>(g: &AngularDelayMap<T>) -> Array2<T> {
    normalize_magnitude(&g.mapv(|z| z.norm()))
}

/// Same normalization starting from a precomputed magnitude image.
pub fn normalize_magnitude<T: Real>(mag: &Array2<T>) -> Array2<T> {
    let compressed = mag.mapv(|m| m.ln_1p());
    let max = compressed.iter().cloned().fold(T::zero(), T::max);
    if max > T::zero() {
        compressed.mapv(|v| v / max)
    } else {
        compressed
    }
}
