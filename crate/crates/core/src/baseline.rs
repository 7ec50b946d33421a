//! MUSIC+DFT comparison method: subspace angle estimation over the antenna
//! array (sub-carriers as snapshots), DFT-profile delay estimation, greedy
//! angle/delay pairing and the same ellipse localization as the main path.
//!
//! Unlike the detector, the baseline is told how many scatters to look for.
//! Estimation runs in `f64` regardless of the channel scalar.

use nalgebra::{Complex as NaComplex, DMatrix};
use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::locate::{locate_scatter, LocatedScatter};
use crate::num::Real;
use crate::scene::ChannelMatrix;
use crate::transform::{params_to_coords, preprocess_truncate, AngularDelayMap, AngularDelayTransform};

/// Baseline knobs: assumed scatter count, spectrum scan resolution and the
/// minimum separation between delay peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Assumed number of scatters (the LoS path is handled internally).
    pub k: usize,
    /// Angular scan step in radians.
    pub angle_grid_step: f64,
    /// Minimum separation between delay peaks, in bins.
    pub peak_guard: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { k: 1, angle_grid_step: 0.05f64.to_radians(), peak_guard: 2 }
    }
}

/// Spatial covariance with sub-carrier rows as snapshots:
/// `R = (1/N_c) sum_m h_m h_m^H`, Hermitian by construction.
pub fn angular_covariance<T: Real>(h: &ChannelMatrix<T>) -> Array2<Complex<f64>> {
    let (n_c, n_t) = h.dim();
    let mut r: Array2<Complex<f64>> = Array2::zeros((n_t, n_t));
    for m in 0..n_c {
        let row = h.row(m);
        for i in 0..n_t {
            let hi = Complex::new(row[i].re.to_f64_lossy(), row[i].im.to_f64_lossy());
            for j in 0..n_t {
                let hj = Complex::new(row[j].re.to_f64_lossy(), row[j].im.to_f64_lossy());
                r[(i, j)] += hi * hj.conj();
            }
        }
    }
    let scale = 1.0 / n_c as f64;
    // Enforce exact conjugate symmetry against accumulation-order noise.
    let mut out: Array2<Complex<f64>> = Array2::zeros((n_t, n_t));
    for i in 0..n_t {
        for j in 0..n_t {
            out[(i, j)] = (r[(i, j)] + r[(j, i)].conj()) * 0.5 * scale;
        }
    }
    out
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(r: &Array2<Complex<f64>>) -> Result<(Vec<f64>, Array2<Complex<f64>>)> {
    let n = r.dim().0;
    let m = DMatrix::<NaComplex<f64>>::from_fn(n, n, |i, j| {
        NaComplex::new(r[(i, j)].re, r[(i, j)].im)
    });
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigenvalue decomposition failed".into()));
    }
    let mut vectors: Array2<Complex<f64>> = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for i in 0..n {
            let v = eig.eigenvectors[(i, src)];
            vectors[(i, col)] = Complex::new(v.re, v.im);
        }
    }
    Ok((values, vectors))
}

/// Pseudo-spectrum sampled over the open interval (-90, 90) degrees.
#[derive(Debug, Clone)]
pub struct AngleSpectrum {
    pub thetas: Vec<f64>,
    pub power: Vec<f64>,
}

/// MUSIC pseudo-spectrum `P(theta) = 1 / (a^H E_n E_n^H a)` with the noise
/// subspace spanned by the `n_t - k` smallest eigenvectors.
pub fn music_spectrum(
    r: &Array2<Complex<f64>>,
    k: usize,
    sys: &SystemConfig,
    cfg: &BaselineConfig,
) -> Result<AngleSpectrum> {
    let n_t = r.dim().0;
    if k >= n_t {
        return Err(Error::InvalidConfig(format!("k = {k} must be < n_t = {n_t}")));
    }
    let (_, vectors) = hermitian_eigen(r)?;
    let n_noise = n_t - k;
    // M = E_n E_n^H.
    let mut m: Array2<Complex<f64>> = Array2::zeros((n_t, n_t));
    for col in 0..n_noise {
        for i in 0..n_t {
            let vi = vectors[(i, col)];
            for j in 0..n_t {
                m[(i, j)] += vi * vectors[(j, col)].conj();
            }
        }
    }
    let steps = (std::f64::consts::PI / cfg.angle_grid_step).floor() as usize;
    let mut thetas = Vec::with_capacity(steps);
    let mut power = Vec::with_capacity(steps);
    let mut steer = vec![Complex::new(0.0, 0.0); n_t];
    for s in 0..steps {
        let theta = -std::f64::consts::FRAC_PI_2 + (s as f64 + 0.5) * cfg.angle_grid_step;
        for (n, sv) in steer.iter_mut().enumerate() {
            *sv = Complex::from_polar(
                1.0,
                -std::f64::consts::TAU * n as f64 * sys.d_over_lambda * theta.sin(),
            );
        }
        // a^H M a, real by Hermitian symmetry.
        let mut quad = 0.0;
        for i in 0..n_t {
            let mut acc = Complex::new(0.0, 0.0);
            for j in 0..n_t {
                acc += m[(i, j)] * steer[j];
            }
            quad += (steer[i].conj() * acc).re;
        }
        thetas.push(theta);
        power.push(1.0 / quad.max(1e-300));
    }
    Ok(AngleSpectrum { thetas, power })
}

/// Local maxima of the spectrum, tallest first, greedily separated by at
/// least `min_sep` grid steps. Returns `(theta, power)` pairs.
pub fn spectrum_peaks(spectrum: &AngleSpectrum, count: usize, min_sep: usize) -> Vec<(f64, f64)> {
    let p = &spectrum.power;
    let n = p.len();
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i > 0 { p[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < n { p[i + 1] } else { f64::NEG_INFINITY };
            p[i] > left && p[i] >= right
        })
        .collect();
    maxima.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap());
    let mut kept: Vec<usize> = Vec::new();
    for i in maxima {
        if kept.len() >= count {
            break;
        }
        if kept.iter().all(|&j| i.abs_diff(j) >= min_sep) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| (spectrum.thetas[i], p[i])).collect()
}

/// Delay peaks of the angular-energy profile `e[tau_bar] = sum |G|^2` over
/// the truncated map (`tau_bar >= 1` by construction). Returns up to `k`
/// bins, tallest first, separated by at least `peak_guard` bins, plus a
/// shortfall flag when fewer exist.
pub fn delay_peaks<T: Real>(map: &AngularDelayMap<T>, k: usize, peak_guard: usize) -> (Vec<usize>, bool) {
    let (rows, _) = map.dim();
    let e: Vec<f64> = (0..rows)
        .map(|r| map.row(r).iter().map(|z| z.norm_sqr().to_f64_lossy()).sum())
        .collect();
    let mut maxima: Vec<usize> = (0..rows)
        .filter(|&i| {
            if e[i] <= 0.0 {
                return false;
            }
            let left = if i > 0 { e[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < rows { e[i + 1] } else { f64::NEG_INFINITY };
            e[i] > left && e[i] >= right
        })
        .collect();
    maxima.sort_by(|&a, &b| e[b].partial_cmp(&e[a]).unwrap());
    let mut kept: Vec<usize> = Vec::new();
    for i in maxima {
        if kept.len() >= k {
            break;
        }
        if kept.iter().all(|&j| i.abs_diff(j) >= peak_guard.max(1)) {
            kept.push(i);
        }
    }
    let shortfall = kept.len() < k;
    // Map rows back to absolute delay bins.
    (kept.into_iter().map(|r| r + 1).collect(), shortfall)
}

/// Baseline result for one channel realization.
#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub positions: Vec<LocatedScatter>,
    /// Fewer delay peaks than requested.
    pub shortfall: bool,
    /// Two angle estimates shared a grid column during pairing.
    pub collision: bool,
}

/// Greedy association: angles in peak-height order each consume the unused
/// delay bin with the largest map energy at the angle's nearest grid column;
/// each pair feeds the ellipse localization.
pub fn pair_and_localize<T: Real>(
    angles: &[(f64, f64)],
    delays: &[usize],
    map: &AngularDelayMap<T>,
    bs_pos: [f64; 2],
    ue_pos: [f64; 2],
    sys: &SystemConfig,
) -> Result<BaselineOutcome> {
    let mut used = vec![false; delays.len()];
    let mut cols_seen: Vec<usize> = Vec::new();
    let mut collision = false;
    let mut positions = Vec::new();
    for &(theta, _power) in angles {
        let coord = params_to_coords(0.0, theta, sys)?;
        let col = (coord.theta_bar.round() as usize) % sys.n_t;
        if cols_seen.contains(&col) {
            collision = true;
        }
        cols_seen.push(col);
        let mut best: Option<(usize, f64)> = None;
        for (di, &bin) in delays.iter().enumerate() {
            if used[di] {
                continue;
            }
            let row = bin - 1;
            if row >= map.dim().0 {
                continue;
            }
            let energy = map[(row, col)].norm_sqr().to_f64_lossy();
            if best.map_or(true, |(_, e)| energy > e) {
                best = Some((di, energy));
            }
        }
        let Some((di, _)) = best else { continue };
        used[di] = true;
        let tau = delays[di] as f64 / (sys.delta_f * sys.n_c as f64);
        if let Ok(pos) = locate_scatter(tau, theta, bs_pos, ue_pos, sys.c) {
            positions.push(LocatedScatter { pos, confidence: 1.0 });
        }
    }
    Ok(BaselineOutcome { positions, shortfall: false, collision })
}

/// Full baseline on one channel: MUSIC with a `k+1`-dimensional signal
/// subspace (the LoS path is part of the channel), the spectrum peak nearest
/// the known BS->UE bearing discarded as the LoS angle, delay peaks over the
/// truncated (LoS-free) map, then greedy pairing and localization.
pub fn run_music_fft<T: Real>(
    h: &ChannelMatrix<T>,
    bs_pos: [f64; 2],
    ue_pos: [f64; 2],
    sys: &SystemConfig,
    cfg: &BaselineConfig,
) -> Result<BaselineOutcome> {
    let k = cfg.k;
    let r = angular_covariance(h);
    let spectrum = music_spectrum(&r, (k + 1).min(sys.n_t - 1), sys, cfg)?;
    let min_sep = (0.5f64.to_radians() / cfg.angle_grid_step).ceil() as usize;
    let mut peaks = spectrum_peaks(&spectrum, k + 1, min_sep.max(1));

    // Drop the LoS angle: its bearing is known exactly from the terminals.
    if peaks.len() > k {
        let theta_los = (ue_pos[1] - bs_pos[1]).atan2(ue_pos[0] - bs_pos[0]);
        if let Some(idx) = peaks
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (a.0 - theta_los).abs().partial_cmp(&(b.0 - theta_los).abs()).unwrap()
            })
            .map(|(i, _)| i)
        {
            peaks.remove(idx);
        }
    }
    peaks.truncate(k);

    let transform = AngularDelayTransform::<T>::new(sys);
    let full = transform.apply(h)?;
    let map = preprocess_truncate(&full, sys);
    let (delays, shortfall) = delay_peaks(&map, k, cfg.peak_guard);

    let mut outcome = pair_and_localize(&peaks, &delays, &map, bs_pos, ue_pos, sys)?;
    outcome.shortfall = shortfall;
    Ok(outcome)
}
