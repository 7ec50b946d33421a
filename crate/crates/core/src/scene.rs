//! Scene sampling and exact multipath channel synthesis.
//!
//! A scene is a BS at the origin, a UE and a handful of point scatters
//! dropped uniformly into a rectangle in front of the array. Each scatter
//! contributes one NLoS path whose excess delay and departure angle follow
//! directly from the geometry; the channel matrix is the coherent sum of
//! all paths over sub-carriers and antennas.

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::num::Real;

/// Frequency-antenna channel: `n_c x n_t`, rows are sub-carriers.
pub type ChannelMatrix<T> = Array2<Complex<T>>;

/// Deployment rectangle: x in [0, 100] m, y in [-50, 50] m, BS at the origin.
pub const AREA_X: (f64, f64) = (0.0, 100.0);
pub const AREA_Y: (f64, f64) = (-50.0, 50.0);

/// Front-sector margin: scatters (and the UE) keep x >= 1 m and at least
/// 1 m of clearance from both terminals.
const MIN_X: f64 = 1.0;
const MIN_CLEARANCE: f64 = 1.0;
const MAX_DRAWS: usize = 10_000;

/// Ground-truth geometry of one channel realization.
///
/// `gains[0]` is the LoS path; `gains[l]` for `l >= 1` belongs to
/// `scatters[l - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bs_pos: [f64; 2],
    pub ue_pos: [f64; 2],
    pub scatters: Vec<[f64; 2]>,
    #[serde(with = "complex_pairs")]
    pub gains: Vec<Complex<f64>>,
}

/// Physical parameters of a single propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParam {
    /// Excess delay over the direct path, seconds (zero for LoS).
    pub tau: f64,
    /// Angle of departure, radians, in (-pi/2, pi/2).
    pub theta: f64,
    /// Complex path gain.
    pub alpha: Complex<f64>,
}

/// Serialize complex gains as `[re, im]` pairs.
mod complex_pairs {
    use num_complex::Complex;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex<f64>], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex<f64>>, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex::new(re, im)).collect())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Continuous delay-bin coordinate of a scatter's excess path.
fn excess_delay_bins(s: [f64; 2], bs: [f64; 2], ue: [f64; 2], cfg: &SystemConfig) -> f64 {
    let excess = dist(s, bs) + dist(s, ue) - dist(bs, ue);
    cfg.delta_f * cfg.n_c as f64 * excess / cfg.c
}

impl Scene {
    pub fn n_scatters(&self) -> usize {
        self.scatters.len()
    }

    /// Check the structural invariants against `cfg`.
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.gains.len() != self.scatters.len() + 1 {
            return Err(Error::SceneGeneration(format!(
                "gain count {} != scatter count {} + 1",
                self.gains.len(),
                self.scatters.len()
            )));
        }
        for (i, &s) in self.scatters.iter().enumerate() {
            if s[0] < MIN_X {
                return Err(Error::SceneGeneration(format!("scatter {i} violates x >= 1 m")));
            }
            if dist(s, self.bs_pos) < MIN_CLEARANCE || dist(s, self.ue_pos) < MIN_CLEARANCE {
                return Err(Error::SceneGeneration(format!("scatter {i} too close to a terminal")));
            }
            let bins = excess_delay_bins(s, self.bs_pos, self.ue_pos, cfg);
            if !(1.0..=(cfg.n_c_trunc - 1) as f64).contains(&bins) {
                return Err(Error::SceneGeneration(format!(
                    "scatter {i} delay bin {bins:.3} outside [1, {}]",
                    cfg.n_c_trunc - 1
                )));
            }
        }
        Ok(())
    }
}

/// Draw a random scene: scatter count uniform in `n_s_range` (inclusive),
/// UE and scatters i.i.d. uniform over the deployment rectangle with
/// rejection of geometry that violates the [`Scene`] invariants.
pub fn sample_scene(
    rng_seed: u64,
    cfg: &SystemConfig,
    n_s_range: (usize, usize),
) -> Result<Scene> {
    let (lo, hi) = n_s_range;
    if !(1 <= lo && lo <= hi && hi <= 20) {
        return Err(Error::InvalidConfig(format!(
            "n_s_range ({lo}, {hi}) must satisfy 1 <= lo <= hi <= 20"
        )));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let bs = [0.0, 0.0];
    let n_s = rng.random_range(lo..=hi);

    // UE first: the scatter constraints are measured against it. The UE obeys
    // the same front-sector margin so the LoS angle stays inside (-90, 90).
    let mut ue = [0.0, 0.0];
    let mut ok = false;
    for _ in 0..MAX_DRAWS {
        ue = [rng.random_range(AREA_X.0..AREA_X.1), rng.random_range(AREA_Y.0..AREA_Y.1)];
        if ue[0] >= MIN_X && dist(ue, bs) >= MIN_CLEARANCE {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::SceneGeneration("UE rejection loop exhausted".into()));
    }

    let mut scatters = Vec::with_capacity(n_s);
    for i in 0..n_s {
        let mut placed = false;
        for _ in 0..MAX_DRAWS {
            let s = [rng.random_range(AREA_X.0..AREA_X.1), rng.random_range(AREA_Y.0..AREA_Y.1)];
            if s[0] < MIN_X || dist(s, bs) < MIN_CLEARANCE || dist(s, ue) < MIN_CLEARANCE {
                continue;
            }
            let bins = excess_delay_bins(s, bs, ue, cfg);
            if !(1.0..=(cfg.n_c_trunc - 1) as f64).contains(&bins) {
                continue;
            }
            scatters.push(s);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::SceneGeneration(format!(
                "scatter {i} rejection loop exceeded {MAX_DRAWS} draws; config inconsistent"
            )));
        }
    }

    // LoS gain 1; NLoS magnitudes uniform in [0.2, 0.6] with uniform phase,
    // so every scatter is visible but weaker than the direct path.
    let mut gains = Vec::with_capacity(n_s + 1);
    gains.push(Complex::new(1.0, 0.0));
    for _ in 0..n_s {
        let mag = rng.random_range(0.2..0.6);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        gains.push(Complex::from_polar(mag, phase));
    }

    let scene = Scene { bs_pos: bs, ue_pos: ue, scatters, gains };
    scene.validate(cfg)?;
    Ok(scene)
}

/// Delay/angle/gain of every path; element 0 is the LoS path.
///
/// Angles use the two-argument arctangent, which agrees with `arctan(dy/dx)`
/// on the enforced front sector but never divides by zero.
pub fn compute_path_params(scene: &Scene, cfg: &SystemConfig) -> Vec<PathParam> {
    let bs = scene.bs_pos;
    let ue = scene.ue_pos;
    let d_los = dist(bs, ue);
    let mut out = Vec::with_capacity(scene.gains.len());
    out.push(PathParam {
        tau: 0.0,
        theta: (ue[1] - bs[1]).atan2(ue[0] - bs[0]),
        alpha: scene.gains[0],
    });
    for (i, &s) in scene.scatters.iter().enumerate() {
        out.push(PathParam {
            tau: (dist(s, bs) + dist(s, ue) - d_los) / cfg.c,
            theta: (s[1] - bs[1]).atan2(s[0] - bs[0]),
            alpha: scene.gains[i + 1],
        });
    }
    out
}

/// ULA steering vector: entry `n` is `exp(-j 2 pi n d/lambda sin(theta))`.
pub fn steering_vector<T: Real>(theta: f64, cfg: &SystemConfig) -> Array1<Complex<T>> {
    let step = cfg.d_over_lambda * theta.sin();
    Array1::from_iter((0..cfg.n_t).map(|n| {
        let phase = -std::f64::consts::TAU * (n as f64 * step);
        let z = Complex::from_polar(1.0, phase);
        Complex::new(T::of(z.re), T::of(z.im))
    }))
}

/// Exact multipath channel: `H[m, n] = sum_l alpha_l exp(-j2pi tau_l (f0 + m df))
/// exp(-j2pi n d/lambda sin(theta_l))`.
///
/// Phases are accumulated in `f64` (with the delay-carrier product reduced
/// modulo one turn) before narrowing to `T`.
pub fn synthesize_channel<T: Real>(scene: &Scene, cfg: &SystemConfig) -> ChannelMatrix<T> {
    let paths = compute_path_params(scene, cfg);
    synthesize_from_params(&paths, cfg)
}

/// Channel synthesis from explicit path parameters (LoS first by convention,
/// though any list is accepted: the matrix is linear in the paths).
pub fn synthesize_from_params<T: Real>(
    paths: &[PathParam],
    cfg: &SystemConfig,
) -> ChannelMatrix<T> {
    let mut acc: Array2<Complex<f64>> = Array2::zeros((cfg.n_c, cfg.n_t));
    for p in paths {
        let steer: Vec<Complex<f64>> = (0..cfg.n_t)
            .map(|n| {
                Complex::from_polar(
                    1.0,
                    -std::f64::consts::TAU * (n as f64 * cfg.d_over_lambda * p.theta.sin()),
                )
            })
            .collect();
        for m in 0..cfg.n_c {
            // tau * f0 can sit thousands of cycles up; reduce before taking
            // the complex exponential.
            let cycles = p.tau * (cfg.f0 + m as f64 * cfg.delta_f);
            let delay_phasor = Complex::from_polar(1.0, -std::f64::consts::TAU * cycles.fract());
            let row_gain = p.alpha * delay_phasor;
            let mut row = acc.row_mut(m);
            for (n, s) in steer.iter().enumerate() {
                row[n] += row_gain * s;
            }
        }
    }
    acc.mapv(|z| Complex::new(T::of(z.re), T::of(z.im)))
}

/// Mean squared entry magnitude of the channel.
pub fn channel_power<T: Real>(h: &ChannelMatrix<T>) -> f64 {
    let sum: f64 = h.iter().map(|z| z.norm_sqr().to_f64_lossy()).sum();
    sum / h.len() as f64
}

/// Add circularly symmetric complex Gaussian noise at the given SNR relative
/// to the mean per-entry channel power. `snr_db = +inf` returns the input
/// unchanged. Deterministic per seed.
pub fn add_estimation_noise<T: Real>(
    h: &ChannelMatrix<T>,
    snr_db: f64,
    rng_seed: u64,
) -> ChannelMatrix<T> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return h.clone();
    }
    let p_h = channel_power(h);
    let sigma_sq = p_h * 10f64.powf(-snr_db / 10.0);
    add_noise_with_variance(h, sigma_sq, rng_seed)
}

/// Add complex Gaussian noise with the given per-entry variance.
pub fn add_noise_with_variance<T: Real>(
    h: &ChannelMatrix<T>,
    sigma_sq: f64,
    rng_seed: u64,
) -> ChannelMatrix<T> {
    use rand_distr::{Distribution, StandardNormal};
    if sigma_sq == 0.0 {
        return h.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let std_comp = (sigma_sq / 2.0).sqrt();
    let mut out = h.clone();
    for z in out.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z += Complex::new(T::of(re * std_comp), T::of(im * std_comp));
    }
    out
}
