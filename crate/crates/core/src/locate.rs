//! Closed-form bistatic ellipse localization.
//!
//! A detection's excess delay pins the scatter to an ellipse with the BS and
//! UE as foci; the departure angle picks the forward-ray intersection:
//!
//! ```text
//! d0 = c*tau (2d + c*tau) / (2 (c*tau + d - d cos(beta)))
//! p  = bs + d0 (cos(theta), sin(theta))
//! ```
//!
//! with `d` the BS-UE distance and `beta` the angle between the ray and the
//! BS->UE direction. `d0 > 0` holds whenever `tau > 0`, so the closed form
//! already discards the backward intersection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs of the localization stage for one channel realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationInput {
    pub bs_pos: [f64; 2],
    pub ue_pos: [f64; 2],
    /// `(tau seconds, theta radians, confidence)` per detection.
    pub detections: Vec<(f64, f64, f64)>,
}

/// A localized scatter with the detection confidence carried through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocatedScatter {
    pub pos: [f64; 2],
    pub confidence: f64,
}

/// Intersection of the delay ellipse with the departure ray.
pub fn locate_scatter(
    tau: f64,
    theta: f64,
    bs_pos: [f64; 2],
    ue_pos: [f64; 2],
    c: f64,
) -> Result<[f64; 2]> {
    if tau <= 0.0 {
        return Err(Error::Singularity(format!("tau {tau} <= 0: degenerate ellipse")));
    }
    let dx = ue_pos[0] - bs_pos[0];
    let dy = ue_pos[1] - bs_pos[1];
    let d = (dx * dx + dy * dy).sqrt();
    if d <= 0.0 {
        return Err(Error::Singularity("BS and UE coincide".into()));
    }
    let ct = c * tau;
    let cos_beta = theta.cos() * dx / d + theta.sin() * dy / d;
    let denom = 2.0 * (ct + d - d * cos_beta);
    if denom <= 1e-12 * d {
        return Err(Error::Singularity(format!("denominator {denom} below the guard")));
    }
    let d0 = ct * (2.0 * d + ct) / denom;
    Ok([d0 * theta.cos() + bs_pos[0], d0 * theta.sin() + bs_pos[1]])
}

/// Localize every detection, skipping (and counting) singular ones.
pub fn locate_all(input: &LocalizationInput, c: f64) -> (Vec<LocatedScatter>, usize) {
    let mut out = Vec::with_capacity(input.detections.len());
    let mut skipped = 0usize;
    for &(tau, theta, conf) in &input.detections {
        match locate_scatter(tau, theta, input.bs_pos, input.ue_pos, c) {
            Ok(pos) => out.push(LocatedScatter { pos, confidence: conf }),
            Err(_) => skipped += 1,
        }
    }
    (out, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{SystemConfig, SPEED_OF_LIGHT};
    use crate::scene::{compute_path_params, sample_scene};

    fn norm(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn collinear_case() {
        let p = locate_scatter(20.0 / SPEED_OF_LIGHT, 0.0, [0.0, 0.0], [100.0, 0.0], SPEED_OF_LIGHT)
            .unwrap();
        assert!((p[0] - 110.0).abs() < 1e-9);
        assert!(p[1].abs() < 1e-9);
    }

    #[test]
    fn perpendicular_case() {
        let p = locate_scatter(
            100.0 / SPEED_OF_LIGHT,
            std::f64::consts::FRAC_PI_2,
            [0.0, 0.0],
            [100.0, 0.0],
            SPEED_OF_LIGHT,
        )
        .unwrap();
        assert!(p[0].abs() < 1e-9);
        assert!((p[1] - 75.0).abs() < 1e-9);
    }

    #[test]
    fn oblique_case_satisfies_ellipse() {
        let bs = [0.0, 0.0];
        let ue = [60.0, 80.0];
        let tau = 40.0 / SPEED_OF_LIGHT;
        let theta = std::f64::consts::FRAC_PI_4;
        let p = locate_scatter(tau, theta, bs, ue, SPEED_OF_LIGHT).unwrap();
        let d0 = norm(p, bs);
        assert!((d0 - 117.0588).abs() < 1e-3);
        assert!((p[0] - p[1]).abs() < 1e-9);
        // Ellipse membership: |p-bs| + |p-ue| = c tau + d.
        let lhs = norm(p, bs) + norm(p, ue);
        let rhs = 40.0 + 100.0;
        assert!((lhs - rhs).abs() < 1e-9 * rhs);
        // Ray membership.
        assert!(((p[1] - bs[1]).atan2(p[0] - bs[0]) - theta).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(locate_scatter(0.0, 0.3, [0.0, 0.0], [1.0, 0.0], SPEED_OF_LIGHT).is_err());
        assert!(locate_scatter(-1e-9, 0.3, [0.0, 0.0], [1.0, 0.0], SPEED_OF_LIGHT).is_err());
        assert!(locate_scatter(1e-7, 0.3, [1.0, 2.0], [1.0, 2.0], SPEED_OF_LIGHT).is_err());
    }

    #[test]
    fn locate_all_skips_and_counts() {
        let input = LocalizationInput {
            bs_pos: [0.0, 0.0],
            ue_pos: [100.0, 0.0],
            detections: vec![(20.0 / SPEED_OF_LIGHT, 0.0, 0.9), (0.0, 0.1, 0.8)],
        };
        let (located, skipped) = locate_all(&input, SPEED_OF_LIGHT);
        assert_eq!(located.len(), 1);
        assert_eq!(skipped, 1);
        assert!(locate_all(
            &LocalizationInput { bs_pos: [0.0, 0.0], ue_pos: [1.0, 1.0], detections: vec![] },
            SPEED_OF_LIGHT
        )
        .0
        .is_empty());
    }

    /// The core round trip: exact path parameters of generated scenes come
    /// back as the exact scatter positions.
    #[test]
    fn inverts_path_parameters_on_random_scenes() {
        let cfg = SystemConfig::default();
        for seed in 0..50 {
            let scene = sample_scene(seed, &cfg, (5, 10)).unwrap();
            let params = compute_path_params(&scene, &cfg);
            for (i, &truth) in scene.scatters.iter().enumerate() {
                let p = params[i + 1];
                let est =
                    locate_scatter(p.tau, p.theta, scene.bs_pos, scene.ue_pos, cfg.c).unwrap();
                assert!(norm(est, truth) < 1e-6, "seed {seed} scatter {i}");
            }
        }
    }

    #[test]
    fn d0_is_monotone_in_tau() {
        let bs = [0.0, 0.0];
        let ue = [40.0, 30.0];
        let theta = 0.7;
        let mut last = 0.0;
        for k in 1..200 {
            let tau = k as f64 * 1e-8;
            let p = locate_scatter(tau, theta, bs, ue, SPEED_OF_LIGHT).unwrap();
            let d0 = norm(p, bs);
            assert!(d0 > last, "tau {tau}");
            last = d0;
        }
    }
}
