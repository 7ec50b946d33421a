//! System-level constants shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Carrier, array and grid constants of the MIMO-OFDM link.
///
/// The angular-delay grid geometry is fully determined by these values:
/// one delay bin spans `1 / (delta_f * n_c)` seconds and the angular axis
/// covers `sin(theta)/2` of a full turn per `n_t` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Carrier frequency in Hz.
    pub f0: f64,
    /// Sub-carrier spacing in Hz.
    pub delta_f: f64,
    /// Number of sub-carriers.
    pub n_c: usize,
    /// Number of transmit antennas (ULA).
    pub n_t: usize,
    /// Antenna spacing in wavelengths (half-wavelength array).
    pub d_over_lambda: f64,
    /// Propagation speed in m/s.
    pub c: f64,
    /// Delay rows retained after truncation.
    pub n_c_trunc: usize,
}

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

impl Default for SystemConfig {
    /// Default sub-carrier spacing is 100 kHz: it puts one delay bin at
    /// ~2.93 m of excess path, so the truncated 64-row window covers a
    /// 100 m scene with margin. Wider spacings remain selectable through
    /// the field for fidelity experiments.
    fn default() -> Self {
        Self {
            f0: 28e9,
            delta_f: 100e3,
            n_c: 1024,
            n_t: 64,
            d_over_lambda: 0.5,
            c: SPEED_OF_LIGHT,
            n_c_trunc: 64,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.delta_f > 0.0) {
            return Err(Error::InvalidConfig("f0 and delta_f must be positive".into()));
        }
        for (name, n) in [("n_c", self.n_c), ("n_t", self.n_t), ("n_c_trunc", self.n_c_trunc)] {
            if n == 0 || !n.is_power_of_two() {
                return Err(Error::InvalidConfig(format!("{name} must be a power of two, got {n}")));
            }
        }
        if self.n_c_trunc > self.n_c {
            return Err(Error::InvalidConfig(format!(
                "n_c_trunc ({}) must not exceed n_c ({})",
                self.n_c_trunc, self.n_c
            )));
        }
        if self.d_over_lambda != 0.5 {
            return Err(Error::InvalidConfig(format!(
                "d_over_lambda must be 0.5 (half-wavelength ULA), got {}",
                self.d_over_lambda
            )));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig("c must be positive".into()));
        }
        Ok(())
    }

    /// Width of one delay bin in seconds.
    pub fn delay_bin_seconds(&self) -> f64 {
        1.0 / (self.delta_f * self.n_c as f64)
    }

    /// Excess path length spanned by one delay bin, in meters.
    pub fn delay_bin_meters(&self) -> f64 {
        self.c * self.delay_bin_seconds()
    }
}
