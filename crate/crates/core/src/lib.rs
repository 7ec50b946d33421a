//! CSI-based scatter sensing.
//!
//! Simulates MIMO-OFDM multipath channels with point scatters, detects
//! scatter parameters on the angular-delay image with a small anchor-based
//! convolutional network, removes ghost targets, localizes scatters on the
//! bistatic ellipse, and benchmarks against a MUSIC+DFT baseline.
//!
//! All numeric kernels are generic over the [`num::Real`] scalar; the
//! aliases below fix the two widths used in practice (`f32` for the
//! training/inference path, `f64` for geometry and precision checks).

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod locate;
pub mod metrics;
pub mod net;
pub mod num;
pub mod pipeline;
pub mod postprocess;
pub mod scene;
pub mod train;
pub mod transform;

pub use config::SystemConfig;
pub use error::{Error, Result};
pub use num::Real;

/// Frequency-antenna channel at inference precision.
pub type ChannelMatrix32 = scene::ChannelMatrix<f32>;
/// Frequency-antenna channel at full precision.
pub type ChannelMatrix64 = scene::ChannelMatrix<f64>;
/// Truncated angular-delay map at inference precision.
pub type AngularDelayMap32 = transform::AngularDelayMap<f32>;
/// Truncated angular-delay map at full precision.
pub type AngularDelayMap64 = transform::AngularDelayMap<f64>;
