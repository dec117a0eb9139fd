//! Channel estimation for large-intelligent-surface (LIS) aided MISO links.
//!
//! The crate covers the correlated Rayleigh channel model, pilot phase-shift
//! designs (DFT, ON/OFF, random and MM-optimized), the LS and LMMSE
//! estimators with their closed-form error expressions, and downlink
//! beamforming with achievable-rate evaluation.

pub mod channel;
pub mod downlink;
pub mod error;
pub mod estimation;
pub mod math;
pub mod pilot;
pub mod rng;

pub use channel::{build_czz, sample_channel, ChannelRealization, ChannelSampler, CorrelationProfile};
pub use error::{LisError, Result};
pub use estimation::{ChannelEstimator, EstimateReport, MeasurementModel, Method};
pub use math::{ComplexMatrix, HermitianMatrix, C64};
pub use pilot::{PhaseKind, PhaseShiftMatrix};
pub use rng::RngStream;
