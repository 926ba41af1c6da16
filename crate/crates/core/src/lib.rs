//! Joint transmit beamformer and intelligent-reflecting-surface (IRS) phase
//! design for a wideband multi-user MISO-OFDM downlink.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: system dimensions, power levels and link geometry.
//! - [`channel`]: tap-delay-line channel synthesis and the per-subcarrier
//!   frequency-domain channels.
//! - [`metrics`]: SINR, average sum-rate, modified MSE and the weighted-MSE
//!   objective.
//! - [`optimizer`]: block coordinate descent over receive scalars, weights,
//!   beamformers and the IRS phases (continuous or b-bit).
//! - [`oracle`]: brute-force references (explicit block-cyclic channel
//!   matrices, exhaustive grid search) and the random-IRS / no-IRS baselines.
//! - [`harness`]: seeded Monte Carlo sweeps and their text outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod oracle;
pub mod scenario;

mod grid;

pub use error::{Error, Result};
pub use grid::ToneGrid;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
