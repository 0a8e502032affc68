//! Simulation library for passive discrete-modulated continuous-variable QKD.
//!
//! The crate models the full pipeline of a modulator-free four-state CV-QKD
//! transmitter and its security analysis:
//!
//! - [`gaussian`]: phase-space primitives and the seedable Monte-Carlo sampler
//!   used as the independent oracle for every analytic formula in the crate.
//! - [`source`]: the passive encoder built from two free-running lasers, a
//!   90-degree-hybrid phase readout with ADC quantization, a VOA, and the
//!   closed-form state-preparation excess noise.
//! - [`remap`]: slice and remainder phase announcements plus receiver-side
//!   realignment.
//! - [`channel`]: lossy Gaussian channel and heterodyne receiver.
//! - [`keyrate`]: asymptotic key-rate lower bounds via constrained
//!   minimization of quantum relative entropy on a truncated Fock space.
//! - [`characterize`]: statistical tests for source traces (phase uniformity,
//!   autocorrelation, intensity stability).

pub mod channel;
pub mod characterize;
pub mod fock;
pub mod gaussian;
pub mod keyrate;
pub mod remap;
pub mod rng;
pub mod source;
pub mod stats;

pub use rng::RngSeed;
