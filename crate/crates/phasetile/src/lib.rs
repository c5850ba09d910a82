//! Phase-noise modeling and link-level simulation for tiled massive MIMO uplinks.
//!
//! A base station array is built from `N_T` tiles of `N_0` antennas each. Every
//! tile synthesizes its carrier by locking an on-chip VCO to a common
//! low-frequency reference through a PLL, so the received signal carries one
//! independent phase-noise process per tile plus a common reference drift.
//! This crate provides the pieces needed to study how that noise propagates
//! through LMMSE multiuser detection and decision-directed constellation
//! tracking, and to design phase-noise PSD masks that meet a BER target:
//!
//! * [`noise`] — parametric oscillator PSD model and spectral synthesis of
//!   colored phase traces,
//! * [`pll`] — linearized phase-domain PLL transfer functions and the
//!   `q`-coefficient map from PSD coefficients to filtered variance,
//! * [`spatial`] — line-of-sight channels, steering vectors and the Dirichlet
//!   kernel cross-correlation laws,
//! * [`rx`] — LMMSE receivers, the Gray-coded QPSK modem and windowed
//!   constellation tracking,
//! * [`predict`] — closed-form performance predictions (equivalent SNR/SINR,
//!   BER, maximum tolerable phase-noise variance, mask feasibility),
//! * [`engine`] — seeded Monte Carlo experiments (full uplink simulation,
//!   self-noise and cross-talk isolation, parameter sweeps),
//! * [`config`] — flat key-value configuration files with validation.
//!
//! The mdbook under `book/` walks through the same material chapter by
//! chapter; its code snippets compile and run as doctests of this crate.

pub mod config;
pub mod engine;
pub mod linalg;
pub mod noise;
pub mod pll;
pub mod predict;
pub mod rx;
pub mod spatial;

mod error;

pub use error::{Error, Result};

// Book chapters double as doctests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/phase-noise.md")]
    pub mod phase_noise {}
    #[doc = include_str!("../../../book/src/pll.md")]
    pub mod pll {}
    #[doc = include_str!("../../../book/src/spatial.md")]
    pub mod spatial {}
    #[doc = include_str!("../../../book/src/receivers.md")]
    pub mod receivers {}
    #[doc = include_str!("../../../book/src/prediction.md")]
    pub mod prediction {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
