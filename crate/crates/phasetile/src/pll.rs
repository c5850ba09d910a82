//! Linearized phase-domain PLL model.
//!
//! Each tile multiplies a clean low-frequency reference up to the carrier with
//! a type-2 PLL. In the phase domain the loop is linear, and the closed-loop
//! responses to the two noise sources reduce to the classic second-order
//! forms (`s = j2πf`, natural frequency `ω_n`, damping `ξ`):
//!
//! ```text
//! H_ref(s) = N_f (2ξω_n s + ω_n²) / (s² + 2ξω_n s + ω_n²)   lowpass, gain N_f
//! H_vco(s) =                   s² / (s² + 2ξω_n s + ω_n²)   highpass
//! ```
//!
//! so the PLL lowpass-filters (and multiplies) reference phase noise and
//! highpass-filters VCO phase noise. Filtered phase variances are integrals
//! of `L(f)|H(f)|²` over the signal band, which for the parametric PSD model
//! collapse to a linear map `σ² = Σ qᵢ aᵢ` with
//! `qᵢ = 2·∫_{f_min}^{B/2} f^{-i} |H(f)|² df` computed here by log-spaced
//! quadrature.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::noise::{psd_eval, PsdParams};
use crate::{Error, Result};

/// Grid size for the q-coefficient quadrature; doubling it moves q₀…q₂ by
/// less than 0.1% (q₃ by less than 1% at reference-row cutoffs).
pub const DEFAULT_N_QUAD: usize = 32_768;

/// Type-2 PLL loop parameters.
///
/// The loop gain is tied to the natural frequency by `k_V = N_f ω_n²`, which
/// yields the closed-loop denominators `s² + 2ξω_n s + ω_n²` above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllConfig {
    /// Frequency multiplication factor `N_f` (carrier / reference), >= 1.
    pub multiplication_factor: u32,
    /// Loop natural frequency in Hz (`ω_n = 2π · f_natural`).
    pub natural_freq_hz: f64,
    /// Damping factor `ξ` > 0.
    pub damping: f64,
}

impl PllConfig {
    pub fn new(multiplication_factor: u32, natural_freq_hz: f64, damping: f64) -> Result<Self> {
        let cfg = PllConfig {
            multiplication_factor,
            natural_freq_hz,
            damping,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 14x multiplication, 1 MHz natural frequency, ξ = 0.707.
    pub fn nominal() -> Self {
        PllConfig {
            multiplication_factor: 14,
            natural_freq_hz: 1e6,
            damping: 0.707,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multiplication_factor < 1 {
            return Err(Error::config("n_f", "multiplication factor must be >= 1"));
        }
        if !(self.natural_freq_hz > 0.0) || !self.natural_freq_hz.is_finite() {
            return Err(Error::config("f_natural_hz", "must be finite and > 0"));
        }
        if !(self.damping > 0.0) || !self.damping.is_finite() {
            return Err(Error::config("damping", "must be finite and > 0"));
        }
        Ok(())
    }

    fn omega_n(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.natural_freq_hz
    }

    /// Loop gain `α = k_V = N_f ω_n²` in rad/s.
    pub fn loop_gain(&self) -> f64 {
        self.multiplication_factor as f64 * self.omega_n() * self.omega_n()
    }

    fn denominator(&self, s: Complex64) -> Complex64 {
        let wn = self.omega_n();
        s * s + 2.0 * self.damping * wn * s + wn * wn
    }
}

fn s_of(f: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * std::f64::consts::PI * f)
}

/// Loop-filter response `(1 + (2ξ/ω_n)s)/s` at `s = j2πf`.
///
/// Singular at DC, where the integrator pole dominates; at high frequency it
/// flattens to `2ξ/ω_n`.
pub fn loop_filter_response(cfg: &PllConfig, f: f64) -> Result<Complex64> {
    if f == 0.0 {
        return Err(Error::domain("loop_filter_response: singular at f = 0"));
    }
    let s = s_of(f);
    let wn = cfg.omega_n();
    Ok((Complex64::new(1.0, 0.0) + s * (2.0 * cfg.damping / wn)) / s)
}

/// Closed-loop response of output phase to reference phase noise. Lowpass
/// with DC gain `N_f`; defined for all `f` (the DC limit is `N_f`).
pub fn ref_transfer(cfg: &PllConfig, f: f64) -> Complex64 {
    let s = s_of(f);
    let wn = cfg.omega_n();
    let num = 2.0 * cfg.damping * wn * s + wn * wn;
    cfg.multiplication_factor as f64 * num / cfg.denominator(s)
}

/// Closed-loop response of output phase to VCO phase noise. Highpass with a
/// double zero at DC; tends to 1 at high frequency.
pub fn vco_transfer(cfg: &PllConfig, f: f64) -> Complex64 {
    let s = s_of(f);
    s * s / cfg.denominator(s)
}

/// Linear weights mapping PSD coefficients to a filtered phase variance:
/// `σ² = q0·a0 + q1·a1 + q2·a2 + q3·a3` for the response they were computed
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QCoefficients {
    /// Units Hz, dimensionless, Hz⁻¹, Hz⁻².
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub f_min: f64,
    pub bandwidth: f64,
}

impl QCoefficients {
    pub fn as_array(&self) -> [f64; 4] {
        [self.q0, self.q1, self.q2, self.q3]
    }

    /// The variance `Σ qᵢ aᵢ` for a given PSD.
    pub fn dot(&self, psd: &PsdParams) -> f64 {
        let a = psd.as_array();
        self.q0 * a[0] + self.q1 * a[1] + self.q2 * a[2] + self.q3 * a[3]
    }
}

/// Integrate `weight(f)` over `(f_min, B/2]` doubled for the symmetric
/// negative half, by trapezoid on a log-spaced grid of `n_quad` points.
fn two_sided_integral(
    weight: &dyn Fn(f64) -> f64,
    bandwidth: f64,
    f_min: f64,
    n_quad: usize,
) -> Result<f64> {
    if !(f_min > 0.0) || f_min >= bandwidth / 2.0 {
        return Err(Error::domain(
            "quadrature: require 0 < f_min < bandwidth/2",
        ));
    }
    if n_quad < 2 {
        return Err(Error::domain("quadrature: need at least 2 points"));
    }
    let x0 = f_min.ln();
    let x1 = (bandwidth / 2.0).ln();
    let dx = (x1 - x0) / (n_quad - 1) as f64;
    let mut acc = 0.0;
    let mut prev = 0.0;
    for i in 0..n_quad {
        let f = (x0 + i as f64 * dx).exp();
        // d f = f dx on the log grid
        let g = weight(f) * f;
        if !g.is_finite() {
            return Err(Error::domain(format!(
                "quadrature: non-finite integrand at f = {f}"
            )));
        }
        if i > 0 {
            acc += 0.5 * (g + prev) * dx;
        }
        prev = g;
    }
    Ok(2.0 * acc)
}

/// Compute the q-coefficients of a frequency response over `(f_min, B/2]`.
pub fn q_coefficients(
    response: &dyn Fn(f64) -> Complex64,
    bandwidth: f64,
    f_min: f64,
    n_quad: usize,
) -> Result<QCoefficients> {
    let mag2 = |f: f64| response(f).norm_sqr();
    let q0 = two_sided_integral(&mag2, bandwidth, f_min, n_quad)?;
    let q1 = two_sided_integral(&|f| mag2(f) / f, bandwidth, f_min, n_quad)?;
    let q2 = two_sided_integral(&|f| mag2(f) / (f * f), bandwidth, f_min, n_quad)?;
    let q3 = two_sided_integral(&|f| mag2(f) / (f * f * f), bandwidth, f_min, n_quad)?;
    Ok(QCoefficients {
        q0,
        q1,
        q2,
        q3,
        f_min,
        bandwidth,
    })
}

/// Filtered phase variance `2·∫_{f_min}^{B/2} L(f)|H(f)|² df` by direct
/// quadrature of the product. Agrees with `q_coefficients(...).dot(psd)` to
/// well below 0.1%; the two routes are kept separate so they can check each
/// other.
pub fn filtered_variance(
    psd: &PsdParams,
    response: &dyn Fn(f64) -> Complex64,
    bandwidth: f64,
    f_min: f64,
    n_quad: usize,
) -> Result<f64> {
    psd.validate()?;
    two_sided_integral(
        &|f| psd_eval(psd, f).unwrap_or(f64::NAN) * response(f).norm_sqr(),
        bandwidth,
        f_min,
        n_quad,
    )
}
