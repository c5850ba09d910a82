//! Closed-form performance predictions.
//!
//! The chain runs: filtered phase variances `σ_φ²` (per-tile VCO) and `σ_0²`
//! (tracked common reference) → the tiled-array output model with
//! multiplicative self-noise and additive cross-talk → an equivalent additive
//! noise variance and SINR → a Gray-QPSK BER estimate `Q(√SINR_eq)`. Inverting
//! the chain gives the largest tolerable phase-noise variance for a BER
//! target, which turns any PSD mask question into a linear feasibility check
//! `Σ qᵢaᵢ ≤ σ²_max`.

use serde::{Deserialize, Serialize};

use crate::noise::PsdParams;
use crate::pll::QCoefficients;
use crate::{Error, Result};

/// Equivalent additive power of a phase perturbation: a Gaussian phase error
/// of variance σ² costs as much BER as complex additive noise of variance
/// `(16/π²)σ²`.
pub const PHASE_TO_ADDITIVE: f64 = 16.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// Standard normal tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_function`] by bisection (adequate for threshold searches).
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("q_inverse: need 0 < p < 1"));
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Upper bound on Gray-QPSK BER under Gaussian phase noise (variance
/// `sigma_phi2`, rad²) plus complex additive noise (variance `sigma_n2`):
/// the BER with additive noise alone of variance
/// `σ_n² + (16/π²)σ_φ²`. Returns 0 for the noiseless case. At `σ_n = 0`
/// the construction is tight: the bound equals the exact phase-only BER
/// `Q((π/4)/σ_φ)`.
pub fn siso_ber_bound(sigma_n2: f64, sigma_phi2: f64) -> Result<f64> {
    if sigma_n2 < 0.0 || sigma_phi2 < 0.0 {
        return Err(Error::domain("siso_ber_bound: variances must be >= 0"));
    }
    let total = sigma_n2 + PHASE_TO_ADDITIVE * sigma_phi2;
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(q_function(1.0 / total.sqrt()))
}

/// Output-signal moments of the tiled array under the matched-filter
/// approximation: self-noise phase `ψ`, amplitude attenuation `γ` and
/// cross-user interference `I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Moments {
    /// `E ψ² = σ_φ²/N_T` (rad²): averaging over independent tiles.
    pub self_phase_var: f64,
    /// `E γ = 1 − σ_φ²/2`: common amplitude loss.
    pub attenuation: f64,
    /// `E|I|² = ((K−1)/N)·σ_φ² ≈ β σ_φ²`: insensitive to tiling.
    pub crosstalk_power: f64,
}

/// Evaluate the self-noise/cross-talk moments for a given geometry.
pub fn theorem2_moments(
    sigma_phi2: f64,
    n_tiles: usize,
    n_users: usize,
    n_antennas: usize,
) -> Theorem2Moments {
    Theorem2Moments {
        self_phase_var: sigma_phi2 / n_tiles as f64,
        attenuation: 1.0 - sigma_phi2 / 2.0,
        crosstalk_power: (n_users.saturating_sub(1)) as f64 / n_antennas as f64 * sigma_phi2,
    }
}

/// Everything the SINR/BER prediction needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Beamformed SNR `N/σ_ν²` (linear) for unit signal power.
    pub snr_bf: f64,
    /// Filtered per-tile VCO phase variance (rad²).
    pub sigma_phi2: f64,
    /// Residual tracked reference phase variance (rad²).
    pub sigma_02: f64,
    /// Load factor β = K/N.
    pub beta: f64,
    /// Number of tiles.
    pub n_tiles: usize,
    /// Residual correlation factor α in `E|ρ|² = α/N`; 0.1 under the 2π/N
    /// minimum separation, 1 for unconstrained uniform users.
    pub alpha_corr: f64,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_bf > 0.0) {
            return Err(Error::config("snr_bf", "beamformed SNR must be > 0"));
        }
        if self.sigma_phi2 < 0.0 || self.sigma_02 < 0.0 {
            return Err(Error::config("sigma_phi2", "phase variances must be >= 0"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta", "load factor must be in (0, 1]"));
        }
        if self.n_tiles == 0 {
            return Err(Error::config("n_tiles", "need at least one tile"));
        }
        if self.alpha_corr < 0.0 || self.alpha_corr * self.beta >= 1.0 {
            return Err(Error::config(
                "alpha_corr",
                "need alpha_corr >= 0 and alpha_corr * beta < 1",
            ));
        }
        Ok(())
    }
}

/// Pessimistic equivalent additive variance at the receiver output:
///
/// ```text
/// σ_eq² = (1 − σ_φ²/2)⁻² · [ 1/SNR_bf
///        + (β + 2.46·√β/N_T)·σ_φ²            cross-talk, 3σ above its mean
///        + (16/π²)·(σ_φ²/N_T + σ_0²) ]       phase → additive conversion
/// ```
pub fn equivalent_variance(budget: &LinkBudget) -> Result<f64> {
    budget.validate()?;
    if budget.sigma_phi2 >= 2.0 {
        return Err(Error::domain(
            "equivalent_variance: sigma_phi2 >= 2 leaves no signal amplitude",
        ));
    }
    let gamma = 1.0 - budget.sigma_phi2 / 2.0;
    let crosstalk =
        (budget.beta + 2.46 * budget.beta.sqrt() / budget.n_tiles as f64) * budget.sigma_phi2;
    let phase_terms =
        PHASE_TO_ADDITIVE * (budget.sigma_phi2 / budget.n_tiles as f64 + budget.sigma_02);
    Ok((1.0 / budget.snr_bf + crosstalk + phase_terms) / (gamma * gamma))
}

/// Pessimistic equivalent SINR `(1 − α·β)/σ_eq²`, including the
/// interference-suppression signal loss.
pub fn equivalent_sinr(budget: &LinkBudget) -> Result<f64> {
    Ok((1.0 - budget.alpha_corr * budget.beta) / equivalent_variance(budget)?)
}

/// Predicted Gray-QPSK BER `Q(√SINR_eq)`.
pub fn predict_ber(budget: &LinkBudget) -> Result<f64> {
    Ok(q_function(equivalent_sinr(budget)?.sqrt()))
}

/// Largest `σ_φ²` whose predicted BER stays at or below `target_ber`, found
/// by bisection to 1e-4 relative tolerance.
///
/// `ref_ratio` couples the reference to the VCO noise as
/// `σ_0² = ref_ratio·σ_φ²` during the search (the two masks usually scale
/// together). The budget's own `sigma_phi2`/`sigma_02` fields are ignored.
/// Errors if the target is unreachable even at zero phase noise.
pub fn max_phase_noise_variance(
    target_ber: f64,
    budget: &LinkBudget,
    ref_ratio: f64,
) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber < 0.5) {
        return Err(Error::domain("max_phase_noise_variance: need 0 < target < 0.5"));
    }
    if ref_ratio < 0.0 {
        return Err(Error::domain("max_phase_noise_variance: ref_ratio must be >= 0"));
    }
    let ber_at = |sphi2: f64| -> Result<f64> {
        let mut b = *budget;
        b.sigma_phi2 = sphi2;
        b.sigma_02 = ref_ratio * sphi2;
        predict_ber(&b)
    };
    let floor = ber_at(0.0)?;
    if floor > target_ber {
        return Err(Error::Infeasible(format!(
            "target BER {target_ber:.3e} is below the phase-noise-free floor {floor:.3e}"
        )));
    }
    // bracket: BER is monotone increasing in sigma_phi2
    let mut lo = 0.0;
    let mut hi = 1e-3;
    while ber_at(hi)? <= target_ber {
        hi *= 2.0;
        if hi >= 1.999 {
            // even extreme phase noise stays under target within model validity
            return Ok(1.999);
        }
    }
    debug_assert!(ber_at(lo)? <= target_ber && ber_at(hi)? > target_ber);
    while (hi - lo) > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if ber_at(mid)? <= target_ber {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Check a PSD mask against a variance cap: `margin = σ²_max − Σ qᵢaᵢ`,
/// feasible when the margin is nonnegative.
pub fn mask_feasible(psd: &PsdParams, q: &QCoefficients, sigma_max2: f64) -> (bool, f64) {
    let margin = sigma_max2 - q.dot(psd);
    (margin >= 0.0, margin)
}
