//! Multiuser receivers, the Gray-coded QPSK modem and per-user constellation
//! tracking.
//!
//! Two LMMSE variants are provided: the naive receiver
//! `Γ = Hᴴ(HHᴴ + σ_ν²I)⁻¹` built from one-shot channel estimates, and the
//! phase-aware receiver that adds the block-diagonal phase-noise covariance
//! `C_z = σ_φ²·blockdiag(HᵢHᵢᴴ)` to the normal matrix. Slow common phase
//! drift at the receiver output is removed by a decision-directed windowed
//! demeaning filter, equivalent (under error-free decisions) to filtering the
//! output phase with `h_W(t) = δ(t) − (1/W)Σᵢ δ(t − i·T_symb)`.

use std::collections::VecDeque;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;

use crate::linalg::{hermitian, hermitian_solve};
use crate::spatial::ChannelMatrix;
use crate::{Error, Result};

/// Which linear receiver to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverVariant {
    Naive,
    PhaseAware,
    MatchedFilter,
}

/// `K×N` linear receiver with its per-tile block view.
#[derive(Debug, Clone)]
pub struct ReceiverMatrix {
    weights: Array2<Complex64>,
    tile_size: usize,
    variant: ReceiverVariant,
}

impl ReceiverMatrix {
    pub fn weights(&self) -> &Array2<Complex64> {
        &self.weights
    }

    pub fn variant(&self) -> ReceiverVariant {
        self.variant
    }

    pub fn n_users(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_tiles(&self) -> usize {
        self.weights.ncols() / self.tile_size
    }

    /// Columns `i·N0 .. (i+1)·N0`: the weights applied to tile `i`.
    pub fn tile_block(&self, i: usize) -> ArrayView2<'_, Complex64> {
        let n0 = self.tile_size;
        self.weights.slice(s![.., i * n0..(i + 1) * n0])
    }
}

fn lmmse_with_covariance(
    h: &ChannelMatrix,
    sigma_nu2: f64,
    sigma_phi2: f64,
    variant: ReceiverVariant,
) -> Result<ReceiverMatrix> {
    if !(sigma_nu2 > 0.0) {
        return Err(Error::domain("lmmse: noise power must be > 0"));
    }
    if sigma_phi2 < 0.0 {
        return Err(Error::domain("lmmse: phase variance must be >= 0"));
    }
    let hm = h.entries();
    let n = h.n_antennas();
    let mut a = hm.dot(&hermitian(&hm.view()));
    for i in 0..n {
        a[[i, i]] += Complex64::new(sigma_nu2, 0.0);
    }
    if sigma_phi2 > 0.0 {
        let n0 = h.tile_size();
        for t in 0..h.n_tiles() {
            let block = h.tile_block(t);
            let gram = block.dot(&hermitian(&block));
            for r in 0..n0 {
                for c in 0..n0 {
                    a[[t * n0 + r, t * n0 + c]] += sigma_phi2 * gram[[r, c]];
                }
            }
        }
    }
    // A Γᴴ = H, then Γ = (Γᴴ)ᴴ
    let gamma_h = hermitian_solve(&a, hm)?;
    Ok(ReceiverMatrix {
        weights: hermitian(&gamma_h.view()),
        tile_size: h.tile_size(),
        variant,
    })
}

/// LMMSE receiver ignoring phase noise: `Γ = Hᴴ(HHᴴ + σ_ν²I)⁻¹`.
pub fn lmmse_naive(h: &ChannelMatrix, sigma_nu2: f64) -> Result<ReceiverMatrix> {
    lmmse_with_covariance(h, sigma_nu2, 0.0, ReceiverVariant::Naive)
}

/// LMMSE receiver accounting for per-tile phase-noise statistics:
/// `Γ = Hᴴ(HHᴴ + σ_ν²I + σ_φ²·blockdiag(HᵢHᵢᴴ))⁻¹`. Reduces exactly to
/// [`lmmse_naive`] at `σ_φ² = 0`.
pub fn lmmse_phase_aware(
    h: &ChannelMatrix,
    sigma_nu2: f64,
    sigma_phi2: f64,
) -> Result<ReceiverMatrix> {
    lmmse_with_covariance(h, sigma_nu2, sigma_phi2, ReceiverVariant::PhaseAware)
}

/// Spatial matched filter `Γ = Hᴴ/N`.
pub fn matched_filter(h: &ChannelMatrix) -> ReceiverMatrix {
    let scale = 1.0 / h.n_antennas() as f64;
    ReceiverMatrix {
        weights: hermitian(&h.entries().view()).mapv(|z| z * scale),
        tile_size: h.tile_size(),
        variant: ReceiverVariant::MatchedFilter,
    }
}

/// Gray map: bits `(b_I, b_Q)` to the unit-power QPSK point
/// `((1−2b_I) + j(1−2b_Q))/√2`.
pub fn qpsk_symbol(b_i: bool, b_q: bool) -> Complex64 {
    const A: f64 = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(
        if b_i { -A } else { A },
        if b_q { -A } else { A },
    )
}

/// Modulate a stream of bit pairs.
pub fn qpsk_modulate(bits: &[(bool, bool)]) -> Vec<Complex64> {
    bits.iter().map(|&(i, q)| qpsk_symbol(i, q)).collect()
}

/// Sign-based detection; exact zeros break toward bit 0 so detection is
/// deterministic.
pub fn qpsk_detect(y: Complex64) -> (bool, bool) {
    (y.re < 0.0, y.im < 0.0)
}

/// Nearest QPSK constellation point to `y`.
pub fn qpsk_nearest(y: Complex64) -> Complex64 {
    let (bi, bq) = qpsk_detect(y);
    qpsk_symbol(bi, bq)
}

/// Frequency response of the windowed demeaning filter
/// `H_W(f) = 1 − (1/W)·Σ_{i=1..W} e^{−j2πf·i·T_symb}`.
///
/// Nulls DC (removes constant offsets and slow drift), enhances high
/// frequencies; `W = 1` gives `|H_W| = 2|sin(πfT)|`, the differential limit.
pub fn tracking_filter_response(window: usize, f: f64, t_symb: f64) -> Complex64 {
    assert!(window >= 1, "tracking window must be >= 1");
    let mut sum = Complex64::new(0.0, 0.0);
    for i in 1..=window {
        sum += Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * i as f64 * t_symb);
    }
    Complex64::new(1.0, 0.0) - sum / window as f64
}

/// How the tracker obtains its symbol reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    /// Use the detector decision for the current symbol.
    DecisionDirected,
    /// Use the true transmitted symbol (idealized, no error propagation).
    Genie,
}

/// Decision-directed phase tracker for one user stream.
///
/// Each symbol is first derotated by the mean of the last `W` phase-error
/// estimates, then detected; the new estimate is the current correction plus
/// the residual angle of the corrected symbol, so the history holds an
/// unwrapped absolute phase even when the accumulated drift leaves (−π, π].
/// During warm-up the mean runs over however much history exists.
#[derive(Debug, Clone)]
pub struct TrackerState {
    window: usize,
    mode: TrackerMode,
    history: VecDeque<f64>,
    history_sum: f64,
}

impl TrackerState {
    pub fn new(window: usize, mode: TrackerMode) -> Result<Self> {
        if window == 0 {
            return Err(Error::domain("tracker: window must be >= 1"));
        }
        Ok(TrackerState {
            window,
            mode,
            history: VecDeque::with_capacity(window),
            history_sum: 0.0,
        })
    }

    pub fn mode(&self) -> TrackerMode {
        self.mode
    }

    /// Current phase correction: mean of the stored estimates, 0 when empty.
    pub fn correction(&self) -> f64 {
        if self.history.is_empty() {
            0.0
        } else {
            self.history_sum / self.history.len() as f64
        }
    }

    /// Process one received symbol: derotate by the current correction,
    /// detect, update the history. Returns the corrected symbol; callers
    /// detect bits from it (in decision-directed mode that detection is the
    /// decision that drove the update).
    pub fn step(&mut self, y: Complex64, true_symbol: Option<Complex64>) -> Result<Complex64> {
        let corr = self.correction();
        let yc = y * Complex64::from_polar(1.0, -corr);
        let reference = match self.mode {
            TrackerMode::Genie => true_symbol
                .ok_or_else(|| Error::domain("tracker: genie mode requires true symbols"))?,
            TrackerMode::DecisionDirected => qpsk_nearest(yc),
        };
        let estimate = corr + (yc * reference.conj()).arg();
        if self.history.len() == self.window {
            self.history_sum -= self.history.pop_front().unwrap();
        }
        self.history.push_back(estimate);
        self.history_sum += estimate;
        Ok(yc)
    }
}

/// Run a tracker over a whole stream, returning the corrected symbols.
pub fn track_constellation(
    y: &[Complex64],
    tracker: &mut TrackerState,
    true_symbols: Option<&[Complex64]>,
) -> Result<Vec<Complex64>> {
    if tracker.mode() == TrackerMode::Genie {
        match true_symbols {
            Some(s) if s.len() == y.len() => {}
            _ => {
                return Err(Error::domain(
                    "track_constellation: genie mode requires true symbols for every sample",
                ))
            }
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (t, &yt) in y.iter().enumerate() {
        let s = true_symbols.map(|s| s[t]);
        out.push(tracker.step(yt, s)?);
    }
    Ok(out)
}

/// Normalized tile-level correlation between a receiver and the spatial
/// matched filter: entry `(i, k)` is the magnitude of tile `i`'s response to
/// user `k`, `|(ΓᵢHᵢ)_{k,k}|`, normalized by `‖Γᵢ row k‖·‖Hᵢ col k‖`, i.e.
/// the alignment of the receiver row with the conjugated channel column. 1
/// exactly when the row is a scalar multiple of the matched filter.
pub fn tile_mf_alignment(gamma: &ReceiverMatrix, h: &ChannelMatrix) -> Array2<f64> {
    let n_tiles = h.n_tiles();
    let k_users = h.n_users();
    Array2::from_shape_fn((n_tiles, k_users), |(i, k)| {
        let g_row = gamma.tile_block(i);
        let h_col = h.tile_block(i);
        let mut response = Complex64::new(0.0, 0.0);
        let mut ng = 0.0;
        let mut nh = 0.0;
        for m in 0..h.tile_size() {
            let g = g_row[[k, m]];
            let c = h_col[[m, k]];
            response += g * c;
            ng += g.norm_sqr();
            nh += c.norm_sqr();
        }
        response.norm() / (ng.sqrt() * nh.sqrt())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fro_norm;
    use crate::spatial::{build_channel, sample_spatial_frequencies, SpatialConfig};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nominal_channel(seed: u64) -> ChannelMatrix {
        let cfg = SpatialConfig::nominal();
        let om = sample_spatial_frequencies(&cfg, seed).unwrap();
        build_channel(&cfg, &om).unwrap()
    }

    #[test]
    fn single_user_lmmse_is_scalar_woodbury() {
        let cfg = SpatialConfig::new(8, 4, 1).unwrap();
        let h = build_channel(&cfg, &[0.7]).unwrap();
        let sigma2 = 0.5;
        let g = lmmse_naive(&h, sigma2).unwrap();
        // Γ = h^H / (||h||^2 + σ²)
        let scale = 1.0 / (8.0 + sigma2);
        for m in 0..8 {
            let expect = h.entries()[[m, 0]].conj() * scale;
            assert!((g.weights()[[0, m]] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_forcing_limit_for_orthogonal_columns() {
        // omegas on the rigid grid make the columns exactly orthogonal
        let cfg = SpatialConfig::new(8, 4, 4).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let om: Vec<f64> = (0..4).map(|i| -std::f64::consts::PI + i as f64 * tau / 8.0).collect();
        let h = build_channel(&cfg, &om).unwrap();
        let g = lmmse_naive(&h, 1e-9).unwrap();
        let gh = g.weights().dot(h.entries());
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gh[[i, j]].norm() - expect).abs() < 1e-6,
                    "GH[{i},{j}] = {}",
                    gh[[i, j]]
                );
            }
        }
    }

    #[test]
    fn lmmse_satisfies_normal_equations_to_1e10() {
        let h = nominal_channel(11);
        let sigma2 = 256.0 / 10f64.powf(1.4);
        let g = lmmse_naive(&h, sigma2).unwrap();
        let hm = h.entries();
        let mut a = hm.dot(&hermitian(&hm.view()));
        for i in 0..256 {
            a[[i, i]] += Complex64::new(sigma2, 0.0);
        }
        let residual = &a.dot(&hermitian(&g.weights().view())) - hm;
        let rel = fro_norm(&residual) / fro_norm(hm);
        assert!(rel < 1e-10, "relative residual {rel}");
    }

    #[test]
    fn phase_aware_reduces_to_naive_at_zero_phase_variance() {
        let h = nominal_channel(23);
        let a = lmmse_naive(&h, 10.0).unwrap();
        let b = lmmse_phase_aware(&h, 10.0, 0.0).unwrap();
        let diff = fro_norm(&(a.weights() - b.weights()));
        assert!(diff < 1e-14 * fro_norm(a.weights()));
    }

    #[test]
    fn phase_aware_single_user_single_tile_closed_form() {
        // one tile: C_z = σφ² h hᴴ, so Γ = hᴴ/((1+σφ²)||h||² + σν²)
        let cfg = SpatialConfig::new(8, 8, 1).unwrap();
        let h = build_channel(&cfg, &[-1.2]).unwrap();
        let (s_nu, s_phi) = (0.3, 0.05);
        let g = lmmse_phase_aware(&h, s_nu, s_phi).unwrap();
        let scale = 1.0 / ((1.0 + s_phi) * 8.0 + s_nu);
        for m in 0..8 {
            let expect = h.entries()[[m, 0]].conj() * scale;
            assert!((g.weights()[[0, m]] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn lmmse_rejects_nonpositive_noise() {
        let h = nominal_channel(5);
        assert!(lmmse_naive(&h, 0.0).is_err());
        assert!(lmmse_phase_aware(&h, 1.0, -0.1).is_err());
    }

    #[test]
    fn interference_suppression_at_nominal_snr() {
        // off-diagonal energy of ΓH below 1% of the squared diagonal
        let sigma2 = 256.0 / 10f64.powf(1.4);
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let h = nominal_channel(100 + seed);
            let g = lmmse_naive(&h, sigma2).unwrap();
            let gh = g.weights().dot(h.entries());
            for k in 0..h.n_users() {
                let diag = gh[[k, k]].norm_sqr();
                let off: f64 = (0..h.n_users())
                    .filter(|&l| l != k)
                    .map(|l| gh[[k, l]].norm_sqr())
                    .sum();
                worst = worst.max(off / diag);
            }
        }
        assert!(worst < 0.01, "worst off/diag energy ratio {worst}");
    }

    #[test]
    fn matched_filter_moments() {
        // diagonal exactly N0/N; off-diagonal mean square N0/N² over random pairs
        let cfg = SpatialConfig::nominal();
        let n0 = cfg.tile_size as f64;
        let n = cfg.n_antennas as f64;
        let mut off_acc = 0.0;
        let mut off_count = 0usize;
        for seed in 0..20 {
            let om = sample_spatial_frequencies(&cfg, 300 + seed).unwrap();
            let h = build_channel(&cfg, &om).unwrap();
            let g = matched_filter(&h);
            let gh0 = g.tile_block(0).dot(&h.tile_block(0));
            for k in 0..cfg.n_users {
                assert!((gh0[[k, k]] - Complex64::new(n0 / n, 0.0)).norm() < 1e-12);
            }
            for k in 0..cfg.n_users {
                for l in 0..cfg.n_users {
                    if k != l {
                        off_acc += gh0[[k, l]].norm_sqr();
                        off_count += 1;
                    }
                }
            }
        }
        let mean_off = off_acc / off_count as f64;
        let expect = n0 / (n * n);
        assert!(
            (mean_off - expect).abs() < 0.15 * expect,
            "mean off-diagonal power {mean_off} vs {expect}"
        );
    }

    #[test]
    fn qpsk_roundtrip_and_quadrants() {
        let s = qpsk_symbol(false, false);
        assert!((s - Complex64::new(0.5f64.sqrt(), 0.5f64.sqrt())).norm() < 1e-15);
        for &bits in &[(false, false), (false, true), (true, false), (true, true)] {
            assert_eq!(qpsk_detect(qpsk_symbol(bits.0, bits.1)), bits);
        }
        assert_eq!(qpsk_detect(Complex64::new(0.3, -0.1)), (false, true));
        // zeros break toward bit 0
        assert_eq!(qpsk_detect(Complex64::new(0.0, 0.0)), (false, false));
        let st = qpsk_modulate(&[(false, true), (true, true)]);
        assert_eq!(st.len(), 2);
        assert!((st[0].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phase_rotation_flips_bit_past_quadrant_edge() {
        let s = qpsk_symbol(false, false); // e^{jπ/4}
        for phi in [0.2, 0.7, -0.3, -1.0] {
            let y = s * Complex64::from_polar(1.0, phi);
            let (bi, bq) = qpsk_detect(y);
            assert_eq!(bi, phi > std::f64::consts::FRAC_PI_4);
            assert_eq!(bq, phi < -std::f64::consts::FRAC_PI_4);
        }
    }

    #[test]
    fn tracking_filter_shape() {
        let t = 2e-10;
        for w in [1usize, 5, 10] {
            assert!(tracking_filter_response(w, 0.0, t).norm() < 1e-15, "DC null");
        }
        // W = 1 is the differential limit |H| = 2|sin(pi f T)|
        for f in [1e6, 1e8, 2.5e9] {
            let h = tracking_filter_response(1, f, t).norm();
            let expect = 2.0 * (std::f64::consts::PI * f * t).sin().abs();
            assert!((h - expect).abs() < 1e-12);
        }
        // at the band edge the W = 1 response doubles
        let edge = tracking_filter_response(1, 2.5e9, t).norm();
        assert!((edge - 2.0).abs() < 1e-9);
    }

    #[test]
    fn tracker_removes_constant_offset() {
        let w = 8;
        let phi0 = 0.4;
        let mut tr = TrackerState::new(w, TrackerMode::Genie).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut last = Complex64::new(0.0, 0.0);
        let mut last_sym = Complex64::new(0.0, 0.0);
        for _ in 0..(3 * w) {
            let s = qpsk_symbol(rng.gen(), rng.gen());
            last = tr.step(s * Complex64::from_polar(1.0, phi0), Some(s)).unwrap();
            last_sym = s;
        }
        // after the window fills, the residual rotation is gone
        assert!(((last / last_sym).arg()).abs() < 1e-12);
    }

    #[test]
    fn tracker_passes_clean_stream_through() {
        let mut tr = TrackerState::new(10, TrackerMode::Genie).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = qpsk_symbol(rng.gen(), rng.gen());
            let out = tr.step(s, Some(s)).unwrap();
            assert!((out - s).norm() < 1e-12);
        }
    }

    #[test]
    fn genie_tracker_equals_demeaning_filter() {
        // on a phase-only stream the residual phase is exactly h_W * phi
        let w = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi: Vec<f64> = (0..500).map(|_| 0.3 * rng.gen::<f64>()).collect();
        let mut tr = TrackerState::new(w, TrackerMode::Genie).unwrap();
        for (t, &p) in phi.iter().enumerate() {
            let s = qpsk_symbol(rng.gen(), rng.gen());
            let y = s * Complex64::from_polar(1.0, p);
            let out = tr.step(y, Some(s)).unwrap();
            let residual = (out / s).arg();
            // h_W output: phi[t] - mean of previous min(t, W) samples
            let lo = t.saturating_sub(w);
            let expect = if t == 0 {
                p
            } else {
                p - phi[lo..t].iter().sum::<f64>() / (t - lo) as f64
            };
            assert!(
                (residual - expect).abs() < 1e-12,
                "t={t}: {residual} vs {expect}"
            );
        }
    }

    #[test]
    fn genie_tracker_requires_true_symbols() {
        let mut tr = TrackerState::new(4, TrackerMode::Genie).unwrap();
        assert!(tr.step(Complex64::new(1.0, 0.0), None).is_err());
        let y = [Complex64::new(1.0, 0.0)];
        assert!(track_constellation(&y, &mut tr, None).is_err());
    }

    #[test]
    fn decision_directed_matches_genie_on_clean_data() {
        let mut dd = TrackerState::new(6, TrackerMode::DecisionDirected).unwrap();
        let mut ge = TrackerState::new(6, TrackerMode::Genie).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let s = qpsk_symbol(rng.gen(), rng.gen());
            let y = s * Complex64::from_polar(1.0, 0.1);
            let a = dd.step(y, None).unwrap();
            let b = ge.step(y, Some(s)).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn alignment_is_one_for_matched_filter_and_single_user() {
        let h = nominal_channel(31);
        let g = matched_filter(&h);
        let corr = tile_mf_alignment(&g, &h);
        assert!(corr.iter().all(|&c| (c - 1.0).abs() < 1e-12));

        let cfg1 = SpatialConfig::new(32, 8, 1).unwrap();
        let h1 = build_channel(&cfg1, &[0.9]).unwrap();
        let g1 = lmmse_naive(&h1, 2.0).unwrap();
        let corr1 = tile_mf_alignment(&g1, &h1);
        assert!(corr1.iter().all(|&c| (c - 1.0).abs() < 1e-10));
    }

    #[test]
    fn alignment_exceeds_097_at_nominal_snr() {
        let sigma2 = 256.0 / 10f64.powf(1.4);
        let mut below = 0usize;
        let mut total = 0usize;
        for seed in 0..20 {
            let h = nominal_channel(500 + seed);
            let g = lmmse_naive(&h, sigma2).unwrap();
            for &c in tile_mf_alignment(&g, &h).iter() {
                total += 1;
                if c <= 0.97 {
                    below += 1;
                }
            }
        }
        let frac = below as f64 / total as f64;
        assert!(frac < 0.01, "{below}/{total} samples below 0.97");
    }

    #[test]
    fn receiver_blocks_tile_correctly() {
        let h = nominal_channel(1);
        let g = lmmse_naive(&h, 5.0).unwrap();
        let mut restacked = Array2::zeros(g.weights().dim());
        for i in 0..g.n_tiles() {
            let b = g.tile_block(i);
            for r in 0..g.n_users() {
                for c in 0..h.tile_size() {
                    restacked[[r, i * h.tile_size() + c]] = b[[r, c]];
                }
            }
        }
        assert_eq!(restacked, *g.weights());
    }
}
