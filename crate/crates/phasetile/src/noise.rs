//! Oscillator phase-noise PSD model and spectral synthesis of phase traces.
//!
//! An oscillator's phase process is described by the two-sided PSD
//!
//! ```text
//! L(f) = a0 + a1/|f| + a2/f^2 + a3/|f|^3      (W/Hz, even in f)
//! ```
//!
//! combining a white floor with 1/f, 1/f² and 1/f³ lowpass components. Time
//! domain traces are synthesized by shaping i.i.d. complex Gaussian spectral
//! bins to the target PSD (optionally filtered by a transfer function) and
//! inverse-transforming with Hermitian symmetry, so the output is real,
//! deterministic for a given seed, and reproduces the target variance through
//! Parseval's identity.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Coefficients of the parametric oscillator phase-noise PSD, in linear units.
///
/// `a0` is the white floor (W/Hz), `a1` the flicker coefficient (W), `a2` the
/// 1/f² coefficient (W·Hz) and `a3` the 1/f³ coefficient (W·Hz²). All must be
/// nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdParams {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl PsdParams {
    pub fn new(a0: f64, a1: f64, a2: f64, a3: f64) -> Result<Self> {
        let p = PsdParams { a0, a1, a2, a3 };
        p.validate()?;
        Ok(p)
    }

    /// All coefficients zero (a noiseless oscillator).
    pub fn zero() -> Self {
        PsdParams {
            a0: 0.0,
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a0", self.a0),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "PSD coefficient must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Scale every coefficient by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        PsdParams {
            a0: self.a0 * s,
            a1: self.a1 * s,
            a2: self.a2 * s,
            a3: self.a3 * s,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a0 == 0.0 && self.a1 == 0.0 && self.a2 == 0.0 && self.a3 == 0.0
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a0, self.a1, self.a2, self.a3]
    }
}

/// Evaluate the two-sided PSD model at offset frequency `f` (Hz, `f != 0`).
///
/// Even in `f`; singular at DC, where the 1/f terms diverge.
pub fn psd_eval(params: &PsdParams, f: f64) -> Result<f64> {
    if f == 0.0 || !f.is_finite() {
        return Err(Error::domain("psd_eval: frequency must be finite and nonzero"));
    }
    let af = f.abs();
    Ok(params.a0 + params.a1 / af + params.a2 / (af * af) + params.a3 / (af * af * af))
}

/// Frequency grid for synthesis: bins at multiples of `bandwidth / n_bins`,
/// with everything below `f_min` (and the DC bin) carrying zero power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    pub f_min: f64,
    pub f_max: f64,
    pub n_bins: usize,
}

impl FrequencyGrid {
    /// Grid matching a trace of `n_samples` samples at rate `bandwidth`,
    /// with the lowest synthesized frequency at one frame resolution
    /// `bandwidth / n_samples`.
    pub fn for_trace(bandwidth: f64, n_samples: usize) -> Result<Self> {
        Self::with_f_min(bandwidth, n_samples, bandwidth / n_samples as f64)
    }

    pub fn with_f_min(bandwidth: f64, n_samples: usize, f_min: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::domain("frequency grid: bandwidth must be > 0"));
        }
        if f_min <= 0.0 || f_min >= bandwidth / 2.0 {
            return Err(Error::domain(
                "frequency grid: require 0 < f_min < bandwidth/2",
            ));
        }
        if n_samples < 2 {
            return Err(Error::domain("frequency grid: need at least 2 bins"));
        }
        Ok(FrequencyGrid {
            f_min,
            f_max: bandwidth / 2.0,
            n_bins: n_samples,
        })
    }

    fn bandwidth(&self) -> f64 {
        2.0 * self.f_max
    }
}

/// A synthesized phase trace sampled at one sample per symbol.
#[derive(Debug, Clone)]
pub struct PhaseTrace {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub seed: u64,
}

impl PhaseTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Mean squared sample of a trace (the phase variance, the process being
/// zero-mean by construction).
pub fn trace_variance(trace: &PhaseTrace) -> Result<f64> {
    if trace.samples.is_empty() {
        return Err(Error::domain("trace_variance: empty trace"));
    }
    Ok(trace.samples.iter().map(|x| x * x).sum::<f64>() / trace.samples.len() as f64)
}

/// Synthesize a real phase trace whose expected periodogram equals
/// `psd_eval(params, f) * |shaping(f)|^2` on `(f_min, B/2]`.
///
/// Each positive-frequency bin k at `f_k = k·B/n` receives an independent
/// complex Gaussian of power `L(f_k)|G(f_k)|² · B · n`, the negative bins are
/// the Hermitian mirror and the DC and sub-`f_min` bins are zeroed, so that
/// the inverse DFT is real with variance `2·∫_{f_min}^{B/2} L|G|² df`.
/// Bit-identical for identical `(params, grid, n_samples, seed)`.
pub fn synthesize_phase_trace(
    params: &PsdParams,
    grid: &FrequencyGrid,
    n_samples: usize,
    seed: u64,
    shaping: Option<&dyn Fn(f64) -> Complex64>,
) -> Result<PhaseTrace> {
    params.validate()?;
    if n_samples < 2 {
        return Err(Error::domain("synthesize_phase_trace: need n_samples >= 2"));
    }
    if n_samples != grid.n_bins {
        return Err(Error::domain(
            "synthesize_phase_trace: n_samples inconsistent with grid",
        ));
    }
    let n = n_samples;
    let bandwidth = grid.bandwidth();
    let df = bandwidth / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];

    // Positive-frequency bins; k = n/2 (Nyquist, even n) is left at zero.
    let half = n.div_ceil(2);
    for (k, bin) in spectrum.iter_mut().enumerate().take(half).skip(1) {
        // Two draws per bin regardless of masking keeps the stream alignment
        // independent of f_min.
        let g_re: f64 = rng.sample(StandardNormal);
        let g_im: f64 = rng.sample(StandardNormal);
        let f = k as f64 * df;
        if f < grid.f_min {
            continue;
        }
        let mut target = psd_eval(params, f)?;
        if let Some(shape) = shaping {
            target *= shape(f).norm_sqr();
        }
        let amp = (target * bandwidth * n as f64 / 2.0).sqrt();
        *bin = Complex64::new(amp * g_re, amp * g_im);
    }
    // Hermitian symmetry makes the time series real.
    for k in 1..half {
        spectrum[n - k] = spectrum[k].conj();
    }

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    ifft.process(&mut spectrum);

    let scale = 1.0 / n as f64;
    let samples = spectrum.iter().map(|c| c.re * scale).collect();
    Ok(PhaseTrace {
        samples,
        sample_rate: bandwidth,
        seed,
    })
}

/// Averaged-periodogram PSD estimate of a trace.
#[derive(Debug, Clone)]
pub struct PsdEstimate {
    /// Bin frequencies `0..=B/2`.
    pub freqs: Vec<f64>,
    /// Two-sided density values at those frequencies (W/Hz).
    pub psd: Vec<f64>,
}

impl PsdEstimate {
    /// Trapezoid integral of the two-sided estimate over `(-B/2, B/2)`,
    /// i.e. twice the integral over the positive half.
    pub fn integral(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.freqs.len() {
            acc += 0.5 * (self.psd[i] + self.psd[i - 1]) * (self.freqs[i] - self.freqs[i - 1]);
        }
        2.0 * acc
    }

    /// Serialize as two-column `(Hz, W/Hz)` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,psd_w_per_hz\n");
        for (f, p) in self.freqs.iter().zip(&self.psd) {
            out.push_str(&format!("{f},{p}\n"));
        }
        out
    }
}

/// Welch estimate of the two-sided PSD: Hann-windowed segments with 50%
/// overlap, averaged periodograms, normalized so that the estimate integrates
/// to the trace variance (within estimator tolerance).
pub fn estimate_psd(trace: &PhaseTrace, segment_length: usize) -> Result<PsdEstimate> {
    if trace.samples.is_empty() {
        return Err(Error::domain("estimate_psd: empty trace"));
    }
    if segment_length < 2 || segment_length > trace.samples.len() {
        return Err(Error::domain(
            "estimate_psd: segment_length must be in 2..=trace length",
        ));
    }
    let nseg = segment_length;
    let hop = (nseg / 2).max(1);
    let window: Vec<f64> = (0..nseg)
        .map(|i| {
            let x = std::f64::consts::PI * i as f64 / nseg as f64;
            x.sin() * x.sin()
        })
        .collect();
    let window_power = window.iter().map(|w| w * w).sum::<f64>() / nseg as f64;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nseg);

    let n_out = nseg / 2 + 1;
    let mut acc = vec![0.0; n_out];
    let mut n_segments = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); nseg];
    let mut start = 0;
    while start + nseg <= trace.samples.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(trace.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        n_segments += 1;
        start += hop;
    }

    // |X_k|^2 / (n * B * U) turns the windowed periodogram into a two-sided
    // density whose sum over all n bins times B/n is the variance.
    let norm = 1.0 / (n_segments as f64 * nseg as f64 * trace.sample_rate * window_power);
    let df = trace.sample_rate / nseg as f64;
    let freqs = (0..n_out).map(|k| k as f64 * df).collect();
    let psd = acc.iter().map(|a| a * norm).collect();
    Ok(PsdEstimate { freqs, psd })
}
