//! Line-of-sight channels on a uniform linear array.
//!
//! A user arriving at spatial frequency `ω = (2πd/λ)sinθ` produces the
//! steering vector `g·(1, e^{jω}, …, e^{j(N-1)ω})`. Users are dropped
//! uniformly in spatial frequency with a minimum pairwise circular distance
//! (closer pairs are assumed scheduled onto orthogonal time/frequency
//! resources), and the channel matrix is viewed as a vertical stack of
//! per-tile blocks.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Array geometry and user population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialConfig {
    pub n_antennas: usize,
    pub tile_size: usize,
    pub n_users: usize,
    /// Element spacing in wavelengths (enters only through ω's definition).
    pub d_over_lambda: f64,
    /// Minimum pairwise circular distance in spatial frequency; `None` means
    /// the default `2π/N`.
    pub min_separation: Option<f64>,
    /// Common complex gain (perfect power control).
    pub gain: Complex64,
}

impl SpatialConfig {
    pub fn new(n_antennas: usize, tile_size: usize, n_users: usize) -> Result<Self> {
        let cfg = SpatialConfig {
            n_antennas,
            tile_size,
            n_users,
            d_over_lambda: 0.5,
            min_separation: None,
            gain: Complex64::new(1.0, 0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 256 antennas in 16 tiles of 16, quarter load (64 users).
    pub fn nominal() -> Self {
        SpatialConfig::new(256, 16, 64).unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.tile_size == 0 {
            return Err(Error::config("n_antennas", "array and tile must be nonempty"));
        }
        if self.n_antennas % self.tile_size != 0 {
            return Err(Error::config(
                "tile_size",
                format!(
                    "N not divisible by N0 ({} % {} != 0)",
                    self.n_antennas, self.tile_size
                ),
            ));
        }
        if self.n_users == 0 {
            return Err(Error::config("n_users", "need at least one user"));
        }
        if self.n_users > self.n_antennas {
            return Err(Error::config(
                "n_users",
                format!("K <= N violated ({} > {})", self.n_users, self.n_antennas),
            ));
        }
        let sep = self.min_separation();
        if sep < 0.0 || !sep.is_finite() {
            return Err(Error::config("min_separation", "must be finite and >= 0"));
        }
        if self.n_users as f64 * sep > TAU * (1.0 + 1e-12) {
            return Err(Error::config(
                "min_separation",
                "K * min_separation exceeds 2π: no feasible placement",
            ));
        }
        Ok(())
    }

    pub fn n_tiles(&self) -> usize {
        self.n_antennas / self.tile_size
    }

    /// Load factor β = K/N.
    pub fn load_factor(&self) -> f64 {
        self.n_users as f64 / self.n_antennas as f64
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
            .unwrap_or(TAU / self.n_antennas as f64)
    }
}

/// Steering vector of an `n`-element array: element `m` is `g·e^{jmω}`.
pub fn steering_vector(n: usize, omega: f64, gain: Complex64) -> Result<Vec<Complex64>> {
    if n == 0 {
        return Err(Error::domain("steering_vector: empty array"));
    }
    Ok((0..n)
        .map(|m| gain * Complex64::from_polar(1.0, m as f64 * omega))
        .collect())
}

/// Magnitude of the normalized Dirichlet kernel
/// `κ_n(Δω) = |sin(nΔω/2) / (n sin(Δω/2))|`, with the removable singularity
/// at multiples of 2π evaluated as 1.
pub fn dirichlet_kernel(n: usize, delta_omega: f64) -> f64 {
    let half = delta_omega / 2.0;
    let den = half.sin();
    if den.abs() < 1e-12 {
        return 1.0;
    }
    ((n as f64 * half).sin() / (n as f64 * den)).abs()
}

fn wrap_to_pi(x: f64) -> f64 {
    // into (-pi, pi]
    let y = x.rem_euclid(TAU);
    if y > std::f64::consts::PI {
        y - TAU
    } else {
        y
    }
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Draw `K` spatial frequencies uniform on `(-π, π]` conditioned on pairwise
/// circular distance at least the configured minimum, by sequential rejection
/// with a capped attempt budget. When `K·min_sep = 2π` only the rigid uniform
/// grid (up to a common rotation) is feasible and it is returned directly.
pub fn sample_spatial_frequencies(cfg: &SpatialConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let k = cfg.n_users;
    let sep = cfg.min_separation();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if k as f64 * sep >= TAU * (1.0 - 1e-9) {
        // pigeonhole: gaps are forced to exactly 2π/K
        let offset = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        return Ok((0..k)
            .map(|i| wrap_to_pi(offset + i as f64 * TAU / k as f64))
            .collect());
    }

    const MAX_ATTEMPTS_PER_USER: usize = 10_000;
    let mut accepted: Vec<f64> = Vec::with_capacity(k);
    for user in 0..k {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS_PER_USER {
            let cand = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            if accepted
                .iter()
                .all(|&o| circular_distance(cand, o) >= sep)
            {
                accepted.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SamplingBudget(format!(
                "could not place user {user} of {k} with min separation {sep:.3e} \
                 after {MAX_ATTEMPTS_PER_USER} attempts"
            )));
        }
    }
    Ok(accepted)
}

/// `N×K` line-of-sight channel with its per-tile block view.
#[derive(Debug, Clone)]
pub struct ChannelMatrix {
    entries: Array2<Complex64>,
    spatial_frequencies: Vec<f64>,
    tile_size: usize,
}

impl ChannelMatrix {
    pub fn entries(&self) -> &Array2<Complex64> {
        &self.entries
    }

    pub fn spatial_frequencies(&self) -> &[f64] {
        &self.spatial_frequencies
    }

    pub fn n_antennas(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.entries.ncols()
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn n_tiles(&self) -> usize {
        self.entries.nrows() / self.tile_size
    }

    /// Rows `i·N0 .. (i+1)·N0` of the stacked channel.
    pub fn tile_block(&self, i: usize) -> ArrayView2<'_, Complex64> {
        let n0 = self.tile_size;
        self.entries.slice(s![i * n0..(i + 1) * n0, ..])
    }
}

/// Assemble the channel matrix for a set of spatial frequencies; column `k`
/// is the steering vector of `omegas[k]`.
pub fn build_channel(cfg: &SpatialConfig, omegas: &[f64]) -> Result<ChannelMatrix> {
    cfg.validate()?;
    if omegas.len() != cfg.n_users {
        return Err(Error::domain(format!(
            "build_channel: got {} spatial frequencies for {} users",
            omegas.len(),
            cfg.n_users
        )));
    }
    let n = cfg.n_antennas;
    let mut entries = Array2::zeros((n, cfg.n_users));
    for (k, &omega) in omegas.iter().enumerate() {
        let col = steering_vector(n, omega, cfg.gain)?;
        for (m, v) in col.into_iter().enumerate() {
            entries[[m, k]] = v;
        }
    }
    Ok(ChannelMatrix {
        entries,
        spatial_frequencies: omegas.to_vec(),
        tile_size: cfg.tile_size,
    })
}

/// Stratified Monte Carlo estimate of `E|κ_n(Δω)|²` under Δω uniform on
/// `(-π, π]`.
///
/// With `min_separation` set, draws closer than the separation contribute
/// zero: such user pairs are orthogonalized in time or frequency and produce
/// no spatial cross-talk. One jittered sample per equal-width stratum keeps
/// the estimator error far below the Monte Carlo noise of independent draws.
pub fn mean_square_crosscorrelation(
    n: usize,
    min_separation: Option<f64>,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("mean_square_crosscorrelation: need n >= 2"));
    }
    if n_pairs == 0 {
        return Err(Error::domain("mean_square_crosscorrelation: need n_pairs > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for i in 0..n_pairs {
        let u: f64 = rng.gen();
        let dw = -std::f64::consts::PI + TAU * (i as f64 + u) / n_pairs as f64;
        if let Some(sep) = min_separation {
            if circular_distance(dw, 0.0) < sep {
                continue;
            }
        }
        let k = dirichlet_kernel(n, dw);
        acc += k * k;
    }
    Ok(acc / n_pairs as f64)
}
