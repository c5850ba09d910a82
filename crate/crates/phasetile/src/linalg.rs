//! Dense complex linear algebra for the receiver solves.
//!
//! The LMMSE normal matrix `HHᴴ + σ²I (+ C_z)` is Hermitian positive
//! definite, so a Cholesky factorization with forward/back substitution is
//! used instead of explicit inversion.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::{Error, Result};

/// Conjugate transpose.
pub fn hermitian(a: &ArrayView2<'_, Complex64>) -> Array2<Complex64> {
    let (m, n) = a.dim();
    Array2::from_shape_fn((n, m), |(i, j)| a[[j, i]].conj())
}

/// Lower-triangular Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(a: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Linalg("cholesky: matrix must be square".into()));
    }
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Linalg(format!(
                "cholesky: matrix not positive definite at pivot {j} (d = {d})"
            )));
        }
        let djj = d.sqrt();
        l[[j, j]] = Complex64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solve `A X = B` for Hermitian positive definite `A` via Cholesky.
pub fn hermitian_solve(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Linalg("hermitian_solve: dimension mismatch".into()));
    }
    let l = cholesky(a)?;
    let k = b.ncols();
    let mut x = b.clone();
    // forward: L Y = B
    for col in 0..k {
        for i in 0..n {
            let mut s = x[[i, col]];
            for j in 0..i {
                s -= l[[i, j]] * x[[j, col]];
            }
            x[[i, col]] = s / l[[i, i]].re;
        }
    }
    // back: L^H X = Y
    for col in 0..k {
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for j in (i + 1)..n {
                s -= l[[j, i]].conj() * x[[j, col]];
            }
            x[[i, col]] = s / l[[i, i]].re;
        }
    }
    Ok(x)
}

/// Frobenius norm.
pub fn fro_norm(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hpd(n: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((n, n), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let mh = hermitian(&m.view());
        // M Mᴴ + n·I is comfortably positive definite
        mh.dot(&m) + Array2::from_diag_elem(n, Complex64::new(n as f64, 0.0))
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = random_hpd(24, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x_true = Array2::from_shape_fn((24, 5), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let b = a.dot(&x_true);
        let x = hermitian_solve(&a, &b).unwrap();
        let err = fro_norm(&(&x - &x_true)) / fro_norm(&x_true);
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = Array2::<Complex64>::zeros((2, 2));
        a[[0, 0]] = Complex64::new(1.0, 0.0);
        a[[1, 1]] = Complex64::new(-1.0, 0.0);
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let a = random_hpd(16, 9);
        let l = cholesky(&a).unwrap();
        let rec = l.dot(&hermitian(&l.view()));
        assert!(fro_norm(&(&rec - &a)) / fro_norm(&a) < 1e-13);
    }
}
