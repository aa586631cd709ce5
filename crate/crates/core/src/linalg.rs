//! Small dense helpers. Fixed-size Cholesky for the covariance factors and a
//! thin wrapper over nalgebra for the normal-equation solves.

use nalgebra::{DMatrix, DVector};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when the matrix is asymmetric or not positive definite.
pub fn cholesky<const N: usize>(m: &[[f64; N]; N]) -> Option<[[f64; N]; N]> {
    for i in 0..N {
        for j in 0..i {
            let scale = m[i][j].abs().max(m[j][i].abs()).max(1.0);
            if (m[i][j] - m[j][i]).abs() > 1e-12 * scale {
                return None;
            }
        }
    }
    let mut l = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// `l * v` for a lower-triangular `l`.
#[inline]
pub fn lower_mul<const N: usize>(l: &[[f64; N]; N], v: &[f64; N]) -> [f64; N] {
    let mut out = [0.0; N];
    for i in 0..N {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i][k] * v[k];
        }
        out[i] = s;
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `a x = b` for symmetric positive definite `a`; `None` if `a` is not PD.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}
