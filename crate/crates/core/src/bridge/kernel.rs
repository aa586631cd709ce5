//! Gaussian instrument kernels and their Gram matrices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Dense symmetric Gram matrix, row-major.
#[derive(Debug, Clone)]
pub struct Gram {
    n: usize,
    k: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Gram {
    /// k(u, v) = exp(-|u - v|^2 / (2 l^2)) over `points` (row-major, `dim` columns).
    pub fn gaussian(points: &[f64], dim: usize, lengthscale: f64) -> Gram {
        assert!(lengthscale > 0.0, "kernel lengthscale must be positive");
        let n = points.len() / dim;
        let scale = -0.5 / (lengthscale * lengthscale);
        let mut k = vec![0.0; n * n];
        k.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            let pi = &points[i * dim..(i + 1) * dim];
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = (scale * sq_dist(pi, &points[j * dim..(j + 1) * dim])).exp();
            }
        });
        Gram { n, k }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }

    pub fn diag(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.get(i, i))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.k[i * self.n..(i + 1) * self.n]
    }

    /// K v.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.k.par_chunks(self.n.max(1)).map(|row| dot(row, v)).collect()
    }

    /// K M for a row-major n x p matrix M.
    pub fn matmat(&self, m: &[f64], p: usize) -> Vec<f64> {
        assert_eq!(m.len(), self.n * p);
        let rows: Vec<Vec<f64>> = self
            .k
            .par_chunks(self.n.max(1))
            .map(|row| {
                let mut acc = vec![0.0; p];
                for (j, kij) in row.iter().enumerate() {
                    let mj = &m[j * p..(j + 1) * p];
                    for c in 0..p {
                        acc[c] += kij * mj[c];
                    }
                }
                acc
            })
            .collect();
        rows.concat()
    }
}

/// Median of the pairwise Euclidean distances between distinct rows.
pub fn median_pairwise_distance(points: &[f64], dim: usize) -> Result<f64> {
    let n = points.len() / dim;
    if n < 2 {
        return Err(Error::InsufficientData("median heuristic needs at least two points".into()));
    }
    let mut d: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pi = &points[i * dim..(i + 1) * dim];
            (i + 1..n).map(move |j| sq_dist(pi, &points[j * dim..(j + 1) * dim]))
        })
        .collect();
    let m = d.len();
    let (_, hi, _) = d.select_nth_unstable_by(m / 2, f64::total_cmp);
    let hi = *hi;
    let med = if m % 2 == 1 {
        hi.sqrt()
    } else {
        let lo = d[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo.sqrt() + hi.sqrt())
    };
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::InsufficientData("all instrument points coincide".into()))
    }
}
