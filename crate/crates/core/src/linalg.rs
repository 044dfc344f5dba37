//! Small dense linear-algebra helpers on row-major `Vec<f64>` storage.

use crate::error::{Result, ScudError};
use crate::tolerances::TOLERANCES;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `v^T M` for a row-major `n x n` matrix.
pub fn row_times(v: &[f64], m: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &m[i * n..(i + 1) * n];
        for (o, &mij) in out.iter_mut().zip(row) {
            *o += vi * mij;
        }
    }
    out
}

/// `M v` for a row-major `n x n` matrix.
pub fn times_column(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// `A B` for row-major `n x n` matrices.
pub fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
    out
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Normalises a non-negative vector in place; returns the pre-normalisation sum.
pub fn normalize(v: &mut [f64]) -> f64 {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
    total
}

/// Eigendecomposition of a reversible stochastic matrix through the symmetric
/// similarity `D^{1/2} K D^{-1/2}`, with `D = diag(pi)`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    n: usize,
    sqrt_mass: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Row-major `n x n`; column `k` is the k-th orthonormal eigenvector.
    eigenvectors: Vec<f64>,
}

impl SpectralDecomposition {
    /// Returns `None` when `kernel` is not reversible with respect to `pi`
    /// or `pi` has mass too small for the similarity transform.
    pub fn try_new(kernel: &[f64], pi: &[f64], n: usize) -> Option<Self> {
        if pi.iter().any(|&p| p < TOLERANCES.spectral_min_mass) {
            return None;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let forward = pi[i] * kernel[i * n + j];
                let backward = pi[j] * kernel[j * n + i];
                if (forward - backward).abs() > TOLERANCES.reversibility {
                    return None;
                }
            }
        }
        let sqrt_mass: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
        let sym = DMatrix::from_fn(n, n, |i, j| {
            let a = sqrt_mass[i] * kernel[i * n + j] / sqrt_mass[j];
            let b = sqrt_mass[j] * kernel[j * n + i] / sqrt_mass[i];
            0.5 * (a + b)
        });
        let eig = SymmetricEigen::new(sym);
        let eigenvalues = eig.eigenvalues.iter().copied().collect();
        let mut eigenvectors = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                eigenvectors[i * n + k] = eig.eigenvectors[(i, k)];
            }
        }
        Some(Self { n, sqrt_mass, eigenvalues, eigenvectors })
    }

    /// `v^T K^s`.
    pub fn power_left(&self, s: u64, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let w: Vec<f64> = v.iter().zip(&self.sqrt_mass).map(|(x, m)| x / m).collect();
        let coeffs = self.project_scaled(&w, s);
        (0..n)
            .map(|j| {
                let u = &self.eigenvectors[j * n..(j + 1) * n];
                u.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>() * self.sqrt_mass[j]
            })
            .collect()
    }

    /// `K^s v`.
    pub fn power_right(&self, s: u64, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let w: Vec<f64> = v.iter().zip(&self.sqrt_mass).map(|(x, m)| x * m).collect();
        let coeffs = self.project_scaled(&w, s);
        (0..n)
            .map(|i| {
                let u = &self.eigenvectors[i * n..(i + 1) * n];
                u.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>() / self.sqrt_mass[i]
            })
            .collect()
    }

    /// `Lambda^s U^T w`.
    fn project_scaled(&self, w: &[f64], s: u64) -> Vec<f64> {
        let n = self.n;
        let mut coeffs = vec![0.0; n];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let u = &self.eigenvectors[i * n..(i + 1) * n];
            for (c, &uik) in coeffs.iter_mut().zip(u) {
                *c += uik * wi;
            }
        }
        for (c, &lambda) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *c *= power_i(lambda, s);
        }
        coeffs
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

fn power_i(x: f64, s: u64) -> f64 {
    if s <= i32::MAX as u64 {
        x.powi(s as i32)
    } else {
        x.powf(s as f64)
    }
}

/// Solves `p^T L = 0`, `sum p = 1` for a dense generator by LU.
pub fn stationary_dense(generator: &[f64], n: usize) -> Result<Vec<f64>> {
    // Rows of the system are columns of L; the last equation is replaced by
    // the normalisation constraint.
    let mut a = DMatrix::from_fn(n, n, |i, j| generator[j * n + i]);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ScudError::Degenerate("generator has no unique stationary distribution".into()))?;
    let mut p: Vec<f64> = sol.iter().map(|&x| if x < 0.0 && x > -1e-12 { 0.0 } else { x }).collect();
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(ScudError::Degenerate("stationary solve produced negative or non-finite mass".into()));
    }
    normalize(&mut p);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_matches_repeated_products() {
        // Reversible 3-state chain with non-uniform stationary law.
        let pi = [0.5, 0.3, 0.2];
        let flow = [[0.0, 0.06, 0.04], [0.06, 0.0, 0.03], [0.04, 0.03, 0.0]];
        let n = 3;
        let mut k = vec![0.0; 9];
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j {
                    k[i * n + j] = flow[i][j] / pi[i];
                    off += k[i * n + j];
                }
            }
            k[i * n + i] = 1.0 - off;
        }
        let spec = SpectralDecomposition::try_new(&k, &pi, n).expect("reversible");
        let v = [0.2, -0.7, 1.3];
        let mut left = v.to_vec();
        let mut right = v.to_vec();
        for s in 0..20u64 {
            assert!(max_abs_diff(&spec.power_left(s, &v), &left) < 1e-13);
            assert!(max_abs_diff(&spec.power_right(s, &v), &right) < 1e-13);
            left = row_times(&left, &k, n);
            right = times_column(&k, &right, n);
        }
    }

    #[test]
    fn non_reversible_kernel_is_refused() {
        // Cyclic drift 0 -> 1 -> 2 -> 0 violates detailed balance.
        let k = [0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 0.5];
        let pi = [1.0 / 3.0; 3];
        assert!(SpectralDecomposition::try_new(&k, &pi, 3).is_none());
    }

    #[test]
    fn stationary_of_two_state_chain() {
        let l = [-2.0, 2.0, 1.0, -1.0];
        let p = stationary_dense(&l, 2).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }
}
