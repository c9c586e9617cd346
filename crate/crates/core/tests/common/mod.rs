#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walkfield::GeneratorMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A directed ring through all nodes plus random extra arcs, rates in
/// `[0.2, 3)`. Always irreducible.
pub fn random_irreducible(m: usize, extra_p: f64, r: &mut ChaCha8Rng) -> GeneratorMatrix {
    let mut perm: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    let mut rates = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for k in 0..m {
        let (i, j) = (perm[k], perm[(k + 1) % m]);
        if i != j && seen.insert((i, j)) {
            rates.push(((i, j), r.random_range(0.2..3.0)));
        }
    }
    for i in 0..m {
        for j in 0..m {
            if i != j && !seen.contains(&(i, j)) && r.random::<f64>() < extra_p {
                seen.insert((i, j));
                rates.push(((i, j), r.random_range(0.2..3.0)));
            }
        }
    }
    GeneratorMatrix::from_rates(m, rates).unwrap()
}

/// Random symmetric-rate generator on a connected graph.
pub fn random_symmetric(m: usize, extra_p: f64, r: &mut ChaCha8Rng) -> GeneratorMatrix {
    let mut rates = Vec::new();
    for i in 1..m {
        let j = r.random_range(0..i);
        let a = r.random_range(0.2..3.0);
        rates.push(((i, j), a));
        rates.push(((j, i), a));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let linked = rates.iter().any(|&((a, b), _)| (a, b) == (i, j) || (a, b) == (j, i));
            if !linked && r.random::<f64>() < extra_p {
                let a = r.random_range(0.2..3.0);
                rates.push(((i, j), a));
                rates.push(((j, i), a));
            }
        }
    }
    GeneratorMatrix::from_rates(m, rates).unwrap()
}

/// Dense generator built entry by entry from the rate list.
pub fn dense_q(q: &GeneratorMatrix) -> DMatrix<f64> {
    let m = q.dim();
    let mut d = DMatrix::zeros(m, m);
    for &(i, j, a) in q.rates() {
        d[(i, j)] -= a;
        d[(i, i)] += a;
    }
    d
}

/// Orthonormal basis of `{x : 1'x = 0}` as the columns of an `M × (M-1)` matrix.
pub fn sum_zero_basis(m: usize) -> DMatrix<f64> {
    let c = DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    let eig = SymmetricEigen::new(c);
    let cols: Vec<DVector<f64>> = (0..m)
        .filter(|&k| eig.eigenvalues[k] > 0.5)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    assert_eq!(cols.len(), m - 1);
    DMatrix::from_columns(&cols)
}

/// Covariance of the field on the sum-zero subspace: `π = U A⁻¹ U'γ` with
/// `A = U'Q'U`, so `Σ = σ² U A⁻¹ A⁻ᵀ U'`.
pub fn field_covariance(q: &GeneratorMatrix, sigma: f64) -> DMatrix<f64> {
    let qd = dense_q(q);
    let u = sum_zero_basis(q.dim());
    let a = u.transpose() * qd.transpose() * &u;
    let a_inv = a.try_inverse().expect("Q' invertible on the sum-zero subspace");
    &u * &a_inv * a_inv.transpose() * u.transpose() * (sigma * sigma)
}

/// Gaussian log-density on the sum-zero subspace in orthonormal coordinates,
/// from an eigendecomposition of the reduced covariance.
pub fn field_log_density(q: &GeneratorMatrix, sigma: f64, pi: &[f64]) -> f64 {
    let u = sum_zero_basis(q.dim());
    let s = u.transpose() * field_covariance(q, sigma) * &u;
    let eig = SymmetricEigen::new(s);
    let y = u.transpose() * DVector::from_column_slice(pi);
    let coords = eig.eigenvectors.transpose() * y;
    let k = coords.len() as f64;
    let mut out = -0.5 * k * (2.0 * std::f64::consts::PI).ln();
    for (l, c) in eig.eigenvalues.iter().zip(coords.iter()) {
        out -= 0.5 * l.ln() + 0.5 * c * c / l;
    }
    out
}

/// The solution of `Q'π = r - mean(r)`, `1'π = 0` by least squares in the
/// subspace basis.
pub fn constrained_solve_oracle(q: &GeneratorMatrix, r: &[f64]) -> Vec<f64> {
    let m = q.dim();
    let mean = r.iter().sum::<f64>() / m as f64;
    let rt = DVector::from_iterator(m, r.iter().map(|v| v - mean));
    let u = sum_zero_basis(m);
    let a = dense_q(q).transpose() * &u;
    let y = a.svd(true, true).solve(&rt, 1e-14).unwrap();
    (u * y).iter().copied().collect()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}
