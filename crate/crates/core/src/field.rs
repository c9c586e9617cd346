//! The intrinsic field `π ~ N(0, σ²(QQ')⁻)` with `1'π = 0`: the stationary
//! law of `dz/dt = -Q'z + γ` driven by time-constant white noise `γ`.
//!
//! All solves against `Q'` go through the bordered system
//! `[[Q', 1], [1', 0]]`, which restricts the solution to the sum-zero
//! subspace exactly (no diagonal jitter), so normalizing constants stay
//! exact when `Q` is a parameter under inference.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, LU};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_irreducible, GeneratorMatrix};
use crate::rng;
use crate::sparse::CsrMatrix;

/// Relative eigenvalue cutoff below which an eigenvalue counts as zero.
pub const NULL_EIGEN_TOL: f64 = 1e-10;

/// `P = QQ'` as a sparse product, symmetrized by averaging with its transpose.
pub fn stationary_precision(q: &GeneratorMatrix) -> CsrMatrix {
    let qs = q.to_csr();
    let p = qs.matmul(&qs.transpose());
    p.average(&p.transpose())
}

/// Log of the product of the nonzero eigenvalues of a PSD matrix with a
/// one-dimensional null space.
pub fn log_pseudo_det(p: &CsrMatrix) -> Result<f64> {
    log_pseudo_det_dense(p.to_dense())
}

pub fn log_pseudo_det_dense(p: DMatrix<f64>) -> Result<f64> {
    let m = p.nrows();
    if m == 1 {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(p).eigenvalues;
    let top = eig.amax();
    let cutoff = NULL_EIGEN_TOL * top;
    let zeros = eig.iter().filter(|l| l.abs() <= cutoff).count();
    if zeros > 1 {
        return Err(Error::RankDeficient { zeros });
    }
    if zeros == 0 {
        return Err(Error::Precondition(
            "log_pseudo_det expects exactly one zero eigenvalue, found none".into(),
        ));
    }
    let mut values: Vec<f64> = eig.iter().copied().collect();
    values.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let logs: f64 = values[1..].iter().map(|l| l.ln()).sum();
    if !logs.is_finite() {
        return Err(Error::NonFinite("log pseudo-determinant".into()));
    }
    Ok(logs)
}

/// `log det(P + 11'/M)`: the normalizer of `exp(-x'Px/2)` on the sum-zero
/// subspace, up to `(2π)^{(M-1)/2}`.
///
/// Equals [`log_pseudo_det`] when `P·1 = 0`. When the null vector `ψ` of `P`
/// is not constant it exceeds it by `2·log(|1'ψ| / (√M·‖ψ‖))`.
pub fn log_subspace_det(p: &DMatrix<f64>) -> Result<f64> {
    let m = p.nrows();
    let shifted = p.add_scalar(1.0 / m as f64);
    let chol = Cholesky::new(shifted)
        .ok_or_else(|| Error::Singular("P + 11'/M is not positive definite".into()))?;
    let ld = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    if !ld.is_finite() {
        return Err(Error::NonFinite("log det(P + 11'/M)".into()));
    }
    Ok(ld)
}

/// Factorized bordered system `[[Q', 1], [1', 0]]`.
#[derive(Debug, Clone)]
pub struct ConstrainedSolver {
    dim: usize,
    lu: LU<f64, Dyn, Dyn>,
}

impl ConstrainedSolver {
    pub fn new(q: &GeneratorMatrix) -> Result<Self> {
        if !check_irreducible(q) {
            return Err(Error::Singular("bordered system [[Q', 1], [1', 0]]".into()));
        }
        let m = q.dim();
        let mut a = DMatrix::zeros(m + 1, m + 1);
        a.view_mut((0, 0), (m, m)).copy_from(&q.to_dense().transpose());
        for i in 0..m {
            a[(i, m)] = 1.0;
            a[(m, i)] = 1.0;
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("bordered system [[Q', 1], [1', 0]]".into()));
        }
        Ok(ConstrainedSolver { dim: m, lu })
    }

    /// The unique `π` with `Q'π = r - mean(r)` and `1'π = 0`.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim;
        assert_eq!(r.len(), m);
        let mean = r.iter().sum::<f64>() / m as f64;
        let mut rhs = DVector::zeros(m + 1);
        for i in 0..m {
            rhs[i] = r[i] - mean;
        }
        let x = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("bordered system [[Q', 1], [1', 0]]".into()))?;
        let pi: Vec<f64> = x.iter().take(m).copied().collect();
        if pi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constrained solve".into()));
        }
        Ok(pi)
    }
}

pub fn constrained_solve(q: &GeneratorMatrix, r: &[f64]) -> Result<Vec<f64>> {
    ConstrainedSolver::new(q)?.solve(r)
}

/// The stationary field of a generator with driving-noise scale `sigma`.
#[derive(Debug, Clone)]
pub struct IntrinsicField {
    generator: GeneratorMatrix,
    sigma: f64,
    precision: CsrMatrix,
    log_pdet: f64,
    log_norm: f64,
    solver: ConstrainedSolver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub pi: Vec<f64>,
    pub seed: u64,
}

impl IntrinsicField {
    pub fn new(generator: GeneratorMatrix, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        let solver = ConstrainedSolver::new(&generator)?;
        let precision = stationary_precision(&generator);
        let dense = precision.to_dense();
        let log_norm = log_subspace_det(&dense)?;
        let log_pdet = log_pseudo_det_dense(dense)?;
        Ok(IntrinsicField {
            generator,
            sigma,
            precision,
            log_pdet,
            log_norm,
            solver,
        })
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.generator
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn precision(&self) -> &CsrMatrix {
        &self.precision
    }

    pub fn log_pseudo_det(&self) -> f64 {
        self.log_pdet
    }

    /// `log det(QQ' + 11'/M)`, the determinant term of [`log_density`](Self::log_density).
    pub fn log_subspace_det(&self) -> f64 {
        self.log_norm
    }

    pub fn solver(&self) -> &ConstrainedSolver {
        &self.solver
    }

    pub fn sample(&self, seed: u64) -> Result<FieldSample> {
        let mut rng = rng::from_seed(seed);
        Ok(FieldSample {
            pi: self.sample_with(&mut rng)?,
            seed,
        })
    }

    /// Draw `γ ~ N(0, σ²I)`, condition on `1'γ = 0` by centering, and solve
    /// `Q'π = γ` on the sum-zero subspace.
    pub fn sample_with(&self, rng: &mut rng::Rng) -> Result<Vec<f64>> {
        let gamma: Vec<f64> = (0..self.dim())
            .map(|_| self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.solver.solve(&gamma)
    }

    /// Density on the sum-zero subspace:
    /// `-(M-1)/2·log(2πσ²) + ½·log det(QQ' + 11'/M) - π'QQ'π / (2σ²)`.
    ///
    /// The determinant term is `½·logpdet(QQ')` whenever the columns of `Q`
    /// sum to zero (symmetric rates, cycles). Otherwise the null vector of
    /// `QQ'` is the walk's stationary distribution rather than `1`, and the
    /// shifted determinant carries the extra angle factor.
    pub fn log_density(&self, pi: &[f64]) -> Result<f64> {
        let m = self.dim();
        if pi.len() != m {
            return Err(Error::InvalidData(format!("field has {m} nodes, got {}", pi.len())));
        }
        let sum: f64 = pi.iter().sum();
        let scale = pi.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if sum.abs() > 1e-8 * scale {
            return Err(Error::ConstraintViolation { sum });
        }
        let quad = self.precision.quadratic_form(pi);
        if !quad.is_finite() {
            return Err(Error::NonFinite("quadratic form π'QQ'π".into()));
        }
        let s2 = self.sigma * self.sigma;
        Ok(-0.5 * (m as f64 - 1.0) * (2.0 * PI * s2).ln() + 0.5 * self.log_norm - quad / (2.0 * s2))
    }
}

pub fn sample_field(field: &IntrinsicField, seed: u64) -> Result<FieldSample> {
    field.sample(seed)
}

pub fn log_density(pi: &[f64], field: &IntrinsicField) -> Result<f64> {
    field.log_density(pi)
}

/// Gaussian with precision `A` (PSD, null space at most `span(1)`) and
/// linear term `b`, conditioned on `1'x = 0`.
///
/// Adds `11'/M` to `A` (invisible on the constraint subspace), draws from the
/// resulting proper Gaussian and applies the conditioning-by-kriging
/// correction `x - A⁻¹1 (1'x) / (1'A⁻¹1)`.
#[derive(Debug, Clone)]
pub struct ConstrainedGaussian {
    chol: Cholesky<f64, Dyn>,
    a_inv_one: DVector<f64>,
    one_a_inv_one: f64,
}

impl ConstrainedGaussian {
    pub fn new(mut precision: DMatrix<f64>) -> Result<Self> {
        let m = precision.nrows();
        precision.add_scalar_mut(1.0 / m as f64);
        let chol = Cholesky::new(precision)
            .ok_or_else(|| Error::NotPositiveDefinite("constrained full conditional".into()))?;
        let a_inv_one = chol.solve(&DVector::from_element(m, 1.0));
        let one_a_inv_one = a_inv_one.sum();
        Ok(ConstrainedGaussian {
            chol,
            a_inv_one,
            one_a_inv_one,
        })
    }

    pub fn dim(&self) -> usize {
        self.a_inv_one.len()
    }

    fn project(&self, mut x: DVector<f64>) -> Vec<f64> {
        let s = x.sum();
        x.axpy(-s / self.one_a_inv_one, &self.a_inv_one, 1.0);
        x.iter().copied().collect()
    }

    /// Constrained conditional mean.
    pub fn mean(&self, linear: &[f64]) -> Vec<f64> {
        self.project(self.chol.solve(&DVector::from_column_slice(linear)))
    }

    pub fn sample(&self, linear: &[f64], rng: &mut rng::Rng) -> Vec<f64> {
        let m = self.dim();
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        let mean = self.chol.solve(&DVector::from_column_slice(linear));
        self.project(mean + noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym2() -> GeneratorMatrix {
        GeneratorMatrix::from_rates(2, [((0, 1), 1.0), ((1, 0), 1.0)]).unwrap()
    }

    fn cycle3() -> GeneratorMatrix {
        GeneratorMatrix::from_rates(3, [((0, 1), 1.0), ((1, 2), 1.0), ((2, 0), 1.0)]).unwrap()
    }

    #[test]
    fn precision_examples() {
        let p = stationary_precision(&sym2()).to_dense();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
        let p = stationary_precision(&cycle3()).to_dense();
        let expected =
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]);
        assert_eq!(p, expected);
    }

    #[test]
    fn pseudo_det_examples() {
        let ld = log_pseudo_det(&stationary_precision(&sym2())).unwrap();
        assert!((ld - 4f64.ln()).abs() < 1e-12);
        let ld = log_pseudo_det(&stationary_precision(&cycle3())).unwrap();
        assert!((ld - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pseudo_det_rank_deficient() {
        // Two disconnected pairs: null space has dimension 2.
        let q = GeneratorMatrix::from_rates(4, [((0, 1), 1.0), ((1, 0), 1.0), ((2, 3), 1.0), ((3, 2), 1.0)])
            .unwrap();
        assert!(matches!(
            log_pseudo_det(&stationary_precision(&q)),
            Err(Error::RankDeficient { zeros: 2 })
        ));
    }

    #[test]
    fn pseudo_det_requires_null_vector() {
        let p = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(log_pseudo_det(&p), Err(Error::Precondition(_))));
    }

    #[test]
    fn constrained_solve_examples() {
        assert_eq!(constrained_solve(&sym2(), &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let pi = constrained_solve(&sym2(), &[1.0, -1.0]).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-14 && (pi[1] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn constrained_solve_reducible() {
        let q = GeneratorMatrix::from_rates(2, [((0, 1), 1.0)]).unwrap();
        assert!(matches!(constrained_solve(&q, &[1.0, -1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn log_density_at_zero() {
        let f = IntrinsicField::new(sym2(), 1.0).unwrap();
        let expected = -0.5 * (2.0 * PI).ln() + 0.5 * 4f64.ln();
        assert!((f.log_density(&[0.0, 0.0]).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn log_density_rejects_unconstrained() {
        let f = IntrinsicField::new(sym2(), 1.0).unwrap();
        assert!(matches!(f.log_density(&[1.0, 0.0]), Err(Error::ConstraintViolation { .. })));
    }

    #[test]
    fn samples_sum_to_zero_and_reproduce() {
        let f = IntrinsicField::new(cycle3(), 2.0).unwrap();
        for seed in 0..20 {
            let s = f.sample(seed).unwrap();
            assert!(s.pi.iter().sum::<f64>().abs() < 1e-10);
            assert_eq!(s, f.sample(seed).unwrap());
        }
    }

    #[test]
    fn constrained_gaussian_prior_matches_field_law() {
        // With zero linear term and precision QQ', the kriging sampler and
        // the solve-based sampler share a covariance.
        let q = cycle3();
        let p = stationary_precision(&q).to_dense();
        let cg = ConstrainedGaussian::new(p).unwrap();
        let mut rng = rng::from_seed(5);
        let n = 40_000;
        let mut var0 = 0.0;
        for _ in 0..n {
            let x = cg.sample(&[0.0; 3], &mut rng);
            assert!(x.iter().sum::<f64>().abs() < 1e-10);
            var0 += x[0] * x[0];
        }
        var0 /= n as f64;
        // P⁺ for the unit 3-cycle: eigenvalue 3 on the sum-zero plane, so
        // Var(π_0) = (2/3) / 3.
        assert!((var0 - 2.0 / 9.0).abs() < 0.01, "{var0}");
    }
}
