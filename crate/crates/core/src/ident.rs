//! Can a generator be recovered from `QQ'`?
//!
//! `QQ' = WW'` exactly when `W = QU` for an orthogonal `U` with `U1 = 1`.
//! The deterministic loop (every node has exactly one exit, arranged in a
//! single cycle) always has a confounder: the walk run backwards at the same
//! per-node exit rates. Generators with a multi-exit row are classified
//! `IdentifiableByTheorem`, but that label is not a guarantee. When the
//! off-diagonal rates have slack, a small rotation of `Q` about `1` keeps
//! them nonnegative and gives a distinct generator with the same Gram matrix.
//! [`verify_unique`] probes for such confounders numerically.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{strongly_connected, GeneratorMatrix};
use crate::rng;

/// A rate is structural iff it exceeds this fraction of the largest rate.
pub const NONZERO_RATE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    IdentifiableByTheorem,
    DeterministicLoop,
    Reducible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub classification: Classification,
    /// A row with at least two positive off-diagonal rates.
    pub witness_row: Option<usize>,
    /// Node order around the loop, starting at node 0.
    pub cycle_order: Option<Vec<usize>>,
}

fn structural_arcs(q: &GeneratorMatrix) -> Vec<(usize, usize)> {
    let cutoff = NONZERO_RATE_REL_TOL * q.max_rate();
    q.rates()
        .iter()
        .filter(|&&(_, _, a)| a > cutoff)
        .map(|&(i, j, _)| (i, j))
        .collect()
}

pub fn check_identifiable(q: &GeneratorMatrix) -> IdentifiabilityReport {
    let m = q.dim();
    let arcs = structural_arcs(q);
    if !strongly_connected(m, arcs.iter().copied()) {
        return IdentifiabilityReport {
            classification: Classification::Reducible,
            witness_row: None,
            cycle_order: None,
        };
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &(i, j) in &arcs {
        out[i].push(j);
    }
    if let Some(row) = (0..m).find(|&i| out[i].len() >= 2) {
        return IdentifiabilityReport {
            classification: Classification::IdentifiableByTheorem,
            witness_row: Some(row),
            cycle_order: None,
        };
    }
    // Irreducible with out-degree one everywhere: a Hamiltonian cycle.
    let mut order = vec![0usize];
    if m > 1 {
        let mut cur = out[0][0];
        while cur != 0 {
            order.push(cur);
            cur = out[cur][0];
        }
    }
    IdentifiabilityReport {
        classification: Classification::DeterministicLoop,
        witness_row: None,
        cycle_order: Some(order),
    }
}

/// Forward cycle `Q` (node `i` exits to `i+1 mod M` at rate `r_i`) and the
/// backward cycle `W` (node `i` exits to `i-1 mod M` at rate `r_i`).
/// Both have the Gram matrix with `2r_i²` on the diagonal and `-r_i r_j`
/// between cycle neighbours.
pub fn construct_confounded_pair(rates: &[f64]) -> Result<(GeneratorMatrix, GeneratorMatrix)> {
    let m = rates.len();
    if m < 3 {
        return Err(Error::Config(format!(
            "confounded pair needs at least 3 nodes (forward and backward cycles coincide for M = {m})"
        )));
    }
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Config(format!("cycle rates must be positive, got {r}")));
    }
    let q = GeneratorMatrix::from_rates(m, (0..m).map(|i| ((i, (i + 1) % m), rates[i])))?;
    let w = GeneratorMatrix::from_rates(m, (0..m).map(|i| ((i, (i + m - 1) % m), rates[i])))?;
    Ok((q, w))
}

fn gram(q: &DMatrix<f64>) -> DMatrix<f64> {
    q * q.transpose()
}

/// Nelder–Mead search over log-rates on a fixed arc set for a generator
/// whose Gram matrix matches a target.
#[derive(Debug, Clone)]
pub struct ConfounderSearch {
    dim: usize,
    arcs: Vec<(usize, usize)>,
    target: DMatrix<f64>,
    target_norm: f64,
    pub max_evals: usize,
    pub match_tol: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub generator: GeneratorMatrix,
    /// `‖WW' - QQ'‖∞` (max-abs entry).
    pub gram_error: f64,
}

impl ConfounderSearch {
    pub fn new(q: &GeneratorMatrix, arcs: Vec<(usize, usize)>) -> Self {
        let target = gram(&q.to_dense());
        let target_norm = target.amax().max(1.0);
        ConfounderSearch {
            dim: q.dim(),
            arcs,
            target,
            target_norm,
            max_evals: 4000,
            match_tol: 1e-8,
        }
    }

    fn dense(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.dim, self.dim);
        for (&(i, j), t) in self.arcs.iter().zip(theta) {
            let a = t.exp();
            w[(i, j)] -= a;
            w[(i, i)] += a;
        }
        w
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let diff = gram(&self.dense(theta)) - &self.target;
        diff.norm_squared() / (self.target_norm * self.target_norm)
    }

    pub fn gram_error(&self, w: &GeneratorMatrix) -> f64 {
        (gram(&w.to_dense()) - &self.target).amax()
    }

    pub fn matches(&self, err: f64) -> bool {
        err <= self.match_tol * self.target_norm
    }

    pub fn run(&self, start: &[f64]) -> SearchOutcome {
        let theta = nelder_mead(|x| self.objective(x), start, 0.5, self.max_evals, 1e-30);
        let generator = GeneratorMatrix::from_rates(
            self.dim,
            self.arcs.iter().zip(&theta).map(|(&k, t)| (k, t.exp())),
        )
        .expect("log-parameterized rates are positive");
        let gram_error = self.gram_error(&generator);
        SearchOutcome {
            generator,
            gram_error,
        }
    }

    /// Log-rates of `w` on this search's arcs; arcs absent from `w` get
    /// a large negative value.
    pub fn encode(&self, w: &GeneratorMatrix) -> Vec<f64> {
        self.arcs
            .iter()
            .map(|&(i, j)| {
                let a = w.rate(i, j);
                if a > 0.0 {
                    a.ln()
                } else {
                    -40.0
                }
            })
            .collect()
    }
}

/// Plain Nelder–Mead with standard coefficients and restarts of the simplex
/// around the incumbent when it collapses early.
fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize, f_tol: f64) -> Vec<f64> {
    let n = x0.len();
    if n == 0 {
        return Vec::new();
    }
    let mut best = x0.to_vec();
    let mut best_f = f(&best);
    let mut evals = 1usize;
    let mut scale = step;
    while evals < max_evals && best_f > f_tol {
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best.clone(), best_f)];
        for k in 0..n {
            let mut x = best.clone();
            x[k] += scale;
            let fx = f(&x);
            evals += 1;
            simplex.push((x, fx));
        }
        let start_f = best_f;
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[n].1 - simplex[0].1;
            let size = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if evals >= max_evals || simplex[0].1 <= f_tol || size < 1e-13 || spread.abs() < 1e-300 {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            evals += 1;
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = f(&xe);
                evals += 1;
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let x = along(-0.5);
                    let fx = f(&x);
                    (x, fx)
                } else {
                    let x = along(0.5);
                    let fx = f(&x);
                    (x, fx)
                };
                evals += 1;
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x0 = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        let x: Vec<f64> = v.0.iter().zip(&x0).map(|(a, b)| b + 0.5 * (a - b)).collect();
                        let fx = f(&x);
                        *v = (x, fx);
                    }
                    evals += n;
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        best = simplex[0].0.clone();
        best_f = simplex[0].1;
        if best_f >= start_f * (1.0 - 1e-12) {
            scale *= 0.1;
            if scale < 1e-10 {
                break;
            }
        }
    }
    best
}

/// Numerical probe: random restarts of a local search for `W ≠ Q` with
/// `WW' = QQ'`, on `Q`'s own support and on its symmetrization. Returns true
/// when no restart finds one (`‖WW' - QQ'‖ ≤ 1e-8` with `‖W - Q‖∞ > 1e-4`).
/// A supporting check, not a proof.
pub fn verify_unique(q: &GeneratorMatrix, trials: usize, seed: u64) -> Result<bool> {
    let report = check_identifiable(q);
    if report.classification != Classification::IdentifiableByTheorem {
        return Err(Error::Precondition(format!(
            "verify_unique needs an irreducible generator with a multi-exit row, got {:?}",
            report.classification
        )));
    }
    let own: Vec<(usize, usize)> = q.rates().iter().map(|&(i, j, _)| (i, j)).collect();
    let mut sym = own.clone();
    sym.extend(own.iter().map(|&(i, j)| (j, i)));
    sym.sort_unstable();
    sym.dedup();
    let searches = [ConfounderSearch::new(q, own), ConfounderSearch::new(q, sym)];
    let log_scale = q.max_rate().ln();
    let q_dense = q.to_dense();

    let found = (0..trials).into_par_iter().any(|t| {
        let search = &searches[t % 2];
        let mut rng = rng::stream(seed, t as u64);
        let start: Vec<f64> = (0..search.arcs.len())
            .map(|_| log_scale + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let out = search.run(&start);
        let dist = (out.generator.to_dense() - &q_dense).amax();
        search.matches(out.gram_error) && dist > 1e-4
    });
    Ok(!found)
}
