//! Spatial graphs, covariate-driven edge rates and the generator matrix.
//!
//! Sign convention: the generator has a *positive* diagonal,
//! `Q_ii = Σ_k α_ik` and `Q_ij = -α_ij`, so the large-population diffusion
//! reads `dz/dt = -Q'z + (b - d)`. Most CTMC texts use the negation.

use std::collections::{BTreeMap, VecDeque};

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Linear predictors beyond this magnitude are rejected instead of producing
/// `inf` or a silent zero.
pub const MAX_LINEAR_PREDICTOR: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub label: String,
    pub coords: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCovariates {
    pub distance: f64,
    pub downstream: bool,
    pub barrier: bool,
    /// Named extra covariates, in file column order.
    pub extras: Vec<(String, f64)>,
}

impl EdgeCovariates {
    pub fn new(distance: f64, downstream: bool, barrier: bool) -> Self {
        EdgeCovariates {
            distance,
            downstream,
            barrier,
            extras: Vec::new(),
        }
    }

    pub fn unit() -> Self {
        Self::new(1.0, false, false)
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub covariates: EdgeCovariates,
}

/// Directed graph of areal units. Node indices are dense `0..M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(skip)]
    index: BTreeMap<(usize, usize), usize>,
}

impl SpatialGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let m = nodes.len();
        let mut index = BTreeMap::new();
        for (k, e) in edges.iter().enumerate() {
            if e.from >= m || e.to >= m {
                return Err(Error::InvalidGraph(format!(
                    "edge {}->{} references a node outside 0..{m}",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(Error::InvalidGraph(format!("self-edge at node {}", e.from)));
            }
            let d = e.covariates.distance;
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge {}->{} has non-positive distance {d}",
                    e.from, e.to
                )));
            }
            if index.insert((e.from, e.to), k).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge {}->{}", e.from, e.to)));
            }
        }
        Ok(SpatialGraph { nodes, edges, index })
    }

    /// Graph with unlabeled nodes `0..m` and unit-covariate edges.
    pub fn from_pairs(m: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let nodes = (0..m)
            .map(|i| Node {
                label: i.to_string(),
                coords: None,
            })
            .collect();
        let edges = pairs
            .iter()
            .map(|&(from, to)| Edge {
                from,
                to,
                covariates: EdgeCovariates::unit(),
            })
            .collect();
        Self::new(nodes, edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&Edge> {
        self.index.get(&(from, to)).map(|&k| &self.edges[k])
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|e| self.index.contains_key(&(e.to, e.from)))
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindexed(self) -> Result<Self> {
        Self::new(self.nodes, self.edges)
    }
}

/// Coefficients of the log-linear rate model
/// `α_ij = exp(β0 + β1·u_ij + β2·v_ij + Σ γ_k x_ij,k) / d_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub intercept: f64,
    pub downstream: f64,
    pub barrier: f64,
    pub extras: Vec<(String, f64)>,
}

impl RateParams {
    pub fn new(intercept: f64, downstream: f64, barrier: f64) -> Self {
        RateParams {
            intercept,
            downstream,
            barrier,
            extras: Vec::new(),
        }
    }

    pub fn with_extra(mut self, name: impl Into<String>, coef: f64) -> Self {
        self.extras.push((name.into(), coef));
        self
    }

    /// Builds from a flat vector `[β0, β1, β2]`.
    pub fn from_slice(beta: &[f64]) -> Result<Self> {
        match beta {
            [b0, b1, b2] => Ok(Self::new(*b0, *b1, *b2)),
            _ => Err(Error::Config(format!(
                "rate parameters need exactly 3 coefficients, got {}",
                beta.len()
            ))),
        }
    }

    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = vec![self.intercept, self.downstream, self.barrier];
        v.extend(self.extras.iter().map(|(_, c)| *c));
        v
    }

    fn validate(&self) -> Result<()> {
        if self.as_vec().iter().all(|b| b.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("non-finite rate coefficient in {:?}", self.as_vec())))
        }
    }
}

/// Per-edge transition rates keyed by `(from, to)`, in sorted order.
pub type EdgeRates = BTreeMap<(usize, usize), f64>;

pub fn edge_rates_loglinear(graph: &SpatialGraph, params: &RateParams) -> Result<EdgeRates> {
    params.validate()?;
    let mut rates = EdgeRates::new();
    for e in graph.edges() {
        let c = &e.covariates;
        let mut eta = params.intercept;
        if c.downstream {
            eta += params.downstream;
        }
        if c.barrier {
            eta += params.barrier;
        }
        for (name, coef) in &params.extras {
            let x = c.extra(name).ok_or_else(|| Error::MissingCovariate {
                from: e.from,
                to: e.to,
                covariate: name.clone(),
            })?;
            eta += coef * x;
        }
        if !eta.is_finite() || eta.abs() > MAX_LINEAR_PREDICTOR {
            return Err(Error::RateOverflow {
                from: e.from,
                to: e.to,
                predictor: eta,
            });
        }
        rates.insert((e.from, e.to), eta.exp() / c.distance);
    }
    Ok(rates)
}

/// Sparse infinitesimal generator with positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMatrix {
    dim: usize,
    /// Strictly positive off-diagonal rates sorted by `(from, to)`.
    rates: Vec<(usize, usize, f64)>,
    /// `row_start[i]..row_start[i+1]` indexes the rates leaving node `i`.
    row_start: Vec<usize>,
    out_rates: Vec<f64>,
}

impl GeneratorMatrix {
    /// Assemble from off-diagonal rates. Zero rates are dropped; negative or
    /// non-finite ones are rejected.
    pub fn from_rates(dim: usize, rates: impl IntoIterator<Item = ((usize, usize), f64)>) -> Result<Self> {
        let mut kept: Vec<(usize, usize, f64)> = Vec::new();
        for ((from, to), rate) in rates {
            if from >= dim || to >= dim || from == to {
                return Err(Error::InvalidGraph(format!("invalid rate position {from}->{to}")));
            }
            if rate.is_nan() || rate < 0.0 {
                return Err(Error::NegativeRate { from, to, rate });
            }
            if !rate.is_finite() {
                return Err(Error::NonFinite(format!("rate on edge {from}->{to}")));
            }
            if rate > 0.0 {
                kept.push((from, to, rate));
            }
        }
        kept.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = kept.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidGraph(format!("duplicate rate {}->{}", w[0].0, w[0].1)));
        }
        let mut row_start = vec![0usize; dim + 1];
        let mut out_rates = vec![0.0; dim];
        for &(from, _, rate) in &kept {
            row_start[from + 1] += 1;
            out_rates[from] += rate;
        }
        for i in 0..dim {
            row_start[i + 1] += row_start[i];
        }
        Ok(GeneratorMatrix {
            dim,
            rates: kept,
            row_start,
            out_rates,
        })
    }

    /// Dense constructor for tests and small examples. Reads `α_ij = -q_ij`
    /// from the off-diagonal; the diagonal argument is ignored.
    pub fn from_dense(q: &DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        let mut rates = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && q[(i, j)] != 0.0 {
                    rates.push(((i, j), -q[(i, j)]));
                }
            }
        }
        Self::from_rates(n, rates)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Off-diagonal rates `(from, to, α)` in `(from, to)` order.
    pub fn rates(&self) -> &[(usize, usize, f64)] {
        &self.rates
    }

    pub fn out_edges(&self, i: usize) -> &[(usize, usize, f64)] {
        &self.rates[self.row_start[i]..self.row_start[i + 1]]
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        let row = self.out_edges(from);
        match row.binary_search_by_key(&to, |&(_, j, _)| j) {
            Ok(k) => row[k].2,
            Err(_) => 0.0,
        }
    }

    /// Total exit rate `Q_ii`.
    pub fn out_rate(&self, i: usize) -> f64 {
        self.out_rates[i]
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().map(|r| r.2).fold(0.0, f64::max)
    }

    pub fn max_out_rate(&self) -> f64 {
        self.out_rates.iter().copied().fold(0.0, f64::max)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.out_rates[i]
        } else {
            -self.rate(i, j)
        }
    }

    /// `Q x`, evaluated row-wise as `Σ_j α_ij (x_i - x_j)` so that `Q 1 = 0`
    /// holds exactly in floating point.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| self.out_edges(i).iter().map(|&(_, j, a)| a * (x[i] - x[j])).sum())
            .collect()
    }

    /// `Q' x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y: Vec<f64> = (0..self.dim).map(|i| self.out_rates[i] * x[i]).collect();
        for &(i, j, a) in &self.rates {
            y[j] -= a * x[i];
        }
        y
    }

    /// The generator as CSR, diagonal included.
    pub fn to_csr(&self) -> CsrMatrix {
        let mut t: Vec<(usize, usize, f64)> =
            self.rates.iter().map(|&(i, j, a)| (i, j, -a)).collect();
        t.extend(
            (0..self.dim)
                .filter(|&i| self.out_rates[i] > 0.0)
                .map(|i| (i, i, self.out_rates[i])),
        );
        CsrMatrix::from_triplets(self.dim, self.dim, &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j))
    }

    /// Multiply every rate by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_rates(self.dim, self.rates.iter().map(|&(i, j, a)| ((i, j), a * c)))
    }

    /// Relabel node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        assert_eq!(perm.len(), self.dim);
        Self::from_rates(self.dim, self.rates.iter().map(|&(i, j, a)| ((perm[i], perm[j]), a)))
    }
}

pub fn build_generator(graph: &SpatialGraph, rates: &EdgeRates) -> Result<GeneratorMatrix> {
    for (&(from, to), &rate) in rates {
        if graph.edge(from, to).is_none() {
            return Err(Error::InvalidGraph(format!("rate given for non-edge {from}->{to}")));
        }
        if rate.is_nan() || rate < 0.0 {
            return Err(Error::NegativeRate { from, to, rate });
        }
    }
    let dropped: Vec<_> = rates.iter().filter(|(_, &r)| r == 0.0).map(|(k, _)| *k).collect();
    let q = GeneratorMatrix::from_rates(graph.node_count(), rates.iter().map(|(&k, &r)| (k, r)))?;
    if !dropped.is_empty() {
        warn!("dropped {} zero-rate edges: {:?}", dropped.len(), dropped);
        if !check_irreducible(&q) {
            warn!("generator is reducible after dropping zero-rate edges");
        }
    }
    Ok(q)
}

/// Convenience: rates from the log-linear model, then the generator.
pub fn generator_from_params(graph: &SpatialGraph, params: &RateParams) -> Result<GeneratorMatrix> {
    build_generator(graph, &edge_rates_loglinear(graph, params)?)
}

fn reachable(dim: usize, start: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
    let mut seen = vec![false; dim];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// True iff the digraph of strictly positive rates is strongly connected.
pub fn check_irreducible(q: &GeneratorMatrix) -> bool {
    strongly_connected(q.dim(), q.rates().iter().map(|&(i, j, _)| (i, j)))
}

pub(crate) fn strongly_connected(dim: usize, arcs: impl Iterator<Item = (usize, usize)>) -> bool {
    if dim <= 1 {
        return true;
    }
    let mut fwd = vec![Vec::new(); dim];
    let mut bwd = vec![Vec::new(); dim];
    for (i, j) in arcs {
        fwd[i].push(j);
        bwd[j].push(i);
    }
    reachable(dim, 0, |i| fwd[i].clone()).iter().all(|&s| s)
        && reachable(dim, 0, |i| bwd[i].clone()).iter().all(|&s| s)
}

/// Intrinsic SAR factors: `B_ij = α_ji / Σ_k α_ik` (zero diagonal) and
/// `Λ_ii = 1 / (Σ_k α_ik)²`, so that `(I-B)' Λ⁻¹ (I-B) = QQ'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SarForm {
    pub b: CsrMatrix,
    pub lambda: Vec<f64>,
}

impl SarForm {
    /// `(I-B)' Λ⁻¹ (I-B)` as a dense matrix.
    pub fn implied_precision(&self) -> DMatrix<f64> {
        let m = self.lambda.len();
        let i_minus_b = DMatrix::identity(m, m) - self.b.to_dense();
        let lambda_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            m,
            self.lambda.iter().map(|l| 1.0 / l),
        ));
        i_minus_b.transpose() * lambda_inv * i_minus_b
    }
}

pub fn to_sar(q: &GeneratorMatrix) -> Result<SarForm> {
    let m = q.dim();
    if let Some(i) = (0..m).find(|&i| q.out_rate(i) <= 0.0) {
        return Err(Error::IsolatedNode(i));
    }
    let triplets: Vec<_> = q
        .rates()
        .iter()
        .map(|&(from, to, a)| (to, from, a / q.out_rate(to)))
        .collect();
    Ok(SarForm {
        b: CsrMatrix::from_triplets(m, m, &triplets),
        lambda: (0..m).map(|i| 1.0 / q.out_rate(i).powi(2)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node(a12: f64, a21: f64) -> GeneratorMatrix {
        GeneratorMatrix::from_rates(2, [((0, 1), a12), ((1, 0), a21)]).unwrap()
    }

    #[test]
    fn loglinear_unit_rate() {
        let g = SpatialGraph::from_pairs(2, &[(0, 1)]).unwrap();
        let r = edge_rates_loglinear(&g, &RateParams::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(r[&(0, 1)], 1.0);
    }

    #[test]
    fn loglinear_downstream_example() {
        let nodes = vec![
            Node { label: "a".into(), coords: None },
            Node { label: "b".into(), coords: None },
        ];
        let edges = vec![Edge {
            from: 0,
            to: 1,
            covariates: EdgeCovariates::new(2.0, true, false),
        }];
        let g = SpatialGraph::new(nodes, edges).unwrap();
        let r = edge_rates_loglinear(&g, &RateParams::new(2f64.ln(), 3f64.ln(), 0.0)).unwrap();
        assert!((r[&(0, 1)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn missing_extra_covariate_names_edge() {
        let g = SpatialGraph::from_pairs(2, &[(0, 1)]).unwrap();
        let err = edge_rates_loglinear(&g, &RateParams::new(0.0, 0.0, 0.0).with_extra("slope", 1.0))
            .unwrap_err();
        match err {
            Error::MissingCovariate { from: 0, to: 1, covariate } => assert_eq!(covariate, "slope"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn overflow_guard() {
        let g = SpatialGraph::from_pairs(2, &[(0, 1)]).unwrap();
        let err = edge_rates_loglinear(&g, &RateParams::new(701.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::RateOverflow { predictor, .. } if predictor == 701.0));
    }

    #[test]
    fn graph_validation() {
        assert!(SpatialGraph::from_pairs(2, &[(0, 0)]).is_err());
        assert!(SpatialGraph::from_pairs(2, &[(0, 1), (0, 1)]).is_err());
        assert!(SpatialGraph::from_pairs(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn generator_two_node() {
        let q = two_node(2.0, 3.0);
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -3.0, 3.0]);
        assert_eq!(q.to_dense(), expected);
    }

    #[test]
    fn generator_three_cycle() {
        let g = SpatialGraph::from_pairs(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let q = generator_from_params(&g, &RateParams::new(0.0, 0.0, 0.0)).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.0, 1.0]);
        assert_eq!(q.to_dense(), expected);
    }

    #[test]
    fn negative_rate_rejected() {
        let g = SpatialGraph::from_pairs(2, &[(0, 1)]).unwrap();
        let rates = EdgeRates::from([((0, 1), -1.0)]);
        assert!(matches!(build_generator(&g, &rates), Err(Error::NegativeRate { .. })));
    }

    #[test]
    fn zero_rates_dropped() {
        let g = SpatialGraph::from_pairs(2, &[(0, 1), (1, 0)]).unwrap();
        let rates = EdgeRates::from([((0, 1), 0.0), ((1, 0), 1.0)]);
        let q = build_generator(&g, &rates).unwrap();
        assert_eq!(q.rates().len(), 1);
        assert!(!check_irreducible(&q));
    }

    #[test]
    fn irreducibility_small() {
        assert!(check_irreducible(&two_node(1.0, 1.0)));
        let one_way = GeneratorMatrix::from_rates(2, [((0, 1), 1.0)]).unwrap();
        assert!(!check_irreducible(&one_way));
    }

    #[test]
    fn sar_examples() {
        let s = to_sar(&two_node(1.0, 1.0)).unwrap();
        assert_eq!(s.b.to_dense(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(s.lambda, vec![1.0, 1.0]);

        let s = to_sar(&two_node(2.0, 3.0)).unwrap();
        let b = s.b.to_dense();
        assert!((b[(0, 1)] - 1.5).abs() < 1e-15);
        assert!((b[(1, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((b[(0, 0)], b[(1, 1)]), (0.0, 0.0));
        assert!((s.lambda[0] - 0.25).abs() < 1e-15);
        assert!((s.lambda[1] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn sar_isolated_node() {
        let q = GeneratorMatrix::from_rates(2, [((0, 1), 1.0)]).unwrap();
        assert!(matches!(to_sar(&q), Err(Error::IsolatedNode(1))));
    }

    #[test]
    fn apply_transpose_matches_dense() {
        let q = GeneratorMatrix::from_rates(3, [((0, 1), 0.5), ((1, 2), 2.0), ((2, 0), 1.5), ((0, 2), 0.25)])
            .unwrap();
        let x = [0.3, -1.2, 2.0];
        let dense = q.to_dense().transpose() * nalgebra::DVector::from_column_slice(&x);
        for (a, b) in q.apply_transpose(&x).iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(q.to_csr().to_dense(), q.to_dense());
    }
}
