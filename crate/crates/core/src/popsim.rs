//! Open population of random walkers on a graph.
//!
//! Transitions (counts `n`, scale `N`):
//!
//! | event            | jump          | rate        |
//! |------------------|---------------|-------------|
//! | birth at `i`     | `+e_i`        | `N·b_i`     |
//! | death at `i`     | `-e_i`        | `N·d_i`     |
//! | move `i -> j`    | `e_j - e_i`   | `n_i·α_ij`  |
//!
//! Deaths at an empty node are suppressed (their rate leaves the total until
//! the node is re-occupied); otherwise counts could go negative.
//!
//! As `N -> ∞`, `z = n/N` follows `dz/dt = -Q'z + (b - d)`, integrated here
//! with fixed-step RK4.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GeneratorMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographyRates {
    pub birth: Vec<f64>,
    pub death: Vec<f64>,
}

impl DemographyRates {
    pub fn new(birth: Vec<f64>, death: Vec<f64>) -> Result<Self> {
        if birth.len() != death.len() {
            return Err(Error::Config("birth and death vectors differ in length".into()));
        }
        if birth.iter().chain(&death).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("birth/death rates must be finite and >= 0".into()));
        }
        Ok(DemographyRates { birth, death })
    }

    pub fn zero(m: usize) -> Self {
        DemographyRates {
            birth: vec![0.0; m],
            death: vec![0.0; m],
        }
    }

    pub fn net(&self) -> Vec<f64> {
        self.birth.iter().zip(&self.death).map(|(b, d)| b - d).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub counts: Vec<u64>,
    pub scale: u64,
    pub time: f64,
}

impl PopulationState {
    pub fn density(&self) -> Vec<f64> {
        self.counts.iter().map(|&n| n as f64 / self.scale as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrajectoryStates {
    Counts { scale: u64, counts: Vec<Vec<u64>> },
    Density(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrajectory {
    pub times: Vec<f64>,
    pub states: TrajectoryStates,
    pub event_count: u64,
    pub rng_seed: u64,
    /// Set when every rate vanished before `t_end`.
    pub ended_early: bool,
}

impl PopulationTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        match &self.states {
            TrajectoryStates::Counts { counts, .. } => counts.first().map_or(0, Vec::len),
            TrajectoryStates::Density(z) => z.first().map_or(0, Vec::len),
        }
    }

    /// Normalized density at snapshot `k`.
    pub fn density(&self, k: usize) -> Vec<f64> {
        match &self.states {
            TrajectoryStates::Counts { scale, counts } => {
                counts[k].iter().map(|&n| n as f64 / *scale as f64).collect()
            }
            TrajectoryStates::Density(z) => z[k].clone(),
        }
    }

    pub fn final_density(&self) -> Vec<f64> {
        self.density(self.len() - 1)
    }

    /// CSV with columns `t, node_0, …, node_{M-1}` holding densities.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim()).map(|i| format!("node_{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![format!("{}", self.times[k])];
            rec.extend(self.density(k).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSimConfig {
    pub scale: u64,
    pub t_end: f64,
    pub seed: u64,
    pub snapshot_every: f64,
    pub max_events: u64,
}

impl PopulationSimConfig {
    pub fn new(scale: u64, t_end: f64, seed: u64, snapshot_every: f64) -> Self {
        PopulationSimConfig {
            scale,
            t_end,
            seed,
            snapshot_every,
            max_events: 500_000_000,
        }
    }
}

fn snapshot_grid(t_end: f64, every: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * every;
        if t >= t_end * (1.0 - 1e-12) {
            break;
        }
        grid.push(t);
        k += 1;
    }
    grid.push(t_end);
    grid
}

/// Exact (Gillespie direct-method) simulation of the open population.
pub fn simulate_population(
    q: &GeneratorMatrix,
    demo: &DemographyRates,
    n0: &[u64],
    cfg: &PopulationSimConfig,
) -> Result<PopulationTrajectory> {
    let m = q.dim();
    if n0.len() != m || demo.birth.len() != m {
        return Err(Error::Config(format!("state and demography must have length {m}")));
    }
    if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) {
        return Err(Error::Config(format!("t_end must be positive, got {}", cfg.t_end)));
    }
    if !(cfg.snapshot_every > 0.0) {
        return Err(Error::Config("snapshot_every must be positive".into()));
    }
    if cfg.scale == 0 {
        return Err(Error::Config("population scale N must be positive".into()));
    }
    let scale = cfg.scale as f64;
    let births: Vec<f64> = demo.birth.iter().map(|b| scale * b).collect();
    let deaths: Vec<f64> = demo.death.iter().map(|d| scale * d).collect();
    let grid = snapshot_grid(cfg.t_end, cfg.snapshot_every);

    let mut rng = rng::from_seed(cfg.seed);
    let mut n = n0.to_vec();
    let mut t = 0.0;
    let mut events = 0u64;
    let mut times = Vec::with_capacity(grid.len());
    let mut snaps = Vec::with_capacity(grid.len());
    let mut next = 0usize;
    let mut ended_early = false;

    let total_rate = |n: &[u64]| -> f64 {
        (0..m)
            .map(|i| {
                let death = if n[i] > 0 { deaths[i] } else { 0.0 };
                births[i] + death + n[i] as f64 * q.out_rate(i)
            })
            .sum()
    };

    loop {
        let rate = total_rate(&n);
        if !rate.is_finite() {
            return Err(Error::NonFinite(format!("total event rate at t = {t}")));
        }
        let t_next = if rate > 0.0 {
            let u: f64 = rng.random();
            t + -(1.0 - u).ln() / rate
        } else {
            f64::INFINITY
        };
        // The state is piecewise constant: every grid point before the next
        // event sees the current state.
        while next < grid.len() && grid[next] < t_next {
            times.push(grid[next]);
            snaps.push(n.clone());
            next += 1;
        }
        if next == grid.len() {
            if rate == 0.0 {
                ended_early = true;
            }
            break;
        }
        if events >= cfg.max_events {
            let partial = PopulationTrajectory {
                times,
                states: TrajectoryStates::Counts { scale: cfg.scale, counts: snaps },
                event_count: events,
                rng_seed: cfg.seed,
                ended_early: false,
            };
            return Err(Error::EventCapExceeded {
                cap: cfg.max_events,
                partial: Box::new(partial),
            });
        }
        t = t_next;
        events += 1;

        let mut target = rng.random::<f64>() * rate;
        let mut fired = false;
        'pick: for i in 0..m {
            if target < births[i] {
                n[i] += 1;
                fired = true;
                break;
            }
            target -= births[i];
            if n[i] > 0 {
                if target < deaths[i] {
                    n[i] -= 1;
                    fired = true;
                    break;
                }
                target -= deaths[i];
                let ni = n[i] as f64;
                for &(_, j, a) in q.out_edges(i) {
                    let r = ni * a;
                    if target < r {
                        n[i] -= 1;
                        n[j] += 1;
                        fired = true;
                        break 'pick;
                    }
                    target -= r;
                }
            }
        }
        if !fired {
            // Rounding left `target` just past the last bucket; take the last
            // admissible event.
            fire_last(q, &births, &deaths, &mut n);
        }
    }

    Ok(PopulationTrajectory {
        times,
        states: TrajectoryStates::Counts { scale: cfg.scale, counts: snaps },
        event_count: events,
        rng_seed: cfg.seed,
        ended_early,
    })
}

fn fire_last(q: &GeneratorMatrix, births: &[f64], deaths: &[f64], n: &mut [u64]) {
    for i in (0..n.len()).rev() {
        if n[i] > 0 {
            if let Some(&(_, j, _)) = q.out_edges(i).last() {
                n[i] -= 1;
                n[j] += 1;
                return;
            }
            if deaths[i] > 0.0 {
                n[i] -= 1;
                return;
            }
        }
        if births[i] > 0.0 {
            n[i] += 1;
            return;
        }
    }
}

/// Default RK4 step: `min(0.01, 0.1 / max_i Q_ii)`.
pub fn default_ode_step(q: &GeneratorMatrix) -> f64 {
    let top = q.max_out_rate();
    if top > 0.0 {
        (0.1 / top).min(0.01)
    } else {
        0.01
    }
}

struct LimitOde<'a> {
    q: &'a GeneratorMatrix,
    net: Vec<f64>,
}

impl LimitOde<'_> {
    fn deriv(&self, z: &[f64]) -> Vec<f64> {
        let mut dz = self.q.apply_transpose(z);
        for (d, s) in dz.iter_mut().zip(&self.net) {
            *d = s - *d;
        }
        dz
    }

    fn step(&self, z: &[f64], h: f64) -> Vec<f64> {
        let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + s * y).collect()
        };
        let k1 = self.deriv(z);
        let k2 = self.deriv(&axpy(z, 0.5 * h, &k1));
        let k3 = self.deriv(&axpy(z, 0.5 * h, &k2));
        let k4 = self.deriv(&axpy(z, h, &k3));
        (0..z.len())
            .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    /// Advance from `t0` to `t1` in steps of at most `dt`.
    fn advance(&self, z: &mut Vec<f64>, t0: f64, t1: f64, dt: f64) -> Result<()> {
        let mut t = t0;
        while t < t1 {
            let h = if t + dt >= t1 * (1.0 - 1e-14) { t1 - t } else { dt };
            *z = self.step(z, h);
            t = if h == t1 - t { t1 } else { t + h };
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { time: t });
            }
        }
        Ok(())
    }
}

/// Integrate `dz/dt = -Q'z + (b - d)` with classic RK4; one snapshot per
/// step, the last step shortened to land on `t_end`.
pub fn integrate_limit_ode(
    q: &GeneratorMatrix,
    demo: &DemographyRates,
    z0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<PopulationTrajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Config(format!("t_end must be positive, got {t_end}")));
    }
    let steps = (t_end / dt).ceil() as usize;
    let mut grid: Vec<f64> = (0..steps)
        .map(|k| k as f64 * dt)
        .filter(|&t| t < t_end * (1.0 - 1e-12))
        .collect();
    grid.push(t_end);
    ode_on_grid(q, demo, z0, &grid, dt)
}

/// ODE solution sampled at the given increasing times (first must be 0).
pub fn ode_on_grid(
    q: &GeneratorMatrix,
    demo: &DemographyRates,
    z0: &[f64],
    grid: &[f64],
    dt: f64,
) -> Result<PopulationTrajectory> {
    let m = q.dim();
    if z0.len() != m || demo.birth.len() != m {
        return Err(Error::Config(format!("state and demography must have length {m}")));
    }
    let ode = LimitOde { q, net: demo.net() };
    let mut z = z0.to_vec();
    let mut states = vec![z.clone()];
    for w in grid.windows(2) {
        ode.advance(&mut z, w[0], w[1], dt)?;
        states.push(z.clone());
    }
    Ok(PopulationTrajectory {
        times: grid.to_vec(),
        states: TrajectoryStates::Density(states),
        event_count: 0,
        rng_seed: 0,
        ended_early: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub t_end: f64,
    pub scales: Vec<u64>,
    pub replicates: usize,
    pub seed: u64,
    pub snapshot_every: f64,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub scale: u64,
    pub median_gap: f64,
    pub gaps: Vec<f64>,
}

/// For each `N`, the median over replicates of
/// `sup_t ‖n(t)/N - z_ODE(t)‖∞` on the snapshot grid.
pub fn convergence_gap(
    q: &GeneratorMatrix,
    demo: &DemographyRates,
    z0: &[f64],
    cfg: &ConvergenceConfig,
) -> Result<Vec<ConvergenceRow>> {
    if cfg.scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("population scales must be strictly increasing".into()));
    }
    if cfg.replicates == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let dt = cfg.dt.unwrap_or_else(|| default_ode_step(q));
    let grid = snapshot_grid(cfg.t_end, cfg.snapshot_every);
    let ode = ode_on_grid(q, demo, z0, &grid, dt)?;

    let mut rows = Vec::with_capacity(cfg.scales.len());
    for (scale_idx, &scale) in cfg.scales.iter().enumerate() {
        let n0: Vec<u64> = z0.iter().map(|z| (scale as f64 * z).round().max(0.0) as u64).collect();
        let gaps: Vec<f64> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| -> Result<f64> {
                let seed = replicate_seed(cfg.seed, scale_idx, rep);
                let sim_cfg = PopulationSimConfig::new(scale, cfg.t_end, seed, cfg.snapshot_every);
                let path = simulate_population(q, demo, &n0, &sim_cfg)?;
                let mut sup = 0.0f64;
                for k in 0..path.len() {
                    let zs = path.density(k);
                    let zo = ode.density(k);
                    for (a, b) in zs.iter().zip(&zo) {
                        sup = sup.max((a - b).abs());
                    }
                }
                Ok(sup)
            })
            .collect::<Result<_>>()?;
        rows.push(ConvergenceRow {
            scale,
            median_gap: median(&gaps),
            gaps,
        });
    }
    Ok(rows)
}

/// Seed for replicate `rep` at scale index `k`, drawn from the stream
/// family rooted at `seed`.
fn replicate_seed(seed: u64, k: usize, rep: usize) -> u64 {
    let mut r = rng::stream(seed, ((k as u64) << 32) | rep as u64);
    r.random()
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym2() -> GeneratorMatrix {
        GeneratorMatrix::from_rates(2, [((0, 1), 1.0), ((1, 0), 1.0)]).unwrap()
    }

    #[test]
    fn no_events_keeps_state() {
        let q = GeneratorMatrix::from_rates(3, []).unwrap();
        let cfg = PopulationSimConfig::new(10, 5.0, 1, 1.0);
        let path = simulate_population(&q, &DemographyRates::zero(3), &[3, 0, 7], &cfg).unwrap();
        assert!(path.ended_early);
        assert_eq!(path.event_count, 0);
        assert_eq!(path.times, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        for k in 0..path.len() {
            assert_eq!(path.density(k), vec![0.3, 0.0, 0.7]);
        }
    }

    #[test]
    fn conserves_total_without_demography() {
        let q = GeneratorMatrix::from_rates(3, [((0, 1), 1.0), ((1, 2), 2.0), ((2, 0), 0.5)]).unwrap();
        let cfg = PopulationSimConfig::new(100, 3.0, 9, 0.5);
        let path = simulate_population(&q, &DemographyRates::zero(3), &[50, 30, 20], &cfg).unwrap();
        assert!(path.event_count > 100);
        if let TrajectoryStates::Counts { counts, .. } = &path.states {
            assert!(counts.iter().all(|c| c.iter().sum::<u64>() == 100));
        }
    }

    #[test]
    fn deaths_never_go_negative() {
        let q = GeneratorMatrix::from_rates(2, []).unwrap();
        let demo = DemographyRates::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let cfg = PopulationSimConfig::new(10, 10.0, 3, 1.0);
        let path = simulate_population(&q, &demo, &[2, 1], &cfg).unwrap();
        assert_eq!(path.final_density(), vec![0.0, 0.0]);
        assert!(path.ended_early);
    }

    #[test]
    fn event_cap_returns_partial() {
        let mut cfg = PopulationSimConfig::new(1000, 10.0, 3, 1.0);
        cfg.max_events = 50;
        match simulate_population(&sym2(), &DemographyRates::zero(2), &[1000, 0], &cfg) {
            Err(Error::EventCapExceeded { cap: 50, partial }) => assert!(!partial.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn snapshot_grid_includes_end() {
        assert_eq!(snapshot_grid(1.0, 0.3), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert_eq!(snapshot_grid(1.0, 0.5), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn ode_linear_growth() {
        let q = GeneratorMatrix::from_rates(1, []).unwrap();
        let demo = DemographyRates::new(vec![0.75], vec![0.25]).unwrap();
        let path = integrate_limit_ode(&q, &demo, &[1.0], 2.0, 0.03).unwrap();
        assert_eq!(*path.times.last().unwrap(), 2.0);
        assert!((path.final_density()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ode_equilibrium_is_constant() {
        let q = GeneratorMatrix::from_rates(2, [((0, 1), 2.0), ((1, 0), 1.0)]).unwrap();
        // Stationary density of the walk solves Q'z = 0: z ∝ (1, 2).
        let z0 = [1.0 / 3.0, 2.0 / 3.0];
        let demo = DemographyRates::new(vec![0.4, 0.4], vec![0.4, 0.4]).unwrap();
        let path = integrate_limit_ode(&q, &demo, &z0, 5.0, 0.01).unwrap();
        for k in 0..path.len() {
            let z = path.density(k);
            assert!((z[0] - z0[0]).abs() < 1e-10 && (z[1] - z0[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_zero_for_static_system() {
        let q = GeneratorMatrix::from_rates(2, []).unwrap();
        let cfg = ConvergenceConfig {
            t_end: 1.0,
            scales: vec![100, 1000],
            replicates: 3,
            seed: 1,
            snapshot_every: 0.25,
            dt: None,
        };
        let rows = convergence_gap(&q, &DemographyRates::zero(2), &[0.25, 0.75], &cfg).unwrap();
        assert!(rows.iter().all(|r| r.median_gap == 0.0));
    }

    #[test]
    fn scales_must_increase() {
        let cfg = ConvergenceConfig {
            t_end: 1.0,
            scales: vec![1000, 100],
            replicates: 3,
            seed: 1,
            snapshot_every: 0.25,
            dt: None,
        };
        assert!(convergence_gap(&sym2(), &DemographyRates::zero(2), &[0.5, 0.5], &cfg).is_err());
    }
}
