mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use walkfield::popsim::ode_on_grid;
use walkfield::{
    check_identifiable, construct_confounded_pair, convergence_gap, integrate_limit_ode,
    simulate_population, Classification, ConvergenceConfig, DemographyRates, GeneratorMatrix,
    PopulationSimConfig,
};

/// `z(t) = e^{-Q't} z0 + ∫₀ᵗ e^{-Q's} ds · c` via the exponential of the
/// augmented matrix `[[-Q', c], [0, 0]]`.
fn ode_oracle(q: &GeneratorMatrix, c: &[f64], z0: &[f64], t: f64) -> Vec<f64> {
    let m = q.dim();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    a.view_mut((0, 0), (m, m)).copy_from(&(-dense_q(q).transpose() * t));
    for i in 0..m {
        a[(i, m)] = c[i] * t;
    }
    let e = a.exp();
    let mut x = DVector::zeros(m + 1);
    x.view_mut((0, 0), (m, 1)).copy_from_slice(z0);
    x[m] = 1.0;
    let out = e * x;
    out.rows(0, m).iter().copied().collect()
}

#[test]
fn ode_matches_matrix_exponential() {
    let mut r = rng(20);
    for _ in 0..30 {
        let m = r.random_range(1..7);
        let q = if m == 1 {
            GeneratorMatrix::from_rates(1, []).unwrap()
        } else {
            random_irreducible(m, 0.4, &mut r)
        };
        let b: Vec<f64> = (0..m).map(|_| r.random_range(0.0..2.0)).collect();
        let d: Vec<f64> = (0..m).map(|_| r.random_range(0.0..2.0)).collect();
        let demo = DemographyRates::new(b.clone(), d.clone()).unwrap();
        let z0: Vec<f64> = (0..m).map(|_| r.random_range(0.0..3.0)).collect();
        let t_end = r.random_range(0.5..3.0);
        // Refine from the default step until halving moves the endpoint by < 1e-8.
        let mut dt = walkfield::popsim::default_ode_step(&q);
        let mut coarse = integrate_limit_ode(&q, &demo, &z0, t_end, dt).unwrap().final_density();
        let fine = loop {
            dt /= 2.0;
            let fine = integrate_limit_ode(&q, &demo, &z0, t_end, dt).unwrap().final_density();
            let moved = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if moved < 1e-8 {
                break fine;
            }
            assert!(dt > 1e-5, "no step convergence");
            coarse = fine;
        };
        let net: Vec<f64> = b.iter().zip(&d).map(|(b, d)| b - d).collect();
        let exact = ode_oracle(&q, &net, &z0, t_end);
        for i in 0..m {
            assert!((fine[i] - exact[i]).abs() < 1e-6, "{} vs {}", fine[i], exact[i]);
        }
    }
}

#[test]
fn ode_conserves_mass_when_net_growth_cancels() {
    let mut r = rng(21);
    for _ in 0..20 {
        let m = r.random_range(2..8);
        let q = random_irreducible(m, 0.3, &mut r);
        let mut net: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        let s = net.iter().sum::<f64>() / m as f64;
        net.iter_mut().for_each(|v| *v -= s);
        let birth: Vec<f64> = net.iter().map(|v| v.max(0.0)).collect();
        let death: Vec<f64> = net.iter().map(|v| (-v).max(0.0)).collect();
        let demo = DemographyRates::new(birth, death).unwrap();
        let z0: Vec<f64> = (0..m).map(|_| r.random_range(0.5..2.0)).collect();
        let total0: f64 = z0.iter().sum();
        let t_end = 4.0;
        let path = integrate_limit_ode(&q, &demo, &z0, t_end, 0.01).unwrap();
        for k in 0..path.len() {
            let total: f64 = path.density(k).iter().sum();
            assert!((total - total0).abs() <= 1e-10 * t_end * total0.max(1.0));
        }
    }
}

#[test]
fn pure_birth_tracks_linear_growth() {
    let q = GeneratorMatrix::from_rates(1, []).unwrap();
    let demo = DemographyRates::new(vec![1.0], vec![0.0]).unwrap();
    let n = 10_000u64;
    for rep in 0..20 {
        let cfg = PopulationSimConfig::new(n, 1.0, 100 + rep, 0.5);
        let path = simulate_population(&q, &demo, &[n], &cfg).unwrap();
        let z = path.final_density()[0];
        assert!((z - 2.0).abs() / 2.0 < 0.05, "replicate {rep}: {z}");
    }
}

#[test]
fn symmetric_walk_equilibrates_to_half() {
    let q = GeneratorMatrix::from_rates(2, [((0, 1), 1.0), ((1, 0), 1.0)]).unwrap();
    let n = 2000u64;
    let cfg = PopulationSimConfig::new(n, 20.0, 7, 0.05);
    let path = simulate_population(&q, &DemographyRates::zero(2), &[n, 0], &cfg).unwrap();
    let late: Vec<f64> = (0..path.len())
        .filter(|&k| path.times[k] >= 10.0)
        .map(|k| path.density(k)[0])
        .collect();
    let avg = mean(&late);
    assert!((avg - 0.5).abs() < 0.05 * 0.5, "{avg}");
}

#[test]
fn simulation_is_bit_reproducible() {
    let mut r = rng(22);
    let q = random_irreducible(4, 0.5, &mut r);
    let demo = DemographyRates::new(vec![0.5, 1.0, 0.2, 0.0], vec![0.3, 0.3, 0.3, 0.3]).unwrap();
    let cfg = PopulationSimConfig::new(300, 2.0, 99, 0.1);
    let a = simulate_population(&q, &demo, &[300, 200, 100, 0], &cfg).unwrap();
    let b = simulate_population(&q, &demo, &[300, 200, 100, 0], &cfg).unwrap();
    assert_eq!(a, b);
    let other = PopulationSimConfig { seed: 100, ..cfg };
    assert_ne!(a, simulate_population(&q, &demo, &[300, 200, 100, 0], &other).unwrap());
}

#[test]
fn snapshots_agree_with_ode_on_shared_grid() {
    let mut r = rng(23);
    let q = random_irreducible(3, 0.5, &mut r);
    let demo = DemographyRates::new(vec![0.4, 0.2, 0.0], vec![0.2, 0.2, 0.2]).unwrap();
    let cfg = PopulationSimConfig::new(20_000, 1.0, 5, 0.25);
    let path = simulate_population(&q, &demo, &[20_000, 10_000, 0], &cfg).unwrap();
    let ode = ode_on_grid(&q, &demo, &[1.0, 0.5, 0.0], &path.times, 0.001).unwrap();
    for k in 0..path.len() {
        for (a, b) in path.density(k).iter().zip(ode.density(k)) {
            assert!((a - b).abs() < 0.05);
        }
    }
}

fn iqr(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    at(0.75) - at(0.25)
}

#[test]
fn doubling_replicates_keeps_medians() {
    let q = GeneratorMatrix::from_rates(4, (0..4).map(|i| ((i, (i + 1) % 4), 1.0))).unwrap();
    let demo = DemographyRates::new(vec![1.0, 0.5, 1.0, 0.5], vec![0.5, 1.0, 0.5, 1.0]).unwrap();
    let base = ConvergenceConfig {
        t_end: 1.0,
        scales: vec![100, 1000],
        replicates: 20,
        seed: 31,
        snapshot_every: 0.1,
        dt: None,
    };
    let z0 = [1.0, 1.0, 0.5, 0.5];
    let small = convergence_gap(&q, &demo, &z0, &base).unwrap();
    let big = convergence_gap(&q, &demo, &z0, &ConvergenceConfig { replicates: 40, seed: 32, ..base }).unwrap();
    for (a, b) in small.iter().zip(&big) {
        assert!((a.median_gap - b.median_gap).abs() <= 2.0 * iqr(&a.gaps), "N = {}", a.scale);
    }
}

#[test]
fn confounded_pairs_share_gram_matrix() {
    let mut r = rng(24);
    for m in 3..=8 {
        for _ in 0..20 {
            let rates: Vec<f64> = (0..m).map(|_| r.random_range(0.1..5.0)).collect();
            let (q, w) = construct_confounded_pair(&rates).unwrap();
            let (qd, wd) = (dense_q(&q), dense_q(&w));
            let top = rates.iter().cloned().fold(0.0, f64::max);
            let gap = max_abs(&(&qd * qd.transpose() - &wd * wd.transpose()));
            assert!(gap < 1e-12 * top * top, "M={m}: {gap}");
            assert!(max_abs(&(qd.clone() - &wd)) > 0.05);
            for g in [&qd, &wd] {
                for i in 0..m {
                    assert!(g.row(i).sum().abs() < 1e-12 * top);
                }
            }
            assert_eq!(check_identifiable(&q).classification, Classification::DeterministicLoop);
            assert_eq!(check_identifiable(&w).classification, Classification::DeterministicLoop);
        }
    }
}

mod props {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn classification_ignores_relabeling_and_scale(
            seed in any::<u64>(),
            m in 2usize..8,
            p in 0.0f64..0.5,
            c in 0.01f64..100.0,
        ) {
            let mut r = rng(seed);
            // Random digraph, possibly reducible or a bare loop.
            let mut rates = Vec::new();
            for i in 0..m {
                for j in 0..m {
                    if i != j && (j == (i + 1) % m || r.random::<f64>() < p) {
                        rates.push(((i, j), r.random_range(0.1..2.0)));
                    }
                }
            }
            if r.random::<f64>() < 0.2 {
                rates.pop();
            }
            let q = GeneratorMatrix::from_rates(m, rates).unwrap();
            let mut perm: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                perm.swap(i, r.random_range(0..=i));
            }
            let base = check_identifiable(&q).classification;
            prop_assert_eq!(check_identifiable(&q.permuted(&perm).unwrap()).classification, base);
            prop_assert_eq!(check_identifiable(&q.scaled(c).unwrap()).classification, base);
        }
    }
}
