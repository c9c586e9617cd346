//! Unit-variance normal draws restricted to a half line.

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

use crate::rng::Rng;

/// Standardized bound above which the exponential rejection sampler is used.
const TAIL_SWITCH: f64 = 4.0;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `x` with `1 - Φ(x) = p`.
pub fn norm_isf(p: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * p)
}

/// Draw from N(0, 1) conditioned on `x > a` for a standardized bound `a`.
fn std_above(a: f64, rng: &mut Rng) -> f64 {
    if a < TAIL_SWITCH {
        let tail = norm_sf(a);
        loop {
            let u: f64 = rng.random();
            let x = norm_isf(u * tail);
            if x > a && x.is_finite() {
                return x;
            }
        }
    }
    // exponential proposal with the optimal rate
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let x = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u.ln() < -0.5 * (x - lambda) * (x - lambda) {
            return x;
        }
    }
}

/// N(mean, 1) conditioned on `x > lower`.
pub fn sample_above(mean: f64, lower: f64, rng: &mut Rng) -> f64 {
    let x = mean + std_above(lower - mean, rng);
    if x > lower {
        x
    } else {
        lower.next_up()
    }
}

/// N(mean, 1) conditioned on `x < upper`.
pub fn sample_below(mean: f64, upper: f64, rng: &mut Rng) -> f64 {
    let x = mean - std_above(mean - upper, rng);
    if x < upper {
        x
    } else {
        upper.next_down()
    }
}
