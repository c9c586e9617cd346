//! Fixtures shared by the benchmarks.

use walkfield::{GeneratorMatrix, Result};

/// Nearest-neighbour lattice with unit rates in both directions.
pub fn lattice(side: usize) -> Result<GeneratorMatrix> {
    let idx = |r: usize, c: usize| r * side + c;
    let mut rates = Vec::new();
    for r in 0..side {
        for c in 0..side {
            if c + 1 < side {
                rates.push(((idx(r, c), idx(r, c + 1)), 1.0));
                rates.push(((idx(r, c + 1), idx(r, c)), 1.0));
            }
            if r + 1 < side {
                rates.push(((idx(r, c), idx(r + 1, c)), 1.0));
                rates.push(((idx(r + 1, c), idx(r, c)), 1.0));
            }
        }
    }
    GeneratorMatrix::from_rates(side * side, rates)
}
