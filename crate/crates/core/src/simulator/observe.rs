//! Observables of the station network and observers that record them.

use crate::error::{Error, Result};
use crate::meanfield::{ratio_bin, EmpiricalMeasure, HeterogeneousMeasure, RatioHistogram};

use super::engine::{Engine, Observer};
use super::state::NetworkState;

/// Fraction of stations holding each bike count. Requires uniform capacity.
pub fn empirical_measure(state: &NetworkState) -> Result<EmpiricalMeasure> {
    let k = state.capacities()[0];
    if state.capacities().iter().any(|&c| c != k) {
        return Err(Error::domain("capacities differ between stations: use hetero_measure"));
    }
    let mut y = vec![0.0; k as usize + 1];
    let w = 1.0 / state.n_stations() as f64;
    for &x in state.counts() {
        y[x as usize] += w;
    }
    Ok(EmpiricalMeasure::new_unchecked(y))
}

/// Fraction of stations with each (count, capacity) pair; rows are the
/// capacities present in the network, in increasing order.
pub fn hetero_measure(state: &NetworkState) -> HeterogeneousMeasure {
    let mut caps: Vec<u32> = state.capacities().to_vec();
    caps.sort_unstable();
    caps.dedup();
    let mut rows: Vec<Vec<f64>> = caps.iter().map(|&k| vec![0.0; k as usize + 1]).collect();
    let w = 1.0 / state.n_stations() as f64;
    for (&x, k) in state.counts().iter().zip(state.capacities()) {
        let c = caps.binary_search(k).expect("capacity listed");
        rows[c][x as usize] += w;
    }
    HeterogeneousMeasure::new_unchecked(caps, rows).expect("rows match capacities")
}

/// Fraction of stations in each fill-ratio bin `⌊n·K_max/k⌋`.
pub fn ratio_histogram(state: &NetworkState, k_max: u32) -> Result<RatioHistogram> {
    let mut r = vec![0.0; k_max as usize + 1];
    let w = 1.0 / state.n_stations() as f64;
    for (&x, &k) in state.counts().iter().zip(state.capacities()) {
        r[ratio_bin(x, k, k_max)?] += w;
    }
    Ok(RatioHistogram::new_unchecked(r))
}

/// Flattened table of an engine's state (bucket sizes over `N`).
pub fn engine_table(engine: &Engine) -> Vec<f64> {
    let w = 1.0 / engine.n_stations() as f64;
    engine.bucket_sizes().map(|s| s as f64 * w).collect()
}

/// Records the flattened table at the instants of a grid. The value at an
/// instant is the state holding there, i.e. after every event at or before
/// it.
#[derive(Debug, Clone)]
pub struct Sampler {
    grid: Vec<f64>,
    next: usize,
    pub samples: Vec<Vec<f64>>,
}

impl Sampler {
    pub fn new(grid: Vec<f64>) -> Self {
        let len = grid.len();
        Sampler {
            grid,
            next: 0,
            samples: Vec::with_capacity(len),
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

impl Observer for Sampler {
    fn hold(&mut self, engine: &Engine, from: f64, to: f64) {
        while self.next < self.grid.len() && self.grid[self.next] < to {
            debug_assert!(self.grid[self.next] >= from - 1e-12);
            self.samples.push(engine_table(engine));
            self.next += 1;
        }
    }

    fn finish(&mut self, engine: &Engine, t: f64) {
        while self.next < self.grid.len() && self.grid[self.next] <= t {
            self.samples.push(engine_table(engine));
            self.next += 1;
        }
    }
}

/// Time-weighted average of the flattened table over `[from, ∞)`.
#[derive(Debug, Clone)]
pub struct TimeAverage {
    from: f64,
    acc: Vec<f64>,
    span: f64,
}

impl TimeAverage {
    pub fn new(from: f64) -> Self {
        TimeAverage {
            from,
            acc: Vec::new(),
            span: 0.0,
        }
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    /// Averaged table; `None` before any time has been accumulated.
    pub fn average(&self) -> Option<Vec<f64>> {
        (self.span > 0.0).then(|| self.acc.iter().map(|v| v / self.span).collect())
    }
}

impl Observer for TimeAverage {
    fn hold(&mut self, engine: &Engine, from: f64, to: f64) {
        let start = from.max(self.from);
        if to <= start {
            return;
        }
        let dt = to - start;
        if self.acc.is_empty() {
            self.acc = vec![0.0; engine.bucket_sizes().count()];
        }
        let w = dt / engine.n_stations() as f64;
        for (a, s) in self.acc.iter_mut().zip(engine.bucket_sizes()) {
            *a += s as f64 * w;
        }
        self.span += dt;
    }
}
