//! Exact simulation of the finite station network.

mod engine;
mod observe;
mod rates;
mod state;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::meanfield::{ratio_projection, stepped_grid, EmpiricalMeasure, HeterogeneousMeasure, RatioHistogram};
use crate::model::SystemParams;

pub use engine::{Engine, EventKind, Observer};
pub use observe::{empirical_measure, engine_table, hetero_measure, ratio_histogram, Sampler, TimeAverage};
pub use rates::{dropoff_rate, pickup_rate};
pub use state::NetworkState;


const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`:
/// `splitmix64(master + 0x9E3779B97F4A7C15·(index + 1))` in wrapping
/// arithmetic.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be positive, got {v}")))
    }
}

fn initial_state(params: &SystemParams, initial: Option<&NetworkState>) -> NetworkState {
    initial.cloned().unwrap_or_else(|| NetworkState::round_robin(params))
}

/// Sampled observables of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub times: Vec<f64>,
    /// Empirical measures; empty when capacities differ between stations.
    pub y_series: Vec<EmpiricalMeasure>,
    pub hetero_series: Vec<HeterogeneousMeasure>,
    pub r_series: Vec<RatioHistogram>,
    pub event_count: u64,
}

/// Simulates from `initial` (round-robin placement when `None`) over
/// `[t₀, t₀ + horizon]`, sampling every `sample_dt` hours and at the end.
pub fn simulate(
    params: &SystemParams,
    horizon: f64,
    sample_dt: f64,
    seed: u64,
    initial: Option<&NetworkState>,
) -> Result<TrajectorySample> {
    check_positive("horizon", horizon)?;
    check_positive("sample_dt", sample_dt)?;
    let start = initial_state(params, initial);
    let t0 = start.t();
    let grid = stepped_grid(t0, t0 + horizon, sample_dt);
    let mut sampler = Sampler::new(grid.clone());
    let mut engine = Engine::new(params, &start, seed)?;
    engine.run_until(t0 + horizon, params.arrival.rate_bound(t0 + horizon), &mut sampler)?;
    let shape = HeterogeneousMeasure::uniform(&params.capacity);
    let k_max = params.k_max();
    let uniform = params.uniform_capacity().is_some();
    let mut out = TrajectorySample {
        times: grid,
        y_series: vec![],
        hetero_series: vec![],
        r_series: vec![],
        event_count: engine.events(),
    };
    for flat in &sampler.samples {
        let table = shape.with_values(flat);
        out.r_series.push(ratio_projection(&table, k_max)?);
        if uniform {
            out.y_series.push(EmpiricalMeasure::new_unchecked(flat.clone()));
        }
        out.hetero_series.push(table);
    }
    Ok(out)
}

/// Long-run time average of the station observables.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryAverage {
    pub table: HeterogeneousMeasure,
    /// Present when every station has the same capacity.
    pub y: Option<EmpiricalMeasure>,
    pub ratio: RatioHistogram,
    pub events: u64,
}

/// Time average over `[burn_in, horizon]` of a run started from the
/// round-robin placement at time 0.
pub fn stationary_average(params: &SystemParams, burn_in: f64, horizon: f64, seed: u64) -> Result<StationaryAverage> {
    if !(burn_in >= 0.0 && horizon > burn_in && horizon.is_finite()) {
        return Err(Error::validation(
            "horizon",
            format!("need 0 <= burn_in < horizon, got burn_in {burn_in}, horizon {horizon}"),
        ));
    }
    let start = NetworkState::round_robin(params);
    let mut avg = TimeAverage::new(burn_in);
    let mut engine = Engine::new(params, &start, seed)?;
    engine.run_until(horizon, params.arrival.rate_bound(horizon), &mut avg)?;
    let flat = avg.average().expect("positive averaging window");
    let table = HeterogeneousMeasure::uniform(&params.capacity).with_values(&flat);
    let ratio = ratio_projection(&table, params.k_max())?;
    Ok(StationaryAverage {
        y: table.collapse(),
        table,
        ratio,
        events: engine.events(),
    })
}

/// Runs `f(index, seed)` for every replication in parallel and returns the
/// results in replication order.
pub fn replicate<T, F>(reps: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|i| f(i, child_seed(master_seed, i as u64)))
        .collect()
}

/// Per-instant sample mean and unbiased sample covariance of the flattened
/// table (the empirical measure for uniform capacity) across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub reps: usize,
    pub mean: Vec<Vec<f64>>,
    pub covariance: Vec<DMatrix<f64>>,
}

/// Mean and covariance of the observables from `samples[rep][instant]`.
pub fn moments(times: Vec<f64>, samples: &[Vec<Vec<f64>>]) -> Result<EnsembleStats> {
    let reps = samples.len();
    if reps < 2 {
        return Err(Error::validation("reps", "need at least 2 replications"));
    }
    let d = samples[0].first().map_or(0, Vec::len);
    let mut mean = Vec::with_capacity(times.len());
    let mut covariance = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let mut m = vec![0.0; d];
        for run in samples {
            for (a, v) in m.iter_mut().zip(&run[i]) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= reps as f64);
        let mut c = DMatrix::zeros(d, d);
        for run in samples {
            let dev: Vec<f64> = run[i].iter().zip(&m).map(|(v, mu)| v - mu).collect();
            for a in 0..d {
                for b in a..d {
                    c[(a, b)] += dev[a] * dev[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                c[(a, b)] /= (reps - 1) as f64;
                c[(b, a)] = c[(a, b)];
            }
        }
        mean.push(m);
        covariance.push(c);
    }
    Ok(EnsembleStats {
        times,
        reps,
        mean,
        covariance,
    })
}

/// Replications with explicit seeds, all started from `initial`.
pub fn ensemble_with_seeds(
    params: &SystemParams,
    initial: &NetworkState,
    seeds: &[u64],
    horizon: f64,
    sample_dt: f64,
) -> Result<EnsembleStats> {
    check_positive("horizon", horizon)?;
    check_positive("sample_dt", sample_dt)?;
    let t0 = initial.t();
    let grid = stepped_grid(t0, t0 + horizon, sample_dt);
    let bound = params.arrival.rate_bound(t0 + horizon);
    let samples: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut sampler = Sampler::new(grid.clone());
            Engine::new(params, initial, seed)?.run_until(t0 + horizon, bound, &mut sampler)?;
            Ok(sampler.samples)
        })
        .collect::<Result<_>>()?;
    moments(grid, &samples)
}

/// `reps` independent replications from the round-robin placement with
/// seeds derived from `seed`.
pub fn ensemble(params: &SystemParams, reps: usize, horizon: f64, sample_dt: f64, seed: u64) -> Result<EnsembleStats> {
    if reps < 2 {
        return Err(Error::validation("reps", "need at least 2 replications"));
    }
    let seeds: Vec<u64> = (0..reps as u64).map(|i| child_seed(seed, i)).collect();
    ensemble_with_seeds(params, &NetworkState::round_robin(params), &seeds, horizon, sample_dt)
}
