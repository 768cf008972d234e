//! Fixed points of the mean-field dynamics and entropy diagnostics.
//!
//! At a fixed point every station is a birth-death chain with up-rate
//! `a = μ(γ − Σ j·ȳⱼ)` and down-rate `λφ(n)` at `n` bikes, so
//! `ȳ(n + 1)/ȳ(n) = ρₙ = a/(λφ(n + 1))`. The ratios depend on `ȳ` only through
//! `a` and the choice denominator `s = Σ g(j)·ȳⱼ`, which reduces the search to
//! two scalars. For fixed `s` the residual in `a` is strictly increasing, and
//! the outer residual in `s` changes sign between `min g` and `max g`, so
//! nested bisection finds the unique root.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::meanfield::{drift, drift_hetero, ratio_projection, EmpiricalMeasure, HeterogeneousMeasure, RatioHistogram};
use crate::model::SystemParams;

/// Above this capacity the stationary products are formed in log space.
pub const LOG_SPACE_THRESHOLD: usize = 30;

const BISECTION_LIMIT: usize = 400;

/// `ȳₙ = Π_{i<n} ρᵢ / Z` for the birth-death chain with ratios `rho`.
pub fn birth_death_stationary(rho: &[f64]) -> Result<EmpiricalMeasure> {
    if let Some((k, r)) = rho.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::domain(format!("rho[{k}] = {r} must be positive and finite")));
    }
    let mut y = Vec::with_capacity(rho.len() + 1);
    if rho.len() > LOG_SPACE_THRESHOLD {
        let mut acc = 0.0;
        y.push(0.0);
        for r in rho {
            acc += r.ln();
            y.push(acc);
        }
        let top = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = top + y.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        y.iter_mut().for_each(|l| *l = (*l - log_z).exp());
    } else {
        let mut acc = 1.0;
        y.push(1.0);
        for r in rho {
            acc *= r;
            y.push(acc);
        }
        let z: f64 = y.iter().sum();
        if !z.is_finite() {
            return birth_death_stationary_log(rho);
        }
        y.iter_mut().for_each(|v| *v /= z);
    }
    Ok(EmpiricalMeasure::new_unchecked(y))
}

fn birth_death_stationary_log(rho: &[f64]) -> Result<EmpiricalMeasure> {
    let mut padded = rho.to_vec();
    // force the log branch
    padded.resize(LOG_SPACE_THRESHOLD + 1 + rho.len(), 1.0);
    let full = birth_death_stationary(&padded)?.into_vec();
    let head = &full[..=rho.len()];
    let z: f64 = head.iter().sum();
    Ok(EmpiricalMeasure::new_unchecked(head.iter().map(|v| v / z).collect()))
}

/// Unnormalized log of `Π_{i<n} ρᵢ`, `n = 0..=k`, for scalars `(a, s)`.
fn log_profile(params: &SystemParams, lambda: f64, a: f64, s: f64, k: usize, out: &mut Vec<f64>) {
    let g = params.weights().as_slice();
    let p = params.p;
    let informed = if s > 0.0 { p / s } else { 0.0 };
    out.clear();
    out.push(0.0);
    let ln_a = a.ln() - lambda.ln();
    let mut acc = 0.0;
    for n in 1..=k {
        acc += ln_a - ((1.0 - p) + informed * g[n]).ln();
        out.push(acc);
    }
}

/// Capacity classes with their station fractions.
struct Classes<'a> {
    params: &'a SystemParams,
    lambda: f64,
}

struct Profile {
    rows: Vec<Vec<f64>>,
    mean: f64,
    sum_g: f64,
}

impl Classes<'_> {
    fn profile(&self, a: f64, s: f64) -> Profile {
        let g = self.params.weights().as_slice();
        let mut rows = Vec::new();
        let mut mean = 0.0;
        let mut sum_g = 0.0;
        let mut buf = Vec::new();
        for (&k, &w) in self.params.capacity.values().iter().zip(self.params.capacity.fractions()) {
            log_profile(self.params, self.lambda, a, s, k as usize, &mut buf);
            let top = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut row: Vec<f64> = buf.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = row.iter().sum();
            for (n, v) in row.iter_mut().enumerate() {
                *v *= w / z;
                mean += n as f64 * *v;
                sum_g += g[n] * *v;
            }
            rows.push(row);
        }
        Profile { rows, mean, sum_g }
    }

    /// Root of `a − μ(γ − mean(a, s))` on `(0, μγ]`.
    fn solve_a(&self, s: f64, evaluations: &mut usize) -> f64 {
        let mu = self.params.mu;
        let gamma = self.params.gamma;
        let residual = |a: f64, ev: &mut usize| {
            *ev += 1;
            a - mu * (gamma - self.profile(a, s).mean)
        };
        let mut hi = mu * gamma;
        if residual(hi, evaluations) <= 0.0 {
            return hi;
        }
        // bracket from below geometrically, then bisect
        let mut lo = hi;
        loop {
            lo *= 0.5;
            if residual(lo, evaluations) < 0.0 || lo < 1e-300 {
                break;
            }
            hi = lo;
        }
        for _ in 0..BISECTION_LIMIT {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if residual(mid, evaluations) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // the side with the smaller residual
        let (rl, rh) = (residual(lo, evaluations).abs(), residual(hi, evaluations).abs());
        if rl < rh {
            lo
        } else {
            hi
        }
    }
}

/// Result of the fixed-point search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub y_bar: EmpiricalMeasure,
    /// `ρ₀..ρ_{K−1}`.
    pub rho: Vec<f64>,
    /// Return intensity `μ(γ − Σ j·ȳⱼ)`.
    pub a: f64,
    /// Choice denominator `Σ g(j)·ȳⱼ`.
    pub s: f64,
    /// `‖drift(ȳ)‖_∞`.
    pub residual: f64,
    /// Number of profile evaluations.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeteroEquilibrium {
    pub table: HeterogeneousMeasure,
    pub ratio: RatioHistogram,
    pub a: f64,
    pub s: f64,
    pub residual: f64,
    pub iterations: usize,
}

fn constant_lambda(params: &SystemParams) -> Result<f64> {
    let lambda = params
        .arrival
        .constant_rate()
        .ok_or_else(|| Error::domain("equilibrium requires a constant arrival rate"))?;
    if lambda <= 0.0 {
        return Err(Error::domain("equilibrium requires a positive arrival rate"));
    }
    if params.gamma <= 0.0 {
        return Err(Error::domain("equilibrium requires a positive fleet"));
    }
    Ok(lambda)
}

/// Scalars `(a, s)` and the evaluation count.
fn solve_scalars(classes: &Classes) -> Result<(f64, f64, usize)> {
    let params = classes.params;
    let g = params.weights().as_slice();
    let k_max = params.k_max() as usize;
    let mut evaluations = 0;
    if params.p == 0.0 || params.weights().is_constant() {
        // information is irrelevant: s only enters through p·g/s
        let s = if params.weights().is_constant() { g[0] } else { 1.0 };
        let a = classes.solve_a(s, &mut evaluations);
        return Ok((a, s, evaluations));
    }
    let g_hi = g[k_max];
    let g_lo = if g[0] > 0.0 {
        g[0]
    } else {
        let first = g.iter().cloned().find(|w| *w > 0.0).unwrap_or(g_hi);
        first * 1e-200
    };
    let outer = |ln_s: f64, ev: &mut usize| -> (f64, f64) {
        let s = ln_s.exp();
        let a = classes.solve_a(s, ev);
        let sum_g = classes.profile(a, s).sum_g;
        (ln_s - sum_g.max(f64::MIN_POSITIVE).ln(), a)
    };
    let (mut lo, mut hi) = (g_lo.ln(), g_hi.ln());
    let (r_lo, _) = outer(lo, &mut evaluations);
    if r_lo > 0.0 {
        return Err(Error::Convergence {
            what: "equilibrium choice denominator",
            iterations: evaluations,
            residual: r_lo,
        });
    }
    for _ in 0..BISECTION_LIMIT {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if outer(mid, &mut evaluations).0 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, al) = outer(lo, &mut evaluations);
    let (rh, ah) = outer(hi, &mut evaluations);
    let (ln_s, a) = if rl.abs() < rh.abs() { (lo, al) } else { (hi, ah) };
    Ok((a, ln_s.exp(), evaluations))
}

fn rho_from(params: &SystemParams, lambda: f64, a: f64, s: f64, k: usize) -> Vec<f64> {
    let g = params.weights().as_slice();
    let informed = if s > 0.0 { params.p / s } else { 0.0 };
    (0..k)
        .map(|i| a / (lambda * ((1.0 - params.p) + informed * g[i + 1])))
        .collect()
}

const RESIDUAL_TARGET: f64 = 1e-10;

/// Equilibrium of the uniform-capacity mean-field limit.
pub fn solve_equilibrium(params: &SystemParams) -> Result<EquilibriumResult> {
    let k = params
        .uniform_capacity()
        .ok_or_else(|| Error::domain("heterogeneous capacities: use the heterogeneous solver"))?;
    let lambda = constant_lambda(params)?;
    let classes = Classes { params, lambda };
    let (a, s, iterations) = solve_scalars(&classes)?;
    let profile = classes.profile(a, s);
    let y_bar = EmpiricalMeasure::new_unchecked(profile.rows.into_iter().next().expect("one class"));
    let residual = drift(&y_bar, params, 0.0)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(residual <= RESIDUAL_TARGET) {
        return Err(Error::Convergence {
            what: "equilibrium",
            iterations,
            residual,
        });
    }
    Ok(EquilibriumResult {
        y_bar,
        rho: rho_from(params, lambda, a, s, k as usize),
        a,
        s: profile.sum_g,
        residual,
        iterations,
    })
}

/// Equilibrium of the joint (count, capacity) table and its ratio histogram.
/// Each class is a birth-death chain truncated at its capacity; the classes
/// share `a` and `s`.
pub fn solve_equilibrium_hetero(params: &SystemParams) -> Result<HeteroEquilibrium> {
    let lambda = constant_lambda(params)?;
    let classes = Classes { params, lambda };
    let (a, s, iterations) = solve_scalars(&classes)?;
    let profile = classes.profile(a, s);
    let table = HeterogeneousMeasure::new_unchecked(params.capacity.values().to_vec(), profile.rows)?;
    let residual = drift_hetero(&table, params, 0.0)?
        .flatten()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(residual <= RESIDUAL_TARGET) {
        return Err(Error::Convergence {
            what: "heterogeneous equilibrium",
            iterations,
            residual,
        });
    }
    let ratio = ratio_projection(&table, params.k_max())?;
    Ok(HeteroEquilibrium {
        table,
        ratio,
        a,
        s: profile.sum_g,
        residual,
        iterations,
    })
}

/// Natural-log entropy `−Σ yₙ ln yₙ` with `0·ln 0 = 0`.
pub fn entropy(y: &[f64]) -> f64 {
    -y.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Interior state: every entry positive, return intensity positive.
struct Frozen {
    lambda: f64,
    a: f64,
    nu: Vec<f64>,
    down: Vec<f64>,
}

/// Birth-death chain frozen at `y`: `ν_{ρ(y)}` and its down-rates.
fn freeze(y: &EmpiricalMeasure, params: &SystemParams, t: f64) -> Result<Frozen> {
    let k = params
        .uniform_capacity()
        .ok_or_else(|| Error::domain("heterogeneous capacities are not supported here"))?;
    if y.capacity() != k {
        return Err(Error::domain(format!("measure has capacity {}, configuration {k}", y.capacity())));
    }
    if let Some(n) = y.as_slice().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::domain(format!("y[{n}] = {} is on the boundary", y[n])));
    }
    let lambda = params.lambda(t);
    let a = params.mu * (params.gamma - y.mean());
    if !(a > 0.0 && lambda > 0.0) {
        return Err(Error::domain(format!(
            "rates must be positive (return intensity {a}, arrival rate {lambda})"
        )));
    }
    let g = params.weights().as_slice();
    let s: f64 = y.as_slice().iter().zip(g).map(|(v, w)| v * w).sum();
    let informed = if s > 0.0 { params.p / s } else { 0.0 };
    let down: Vec<f64> = (1..=k as usize)
        .map(|n| lambda * ((1.0 - params.p) + informed * g[n]))
        .collect();
    let rho: Vec<f64> = down.iter().map(|d| a / d).collect();
    let nu = birth_death_stationary(&rho)?.into_vec();
    Ok(Frozen { lambda, a, nu, down })
}

/// `ρ(y)`: the ratios of the birth-death chain frozen at `y`.
pub fn rho_of(y: &EmpiricalMeasure, params: &SystemParams, t: f64) -> Result<Vec<f64>> {
    let f = freeze(y, params, t)?;
    Ok(f.down.iter().map(|d| f.a / d).collect())
}

/// Relative entropy `Σ yₙ ln(yₙ/ν_{ρ(y)}(n))` at a constant arrival rate.
pub fn relative_entropy(y: &EmpiricalMeasure, params: &SystemParams) -> Result<f64> {
    let f = freeze(y, params, 0.0)?;
    Ok(y.as_slice().iter().zip(&f.nu).map(|(v, nu)| v * (v / nu).ln()).sum())
}

/// Dirichlet form `−Σₙ q(n, n+1)(xₙ − xₙ₊₁)(ln xₙ − ln xₙ₊₁)` with
/// `x = y/ν_{ρ(y)}` and `q(n, n+1) = ν(n)·a`. Non-positive, and zero exactly
/// at the equilibrium.
pub fn lyapunov_derivative(y: &EmpiricalMeasure, params: &SystemParams) -> Result<f64> {
    lyapunov_derivative_at(y, params, 0.0)
}

pub fn lyapunov_derivative_at(y: &EmpiricalMeasure, params: &SystemParams, t: f64) -> Result<f64> {
    let f = freeze(y, params, t)?;
    let _ = f.lambda;
    let x: Vec<f64> = y.as_slice().iter().zip(&f.nu).map(|(v, nu)| v / nu).collect();
    let mut total = 0.0;
    for n in 0..x.len() - 1 {
        let q = f.nu[n] * f.a;
        total += q * (x[n] - x[n + 1]) * (x[n].ln() - x[n + 1].ln());
    }
    Ok(-total)
}
