//! Per-station transition rates, evaluated directly from a state.

use crate::meanfield::DENOMINATOR_FLOOR;
use crate::model::SystemParams;

use super::state::NetworkState;

/// Rate at which riders take a bike from station `i` at time `t`:
/// `((1 − p)λ + pλN·g(Xᵢ)/Σⱼ g(Xⱼ))·1{Xᵢ > 0}`.
pub fn pickup_rate(state: &NetworkState, i: usize, params: &SystemParams, t: f64) -> f64 {
    let x = state.counts()[i];
    if x == 0 {
        return 0.0;
    }
    let g = params.weights().as_slice();
    let lambda = params.lambda(t);
    let total: f64 = state.counts().iter().map(|&n| g[n as usize]).sum();
    let n = state.n_stations() as f64;
    let informed = if total < DENOMINATOR_FLOOR {
        0.0
    } else {
        params.p * lambda * n * g[x as usize] / total
    };
    (1.0 - params.p) * lambda + informed
}

/// Rate at which bikes in transit are returned to station `i`:
/// `μ(M − ΣX)/N·1{Xᵢ < Kᵢ}`.
pub fn dropoff_rate(state: &NetworkState, i: usize, params: &SystemParams) -> f64 {
    if state.counts()[i] >= state.capacities()[i] {
        return 0.0;
    }
    params.mu * state.in_circulation() as f64 / state.n_stations() as f64
}
