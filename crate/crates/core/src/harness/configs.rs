//! Reference configurations used by the experiments and the sweeps.

use crate::model::{ArrivalModel, CapacitySpec, ChoiceSpec, FourierRateModel, RawConfig, SystemParams};

fn build(n: usize, k: u32, gamma: f64, p: f64, choice: ChoiceSpec) -> SystemParams {
    RawConfig {
        n_stations: n as u64,
        fleet: None,
        gamma: Some(gamma),
        capacity: CapacitySpec::Uniform(k),
        mu: 1.0,
        p,
        arrival: ArrivalModel::Constant(1.0),
        choice,
    }
    .validate()
    .expect("reference configuration is valid")
}

/// λ = μ = 1, K = 20, γ = 10, half the riders informed with exponential
/// choice θ = 2.
pub fn base_config(n: usize) -> SystemParams {
    build(n, 20, 10.0, 0.5, ChoiceSpec::exponential(2.0))
}

/// λ = μ = 1, K = 3, γ = 1.5, p = 0.5 with exponential choice θ = 1.
pub fn small_config(n: usize) -> SystemParams {
    build(n, 3, 1.5, 0.5, ChoiceSpec::exponential(1.0))
}

/// λ(t) = 1 + 0.5 sin(t/2).
pub fn toy_arrival() -> ArrivalModel {
    ArrivalModel::Fourier(
        FourierRateModel::new(4.0 * std::f64::consts::PI, 1.0, vec![0.5], vec![0.0]).expect("valid model"),
    )
}

/// The weekday CitiBike curve as a per-station rate with mean `mean_rate`.
/// The fitted curve dips to about −5.5 trips in the early morning, so its
/// intercept is raised by 6 before scaling.
pub fn weekday_station_arrival(mean_rate: f64) -> ArrivalModel {
    let fitted = FourierRateModel::citibike_weekday();
    let lifted = fitted.intercept + 6.0;
    let scale = mean_rate / lifted;
    ArrivalModel::Fourier(
        FourierRateModel::new(
            fitted.period,
            mean_rate,
            fitted.sin.iter().map(|c| c * scale).collect(),
            fitted.cos.iter().map(|c| c * scale).collect(),
        )
        .expect("valid model"),
    )
}
