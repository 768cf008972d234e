//! Per-station arrival-rate functions `λ(t)`, hours as the time unit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step of the grid used to validate non-negativity and to bound `λ(t)` for
/// thinning.
pub const RATE_GRID_STEP: f64 = 0.01;

/// Periodic rate as a truncated trigonometric series:
/// `intercept + Σⱼ sinⱼ·sin(2πjt/period) + cosⱼ·cos(2πjt/period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierRateModel {
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    pub intercept: f64,
    #[serde(default)]
    pub sin: Vec<f64>,
    #[serde(default)]
    pub cos: Vec<f64>,
}

fn default_period() -> f64 {
    24.0
}

impl FourierRateModel {
    pub fn new(period: f64, intercept: f64, sin: Vec<f64>, cos: Vec<f64>) -> Result<Self> {
        let model = FourierRateModel {
            period,
            order: Some(sin.len()),
            intercept,
            sin,
            cos,
        };
        model.check_shape()?;
        Ok(model)
    }

    pub fn constant(period: f64, intercept: f64) -> Self {
        FourierRateModel {
            period,
            order: Some(0),
            intercept,
            sin: Vec::new(),
            cos: Vec::new(),
        }
    }

    /// The weekday rate fitted to CitiBike trip counts (order 5, per hour).
    pub fn citibike_weekday() -> Self {
        FourierRateModel {
            period: 24.0,
            order: Some(5),
            intercept: 91.4,
            sin: vec![-43.4, -38.2, 30.1, 14.6, -29.4],
            cos: vec![-49.5, -40.0, 23.7, -1.4, 1.4],
        }
    }

    /// The weekend rate fitted to CitiBike trip counts (order 2, per hour).
    pub fn citibike_weekend() -> Self {
        FourierRateModel {
            period: 24.0,
            order: Some(2),
            intercept: 58.6,
            sin: vec![-43.8, 6.0],
            cos: vec![-39.5, 6.7],
        }
    }

    pub fn order(&self) -> usize {
        self.sin.len()
    }

    fn check_shape(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::validation(
                "arrival.fourier.period",
                format!("must be a positive number of hours, got {}", self.period),
            ));
        }
        if self.sin.len() != self.cos.len() {
            return Err(Error::validation(
                "arrival.fourier.cos",
                format!(
                    "length {} does not match sin length {}",
                    self.cos.len(),
                    self.sin.len()
                ),
            ));
        }
        if let Some(order) = self.order {
            if order != self.sin.len() {
                return Err(Error::validation(
                    "arrival.fourier.order",
                    format!("is {order} but {} coefficient pairs given", self.sin.len()),
                ));
            }
        }
        let all = std::iter::once(&self.intercept).chain(&self.sin).chain(&self.cos);
        if all.into_iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("arrival.fourier", "coefficients must be finite"));
        }
        Ok(())
    }

    pub fn rate(&self, t: f64) -> f64 {
        let base = 2.0 * PI * t.rem_euclid(self.period) / self.period;
        self.sin
            .iter()
            .zip(&self.cos)
            .enumerate()
            .fold(self.intercept, |acc, (j, (s, c))| {
                let x = base * (j + 1) as f64;
                acc + s * x.sin() + c * x.cos()
            })
    }
}

/// Arrival model of the configuration file: `{"constant": 1.0}` or
/// `{"fourier": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalModel {
    Constant(f64),
    Fourier(FourierRateModel),
}

impl ArrivalModel {
    pub fn rate(&self, t: f64) -> f64 {
        match self {
            ArrivalModel::Constant(rate) => *rate,
            ArrivalModel::Fourier(model) => model.rate(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            ArrivalModel::Constant(_) => true,
            ArrivalModel::Fourier(model) => model.sin.iter().chain(&model.cos).all(|&c| c == 0.0),
        }
    }

    /// Rate of a time-homogeneous model.
    pub fn constant_rate(&self) -> Option<f64> {
        self.is_constant().then(|| self.rate(0.0))
    }

    /// Grid times `0, step, 2·step, …` covering `[0, end]`.
    fn grid(end: f64) -> impl Iterator<Item = f64> {
        let steps = (end / RATE_GRID_STEP).ceil() as usize;
        (0..=steps).map(move |i| (i as f64 * RATE_GRID_STEP).min(end))
    }

    /// Interval that determines the rate everywhere: one period for Fourier
    /// models, a single point for constant ones.
    fn span(&self, horizon: f64) -> f64 {
        match self {
            ArrivalModel::Constant(_) => 0.0,
            ArrivalModel::Fourier(m) => horizon.min(m.period),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            ArrivalModel::Constant(rate) => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::validation(
                        "arrival.constant",
                        format!("rate must be finite and >= 0, got {rate}"),
                    ));
                }
            }
            ArrivalModel::Fourier(model) => {
                model.check_shape()?;
                for t in Self::grid(model.period) {
                    let rate = model.rate(t);
                    if rate < 0.0 {
                        return Err(Error::validation(
                            "arrival.fourier",
                            format!("rate is negative ({rate:.6}) at t = {t:.2} h"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Upper bound for `λ(t)` over `[0, horizon]`: grid maximum times a
    /// safety factor of 1.001.
    pub fn rate_bound(&self, horizon: f64) -> f64 {
        let max = Self::grid(self.span(horizon))
            .map(|t| self.rate(t))
            .fold(0.0f64, f64::max);
        max * 1.001
    }
}

/// `λ(t)`; validation happens when parameters are loaded.
pub fn arrival_rate(model: &ArrivalModel, t: f64) -> f64 {
    model.rate(t)
}
