//! Least-squares fit of a periodic arrival rate on a trigonometric basis.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FourierRateModel;

/// Observed rates at increasing times within one period.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSeries {
    times: Vec<f64>,
    rates: Vec<f64>,
}

impl RateSeries {
    pub fn new(times: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if times.len() != rates.len() {
            return Err(Error::validation("rate series", "times and rates differ in length"));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::validation(
                format!("t_hours[{}]", i + 1),
                "times must be strictly increasing",
            ));
        }
        if let Some(i) = rates.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::validation(format!("rate[{i}]"), "rates must be finite and >= 0"));
        }
        Ok(RateSeries { times, rates })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    t_hours: f64,
    rate: f64,
}

/// Reads a CSV with header `t_hours,rate`.
pub fn read_rate_series(path: &Path) -> Result<RateSeries> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    })?;
    let (mut times, mut rates) = (Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: format!("{}:row {}", path.display(), i + 2),
            message: e.to_string(),
        })?;
        times.push(row.t_hours);
        rates.push(row.rate);
    }
    RateSeries::new(times, rates)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourierFit {
    pub model: FourierRateModel,
    pub r_squared: f64,
}

/// Ordinary least squares on `{1, sin(2πjt/ω), cos(2πjt/ω) : j = 1..=order}`
/// via the normal equations. A design whose Gram matrix has relative
/// eigenvalue below 1e-12 is rejected as rank deficient.
pub fn fit_fourier(series: &RateSeries, order: usize, period: f64) -> Result<FourierFit> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::validation("period", "must be positive"));
    }
    let cols = 2 * order + 1;
    if series.len() < cols {
        return Err(Error::validation(
            "order",
            format!("{} samples cannot determine {cols} coefficients", series.len()),
        ));
    }
    if let Some(t) = series.times.iter().find(|t| !(**t >= 0.0 && **t < period)) {
        return Err(Error::validation("t_hours", format!("time {t} outside [0, {period})")));
    }
    let m = series.len();
    let x = DMatrix::from_fn(m, cols, |i, c| {
        let t = series.times[i];
        if c == 0 {
            1.0
        } else {
            let j = c.div_ceil(2) as f64;
            let arg = 2.0 * PI * j * t / period;
            if c % 2 == 1 {
                arg.sin()
            } else {
                arg.cos()
            }
        }
    });
    let y = DVector::from_column_slice(&series.rates);
    let gram = x.transpose() * &x;
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::domain(format!(
            "design is rank deficient (eigenvalue ratio {:e})",
            lo / hi
        )));
    }
    let rhs = x.transpose() * &y;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::domain("normal equations are not positive definite"))?
        .solve(&rhs);
    let fitted = &x * &beta;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let sin = (0..order).map(|j| beta[2 * j + 1]).collect();
    let cos = (0..order).map(|j| beta[2 * j + 2]).collect();
    Ok(FourierFit {
        model: FourierRateModel::new(period, beta[0], sin, cos)?,
        r_squared,
    })
}
