//! Configuration documents and their validated form, [`SystemParams`].

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::arrival::ArrivalModel;
use super::choice::{ChoiceFunction, ChoiceSpec, ChoiceTable};
use crate::error::{Error, Result};

/// `capacity` entry of a configuration: a single integer or a finite
/// distribution `{values: [..], fractions: [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapacitySpec {
    Uniform(u32),
    Distribution { values: Vec<u32>, fractions: Vec<f64> },
}

/// Raw configuration tree as read from JSON or TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub n_stations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub capacity: CapacitySpec,
    #[serde(default = "unit_rate")]
    pub mu: f64,
    pub p: f64,
    pub arrival: ArrivalModel,
    pub choice: ChoiceSpec,
}

fn unit_rate() -> f64 {
    1.0
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| ".".into()),
            message: e.message().to_string(),
        })
    }

    /// Reads a `.toml` file as TOML and anything else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn validate(&self) -> Result<SystemParams> {
        validate_params(self)
    }
}

/// Finite capacity distribution over distinct values, sorted ascending, with
/// fractions summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityDistribution {
    values: Vec<u32>,
    fractions: Vec<f64>,
}

impl CapacityDistribution {
    pub fn uniform(k: u32) -> Self {
        CapacityDistribution {
            values: vec![k],
            fractions: vec![1.0],
        }
    }

    pub fn new(values: Vec<u32>, fractions: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("capacity.values", "capacity set is empty"));
        }
        if values.len() != fractions.len() {
            return Err(Error::validation(
                "capacity.fractions",
                format!("{} fractions for {} values", fractions.len(), values.len()),
            ));
        }
        if let Some(&k) = values.iter().find(|&&k| k == 0) {
            return Err(Error::validation("capacity.values", format!("capacities must be >= 1, got {k}")));
        }
        if let Some(f) = fractions.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
            return Err(Error::validation("capacity.fractions", format!("fractions must be >= 0, got {f}")));
        }
        let mut pairs: Vec<(u32, f64)> = Vec::with_capacity(values.len());
        for (k, f) in values.into_iter().zip(fractions) {
            match pairs.iter_mut().find(|(v, _)| *v == k) {
                Some(entry) => entry.1 += f,
                None => pairs.push((k, f)),
            }
        }
        pairs.retain(|&(_, f)| f > 0.0);
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if pairs.is_empty() || total <= 0.0 {
            return Err(Error::validation("capacity.fractions", "fractions sum to zero"));
        }
        pairs.sort_by_key(|p| p.0);
        Ok(CapacityDistribution {
            values: pairs.iter().map(|p| p.0).collect(),
            fractions: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn k_max(&self) -> u32 {
        *self.values.last().expect("non-empty")
    }

    /// The common capacity when every station has the same one.
    pub fn as_uniform(&self) -> Option<u32> {
        (self.values.len() == 1).then(|| self.values[0])
    }

    /// Number of stations per class for a network of `n` stations, by
    /// largest-remainder rounding of `n · fraction`.
    pub fn station_counts(&self, n: usize) -> Vec<usize> {
        let exact: Vec<f64> = self.fractions.iter().map(|f| f * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut remaining = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            counts[i] += 1;
            remaining -= 1;
        }
        counts
    }

    fn to_spec(&self) -> CapacitySpec {
        match self.as_uniform() {
            Some(k) => CapacitySpec::Uniform(k),
            None => CapacitySpec::Distribution {
                values: self.values.clone(),
                fractions: self.fractions.clone(),
            },
        }
    }
}

/// Validated, normalized model configuration. Immutable; cheap to clone.
#[derive(Clone)]
pub struct SystemParams {
    pub n_stations: usize,
    /// Total number of bikes `M`.
    pub fleet: u64,
    /// Bikes per station `γ`, used by the mean-field layer.
    pub gamma: f64,
    pub capacity: CapacityDistribution,
    /// Return rate; mean travel time is `1/μ`.
    pub mu: f64,
    /// Fraction of riders who use availability information.
    pub p: f64,
    pub arrival: ArrivalModel,
    pub choice: ChoiceSpec,
    choice_fn: Arc<dyn ChoiceFunction>,
    weights: ChoiceTable,
}

impl fmt::Debug for SystemParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemParams")
            .field("n_stations", &self.n_stations)
            .field("fleet", &self.fleet)
            .field("gamma", &self.gamma)
            .field("capacity", &self.capacity)
            .field("mu", &self.mu)
            .field("p", &self.p)
            .field("arrival", &self.arrival)
            .field("choice", &self.choice)
            .finish()
    }
}

impl PartialEq for SystemParams {
    fn eq(&self, other: &Self) -> bool {
        self.to_config() == other.to_config()
    }
}

impl SystemParams {
    /// The configuration tree that validates back to `self`.
    pub fn to_config(&self) -> RawConfig {
        RawConfig {
            n_stations: self.n_stations as u64,
            fleet: Some(self.fleet),
            gamma: Some(self.gamma),
            capacity: self.capacity.to_spec(),
            mu: self.mu,
            p: self.p,
            arrival: self.arrival.clone(),
            choice: self.choice.clone(),
        }
    }

    pub fn choice_function(&self) -> &dyn ChoiceFunction {
        self.choice_fn.as_ref()
    }

    /// `g(0..=K_max)`.
    pub fn weights(&self) -> &ChoiceTable {
        &self.weights
    }

    pub fn k_max(&self) -> u32 {
        self.capacity.k_max()
    }

    pub fn uniform_capacity(&self) -> Option<u32> {
        self.capacity.as_uniform()
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.arrival.rate(t)
    }

    /// Applies `edit` to the configuration tree and validates the result.
    pub fn modified(&self, edit: impl FnOnce(&mut RawConfig)) -> Result<SystemParams> {
        let mut raw = self.to_config();
        edit(&mut raw);
        validate_params(&raw)
    }

    pub fn with_p(&self, p: f64) -> Result<SystemParams> {
        self.modified(|raw| raw.p = p)
    }

    pub fn with_choice(&self, choice: ChoiceSpec) -> Result<SystemParams> {
        self.modified(|raw| raw.choice = choice)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<SystemParams> {
        self.modified(|raw| {
            raw.gamma = Some(gamma);
            raw.fleet = None;
        })
    }

    pub fn with_stations(&self, n: usize) -> Result<SystemParams> {
        let gamma = self.gamma;
        self.modified(|raw| {
            raw.n_stations = n as u64;
            raw.gamma = Some(gamma);
            raw.fleet = None;
        })
    }

    pub fn with_arrival(&self, arrival: ArrivalModel) -> Result<SystemParams> {
        self.modified(|raw| raw.arrival = arrival)
    }
}

/// Checks every field of `raw` and returns the normalized parameters:
/// fleet and `γ` reconciled, the capacity distribution merged, sorted and
/// normalized, the choice spec canonicalized, and a periodic arrival rate
/// checked non-negative on a 0.01 h grid over one period.
pub fn validate_params(raw: &RawConfig) -> Result<SystemParams> {
    if raw.n_stations == 0 {
        return Err(Error::validation("n_stations", "must be >= 1"));
    }
    let n_stations = usize::try_from(raw.n_stations)
        .map_err(|_| Error::validation("n_stations", "too large"))?;
    let n = n_stations as f64;
    if !(raw.p.is_finite() && (0.0..=1.0).contains(&raw.p)) {
        return Err(Error::validation("p", format!("must lie in [0, 1], got {}", raw.p)));
    }
    if !(raw.mu.is_finite() && raw.mu > 0.0) {
        return Err(Error::validation("mu", format!("must be > 0, got {}", raw.mu)));
    }

    let (fleet, gamma) = match (raw.fleet, raw.gamma) {
        (None, None) => return Err(Error::validation("gamma", "either `fleet` or `gamma` is required")),
        (Some(m), None) => (m, m as f64 / n),
        (fleet, Some(gamma)) => {
            if !(gamma.is_finite() && gamma >= 0.0) {
                return Err(Error::validation("gamma", format!("must be >= 0, got {gamma}")));
            }
            let implied = gamma * n;
            match fleet {
                None => (implied.round() as u64, gamma),
                Some(m) if (m as f64 - implied).abs() <= 0.5 + 1e-9 * implied => (m, gamma),
                Some(m) => {
                    return Err(Error::validation(
                        "fleet",
                        format!("{m} bikes is inconsistent with gamma = {gamma} over {n_stations} stations"),
                    ))
                }
            }
        }
    };

    let capacity = match &raw.capacity {
        CapacitySpec::Uniform(k) => CapacityDistribution::new(vec![*k], vec![1.0])?,
        CapacitySpec::Distribution { values, fractions } => {
            CapacityDistribution::new(values.clone(), fractions.clone())?
        }
    };

    raw.arrival.validate()?;
    let choice = raw.choice.normalized()?;
    let choice_fn = choice.build()?;
    let weights = ChoiceTable::new(choice_fn.as_ref(), capacity.k_max());
    // leaves room for sums over a million stations
    if let Some(w) = weights.as_slice().iter().find(|w| !(w.is_finite() && **w <= 1e290)) {
        return Err(Error::validation(
            "choice",
            format!("weight g(K_max) = {w:e} is too large to represent; lower the parameter"),
        ));
    }

    Ok(SystemParams {
        n_stations,
        fleet,
        gamma,
        capacity,
        mu: raw.mu,
        p: raw.p,
        arrival: raw.arrival.clone(),
        choice,
        choice_fn,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FourierRateModel;
    use proptest::prelude::*;

    fn base() -> RawConfig {
        RawConfig::from_json(
            r#"{"n_stations": 100, "gamma": 10, "capacity": 20, "mu": 1, "p": 0.5,
                "arrival": {"constant": 1}, "choice": {"kind": "exponential", "theta": 2}}"#,
        )
        .unwrap()
    }

    #[test]
    fn fleet_filled_from_gamma() {
        let params = base().validate().unwrap();
        assert_eq!(params.fleet, 1000);
        assert_eq!(params.gamma, 10.0);
        assert_eq!(params.uniform_capacity(), Some(20));
        assert_eq!(params.weights().as_slice().len(), 21);
    }

    #[test]
    fn gamma_derived_from_fleet() {
        let mut raw = base();
        raw.gamma = None;
        raw.fleet = Some(250);
        assert_eq!(raw.validate().unwrap().gamma, 2.5);
    }

    #[test]
    fn inconsistent_fleet_rejected() {
        let mut raw = base();
        raw.fleet = Some(900);
        match raw.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "fleet"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_p_names_field() {
        let mut raw = base();
        raw.p = 1.3;
        let err = raw.validate().unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "p"));
        assert!(err.to_string().contains("`p`"));
    }

    #[test]
    fn non_positive_mu_rejected() {
        let mut raw = base();
        raw.mu = 0.0;
        assert!(matches!(raw.validate(), Err(Error::Validation { field, .. }) if field == "mu"));
    }

    #[test]
    fn empty_capacity_set_rejected() {
        let mut raw = base();
        raw.capacity = CapacitySpec::Distribution {
            values: vec![],
            fractions: vec![],
        };
        assert!(matches!(raw.validate(), Err(Error::Validation { field, .. }) if field == "capacity.values"));
    }

    #[test]
    fn capacity_distribution_normalized_and_sorted() {
        let mut raw = base();
        raw.capacity = CapacitySpec::Distribution {
            values: vec![20, 10, 20],
            fractions: vec![1.0, 2.0, 1.0],
        };
        let params = raw.validate().unwrap();
        assert_eq!(params.capacity.values(), &[10, 20]);
        assert_eq!(params.capacity.fractions(), &[0.5, 0.5]);
        assert_eq!(params.k_max(), 20);
        assert_eq!(params.capacity.station_counts(7), vec![4, 3]);
    }

    #[test]
    fn negative_fourier_rate_rejected() {
        let mut raw = base();
        raw.arrival = ArrivalModel::Fourier(FourierRateModel::new(24.0, 0.5, vec![1.0], vec![0.0]).unwrap());
        let err = raw.validate().unwrap_err();
        assert!(err.to_string().contains("arrival.fourier"), "{err}");
    }

    #[test]
    fn parse_error_reports_path() {
        let err = RawConfig::from_json(
            r#"{"n_stations": 10, "gamma": 1, "capacity": 3, "p": 0.5,
                "arrival": {"constant": "fast"}, "choice": {"kind": "none"}}"#,
        )
        .unwrap_err();
        match err {
            Error::Parse { path, .. } => assert!(path.starts_with("arrival"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn toml_config_accepted() {
        let raw = RawConfig::from_toml(
            r#"
            n_stations = 10
            gamma = 1.5
            p = 0.5
            capacity = { values = [10, 20], fractions = [0.5, 0.5] }
            arrival = { constant = 1.0 }
            choice = { kind = "minimum", c = 5 }
            "#,
        )
        .unwrap();
        let params = raw.validate().unwrap();
        assert_eq!(params.fleet, 15);
        assert_eq!(params.mu, 1.0);
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(
            n in 1u64..2000,
            gamma in 0.0..30.0f64,
            k in 1u32..60,
            p in 0.0..=1.0f64,
            theta in 0.0..3.0f64,
            lambda in 0.0..5.0f64,
        ) {
            let raw = RawConfig {
                n_stations: n,
                fleet: None,
                gamma: Some(gamma),
                capacity: CapacitySpec::Distribution { values: vec![k, k + 7], fractions: vec![3.0, 1.0] },
                mu: 1.0,
                p,
                arrival: ArrivalModel::Constant(lambda),
                choice: ChoiceSpec::exponential(theta),
            };
            let once = raw.validate().unwrap();
            let twice = once.to_config().validate().unwrap();
            prop_assert_eq!(once.to_config(), twice.to_config());
        }
    }
}
