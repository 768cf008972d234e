//! Choice functions: the weight `g(n)` an informed rider assigns to a station
//! holding `n` bikes.
//!
//! Each family implements [`ChoiceFunction`] and is registered by name in
//! [`ChoiceRegistry`], so configurations and the command line can pick a
//! family at runtime. New families only need a constructor entry in the
//! registry.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait ChoiceFunction: fmt::Debug + Send + Sync {
    /// Canonical registry name.
    fn kind(&self) -> &'static str;

    /// Shape parameter, `None` for parameter-free families.
    fn param(&self) -> Option<f64>;

    /// Weight of a station holding `n` bikes. Non-negative and
    /// non-decreasing in `n`.
    fn weight(&self, n: u32) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct Exponential {
    pub theta: f64,
}

impl ChoiceFunction for Exponential {
    fn kind(&self) -> &'static str {
        "exponential"
    }
    fn param(&self) -> Option<f64> {
        Some(self.theta)
    }
    fn weight(&self, n: u32) -> f64 {
        (self.theta * f64::from(n)).exp()
    }
}

/// `g(n) = min(n, c)`.
#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub c: u32,
}

impl ChoiceFunction for Minimum {
    fn kind(&self) -> &'static str {
        "minimum"
    }
    fn param(&self) -> Option<f64> {
        Some(f64::from(self.c))
    }
    fn weight(&self, n: u32) -> f64 {
        f64::from(n.min(self.c))
    }
}

/// `g(n) = n^alpha`, with `0^0 = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Polynomial {
    pub alpha: f64,
}

impl ChoiceFunction for Polynomial {
    fn kind(&self) -> &'static str {
        "polynomial"
    }
    fn param(&self) -> Option<f64> {
        Some(self.alpha)
    }
    fn weight(&self, n: u32) -> f64 {
        f64::from(n).powf(self.alpha)
    }
}

/// No information: every station is equally attractive.
#[derive(Debug, Clone, Copy)]
pub struct Indifferent;

impl ChoiceFunction for Indifferent {
    fn kind(&self) -> &'static str {
        "none"
    }
    fn param(&self) -> Option<f64> {
        None
    }
    fn weight(&self, _n: u32) -> f64 {
        1.0
    }
}

type Constructor = fn(Option<f64>) -> Result<Arc<dyn ChoiceFunction>>;

struct Entry {
    canonical: &'static str,
    param_name: Option<&'static str>,
    build: Constructor,
}

/// Name-indexed constructors for every choice family.
pub struct ChoiceRegistry {
    entries: BTreeMap<&'static str, Entry>,
}

fn require(param: Option<f64>, name: &str) -> Result<f64> {
    let v = param.ok_or_else(|| Error::validation(format!("choice.{name}"), "missing"))?;
    if !v.is_finite() {
        return Err(Error::validation(format!("choice.{name}"), "must be finite"));
    }
    Ok(v)
}

fn build_exponential(param: Option<f64>) -> Result<Arc<dyn ChoiceFunction>> {
    let theta = require(param, "theta")?;
    if theta < 0.0 {
        return Err(Error::validation("choice.theta", format!("must be >= 0, got {theta}")));
    }
    Ok(Arc::new(Exponential { theta }))
}

fn build_minimum(param: Option<f64>) -> Result<Arc<dyn ChoiceFunction>> {
    let c = require(param, "c")?;
    if c < 1.0 || c.fract() != 0.0 || c > f64::from(u32::MAX) {
        return Err(Error::validation("choice.c", format!("must be an integer >= 1, got {c}")));
    }
    Ok(Arc::new(Minimum { c: c as u32 }))
}

fn build_polynomial(param: Option<f64>) -> Result<Arc<dyn ChoiceFunction>> {
    let alpha = require(param, "alpha")?;
    if alpha < 0.0 {
        return Err(Error::validation("choice.alpha", format!("must be >= 0, got {alpha}")));
    }
    Ok(Arc::new(Polynomial { alpha }))
}

fn build_none(_param: Option<f64>) -> Result<Arc<dyn ChoiceFunction>> {
    Ok(Arc::new(Indifferent))
}

impl ChoiceRegistry {
    fn with_builtins() -> Self {
        let mut registry = ChoiceRegistry {
            entries: BTreeMap::new(),
        };
        registry.register("exponential", &["exp"], Some("theta"), build_exponential);
        registry.register("minimum", &["min"], Some("c"), build_minimum);
        registry.register("polynomial", &["poly"], Some("alpha"), build_polynomial);
        registry.register("none", &["uniform"], None, build_none);
        registry
    }

    fn register(
        &mut self,
        canonical: &'static str,
        aliases: &[&'static str],
        param_name: Option<&'static str>,
        build: Constructor,
    ) {
        for name in std::iter::once(&canonical).chain(aliases) {
            self.entries.insert(
                name,
                Entry {
                    canonical,
                    param_name,
                    build,
                },
            );
        }
    }

    /// Process-wide registry of the built-in families.
    pub fn global() -> &'static ChoiceRegistry {
        static REGISTRY: OnceLock<ChoiceRegistry> = OnceLock::new();
        REGISTRY.get_or_init(ChoiceRegistry::with_builtins)
    }

    pub fn build(&self, kind: &str, param: Option<f64>) -> Result<Arc<dyn ChoiceFunction>> {
        let entry = self.entries.get(kind).ok_or_else(|| {
            Error::validation(
                "choice.kind",
                format!("unknown kind `{kind}` (known: {})", self.names().join(", ")),
            )
        })?;
        (entry.build)(param)
    }

    /// Canonical family names.
    pub fn names(&self) -> Vec<&'static str> {
        let mut names: Vec<_> = self.entries.values().map(|e| e.canonical).collect();
        names.dedup();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// Name of the shape parameter of `kind` (`theta`, `c`, `alpha`).
    pub fn param_name(&self, kind: &str) -> Option<&'static str> {
        self.entries.get(kind).and_then(|e| e.param_name)
    }

    pub fn canonical(&self, kind: &str) -> Option<&'static str> {
        self.entries.get(kind).map(|e| e.canonical)
    }
}

/// Serializable description of a choice function. Field layout follows the
/// configuration file: `{"kind": "exponential", "theta": 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl ChoiceSpec {
    pub fn exponential(theta: f64) -> Self {
        Self::with_param("exponential", theta)
    }
    pub fn minimum(c: u32) -> Self {
        Self::with_param("minimum", f64::from(c))
    }
    pub fn polynomial(alpha: f64) -> Self {
        Self::with_param("polynomial", alpha)
    }
    pub fn none() -> Self {
        ChoiceSpec {
            kind: "none".into(),
            theta: None,
            c: None,
            alpha: None,
        }
    }

    /// Builds a spec for any registered family, placing `param` under the
    /// family's own field name.
    pub fn with_param(kind: &str, param: f64) -> Self {
        let mut spec = ChoiceSpec {
            kind: kind.to_string(),
            theta: None,
            c: None,
            alpha: None,
        };
        match ChoiceRegistry::global().param_name(kind) {
            Some("theta") => spec.theta = Some(param),
            Some("c") => spec.c = Some(param),
            Some("alpha") => spec.alpha = Some(param),
            _ => {}
        }
        spec
    }

    pub fn param(&self) -> Option<f64> {
        match ChoiceRegistry::global().param_name(&self.kind) {
            Some("theta") => self.theta,
            Some("c") => self.c,
            Some("alpha") => self.alpha,
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ChoiceFunction>> {
        let registry = ChoiceRegistry::global();
        let kind = registry.canonical(&self.kind).ok_or_else(|| {
            Error::validation(
                "choice.kind",
                format!("unknown kind `{}` (known: {})", self.kind, registry.names().join(", ")),
            )
        })?;
        let expected = registry.param_name(kind);
        for (name, value) in [("theta", self.theta), ("c", self.c), ("alpha", self.alpha)] {
            if value.is_some() && expected != Some(name) {
                return Err(Error::validation(
                    format!("choice.{name}"),
                    format!("not a parameter of kind `{kind}`"),
                ));
            }
        }
        registry.build(kind, self.param())
    }

    /// Canonical form: registry name and only the family's own parameter.
    pub fn normalized(&self) -> Result<ChoiceSpec> {
        let built = self.build()?;
        Ok(match built.param() {
            Some(v) => ChoiceSpec::with_param(built.kind(), v),
            None => ChoiceSpec::none(),
        })
    }
}

/// `g(n)` for a spec, with `n` given as a signed count.
pub fn choice_weight(spec: &ChoiceSpec, n: i64) -> Result<f64> {
    if n < 0 {
        return Err(Error::domain(format!("bike count must be >= 0, got {n}")));
    }
    let n = u32::try_from(n).map_err(|_| Error::domain(format!("bike count {n} too large")))?;
    Ok(spec.build()?.weight(n))
}

/// Weights `g(0..=k_max)` precomputed once per parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceTable {
    weights: Vec<f64>,
}

impl ChoiceTable {
    pub fn new(function: &dyn ChoiceFunction, k_max: u32) -> Self {
        ChoiceTable {
            weights: (0..=k_max).map(|n| function.weight(n)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, n: usize) -> f64 {
        self.weights[n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// True when every weight equals `g(0)`, i.e. information has no effect.
    pub fn is_constant(&self) -> bool {
        self.weights.iter().all(|&w| w == self.weights[0])
    }
}
