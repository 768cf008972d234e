use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CapacityDistribution;

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOLERANCE: f64 = 1e-10;

fn check_probability(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::domain(format!("{what} is empty")));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::domain(format!("{what} entry {i} is {v}")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::domain(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Fraction of stations holding `n` bikes, `n = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmpiricalMeasure(Vec<f64>);

impl EmpiricalMeasure {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_probability(&values, "empirical measure")?;
        Ok(EmpiricalMeasure(values))
    }

    /// Wraps a vector without checking it lies on the simplex.
    pub fn new_unchecked(values: Vec<f64>) -> Self {
        EmpiricalMeasure(values)
    }

    pub fn uniform(k: u32) -> Self {
        let len = k as usize + 1;
        EmpiricalMeasure(vec![1.0 / len as f64; len])
    }

    pub fn mass_at(k: u32, n: u32) -> Result<Self> {
        if n > k {
            return Err(Error::domain(format!("mass at {n} outside 0..={k}")));
        }
        let mut v = vec![0.0; k as usize + 1];
        v[n as usize] = 1.0;
        Ok(EmpiricalMeasure(v))
    }

    pub fn capacity(&self) -> u32 {
        (self.0.len() - 1) as u32
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Mean number of bikes per station, `Σ n·yₙ`.
    pub fn mean(&self) -> f64 {
        self.0.iter().enumerate().map(|(n, y)| n as f64 * y).sum()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Index<usize> for EmpiricalMeasure {
    type Output = f64;
    fn index(&self, n: usize) -> &f64 {
        &self.0[n]
    }
}

/// Joint fraction of stations with `n` bikes and capacity `k`, one row per
/// capacity class. Row `c` has `capacities[c] + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneousMeasure {
    capacities: Vec<u32>,
    rows: Vec<Vec<f64>>,
}

impl HeterogeneousMeasure {
    pub fn new(capacities: Vec<u32>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let table = Self::new_unchecked(capacities, rows)?;
        let flat: Vec<f64> = table.rows.iter().flatten().copied().collect();
        check_probability(&flat, "heterogeneous measure")?;
        Ok(table)
    }

    /// Checks only the shape of the table.
    pub fn new_unchecked(capacities: Vec<u32>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if capacities.is_empty() || capacities.len() != rows.len() {
            return Err(Error::domain("capacity classes and rows do not match"));
        }
        for (k, row) in capacities.iter().zip(&rows) {
            if row.len() != *k as usize + 1 {
                return Err(Error::domain(format!(
                    "row for capacity {k} has {} entries",
                    row.len()
                )));
            }
        }
        Ok(HeterogeneousMeasure { capacities, rows })
    }

    /// Every class uniform over `0..=k`, weighted by its fraction.
    pub fn uniform(dist: &CapacityDistribution) -> Self {
        let rows = dist
            .values()
            .iter()
            .zip(dist.fractions())
            .map(|(&k, &w)| vec![w / (k as f64 + 1.0); k as usize + 1])
            .collect();
        HeterogeneousMeasure {
            capacities: dist.values().to_vec(),
            rows,
        }
    }

    /// Every station of class `k` holds `min(n, k)` bikes.
    pub fn mass_at(dist: &CapacityDistribution, n: u32) -> Self {
        let rows = dist
            .values()
            .iter()
            .zip(dist.fractions())
            .map(|(&k, &w)| {
                let mut row = vec![0.0; k as usize + 1];
                row[n.min(k) as usize] = w;
                row
            })
            .collect();
        HeterogeneousMeasure {
            capacities: dist.values().to_vec(),
            rows,
        }
    }

    /// Single-class table from an empirical measure.
    pub fn from_uniform(y: &EmpiricalMeasure) -> Self {
        HeterogeneousMeasure {
            capacities: vec![y.capacity()],
            rows: vec![y.as_slice().to_vec()],
        }
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.rows[class]
    }

    /// `ỹ(n, k)`, zero for capacities outside the table or `n > k`.
    pub fn get(&self, n: u32, k: u32) -> f64 {
        self.capacities
            .iter()
            .position(|&c| c == k)
            .and_then(|c| self.rows[c].get(n as usize).copied())
            .unwrap_or(0.0)
    }

    /// Total mass of each capacity class.
    pub fn class_masses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().flatten().sum()
    }

    /// Mean bikes per station over the whole network.
    pub fn mean(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter().enumerate().map(|(n, y)| n as f64 * y))
            .sum()
    }

    pub fn k_max(&self) -> u32 {
        self.capacities.iter().copied().max().unwrap_or(0)
    }

    /// The single class as an empirical measure.
    pub fn collapse(&self) -> Option<EmpiricalMeasure> {
        (self.rows.len() == 1).then(|| EmpiricalMeasure(self.rows[0].clone()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    /// Rebuilds a table with the same shape from a flat vector.
    pub fn with_values(&self, flat: &[f64]) -> Self {
        let mut offset = 0;
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let row = flat[offset..offset + r.len()].to_vec();
                offset += r.len();
                row
            })
            .collect();
        HeterogeneousMeasure {
            capacities: self.capacities.clone(),
            rows,
        }
    }
}

/// Fraction of stations per fill-ratio bin, `K_max + 1` bins; the last bin
/// holds full stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatioHistogram(Vec<f64>);

impl RatioHistogram {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_probability(&values, "ratio histogram")?;
        Ok(RatioHistogram(values))
    }

    pub fn new_unchecked(values: Vec<f64>) -> Self {
        RatioHistogram(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Bin `⌊n·K_max/k⌋` of a station with `n` bikes and capacity `k`.
pub fn ratio_bin(n: u32, k: u32, k_max: u32) -> Result<usize> {
    if k == 0 || k > k_max {
        return Err(Error::domain(format!("capacity {k} outside 1..={k_max}")));
    }
    if n > k {
        return Err(Error::domain(format!("{n} bikes exceed capacity {k}")));
    }
    Ok((u64::from(n) * u64::from(k_max) / u64::from(k)) as usize)
}

/// Maps a joint (count, capacity) table to ratio bins. Total mass is
/// preserved exactly up to summation order.
pub fn ratio_projection(table: &HeterogeneousMeasure, k_max: u32) -> Result<RatioHistogram> {
    let mut bins = vec![0.0; k_max as usize + 1];
    for (&k, row) in table.capacities().iter().zip(table.rows()) {
        for (n, &v) in row.iter().enumerate() {
            bins[ratio_bin(n as u32, k, k_max)?] += v;
        }
    }
    Ok(RatioHistogram(bins))
}

/// Total-variation distance `½ Σ |a − b|`; vectors of different length are
/// padded with zeros.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    0.5 * (0..len)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
