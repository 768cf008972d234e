use crate::error::{Error, Result};
use crate::meanfield::{EmpiricalMeasure, HeterogeneousMeasure};
use crate::model::SystemParams;

/// Bikes docked at every station plus the number in transit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkState {
    counts: Vec<u32>,
    capacities: Vec<u32>,
    fleet: u64,
    in_circulation: u64,
    /// Clock in hours, stored as bits so the state stays `Eq`.
    t_bits: u64,
}

impl NetworkState {
    pub fn new(counts: Vec<u32>, capacities: Vec<u32>, fleet: u64, t: f64) -> Result<Self> {
        if counts.len() != capacities.len() {
            return Err(Error::domain(format!(
                "{} counts for {} stations",
                counts.len(),
                capacities.len()
            )));
        }
        if counts.is_empty() {
            return Err(Error::domain("network has no stations"));
        }
        if let Some(i) = capacities.iter().position(|k| *k == 0) {
            return Err(Error::domain(format!("station {i} has capacity 0")));
        }
        if let Some(i) = counts.iter().zip(&capacities).position(|(x, k)| x > k) {
            return Err(Error::domain(format!(
                "station {i} holds {} bikes but its capacity is {}",
                counts[i], capacities[i]
            )));
        }
        let docked: u64 = counts.iter().map(|&x| u64::from(x)).sum();
        if docked > fleet {
            return Err(Error::domain(format!("{docked} docked bikes exceed the fleet of {fleet}")));
        }
        if !t.is_finite() {
            return Err(Error::domain("clock must be finite"));
        }
        Ok(NetworkState {
            counts,
            capacities,
            fleet,
            in_circulation: fleet - docked,
            t_bits: t.to_bits(),
        })
    }

    /// Station capacities for `params`: classes in increasing order, sizes
    /// from largest-remainder rounding of the class fractions.
    pub fn station_capacities(params: &SystemParams) -> Vec<u32> {
        let dist = &params.capacity;
        dist.values()
            .iter()
            .zip(dist.station_counts(params.n_stations))
            .flat_map(|(&k, n)| std::iter::repeat_n(k, n))
            .collect()
    }

    /// Places the fleet one bike per station per pass until every bike is
    /// docked or every station is full.
    pub fn round_robin(params: &SystemParams) -> Self {
        let capacities = Self::station_capacities(params);
        let mut counts = vec![0u32; capacities.len()];
        let mut left = params.fleet;
        let mut placed = true;
        while left > 0 && placed {
            placed = false;
            for (x, k) in counts.iter_mut().zip(&capacities) {
                if left == 0 {
                    break;
                }
                if *x < *k {
                    *x += 1;
                    left -= 1;
                    placed = true;
                }
            }
        }
        NetworkState::new(counts, capacities, params.fleet, 0.0).expect("round-robin placement is valid")
    }

    /// Station counts matching `table` as closely as integer rounding allows
    /// (largest remainder within each class). Bikes not docked are in transit.
    pub fn from_table(params: &SystemParams, table: &HeterogeneousMeasure) -> Result<Self> {
        if table.capacities() != params.capacity.values() {
            return Err(Error::domain("table classes differ from configured capacities"));
        }
        let class_sizes = params.capacity.station_counts(params.n_stations);
        let mut counts = Vec::with_capacity(params.n_stations);
        let mut capacities = Vec::with_capacity(params.n_stations);
        for ((&k, row), size) in table.capacities().iter().zip(table.rows()).zip(class_sizes) {
            let mass: f64 = row.iter().sum();
            let shares: Vec<f64> = if mass > 0.0 {
                row.iter().map(|v| v / mass * size as f64).collect()
            } else {
                let mut v = vec![0.0; row.len()];
                v[0] = size as f64;
                v
            };
            for (n, m) in largest_remainder(&shares, size).into_iter().enumerate() {
                counts.extend(std::iter::repeat_n(n as u32, m));
                capacities.extend(std::iter::repeat_n(k, m));
            }
        }
        NetworkState::new(counts, capacities, params.fleet, 0.0)
    }

    pub fn from_measure(params: &SystemParams, y: &EmpiricalMeasure) -> Result<Self> {
        Self::from_table(params, &HeterogeneousMeasure::from_uniform(y))
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn n_stations(&self) -> usize {
        self.counts.len()
    }

    pub fn fleet(&self) -> u64 {
        self.fleet
    }

    pub fn in_circulation(&self) -> u64 {
        self.in_circulation
    }

    pub fn t(&self) -> f64 {
        f64::from_bits(self.t_bits)
    }

    pub fn docked(&self) -> u64 {
        self.counts.iter().map(|&x| u64::from(x)).sum()
    }

    pub fn k_max(&self) -> u32 {
        self.capacities.iter().copied().max().unwrap_or(0)
    }
}

/// Integer counts summing to `total`, closest to `shares` (which sum to
/// `total`) by largest remainder; ties go to the lower index.
fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = shares.iter().map(|s| s.max(0.0).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= total {
        for &i in order.iter().cycle().take(total - assigned) {
            counts[i] += 1;
        }
    } else {
        let mut excess = assigned - total;
        for &i in order.iter().rev().cycle() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}
