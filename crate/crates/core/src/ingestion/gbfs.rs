//! Station status / station information feeds in the public GBFS layout
//! (`data.stations[]` with `station_id`, `num_bikes_available`, `capacity`).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{ratio_bin, RatioHistogram};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum StationId {
    Text(String),
    Number(i64),
}

impl StationId {
    fn into_string(self) -> String {
        match self {
            StationId::Text(s) => s,
            StationId::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Feed<T> {
    #[serde(default)]
    last_updated: Option<i64>,
    data: Stations<T>,
}

#[derive(Debug, Deserialize)]
struct Stations<T> {
    stations: Vec<T>,
}

#[derive(Debug, Deserialize)]
struct StatusEntry {
    station_id: StationId,
    num_bikes_available: i64,
    #[serde(default)]
    last_reported: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct InfoEntry {
    station_id: StationId,
    #[serde(default)]
    capacity: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GbfsRecord {
    pub station_id: String,
    pub bikes_available: u32,
    pub capacity: u32,
    /// Epoch seconds; the station's report time when present, else the
    /// feed's.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GbfsSnapshot {
    pub records: Vec<GbfsRecord>,
    /// Stations present in only one document, or without a usable capacity.
    pub dropped: usize,
    /// Stations reporting more bikes than docks, clamped to capacity.
    pub clamped: usize,
}

fn parse_doc<T: serde::de::DeserializeOwned>(text: &str, which: &str) -> Result<Feed<T>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: format!("{which}:{}", e.path()),
        message: e.inner().to_string(),
    })
}

/// Joins a station_status document with a station_information document.
/// Records keep the order of the status document.
pub fn parse_gbfs(status_document: &str, information_document: &str) -> Result<GbfsSnapshot> {
    let status: Feed<StatusEntry> = parse_doc(status_document, "station_status")?;
    let info: Feed<InfoEntry> = parse_doc(information_document, "station_information")?;
    let mut capacity: HashMap<String, Option<i64>> = HashMap::new();
    for entry in info.data.stations {
        capacity.insert(entry.station_id.into_string(), entry.capacity);
    }
    let status_len = status.data.stations.len();
    let mut records = Vec::new();
    let mut matched = 0;
    let mut clamped = 0;
    for (i, entry) in status.data.stations.into_iter().enumerate() {
        let id = entry.station_id.into_string();
        if entry.num_bikes_available < 0 {
            return Err(Error::Parse {
                path: format!("station_status:data.stations[{i}].num_bikes_available"),
                message: format!("negative count {}", entry.num_bikes_available),
            });
        }
        let Some(cap) = capacity.get(&id) else {
            continue;
        };
        matched += 1;
        let Some(cap) = cap.filter(|c| *c >= 1) else {
            continue;
        };
        let cap = u32::try_from(cap).map_err(|_| Error::Parse {
            path: format!("station_information:{id}.capacity"),
            message: "capacity too large".into(),
        })?;
        let mut bikes = u32::try_from(entry.num_bikes_available).unwrap_or(u32::MAX);
        if bikes > cap {
            log::warn!("station {id} reports {bikes} bikes for {cap} docks; clamped");
            bikes = cap;
            clamped += 1;
        }
        records.push(GbfsRecord {
            station_id: id,
            bikes_available: bikes,
            capacity: cap,
            timestamp: entry.last_reported.or(status.last_updated).unwrap_or(0),
        });
    }
    let unmatched_info = capacity.len().saturating_sub(matched);
    let dropped = (status_len - records.len()) + unmatched_info;
    if records.is_empty() {
        return Err(Error::domain("no station appears in both documents with a positive capacity"));
    }
    Ok(GbfsSnapshot {
        records,
        dropped,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHistograms {
    /// Fraction of stations holding `n` bikes, `n = 0..=max capacity`.
    pub counts: Vec<f64>,
    pub ratio: RatioHistogram,
    pub k_max: u32,
}

/// Bike-count and fill-ratio histograms of a snapshot. `k_max` defaults to
/// the largest capacity.
pub fn snapshot_histograms(snapshot: &GbfsSnapshot, k_max: Option<u32>) -> Result<SnapshotHistograms> {
    if snapshot.records.is_empty() {
        return Err(Error::domain("empty snapshot"));
    }
    let max_cap = snapshot.records.iter().map(|r| r.capacity).max().unwrap_or(1);
    let k_max = k_max.unwrap_or(max_cap);
    let w = 1.0 / snapshot.records.len() as f64;
    let mut counts = vec![0.0; max_cap as usize + 1];
    let mut ratio = vec![0.0; k_max as usize + 1];
    for r in &snapshot.records {
        counts[r.bikes_available as usize] += w;
        ratio[ratio_bin(r.bikes_available, r.capacity, k_max)?] += w;
    }
    Ok(SnapshotHistograms {
        counts,
        ratio: RatioHistogram::new_unchecked(ratio),
        k_max,
    })
}
