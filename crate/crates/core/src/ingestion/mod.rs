//! Adapters for external data: station feeds and arrival-rate series.

mod fourier_fit;
mod gbfs;

pub use fourier_fit::{fit_fourier, read_rate_series, FourierFit, RateSeries};
pub use gbfs::{parse_gbfs, snapshot_histograms, GbfsRecord, GbfsSnapshot, SnapshotHistograms};
