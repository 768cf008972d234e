//! Numerical checks of the limit theorems and parameter sweeps over the
//! equilibrium.

mod configs;
mod experiments;
mod nonstationary;
mod output;
mod report;
mod sweep;

pub use configs::{base_config, small_config, toy_arrival, weekday_station_arrival};
pub use experiments::{
    fclt_experiment, flln_experiment, forward_equation_residual, generator, interchange_experiment, Experiment,
    ExperimentRegistry, FcltConfig, FllnConfig, ForwardConfig, InterchangeConfig, TestFunction, VerifyRequest,
};
pub use nonstationary::{amplitude_by_p, nonstationary_run, oscillation_amplitude, periodicity_defect, Frames};
pub use output::{format_real, write_table};
pub use report::{ExperimentReport, Status};
pub use sweep::{sweep, Axis, GridSpec, NodeSummary, PlaneRegistry, Surface, SweepNode, SweepPlane};
