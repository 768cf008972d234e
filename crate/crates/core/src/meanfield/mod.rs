//! The deterministic large-network limit of the empirical measure.

mod drift;
mod integrate;
mod measure;
mod stiff;

pub use drift::{drift, drift_hetero, DriftModel, DriftScalars, DENOMINATOR_FLOOR};
pub use integrate::{
    integrate, integrate_hetero, integrate_hetero_with, integrate_with, stepped_grid, uniform_grid, HeteroSystem, HeteroTrajectory,
    MeanFieldSystem, OdeSystem, Rk4, ShiftedSolve, Trajectory, DEFAULT_STEP, MIN_STEP,
};
pub use stiff::{numeric_jacobian, Rosenbrock23, Solver};
pub use measure::{
    ratio_bin, ratio_projection, total_variation, EmpiricalMeasure, HeterogeneousMeasure, RatioHistogram,
    MASS_TOLERANCE,
};
