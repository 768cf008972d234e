//! Domain types shared by every layer: choice functions, arrival rates and
//! validated system parameters.

mod arrival;
mod choice;
mod params;

pub use arrival::{arrival_rate, ArrivalModel, FourierRateModel, RATE_GRID_STEP};
pub use choice::{
    choice_weight, ChoiceFunction, ChoiceRegistry, ChoiceSpec, ChoiceTable, Exponential, Indifferent, Minimum,
    Polynomial,
};
pub use params::{validate_params, CapacityDistribution, CapacitySpec, RawConfig, SystemParams};
