//! Market models, exercise grids, payoffs and path simulation.

mod grid;
mod model;
mod paths;
mod payoff;

pub use grid::TimeGrid;
pub use model::{GbmSpec, HestonSpec, Model, Stepper};
pub use paths::{
    simulate, simulate_capped, simulate_gbm, simulate_heston, PathBatch, PathBlock,
    DEFAULT_MEMORY_CAP,
};
pub use payoff::{discount, Payoff, PayoffKind};
