//! Mean-preserving rounded ARMA models for integer-valued time series.

pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod innovations;
pub mod model;
pub mod optim;
pub mod pmf;
pub mod rounding;
pub mod special;
pub mod star;
pub mod stationary;
pub mod study;

pub use error::{Error, Result};
pub use innovations::{InnovationModel, Skellam, TabulatedPmf};
pub use model::{History, MrarmaSpec, SimOptions, SimOutput, StationarityCheck, YuleWalker};
pub use pmf::{IntPmf, IntWindow};
pub use rounding::{
    round_dist, round_sample, scaled_round_dist, scaled_round_pmf, split, FractionalSplit, TwoPointDist,
};
pub use star::MrarmaStarSpec;
pub use stationary::{mrar1_stationary, mrar1_transition_matrix, mrma1_marginal, StationaryDist};
