//! Traffic state estimation toolkit: reconstructs space-time density fields
//! from sparse loop-detector data by training a tanh network against an
//! encoded LWR conservation law, with joint discovery of unknown model
//! parameters. Ships the ground-truth finite-volume simulator, an extended
//! Kalman filter baseline, a pure-network baseline, and fundamental-diagram
//! calibration.

pub mod autodiff;
pub mod error;
pub mod flux;
pub mod godunov;
pub mod grid;
pub mod net;

pub use error::{Result, TseError};
pub use flux::{FluxModel, GreenshieldsParams, ThreeParamParams};
pub use godunov::{godunov_flux, solve, DensityField, InitialCondition};
pub use net::{eval_with_input_derivs, forward, EvalBundle, NetParams, NetSpec};
pub use grid::{
    observe_initial_row, sample_auxiliary, sample_boundary_pairs, sample_observations,
    DetectorLayout, Grid, PointKind, PointSet,
};
