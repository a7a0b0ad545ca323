//! Graph Kalman filtering for spatiotemporal time series.
//!
//! A learned graph state-space model (encoder, message-passing transition,
//! readout) is paired with an extended Kalman filter whose Jacobians come
//! from the model itself. Training fits the model by open-loop prediction;
//! the filter then refines predictions online from incoming observations.

pub mod diffable;
pub mod error;
pub mod experiment;
pub mod gkf;
pub mod graph;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
pub use gkf::{gkf_run, gkf_step, GkfConfig, GkfStep, GkfTrace, NoiseCov};
pub use graph::GraphTopology;
pub use linalg::{Matrix, Tensor3};
pub use models::{AnyModel, GssModel, ModelFamily};
pub use sim::{Episode, GeneratorConfig};
pub use training::{train, TrainConfig, TrainReport};
