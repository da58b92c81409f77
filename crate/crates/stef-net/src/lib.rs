//! Spatio-temporal passenger demand forecasting.
//!
//! The model predicts the next interval's city-wide demand grid from the
//! previous `k` intervals' demand snapshots and external conditions. It
//! combines four pieces:
//!
//! - a stack of convolutional LSTMs over the demand grids, so spatial and
//!   temporal structure are captured jointly rather than sequentially;
//! - a Gaussian fuzzy network (membership layer + product rule layer) for
//!   the 24-variable external encoding of weather, day-of-week and daylight;
//! - per-step fusion of the two branches by channel concatenation and a
//!   small convolution (a weighted-addition alternative exists for
//!   ablation);
//! - a bidirectional LSTM with per-grid-cell attention over time steps,
//!   followed by a dense stack reshaped back to the grid.
//!
//! Everything runs on a small reverse-mode autodiff engine over dense `f64`
//! tensors ([`tensor`]), so gradients are exact and checkable against
//! finite differences ([`tensor::gradcheck`]).
//!
//! The [`data`] module turns raw ride requests and weather records into
//! scaled, windowed samples (and can synthesize both for desk-scale runs);
//! [`train`] holds the Adam loop and MAE/RMSE evaluation; [`cli`] wires it
//! all into the `stef` binary's `ingest`/`synth`/`train`/`eval` commands.
//!
//! See the crate's `examples/` directory for a runnable tour: gradient
//! checking, dataset synthesis, training, attention export, and ablations.

pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, StefNet};
pub use tensor::{Graph, Tensor, Var};
pub use train::TrainConfig;

