//! Predictive coding of federated-learning model updates.
//!
//! Each worker predicts its post-training weights from the broadcast global
//! model and its own update history, quantizes the prediction residual and
//! entropy-codes the quantized levels. The server keeps a mirror of every
//! predictor memory, so it can rebuild the same prediction and reconstruct
//! the weights exactly as the worker did.
//!
//! The crate also contains a small federated simulator (local training,
//! non-i.i.d. partitioning, a wireless uplink model) and numeric checks of
//! the supporting theory.

pub mod channel;
pub mod config;
pub mod experiment;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod learner;
pub mod orchestrator;
pub mod param;
pub mod predictor;
pub mod quantizer;
pub mod theory;
pub mod verify;

pub use error::{DecodeStage, Error, Result};
pub use config::ExperimentConfig;
pub use param::ParamVector;
