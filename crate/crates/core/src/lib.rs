//! Deterministic desk-scale simulator for federated deep learning.
//!
//! The crate bundles hand-written models with exact gradients (an MLP and a
//! multi-view GRU with FC, FM and MVM fusion heads), the protocol state
//! machines for distributed selective SGD, federated averaging and
//! differentially private federated averaging, a moments accountant, synthetic
//! data generators and an experiment harness.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to `f64`,
//! which is what the harness uses.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datagen;
pub mod error;
pub mod federation;
pub mod harness;
pub mod linalg;
pub mod loss;
pub mod models;
pub mod privacy;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use rng::SimRng;
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Vector = linalg::Vector<f64>;
pub type ParamVector = models::ParamVector<f64>;
pub type MlpModel = models::MlpModel<f64>;
pub type GruCell = models::GruCell<f64>;
pub type FusionHead = models::FusionHead<f64>;
pub type MultiViewGruModel = models::MultiViewGruModel<f64>;
pub type ViewSequences = models::ViewSequences<f64>;
