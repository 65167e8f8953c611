//! Non-iterative retraining of dense classifier heads.
//!
//! A head is a stack of dense layers (ReLU between them) on top of frozen
//! features. Besides ordinary SGD with momentum, a head can be refit in a
//! single top-down sweep: the output layer by ridge regression on its
//! residual, every lower layer by ridge regression on a target obtained by
//! pulling the residual back through the layer above.

pub mod data;
pub mod error;
pub mod harness;
pub mod head;
pub mod linalg;
pub mod sgdm;

pub use data::{Dataset, GaussianBlobs};
pub use error::{Error, Result};
pub use harness::{compare, evaluate, run, Mode, RunRecord, TrainPlan};
pub use head::{FcHead, FcLayer, ForwardTrace, HeadSpec, RecomputeConfig};
pub use linalg::Matrix;
pub use sgdm::{SgdmConfig, SgdmState};
