//! Calibration metrics, differentiable calibration objectives and
//! meta-learned focal loss γ.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod focal;
pub mod gammanet;
pub mod metatrain;
pub mod metrics;
pub mod optim;
pub mod posthoc;
pub mod report;
pub mod smoothcal;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::Tensor;
