pub mod bench;
pub mod error;
pub mod lora;
pub mod ndlinear;
pub mod nn;
pub mod oracle;
pub mod tensor;
pub mod verify;

pub use crate::error::{Error, Result};
pub use crate::ndlinear::{LayerCache, NdLinearGrads, NdLinearLayer};
pub use crate::tensor::{FlopCounter, Rng, Shape, Tensor};
