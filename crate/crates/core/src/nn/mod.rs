//! Layers built on the tape: linear maps, GRUs, additive attention,
//! dropout, the masked sequence loss, and Adam.

mod adam;
mod attention;
mod dropout;
mod gru;
mod linear;
mod loss;
mod params;
pub mod serialize;

pub use adam::Adam;
pub use attention::Attention;
pub use dropout::dropout;
pub use gru::{Gru, GruDirection};
pub use linear::Linear;
pub use loss::{cross_entropy, mask_labels};
pub use params::{Bindings, ParamId, ParamStore};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("parameter format: {0}")]
    Format(String),
    #[error("{0}")]
    Contract(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
