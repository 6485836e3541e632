//! ResEmoteNet: a convolutional facial-emotion classifier built on a small
//! reverse-mode autodiff engine.
//!
//! The crate covers the whole pipeline: tensors and differentiable
//! primitives ([`autodiff`]), the architectural units ([`nn`]), the assembled
//! network ([`model`]), cross-entropy and SGD with a reduce-on-plateau schedule
//! ([`optim`]), dataset ingestion ([`data`]), evaluation ([`metrics`]),
//! persistence ([`checkpoint`]), run configuration ([`config`]) and the
//! training loop ([`train`]).

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autodiff::{Fault, Graph, OpKind, Var};
pub use error::{Error, Result};
pub use model::{Logits, ModelConfig, ResEmoteNet};
pub use tensor::{DType, Element, Shape, Tensor};
