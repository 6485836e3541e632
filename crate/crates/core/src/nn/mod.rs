//! Parameterized building blocks of the network.

mod batchnorm;
mod conv;
mod linear;
mod residual;
mod se;

use rand::Rng;

use crate::tensor::{Element, Tensor};
use crate::Result;

pub use batchnorm::{BatchNorm2d, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use conv::{Conv2dLayer, ConvBlock};
pub use linear::LinearLayer;
pub use residual::{ResidualBlock, Shortcut, ShortcutKind};
pub use se::{SeBlock, DEFAULT_REDUCTION};

/// Batch-norm behaviour: batch statistics (and running updates) or running statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Whether a named tensor is learned by the optimizer or is a tracked statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    Buffer,
}

/// Enumeration of the tensors a layer owns, in a fixed order.
pub trait Parameterized<T: Element> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Zero-mean normal weights with standard deviation `gain / sqrt(fan_in)`.
pub(crate) fn scaled_normal<T: Element, R: Rng + ?Sized>(
    dims: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let std = gain / (fan_in as f64).sqrt();
    Ok(Tensor::randn(dims.to_vec(), std, rng)?.with_requires_grad(true))
}

pub(crate) fn zeros_param<T: Element>(dims: &[usize]) -> Result<Tensor<T>> {
    Ok(Tensor::zeros(dims.to_vec())?.with_requires_grad(true))
}
