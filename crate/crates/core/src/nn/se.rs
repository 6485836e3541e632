use rand::Rng;

use super::{join, scaled_normal, Parameterized, TensorRole};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_REDUCTION: usize = 16;

/// Squeeze-and-excitation channel gate.
///
/// Each sample's channels are averaged to a descriptor `z`, passed through
/// `relu(w1 z)` and `sigmoid(w2 .)`, and the resulting per-channel gate in
/// (0, 1) rescales the input. Neither projection carries a bias.
#[derive(Clone, Debug)]
pub struct SeBlock<T: Element> {
    /// `[C / r, C]`
    pub w1: Tensor<T>,
    /// `[C, C / r]`
    pub w2: Tensor<T>,
    pub reduction: usize,
}

impl<T: Element> SeBlock<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        let hidden = Self::hidden(channels, reduction)?;
        Ok(SeBlock {
            w1: scaled_normal(&[hidden, channels], channels, 1.0, rng)?,
            w2: scaled_normal(&[channels, hidden], hidden, 1.0, rng)?,
            reduction,
        })
    }

    pub fn from_weights(w1: Tensor<T>, w2: Tensor<T>, reduction: usize) -> Result<Self> {
        let &[hidden, channels] = w1.dims() else {
            return Err(Error::Config(format!("SE w1 must be rank 2, got {:?}", w1.dims())));
        };
        if Self::hidden(channels, reduction)? != hidden || w2.dims() != [channels, hidden] {
            return Err(Error::Config(format!(
                "SE weights {:?} / {:?} inconsistent with reduction {reduction}",
                w1.dims(),
                w2.dims()
            )));
        }
        Ok(SeBlock { w1, w2, reduction })
    }

    fn hidden(channels: usize, reduction: usize) -> Result<usize> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels < reduction {
            return Err(Error::Config(format!(
                "SE channels {channels} not divisible by reduction ratio {reduction}"
            )));
        }
        Ok(channels / reduction)
    }

    pub fn channels(&self) -> usize {
        self.w1.dims()[1]
    }

    /// The gate `s = sigmoid(w2 relu(w1 z))`, shape `[N, C]`.
    pub fn gate(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let dims = g.dims(x);
        if dims.len() != 4 || dims[1] != self.channels() {
            return Err(Error::shape(
                "se_forward",
                "channels",
                format!("block has {} channels, input shape {dims:?}", self.channels()),
            ));
        }
        let z = g.global_avg_pool(x)?;
        let w1 = g.param(&self.w1);
        let w2 = g.param(&self.w2);
        let reduced = g.linear(z, w1, None)?;
        let reduced = g.relu(reduced)?;
        let expanded = g.linear(reduced, w2, None)?;
        g.sigmoid(expanded)
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = self.gate(g, x)?;
        g.mul_broadcast_channel(x, s)
    }
}

impl<T: Element> Parameterized<T> for SeBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>)) {
        f(join(prefix, "w1"), TensorRole::Param, &self.w1);
        f(join(prefix, "w2"), TensorRole::Param, &self.w2);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>)) {
        f(join(prefix, "w1"), TensorRole::Param, &mut self.w1);
        f(join(prefix, "w2"), TensorRole::Param, &mut self.w2);
    }
}
