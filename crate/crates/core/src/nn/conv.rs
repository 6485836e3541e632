use rand::Rng;

use super::{join, scaled_normal, zeros_param, BatchNorm2d, Parameterized, TensorRole};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct Conv2dLayer<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2dLayer<T> {
    /// Square kernel with He-scaled normal weights and zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let weight = scaled_normal(&[out_channels, in_channels, kernel, kernel], fan_in, 2f64.sqrt(), rng)?;
        Self::from_parts(weight, zeros_param(&[out_channels])?, stride, padding)
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let &[cout, _, kh, kw] = weight.dims() else {
            return Err(Error::Config(format!(
                "conv weight must be rank 4, got {:?}",
                weight.dims()
            )));
        };
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::Config("conv kernel and stride must be positive".into()));
        }
        if bias.dims() != [cout] {
            return Err(Error::Config(format!(
                "conv bias shape {:?} does not match {cout} output channels",
                bias.dims()
            )));
        }
        Ok(Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.dims()[2], self.weight.dims()[3])
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.padding)
    }
}

impl<T: Element> Parameterized<T> for Conv2dLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>)) {
        f(join(prefix, "weight"), TensorRole::Param, &self.weight);
        f(join(prefix, "bias"), TensorRole::Param, &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>)) {
        f(join(prefix, "weight"), TensorRole::Param, &mut self.weight);
        f(join(prefix, "bias"), TensorRole::Param, &mut self.bias);
    }
}

/// Convolution followed by batch normalization and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock<T: Element> {
    pub conv: Conv2dLayer<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Element> ConvBlock<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Result<Self> {
        Ok(ConvBlock {
            conv: Conv2dLayer::new(in_channels, out_channels, 3, 1, 1, rng)?,
            bn: BatchNorm2d::new(out_channels)?,
        })
    }

    /// `relu(bn(conv(x)))` using the batch norm's current mode.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, y)?;
        g.relu(y)
    }

    pub fn forward_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward_eval(g, y)?;
        g.relu(y)
    }
}

impl<T: Element> Parameterized<T> for ConvBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}
