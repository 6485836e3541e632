use rand::Rng;

use super::{join, scaled_normal, zeros_param, Parameterized, TensorRole};
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct LinearLayer<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> LinearLayer<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        Ok(LinearLayer {
            weight: scaled_normal(&[out_features, in_features], in_features, 2f64.sqrt(), rng)?,
            bias: zeros_param(&[out_features])?,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.linear(x, w, Some(b))
    }
}

impl<T: Element> Parameterized<T> for LinearLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>)) {
        f(join(prefix, "weight"), TensorRole::Param, &self.weight);
        f(join(prefix, "bias"), TensorRole::Param, &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>)) {
        f(join(prefix, "weight"), TensorRole::Param, &mut self.weight);
        f(join(prefix, "bias"), TensorRole::Param, &mut self.bias);
    }
}
