use rand::Rng;

use super::{join, BatchNorm2d, Conv2dLayer, Mode, Parameterized, TensorRole};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShortcutKind {
    Identity,
    Projection,
}

#[derive(Clone, Debug)]
pub enum Shortcut<T: Element> {
    Identity,
    /// 1x1 strided convolution followed by batch norm.
    Projection {
        conv: Conv2dLayer<T>,
        bn: BatchNorm2d<T>,
    },
}

/// Basic residual block: `relu(H(x) + shortcut(x))` with
/// `H = bn_b . conv_b . relu . bn_a . conv_a` and 3x3 convolutions.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Element> {
    pub conv_a: Conv2dLayer<T>,
    pub bn_a: BatchNorm2d<T>,
    pub conv_b: Conv2dLayer<T>,
    pub bn_b: BatchNorm2d<T>,
    pub shortcut: Shortcut<T>,
    pub stride: usize,
}

impl<T: Element> ResidualBlock<T> {
    /// Uses an identity shortcut when shapes allow it, a projection otherwise.
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Result<Self> {
        let kind = if in_channels == out_channels && stride == 1 {
            ShortcutKind::Identity
        } else {
            ShortcutKind::Projection
        };
        Self::with_shortcut(in_channels, out_channels, stride, kind, rng)
    }

    pub fn with_shortcut<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        kind: ShortcutKind,
        rng: &mut R,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("residual stride must be positive".into()));
        }
        if kind == ShortcutKind::Identity && (in_channels != out_channels || stride != 1) {
            return Err(Error::Config(format!(
                "identity shortcut needs equal channels and stride 1, got {in_channels}->{out_channels} stride {stride}"
            )));
        }
        let conv_a = Conv2dLayer::new(in_channels, out_channels, 3, stride, 1, rng)?;
        let conv_b = Conv2dLayer::new(out_channels, out_channels, 3, 1, 1, rng)?;
        let shortcut = match kind {
            ShortcutKind::Identity => Shortcut::Identity,
            ShortcutKind::Projection => Shortcut::Projection {
                conv: Conv2dLayer::new(in_channels, out_channels, 1, stride, 0, rng)?,
                bn: BatchNorm2d::new(out_channels)?,
            },
        };
        Ok(ResidualBlock {
            conv_a,
            bn_a: BatchNorm2d::new(out_channels)?,
            conv_b,
            bn_b: BatchNorm2d::new(out_channels)?,
            shortcut,
            stride,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv_a.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv_b.out_channels()
    }

    pub fn shortcut_kind(&self) -> ShortcutKind {
        match self.shortcut {
            Shortcut::Identity => ShortcutKind::Identity,
            Shortcut::Projection { .. } => ShortcutKind::Projection,
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.bn_a.mode = mode;
        self.bn_b.mode = mode;
        if let Shortcut::Projection { bn, .. } = &mut self.shortcut {
            bn.mode = mode;
        }
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.conv_a.forward(g, x)?;
        let h = self.bn_a.forward(g, h)?;
        let h = g.relu(h)?;
        let h = self.conv_b.forward(g, h)?;
        let h = self.bn_b.forward(g, h)?;
        let s = match &mut self.shortcut {
            Shortcut::Identity => x,
            Shortcut::Projection { conv, bn } => {
                let s = conv.forward(g, x)?;
                bn.forward(g, s)?
            }
        };
        let sum = g.add(h, s)?;
        g.relu(sum)
    }

    pub fn forward_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.conv_a.forward(g, x)?;
        let h = self.bn_a.forward_eval(g, h)?;
        let h = g.relu(h)?;
        let h = self.conv_b.forward(g, h)?;
        let h = self.bn_b.forward_eval(g, h)?;
        let s = self.shortcut_eval(g, x)?;
        let sum = g.add(h, s)?;
        g.relu(sum)
    }

    /// The shortcut branch alone, with running batch-norm statistics.
    pub fn shortcut_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match &self.shortcut {
            Shortcut::Identity => Ok(x),
            Shortcut::Projection { conv, bn } => {
                let s = conv.forward(g, x)?;
                bn.forward_eval(g, s)
            }
        }
    }
}

impl<T: Element> Parameterized<T> for ResidualBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &'a Tensor<T>)) {
        self.conv_a.visit(&join(prefix, "conv_a"), f);
        self.bn_a.visit(&join(prefix, "bn_a"), f);
        self.conv_b.visit(&join(prefix, "conv_b"), f);
        self.bn_b.visit(&join(prefix, "bn_b"), f);
        if let Shortcut::Projection { conv, bn } = &self.shortcut {
            conv.visit(&join(prefix, "shortcut.conv"), f);
            bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, TensorRole, &mut Tensor<T>)) {
        self.conv_a.visit_mut(&join(prefix, "conv_a"), f);
        self.bn_a.visit_mut(&join(prefix, "bn_a"), f);
        self.conv_b.visit_mut(&join(prefix, "conv_b"), f);
        self.bn_b.visit_mut(&join(prefix, "bn_b"), f);
        if let Shortcut::Projection { conv, bn } = &mut self.shortcut {
            conv.visit_mut(&join(prefix, "shortcut.conv"), f);
            bn.visit_mut(&join(prefix, "shortcut.bn"), f);
        }
    }
}
