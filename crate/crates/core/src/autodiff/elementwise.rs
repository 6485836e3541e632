use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Logistic function, kept strictly inside (0, 1) for every finite input.
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let two = T::one() + T::one();
    s.max(T::min_positive_value()).min(T::one() - T::epsilon() / two)
}

pub(crate) fn mul_channel_backward<T: Element>(dims: &[usize], x: &[T], s: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let hw = dims[2] * dims[3];
    let mut dx = Vec::with_capacity(x.len());
    let mut ds = Vec::with_capacity(s.len());
    for ((xp, gp), &sc) in x.chunks_exact(hw).zip(dy.chunks_exact(hw)).zip(s) {
        dx.extend(gp.iter().map(|&g| g * sc));
        ds.push(xp.iter().zip(gp).map(|(&a, &g)| a * g).sum());
    }
    (dx, ds)
}

impl<T: Element> Graph<T> {
    fn unary(&mut self, input: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let xi = self.index(input)?;
        let x = self.node_value(xi);
        let shape = x.shape().clone();
        let out = x.values().iter().map(|&v| f(v)).collect();
        Ok(self.push(shape, out, op(xi)))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (da, db) = (self.node_value(a).dims(), self.node_value(b).dims());
        if da != db {
            return Err(Error::shape(op, "operands", format!("{da:?} vs {db:?}")));
        }
        Ok(())
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.unary(input, |v| v.max(T::zero()), |input| Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.unary(input, sigmoid, |input| Op::Sigmoid { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        self.same_shape("add", ai, bi)?;
        let shape = self.node_value(ai).shape().clone();
        let out = self
            .node_value(ai)
            .values()
            .iter()
            .zip(self.node_value(bi).values())
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(shape, out, Op::Add { a: ai, b: bi }))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.index(a)?, self.index(b)?);
        self.same_shape("mul", ai, bi)?;
        let shape = self.node_value(ai).shape().clone();
        let out = self
            .node_value(ai)
            .values()
            .iter()
            .zip(self.node_value(bi).values())
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(shape, out, Op::Mul { a: ai, b: bi }))
    }

    /// Scales every spatial position of channel `c` in sample `n` by `s[n, c]`.
    pub fn mul_broadcast_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xi, si) = (self.index(x)?, self.index(s)?);
        let (xv, sv) = (self.node_value(xi), self.node_value(si));
        let &[n, c, h, w] = xv.dims() else {
            return Err(Error::shape(
                "mul_broadcast_channel",
                "input rank",
                format!("expected 4, got {:?}", xv.dims()),
            ));
        };
        if sv.dims() != [n, c] {
            return Err(Error::shape(
                "mul_broadcast_channel",
                "gate",
                format!("expected [{n}, {c}], got {:?}", sv.dims()),
            ));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(xv.numel());
        for (plane, &sc) in xv.values().chunks_exact(hw).zip(sv.values()) {
            out.extend(plane.iter().map(|&v| v * sc));
        }
        let shape = xv.shape().clone();
        Ok(self.push(shape, out, Op::MulChannel { x: xi, s: si }))
    }
}
