use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape};

pub(crate) fn forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut out = match bias {
        Some(b) => b.iter().copied().cycle().take(n * dout).collect(),
        None => vec![T::zero(); n * dout],
    };
    // out[n, dout] += x[n, din] * w^T
    T::gemm(
        n,
        din,
        dout,
        T::one(),
        (x, din as isize, 1),
        (w, 1, din as isize),
        T::one(),
        (&mut out, dout as isize, 1),
    );
    out
}

pub(crate) fn grad_input<T: Element>(dy: &[T], w: &[T], n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); n * din];
    T::gemm(
        n,
        dout,
        din,
        T::one(),
        (dy, dout as isize, 1),
        (w, din as isize, 1),
        T::zero(),
        (&mut dx, din as isize, 1),
    );
    dx
}

pub(crate) fn grad_weight<T: Element>(dy: &[T], x: &[T], n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut dw = vec![T::zero(); dout * din];
    T::gemm(
        dout,
        n,
        din,
        T::one(),
        (dy, 1, dout as isize),
        (x, din as isize, 1),
        T::zero(),
        (&mut dw, din as isize, 1),
    );
    dw
}

pub(crate) fn grad_bias<T: Element>(dy: &[T], n: usize, dout: usize) -> Vec<T> {
    let mut db = vec![T::zero(); dout];
    for row in dy.chunks_exact(dout).take(n) {
        db.iter_mut().zip(row).for_each(|(d, &g)| *d = *d + g);
    }
    db
}

impl<T: Element> Graph<T> {
    /// `input * weight^T + bias` for `input: [N, Din]`, `weight: [Dout, Din]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.index(input)?, self.index(weight)?);
        let bi = bias.map(|b| self.index(b)).transpose()?;
        let (x, w) = (self.node_value(xi), self.node_value(wi));
        let &[n, din] = x.dims() else {
            return Err(Error::shape(
                "linear",
                "input rank",
                format!("expected 2, got {:?}", x.dims()),
            ));
        };
        let &[dout, w_in] = w.dims() else {
            return Err(Error::shape(
                "linear",
                "weight rank",
                format!("expected 2, got {:?}", w.dims()),
            ));
        };
        if w_in != din {
            return Err(Error::shape(
                "linear",
                "in_features",
                format!("input has {din}, weight expects {w_in}"),
            ));
        }
        let b = match bi {
            Some(bi) => {
                let b = self.node_value(bi);
                if b.dims() != [dout] {
                    return Err(Error::shape(
                        "linear",
                        "bias",
                        format!("expected [{dout}], got {:?}", b.dims()),
                    ));
                }
                Some(b.values())
            }
            None => None,
        };
        let out = forward(x.values(), w.values(), b, n, din, dout);
        Ok(self.push(
            Shape::new([n, dout])?,
            out,
            Op::Linear {
                input: xi,
                weight: wi,
                bias: bi,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_weight_passes_input() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::from_vec([2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap());
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 4] = 1.0);
        let w = g.leaf(&Tensor::from_vec([3, 3], eye).unwrap());
        let b = g.leaf(&Tensor::zeros([3]).unwrap());
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).values(), g.value(x).values());
    }

    #[test]
    fn zero_weight_passes_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::from_vec([1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.leaf(&Tensor::zeros([1, 2]).unwrap());
        let b = g.leaf(&Tensor::from_vec([1], vec![5.0]).unwrap());
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).values(), &[5.0]);
    }

    #[test]
    fn mismatched_inner_dimension() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::zeros([1, 2]).unwrap());
        let w = g.leaf(&Tensor::zeros([4, 3]).unwrap());
        let err = g.linear(x, w, None).unwrap_err();
        assert!(err.to_string().contains("in_features"));
    }
}
