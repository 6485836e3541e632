//! 2-D convolution via batched im2col and a single GEMM per pass.
//!
//! The column matrix has one row per `(in_channel, ky, kx)` tap and one
//! column per `(batch, out_y, out_x)` position, so the whole batch shares a
//! single weight read.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let &[batch, in_channels, height, width] = input else {
            return Err(Error::shape(
                "conv2d",
                "input rank",
                format!("expected 4, got {input:?}"),
            ));
        };
        let &[out_channels, w_in, kernel_h, kernel_w] = weight else {
            return Err(Error::shape(
                "conv2d",
                "weight rank",
                format!("expected 4, got {weight:?}"),
            ));
        };
        if w_in != in_channels {
            return Err(Error::shape(
                "conv2d",
                "in_channels",
                format!("input has {in_channels}, weight expects {w_in}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidTensor("conv2d: stride must be positive".into()));
        }
        let (ph, pw) = (height + 2 * padding, width + 2 * padding);
        if ph < kernel_h || pw < kernel_w {
            return Err(Error::ZeroExtent {
                op: "conv2d",
                detail: format!("kernel {kernel_h}x{kernel_w} exceeds padded input {ph}x{pw}"),
            });
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (ph - kernel_h) / stride + 1,
            out_w: (pw - kernel_w) / stride + 1,
        })
    }

    fn taps(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn columns(&self) -> usize {
        self.batch * self.positions()
    }
}

/// Input coordinate for output index `o` and kernel offset `k`, if inside the unpadded input.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    (o * stride + k).checked_sub(pad).filter(|&i| i < extent)
}

fn im2col<T: Element>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let cols = g.columns();
    let (p, hw) = (g.positions(), g.height * g.width);
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst_row = &mut col[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let plane = &x[(b * g.in_channels + c) * hw..][..hw];
                    let dst = &mut dst_row[b * p..(b + 1) * p];
                    for oy in 0..g.out_h {
                        let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        match source(oy, ky, g.stride, g.padding, g.height) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * g.width..(iy + 1) * g.width];
                                for (ox, d) in line.iter_mut().enumerate() {
                                    *d = source(ox, kx, g.stride, g.padding, g.width).map_or(T::zero(), |ix| src[ix]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let cols = g.columns();
    let (p, hw) = (g.positions(), g.height * g.width);
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src_row = &col[row * cols..(row + 1) * cols];
                for b in 0..g.batch {
                    let plane = &mut dx[(b * g.in_channels + c) * hw..][..hw];
                    let src = &src_row[b * p..(b + 1) * p];
                    for oy in 0..g.out_h {
                        let Some(iy) = source(oy, ky, g.stride, g.padding, g.height) else {
                            continue;
                        };
                        for ox in 0..g.out_w {
                            if let Some(ix) = source(ox, kx, g.stride, g.padding, g.width) {
                                let d = &mut plane[iy * g.width + ix];
                                *d = *d + src[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let (k, cols, p) = (g.taps(), g.columns(), g.positions());
    let mut col = vec![T::zero(); k * cols];
    im2col(x, g, &mut col);
    let mut mat = vec![T::zero(); g.out_channels * cols];
    T::gemm(
        g.out_channels,
        k,
        cols,
        T::one(),
        (w, k as isize, 1),
        (&col, cols as isize, 1),
        T::zero(),
        (&mut mat, cols as isize, 1),
    );
    let mut out = vec![T::zero(); g.batch * g.out_channels * p];
    for co in 0..g.out_channels {
        let b0 = bias.map_or(T::zero(), |b| b[co]);
        let row = &mat[co * cols..(co + 1) * cols];
        for b in 0..g.batch {
            let dst = &mut out[(b * g.out_channels + co) * p..][..p];
            for (d, &s) in dst.iter_mut().zip(&row[b * p..(b + 1) * p]) {
                *d = s + b0;
            }
        }
    }
    out
}

type ConvGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeometry,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let (k, cols, p) = (g.taps(), g.columns(), g.positions());
    // dy as [out_channels, batch * positions]
    let mut dmat = vec![T::zero(); g.out_channels * cols];
    for co in 0..g.out_channels {
        let row = &mut dmat[co * cols..(co + 1) * cols];
        for b in 0..g.batch {
            row[b * p..(b + 1) * p].copy_from_slice(&dy[(b * g.out_channels + co) * p..][..p]);
        }
    }
    let db = need_db.then(|| dmat.chunks_exact(cols).map(|row| row.iter().copied().sum()).collect());
    let dw = need_dw.then(|| {
        let mut col = vec![T::zero(); k * cols];
        im2col(x, g, &mut col);
        let mut dw = vec![T::zero(); g.out_channels * k];
        T::gemm(
            g.out_channels,
            cols,
            k,
            T::one(),
            (&dmat, cols as isize, 1),
            (&col, 1, cols as isize),
            T::zero(),
            (&mut dw, k as isize, 1),
        );
        dw
    });
    let dx = need_dx.then(|| {
        let mut dcol = vec![T::zero(); k * cols];
        T::gemm(
            k,
            g.out_channels,
            cols,
            T::one(),
            (w, 1, k as isize),
            (&dmat, cols as isize, 1),
            T::zero(),
            (&mut dcol, cols as isize, 1),
        );
        let mut dx = vec![T::zero(); x.len()];
        col2im(&dcol, g, &mut dx);
        dx
    });
    (dx, dw, db)
}

impl<T: Element> Graph<T> {
    /// Cross-correlation with symmetric zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xi, wi) = (self.index(input)?, self.index(weight)?);
        let bi = bias.map(|b| self.index(b)).transpose()?;
        let geom = ConvGeometry::new(self.node_value(xi).dims(), self.node_value(wi).dims(), stride, padding)?;
        if let Some(bi) = bi {
            let bd = self.node_value(bi).dims();
            if bd != [geom.out_channels] {
                return Err(Error::shape(
                    "conv2d",
                    "bias",
                    format!("expected [{}], got {bd:?}", geom.out_channels),
                ));
            }
        }
        let out = conv2d_forward(
            self.node_value(xi).values(),
            self.node_value(wi).values(),
            bi.map(|b| self.node_value(b).values()),
            &geom,
        );
        let shape = Shape::new([geom.batch, geom.out_channels, geom.out_h, geom.out_w])?;
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                input: xi,
                weight: wi,
                bias: bi,
                geom,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn constant_input_sums_window() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::ones([1, 1, 3, 3]).unwrap());
        let w = g.leaf(&Tensor::ones([1, 1, 2, 2]).unwrap());
        let b = g.leaf(&Tensor::zeros([1]).unwrap());
        let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(g.dims(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).values(), &[4.0; 4]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.leaf(&Tensor::ones([1, 1, 1, 1]).unwrap());
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::ones([1, 2, 3, 3]).unwrap());
        let w = g.leaf(&Tensor::ones([1, 3, 2, 2]).unwrap());
        let err = g.conv2d(x, w, None, 1, 0).unwrap_err();
        assert!(err.to_string().contains("in_channels"), "{err}");

        let w = g.leaf(&Tensor::ones([1, 2, 5, 5]).unwrap());
        assert!(matches!(g.conv2d(x, w, None, 1, 0), Err(Error::ZeroExtent { .. })));
        // padding makes the same kernel fit
        assert!(g.conv2d(x, w, None, 1, 1).is_ok());
    }

    #[test]
    fn strided_output_extent() {
        let geom = ConvGeometry::new(&[2, 3, 8, 8], &[4, 3, 3, 3], 2, 1).unwrap();
        assert_eq!((geom.out_h, geom.out_w), (4, 4));
        let geom = ConvGeometry::new(&[1, 1, 1, 1], &[1, 1, 3, 3], 2, 1).unwrap();
        assert_eq!((geom.out_h, geom.out_w), (1, 1));
    }
}
