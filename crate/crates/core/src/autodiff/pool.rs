use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape};

fn nchw(op: &'static str, dims: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(dims).map_err(|_| Error::shape(op, "input rank", format!("expected 4, got {dims:?}")))
}

/// Region of input rows `[floor(i*h/out), ceil((i+1)*h/out))` feeding output row `i`.
pub(crate) fn adaptive_range(i: usize, extent: usize, out: usize) -> (usize, usize) {
    let start = i * extent / out;
    let end = ((i + 1) * extent).div_ceil(out);
    (start, end)
}

pub(crate) fn global_avg_pool_backward<T: Element>(dims: &[usize], dy: &[T]) -> Vec<T> {
    let hw = dims[2] * dims[3];
    let scale = T::one() / T::from_usize(hw).unwrap();
    dy.iter().flat_map(|&g| std::iter::repeat_n(g * scale, hw)).collect()
}

pub(crate) fn adaptive_avg_pool_backward<T: Element>(dims: &[usize], out_h: usize, out_w: usize, dy: &[T]) -> Vec<T> {
    let [n, c, h, w] = [dims[0], dims[1], dims[2], dims[3]];
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let dst = &mut dx[plane * h * w..][..h * w];
        for oy in 0..out_h {
            let (y0, y1) = adaptive_range(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = adaptive_range(ox, w, out_w);
                let count = T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                let g = dy[(plane * out_h + oy) * out_w + ox] / count;
                for y in y0..y1 {
                    for x in x0..x1 {
                        dst[y * w + x] = dst[y * w + x] + g;
                    }
                }
            }
        }
    }
    dx
}

impl<T: Element> Graph<T> {
    /// Max over `kernel x kernel` windows. Ties resolve to the first element
    /// in row-major window order, which alone receives the gradient.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xi = self.index(input)?;
        let x = self.node_value(xi);
        let [n, c, h, w] = nchw("max_pool2d", x.dims())?;
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidTensor(
                "max_pool2d: kernel and stride must be positive".into(),
            ));
        }
        if h < kernel || w < kernel {
            return Err(Error::WindowTooLarge {
                op: "max_pool2d",
                window: format!("{kernel}x{kernel}"),
                input: format!("{h}x{w}"),
            });
        }
        let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let xs = x.values();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = Shape::new([n, c, oh, ow])?;
        Ok(self.push(shape, out, Op::MaxPool2d { input: xi, argmax }))
    }

    /// Per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let xi = self.index(input)?;
        let x = self.node_value(xi);
        let [n, c, h, w] = nchw("global_avg_pool", x.dims())?;
        let scale = T::one() / T::from_usize(h * w).unwrap();
        let out = x
            .values()
            .chunks_exact(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        Ok(self.push(Shape::new([n, c])?, out, Op::GlobalAvgPool { input: xi }))
    }

    /// Averages variable-size regions onto a fixed `out_h x out_w` grid.
    pub fn adaptive_avg_pool(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xi = self.index(input)?;
        let x = self.node_value(xi);
        let [n, c, h, w] = nchw("adaptive_avg_pool", x.dims())?;
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::WindowTooLarge {
                op: "adaptive_avg_pool",
                window: format!("output {out_h}x{out_w}"),
                input: format!("{h}x{w}"),
            });
        }
        let xs = x.values();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in xs.chunks_exact(h * w) {
            for oy in 0..out_h {
                let (y0, y1) = adaptive_range(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = adaptive_range(ox, w, out_w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for xv in &plane[y * w + x0..y * w + x1] {
                            acc = acc + *xv;
                        }
                    }
                    out.push(acc / T::from_usize((y1 - y0) * (x1 - x0)).unwrap());
                }
            }
        }
        let shape = Shape::new([n, c, out_h, out_w])?;
        Ok(self.push(
            shape,
            out,
            Op::AdaptiveAvgPool {
                input: xi,
                out_h,
                out_w,
            },
        ))
    }
}
