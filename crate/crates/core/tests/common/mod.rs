//! Independent reference implementations written as plain loops.
#![allow(dead_code)]

use resemote_core::model::ModelConfig;

/// Cross-correlation with zero padding. Returns values and `[n, cout, oh, ow]`.
pub fn conv2d(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    wt: &[f64],
    [cout, _, kh, kw]: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[o]);
                    for i in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + i) * h + iy as usize) * w + ix as usize];
                                acc += xv * wt[((o * cin + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    y[((b * cout + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (y, [n, cout, oh, ow])
}

/// Gradients of `sum(conv2d(x, w, b) * r)` with respect to `x`, `w` and `b`.
pub fn conv2d_grads(
    x: &[f64],
    xd: [usize; 4],
    wt: &[f64],
    wd: [usize; 4],
    r: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n, cin, h, w] = xd;
    let [cout, _, kh, kw] = wd;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let (mut dx, mut dw, mut db) = (vec![0.0; x.len()], vec![0.0; wt.len()], vec![0.0; cout]);
    for b in 0..n {
        for o in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = r[((b * cout + o) * oh + oy) * ow + ox];
                    db[o] += g;
                    for i in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((b * cin + i) * h + iy as usize) * w + ix as usize;
                                let wi = ((o * cin + i) * kh + ky) * kw + kx;
                                dx[xi] += g * wt[wi];
                                dw[wi] += g * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Max over `k x k` windows at `stride`, dropping incomplete windows.
pub fn max_pool2d(x: &[f64], [n, c, h, w]: [usize; 4], k: usize, stride: usize) -> (Vec<f64>, [usize; 4]) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut y = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x[(p * h + oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                y.push(m);
            }
        }
    }
    (y, [n, c, oh, ow])
}

pub fn global_avg_pool(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    (0..n * c)
        .map(|p| x[p * h * w..(p + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
        .collect()
}

/// Output cell `i` averages input rows `floor(i*H/out) .. ceil((i+1)*H/out)`.
pub fn adaptive_avg_pool(x: &[f64], [n, c, h, w]: [usize; 4], oh: usize, ow: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for i in 0..oh {
            let (y0, y1) = ((i * h) as f64 / oh as f64, ((i + 1) * h) as f64 / oh as f64);
            for j in 0..ow {
                let (x0, x1) = ((j * w) as f64 / ow as f64, ((j + 1) * w) as f64 / ow as f64);
                let (mut s, mut count) = (0.0, 0usize);
                for yy in y0.floor() as usize..y1.ceil() as usize {
                    for xx in x0.floor() as usize..x1.ceil() as usize {
                        s += x[(p * h + yy) * w + xx];
                        count += 1;
                    }
                }
                y.push(s / count as f64);
            }
        }
    }
    y
}

/// `x W^T + b` for `x: [n, din]`, `W: [dout, din]`.
pub fn linear(x: &[f64], n: usize, din: usize, wt: &[f64], dout: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = vec![0.0; n * dout];
    for r in 0..n {
        for o in 0..dout {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for i in 0..din {
                acc += x[r * din + i] * wt[o * din + i];
            }
            y[r * dout + o] = acc;
        }
    }
    y
}

/// Learned parameter count from the layer formulas: each 3x3 conv has
/// `cin*cout*9 + cout`, each batch norm `2*cout`, the SE block two bias-free
/// matrices, projections a 1x1 conv with batch norm, and the classifier
/// `features*classes + classes`.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let bn = |c: usize| 2 * c;
    let mut total = 0;
    let mut c = cfg.input_channels;
    for &s in &cfg.stem_channels {
        total += conv(c, s, 3) + bn(s);
        c = s;
    }
    total += 2 * c * (c / cfg.se_reduction);
    for r in &cfg.residual {
        total += conv(r.in_channels, r.out_channels, 3) + bn(r.out_channels);
        total += conv(r.out_channels, r.out_channels, 3) + bn(r.out_channels);
        if r.in_channels != r.out_channels || r.stride != 1 {
            total += conv(r.in_channels, r.out_channels, 1) + bn(r.out_channels);
        }
        c = r.out_channels;
    }
    let features = c * cfg.aap_output.0 * cfg.aap_output.1;
    total + features * cfg.num_classes + cfg.num_classes
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Count of matching positions between two label vectors.
pub fn brute_force_accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    let mut correct = 0;
    for i in 0..truth.len() {
        if truth[i] == predicted[i] {
            correct += 1;
        }
    }
    100.0 * correct as f64 / truth.len() as f64
}

/// Squeeze, excite and scale written out step by step.
pub fn se_by_hand(x: &[f64], [n, c, h, w]: [usize; 4], w1: &[f64], w2: &[f64], hidden: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gates = Vec::with_capacity(n * c);
    for b in 0..n {
        let z: Vec<f64> = (0..c)
            .map(|ch| x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let a: Vec<f64> = (0..hidden)
            .map(|j| (0..c).map(|ch| w1[j * c + ch] * z[ch]).sum::<f64>().max(0.0))
            .collect();
        for ch in 0..c {
            let e: f64 = (0..hidden).map(|j| w2[ch * hidden + j] * a[j]).sum();
            gates.push(1.0 / (1.0 + (-e).exp()));
        }
    }
    let out = x.iter().enumerate().map(|(i, &v)| gates[i / (h * w)] * v).collect();
    (out, gates)
}
