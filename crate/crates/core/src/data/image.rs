use rand::Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn chw(t: &Tensor<f32>) -> Result<[usize; 3]> {
    <[usize; 3]>::try_from(t.dims())
        .map_err(|_| Error::shape("image", "rank", format!("expected [C, H, W], got {:?}", t.dims())))
}

/// Source coordinate of output index `i` with corner-aligned sampling:
/// `i * (in - 1) / (out - 1)`, or 0 when `out == 1`.
fn source_coord(i: usize, input: usize, output: usize) -> f64 {
    if output == 1 {
        0.0
    } else {
        i as f64 * (input - 1) as f64 / (output - 1) as f64
    }
}

/// Bilinear resize of every channel with corner-aligned sampling, so the
/// four corner pixels are preserved exactly.
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = chw(t)?;
    if (out_h, out_w) == (h, w) {
        return Ok(t.clone());
    }
    let axis = |input: usize, output: usize| -> Vec<(usize, usize, f64)> {
        (0..output)
            .map(|i| {
                let s = source_coord(i, input, output);
                let i0 = (s.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let src = t.values();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in src.chunks_exact(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| f64::from(plane[y * w + x]);
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::from_vec([c, out_h, out_w], out)
}

/// Reverses column order in every row of every channel.
pub fn hflip(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [c, h, w] = chw(t)?;
    let mut out = t.values().to_vec();
    for row in out.chunks_exact_mut(w) {
        row.reverse();
    }
    Tensor::from_vec([c, h, w], out)
}

/// Flips with probability `p`; the label is untouched.
pub fn random_horizontal_flip<R: Rng + ?Sized>(sample: &Sample, rng: &mut R, p: f64) -> Result<Sample> {
    let flip = rng.gen_bool(p.clamp(0.0, 1.0));
    let pixels = if flip {
        hflip(&sample.pixels)?
    } else {
        sample.pixels.clone()
    };
    Ok(Sample {
        pixels,
        label: sample.label,
        source_id: sample.source_id.clone(),
    })
}

/// Brings an image to `[channels, size, size]`: grey is replicated to three
/// channels, colour is averaged down to one, then bilinear resize.
pub fn conform(t: &Tensor<f32>, channels: usize, size: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = chw(t)?;
    let t = match (c, channels) {
        (a, b) if a == b => t.clone(),
        (1, n) => {
            let plane = t.values();
            let data: Vec<f32> = (0..n).flat_map(|_| plane.iter().copied()).collect();
            Tensor::from_vec([n, h, w], data)?
        }
        (n, 1) => {
            let hw = h * w;
            let src = t.values();
            let data = (0..hw)
                .map(|i| (0..n).map(|ch| src[ch * hw + i]).sum::<f32>() / n as f32)
                .collect();
            Tensor::from_vec([1, h, w], data)?
        }
        (a, b) => {
            return Err(Error::shape(
                "conform",
                "channels",
                format!("cannot convert {a} channels to {b}"),
            ));
        }
    };
    resize_bilinear(&t, size, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(c: usize, h: usize, w: usize, v: Vec<f32>) -> Tensor<f32> {
        Tensor::from_vec([c, h, w], v).unwrap()
    }

    #[test]
    fn checkerboard_upscale_matches_formula() {
        let t = img(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let r = resize_bilinear(&t, 4, 4).unwrap();
        // f(y, x) = x + y - 2xy on the unit square, sampled at thirds
        for y in 0..4 {
            for x in 0..4 {
                let (u, v) = (x as f64 / 3.0, y as f64 / 3.0);
                let expected = u + v - 2.0 * u * v;
                let got = f64::from(r.values()[y * 4 + x]);
                assert!((got - expected).abs() < 1e-6, "({y},{x}) {got} vs {expected}");
            }
        }
    }

    #[test]
    fn corners_preserved_and_single_output() {
        let t = img(1, 3, 3, (0..9).map(|v| v as f32).collect());
        let r = resize_bilinear(&t, 5, 7).unwrap();
        let v = r.values();
        assert_eq!([v[0], v[6], v[28], v[34]], [0.0, 2.0, 6.0, 8.0]);
        assert_eq!(resize_bilinear(&t, 1, 1).unwrap().values(), &[0.0]);
    }

    #[test]
    fn flip_definition_and_involution() {
        let t = img(1, 1, 2, vec![0.25, 0.75]);
        assert_eq!(hflip(&t).unwrap().values(), &[0.75, 0.25]);
        let t = img(2, 2, 3, (0..12).map(|v| v as f32 / 12.0).collect());
        assert_eq!(hflip(&hflip(&t).unwrap()).unwrap(), t);
        let sym = img(1, 1, 3, vec![0.1, 0.5, 0.1]);
        assert_eq!(hflip(&sym).unwrap(), sym);
    }

    #[test]
    fn random_flip_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Sample {
            pixels: img(1, 1, 2, vec![0.0, 1.0]),
            label: 4,
            source_id: "x".into(),
        };
        let f = random_horizontal_flip(&s, &mut rng, 1.0).unwrap();
        assert_eq!((f.pixels.values(), f.label), (&[1.0, 0.0][..], 4));
        let n = random_horizontal_flip(&s, &mut rng, 0.0).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn grey_is_replicated() {
        let t = img(1, 2, 2, vec![0.0, 0.2, 0.4, 0.6]);
        let c = conform(&t, 3, 2).unwrap();
        assert_eq!(c.dims(), &[3, 2, 2]);
        for ch in c.values().chunks(4) {
            assert_eq!(ch, t.values());
        }
        assert!(conform(&img(2, 1, 1, vec![0.0, 1.0]), 3, 1).is_err());
        assert_eq!(conform(&c, 1, 2).unwrap().values(), t.values());
    }
}
