use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample, Split, NUM_CLASSES};
use crate::error::Result;
use crate::tensor::Tensor;

/// Balanced fixture of `per_class` images per class at `[channels, size, size]`.
///
/// Each class has a fixed random prototype of coarse 4x4 blocks; samples add
/// uniform noise to it. Pixels are quantized to multiples of 1/255 so the
/// fixture can be written losslessly as 8-bit images.
pub fn synthetic_dataset(per_class: usize, channels: usize, size: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = size.div_ceil(4);
    let prototypes: Vec<Vec<f32>> = (0..NUM_CLASSES)
        .map(|_| {
            (0..channels * cells * cells)
                .map(|_| rng.gen_range(0.15..0.85))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(per_class * NUM_CLASSES);
    for i in 0..per_class {
        for (label, proto) in prototypes.iter().enumerate() {
            let mut px = Vec::with_capacity(channels * size * size);
            for c in 0..channels {
                for y in 0..size {
                    for x in 0..size {
                        let base = proto[(c * cells + y / 4) * cells + x / 4];
                        let v = (base + rng.gen_range(-0.15f32..0.15)).clamp(0.0, 1.0);
                        px.push((v * 255.0).round() / 255.0);
                    }
                }
            }
            samples.push(Sample {
                pixels: Tensor::from_vec([channels, size, size], px)?,
                label,
                source_id: format!("synthetic:{}", i * NUM_CLASSES + label),
            });
        }
    }
    Ok(Dataset {
        name: "synthetic".into(),
        split: Split::Train,
        samples,
    })
}
