use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{conform, hflip, Dataset};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Position of a [`DataRng`] stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

/// Seeded generator for shuffling and augmentation whose position can be saved.
#[derive(Clone, Debug)]
pub struct DataRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl DataRng {
    pub fn new(seed: u64) -> Self {
        DataRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = DataRng::new(state.seed);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }
}

impl RngCore for DataRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Indices into a dataset forming one mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Stacks the samples into `[B, channels, size, size]`. With `flip`, each
    /// sample is mirrored with the given probability, drawn in batch order.
    pub fn assemble<T: Element, R: Rng + ?Sized>(
        &self,
        ds: &Dataset,
        channels: usize,
        size: usize,
        mut flip: Option<(&mut R, f64)>,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let per = channels * size * size;
        let mut data = Vec::with_capacity(self.len() * per);
        let mut labels = Vec::with_capacity(self.len());
        for &i in &self.indices {
            let s = ds
                .samples
                .get(i)
                .ok_or_else(|| Error::InvalidTensor(format!("batch index {i} outside dataset of {}", ds.len())))?;
            let mut px = conform(&s.pixels, channels, size)?;
            if let Some((rng, p)) = flip.as_mut() {
                if rng.gen_bool(p.clamp(0.0, 1.0)) {
                    px = hflip(&px)?;
                }
            }
            data.extend(px.values().iter().map(|&v| T::from_float(f64::from(v))));
            labels.push(s.label);
        }
        Ok((Tensor::from_vec([self.len(), channels, size, size], data)?, labels))
    }
}

/// Splits `0..len` into batches of `batch_size`, keeping a short final batch.
/// With `shuffle`, the order is a Fisher-Yates permutation drawn from `rng`.
pub fn make_batches<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R, shuffle: bool) -> Result<Vec<Batch>> {
    if len == 0 {
        return Err(Error::EmptyDataset("no samples to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch { indices: c.to_vec() })
        .collect())
}
