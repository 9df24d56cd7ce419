use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream of the seeded generator reserved for batch order.
const SAMPLER_STREAM: u64 = 1;

/// Epoch-wise shuffled sample order. Every epoch visits each index once;
/// batches may straddle epoch boundaries.
#[derive(Clone, Debug)]
pub struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

/// Everything needed to continue a sampler exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    /// Hex-encoded 32-byte generator seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal word position (a 128-bit value).
    pub word_pos: String,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub epoch: u64,
}

impl Sampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("cannot sample from an empty training set".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SAMPLER_STREAM);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            rng,
            order,
            cursor: 0,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                    self.epoch += 1;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            seed: self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos().to_string(),
            order: self.order.clone(),
            cursor: self.cursor,
            epoch: self.epoch,
        }
    }

    pub fn from_state(state: &SamplerState) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("sampler state has an invalid {what}"));
        if state.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&state.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let word_pos: u128 = state.word_pos.parse().map_err(|_| bad("word position"))?;
        if state.cursor > state.order.len() || state.order.is_empty() {
            return Err(bad("cursor"));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            rng,
            order: state.order.clone(),
            cursor: state.cursor,
            epoch: state.epoch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_epoch_is_a_permutation() {
        let mut s = Sampler::new(7, 3).unwrap();
        let mut first: Vec<usize> = s.next_batch(7);
        first.sort_unstable();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        let mut second = s.next_batch(7);
        assert_eq!(s.epoch(), 1);
        second.sort_unstable();
        assert_eq!(second, first);
    }

    #[test]
    fn restored_state_continues_identically() {
        let mut a = Sampler::new(10, 42).unwrap();
        a.next_batch(13);
        let mut b = Sampler::from_state(&a.state()).unwrap();
        assert_eq!(a.next_batch(25), b.next_batch(25));
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(Sampler::new(0, 1).unwrap_err().is_config());
    }
}
