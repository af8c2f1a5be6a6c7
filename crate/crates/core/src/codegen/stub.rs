use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::config::SamplingConfig;
use crate::machine::HbmSource;
use crate::numerics::{mx_encode, MxFp8Block, MX_BLOCK_LEN};

/// Deterministic stand-in for the denoiser.
///
/// Logit `(t, b, l, v)` is word `v` of ChaCha8 stream `(t·B + b)·L + l` under
/// key `seed`, mapped to uniform `[-8, 8)`. HBM holds the MX encoding of the
/// flat `[t][b][l][v]` tensor, generated lazily block by block.
#[derive(Clone, Debug)]
pub struct LogitsStub {
    seed: u64,
    steps: u64,
    batch: u64,
    block_len: u64,
    vocab: u64,
}

impl LogitsStub {
    pub fn new(config: &SamplingConfig) -> Self {
        Self {
            seed: config.seed,
            steps: config.steps as u64,
            batch: config.batch as u64,
            block_len: config.block_len as u64,
            vocab: config.vocab as u64,
        }
    }

    fn elements(&self) -> u64 {
        self.steps * self.batch * self.block_len * self.vocab
    }

    fn rng(&self, row: u64, v: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(row);
        rng.set_word_pos(v as u128);
        rng
    }

    fn sample(rng: &mut ChaCha8Rng) -> f32 {
        ((rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)) * 16.0 - 8.0
    }

    /// Unquantized logit for step `t`, batch `b`, position `l`, token `v`.
    pub fn logit(&self, t: usize, b: usize, l: usize, v: usize) -> f32 {
        let row = (t as u64 * self.batch + b as u64) * self.block_len + l as u64;
        Self::sample(&mut self.rng(row, v as u64))
    }

    /// Unquantized values of flat elements `[first, first + out.len())`.
    pub fn fill(&self, first: u64, out: &mut [f32]) {
        let mut flat = first;
        let mut done = 0;
        while done < out.len() {
            let row = flat / self.vocab;
            let v = flat % self.vocab;
            let run = ((self.vocab - v) as usize).min(out.len() - done);
            let mut rng = self.rng(row, v);
            for slot in &mut out[done..done + run] {
                *slot = Self::sample(&mut rng);
            }
            done += run;
            flat += run as u64;
        }
    }
}

impl HbmSource for LogitsStub {
    fn len(&self) -> u64 {
        self.elements() / MX_BLOCK_LEN as u64 * crate::numerics::MX_BLOCK_BYTES as u64
    }

    fn read_block(&self, index: u64) -> MxFp8Block {
        let mut values = [0f32; MX_BLOCK_LEN];
        self.fill(index * MX_BLOCK_LEN as u64, &mut values);
        mx_encode(&values)
    }
}
