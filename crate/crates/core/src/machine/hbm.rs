use std::fmt::Debug;
use std::io;
use std::path::Path;

use crate::numerics::{MxFp8Block, MX_BLOCK_BYTES};

/// Read-only backing store of the modeled HBM: a stream of 33-byte MX blocks.
///
/// The simulator and the reference sampler share one source, so both consume
/// the identical encoded bytes.
pub trait HbmSource: Send + Sync + Debug {
    /// Size in bytes.
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block at `index` (byte offset `index · 33`). Callers bounds-check.
    fn read_block(&self, index: u64) -> MxFp8Block;
}

/// HBM contents held as a flat byte image.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HbmImage {
    bytes: Vec<u8>,
}

impl HbmImage {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn from_blocks(blocks: &[MxFp8Block]) -> Self {
        let mut bytes = Vec::with_capacity(blocks.len() * MX_BLOCK_BYTES);
        for b in blocks {
            bytes.extend_from_slice(&b.to_bytes());
        }
        Self { bytes }
    }

    /// Materialize every block of another source.
    pub fn capture(source: &dyn HbmSource) -> Self {
        let blocks = source.len() / MX_BLOCK_BYTES as u64;
        let mut bytes = Vec::with_capacity(source.len() as usize);
        for i in 0..blocks {
            bytes.extend_from_slice(&source.read_block(i).to_bytes());
        }
        Self { bytes }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::from_bytes(std::fs::read(path)?))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, &self.bytes)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

impl HbmSource for HbmImage {
    fn len(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn read_block(&self, index: u64) -> MxFp8Block {
        let at = index as usize * MX_BLOCK_BYTES;
        let raw: &[u8; MX_BLOCK_BYTES] = self.bytes[at..at + MX_BLOCK_BYTES]
            .try_into()
            .expect("block slice");
        MxFp8Block::from_bytes(raw)
    }
}

/// Dequantize `n` consecutive elements starting at element `first` of an MX
/// stream, exactly as the prefetch path does, appending them to `out`.
pub fn read_elements(source: &dyn HbmSource, first: u64, n: usize, out: &mut Vec<f32>) {
    let len = crate::numerics::MX_BLOCK_LEN as u64;
    let end = first + n as u64;
    let mut block = first / len;
    while block * len < end {
        let decoded = crate::numerics::mx_decode(&source.read_block(block));
        let lo = first.max(block * len) - block * len;
        let hi = end.min((block + 1) * len) - block * len;
        out.extend(decoded[lo as usize..hi as usize].iter().map(|v| v.to_f32()));
        block += 1;
    }
}
