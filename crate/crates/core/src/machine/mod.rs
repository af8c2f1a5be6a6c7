//! Architectural state: register files, the three decoupled SRAM domains,
//! the HBM model with its MX dequantizer path, and the host FIFO.
//!
//! SRAM domains live in disjoint windows of one 32-bit byte address space:
//!
//! | domain | base          | element |
//! |--------|---------------|---------|
//! | Vector | `0x0000_0000` | BF16    |
//! | FP     | `0x4000_0000` | BF16    |
//! | Int    | `0x6000_0000` | INT32   |
//!
//! Every access names the domain it expects, so a vector-FP instruction handed
//! an Int address faults instead of reaching Int SRAM.

mod hbm;

pub use hbm::{read_elements, HbmImage, HbmSource};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use crate::config::MemoryParams;
use crate::config::{Mode, SamplingConfig};
use crate::numerics::{mx_decode, Bf16, MX_BLOCK_BYTES, MX_BLOCK_LEN};
use crate::units::UnitTimings;

pub const VECTOR_BASE: u32 = 0x0000_0000;
pub const VECTOR_WINDOW: u32 = 0x4000_0000;
pub const FP_BASE: u32 = 0x4000_0000;
pub const FP_WINDOW: u32 = 0x2000_0000;
pub const INT_BASE: u32 = 0x6000_0000;
pub const INT_WINDOW: u32 = 0x2000_0000;

pub const NUM_GP: usize = 32;
pub const NUM_FP: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Vector,
    Fp,
    Int,
}

impl Domain {
    pub fn base(self) -> u32 {
        match self {
            Domain::Vector => VECTOR_BASE,
            Domain::Fp => FP_BASE,
            Domain::Int => INT_BASE,
        }
    }

    pub fn window(self) -> u32 {
        match self {
            Domain::Vector => VECTOR_WINDOW,
            Domain::Fp => FP_WINDOW,
            Domain::Int => INT_WINDOW,
        }
    }

    pub fn element_bytes(self) -> u32 {
        match self {
            Domain::Vector | Domain::Fp => 2,
            Domain::Int => 4,
        }
    }

    /// Address of element `index` of this domain.
    pub fn address(self, index: usize) -> u32 {
        self.base() + index as u32 * self.element_bytes()
    }

    /// Domain containing `address` and the byte offset within it.
    pub fn of(address: u32) -> Option<(Domain, u32)> {
        [Domain::Vector, Domain::Fp, Domain::Int]
            .into_iter()
            .find(|d| address >= d.base() && address - d.base() < d.window())
            .map(|d| (d, address - d.base()))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Vector => "Vector",
            Domain::Fp => "FP",
            Domain::Int => "Int",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FaultKind {
    #[error("{domain} SRAM access of {bytes} B at {address:#010x} exceeds capacity {capacity} B")]
    OutOfBounds {
        domain: Domain,
        address: u32,
        bytes: u64,
        capacity: u64,
    },
    #[error("address {address:#010x} is not in {expected} SRAM")]
    WrongDomain { expected: Domain, address: u32 },
    #[error("address {address:#010x} is misaligned for {domain} SRAM elements")]
    Misaligned { domain: Domain, address: u32 },
    #[error("HBM read of {bytes} B at offset {offset:#x} exceeds image of {size} B")]
    HbmOutOfRange { offset: u64, bytes: u64, size: u64 },
    #[error("HBM offset {0:#x} is not on an MX block boundary")]
    HbmMisaligned(u64),
    #[error("prefetch count {0} is not a positive multiple of 32")]
    PrefetchCount(i64),
    #[error("element count {0} is negative")]
    NegativeCount(i64),
    #[error("reciprocal of zero")]
    DivideByZero,
    #[error("reduction over an empty vector")]
    EmptyVector,
    #[error("pc {0} is outside the program")]
    PcOutOfRange(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Vector,
    Memory,
    Scalar,
    Other,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Vector => "vector",
            Category::Memory => "memory",
            Category::Scalar => "scalar",
            Category::Other => "other",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleCounters {
    pub vector: u64,
    pub memory: u64,
    pub scalar: u64,
    pub other: u64,
    pub hbm_bytes_moved: u64,
}

impl CycleCounters {
    pub fn total(&self) -> u64 {
        self.vector + self.memory + self.scalar + self.other
    }

    pub fn charge(&mut self, category: Category, cycles: u64) {
        match category {
            Category::Vector => self.vector += cycles,
            Category::Memory => self.memory += cycles,
            Category::Scalar => self.scalar += cycles,
            Category::Other => self.other += cycles,
        }
    }

    pub fn get(&self, category: Category) -> u64 {
        match category {
            Category::Vector => self.vector,
            Category::Memory => self.memory,
            Category::Scalar => self.scalar,
            Category::Other => self.other,
        }
    }
}

/// Element counts and byte sizes of the three SRAM domains for one workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SramFootprint {
    pub int_elements: u64,
    pub fp_elements: u64,
    pub vector_elements: u64,
    pub int_bytes: u64,
    pub fp_bytes: u64,
    pub vector_bytes: u64,
}

/// Closed-form SRAM requirement: `2·B·L` Int, `max(L, VLEN)` FP and
/// `3·B·L + V_chunk` (edge) or `3·B·L + V·L·R` (performance) Vector elements.
pub fn sram_footprint(config: &SamplingConfig) -> SramFootprint {
    let bl = (config.batch * config.block_len) as u64;
    let int_elements = 2 * bl;
    let fp_elements = config.block_len.max(config.vlen) as u64;
    let staged = match config.mode() {
        Mode::Edge => config.v_chunk as u64,
        Mode::Performance => {
            config.vocab as u64 * config.block_len as u64 * config.preload_batches as u64
        }
    };
    let vector_elements = 3 * bl + staged;
    SramFootprint {
        int_elements,
        fp_elements,
        vector_elements,
        int_bytes: int_elements * 4,
        fp_bytes: fp_elements * 2,
        vector_bytes: vector_elements * 2,
    }
}

/// SRAM capacities in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SramCapacities {
    pub vector: u64,
    pub fp: u64,
    pub int: u64,
}

impl SramCapacities {
    /// Configured capacities, defaulting each unset domain to its footprint.
    pub fn for_config(sampling: &SamplingConfig, memory: &MemoryParams) -> Self {
        let need = sram_footprint(sampling);
        Self {
            vector: memory.vector_sram_bytes.unwrap_or(need.vector_bytes),
            fp: memory.fp_sram_bytes.unwrap_or(need.fp_bytes),
            int: memory.int_sram_bytes.unwrap_or(need.int_bytes),
        }
    }
}

/// Highest byte offset (exclusive) written in each domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighWater {
    pub vector: u64,
    pub fp: u64,
    pub int: u64,
}

#[derive(Debug)]
pub struct MachineState {
    pub gp: [i32; NUM_GP],
    /// BF16-domain scalars kept widened to 32 bits.
    pub fp: [f32; NUM_FP],
    /// Active vector length.
    pub vl: usize,
    pub vlen: usize,
    pub vector_sram: Vec<u8>,
    pub fp_sram: Vec<u8>,
    pub int_sram: Vec<u8>,
    pub hbm: Arc<dyn HbmSource>,
    pub fifo_out: Vec<i32>,
    pub pc: usize,
    pub halted: bool,
    pub cycles: CycleCounters,
    pub retired: u64,
    pub high_water: HighWater,
    pub params: MemoryParams,
    pub timings: UnitTimings,
    compute_since_prefetch: u64,
    prefetched: bool,
}

impl MachineState {
    pub fn new(
        vlen: usize,
        capacities: SramCapacities,
        params: MemoryParams,
        timings: UnitTimings,
        hbm: Arc<dyn HbmSource>,
    ) -> Self {
        Self {
            gp: [0; NUM_GP],
            fp: [0.0; NUM_FP],
            vl: vlen,
            vlen,
            vector_sram: vec![0; capacities.vector as usize],
            fp_sram: vec![0; capacities.fp as usize],
            int_sram: vec![0; capacities.int as usize],
            hbm,
            fifo_out: Vec::new(),
            pc: 0,
            halted: false,
            cycles: CycleCounters::default(),
            retired: 0,
            high_water: HighWater::default(),
            params,
            timings,
            compute_since_prefetch: 0,
            prefetched: false,
        }
    }

    pub fn for_config(config: &crate::config::RunConfig, hbm: Arc<dyn HbmSource>) -> Self {
        Self::new(
            config.sampling.vlen,
            SramCapacities::for_config(&config.sampling, &config.memory),
            config.memory.clone(),
            config.timings.clone(),
            hbm,
        )
    }

    pub fn capacities(&self) -> SramCapacities {
        SramCapacities {
            vector: self.vector_sram.len() as u64,
            fp: self.fp_sram.len() as u64,
            int: self.int_sram.len() as u64,
        }
    }

    /// Byte offset of `elements` elements at `address`, which must lie in `want`.
    fn locate(&self, address: u32, elements: usize, want: Domain) -> Result<usize, FaultKind> {
        let (domain, offset) = match Domain::of(address) {
            Some((d, off)) if d == want => (d, off),
            _ => {
                return Err(FaultKind::WrongDomain {
                    expected: want,
                    address,
                })
            }
        };
        if offset % domain.element_bytes() != 0 {
            return Err(FaultKind::Misaligned { domain, address });
        }
        let bytes = elements as u64 * domain.element_bytes() as u64;
        let capacity = self.sram(domain).len() as u64;
        if offset as u64 + bytes > capacity {
            return Err(FaultKind::OutOfBounds {
                domain,
                address,
                bytes,
                capacity,
            });
        }
        Ok(offset as usize)
    }

    fn sram(&self, domain: Domain) -> &[u8] {
        match domain {
            Domain::Vector => &self.vector_sram,
            Domain::Fp => &self.fp_sram,
            Domain::Int => &self.int_sram,
        }
    }

    fn sram_mut(&mut self, domain: Domain) -> &mut Vec<u8> {
        match domain {
            Domain::Vector => &mut self.vector_sram,
            Domain::Fp => &mut self.fp_sram,
            Domain::Int => &mut self.int_sram,
        }
    }

    fn touch(&mut self, domain: Domain, end: u64) {
        let mark = match domain {
            Domain::Vector => &mut self.high_water.vector,
            Domain::Fp => &mut self.high_water.fp,
            Domain::Int => &mut self.high_water.int,
        };
        *mark = (*mark).max(end);
    }

    /// Read `n` BF16 elements from the Vector or FP domain into `out` (widened).
    pub fn load_bf16(
        &self,
        domain: Domain,
        address: u32,
        n: usize,
        out: &mut Vec<f32>,
    ) -> Result<(), FaultKind> {
        debug_assert_ne!(domain, Domain::Int);
        let at = self.locate(address, n, domain)?;
        out.clear();
        out.extend(
            self.sram(domain)[at..at + 2 * n]
                .chunks_exact(2)
                .map(|b| Bf16::from_le_bytes([b[0], b[1]]).to_f32()),
        );
        Ok(())
    }

    /// Write `values` rounded to BF16.
    pub fn store_bf16(
        &mut self,
        domain: Domain,
        address: u32,
        values: &[f32],
    ) -> Result<(), FaultKind> {
        debug_assert_ne!(domain, Domain::Int);
        let at = self.locate(address, values.len(), domain)?;
        let mem = &mut self.sram_mut(domain)[at..at + 2 * values.len()];
        for (dst, v) in mem.chunks_exact_mut(2).zip(values) {
            dst.copy_from_slice(&Bf16::from_f32(*v).to_le_bytes());
        }
        self.touch(domain, (at + 2 * values.len()) as u64);
        Ok(())
    }

    pub fn load_int(&self, address: u32, n: usize, out: &mut Vec<i32>) -> Result<(), FaultKind> {
        let at = self.locate(address, n, Domain::Int)?;
        out.clear();
        out.extend(
            self.int_sram[at..at + 4 * n]
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        Ok(())
    }

    pub fn store_int(&mut self, address: u32, values: &[i32]) -> Result<(), FaultKind> {
        let at = self.locate(address, values.len(), Domain::Int)?;
        for (dst, v) in self.int_sram[at..at + 4 * values.len()]
            .chunks_exact_mut(4)
            .zip(values)
        {
            dst.copy_from_slice(&v.to_le_bytes());
        }
        self.touch(Domain::Int, (at + 4 * values.len()) as u64);
        Ok(())
    }

    /// Count cycles of non-prefetch work that a following prefetch may hide behind.
    pub fn note_compute(&mut self, cycles: u64) {
        self.compute_since_prefetch += cycles;
    }

    /// Unhidden cost of a prefetch whose full cost is `raw`, and reset the
    /// overlap window.
    fn expose(&mut self, raw: u64) -> u64 {
        let hidden = if self.params.double_buffering && self.prefetched {
            raw.min(self.compute_since_prefetch)
        } else {
            0
        };
        self.prefetched = true;
        self.compute_since_prefetch = 0;
        raw - hidden
    }
}

/// Full (unoverlapped) cost of moving `bytes` from HBM.
pub fn prefetch_cost(params: &MemoryParams, bytes: u64) -> u64 {
    params.hbm_fixed_latency + (bytes as f64 / params.hbm_peak_bandwidth).ceil() as u64
}

/// Stream `element_count` MX-encoded elements from HBM byte `hbm_offset`
/// through the dequantizer into Vector SRAM at `dest`. Charges the exposed
/// cycles to `memory` and returns them.
pub fn hbm_prefetch(
    state: &mut MachineState,
    hbm_offset: u64,
    element_count: i64,
    dest: u32,
) -> Result<u64, FaultKind> {
    if element_count <= 0 || element_count as usize % MX_BLOCK_LEN != 0 {
        return Err(FaultKind::PrefetchCount(element_count));
    }
    if hbm_offset % MX_BLOCK_BYTES as u64 != 0 {
        return Err(FaultKind::HbmMisaligned(hbm_offset));
    }
    let n = element_count as usize;
    let blocks = (n / MX_BLOCK_LEN) as u64;
    let bytes = blocks * MX_BLOCK_BYTES as u64;
    let size = state.hbm.len();
    if hbm_offset + bytes > size {
        return Err(FaultKind::HbmOutOfRange {
            offset: hbm_offset,
            bytes,
            size,
        });
    }
    let at = state.locate(dest, n, Domain::Vector)?;
    let first = hbm_offset / MX_BLOCK_BYTES as u64;
    let hbm = Arc::clone(&state.hbm);
    let mem = &mut state.vector_sram[at..at + 2 * n];
    for (i, dst) in mem.chunks_exact_mut(2 * MX_BLOCK_LEN).enumerate() {
        let decoded = mx_decode(&hbm.read_block(first + i as u64));
        for (d, v) in dst.chunks_exact_mut(2).zip(decoded) {
            d.copy_from_slice(&v.to_le_bytes());
        }
    }
    state.touch(Domain::Vector, (at + 2 * n) as u64);

    let exposed = state.expose(prefetch_cost(&state.params, bytes));
    state.cycles.charge(Category::Memory, exposed);
    state.cycles.hbm_bytes_moved += bytes;
    Ok(exposed)
}

/// `len` BF16 elements starting at `base` (a Vector- or FP-domain address).
pub fn sram_read_vector(
    state: &MachineState,
    base: u32,
    len: usize,
) -> Result<Vec<Bf16>, FaultKind> {
    let domain = bf16_domain(base)?;
    let mut out = Vec::with_capacity(len);
    state.load_bf16(domain, base, len, &mut out)?;
    Ok(out.into_iter().map(Bf16::from_f32).collect())
}

pub fn sram_write_vector(
    state: &mut MachineState,
    base: u32,
    values: &[Bf16],
) -> Result<(), FaultKind> {
    let domain = bf16_domain(base)?;
    let widened: Vec<f32> = values.iter().map(|v| v.to_f32()).collect();
    state.store_bf16(domain, base, &widened)
}

fn bf16_domain(address: u32) -> Result<Domain, FaultKind> {
    match Domain::of(address) {
        Some((d @ (Domain::Vector | Domain::Fp), _)) => Ok(d),
        _ => Err(FaultKind::WrongDomain {
            expected: Domain::Vector,
            address,
        }),
    }
}
