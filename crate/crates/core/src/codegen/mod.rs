//! Lowers the blocked diffusion sampling loop onto the ISA.
//!
//! Per step `t` and batch row `b`, each position `l` streams its logits row
//! through Vector SRAM, keeping a running `(max, argmax, sum-exp)` with online
//! rescaling across chunks; the reciprocal of the sum is the confidence. The
//! confidences then drive Top-k selection and two masked selects commit the
//! chosen tokens.
//!
//! Register map:
//!
//! | reg | use                     | reg | use                       |
//! |-----|-------------------------|-----|---------------------------|
//! | x1  | step `t`                | x17 | confidence row of `b`     |
//! | x2  | batch `b`               | x18 | mask row of `b`           |
//! | x3  | position `l`            | x19 | transfer row of `b`       |
//! | x4  | chunk `r`               | x20 | `x` row of `b`            |
//! | x5  | `k` for this step       | x21 | `x0` row of `b`           |
//! | x6  | HBM read pointer        | x22 | prefetch element count    |
//! | x7  | chunk buffer            | x23 | full chunks per row       |
//! | x8  | `L`                     | x24 | `VLEN`                    |
//! | x9  | scratch                 | x25 | partial vector length     |
//! | x10 | sub-chunk address       | x26 | row pointer (performance) |
//! | x11 | sub-chunk argmax        | x27 | preload group counter     |
//! | x12 | token index of sub-chunk| x28 | `mask_id`                 |
//! | x13 | chunk argmax            | x29 | `T`                       |
//! | x14 | row argmax              | x30 | `B`                       |
//! | x15 | FP SRAM slot            | x31 | `R`                       |
//! | x16 | `x0` slot               |     |                           |
//!
//! f1/f2 sub-chunk and chunk max, f3 previous running max, f4 rescale factor,
//! f5 running sum, f6 sub-chunk sum, f7 running max, f8 confidence,
//! f9 constant −1, f31 constant 0.

mod stub;

pub use stub::LogitsStub;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, Mode, RunConfig, SamplingConfig};
use crate::isa::{Fp, Gp, Instruction as I, Program, ProgramBuilder};
use crate::machine::{Domain, FP_BASE, INT_BASE, VECTOR_BASE};
use crate::numerics::{MX_BLOCK_BYTES, MX_BLOCK_LEN};

/// Label marking the end of each diffusion step, after the commit of every
/// batch row. Observers snapshot state here.
pub const STEP_END: &str = "step_end";

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("number of steps must be at least 1")]
pub struct ZeroSteps;

/// Tokens committed at each step: `masked / T` each, the remainder going one
/// apiece to the earliest steps.
pub fn num_transfer_tokens(masked: usize, steps: usize) -> Result<Vec<usize>, ZeroSteps> {
    if steps == 0 {
        return Err(ZeroSteps);
    }
    let (q, rem) = (masked / steps, masked % steps);
    Ok((0..steps).map(|t| q + usize::from(t < rem)).collect())
}

/// SRAM placement of every region the program touches (byte addresses).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub batch: usize,
    pub block_len: usize,
    /// Staged logits: `V_chunk` elements (edge) or `R·L·V` (performance).
    pub buffer: u32,
    pub buffer_elements: usize,
    /// `B·L` BF16 confidences.
    pub confidence: u32,
    /// `B·L` BF16 0/1 flags, 1 while a position is still masked.
    pub mask: u32,
    /// `B·L` BF16 0/1 flags selected by Top-k.
    pub transfer: u32,
    /// `L` BF16 confidence slots.
    pub fp_slots: u32,
    /// `B·L` INT32 token ids.
    pub tokens: u32,
    /// `B·L` INT32 argmax predictions.
    pub predictions: u32,
}

impl Layout {
    pub fn new(config: &SamplingConfig) -> Self {
        let bl = (config.batch * config.block_len) as u32;
        let buffer_elements = config.buffer_elements();
        let buffer = VECTOR_BASE;
        let confidence = buffer + 2 * buffer_elements as u32;
        let mask = confidence + 2 * bl;
        let transfer = mask + 2 * bl;
        Self {
            batch: config.batch,
            block_len: config.block_len,
            buffer,
            buffer_elements,
            confidence,
            mask,
            transfer,
            fp_slots: FP_BASE,
            tokens: INT_BASE,
            predictions: INT_BASE + 4 * bl,
        }
    }

    pub fn elements(&self) -> usize {
        self.batch * self.block_len
    }

    /// Vector SRAM bytes spanned by the layout.
    pub fn vector_end(&self) -> u32 {
        self.transfer + 2 * self.elements() as u32 - Domain::Vector.base()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingProgram {
    pub program: Program,
    pub layout: Layout,
    pub step_end_pc: usize,
    pub transfer_schedule: Vec<usize>,
}

const X0: Gp = Gp(0);
const T_REG: Gp = Gp(1);
const B_REG: Gp = Gp(2);
const L_REG: Gp = Gp(3);
const R_REG: Gp = Gp(4);
const K_REG: Gp = Gp(5);
const HBM: Gp = Gp(6);
const BUF: Gp = Gp(7);
const L_BOUND: Gp = Gp(8);
const TMP: Gp = Gp(9);
const ADDR: Gp = Gp(10);
const SUB_IDX: Gp = Gp(11);
const BASE_IDX: Gp = Gp(12);
const CHUNK_IDX: Gp = Gp(13);
const ROW_IDX: Gp = Gp(14);
const FP_SLOT: Gp = Gp(15);
const X0_SLOT: Gp = Gp(16);
const CONF_B: Gp = Gp(17);
const MASK_B: Gp = Gp(18);
const TR_B: Gp = Gp(19);
const X_B: Gp = Gp(20);
const X0_B: Gp = Gp(21);
const COUNT: Gp = Gp(22);
const R_BOUND: Gp = Gp(23);
const VLEN_REG: Gp = Gp(24);
const VL_TMP: Gp = Gp(25);
const ROW_PTR: Gp = Gp(26);
const GROUP: Gp = Gp(27);
const MASK_ID: Gp = Gp(28);
const T_BOUND: Gp = Gp(29);
const B_BOUND: Gp = Gp(30);
const GROUP_BOUND: Gp = Gp(31);

const F_SUB_MAX: Fp = Fp(1);
const F_CHUNK_MAX: Fp = Fp(2);
const F_OLD_MAX: Fp = Fp(3);
const F_SCALE: Fp = Fp(4);
const F_SUM: Fp = Fp(5);
const F_SUB_SUM: Fp = Fp(6);
const F_MAX: Fp = Fp(7);
const F_CONF: Fp = Fp(8);
const F_NEG_ONE: Fp = Fp(9);
const F_ZERO: Fp = Fp(31);

struct Gen<'a> {
    c: &'a SamplingConfig,
    layout: Layout,
    b: ProgramBuilder,
}

impl Gen<'_> {
    fn emit(&mut self, inst: I) {
        self.b.push(inst);
    }

    fn li(&mut self, reg: Gp, value: u32) {
        self.emit(I::s_li(reg, value as i32));
    }

    fn set_vl(&mut self, n: usize) {
        self.li(VL_TMP, n as u32);
        self.emit(I::s_setvl(VL_TMP));
    }

    /// Stable-Max over `len` elements staged at the address in `base`, folded
    /// into the running (f7, x14, f5) of the current row.
    fn chunk_body(&mut self, base: Gp, len: usize) {
        let vlen = self.c.vlen;
        let subs = len.div_ceil(vlen);

        // Pass 1: chunk max and argmax.
        self.emit(I::s_addi(ADDR, base, 0));
        for j in 0..subs {
            let n = vlen.min(len - j * vlen);
            if n < vlen {
                self.set_vl(n);
            }
            if j == 0 {
                self.emit(I::v_red_max_idx(F_CHUNK_MAX, ADDR, CHUNK_IDX, BASE_IDX));
            } else {
                self.emit(I::v_red_max_idx(F_SUB_MAX, ADDR, SUB_IDX, BASE_IDX));
                self.emit(I::s_fmax_idx(F_CHUNK_MAX, CHUNK_IDX, F_SUB_MAX, SUB_IDX));
            }
            self.emit(I::s_addi(BASE_IDX, BASE_IDX, n as i32));
            if j + 1 < subs {
                self.emit(I::s_addi(ADDR, ADDR, 2 * n as i32));
            } else if n < vlen {
                self.emit(I::s_setvl(VLEN_REG));
            }
        }

        // Online combine: s ← s·e^(m_old − m_new).
        self.emit(I::s_fadd(F_OLD_MAX, F_MAX, F_ZERO));
        self.emit(I::s_fmax_idx(F_MAX, ROW_IDX, F_CHUNK_MAX, CHUNK_IDX));
        self.emit(I::s_fsub(F_SCALE, F_OLD_MAX, F_MAX));
        self.emit(I::s_exp(F_SCALE, F_SCALE));
        self.emit(I::s_fmul(F_SUM, F_SUM, F_SCALE));

        // Pass 2: in-place e^(z − m), accumulated into s.
        self.emit(I::s_addi(ADDR, base, 0));
        for j in 0..subs {
            let n = vlen.min(len - j * vlen);
            if n < vlen {
                self.set_vl(n);
            }
            self.emit(I::v_sub_scalar(ADDR, F_MAX));
            self.emit(I::v_exp(ADDR));
            self.emit(I::v_red_sum(F_SUB_SUM, ADDR));
            self.emit(I::s_fadd(F_SUM, F_SUM, F_SUB_SUM));
            if j + 1 < subs {
                self.emit(I::s_addi(ADDR, ADDR, 2 * n as i32));
            } else if n < vlen {
                self.emit(I::s_setvl(VLEN_REG));
            }
        }
    }

    fn prologue(&mut self) {
        let c = self.c;
        let lay = self.layout;
        let bl = lay.elements();
        self.emit(I::s_fli(F_ZERO, 0.0));
        self.emit(I::s_fli(F_NEG_ONE, -1.0));
        self.li(VLEN_REG, c.vlen as u32);
        self.emit(I::s_setvl(VLEN_REG));

        // x ← mask_id everywhere.
        self.li(MASK_ID, c.mask_id as u32);
        self.li(TMP, lay.tokens);
        self.li(VL_TMP, lay.tokens + 4 * bl as u32);
        self.b.label("init_tokens");
        self.emit(I::s_st_int(MASK_ID, TMP, 0));
        self.emit(I::s_addi(TMP, TMP, 4));
        self.b.bne(TMP, VL_TMP, "init_tokens");

        // Mask flags ← 0 − (−1) = 1.
        for off in (0..bl).step_by(c.vlen) {
            let n = c.vlen.min(bl - off);
            if n < c.vlen {
                self.set_vl(n);
            }
            self.li(ADDR, lay.mask + 2 * off as u32);
            self.emit(I::v_sub_scalar(ADDR, F_NEG_ONE));
            if n < c.vlen {
                self.emit(I::s_setvl(VLEN_REG));
            }
        }

        self.li(L_BOUND, c.block_len as u32);
        self.li(BUF, lay.buffer);
        self.li(HBM, 0);
        self.li(T_BOUND, c.steps as u32);
        self.li(B_BOUND, c.batch as u32);
        self.li(GROUP_BOUND, c.preload_batches as u32);
        match c.mode() {
            Mode::Edge => {
                self.li(COUNT, c.v_chunk as u32);
                self.li(R_BOUND, (c.vocab / c.v_chunk) as u32);
            }
            Mode::Performance => {
                self.li(COUNT, (c.vocab * c.block_len * c.preload_batches) as u32);
            }
        }
        self.li(T_REG, 0);
    }

    fn row(&mut self) {
        let c = self.c;
        self.emit(I::s_fli(F_MAX, f32::NEG_INFINITY));
        self.emit(I::s_fli(F_SUM, 0.0));
        self.li(BASE_IDX, 0);
        self.li(ROW_IDX, 0);
        match c.mode() {
            Mode::Edge => {
                let chunk_bytes = (c.v_chunk / MX_BLOCK_LEN * MX_BLOCK_BYTES) as i32;
                let full = c.vocab / c.v_chunk;
                let tail = c.vocab % c.v_chunk;
                if full > 0 {
                    self.li(R_REG, 0);
                    self.b.label("r_loop");
                    self.emit(I::h_prefetch_v(BUF, HBM, COUNT));
                    self.emit(I::s_addi(HBM, HBM, chunk_bytes));
                    self.chunk_body(BUF, c.v_chunk);
                    self.emit(I::s_addi(R_REG, R_REG, 1));
                    self.b.bne(R_REG, R_BOUND, "r_loop");
                }
                if tail > 0 {
                    self.li(TMP, tail as u32);
                    self.emit(I::h_prefetch_v(BUF, HBM, TMP));
                    self.emit(I::s_addi(
                        HBM,
                        HBM,
                        (tail / MX_BLOCK_LEN * MX_BLOCK_BYTES) as i32,
                    ));
                    self.chunk_body(BUF, tail);
                }
            }
            Mode::Performance => {
                self.chunk_body(ROW_PTR, c.vocab);
                self.emit(I::s_addi(ROW_PTR, ROW_PTR, 2 * c.vocab as i32));
            }
        }
        self.emit(I::s_recip(F_CONF, F_SUM));
        self.emit(I::s_st_fp(F_CONF, FP_SLOT, 0));
        self.emit(I::s_st_int(ROW_IDX, X0_SLOT, 0));
        self.emit(I::s_addi(FP_SLOT, FP_SLOT, 2));
        self.emit(I::s_addi(X0_SLOT, X0_SLOT, 4));
    }

    fn commit(&mut self) {
        let l = self.c.block_len;
        self.set_vl(l);
        self.li(TMP, self.layout.fp_slots);
        self.emit(I::s_map_v_fp(CONF_B, TMP, l as i32));
        self.emit(I::v_topk_mask(TR_B, CONF_B, MASK_B, K_REG));
        // x0 ← where(mask, x0, x); x ← where(transfer, x0, x).
        self.emit(I::v_select_int(X0_B, MASK_B, X0_B, X_B));
        self.emit(I::v_select_int(X_B, TR_B, X0_B, X_B));
        self.emit(I::v_sub_v(MASK_B, MASK_B, TR_B));
        self.emit(I::s_setvl(VLEN_REG));
        for r in [CONF_B, MASK_B, TR_B] {
            self.emit(I::s_addi(r, r, 2 * l as i32));
        }
        for r in [X_B, X0_B] {
            self.emit(I::s_addi(r, r, 4 * l as i32));
        }
    }

    fn body(&mut self) {
        let c = self.c;
        let lay = self.layout;
        let (q, rem) = (c.block_len / c.steps, c.block_len % c.steps);

        self.b.label("t_loop");
        self.li(K_REG, q as u32);
        self.li(TMP, rem as u32);
        self.b.bge(T_REG, TMP, "k_ready");
        self.emit(I::s_addi(K_REG, K_REG, 1));
        self.b.label("k_ready");
        self.li(CONF_B, lay.confidence);
        self.li(MASK_B, lay.mask);
        self.li(TR_B, lay.transfer);
        self.li(X_B, lay.tokens);
        self.li(X0_B, lay.predictions);
        self.li(GROUP, 0);
        self.li(B_REG, 0);

        self.b.label("b_loop");
        if c.mode() == Mode::Performance {
            let group_bytes =
                c.vocab * c.block_len * c.preload_batches / MX_BLOCK_LEN * MX_BLOCK_BYTES;
            self.b.bne(GROUP, X0, "group_loaded");
            self.emit(I::h_prefetch_v(BUF, HBM, COUNT));
            self.emit(I::s_addi(HBM, HBM, group_bytes as i32));
            self.emit(I::s_addi(ROW_PTR, BUF, 0));
            self.b.label("group_loaded");
        }
        self.li(FP_SLOT, lay.fp_slots);
        self.emit(I::s_addi(X0_SLOT, X0_B, 0));
        self.li(L_REG, 0);

        self.b.label("l_loop");
        self.row();
        self.emit(I::s_addi(L_REG, L_REG, 1));
        self.b.bne(L_REG, L_BOUND, "l_loop");

        self.commit();
        if c.mode() == Mode::Performance {
            self.emit(I::s_addi(GROUP, GROUP, 1));
            self.b.bne(GROUP, GROUP_BOUND, "group_open");
            self.li(GROUP, 0);
            self.b.label("group_open");
        }
        self.emit(I::s_addi(B_REG, B_REG, 1));
        self.b.bne(B_REG, B_BOUND, "b_loop");

        self.b.label(STEP_END);
        self.emit(I::s_addi(T_REG, T_REG, 1));
        self.b.bne(T_REG, T_BOUND, "t_loop");
    }

    fn epilogue(&mut self) {
        let lay = self.layout;
        self.li(TMP, lay.tokens);
        self.li(VL_TMP, lay.tokens + 4 * lay.elements() as u32);
        self.b.label("drain");
        self.emit(I::fifo_push(TMP, 0));
        self.emit(I::s_addi(TMP, TMP, 4));
        self.b.bne(TMP, VL_TMP, "drain");
        self.emit(I::s_halt());
    }
}

/// Generate the sampling program for `config`.
pub fn gen_sampling_program(config: &SamplingConfig) -> Result<SamplingProgram, ConfigError> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut g = Gen {
        c: config,
        layout,
        b: ProgramBuilder::new(),
    };
    g.prologue();
    g.body();
    g.epilogue();
    let program = g.b.finish();
    let step_end_pc = program.labels[STEP_END];
    Ok(SamplingProgram {
        program,
        layout,
        step_end_pc,
        transfer_schedule: num_transfer_tokens(config.block_len, config.steps)
            .expect("validated T ≥ 1"),
    })
}

/// As [`gen_sampling_program`], also checking the configured SRAM capacities.
pub fn gen_for_run(config: &RunConfig) -> Result<SamplingProgram, ConfigError> {
    config.validate()?;
    gen_sampling_program(&config.sampling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::sram_footprint;

    #[test]
    fn transfer_tokens_examples() {
        assert_eq!(num_transfer_tokens(64, 8).unwrap(), vec![8; 8]);
        assert_eq!(num_transfer_tokens(10, 4).unwrap(), vec![3, 3, 2, 2]);
        assert_eq!(num_transfer_tokens(3, 5).unwrap(), vec![1, 1, 1, 0, 0]);
        assert_eq!(num_transfer_tokens(3, 0), Err(ZeroSteps));
    }

    #[test]
    fn layout_fills_footprint_exactly() {
        for c in [
            SamplingConfig::default(),
            SamplingConfig {
                batch: 4,
                vocab: 1024,
                v_chunk: 1024,
                preload_batches: 2,
                ..Default::default()
            },
        ] {
            let lay = Layout::new(&c);
            assert_eq!(lay.vector_end() as u64, sram_footprint(&c).vector_bytes);
            assert_eq!(
                (lay.predictions - INT_BASE) as u64 + 4 * lay.elements() as u64,
                sram_footprint(&c).int_bytes
            );
        }
    }

    #[test]
    fn program_validates_and_has_step_end() {
        let p = gen_sampling_program(&SamplingConfig::default()).unwrap();
        p.program.validate().unwrap();
        assert_eq!(p.program.labels[STEP_END], p.step_end_pc);
        assert!(p
            .program
            .instructions
            .iter()
            .any(|i| i.opcode.is_extension()));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let c = SamplingConfig {
            block_len: 128,
            ..Default::default()
        };
        assert!(gen_sampling_program(&c).is_err());
    }
}
