//! Instruction set: the six sampling extensions plus the small base subset
//! the generated sampling programs need.
//!
//! Vector operands are byte addresses held in integer registers; the active
//! vector length is the `vl` register set by `s_setvl`.

mod asm;
mod disasm;

pub use asm::{assemble, AsmError, AsmErrorKind};
pub use disasm::{disassemble, format_instruction};

use std::collections::BTreeMap;
use std::fmt;

pub const NUM_REGS: u8 = 32;

/// Integer (general-purpose) register index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Gp(pub u8);

/// Scalar floating-point register index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fp(pub u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    // Sampling extensions.
    VRedMaxIdx,
    SStFp,
    SStInt,
    SMapVFp,
    VTopkMask,
    VSelectInt,
    // Base subset.
    HPrefetchV,
    VRedMax,
    VRedSum,
    VSubScalar,
    VSubV,
    VExp,
    SExp,
    SRecip,
    SFmul,
    SFadd,
    SFsub,
    SFli,
    SFmaxIdx,
    SLi,
    SAddi,
    SSetvl,
    SBne,
    SBge,
    SHalt,
    FifoPush,
}

/// Register file or immediate class of one textual operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperandKind {
    Gp,
    Fp,
    Imm,
    /// 32-bit float stored bit-for-bit in `imm`.
    FloatImm,
    /// Instruction index stored in `imm`.
    Label,
}

/// Instruction field an operand is stored in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Rd,
    Rs1,
    Rs2,
    Rs3,
    Imm,
}

pub type Signature = &'static [(OperandKind, Field)];

use Field::*;
use OperandKind as K;

impl Opcode {
    pub const ALL: [Opcode; 26] = [
        Opcode::VRedMaxIdx,
        Opcode::SStFp,
        Opcode::SStInt,
        Opcode::SMapVFp,
        Opcode::VTopkMask,
        Opcode::VSelectInt,
        Opcode::HPrefetchV,
        Opcode::VRedMax,
        Opcode::VRedSum,
        Opcode::VSubScalar,
        Opcode::VSubV,
        Opcode::VExp,
        Opcode::SExp,
        Opcode::SRecip,
        Opcode::SFmul,
        Opcode::SFadd,
        Opcode::SFsub,
        Opcode::SFli,
        Opcode::SFmaxIdx,
        Opcode::SLi,
        Opcode::SAddi,
        Opcode::SSetvl,
        Opcode::SBne,
        Opcode::SBge,
        Opcode::SHalt,
        Opcode::FifoPush,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::VRedMaxIdx => "v_red_max_idx",
            Opcode::SStFp => "s_st_fp",
            Opcode::SStInt => "s_st_int",
            Opcode::SMapVFp => "s_map_v_fp",
            Opcode::VTopkMask => "v_topk_mask",
            Opcode::VSelectInt => "v_select_int",
            Opcode::HPrefetchV => "h_prefetch_v",
            Opcode::VRedMax => "v_red_max",
            Opcode::VRedSum => "v_red_sum",
            Opcode::VSubScalar => "v_sub_scalar",
            Opcode::VSubV => "v_sub_v",
            Opcode::VExp => "v_exp",
            Opcode::SExp => "s_exp",
            Opcode::SRecip => "s_recip",
            Opcode::SFmul => "s_fmul",
            Opcode::SFadd => "s_fadd",
            Opcode::SFsub => "s_fsub",
            Opcode::SFli => "s_fli",
            Opcode::SFmaxIdx => "s_fmax_idx",
            Opcode::SLi => "s_li",
            Opcode::SAddi => "s_addi",
            Opcode::SSetvl => "s_setvl",
            Opcode::SBne => "s_bne",
            Opcode::SBge => "s_bge",
            Opcode::SHalt => "s_halt",
            Opcode::FifoPush => "fifo_push",
        }
    }

    pub fn from_mnemonic(text: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == text)
    }

    /// True for the six sampling extensions.
    pub fn is_extension(self) -> bool {
        matches!(
            self,
            Opcode::VRedMaxIdx
                | Opcode::SStFp
                | Opcode::SStInt
                | Opcode::SMapVFp
                | Opcode::VTopkMask
                | Opcode::VSelectInt
        )
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Opcode::SBne | Opcode::SBge)
    }

    /// Textual operand order and the field each operand lands in.
    pub fn signature(self) -> Signature {
        match self {
            // fd ← max, xi ← base + argmax over [xa, xa + vl)
            Opcode::VRedMaxIdx => &[(K::Fp, Rd), (K::Gp, Rs1), (K::Gp, Rs2), (K::Gp, Rs3)],
            Opcode::SStFp => &[(K::Fp, Rd), (K::Gp, Rs1), (K::Imm, Imm)],
            Opcode::SStInt => &[(K::Gp, Rd), (K::Gp, Rs1), (K::Imm, Imm)],
            Opcode::SMapVFp => &[(K::Gp, Rd), (K::Gp, Rs1), (K::Imm, Imm)],
            Opcode::VTopkMask => &[(K::Gp, Rd), (K::Gp, Rs1), (K::Gp, Rs2), (K::Gp, Rs3)],
            Opcode::VSelectInt => &[(K::Gp, Rd), (K::Gp, Rs1), (K::Gp, Rs2), (K::Gp, Rs3)],
            Opcode::HPrefetchV => &[(K::Gp, Rd), (K::Gp, Rs1), (K::Gp, Rs2)],
            Opcode::VRedMax | Opcode::VRedSum => &[(K::Fp, Rd), (K::Gp, Rs1)],
            Opcode::VSubScalar => &[(K::Gp, Rs1), (K::Fp, Rs2)],
            Opcode::VSubV => &[(K::Gp, Rd), (K::Gp, Rs1), (K::Gp, Rs2)],
            Opcode::VExp => &[(K::Gp, Rs1)],
            Opcode::SExp | Opcode::SRecip => &[(K::Fp, Rd), (K::Fp, Rs1)],
            Opcode::SFmul | Opcode::SFadd | Opcode::SFsub => {
                &[(K::Fp, Rd), (K::Fp, Rs1), (K::Fp, Rs2)]
            }
            Opcode::SFli => &[(K::Fp, Rd), (K::FloatImm, Imm)],
            Opcode::SFmaxIdx => &[(K::Fp, Rd), (K::Gp, Rs1), (K::Fp, Rs2), (K::Gp, Rs3)],
            Opcode::SLi => &[(K::Gp, Rd), (K::Imm, Imm)],
            Opcode::SAddi => &[(K::Gp, Rd), (K::Gp, Rs1), (K::Imm, Imm)],
            Opcode::SSetvl => &[(K::Gp, Rs1)],
            Opcode::SBne | Opcode::SBge => &[(K::Gp, Rs1), (K::Gp, Rs2), (K::Label, Imm)],
            Opcode::SHalt => &[],
            Opcode::FifoPush => &[(K::Gp, Rs1), (K::Imm, Imm)],
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Decoded instruction. Fields not named by the opcode's signature are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub rs3: u8,
    pub imm: i32,
}

impl Instruction {
    pub fn new(opcode: Opcode) -> Self {
        Self {
            opcode,
            rd: 0,
            rs1: 0,
            rs2: 0,
            rs3: 0,
            imm: 0,
        }
    }

    pub fn field(&self, field: Field) -> i64 {
        match field {
            Rd => self.rd as i64,
            Rs1 => self.rs1 as i64,
            Rs2 => self.rs2 as i64,
            Rs3 => self.rs3 as i64,
            Imm => self.imm as i64,
        }
    }

    fn set_field(&mut self, field: Field, value: i64) {
        match field {
            Rd => self.rd = value as u8,
            Rs1 => self.rs1 = value as u8,
            Rs2 => self.rs2 = value as u8,
            Rs3 => self.rs3 = value as u8,
            Imm => self.imm = value as i32,
        }
    }

    pub fn float_imm(&self) -> f32 {
        f32::from_bits(self.imm as u32)
    }

    fn regs_in_range(&self) -> bool {
        self.opcode
            .signature()
            .iter()
            .all(|(kind, field)| match kind {
                K::Gp | K::Fp => self.field(*field) < NUM_REGS as i64,
                _ => true,
            })
    }

    fn with(opcode: Opcode, operands: &[i64]) -> Self {
        let mut inst = Instruction::new(opcode);
        for ((_, field), value) in opcode.signature().iter().zip(operands) {
            inst.set_field(*field, *value);
        }
        inst
    }

    pub fn v_red_max_idx(fd: Fp, addr: Gp, idx: Gp, base: Gp) -> Self {
        Self::with(
            Opcode::VRedMaxIdx,
            &[fd.0 as i64, addr.0 as i64, idx.0 as i64, base.0 as i64],
        )
    }
    pub fn s_st_fp(fs: Fp, addr: Gp, offset: i32) -> Self {
        Self::with(Opcode::SStFp, &[fs.0 as i64, addr.0 as i64, offset as i64])
    }
    pub fn s_st_int(xs: Gp, addr: Gp, offset: i32) -> Self {
        Self::with(Opcode::SStInt, &[xs.0 as i64, addr.0 as i64, offset as i64])
    }
    pub fn s_map_v_fp(vdst: Gp, fsrc: Gp, count: i32) -> Self {
        Self::with(
            Opcode::SMapVFp,
            &[vdst.0 as i64, fsrc.0 as i64, count as i64],
        )
    }
    pub fn v_topk_mask(dst: Gp, conf: Gp, eligible: Gp, k: Gp) -> Self {
        Self::with(
            Opcode::VTopkMask,
            &[dst.0 as i64, conf.0 as i64, eligible.0 as i64, k.0 as i64],
        )
    }
    pub fn v_select_int(dst: Gp, mask: Gp, a: Gp, b: Gp) -> Self {
        Self::with(
            Opcode::VSelectInt,
            &[dst.0 as i64, mask.0 as i64, a.0 as i64, b.0 as i64],
        )
    }
    pub fn h_prefetch_v(vdst: Gp, hbm: Gp, count: Gp) -> Self {
        Self::with(
            Opcode::HPrefetchV,
            &[vdst.0 as i64, hbm.0 as i64, count.0 as i64],
        )
    }
    pub fn v_red_max(fd: Fp, addr: Gp) -> Self {
        Self::with(Opcode::VRedMax, &[fd.0 as i64, addr.0 as i64])
    }
    pub fn v_red_sum(fd: Fp, addr: Gp) -> Self {
        Self::with(Opcode::VRedSum, &[fd.0 as i64, addr.0 as i64])
    }
    pub fn v_sub_scalar(addr: Gp, fs: Fp) -> Self {
        Self::with(Opcode::VSubScalar, &[addr.0 as i64, fs.0 as i64])
    }
    pub fn v_sub_v(dst: Gp, a: Gp, b: Gp) -> Self {
        Self::with(Opcode::VSubV, &[dst.0 as i64, a.0 as i64, b.0 as i64])
    }
    pub fn v_exp(addr: Gp) -> Self {
        Self::with(Opcode::VExp, &[addr.0 as i64])
    }
    pub fn s_exp(fd: Fp, fs: Fp) -> Self {
        Self::with(Opcode::SExp, &[fd.0 as i64, fs.0 as i64])
    }
    pub fn s_recip(fd: Fp, fs: Fp) -> Self {
        Self::with(Opcode::SRecip, &[fd.0 as i64, fs.0 as i64])
    }
    pub fn s_fmul(fd: Fp, a: Fp, b: Fp) -> Self {
        Self::with(Opcode::SFmul, &[fd.0 as i64, a.0 as i64, b.0 as i64])
    }
    pub fn s_fadd(fd: Fp, a: Fp, b: Fp) -> Self {
        Self::with(Opcode::SFadd, &[fd.0 as i64, a.0 as i64, b.0 as i64])
    }
    pub fn s_fsub(fd: Fp, a: Fp, b: Fp) -> Self {
        Self::with(Opcode::SFsub, &[fd.0 as i64, a.0 as i64, b.0 as i64])
    }
    pub fn s_fli(fd: Fp, value: f32) -> Self {
        Self::with(Opcode::SFli, &[fd.0 as i64, value.to_bits() as i32 as i64])
    }
    pub fn s_fmax_idx(fmax: Fp, xidx: Gp, fcand: Fp, xcand: Gp) -> Self {
        Self::with(
            Opcode::SFmaxIdx,
            &[fmax.0 as i64, xidx.0 as i64, fcand.0 as i64, xcand.0 as i64],
        )
    }
    pub fn s_li(xd: Gp, imm: i32) -> Self {
        Self::with(Opcode::SLi, &[xd.0 as i64, imm as i64])
    }
    pub fn s_addi(xd: Gp, xs: Gp, imm: i32) -> Self {
        Self::with(Opcode::SAddi, &[xd.0 as i64, xs.0 as i64, imm as i64])
    }
    pub fn s_setvl(xs: Gp) -> Self {
        Self::with(Opcode::SSetvl, &[xs.0 as i64])
    }
    pub fn s_bne(a: Gp, b: Gp, target: usize) -> Self {
        Self::with(Opcode::SBne, &[a.0 as i64, b.0 as i64, target as i64])
    }
    pub fn s_bge(a: Gp, b: Gp, target: usize) -> Self {
        Self::with(Opcode::SBge, &[a.0 as i64, b.0 as i64, target as i64])
    }
    pub fn s_halt() -> Self {
        Self::new(Opcode::SHalt)
    }
    pub fn fifo_push(addr: Gp, offset: i32) -> Self {
        Self::with(Opcode::FifoPush, &[addr.0 as i64, offset as i64])
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_instruction(self, None))
    }
}

/// Instruction list plus label table (name → instruction index).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("instruction {index}: register index out of range")]
    RegisterOutOfRange { index: usize },
    #[error("instruction {index}: branch target {target} outside program of {len} instructions")]
    BadBranchTarget {
        index: usize,
        target: i64,
        len: usize,
    },
    #[error("label `{name}` points past the end of the program")]
    BadLabel { name: String },
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let len = self.instructions.len();
        for (index, inst) in self.instructions.iter().enumerate() {
            if !inst.regs_in_range() {
                return Err(ProgramError::RegisterOutOfRange { index });
            }
            if inst.opcode.is_branch() && (inst.imm < 0 || inst.imm as usize >= len) {
                return Err(ProgramError::BadBranchTarget {
                    index,
                    target: inst.imm as i64,
                    len,
                });
            }
        }
        if let Some((name, _)) = self.labels.iter().find(|(_, &i)| i > len) {
            return Err(ProgramError::BadLabel { name: name.clone() });
        }
        Ok(())
    }
}

/// Incremental program construction with forward label references.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    program: Program,
    fixups: Vec<(usize, String)>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn here(&self) -> usize {
        self.program.instructions.len()
    }

    pub fn push(&mut self, inst: Instruction) -> &mut Self {
        self.program.instructions.push(inst);
        self
    }

    /// Define `name` at the next instruction. Panics on a duplicate name.
    pub fn label(&mut self, name: impl Into<String>) -> &mut Self {
        let name = name.into();
        let at = self.here();
        let prev = self.program.labels.insert(name.clone(), at);
        assert!(prev.is_none(), "duplicate label {name}");
        self
    }

    pub fn bne(&mut self, a: Gp, b: Gp, target: impl Into<String>) -> &mut Self {
        self.branch(Instruction::s_bne(a, b, 0), target)
    }

    pub fn bge(&mut self, a: Gp, b: Gp, target: impl Into<String>) -> &mut Self {
        self.branch(Instruction::s_bge(a, b, 0), target)
    }

    fn branch(&mut self, inst: Instruction, target: impl Into<String>) -> &mut Self {
        self.fixups.push((self.here(), target.into()));
        self.push(inst)
    }

    /// Resolve forward references. Panics on an undefined label.
    pub fn finish(mut self) -> Program {
        for (at, name) in self.fixups {
            let target = *self
                .program
                .labels
                .get(&name)
                .unwrap_or_else(|| panic!("undefined label {name}"));
            self.program.instructions[at].imm = target as i32;
        }
        self.program
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_extensions() {
        let ext: Vec<_> = Opcode::ALL.iter().filter(|o| o.is_extension()).collect();
        assert_eq!(ext.len(), 6);
    }

    #[test]
    fn mnemonics_are_unique_and_lowercase() {
        let mut seen = std::collections::HashSet::new();
        for op in Opcode::ALL {
            assert!(seen.insert(op.mnemonic()));
            assert_eq!(op.mnemonic(), op.mnemonic().to_lowercase());
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(op));
        }
    }

    #[test]
    fn validate_rejects_bad_targets() {
        let mut p = Program::default();
        p.instructions.push(Instruction::s_bne(Gp(1), Gp(2), 5));
        assert!(matches!(
            p.validate(),
            Err(ProgramError::BadBranchTarget { target: 5, .. })
        ));
        p.instructions[0].imm = 0;
        assert!(p.validate().is_ok());
        p.instructions.push(Instruction::s_li(Gp(40), 0));
        assert!(matches!(
            p.validate(),
            Err(ProgramError::RegisterOutOfRange { index: 1 })
        ));
    }

    #[test]
    fn builder_resolves_forward_labels() {
        let mut b = ProgramBuilder::new();
        b.bne(Gp(1), Gp(0), "end");
        b.push(Instruction::s_li(Gp(1), 3));
        b.label("end").push(Instruction::s_halt());
        let p = b.finish();
        assert_eq!(p.instructions[0].imm, 2);
        assert_eq!(p.labels["end"], 2);
    }
}
