//! Decode-execute loop. Each instruction is charged to exactly one cycle
//! category; prefetches charge only the cycles double buffering leaves exposed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::isa::{format_instruction, Instruction, Opcode, Program};
use crate::machine::{
    hbm_prefetch, Category, CycleCounters, Domain, FaultKind, HighWater, MachineState,
    SramCapacities,
};
use crate::numerics::{scalar_exp, scalar_recip};
use crate::units::{
    elementwise_exp, elementwise_sub, elementwise_sub_scalar, reduce_max_idx, reduce_sum,
    select_int, topk_mask,
};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("fault at pc {pc} ({instruction}): {kind}")]
pub struct Fault {
    pub pc: usize,
    pub instruction: String,
    pub kind: FaultKind,
}

/// Effect of one executed instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecOutcome {
    pub pc: usize,
    pub next_pc: usize,
    pub category: Category,
    pub cycles: u64,
    pub halted: bool,
}

fn addr(base: i32, offset: i32) -> u32 {
    (base as u32).wrapping_add(offset as u32)
}

/// Execute the instruction at `state.pc`.
pub fn step(state: &mut MachineState, program: &Program) -> Result<ExecOutcome, Fault> {
    let pc = state.pc;
    let inst = *program.instructions.get(pc).ok_or_else(|| Fault {
        pc,
        instruction: "<none>".into(),
        kind: FaultKind::PcOutOfRange(pc),
    })?;
    match execute(state, &inst, pc) {
        Ok(outcome) => {
            state.pc = outcome.next_pc;
            state.halted = outcome.halted;
            state.retired += 1;
            if inst.opcode != Opcode::HPrefetchV {
                state.cycles.charge(outcome.category, outcome.cycles);
                state.note_compute(outcome.cycles);
            }
            Ok(outcome)
        }
        Err(kind) => Err(Fault {
            pc,
            instruction: format_instruction(&inst, None),
            kind,
        }),
    }
}

fn execute(s: &mut MachineState, inst: &Instruction, pc: usize) -> Result<ExecOutcome, FaultKind> {
    let regs = s.gp;
    let gp = |r: u8| regs[r as usize];
    let t = s.timings.clone();
    let vl = s.vl;
    let mut next_pc = pc + 1;
    let mut halted = false;
    let (category, cycles) = match inst.opcode {
        Opcode::VRedMaxIdx | Opcode::VRedMax => {
            let mut buf = Vec::with_capacity(vl);
            s.load_bf16(Domain::Vector, gp(inst.rs1) as u32, vl, &mut buf)?;
            let base = if inst.opcode == Opcode::VRedMaxIdx {
                gp(inst.rs3) as i64
            } else {
                0
            };
            let (m, idx) = reduce_max_idx(&buf, base).ok_or(FaultKind::EmptyVector)?;
            s.fp[inst.rd as usize] = m;
            if inst.opcode == Opcode::VRedMaxIdx {
                set_gp(s, inst.rs2, idx as i32);
            }
            (Category::Vector, t.reduction_cost(s.vlen))
        }
        Opcode::VRedSum => {
            if vl == 0 {
                return Err(FaultKind::EmptyVector);
            }
            let mut buf = Vec::with_capacity(vl);
            s.load_bf16(Domain::Vector, gp(inst.rs1) as u32, vl, &mut buf)?;
            s.fp[inst.rd as usize] = reduce_sum(&buf);
            (Category::Vector, t.reduction_cost(s.vlen))
        }
        Opcode::VSubScalar | Opcode::VExp => {
            let at = gp(inst.rs1) as u32;
            let mut buf = Vec::with_capacity(vl);
            s.load_bf16(Domain::Vector, at, vl, &mut buf)?;
            if inst.opcode == Opcode::VExp {
                elementwise_exp(&mut buf);
            } else {
                elementwise_sub_scalar(&mut buf, s.fp[inst.rs2 as usize]);
            }
            s.store_bf16(Domain::Vector, at, &buf)?;
            (Category::Vector, t.elementwise_cost())
        }
        Opcode::VSubV => {
            let mut a = Vec::with_capacity(vl);
            let mut b = Vec::with_capacity(vl);
            s.load_bf16(Domain::Vector, gp(inst.rs1) as u32, vl, &mut a)?;
            s.load_bf16(Domain::Vector, gp(inst.rs2) as u32, vl, &mut b)?;
            elementwise_sub(&mut a, &b);
            s.store_bf16(Domain::Vector, gp(inst.rd) as u32, &a)?;
            (Category::Vector, t.elementwise_cost())
        }
        Opcode::VTopkMask => {
            let k = gp(inst.rs3);
            if k < 0 {
                return Err(FaultKind::NegativeCount(k as i64));
            }
            let mut conf = Vec::with_capacity(vl);
            let mut elig = Vec::with_capacity(vl);
            s.load_bf16(Domain::Vector, gp(inst.rs1) as u32, vl, &mut conf)?;
            s.load_bf16(Domain::Vector, gp(inst.rs2) as u32, vl, &mut elig)?;
            let eligible: Vec<bool> = elig.iter().map(|v| *v != 0.0).collect();
            let mask: Vec<f32> = topk_mask(&conf, &eligible, k as usize)
                .into_iter()
                .map(|m| if m { 1.0 } else { 0.0 })
                .collect();
            s.store_bf16(Domain::Vector, gp(inst.rd) as u32, &mask)?;
            (Category::Vector, t.topk_cost(vl))
        }
        Opcode::VSelectInt => {
            let mut m = Vec::with_capacity(vl);
            let mut a = Vec::with_capacity(vl);
            let mut b = Vec::with_capacity(vl);
            s.load_bf16(Domain::Vector, gp(inst.rs1) as u32, vl, &mut m)?;
            s.load_int(gp(inst.rs2) as u32, vl, &mut a)?;
            s.load_int(gp(inst.rs3) as u32, vl, &mut b)?;
            let mask: Vec<bool> = m.iter().map(|v| *v != 0.0).collect();
            let out = select_int(&mask, &a, &b).expect("equal lengths by construction");
            s.store_int(gp(inst.rd) as u32, &out)?;
            (Category::Vector, t.elementwise_cost())
        }
        Opcode::HPrefetchV => {
            let offset = gp(inst.rs1) as u32 as u64;
            let count = gp(inst.rs2) as i64;
            let exposed = hbm_prefetch(s, offset, count, gp(inst.rd) as u32)?;
            (Category::Memory, exposed)
        }
        Opcode::SMapVFp => {
            let n = inst.imm;
            if n < 0 {
                return Err(FaultKind::NegativeCount(n as i64));
            }
            let mut buf = Vec::with_capacity(n as usize);
            s.load_bf16(Domain::Fp, gp(inst.rs1) as u32, n as usize, &mut buf)?;
            s.store_bf16(Domain::Vector, gp(inst.rd) as u32, &buf)?;
            (Category::Memory, t.transfer_cost(n as usize, s.vlen))
        }
        Opcode::SStFp => {
            let v = s.fp[inst.rd as usize];
            s.store_bf16(Domain::Fp, addr(gp(inst.rs1), inst.imm), &[v])?;
            (Category::Scalar, t.scalar_latency)
        }
        Opcode::SStInt => {
            let v = gp(inst.rd);
            s.store_int(addr(gp(inst.rs1), inst.imm), &[v])?;
            (Category::Scalar, t.scalar_latency)
        }
        Opcode::SExp => {
            s.fp[inst.rd as usize] = scalar_exp(s.fp[inst.rs1 as usize]);
            (Category::Scalar, t.fp_exp_latency)
        }
        Opcode::SRecip => {
            s.fp[inst.rd as usize] =
                scalar_recip(s.fp[inst.rs1 as usize]).ok_or(FaultKind::DivideByZero)?;
            (Category::Scalar, t.fp_recip_latency)
        }
        Opcode::SFmul | Opcode::SFadd | Opcode::SFsub => {
            let a = s.fp[inst.rs1 as usize];
            let b = s.fp[inst.rs2 as usize];
            s.fp[inst.rd as usize] = match inst.opcode {
                Opcode::SFmul => a * b,
                Opcode::SFadd => a + b,
                _ => a - b,
            };
            (Category::Scalar, t.scalar_latency)
        }
        Opcode::SFli => {
            s.fp[inst.rd as usize] = inst.float_imm();
            (Category::Scalar, t.scalar_latency)
        }
        Opcode::SFmaxIdx => {
            let cand = s.fp[inst.rs2 as usize];
            if cand > s.fp[inst.rd as usize] {
                s.fp[inst.rd as usize] = cand;
                let idx = gp(inst.rs3);
                set_gp(s, inst.rs1, idx);
            }
            (Category::Scalar, t.scalar_latency)
        }
        Opcode::SLi => {
            set_gp(s, inst.rd, inst.imm);
            (Category::Scalar, t.scalar_latency)
        }
        Opcode::SAddi => {
            let v = gp(inst.rs1).wrapping_add(inst.imm);
            set_gp(s, inst.rd, v);
            (Category::Scalar, t.scalar_latency)
        }
        Opcode::SSetvl => {
            s.vl = gp(inst.rs1).clamp(0, s.vlen as i32) as usize;
            (Category::Other, t.scalar_latency)
        }
        Opcode::SBne | Opcode::SBge => {
            let (a, b) = (gp(inst.rs1), gp(inst.rs2));
            let taken = if inst.opcode == Opcode::SBne {
                a != b
            } else {
                a >= b
            };
            if taken {
                next_pc = inst.imm as usize;
            }
            (Category::Other, t.branch_latency)
        }
        Opcode::SHalt => {
            halted = true;
            next_pc = pc;
            (Category::Other, 1)
        }
        Opcode::FifoPush => {
            let mut v = Vec::with_capacity(1);
            s.load_int(addr(gp(inst.rs1), inst.imm), 1, &mut v)?;
            s.fifo_out.push(v[0]);
            (Category::Scalar, t.scalar_latency)
        }
    };
    Ok(ExecOutcome {
        pc,
        next_pc,
        category,
        cycles,
        halted,
    })
}

fn set_gp(s: &mut MachineState, r: u8, v: i32) {
    if r != 0 {
        s.gp[r as usize] = v;
    }
}

/// Result summary of a completed (or timed-out) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub counters: CycleCounters,
    pub total_cycles: u64,
    pub instructions: u64,
    pub high_water: HighWater,
    pub capacities: SramCapacities,
    pub fifo: Vec<i32>,
    pub halted: bool,
}

impl CycleReport {
    pub fn from_state(state: &MachineState) -> Self {
        Self {
            counters: state.cycles,
            total_cycles: state.cycles.total(),
            instructions: state.retired,
            high_water: state.high_water,
            capacities: state.capacities(),
            fifo: state.fifo_out.clone(),
            halted: state.halted,
        }
    }

    pub fn hbm_bytes_per_cycle(&self) -> f64 {
        if self.total_cycles == 0 {
            0.0
        } else {
            self.counters.hbm_bytes_moved as f64 / self.total_cycles as f64
        }
    }

    /// Achieved HBM bandwidth in GB/s (10^9 bytes per second).
    pub fn hbm_bandwidth_gbps(&self, clock_ghz: f64) -> f64 {
        self.hbm_bytes_per_cycle() * clock_ghz
    }

    pub fn latency_ms(&self, clock_ghz: f64) -> f64 {
        self.total_cycles as f64 / (clock_ghz * 1e6)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Fault(#[from] Fault),
    #[error("exceeded {limit} cycles")]
    Timeout {
        limit: u64,
        partial: Box<CycleReport>,
    },
}

/// Hooks around every executed instruction.
pub trait Observer {
    fn before(&mut self, _state: &MachineState, _inst: &Instruction) {}
    fn after(&mut self, _state: &MachineState, _inst: &Instruction, _outcome: &ExecOutcome) {}
}

pub struct NoObserver;
impl Observer for NoObserver {}

/// One line per instruction: pc, disassembly, cycles, category.
pub struct TraceWriter<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, error: None }
    }

    pub fn finish(self) -> std::io::Result<W> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.out),
        }
    }
}

impl<W: Write> Observer for TraceWriter<W> {
    fn after(&mut self, _state: &MachineState, inst: &Instruction, o: &ExecOutcome) {
        if self.error.is_none() {
            let line = format_instruction(inst, None);
            if let Err(e) = writeln!(self.out, "{}\t{}\t{}\t{}", o.pc, line, o.cycles, o.category) {
                self.error = Some(e);
            }
        }
    }
}

pub fn run(
    state: &mut MachineState,
    program: &Program,
    max_cycles: u64,
) -> Result<CycleReport, RunError> {
    run_observed(state, program, max_cycles, &mut NoObserver)
}

pub fn run_observed(
    state: &mut MachineState,
    program: &Program,
    max_cycles: u64,
    observer: &mut dyn Observer,
) -> Result<CycleReport, RunError> {
    while !state.halted {
        if let Some(inst) = program.instructions.get(state.pc) {
            observer.before(state, inst);
        }
        let outcome = step(state, program)?;
        observer.after(state, &program.instructions[outcome.pc], &outcome);
        if state.cycles.total() > max_cycles {
            return Err(RunError::Timeout {
                limit: max_cycles,
                partial: Box::new(CycleReport::from_state(state)),
            });
        }
    }
    Ok(CycleReport::from_state(state))
}
