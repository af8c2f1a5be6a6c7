//! Single runs, oracle co-runs, step-by-step verification and sweeps.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegen::{gen_for_run, LogitsStub, SamplingProgram};
use crate::config::{ConfigError, Mode, RunConfig, SamplingConfig};
use crate::isa::{Instruction, Program};
use crate::machine::{sram_footprint, Domain, HbmSource, MachineState};
use crate::oracle::{oracle_sample, OracleOptions, OracleOutput, StepTrace, TieRule};
use crate::sim::{run_observed, CycleReport, Fault, NoObserver, Observer, RunError};

pub const SCHEMA_VERSION: u32 = 1;

/// Flat, CSV-friendly summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "B")]
    pub batch: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "L")]
    pub block_len: usize,
    #[serde(rename = "V")]
    pub vocab: usize,
    #[serde(rename = "V_chunk")]
    pub v_chunk: usize,
    #[serde(rename = "VLEN")]
    pub vlen: usize,
    #[serde(rename = "R")]
    pub preload_batches: usize,
    pub mode: Mode,
    pub seed: u64,
    pub total_cycles: u64,
    pub latency_ms: f64,
    pub vector_cycles: u64,
    pub memory_cycles: u64,
    pub scalar_cycles: u64,
    pub other_cycles: u64,
    pub hbm_bytes: u64,
    pub hbm_bw_gbps: f64,
    pub vector_sram_bytes: u64,
    pub fp_sram_bytes: u64,
    pub int_sram_bytes: u64,
    pub vector_high_water: u64,
    pub fp_high_water: u64,
    pub int_high_water: u64,
    pub instructions: u64,
    pub equivalence_pass: bool,
}

impl ReportRow {
    pub fn new(config: &RunConfig, report: &CycleReport, equivalence_pass: bool) -> Self {
        let s = &config.sampling;
        let fp = sram_footprint(s);
        let c = &report.counters;
        Self {
            batch: s.batch,
            steps: s.steps,
            block_len: s.block_len,
            vocab: s.vocab,
            v_chunk: s.v_chunk,
            vlen: s.vlen,
            preload_batches: s.preload_batches,
            mode: s.mode(),
            seed: s.seed,
            total_cycles: report.total_cycles,
            latency_ms: report.latency_ms(config.clock_ghz),
            vector_cycles: c.vector,
            memory_cycles: c.memory,
            scalar_cycles: c.scalar,
            other_cycles: c.other,
            hbm_bytes: c.hbm_bytes_moved,
            hbm_bw_gbps: report.hbm_bandwidth_gbps(config.clock_ghz),
            vector_sram_bytes: fp.vector_bytes,
            fp_sram_bytes: fp.fp_bytes,
            int_sram_bytes: fp.int_bytes,
            vector_high_water: report.high_water.vector,
            fp_high_water: report.high_water.fp,
            int_high_water: report.high_water.int,
            instructions: report.instructions,
            equivalence_pass,
        }
    }

    pub fn csv_header() -> &'static [&'static str] {
        &[
            "B",
            "T",
            "L",
            "V",
            "V_chunk",
            "VLEN",
            "R",
            "mode",
            "seed",
            "total_cycles",
            "latency_ms",
            "vector_cycles",
            "memory_cycles",
            "scalar_cycles",
            "other_cycles",
            "hbm_bytes",
            "hbm_bw_gbps",
            "vector_sram_bytes",
            "fp_sram_bytes",
            "int_sram_bytes",
            "vector_high_water",
            "fp_high_water",
            "int_high_water",
            "instructions",
            "equivalence_pass",
        ]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunFailure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fault(Fault),
    #[error("timed out after {limit} cycles")]
    Timeout {
        limit: u64,
        partial: Box<CycleReport>,
    },
}

impl From<RunError> for RunFailure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Fault(f) => RunFailure::Fault(f),
            RunError::Timeout { limit, partial } => RunFailure::Timeout { limit, partial },
        }
    }
}

/// Everything produced by one simulated run plus its oracle co-run.
#[derive(Debug)]
pub struct RunOutcome {
    pub row: ReportRow,
    pub report: CycleReport,
    pub oracle: OracleOutput,
    pub program: SamplingProgram,
}

fn prepare(config: &RunConfig) -> Result<(SamplingProgram, Arc<dyn HbmSource>), ConfigError> {
    let program = gen_for_run(config)?;
    let hbm: Arc<dyn HbmSource> = Arc::new(LogitsStub::new(&config.sampling));
    Ok((program, hbm))
}

fn simulate(
    config: &RunConfig,
    program: &SamplingProgram,
    hbm: Arc<dyn HbmSource>,
    observer: &mut dyn Observer,
) -> Result<CycleReport, RunFailure> {
    let mut state = MachineState::for_config(config, hbm);
    Ok(run_observed(
        &mut state,
        &program.program,
        config.max_cycles,
        observer,
    )?)
}

/// Generate, simulate, and co-run the oracle on the same logits.
pub fn run_config(config: &RunConfig) -> Result<RunOutcome, RunFailure> {
    run_config_observed(config, &mut NoObserver)
}

pub fn run_config_observed(
    config: &RunConfig,
    observer: &mut dyn Observer,
) -> Result<RunOutcome, RunFailure> {
    let (program, hbm) = prepare(config)?;
    let report = simulate(config, &program, Arc::clone(&hbm), observer)?;
    let oracle = oracle_sample(&config.sampling, hbm.as_ref(), OracleOptions::default());
    let pass = report.fifo == oracle.tokens;
    Ok(RunOutcome {
        row: ReportRow::new(config, &report, pass),
        report,
        oracle,
        program,
    })
}

/// Run a caller-supplied program on the machine and logits of `config`.
/// The equivalence flag compares its FIFO output with the oracle's tokens.
pub fn run_program_observed(
    config: &RunConfig,
    program: &Program,
    observer: &mut dyn Observer,
) -> Result<(ReportRow, CycleReport), RunFailure> {
    config.validate()?;
    let hbm: Arc<dyn HbmSource> = Arc::new(LogitsStub::new(&config.sampling));
    let mut state = MachineState::for_config(config, Arc::clone(&hbm));
    let report = run_observed(&mut state, program, config.max_cycles, observer)?;
    let oracle = oracle_sample(&config.sampling, hbm.as_ref(), OracleOptions::default());
    let pass = report.fifo == oracle.tokens;
    Ok((ReportRow::new(config, &report, pass), report))
}

/// Simulator state captured at the end of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSnapshot {
    pub confidence: Vec<f32>,
    pub predictions: Vec<i32>,
    pub transfer: Vec<bool>,
    pub tokens: Vec<i32>,
}

/// Records a [`StepSnapshot`] each time execution reaches the step-end label.
pub struct StepRecorder {
    program: SamplingProgram,
    pub steps: Vec<StepSnapshot>,
}

impl StepRecorder {
    pub fn new(program: SamplingProgram) -> Self {
        Self {
            program,
            steps: Vec::new(),
        }
    }
}

impl Observer for StepRecorder {
    fn before(&mut self, state: &MachineState, _inst: &Instruction) {
        if state.pc != self.program.step_end_pc {
            return;
        }
        let lay = self.program.layout;
        let n = lay.elements();
        let mut conf = Vec::new();
        let mut tr = Vec::new();
        let mut pred = Vec::new();
        let mut tok = Vec::new();
        state
            .load_bf16(Domain::Vector, lay.confidence, n, &mut conf)
            .expect("layout in bounds");
        state
            .load_bf16(Domain::Vector, lay.transfer, n, &mut tr)
            .expect("layout in bounds");
        state
            .load_int(lay.predictions, n, &mut pred)
            .expect("layout in bounds");
        state
            .load_int(lay.tokens, n, &mut tok)
            .expect("layout in bounds");
        self.steps.push(StepSnapshot {
            confidence: conf,
            predictions: pred,
            transfer: tr.into_iter().map(|v| v != 0.0).collect(),
            tokens: tok,
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub batch: usize,
    pub position: usize,
    pub field: String,
    pub simulator: String,
    pub oracle: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "first divergence at (t={}, b={}, l={}): {} simulator={} oracle={}",
            self.step, self.batch, self.position, self.field, self.simulator, self.oracle
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub steps_compared: usize,
    pub first_divergence: Option<Divergence>,
    pub tokens_match: bool,
}

/// Earliest (t, b, l) at which the simulator's step snapshots disagree with
/// the oracle trace.
pub fn diff_traces(
    sim: &[StepSnapshot],
    oracle: &[StepTrace],
    block_len: usize,
) -> Option<Divergence> {
    for (t, (s, o)) in sim.iter().zip(oracle).enumerate() {
        for i in 0..s.tokens.len() {
            let fields = [
                (
                    "confidence",
                    s.confidence[i].to_string(),
                    o.confidence[i].to_string(),
                ),
                (
                    "prediction",
                    s.predictions[i].to_string(),
                    o.predictions[i].to_string(),
                ),
                (
                    "transfer",
                    s.transfer[i].to_string(),
                    o.transfer[i].to_string(),
                ),
                ("token", s.tokens[i].to_string(), o.tokens[i].to_string()),
            ];
            if let Some((field, a, b)) = fields.into_iter().find(|(_, a, b)| a != b) {
                return Some(Divergence {
                    step: t,
                    batch: i / block_len,
                    position: i % block_len,
                    field: field.to_string(),
                    simulator: a,
                    oracle: b,
                });
            }
        }
    }
    if sim.len() != oracle.len() {
        return Some(Divergence {
            step: sim.len().min(oracle.len()),
            batch: 0,
            position: 0,
            field: "step count".into(),
            simulator: sim.len().to_string(),
            oracle: oracle.len().to_string(),
        });
    }
    None
}

/// Step-by-step comparison of simulator and oracle under `tie_rule`.
pub fn verify(config: &RunConfig, tie_rule: TieRule) -> Result<VerifyReport, RunFailure> {
    let (program, hbm) = prepare(config)?;
    let mut recorder = StepRecorder::new(program.clone());
    let report = simulate(config, &program, Arc::clone(&hbm), &mut recorder)?;
    let oracle = oracle_sample(
        &config.sampling,
        hbm.as_ref(),
        OracleOptions {
            tie_rule,
            ..Default::default()
        },
    );
    let first = diff_traces(&recorder.steps, &oracle.trace, config.sampling.block_len);
    let tokens_match = report.fifo == oracle.tokens;
    Ok(VerifyReport {
        pass: first.is_none() && tokens_match,
        steps_compared: recorder.steps.len().min(oracle.trace.len()),
        first_divergence: first,
        tokens_match,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "B")]
    Batch,
    #[serde(rename = "T")]
    Steps,
    #[serde(rename = "V")]
    Vocab,
    #[serde(rename = "V_chunk")]
    VChunk,
    #[serde(rename = "VLEN")]
    Vlen,
}

impl Axis {
    pub fn parse(text: &str) -> Option<Axis> {
        match text {
            "B" | "batch" => Some(Axis::Batch),
            "T" | "steps" => Some(Axis::Steps),
            "V" | "vocab" => Some(Axis::Vocab),
            "V_chunk" | "v_chunk" => Some(Axis::VChunk),
            "VLEN" | "vlen" => Some(Axis::Vlen),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Batch => "B",
            Axis::Steps => "T",
            Axis::Vocab => "V",
            Axis::VChunk => "V_chunk",
            Axis::Vlen => "VLEN",
        }
    }

    pub fn apply(self, sampling: &SamplingConfig, value: usize) -> SamplingConfig {
        let mut s = sampling.clone();
        match self {
            Axis::Batch => s.batch = value,
            Axis::Steps => s.steps = value,
            Axis::Vocab => s.vocab = value,
            Axis::VChunk => s.v_chunk = value,
            Axis::Vlen => s.vlen = value,
        }
        s.mode = None;
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<usize>,
    pub base: RunConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep values must be non-empty and strictly increasing")]
    Values,
    #[error("{axis}={value}: {source}")]
    Row {
        axis: &'static str,
        value: usize,
        #[source]
        source: RunFailure,
    },
    #[error("{axis}={value}: simulator tokens differ from the oracle")]
    Equivalence { axis: &'static str, value: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub rows: Vec<ReportRow>,
    /// Latency-vs-value linear fit, for the B, T and V axes.
    pub r_squared: Option<f64>,
    /// First V_chunk whose latency is within 5% of the last value's.
    pub saturation: Option<usize>,
    /// `(max − min) / min` of achieved HBM bandwidth.
    pub bandwidth_spread: f64,
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

/// First value whose latency is within `tolerance` (relative) of the final one.
pub fn saturation_point(values: &[usize], latency: &[f64], tolerance: f64) -> Option<usize> {
    let last = *latency.last()?;
    values
        .iter()
        .zip(latency)
        .find(|(_, l)| (*l - last).abs() <= tolerance * last)
        .map(|(v, _)| *v)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    if spec.values.is_empty() || spec.values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SweepError::Values);
    }
    let axis = spec.axis;
    let configs: Vec<RunConfig> = spec
        .values
        .iter()
        .map(|&v| {
            spec.base
                .clone()
                .with_sampling(axis.apply(&spec.base.sampling, v))
        })
        .collect();
    for (c, &value) in configs.iter().zip(&spec.values) {
        c.validate().map_err(|e| SweepError::Row {
            axis: axis.name(),
            value,
            source: e.into(),
        })?;
    }
    let outcomes: Vec<Result<ReportRow, RunFailure>> = configs
        .par_iter()
        .map(|c| run_config(c).map(|o| o.row))
        .collect();
    let mut rows = Vec::with_capacity(outcomes.len());
    for (o, &value) in outcomes.into_iter().zip(&spec.values) {
        let row = o.map_err(|source| SweepError::Row {
            axis: axis.name(),
            value,
            source,
        })?;
        if !row.equivalence_pass {
            return Err(SweepError::Equivalence {
                axis: axis.name(),
                value,
            });
        }
        rows.push(row);
    }

    let xs: Vec<f64> = spec.values.iter().map(|&v| v as f64).collect();
    let lat: Vec<f64> = rows.iter().map(|r| r.total_cycles as f64).collect();
    let r_squared = match axis {
        Axis::Batch | Axis::Steps | Axis::Vocab if rows.len() >= 2 => {
            Some(linear_r_squared(&xs, &lat))
        }
        _ => None,
    };
    let saturation = match axis {
        Axis::VChunk => saturation_point(&spec.values, &lat, 0.05),
        _ => None,
    };
    let bw: Vec<f64> = rows.iter().map(|r| r.hbm_bw_gbps).collect();
    let lo = bw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = bw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SweepResult {
        axis,
        rows,
        r_squared,
        saturation,
        bandwidth_spread: if lo > 0.0 { (hi - lo) / lo } else { 0.0 },
    })
}
