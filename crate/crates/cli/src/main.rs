use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use npusim::codegen::{gen_for_run, LogitsStub};
use npusim::config::RunConfig;
use npusim::isa::Program;
use npusim::isa::{assemble, disassemble};
use npusim::oracle::{format_trace, oracle_sample, OracleOptions, TieRule};
use npusim::report::{
    run_config_observed, run_program_observed, run_sweep, verify, Axis, ReportRow, RunFailure,
    SweepError, SweepResult, SweepSpec, SCHEMA_VERSION,
};
use npusim::sim::{CycleReport, NoObserver, Observer, TraceWriter};

const EXIT_CONFIG: u8 = 1;
const EXIT_EQUIVALENCE: u8 = 2;
const EXIT_FAULT: u8 = 3;
const EXIT_TIMEOUT: u8 = 4;

#[derive(Parser)]
#[command(name = "npusim", version, about = "Cycle-level NPU sampling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, short, env = "NPUSIM_CONFIG")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set B=4 --set memory.hbm_fixed_latency=80`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, simulate and co-run the oracle for one configuration.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Emit JSON instead of a text summary.
        #[arg(long)]
        json: bool,
        /// Also write the report (CSV, or JSON with --json) to this file.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Write a per-instruction trace (pc, instruction, cycles, category).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Execute this assembly file instead of the generated program.
        #[arg(long)]
        program: Option<PathBuf>,
    },
    /// Run one configuration per value of an axis.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of B, T, V, V_chunk, VLEN.
        #[arg(long)]
        axis: String,
        /// Comma-separated, strictly increasing; `k` suffix means ×1024.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Gnuplot script plotting the CSV (requires --csv).
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Step-by-step comparison of simulator and oracle.
    Verify {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Oracle breaks confidence ties toward the higher index.
        #[arg(long)]
        perturb_ties: bool,
        /// Write the oracle's per-step trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Assemble a source file and print its canonical form.
    Asm {
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print the generated sampling program for a configuration.
    Disasm {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<RunFailure> for Failure {
    fn from(e: RunFailure) -> Self {
        let code = match &e {
            RunFailure::Config(_) => EXIT_CONFIG,
            RunFailure::Fault(_) => EXIT_FAULT,
            RunFailure::Timeout { .. } => EXIT_TIMEOUT,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut pairs = Vec::with_capacity(args.overrides.len());
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::new(EXIT_CONFIG, format!("override `{o}` is not KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let text = match &args.config {
        Some(path) => fs::read_to_string(path).map_err(|e| io_err(path, e))?,
        None => String::new(),
    };
    RunConfig::from_toml_with_overrides(&text, &pairs)
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
}

fn parse_value(text: &str) -> Result<usize, Failure> {
    let t = text.trim();
    let (digits, mult) = match t.strip_suffix(['k', 'K']) {
        Some(d) => (d, 1024),
        None => (t, 1),
    };
    digits
        .parse::<usize>()
        .map(|v| v * mult)
        .map_err(|_| Failure::new(EXIT_CONFIG, format!("bad sweep value `{text}`")))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
}

#[derive(Serialize)]
struct RunJson<'a> {
    schema_version: u32,
    kind: &'static str,
    row: &'a ReportRow,
    fifo: &'a [i32],
}

#[derive(Serialize)]
struct SweepJson<'a> {
    schema_version: u32,
    kind: &'static str,
    #[serde(flatten)]
    result: &'a SweepResult,
}

fn summary(row: &ReportRow) -> String {
    let total = row.total_cycles.max(1) as f64;
    let pct = |c: u64| 100.0 * c as f64 / total;
    format!(
        "config       B={} T={} L={} V={} V_chunk={} VLEN={} R={} mode={} seed={}\n\
         total        {} cycles ({:.4} ms)\n\
         vector       {} ({:.1}%)\n\
         memory       {} ({:.1}%)\n\
         scalar       {} ({:.1}%)\n\
         other        {} ({:.1}%)\n\
         hbm          {} bytes, {:.2} GB/s\n\
         sram bytes   vector {} fp {} int {}\n\
         high water   vector {} fp {} int {}\n\
         instructions {}\n\
         equivalence  {}\n",
        row.batch,
        row.steps,
        row.block_len,
        row.vocab,
        row.v_chunk,
        row.vlen,
        row.preload_batches,
        row.mode,
        row.seed,
        row.total_cycles,
        row.latency_ms,
        row.vector_cycles,
        pct(row.vector_cycles),
        row.memory_cycles,
        pct(row.memory_cycles),
        row.scalar_cycles,
        pct(row.scalar_cycles),
        row.other_cycles,
        pct(row.other_cycles),
        row.hbm_bytes,
        row.hbm_bw_gbps,
        row.vector_sram_bytes,
        row.fp_sram_bytes,
        row.int_sram_bytes,
        row.vector_high_water,
        row.fp_high_water,
        row.int_high_water,
        row.instructions,
        if row.equivalence_pass { "pass" } else { "FAIL" },
    )
}

fn gnuplot_script(csv: &Path, axis: Axis) -> String {
    let col = ReportRow::csv_header()
        .iter()
        .position(|h| *h == axis.name())
        .expect("axis column")
        + 1;
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel '{name}'\n\
         set ylabel 'latency (ms)'\n\
         set y2label 'HBM bandwidth (GB/s)'\n\
         set y2tics\n\
         plot '{file}' using {col}:11 with linespoints title 'latency', \\\n\
         \x20    '' using {col}:17 axes x1y2 with linespoints title 'bandwidth'\n",
        name = axis.name(),
        file = csv.display(),
    )
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    let source = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let program = assemble(&source)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    program
        .validate()
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    Ok(program)
}

fn simulate(
    config: &RunConfig,
    program: Option<&Program>,
    observer: &mut dyn Observer,
) -> Result<(ReportRow, CycleReport), Failure> {
    Ok(match program {
        Some(p) => run_program_observed(config, p, observer)?,
        None => {
            let outcome = run_config_observed(config, observer)?;
            (outcome.row, outcome.report)
        }
    })
}

fn cmd_run(
    cfg: &ConfigArgs,
    json: bool,
    output: Option<&Path>,
    trace: Option<&Path>,
    program: Option<&Path>,
) -> Result<(), Failure> {
    let config = load_config(cfg)?;
    let program = program.map(load_program).transpose()?;
    let (row, report) = match trace {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
            let mut writer = TraceWriter::new(std::io::BufWriter::new(file));
            let result = simulate(&config, program.as_ref(), &mut writer);
            writer
                .finish()
                .and_then(|mut w| w.flush())
                .map_err(|e| io_err(path, e))?;
            result?
        }
        None => simulate(&config, program.as_ref(), &mut NoObserver)?,
    };
    let row = &row;
    let text = if json {
        let doc = RunJson {
            schema_version: SCHEMA_VERSION,
            kind: "run",
            row,
            fifo: &report.fifo,
        };
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    } else {
        summary(row)
    };
    print!("{text}");
    if let Some(path) = output {
        let bytes = if json {
            text.into_bytes()
        } else {
            csv_bytes(std::slice::from_ref(row))?
        };
        write_file(path, &bytes)?;
    }
    if row.equivalence_pass {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_EQUIVALENCE,
            "simulator tokens differ from the oracle",
        ))
    }
}

fn cmd_sweep(
    cfg: &ConfigArgs,
    axis: &str,
    values: &[String],
    csv_path: Option<&Path>,
    json_path: Option<&Path>,
    gnuplot: Option<&Path>,
) -> Result<(), Failure> {
    let base = load_config(cfg)?;
    let axis = Axis::parse(axis).ok_or_else(|| {
        Failure::new(
            EXIT_CONFIG,
            format!("unknown axis `{axis}` (B, T, V, V_chunk, VLEN)"),
        )
    })?;
    let values = values
        .iter()
        .map(|v| parse_value(v))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SweepSpec { axis, values, base };
    let result = run_sweep(&spec).map_err(|e| match e {
        SweepError::Values => Failure::new(EXIT_CONFIG, e.to_string()),
        SweepError::Equivalence { .. } => Failure::new(EXIT_EQUIVALENCE, e.to_string()),
        SweepError::Row {
            axis,
            value,
            source,
        } => {
            let f = Failure::from(source);
            Failure::new(f.code, format!("{axis}={value}: {}", f.message))
        }
    })?;

    let csv = csv_bytes(&result.rows)?;
    std::io::stdout()
        .write_all(&csv)
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    if let Some(r2) = result.r_squared {
        eprintln!("linear fit R^2 = {r2:.6}");
    }
    if let Some(s) = result.saturation {
        eprintln!("saturation at {} = {s}", axis.name());
    }
    eprintln!("bandwidth spread = {:.4}", result.bandwidth_spread);
    if let Some(path) = csv_path {
        write_file(path, &csv)?;
    }
    if let Some(path) = json_path {
        let doc = SweepJson {
            schema_version: SCHEMA_VERSION,
            kind: "sweep",
            result: &result,
        };
        write_file(
            path,
            (serde_json::to_string_pretty(&doc).expect("serializable") + "\n").as_bytes(),
        )?;
    }
    if let Some(path) = gnuplot {
        let csv_path =
            csv_path.ok_or_else(|| Failure::new(EXIT_CONFIG, "--gnuplot needs --csv"))?;
        write_file(path, gnuplot_script(csv_path, axis).as_bytes())?;
    }
    Ok(())
}

fn cmd_verify(cfg: &ConfigArgs, perturb: bool, trace: Option<&Path>) -> Result<(), Failure> {
    let config = load_config(cfg)?;
    let tie = if perturb {
        TieRule::HighestIndex
    } else {
        TieRule::LowestIndex
    };
    let report = verify(&config, tie)?;
    if let Some(path) = trace {
        let hbm = LogitsStub::new(&config.sampling);
        let out = oracle_sample(
            &config.sampling,
            &hbm,
            OracleOptions {
                tie_rule: tie,
                ..Default::default()
            },
        );
        write_file(
            path,
            format_trace(&out.trace, config.sampling.block_len).as_bytes(),
        )?;
    }
    match &report.first_divergence {
        None if report.pass => {
            println!("pass: {} steps identical", report.steps_compared);
            Ok(())
        }
        None => Err(Failure::new(EXIT_EQUIVALENCE, "final tokens differ")),
        Some(d) => Err(Failure::new(EXIT_EQUIVALENCE, d.to_string())),
    }
}

fn cmd_asm(input: &Path, output: Option<&Path>) -> Result<(), Failure> {
    emit(&disassemble(&load_program(input)?), output)
}

fn cmd_disasm(cfg: &ConfigArgs, output: Option<&Path>) -> Result<(), Failure> {
    let config = load_config(cfg)?;
    let generated = gen_for_run(&config).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    emit(&disassemble(&generated.program), output)
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            cfg,
            json,
            output,
            trace,
            program,
        } => cmd_run(
            cfg,
            *json,
            output.as_deref(),
            trace.as_deref(),
            program.as_deref(),
        ),
        Command::Sweep {
            cfg,
            axis,
            values,
            csv,
            json,
            gnuplot,
        } => cmd_sweep(
            cfg,
            axis,
            values,
            csv.as_deref(),
            json.as_deref(),
            gnuplot.as_deref(),
        ),
        Command::Verify {
            cfg,
            perturb_ties,
            trace,
        } => cmd_verify(cfg, *perturb_ties, trace.as_deref()),
        Command::Asm { input, output } => cmd_asm(input, output.as_deref()),
        Command::Disasm { cfg, output } => cmd_disasm(cfg, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
