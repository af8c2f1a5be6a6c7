//! Acceptance criteria C1–C8. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use npusim::codegen::{gen_for_run, LogitsStub};
use npusim::config::{Mode, RunConfig, SamplingConfig};
use npusim::machine::read_elements;
use npusim::numerics::{mx_decode, mx_encode, MX_BLOCK_LEN};
use npusim::oracle::{datapath_confidence, format_trace, row_start, softmax_confidence};
use npusim::report::{
    run_config, run_config_observed, run_sweep, Axis, ReportRow, StepRecorder, SweepSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C1_CONFIGS: usize = 50;
/// Upper bound on `B·L·V·T` per randomized config, to keep the suite desk-scale.
const C1_ELEMENT_BUDGET: usize = 1 << 23;
const C2_ROWS: [(usize, usize, usize, usize); 3] = [
    // (V, rows, V_chunk, VLEN)
    (64, 4000, 64, 64),
    (2048, 4000, 128, 64),
    (131072, 2000, 8192, 2048),
];
const C2_TOLERANCE: f64 = 1.0 / 128.0;
const C3_VECTOR_TOLERANCE: f64 = 0.01;
const C4_R2: f64 = 0.99;
const C4_BW_SPREAD: f64 = 0.10;
const C5_TOLERANCE: f64 = 0.10;
const C6_REFERENCE_CYCLES: f64 = 991_038.0;
const C6_TOLERANCE: f64 = 0.25;
const C6_VECTOR_SHARE: (f64, f64) = (0.35, 0.60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run_cfg(sampling: SamplingConfig) -> RunConfig {
    RunConfig {
        sampling,
        ..Default::default()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn random_config(rng: &mut ChaCha8Rng, mode: Mode) -> SamplingConfig {
    loop {
        let block_len = rng.random_range(8..=64usize);
        let steps = rng.random_range(1..=32usize);
        let mut batch = rng.random_range(1..=32usize);
        let vlen = [64usize, 128, 256, 512, 1024, 2048][rng.random_range(0..6)]
            .max(block_len.next_power_of_two());
        let log_v = rng.random_range(6.0f64..=17.0);
        let mut vocab = 2f64.powf(log_v) as usize;
        let seed = rng.random();
        let mut c = SamplingConfig {
            batch,
            steps,
            block_len,
            vlen,
            seed,
            ..Default::default()
        };
        match mode {
            Mode::Edge => {
                let unit = vlen.max(MX_BLOCK_LEN);
                vocab = (vocab / MX_BLOCK_LEN * MX_BLOCK_LEN).max(unit + MX_BLOCK_LEN);
                let max_chunks = (vocab - 1) / unit;
                c.v_chunk = unit * rng.random_range(1..=max_chunks.min(256));
                c.vocab = vocab;
            }
            Mode::Performance => {
                let step = MX_BLOCK_LEN / gcd(block_len, MX_BLOCK_LEN);
                vocab = (vocab / step * step).max(step);
                c.vocab = vocab;
                c.v_chunk = vocab;
            }
        }
        while c.batch * c.block_len * c.vocab * c.steps > C1_ELEMENT_BUDGET && c.batch > 1 {
            c.batch /= 2;
        }
        while c.batch * c.block_len * c.vocab * c.steps > C1_ELEMENT_BUDGET && c.steps > 1 {
            c.steps /= 2;
        }
        batch = c.batch;
        if mode == Mode::Performance {
            let divisors: Vec<usize> = (1..=batch).filter(|r| batch % r == 0).collect();
            c.preload_batches = divisors[rng.random_range(0..divisors.len())];
        }
        if c.batch * c.block_len * c.vocab * c.steps <= C1_ELEMENT_BUDGET && c.validate().is_ok() {
            return c;
        }
    }
}

fn c1_configs() -> Vec<SamplingConfig> {
    let corner = |b, t, l, v, chunk, vlen, r| SamplingConfig {
        batch: b,
        steps: t,
        block_len: l,
        vocab: v,
        v_chunk: chunk,
        vlen,
        preload_batches: r,
        seed: 11,
        ..Default::default()
    };
    let mut configs = vec![
        corner(32, 32, 64, 64, 64, 64, 4),
        corner(1, 1, 8, 131072, 8192, 2048, 1),
        corner(1, 2, 32, 131072, 131072, 2048, 1),
        corner(32, 1, 8, 2048, 128, 64, 1),
        corner(2, 32, 16, 1024, 256, 128, 1),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    while configs.len() < C1_CONFIGS {
        let mode = if configs.len() % 2 == 0 {
            Mode::Edge
        } else {
            Mode::Performance
        };
        configs.push(random_config(&mut rng, mode));
    }
    configs
}

fn c1(rows: &mut Vec<ReportRow>) -> Outcome {
    let configs = c1_configs();
    let mut failures = Vec::new();
    let mut mismatches = 0usize;
    let (mut edge, mut perf) = (0, 0);
    for c in &configs {
        match c.mode() {
            Mode::Edge => edge += 1,
            Mode::Performance => perf += 1,
        }
        match run_config(&run_cfg(c.clone())) {
            Ok(out) => {
                let wrong = out
                    .report
                    .fifo
                    .iter()
                    .zip(&out.oracle.tokens)
                    .filter(|(a, b)| a != b)
                    .count()
                    + out.report.fifo.len().abs_diff(out.oracle.tokens.len());
                mismatches += wrong;
                if wrong > 0 || !out.row.equivalence_pass {
                    failures.push(format!("{c:?}"));
                }
                rows.push(out.row);
            }
            Err(e) => failures.push(format!("{c:?}: {e}")),
        }
    }
    let span = |f: fn(&SamplingConfig) -> usize| {
        let lo = configs.iter().map(f).min().unwrap();
        let hi = configs.iter().map(f).max().unwrap();
        format!("{lo}..{hi}")
    };
    outcome(
        failures.is_empty() && edge > 0 && perf > 0,
        format!(
            "{} configs ({edge} edge, {perf} performance), {mismatches} token mismatches; B {} T {} L {} V {}{}",
            configs.len(),
            span(|c| c.batch),
            span(|c| c.steps),
            span(|c| c.block_len),
            span(|c| c.vocab),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(" | "))
            }
        ),
    )
}

/// An MX-quantized logits row of one of several shapes, optionally with
/// a duplicated maximum.
fn c2_row(rng: &mut ChaCha8Rng, v: usize, tie: bool) -> Vec<f32> {
    let shape = rng.random_range(0..3);
    let temperature = 2f32.powf(rng.random_range(-1.0..3.0));
    let mut raw: Vec<f32> = (0..v)
        .map(|_| match shape {
            0 => rng.random_range(-8.0f32..8.0),
            1 => {
                // Sum of uniforms: roughly normal.
                let s: f32 = (0..4).map(|_| rng.random_range(-1.0f32..1.0)).sum();
                s * temperature
            }
            _ => rng.random_range(-1.0f32..1.0) * temperature - 4.0,
        })
        .collect();
    if shape == 2 {
        // A few dominant tokens.
        for _ in 0..rng.random_range(1..4) {
            let i = rng.random_range(0..v);
            raw[i] += rng.random_range(2.0f32..12.0);
        }
    }
    let mut row = Vec::with_capacity(v);
    for block in raw.chunks(MX_BLOCK_LEN) {
        let mut b = [0f32; MX_BLOCK_LEN];
        b[..block.len()].copy_from_slice(block);
        row.extend(
            mx_decode(&mx_encode(&b))
                .iter()
                .take(block.len())
                .map(|x| x.to_f32()),
        );
    }
    if tie {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let copies = rng.random_range(1..4);
        for _ in 0..copies {
            let i = rng.random_range(0..v);
            row[i] = m;
        }
    }
    row
}

struct C2Stats {
    rows: usize,
    ties: usize,
    argmax_mismatch: usize,
    max_rel: f64,
}

impl C2Stats {
    fn add(&mut self, row: &[f32], conf: f32, arg: usize, tie: bool) {
        let wide: Vec<f64> = row.iter().map(|x| *x as f64).collect();
        let (ref_arg, p) = softmax_confidence(&wide);
        self.rows += 1;
        self.ties += tie as usize;
        self.argmax_mismatch += (ref_arg != arg) as usize;
        self.max_rel = self.max_rel.max((conf as f64 - p).abs() / p);
    }
}

fn c2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let mut model = C2Stats {
        rows: 0,
        ties: 0,
        argmax_mismatch: 0,
        max_rel: 0.0,
    };
    for (v, n, chunk, vlen) in C2_ROWS {
        for i in 0..n {
            let tie = i % 4 == 0;
            let row = c2_row(&mut rng, v, tie);
            let d = datapath_confidence(&row, chunk, vlen);
            model.add(&row, d.confidence, d.argmax, tie);
        }
    }

    // Confidences read back from the simulator's Vector SRAM at the first step end.
    let mut sim = C2Stats {
        rows: 0,
        ties: 0,
        argmax_mismatch: 0,
        max_rel: 0.0,
    };
    let sim_configs = [
        (4, 64, 64, 64, 64),
        (2, 64, 2048, 128, 64),
        (1, 32, 131072, 8192, 2048),
    ];
    for (b, l, v, chunk, vlen) in sim_configs {
        let sampling = SamplingConfig {
            batch: b,
            steps: 2,
            block_len: l,
            vocab: v,
            v_chunk: chunk,
            vlen,
            seed: 0xC2,
            ..Default::default()
        };
        let config = run_cfg(sampling.clone());
        let mut recorder = StepRecorder::new(gen_for_run(&config).unwrap());
        if let Err(e) = run_config_observed(&config, &mut recorder) {
            return outcome(false, format!("simulator run failed: {e}"));
        }
        let stub = LogitsStub::new(&sampling);
        let first = &recorder.steps[0];
        for i in 0..b * l {
            let mut row = Vec::new();
            read_elements(&stub, row_start(&sampling, 0, i / l, i % l), v, &mut row);
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let tie = row.iter().filter(|x| **x == m).count() > 1;
            sim.add(
                &row,
                first.confidence[i],
                first.predictions[i] as usize,
                tie,
            );
        }
    }

    let pass = model.argmax_mismatch == 0
        && sim.argmax_mismatch == 0
        && model.max_rel <= C2_TOLERANCE
        && sim.max_rel <= C2_TOLERANCE;
    outcome(
        pass,
        format!(
            "datapath model: {} rows ({} with duplicated maxima), {} argmax mismatches, max rel err {:.3e}; \
             simulator: {} rows ({} tied), {} argmax mismatches, max rel err {:.3e}; bound {:.3e}",
            model.rows,
            model.ties,
            model.argmax_mismatch,
            model.max_rel,
            sim.rows,
            sim.ties,
            sim.argmax_mismatch,
            sim.max_rel,
            C2_TOLERANCE
        ),
    )
}

/// Closed-form SRAM bytes: Int 4 B, FP and Vector 2 B per element.
fn closed_form(c: &SamplingConfig) -> (u64, u64, u64) {
    let (b, l, v) = (c.batch as u64, c.block_len as u64, c.vocab as u64);
    let int = 2 * b * l;
    let fp = l.max(c.vlen as u64);
    let vector = 3 * b * l
        + if (c.v_chunk as u64) < v {
            c.v_chunk as u64
        } else {
            v * l * c.preload_batches as u64
        };
    (2 * vector, 2 * fp, 4 * int)
}

fn row_sampling(r: &ReportRow) -> SamplingConfig {
    SamplingConfig {
        batch: r.batch,
        steps: r.steps,
        block_len: r.block_len,
        vocab: r.vocab,
        v_chunk: r.v_chunk,
        vlen: r.vlen,
        preload_batches: r.preload_batches,
        seed: r.seed,
        ..Default::default()
    }
}

fn c3(rows: &[ReportRow]) -> Outcome {
    let mut bad = Vec::new();
    for r in rows {
        let (vector, fp, int) = closed_form(&row_sampling(r));
        let got = (r.vector_sram_bytes, r.fp_sram_bytes, r.int_sram_bytes);
        let touched = (r.vector_high_water, r.fp_high_water, r.int_high_water);
        // Vector and Int regions are used in full; FP holds one value per position.
        let used = (vector, 2 * r.block_len as u64, int);
        if got != (vector, fp, int) || touched != used {
            bad.push(format!(
                "B={} L={} V={} V_chunk={} VLEN={}: reported {got:?}, touched {touched:?}, closed form {:?}",
                r.batch,
                r.block_len,
                r.vocab,
                r.v_chunk,
                r.vlen,
                (vector, fp, int)
            ));
        }
    }

    let reference = |vlen| SamplingConfig {
        batch: 16,
        steps: 1,
        block_len: 32,
        vocab: 126_000,
        v_chunk: 126_000,
        vlen,
        preload_batches: 1,
        ..Default::default()
    };
    let fp_kb: Vec<u64> = [512, 1024, 2048]
        .iter()
        .map(|&vlen| npusim::machine::sram_footprint(&reference(vlen)).fp_bytes)
        .collect();
    let fp_ok = fp_kb == [1024, 2048, 4096];
    let vector = npusim::machine::sram_footprint(&reference(2048)).vector_bytes;
    let vector_rel = (vector as f64 - 8e6).abs() / 8e6;
    let vector_ok = vector_rel <= C3_VECTOR_TOLERANCE;

    outcome(
        bad.is_empty() && fp_ok && vector_ok && !rows.is_empty(),
        format!(
            "{} swept configs match the closed forms; high-water marks equal them (FP: 2·L B) ({} mismatches); \
             FP SRAM at VLEN 512/1024/2048 = {:?} B; Vector SRAM at B=16 L=32 V=126000 R=1 = {} B ({:.2}% from 8 MB){}",
            rows.len(),
            bad.len(),
            fp_kb,
            vector,
            100.0 * vector_rel,
            if bad.is_empty() {
                String::new()
            } else {
                format!("; first: {}", bad[0])
            }
        ),
    )
}

fn fig4_base(batch: usize, steps: usize, vocab: usize, v_chunk: usize) -> RunConfig {
    run_cfg(SamplingConfig {
        batch,
        steps,
        block_len: 64,
        vocab,
        v_chunk,
        vlen: 64,
        ..Default::default()
    })
}

fn c4(rows: &mut Vec<ReportRow>) -> Outcome {
    let sweeps = [
        (
            Axis::Batch,
            vec![2, 4, 8, 16, 32],
            fig4_base(2, 1, 2048, 128),
        ),
        (
            Axis::Steps,
            vec![2, 4, 8, 16, 32],
            fig4_base(2, 1, 2048, 128),
        ),
        (
            Axis::Vocab,
            (11..=17).map(|e| 1usize << e).collect(),
            fig4_base(2, 1, 2048, 128),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (axis, values, base) in sweeps {
        match run_sweep(&SweepSpec { axis, values, base }) {
            Ok(res) => {
                let r2 = res.r_squared.unwrap_or(0.0);
                let ok = r2 >= C4_R2 && res.bandwidth_spread < C4_BW_SPREAD;
                pass &= ok;
                parts.push(format!(
                    "{}: R^2 {:.5}, bw spread {:.2}%",
                    axis.name(),
                    r2,
                    100.0 * res.bandwidth_spread
                ));
                rows.extend(res.rows);
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{}: {e}", axis.name()));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn c5(rows: &mut Vec<ReportRow>) -> Outcome {
    let values: Vec<usize> = vec![128, 256, 512, 1024, 2048, 4096, 8192, 16384, 30720];
    let spec = SweepSpec {
        axis: Axis::VChunk,
        values: values.clone(),
        base: fig4_base(2, 1, 131072, 128),
    };
    let res = match run_sweep(&spec) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let lat: Vec<f64> = res.rows.iter().map(|r| r.latency_ms).collect();
    let monotone = lat.windows(2).all(|w| w[1] <= w[0]);
    let at_8k = lat[values.iter().position(|v| *v == 8192).unwrap()];
    let at_30k = *lat.last().unwrap();
    let rel = (at_8k - at_30k).abs() / at_30k;
    rows.extend(res.rows.iter().cloned());
    outcome(
        monotone && rel <= C5_TOLERANCE,
        format!(
            "latency ms over V_chunk {:?} = [{}]; non-increasing: {monotone}; 8k vs 30k: {:.2}%; saturation (5%) at {:?}",
            values,
            lat.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(", "),
            100.0 * rel,
            res.saturation
        ),
    )
}

fn c6() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/calibration.toml");
    let config = match RunConfig::load(&path, &[]) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("{}: {e}", path.display())),
    };
    let out = match run_config(&config) {
        Ok(o) => o,
        Err(e) => return outcome(false, e.to_string()),
    };
    let r = &out.row;
    let total = r.total_cycles as f64;
    let dev = (total - C6_REFERENCE_CYCLES) / C6_REFERENCE_CYCLES;
    let share = r.vector_cycles as f64 / total;
    let ordered = r.vector_cycles > r.memory_cycles
        && r.memory_cycles > r.scalar_cycles
        && r.scalar_cycles > r.other_cycles;
    let pass = dev.abs() <= C6_TOLERANCE
        && ordered
        && (C6_VECTOR_SHARE.0..=C6_VECTOR_SHARE.1).contains(&share)
        && r.equivalence_pass;
    outcome(
        pass,
        format!(
            "total {} cycles ({:+.1}% vs 991038); vector {} ({:.1}%), memory {} ({:.1}%), scalar {} ({:.1}%), other {} ({:.1}%); equivalence {}",
            r.total_cycles,
            100.0 * dev,
            r.vector_cycles,
            100.0 * share,
            r.memory_cycles,
            100.0 * r.memory_cycles as f64 / total,
            r.scalar_cycles,
            100.0 * r.scalar_cycles as f64 / total,
            r.other_cycles,
            100.0 * r.other_cycles as f64 / total,
            r.equivalence_pass
        ),
    )
}

fn c7() -> Outcome {
    let configs = [
        fig4_base(4, 4, 4096, 512),
        run_cfg(SamplingConfig {
            batch: 4,
            steps: 3,
            block_len: 32,
            vocab: 8192,
            v_chunk: 8192,
            vlen: 256,
            preload_batches: 2,
            seed: 77,
            ..Default::default()
        }),
    ];
    let render = |c: &RunConfig| -> Result<String, String> {
        let out = run_config(c).map_err(|e| e.to_string())?;
        Ok(format!(
            "{}\n{:?}\n{}",
            serde_json::to_string(&out.row).unwrap(),
            out.report.fifo,
            format_trace(&out.oracle.trace, c.sampling.block_len)
        ))
    };
    let mut identical = 0;
    let mut notes = Vec::new();
    for c in &configs {
        match (render(c), render(c)) {
            (Ok(a), Ok(b)) if a == b => identical += 1,
            (Ok(_), Ok(_)) => notes.push(format!("{:?} differs between runs", c.sampling)),
            (Err(e), _) | (_, Err(e)) => notes.push(e),
        }
    }
    let sweep = || {
        run_sweep(&SweepSpec {
            axis: Axis::Batch,
            values: vec![1, 2, 4],
            base: fig4_base(1, 2, 1024, 256),
        })
        .map(|r| serde_json::to_string(&r).unwrap())
        .map_err(|e| e.to_string())
    };
    let sweep_same = matches!((sweep(), sweep()), (Ok(a), Ok(b)) if a == b);
    let seeded = {
        let a = run_config(&configs[0]).map(|o| o.report.fifo).ok();
        let mut other = configs[0].clone();
        other.sampling.seed += 1;
        let b = run_config(&other).map(|o| o.report.fifo).ok();
        a.is_some() && a != b
    };
    outcome(
        identical == configs.len() && sweep_same && seeded,
        format!(
            "{identical}/{} runs byte-identical (report JSON, FIFO, oracle trace); sweep JSON identical: {sweep_same}; \
             different seed changes tokens: {seeded}{}",
            configs.len(),
            if notes.is_empty() {
                String::new()
            } else {
                format!("; {}", notes.join("; "))
            }
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut results: Vec<(&str, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: &'static str, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((id, name, o, t.elapsed().as_secs_f64()));
    };
    timed("C1", "token-level equivalence", &mut || c1(&mut rows));
    timed("C2", "Stable-Max equivalence", &mut c2);
    timed("C4", "scaling linearity", &mut || c4(&mut rows));
    timed("C5", "chunk-size saturation", &mut || c5(&mut rows));
    let swept = rows.clone();
    timed("C3", "SRAM closed forms", &mut || c3(&swept));
    timed("C6", "cycle calibration", &mut c6);
    timed("C7", "determinism", &mut c7);
    results.push((
        "C8",
        "excluded at desk scale",
        outcome(
            true,
            "GPU baselines, speedup factors, post-synthesis area/power and end-to-end model latency are not reproduced; C1-C7 substitute",
        ),
        0.0,
    ));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    println!();
    for (id, name, o, secs) in &results {
        let status = if *id == "C8" {
            "EXCLUDED"
        } else if o.pass {
            "PASS"
        } else {
            failed += 1;
            "FAIL"
        };
        println!("{id} {name}: {status} [{secs:.1} s] {}", o.detail);
    }
    println!(
        "\nacceptance: {} of 7 criteria passed, C8 excluded ({:.1} s)",
        7 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
