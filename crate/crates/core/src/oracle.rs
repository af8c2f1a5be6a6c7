//! Plain-software reference sampler.
//!
//! Reads the same MX-encoded logits the simulator streams and replays the
//! sampling loop with straightforward data structures: full-row argmax,
//! sort-based Top-k and elementwise commits.
//!
//! Two confidence routes are provided. [`softmax_confidence`] is the textbook
//! definition (`p[argmax]` of a max-subtracted softmax). [`datapath_confidence`]
//! evaluates `1/Σe^(z−m)` with the arithmetic the hardware performs: BF16
//! storage of `z − m` and of each exponential, 32-bit tree sums per vector, and
//! the cross-chunk rescale. Ranking confidences for Top-k uses the datapath
//! route by default, because after BF16 rounding the two routes may order
//! nearly-equal confidences differently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegen::num_transfer_tokens;
use crate::config::SamplingConfig;
use crate::machine::{read_elements, HbmSource};
use crate::numerics::{round_bf16, Scalar};

/// Index of the first maximum. `None` on empty input.
pub fn argmax<F: Scalar>(row: &[F]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in row.iter().enumerate() {
        match best {
            Some(b) if *v <= row[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// `(argmax, p[argmax])` of `softmax(row)`, ties toward the lowest index.
pub fn softmax_confidence<F: Scalar>(row: &[F]) -> (usize, F) {
    let arg = argmax(row).expect("non-empty row");
    let m = row[arg];
    let exps: Vec<F> = row.iter().map(|z| (*z - m).exp()).collect();
    let total = exps.iter().fold(F::zero(), |acc, e| acc + *e);
    (arg, exps[arg] / total)
}

/// Sum of a zero-padded power-of-two tree, halves added recursively.
fn padded_tree_sum(v: &[f32]) -> f32 {
    fn rec(v: &[f32], lo: usize, width: usize) -> f32 {
        if width == 1 {
            v.get(lo).copied().unwrap_or(0.0)
        } else {
            let half = width / 2;
            rec(v, lo, half) + rec(v, lo + half, half)
        }
    }
    if v.is_empty() {
        0.0
    } else {
        rec(v, 0, v.len().next_power_of_two())
    }
}

fn exp32(x: f32) -> f32 {
    (x as f64).exp() as f32
}

/// Bit-level model of the hardware confidence for one logits row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatapathConfidence {
    pub argmax: usize,
    pub max: f32,
    /// Final 32-bit `Σ e^(z−m)`.
    pub sum: f32,
    /// `1/sum` as stored in BF16.
    pub confidence: f32,
}

/// Stable-Max as executed by the generated program: the row is processed in
/// chunks of `chunk_len` (the last may be short), each chunk in vectors of
/// `vlen` lanes, with `s ← s·e^(m_old − m_new) + Σ_vectors tree_sum(bf16(e^bf16(z − m_new)))`.
pub fn datapath_confidence(row: &[f32], chunk_len: usize, vlen: usize) -> DatapathConfidence {
    let mut m = f32::NEG_INFINITY;
    let mut arg = 0usize;
    let mut s = 0f32;
    let mut base = 0usize;
    let mut lanes = Vec::with_capacity(vlen);
    for chunk in row.chunks(chunk_len) {
        let local = argmax(chunk).expect("non-empty chunk");
        let old = m;
        if chunk[local] > m {
            m = chunk[local];
            arg = base + local;
        }
        s *= exp32(old - m);
        for sub in chunk.chunks(vlen) {
            lanes.clear();
            lanes.extend(sub.iter().map(|z| round_bf16(exp32(round_bf16(z - m)))));
            s += padded_tree_sum(&lanes);
        }
        base += chunk.len();
    }
    DatapathConfidence {
        argmax: arg,
        max: m,
        sum: s,
        confidence: round_bf16(1.0 / s),
    }
}

/// Which confidence value ranks positions for Top-k.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfidenceRoute {
    #[default]
    Datapath,
    /// `softmax_confidence` in 32 bits, rounded to BF16.
    Softmax,
}

/// Which of two equally confident positions Top-k prefers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieRule {
    #[default]
    LowestIndex,
    HighestIndex,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OracleOptions {
    pub route: ConfidenceRoute,
    pub tie_rule: TieRule,
}

/// Positions chosen by a full sort of eligible confidences.
pub fn sort_topk(confidence: &[f32], eligible: &[bool], k: usize, tie: TieRule) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..confidence.len()).filter(|&i| eligible[i]).collect();
    idx.sort_by(|&a, &b| {
        confidence[b]
            .partial_cmp(&confidence[a])
            .expect("finite confidences")
            .then(match tie {
                TieRule::LowestIndex => a.cmp(&b),
                TieRule::HighestIndex => b.cmp(&a),
            })
    });
    let mut mask = vec![false; confidence.len()];
    for &i in idx.iter().take(k) {
        mask[i] = true;
    }
    mask
}

/// State after one diffusion step; vectors are `B·L`, batch-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub k: usize,
    pub confidence: Vec<f32>,
    /// `where(masked, argmax, x)`.
    pub predictions: Vec<i32>,
    pub transfer: Vec<bool>,
    pub tokens: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOutput {
    pub tokens: Vec<i32>,
    pub trace: Vec<StepTrace>,
}

/// Flat element index of `(t, b, l, 0)`.
pub fn row_start(config: &SamplingConfig, t: usize, b: usize, l: usize) -> u64 {
    ((t * config.batch + b) * config.block_len + l) as u64 * config.vocab as u64
}

/// Reference sampling loop over the logits held by `hbm`.
pub fn oracle_sample(
    config: &SamplingConfig,
    hbm: &dyn HbmSource,
    options: OracleOptions,
) -> OracleOutput {
    let (b_n, l_n, v_n) = (config.batch, config.block_len, config.vocab);
    let bl = b_n * l_n;
    let schedule = num_transfer_tokens(l_n, config.steps).expect("T ≥ 1");
    let mut tokens = vec![config.mask_id; bl];
    let mut masked = vec![true; bl];
    let mut trace = Vec::with_capacity(config.steps);

    for (t, &k) in schedule.iter().enumerate() {
        let rows: Vec<(usize, f32)> = (0..bl)
            .into_par_iter()
            .map(|i| {
                let mut row = Vec::with_capacity(v_n);
                read_elements(hbm, row_start(config, t, i / l_n, i % l_n), v_n, &mut row);
                match options.route {
                    ConfidenceRoute::Datapath => {
                        let d = datapath_confidence(&row, config.chunk_len(), config.vlen);
                        (d.argmax, d.confidence)
                    }
                    ConfidenceRoute::Softmax => {
                        let (a, p) = softmax_confidence(&row);
                        (a, round_bf16(p))
                    }
                }
            })
            .collect();

        let confidence: Vec<f32> = rows.iter().map(|r| r.1).collect();
        let predictions: Vec<i32> = (0..bl)
            .map(|i| {
                if masked[i] {
                    rows[i].0 as i32
                } else {
                    tokens[i]
                }
            })
            .collect();
        let mut transfer = vec![false; bl];
        for b in 0..b_n {
            let span = b * l_n..(b + 1) * l_n;
            let pick = sort_topk(
                &confidence[span.clone()],
                &masked[span.clone()],
                k,
                options.tie_rule,
            );
            transfer[span].copy_from_slice(&pick);
        }
        for i in 0..bl {
            if transfer[i] {
                tokens[i] = predictions[i];
                masked[i] = false;
            }
        }
        trace.push(StepTrace {
            step: t,
            k,
            confidence,
            predictions,
            transfer,
            tokens: tokens.clone(),
        });
    }
    OracleOutput { tokens, trace }
}

/// One record per step, tab-separated, for diffing.
pub fn format_trace(trace: &[StepTrace], block_len: usize) -> String {
    let mut out = String::new();
    for s in trace {
        let committed: Vec<String> = s
            .transfer
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| {
                format!(
                    "{}:{}={}@{:e}",
                    i / block_len,
                    i % block_len,
                    s.tokens[i],
                    s.confidence[i]
                )
            })
            .collect();
        out.push_str(&format!(
            "step {}\tk {}\t{}\n",
            s.step,
            s.k,
            committed.join(" ")
        ));
    }
    out
}
