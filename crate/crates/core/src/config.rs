//! Run configuration: workload shape, memory system and unit timings.
//!
//! Files are TOML with `[sampling]`, `[memory]` and `[timings]` tables plus
//! top-level `clock_ghz` and `max_cycles`. Every key has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::machine::sram_footprint;
use crate::numerics::{MX_BLOCK_BYTES, MX_BLOCK_LEN};
use crate::units::UnitTimings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Logits rows stream through a `V_chunk`-element buffer.
    Edge,
    /// `R` whole batches (`R·L·V` elements) are preloaded per prefetch.
    Performance,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Edge => "edge",
            Mode::Performance => "performance",
        })
    }
}

/// Workload and datapath-width parameters of one sampling run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
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
    /// Batches preloaded together in performance mode.
    #[serde(rename = "R")]
    pub preload_batches: usize,
    pub mask_id: i32,
    pub seed: u64,
    /// Optional; when present it must agree with `V_chunk < V`.
    pub mode: Option<Mode>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            batch: 2,
            steps: 1,
            block_len: 64,
            vocab: 2048,
            v_chunk: 128,
            vlen: 64,
            preload_batches: 1,
            mask_id: 126_336,
            seed: 0,
            mode: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("`{0}` must be at least 1")]
    Zero(&'static str),
    #[error("V_chunk ({v_chunk}) exceeds V ({vocab})")]
    ChunkExceedsVocab { v_chunk: usize, vocab: usize },
    #[error("edge mode needs V_chunk ({v_chunk}) to be a multiple of 32 and of VLEN ({vlen})")]
    ChunkAlignment { v_chunk: usize, vlen: usize },
    #[error("edge mode needs V ({0}) to be a multiple of the 32-element MX block")]
    VocabAlignment(usize),
    #[error("performance mode needs L·V ({0}) to be a multiple of the 32-element MX block")]
    RowGroupAlignment(usize),
    #[error("R ({r}) must divide B ({b})")]
    PreloadDivides { r: usize, b: usize },
    #[error("L ({block_len}) exceeds VLEN ({vlen}); the block vector is processed by single vector operations")]
    BlockExceedsVlen { block_len: usize, vlen: usize },
    #[error("mode `{declared}` contradicts V_chunk {v_chunk} vs V {vocab}")]
    ModeMismatch {
        declared: Mode,
        v_chunk: usize,
        vocab: usize,
    },
    #[error("logits image of {0} bytes exceeds the 32-bit HBM address space")]
    HbmTooLarge(u64),
    #[error("{domain} SRAM capacity {capacity} B is below the {required} B required by {bound}")]
    SramCapacity {
        domain: &'static str,
        required: u64,
        capacity: u64,
        bound: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
}

impl SamplingConfig {
    pub fn mode(&self) -> Mode {
        if self.v_chunk < self.vocab {
            Mode::Edge
        } else {
            Mode::Performance
        }
    }

    /// Vector SRAM elements staged per prefetch.
    pub fn buffer_elements(&self) -> usize {
        match self.mode() {
            Mode::Edge => self.v_chunk,
            Mode::Performance => self.vocab * self.block_len * self.preload_batches,
        }
    }

    /// Row length the Stable-Max chunk loop works over.
    pub fn chunk_len(&self) -> usize {
        match self.mode() {
            Mode::Edge => self.v_chunk,
            Mode::Performance => self.vocab,
        }
    }

    /// Logits elements produced per diffusion step.
    pub fn step_elements(&self) -> u64 {
        (self.batch * self.block_len) as u64 * self.vocab as u64
    }

    /// HBM bytes holding one step of MX-encoded logits.
    pub fn step_hbm_bytes(&self) -> u64 {
        self.step_elements() / MX_BLOCK_LEN as u64 * MX_BLOCK_BYTES as u64
    }

    pub fn total_hbm_bytes(&self) -> u64 {
        self.step_hbm_bytes() * self.steps as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("B", self.batch),
            ("T", self.steps),
            ("L", self.block_len),
            ("V", self.vocab),
            ("V_chunk", self.v_chunk),
            ("VLEN", self.vlen),
            ("R", self.preload_batches),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.v_chunk > self.vocab {
            return Err(ConfigError::ChunkExceedsVocab {
                v_chunk: self.v_chunk,
                vocab: self.vocab,
            });
        }
        if let Some(declared) = self.mode {
            if declared != self.mode() {
                return Err(ConfigError::ModeMismatch {
                    declared,
                    v_chunk: self.v_chunk,
                    vocab: self.vocab,
                });
            }
        }
        if self.block_len > self.vlen {
            return Err(ConfigError::BlockExceedsVlen {
                block_len: self.block_len,
                vlen: self.vlen,
            });
        }
        match self.mode() {
            Mode::Edge => {
                if self.v_chunk % MX_BLOCK_LEN != 0 || self.v_chunk % self.vlen != 0 {
                    return Err(ConfigError::ChunkAlignment {
                        v_chunk: self.v_chunk,
                        vlen: self.vlen,
                    });
                }
                if self.vocab % MX_BLOCK_LEN != 0 {
                    return Err(ConfigError::VocabAlignment(self.vocab));
                }
            }
            Mode::Performance => {
                if self.batch % self.preload_batches != 0 {
                    return Err(ConfigError::PreloadDivides {
                        r: self.preload_batches,
                        b: self.batch,
                    });
                }
                let group = self.block_len * self.vocab;
                if group % MX_BLOCK_LEN != 0 {
                    return Err(ConfigError::RowGroupAlignment(group));
                }
            }
        }
        let hbm = self.total_hbm_bytes();
        if hbm > u32::MAX as u64 {
            return Err(ConfigError::HbmTooLarge(hbm));
        }
        let fp = sram_footprint(self);
        if fp.vector_bytes > crate::machine::VECTOR_WINDOW as u64 {
            return Err(ConfigError::Invalid(format!(
                "Vector SRAM footprint {} B exceeds the addressable window",
                fp.vector_bytes
            )));
        }
        Ok(())
    }
}

/// Parametric HBM model and SRAM capacities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryParams {
    /// Bytes per cycle.
    pub hbm_peak_bandwidth: f64,
    /// Cycles added to every prefetch.
    pub hbm_fixed_latency: u64,
    pub double_buffering: bool,
    /// Capacities in bytes; unset means "exactly the closed-form footprint".
    pub vector_sram_bytes: Option<u64>,
    pub fp_sram_bytes: Option<u64>,
    pub int_sram_bytes: Option<u64>,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            hbm_peak_bandwidth: 64.0,
            hbm_fixed_latency: 100,
            double_buffering: true,
            vector_sram_bytes: None,
            fp_sram_bytes: None,
            int_sram_bytes: None,
        }
    }
}

fn default_clock() -> f64 {
    1.0
}

fn default_max_cycles() -> u64 {
    1 << 40
}

/// Everything needed to generate, simulate and report one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub memory: MemoryParams,
    #[serde(default)]
    pub timings: UnitTimings,
    #[serde(default = "default_clock")]
    pub clock_ghz: f64,
    #[serde(default = "default_max_cycles")]
    pub max_cycles: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            memory: MemoryParams::default(),
            timings: UnitTimings::default(),
            clock_ghz: default_clock(),
            max_cycles: default_max_cycles(),
        }
    }
}

const SAMPLING_KEYS: &[&str] = &[
    "B", "T", "L", "V", "V_chunk", "VLEN", "R", "mask_id", "seed", "mode",
];
const MEMORY_KEYS: &[&str] = &[
    "hbm_peak_bandwidth",
    "hbm_fixed_latency",
    "double_buffering",
    "vector_sram_bytes",
    "fp_sram_bytes",
    "int_sram_bytes",
];
const TIMING_KEYS: &[&str] = &[
    "reduction_levels_per_stage",
    "elementwise_latency",
    "fp_exp_latency",
    "fp_recip_latency",
    "topk_per_element",
    "scalar_latency",
    "branch_latency",
    "sram_transfer_latency",
];
const TOP_KEYS: &[&str] = &["clock_ghz", "max_cycles"];

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parse `text`, then apply `key=value` overrides. Keys are bare
    /// (`B`, `hbm_peak_bandwidth`, …) or section-qualified (`memory.hbm_fixed_latency`).
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (key, raw) in overrides {
            let (section, name) = match key.split_once('.') {
                Some((s, n)) => (Some(s.to_string()), n.to_string()),
                None => {
                    let section = if SAMPLING_KEYS.contains(&key.as_str()) {
                        Some("sampling")
                    } else if MEMORY_KEYS.contains(&key.as_str()) {
                        Some("memory")
                    } else if TIMING_KEYS.contains(&key.as_str()) {
                        Some("timings")
                    } else if TOP_KEYS.contains(&key.as_str()) {
                        None
                    } else {
                        return Err(ConfigError::UnknownKey(key.clone()));
                    };
                    (section.map(str::to_string), key.clone())
                }
            };
            let value = parse_scalar(raw);
            match section {
                Some(s) => {
                    let entry = table
                        .entry(s.clone())
                        .or_insert_with(|| toml::Value::Table(Default::default()));
                    match entry {
                        toml::Value::Table(t) => {
                            t.insert(name, value);
                        }
                        _ => return Err(ConfigError::Parse(format!("`{s}` is not a table"))),
                    }
                }
                None => {
                    table.insert(name, value);
                }
            }
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampling.validate()?;
        self.timings.validate().map_err(ConfigError::Invalid)?;
        if !(self.memory.hbm_peak_bandwidth > 0.0) || !self.memory.hbm_peak_bandwidth.is_finite() {
            return Err(ConfigError::Invalid(
                "hbm_peak_bandwidth must be positive".into(),
            ));
        }
        if !(self.clock_ghz > 0.0) {
            return Err(ConfigError::Invalid("clock_ghz must be positive".into()));
        }
        let need = sram_footprint(&self.sampling);
        let checks = [
            (
                "Vector",
                self.memory.vector_sram_bytes,
                need.vector_bytes,
                "3·B·L + V_chunk (or + V·L·R) vector elements",
            ),
            (
                "FP",
                self.memory.fp_sram_bytes,
                need.fp_bytes,
                "max(L, VLEN) FP elements",
            ),
            (
                "Int",
                self.memory.int_sram_bytes,
                need.int_bytes,
                "2·B·L Int elements",
            ),
        ];
        for (domain, capacity, required, bound) in checks {
            if let Some(capacity) = capacity {
                if capacity == 0 || capacity < required {
                    return Err(ConfigError::SramCapacity {
                        domain,
                        required,
                        capacity,
                        bound,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn with_sampling(mut self, sampling: SamplingConfig) -> Self {
        self.sampling = sampling;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_edge() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.sampling.mode(), Mode::Edge);
    }

    #[test]
    fn parse_sections_and_overrides() {
        let text =
            "clock_ghz = 1.0\n[sampling]\nB = 4\nV = 4096\n[memory]\nhbm_fixed_latency = 50\n";
        let c = RunConfig::from_toml_with_overrides(
            text,
            &[
                ("T".into(), "3".into()),
                ("memory.double_buffering".into(), "false".into()),
                ("elementwise_latency".into(), "2".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.sampling.batch, 4);
        assert_eq!(c.sampling.vocab, 4096);
        assert_eq!(c.sampling.steps, 3);
        assert_eq!(c.memory.hbm_fixed_latency, 50);
        assert!(!c.memory.double_buffering);
        assert_eq!(c.timings.elementwise_latency, 2);
    }

    #[test]
    fn unknown_key_rejected() {
        let e = RunConfig::from_toml_with_overrides("", &[("Q".into(), "1".into())]).unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey("Q".into()));
        assert!(matches!(
            RunConfig::from_toml("[sampling]\nbogus = 1\n"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn performance_mode_checks() {
        let s = SamplingConfig {
            batch: 6,
            vocab: 2048,
            v_chunk: 2048,
            preload_batches: 4,
            ..Default::default()
        };
        assert_eq!(s.mode(), Mode::Performance);
        assert_eq!(
            s.validate(),
            Err(ConfigError::PreloadDivides { r: 4, b: 6 })
        );
        let s = SamplingConfig {
            preload_batches: 3,
            ..s
        };
        s.validate().unwrap();
    }

    #[test]
    fn edge_alignment_checks() {
        let s = SamplingConfig {
            v_chunk: 96,
            ..Default::default()
        };
        assert!(matches!(
            s.validate(),
            Err(ConfigError::ChunkAlignment { .. })
        ));
        let s = SamplingConfig {
            vocab: 2000,
            ..Default::default()
        };
        assert_eq!(s.validate(), Err(ConfigError::VocabAlignment(2000)));
        let s = SamplingConfig {
            mode: Some(Mode::Performance),
            ..Default::default()
        };
        assert!(matches!(
            s.validate(),
            Err(ConfigError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn capacity_below_footprint_names_the_bound() {
        let mut c = RunConfig::default();
        c.memory.vector_sram_bytes = Some(1000);
        match c.validate() {
            Err(ConfigError::SramCapacity {
                domain, required, ..
            }) => {
                assert_eq!(domain, "Vector");
                assert_eq!(required, 1024);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
