//! Cycle-level simulator and toolchain for a vector-scalar NPU running the
//! sampling stage of diffusion language models.
//!
//! The pipeline: [`codegen`] lowers a [`config::SamplingConfig`] to an
//! [`isa::Program`]; [`sim`] executes it on a [`machine::MachineState`] fed
//! by a deterministic logits stub; [`oracle`] replays the same sampling loop
//! in plain software; [`report`] ties the two together.

pub mod codegen;
pub mod config;
pub mod isa;
pub mod machine;
pub mod numerics;
pub mod oracle;
pub mod report;
pub mod sim;
pub mod units;

/// Datapath scalar.
pub type Real = f32;
/// Wide scalar used by reference computations.
pub type Wide = f64;
