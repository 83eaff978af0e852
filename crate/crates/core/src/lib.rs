//! DEHB: differential evolution run inside Hyperband brackets, with the
//! DE, Hyperband and random-search baselines, benchmarks and an experiment
//! harness.

pub mod benchmarks;
pub mod de;
pub mod engine;
pub mod error;
pub mod harness;
pub mod hyperband;
pub mod objective;
pub mod orchestrator;
pub mod rng;
pub mod space;
pub mod trace;

pub use engine::{run, DehbConfig, DehbOutcome, DehbState, Termination};
pub use error::{Error, Result, RunFailure};
pub use hyperband::HbConfig;
pub use objective::{Evaluation, Objective};
pub use space::{NativeConfig, ParamValue, ParameterSpace, ParameterSpec, UnitVector};
pub use trace::{Role, RunTrace, TraceEntry};
