//! Streaming detection of code-reuse and code-injection attacks over
//! execution traces.
//!
//! Two detectors share one pass over a trace of basic-block and memory
//! events:
//!
//! * [`anticra`] flags unusually long runs of indirect branches made of
//!   unusually short basic blocks — the shape of return- and jump-oriented
//!   payloads.
//! * [`depplus`] enforces that indirect branches only ever land inside
//!   loaded images, with an optional watermark fast path over the data
//!   space.
//!
//! Around them: a bit-exact trace format ([`trace`]), per-program threshold
//! learning ([`learning`]), seeded trace synthesis for evaluation
//! ([`synth`]), the single-pass analysis driver ([`analyze`]), the embedded
//! evaluation corpus ([`eval`]), and the TOML config/profile formats
//! ([`config`]). The `ropocop` binary fronts all of it.

pub mod analyze;
pub mod anticra;
pub mod config;
pub mod depplus;
pub mod eval;
pub mod learning;
pub mod ratio;
pub mod synth;
pub mod trace;

pub use analyze::{analyze_events, AnalysisOutcome, AnalysisReport, AnalyzeOptions, Analyzer};
pub use anticra::{AntiCraConfig, Class, RunFeatures, RunState};
pub use config::{ConfigDoc, DetectorConfig};
pub use depplus::{DepMode, DepPlusConfig, ImageMap};
pub use learning::{build_profile, merge_profiles, Margins, ProgramProfile};
pub use ratio::Ratio;
pub use synth::{generate, GenKind, GenSpec};
pub use trace::{Address, TerminatorKind, TraceEvent, TraceReader, TraceWriter};
