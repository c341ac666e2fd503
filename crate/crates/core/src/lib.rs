//! Progressive window widening for temporal data streams.
//!
//! Picking one window size for stream pattern detection forces a trade-off:
//! short windows cannot contain long patterns, long windows delay every
//! detection and hold more data than needed. This crate instead runs sliding
//! windows of exponentially doubling durations in parallel. Batches double by
//! pairwise combining, and a combined batch longer than twice the pattern
//! length bound drops its middle, so total work per unit time stays bounded
//! no matter how many levels run.
//!
//! The crate ships the engine ([`pww`]), the batched-stream model
//! ([`stream`]), a syscall trace format ([`trace`]), a remote-shell episode
//! detector ([`detect`]), deterministic trace synthesis ([`synth`]), and an
//! experiment harness measuring detection delay and work rate ([`bench`](mod@bench)).

pub mod bench;
pub mod detect;
pub mod pww;
pub mod report;
pub mod stream;
pub mod synth;
pub mod trace;

pub use bench::{
    run_baseline_fixed, run_delay_experiment, run_work_experiment, BaselineResult, BenchError,
    DelayPoint, ExperimentConfig, WorkExperiment, WorkPoint,
};
pub use detect::{
    match_remote_shell, oracle_detect, Detector, DetectorError, EpisodeMatch, MatchKey,
    RemoteShellDetector,
};
pub use pww::{
    combine, level_count, run_pww, widen_level, work_bound, CostModel, EngineError, EngineResult,
    ExecutionMode, LinearCost, UnitCost, WorkLedger, UNBOUNDED_LENGTH,
};
pub use stream::{
    batchify, to_shared, window_slide, Batch, SharedRecord, StreamConfig, StreamError, Window,
};
pub use synth::{gen_background, inject_episode, InjectionSpec, SynthError, DEFAULT_ALPHABET};
pub use trace::{
    parse_line, parse_trace, parse_trace_str, serialize_record, write_trace, Record, SyscallEvent,
    TraceError,
};
