//! Seeded training runs, evaluation, run records and the experiments.

mod config;
mod eval;
mod experiments;
mod monitor;
mod record;
mod train;

pub use config::{
    build_adversarial, default_adversarial_base, AgentConfig, BuiltEnv, EnvConfig, FeedbackSource,
    InitKind, MixtureConfig, RunConfig,
};
pub use eval::{eval_policy, EvalSummary, TamperingStats};
pub use experiments::{
    experiment_adversarial, experiment_convergence, experiment_d1, experiment_d1_favorable,
    experiment_procedural, AdversarialConfig, AdversarialInstance, AdversarialReport,
    ConvergenceConfig, ConvergenceInstance, ConvergenceReport, CurvePoint, D1AgentResult, D1Config,
    D1FavorableConfig, D1FavorableReport, D1FavorableResult, D1Report, ProceduralAgentOutcome,
    ProceduralAgentSummary, ProceduralConfig, ProceduralInstanceResult, ProceduralReport,
};
pub use monitor::{InvariantMonitor, RATE_BOUND, VALUE_BOUND};
pub use record::{
    append_jsonl, csv_err, read_jsonl, read_trace_csv, write_snapshots_csv, write_trace_csv,
    RunRecord, RunSummary, Snapshot, TraceRow,
};
pub use train::{run_training, Checkpoint, Trainer};
