//! Evaluation harness: a deterministic synthetic corpus generator, a
//! day-stepped pipeline that ties the detection stack together, and the
//! red-team evaluation that injects synthesized attacks and reports
//! detection against alert cost.

pub mod corpus;
pub mod eval;
pub mod pipeline;

pub use corpus::{generate, config_text, Corpus, CorpusParams};
pub use eval::{
    base_alert_bytes, budget_sweep, clean_stream, pick_victims, plan_attacks, replay_attack,
    run_base, run_eval, AttackPlan, BaseRun, BudgetPoint, CleanRun, EvalOutcome, EvalReport,
    EvalWindows, MatrixCell, PlannedAttack, RankEntry, ReplayDay, ReplayResult,
};
pub use pipeline::{DayRecord, Pipeline, PipelineState};
