//! Alerting on inferred movement paths.
//!
//! Paths flow through three stages:
//!
//! 1. **Scenario pruning** (`scenarios`) — five ordered filters drop paths
//!    with a mundane explanation: the causal user's own movement, brand-new
//!    users or machines, machine provisioning traffic, approved service
//!    accounts, and bastion hops.
//! 2. **Clear switches** (`detector::detect_clear`) — a path with an
//!    unambiguous credential switch alerts outright if it reaches any
//!    machine its causal user has not visited in the history window.
//! 3. **Unclear switches** (`scoring` + `detector::detect_unclear`) — paths
//!    where the switch has an innocent candidate are ranked by how rare
//!    their edges and endpoints are compared to the recent population of
//!    switch paths, and alert only when they score at least as high as the
//!    historical alert threshold implied by the analyst's daily budget.
//!
//! `DetectorState` carries everything across days (history index, feature
//! population, alert threshold set) and serializes, so batch runs and
//! day-by-day runs produce identical alerts.

mod detector;
mod scenarios;
mod scoring;

pub use detector::{
    cluster_alerts, detect_clear, update_historical_alerts, Alert, AlertSetEntry, DayOutcome,
    DetectorKind, DetectorState, FeatureDay, HistoricalAlertSet, ScenarioCounts,
};
pub use scenarios::{
    admin_switch_suppressed, benign_scenario, infer_service_accounts, scenario_prune_logins,
    scenario_watch_filter, BenignScenario, ScenarioContext,
};
pub use scoring::{
    extract_features, score_path, sub_score, Feature, HistEntry, PathFeatures, ScoreIndex,
    ScoredPath,
};
