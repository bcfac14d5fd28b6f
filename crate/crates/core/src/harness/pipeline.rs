//! One object that steps the full detection stack a day at a time.
//!
//! `Pipeline` owns the causality engine and the detector state and wires the
//! pieces together in the order the daily job runs them: infer paths for each
//! login (tracking only paths the benign scenarios don't explain), collapse
//! same-edge copies, run the day's detection, and finally stop extending
//! paths that already produced a rule alert. Its state serializes, so a
//! process can stop after any day and resume bit-for-bit.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::causality::{dedup_daily, CausalityEngine, EngineState, LoginPath};
use crate::detection::{
    scenario_watch_filter, Alert, DetectorKind, DetectorState, ScenarioContext, ScenarioCounts,
    ScoredPath,
};
use crate::error::HopperError;
use crate::log_model::{EnvConfig, Inventory, LoginEvent};
use crate::Result;

/// Everything that persists between days, in serializable form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineState {
    pub engine: EngineState,
    pub detector: DetectorState,
}

/// What one day produced.
#[derive(Debug, Clone)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub alerts: Vec<Alert>,
    pub counts: ScenarioCounts,
    pub scored: Vec<ScoredPath>,
}

/// The assembled detection stack. Feed it consecutive days of cleaned,
/// canonically sorted logins.
#[derive(Debug, Clone)]
pub struct Pipeline {
    engine: CausalityEngine,
    detector: DetectorState,
}

impl Pipeline {
    pub fn new(config: &EnvConfig) -> Self {
        Self {
            engine: CausalityEngine::new(config.session_max_hours),
            detector: DetectorState::new(config),
        }
    }

    pub fn from_state(state: PipelineState) -> Self {
        Self { engine: CausalityEngine::from_state(state.engine), detector: state.detector }
    }

    pub fn state(&self) -> PipelineState {
        PipelineState { engine: self.engine.state(), detector: self.detector.clone() }
    }

    /// Run one calendar day. `logins` must all fall on `date` and be sorted;
    /// an empty slice is a valid quiet day. Days must strictly increase.
    pub fn run_day(
        &mut self,
        date: NaiveDate,
        logins: &[LoginEvent],
        inventory: &Inventory,
        config: &EnvConfig,
    ) -> Result<DayRecord> {
        let ctx = ScenarioContext::new(inventory, config);
        let watch = scenario_watch_filter(&ctx);
        let mut paths: Vec<LoginPath> = Vec::new();
        for login in logins {
            if login.day() != date {
                return Err(HopperError::Validation(format!(
                    "login at {} fed to the {date} run",
                    login.ts
                )));
            }
            paths.extend(self.engine.process(login, inventory, &watch)?);
        }
        let deduped = dedup_daily(paths);
        let outcome = self.detector.detect_day(date, &deduped, inventory, config)?;
        // A path that already alerted needs no further extension; scored
        // paths stay live so the watchlist view does not depend on the
        // alert budget.
        let alerted: Vec<LoginPath> = outcome
            .alerts
            .iter()
            .filter(|a| a.detector == DetectorKind::ClearRule)
            .map(|a| a.path.clone())
            .collect();
        self.engine.unwatch(&alerted);
        Ok(DayRecord {
            date,
            alerts: outcome.alerts,
            counts: outcome.counts,
            scored: outcome.scored,
        })
    }

    /// Run every date in `[start, end)`, pulling each day's logins from the
    /// sorted stream. Dates without logins are processed as quiet days.
    pub fn run_range(
        &mut self,
        start: NaiveDate,
        end: NaiveDate,
        stream: &[LoginEvent],
        inventory: &Inventory,
        config: &EnvConfig,
    ) -> Result<Vec<DayRecord>> {
        if start >= end {
            return Err(HopperError::Validation(format!("empty day range {start}..{end}")));
        }
        let mut records = Vec::new();
        let mut rest = stream;
        let mut date = start;
        while date < end {
            let split = rest.partition_point(|l| l.day() <= date);
            let (todays, remaining) = rest.split_at(split);
            if todays.iter().any(|l| l.day() < date) {
                return Err(HopperError::Validation(format!(
                    "stream contains logins before the {start} run"
                )));
            }
            records.push(self.run_day(date, todays, inventory, config)?);
            rest = remaining;
            date = date.succ_opt().expect("date overflow");
        }
        if !rest.is_empty() {
            return Err(HopperError::Validation(format!(
                "stream contains logins at {} past the {end} run",
                rest[0].ts
            )));
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::corpus::{generate, CorpusParams};

    fn tiny() -> crate::harness::corpus::Corpus {
        generate(&CorpusParams {
            seed: 5,
            users: 40,
            machines: 80,
            days: 12,
            ..CorpusParams::default()
        })
        .unwrap()
    }

    #[test]
    fn run_range_matches_manual_day_stepping() {
        let corpus = tiny();
        let mut whole = Pipeline::new(&corpus.config);
        let records = whole
            .run_range(
                corpus.params.start,
                corpus.end_date(),
                &corpus.logins,
                &corpus.inventory,
                &corpus.config,
            )
            .unwrap();
        assert_eq!(records.len(), corpus.params.days as usize);

        let mut stepped = Pipeline::new(&corpus.config);
        let mut manual: Vec<DayRecord> = Vec::new();
        let mut date = corpus.params.start;
        while date < corpus.end_date() {
            let todays: Vec<LoginEvent> =
                corpus.logins.iter().filter(|l| l.day() == date).cloned().collect();
            manual.push(
                stepped.run_day(date, &todays, &corpus.inventory, &corpus.config).unwrap(),
            );
            date = date.succ_opt().unwrap();
        }
        for (a, b) in records.iter().zip(&manual) {
            assert_eq!(a.alerts, b.alerts);
            assert_eq!(a.counts, b.counts);
        }
    }

    #[test]
    fn state_round_trip_resumes_identically() {
        let corpus = tiny();
        let mid = corpus.params.start + chrono::Days::new(6);

        let mut straight = Pipeline::new(&corpus.config);
        let all = straight
            .run_range(
                corpus.params.start,
                corpus.end_date(),
                &corpus.logins,
                &corpus.inventory,
                &corpus.config,
            )
            .unwrap();

        let mut first = Pipeline::new(&corpus.config);
        let head: Vec<LoginEvent> =
            corpus.logins.iter().filter(|l| l.day() < mid).cloned().collect();
        let tail: Vec<LoginEvent> =
            corpus.logins.iter().filter(|l| l.day() >= mid).cloned().collect();
        first
            .run_range(corpus.params.start, mid, &head, &corpus.inventory, &corpus.config)
            .unwrap();
        let blob = serde_json::to_vec(&first.state()).unwrap();
        let mut resumed: Pipeline =
            Pipeline::from_state(serde_json::from_slice(&blob).unwrap());
        let rest = resumed
            .run_range(mid, corpus.end_date(), &tail, &corpus.inventory, &corpus.config)
            .unwrap();

        let straight_tail: Vec<&Alert> =
            all.iter().skip(6).flat_map(|r| r.alerts.iter()).collect();
        let resumed_tail: Vec<&Alert> = rest.iter().flat_map(|r| r.alerts.iter()).collect();
        assert_eq!(
            serde_json::to_string(&straight_tail).unwrap(),
            serde_json::to_string(&resumed_tail).unwrap()
        );
    }

    #[test]
    fn wrong_day_logins_are_rejected() {
        let corpus = tiny();
        let mut pipeline = Pipeline::new(&corpus.config);
        let err = pipeline
            .run_day(
                corpus.params.start.succ_opt().unwrap(),
                &corpus.logins[..1],
                &corpus.inventory,
                &corpus.config,
            )
            .unwrap_err();
        assert!(matches!(err, HopperError::Validation(_)));
        assert!(err.is_validation());
    }
}
