//! Day-stepped alerting over scenario-filtered paths.
//!
//! `DetectorState` owns everything that survives between days: the rolling
//! history index, the population of recent switch-path features that anomaly
//! scores are measured against, and the set of top-scoring historical paths
//! whose minimum score is the alert threshold. `detect_day` consumes one
//! day's deduplicated paths and returns that day's alerts plus audit counts;
//! the state then absorbs the day. Because the state serializes exactly
//! (scores and weights survive JSON round-trips bit-for-bit), processing a
//! stretch of days in one run or across restarts yields identical alerts.

use std::collections::{BTreeMap, VecDeque};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::scenarios::{admin_switch_suppressed, benign_scenario, BenignScenario, ScenarioContext};
use super::scoring::{extract_features, score_path, HistEntry, PathFeatures, ScoreIndex, ScoredPath};
use crate::causality::{DailyEdge, LoginPath, PathType};
use crate::error::HopperError;
use crate::log_model::{EnvConfig, Inventory};
use crate::login_graph::{DaySlice, HistoryIndex};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    /// Unambiguous switch reaching a destination new to the causal user.
    ClearRule,
    /// Ambiguous switch whose anomaly score clears the budget threshold.
    UnclearScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub day: NaiveDate,
    pub detector: DetectorKind,
    pub path: LoginPath,
    /// Anomaly score; absent for the rule-based detector.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    /// Feature triple behind the alert (first changepoint for rule alerts).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub features: Option<PathFeatures>,
    /// Collapsed identical-edge copies, clustering included.
    pub duplicates: u32,
}

/// Does the path reach any machine its causal user has not visited in the
/// history window? This is both the Clear-switch alert rule and (negated)
/// the gate that exempts Unclear paths from scoring.
pub fn detect_clear(path: &LoginPath, history: &HistoryIndex) -> bool {
    let visited = history.user_destinations(&path.causal_user);
    path.destinations().any(|d| !visited.contains(d))
}

/// One remembered high-scoring path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertSetEntry {
    pub score: f64,
    pub day: NaiveDate,
    pub edges: Vec<DailyEdge>,
}

/// The top `B × H` scored paths of the trailing H days, ordered by score
/// descending (ties: earlier day, then lexicographic edges). The minimum
/// score in the set is the day's alert threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoricalAlertSet {
    pub entries: Vec<AlertSetEntry>,
}

impl HistoricalAlertSet {
    pub fn min_score(&self) -> Option<f64> {
        self.entries.last().map(|e| e.score)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn entry_order(a: &AlertSetEntry, b: &AlertSetEntry) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.day.cmp(&b.day))
        .then_with(|| a.edges.cmp(&b.edges))
}

/// Fold a day's scored paths into the historical alert set: expire entries
/// older than H days, insert today's, keep the top B×H.
pub fn update_historical_alerts(
    set: &mut HistoricalAlertSet,
    todays: &[ScoredPath],
    budget: usize,
    history_days: u32,
    today: NaiveDate,
) {
    let horizon = today - Duration::days(i64::from(history_days) - 1);
    set.entries.retain(|e| e.day >= horizon);
    set.entries.extend(todays.iter().map(|s| AlertSetEntry {
        score: s.score,
        day: s.path.day(),
        edges: s.path.daily_edges(),
    }));
    set.entries.sort_by(entry_order);
    set.entries.truncate(budget * history_days as usize);
}

/// Merge same-day alerts whose paths traverse identical daily edges,
/// accumulating duplicate counts on the first occurrence.
pub fn cluster_alerts(alerts: Vec<Alert>) -> Vec<Alert> {
    let mut seen: BTreeMap<(DetectorKind, Vec<DailyEdge>), usize> = BTreeMap::new();
    let mut out: Vec<Alert> = Vec::with_capacity(alerts.len());
    for alert in alerts {
        let key = (alert.detector, alert.path.daily_edges());
        match seen.get(&key) {
            Some(&idx) => out[idx].duplicates += alert.duplicates,
            None => {
                seen.insert(key, out.len());
                out.push(alert);
            }
        }
    }
    out
}

/// Audit counts for one day: how many paths each filter absorbed and what
/// the detectors did with the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCounts {
    pub paths_in: u64,
    pub own_credentials: u64,
    pub new_entity: u64,
    pub provisioning: u64,
    pub service_account: u64,
    pub bastion: u64,
    pub admin_suppressed: u64,
    pub clear_paths: u64,
    pub unclear_gated: u64,
    pub unclear_scored: u64,
    pub alerts_clear: u64,
    pub alerts_unclear: u64,
}

impl ScenarioCounts {
    fn bump(&mut self, scenario: BenignScenario) {
        match scenario {
            BenignScenario::OwnCredentials => self.own_credentials += 1,
            BenignScenario::NewEntity => self.new_entity += 1,
            BenignScenario::Provisioning => self.provisioning += 1,
            BenignScenario::ServiceAccount => self.service_account += 1,
            BenignScenario::Bastion => self.bastion += 1,
        }
    }

    pub fn accumulate(&mut self, other: &ScenarioCounts) {
        self.paths_in += other.paths_in;
        self.own_credentials += other.own_credentials;
        self.new_entity += other.new_entity;
        self.provisioning += other.provisioning;
        self.service_account += other.service_account;
        self.bastion += other.bastion;
        self.admin_suppressed += other.admin_suppressed;
        self.clear_paths += other.clear_paths;
        self.unclear_gated += other.unclear_gated;
        self.unclear_scored += other.unclear_scored;
        self.alerts_clear += other.alerts_clear;
        self.alerts_unclear += other.alerts_unclear;
    }
}

/// Everything `detect_day` returns: clustered alerts in input order, audit
/// counts, and the day's scored paths (kept for ranking and budget sweeps).
#[derive(Debug, Clone, PartialEq)]
pub struct DayOutcome {
    pub alerts: Vec<Alert>,
    pub counts: ScenarioCounts,
    pub scored: Vec<ScoredPath>,
}

/// Feature records contributed by one day's switch paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDay {
    pub date: NaiveDate,
    pub entries: Vec<HistEntry>,
}

/// Cross-day detector memory; serializable for day-by-day operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub budget: usize,
    pub history_days: u32,
    pub index: HistoryIndex,
    pub feature_history: VecDeque<FeatureDay>,
    pub alert_set: HistoricalAlertSet,
    pub last_day: Option<NaiveDate>,
}

impl DetectorState {
    pub fn new(config: &EnvConfig) -> Self {
        Self {
            budget: config.alert_budget,
            history_days: config.history_days,
            index: HistoryIndex::new(),
            feature_history: VecDeque::new(),
            alert_set: HistoricalAlertSet::default(),
            last_day: None,
        }
    }

    /// Process one day's deduplicated paths. Days must strictly increase;
    /// gaps are fine (quiet days need no call, though an explicit call with
    /// no paths keeps window arithmetic obvious).
    pub fn detect_day(
        &mut self,
        date: NaiveDate,
        paths: &[LoginPath],
        inventory: &Inventory,
        config: &EnvConfig,
    ) -> Result<DayOutcome> {
        if let Some(last) = self.last_day {
            if date <= last {
                return Err(HopperError::Validation(format!(
                    "detector fed day {date} after {last}"
                )));
            }
        }
        let window_start = date - Duration::days(i64::from(self.history_days));
        self.index.drop_before(window_start);
        while self
            .feature_history
            .front()
            .map(|d| d.date < window_start)
            .unwrap_or(false)
        {
            self.feature_history.pop_front();
        }

        let ctx = ScenarioContext::new(inventory, config);
        let population: Vec<HistEntry> = self
            .feature_history
            .iter()
            .flat_map(|d| d.entries.iter().copied())
            .collect();
        let score_index = ScoreIndex::build(&population);

        let mut counts = ScenarioCounts { paths_in: paths.len() as u64, ..Default::default() };
        let mut alerts: Vec<Alert> = Vec::new();
        let mut scored: Vec<ScoredPath> = Vec::new();
        let mut feature_entries: Vec<HistEntry> = Vec::new();

        for path in paths {
            if path.day() != date {
                return Err(HopperError::Validation(format!(
                    "path ending at {} fed to detector on {date}",
                    path.final_login().ts
                )));
            }
            if let Some(scenario) = benign_scenario(path, &ctx) {
                counts.bump(scenario);
                continue;
            }
            if config.suppress_admin_switches && admin_switch_suppressed(path, inventory) {
                counts.admin_suppressed += 1;
                continue;
            }
            if !path.is_switch() {
                return Err(HopperError::Validation(format!(
                    "{:?} path without changepoints ending at {}",
                    path.path_type,
                    path.final_login().ts
                )));
            }
            // Path survived filtering: its first switch joins the population
            // that future days are scored against.
            let first_cp = path.changepoints[0];
            let first_features = extract_features(path, first_cp, &self.index);
            let (f1, f2, f3) = first_features.triple();
            feature_entries.push(HistEntry {
                f1,
                f2,
                f3,
                weight: path.certainty * f64::from(path.duplicates),
            });

            match path.path_type {
                PathType::Benign => unreachable!("benign paths match own-credentials"),
                PathType::Clear => {
                    counts.clear_paths += 1;
                    if detect_clear(path, &self.index) {
                        alerts.push(Alert {
                            day: date,
                            detector: DetectorKind::ClearRule,
                            path: path.clone(),
                            score: None,
                            features: Some(first_features),
                            duplicates: path.duplicates,
                        });
                    }
                }
                PathType::Unclear => {
                    if !detect_clear(path, &self.index) {
                        counts.unclear_gated += 1;
                        continue;
                    }
                    counts.unclear_scored += 1;
                    scored.push(score_path(path, &self.index, &score_index));
                }
            }
        }

        // Threshold alerting; bootstrap with the day's top B while the
        // historical set is still empty.
        if let Some(threshold) = self.alert_set.min_score() {
            for s in &scored {
                if s.score >= threshold {
                    alerts.push(unclear_alert(date, s));
                }
            }
        } else {
            let mut order: Vec<usize> = (0..scored.len()).collect();
            order.sort_by(|&a, &b| {
                scored[b]
                    .score
                    .total_cmp(&scored[a].score)
                    .then_with(|| scored[a].path.daily_edges().cmp(&scored[b].path.daily_edges()))
            });
            let mut chosen: Vec<usize> = order.into_iter().take(self.budget).collect();
            chosen.sort_unstable();
            for idx in chosen {
                alerts.push(unclear_alert(date, &scored[idx]));
            }
        }

        counts.alerts_clear =
            alerts.iter().filter(|a| a.detector == DetectorKind::ClearRule).count() as u64;
        counts.alerts_unclear =
            alerts.iter().filter(|a| a.detector == DetectorKind::UnclearScore).count() as u64;
        let alerts = cluster_alerts(alerts);

        update_historical_alerts(
            &mut self.alert_set,
            &scored,
            self.budget,
            self.history_days,
            date,
        );
        self.feature_history.push_back(FeatureDay { date, entries: feature_entries });
        self.index.push_day(DaySlice::from_paths(date, paths)?)?;
        self.last_day = Some(date);

        Ok(DayOutcome { alerts, counts, scored })
    }
}

fn unclear_alert(date: NaiveDate, scored: &ScoredPath) -> Alert {
    Alert {
        day: date,
        detector: DetectorKind::UnclearScore,
        path: scored.path.clone(),
        score: Some(scored.score),
        features: Some(scored.features),
        duplicates: scored.path.duplicates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causality::testutil::*;
    use crate::log_model::{MachineKind, UserKind, UserName};

    fn day(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn inv() -> Inventory {
        Inventory::from_records(
            vec![
                machine("a", MachineKind::Client, Some("alice")),
                machine("b", MachineKind::Client, Some("bob")),
                machine("y", MachineKind::Server, None),
                machine("z", MachineKind::Server, None),
                machine("w", MachineKind::Server, None),
            ],
            vec![
                user("alice", UserKind::Employee),
                user("bob", UserKind::Employee),
                user("carol", UserKind::Employee),
            ],
            false,
        )
        .unwrap()
    }

    fn clear_path(ts: &str, src: &str, dst: &str, causal: &str, target: &str) -> LoginPath {
        let l = login(ts, src, dst, target);
        LoginPath {
            causal_user: UserName::new(causal),
            changepoints: vec![0],
            path_type: PathType::Clear,
            certainty: 1.0,
            root_is_bastion: false,
            duplicates: 1,
            logins: vec![l],
        }
    }

    fn unclear_path(ts: &str, hops: &[(&str, &str, &str)], causal: &str) -> LoginPath {
        let base = crate::log_model::parse_timestamp(ts).unwrap();
        let logins: Vec<_> = hops
            .iter()
            .enumerate()
            .map(|(i, (s, d, u))| {
                crate::log_model::LoginEvent::new(
                    base + Duration::minutes(10 * i as i64),
                    crate::log_model::MachineId::new(*s),
                    crate::log_model::MachineId::new(*d),
                    UserName::new(*u),
                )
            })
            .collect();
        let changepoints = (1..logins.len())
            .filter(|&i| logins[i].user != logins[i - 1].user)
            .collect();
        LoginPath {
            causal_user: UserName::new(causal),
            changepoints,
            path_type: PathType::Unclear,
            certainty: 1.0,
            root_is_bastion: false,
            duplicates: 1,
            logins,
        }
    }

    fn benign_history_day(state: &mut DetectorState, inv: &Inventory, config: &EnvConfig, d: &str) {
        // alice routinely hits y from her client; gives user_destinations content.
        let p = LoginPath {
            causal_user: UserName::new("alice"),
            changepoints: vec![],
            path_type: PathType::Benign,
            certainty: 1.0,
            root_is_bastion: false,
            duplicates: 1,
            logins: vec![login(&format!("{d}T08:00:00Z"), "a", "y", "alice")],
        };
        state.detect_day(day(d), &[p], inv, config).unwrap();
    }

    #[test]
    fn clear_rule_fires_on_new_destinations_only() {
        let inv = inv();
        let config = EnvConfig::default();
        let mut state = DetectorState::new(&config);
        benign_history_day(&mut state, &inv, &config, "2019-03-01");

        // bob's credentials move a→z, causal user alice, who has never seen z.
        let fresh = clear_path("2019-03-02T09:00:00Z", "a", "z", "alice", "bob");
        let outcome = state.detect_day(day("2019-03-02"), &[fresh], &inv, &config).unwrap();
        assert_eq!(outcome.alerts.len(), 1);
        assert_eq!(outcome.alerts[0].detector, DetectorKind::ClearRule);

        // Same shape, but alice has visited y before: silent.
        let stale = clear_path("2019-03-03T09:00:00Z", "a", "y", "alice", "bob");
        let outcome = state.detect_day(day("2019-03-03"), &[stale], &inv, &config).unwrap();
        assert!(outcome.alerts.is_empty());
        assert_eq!(outcome.counts.clear_paths, 1);
    }

    #[test]
    fn unclear_paths_are_gated_by_visited_destinations() {
        let inv = inv();
        let config = EnvConfig::default();
        let mut state = DetectorState::new(&config);
        benign_history_day(&mut state, &inv, &config, "2019-03-01");

        let gated = unclear_path("2019-03-02T09:00:00Z", &[("a", "y", "bob")], "alice");
        let mut gated = gated;
        gated.changepoints = vec![0];
        let outcome = state.detect_day(day("2019-03-02"), &[gated], &inv, &config).unwrap();
        assert!(outcome.alerts.is_empty());
        assert_eq!(outcome.counts.unclear_gated, 1);
        assert_eq!(outcome.counts.unclear_scored, 0);
    }

    #[test]
    fn bootstrap_emits_top_budget_paths_then_threshold_takes_over() {
        let inv = inv();
        let mut config = EnvConfig::default();
        config.alert_budget = 1;
        let mut state = DetectorState::new(&config);
        benign_history_day(&mut state, &inv, &config, "2019-03-01");

        // Two scoreable paths on the first real day: only the top 1 alerts.
        let p1 = unclear_path(
            "2019-03-02T09:00:00Z",
            &[("b", "y", "bob"), ("y", "z", "alice")],
            "bob",
        );
        let p2 = unclear_path(
            "2019-03-02T10:00:00Z",
            &[("b", "y", "bob"), ("y", "w", "carol")],
            "bob",
        );
        let outcome = state.detect_day(day("2019-03-02"), &[p1, p2], &inv, &config).unwrap();
        assert_eq!(outcome.counts.unclear_scored, 2);
        assert_eq!(outcome.alerts.len(), 1);
        assert_eq!(outcome.alerts[0].detector, DetectorKind::UnclearScore);
        // The historical set now holds both scored paths (B×H capacity).
        assert_eq!(state.alert_set.len(), 2);
        assert!(state.alert_set.min_score().is_some());

        // Next day the threshold rule applies: a path scoring below the
        // minimum stays quiet.
        let low = unclear_path(
            "2019-03-03T09:00:00Z",
            &[("b", "y", "bob"), ("y", "z", "alice")],
            "bob",
        );
        let outcome = state.detect_day(day("2019-03-03"), &[low], &inv, &config).unwrap();
        let threshold = state.alert_set.min_score().unwrap();
        for s in &outcome.scored {
            assert_eq!(s.score >= threshold || outcome.alerts.is_empty(), true);
        }
    }

    #[test]
    fn alert_set_expires_caps_and_breaks_ties_deterministically() {
        let mut set = HistoricalAlertSet::default();
        let scored = |score: f64, ts: &str, user: &str| ScoredPath {
            path: LoginPath {
                causal_user: UserName::new(user),
                changepoints: vec![0],
                path_type: PathType::Unclear,
                certainty: 1.0,
                root_is_bastion: false,
                duplicates: 1,
                logins: vec![login(ts, "a", "y", user)],
            },
            score,
            features: PathFeatures {
                f1_min_freq_before: 0,
                f2_min_freq_from_changepoint: 0,
                f3_connectivity: 0,
                changepoint_index: 0,
            },
        };

        // Capacity: B×H = 2×2 = 4.
        update_historical_alerts(
            &mut set,
            &[
                scored(0.9, "2019-03-01T08:00:00Z", "ua"),
                scored(0.5, "2019-03-01T09:00:00Z", "ub"),
                scored(0.5, "2019-03-01T10:00:00Z", "uc"),
            ],
            2,
            2,
            day("2019-03-01"),
        );
        assert_eq!(set.len(), 3);
        // Tie at 0.5: "ub" sorts before "uc" lexicographically.
        assert_eq!(set.entries[1].edges[0].user, UserName::new("ub"));

        update_historical_alerts(
            &mut set,
            &[
                scored(0.8, "2019-03-02T08:00:00Z", "ud"),
                scored(0.7, "2019-03-02T09:00:00Z", "ue"),
            ],
            2,
            2,
            day("2019-03-02"),
        );
        assert_eq!(set.len(), 4);
        assert_eq!(set.min_score(), Some(0.5));

        // Day 4: entries from day 1 (3 days old, window 2) expire.
        update_historical_alerts(&mut set, &[], 2, 2, day("2019-03-04"));
        assert_eq!(set.len(), 0);
    }

    #[test]
    fn clustering_merges_identical_edge_sequences() {
        let base = clear_path("2019-03-02T09:00:00Z", "a", "z", "alice", "bob");
        let mut later = base.clone();
        later.logins[0].ts = later.logins[0].ts + Duration::hours(2);
        let alert = |p: &LoginPath| Alert {
            day: day("2019-03-02"),
            detector: DetectorKind::ClearRule,
            path: p.clone(),
            score: None,
            features: None,
            duplicates: p.duplicates,
        };
        let clustered = cluster_alerts(vec![alert(&base), alert(&later)]);
        assert_eq!(clustered.len(), 1);
        assert_eq!(clustered[0].duplicates, 2);

        let other = clear_path("2019-03-02T09:00:00Z", "a", "w", "alice", "bob");
        let clustered = cluster_alerts(vec![alert(&base), alert(&other)]);
        assert_eq!(clustered.len(), 2);
    }

    #[test]
    fn state_serde_round_trip_is_exact() {
        let inv = inv();
        let config = EnvConfig::default();
        let mut state = DetectorState::new(&config);
        benign_history_day(&mut state, &inv, &config, "2019-03-01");
        let p = unclear_path(
            "2019-03-02T09:00:00Z",
            &[("b", "y", "bob"), ("y", "z", "alice")],
            "bob",
        );
        state.detect_day(day("2019-03-02"), &[p], &inv, &config).unwrap();

        let json = serde_json::to_string(&state).unwrap();
        let back: DetectorState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn out_of_order_days_are_rejected() {
        let inv = inv();
        let config = EnvConfig::default();
        let mut state = DetectorState::new(&config);
        benign_history_day(&mut state, &inv, &config, "2019-03-02");
        let err = state.detect_day(day("2019-03-01"), &[], &inv, &config);
        assert!(err.is_err());
    }
}
