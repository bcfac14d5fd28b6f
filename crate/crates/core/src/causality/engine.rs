//! Two-pass causal path engine.
//!
//! Logins are processed in timestamp order against two working sets:
//!
//! * a recent-login store holding the last T hours of logins, keyed by
//!   destination, answering "who landed on this machine lately";
//! * a watchlist of credential-switch paths whose final hop is still fresh
//!   enough to be extended.
//!
//! The first pass explains a new login on its own: client and bastion sources
//! root a one-hop path; server sources pair the login with every causal
//! inbound login (one two-hop path each, certainty 1/fan-in). The second pass
//! appends the login to every watchlist path it causally extends. Benign
//! paths and paths matching a caller-supplied suppression filter are never
//! watchlisted, so only potential credential switches keep growing.

use std::collections::{BTreeMap, VecDeque};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{
    causal_user_for_root, changepoint_is_clear, classify, compute_changepoints, window_start,
    LoginPath, PathType,
};
use crate::error::HopperError;
use crate::log_model::{Inventory, LoginEvent, MachineId, MachineKind, UserName};
use crate::Result;

/// The last T hours of non-self logins, grouped by destination machine.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecentLoginStore {
    by_dst: BTreeMap<MachineId, VecDeque<LoginEvent>>,
}

impl RecentLoginStore {
    pub fn insert(&mut self, login: &LoginEvent) {
        if !login.is_self_login() {
            self.by_dst.entry(login.dst.clone()).or_default().push_back(login.clone());
        }
    }

    /// Causal inbound candidates for `login`, oldest first.
    pub fn inbound(&self, login: &LoginEvent, window: Duration) -> Vec<&LoginEvent> {
        let start = window_start(login.ts, window);
        self.by_dst
            .get(&login.src)
            .map(|logins| {
                logins
                    .iter()
                    .filter(|k| k.ts >= start && k.ts < login.ts)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn prune(&mut self, cutoff: DateTime<Utc>) {
        self.by_dst.retain(|_, logins| {
            while logins.front().map(|l| l.ts < cutoff).unwrap_or(false) {
                logins.pop_front();
            }
            !logins.is_empty()
        });
    }

    pub fn len(&self) -> usize {
        self.by_dst.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_dst.is_empty()
    }
}

/// Credential-switch paths eligible for extension, keyed by final destination.
/// Set semantics: one entry per exact login sequence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Watchlist {
    by_dst: BTreeMap<MachineId, Vec<LoginPath>>,
}

impl Watchlist {
    pub fn insert(&mut self, path: LoginPath) {
        let entries = self.by_dst.entry(path.final_login().dst.clone()).or_default();
        if !entries.iter().any(|p| p.logins == path.logins) {
            entries.push(path);
        }
    }

    pub fn ending_at(&self, machine: &MachineId) -> &[LoginPath] {
        self.by_dst.get(machine).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Drop entries whose final hop is older than the cutoff.
    pub fn prune(&mut self, cutoff: DateTime<Utc>) {
        self.by_dst.retain(|_, entries| {
            entries.retain(|p| p.final_login().ts >= cutoff);
            !entries.is_empty()
        });
    }

    /// Drop entries whose login sequence matches any of the given paths.
    pub fn remove(&mut self, paths: &[LoginPath]) {
        if paths.is_empty() {
            return;
        }
        self.by_dst.retain(|_, entries| {
            entries.retain(|p| !paths.iter().any(|gone| gone.logins == p.logins));
            !entries.is_empty()
        });
    }

    pub fn len(&self) -> usize {
        self.by_dst.values().map(Vec::len).sum()
    }
}

/// Serializable snapshot of a running engine, for day-by-day processing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineState {
    pub window_hours: i64,
    pub clock: Option<DateTime<Utc>>,
    pub store: RecentLoginStore,
    pub watchlist: Watchlist,
}

/// The two-pass engine. Feed logins in non-decreasing timestamp order.
#[derive(Debug, Clone)]
pub struct CausalityEngine {
    window: Duration,
    clock: Option<DateTime<Utc>>,
    store: RecentLoginStore,
    watchlist: Watchlist,
}

impl CausalityEngine {
    pub fn new(window_hours: i64) -> Self {
        Self {
            window: Duration::hours(window_hours),
            clock: None,
            store: RecentLoginStore::default(),
            watchlist: Watchlist::default(),
        }
    }

    pub fn from_state(state: EngineState) -> Self {
        Self {
            window: Duration::hours(state.window_hours),
            clock: state.clock,
            store: state.store,
            watchlist: state.watchlist,
        }
    }

    pub fn state(&self) -> EngineState {
        EngineState {
            window_hours: self.window.num_hours(),
            clock: self.clock,
            store: self.store.clone(),
            watchlist: self.watchlist.clone(),
        }
    }

    /// Process one login and return every causal path inferred for it
    /// (first-pass paths, then watchlist extensions).
    ///
    /// `watch_filter` decides which non-benign paths are worth tracking for
    /// extension; return false to suppress (e.g. benign-scenario matches).
    pub fn process(
        &mut self,
        login: &LoginEvent,
        inventory: &Inventory,
        watch_filter: &dyn Fn(&LoginPath) -> bool,
    ) -> Result<Vec<LoginPath>> {
        if let Some(clock) = self.clock {
            if login.ts < clock {
                return Err(HopperError::Validation(format!(
                    "out-of-order login at {} (engine clock {})",
                    login.ts, clock
                )));
            }
        }
        self.clock = Some(login.ts);
        let cutoff = window_start(login.ts, self.window);
        self.store.prune(cutoff);
        self.watchlist.prune(cutoff);

        let src_kind = source_kind_of(inventory, login);
        let inbound = self.store.inbound(login, self.window);
        let inbound_users: std::collections::BTreeSet<UserName> =
            inbound.iter().map(|k| k.user.clone()).collect();

        let first = self.first_pass(login, inventory, src_kind, &inbound);
        let fan_in = first.len();
        let mut paths = first;

        if src_kind == SourceKind::Server {
            paths.extend(self.second_pass(login, &inbound_users, fan_in, &paths));
        }

        for path in &paths {
            if path.path_type != PathType::Benign
                && !path.final_login().is_self_login()
                && watch_filter(path)
            {
                self.watchlist.insert(path.clone());
            }
        }
        self.store.insert(login);
        Ok(paths)
    }

    /// Stop extending the given paths (e.g. once they have already alerted).
    pub fn unwatch(&mut self, paths: &[LoginPath]) {
        self.watchlist.remove(paths);
    }

    /// Sort a batch by the canonical key and process every login.
    pub fn run_stream(
        &mut self,
        events: &[LoginEvent],
        inventory: &Inventory,
        watch_filter: &dyn Fn(&LoginPath) -> bool,
    ) -> Result<Vec<LoginPath>> {
        let mut sorted: Vec<LoginEvent> = events.to_vec();
        sorted.sort();
        let mut all = Vec::new();
        for event in &sorted {
            all.extend(self.process(event, inventory, watch_filter)?);
        }
        Ok(all)
    }

    fn first_pass(
        &self,
        login: &LoginEvent,
        inventory: &Inventory,
        src_kind: SourceKind,
        inbound: &[&LoginEvent],
    ) -> Vec<LoginPath> {
        match src_kind {
            SourceKind::Bastion | SourceKind::Client | SourceKind::SelfLogin => {
                vec![self.assemble(
                    vec![login.clone()],
                    inventory,
                    1.0,
                    src_kind == SourceKind::Bastion,
                )]
            }
            SourceKind::Server => {
                if inbound.is_empty() {
                    return vec![self.assemble(vec![login.clone()], inventory, 1.0, false)];
                }
                let certainty = 1.0 / inbound.len() as f64;
                inbound
                    .iter()
                    .map(|k| {
                        let bastion_root = machine_kind(inventory, &k.src) == SourceKind::Bastion;
                        self.assemble(
                            vec![(*k).clone(), login.clone()],
                            inventory,
                            certainty,
                            bastion_root,
                        )
                    })
                    .collect()
            }
        }
    }

    fn second_pass(
        &self,
        login: &LoginEvent,
        inbound_users: &std::collections::BTreeSet<UserName>,
        fan_in: usize,
        first_pass_paths: &[LoginPath],
    ) -> Vec<LoginPath> {
        let start = window_start(login.ts, self.window);
        let candidates: Vec<&LoginPath> = self
            .watchlist
            .ending_at(&login.src)
            .iter()
            .filter(|p| {
                let f = p.final_login();
                f.ts >= start && f.ts < login.ts && !f.is_self_login()
            })
            .collect();
        if candidates.is_empty() {
            return Vec::new();
        }
        let certainty = 1.0 / candidates.len().max(fan_in) as f64;
        let mut extended = Vec::new();
        for entry in candidates {
            let mut logins = entry.logins.clone();
            logins.push(login.clone());
            // A one-hop watchlist entry extends into the same two-hop path the
            // first pass already produced; keep the first-pass copy only.
            if first_pass_paths.iter().any(|p| p.logins == logins) {
                continue;
            }
            let mut changepoints = entry.changepoints.clone();
            let is_switch = login.user != entry.final_login().user;
            if is_switch {
                changepoints.push(logins.len() - 1);
            }
            let new_clear =
                is_switch && inbound_users.iter().all(|u| *u != login.user);
            let any_clear = entry.path_type == PathType::Clear || new_clear;
            extended.push(LoginPath {
                causal_user: entry.causal_user.clone(),
                path_type: classify(changepoints.len(), any_clear),
                logins,
                changepoints,
                certainty,
                root_is_bastion: entry.root_is_bastion,
                duplicates: 1,
            });
        }
        extended
    }

    /// Build a first-pass path: compute causal user, changepoints, clarity.
    fn assemble(
        &self,
        logins: Vec<LoginEvent>,
        inventory: &Inventory,
        certainty: f64,
        root_is_bastion: bool,
    ) -> LoginPath {
        let causal_user = causal_user_for_root(&logins[0], inventory);
        let changepoints = compute_changepoints(&logins, inventory);
        let any_clear = changepoints.iter().any(|&i| {
            let cp_login = &logins[i];
            let users: std::collections::BTreeSet<UserName> = self
                .store
                .inbound(cp_login, self.window)
                .into_iter()
                .map(|k| k.user.clone())
                .collect();
            changepoint_is_clear(cp_login, inventory, &users)
        });
        LoginPath {
            causal_user,
            path_type: classify(changepoints.len(), any_clear),
            logins,
            changepoints,
            certainty,
            root_is_bastion,
            duplicates: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SourceKind {
    Bastion,
    Client,
    Server,
    SelfLogin,
}

fn machine_kind(inventory: &Inventory, id: &MachineId) -> SourceKind {
    match inventory.machines.get(id) {
        Some(m) if m.is_bastion => SourceKind::Bastion,
        Some(m) if m.kind == MachineKind::Client => SourceKind::Client,
        _ => SourceKind::Server,
    }
}

/// Source classification for `login` as the engine sees it: self-logins are
/// isolated regardless of machine kind.
fn source_kind_of(inventory: &Inventory, login: &LoginEvent) -> SourceKind {
    if login.is_self_login() {
        return SourceKind::SelfLogin;
    }
    machine_kind(inventory, &login.src)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::log_model::UserKind;

    fn fig_inventory() -> Inventory {
        Inventory::from_records(
            vec![
                machine("a", MachineKind::Client, Some("alice")),
                machine("b", MachineKind::Client, Some("bob")),
                machine("c", MachineKind::Client, Some("alice")),
                machine("y", MachineKind::Server, None),
                machine("z", MachineKind::Server, None),
            ],
            vec![user("alice", UserKind::Employee), user("bob", UserKind::Employee)],
            false,
        )
        .unwrap()
    }

    fn track_all() -> impl Fn(&LoginPath) -> bool {
        |_: &LoginPath| true
    }

    #[test]
    fn fan_in_produces_one_path_per_inbound_login() {
        let inv = fig_inventory();
        let mut engine = CausalityEngine::new(24);
        let events = vec![
            login("2019-03-01T08:00:00Z", "a", "y", "alice"),
            login("2019-03-01T09:00:00Z", "b", "y", "bob"),
            login("2019-03-01T10:00:00Z", "c", "y", "alice"),
            login("2019-03-01T11:00:00Z", "y", "z", "bob"),
        ];
        let mut final_paths = Vec::new();
        for event in &events {
            final_paths = engine.process(event, &inv, &track_all()).unwrap();
        }
        assert_eq!(final_paths.len(), 3);
        let causal: Vec<&str> =
            final_paths.iter().map(|p| p.causal_user.as_str()).collect();
        assert_eq!(causal, ["alice", "bob", "alice"]);
        // Bob's own movement is benign; the alice paths have an unclear switch
        // at the final hop because bob really was on y.
        assert_eq!(final_paths[1].path_type, PathType::Benign);
        for path in [&final_paths[0], &final_paths[2]] {
            assert_eq!(path.changepoints, vec![1]);
            assert_eq!(path.path_type, PathType::Unclear);
        }
        for path in &final_paths {
            assert!((path.certainty - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn switch_is_clear_when_no_matching_user_was_inbound() {
        let inv = fig_inventory();
        let mut engine = CausalityEngine::new(24);
        // Only alice logins reach y; the bob hop off y has no innocent source.
        for event in [
            login("2019-03-01T08:00:00Z", "a", "y", "alice"),
            login("2019-03-01T10:00:00Z", "c", "y", "alice"),
        ] {
            engine.process(&event, &inv, &track_all()).unwrap();
        }
        let paths = engine
            .process(&login("2019-03-01T11:00:00Z", "y", "z", "bob"), &inv, &track_all())
            .unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths.iter().all(|p| p.path_type == PathType::Clear));
        assert!(paths.iter().all(|p| (p.certainty - 0.5).abs() < 1e-12));
    }

    #[test]
    fn client_sources_root_one_hop_paths() {
        let inv = fig_inventory();
        let mut engine = CausalityEngine::new(24);
        // Noise into a, which must not be traced through: a is a client.
        engine
            .process(&login("2019-03-01T07:00:00Z", "y", "a", "alice"), &inv, &track_all())
            .unwrap();
        let own = engine
            .process(&login("2019-03-01T08:00:00Z", "a", "y", "alice"), &inv, &track_all())
            .unwrap();
        assert_eq!(own.len(), 1);
        assert_eq!(own[0].logins.len(), 1);
        assert_eq!(own[0].path_type, PathType::Benign);
        assert_eq!(own[0].certainty, 1.0);

        // Foreign credentials off a client: a clear one-hop switch.
        let foreign = engine
            .process(&login("2019-03-01T08:30:00Z", "a", "z", "bob"), &inv, &track_all())
            .unwrap();
        assert_eq!(foreign[0].changepoints, vec![0]);
        assert_eq!(foreign[0].path_type, PathType::Clear);
    }

    #[test]
    fn bastion_sources_root_paths_and_mark_them() {
        let mut machines = vec![
            machine("a", MachineKind::Client, Some("alice")),
            machine("srv1", MachineKind::Server, None),
            machine("srv2", MachineKind::Server, None),
        ];
        machines.push(bastion("gw"));
        let inv = Inventory::from_records(
            machines,
            vec![user("alice", UserKind::Employee)],
            false,
        )
        .unwrap();
        let mut engine = CausalityEngine::new(24);
        // Traffic into gw that must not be traced past it.
        engine
            .process(&login("2019-03-01T07:00:00Z", "a", "gw", "alice"), &inv, &track_all())
            .unwrap();
        let rooted = engine
            .process(&login("2019-03-01T08:00:00Z", "gw", "srv1", "alice"), &inv, &track_all())
            .unwrap();
        assert_eq!(rooted.len(), 1);
        assert_eq!(rooted[0].logins.len(), 1);
        assert!(rooted[0].root_is_bastion);
        let hop2 = engine
            .process(&login("2019-03-01T09:00:00Z", "srv1", "srv2", "alice"), &inv, &track_all())
            .unwrap();
        assert_eq!(hop2.len(), 1);
        assert_eq!(hop2[0].logins.len(), 2);
        assert!(hop2[0].root_is_bastion);
        assert_eq!(hop2[0].root_login().src, MachineId::new("gw"));
    }

    #[test]
    fn watchlist_extends_switch_paths_hop_by_hop() {
        let inv = Inventory::from_records(
            vec![
                machine("a", MachineKind::Client, Some("alice")),
                machine("m1", MachineKind::Server, None),
                machine("m2", MachineKind::Server, None),
                machine("m3", MachineKind::Server, None),
            ],
            vec![user("alice", UserKind::Employee), user("bob", UserKind::Employee)],
            false,
        )
        .unwrap();
        let mut engine = CausalityEngine::new(24);
        for event in [
            login("2019-03-01T08:00:00Z", "a", "m1", "alice"),
            login("2019-03-01T09:00:00Z", "m1", "m2", "bob"), // clear switch
        ] {
            engine.process(&event, &inv, &track_all()).unwrap();
        }
        let paths = engine
            .process(&login("2019-03-01T10:00:00Z", "m2", "m3", "bob"), &inv, &track_all())
            .unwrap();
        // First pass: [m1→m2, m2→m3] (benign pair, same user); second pass
        // extends the watchlisted switch path to 3 hops.
        let three_hop: Vec<&LoginPath> =
            paths.iter().filter(|p| p.logins.len() == 3).collect();
        assert_eq!(three_hop.len(), 1);
        assert_eq!(three_hop[0].changepoints, vec![1]);
        assert_eq!(three_hop[0].path_type, PathType::Clear);
        assert_eq!(three_hop[0].causal_user, UserName::new("alice"));
    }

    #[test]
    fn stale_watchlist_entries_are_not_extended() {
        let inv = fig_inventory();
        let mut engine = CausalityEngine::new(24);
        for event in [
            login("2019-03-01T08:00:00Z", "a", "y", "bob"), // clear 1-hop switch → watchlist
        ] {
            engine.process(&event, &inv, &track_all()).unwrap();
        }
        // 25 hours later: the watchlist entry is stale, only the 1-hop path shows up.
        let paths = engine
            .process(&login("2019-03-02T09:00:00Z", "y", "z", "bob"), &inv, &track_all())
            .unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].logins.len(), 1);
    }

    #[test]
    fn self_logins_stay_isolated() {
        let inv = fig_inventory();
        let mut engine = CausalityEngine::new(24);
        for event in [
            login("2019-03-01T08:00:00Z", "a", "y", "alice"),
            login("2019-03-01T09:00:00Z", "y", "y", "bob"), // self-login
        ] {
            let paths = engine.process(&event, &inv, &track_all()).unwrap();
            assert_eq!(paths.iter().map(|p| p.logins.len()).max(), Some(1));
        }
        // The self-login is not a causal candidate for the next hop.
        let paths = engine
            .process(&login("2019-03-01T10:00:00Z", "y", "z", "bob"), &inv, &track_all())
            .unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].logins.len(), 2);
        assert_eq!(paths[0].causal_user, UserName::new("alice"));
    }

    #[test]
    fn out_of_order_input_is_rejected() {
        let inv = fig_inventory();
        let mut engine = CausalityEngine::new(24);
        engine
            .process(&login("2019-03-01T10:00:00Z", "a", "y", "alice"), &inv, &track_all())
            .unwrap();
        let err = engine.process(
            &login("2019-03-01T09:00:00Z", "a", "y", "alice"),
            &inv,
            &track_all(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn run_stream_is_input_order_invariant() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let inv = fig_inventory();
        let mut events = vec![
            login("2019-03-01T08:00:00Z", "a", "y", "alice"),
            login("2019-03-01T09:00:00Z", "b", "y", "bob"),
            login("2019-03-01T10:00:00Z", "c", "y", "alice"),
            login("2019-03-01T11:00:00Z", "y", "z", "bob"),
            login("2019-03-01T12:00:00Z", "z", "y", "bob"),
        ];
        let baseline = CausalityEngine::new(24)
            .run_stream(&events, &inv, &track_all())
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            events.shuffle(&mut rng);
            let run = CausalityEngine::new(24)
                .run_stream(&events, &inv, &track_all())
                .unwrap();
            assert_eq!(run, baseline);
        }
    }

    #[test]
    fn state_round_trip_resumes_exactly() {
        let inv = fig_inventory();
        let events = vec![
            login("2019-03-01T08:00:00Z", "a", "y", "alice"),
            login("2019-03-01T09:00:00Z", "b", "y", "bob"),
            login("2019-03-01T10:00:00Z", "c", "y", "alice"),
            login("2019-03-01T11:00:00Z", "y", "z", "bob"),
            login("2019-03-01T12:00:00Z", "z", "y", "bob"),
        ];
        let full = CausalityEngine::new(24)
            .run_stream(&events, &inv, &track_all())
            .unwrap();

        let mut engine = CausalityEngine::new(24);
        let mut split = engine.run_stream(&events[..3], &inv, &track_all()).unwrap();
        let bytes = serde_json::to_string(&engine.state()).unwrap();
        let mut resumed =
            CausalityEngine::from_state(serde_json::from_str(&bytes).unwrap());
        split.extend(resumed.run_stream(&events[3..], &inv, &track_all()).unwrap());
        assert_eq!(split, full);
    }
}
