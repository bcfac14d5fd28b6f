//! Causal login paths: who was really behind a login, and how did they get there.
//!
//! A login path is a time-ordered chain of logins, each hop's destination
//! being the next hop's source, with consecutive hops at most T hours apart.
//! The path's causal user is the person inferred to be moving; changepoints
//! are the hops where the presented credentials stop matching the previous
//! hop (or, from a client, the machine's owner). Paths are classified:
//!
//! * `Benign` — no changepoints; the causal user used their own credentials.
//! * `Clear` — some changepoint is unambiguous: it left a client machine, or
//!   nobody matching the new credentials had logged into the source recently.
//! * `Unclear` — credentials changed, but a matching user was present on the
//!   source, so the switch has an innocent explanation.

mod engine;
mod oracle;

pub use engine::{CausalityEngine, EngineState, RecentLoginStore, Watchlist};
pub use oracle::{naive_infer_paths, switch_records, SwitchRecord};

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::log_model::{Inventory, LoginEvent, MachineId, MachineKind, UserName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathType {
    Benign,
    Clear,
    Unclear,
}

/// A causal chain of logins ending at the most recent one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoginPath {
    pub logins: Vec<LoginEvent>,
    /// The user inferred to be driving the whole chain.
    pub causal_user: UserName,
    /// Indexes into `logins` where credentials switched.
    pub changepoints: Vec<usize>,
    pub path_type: PathType,
    /// 1 / (number of causal paths inferred for the final login).
    pub certainty: f64,
    /// True when the chain is rooted at a bastion login.
    pub root_is_bastion: bool,
    /// How many identical daily-edge copies this record stands for (≥ 1).
    #[serde(default = "one")]
    pub duplicates: u32,
}

fn one() -> u32 {
    1
}

impl LoginPath {
    pub fn final_login(&self) -> &LoginEvent {
        self.logins.last().expect("paths are non-empty")
    }

    pub fn root_login(&self) -> &LoginEvent {
        self.logins.first().expect("paths are non-empty")
    }

    /// UTC date of the final hop; the day the path "happened" for dedup,
    /// indexing, and alerting purposes.
    pub fn day(&self) -> NaiveDate {
        self.final_login().day()
    }

    pub fn destinations(&self) -> impl Iterator<Item = &MachineId> {
        self.logins.iter().map(|l| &l.dst)
    }

    /// The (src, dst, user, date) signature used for daily dedup and clustering.
    pub fn daily_edges(&self) -> Vec<DailyEdge> {
        self.logins.iter().map(DailyEdge::of).collect()
    }

    pub fn is_switch(&self) -> bool {
        !self.changepoints.is_empty()
    }
}

/// A login collapsed to its daily identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DailyEdge {
    pub src: MachineId,
    pub dst: MachineId,
    pub user: UserName,
    pub date: NaiveDate,
}

impl DailyEdge {
    pub fn of(login: &LoginEvent) -> Self {
        Self {
            src: login.src.clone(),
            dst: login.dst.clone(),
            user: login.user.clone(),
            date: login.day(),
        }
    }
}

/// Changepoints of a login chain: hops whose target user differs from the
/// previous hop's, plus client-sourced hops whose target user is not the
/// machine's owner. Unknown machines are treated as servers.
pub fn compute_changepoints(logins: &[LoginEvent], inventory: &Inventory) -> Vec<usize> {
    let mut points = Vec::new();
    for (i, login) in logins.iter().enumerate() {
        let differs_from_prev = i > 0 && login.user != logins[i - 1].user;
        let client_mismatch = match inventory.machines.get(&login.src) {
            Some(m) if m.kind == MachineKind::Client => {
                m.owner.as_ref().map(|o| *o != login.user).unwrap_or(true)
            }
            _ => false,
        };
        if differs_from_prev || client_mismatch {
            points.push(i);
        }
    }
    points
}

/// Is a single credential switch unambiguous?
///
/// Yes when the switching login left a client machine, or when every inbound
/// causal login to its source presented a different username — nobody who
/// could explain the new credentials was there.
pub fn changepoint_is_clear(
    cp_login: &LoginEvent,
    inventory: &Inventory,
    inbound_users: &BTreeSet<UserName>,
) -> bool {
    let from_client = inventory
        .machines
        .get(&cp_login.src)
        .map(|m| m.kind == MachineKind::Client)
        .unwrap_or(false);
    from_client || inbound_users.iter().all(|u| *u != cp_login.user)
}

/// Combine per-changepoint clarity into a path type.
pub fn classify(changepoint_count: usize, any_clear: bool) -> PathType {
    match (changepoint_count, any_clear) {
        (0, _) => PathType::Benign,
        (_, true) => PathType::Clear,
        (_, false) => PathType::Unclear,
    }
}

/// Users behind the causal inbound logins for `login`: distinct target users
/// of logins into `login.src` within `[t−T, t)`, self-loops excluded.
pub fn inbound_users_from_slice(
    all: &[LoginEvent],
    login: &LoginEvent,
    window: Duration,
) -> BTreeSet<UserName> {
    all.iter()
        .filter(|k| is_causal_inbound(k, login, window))
        .map(|k| k.user.clone())
        .collect()
}

/// Whether `candidate` is a causal inbound login for `login`:
/// it lands on `login`'s source within the T-hour window before it.
pub fn is_causal_inbound(candidate: &LoginEvent, login: &LoginEvent, window: Duration) -> bool {
    candidate.dst == login.src
        && !candidate.is_self_login()
        && candidate.ts < login.ts
        && candidate.ts >= login.ts - window
}

/// Causal user implied by a path's root login: the owner for client roots,
/// the root's own target user for bastion and server roots (and for clients
/// with no registered owner).
pub fn causal_user_for_root(root: &LoginEvent, inventory: &Inventory) -> UserName {
    match inventory.machines.get(&root.src) {
        Some(m) if m.is_bastion => root.user.clone(),
        Some(m) if m.kind == MachineKind::Client => {
            m.owner.clone().unwrap_or_else(|| root.user.clone())
        }
        _ => root.user.clone(),
    }
}

/// Collapse paths with identical daily-edge sequences, keeping the earliest
/// instance (input order) and accumulating its `duplicates` count.
pub fn dedup_daily(paths: Vec<LoginPath>) -> Vec<LoginPath> {
    let mut seen: std::collections::BTreeMap<Vec<DailyEdge>, usize> = Default::default();
    let mut out: Vec<LoginPath> = Vec::with_capacity(paths.len());
    for path in paths {
        let key = path.daily_edges();
        match seen.get(&key) {
            Some(&idx) => out[idx].duplicates += path.duplicates,
            None => {
                seen.insert(key, out.len());
                out.push(path);
            }
        }
    }
    out
}

/// Engine clock helper: end of the lookback window for time `now`.
pub(crate) fn window_start(now: DateTime<Utc>, window: Duration) -> DateTime<Utc> {
    now - window
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::log_model::UserKind;

    fn inv() -> Inventory {
        Inventory::from_records(
            vec![
                machine("a", MachineKind::Client, Some("alice")),
                machine("y", MachineKind::Server, None),
                machine("z", MachineKind::Server, None),
            ],
            vec![user("alice", UserKind::Employee), user("bob", UserKind::Employee)],
            false,
        )
        .unwrap()
    }

    #[test]
    fn changepoints_catch_user_switches_and_foreign_clients() {
        let inv = inv();
        let chain = vec![
            login("2019-03-01T08:00:00Z", "a", "y", "alice"),
            login("2019-03-01T09:00:00Z", "y", "z", "alice"),
            login("2019-03-01T10:00:00Z", "z", "y", "bob"),
        ];
        assert_eq!(compute_changepoints(&chain, &inv), vec![2]);

        let foreign = vec![login("2019-03-01T08:00:00Z", "a", "y", "bob")];
        assert_eq!(compute_changepoints(&foreign, &inv), vec![0]);

        let own = vec![login("2019-03-01T08:00:00Z", "a", "y", "alice")];
        assert!(compute_changepoints(&own, &inv).is_empty());
    }

    #[test]
    fn clarity_needs_no_matching_inbound_user() {
        let inv = inv();
        let cp = login("2019-03-01T10:00:00Z", "y", "z", "bob");
        let others: BTreeSet<UserName> = [UserName::new("alice")].into();
        assert!(changepoint_is_clear(&cp, &inv, &others));
        let with_bob: BTreeSet<UserName> =
            [UserName::new("alice"), UserName::new("bob")].into();
        assert!(!changepoint_is_clear(&cp, &inv, &with_bob));
        // Client-sourced switches are always clear.
        let from_client = login("2019-03-01T10:00:00Z", "a", "z", "bob");
        assert!(changepoint_is_clear(&from_client, &inv, &with_bob));
    }

    #[test]
    fn inbound_window_is_closed_open() {
        let target = login("2019-03-02T10:00:00Z", "y", "z", "bob");
        let window = Duration::hours(24);
        let exactly_t = login("2019-03-01T10:00:00Z", "a", "y", "alice");
        let just_outside = login("2019-03-01T09:59:59Z", "a", "y", "alice");
        let same_instant = login("2019-03-02T10:00:00Z", "a", "y", "alice");
        let self_loop = login("2019-03-02T09:00:00Z", "y", "y", "carol");
        assert!(is_causal_inbound(&exactly_t, &target, window));
        assert!(!is_causal_inbound(&just_outside, &target, window));
        assert!(!is_causal_inbound(&same_instant, &target, window));
        assert!(!is_causal_inbound(&self_loop, &target, window));
    }

    #[test]
    fn dedup_keeps_earliest_and_counts() {
        let inv = inv();
        let mk = |ts: &str| LoginPath {
            logins: vec![login(ts, "y", "z", "bob")],
            causal_user: UserName::new("bob"),
            changepoints: vec![],
            path_type: PathType::Benign,
            certainty: 1.0,
            root_is_bastion: false,
            duplicates: 1,
        };
        let _ = &inv;
        let deduped = dedup_daily(vec![
            mk("2019-03-01T08:00:00Z"),
            mk("2019-03-01T12:00:00Z"), // same daily edge → collapsed
            mk("2019-03-02T08:00:00Z"), // different date → kept
        ]);
        assert_eq!(deduped.len(), 2);
        assert_eq!(deduped[0].duplicates, 2);
        assert_eq!(
            deduped[0].final_login().ts,
            crate::log_model::parse_timestamp("2019-03-01T08:00:00Z").unwrap()
        );
        assert_eq!(deduped[1].duplicates, 1);
    }
}
