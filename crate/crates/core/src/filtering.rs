//! Data cleaning: mined automation edges and rule-based noise filters.
//!
//! Uninteresting machine-generated logins (backup jobs, keep-alives, printer
//! and KDC artifacts, update servers) would otherwise dominate the graph.
//! Mining proposes high-rate non-human edges for review; only an explicitly
//! approved list is ever dropped. Filter rules are data-driven predicates over
//! destination tags, user kind, and source subnet.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::log_model::{EnvConfig, Inventory, LoginEvent, MachineId, UserKind, UserName};

/// A (src, dst, user) triplet that behaves like automation in the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomationEdge {
    pub src: MachineId,
    pub dst: MachineId,
    pub user: UserName,
    /// Occurrences inside the fully-covered mining days.
    pub total_count: u64,
    /// Fraction of fully-covered days with at least one occurrence.
    pub active_day_fraction: f64,
}

impl AutomationEdge {
    fn triplet(&self) -> (&MachineId, &MachineId, &UserName) {
        (&self.src, &self.dst, &self.user)
    }
}

/// Roster classification used by filter rules; `Unknown` covers usernames
/// absent from the user inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RosterKind {
    Employee,
    Admin,
    Service,
    Unknown,
}

impl RosterKind {
    pub fn of(inventory: &Inventory, user: &UserName) -> Self {
        match inventory.user_kind(user) {
            Some(UserKind::Employee) => RosterKind::Employee,
            Some(UserKind::Admin) => RosterKind::Admin,
            Some(UserKind::Service) => RosterKind::Service,
            None => RosterKind::Unknown,
        }
    }

    /// Humans are roster employees and admins; everything else is not.
    pub fn is_human(self) -> bool {
        matches!(self, RosterKind::Employee | RosterKind::Admin)
    }
}

/// One drop rule; all present conditions must hold (conjunction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRule {
    pub name: String,
    /// Destination machine carries this tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_tag: Option<String>,
    /// Target user's roster kind equals this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_kind_is: Option<RosterKind>,
    /// Target user's roster kind differs from this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_kind_not: Option<RosterKind>,
    /// Source machine sits in this subnet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_subnet: Option<String>,
}

impl FilterRule {
    pub fn matches(&self, event: &LoginEvent, inventory: &Inventory) -> bool {
        if let Some(tag) = &self.dst_tag {
            let tagged = inventory
                .machines
                .get(&event.dst)
                .map(|m| m.has_tag(tag))
                .unwrap_or(false);
            if !tagged {
                return false;
            }
        }
        let kind = RosterKind::of(inventory, &event.user);
        if let Some(want) = self.user_kind_is {
            if kind != want {
                return false;
            }
        }
        if let Some(avoid) = self.user_kind_not {
            if kind == avoid {
                return false;
            }
        }
        if let Some(subnet) = &self.src_subnet {
            let in_subnet = inventory
                .machines
                .get(&event.src)
                .map(|m| m.subnet.eq_ignore_ascii_case(subnet))
                .unwrap_or(false);
            if !in_subnet {
                return false;
            }
        }
        true
    }
}

/// The fully-covered mining days: dates strictly between the first and last
/// event dates. Returns `None` when the stream spans fewer than 3 dates.
fn full_day_window(events: &[LoginEvent]) -> Option<(NaiveDate, NaiveDate)> {
    let first = events.iter().map(LoginEvent::day).min()?;
    let last = events.iter().map(LoginEvent::day).max()?;
    let start = first.succ_opt()?;
    let end = last.pred_opt()?;
    (start <= end).then_some((start, end))
}

/// Propose automation edges from history.
///
/// A triplet qualifies when, over the D fully-covered days of the stream, it
/// occurs more than `automation_rate_per_day × D` times, is active on at least
/// `automation_day_fraction` of those days, and its username is non-human
/// (service account or absent from the roster). Output is sorted by
/// total_count descending (ties by triplet) and is independent of input order.
pub fn mine_automation_edges(
    events: &[LoginEvent],
    inventory: &Inventory,
    config: &EnvConfig,
) -> Vec<AutomationEdge> {
    let Some((start, end)) = full_day_window(events) else {
        return Vec::new();
    };
    let d = (end - start).num_days() as u64 + 1;

    #[derive(Default)]
    struct Tally {
        total: u64,
        days: BTreeSet<NaiveDate>,
    }
    let mut tallies: BTreeMap<(MachineId, MachineId, UserName), Tally> = BTreeMap::new();
    for event in events {
        let day = event.day();
        if day < start || day > end {
            continue;
        }
        let tally = tallies
            .entry((event.src.clone(), event.dst.clone(), event.user.clone()))
            .or_default();
        tally.total += 1;
        tally.days.insert(day);
    }

    let min_total = config.automation_rate_per_day as u64 * d;
    let mut edges: Vec<AutomationEdge> = tallies
        .into_iter()
        .filter_map(|((src, dst, user), tally)| {
            let fraction = tally.days.len() as f64 / d as f64;
            let human = RosterKind::of(inventory, &user).is_human();
            (tally.total > min_total && fraction >= config.automation_day_fraction && !human)
                .then_some(AutomationEdge {
                    src,
                    dst,
                    user,
                    total_count: tally.total,
                    active_day_fraction: fraction,
                })
        })
        .collect();
    edges.sort_by(|a, b| {
        b.total_count
            .cmp(&a.total_count)
            .then_with(|| a.triplet().cmp(&b.triplet()))
    });
    edges
}

/// Where each dropped login went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub input: usize,
    pub kept: usize,
    /// Dropped by the approved automation list.
    pub automation: usize,
    /// Dropped per rule, in rule order; first matching rule wins.
    pub by_rule: Vec<(String, usize)>,
}

impl DropReport {
    pub fn dropped(&self) -> usize {
        self.automation + self.by_rule.iter().map(|(_, n)| n).sum::<usize>()
    }
}

/// Drop approved automation triplets, then apply filter rules in order.
///
/// Event order is preserved; `kept + dropped == input`. Applying the same
/// filters to the output drops nothing (idempotent).
pub fn apply_filters(
    events: &[LoginEvent],
    approved_automation: &[AutomationEdge],
    rules: &[FilterRule],
    inventory: &Inventory,
) -> (Vec<LoginEvent>, DropReport) {
    let approved: BTreeSet<(&MachineId, &MachineId, &UserName)> =
        approved_automation.iter().map(AutomationEdge::triplet).collect();
    let mut report = DropReport {
        input: events.len(),
        kept: 0,
        automation: 0,
        by_rule: rules.iter().map(|r| (r.name.clone(), 0)).collect(),
    };
    let mut kept = Vec::with_capacity(events.len());
    'events: for event in events {
        if approved.contains(&(&event.src, &event.dst, &event.user)) {
            report.automation += 1;
            continue;
        }
        for (idx, rule) in rules.iter().enumerate() {
            if rule.matches(event, inventory) {
                report.by_rule[idx].1 += 1;
                continue 'events;
            }
        }
        kept.push(event.clone());
    }
    report.kept = kept.len();
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log_model::{parse_timestamp, Machine, MachineKind, UserAccount};
    use chrono::Duration;
    use rand::SeedableRng;

    fn inventory() -> Inventory {
        let machine = |id: &str, tags: &[&str], subnet: &str| Machine {
            id: MachineId::new(id),
            hostname: id.into(),
            kind: MachineKind::Server,
            owner: None,
            first_seen: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            location: String::new(),
            is_bastion: false,
            is_provisioning_server: false,
            subnet: subnet.into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            inferred: false,
        };
        let user = |name: &str, kind: UserKind| UserAccount {
            username: UserName::new(name),
            kind,
            team: String::new(),
            first_seen: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        };
        Inventory::from_records(
            vec![
                machine("src-1", &[], "office"),
                machine("dst-1", &[], "dc"),
                machine("printer-1", &["printer"], "office"),
                machine("kdc-1", &["domain-controller"], "dc"),
            ],
            vec![
                user("alice", UserKind::Employee),
                user("root-admin", UserKind::Admin),
                user("svc_backup", UserKind::Service),
            ],
            false,
        )
        .unwrap()
    }

    fn event(ts: &str, src: &str, dst: &str, user: &str) -> LoginEvent {
        LoginEvent::new(
            parse_timestamp(ts).unwrap(),
            MachineId::new(src),
            MachineId::new(dst),
            UserName::new(user),
        )
    }

    /// `count` logins per day for the triplet across the given dates.
    fn burst(src: &str, dst: &str, user: &str, dates: &[&str], count: usize) -> Vec<LoginEvent> {
        let mut events = Vec::new();
        for date in dates {
            let base = parse_timestamp(&format!("{date}T00:00:00Z")).unwrap();
            for i in 0..count {
                let ts = base + Duration::seconds(i as i64 * 7);
                events.push(event(
                    &crate::log_model::format_timestamp(&ts),
                    src,
                    dst,
                    user,
                ));
            }
        }
        events
    }

    #[test]
    fn high_rate_nonhuman_triplet_is_mined() {
        let inv = inventory();
        let config = EnvConfig::default();
        // Stream spans Jan 1..Jan 10 → D = 8 full days (Jan 2..9).
        let mut events = vec![
            event("2019-01-01T23:00:00Z", "src-1", "dst-1", "alice"),
            event("2019-01-10T01:00:00Z", "src-1", "dst-1", "alice"),
        ];
        // 25/day > 24/day on 5 of 8 days (fraction 0.625 ≥ 0.5). 25×8=200 > 192 needs
        // total over the window: 5 days × 40 = 200 < 193? use 40/day on 5 days = 200 > 192.
        events.extend(burst(
            "src-1",
            "dst-1",
            "svc_backup",
            &["2019-01-02", "2019-01-03", "2019-01-05", "2019-01-07", "2019-01-09"],
            40,
        ));
        let mined = mine_automation_edges(&events, &inv, &config);
        assert_eq!(mined.len(), 1);
        assert_eq!(mined[0].user, UserName::new("svc_backup"));
        assert_eq!(mined[0].total_count, 200);
        assert!((mined[0].active_day_fraction - 0.625).abs() < 1e-12);
    }

    #[test]
    fn human_users_and_low_fractions_are_not_mined() {
        let inv = inventory();
        let config = EnvConfig::default();
        let mut events = vec![
            event("2019-01-01T23:00:00Z", "src-1", "dst-1", "alice"),
            event("2019-01-10T01:00:00Z", "src-1", "dst-1", "alice"),
        ];
        // Same rate but a human employee: excluded.
        events.extend(burst(
            "src-1",
            "dst-1",
            "alice",
            &["2019-01-02", "2019-01-03", "2019-01-05", "2019-01-07", "2019-01-09"],
            40,
        ));
        // Non-human but active only 3/8 days (0.375 < 0.5): excluded.
        events.extend(burst(
            "src-1",
            "dst-1",
            "svc_backup",
            &["2019-01-02", "2019-01-03", "2019-01-05"],
            70,
        ));
        assert!(mine_automation_edges(&events, &inv, &config).is_empty());
    }

    #[test]
    fn unknown_usernames_count_as_nonhuman() {
        let inv = inventory();
        let config = EnvConfig::default();
        let mut events = vec![
            event("2019-01-01T23:00:00Z", "src-1", "dst-1", "alice"),
            event("2019-01-04T01:00:00Z", "src-1", "dst-1", "alice"),
        ];
        // D = 2 (Jan 2, Jan 3); threshold 48; 30/day on both days = 60.
        events.extend(burst("src-1", "dst-1", "mystery", &["2019-01-02", "2019-01-03"], 30));
        let mined = mine_automation_edges(&events, &inv, &config);
        assert_eq!(mined.len(), 1);
        assert_eq!(mined[0].user, UserName::new("mystery"));
    }

    #[test]
    fn short_streams_mine_nothing() {
        let inv = inventory();
        let config = EnvConfig::default();
        assert!(mine_automation_edges(&[], &inv, &config).is_empty());
        // Two adjacent dates → no fully-covered day.
        let events = burst("src-1", "dst-1", "svc_backup", &["2019-01-01", "2019-01-02"], 100);
        assert!(mine_automation_edges(&events, &inv, &config).is_empty());
    }

    #[test]
    fn mining_is_order_invariant() {
        use rand::seq::SliceRandom;
        let inv = inventory();
        let config = EnvConfig::default();
        let mut events = vec![
            event("2019-01-01T23:00:00Z", "src-1", "dst-1", "alice"),
            event("2019-01-10T01:00:00Z", "src-1", "dst-1", "alice"),
        ];
        events.extend(burst(
            "src-1",
            "dst-1",
            "svc_backup",
            &["2019-01-02", "2019-01-04", "2019-01-06", "2019-01-08"],
            50,
        ));
        let baseline = mine_automation_edges(&events, &inv, &config);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            events.shuffle(&mut rng);
            assert_eq!(mine_automation_edges(&events, &inv, &config), baseline);
        }
    }

    #[test]
    fn filters_drop_in_order_and_report_counts() {
        let inv = inventory();
        let rules = vec![
            FilterRule {
                name: "printer-jobs".into(),
                dst_tag: Some("printer".into()),
                user_kind_is: None,
                user_kind_not: None,
                src_subnet: None,
            },
            FilterRule {
                name: "kdc-non-admin".into(),
                dst_tag: Some("domain-controller".into()),
                user_kind_is: None,
                user_kind_not: Some(RosterKind::Admin),
                src_subnet: None,
            },
        ];
        let approved = vec![AutomationEdge {
            src: MachineId::new("src-1"),
            dst: MachineId::new("dst-1"),
            user: UserName::new("svc_backup"),
            total_count: 999,
            active_day_fraction: 1.0,
        }];
        let events = vec![
            event("2019-01-01T00:00:00Z", "src-1", "dst-1", "svc_backup"), // automation
            event("2019-01-01T00:00:01Z", "src-1", "printer-1", "alice"),  // printer rule
            event("2019-01-01T00:00:02Z", "src-1", "kdc-1", "alice"),      // kdc rule
            event("2019-01-01T00:00:03Z", "src-1", "kdc-1", "root-admin"), // admin → kept
            event("2019-01-01T00:00:04Z", "src-1", "dst-1", "alice"),      // kept
        ];
        let (kept, report) = apply_filters(&events, &approved, &rules, &inv);
        assert_eq!(report.input, 5);
        assert_eq!(report.automation, 1);
        assert_eq!(report.by_rule, vec![("printer-jobs".to_string(), 1), ("kdc-non-admin".to_string(), 1)]);
        assert_eq!(report.kept, 2);
        assert_eq!(report.kept + report.dropped(), report.input);
        assert_eq!(kept[0].user, UserName::new("root-admin"));

        // Idempotent: a second pass drops nothing.
        let (again, report2) = apply_filters(&kept, &approved, &rules, &inv);
        assert_eq!(again, kept);
        assert_eq!(report2.dropped(), 0);
    }

    #[test]
    fn automation_drop_requires_exact_triplet() {
        let inv = inventory();
        let approved = vec![AutomationEdge {
            src: MachineId::new("src-1"),
            dst: MachineId::new("dst-1"),
            user: UserName::new("svc_backup"),
            total_count: 999,
            active_day_fraction: 1.0,
        }];
        // Same user, different destination: kept.
        let events = vec![event("2019-01-01T00:00:00Z", "src-1", "kdc-1", "svc_backup")];
        let (kept, _) = apply_filters(&events, &approved, &[], &inv);
        assert_eq!(kept.len(), 1);
    }
}
