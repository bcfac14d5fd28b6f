//! Comparison baseline: the structurally-anomalous-login detector.
//!
//! This detector scores every login in isolation. A login alerts when its
//! exact edge (source, destination, user) is *rare* — seen on fewer than `N`
//! distinct days of a rolling training window — and no learned *benign
//! pattern* matches its attribute triplet.
//!
//! A pattern constrains some subset of six attributes: the source machine's
//! (kind, location), the destination machine's (kind, location), and the
//! user's (team, kind); unconstrained slots are wildcards, and a pattern
//! must constrain at least one attribute (the constraint-free pattern would
//! declare every login benign). A pattern is benign when, for each of its
//! three entity classes, the fraction of inventory entities matching that
//! slot which have at least one matching login in the training window is at
//! least `P`.
//!
//! `N` and `P` are the detector's two thresholds; [`grid_search`] sweeps
//! both and tabulates deduplicated false positives (one per edge per day)
//! and attacks detected (any attack login alerting counts).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::HopperError;
use crate::log_model::{
    day_of, Inventory, LoginEvent, MachineId, MachineKind, UserKind, UserName,
};
use crate::login_graph::EdgeKey;
use crate::Result;

/// The two detector thresholds: edges seen on fewer than `rare_edge_days`
/// distinct training days are rare; patterns need per-slot coverage of at
/// least `pattern_fraction` to be benign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalParams {
    pub rare_edge_days: u32,
    pub pattern_fraction: f64,
}

impl SalParams {
    pub fn validate(&self) -> Result<()> {
        if self.rare_edge_days < 1 {
            return Err(HopperError::Config("rare_edge_days must be >= 1".into()));
        }
        if !(self.pattern_fraction > 0.0 && self.pattern_fraction <= 1.0) {
            return Err(HopperError::Config(
                "pattern_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Threshold sweeps matching the published table layout.
pub fn default_n_grid() -> Vec<u32> {
    (1..=15).collect()
}

pub fn default_p_grid() -> Vec<f64> {
    vec![0.01, 0.025, 0.1, 0.2, 0.5, 0.75]
}

/// The six attributes a pattern can constrain, resolved for one login.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LoginAttrs {
    pub src_kind: MachineKind,
    pub src_location: String,
    pub dst_kind: MachineKind,
    pub dst_location: String,
    pub user_team: String,
    pub user_kind: UserKind,
}

/// Resolve a login's attribute triplet against the inventory.
pub fn login_attrs(login: &LoginEvent, inventory: &Inventory) -> Result<LoginAttrs> {
    let src = inventory.machine(&login.src)?;
    let dst = inventory.machine(&login.dst)?;
    let user = inventory
        .user(&login.user)
        .ok_or_else(|| HopperError::Inventory(format!("user {} not in roster", login.user)))?;
    Ok(LoginAttrs {
        src_kind: src.kind,
        src_location: src.location.clone(),
        dst_kind: dst.kind,
        dst_location: dst.location.clone(),
        user_team: user.team.clone(),
        user_kind: user.kind,
    })
}

/// A login pattern: each slot is a concrete attribute or a wildcard (`None`).
/// At least one slot is concrete.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LoginPattern {
    pub src_kind: Option<MachineKind>,
    pub src_location: Option<String>,
    pub dst_kind: Option<MachineKind>,
    pub dst_location: Option<String>,
    pub user_team: Option<String>,
    pub user_kind: Option<UserKind>,
}

impl LoginPattern {
    /// The fully concrete pattern of one login's attributes.
    pub fn concrete(attrs: &LoginAttrs) -> Self {
        Self {
            src_kind: Some(attrs.src_kind),
            src_location: Some(attrs.src_location.clone()),
            dst_kind: Some(attrs.dst_kind),
            dst_location: Some(attrs.dst_location.clone()),
            user_team: Some(attrs.user_team.clone()),
            user_kind: Some(attrs.user_kind),
        }
    }

    pub fn matches(&self, attrs: &LoginAttrs) -> bool {
        self.src_kind.map_or(true, |v| v == attrs.src_kind)
            && self.src_location.as_ref().map_or(true, |v| *v == attrs.src_location)
            && self.dst_kind.map_or(true, |v| v == attrs.dst_kind)
            && self.dst_location.as_ref().map_or(true, |v| *v == attrs.dst_location)
            && self.user_team.as_ref().map_or(true, |v| *v == attrs.user_team)
            && self.user_kind.map_or(true, |v| v == attrs.user_kind)
    }
}

/// All 63 patterns matching these attributes: every non-empty subset of the
/// six attributes held concrete, the rest wildcarded.
pub fn generalizations(attrs: &LoginAttrs) -> Vec<LoginPattern> {
    (1u32..64)
        .map(|mask| LoginPattern {
            src_kind: (mask & 1 != 0).then_some(attrs.src_kind),
            src_location: (mask & 2 != 0).then(|| attrs.src_location.clone()),
            dst_kind: (mask & 4 != 0).then_some(attrs.dst_kind),
            dst_location: (mask & 8 != 0).then(|| attrs.dst_location.clone()),
            user_team: (mask & 16 != 0).then(|| attrs.user_team.clone()),
            user_kind: (mask & 32 != 0).then_some(attrs.user_kind),
        })
        .collect()
}

/// Per-pattern training state: how many window logins match, broken out by
/// the distinct entities filling each slot.
#[derive(Debug, Clone, Default)]
struct SlotCounts {
    srcs: BTreeMap<MachineId, u32>,
    dsts: BTreeMap<MachineId, u32>,
    users: BTreeMap<UserName, u32>,
}

/// How many inventory entities match each slot of a pattern. Fixed per
/// (pattern, inventory), so computed once.
#[derive(Debug, Clone, Copy)]
struct SlotDenoms {
    srcs: usize,
    dsts: usize,
    users: usize,
}

fn decrement<K: Ord + Clone>(map: &mut BTreeMap<K, u32>, key: &K) {
    if let Some(c) = map.get_mut(key) {
        *c -= 1;
        if *c == 0 {
            map.remove(key);
        }
    }
}

fn slot_denoms(pattern: &LoginPattern, inventory: &Inventory) -> SlotDenoms {
    let machines_matching = |kind: Option<MachineKind>, loc: &Option<String>| {
        inventory
            .machines
            .values()
            .filter(|m| kind.map_or(true, |k| k == m.kind))
            .filter(|m| loc.as_ref().map_or(true, |l| *l == m.location))
            .count()
    };
    SlotDenoms {
        srcs: machines_matching(pattern.src_kind, &pattern.src_location),
        dsts: machines_matching(pattern.dst_kind, &pattern.dst_location),
        users: inventory
            .users
            .values()
            .filter(|u| pattern.user_team.as_ref().map_or(true, |t| *t == u.team))
            .filter(|u| pattern.user_kind.map_or(true, |k| k == u.kind))
            .count(),
    }
}

/// The rolling training window: per-edge distinct-day counts and per-pattern
/// slot coverage, maintained incrementally as whole days enter and leave.
#[derive(Debug, Clone)]
pub struct WindowModel {
    window_days: u32,
    days: VecDeque<(NaiveDate, Vec<(EdgeKey, LoginAttrs)>)>,
    edge_days: BTreeMap<EdgeKey, BTreeMap<NaiveDate, u32>>,
    patterns: BTreeMap<LoginPattern, SlotCounts>,
    denoms: BTreeMap<LoginPattern, SlotDenoms>,
}

impl WindowModel {
    pub fn new(window_days: u32) -> Self {
        Self {
            window_days,
            days: VecDeque::new(),
            edge_days: BTreeMap::new(),
            patterns: BTreeMap::new(),
            denoms: BTreeMap::new(),
        }
    }

    /// Train on everything, grouped into days, with no eviction.
    pub fn from_history(history: &[LoginEvent], inventory: &Inventory) -> Result<Self> {
        let mut model = Self::new(u32::MAX);
        let mut current: Option<(NaiveDate, Vec<LoginEvent>)> = None;
        for login in history {
            let day = day_of(&login.ts);
            match &mut current {
                Some((d, batch)) if *d == day => batch.push(login.clone()),
                Some((d, batch)) => {
                    if day < *d {
                        return Err(HopperError::Validation(
                            "training logins must be sorted by time".into(),
                        ));
                    }
                    model.push_day(*d, batch, inventory)?;
                    current = Some((day, vec![login.clone()]));
                }
                None => current = Some((day, vec![login.clone()])),
            }
        }
        if let Some((d, batch)) = current {
            model.push_day(d, &batch, inventory)?;
        }
        Ok(model)
    }

    /// Absorb one day of logins and evict days that have slid out of the
    /// trailing window. Days must arrive in increasing order.
    pub fn push_day(
        &mut self,
        date: NaiveDate,
        logins: &[LoginEvent],
        inventory: &Inventory,
    ) -> Result<()> {
        if let Some((last, _)) = self.days.back() {
            if *last >= date {
                return Err(HopperError::Validation(format!(
                    "training day {date} arrived after {last}"
                )));
            }
        }
        let mut entries = Vec::with_capacity(logins.len());
        for login in logins {
            if day_of(&login.ts) != date {
                return Err(HopperError::Validation(format!(
                    "login at {} filed under day {date}",
                    login.ts
                )));
            }
            let attrs = login_attrs(login, inventory)?;
            let edge = EdgeKey::of(login);
            *self.edge_days.entry(edge.clone()).or_default().entry(date).or_insert(0) += 1;
            for pattern in generalizations(&attrs) {
                self.denoms
                    .entry(pattern.clone())
                    .or_insert_with(|| slot_denoms(&pattern, inventory));
                let counts = self.patterns.entry(pattern).or_default();
                *counts.srcs.entry(login.src.clone()).or_insert(0) += 1;
                *counts.dsts.entry(login.dst.clone()).or_insert(0) += 1;
                *counts.users.entry(login.user.clone()).or_insert(0) += 1;
            }
            entries.push((edge, attrs));
        }
        self.days.push_back((date, entries));
        if let Some(cutoff) = date.checked_sub_days(Days::new(u64::from(self.window_days))) {
            self.evict_before(cutoff);
        }
        Ok(())
    }

    /// Drop all days strictly before `cutoff`.
    pub fn evict_before(&mut self, cutoff: NaiveDate) {
        while let Some((date, _)) = self.days.front() {
            if *date >= cutoff {
                break;
            }
            let (date, entries) = self.days.pop_front().expect("front checked");
            for (edge, attrs) in entries {
                if let Some(days) = self.edge_days.get_mut(&edge) {
                    if let Some(count) = days.get_mut(&date) {
                        *count -= 1;
                        if *count == 0 {
                            days.remove(&date);
                        }
                    }
                    if days.is_empty() {
                        self.edge_days.remove(&edge);
                    }
                }
                for pattern in generalizations(&attrs) {
                    let Some(counts) = self.patterns.get_mut(&pattern) else { continue };
                    decrement(&mut counts.srcs, &edge.src);
                    decrement(&mut counts.dsts, &edge.dst);
                    decrement(&mut counts.users, &edge.user);
                    if counts.srcs.is_empty() {
                        self.patterns.remove(&pattern);
                    }
                }
            }
        }
    }

    /// Distinct window days on which this exact edge appeared.
    pub fn edge_day_count(&self, edge: &EdgeKey) -> u32 {
        self.edge_days.get(edge).map(|d| d.len() as u32).unwrap_or(0)
    }

    /// The pattern's weakest slot coverage: min over (sources, destinations,
    /// users) of the fraction of matching inventory entities with at least
    /// one matching window login. Zero when nothing in the window matches.
    pub fn min_frac(&self, pattern: &LoginPattern) -> f64 {
        let Some(counts) = self.patterns.get(pattern) else {
            return 0.0;
        };
        let denoms = self.denoms.get(pattern).expect("denominators tracked with counts");
        let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        frac(counts.srcs.len(), denoms.srcs)
            .min(frac(counts.dsts.len(), denoms.dsts))
            .min(frac(counts.users.len(), denoms.users))
    }

    /// The best coverage any pattern matching these attributes achieves.
    /// The login is pattern-benign at threshold `p` iff this is ≥ `p`.
    pub fn best_frac(&self, attrs: &LoginAttrs) -> f64 {
        generalizations(attrs)
            .iter()
            .map(|pattern| self.min_frac(pattern))
            .fold(0.0, f64::max)
    }

    /// All benign patterns at threshold `p`.
    pub fn benign_patterns(&self, p: f64) -> BTreeSet<LoginPattern> {
        self.patterns
            .keys()
            .filter(|pattern| self.min_frac(pattern) >= p)
            .cloned()
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

/// The logins whose edge appears on fewer than `n` distinct days of the
/// given history.
pub fn rare_edges(
    logins: &[LoginEvent],
    history: &[LoginEvent],
    n: u32,
) -> Vec<LoginEvent> {
    let mut days_by_edge: BTreeMap<EdgeKey, BTreeSet<NaiveDate>> = BTreeMap::new();
    for login in history {
        days_by_edge.entry(EdgeKey::of(login)).or_default().insert(day_of(&login.ts));
    }
    logins
        .iter()
        .filter(|l| {
            days_by_edge.get(&EdgeKey::of(l)).map(|d| d.len() as u32).unwrap_or(0) < n
        })
        .cloned()
        .collect()
}

/// All patterns reaching per-slot coverage `p` over the history.
pub fn learn_patterns(
    history: &[LoginEvent],
    inventory: &Inventory,
    p: f64,
) -> Result<BTreeSet<LoginPattern>> {
    SalParams { rare_edge_days: 1, pattern_fraction: p }.validate()?;
    Ok(WindowModel::from_history(history, inventory)?.benign_patterns(p))
}

/// Point classification: alert iff the login is in the rare set and no
/// learned pattern matches its attribute triplet.
pub fn sal_detect(
    login: &LoginEvent,
    inventory: &Inventory,
    patterns: &BTreeSet<LoginPattern>,
    rare: &BTreeSet<LoginEvent>,
) -> Result<bool> {
    if !rare.contains(login) {
        return Ok(false);
    }
    let attrs = login_attrs(login, inventory)?;
    Ok(!patterns.iter().any(|pattern| pattern.matches(&attrs)))
}

/// Collapse alerts to one per (edge, day).
pub fn dedup_alerts(alerts: &[LoginEvent]) -> BTreeSet<(EdgeKey, NaiveDate)> {
    alerts.iter().map(|l| (EdgeKey::of(l), day_of(&l.ts))).collect()
}

/// One grid cell: thresholds and the resulting deduplicated false-positive
/// count and number of attacks detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: u32,
    pub p: f64,
    pub false_positives: u64,
    pub true_positives: u64,
}

/// The full sweep, cells stored row-major: `p` ascending, then `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalGrid {
    pub n_grid: Vec<u32>,
    pub p_grid: Vec<f64>,
    pub cells: Vec<GridCell>,
}

impl SalGrid {
    pub fn cell(&self, n: u32, p: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.n == n && c.p == p)
    }

    /// The cheapest cell meeting the detection target: fewest false
    /// positives subject to `true_positives >= target`, ties resolved
    /// toward smaller `p` then smaller `n`. `None` if no cell reaches the
    /// target.
    pub fn best_for_target(&self, target: u64) -> Option<&GridCell> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.true_positives >= target)
            .min_by_key(|(idx, c)| (c.false_positives, *idx))
            .map(|(_, c)| c)
    }

    /// Long-format CSV: one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,n,fp,tp\n");
        for cell in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                cell.p, cell.n, cell.false_positives, cell.true_positives
            ));
        }
        out
    }
}

/// Sweep both thresholds over an evaluation stream.
///
/// `stream` is the full sorted login sequence (training run-up plus the
/// evaluation span, attacks already injected); logins on days before
/// `eval_start` only train. Each day classifies against the trailing
/// `window_days`-day window, then joins it. `attacks` lists each attack's
/// logins; a login appearing in one counts toward that attack's detection
/// instead of the false-positive tally.
///
/// Attack logins are scored but never trained on. The scenarios are
/// counterfactual alternatives — each one is evaluated as if it were the
/// only attack that ran — so one scenario's hops must not teach the model
/// edges or coverage that would shadow another's. Because every scenario's
/// logins land within a single day and days classify before they join the
/// window, this matches running each scenario in isolation exactly, while
/// counting the shared benign false positives once.
pub fn grid_search(
    stream: &[LoginEvent],
    eval_start: NaiveDate,
    inventory: &Inventory,
    attacks: &[BTreeSet<LoginEvent>],
    n_grid: &[u32],
    p_grid: &[f64],
    window_days: u32,
) -> Result<SalGrid> {
    if n_grid.is_empty() || p_grid.is_empty() {
        return Err(HopperError::Config("threshold grids must be non-empty".into()));
    }
    if !n_grid.windows(2).all(|w| w[0] < w[1]) || !p_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(HopperError::Config("threshold grids must be strictly increasing".into()));
    }
    for &n in n_grid {
        SalParams { rare_edge_days: n, pattern_fraction: p_grid[0] }.validate()?;
    }
    for &p in p_grid {
        SalParams { rare_edge_days: n_grid[0], pattern_fraction: p }.validate()?;
    }
    if window_days < 1 {
        return Err(HopperError::Config("window_days must be >= 1".into()));
    }

    // Score each evaluation login once: (rare-day count, best coverage).
    // Benign scores dedup to one per (edge, day); attack scores group per
    // attack. Both axes of the sweep then reduce to threshold comparisons.
    let mut model = WindowModel::new(window_days);
    let mut benign_cells: BTreeMap<(EdgeKey, NaiveDate), (u32, f64)> = BTreeMap::new();
    let mut attacked_cells: BTreeSet<(EdgeKey, NaiveDate)> = BTreeSet::new();
    let mut attack_scores: Vec<Vec<(u32, f64)>> = vec![Vec::new(); attacks.len()];

    let mut cursor = 0usize;
    while cursor < stream.len() {
        let date = day_of(&stream[cursor].ts);
        let mut end = cursor;
        while end < stream.len() && day_of(&stream[end].ts) == date {
            if stream[end].ts < stream[cursor].ts {
                return Err(HopperError::Validation(
                    "evaluation stream must be sorted by time".into(),
                ));
            }
            end += 1;
        }
        let day_logins = &stream[cursor..end];
        if let Some(cutoff) = date.checked_sub_days(Days::new(u64::from(window_days))) {
            model.evict_before(cutoff);
        }
        let mut train: Vec<LoginEvent> = Vec::with_capacity(day_logins.len());
        for login in day_logins {
            let attack = attacks.iter().position(|a| a.contains(login));
            if date >= eval_start {
                let attrs = login_attrs(login, inventory)?;
                let score = (model.edge_day_count(&EdgeKey::of(login)), model.best_frac(&attrs));
                let cell = (EdgeKey::of(login), date);
                match attack {
                    Some(i) => {
                        attack_scores[i].push(score);
                        attacked_cells.insert(cell);
                    }
                    None => {
                        benign_cells.entry(cell).or_insert(score);
                    }
                }
            }
            if attack.is_none() {
                train.push(login.clone());
            }
        }
        model.push_day(date, &train, inventory)?;
        cursor = end;
    }
    benign_cells.retain(|cell, _| !attacked_cells.contains(cell));

    let mut cells = Vec::with_capacity(n_grid.len() * p_grid.len());
    for &p in p_grid {
        for &n in n_grid {
            let alerted = |&(days, frac): &(u32, f64)| days < n && frac < p;
            let false_positives = benign_cells.values().filter(|s| alerted(s)).count() as u64;
            let true_positives =
                attack_scores.iter().filter(|scores| scores.iter().any(alerted)).count() as u64;
            cells.push(GridCell { n, p, false_positives, true_positives });
        }
    }
    Ok(SalGrid { n_grid: n_grid.to_vec(), p_grid: p_grid.to_vec(), cells })
}
