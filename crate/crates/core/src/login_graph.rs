//! Rolling history of who logged in where, summarized per day.
//!
//! Detection needs three questions answered about the recent past:
//!
//! * how many distinct days did this (src, dst, user) edge occur?
//! * which destinations has this user logged into?
//! * on how many days did some inferred path connect machine A to machine Z?
//!
//! `HistoryIndex` answers them over a sliding window of whole days. Each day
//! contributes one `DaySlice` (built from that day's cleaned logins and
//! inferred paths); slices are pushed in date order and evicted from the
//! front as the window advances, with merged lookup maps maintained
//! incrementally.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::causality::LoginPath;
use crate::error::HopperError;
use crate::log_model::{LoginEvent, MachineId, UserName};
use crate::Result;

/// A login stripped to the identity that matters for frequency counting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub src: MachineId,
    pub dst: MachineId,
    pub user: UserName,
}

impl EdgeKey {
    pub fn of(login: &LoginEvent) -> Self {
        Self { src: login.src.clone(), dst: login.dst.clone(), user: login.user.clone() }
    }
}

/// What one calendar day contributes to the index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySlice {
    pub date: NaiveDate,
    /// Distinct login edges seen this day.
    pub edges: BTreeSet<EdgeKey>,
    /// Distinct (user, destination) pairs seen this day.
    pub user_dsts: BTreeSet<(UserName, MachineId)>,
    /// (root source, final destination) endpoints of this day's paths.
    pub endpoints: BTreeSet<(MachineId, MachineId)>,
}

impl DaySlice {
    /// Summarize one day. Every login and path must fall on `date`.
    pub fn build(date: NaiveDate, logins: &[LoginEvent], paths: &[LoginPath]) -> Result<Self> {
        let mut slice = Self {
            date,
            edges: BTreeSet::new(),
            user_dsts: BTreeSet::new(),
            endpoints: BTreeSet::new(),
        };
        for login in logins {
            if login.day() != date {
                return Err(HopperError::Validation(format!(
                    "login at {} does not belong to day slice {date}",
                    login.ts
                )));
            }
            slice.edges.insert(EdgeKey::of(login));
            slice.user_dsts.insert((login.user.clone(), login.dst.clone()));
        }
        for path in paths {
            if path.day() != date {
                return Err(HopperError::Validation(format!(
                    "path ending at {} does not belong to day slice {date}",
                    path.final_login().ts
                )));
            }
            slice
                .endpoints
                .insert((path.root_login().src.clone(), path.final_login().dst.clone()));
        }
        Ok(slice)
    }

    pub fn empty(date: NaiveDate) -> Self {
        Self {
            date,
            edges: BTreeSet::new(),
            user_dsts: BTreeSet::new(),
            endpoints: BTreeSet::new(),
        }
    }

    /// Summarize a day from its inferred paths alone. Every login is the
    /// final hop of at least one of its day's paths, so taking final hops
    /// yields the same edge and user-destination sets as the raw logins.
    pub fn from_paths(date: NaiveDate, paths: &[LoginPath]) -> Result<Self> {
        let mut slice = Self::empty(date);
        for path in paths {
            if path.day() != date {
                return Err(HopperError::Validation(format!(
                    "path ending at {} does not belong to day slice {date}",
                    path.final_login().ts
                )));
            }
            let last = path.final_login();
            slice.edges.insert(EdgeKey::of(last));
            slice.user_dsts.insert((last.user.clone(), last.dst.clone()));
            slice
                .endpoints
                .insert((path.root_login().src.clone(), last.dst.clone()));
        }
        Ok(slice)
    }
}

/// Sliding multi-day index over `DaySlice`s, with O(log n) lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "IndexSerde", into = "IndexSerde")]
pub struct HistoryIndex {
    days: VecDeque<DaySlice>,
    edge_days: BTreeMap<EdgeKey, BTreeSet<NaiveDate>>,
    user_dsts: BTreeMap<UserName, BTreeSet<MachineId>>,
    connectivity: BTreeMap<(MachineId, MachineId), BTreeSet<NaiveDate>>,
}

impl Default for HistoryIndex {
    fn default() -> Self {
        Self::new()
    }
}

impl HistoryIndex {
    pub fn new() -> Self {
        Self {
            days: VecDeque::new(),
            edge_days: BTreeMap::new(),
            user_dsts: BTreeMap::new(),
            connectivity: BTreeMap::new(),
        }
    }

    /// Index a whole window `[start, end)` at once. Days without traffic
    /// still occupy a slot, so window arithmetic stays uniform.
    pub fn build(
        start: NaiveDate,
        end: NaiveDate,
        logins: &[LoginEvent],
        paths: &[LoginPath],
    ) -> Result<Self> {
        if start >= end {
            return Err(HopperError::Validation(format!(
                "empty index window {start}..{end}"
            )));
        }
        let mut by_day_logins: BTreeMap<NaiveDate, Vec<LoginEvent>> = BTreeMap::new();
        for login in logins {
            let day = login.day();
            if day < start || day >= end {
                return Err(HopperError::Validation(format!(
                    "login at {} outside index window {start}..{end}",
                    login.ts
                )));
            }
            by_day_logins.entry(day).or_default().push(login.clone());
        }
        let mut by_day_paths: BTreeMap<NaiveDate, Vec<LoginPath>> = BTreeMap::new();
        for path in paths {
            let day = path.day();
            if day < start || day >= end {
                return Err(HopperError::Validation(format!(
                    "path ending at {} outside index window {start}..{end}",
                    path.final_login().ts
                )));
            }
            by_day_paths.entry(day).or_default().push(path.clone());
        }
        let mut index = Self::new();
        let mut date = start;
        while date < end {
            let slice = DaySlice::build(
                date,
                by_day_logins.get(&date).map(Vec::as_slice).unwrap_or(&[]),
                by_day_paths.get(&date).map(Vec::as_slice).unwrap_or(&[]),
            )?;
            index.push_day(slice)?;
            date = date.succ_opt().expect("date overflow");
        }
        Ok(index)
    }

    /// Append the next day. Dates must strictly increase.
    pub fn push_day(&mut self, slice: DaySlice) -> Result<()> {
        if let Some(back) = self.days.back() {
            if slice.date <= back.date {
                return Err(HopperError::Validation(format!(
                    "day slice {} pushed after {}",
                    slice.date, back.date
                )));
            }
        }
        for edge in &slice.edges {
            self.edge_days.entry(edge.clone()).or_default().insert(slice.date);
        }
        for (user, dst) in &slice.user_dsts {
            self.user_dsts.entry(user.clone()).or_default().insert(dst.clone());
        }
        for pair in &slice.endpoints {
            self.connectivity.entry(pair.clone()).or_default().insert(slice.date);
        }
        self.days.push_back(slice);
        Ok(())
    }

    /// Evict days before `cutoff` from the front of the window.
    pub fn drop_before(&mut self, cutoff: NaiveDate) {
        while self.days.front().map(|s| s.date < cutoff).unwrap_or(false) {
            let slice = self.days.pop_front().expect("front checked");
            for edge in &slice.edges {
                if let Some(dates) = self.edge_days.get_mut(edge) {
                    dates.remove(&slice.date);
                    if dates.is_empty() {
                        self.edge_days.remove(edge);
                    }
                }
            }
            for pair in &slice.endpoints {
                if let Some(dates) = self.connectivity.get_mut(pair) {
                    dates.remove(&slice.date);
                    if dates.is_empty() {
                        self.connectivity.remove(pair);
                    }
                }
            }
        }
        // User destination sets depend on every remaining day; rebuild.
        self.user_dsts.clear();
        for slice in &self.days {
            for (user, dst) in &slice.user_dsts {
                self.user_dsts.entry(user.clone()).or_default().insert(dst.clone());
            }
        }
    }

    /// First indexed date, if any.
    pub fn start(&self) -> Option<NaiveDate> {
        self.days.front().map(|s| s.date)
    }

    /// One past the last indexed date, if any.
    pub fn end_exclusive(&self) -> Option<NaiveDate> {
        self.days.back().map(|s| s.date.succ_opt().expect("date overflow"))
    }

    pub fn len_days(&self) -> usize {
        self.days.len()
    }

    /// Distinct days the edge occurred in the window.
    pub fn edge_frequency(&self, edge: &EdgeKey) -> u32 {
        self.edge_days.get(edge).map(|d| d.len() as u32).unwrap_or(0)
    }

    /// Destinations the user logged into during the window.
    pub fn user_destinations(&self, user: &UserName) -> &BTreeSet<MachineId> {
        static EMPTY: BTreeSet<MachineId> = BTreeSet::new();
        self.user_dsts.get(user).unwrap_or(&EMPTY)
    }

    pub fn has_visited(&self, user: &UserName, dst: &MachineId) -> bool {
        self.user_dsts.get(user).map(|d| d.contains(dst)).unwrap_or(false)
    }

    /// Distinct days some path ran from `src` all the way to `dst`.
    pub fn connectivity_days(&self, src: &MachineId, dst: &MachineId) -> u32 {
        self.connectivity
            .get(&(src.clone(), dst.clone()))
            .map(|d| d.len() as u32)
            .unwrap_or(0)
    }
}

/// Serialized form: per-day slices only; merged maps are rebuilt on load
/// (tuple- and struct-keyed maps do not survive JSON).
#[derive(Serialize, Deserialize)]
struct IndexSerde {
    days: Vec<DaySlice>,
}

impl From<IndexSerde> for HistoryIndex {
    fn from(raw: IndexSerde) -> Self {
        let mut index = HistoryIndex::new();
        for slice in raw.days {
            index.push_day(slice).expect("serialized day slices are ordered");
        }
        index
    }
}

impl From<HistoryIndex> for IndexSerde {
    fn from(index: HistoryIndex) -> IndexSerde {
        IndexSerde { days: index.days.into_iter().collect() }
    }
}
