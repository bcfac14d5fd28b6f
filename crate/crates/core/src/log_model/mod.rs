//! Domain types for login events, machines, users, and the environment config.
//!
//! Everything downstream (graphing, causality, detection) works on the types
//! defined here. Identifiers are case-folded to lowercase on ingest and
//! timestamps are normalized to whole seconds UTC, so equality is stable no
//! matter how the source system spelled things.

mod config;
mod parse;

pub use config::EnvConfig;
pub use parse::{
    parse_login_line, read_logins, read_logins_path, serialize_login, ErrorPolicy, ReadOutcome,
};

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::HopperError;
use crate::Result;

// ── Identifiers ──────────────────────────────────────────────────────────────

macro_rules! folded_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            /// Build from any spelling; folds to lowercase.
            pub fn new(raw: impl AsRef<str>) -> Self {
                Self(raw.as_ref().trim().to_lowercase())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(raw: &str) -> Self {
                Self::new(raw)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                Ok(Self::new(String::deserialize(d)?))
            }
        }
    };
}

folded_id!(
    /// A machine identifier, lowercase.
    MachineId
);
folded_id!(
    /// A username, lowercase.
    UserName
);

// ── Timestamps ────────────────────────────────────────────────────────────────

/// Parse an RFC 3339 timestamp, normalize to UTC, truncate sub-second precision.
pub fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>> {
    let dt = DateTime::parse_from_rfc3339(raw.trim())
        .map_err(|e| HopperError::Validation(format!("bad timestamp {raw:?}: {e}")))?;
    let utc = dt.with_timezone(&Utc);
    Ok(DateTime::from_timestamp(utc.timestamp(), 0).expect("in-range timestamp"))
}

/// Render a timestamp in the canonical on-disk form (`2019-03-01T17:00:04Z`).
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// The UTC calendar date a timestamp falls on. "Day" always means this.
pub fn day_of(ts: &DateTime<Utc>) -> NaiveDate {
    ts.date_naive()
}

pub(crate) mod ts_serde {
    use super::*;

    pub fn serialize<S: Serializer>(
        ts: &DateTime<Utc>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }
}

// ── Login events ─────────────────────────────────────────────────────────────

/// One successful remote login: `user`'s credentials presented from `src` to `dst`.
///
/// Self-logins (`src == dst`) are legal input but never chain into longer paths.
/// Field order doubles as the stable sort key (ts, src, dst, user).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LoginEvent {
    #[serde(with = "ts_serde")]
    pub ts: DateTime<Utc>,
    pub src: MachineId,
    pub dst: MachineId,
    pub user: UserName,
}

impl LoginEvent {
    pub fn new(ts: DateTime<Utc>, src: MachineId, dst: MachineId, user: UserName) -> Self {
        let ts = DateTime::from_timestamp(ts.timestamp(), 0).expect("in-range timestamp");
        Self { ts, src, dst, user }
    }

    /// UTC date of the login.
    pub fn day(&self) -> NaiveDate {
        day_of(&self.ts)
    }

    pub fn is_self_login(&self) -> bool {
        self.src == self.dst
    }
}

/// Sort events by the canonical key (ts, src, dst, user). Stable on ties.
pub fn sort_events(events: &mut [LoginEvent]) {
    events.sort();
}

// ── Machines ─────────────────────────────────────────────────────────────────

/// Client machines start movement paths; servers receive and relay them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MachineKind {
    Client,
    Server,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub id: MachineId,
    pub hostname: String,
    pub kind: MachineKind,
    /// Owning employee; present iff `kind == Client`.
    #[serde(default)]
    pub owner: Option<UserName>,
    pub first_seen: NaiveDate,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub is_bastion: bool,
    #[serde(default)]
    pub is_provisioning_server: bool,
    #[serde(default)]
    pub subnet: String,
    /// Free-form labels (printer, domain-controller, update-server, ...) used by filter rules.
    #[serde(default)]
    pub tags: Vec<String>,
    /// True when the machine was auto-registered from a login rather than listed in inventory.
    #[serde(default)]
    pub inferred: bool,
}

impl Machine {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t.eq_ignore_ascii_case(tag))
    }
}

// ── User accounts ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKind {
    Employee,
    Admin,
    Service,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAccount {
    pub username: UserName,
    pub kind: UserKind,
    #[serde(default)]
    pub team: String,
    pub first_seen: NaiveDate,
}

// ── Inventory ────────────────────────────────────────────────────────────────

/// Machine and user rosters. Built once (single writer), then read-only.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Inventory {
    pub machines: BTreeMap<MachineId, Machine>,
    pub users: BTreeMap<UserName, UserAccount>,
}

impl Inventory {
    /// Assemble from records, checking cross-references.
    ///
    /// Duplicates are always errors. In strict mode, a client without an
    /// owner, a server with one, or an owner that is a service account (or
    /// missing from the roster) is also an error.
    pub fn from_records(
        machines: Vec<Machine>,
        users: Vec<UserAccount>,
        strict: bool,
    ) -> Result<Self> {
        let mut inv = Inventory::default();
        for user in users {
            if inv.users.insert(user.username.clone(), user.clone()).is_some() {
                return Err(HopperError::Inventory(format!(
                    "duplicate username {}",
                    user.username
                )));
            }
        }
        for machine in machines {
            if strict {
                match (machine.kind, &machine.owner) {
                    (MachineKind::Client, None) => {
                        return Err(HopperError::Inventory(format!(
                            "client {} has no owner",
                            machine.id
                        )))
                    }
                    (MachineKind::Server, Some(_)) => {
                        return Err(HopperError::Inventory(format!(
                            "server {} has an owner",
                            machine.id
                        )))
                    }
                    _ => {}
                }
                if let Some(owner) = &machine.owner {
                    match inv.users.get(owner) {
                        Some(acct) if acct.kind == UserKind::Service => {
                            return Err(HopperError::Inventory(format!(
                                "machine {} owned by service account {owner}",
                                machine.id
                            )))
                        }
                        Some(_) => {}
                        None => {
                            return Err(HopperError::Inventory(format!(
                                "machine {} owner {owner} not in user roster",
                                machine.id
                            )))
                        }
                    }
                }
            }
            if inv.machines.insert(machine.id.clone(), machine.clone()).is_some() {
                return Err(HopperError::Inventory(format!(
                    "duplicate machine id {}",
                    machine.id
                )));
            }
        }
        Ok(inv)
    }

    /// Load machine and user rosters from JSON Lines files.
    pub fn load(
        machines_path: &std::path::Path,
        users_path: &std::path::Path,
        strict: bool,
    ) -> Result<Self> {
        let machines = read_jsonl::<Machine>(machines_path)?;
        let users = read_jsonl::<UserAccount>(users_path)?;
        Self::from_records(machines, users, strict)
    }

    /// Register machines that appear in logins but not in the roster.
    ///
    /// Unknown machines become non-bastion servers, first seen on the date of
    /// the first login referencing them, flagged `inferred`.
    pub fn register_from_logins(&mut self, events: &[LoginEvent]) {
        for event in events {
            for id in [&event.src, &event.dst] {
                if !self.machines.contains_key(id) {
                    self.machines.insert(
                        id.clone(),
                        Machine {
                            id: id.clone(),
                            hostname: id.as_str().to_string(),
                            kind: MachineKind::Server,
                            owner: None,
                            first_seen: event.day(),
                            location: String::new(),
                            is_bastion: false,
                            is_provisioning_server: false,
                            subnet: String::new(),
                            tags: Vec::new(),
                            inferred: true,
                        },
                    );
                }
            }
        }
    }

    /// Total lookup: error (not panic) when the id is absent.
    pub fn machine(&self, id: &MachineId) -> Result<&Machine> {
        self.machines
            .get(id)
            .ok_or_else(|| HopperError::Inventory(format!("unknown machine {id}")))
    }

    pub fn user(&self, name: &UserName) -> Option<&UserAccount> {
        self.users.get(name)
    }

    pub fn user_kind(&self, name: &UserName) -> Option<UserKind> {
        self.users.get(name).map(|u| u.kind)
    }

    /// Check `first_seen <= login ts` for every referenced machine.
    ///
    /// Strict mode turns violations into errors; otherwise they come back as
    /// warnings for the caller to log.
    pub fn validate_stream(&self, events: &[LoginEvent], strict: bool) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        for event in events {
            for id in [&event.src, &event.dst] {
                if let Some(machine) = self.machines.get(id) {
                    if machine.first_seen > event.day() {
                        let msg = format!(
                            "machine {id} first_seen {} is after login at {}",
                            machine.first_seen,
                            format_timestamp(&event.ts)
                        );
                        if strict {
                            return Err(HopperError::Inventory(msg));
                        }
                        warnings.push(msg);
                    }
                }
            }
        }
        Ok(warnings)
    }
}

/// Read a JSON Lines file of `T`, reporting the offending line on failure.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| HopperError::Parse {
            line: idx + 1,
            msg: format!("{e} in {}", path.display()),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Write records as JSON Lines, one compact object per line.
pub fn write_jsonl<T: Serialize>(path: &std::path::Path, records: &[T]) -> Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}
