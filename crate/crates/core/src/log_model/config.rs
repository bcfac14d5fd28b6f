//! Environment configuration with paper-default thresholds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MachineId, UserName};
use crate::error::HopperError;
use crate::filtering::FilterRule;
use crate::Result;

/// Tunable thresholds for the whole pipeline. Defaults match the reference
/// deployment; every field can be overridden from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Maximum session length T in hours; also the causal lookback window.
    pub session_max_hours: i64,
    /// History window H in days for indexes, features, and alert memory.
    pub history_days: u32,
    /// Alert budget B: target daily volume for the anomaly-score detector.
    pub alert_budget: usize,
    /// Entities younger than this many days fall under the new-entity scenario.
    pub new_entity_days: u32,
    /// Automation mining: required rate per fully-covered day (total > rate × D).
    pub automation_rate_per_day: u32,
    /// Automation mining: required fraction of fully-covered days with activity.
    pub automation_day_fraction: f64,
    /// A non-roster username becomes a service-account candidate above this
    /// many distinct source machines (strictly greater).
    pub service_account_min_sources: usize,
    /// Trailing days during which a login leaves usable credentials on its destination.
    pub cred_cache_days: u32,
    /// Machines the targeted attack goal treats as crown jewels.
    pub high_value_machines: Vec<MachineId>,
    /// Usernames approved as service accounts (benign scenario 4).
    pub approved_service_accounts: Vec<UserName>,
    /// Optional: suppress paths whose every credential switch is admin-to-admin.
    pub suppress_admin_switches: bool,
    /// Windows-artifact filter rules applied by the cleaning stage.
    pub filter_rules: Vec<FilterRule>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            session_max_hours: 24,
            history_days: 30,
            alert_budget: 5,
            new_entity_days: 7,
            automation_rate_per_day: 24,
            automation_day_fraction: 0.5,
            service_account_min_sources: 10,
            cred_cache_days: 7,
            high_value_machines: Vec::new(),
            approved_service_accounts: Vec::new(),
            suppress_admin_switches: false,
            filter_rules: Vec::new(),
        }
    }
}

impl EnvConfig {
    /// Parse a flat `key = value` file (`#` comments allowed).
    ///
    /// List values are comma-separated; `filter_rules` takes a path (relative
    /// to the config file) to a JSONL rule file, loaded eagerly. Unknown keys
    /// and out-of-range values are errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config = EnvConfig::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HopperError::Config(format!("line {}: expected key = value", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "session_max_hours" => config.session_max_hours = parse_num(key, value)?,
                "history_days" => config.history_days = parse_num(key, value)?,
                "alert_budget" => config.alert_budget = parse_num(key, value)?,
                "new_entity_days" => config.new_entity_days = parse_num(key, value)?,
                "automation_rate_per_day" => {
                    config.automation_rate_per_day = parse_num(key, value)?
                }
                "automation_day_fraction" => {
                    config.automation_day_fraction = parse_num(key, value)?
                }
                "service_account_min_sources" => {
                    config.service_account_min_sources = parse_num(key, value)?
                }
                "cred_cache_days" => config.cred_cache_days = parse_num(key, value)?,
                "high_value_machines" => {
                    config.high_value_machines = split_list(value).map(MachineId::new).collect()
                }
                "approved_service_accounts" => {
                    config.approved_service_accounts =
                        split_list(value).map(UserName::new).collect()
                }
                "suppress_admin_switches" => {
                    config.suppress_admin_switches = parse_bool(key, value)?
                }
                "filter_rules" => {
                    let rules_path = base_dir.join(value);
                    config.filter_rules = super::read_jsonl(&rules_path)?;
                }
                other => return Err(HopperError::Config(format!("unknown key {other:?}"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.session_max_hours < 1 {
            return Err(HopperError::Config("session_max_hours must be >= 1".into()));
        }
        if self.history_days < 1 {
            return Err(HopperError::Config("history_days must be >= 1".into()));
        }
        if self.alert_budget < 1 {
            return Err(HopperError::Config("alert_budget must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.automation_day_fraction) {
            return Err(HopperError::Config(
                "automation_day_fraction must be in [0, 1]".into(),
            ));
        }
        if self.automation_rate_per_day == 0 {
            return Err(HopperError::Config("automation_rate_per_day must be > 0".into()));
        }
        Ok(())
    }

    /// Causal lookback window as a duration.
    pub fn session_window(&self) -> chrono::Duration {
        chrono::Duration::hours(self.session_max_hours)
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| HopperError::Config(format!("{key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(HopperError::Config(format!("{key}: expected bool, got {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_thresholds() {
        let config = EnvConfig::default();
        assert_eq!(config.session_max_hours, 24);
        assert_eq!(config.history_days, 30);
        assert_eq!(config.alert_budget, 5);
        assert_eq!(config.new_entity_days, 7);
        assert_eq!(config.automation_rate_per_day, 24);
        assert_eq!(config.automation_day_fraction, 0.5);
        assert_eq!(config.service_account_min_sources, 10);
        assert_eq!(config.cred_cache_days, 7);
        assert!(!config.suppress_admin_switches);
    }

    #[test]
    fn flat_file_overrides_and_lists() {
        let text = "\
# tuning
alert_budget = 9
high_value_machines = DC-01, dc-02
approved_service_accounts = svc_backup
suppress_admin_switches = true
";
        let config = EnvConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(config.alert_budget, 9);
        assert_eq!(
            config.high_value_machines,
            vec![MachineId::new("dc-01"), MachineId::new("dc-02")]
        );
        assert_eq!(config.approved_service_accounts, vec![UserName::new("svc_backup")]);
        assert!(config.suppress_admin_switches);
        assert_eq!(config.history_days, 30);
    }

    #[test]
    fn unknown_keys_and_bad_values_error() {
        assert!(EnvConfig::parse("no_such_key = 1", Path::new(".")).is_err());
        assert!(EnvConfig::parse("alert_budget = 0", Path::new(".")).is_err());
        assert!(EnvConfig::parse("automation_day_fraction = 1.5", Path::new(".")).is_err());
    }
}
