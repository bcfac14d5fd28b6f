//! Reference path inference by brute-force backtracing.
//!
//! `naive_infer_paths` rebuilds every root-anchored causal chain for a login
//! by scanning the full log slice recursively, with none of the engine's
//! incremental state. It is deliberately slow and obvious: the streaming
//! engine is validated against it.
//!
//! The two strategies describe the same movement differently — the engine
//! emits switch-local paths (two-hop contexts plus watchlist extensions),
//! the oracle full chains back to a root — so raw path sets are not
//! comparable. `switch_records` reduces either set to its canonical form:
//! one record per credential switch, carrying the switch edge, its clarity
//! recomputed from the raw logs, and the daily-edge suffix from the hop
//! before the switch to the end of the chain. Two path sets describe the
//! same switches if and only if their record sets are equal.

use std::collections::BTreeSet;

use chrono::Duration;

use super::{
    causal_user_for_root, changepoint_is_clear, classify, compute_changepoints,
    inbound_users_from_slice, is_causal_inbound, DailyEdge, LoginPath,
};
use crate::error::HopperError;
use crate::log_model::{Inventory, LoginEvent, MachineKind};
use crate::Result;

/// Every root-anchored causal chain ending at `target`, assembled from a raw
/// log slice. Chains stop at client, bastion, and self-login roots, or when a
/// hop has no causal inbound login. Certainty is uniform across the result.
pub fn naive_infer_paths(
    target: &LoginEvent,
    all_logins: &[LoginEvent],
    inventory: &Inventory,
    window_hours: i64,
    depth_limit: usize,
) -> Result<Vec<LoginPath>> {
    let window = Duration::hours(window_hours);
    let chains = chains_ending_at(target, all_logins, inventory, window, 1, depth_limit)?;
    let certainty = 1.0 / chains.len() as f64;
    let paths = chains
        .into_iter()
        .map(|logins| {
            let causal_user = causal_user_for_root(&logins[0], inventory);
            let changepoints = compute_changepoints(&logins, inventory);
            let any_clear = changepoints.iter().any(|&i| {
                let users = inbound_users_from_slice(all_logins, &logins[i], window);
                changepoint_is_clear(&logins[i], inventory, &users)
            });
            let root_is_bastion = inventory
                .machines
                .get(&logins[0].src)
                .map(|m| m.is_bastion)
                .unwrap_or(false);
            LoginPath {
                causal_user,
                path_type: classify(changepoints.len(), any_clear),
                logins,
                changepoints,
                certainty,
                root_is_bastion,
                duplicates: 1,
            }
        })
        .collect();
    Ok(paths)
}

fn chains_ending_at(
    login: &LoginEvent,
    all: &[LoginEvent],
    inventory: &Inventory,
    window: Duration,
    depth: usize,
    depth_limit: usize,
) -> Result<Vec<Vec<LoginEvent>>> {
    let src_is_root = login.is_self_login()
        || matches!(
            inventory.machines.get(&login.src),
            Some(m) if m.is_bastion || m.kind == MachineKind::Client
        );
    if src_is_root {
        return Ok(vec![vec![login.clone()]]);
    }
    let mut candidates: Vec<&LoginEvent> = all
        .iter()
        .filter(|k| is_causal_inbound(k, login, window))
        .collect();
    candidates.sort();
    if candidates.is_empty() {
        return Ok(vec![vec![login.clone()]]);
    }
    if depth >= depth_limit {
        return Err(HopperError::DepthLimit(depth_limit));
    }
    let mut out = Vec::new();
    for k in candidates {
        for mut chain in chains_ending_at(k, all, inventory, window, depth + 1, depth_limit)? {
            chain.push(login.clone());
            out.push(chain);
        }
    }
    Ok(out)
}

/// Canonical description of one credential switch: the switch's daily edge,
/// whether it was clear (recomputed from the raw logs, so both inference
/// strategies are judged by the same rule), and the daily-edge suffix from
/// the hop before the switch to the end of the chain.
pub type SwitchRecord = (DailyEdge, bool, Vec<DailyEdge>);

/// Reduce a path set to its canonical switch records.
pub fn switch_records(
    paths: &[LoginPath],
    all_logins: &[LoginEvent],
    inventory: &Inventory,
    window_hours: i64,
) -> BTreeSet<SwitchRecord> {
    let window = Duration::hours(window_hours);
    let mut records = BTreeSet::new();
    for path in paths {
        let edges = path.daily_edges();
        for &cp in &path.changepoints {
            let users = inbound_users_from_slice(all_logins, &path.logins[cp], window);
            let clear = changepoint_is_clear(&path.logins[cp], inventory, &users);
            let suffix = edges[cp.saturating_sub(1)..].to_vec();
            records.insert((edges[cp].clone(), clear, suffix));
        }
    }
    records
}
