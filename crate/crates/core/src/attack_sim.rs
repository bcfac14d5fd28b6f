//! Synthetic lateral-movement attacks for evaluation.
//!
//! An attack pairs a goal with a stealth level and plays it out over the
//! real topology implied by the cleaned history: a credential can reach the
//! machines its owner actually logged into, and landing on a machine hands
//! the attacker every credential that recently authenticated there.
//!
//! * **Exploratory** — random walk over (credential, destination) choices,
//!   stopping at the first machine the victim could not reach themselves.
//! * **Aggressive** — methodically spray every credential at every machine
//!   it unlocks, stopping at 50 distinct machines or exhaustion.
//! * **Targeted** — shortest path to a machine holding elevated credentials
//!   (ones that open a configured high-value machine), then shortest path to
//!   that machine.
//!
//! Stealth levels prune candidate hops: `PriorEdge` only walks edges that
//! legitimate users have used before; `ActiveCredential` only presents
//! credentials whose owner has a live session on the source machine (which
//! makes the resulting switch Unclear); `Combined` demands both.
//!
//! Every synthesized attack is replayed through the same credential and
//! stealth rules before being returned, so emitted attacks are feasible by
//! construction; planning dead-ends surface as `Ok(None)`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::HopperError;
use crate::log_model::{
    EnvConfig, Inventory, LoginEvent, MachineId, MachineKind, UserKind, UserName,
};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackGoal {
    Exploratory,
    Aggressive,
    Targeted,
}

impl AttackGoal {
    pub const ALL: [AttackGoal; 3] =
        [AttackGoal::Exploratory, AttackGoal::Aggressive, AttackGoal::Targeted];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stealth {
    None,
    PriorEdge,
    ActiveCredential,
    Combined,
}

impl Stealth {
    pub const ALL: [Stealth; 4] =
        [Stealth::None, Stealth::PriorEdge, Stealth::ActiveCredential, Stealth::Combined];

    fn needs_prior_edge(self) -> bool {
        matches!(self, Stealth::PriorEdge | Stealth::Combined)
    }

    fn needs_active_credential(self) -> bool {
        matches!(self, Stealth::ActiveCredential | Stealth::Combined)
    }
}

/// One attack to synthesize: who is compromised, what the attacker wants,
/// and how carefully they move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub goal: AttackGoal,
    pub stealth: Stealth,
    pub victim: UserName,
    #[serde(with = "crate::log_model::ts_serde")]
    pub start: DateTime<Utc>,
}

/// A feasible attack: its logins in order, the credentials held at the end,
/// and whether the goal condition was met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAttack {
    pub scenario: AttackScenario,
    pub logins: Vec<LoginEvent>,
    pub compromised_creds: BTreeSet<UserName>,
    pub succeeded: bool,
}

impl SyntheticAttack {
    /// Does any hop present credentials other than the previous hop's (or,
    /// on the first hop, other than the foothold client's owner)?
    pub fn has_credential_switch(&self, inventory: &Inventory) -> bool {
        self.logins.iter().enumerate().any(|(i, l)| {
            if i == 0 {
                inventory
                    .machines
                    .get(&l.src)
                    .and_then(|m| m.owner.as_ref())
                    .map(|o| *o != l.user)
                    .unwrap_or(false)
            } else {
                l.user != self.logins[i - 1].user
            }
        })
    }

    pub fn destinations(&self) -> BTreeSet<MachineId> {
        self.logins.iter().map(|l| l.dst.clone()).collect()
    }
}

/// Who can reach what, read off the cleaned history: per-user destination
/// sets, the set of exact edges ever used, and time-sorted inbound logins
/// per machine for credential-caching and live-session checks.
#[derive(Debug, Clone)]
pub struct AccessModel {
    user_dsts: BTreeMap<UserName, BTreeSet<MachineId>>,
    edges: BTreeSet<(MachineId, MachineId, UserName)>,
    inbound: BTreeMap<MachineId, Vec<(DateTime<Utc>, UserName)>>,
}

impl AccessModel {
    pub fn build(history: &[LoginEvent]) -> Self {
        let mut user_dsts: BTreeMap<UserName, BTreeSet<MachineId>> = BTreeMap::new();
        let mut edges = BTreeSet::new();
        let mut inbound: BTreeMap<MachineId, Vec<(DateTime<Utc>, UserName)>> = BTreeMap::new();
        for l in history {
            user_dsts.entry(l.user.clone()).or_default().insert(l.dst.clone());
            edges.insert((l.src.clone(), l.dst.clone(), l.user.clone()));
            inbound.entry(l.dst.clone()).or_default().push((l.ts, l.user.clone()));
        }
        for logins in inbound.values_mut() {
            logins.sort();
        }
        Self { user_dsts, edges, inbound }
    }

    /// Machines this user's credentials open (their historical destinations).
    pub fn access(&self, user: &UserName) -> &BTreeSet<MachineId> {
        static EMPTY: BTreeSet<MachineId> = BTreeSet::new();
        self.user_dsts.get(user).unwrap_or(&EMPTY)
    }

    pub fn has_edge(&self, src: &MachineId, dst: &MachineId, user: &UserName) -> bool {
        self.edges.contains(&(src.clone(), dst.clone(), user.clone()))
    }

    /// Users with a login into `machine` during `[at - window, at)`.
    fn users_into(&self, machine: &MachineId, at: DateTime<Utc>, window: Duration) -> BTreeSet<UserName> {
        let start = at - window;
        self.inbound
            .get(machine)
            .map(|logins| {
                logins
                    .iter()
                    .filter(|(ts, _)| *ts >= start && *ts < at)
                    .map(|(_, u)| u.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn user_into(
        &self,
        machine: &MachineId,
        user: &UserName,
        at: DateTime<Utc>,
        window: Duration,
    ) -> bool {
        let start = at - window;
        self.inbound
            .get(machine)
            .map(|logins| {
                logins.iter().any(|(ts, u)| *ts >= start && *ts < at && u == user)
            })
            .unwrap_or(false)
    }
}

/// Credentials freshly available after landing on `login.dst`: every user
/// with a login into that machine during the trailing cache window, over
/// both the real history and the attack's own earlier logins.
pub fn accrue_credentials(
    creds: &mut BTreeSet<UserName>,
    login: &LoginEvent,
    model: &AccessModel,
    attack_so_far: &[LoginEvent],
    cred_cache_days: u32,
) {
    let window = Duration::days(i64::from(cred_cache_days));
    creds.extend(model.users_into(&login.dst, login.ts, window));
    let start = login.ts - window;
    creds.extend(
        attack_so_far
            .iter()
            .filter(|l| l.dst == login.dst && l.ts >= start && l.ts < login.ts)
            .map(|l| l.user.clone()),
    );
    creds.insert(login.user.clone());
}

/// Is presenting `cred` on a `src → dst` hop at time `at` allowed under the
/// stealth level? Owners count as live on their own machines.
#[allow(clippy::too_many_arguments)]
fn stealth_ok(
    stealth: Stealth,
    src: &MachineId,
    dst: &MachineId,
    cred: &UserName,
    at: DateTime<Utc>,
    model: &AccessModel,
    inventory: &Inventory,
    attack_so_far: &[LoginEvent],
    window: Duration,
) -> bool {
    if stealth.needs_prior_edge() && !model.has_edge(src, dst, cred) {
        return false;
    }
    if stealth.needs_active_credential() {
        let owns_src = inventory
            .machines
            .get(src)
            .and_then(|m| m.owner.as_ref())
            .map(|o| o == cred)
            .unwrap_or(false);
        let start = at - window;
        let live_in_history = model.user_into(src, cred, at, window);
        let live_in_attack = attack_so_far
            .iter()
            .any(|l| l.dst == *src && l.user == *cred && l.ts >= start && l.ts < at);
        if !owns_src && !live_in_history && !live_in_attack {
            return false;
        }
    }
    true
}

/// In-flight attack bookkeeping shared by the three planners.
struct Walk<'a> {
    model: &'a AccessModel,
    inventory: &'a Inventory,
    stealth: Stealth,
    window: Duration,
    cache_days: u32,
    position: MachineId,
    now: DateTime<Utc>,
    creds: BTreeSet<UserName>,
    cred_queue: Vec<UserName>,
    logins: Vec<LoginEvent>,
    rng: ChaCha8Rng,
}

impl<'a> Walk<'a> {
    fn new(
        model: &'a AccessModel,
        inventory: &'a Inventory,
        scenario: &AttackScenario,
        config: &EnvConfig,
        foothold: MachineId,
        seed: u64,
    ) -> Self {
        Self {
            model,
            inventory,
            stealth: scenario.stealth,
            window: config.session_window(),
            cache_days: config.cred_cache_days,
            position: foothold,
            now: scenario.start,
            creds: BTreeSet::from([scenario.victim.clone()]),
            cred_queue: vec![scenario.victim.clone()],
            logins: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn can_hop(&self, dst: &MachineId, cred: &UserName) -> bool {
        *dst != self.position
            && self.model.access(cred).contains(dst)
            && stealth_ok(
                self.stealth,
                &self.position,
                dst,
                cred,
                self.now,
                self.model,
                self.inventory,
                &self.logins,
                self.window,
            )
    }

    /// Emit a login to `dst` with `cred`, advance the clock by a random
    /// 1–60 minute gap afterwards, move there, and harvest credentials.
    fn hop(&mut self, dst: MachineId, cred: UserName) {
        let login = LoginEvent::new(self.now, self.position.clone(), dst.clone(), cred);
        let mut harvested = self.creds.clone();
        accrue_credentials(
            &mut harvested,
            &login,
            self.model,
            &self.logins[..],
            self.cache_days,
        );
        for cred in harvested.difference(&self.creds) {
            self.cred_queue.push(cred.clone());
        }
        self.creds = harvested;
        self.logins.push(login);
        self.position = dst;
        self.now = self.now + Duration::seconds(self.rng.gen_range(60..=3600));
    }
}

/// Synthesize one attack. `Ok(None)` means the scenario has no feasible
/// constraint-satisfying path from this victim.
pub fn synthesize(
    scenario: &AttackScenario,
    history: &[LoginEvent],
    inventory: &Inventory,
    config: &EnvConfig,
    seed: u64,
) -> Result<Option<SyntheticAttack>> {
    let model = AccessModel::build(history);
    synthesize_with_model(scenario, &model, inventory, config, seed)
}

/// `synthesize` with a prebuilt access model, for callers planning many
/// attacks over the same history.
pub fn synthesize_with_model(
    scenario: &AttackScenario,
    model: &AccessModel,
    inventory: &Inventory,
    config: &EnvConfig,
    seed: u64,
) -> Result<Option<SyntheticAttack>> {
    if inventory.user(&scenario.victim).is_none() {
        return Err(HopperError::Config(format!("unknown victim {}", scenario.victim)));
    }
    let foothold = victim_client(inventory, &scenario.victim).ok_or_else(|| {
        HopperError::Config(format!("victim {} owns no client machine", scenario.victim))
    })?;
    if scenario.goal == AttackGoal::Targeted {
        if config.high_value_machines.is_empty() {
            return Err(HopperError::Config(
                "targeted attacks need high_value_machines in the config".into(),
            ));
        }
        for m in &config.high_value_machines {
            if !inventory.machines.contains_key(m) {
                return Err(HopperError::Config(format!("unknown high-value machine {m}")));
            }
        }
    }

    let mut walk = Walk::new(model, inventory, scenario, config, foothold, seed);
    let succeeded = match scenario.goal {
        AttackGoal::Exploratory => plan_exploratory(&mut walk, &scenario.victim),
        AttackGoal::Aggressive => plan_aggressive(&mut walk),
        AttackGoal::Targeted => plan_targeted(&mut walk, &config.high_value_machines),
    };
    if !succeeded || walk.logins.is_empty() {
        return Ok(None);
    }
    let attack = SyntheticAttack {
        scenario: scenario.clone(),
        logins: walk.logins,
        compromised_creds: walk.creds,
        succeeded: true,
    };
    // Planning approximates landing times; replay with the real timestamps
    // is the source of truth for feasibility.
    if !replay_validates(&attack, model, inventory, config) {
        return Ok(None);
    }
    Ok(Some(attack))
}

/// The victim's foothold: the lexicographically first client they own.
pub fn victim_client(inventory: &Inventory, victim: &UserName) -> Option<MachineId> {
    inventory
        .machines
        .values()
        .filter(|m| m.kind == MachineKind::Client && m.owner.as_ref() == Some(victim))
        .map(|m| m.id.clone())
        .next()
}

/// Employees owning at least one client and appearing in the history:
/// the population victims are drawn from.
pub fn candidate_victims(history: &[LoginEvent], inventory: &Inventory) -> Vec<UserName> {
    let seen: BTreeSet<&UserName> = history.iter().map(|l| &l.user).collect();
    inventory
        .users
        .values()
        .filter(|u| u.kind == UserKind::Employee && seen.contains(&u.username))
        .filter(|u| victim_client(inventory, &u.username).is_some())
        .map(|u| u.username.clone())
        .collect()
}

/// Random walk over stealthy (credential, destination) pairs; stop on the
/// first destination outside the victim's own reach.
fn plan_exploratory(walk: &mut Walk, victim: &UserName) -> bool {
    let victim_reach = walk.model.access(victim).clone();
    let mut visited: BTreeSet<MachineId> = BTreeSet::from([walk.position.clone()]);
    loop {
        let candidates: Vec<(UserName, MachineId)> = walk
            .creds
            .iter()
            .flat_map(|cred| {
                walk.model
                    .access(cred)
                    .iter()
                    .filter(|dst| !visited.contains(*dst) && walk.can_hop(dst, cred))
                    .map(|dst| (cred.clone(), dst.clone()))
                    .collect::<Vec<_>>()
            })
            .collect();
        if candidates.is_empty() {
            return false;
        }
        let (cred, dst) = candidates[walk.rng.gen_range(0..candidates.len())].clone();
        let outside = !victim_reach.contains(&dst);
        visited.insert(dst.clone());
        walk.hop(dst, cred);
        if outside {
            return true;
        }
    }
}

/// Spray every credential at every machine it opens, harvesting as it goes;
/// stop at 50 distinct machines or when the worklist is exhausted.
fn plan_aggressive(walk: &mut Walk) -> bool {
    const MACHINE_CAP: usize = 50;
    let mut visited: BTreeSet<MachineId> = BTreeSet::from([walk.position.clone()]);
    let mut accessed = 0usize;
    let mut next_cred = 0usize;
    while next_cred < walk.cred_queue.len() && accessed < MACHINE_CAP {
        let cred = walk.cred_queue[next_cred].clone();
        next_cred += 1;
        for dst in walk.model.access(&cred).clone() {
            if accessed >= MACHINE_CAP {
                break;
            }
            if visited.contains(&dst) || !walk.can_hop(&dst, &cred) {
                continue;
            }
            visited.insert(dst.clone());
            walk.hop(dst, cred.clone());
            accessed += 1;
        }
    }
    accessed > 0
}

/// Shortest stealthy path (hop count; lexicographic ties) to a machine where
/// an elevated credential can be harvested, then shortest path from there to
/// the high-value machine it opens.
fn plan_targeted(walk: &mut Walk, high_value: &[MachineId]) -> bool {
    let hv: BTreeSet<MachineId> = high_value.iter().cloned().collect();
    let elevated = |cred: &UserName, model: &AccessModel| -> bool {
        model.access(cred).iter().any(|m| hv.contains(m))
    };

    // Phase 1: reach an elevated credential (possibly already in hand).
    if !walk.creds.iter().any(|c| elevated(c, walk.model)) {
        let Some(hops) = bfs(walk, |_, creds, model| {
            creds.iter().any(|c| elevated(c, model))
        }) else {
            return false;
        };
        for (dst, cred) in hops {
            walk.hop(dst, cred);
        }
        if !walk.creds.iter().any(|c| elevated(c, walk.model)) {
            return false;
        }
    }

    // Phase 2: ride it to the high-value machine.
    if hv.contains(&walk.position) {
        return true;
    }
    let Some(hops) = bfs(walk, |machine, _, _| hv.contains(machine)) else {
        return false;
    };
    for (dst, cred) in hops {
        walk.hop(dst, cred);
    }
    hv.contains(&walk.position)
}

/// Level-order search from the walk's current position. Each tree node
/// carries the credentials accumulated along its path; neighbor expansion
/// follows the same reachability and stealth rules as real hops, evaluated
/// at the walk's current clock. Returns the (destination, credential) hops
/// of the shortest path to a goal node, preferring lexicographically
/// smaller machines among same-depth goals.
fn bfs(
    walk: &Walk,
    is_goal: impl Fn(&MachineId, &BTreeSet<UserName>, &AccessModel) -> bool,
) -> Option<Vec<(MachineId, UserName)>> {
    struct Node {
        machine: MachineId,
        creds: BTreeSet<UserName>,
        parent: Option<(usize, UserName)>,
    }
    // Start from exactly the credentials in hand: harvesting happens on
    // landings, and the walk is already standing here.
    if is_goal(&walk.position, &walk.creds, walk.model) {
        return Some(Vec::new());
    }
    let mut nodes =
        vec![Node { machine: walk.position.clone(), creds: walk.creds.clone(), parent: None }];
    let mut seen: BTreeSet<MachineId> = BTreeSet::from([walk.position.clone()]);
    let mut frontier: VecDeque<usize> = VecDeque::from([0]);

    while !frontier.is_empty() {
        let mut next_frontier: Vec<usize> = Vec::new();
        let mut goals: Vec<usize> = Vec::new();
        for &idx in &frontier {
            let (machine, creds) = (nodes[idx].machine.clone(), nodes[idx].creds.clone());
            for cred in creds.iter() {
                for dst in walk.model.access(cred) {
                    if seen.contains(dst) || *dst == machine {
                        continue;
                    }
                    if !stealth_ok(
                        walk.stealth,
                        &machine,
                        dst,
                        cred,
                        walk.now,
                        walk.model,
                        walk.inventory,
                        &walk.logins,
                        walk.window,
                    ) {
                        continue;
                    }
                    seen.insert(dst.clone());
                    let mut dst_creds = creds.clone();
                    dst_creds.insert(cred.clone());
                    dst_creds.extend(walk.model.users_into(
                        dst,
                        walk.now,
                        Duration::days(i64::from(walk.cache_days)),
                    ));
                    nodes.push(Node {
                        machine: dst.clone(),
                        creds: dst_creds,
                        parent: Some((idx, cred.clone())),
                    });
                    let new_idx = nodes.len() - 1;
                    if is_goal(dst, &nodes[new_idx].creds, walk.model) {
                        goals.push(new_idx);
                    }
                    next_frontier.push(new_idx);
                }
            }
        }
        if let Some(&goal) = goals
            .iter()
            .min_by(|&&a, &&b| nodes[a].machine.cmp(&nodes[b].machine))
        {
            let mut hops = Vec::new();
            let mut cursor = goal;
            while let Some((parent, cred)) = nodes[cursor].parent.clone() {
                hops.push((nodes[cursor].machine.clone(), cred));
                cursor = parent;
            }
            hops.reverse();
            return Some(hops);
        }
        frontier = next_frontier.into_iter().collect();
    }
    None
}

/// Re-run an attack's logins through the credential-accrual and stealth
/// rules from scratch. True iff every hop was feasible when it happened.
pub fn replay_validates(
    attack: &SyntheticAttack,
    model: &AccessModel,
    inventory: &Inventory,
    config: &EnvConfig,
) -> bool {
    let Some(foothold) = victim_client(inventory, &attack.scenario.victim) else {
        return false;
    };
    if attack.logins.is_empty() || attack.logins[0].src != foothold {
        return false;
    }
    let window = config.session_window();
    let mut creds = BTreeSet::from([attack.scenario.victim.clone()]);
    let mut position = foothold;
    for (i, login) in attack.logins.iter().enumerate() {
        if login.src != position || !creds.contains(&login.user) {
            return false;
        }
        if !model.access(&login.user).contains(&login.dst) {
            return false;
        }
        if !stealth_ok(
            attack.scenario.stealth,
            &login.src,
            &login.dst,
            &login.user,
            login.ts,
            model,
            inventory,
            &attack.logins[..i],
            window,
        ) {
            return false;
        }
        accrue_credentials(&mut creds, login, model, &attack.logins[..i], config.cred_cache_days);
        position = login.dst.clone();
    }
    true
}

/// Merge attack logins into an evaluation stream in canonical time order.
/// Attack timestamps must fall inside the stream's span.
pub fn inject(attack: &SyntheticAttack, stream: &[LoginEvent]) -> Result<Vec<LoginEvent>> {
    if attack.logins.is_empty() {
        return Ok(stream.to_vec());
    }
    let (first, last) = match (stream.first(), stream.last()) {
        (Some(f), Some(l)) => (f.ts, l.ts),
        _ => {
            return Err(HopperError::Validation(
                "cannot inject into an empty stream".into(),
            ))
        }
    };
    for l in &attack.logins {
        if l.ts < first || l.ts > last {
            return Err(HopperError::Validation(format!(
                "attack login at {} outside stream range {first}..{last}",
                l.ts
            )));
        }
    }
    let mut merged = stream.to_vec();
    merged.extend(attack.logins.iter().cloned());
    merged.sort();
    Ok(merged)
}
