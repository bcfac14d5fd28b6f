//! Deterministic synthetic-enterprise corpus for desk-scale evaluation.
//!
//! The generator models an organization with enough texture for every stage
//! of the pipeline to do real work:
//!
//! * employees in small working groups, each with a personal client, a group
//!   hub server, and shared group servers visited at Zipf-decaying rates;
//! * same-day client→hub→server chains (the ambiguous fan-in the causality
//!   engine must attribute) plus occasional visits to brand-new destinations;
//! * a company-wide wiki server everyone touches — and that administrators
//!   maintain, leaving live admin sessions an attacker can ride;
//! * administrators working through dedicated gateways into an ops zone and
//!   the domain controllers (suppressed as routine admin-to-admin movement);
//! * headless automation loud enough for the miner to find, an approved
//!   low-rate deploy account, a provisioning flow, a bastion-fronted legacy
//!   host, and printer/update/ticket noise for the filter rules;
//! * late-arriving machines and one late hire to exercise new-entity pruning.
//!
//! Everything is drawn from one seeded RNG, so a given `CorpusParams` always
//! yields byte-identical logins and inventory.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Days, NaiveDate, NaiveTime, Utc};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::HopperError;
use crate::filtering::{FilterRule, RosterKind};
use crate::log_model::{
    write_jsonl, EnvConfig, Inventory, LoginEvent, Machine, MachineId, MachineKind, UserAccount,
    UserKind, UserName,
};
use crate::Result;

/// Shape of the generated organization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub seed: u64,
    /// Total accounts: employees plus ADMIN_COUNT admins and SERVICE_COUNT
    /// service accounts.
    pub users: usize,
    /// Total machines: one client per person, one imaging console, and the
    /// server estate (group servers plus the fixed shared infrastructure).
    pub machines: usize,
    pub days: u32,
    pub start: NaiveDate,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            seed: 7,
            users: 200,
            machines: 300,
            days: 90,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
        }
    }
}

/// A generated environment: roster, machines, raw logins, and the matching
/// pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub params: CorpusParams,
    pub inventory: Inventory,
    pub logins: Vec<LoginEvent>,
    pub config: EnvConfig,
}

const ADMIN_COUNT: usize = 10;
const SERVICE_COUNT: usize = 8;
/// Employees per working group (last groups absorb the remainder). Small on
/// purpose: group servers then keep in-degrees near the realistic ≤10 band.
const GROUP_TARGET: usize = 7;
/// One employee in this many never signs in over the whole horizon: accounts
/// on leave or between assignments, with their clients racked but idle. Real
/// fleets are never 100% warm, and coverage-based pattern mining has to cope
/// with machines and people that exist in inventory yet produce no traffic.
const DORMANT_EVERY: usize = 8;
const COMMONS_PER_GROUP: usize = 2;
/// wiki + 3 gateways + 2 domain controllers + 4 ops + prov server + 4
/// printers + update server + bastion + legacy + 2 late servers + 3
/// automation hosts.
const FIXED_SERVERS: usize = 23;

// Per-employee, per-day behavior rates.
const P_HUB: f64 = 0.85;
/// Zipf-style decay over the group's shared servers, by personal rank.
const P_COMMONS: [f64; 2] = [0.5, 0.3];
const P_WIKI: f64 = 0.05;
/// Same-day hub→server chain into the member's habitual chain targets.
const P_CHAIN: f64 = 0.15;
/// Chain whose second hop lands somewhere the group never goes.
const P_CHAIN_NOVEL: f64 = 0.0008;
/// Direct visit to another group's server (one hop, own credentials).
const P_VISIT_NOVEL: f64 = 0.004;
const P_PRINTER: f64 = 0.08;
const P_UPDATE: f64 = 0.05;
/// Ticket noise against the domain controllers, dropped by a filter rule.
const P_DC_TICKET: f64 = 0.25;
/// Logging in from a groupmate's client (to the user's own hub).
const P_BORROW: f64 = 0.002;

// Remote-ops subgroup (bastion users).
const REMOTE_OPS: usize = 5;
const P_REMOTE_BASTION: f64 = 0.3;
const P_BASTION_LEGACY: f64 = 0.8;
/// The two senior remote-ops share a workstation now and then.
const P_OPS_PAD: f64 = 0.25;

// Administrator behavior.
const ADMIN_OPS_TOUCHES: usize = 2;
const P_ADMIN_SECOND_GW: f64 = 0.5;
const P_ADMIN_OPS_DC: f64 = 0.25;
const P_ADMIN_WIKI: f64 = 0.3;
/// After a wiki maintenance session, the one admin who owns directory sync
/// (adm-0) usually pushes the refreshed config from the wiki host to the
/// primary DC. A single owner and a single target keep the hop recurring but
/// far from daily — real and benign, yet never frequent enough to look like
/// background noise.
const P_WIKI_DC_SYNC: f64 = 0.5;
const P_ADMIN_DC: f64 = 0.3;

// Headless automation (mined and filtered) and the approved deploy account.
const BACKUP_RATE: u32 = 28;
const BACKUP_TARGETS: usize = 8;
const MONITOR_RATE: u32 = 26;
const MONITOR_TARGETS: usize = 10;

/// Day of the corpus on which the late hire's account first appears.
const JOINER_DAY: u64 = 40;
/// Day the late hire's own client arrives (loaner used until then).
const JOINER_CLIENT_DAY: u64 = 47;
/// Commissioning day for the two late servers.
const NEW_SERVER_DAY: u64 = 45;
/// Late-entity storylines only run when the corpus is long enough for their
/// settling period to matter.
const LATE_ENTITY_MIN_DAYS: u32 = 60;

struct Group {
    hub: MachineId,
    commons: Vec<MachineId>,
    members: Vec<UserName>,
}

struct Population {
    groups: Vec<Group>,
    admins: Vec<UserName>,
    gateways: Vec<MachineId>,
    dcs: Vec<MachineId>,
    ops: Vec<MachineId>,
    printers: Vec<MachineId>,
    spares: Vec<MachineId>,
    wiki: MachineId,
    update: MachineId,
    bastion: MachineId,
    legacy: MachineId,
    prov: MachineId,
    console: MachineId,
    auto_hosts: Vec<MachineId>,
    new_servers: Vec<MachineId>,
    late_entities: bool,
}

fn client_of(user: &UserName) -> MachineId {
    MachineId::new(format!("c-{}", user.as_str()))
}

fn group_location(g: usize, groups: usize) -> (&'static str, &'static str) {
    if g + 1 == groups && groups > 1 {
        ("offsite", "corp-vpn")
    } else if g % 2 == 0 {
        ("office-east", "corp-east")
    } else {
        ("office-west", "corp-west")
    }
}

fn server_location(g: usize) -> (&'static str, &'static str) {
    if g % 2 == 0 {
        ("server-east", "prod-east")
    } else {
        ("server-west", "prod-west")
    }
}

fn machine(
    id: &MachineId,
    kind: MachineKind,
    owner: Option<&UserName>,
    first_seen: NaiveDate,
    location: &str,
    subnet: &str,
) -> Machine {
    Machine {
        id: id.clone(),
        hostname: id.as_str().to_string(),
        kind,
        owner: owner.cloned(),
        first_seen,
        location: location.to_string(),
        is_bastion: false,
        is_provisioning_server: false,
        subnet: subnet.to_string(),
        tags: Vec::new(),
        inferred: false,
    }
}

fn at(date: NaiveDate, secs: u32) -> DateTime<Utc> {
    let time = NaiveTime::from_num_seconds_from_midnight_opt(secs.min(86_399), 0)
        .expect("seconds within a day");
    date.and_time(time).and_utc()
}

/// Build the corpus for `params`. Deterministic in the parameters.
pub fn generate(params: &CorpusParams) -> Result<Corpus> {
    let reserved = ADMIN_COUNT + SERVICE_COUNT;
    if params.users < reserved + GROUP_TARGET {
        return Err(HopperError::Config(format!(
            "corpus needs at least {} users, got {}",
            reserved + GROUP_TARGET,
            params.users
        )));
    }
    if params.days < 2 {
        return Err(HopperError::Config("corpus needs at least 2 days".into()));
    }
    let employees = params.users - ADMIN_COUNT - SERVICE_COUNT;
    let groups = employees / GROUP_TARGET;
    let clients = employees + ADMIN_COUNT + 1; // +1 imaging console
    let group_servers = groups * (1 + COMMONS_PER_GROUP);
    let needed = clients + group_servers + FIXED_SERVERS;
    if params.machines < needed {
        return Err(HopperError::Config(format!(
            "corpus needs at least {needed} machines for {} users, got {}",
            params.users, params.machines
        )));
    }
    let spares = params.machines - needed;
    let late_entities = params.days >= LATE_ENTITY_MIN_DAYS;

    let old = params.start - Days::new(400);
    let mut users: Vec<UserAccount> = Vec::new();
    let mut machines: Vec<Machine> = Vec::new();

    // Working groups and their people.
    let mut group_list: Vec<Group> = Vec::new();
    let mut next_emp = 0usize;
    for g in 0..groups {
        let size = employees / groups + usize::from(g < employees % groups);
        let team = format!("grp-{g:02}");
        let (office, corp_net) = group_location(g, groups);
        let (room, prod_net) = server_location(g);
        let mut members = Vec::new();
        for _ in 0..size {
            let name = UserName::new(format!("emp-{next_emp:03}"));
            next_emp += 1;
            let joiner = late_entities && next_emp == employees;
            let first_seen =
                if joiner { params.start + Days::new(JOINER_DAY) } else { old };
            users.push(UserAccount {
                username: name.clone(),
                kind: UserKind::Employee,
                team: team.clone(),
                first_seen,
            });
            let client_first = if joiner {
                params.start + Days::new(JOINER_CLIENT_DAY)
            } else {
                old
            };
            machines.push(machine(
                &client_of(&name),
                MachineKind::Client,
                Some(&name),
                client_first,
                office,
                corp_net,
            ));
            members.push(name);
        }
        let hub = MachineId::new(format!("hub-{g:02}"));
        machines.push(machine(&hub, MachineKind::Server, None, old, room, prod_net));
        let mut commons = Vec::new();
        for k in 0..COMMONS_PER_GROUP {
            let id = MachineId::new(format!("app-{g:02}-{k}"));
            machines.push(machine(&id, MachineKind::Server, None, old, room, prod_net));
            commons.push(id);
        }
        group_list.push(Group { hub, commons, members });
    }

    // Administrators and service accounts.
    let mut admins = Vec::new();
    for a in 0..ADMIN_COUNT {
        let name = UserName::new(format!("adm-{a}"));
        users.push(UserAccount {
            username: name.clone(),
            kind: UserKind::Admin,
            team: "infra-ops".into(),
            first_seen: old,
        });
        machines.push(machine(
            &client_of(&name),
            MachineKind::Client,
            Some(&name),
            old,
            "office-east",
            "corp-east",
        ));
        admins.push(name);
    }
    for svc in
        ["svc-backup", "svc-monitor", "svc-deploy", "svc-imaging", "svc-ldap", "svc-ci", "svc-metrics", "svc-cron"]
    {
        users.push(UserAccount {
            username: UserName::new(svc),
            kind: UserKind::Service,
            team: "automation".into(),
            first_seen: old,
        });
    }

    // Shared infrastructure.
    let wiki = MachineId::new("wiki-0");
    machines.push(machine(&wiki, MachineKind::Server, None, old, "server-east", "prod-east"));
    let gateways: Vec<MachineId> =
        (0..3).map(|k| MachineId::new(format!("gw-{k}"))).collect();
    for gw in &gateways {
        machines.push(machine(gw, MachineKind::Server, None, old, "server-east", "admin-net"));
    }
    let dcs: Vec<MachineId> = (0..2).map(|k| MachineId::new(format!("dc-{k}"))).collect();
    for (k, dc) in dcs.iter().enumerate() {
        let mut m = machine(
            dc,
            MachineKind::Server,
            None,
            old,
            if k == 0 { "server-east" } else { "server-west" },
            "admin-net",
        );
        m.tags = vec!["domain-controller".into()];
        machines.push(m);
    }
    let ops: Vec<MachineId> = (0..4).map(|k| MachineId::new(format!("ops-{k}"))).collect();
    for (k, id) in ops.iter().enumerate() {
        let (room, net) = server_location(k);
        machines.push(machine(id, MachineKind::Server, None, old, room, net));
    }
    let prov = MachineId::new("prov-0");
    let mut prov_machine =
        machine(&prov, MachineKind::Server, None, old, "server-east", "prov-net");
    prov_machine.is_provisioning_server = true;
    machines.push(prov_machine);
    let console = MachineId::new("prov-console");
    machines.push(machine(
        &console,
        MachineKind::Client,
        Some(&admins[0]),
        old,
        "server-east",
        "prov-net",
    ));
    let printers: Vec<MachineId> =
        (0..4).map(|k| MachineId::new(format!("print-{k}"))).collect();
    for (k, id) in printers.iter().enumerate() {
        let mut m = machine(
            id,
            MachineKind::Server,
            None,
            old,
            if k % 2 == 0 { "office-east" } else { "office-west" },
            if k % 2 == 0 { "corp-east" } else { "corp-west" },
        );
        m.tags = vec!["printer".into()];
        machines.push(m);
    }
    let update = MachineId::new("update-0");
    let mut update_machine =
        machine(&update, MachineKind::Server, None, old, "server-east", "prod-east");
    update_machine.tags = vec!["update-server".into()];
    machines.push(update_machine);
    let bastion = MachineId::new("bastion-0");
    let mut bastion_machine =
        machine(&bastion, MachineKind::Server, None, old, "server-east", "dmz");
    bastion_machine.is_bastion = true;
    machines.push(bastion_machine);
    let legacy = MachineId::new("legacy-0");
    machines.push(machine(&legacy, MachineKind::Server, None, old, "server-west", "prod-west"));
    let auto_hosts: Vec<MachineId> =
        (0..3).map(|k| MachineId::new(format!("auto-{k}"))).collect();
    for id in &auto_hosts {
        machines.push(machine(id, MachineKind::Server, None, old, "server-east", "prod-east"));
    }
    let new_servers: Vec<MachineId> =
        (0..2).map(|k| MachineId::new(format!("srv-new-{k}"))).collect();
    for (k, id) in new_servers.iter().enumerate() {
        let first = if late_entities {
            params.start + Days::new(NEW_SERVER_DAY)
        } else {
            old
        };
        let (room, net) = server_location(k);
        machines.push(machine(id, MachineKind::Server, None, first, room, net));
    }
    let spare_ids: Vec<MachineId> =
        (0..spares).map(|k| MachineId::new(format!("spare-{k}"))).collect();
    for id in &spare_ids {
        machines.push(machine(id, MachineKind::Server, None, old, "server-west", "prod-west"));
    }

    let inventory = Inventory::from_records(machines, users, true)?;
    let population = Population {
        groups: group_list,
        admins,
        gateways,
        dcs,
        ops,
        printers,
        spares: spare_ids,
        wiki,
        update,
        bastion,
        legacy,
        prov,
        console,
        auto_hosts,
        new_servers,
        late_entities,
    };

    let config = corpus_config(&population);
    let logins = generate_logins(params, &population);
    Ok(Corpus { params: params.clone(), inventory, logins, config })
}

/// Pipeline configuration matched to the generated environment.
fn corpus_config(pop: &Population) -> EnvConfig {
    EnvConfig {
        high_value_machines: pop.dcs.clone(),
        approved_service_accounts: vec![
            UserName::new("svc-deploy"),
            UserName::new("svc-imaging"),
        ],
        // Administrators constantly hop between shared gateways, so
        // admin-to-admin switches are routine here, as in any shop with a
        // dedicated ops team.
        suppress_admin_switches: true,
        filter_rules: vec![
            FilterRule {
                name: "printer-spool".into(),
                dst_tag: Some("printer".into()),
                user_kind_is: None,
                user_kind_not: None,
                src_subnet: None,
            },
            FilterRule {
                name: "update-checkin".into(),
                dst_tag: Some("update-server".into()),
                user_kind_is: None,
                user_kind_not: None,
                src_subnet: None,
            },
            FilterRule {
                name: "dc-ticket".into(),
                dst_tag: Some("domain-controller".into()),
                user_kind_is: None,
                user_kind_not: Some(RosterKind::Admin),
                src_subnet: None,
            },
        ],
        ..EnvConfig::default()
    }
}

fn generate_logins(params: &CorpusParams, pop: &Population) -> Vec<LoginEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out: Vec<LoginEvent> = Vec::new();
    let joiner: Option<&UserName> =
        if pop.late_entities { pop.groups.last().and_then(|g| g.members.last()) } else { None };
    // Every DORMANT_EVERY-th employee (by global roster position) never signs
    // in; their accounts and clients stay in inventory regardless. Offset 5
    // spreads the idle slots mid-group, and the late hire keeps their
    // storyline instead of going dormant.
    let dormant: BTreeSet<&UserName> = pop
        .groups
        .iter()
        .flat_map(|g| g.members.iter())
        .enumerate()
        .filter(|(i, user)| i % DORMANT_EVERY == 5 && joiner != Some(*user))
        .map(|(_, user)| user)
        .collect();

    let emit = |out: &mut Vec<LoginEvent>, date, secs, src: &MachineId, dst: &MachineId, user: &UserName| {
        out.push(LoginEvent::new(at(date, secs), src.clone(), dst.clone(), user.clone()));
    };

    for day in 0..u64::from(params.days) {
        let date = params.start + Days::new(day);
        let work = |rng: &mut ChaCha8Rng| rng.gen_range(8 * 3600..20 * 3600u32);

        // Employees.
        for (g, group) in pop.groups.iter().enumerate() {
            for (idx, user) in group.members.iter().enumerate() {
                if joiner == Some(user) {
                    continue; // handled by the late-hire storyline below
                }
                if dormant.contains(user) {
                    continue;
                }
                let client = client_of(user);
                let mut hub_secs: Option<u32> = None;
                if rng.gen_bool(P_HUB) {
                    let t = work(&mut rng);
                    emit(&mut out, date, t, &client, &group.hub, user);
                    hub_secs = Some(t);
                }
                // Shared group servers at personally-rotated Zipf rates.
                for (rank, p) in P_COMMONS.iter().enumerate() {
                    let target = &group.commons[(idx + rank) % COMMONS_PER_GROUP];
                    if rng.gen_bool(*p) {
                        emit(&mut out, date, work(&mut rng), &client, target, user);
                    }
                }
                if rng.gen_bool(P_WIKI) {
                    emit(&mut out, date, work(&mut rng), &client, &pop.wiki, user);
                }
                // Same-day chain through the hub into the member's habitual
                // chain set: everyone works the primary shared server, a
                // third also chain into the secondary one.
                if rng.gen_bool(P_CHAIN) {
                    let t0 = hub_secs.unwrap_or_else(|| {
                        let t = work(&mut rng);
                        emit(&mut out, date, t, &client, &group.hub, user);
                        t
                    });
                    let habit = 1 + usize::from(idx % 3 == 0);
                    let target = &group.commons
                        [(idx + rng.gen_range(0..habit)) % COMMONS_PER_GROUP];
                    emit(&mut out, date, t0 + rng.gen_range(300..2400), &group.hub, target, user);
                }
                // Rare chain to somewhere the group has no business being.
                if rng.gen_bool(P_CHAIN_NOVEL) && pop.groups.len() > 1 {
                    let t0 = hub_secs.unwrap_or_else(|| {
                        let t = work(&mut rng);
                        emit(&mut out, date, t, &client, &group.hub, user);
                        t
                    });
                    let other = pick_other_group(&mut rng, pop, g);
                    let target = &pop.groups[other].commons
                        [rng.gen_range(0..COMMONS_PER_GROUP)];
                    emit(&mut out, date, t0 + rng.gen_range(300..2400), &group.hub, target, user);
                }
                // One-hop curiosity visit (own credentials; benign for the
                // path detector, rare-edge fodder for the baseline).
                if rng.gen_bool(P_VISIT_NOVEL) && pop.groups.len() > 1 {
                    let other = pick_other_group(&mut rng, pop, g);
                    let target = &pop.groups[other].commons
                        [rng.gen_range(0..COMMONS_PER_GROUP)];
                    emit(&mut out, date, work(&mut rng), &client, target, user);
                }
                if rng.gen_bool(P_PRINTER) {
                    let p = &pop.printers[rng.gen_range(0..pop.printers.len())];
                    emit(&mut out, date, work(&mut rng), &client, p, user);
                }
                if rng.gen_bool(P_UPDATE) {
                    emit(&mut out, date, work(&mut rng), &client, &pop.update, user);
                }
                if rng.gen_bool(P_DC_TICKET) {
                    let dc = &pop.dcs[rng.gen_range(0..pop.dcs.len())];
                    emit(&mut out, date, work(&mut rng), &client, dc, user);
                }
                if rng.gen_bool(P_BORROW) && group.members.len() > 1 {
                    // Borrow a seated colleague's workstation. Dormant
                    // colleagues' machines are powered off, and the late
                    // hire's client may not exist yet, so neither can lend.
                    let lenders: Vec<&UserName> = group
                        .members
                        .iter()
                        .enumerate()
                        .filter(|(k, u)| {
                            *k != idx && !dormant.contains(*u) && joiner != Some(*u)
                        })
                        .map(|(_, u)| u)
                        .collect();
                    if !lenders.is_empty() {
                        let lender = client_of(lenders[rng.gen_range(0..lenders.len())]);
                        emit(&mut out, date, work(&mut rng), &lender, &group.hub, user);
                    }
                }
            }
        }

        // Late-server adoption by the first two groups.
        if pop.late_entities && day > NEW_SERVER_DAY {
            for (k, srv) in pop.new_servers.iter().enumerate() {
                for user in &pop.groups[k % pop.groups.len()].members {
                    if joiner == Some(user) || dormant.contains(user) {
                        continue;
                    }
                    if rng.gen_bool(0.3) {
                        emit(&mut out, date, work(&mut rng), &client_of(user), srv, user);
                    }
                }
            }
        }

        // Remote-ops: bastion into the legacy host; two of them share a
        // workstation some mornings.
        if let Some(last_group) = pop.groups.last() {
            let ops_members: Vec<&UserName> = last_group
                .members
                .iter()
                .filter(|u| !dormant.contains(*u) && joiner != Some(*u))
                .take(REMOTE_OPS)
                .collect();
            for user in &ops_members {
                if rng.gen_bool(P_REMOTE_BASTION) {
                    let t = work(&mut rng);
                    emit(&mut out, date, t, &client_of(user), &pop.bastion, user);
                    if rng.gen_bool(P_BASTION_LEGACY) {
                        emit(
                            &mut out,
                            date,
                            t + rng.gen_range(120..900),
                            &pop.bastion,
                            &pop.legacy,
                            user,
                        );
                    }
                }
            }
            if ops_members.len() >= 2 && rng.gen_bool(P_OPS_PAD) {
                let pad = client_of(ops_members[0]);
                let user = ops_members[1];
                let t = work(&mut rng);
                emit(&mut out, date, t, &pad, &pop.bastion, user);
                if rng.gen_bool(P_BASTION_LEGACY) {
                    emit(&mut out, date, t + rng.gen_range(120..900), &pop.bastion, &pop.legacy, user);
                }
            }
        }

        // Administrators: client → pinned gateway, then maintenance hops.
        for (a, admin) in pop.admins.iter().enumerate() {
            let gw = &pop.gateways[a % pop.gateways.len()];
            let client = client_of(admin);
            let t = work(&mut rng);
            emit(&mut out, date, t, &client, gw, admin);
            if rng.gen_bool(P_ADMIN_SECOND_GW) {
                emit(&mut out, date, work(&mut rng), &client, gw, admin);
            }
            let mut touched: BTreeSet<usize> = BTreeSet::new();
            for _ in 0..ADMIN_OPS_TOUCHES {
                touched.insert(rng.gen_range(0..pop.ops.len()));
            }
            for k in touched {
                let t_ops = t + rng.gen_range(600..7200);
                emit(&mut out, date, t_ops, gw, &pop.ops[k], admin);
                if rng.gen_bool(P_ADMIN_OPS_DC) {
                    let dc = &pop.dcs[rng.gen_range(0..pop.dcs.len())];
                    emit(&mut out, date, t_ops + rng.gen_range(120..1500), &pop.ops[k], dc, admin);
                }
            }
            if rng.gen_bool(P_ADMIN_WIKI) {
                let t_wiki = t + rng.gen_range(600..7200);
                emit(&mut out, date, t_wiki, gw, &pop.wiki, admin);
                // Only the directory-sync owner chains onward from the wiki.
                if a == 0 && rng.gen_bool(P_WIKI_DC_SYNC) {
                    emit(
                        &mut out,
                        date,
                        t_wiki + rng.gen_range(120..1500),
                        &pop.wiki,
                        &pop.dcs[0],
                        admin,
                    );
                }
            }
            if rng.gen_bool(P_ADMIN_DC) {
                let dc = &pop.dcs[rng.gen_range(0..pop.dcs.len())];
                emit(&mut out, date, t + rng.gen_range(600..7200), gw, dc, admin);
            }
        }

        // Headless automation, spread around the clock.
        let backup = UserName::new("svc-backup");
        for (i, group) in pop.groups.iter().take(BACKUP_TARGETS).enumerate() {
            for n in 0..BACKUP_RATE {
                let secs = (86_400 / BACKUP_RATE) * n + (i as u32 * 97 + n * 13) % 2000;
                emit(&mut out, date, secs, &pop.auto_hosts[0], &group.hub, &backup);
            }
        }
        let monitor = UserName::new("svc-monitor");
        for (i, group) in pop.groups.iter().take(MONITOR_TARGETS).enumerate() {
            for n in 0..MONITOR_RATE {
                let secs = (86_400 / MONITOR_RATE) * n + (i as u32 * 59 + n * 31) % 2600;
                emit(&mut out, date, secs, &pop.auto_hosts[1], &group.commons[0], &monitor);
            }
        }
        // Low-rate approved deploys, kicked off by a rotating operator.
        // Releases land on the group's primary shared server (never the hub:
        // hubs relay same-day chains, and a service session parked there
        // would smear service credentials into every chain attribution).
        let deploy = UserName::new("svc-deploy");
        let op_group = &pop.groups[day as usize % pop.groups.len()];
        // Rotate past anyone who is not at a keyboard.
        let mut op_idx = day as usize % op_group.members.len();
        for _ in 0..op_group.members.len() {
            let cand = &op_group.members[op_idx];
            if !dormant.contains(cand) && joiner != Some(cand) {
                break;
            }
            op_idx = (op_idx + 1) % op_group.members.len();
        }
        let op = &op_group.members[op_idx];
        let t = work(&mut rng);
        emit(&mut out, date, t, &client_of(op), &pop.auto_hosts[2], op);
        for n in 0..2u32 {
            emit(
                &mut out,
                date,
                t + 300 + n * rng.gen_range(300..900),
                &pop.auto_hosts[2],
                &op_group.commons[0],
                &deploy,
            );
        }
        // Unapproved but quiet residual accounts, strictly between the
        // headless hosts.
        let cron = UserName::new("svc-cron");
        for n in 0..4u32 {
            emit(&mut out, date, 3600 * 6 * n % 86_400, &pop.auto_hosts[0], &pop.update, &cron);
        }
        let ci = UserName::new("svc-ci");
        for n in 0..3u32 {
            emit(&mut out, date, 7200 + n * 28_800, &pop.auto_hosts[1], &pop.auto_hosts[0], &ci);
        }

        // Weekly imaging: an admin works the console, the provisioning
        // server pushes images out to spares (and late servers on their day).
        if day % 7 == 3 {
            let admin = &pop.admins[(day as usize / 7) % pop.admins.len()];
            let t = work(&mut rng);
            emit(&mut out, date, t, &pop.console, &pop.prov, admin);
            let imaging = UserName::new("svc-imaging");
            if !pop.spares.is_empty() {
                let target = &pop.spares[rng.gen_range(0..pop.spares.len())];
                emit(&mut out, date, t + rng.gen_range(300..1200), &pop.prov, target, &imaging);
            }
        }
        if pop.late_entities && day == NEW_SERVER_DAY {
            let admin = &pop.admins[1];
            let t = work(&mut rng);
            emit(&mut out, date, t, &pop.console, &pop.prov, admin);
            let imaging = UserName::new("svc-imaging");
            for (n, srv) in pop.new_servers.iter().enumerate() {
                emit(&mut out, date, t + 600 + n as u32 * 300, &pop.prov, srv, &imaging);
            }
        }

        // The late hire: loaner client for the first week, own machine after
        // (with a one-time hand from the buddy who set it up).
        if let (Some(j), true) = (joiner, pop.late_entities) {
            if day >= JOINER_DAY {
                let group = pop.groups.last().expect("joiner group");
                let buddy = group.members[..group.members.len() - 1]
                    .iter()
                    .rev()
                    .find(|u| !dormant.contains(*u))
                    .unwrap_or(&group.members[0]);
                if day < JOINER_CLIENT_DAY {
                    for _ in 0..rng.gen_range(1..3u32) {
                        emit(&mut out, date, work(&mut rng), &client_of(buddy), &group.hub, j);
                    }
                } else {
                    if day == JOINER_CLIENT_DAY {
                        emit(&mut out, date, work(&mut rng), &client_of(j), &group.hub, buddy);
                    }
                    let client = client_of(j);
                    if rng.gen_bool(P_HUB) {
                        emit(&mut out, date, work(&mut rng), &client, &group.hub, j);
                    }
                    for (rank, p) in P_COMMONS.iter().enumerate() {
                        let target = &group.commons[rank];
                        if rng.gen_bool(*p) {
                            emit(&mut out, date, work(&mut rng), &client, target, j);
                        }
                    }
                }
            }
        }
    }

    crate::log_model::sort_events(&mut out);
    out
}

fn pick_other_group(rng: &mut ChaCha8Rng, pop: &Population, current: usize) -> usize {
    let mut other = rng.gen_range(0..pop.groups.len());
    if other == current {
        other = (other + 1) % pop.groups.len();
    }
    other
}

impl Corpus {
    /// One past the last generated date.
    pub fn end_date(&self) -> NaiveDate {
        self.params.start + Days::new(u64::from(self.params.days))
    }

    /// Write the corpus to a directory: `machines.jsonl`, `users.jsonl`,
    /// `logins.jsonl`, `filter_rules.jsonl`, and a loadable `env.cfg`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let machines: Vec<&Machine> = self.inventory.machines.values().collect();
        let users: Vec<&UserAccount> = self.inventory.users.values().collect();
        write_jsonl(&dir.join("machines.jsonl"), &machines)?;
        write_jsonl(&dir.join("users.jsonl"), &users)?;
        write_jsonl(&dir.join("logins.jsonl"), &self.logins)?;
        write_jsonl(&dir.join("filter_rules.jsonl"), &self.config.filter_rules)?;
        std::fs::write(dir.join("env.cfg"), config_text(&self.config, "filter_rules.jsonl"))?;
        Ok(())
    }
}

/// Render a configuration as the flat `key = value` file `EnvConfig::load`
/// reads back; `rules_file` is the relative path written for `filter_rules`.
pub fn config_text(config: &EnvConfig, rules_file: &str) -> String {
    let list = |items: &[String]| items.join(",");
    let machines: Vec<String> =
        config.high_value_machines.iter().map(|m| m.as_str().to_string()).collect();
    let accounts: Vec<String> =
        config.approved_service_accounts.iter().map(|u| u.as_str().to_string()).collect();
    let mut text = String::new();
    text.push_str("# generated pipeline configuration\n");
    text.push_str(&format!("session_max_hours = {}\n", config.session_max_hours));
    text.push_str(&format!("history_days = {}\n", config.history_days));
    text.push_str(&format!("alert_budget = {}\n", config.alert_budget));
    text.push_str(&format!("new_entity_days = {}\n", config.new_entity_days));
    text.push_str(&format!("automation_rate_per_day = {}\n", config.automation_rate_per_day));
    text.push_str(&format!("automation_day_fraction = {}\n", config.automation_day_fraction));
    text.push_str(&format!(
        "service_account_min_sources = {}\n",
        config.service_account_min_sources
    ));
    text.push_str(&format!("cred_cache_days = {}\n", config.cred_cache_days));
    if !machines.is_empty() {
        text.push_str(&format!("high_value_machines = {}\n", list(&machines)));
    }
    if !accounts.is_empty() {
        text.push_str(&format!("approved_service_accounts = {}\n", list(&accounts)));
    }
    text.push_str(&format!("suppress_admin_switches = {}\n", config.suppress_admin_switches));
    if !config.filter_rules.is_empty() {
        text.push_str(&format!("filter_rules = {rules_file}\n"));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::{apply_filters, mine_automation_edges};
    use std::collections::BTreeMap;

    fn small() -> CorpusParams {
        CorpusParams { seed: 11, users: 64, machines: 110, days: 40, ..CorpusParams::default() }
    }

    #[test]
    fn same_seed_reproduces_the_corpus() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.logins, b.logins);
        assert_eq!(
            serde_json::to_string(&a.inventory).unwrap(),
            serde_json::to_string(&b.inventory).unwrap()
        );
        let c = generate(&CorpusParams { seed: 12, ..small() }).unwrap();
        assert_ne!(a.logins, c.logins);
    }

    #[test]
    fn population_matches_the_requested_sizes() {
        let corpus = generate(&small()).unwrap();
        assert_eq!(corpus.inventory.users.len(), 64);
        assert_eq!(corpus.inventory.machines.len(), 110);
        // Every login references known entities.
        let warnings = corpus.inventory.validate_stream(&corpus.logins, true).unwrap();
        assert!(warnings.is_empty(), "unknown entities: {warnings:?}");
        // Config is internally coherent and loadable.
        corpus.config.validate().unwrap();
        assert!(corpus.config.suppress_admin_switches);
        assert_eq!(corpus.config.high_value_machines.len(), 2);
    }

    #[test]
    fn undersized_requests_are_config_errors() {
        let err = generate(&CorpusParams { users: 20, ..small() }).unwrap_err();
        assert!(matches!(err, HopperError::Config(_)));
        let err =
            generate(&CorpusParams { machines: 50, ..small() }).unwrap_err();
        assert!(matches!(err, HopperError::Config(_)));
    }

    #[test]
    fn automation_mining_finds_the_headless_feeds() {
        let corpus = generate(&small()).unwrap();
        let mined = mine_automation_edges(&corpus.logins, &corpus.inventory, &corpus.config);
        assert!(!mined.is_empty());
        let users: BTreeSet<&str> =
            mined.iter().map(|e| e.user.as_str()).collect();
        assert!(users.contains("svc-backup"));
        assert!(users.contains("svc-monitor"));
        assert!(!users.contains("svc-deploy"), "low-rate deploys are not automation");
    }

    #[test]
    fn most_machines_keep_small_in_and_out_degrees() {
        let corpus = generate(&small()).unwrap();
        let mined = mine_automation_edges(&corpus.logins, &corpus.inventory, &corpus.config);
        let (cleaned, _) = apply_filters(
            &corpus.logins,
            &mined,
            &corpus.config.filter_rules,
            &corpus.inventory,
        );
        let mut outs: BTreeMap<&MachineId, BTreeSet<&MachineId>> = BTreeMap::new();
        let mut ins: BTreeMap<&MachineId, BTreeSet<&MachineId>> = BTreeMap::new();
        for login in &cleaned {
            outs.entry(&login.src).or_default().insert(&login.dst);
            ins.entry(&login.dst).or_default().insert(&login.src);
        }
        let degree = |map: &BTreeMap<&MachineId, BTreeSet<&MachineId>>, id: &MachineId| {
            map.get(id).map(BTreeSet::len).unwrap_or(0)
        };
        let total = corpus.inventory.machines.len();
        let low = corpus
            .inventory
            .machines
            .keys()
            .filter(|id| degree(&outs, id) <= 10 && degree(&ins, id) <= 10)
            .count();
        let frac = low as f64 / total as f64;
        assert!(frac > 0.9, "only {frac:.3} of machines have in/out degree <= 10");
    }

    #[test]
    fn config_text_round_trips_through_the_parser() {
        let corpus = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.write(dir.path()).unwrap();
        let loaded = EnvConfig::load(&dir.path().join("env.cfg")).unwrap();
        assert_eq!(loaded, corpus.config);
        let logins: Vec<LoginEvent> =
            crate::log_model::read_jsonl(&dir.path().join("logins.jsonl")).unwrap();
        assert_eq!(logins, corpus.logins);
    }

    #[test]
    fn daily_volume_is_in_a_workable_band() {
        let corpus = generate(&small()).unwrap();
        let per_day = corpus.logins.len() as f64 / f64::from(corpus.params.days);
        assert!(per_day > 50.0, "suspiciously quiet: {per_day}/day");
        assert!(per_day < 5000.0, "unworkably loud: {per_day}/day");
        // Canonically ordered.
        let mut sorted = corpus.logins.clone();
        crate::log_model::sort_events(&mut sorted);
        assert_eq!(sorted, corpus.logins);
    }
}
