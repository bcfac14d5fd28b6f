//! `hopper`: umbrella CLI over the lateral-movement detection pipeline.
//!
//! One verb per pipeline stage, sharing conventions across verbs: `--in` and
//! `--out` for the primary stream, `--inventory machines.jsonl,users.jsonl`
//! for the rosters, `--config` for the environment file, and `--seed`
//! wherever randomness is involved. Machine-readable reports are written as
//! JSON or CSV files; a human-readable summary goes to stdout. Exit codes:
//! 0 on success, 2 when the inputs or configuration are at fault, 1 for
//! everything else.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{Days, NaiveDate};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use hopper_core::attack_sim::{AttackGoal, Stealth};
use hopper_core::causality::{dedup_daily, CausalityEngine, LoginPath};
use hopper_core::detection::{
    scenario_watch_filter, Alert, DetectorKind, DetectorState, ScenarioContext, ScenarioCounts,
};
use hopper_core::filtering::{
    apply_filters, mine_automation_edges, AutomationEdge, DropReport, FilterRule,
};
use hopper_core::harness::{
    config_text, generate, pick_victims, plan_attacks, run_eval, CleanRun, CorpusParams,
    EvalWindows,
};
use hopper_core::log_model::{
    read_jsonl, read_logins_path, sort_events, write_jsonl, EnvConfig, ErrorPolicy, Inventory,
    LoginEvent, Machine, UserAccount,
};
use hopper_core::login_graph::HistoryIndex;
use hopper_core::sal::{grid_search, SalGrid};
use hopper_core::{HopperError, Result};

#[derive(Parser)]
#[command(
    name = "hopper",
    version,
    about = "Lateral-movement detection over enterprise authentication logs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic login corpus: logins, rosters, config, rules.
    GenCorpus(GenCorpusArgs),
    /// Mine machine-to-machine edges that fire like clockwork automation.
    MineAutomation(MineArgs),
    /// Drop approved automation and rule-matched noise from a login stream.
    Clean(CleanArgs),
    /// Reconstruct the causal movement paths behind each login, day by day.
    Paths(PathsArgs),
    /// Summarize logins and paths into a history index over a date window.
    Index(IndexArgs),
    /// Score causal paths and emit budgeted alerts, resumable via a state file.
    Detect(DetectArgs),
    /// Synthesize attack login sequences against the recorded environment.
    Simulate(SimulateArgs),
    /// Sweep the rarity-plus-coverage baseline detector over a threshold grid.
    Sal(SalArgs),
    /// End-to-end evaluation on a generated corpus: detection and cost curves.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// RNG seed for the synthetic environment.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Total accounts (employees plus admin and service accounts).
    #[arg(long, default_value_t = 200)]
    users: usize,
    /// Total machines (clients plus the server estate).
    #[arg(long, default_value_t = 300)]
    machines: usize,
    /// Horizon length in days.
    #[arg(long, default_value_t = 90)]
    days: u32,
    /// First day of the horizon.
    #[arg(long, default_value = "2019-01-01")]
    start: NaiveDate,
    /// Directory for logins.jsonl, machines.jsonl, users.jsonl, env.cfg, rules.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    /// Login stream (JSONL, or CSV with a ts,src,dst,user header).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Rosters as machines.jsonl,users.jsonl.
    #[arg(long, value_name = "MACHINES,USERS")]
    inventory: String,
    /// Environment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Where to write the mined automation edges (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CleanArgs {
    /// Login stream (JSONL or CSV).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Rosters as machines.jsonl,users.jsonl.
    #[arg(long, value_name = "MACHINES,USERS")]
    inventory: String,
    /// Approved automation edges (JSONL) from mine-automation.
    #[arg(long)]
    automation: Option<PathBuf>,
    /// Filter rules (JSONL). Falls back to the rules referenced by --config.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Environment configuration file (source of fallback filter rules).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the kept logins (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Where to write the drop-count report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PathsArgs {
    /// Cleaned login stream (JSONL or CSV).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Rosters as machines.jsonl,users.jsonl.
    #[arg(long, value_name = "MACHINES,USERS")]
    inventory: String,
    /// Environment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Where to write the causal paths (JSONL), deduplicated per day.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    /// Login stream (JSONL or CSV); only logins inside the window are indexed.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Causal paths for the same span (JSONL); sliced to the window too.
    #[arg(long)]
    paths: PathBuf,
    /// Half-open date window START:END.
    #[arg(long, value_name = "START:END")]
    window: String,
    /// Where to write the history index (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Causal paths (JSONL); any day order in the file, grouped internally.
    #[arg(long)]
    paths: PathBuf,
    /// Rosters as machines.jsonl,users.jsonl.
    #[arg(long, value_name = "MACHINES,USERS")]
    inventory: String,
    /// Environment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// History index (JSON) to warm-start a fresh detector state.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Daily alert budget; overrides the configured value.
    #[arg(long)]
    budget: Option<usize>,
    /// Where to write the alerts (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Detector state file: loaded if present, rewritten after the run.
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Cleaned login history (JSONL or CSV) to plan attacks against.
    #[arg(long)]
    history: PathBuf,
    /// Rosters as machines.jsonl,users.jsonl.
    #[arg(long, value_name = "MACHINES,USERS")]
    inventory: String,
    /// Environment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// How many victims to target across the goal x stealth matrix.
    #[arg(long, default_value_t = 4)]
    victims: usize,
    /// Master seed; each scenario derives its own stream from it.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory for one JSONL of logins per attack plus manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SalArgs {
    /// Cleaned login stream (JSONL or CSV), attack-free.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Rosters as machines.jsonl,users.jsonl.
    #[arg(long, value_name = "MACHINES,USERS")]
    inventory: String,
    /// Environment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Edge-rarity thresholds: LO:HI inclusive range or a comma list.
    #[arg(long, default_value = "1:15")]
    ngrid: String,
    /// Coverage-fraction thresholds, comma-separated, strictly increasing.
    #[arg(long, default_value = "0.01,0.025,0.1,0.2,0.5,0.75")]
    pgrid: String,
    /// Directory of per-attack login JSONL files (manifest.json is ignored).
    #[arg(long)]
    attacks: PathBuf,
    /// First day to score; earlier days only train. Default: first day plus
    /// the configured history window.
    #[arg(long, value_name = "DATE")]
    eval_start: Option<NaiveDate>,
    /// Rolling training window length in days.
    #[arg(long, default_value_t = 60)]
    window_days: u32,
    /// Where to write the p,n,fp,tp grid (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// RNG seed for the corpus and every attack.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Corpus size knobs, matching gen-corpus.
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 300)]
    machines: usize,
    #[arg(long, default_value_t = 90)]
    days: u32,
    #[arg(long, default_value = "2019-01-01")]
    start: NaiveDate,
    /// Victims per goal x stealth cell.
    #[arg(long, default_value_t = 4)]
    victims_per_cell: usize,
    /// Alert budgets to sweep: LO:HI inclusive range or a comma list.
    #[arg(long, default_value = "1:11")]
    budgets: String,
    /// Directory for report.json, matrix.csv, budget.csv.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenCorpus(args) => cmd_gen_corpus(args),
        Cmd::MineAutomation(args) => cmd_mine(args),
        Cmd::Clean(args) => cmd_clean(args),
        Cmd::Paths(args) => cmd_paths(args),
        Cmd::Index(args) => cmd_index(args),
        Cmd::Detect(args) => cmd_detect(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Sal(args) => cmd_sal(args),
        Cmd::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

// ── Shared input/output helpers ──────────────────────────────────────────────

/// Fail fast with the offending path; a bare "no such file" from deep inside
/// a reader helps nobody.
fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(HopperError::Validation(format!("no such file: {}", path.display())))
    }
}

fn load_logins(path: &Path) -> Result<Vec<LoginEvent>> {
    require_file(path)?;
    let outcome = read_logins_path(path, ErrorPolicy::Abort)?;
    let mut events = outcome.events;
    sort_events(&mut events);
    Ok(events)
}

fn load_inventory(spec: &str) -> Result<Inventory> {
    let (machines_path, users_path) = spec.split_once(',').ok_or_else(|| {
        HopperError::Validation(format!(
            "--inventory wants machines.jsonl,users.jsonl, got `{spec}`"
        ))
    })?;
    let machines_path = Path::new(machines_path.trim());
    let users_path = Path::new(users_path.trim());
    require_file(machines_path)?;
    require_file(users_path)?;
    let machines: Vec<Machine> = read_jsonl(machines_path)?;
    let users: Vec<UserAccount> = read_jsonl(users_path)?;
    Inventory::from_records(machines, users, false)
}

fn load_config(path: &Path) -> Result<EnvConfig> {
    require_file(path)?;
    EnvConfig::load(path)
}

fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn parse_date(text: &str) -> Result<NaiveDate> {
    text.trim()
        .parse()
        .map_err(|e| HopperError::Validation(format!("bad date `{text}`: {e}")))
}

fn parse_window(spec: &str) -> Result<(NaiveDate, NaiveDate)> {
    let (start, end) = spec.split_once(':').ok_or_else(|| {
        HopperError::Validation(format!("--window wants START:END dates, got `{spec}`"))
    })?;
    Ok((parse_date(start)?, parse_date(end)?))
}

/// Integer grid: `LO:HI` inclusive range or a comma list.
fn parse_int_grid<T>(flag: &str, spec: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr + PartialOrd + Copy,
    std::ops::RangeInclusive<T>: Iterator<Item = T>,
{
    let bad = |t: &str| HopperError::Validation(format!("{flag}: bad integer `{t}` in `{spec}`"));
    if let Some((lo, hi)) = spec.split_once(':') {
        let lo: T = lo.trim().parse().map_err(|_| bad(lo))?;
        let hi: T = hi.trim().parse().map_err(|_| bad(hi))?;
        if hi < lo {
            return Err(HopperError::Validation(format!("{flag}: empty range `{spec}`")));
        }
        Ok((lo..=hi).collect())
    } else {
        spec.split(',').map(|t| t.trim().parse().map_err(|_| bad(t))).collect()
    }
}

fn parse_f64_list(flag: &str, spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|t| {
            t.trim().parse().map_err(|_| {
                HopperError::Validation(format!("{flag}: bad number `{t}` in `{spec}`"))
            })
        })
        .collect()
}

fn goal_tag(goal: AttackGoal) -> &'static str {
    match goal {
        AttackGoal::Exploratory => "exploratory",
        AttackGoal::Aggressive => "aggressive",
        AttackGoal::Targeted => "targeted",
    }
}

fn stealth_tag(stealth: Stealth) -> &'static str {
    match stealth {
        Stealth::None => "none",
        Stealth::PriorEdge => "prior-edge",
        Stealth::ActiveCredential => "active-credential",
        Stealth::Combined => "combined",
    }
}

// ── Subcommands ──────────────────────────────────────────────────────────────

fn cmd_gen_corpus(args: GenCorpusArgs) -> Result<()> {
    let params = CorpusParams {
        seed: args.seed,
        users: args.users,
        machines: args.machines,
        days: args.days,
        start: args.start,
    };
    let corpus = generate(&params)?;
    fs::create_dir_all(&args.out)?;
    write_jsonl(&args.out.join("logins.jsonl"), &corpus.logins)?;
    let machines: Vec<&Machine> = corpus.inventory.machines.values().collect();
    let users: Vec<&UserAccount> = corpus.inventory.users.values().collect();
    write_jsonl(&args.out.join("machines.jsonl"), &machines)?;
    write_jsonl(&args.out.join("users.jsonl"), &users)?;
    write_jsonl(&args.out.join("rules.jsonl"), &corpus.config.filter_rules)?;
    fs::write(&args.out.join("env.cfg"), config_text(&corpus.config, "rules.jsonl"))?;
    println!(
        "seed {}: {} logins across {} machines / {} users over {} days -> {}",
        args.seed,
        corpus.logins.len(),
        machines.len(),
        users.len(),
        args.days,
        args.out.display()
    );
    Ok(())
}

fn cmd_mine(args: MineArgs) -> Result<()> {
    let logins = load_logins(&args.input)?;
    let inventory = load_inventory(&args.inventory)?;
    let config = load_config(&args.config)?;
    let edges = mine_automation_edges(&logins, &inventory, &config);
    write_jsonl(&args.out, &edges)?;
    println!(
        "{} logins -> {} automation edges -> {}",
        logins.len(),
        edges.len(),
        args.out.display()
    );
    Ok(())
}

fn render_drops(report: &DropReport) -> String {
    let mut parts = vec![format!("automation {}", report.automation)];
    for (rule, n) in &report.by_rule {
        parts.push(format!("rule {rule} {n}"));
    }
    format!(
        "input {} logins; kept {}; dropped {} ({})",
        report.input,
        report.kept,
        report.dropped(),
        parts.join(", ")
    )
}

fn cmd_clean(args: CleanArgs) -> Result<()> {
    let logins = load_logins(&args.input)?;
    let inventory = load_inventory(&args.inventory)?;
    let automation: Vec<AutomationEdge> = match &args.automation {
        Some(path) => {
            require_file(path)?;
            read_jsonl(path)?
        }
        None => Vec::new(),
    };
    let rules: Vec<FilterRule> = match (&args.rules, &args.config) {
        (Some(path), _) => {
            require_file(path)?;
            read_jsonl(path)?
        }
        (None, Some(config)) => load_config(config)?.filter_rules,
        (None, None) => {
            eprintln!("note: no --rules or --config given; only automation edges are dropped");
            Vec::new()
        }
    };
    let (kept, report) = apply_filters(&logins, &automation, &rules, &inventory);
    write_jsonl(&args.out, &kept)?;
    if let Some(path) = &args.report {
        write_json_pretty(path, &report)?;
    }
    println!("{}", render_drops(&report));
    Ok(())
}

fn cmd_paths(args: PathsArgs) -> Result<()> {
    let logins = load_logins(&args.input)?;
    let inventory = load_inventory(&args.inventory)?;
    let config = load_config(&args.config)?;
    let warnings = inventory.validate_stream(&logins, false)?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }

    let ctx = ScenarioContext::new(&inventory, &config);
    let watch = scenario_watch_filter(&ctx);
    let mut engine = CausalityEngine::new(config.session_max_hours);
    let mut raw = 0usize;
    let mut out: Vec<LoginPath> = Vec::new();
    let mut day_paths: Vec<LoginPath> = Vec::new();
    let mut current: Option<NaiveDate> = None;
    let mut days = 0usize;
    for login in &logins {
        if current != Some(login.day()) {
            out.extend(dedup_daily(std::mem::take(&mut day_paths)));
            current = Some(login.day());
            days += 1;
        }
        let paths = engine.process(login, &inventory, &watch)?;
        raw += paths.len();
        day_paths.extend(paths);
    }
    out.extend(dedup_daily(day_paths));

    let switches = out.iter().filter(|p| p.is_switch()).count();
    write_jsonl(&args.out, &out)?;
    println!(
        "{} logins over {} days -> {} paths ({} after daily dedup, {} with credential switches) -> {}",
        logins.len(),
        days,
        raw,
        out.len(),
        switches,
        args.out.display()
    );
    Ok(())
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    let (start, end) = parse_window(&args.window)?;
    let logins = load_logins(&args.input)?;
    require_file(&args.paths)?;
    let paths: Vec<LoginPath> = read_jsonl(&args.paths)?;
    let in_window_logins: Vec<LoginEvent> =
        logins.into_iter().filter(|l| l.day() >= start && l.day() < end).collect();
    let in_window_paths: Vec<LoginPath> =
        paths.into_iter().filter(|p| p.day() >= start && p.day() < end).collect();
    let index = HistoryIndex::build(start, end, &in_window_logins, &in_window_paths)?;
    write_json_pretty(&args.out, &index)?;
    println!(
        "indexed {start}..{end}: {} day slices from {} logins / {} paths -> {}",
        index.len_days(),
        in_window_logins.len(),
        in_window_paths.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let inventory = load_inventory(&args.inventory)?;
    let config = load_config(&args.config)?;
    require_file(&args.paths)?;
    let paths: Vec<LoginPath> = read_jsonl(&args.paths)?;

    let resuming = args.state.as_deref().is_some_and(Path::is_file);
    let mut state: DetectorState = if resuming {
        let blob = fs::read(args.state.as_deref().expect("checked above"))?;
        if args.index.is_some() {
            eprintln!("note: --index ignored; resuming from the existing state file");
        }
        serde_json::from_slice(&blob)?
    } else {
        let mut fresh = DetectorState::new(&config);
        if let Some(path) = &args.index {
            require_file(path)?;
            fresh.index = serde_json::from_slice(&fs::read(path)?)?;
        }
        fresh
    };
    if let Some(budget) = args.budget {
        state.budget = budget;
    }

    let mut by_day: BTreeMap<NaiveDate, Vec<LoginPath>> = BTreeMap::new();
    for path in paths {
        by_day.entry(path.day()).or_default().push(path);
    }

    let mut alerts: Vec<Alert> = Vec::new();
    let mut counts = ScenarioCounts::default();
    let days = by_day.len();
    for (date, day_paths) in &by_day {
        let outcome = state.detect_day(*date, day_paths, &inventory, &config)?;
        alerts.extend(outcome.alerts);
        counts.accumulate(&outcome.counts);
    }
    write_jsonl(&args.out, &alerts)?;
    if let Some(path) = &args.state {
        fs::write(path, serde_json::to_vec(&state)?)?;
    }

    let clear = alerts.iter().filter(|a| a.detector == DetectorKind::ClearRule).count();
    let ranked = alerts.len() - clear;
    println!(
        "{} days, {} paths in: {} alerts ({} clear-rule, {} ranked) -> {}",
        days,
        counts.paths_in,
        alerts.len(),
        clear,
        ranked,
        args.out.display()
    );
    if let Some(path) = &args.state {
        println!(
            "state {} {}",
            if resuming { "resumed and rewritten at" } else { "saved to" },
            path.display()
        );
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let logins = load_logins(&args.history)?;
    let inventory = load_inventory(&args.inventory)?;
    let config = load_config(&args.config)?;
    let (first, last) = match (logins.first(), logins.last()) {
        (Some(f), Some(l)) => (f.day(), l.day()),
        _ => return Err(HopperError::Validation("history stream is empty".into())),
    };
    let windows = EvalWindows {
        train_start: first,
        eval_start: first + Days::new(u64::from(config.history_days)),
        end: last + Days::new(1),
    };
    windows.validate()?;
    let eval_logins: Vec<LoginEvent> =
        logins.iter().filter(|l| l.day() >= windows.eval_start).cloned().collect();
    let clean = CleanRun {
        report: DropReport {
            input: logins.len(),
            kept: logins.len(),
            automation: 0,
            by_rule: Vec::new(),
        },
        automation: Vec::new(),
        eval_logins,
        cleaned: logins,
    };

    let victims = pick_victims(&clean, &inventory, args.victims);
    if victims.is_empty() {
        return Err(HopperError::Validation(
            "no eligible victims: history names no employee with an owned client".into(),
        ));
    }
    let plan = plan_attacks(&clean, &inventory, &config, &windows, &victims, args.seed)?;

    fs::create_dir_all(&args.out)?;
    let mut entries = Vec::new();
    for (i, planned) in plan.attacks.iter().enumerate() {
        let scenario = &planned.attack.scenario;
        let file = format!(
            "attack_{i:03}_{}_{}_{}.jsonl",
            goal_tag(scenario.goal),
            stealth_tag(scenario.stealth),
            scenario.victim.as_str()
        );
        write_jsonl(&args.out.join(&file), &planned.attack.logins)?;
        entries.push(json!({
            "file": file,
            "scenario": scenario,
            "seed": planned.seed,
            "attempts": planned.attempts,
            "hops": planned.attack.logins.len(),
            "succeeded": planned.attack.succeeded,
            "credential_switch": planned.attack.has_credential_switch(&inventory),
            "compromised_creds": planned.attack.compromised_creds,
        }));
    }
    let infeasible: Vec<serde_json::Value> = plan
        .infeasible
        .iter()
        .map(|(goal, stealth, victim)| json!({ "goal": goal, "stealth": stealth, "victim": victim }))
        .collect();
    let manifest = json!({
        "seed": args.seed,
        "windows": windows,
        "victims": victims,
        "attacks": entries,
        "infeasible": infeasible,
    });
    write_json_pretty(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "{} attacks for {} victims ({} infeasible cells) -> {}",
        plan.attacks.len(),
        victims.len(),
        plan.infeasible.len(),
        args.out.display()
    );
    Ok(())
}

/// Matrix view of the threshold sweep: rows are coverage thresholds, columns
/// rarity thresholds, cells `detected/false-positives`.
fn render_grid(grid: &SalGrid) -> String {
    let mut out = String::from("detected/false-positives by (p, n)\n");
    out.push_str(&format!("{:>7}", "p \\ n"));
    for n in &grid.n_grid {
        out.push_str(&format!("{n:>12}"));
    }
    out.push('\n');
    for p in &grid.p_grid {
        out.push_str(&format!("{p:>7}"));
        for n in &grid.n_grid {
            let cell = grid.cell(*n, *p).expect("grid cells cover the full cross product");
            out.push_str(&format!(
                "{:>12}",
                format!("{}/{}", cell.true_positives, cell.false_positives)
            ));
        }
        out.push('\n');
    }
    out
}

fn cmd_sal(args: SalArgs) -> Result<()> {
    let cleaned = load_logins(&args.input)?;
    let inventory = load_inventory(&args.inventory)?;
    let config = load_config(&args.config)?;
    let n_grid: Vec<u32> = parse_int_grid("--ngrid", &args.ngrid)?;
    let p_grid = parse_f64_list("--pgrid", &args.pgrid)?;

    if !args.attacks.is_dir() {
        return Err(HopperError::Validation(format!(
            "--attacks wants a directory of login JSONL files, got {}",
            args.attacks.display()
        )));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&args.attacks)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "jsonl")
                && p.file_stem().is_none_or(|stem| stem != "manifest")
        })
        .collect();
    files.sort();
    let mut attacks: Vec<BTreeSet<LoginEvent>> = Vec::with_capacity(files.len());
    let mut stream = cleaned;
    let benign_len = stream.len();
    for file in &files {
        let logins = load_logins(file)?;
        if logins.is_empty() {
            eprintln!("note: skipping empty attack file {}", file.display());
            continue;
        }
        stream.extend(logins.iter().cloned());
        attacks.push(logins.into_iter().collect());
    }
    sort_events(&mut stream);

    let eval_start = match args.eval_start {
        Some(date) => date,
        None => match stream.first() {
            Some(first) => first.day() + Days::new(u64::from(config.history_days)),
            None => return Err(HopperError::Validation("login stream is empty".into())),
        },
    };

    let grid = grid_search(
        &stream,
        eval_start,
        &inventory,
        &attacks,
        &n_grid,
        &p_grid,
        args.window_days,
    )?;
    fs::write(&args.out, grid.to_csv())?;
    print!("{}", render_grid(&grid));
    println!(
        "{} benign + {} attack logins scored from {eval_start}; grid -> {}",
        benign_len,
        attacks.iter().map(BTreeSet::len).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let budgets: Vec<usize> = parse_int_grid("--budgets", &args.budgets)?;
    let params = CorpusParams {
        seed: args.seed,
        users: args.users,
        machines: args.machines,
        days: args.days,
        start: args.start,
    };
    let corpus = generate(&params)?;
    let windows = EvalWindows::from_corpus(&corpus)?;
    let outcome = run_eval(&corpus, &windows, args.victims_per_cell, &budgets, args.seed)?;

    fs::create_dir_all(&args.out)?;
    write_json_pretty(&args.out.join("report.json"), &outcome.report)?;
    fs::write(&args.out.join("matrix.csv"), outcome.report.matrix_csv())?;
    fs::write(&args.out.join("budget.csv"), outcome.report.budget_csv())?;
    print!("{}", outcome.report.render());
    println!("report.json, matrix.csv, budget.csv -> {}", args.out.display());
    Ok(())
}
