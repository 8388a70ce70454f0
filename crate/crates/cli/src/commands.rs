//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use faultplan::campaign::{
    run_campaign, run_campaign_static, CampaignConfig, CampaignError, CampaignResult, Escalation,
};
use faultplan::cnf::{parse_cnf, ApiVar};
use faultplan::hardening::{evaluate_level, BudgetSweep, HardeningInstance, SweepLevel};
use faultplan::sim::{generate_system, GenParams, SimError, SimulatedSystem};
use faultplan::solver::{enumerate_minimal, FaultSet, SolverConfig};

use crate::manifest::{millis, sidecar, write_atomic, RunManifest, MANIFEST_FILE};
use crate::{Failure, GenArgs, HardenArgs, InjectArgs, SolveArgs};

type CmdResult = Result<(), Failure>;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Line written for the single empty solution of an empty formula.
pub const EMPTY_SOLUTION: &str = "0";

pub fn gen(args: &GenArgs) -> CmdResult {
    let params = GenParams {
        group_num: args.groups,
        edge_num: args.edges,
        bone_num: args.bones,
        n_requests: args.requests,
        shared_api_fraction: args.share,
        seed: args.seed,
    };
    let mut manifest = RunManifest::new("gen", args, Some(args.seed));
    let start = Instant::now();
    let system = generate_system(&params).map_err(|e| Failure::Usage(e.into()))?;
    manifest.phase("generate", millis(start));
    let text = system.to_json();
    write_atomic(&args.out, text.as_bytes())?;
    manifest.output(file_label(&args.out), text.as_bytes());
    manifest.finish(&sidecar(&args.out))?;
    Ok(())
}

pub fn solve(args: &SolveArgs) -> CmdResult {
    let mut manifest = RunManifest::new("solve", args, None);
    let text = fs::read_to_string(&args.cnf).with_context(|| format!("reading {}", args.cnf.display()))?;
    manifest.input(&args.cnf)?;
    let cnf = parse_cnf(&text).with_context(|| format!("parsing {}", args.cnf.display()))?;
    let start = Instant::now();
    let solutions = enumerate_minimal(&cnf, &SolverConfig::new(args.k));
    manifest.phase("solve", millis(start));
    let mut out = String::new();
    for s in &solutions {
        if s.is_empty() {
            out.push_str(EMPTY_SOLUTION);
        } else {
            let vars: Vec<String> = s.iter().map(|v| (v.0 + 1).to_string()).collect();
            out.push_str(&vars.join(" "));
        }
        out.push('\n');
    }
    match &args.out {
        Some(path) => {
            write_atomic(path, out.as_bytes())?;
            manifest.output(file_label(path), out.as_bytes());
            manifest.finish(&sidecar(path))?;
        }
        None => print!("{out}"),
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FaultRecord {
    pub vars: FaultSet,
    pub apis: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CampaignTimings {
    pub solve: f64,
    pub inject: f64,
    pub bookkeeping: f64,
    pub total: f64,
}

/// Per-request campaign output file.
#[derive(Debug, Serialize, Deserialize)]
pub struct CampaignReport {
    pub manifest: String,
    pub request_id: u32,
    pub mode: String,
    pub escalation: Option<Escalation>,
    pub k_max: usize,
    pub final_k: usize,
    pub injections: u64,
    pub solver_calls: u64,
    pub final_clauses: usize,
    pub valid_faults: Vec<FaultRecord>,
    pub timings_ms: CampaignTimings,
}

fn api_name(system: &SimulatedSystem, var: ApiVar) -> String {
    match system.symbol(var) {
        Some(s) => format!("{}{}#{}", s.service, s.api, s.replica),
        None => var.to_string(),
    }
}

fn report(system: &SimulatedSystem, args: &InjectArgs, r: &CampaignResult) -> CampaignReport {
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    CampaignReport {
        manifest: MANIFEST_FILE.to_string(),
        request_id: r.request_id,
        mode: if args.static_k.is_some() { "static" } else { "dynamic" }.to_string(),
        escalation: args.static_k.is_none().then(|| args.escalation.into()),
        k_max: r.k_max,
        final_k: r.final_k,
        injections: r.injections,
        solver_calls: r.solver_calls,
        final_clauses: r.final_cnf.len(),
        valid_faults: r
            .valid_faults
            .iter()
            .map(|f| FaultRecord { vars: f.clone(), apis: f.iter().map(|v| api_name(system, v)).collect() })
            .collect(),
        timings_ms: CampaignTimings {
            solve: ms(r.wall_times.solve),
            inject: ms(r.wall_times.inject),
            bookkeeping: ms(r.wall_times.bookkeeping),
            total: ms(r.wall_times.total),
        },
    }
}

pub fn report_file(request_id: u32) -> String {
    format!("request-{request_id}.json")
}

fn load_system(path: &Path, manifest: &mut RunManifest) -> Result<SimulatedSystem, Failure> {
    manifest.input(path)?;
    SimulatedSystem::load(path).with_context(|| format!("loading {}", path.display())).map_err(Failure::Input)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    if jobs == 0 {
        return Err(Failure::Usage(anyhow!("--jobs must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Failure::Input(e.into()))
}

pub fn inject(args: &InjectArgs) -> CmdResult {
    let mut manifest = RunManifest::new("inject", args, None);
    let system = load_system(&args.system, &mut manifest)?;
    let ids: Vec<u32> = if args.all { system.request_ids().collect() } else { args.request.clone() };
    for &id in &ids {
        system.request(id).map_err(|e| Failure::Input(e.into()))?;
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let pool = thread_pool(args.jobs)?;

    let start = Instant::now();
    let run_one = |id: u32| -> Result<CampaignResult, CampaignError> {
        match (args.static_k, args.kmax) {
            (Some(k), _) => run_campaign_static(&system, id, k),
            (None, Some(k_max)) => {
                let config = CampaignConfig { k_max, request_id: id, escalation: args.escalation.into() };
                run_campaign(&system, &config)
            }
            (None, None) => unreachable!("clap requires --kmax or --static"),
        }
    };
    let results: Vec<(u32, Result<CampaignResult, CampaignError>)> =
        pool.install(|| ids.par_iter().map(|&id| (id, run_one(id))).collect());
    manifest.phase("campaigns", millis(start));

    let mut csv = String::from("request_id,injections,solver_calls,valid_faults,final_k,solve_ms,total_ms,error\n");
    let mut failed = 0usize;
    for (id, result) in &results {
        match result {
            Ok(r) => {
                let rep = report(&system, args, r);
                let text = serde_json::to_string_pretty(&rep).map_err(anyhow::Error::from)? + "\n";
                let name = report_file(*id);
                write_atomic(&args.out_dir.join(&name), text.as_bytes())?;
                manifest.output(name, text.as_bytes());
                let _ = writeln!(
                    csv,
                    "{id},{},{},{},{},{:.3},{:.3},",
                    r.injections,
                    r.solver_calls,
                    r.valid_faults.len(),
                    r.final_k,
                    rep.timings_ms.solve,
                    rep.timings_ms.total
                );
            }
            Err(e) => {
                failed += 1;
                log::error!("request {id}: {e}");
                let _ = writeln!(csv, "{id},,,,,,,\"{}\"", e.to_string().replace('"', "'"));
            }
        }
    }
    write_atomic(&args.out_dir.join(SUMMARY_FILE), csv.as_bytes())?;
    manifest.output(SUMMARY_FILE.to_string(), csv.as_bytes());
    manifest.finish(&args.out_dir.join(MANIFEST_FILE))?;
    if failed > 0 {
        return Err(Failure::Input(anyhow!("{failed} of {} campaigns failed", results.len())));
    }
    Ok(())
}

/// Which requests are high priority.
#[derive(Debug, PartialEq, Eq)]
pub enum HighSpec {
    Ids(Vec<u32>),
    TopFrequent(usize),
}

pub fn parse_high(spec: &str) -> anyhow::Result<HighSpec> {
    if let Some(n) = spec.strip_prefix("auto-topfreq:") {
        let n = n.parse().with_context(|| format!("bad request count in `{spec}`"))?;
        return Ok(HighSpec::TopFrequent(n));
    }
    if spec.trim().is_empty() {
        return Ok(HighSpec::Ids(Vec::new()));
    }
    let ids = spec
        .split(',')
        .map(|s| s.trim().parse::<u32>().with_context(|| format!("bad request id `{s}`")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(HighSpec::Ids(ids))
}

fn load_campaigns(dir: &Path, manifest: &mut RunManifest) -> anyhow::Result<BTreeMap<u32, Vec<FaultSet>>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("request-") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    let mut faults = BTreeMap::new();
    for path in files {
        manifest.input(&path)?;
        let text = fs::read_to_string(&path)?;
        let rep: CampaignReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let valid = rep.valid_faults.into_iter().map(|f| f.vars).collect();
        if faults.insert(rep.request_id, valid).is_some() {
            bail!("request {} appears twice in {}", rep.request_id, dir.display());
        }
    }
    if faults.is_empty() {
        bail!("no campaign results in {}", dir.display());
    }
    Ok(faults)
}

#[derive(Debug, Serialize)]
struct SymbolRecord {
    var: ApiVar,
    service: String,
    api: String,
    replica: u32,
}

/// Per-level plan output file.
#[derive(Debug, Serialize)]
struct PlanReport {
    manifest: String,
    budget: usize,
    feasible: bool,
    exact: bool,
    selected: Vec<SymbolRecord>,
    soft_covered: Option<usize>,
    soft_total: Option<usize>,
    cr: Option<f64>,
    mcg: Option<f64>,
    afvr: Option<f64>,
}

fn plan_report(system: &SimulatedSystem, level: &SweepLevel) -> PlanReport {
    let plan = level.plan.as_ref();
    let selected = plan
        .map(|p| {
            p.selected
                .iter()
                .map(|var| match system.symbol(var) {
                    Some(s) => SymbolRecord { var, service: s.service.clone(), api: s.api.clone(), replica: s.replica },
                    None => SymbolRecord { var, service: String::new(), api: String::new(), replica: 0 },
                })
                .collect()
        })
        .unwrap_or_default();
    PlanReport {
        manifest: MANIFEST_FILE.to_string(),
        budget: level.budget,
        feasible: level.feasible(),
        exact: plan.is_some_and(|p| p.exact),
        selected,
        soft_covered: plan.map(|p| p.soft_covered),
        soft_total: plan.map(|p| p.soft_total),
        cr: level.cr(),
        mcg: level.mcg.map(|m| m.value()),
        afvr: level.afvr,
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn harden(args: &HardenArgs) -> CmdResult {
    let high_spec = parse_high(&args.high).map_err(Failure::Usage)?;
    if args.budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Failure::Usage(anyhow!("--budgets must be strictly increasing")));
    }
    let mut manifest = RunManifest::new("harden", args, None);
    let system = load_system(&args.system, &mut manifest)?;
    let faults = load_campaigns(&args.campaign_dir, &mut manifest)?;
    for &id in faults.keys() {
        system.request(id).map_err(|e| Failure::Input(e.into()))?;
    }
    let high = match high_spec {
        HighSpec::Ids(ids) => {
            if let Some(id) = ids.iter().find(|id| !faults.contains_key(id)) {
                return Err(Failure::Input(
                    anyhow!(SimError::UnknownRequest(*id)).context("high-priority request has no campaign result"),
                ));
            }
            ids
        }
        HighSpec::TopFrequent(n) => {
            let mut ranked: Vec<(u64, u32)> =
                faults.keys().map(|&id| (system.frequency(id).unwrap_or(0), id)).collect();
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            ranked.into_iter().take(n).map(|(_, id)| id).collect()
        }
    };
    let template =
        HardeningInstance::from_faults(&high, &faults, 0, system.n_vars).map_err(|e| Failure::Input(e.into()))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let pool = thread_pool(args.jobs)?;

    let start = Instant::now();
    let method = args.method.into();
    let levels = pool
        .install(|| {
            args.budgets
                .par_iter()
                .map(|&b| evaluate_level(&template, b, method, &system, &faults))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(|e| Failure::Input(e.into()))?;
    let sweep = BudgetSweep::assemble(levels).map_err(|e| Failure::Usage(e.into()))?;
    manifest.phase("sweep", millis(start));

    let mut csv = String::from("budget,feasible,exact,n_selected,selected,soft_covered,soft_total,cr,mcg,afvr\n");
    for level in &sweep.levels {
        let rep = plan_report(&system, level);
        let text = serde_json::to_string_pretty(&rep).map_err(anyhow::Error::from)? + "\n";
        let name = format!("plan-b{}.json", level.budget);
        write_atomic(&args.out.join(&name), text.as_bytes())?;
        manifest.output(name, text.as_bytes());
        if !level.feasible() {
            log::warn!("budget {}: hard clauses unsatisfiable within budget", level.budget);
        }
        let selected: Vec<String> = rep.selected.iter().map(|s| s.var.0.to_string()).collect();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            level.budget,
            rep.feasible,
            rep.exact,
            selected.len(),
            selected.join(" "),
            opt(rep.soft_covered),
            opt(rep.soft_total),
            opt_f(rep.cr),
            opt_f(rep.mcg),
            opt_f(rep.afvr)
        );
    }
    write_atomic(&args.out.join(SWEEP_FILE), csv.as_bytes())?;
    manifest.output(SWEEP_FILE.to_string(), csv.as_bytes());
    manifest.finish(&args.out.join(MANIFEST_FILE))?;
    if sweep.levels.iter().all(|l| !l.feasible()) {
        return Err(Failure::Infeasible(anyhow!("no budget level admits a cover of the high-priority faults")));
    }
    Ok(())
}

fn file_label(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}
