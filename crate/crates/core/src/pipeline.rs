//! On-disk experiment stages: generate, classify, collect, train, tune, bench, report.
//!
//! Every stage reads and writes plain files under one workspace directory and
//! leaves a manifest in `manifests/<stage>.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gridshed_milp::{check_solution, solve_bb, ClockMode, MilpProblem, SolveStatus, SolverConfig};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{encode_problem, BipartiteGraph};
use crate::error::{Error, Result};
use crate::eval::{build_report, classify_difficulty, emit_report, grid_search, primal_integral, split_dataset, BenchmarkReport, Difficulty, RunRecord, Split};
use crate::grid::{load_distribution, load_instance, load_network, sample_instance, synthetic_network, InstanceDistribution, NetworkModel, OpsInstance, SyntheticConfig};
use crate::ops::{build_ops_milp, risk_bounds, OpsConfig, OpsVariableMap, RiskBounds};
use crate::policy::{self, PolicyModel, TrainConfig, TrainingSample};
use crate::refine::{solve_refined, RefinementConfig, Variant};

pub const THREADS_ENV: &str = "GRIDSHED_THREADS";
pub const BASELINE: &str = "bb";

/// Sizes the global worker pool from `GRIDSHED_THREADS` (once per process).
pub fn configure_threads() {
    let n = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    // a second call finds the pool already built, which is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
}

fn write_manifest<T: Serialize>(ws: &Path, stage: &str, seed: u64, config: &T) -> Result<()> {
    let value = serde_json::to_value(config)?;
    let manifest = Manifest {
        stage: stage.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256: sha256_hex(serde_json::to_string(&value)?.as_bytes()),
        config: value,
    };
    write_json(&ws.join("manifests").join(format!("{stage}.json")), &manifest)
}

/// Workspace file layout.
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn network(&self) -> PathBuf {
        self.root.join("network.json")
    }
    pub fn distribution(&self) -> PathBuf {
        self.root.join("distribution.json")
    }
    pub fn instance(&self, id: &str) -> PathBuf {
        self.root.join("instances").join(format!("{id}.json"))
    }
    pub fn classification(&self) -> PathBuf {
        self.root.join("classification.csv")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn graph(&self, id: &str) -> PathBuf {
        self.root.join("graphs").join(format!("{id}.json"))
    }
    pub fn label(&self, part: &str, id: &str) -> PathBuf {
        self.root.join("labels").join(part).join(format!("{id}.json"))
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }
    pub fn tuning(&self) -> PathBuf {
        self.root.join("tuning.json")
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("bench").join("runs.json")
    }

    pub fn ops_path(&self) -> PathBuf {
        self.root.join("ops.json")
    }

    /// Formulation settings fixed at `gen` time; defaults when absent.
    pub fn ops_config(&self) -> OpsConfig {
        read_json(&self.ops_path()).unwrap_or_default()
    }

    fn instance_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("instances"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenOptions {
    pub network: Option<PathBuf>,
    pub dist_config: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub ops: OpsConfig,
    pub count: usize,
    pub seed: u64,
}

/// Writes the network, the distribution and `count` sampled instances.
pub fn generate(ws: &Workspace, opts: &GenOptions) -> Result<Vec<String>> {
    let (net, mut dist): (NetworkModel, InstanceDistribution) = match (&opts.network, &opts.dist_config) {
        (Some(n), Some(d)) => (load_network(n)?, load_distribution(d)?),
        (None, None) => synthetic_network(&SyntheticConfig {
            seed: opts.seed,
            ..opts.synthetic.clone()
        })?,
        _ => return Err(Error::InvalidParameter("--network and --dist-config go together".into())),
    };
    dist.seed = opts.seed;
    dist.validate(&net)?;
    opts.ops.validate()?;
    fs::create_dir_all(&ws.root)?;
    write_json(&ws.ops_path(), &opts.ops)?;
    net.save(&ws.network())?;
    dist.save(&ws.distribution())?;
    fs::create_dir_all(ws.root.join("instances"))?;
    let mut ids = Vec::with_capacity(opts.count);
    for day in 0..opts.count {
        let id = format!("day{day:04}");
        sample_instance(&net, &dist, day as u64).save(&ws.instance(&id))?;
        ids.push(id);
    }
    write_manifest(&ws.root, "gen", opts.seed, opts)?;
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub instance: String,
    pub shed_mwh: f64,
    pub class: Difficulty,
}

pub fn classify(ws: &Workspace, threshold: Option<f64>) -> Result<Vec<ClassRecord>> {
    let net = load_network(&ws.network())?;
    let dist = load_distribution(&ws.distribution())?;
    let threshold = threshold.unwrap_or(dist.budget_threshold);
    let cfg = ws.ops_config();
    let ids = ws.instance_ids()?;
    let records: Vec<Result<ClassRecord>> = ids
        .par_iter()
        .map(|id| {
            let inst = load_instance(&ws.instance(id))?;
            let (class, shed_mwh) = classify_difficulty(&inst, &net, &cfg, threshold)?;
            Ok(ClassRecord {
                instance: id.clone(),
                shed_mwh,
                class,
            })
        })
        .collect();
    let records: Vec<ClassRecord> = records.into_iter().collect::<Result<_>>()?;
    let mut w = csv::Writer::from_path(ws.classification())?;
    w.write_record(["instance", "shed_mwh", "class"])?;
    for r in &records {
        let class = match r.class {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        };
        w.write_record([r.instance.as_str(), &r.shed_mwh.to_string(), class])?;
    }
    w.flush()?;
    write_manifest(&ws.root, "classify", dist.seed, &threshold)?;
    Ok(records)
}

fn hard_instances(ws: &Workspace) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(ws.classification())?;
    let mut ids = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(2) == Some("hard") {
            ids.push(rec.get(0).unwrap_or_default().to_string());
        }
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub z: Vec<bool>,
    /// Objective in MW-equivalent units (problem objective times the MVA base).
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub instance: String,
    /// Relative to the workspace root.
    pub graph: String,
    pub switch_lines: Vec<String>,
    /// Ascending by objective.
    pub pool: Vec<PoolEntry>,
    pub status: SolveStatus,
    pub nodes: usize,
    pub best_objective: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectOptions {
    pub solver: SolverConfig,
    pub split_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectSummary {
    pub split: Split,
    pub dropped: Vec<String>,
}

struct Prepared {
    inst: OpsInstance,
    problem: MilpProblem,
    map: OpsVariableMap,
}

fn prepare(ws: &Workspace, net: &NetworkModel, cfg: &OpsConfig, id: &str) -> Result<Prepared> {
    let inst = load_instance(&ws.instance(id))?;
    let (problem, map) = build_ops_milp(&inst, net, cfg)?;
    Ok(Prepared { inst, problem, map })
}

fn collect_one(ws: &Workspace, net: &NetworkModel, id: &str, solver: &SolverConfig) -> Result<Option<LabelRecord>> {
    let Prepared { problem, map, .. } = prepare(ws, net, &ws.ops_config(), id)?;
    let targets = map.switch_indices();
    let (graph, _) = encode_problem(&problem, &targets)?;
    fs::create_dir_all(ws.root.join("graphs"))?;
    graph.save(&ws.graph(id))?;
    let trace = solve_bb(&problem, solver)?;
    let mut pool: Vec<PoolEntry> = trace
        .incumbents
        .iter()
        .filter(|inc| check_solution(&problem, &inc.x, solver.feasibility_tol))
        .map(|inc| PoolEntry {
            z: map.switch_values(&inc.x),
            h: inc.objective * net.base_mva,
        })
        .collect();
    pool.sort_by(|a, b| a.h.total_cmp(&b.h));
    let Some(best) = trace.best_objective() else {
        log::warn!("{id}: no incumbent within the collection budget, dropped");
        return Ok(None);
    };
    Ok(Some(LabelRecord {
        instance: id.into(),
        graph: format!("graphs/{id}.json"),
        switch_lines: map.switch_line_ids(),
        pool,
        status: trace.status,
        nodes: trace.nodes,
        best_objective: best,
    }))
}

/// Splits the hard instances and labels each one with a long solve.
pub fn collect(ws: &Workspace, opts: &CollectOptions) -> Result<CollectSummary> {
    let net = load_network(&ws.network())?;
    let hard = hard_instances(ws)?;
    if hard.is_empty() {
        return Err(Error::Empty("hard instance set".into()));
    }
    let split = split_dataset(&hard, opts.split_seed)?;
    let parts = [("train", &split.train), ("validation", &split.validation), ("test", &split.test)];
    let jobs: Vec<(&str, &String)> = parts.iter().flat_map(|(p, ids)| ids.iter().map(move |id| (*p, id))).collect();
    let labels: Vec<Result<Option<LabelRecord>>> = jobs
        .par_iter()
        .map(|(_, id)| collect_one(ws, &net, id, &opts.solver))
        .collect();
    let mut kept = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let mut dropped = Vec::new();
    for ((part, id), label) in jobs.iter().zip(labels) {
        match label? {
            Some(rec) => {
                write_json(&ws.label(part, id), &rec)?;
                match *part {
                    "train" => kept.train.push((*id).clone()),
                    "validation" => kept.validation.push((*id).clone()),
                    _ => kept.test.push((*id).clone()),
                }
            }
            None => dropped.push((*id).clone()),
        }
    }
    let summary = CollectSummary { split: kept, dropped };
    write_json(&ws.split(), &summary)?;
    write_manifest(&ws.root, "collect", opts.split_seed, opts)?;
    Ok(summary)
}

fn load_split(ws: &Workspace) -> Result<Split> {
    Ok(read_json::<CollectSummary>(&ws.split())?.split)
}

fn load_label(ws: &Workspace, part: &str, id: &str) -> Result<LabelRecord> {
    read_json(&ws.label(part, id))
}

pub fn training_sample(ws: &Workspace, label: &LabelRecord) -> Result<TrainingSample> {
    let graph = BipartiteGraph::load(&ws.root.join(&label.graph))?;
    TrainingSample::new(graph, label.pool.iter().map(|e| (e.z.clone(), e.h)).collect())
}

/// Trains on `labels/train` only.
pub fn train_stage(ws: &Workspace, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let split = load_split(ws)?;
    let samples: Vec<TrainingSample> = split
        .train
        .iter()
        .map(|id| training_sample(ws, &load_label(ws, "train", id)?))
        .collect::<Result<_>>()?;
    let (model, history) = policy::train(&samples, cfg)?;
    model.save(&ws.model())?;
    let mut w = csv::Writer::from_path(ws.root.join("training_history.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;
    write_manifest(&ws.root, "train", cfg.seed, cfg)?;
    Ok(history)
}

/// Everything a method needs to run on one instance.
pub struct InstanceContext {
    pub id: String,
    pub problem: MilpProblem,
    pub map: OpsVariableMap,
    pub targets: Vec<usize>,
    pub probs: Vec<f64>,
    pub bounds: RiskBounds,
    pub reference: f64,
}

fn contexts(ws: &Workspace, part: &str, ids: &[String], model: &PolicyModel) -> Result<Vec<InstanceContext>> {
    let net = load_network(&ws.network())?;
    let cfg = ws.ops_config();
    ids.par_iter()
        .map(|id| {
            let label = load_label(ws, part, id)?;
            let Prepared { inst, problem, map } = prepare(ws, &net, &cfg, id)?;
            let graph = BipartiteGraph::load(&ws.root.join(&label.graph))?;
            let probs = model.forward(&graph)?;
            let bounds = risk_bounds(&inst.switch_risks(&net), inst.risk_budget);
            Ok(InstanceContext {
                id: id.clone(),
                targets: map.switch_indices(),
                problem,
                map,
                probs,
                bounds,
                reference: label.best_objective,
            })
        })
        .collect()
}

/// A benchmarked method: plain branch-and-bound or a refinement variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub refinement: Option<RefinementConfig>,
}

impl MethodSpec {
    pub fn baseline() -> Self {
        Self {
            name: BASELINE.into(),
            refinement: None,
        }
    }

    pub fn refined(cfg: RefinementConfig) -> Self {
        Self {
            name: cfg.variant.name().into(),
            refinement: Some(cfg),
        }
    }
}

pub fn run_method(ctx: &InstanceContext, method: &MethodSpec, solver: &SolverConfig) -> Result<RunRecord> {
    let (trace, problem, params) = match &method.refinement {
        None => (solve_bb(&ctx.problem, solver)?, None, String::new()),
        Some(cfg) => {
            let r = solve_refined(&ctx.problem, &ctx.targets, &ctx.probs, ctx.bounds, cfg, solver)?;
            let params = format!(
                "variant={};phi={};phi_prime={};k0={};k1={};delta0={};delta1={};fixed_ones={};retries={}",
                cfg.variant.name(),
                cfg.phi,
                cfg.phi_prime,
                r.sets.zeros.len(),
                r.sets.ones.len(),
                r.delta0,
                r.delta1,
                r.fixed_ones,
                r.retries
            );
            (r.trace, Some(r.problem), params)
        }
    };
    let best = trace.best();
    if let (Some(inc), Some(p)) = (best, &problem) {
        debug_assert!(check_solution(p, &inc.x, solver.feasibility_tol * 10.0));
    }
    let switches = best
        .map(|inc| ctx.map.switch_line_ids().into_iter().zip(ctx.map.switch_values(&inc.x)).collect())
        .unwrap_or_default();
    Ok(RunRecord {
        method: method.name.clone(),
        instance: ctx.id.clone(),
        timeline: trace.timeline.clone(),
        best: trace.best_objective(),
        switches,
        params,
    })
}

fn horizon(solver: &SolverConfig) -> Result<f64> {
    let h = match solver.clock_mode {
        ClockMode::Wall => solver.time_limit,
        ClockMode::NodeCount => solver.time_limit.min(solver.node_limit as f64),
    };
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter("benchmark needs a finite positive time limit".into()));
    }
    Ok(h)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneOptions {
    pub solver: SolverConfig,
    pub variants: Vec<Variant>,
    pub phi_grid: Vec<f64>,
    pub phi_prime_grid: Vec<f64>,
}

impl TuneOptions {
    pub fn default_grids(solver: SolverConfig) -> Self {
        Self {
            solver,
            variants: vec![Variant::PasNd, Variant::DomainPas],
            phi_grid: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            phi_prime_grid: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35],
        }
    }

    pub fn points(&self, variant: Variant) -> Vec<(f64, f64)> {
        match variant {
            Variant::DomainPas => self
                .phi_grid
                .iter()
                .flat_map(|&a| self.phi_prime_grid.iter().map(move |&b| (a, b)))
                .collect(),
            _ => self.phi_grid.iter().map(|&a| (a, 0.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedPoint {
    pub phi: f64,
    pub phi_prime: f64,
    pub mean_pi: f64,
}

pub type Tuning = BTreeMap<Variant, TunedPoint>;

/// Grid search on the validation split, scored by mean primal integral.
pub fn tune(ws: &Workspace, opts: &TuneOptions) -> Result<Tuning> {
    let model = PolicyModel::load(&ws.model())?;
    let split = load_split(ws)?;
    let ctxs = contexts(ws, "validation", &split.validation, &model)?;
    if ctxs.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    let h = horizon(&opts.solver)?;
    let mut tuning = Tuning::new();
    let mut table = csv::Writer::from_path(ws.root.join("tuning.csv"))?;
    table.write_record(["variant", "phi", "phi_prime", "mean_pi"])?;
    for &variant in &opts.variants {
        let points = opts.points(variant);
        let mut rows = Vec::new();
        let ((phi, phi_prime), mean_pi) = grid_search(&points, |phi, phi_prime| {
            let method = MethodSpec::refined(RefinementConfig::new(variant, phi, phi_prime));
            let pis: Vec<Result<f64>> = ctxs
                .par_iter()
                .map(|ctx| {
                    let run = run_method(ctx, &method, &opts.solver)?;
                    let v_star = run.best.map_or(ctx.reference, |b| b.min(ctx.reference));
                    Ok(primal_integral(&run.timeline, v_star, h))
                })
                .collect();
            let total: f64 = pis.into_iter().sum::<Result<f64>>()?;
            let mean = total / ctxs.len() as f64;
            rows.push((phi, phi_prime, mean));
            Ok(mean)
        })?;
        for (a, b, m) in rows {
            table.write_record([variant.name().to_string(), a.to_string(), b.to_string(), m.to_string()])?;
        }
        tuning.insert(variant, TunedPoint { phi, phi_prime, mean_pi });
    }
    table.flush()?;
    write_json(&ws.tuning(), &tuning)?;
    write_manifest(&ws.root, "tune", 0, opts)?;
    Ok(tuning)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchOptions {
    pub solver: SolverConfig,
    pub methods: Vec<MethodSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRuns {
    pub horizon: f64,
    pub runs: Vec<RunRecord>,
    pub reference: BTreeMap<String, f64>,
}

/// Default method list: the baseline plus every variant, using tuned
/// parameters when `tuning.json` exists and `fallback` otherwise.
pub fn default_methods(ws: &Workspace, fallback: (f64, f64)) -> Result<Vec<MethodSpec>> {
    let tuning: Tuning = if ws.tuning().exists() {
        read_json(&ws.tuning())?
    } else {
        Tuning::new()
    };
    let mut methods = vec![MethodSpec::baseline()];
    for v in [Variant::PasNd, Variant::DomainPas, Variant::Pas] {
        // classic PaS borrows the tuned set size of PaS+ND unless tuned itself
        let tuned = tuning.get(&v).or(if v == Variant::Pas { tuning.get(&Variant::PasNd) } else { None });
        let phi = tuned.map_or(fallback.0, |t| t.phi);
        let phi_prime = match v {
            Variant::DomainPas => tuned.map_or(fallback.1, |t| t.phi_prime),
            _ => 0.0,
        };
        methods.push(MethodSpec::refined(RefinementConfig::new(v, phi, phi_prime)));
    }
    Ok(methods)
}

/// Runs every method on the test split and stores the traces.
pub fn bench(ws: &Workspace, opts: &BenchOptions) -> Result<BenchRuns> {
    let model = PolicyModel::load(&ws.model())?;
    let split = load_split(ws)?;
    let ctxs = contexts(ws, "test", &split.test, &model)?;
    if ctxs.is_empty() || opts.methods.is_empty() {
        return Err(Error::Empty("benchmark".into()));
    }
    let h = horizon(&opts.solver)?;
    let cells: Vec<(&MethodSpec, &InstanceContext)> = opts.methods.iter().flat_map(|m| ctxs.iter().map(move |c| (m, c))).collect();
    let runs: Vec<Result<RunRecord>> = cells.par_iter().map(|(m, c)| run_method(c, m, &opts.solver)).collect();
    let out = BenchRuns {
        horizon: h,
        runs: runs.into_iter().collect::<Result<_>>()?,
        reference: ctxs.iter().map(|c| (c.id.clone(), c.reference)).collect(),
    };
    write_json(&ws.runs(), &out)?;
    write_manifest(&ws.root, "bench", 0, opts)?;
    Ok(out)
}

/// Scores stored benchmark runs and writes the report files into `out`.
pub fn report(ws: &Workspace, out: &Path) -> Result<BenchmarkReport> {
    let runs: BenchRuns = read_json(&ws.runs())?;
    let rep = build_report(runs.runs, &runs.reference, runs.horizon)?;
    emit_report(&rep, out)?;
    write_manifest(&ws.root, "report", 0, &out.to_string_lossy())?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn tune_grid_sizes() {
        let t = TuneOptions::default_grids(SolverConfig::default());
        assert_eq!(t.points(Variant::DomainPas).len(), 35);
        assert_eq!(t.points(Variant::PasNd).len(), 5);
    }
}
