//! Experiment harness: run solution methods over instance batches, compute
//! comparison indicators, and emit machine-readable reports.
//!
//! A *cell* is one (instance, method) pair.  Cells are executed
//! independently (optionally in parallel), each writing its own result file
//! under `cells/` and its event log under `logs/`; a rerun skips any cell
//! whose result file already exists, so interrupted batches resume for
//! free (delete a cell file to force a redo).  Aggregation then reads the
//! cell files back and writes `records.{csv,json}` plus per-method
//! `summary.{csv,json}` with identical numerics in both formats.

use crate::generator::{generate, GeneratorError, GeneratorParams};
use crate::instance::{load_instance, Instance, InstanceError, ProductCatalog};
use crate::metapbd::{
    benders_solve, events_to_jsonl, heuristic_seed, meta_pbd, phase1_only, phase2_only, Clock,
    Event, MetaError, MetaOutcome, MetaParams, SearchState, WallClock,
};
use crate::models::{
    build_lsndp, build_master, verify_solution, FlowDomain, FlowSolution, IndexedPartition,
    LsndpModel, ModelError, VehicleSolution,
};
use crate::partition::{build_partition_sequence, PartitionError, ProductPartition};
use crate::solver::{
    backend_from_env, SolveLimits, SolveStatus, SolverBackend, SolverError, WarmStart,
    FEASIBILITY_TOL,
};
use crate::timegraph::expand;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("empty record batch")]
    EmptyBatch,
    #[error("record batch is unbalanced: {0}")]
    MismatchedBatch(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("unexpected solve outcome: {0}")]
    Solve(String),
}

/// A solution method the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The full model handed to the MILP backend in one piece (warm-started
    /// with the shared heuristic seed, like every other method).
    Direct,
    /// Static Benders at the coarsest level: one super-product.
    Single,
    /// Static Benders with one super-product per product family.
    Families,
    /// Static Benders with the products dealt into `|families|` subsets
    /// uniformly at random (seeded).
    Random,
    /// The adaptive two-phase controller.
    MetaPbd,
    /// Controller phase one only.
    Phase1Only,
    /// Controller phase two only.
    Phase2Only,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Direct,
        Method::Single,
        Method::Families,
        Method::Random,
        Method::MetaPbd,
        Method::Phase1Only,
        Method::Phase2Only,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Single => "single",
            Method::Families => "families",
            Method::Random => "random",
            Method::MetaPbd => "meta_pbd",
            Method::Phase1Only => "phase1_only",
            Method::Phase2Only => "phase2_only",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::UnknownMethod(s.into()))
    }
}

/// One completed cell.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub instance: String,
    pub method: String,
    pub ub: f64,
    pub lb: f64,
    /// `(UB − LB)/UB` when `UB > 0`, else 0.
    pub gap: f64,
    pub wall_seconds: f64,
    /// Aggregation levels visited, in order (empty for `direct`; one entry
    /// for the static methods).
    pub k_trajectory: Vec<usize>,
    pub n_cuts: usize,
    pub n_master_solutions: usize,
    /// Pricing subproblems generated: one per integer master solution
    /// handed to the flow subproblem.
    pub n_subproblems: usize,
    /// How many of those subproblems were feasible.
    pub n_subproblems_feasible: usize,
}

fn record_gap(ub: f64, lb: f64) -> f64 {
    if ub > 0.0 {
        ((ub - lb) / ub).max(0.0)
    } else {
        0.0
    }
}

/// Per-(instance, method) comparison indicators against the batch's best.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IndicatorRow {
    pub instance: String,
    pub method: String,
    /// `(UB_x − UB_best)/UB_x`; zero iff this method ties the best bound.
    pub gap_ub: f64,
    /// `(LB_best − LB_x)/LB_best`; zero iff this method ties the best bound.
    pub gap_lb: f64,
}

/// Per-method aggregation of the indicator rows.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MethodIndicators {
    pub method: String,
    pub mean_gap_ub: f64,
    pub mean_gap_lb: f64,
    /// Instances on which this method achieved the batch-best upper bound
    /// (ties count for every tied method).
    pub nb_ub_best: usize,
    /// Same for the lower bound.
    pub nb_lb_best: usize,
    pub n_records: usize,
}

/// Ties within this relative tolerance count as "best".
const TIE_TOL: f64 = 1e-9;

fn is_tied(value: f64, best: f64) -> bool {
    (value - best).abs() <= TIE_TOL * best.abs().max(1.0)
}

/// Compare methods across a balanced batch: every method must cover the
/// same instance set.
pub fn compute_indicators(
    records: &[RunRecord],
) -> Result<(Vec<IndicatorRow>, Vec<MethodIndicators>), BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyBatch);
    }
    let mut per_method: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        if !per_method.entry(&r.method).or_default().insert(&r.instance) {
            return Err(BenchError::MismatchedBatch(format!(
                "duplicate record for instance `{}` method `{}`",
                r.instance, r.method
            )));
        }
    }
    let reference = per_method.values().next().unwrap().clone();
    for (method, set) in &per_method {
        if *set != reference {
            return Err(BenchError::MismatchedBatch(format!(
                "method `{method}` covers a different instance set"
            )));
        }
    }

    let mut best_ub: BTreeMap<&str, f64> = BTreeMap::new();
    let mut best_lb: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records {
        best_ub
            .entry(&r.instance)
            .and_modify(|b| *b = b.min(r.ub))
            .or_insert(r.ub);
        best_lb
            .entry(&r.instance)
            .and_modify(|b| *b = b.max(r.lb))
            .or_insert(r.lb);
    }

    let mut rows = Vec::with_capacity(records.len());
    let mut agg: BTreeMap<&str, MethodIndicators> = BTreeMap::new();
    for r in records {
        let (ub_best, lb_best) = (best_ub[r.instance.as_str()], best_lb[r.instance.as_str()]);
        let gap_ub = if is_tied(r.ub, ub_best) { 0.0 } else { (r.ub - ub_best) / r.ub };
        let gap_lb = if is_tied(r.lb, lb_best) || lb_best <= 0.0 {
            0.0
        } else {
            (lb_best - r.lb) / lb_best
        };
        let entry = agg.entry(&r.method).or_insert_with(|| MethodIndicators {
            method: r.method.clone(),
            mean_gap_ub: 0.0,
            mean_gap_lb: 0.0,
            nb_ub_best: 0,
            nb_lb_best: 0,
            n_records: 0,
        });
        entry.mean_gap_ub += gap_ub;
        entry.mean_gap_lb += gap_lb;
        entry.nb_ub_best += usize::from(gap_ub == 0.0);
        entry.nb_lb_best += usize::from(gap_lb == 0.0);
        entry.n_records += 1;
        rows.push(IndicatorRow {
            instance: r.instance.clone(),
            method: r.method.clone(),
            gap_ub,
            gap_lb,
        });
    }
    let summary = agg
        .into_values()
        .map(|mut m| {
            m.mean_gap_ub /= m.n_records as f64;
            m.mean_gap_lb /= m.n_records as f64;
            m
        })
        .collect();
    Ok((rows, summary))
}

/// One root-relaxation comparison point.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RootRow {
    pub k: usize,
    /// Root (LP) value of the aggregated master at this level.
    pub master_root: f64,
    /// Root value of the full model.
    pub lsndp_root: f64,
    /// `(r_full − r_master)/r_full` — how much bound the aggregation gives
    /// up at the root.
    pub lb_root_gap: f64,
    /// Master root solve time over full root solve time.
    pub root_time_ratio: f64,
}

/// Compare master root relaxations against the full model's across
/// aggregation levels (the levels come from the nested partition sequence
/// seeded with `seed`).
pub fn root_study(
    inst: &Instance,
    ks: &[usize],
    seed: u64,
    backend: &dyn SolverBackend,
) -> Result<Vec<RootRow>, BenchError> {
    let Some(&k_top) = ks.iter().max() else {
        return Ok(Vec::new());
    };
    let graph = expand(inst);
    let domain = FlowDomain::new(&graph, inst);
    let built = build_lsndp(&graph, inst);
    let full = backend.solve_lp(&built.model.relaxation(), &SolveLimits::exact())?;
    if full.status != SolveStatus::Optimal {
        return Err(BenchError::Solve(format!("full root relaxation ended {:?}", full.status)));
    }
    let r_full = full.objective_value();
    let t_full = full.solve_seconds.max(1e-9);

    let seq = build_partition_sequence(&inst.catalog, k_top, seed)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let indexed = IndexedPartition::new(seq.level(k), &domain)?;
        let master = build_master(&graph, inst, &indexed);
        let res = backend.solve_lp(&master.model.relaxation(), &SolveLimits::exact())?;
        if res.status != SolveStatus::Optimal {
            return Err(BenchError::Solve(format!(
                "master root relaxation at K={k} ended {:?}",
                res.status
            )));
        }
        let r_k = res.objective_value();
        rows.push(RootRow {
            k,
            master_root: r_k,
            lsndp_root: r_full,
            lb_root_gap: if r_full.abs() > 1e-12 { ((r_full - r_k) / r_full).max(0.0) } else { 0.0 },
            root_time_ratio: res.solve_seconds.max(1e-9) / t_full,
        });
    }
    Ok(rows)
}

/// Deal the products into `|families|` subsets uniformly at random
/// (seeded): shuffle, then round-robin so no subset is empty.
pub fn random_partition(
    catalog: &ProductCatalog,
    seed: u64,
) -> Result<ProductPartition, PartitionError> {
    let n_subsets = catalog.families.len().clamp(1, catalog.products.len().max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut products = catalog.products.clone();
    products.shuffle(&mut rng);
    let mut subsets = vec![BTreeSet::new(); n_subsets];
    for (i, p) in products.into_iter().enumerate() {
        subsets[i % n_subsets].insert(p);
    }
    ProductPartition::from_subsets(subsets)
}

fn lsndp_warm(built: &LsndpModel, y: &VehicleSolution, x: &FlowSolution) -> Vec<f64> {
    let mut v = vec![0.0; built.model.vars.len()];
    for (i, var) in built.y.iter().enumerate() {
        v[var.0] = y.y[i] as f64;
    }
    for (key, var) in &built.x {
        if let Some(val) = x.x.get(key) {
            v[var.0] = *val;
        }
    }
    v
}

/// Run one method on one instance.  All methods start from the same
/// heuristic seed; the static Benders methods and `direct` get the
/// combined two-phase budget as their time limit.
pub fn run_method(
    inst: &Instance,
    instance_id: &str,
    method: Method,
    params: &MetaParams,
    backend: &dyn SolverBackend,
    clock: &dyn Clock,
) -> Result<(RunRecord, Vec<Event>), BenchError> {
    let record = |ub, lb, wall, trajectory, cuts, masters, sps, sps_ok, events: Vec<Event>| {
        (
            RunRecord {
                instance: instance_id.to_string(),
                method: method.name().to_string(),
                ub,
                lb,
                gap: record_gap(ub, lb),
                wall_seconds: wall,
                k_trajectory: trajectory,
                n_cuts: cuts,
                n_master_solutions: masters,
                n_subproblems: sps,
                n_subproblems_feasible: sps_ok,
            },
            events,
        )
    };

    let from_outcome = |out: MetaOutcome| {
        record(
            out.ub,
            out.lb,
            out.wall_seconds,
            out.k_trajectory.clone(),
            out.cut_counts.0 + out.cut_counts.1,
            out.n_master_solves,
            out.n_subproblem_solves,
            out.n_subproblems_feasible,
            out.events,
        )
    };

    match method {
        Method::MetaPbd => Ok(from_outcome(meta_pbd(inst, params, backend, clock)?)),
        Method::Phase1Only => Ok(from_outcome(phase1_only(inst, params, backend, clock)?)),
        Method::Phase2Only => Ok(from_outcome(phase2_only(inst, params, backend, clock)?)),
        Method::Direct => {
            let t0 = clock.now();
            let graph = expand(inst);
            let seed = heuristic_seed(&graph, inst, backend)?;
            let built = build_lsndp(&graph, inst);
            let warm = WarmStart {
                solution: Some(lsndp_warm(&built, &seed.y, &seed.x)),
                cutoff: Some(seed.ub),
            };
            let mut limits = SolveLimits::with_gap(params.gap);
            limits.time_seconds = Some((params.t1_max + params.t2_max - (clock.now() - t0)).max(1e-3));
            let res = backend.solve_milp(&built.model, &limits, &warm)?;
            let mut events = vec![Event::Seed { t: t0, lb: seed.lb, ub: seed.ub }];
            let (mut ub, mut lb) = (seed.ub, seed.lb);
            if let Some(p) = &res.primal {
                let y = built.vehicle_solution(p)?;
                let x = built.flow_solution(p);
                let report = verify_solution(&graph, inst, &y, &x, FEASIBILITY_TOL);
                if report.is_ok() && report.objective < ub {
                    ub = report.objective;
                    events.push(Event::UpperBound { t: clock.now(), k: 0, ub });
                }
            }
            if res.status == SolveStatus::Infeasible {
                // The cutoff excluded everything: the seed is optimal.
                lb = ub;
            } else if let Some(b) = res.bound {
                lb = lb.max(b.min(ub));
            }
            events.push(Event::LowerBound { t: clock.now(), k: 0, lb });
            Ok(record(ub, lb, clock.now() - t0, Vec::new(), 0, 1, 0, 0, events))
        }
        Method::Single | Method::Families | Method::Random => {
            let t0 = clock.now();
            let graph = expand(inst);
            let seed = heuristic_seed(&graph, inst, backend)?;
            let partition = match method {
                Method::Single => ProductPartition::whole(&inst.catalog),
                Method::Families => ProductPartition::from_subsets(inst.catalog.families.clone())?,
                _ => random_partition(&inst.catalog, params.seed)?,
            };
            let mut state = SearchState::new(seed.lb, seed.ub, Some((seed.y, seed.x)));
            state.events.push(Event::Seed { t: clock.now(), lb: state.lb, ub: state.ub });
            let static_params = MetaParams {
                t1_max: params.t1_max + params.t2_max - (clock.now() - t0),
                ..*params
            };
            benders_solve(inst, &partition, &static_params, &mut state, backend, clock)?;
            Ok(record(
                state.ub,
                state.lb,
                clock.now() - t0,
                vec![partition.k()],
                state.cuts.len(),
                state.n_master_solves,
                state.n_subproblem_solves,
                state.n_subproblems_feasible,
                state.events,
            ))
        }
    }
}

/// Where a cell's instance comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Load from a JSON instance file.
    Path { path: PathBuf },
    /// Generate deterministically from parameters.
    Generate {
        name: String,
        #[serde(default)]
        params: GeneratorParams,
    },
}

impl InstanceSource {
    pub fn id(&self) -> String {
        match self {
            InstanceSource::Path { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.to_string_lossy().into_owned()),
            InstanceSource::Generate { name, .. } => name.clone(),
        }
    }

    pub fn load(&self) -> Result<Instance, BenchError> {
        match self {
            InstanceSource::Path { path } => Ok(load_instance(path)?),
            InstanceSource::Generate { params, .. } => Ok(generate(params)?),
        }
    }
}

fn default_jobs() -> usize {
    1
}

/// A full experiment: instances × methods under shared parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub instances: Vec<InstanceSource>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub params: MetaParams,
    /// Worker threads for cell execution (default 1 for timing fidelity).
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.instances.is_empty() {
            return Err(BenchError::Config("no instances listed".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no methods listed".into()));
        }
        let mut ids = BTreeSet::new();
        for source in &self.instances {
            if !ids.insert(source.id()) {
                return Err(BenchError::Config(format!("duplicate instance id `{}`", source.id())));
            }
        }
        let mut methods = BTreeSet::new();
        for m in &self.methods {
            if !methods.insert(*m) {
                return Err(BenchError::Config(format!("method `{m}` listed twice")));
            }
        }
        Ok(())
    }
}

/// One cell's persisted outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CellOutcome {
    Record { record: RunRecord },
    Error { instance: String, method: String, error: String },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CellFailure {
    pub instance: String,
    pub method: String,
    pub error: String,
}

/// Aggregated result of [`run_experiment`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
    /// Indicator rows over the instances completed by *every* method.
    pub indicator_rows: Vec<IndicatorRow>,
    pub method_summaries: Vec<MethodIndicators>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn cell_path(out_dir: &Path, id: &str, method: Method) -> PathBuf {
    out_dir.join("cells").join(format!("{id}__{}.json", method.name()))
}

fn log_path(out_dir: &Path, id: &str, method: Method) -> PathBuf {
    out_dir.join("logs").join(format!("{id}__{}.jsonl", method.name()))
}

/// How cells obtain their private backend handle.
pub type BackendFactory<'f> = dyn Fn() -> Result<Box<dyn SolverBackend>, SolverError> + Sync + 'f;

/// Execute one cell and persist its outcome; failures become part of the
/// report, not batch aborts.
fn run_cell(
    source: &InstanceSource,
    method: Method,
    params: &MetaParams,
    out_dir: &Path,
    factory: &BackendFactory,
) -> Result<(), BenchError> {
    let id = source.id();
    let attempt = || -> Result<(RunRecord, Vec<Event>), BenchError> {
        let inst = source.load()?;
        let backend = factory()?;
        let clock = WallClock::new();
        run_method(&inst, &id, method, params, backend.as_ref(), &clock)
    };
    let outcome = match attempt() {
        Ok((record, events)) => {
            write_atomic(&log_path(out_dir, &id, method), events_to_jsonl(&events).as_bytes())?;
            CellOutcome::Record { record }
        }
        Err(e) => CellOutcome::Error {
            instance: id.clone(),
            method: method.name().to_string(),
            error: e.to_string(),
        },
    };
    let json = serde_json::to_vec_pretty(&outcome)?;
    write_atomic(&cell_path(out_dir, &id, method), &json)?;
    Ok(())
}

fn number(v: f64) -> String {
    format!("{v}")
}

fn trajectory_field(t: &[usize]) -> String {
    t.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("-")
}

fn records_csv(records: &[RunRecord]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "instance",
        "method",
        "ub",
        "lb",
        "gap",
        "wall_seconds",
        "k_trajectory",
        "n_cuts",
        "n_master_solutions",
        "n_subproblems",
        "n_subproblems_feasible",
    ])?;
    for r in records {
        w.write_record([
            r.instance.as_str(),
            r.method.as_str(),
            &number(r.ub),
            &number(r.lb),
            &number(r.gap),
            &number(r.wall_seconds),
            &trajectory_field(&r.k_trajectory),
            &r.n_cuts.to_string(),
            &r.n_master_solutions.to_string(),
            &r.n_subproblems.to_string(),
            &r.n_subproblems_feasible.to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| BenchError::Config(e.to_string()))?)
}

fn summary_csv(summaries: &[MethodIndicators]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "mean_gap_ub", "mean_gap_lb", "nb_ub_best", "nb_lb_best", "n_records"])?;
    for m in summaries {
        w.write_record([
            m.method.as_str(),
            &number(m.mean_gap_ub),
            &number(m.mean_gap_lb),
            &m.nb_ub_best.to_string(),
            &m.nb_lb_best.to_string(),
            &m.n_records.to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| BenchError::Config(e.to_string()))?)
}

/// Read every cell file for the configured grid (missing cells are simply
/// absent — e.g. after an interrupted run).
fn collect_cells(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(Vec<RunRecord>, Vec<CellFailure>), BenchError> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for source in &config.instances {
        let id = source.id();
        for &method in &config.methods {
            let path = cell_path(out_dir, &id, method);
            if !path.exists() {
                continue;
            }
            let outcome: CellOutcome = serde_json::from_str(&fs::read_to_string(&path)?)?;
            match outcome {
                CellOutcome::Record { record } => records.push(record),
                CellOutcome::Error { instance, method, error } => {
                    failures.push(CellFailure { instance, method, error })
                }
            }
        }
    }
    Ok((records, failures))
}

/// Run all missing cells, then aggregate reports into `out_dir`:
/// `records.csv`/`records.json` (all successful cells) and
/// `summary.csv`/`summary.json` (per-method indicators over instances every
/// method completed).
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentReport, BenchError> {
    run_experiment_with(config, out_dir, &|| backend_from_env())
}

/// [`run_experiment`] with an explicit backend factory (each cell gets its
/// own handle, so factories must tolerate concurrent calls).
pub fn run_experiment_with(
    config: &ExperimentConfig,
    out_dir: &Path,
    factory: &BackendFactory,
) -> Result<ExperimentReport, BenchError> {
    config.validate()?;
    fs::create_dir_all(out_dir.join("cells"))?;
    fs::create_dir_all(out_dir.join("logs"))?;

    let pending: Vec<(&InstanceSource, Method)> = config
        .instances
        .iter()
        .flat_map(|s| config.methods.iter().map(move |&m| (s, m)))
        .filter(|(s, m)| !cell_path(out_dir, &s.id(), *m).exists())
        .collect();

    let jobs = config.jobs.max(1);
    if jobs <= 1 || pending.len() <= 1 {
        for (source, method) in pending {
            run_cell(source, method, &config.params, out_dir, factory)?;
        }
    } else {
        let queue: Mutex<VecDeque<(&InstanceSource, Method)>> = Mutex::new(pending.into());
        let errors: Mutex<Vec<BenchError>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let Some((source, method)) = queue.lock().unwrap().pop_front() else {
                        break;
                    };
                    if let Err(e) = run_cell(source, method, &config.params, out_dir, factory) {
                        errors.lock().unwrap().push(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
    }

    aggregate_reports(config, out_dir)
}

/// Aggregate whatever cell results already exist under `out_dir` into the
/// report files, without running anything.
pub fn aggregate_reports(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentReport, BenchError> {
    config.validate()?;
    let (records, failures) = collect_cells(config, out_dir)?;

    // Indicators compare only instances every configured method finished.
    let mut completed: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *completed.entry(&r.instance).or_default() += 1;
    }
    let full: BTreeSet<&str> = completed
        .iter()
        .filter(|(_, &n)| n == config.methods.len())
        .map(|(&id, _)| id)
        .collect();
    let comparable: Vec<RunRecord> =
        records.iter().filter(|r| full.contains(r.instance.as_str())).cloned().collect();
    let (indicator_rows, method_summaries) = if comparable.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        compute_indicators(&comparable)?
    };

    let report = ExperimentReport { records, failures, indicator_rows, method_summaries };
    write_atomic(&out_dir.join("records.csv"), &records_csv(&report.records)?)?;
    write_atomic(&out_dir.join("records.json"), &serde_json::to_vec_pretty(&report.records)?)?;
    write_atomic(&out_dir.join("summary.csv"), &summary_csv(&report.method_summaries)?)?;
    let summary_json = serde_json::json!({
        "name": config.name,
        "methods": report.method_summaries,
        "indicator_rows": report.indicator_rows,
        "n_records": report.records.len(),
        "n_failures": report.failures.len(),
        "failures": report.failures,
    });
    write_atomic(&out_dir.join("summary.json"), &serde_json::to_vec_pretty(&summary_json)?)?;
    Ok(report)
}
