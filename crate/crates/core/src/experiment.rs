//! Config-driven experiments: a single JSON document describes the graph,
//! the matrix sequence, the problem and the run; [`execute_run`],
//! [`execute_sweep`] and [`bounds_report`] turn it into files.
//!
//! ```json
//! {
//!   "graph": { "topology": "path:16" },
//!   "sequence": { "construction": "laplacian_factor",
//!                 "approximation": { "kind": "perturb", "target_eps": 0.1 } },
//!   "problem": { "K": 16, "N": 15, "M": 10, "rho": 0.01, "seed": 1 },
//!   "run": { "mu": 0.1, "num_iters": 3000, "replications": 50 }
//! }
//! ```
//!
//! Replication `r` runs with seed `run.seed + r`; the problem seed is
//! separate, so replications share the data and differ in sampling noise.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithm::{self, Init, Mode, RunConfig};
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::ftc::{self, FactorOrder, MatrixSeq, PerturbSupport};
use crate::graphs::{Graph, TopologySpec};
use crate::metrics::{self, StepsizeLimits, Trace};
use crate::problems::{self, BoundParams, EstimateOptions, LogisticSpec, Problem, Vector};

/// Gradient-norm tolerance for the reference solution `w°`.
pub const SOLVER_TOL: f64 = 1e-10;

/// Where the graph comes from: a generator spec such as `path:16`, or a
/// graph JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSource {
    pub topology: Option<String>,
    pub path: Option<PathBuf>,
}

impl GraphSource {
    pub fn topology(spec: &str) -> Self {
        Self {
            topology: Some(spec.to_string()),
            path: None,
        }
    }

    pub fn build(&self) -> Result<Graph> {
        match (&self.topology, &self.path) {
            (Some(spec), None) => spec.parse::<TopologySpec>()?.build(),
            (None, Some(path)) => Graph::load(path),
            _ => Err(invalid_param(
                "graph needs exactly one of 'topology' or 'path'",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    Hypercube,
    #[default]
    LaplacianFactor,
    Load,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Approximation {
    #[default]
    None,
    Truncate {
        tau: usize,
    },
    Perturb {
        target_eps: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        support: PerturbSupport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSpec {
    pub construction: Construction,
    /// Directory written by [`MatrixSeq::save`], for `load`.
    pub path: Option<PathBuf>,
    pub order: FactorOrder,
    pub approximation: Approximation,
}

/// Logistic problem, generated or loaded from a saved directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub rho: f64,
    pub heterogeneity: f64,
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        let d = LogisticSpec::default();
        Self {
            k: d.k,
            n: d.n,
            m: d.m,
            rho: d.rho,
            heterogeneity: d.heterogeneity,
            seed: d.seed,
            path: None,
        }
    }
}

impl ProblemSpec {
    pub fn logistic(&self) -> LogisticSpec {
        LogisticSpec {
            k: self.k,
            n: self.n,
            m: self.m,
            rho: self.rho,
            heterogeneity: self.heterogeneity,
            seed: self.seed,
        }
    }

    pub fn build(&self) -> Result<Problem> {
        match &self.path {
            Some(dir) => Problem::load(dir),
            None => problems::generate_logistic(&self.logistic()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub mu: f64,
    pub num_iters: usize,
    pub stochastic: bool,
    pub replications: usize,
    pub record_every: usize,
    pub mode: Mode,
    pub init: Init,
    /// Base seed; replication `r` uses `seed + r`.
    pub seed: u64,
    /// Attach bound columns to traces.
    pub bounds: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            mu: 0.1,
            num_iters: 1000,
            stochastic: true,
            replications: 1,
            record_every: 1,
            mode: Mode::Original,
            init: Init::Zero,
            seed: 0,
            bounds: true,
        }
    }
}

impl RunSpec {
    pub fn config_for(&self, replication: usize) -> RunConfig {
        RunConfig {
            mu: self.mu,
            num_iters: self.num_iters,
            stochastic: self.stochastic,
            seed: self.seed.wrapping_add(replication as u64),
            record_every: self.record_every,
            init: self.init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    EpsTau,
    Tau,
    Mu,
}

/// One point of a `τ` sweep: a graph and how to build its sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauCase {
    pub graph: GraphSource,
    #[serde(default)]
    pub construction: Construction,
}

pub const DEFAULT_EPS_VALUES: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
pub const DEFAULT_MU_GRID: [f64; 6] = [0.4, 0.2, 0.1, 0.05, 0.02, 0.01];
pub const DEFAULT_TUNING_TARGET: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    /// `ε_τ` targets or step sizes. Unused for `tau`, whose values come
    /// from `cases`.
    pub values: Vec<f64>,
    pub cases: Vec<TauCase>,
    pub mu_grid: Vec<f64>,
    /// Centroid-error level used to rank step sizes in a `τ` sweep.
    pub target: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            variable: SweepVariable::EpsTau,
            values: DEFAULT_EPS_VALUES.to_vec(),
            cases: Vec::new(),
            mu_grid: DEFAULT_MU_GRID.to_vec(),
            target: DEFAULT_TUNING_TARGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    pub sequence: SequenceSpec,
    pub problem: ProblemSpec,
    pub run: RunSpec,
    pub sweep: Option<SweepSpec>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::topology("path:16"),
            sequence: SequenceSpec::default(),
            problem: ProblemSpec::default(),
            run: RunSpec::default(),
            sweep: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that do not need to touch the file system.
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.replications == 0 {
            return Err(invalid_param("replications must be >= 1"));
        }
        if r.num_iters == 0 {
            return Err(invalid_param("num_iters must be >= 1"));
        }
        self.run.config_for(0).validate()?;
        if self.sequence.construction == Construction::Load && self.sequence.path.is_none() {
            return Err(invalid_param("sequence construction 'load' needs a 'path'"));
        }
        if let Some(s) = &self.sweep {
            match s.variable {
                SweepVariable::Tau if s.cases.is_empty() => {
                    return Err(invalid_param("a tau sweep needs at least one case"))
                }
                SweepVariable::Tau if s.mu_grid.is_empty() => {
                    return Err(invalid_param("a tau sweep needs a nonempty mu grid"))
                }
                SweepVariable::EpsTau | SweepVariable::Mu if s.values.is_empty() => {
                    return Err(invalid_param("sweep values must be nonempty"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Builds the sequence described by `spec` on `graph`.
pub fn build_sequence(spec: &SequenceSpec, graph: &Graph) -> Result<MatrixSeq> {
    let base = base_sequence(spec.construction, spec.path.as_deref(), spec.order, graph)?;
    approximate(&base, spec.approximation)
}

fn base_sequence(
    construction: Construction,
    path: Option<&Path>,
    order: FactorOrder,
    graph: &Graph,
) -> Result<MatrixSeq> {
    match construction {
        Construction::Hypercube => {
            let k = graph.num_agents();
            if !k.is_power_of_two() || k < 2 {
                return Err(invalid_input(format!(
                    "hypercube construction needs 2^d agents, graph has {k}"
                )));
            }
            let seq = ftc::hypercube_sequence(k.trailing_zeros() as usize)?;
            if !seq.graph().edges().eq(graph.edges()) {
                return Err(invalid_input(format!(
                    "graph '{}' is not a hypercube",
                    graph.name()
                )));
            }
            Ok(seq)
        }
        Construction::LaplacianFactor => ftc::laplacian_factor_sequence_ordered(graph, order),
        Construction::Load => {
            let dir = path.ok_or_else(|| invalid_param("sequence 'load' needs a path"))?;
            let seq = MatrixSeq::load(dir)?;
            if seq.num_agents() != graph.num_agents() {
                return Err(invalid_input(
                    "loaded sequence does not match the graph size",
                ));
            }
            Ok(seq)
        }
    }
}

fn approximate(base: &MatrixSeq, approx: Approximation) -> Result<MatrixSeq> {
    match approx {
        Approximation::None => Ok(base.clone()),
        Approximation::Truncate { tau } => ftc::truncate_sequence(base, tau),
        Approximation::Perturb {
            target_eps,
            seed,
            support,
        } => {
            // an already-inexact base counts as reaching any smaller target
            if target_eps <= base.eps_tau() {
                Ok(base.clone())
            } else {
                ftc::perturb_sequence_with(base, target_eps, seed, support)
            }
        }
    }
}

/// Everything a batch of runs needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: Graph,
    pub seq: MatrixSeq,
    pub problem: Problem,
    pub w_opt: Vector,
    pub bound_params: BoundParams,
}

impl Prepared {
    pub fn new(graph: Graph, seq: MatrixSeq, problem: Problem, run: &RunSpec) -> Result<Self> {
        if problem.num_agents() != graph.num_agents() {
            return Err(invalid_input(format!(
                "graph has {} agents but the problem has {}",
                graph.num_agents(),
                problem.num_agents()
            )));
        }
        let w_opt = problems::solve_centralized(&problem, SOLVER_TOL)?.w;
        let opts = EstimateOptions {
            stochastic: run.stochastic,
            ..Default::default()
        };
        let bound_params = problems::estimate_constants(&problem, &w_opt, run.mu, &seq, &opts)?;
        Ok(Self {
            graph,
            seq,
            problem,
            w_opt,
            bound_params,
        })
    }

    /// Same data with a different sequence (constants re-estimated).
    pub fn with_sequence(&self, seq: MatrixSeq, run: &RunSpec) -> Result<Self> {
        let mut bp = self.bound_params;
        bp.tau = seq.tau();
        bp.eps_tau = seq.eps_tau();
        bp.mu = run.mu;
        Ok(Self {
            graph: seq.graph().clone(),
            seq,
            problem: self.problem.clone(),
            w_opt: self.w_opt.clone(),
            bound_params: bp,
        })
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let graph = cfg.graph.build()?;
    let seq = build_sequence(&cfg.sequence, &graph)?;
    let problem = cfg.problem.build()?;
    Prepared::new(graph, seq, problem, &cfg.run)
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| invalid_param(format!("cannot start worker pool: {e}")))
}

/// Runs all replications. Results come back in replication order whatever
/// the scheduling.
pub fn run_replications(
    prep: &Prepared,
    run: &RunSpec,
    jobs: Option<usize>,
) -> Result<Vec<Result<Trace>>> {
    let bp = BoundParams {
        mu: run.mu,
        ..prep.bound_params
    };
    let bounds = run.bounds.then_some(&bp);
    let pool = thread_pool(jobs)?;
    Ok(pool.install(|| {
        (0..run.replications)
            .into_par_iter()
            .map(|r| {
                algorithm::run(
                    &prep.problem,
                    &prep.seq,
                    &run.config_for(r),
                    run.mode,
                    &prep.w_opt,
                    bounds,
                )
            })
            .collect()
    }))
}

/// Whether a bound can be evaluated for the run, and why not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub applicable: bool,
    pub reason: Option<String>,
}

impl Verdict {
    fn of<T>(r: &Result<T>) -> Self {
        match r {
            Ok(_) => Self {
                applicable: true,
                reason: None,
            },
            Err(e) => Self {
                applicable: false,
                reason: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub thm1: Verdict,
    pub thm2: Verdict,
}

impl Admissibility {
    pub fn evaluate(bp: &BoundParams) -> Self {
        Self {
            thm1: Verdict::of(&metrics::thm1_bound(bp, 0, 0.0)),
            thm2: Verdict::of(&metrics::thm2_bound(bp, 0, 0.0, 0.0)),
        }
    }

    pub fn all_applicable(&self) -> bool {
        self.thm1.applicable && self.thm2.applicable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalErrors {
    pub iter: usize,
    pub consensus_err: f64,
    pub centroid_err: f64,
    pub msd: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub graph: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub tau: usize,
    pub eps_tau: f64,
    pub assumption4: bool,
    pub mu: f64,
    pub num_iters: usize,
    pub stochastic: bool,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub steady_state_window: usize,
    pub steady_state_msd: f64,
    pub final_errors: FinalErrors,
    pub bound_params: BoundParams,
    pub stepsize_limits: StepsizeLimits,
    pub admissibility: Admissibility,
}

/// The seed-averaged trace and its summary.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub traces: Vec<Trace>,
    pub mean: Trace,
    pub summary: RunSummary,
}

/// First recorded iteration with centroid error below `target`.
pub fn iterations_to_target(trace: &Trace, target: f64) -> Option<usize> {
    trace
        .rows
        .iter()
        .find(|r| r.centroid_err < target)
        .map(|r| r.iter)
}

fn seed_file(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

/// Runs the batch and writes per-seed traces, `mean.csv` and `summary.json`
/// into `dir`. On divergence the traces of the other seeds and the partial
/// trace of the failing one (`seed_<s>.partial.csv`) are still written.
pub fn run_batch(
    prep: &Prepared,
    run: &RunSpec,
    dir: &Path,
    jobs: Option<usize>,
) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir)?;
    let results = run_replications(prep, run, jobs)?;
    let mut traces = Vec::with_capacity(results.len());
    let mut failure = None;
    for (r, res) in results.into_iter().enumerate() {
        let seed = run.config_for(r).seed;
        match res {
            Ok(t) => {
                t.save_csv(dir.join(seed_file(seed)))?;
                traces.push(t);
            }
            Err(Error::Diverged {
                iter,
                what,
                partial,
            }) => {
                if let Some(p) = &partial {
                    p.save_csv(dir.join(format!("seed_{seed}.partial.csv")))?;
                }
                failure.get_or_insert(Error::Diverged {
                    iter,
                    what,
                    partial,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let outcome = summarize(prep, run, traces)?;
    outcome.mean.save_csv(dir.join("mean.csv"))?;
    let json = serde_json::to_string_pretty(&outcome.summary)?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(outcome)
}

fn summarize(prep: &Prepared, run: &RunSpec, traces: Vec<Trace>) -> Result<RunOutcome> {
    let mean = metrics::mean_trace(&traces)?;
    let window = metrics::steady_state_window(mean.rows.len());
    let last = mean
        .last()
        .copied()
        .ok_or_else(|| invalid_input("empty trace"))?;
    let bp = BoundParams {
        mu: run.mu,
        ..prep.bound_params
    };
    let summary = RunSummary {
        graph: prep.graph.name().to_string(),
        k: prep.graph.num_agents(),
        tau: prep.seq.tau(),
        eps_tau: prep.seq.eps_tau(),
        assumption4: prep.seq.compliance().overall_assumption4,
        mu: run.mu,
        num_iters: run.num_iters,
        stochastic: run.stochastic,
        mode: run.mode,
        seeds: (0..run.replications)
            .map(|r| run.config_for(r).seed)
            .collect(),
        steady_state_window: window,
        steady_state_msd: metrics::steady_state_msd(&mean, window)?,
        final_errors: FinalErrors {
            iter: last.iter,
            consensus_err: last.consensus_err,
            centroid_err: last.centroid_err,
            msd: last.msd,
        },
        bound_params: bp,
        stepsize_limits: metrics::stepsize_limits(&bp),
        admissibility: Admissibility::evaluate(&bp),
    };
    Ok(RunOutcome {
        traces,
        mean,
        summary,
    })
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| invalid_param("no output directory given"))
}

/// Single experiment: `cfg.run.replications` seeded runs written to `cfg.out`.
pub fn execute_run(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunOutcome> {
    let dir = output_dir(cfg)?;
    let prep = prepare(cfg)?;
    run_batch(&prep, &cfg.run, &dir, jobs)
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub tau: usize,
    pub eps_tau: f64,
    pub mu: f64,
    pub steady_state_msd: f64,
    pub final_consensus_err: f64,
    pub iters_to_target: Option<usize>,
}

pub const SWEEP_COLUMNS: &str =
    "value,tau,eps_tau,mu,steady_state_msd,final_consensus_err,iters_to_target";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SWEEP_COLUMNS}");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.value,
            r.tau,
            r.eps_tau,
            r.mu,
            r.steady_state_msd,
            r.final_consensus_err,
            r.iters_to_target.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    out
}

/// Step-size search for one `τ` case: fastest descent of the seed-averaged
/// centroid error below `target`, ties to the smaller step size. Diverging
/// or too-slow step sizes are skipped.
pub fn tune_step_size(
    prep: &Prepared,
    run: &RunSpec,
    grid: &[f64],
    target: f64,
    jobs: Option<usize>,
) -> Result<Option<(f64, usize)>> {
    let mut best: Option<(f64, usize)> = None;
    for &mu in grid {
        let trial = RunSpec {
            mu,
            bounds: false,
            ..*run
        };
        let traces: Result<Vec<Trace>> =
            run_replications(prep, &trial, jobs)?.into_iter().collect();
        let traces = match traces {
            Ok(t) => t,
            Err(Error::Diverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        let Some(iters) = iterations_to_target(&metrics::mean_trace(&traces)?, target) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bmu, bit)) => iters < bit || (iters == bit && mu < bmu),
        };
        if better {
            best = Some((mu, iters));
        }
    }
    Ok(best)
}

/// Runs one batch per sweep value into `out/value_<index>/` and writes
/// `out/sweep.csv`.
pub fn execute_sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<SweepRow>> {
    let dir = output_dir(cfg)?;
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| invalid_param("config has no 'sweep' section"))?;
    cfg.validate()?;
    std::fs::create_dir_all(&dir)?;
    let problem = cfg.problem.build()?;
    let mut rows = Vec::new();
    match sweep.variable {
        SweepVariable::EpsTau | SweepVariable::Mu => {
            let graph = cfg.graph.build()?;
            let base = base_sequence(
                cfg.sequence.construction,
                cfg.sequence.path.as_deref(),
                cfg.sequence.order,
                &graph,
            )?;
            let base_prep = Prepared::new(graph, base.clone(), problem, &cfg.run)?;
            for (idx, &value) in sweep.values.iter().enumerate() {
                let (run, seq) = if sweep.variable == SweepVariable::Mu {
                    let seq = approximate(&base, cfg.sequence.approximation)?;
                    (
                        RunSpec {
                            mu: value,
                            ..cfg.run
                        },
                        seq,
                    )
                } else {
                    let seed = match cfg.sequence.approximation {
                        Approximation::Perturb { seed, .. } => seed,
                        _ => 0,
                    };
                    let support = match cfg.sequence.approximation {
                        Approximation::Perturb { support, .. } => support,
                        _ => PerturbSupport::default(),
                    };
                    let approx = Approximation::Perturb {
                        target_eps: value,
                        seed,
                        support,
                    };
                    (cfg.run, approximate(&base, approx)?)
                };
                let prep = base_prep.with_sequence(seq, &run)?;
                let out = run_batch(&prep, &run, &dir.join(format!("value_{idx}")), jobs)?;
                rows.push(sweep_row(value, &prep, &run, &out, sweep.target));
            }
        }
        SweepVariable::Tau => {
            for (idx, case) in sweep.cases.iter().enumerate() {
                let graph = case.graph.build()?;
                let seq = base_sequence(case.construction, None, cfg.sequence.order, &graph)?;
                let prep = Prepared::new(graph, seq, problem.clone(), &cfg.run)?;
                let (mu, _) = tune_step_size(&prep, &cfg.run, &sweep.mu_grid, sweep.target, jobs)?
                    .ok_or_else(|| {
                        Error::Convergence(format!(
                            "no step size in the grid reaches {} on '{}'",
                            sweep.target,
                            prep.graph.name()
                        ))
                    })?;
                let run = RunSpec { mu, ..cfg.run };
                let prep = prep.with_sequence(prep.seq.clone(), &run)?;
                let out = run_batch(&prep, &run, &dir.join(format!("value_{idx}")), jobs)?;
                rows.push(sweep_row(
                    prep.seq.tau() as f64,
                    &prep,
                    &run,
                    &out,
                    sweep.target,
                ));
            }
        }
    }
    std::fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    Ok(rows)
}

fn sweep_row(
    value: f64,
    prep: &Prepared,
    run: &RunSpec,
    out: &RunOutcome,
    target: f64,
) -> SweepRow {
    SweepRow {
        value,
        tau: prep.seq.tau(),
        eps_tau: prep.seq.eps_tau(),
        mu: run.mu,
        steady_state_msd: out.summary.steady_state_msd,
        final_consensus_err: out.summary.final_errors.consensus_err,
        iters_to_target: iterations_to_target(&out.mean, target),
    }
}

/// Estimated constants, step-size limits and bound curves for a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub bound_params: BoundParams,
    pub stepsize_limits: StepsizeLimits,
    pub admissibility: Admissibility,
    pub x0_sq: f64,
    pub w0_sq: f64,
    /// `(iter, thm1, thm2)`; `thm2` only at multiples of `τ`.
    pub curve: Vec<(usize, Option<f64>, Option<f64>)>,
}

impl BoundsReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iter,thm1_bound,thm2_bound\n");
        for (i, a, b) in &self.curve {
            let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{i},{},{}", cell(a), cell(b));
        }
        out
    }

    /// Human-readable lines; inadmissible bounds read "not applicable".
    pub fn text(&self) -> String {
        let bp = &self.bound_params;
        let l = &self.stepsize_limits;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nu = {}  delta = {}  B = {}  sigma2 = {}",
            bp.nu, bp.delta, bp.b, bp.sigma2
        );
        let _ = writeln!(
            out,
            "K = {}  tau = {}  eps_tau = {:e}  mu = {}",
            bp.k, bp.tau, bp.eps_tau, bp.mu
        );
        let _ = writeln!(
            out,
            "thm1_mu_max = {:e}  thm2_mu_max = {:e}",
            l.thm1_mu_max, l.thm2_mu_max
        );
        for (name, v) in [
            ("thm1", &self.admissibility.thm1),
            ("thm2", &self.admissibility.thm2),
        ] {
            match &v.reason {
                None => {
                    let _ = writeln!(out, "{name}: applicable");
                }
                Some(r) => {
                    let _ = writeln!(out, "{name}: not applicable ({r})");
                }
            }
        }
        out
    }
}

pub fn bounds_report(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    let prep = prepare(cfg)?;
    bounds_report_for(&prep, &cfg.run)
}

pub fn bounds_report_for(prep: &Prepared, run: &RunSpec) -> Result<BoundsReport> {
    let bp = BoundParams {
        mu: run.mu,
        ..prep.bound_params
    };
    let state = algorithm::initial_state(&prep.problem, &run.config_for(0), run.mode);
    let x0_sq = metrics::consensus_error(&state);
    let w0_sq = metrics::centroid_error(&state, &prep.w_opt);
    let curve = (0..=run.num_iters)
        .step_by(run.record_every.max(1))
        .map(|i| {
            let a = metrics::thm1_bound(&bp, i, x0_sq).ok();
            let b = (i % bp.tau == 0)
                .then(|| metrics::thm2_bound(&bp, i / bp.tau, w0_sq, x0_sq).ok())
                .flatten();
            (i, a, b)
        })
        .collect();
    Ok(BoundsReport {
        bound_params: bp,
        stepsize_limits: metrics::stepsize_limits(&bp),
        admissibility: Admissibility::evaluate(&bp),
        x0_sq,
        w0_sq,
        curve,
    })
}

/// Writes `bounds.json` and `bounds.csv` into `dir`.
pub fn write_bounds_report(report: &BoundsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("bounds.json"), json + "\n")?;
    std::fs::write(dir.join("bounds.csv"), report.curve_csv())?;
    Ok(())
}
