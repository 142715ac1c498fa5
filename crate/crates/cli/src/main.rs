use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ftclab::algorithm::Mode;
use ftclab::experiment::{
    self, Approximation, Construction, ExperimentConfig, GraphSource, SweepSpec, SweepVariable,
};
use ftclab::ftc::{FactorOrder, PerturbSupport};
use ftclab::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_INADMISSIBLE: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "ftclab",
    version,
    about = "Gradient tracking with finite-time consensus sequences"
)]
struct Cli {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base run seed (replication r uses seed + r).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a graph, sequence or problem to the output directory.
    Gen {
        subject: Subject,
        #[command(flatten)]
        o: Overrides,
    },
    /// Run seeded replications and write traces plus a summary.
    Run {
        #[command(flatten)]
        o: Overrides,
    },
    /// Run one batch per value of eps_tau, tau or mu.
    Sweep {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, value_enum)]
        variable: Option<Variable>,
        /// Comma-separated values (eps_tau targets or step sizes).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Comma-separated graphs for a tau sweep, e.g. star:16,hypercube:4.
        #[arg(long, value_delimiter = ',')]
        tau_graphs: Option<Vec<String>>,
        /// Comma-separated step sizes tried per tau value.
        #[arg(long, value_delimiter = ',')]
        mu_grid: Option<Vec<f64>>,
        /// Centroid-error target for step-size tuning.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Print estimated constants and step-size limits; write bound curves.
    Bounds {
        #[command(flatten)]
        o: Overrides,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Subject {
    Graph,
    Seq,
    Problem,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Variable {
    EpsTau,
    Tau,
    Mu,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ConstructionArg {
    Hypercube,
    LaplacianFactor,
    Load,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderArg {
    Leja,
    Descending,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Original,
    Transformed,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Graph as kind:size (path, ring, star, complete, hypercube).
    #[arg(long)]
    graph: Option<String>,
    /// Graph JSON file.
    #[arg(long, conflicts_with = "graph")]
    graph_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    construction: Option<ConstructionArg>,
    /// Sequence directory for --construction load.
    #[arg(long)]
    seq_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    /// Keep only the first T matrices.
    #[arg(long)]
    truncate: Option<usize>,
    /// Perturb the sequence to this eps_tau.
    #[arg(long, conflicts_with = "truncate")]
    perturb: Option<f64>,
    #[arg(long)]
    perturb_seed: Option<u64>,
    /// Perturb every graph edge instead of the matrix's own nonzeros.
    #[arg(long)]
    graph_support: bool,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    heterogeneity: Option<f64>,
    #[arg(long)]
    problem_seed: Option<u64>,
    /// Saved problem directory.
    #[arg(long)]
    problem_dir: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Use exact local gradients.
    #[arg(long, conflicts_with = "stochastic")]
    deterministic: bool,
    /// Use one sampled data point per agent and step.
    #[arg(long)]
    stochastic: bool,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Skip the bound columns in traces.
    #[arg(long)]
    no_bounds: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(g) = &self.graph {
            cfg.graph = GraphSource::topology(g);
        }
        if let Some(p) = &self.graph_file {
            cfg.graph = GraphSource {
                topology: None,
                path: Some(p.clone()),
            };
        }
        let seq = &mut cfg.sequence;
        if let Some(c) = self.construction {
            seq.construction = match c {
                ConstructionArg::Hypercube => Construction::Hypercube,
                ConstructionArg::LaplacianFactor => Construction::LaplacianFactor,
                ConstructionArg::Load => Construction::Load,
            };
        }
        if let Some(d) = &self.seq_dir {
            seq.path = Some(d.clone());
        }
        if let Some(o) = self.order {
            seq.order = match o {
                OrderArg::Leja => FactorOrder::Leja,
                OrderArg::Descending => FactorOrder::Descending,
            };
        }
        if let Some(tau) = self.truncate {
            seq.approximation = Approximation::Truncate { tau };
        }
        let (mut seed, mut support) = match seq.approximation {
            Approximation::Perturb { seed, support, .. } => (seed, support),
            _ => (0, PerturbSupport::default()),
        };
        if let Some(s) = self.perturb_seed {
            seed = s;
        }
        if self.graph_support {
            support = PerturbSupport::GraphPattern;
        }
        if let Some(target_eps) = self.perturb {
            seq.approximation = Approximation::Perturb {
                target_eps,
                seed,
                support,
            };
        } else if let Approximation::Perturb { target_eps, .. } = seq.approximation {
            seq.approximation = Approximation::Perturb {
                target_eps,
                seed,
                support,
            };
        }
        let p = &mut cfg.problem;
        set(&mut p.k, self.k);
        set(&mut p.n, self.n);
        set(&mut p.m, self.m);
        set(&mut p.rho, self.rho);
        set(&mut p.heterogeneity, self.heterogeneity);
        set(&mut p.seed, self.problem_seed);
        if let Some(d) = &self.problem_dir {
            p.path = Some(d.clone());
        }
        let r = &mut cfg.run;
        set(&mut r.mu, self.mu);
        set(&mut r.num_iters, self.iters);
        set(&mut r.replications, self.replications);
        set(&mut r.record_every, self.record_every);
        if self.deterministic {
            r.stochastic = false;
        }
        if self.stochastic {
            r.stochastic = true;
        }
        if let Some(m) = self.mode {
            r.mode = match m {
                ModeArg::Original => Mode::Original,
                ModeArg::Transformed => Mode::Transformed,
            };
        }
        if self.no_bounds {
            r.bounds = false;
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

enum Failure {
    Lib(Error),
    Inadmissible(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::InvalidParameter(_)
        | Error::InvalidInput(_)
        | Error::Format(_)
        | Error::Json(_)
        | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Inadmissible(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(EXIT_INADMISSIBLE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Gen { subject, o } => {
            o.apply(&mut cfg);
            gen(*subject, &cfg)
        }
        Command::Run { o } => {
            o.apply(&mut cfg);
            cfg.validate()?;
            let outcome = experiment::execute_run(&cfg, cli.jobs)?;
            let s = &outcome.summary;
            println!(
                "tau={} eps_tau={:e} mu={} steady_state_msd={:e} final_consensus_err={:e} final_centroid_err={:e}",
                s.tau,
                s.eps_tau,
                s.mu,
                s.steady_state_msd,
                s.final_errors.consensus_err,
                s.final_errors.centroid_err
            );
            check_admissibility(cfg.run.bounds, &s.admissibility)
        }
        Command::Sweep {
            o,
            variable,
            values,
            tau_graphs,
            mu_grid,
            target,
        } => {
            o.apply(&mut cfg);
            let mut sweep = cfg.sweep.clone().unwrap_or_default();
            if let Some(v) = variable {
                sweep.variable = match v {
                    Variable::EpsTau => SweepVariable::EpsTau,
                    Variable::Tau => SweepVariable::Tau,
                    Variable::Mu => SweepVariable::Mu,
                };
            }
            apply_sweep_flags(&mut sweep, values, tau_graphs, mu_grid, *target);
            cfg.sweep = Some(sweep);
            cfg.validate()?;
            let rows = experiment::execute_sweep(&cfg, cli.jobs)?;
            print!("{}", experiment::sweep_csv(&rows));
            Ok(())
        }
        Command::Bounds { o } => {
            o.apply(&mut cfg);
            let report = experiment::bounds_report(&cfg)?;
            print!("{}", report.text());
            if let Some(dir) = &cfg.out {
                experiment::write_bounds_report(&report, dir)?;
            }
            check_admissibility(true, &report.admissibility)
        }
    }
}

fn apply_sweep_flags(
    sweep: &mut SweepSpec,
    values: &Option<Vec<f64>>,
    tau_graphs: &Option<Vec<String>>,
    mu_grid: &Option<Vec<f64>>,
    target: Option<f64>,
) {
    if let Some(v) = values {
        sweep.values = v.clone();
    }
    if let Some(graphs) = tau_graphs {
        sweep.cases = graphs
            .iter()
            .map(|g| experiment::TauCase {
                graph: GraphSource::topology(g),
                construction: if g.starts_with("hypercube") {
                    Construction::Hypercube
                } else {
                    Construction::LaplacianFactor
                },
            })
            .collect();
    }
    if let Some(grid) = mu_grid {
        sweep.mu_grid = grid.clone();
    }
    if let Some(t) = target {
        sweep.target = t;
    }
}

fn check_admissibility(requested: bool, adm: &experiment::Admissibility) -> Result<(), Failure> {
    if !requested || adm.all_applicable() {
        return Ok(());
    }
    let reasons: Vec<String> = [("thm1", &adm.thm1), ("thm2", &adm.thm2)]
        .iter()
        .filter_map(|(name, v)| v.reason.as_ref().map(|r| format!("{name}: {r}")))
        .collect();
    Err(Failure::Inadmissible(format!(
        "bounds not applicable ({})",
        reasons.join("; ")
    )))
}

fn gen(subject: Subject, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::InvalidParameter("gen needs --out".into()))?;
    match subject {
        Subject::Graph => {
            let g = cfg.graph.build()?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            g.save(out.join("graph.json"))?;
            println!(
                "graph={} K={} edges={} diameter={}",
                g.name(),
                g.num_agents(),
                g.num_edges(),
                g.diameter().map_or("inf".to_string(), |d| d.to_string())
            );
        }
        Subject::Seq => {
            let g = cfg.graph.build()?;
            let seq = experiment::build_sequence(&cfg.sequence, &g)?;
            seq.save(&out)?;
            println!(
                "graph={} tau={} eps_tau={:e} assumption4={}",
                g.name(),
                seq.tau(),
                seq.eps_tau(),
                seq.compliance().overall_assumption4
            );
        }
        Subject::Problem => {
            let p = cfg.problem.build()?;
            p.save(&out)?;
            println!(
                "K={} N={} M={} rho={}",
                p.num_agents(),
                p.samples_per_agent(),
                p.dim(),
                p.rho()
            );
        }
    }
    Ok(())
}
