use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridshed::eval::Difficulty;
use gridshed::grid::SyntheticConfig;
use gridshed::ops::{OpsConfig, PenaltyDirection};
use gridshed::pipeline::{self, BenchOptions, CollectOptions, GenOptions, MethodSpec, TuneOptions, Workspace};
use gridshed::policy::TrainConfig;
use gridshed::refine::{RefinementConfig, Variant};
use gridshed_milp::{ClockMode, SolverConfig};

#[derive(Parser)]
#[command(name = "gridshed", version, about = "Wildfire shutoff planning with learned search refinement")]
struct Cli {
    /// Directory holding every pipeline artifact.
    #[arg(long, short = 'w', global = true, default_value = "gridshed-work")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a network, an instance distribution and sampled daily instances.
    Gen(GenArgs),
    /// Label instances easy or hard from the threshold policy's load shed.
    Classify {
        /// Risk threshold for de-energizing; defaults to the distribution's value.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Split the hard instances and record incumbent pools as training labels.
    Collect {
        #[command(flatten)]
        solver: SolverArgs,
        /// Split seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the policy on the training split.
    Train(TrainArgs),
    /// Grid-search refinement parameters on the validation split.
    Tune {
        #[command(flatten)]
        solver: SolverArgs,
        /// Tune only this variant.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Run the baseline and refinement methods on the test split.
    Bench(BenchArgs),
    /// Score stored benchmark runs and write plot-ready tables.
    Report {
        /// Output directory; defaults to `<workspace>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Wall,
    Nodes,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Pas,
    DomainPas,
    PasNd,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Pas => Variant::Pas,
            VariantArg::DomainPas => Variant::DomainPas,
            VariantArg::PasNd => Variant::PasNd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    AsPrinted,
    PenalizeDeenergized,
}

#[derive(Args)]
struct SolverArgs {
    /// Budget in the clock's unit (seconds, or nodes under `--clock nodes`).
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pool_size: usize,
    #[arg(long, value_enum, default_value_t = ClockArg::Wall)]
    clock: ClockArg,
}

impl SolverArgs {
    fn config(&self, time_limit: f64, node_limit: usize) -> SolverConfig {
        SolverConfig {
            time_limit: self.time_limit.unwrap_or(time_limit),
            node_limit: self.node_limit.unwrap_or(node_limit),
            pool_size: self.pool_size,
            clock_mode: match self.clock {
                ClockArg::Wall => ClockMode::Wall,
                ClockArg::Nodes => ClockMode::NodeCount,
            },
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Network JSON; requires `--dist-config`. A synthetic network is built otherwise.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    dist_config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Bus count of the synthetic network.
    #[arg(long, default_value_t = 36)]
    buses: usize,
    #[arg(long, default_value_t = 0.6)]
    switchable_fraction: f64,
    /// Direction of the small per-line term added to the objective.
    #[arg(long, value_enum, default_value_t = PenaltyArg::AsPrinted)]
    penalty: PenaltyArg,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    solver: SolverArgs,
    /// Benchmark only the baseline and this variant.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Overrides the tuned value for every refinement method.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    phi_prime: Option<f64>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    pipeline::configure_threads();
    let cli = Cli::parse();
    let ws = Workspace::new(&cli.workspace);
    match cli.command {
        Command::Gen(a) => {
            let opts = GenOptions {
                network: a.network,
                dist_config: a.dist_config,
                synthetic: SyntheticConfig {
                    buses: a.buses,
                    switchable_fraction: a.switchable_fraction,
                    ..Default::default()
                },
                ops: OpsConfig {
                    epsilon: a.epsilon,
                    penalty_direction: match a.penalty {
                        PenaltyArg::AsPrinted => PenaltyDirection::AsPrinted,
                        PenaltyArg::PenalizeDeenergized => PenaltyDirection::PenalizeDeenergized,
                    },
                    ..Default::default()
                },
                count: a.count,
                seed: a.seed,
            };
            let ids = pipeline::generate(&ws, &opts).context("gen failed")?;
            log::info!("wrote {} instances to {}", ids.len(), ws.root.display());
        }
        Command::Classify { threshold } => {
            let recs = pipeline::classify(&ws, threshold).context("classify failed")?;
            let hard = recs.iter().filter(|r| r.class == Difficulty::Hard).count();
            log::info!("{hard} of {} instances are hard", recs.len());
        }
        Command::Collect { solver, seed } => {
            let opts = CollectOptions {
                solver: solver.config(120.0, 50_000),
                split_seed: seed,
            };
            let s = pipeline::collect(&ws, &opts).context("collect failed")?;
            log::info!(
                "labels: {} train, {} validation, {} test, {} dropped",
                s.split.train.len(),
                s.split.validation.len(),
                s.split.test.len(),
                s.dropped.len()
            );
        }
        Command::Train(a) => {
            let cfg = TrainConfig {
                epochs: a.epochs,
                learning_rate: a.lr,
                batch_size: a.batch_size,
                embed_dim: a.embed_dim,
                heads: a.heads,
                seed: a.seed,
                ..Default::default()
            };
            let history = pipeline::train_stage(&ws, &cfg).context("train failed")?;
            if let (Some(first), Some(last)) = (history.first(), history.last()) {
                log::info!("loss {first:.5} -> {last:.5} over {} epochs", history.len());
            }
        }
        Command::Tune { solver, variant } => {
            let mut opts = TuneOptions::default_grids(solver.config(60.0, usize::MAX));
            if let Some(v) = variant {
                opts.variants = vec![v.into()];
            }
            for (v, p) in pipeline::tune(&ws, &opts).context("tune failed")? {
                log::info!("{}: phi {} phi' {} mean PI {:.3}", v.name(), p.phi, p.phi_prime, p.mean_pi);
            }
        }
        Command::Bench(a) => {
            let mut methods = pipeline::default_methods(&ws, (0.7, 0.1))?;
            if let Some(v) = a.variant {
                let v = Variant::from(v);
                methods.retain(|m| m.refinement.as_ref().is_none_or(|r| r.variant == v));
            }
            for m in &mut methods {
                if let Some(r) = &mut m.refinement {
                    let cfg = RefinementConfig::new(r.variant, a.phi.unwrap_or(r.phi), a.phi_prime.unwrap_or(r.phi_prime));
                    cfg.validate()?;
                    *m = MethodSpec::refined(cfg);
                }
            }
            if methods.is_empty() {
                bail!("no methods selected");
            }
            let opts = BenchOptions {
                solver: a.solver.config(60.0, usize::MAX),
                methods,
            };
            let runs = pipeline::bench(&ws, &opts).context("bench failed")?;
            log::info!("{} runs, horizon {}", runs.runs.len(), runs.horizon);
        }
        Command::Report { out } => {
            let out = out.unwrap_or_else(|| ws.root.join("report"));
            let rep = pipeline::report(&ws, &out).context("report failed")?;
            println!("method\tmean_pi\tmean_pg\twins\tfeasible");
            for s in &rep.summary {
                println!("{}\t{:.4}\t{:.4}\t{}\t{}/{}", s.method, s.mean_pi, s.mean_pg, s.wins, s.feasible, s.instances);
            }
            log::info!("report written to {}", out.display());
        }
    }
    Ok(())
}
