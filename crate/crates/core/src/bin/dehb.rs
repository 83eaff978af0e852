use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dehb::benchmarks::{CountingOnes, MfQuadratic, TabularBenchmark};
use dehb::harness::{
    noise_seed, run_experiment, run_sweep, Algorithm, BenchmarkSpec, ExperimentConfig, Summary,
    SweepParam, ABLATION_GRID,
};
use dehb::orchestrator::serve_worker;
use dehb::{HbConfig, ParameterSpace, Termination};

#[derive(Parser)]
#[command(name = "dehb", version, about = "Multi-fidelity hyperparameter optimization with DEHB")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on one benchmark over several seeds.
    Run(RunArgs),
    /// Run the same experiment for several values of F or p.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values; defaults to 0.1,0.3,0.5,0.7,0.9.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Serve a built-in benchmark over the stdio worker protocol.
    Worker(WorkerArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchmarkKind {
    CountingOnes,
    MfQuadratic,
    Tabular,
    Subprocess,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "counting-ones")]
    benchmark: BenchmarkKind,
    /// Categorical dimensions of counting ones.
    #[arg(long, default_value_t = 4)]
    n_cat: usize,
    /// Continuous dimensions of counting ones.
    #[arg(long, default_value_t = 4)]
    n_cont: usize,
    /// Dimension of the multi-fidelity quadratic.
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Lookup table (csv or json) for the tabular benchmark.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Space definition (JSON).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Worker command for the subprocess benchmark; arguments follow `--`.
    #[arg(long)]
    worker_cmd: Option<String>,
    #[arg(last = true)]
    worker_args: Vec<String>,
}

impl BenchArgs {
    fn spec(&self) -> anyhow::Result<BenchmarkSpec> {
        Ok(match self.benchmark {
            BenchmarkKind::CountingOnes => BenchmarkSpec::CountingOnes {
                n_cat: self.n_cat,
                n_cont: self.n_cont,
            },
            BenchmarkKind::MfQuadratic => BenchmarkSpec::MfQuadratic { dim: self.dim },
            BenchmarkKind::Tabular => BenchmarkSpec::Tabular {
                path: self.table.clone().context("--table is required for the tabular benchmark")?,
                space: self.space.clone(),
            },
            BenchmarkKind::Subprocess => BenchmarkSpec::Subprocess {
                command: self
                    .worker_cmd
                    .clone()
                    .context("--worker-cmd is required for the subprocess benchmark")?,
                args: self.worker_args.clone(),
                space: self.space.clone().context("--space is required for the subprocess benchmark")?,
            },
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "dehb")]
    algo: Algorithm,
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, default_value_t = 9.0)]
    bmin: f64,
    #[arg(long, default_value_t = 729.0)]
    bmax: f64,
    #[arg(long, default_value_t = 3.0)]
    eta: f64,
    #[arg(long = "F", default_value_t = 0.5)]
    f: f64,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Population size of standalone DE.
    #[arg(long, default_value_t = 20)]
    pop_size: usize,
    /// Number of seeds, run as 0..n.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Stop after this many DEHB brackets (full Hyperband cycles).
    #[arg(long, group = "stop")]
    brackets: Option<usize>,
    /// Stop after this many function evaluations.
    #[arg(long, group = "stop")]
    evals: Option<usize>,
    /// Stop once the cumulative cost reaches this value.
    #[arg(long, group = "stop")]
    cost_budget: Option<f64>,
    /// Output directory for traces and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let hb = HbConfig::new(self.bmin, self.bmax, self.eta)?;
        let termination = match (self.brackets, self.evals, self.cost_budget) {
            (Some(k), None, None) => Termination::Brackets(k),
            (None, Some(n), None) => Termination::Evaluations(n),
            (None, None, Some(c)) => Termination::CostBudget(c),
            (None, None, None) => Termination::Brackets(1),
            _ => bail!("give at most one of --brackets, --evals, --cost-budget"),
        };
        let mut cfg = ExperimentConfig::new(self.algo, self.bench.spec()?, hb, termination);
        cfg.f = self.f;
        cfg.p = self.p;
        cfg.pop_size = self.pop_size;
        cfg.seeds = (self.seed_offset..self.seed_offset + self.seeds).collect();
        cfg.n_workers = self.workers;
        cfg.out_dir = self.out.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct WorkerArgs {
    #[command(flatten)]
    bench: BenchArgs,
    #[arg(long, default_value_t = 729.0)]
    bmax: f64,
    /// Seed of the benchmark noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_summary(s: &Summary) {
    println!(
        "{} on {} (F={}, p={}): final regret {} over {} seeds{}",
        s.algorithm.name(),
        s.benchmark,
        s.f,
        s.p,
        s.final_regret.formatted,
        s.final_regret.n,
        if s.incomplete { " [incomplete]" } else { "" }
    );
    for failure in &s.failures {
        eprintln!("seed {} failed: {}", failure.seed, failure.error);
    }
}

fn worker(args: &WorkerArgs) -> anyhow::Result<()> {
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    match args.bench.benchmark {
        BenchmarkKind::CountingOnes => {
            let co = CountingOnes::new(args.bench.n_cat, args.bench.n_cont, noise_seed(args.seed))?;
            let space = co.space().clone();
            serve_worker(&co, &space, stdin, stdout)?;
        }
        BenchmarkKind::MfQuadratic => {
            let q = MfQuadratic::new(args.bench.dim, args.bmax)?;
            let space = q.space().clone();
            serve_worker(&q, &space, stdin, stdout)?;
        }
        BenchmarkKind::Tabular => {
            let path = args.bench.table.as_ref().context("--table is required")?;
            let space = args.bench.space.as_ref().map(ParameterSpace::from_json_file).transpose()?;
            let tab = TabularBenchmark::load(path, space)?;
            let space = tab.space().clone();
            serve_worker(&tab, &space, stdin, stdout)?;
        }
        BenchmarkKind::Subprocess => bail!("a worker cannot itself delegate to a subprocess"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let summary = run_experiment(&cfg)?;
            print_summary(&summary);
            if summary.incomplete {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Sweep { run, param, values } => {
            let cfg = run.config()?;
            let values = if values.is_empty() { ABLATION_GRID.to_vec() } else { values };
            for summary in run_sweep(&cfg, param, &values)? {
                print_summary(&summary);
            }
        }
        Command::Worker(args) => worker(&args)?,
    }
    Ok(ExitCode::SUCCESS)
}
