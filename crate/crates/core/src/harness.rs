//! Experiment runner: baselines, multi-seed runs, trace files and regret
//! summaries.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmarks::{CountingOnes, MfQuadratic, TabularBenchmark};
use crate::de::{de_optimize, DeConfig, UpdateMode};
use crate::engine::{self, DehbConfig, Termination};
use crate::error::{Error, Result, RunFailure};
use crate::hyperband::{cycle_plans, plan_bracket, HbConfig};
use crate::objective::Objective;
use crate::orchestrator::{run_parallel, OrchestratorPolicy, SubprocessObjective};
use crate::rng::{stream, Purpose};
use crate::space::{ParameterSpace, UnitVector};
use crate::trace::{Role, RunTrace, TraceEntry};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Number of checkpoints on the geometric cost grid of a summary.
const CHECKPOINTS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dehb,
    De,
    Hb,
    Rs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dehb => "dehb",
            Algorithm::De => "de",
            Algorithm::Hb => "hb",
            Algorithm::Rs => "rs",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum BenchmarkSpec {
    CountingOnes { n_cat: usize, n_cont: usize },
    MfQuadratic { dim: usize },
    Tabular { path: PathBuf, space: Option<PathBuf> },
    Subprocess { command: String, args: Vec<String>, space: PathBuf },
}

impl BenchmarkSpec {
    pub fn label(&self) -> String {
        match self {
            BenchmarkSpec::CountingOnes { n_cat, n_cont } => format!("counting-ones-{n_cat}+{n_cont}"),
            BenchmarkSpec::MfQuadratic { dim } => format!("mf-quadratic-{dim}"),
            BenchmarkSpec::Tabular { path, .. } => format!("tabular:{}", path.display()),
            BenchmarkSpec::Subprocess { command, .. } => format!("subprocess:{command}"),
        }
    }

    /// Instantiates the objective for one seed. Noise streams are keyed on a
    /// seed derived from, but distinct from, the optimizer seed.
    pub fn build(&self, seed: u64, hb: &HbConfig, n_workers: usize) -> Result<(Box<dyn Objective>, ParameterSpace)> {
        Ok(match self {
            BenchmarkSpec::CountingOnes { n_cat, n_cont } => {
                let co = CountingOnes::new(*n_cat, *n_cont, noise_seed(seed))?;
                let space = co.space().clone();
                (Box::new(co), space)
            }
            BenchmarkSpec::MfQuadratic { dim } => {
                let q = MfQuadratic::new(*dim, hb.b_max)?;
                let space = q.space().clone();
                (Box::new(q), space)
            }
            BenchmarkSpec::Tabular { path, space } => {
                let space = space.as_ref().map(ParameterSpace::from_json_file).transpose()?;
                let tab = TabularBenchmark::load(path, space)?;
                let space = tab.space().clone();
                (Box::new(tab), space)
            }
            BenchmarkSpec::Subprocess { command, args, space } => {
                let space = ParameterSpace::from_json_file(space)?;
                let obj = SubprocessObjective::spawn(command, args, space.clone(), n_workers)?;
                (Box::new(obj), space)
            }
        })
    }
}

pub fn noise_seed(seed: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub benchmark: BenchmarkSpec,
    pub hb: HbConfig,
    pub f: f64,
    pub p: f64,
    /// Population size for standalone DE.
    pub pop_size: usize,
    pub seeds: Vec<u64>,
    pub n_workers: usize,
    pub termination: Termination,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, benchmark: BenchmarkSpec, hb: HbConfig, termination: Termination) -> Self {
        Self {
            algorithm,
            benchmark,
            hb,
            f: 0.5,
            p: 0.5,
            pop_size: 20,
            seeds: vec![0],
            n_workers: 1,
            termination,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hb.validate()?;
        self.termination.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed required"));
        }
        if self.n_workers == 0 {
            return Err(Error::config("n_workers", "must be at least 1"));
        }
        let de = DeConfig {
            f: self.f,
            p: self.p,
            pop_size: self.pop_size,
            update_mode: UpdateMode::Immediate,
        };
        match self.algorithm {
            Algorithm::De => de.validate(),
            Algorithm::Dehb => de.validate_operators(),
            Algorithm::Hb | Algorithm::Rs => Ok(()),
        }
    }
}

/// Cost of one Hyperband cycle under `hb`.
pub fn cycle_cost(hb: &HbConfig) -> f64 {
    cycle_plans(hb).iter().map(|p| p.total_cost()).sum()
}

/// Cost a `Brackets(k)` termination stands for; used by the full-budget
/// baselines so that all algorithms get the same cumulative budget.
fn cost_equivalent(hb: &HbConfig, termination: Termination) -> Option<f64> {
    match termination {
        Termination::Brackets(k) => Some(k as f64 * cycle_cost(hb)),
        Termination::CostBudget(c) => Some(c),
        Termination::Evaluations(_) => None,
    }
}

struct Recorder {
    trace: RunTrace,
    b_max: f64,
}

impl Recorder {
    fn new(b_max: f64) -> Self {
        Self {
            trace: RunTrace::default(),
            b_max,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate<O: Objective + ?Sized>(
        &mut self,
        objective: &O,
        space: &ParameterSpace,
        genome: &UnitVector,
        budget: f64,
        role: Role,
        bracket: usize,
        sh_bracket: usize,
        rung: usize,
    ) -> Result<f64> {
        let config = space.decode(genome)?;
        let job_id = self.trace.entries.len() as u64;
        let eval = objective.evaluate(&config, budget, job_id)?;
        let started = self.trace.total_cost();
        let cumulative_cost = started + eval.cost;
        self.trace.entries.push(TraceEntry {
            index: self.trace.entries.len(),
            job_id,
            budget,
            fitness: eval.fitness,
            cost: eval.cost,
            cumulative_cost,
            role,
            bracket,
            sh_bracket,
            rung,
            started,
            finished: cumulative_cost,
            failed: false,
        });
        if crate::hyperband::budgets_match(budget, self.b_max) {
            self.trace
                .offer_incumbent(cumulative_cost, eval.fitness, genome.as_slice());
        }
        Ok(eval.fitness)
    }

    fn exhausted(&self, termination: Termination, cost_cap: Option<f64>) -> bool {
        match termination {
            Termination::Evaluations(n) => self.trace.entries.len() >= n,
            _ => cost_cap.is_some_and(|c| self.trace.total_cost() >= c),
        }
    }
}

/// Random search: uniform samples evaluated at `b_max`.
pub fn rs_baseline<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    hb: &HbConfig,
    termination: Termination,
    seed: u64,
) -> std::result::Result<RunTrace, RunFailure> {
    let mut rng = stream(seed, Purpose::Sampling);
    let mut rec = Recorder::new(hb.b_max);
    let cap = cost_equivalent(hb, termination);
    while !rec.exhausted(termination, cap) {
        let genome = UnitVector::sample(space.dim(), &mut rng);
        if let Err(error) = rec.evaluate(objective, space, &genome, hb.b_max, Role::InitRandom, 0, 0, 0) {
            return Err(RunFailure { error, trace: rec.trace });
        }
    }
    Ok(rec.trace)
}

/// Hyperband: the same bracket schedule as DEHB, with fresh uniform samples
/// in every rung 0 and promotion of the top `n_configs[i + 1]` of each rung.
pub fn hb_baseline<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    hb: &HbConfig,
    termination: Termination,
    seed: u64,
) -> std::result::Result<RunTrace, RunFailure> {
    let mut rng = stream(seed, Purpose::Sampling);
    let mut rec = Recorder::new(hb.b_max);
    let per_cycle = hb.brackets_per_cycle();
    let cap = cost_equivalent(hb, termination).filter(|_| !matches!(termination, Termination::Brackets(_)));
    let mut sh = 0;
    'schedule: loop {
        if let Termination::Brackets(k) = termination {
            if sh >= k * per_cycle {
                break;
            }
        }
        let plan = plan_bracket(hb, sh % per_cycle);
        let mut rung: Vec<UnitVector> = (0..plan.n_configs[0])
            .map(|_| UnitVector::sample(space.dim(), &mut rng))
            .collect();
        for (i, &budget) in plan.budgets.iter().enumerate() {
            let role = if i == 0 { Role::InitRandom } else { Role::Promotion };
            let mut scored = Vec::with_capacity(rung.len());
            for genome in rung {
                if rec.exhausted(termination, cap) {
                    break 'schedule;
                }
                match rec.evaluate(objective, space, &genome, budget, role, sh / per_cycle, sh, i) {
                    Ok(fitness) => scored.push((genome, fitness)),
                    Err(error) => return Err(RunFailure { error, trace: rec.trace }),
                }
            }
            if i + 1 < plan.n_rungs() {
                scored.sort_by(|a, b| a.1.total_cmp(&b.1));
                rung = scored
                    .into_iter()
                    .take(plan.n_configs[i + 1])
                    .map(|(g, _)| g)
                    .collect();
            } else {
                rung = Vec::new();
            }
        }
        sh += 1;
    }
    Ok(rec.trace)
}

/// Runs one algorithm for one seed.
pub fn run_single(cfg: &ExperimentConfig, objective: &dyn Objective, space: &ParameterSpace, seed: u64) -> std::result::Result<RunTrace, RunFailure> {
    let dehb_cfg = DehbConfig {
        hb: cfg.hb,
        f: cfg.f,
        p: cfg.p,
    };
    match cfg.algorithm {
        Algorithm::Dehb if cfg.n_workers > 1 => run_parallel(
            objective,
            space,
            dehb_cfg,
            cfg.termination,
            cfg.n_workers,
            OrchestratorPolicy::default(),
            seed,
        )
        .map(|o| o.trace),
        Algorithm::Dehb => engine::run(objective, space, dehb_cfg, cfg.termination, seed).map(|o| o.trace),
        Algorithm::De => {
            let de = DeConfig {
                f: cfg.f,
                p: cfg.p,
                pop_size: cfg.pop_size,
                update_mode: UpdateMode::Immediate,
            };
            let fe_max = match cost_equivalent(&cfg.hb, cfg.termination) {
                Some(cost) => (cost / cfg.hb.b_max).floor() as usize,
                None => match cfg.termination {
                    Termination::Evaluations(n) => n,
                    _ => unreachable!(),
                },
            }
            .max(cfg.pop_size);
            de_optimize(objective, space, &de, cfg.hb.b_max, fe_max, seed).map(|o| o.trace)
        }
        Algorithm::Hb => hb_baseline(objective, space, &cfg.hb, cfg.termination, seed),
        Algorithm::Rs => rs_baseline(objective, space, &cfg.hb, cfg.termination, seed),
    }
}

/// Regret of every incumbent, aligned with `trace.incumbent_history`.
/// Falls back to the incumbent's fitness when the objective has no known
/// optimum.
pub fn incumbent_regrets(trace: &RunTrace, objective: &dyn Objective, space: &ParameterSpace) -> Vec<f64> {
    trace
        .incumbent_history
        .iter()
        .map(|rec| {
            space
                .decode_slice(&rec.genome)
                .ok()
                .and_then(|c| objective.regret(&c))
                .unwrap_or(rec.fitness)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub cost: f64,
    pub mean_regret: f64,
    pub std_error: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRegret {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// `mean ± std` in short scientific notation.
    pub formatted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub benchmark: String,
    pub f: f64,
    pub p: f64,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_regret: FinalRegret,
    pub final_regrets: Vec<f64>,
    pub failures: Vec<SeedFailure>,
    pub incomplete: bool,
    pub version: String,
}

/// A finished seed: its trace and the regret of each incumbent.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: RunTrace,
    pub regrets: Vec<f64>,
}

impl SeedRun {
    pub fn regret_at(&self, cost: f64) -> Option<f64> {
        let n = self
            .trace
            .incumbent_history
            .iter()
            .take_while(|r| r.cumulative_cost <= cost)
            .count();
        n.checked_sub(1).map(|i| self.regrets[i])
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.regrets.last().copied()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Geometric grid from the first cost at which every run has an incumbent
/// to the largest total cost.
pub fn checkpoint_grid(runs: &[SeedRun]) -> Vec<f64> {
    let lo = runs
        .iter()
        .filter_map(|r| r.trace.incumbent_history.first().map(|i| i.cumulative_cost))
        .fold(0.0_f64, f64::max);
    let hi = runs.iter().map(|r| r.trace.total_cost()).fold(0.0_f64, f64::max);
    if !(lo > 0.0) || hi < lo {
        return Vec::new();
    }
    if hi == lo {
        return vec![lo];
    }
    let ratio = (hi / lo).powf(1.0 / (CHECKPOINTS - 1) as f64);
    (0..CHECKPOINTS)
        .map(|k| if k + 1 == CHECKPOINTS { hi } else { lo * ratio.powi(k as i32) })
        .collect()
}

pub fn summarize(cfg: &ExperimentConfig, runs: &[SeedRun], failures: Vec<SeedFailure>) -> Summary {
    let checkpoints = checkpoint_grid(runs)
        .into_iter()
        .map(|cost| {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.regret_at(cost)).collect();
            let (mean, std) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&values) };
            Checkpoint {
                cost,
                mean_regret: mean,
                std_error: std / (values.len() as f64).sqrt(),
                n: values.len(),
            }
        })
        .collect();
    let final_regrets: Vec<f64> = runs.iter().filter_map(SeedRun::final_regret).collect();
    let (mean, std) = if final_regrets.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_std(&final_regrets)
    };
    Summary {
        algorithm: cfg.algorithm,
        benchmark: cfg.benchmark.label(),
        f: cfg.f,
        p: cfg.p,
        seeds: cfg.seeds.clone(),
        checkpoints,
        final_regret: FinalRegret {
            mean,
            std,
            n: final_regrets.len(),
            formatted: format!("{mean:.1e} ± {std:.1e}"),
        },
        final_regrets,
        incomplete: !failures.is_empty(),
        failures,
        version: VERSION.to_string(),
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    version: &'static str,
}

fn trace_paths(dir: &Path, algorithm: Algorithm, seed: u64) -> (PathBuf, PathBuf) {
    let stem = format!("{}_seed{seed}", algorithm.name());
    (
        dir.join(format!("{stem}.csv")),
        dir.join(format!("{stem}_incumbent.csv")),
    )
}

pub fn write_trace(dir: &Path, algorithm: Algorithm, seed: u64, trace: &RunTrace) -> Result<()> {
    let (entries, incumbents) = trace_paths(dir, algorithm, seed);
    trace.write_entries_csv(BufWriter::new(File::create(entries)?))?;
    trace.write_incumbents_csv(BufWriter::new(File::create(incumbents)?))?;
    Ok(())
}

pub fn read_trace(dir: &Path, algorithm: Algorithm, seed: u64) -> Result<RunTrace> {
    let (entries, incumbents) = trace_paths(dir, algorithm, seed);
    RunTrace::read_csv(File::open(entries)?, File::open(incumbents)?)
}

/// Runs every seed, writes traces, the config sidecar and `summary.json`
/// when an output directory is set, and returns the summary with the
/// per-seed runs.
pub fn run_experiment_with_runs(cfg: &ExperimentConfig) -> Result<(Summary, Vec<SeedRun>)> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        let sidecar = Sidecar { config: cfg, version: VERSION };
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&sidecar)?)?;
    }
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let (objective, space) = cfg.benchmark.build(seed, &cfg.hb, cfg.n_workers)?;
        let trace = match run_single(cfg, objective.as_ref(), &space, seed) {
            Ok(trace) => trace,
            Err(failure) => {
                failures.push(SeedFailure {
                    seed,
                    error: failure.error.to_string(),
                });
                failure.trace
            }
        };
        if let Some(dir) = &cfg.out_dir {
            write_trace(dir, cfg.algorithm, seed, &trace)?;
        }
        let regrets = incumbent_regrets(&trace, objective.as_ref(), &space);
        runs.push(SeedRun { seed, trace, regrets });
    }
    let summary = summarize(cfg, &runs, failures);
    if let Some(dir) = &cfg.out_dir {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok((summary, runs))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    run_experiment_with_runs(cfg).map(|(s, _)| s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum SweepParam {
    #[value(name = "F")]
    F,
    #[value(name = "p")]
    P,
}

/// Grid both ablations use.
pub const ABLATION_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// One experiment per value of `param`, each in its own subdirectory of
/// the output directory.
pub fn run_sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<Summary>> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            let tag = match param {
                SweepParam::F => {
                    cfg.f = v;
                    format!("F_{v}")
                }
                SweepParam::P => {
                    cfg.p = v;
                    format!("p_{v}")
                }
            };
            cfg.out_dir = base.out_dir.as_ref().map(|d| d.join(tag));
            run_experiment(&cfg)
        })
        .collect()
}
