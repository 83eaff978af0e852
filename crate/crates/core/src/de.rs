//! Differential Evolution: DE/rand/1 mutation, binomial crossover, greedy
//! pairwise selection and the generational optimizer loop.
//!
//! All operators work on genomes in the unit hypercube. A mutant component
//! that leaves `[0, 1]` is replaced by a fresh uniform draw.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result, RunFailure};
use crate::objective::Objective;
use crate::rng::RngStreams;
use crate::space::{ParameterSpace, UnitVector};
use crate::trace::{Role, RunTrace, TraceEntry};

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: UnitVector,
    pub fitness: Option<f64>,
    pub budget: Option<f64>,
}

impl Individual {
    pub fn unevaluated(genome: UnitVector) -> Self {
        Self {
            genome,
            fitness: None,
            budget: None,
        }
    }

    pub fn evaluated(genome: UnitVector, fitness: f64, budget: f64) -> Self {
        Self {
            genome,
            fitness: Some(fitness),
            budget: Some(budget),
        }
    }

    pub fn is_evaluated(&self) -> bool {
        self.fitness.is_some()
    }
}

/// When selection results are written back into the population.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdateMode {
    /// Classical DE: the next generation is assembled after every target
    /// has been evolved.
    Deferred,
    /// Each selection replaces its slot before the next target is evolved.
    #[default]
    Immediate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeConfig {
    /// Mutation scaling factor.
    pub f: f64,
    /// Crossover rate.
    pub p: f64,
    pub pop_size: usize,
    pub update_mode: UpdateMode,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            f: 0.5,
            p: 0.5,
            pop_size: 20,
            update_mode: UpdateMode::Deferred,
        }
    }
}

impl DeConfig {
    /// Checks `f` and `p` only; population size is validated by the
    /// standalone optimizer.
    pub fn validate_operators(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f <= 2.0) {
            return Err(Error::config("F", format!("{} is outside (0, 2]", self.f)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config("p", format!("{} is outside [0, 1]", self.p)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_operators()?;
        if self.pop_size < 4 {
            return Err(Error::config(
                "pop_size",
                format!("{} is below the rand/1 minimum of 4", self.pop_size),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub members: Vec<Individual>,
    pub generation: usize,
}

/// Keeps in-range components and resamples the rest uniformly.
pub fn boundary_reset<R: Rng + ?Sized>(mut v: Vec<f64>, rng: &mut R) -> UnitVector {
    for x in v.iter_mut() {
        if !(0.0..=1.0).contains(x) {
            *x = rng.random::<f64>();
        }
    }
    UnitVector::new(v).expect("all components reset into [0, 1]")
}

/// `x_r1 + F * (x_r2 - x_r3)`, followed by [`boundary_reset`].
pub fn mutate_rand1<R: Rng + ?Sized>(
    r1: &UnitVector,
    r2: &UnitVector,
    r3: &UnitVector,
    f: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    let dim = r1.dim();
    for other in [r2, r3] {
        if other.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: other.dim(),
            });
        }
    }
    let raw = (0..dim).map(|j| r1[j] + f * (r2[j] - r3[j])).collect();
    Ok(boundary_reset(raw, rng))
}

/// Which components of a trial come from the mutant.
///
/// Draw order: the forced index first, then one uniform per dimension.
pub fn crossover_mask<R: Rng + ?Sized>(dim: usize, p: f64, rng: &mut R) -> Vec<bool> {
    let j_rand = rng.random_range(0..dim);
    (0..dim)
        .map(|j| {
            let draw = rng.random::<f64>();
            draw <= p || j == j_rand
        })
        .collect()
}

pub fn crossover_binomial<R: Rng + ?Sized>(
    target: &UnitVector,
    mutant: &UnitVector,
    p: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    if target.dim() != mutant.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            actual: mutant.dim(),
        });
    }
    let mask = crossover_mask(target.dim(), p, rng);
    let trial = mask
        .iter()
        .enumerate()
        .map(|(j, &from_mutant)| if from_mutant { mutant[j] } else { target[j] })
        .collect();
    Ok(UnitVector::new(trial).expect("components come from unit vectors"))
}

/// Greedy selection for minimization; a tie goes to the trial.
pub fn trial_survives(target_fitness: f64, trial_fitness: f64) -> bool {
    trial_fitness <= target_fitness
}

pub fn select<'a>(target: &'a Individual, trial: &'a Individual) -> Result<&'a Individual> {
    let (Some(target_fit), Some(trial_fit)) = (target.fitness, trial.fitness) else {
        return Err(Error::MissingFitness);
    };
    if target.budget != trial.budget {
        return Err(Error::Sequencing(format!(
            "selection across budgets {:?} and {:?}",
            target.budget, trial.budget
        )));
    }
    Ok(if trial_survives(target_fit, trial_fit) {
        trial
    } else {
        target
    })
}

/// Draws three distinct indices from `0..n`, none equal to `exclude`.
pub(crate) fn distinct_parents<R: Rng + ?Sized>(n: usize, exclude: usize, rng: &mut R) -> [usize; 3] {
    debug_assert!(n >= 4 && exclude < n);
    let picks = index::sample(rng, n - 1, 3);
    let mut out = [0; 3];
    for (slot, pick) in out.iter_mut().zip(picks.iter()) {
        *slot = if pick >= exclude { pick + 1 } else { pick };
    }
    out
}

#[derive(Clone, Debug)]
pub struct DeOutcome {
    pub best: Individual,
    pub population: Population,
    pub trace: RunTrace,
}

/// Bookkeeping shared by the init phase and the generations.
struct Evaluator<'a, O: ?Sized> {
    objective: &'a O,
    space: &'a ParameterSpace,
    budget: f64,
    trace: RunTrace,
    best: Option<Individual>,
}

impl<O: Objective + ?Sized> Evaluator<'_, O> {
    fn evaluate(&mut self, genome: &UnitVector, role: Role, generation: usize) -> Result<f64> {
        let config = self.space.decode(genome)?;
        let job_id = self.trace.entries.len() as u64;
        let eval = self.objective.evaluate(&config, self.budget, job_id)?;
        let started = self.trace.total_cost();
        let cumulative_cost = started + eval.cost;
        self.trace.entries.push(TraceEntry {
            index: self.trace.entries.len(),
            job_id,
            budget: self.budget,
            fitness: eval.fitness,
            cost: eval.cost,
            cumulative_cost,
            role,
            bracket: generation,
            sh_bracket: 0,
            rung: 0,
            started,
            finished: cumulative_cost,
            failed: false,
        });
        if self
            .trace
            .offer_incumbent(cumulative_cost, eval.fitness, genome.as_slice())
        {
            self.best = Some(Individual::evaluated(genome.clone(), eval.fitness, self.budget));
        }
        Ok(eval.fitness)
    }

    fn spent(&self) -> usize {
        self.trace.entries.len()
    }
}

/// Generational DE on `objective` at a fixed `budget`, stopping once
/// `fe_max` evaluations have been made. Returns the lowest-fitness
/// individual ever evaluated.
pub fn de_optimize<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    cfg: &DeConfig,
    budget: f64,
    fe_max: usize,
    seed: u64,
) -> std::result::Result<DeOutcome, RunFailure> {
    let fail = |error, trace| RunFailure { error, trace };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, RunTrace::default()));
    }
    if fe_max < cfg.pop_size {
        return Err(fail(
            Error::config("fe_max", format!("{fe_max} is below the population size")),
            RunTrace::default(),
        ));
    }

    let mut streams = RngStreams::new(seed);
    let mut ev = Evaluator {
        objective,
        space,
        budget,
        trace: RunTrace::default(),
        best: None,
    };
    let n = cfg.pop_size;
    let dim = space.dim();

    let mut pop = Population {
        members: Vec::with_capacity(n),
        generation: 0,
    };
    for _ in 0..n {
        let genome = UnitVector::sample(dim, &mut streams.init);
        let fitness = match ev.evaluate(&genome, Role::InitRandom, 0) {
            Ok(f) => f,
            Err(e) => return Err(fail(e, ev.trace)),
        };
        pop.members.push(Individual::evaluated(genome, fitness, budget));
    }

    while ev.spent() < fe_max {
        pop.generation += 1;
        let result = match cfg.update_mode {
            UpdateMode::Immediate => immediate_generation(&mut pop, cfg, &mut streams, &mut ev, fe_max),
            UpdateMode::Deferred => deferred_generation(&mut pop, cfg, &mut streams, &mut ev, fe_max),
        };
        if let Err(e) = result {
            return Err(fail(e, ev.trace));
        }
    }

    let best = ev.best.clone().expect("at least one evaluation");
    Ok(DeOutcome {
        best,
        population: pop,
        trace: ev.trace,
    })
}

fn make_trial(
    members: &[Individual],
    target: usize,
    cfg: &DeConfig,
    streams: &mut RngStreams,
) -> Result<UnitVector> {
    let [a, b, c] = distinct_parents(members.len(), target, &mut streams.mutation);
    let mutant = mutate_rand1(
        &members[a].genome,
        &members[b].genome,
        &members[c].genome,
        cfg.f,
        &mut streams.boundary,
    )?;
    crossover_binomial(&members[target].genome, &mutant, cfg.p, &mut streams.crossover)
}

fn immediate_generation<O: Objective + ?Sized>(
    pop: &mut Population,
    cfg: &DeConfig,
    streams: &mut RngStreams,
    ev: &mut Evaluator<'_, O>,
    fe_max: usize,
) -> Result<()> {
    for i in 0..pop.members.len() {
        if ev.spent() >= fe_max {
            break;
        }
        let genome = make_trial(&pop.members, i, cfg, streams)?;
        let fitness = ev.evaluate(&genome, Role::VanillaEvolution, pop.generation)?;
        let trial = Individual::evaluated(genome, fitness, ev.budget);
        if std::ptr::eq(select(&pop.members[i], &trial)?, &trial) {
            pop.members[i] = trial;
        }
    }
    Ok(())
}

fn deferred_generation<O: Objective + ?Sized>(
    pop: &mut Population,
    cfg: &DeConfig,
    streams: &mut RngStreams,
    ev: &mut Evaluator<'_, O>,
    fe_max: usize,
) -> Result<()> {
    let trials = (0..pop.members.len())
        .map(|i| make_trial(&pop.members, i, cfg, streams))
        .collect::<Result<Vec<_>>>()?;
    let mut next = pop.members.clone();
    for (i, genome) in trials.into_iter().enumerate() {
        if ev.spent() >= fe_max {
            break;
        }
        let fitness = ev.evaluate(&genome, Role::VanillaEvolution, pop.generation)?;
        let trial = Individual::evaluated(genome, fitness, ev.budget);
        if std::ptr::eq(select(&pop.members[i], &trial)?, &trial) {
            next[i] = trial;
        }
    }
    pop.members = next;
    Ok(())
}
