//! DEHB: differential evolution run inside Hyperband's bracket schedule.
//!
//! One DE subpopulation lives at every budget level of the Hyperband ladder,
//! sized by the largest rung Hyperband ever runs there. The schedule is a
//! fixed sequence of successive-halving (SH) brackets; a full Hyperband cycle
//! of them is one DEHB bracket.
//!
//! * DEHB bracket 0 seeds the subpopulations: rung 0 evaluates the random
//!   initial members and every higher rung re-evaluates the best members of
//!   the subpopulation one level down (promotion).
//! * Afterwards every rung evolves its subpopulation. Rung 0 of an SH
//!   bracket mutates with parents from its own subpopulation; higher rungs
//!   draw parents from the parent pool, the best `ceil(n / eta)`
//!   configurations of the rung below in the same SH bracket. Pools with
//!   fewer than three usable parents are topped up from the union of all
//!   subpopulations.
//! * Targets are picked by a rolling pointer per subpopulation and replaced
//!   as soon as a trial is reported with fitness no worse than theirs.
//!
//! The state machine is ask/tell shaped so that [`crate::orchestrator`] can
//! keep several suggestions in flight. Rung `i + 1` of an SH bracket is only
//! issued once every rung-`i` report of that bracket is in.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::de::{crossover_binomial, mutate_rand1, trial_survives, Individual};
use crate::error::{Error, Result, RunFailure};
use crate::hyperband::{plan_bracket, subpop_sizes, BracketPlan, HbConfig};
use crate::objective::Objective;
use crate::rng::RngStreams;
use crate::space::{ParameterSpace, UnitVector};
use crate::trace::{IncumbentRecord, Role, RunTrace, TraceEntry};

const PARENTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DehbConfig {
    pub hb: HbConfig,
    pub f: f64,
    pub p: f64,
}

impl DehbConfig {
    pub fn new(hb: HbConfig) -> Self {
        Self { hb, f: 0.5, p: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        self.hb.validate()?;
        crate::de::DeConfig {
            f: self.f,
            p: self.p,
            ..Default::default()
        }
        .validate_operators()
    }
}

/// When a run stops issuing new evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Number of full Hyperband cycles.
    Brackets(usize),
    Evaluations(usize),
    /// Cumulative reported cost.
    CostBudget(f64),
}

impl Termination {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Termination::Brackets(0) => Err(Error::config("termination", "zero brackets")),
            Termination::Evaluations(0) => Err(Error::config("termination", "zero evaluations")),
            Termination::CostBudget(c) if !(c > 0.0) => {
                Err(Error::config("termination", format!("cost budget {c} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Where a mutation parent came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParentSource {
    /// Slot of the target's own subpopulation.
    Subpopulation(usize),
    /// Index into the rung's parent pool.
    ParentPool(usize),
    /// `(level, slot)` of the global population pool.
    Global(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Suggestion {
    pub job_id: u64,
    pub genome: UnitVector,
    pub budget: f64,
    pub role: Role,
    /// Slot of the subpopulation at `budget` this evaluation competes for.
    pub target_index: usize,
    /// DEHB bracket (Hyperband cycle) counter.
    pub bracket: usize,
    /// Global index of the SH bracket.
    pub sh_bracket: usize,
    /// Position of the SH bracket within its cycle.
    pub iteration: usize,
    pub rung: usize,
    pub parents: Vec<ParentSource>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub job_id: u64,
    pub fitness: f64,
    pub cost: f64,
}

/// Outcome of [`DehbState::ask`].
#[derive(Clone, Debug, PartialEq)]
pub enum Ask {
    Job(Suggestion),
    /// Nothing can be issued until an outstanding job reports.
    Wait,
    /// The run will not issue anything else.
    Done,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subpopulation {
    pub budget: f64,
    pub members: Vec<Individual>,
    pub rolling_ptr: usize,
}

impl Subpopulation {
    fn next_target(&mut self) -> usize {
        let t = self.rolling_ptr;
        self.rolling_ptr = (self.rolling_ptr + 1) % self.members.len();
        t
    }

    /// Slots holding evaluated members, best first; ties keep slot order.
    pub fn ranked(&self) -> Vec<usize> {
        let mut slots: Vec<usize> = (0..self.members.len())
            .filter(|&i| self.members[i].is_evaluated())
            .collect();
        slots.sort_by(|&a, &b| {
            let fa = self.members[a].fitness.expect("filtered");
            let fb = self.members[b].fitness.expect("filtered");
            fa.total_cmp(&fb)
        });
        slots
    }

    pub fn best(&self) -> Option<&Individual> {
        self.ranked().first().map(|&i| &self.members[i])
    }
}

/// Parent candidates for one rung, best first by lower-rung fitness.
#[derive(Clone, Debug, PartialEq)]
pub struct ParentPool {
    pub budget: f64,
    pub members: Vec<UnitVector>,
}

/// Top `ceil(n_lower / eta)` of a completed rung, best first with ties in
/// issue order.
pub fn parent_pool_from(
    lower: &[(UnitVector, f64)],
    n_lower: usize,
    eta: f64,
    budget: f64,
) -> ParentPool {
    let keep = ((n_lower as f64 / eta) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..lower.len()).collect();
    order.sort_by(|&a, &b| lower[a].1.total_cmp(&lower[b].1));
    ParentPool {
        budget,
        members: order
            .into_iter()
            .take(keep)
            .map(|i| lower[i].0.clone())
            .collect(),
    }
}

/// Progress of one open SH bracket.
#[derive(Clone, Debug)]
struct ShBracket {
    index: usize,
    bracket: usize,
    plan: BracketPlan,
    first_level: usize,
    rung: usize,
    issued: usize,
    reported: Vec<usize>,
    /// Per rung, per issue slot: evaluated genome and fitness.
    evaluated: Vec<Vec<Option<(UnitVector, f64)>>>,
    parent_pool: Option<ParentPool>,
    promotion_order: Vec<UnitVector>,
}

impl ShBracket {
    fn can_issue(&self) -> bool {
        self.issued < self.plan.n_configs[self.rung]
    }

    fn is_complete(&self) -> bool {
        self.rung == self.plan.s && self.reported[self.rung] == self.plan.n_configs[self.rung]
    }

    fn rung_results(&self, rung: usize) -> Option<Vec<(UnitVector, f64)>> {
        self.evaluated[rung].iter().cloned().collect()
    }
}

#[derive(Clone, Debug)]
struct Pending {
    suggestion: Suggestion,
    level: usize,
    slot_in_rung: usize,
}

/// The single owner of all DEHB subpopulations.
#[derive(Clone, Debug)]
pub struct DehbState {
    cfg: DehbConfig,
    dim: usize,
    s_max: usize,
    termination: Termination,
    opportunistic: bool,
    streams: RngStreams,
    subpops: Vec<Subpopulation>,
    open: VecDeque<ShBracket>,
    next_sh: usize,
    next_job: u64,
    outstanding: BTreeMap<u64, Pending>,
    pending_init: HashSet<(usize, usize)>,
    cumulative_cost: f64,
    trace: RunTrace,
}

impl DehbState {
    /// Builds the state and fills every subpopulation with uniform samples.
    pub fn new(dim: usize, cfg: DehbConfig, termination: Termination, seed: u64) -> Result<Self> {
        cfg.validate()?;
        termination.validate()?;
        if dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        let mut state = Self {
            cfg,
            dim,
            s_max: cfg.hb.s_max(),
            termination,
            opportunistic: true,
            streams: RngStreams::new(seed),
            subpops: Vec::new(),
            open: VecDeque::new(),
            next_sh: 0,
            next_job: 0,
            outstanding: BTreeMap::new(),
            pending_init: HashSet::new(),
            cumulative_cost: 0.0,
            trace: RunTrace::default(),
        };
        state.init_subpopulations();
        Ok(state)
    }

    /// Opening a new SH bracket while open ones are blocked on their rung
    /// barrier. On by default.
    pub fn set_opportunistic(&mut self, enabled: bool) {
        self.opportunistic = enabled;
    }

    fn init_subpopulations(&mut self) {
        self.subpops = subpop_sizes(&self.cfg.hb)
            .into_iter()
            .map(|(budget, size)| Subpopulation {
                budget,
                members: (0..size)
                    .map(|_| Individual::unevaluated(UnitVector::sample(self.dim, &mut self.streams.init)))
                    .collect(),
                rolling_ptr: 0,
            })
            .collect();
    }

    pub fn config(&self) -> &DehbConfig {
        &self.cfg
    }

    pub fn subpopulations(&self) -> &[Subpopulation] {
        &self.subpops
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RunTrace {
        self.trace
    }

    pub fn incumbent(&self) -> Option<&IncumbentRecord> {
        self.trace.incumbent()
    }

    pub fn cumulative_cost(&self) -> f64 {
        self.cumulative_cost
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    /// Best evaluated member at ladder level `level`.
    pub fn best_at_level(&self, level: usize) -> Option<&Individual> {
        self.subpops.get(level).and_then(Subpopulation::best)
    }

    /// Snapshot of every subpopulation genome, level by level.
    pub fn global_pool(&self) -> Vec<UnitVector> {
        self.subpops
            .iter()
            .flat_map(|sp| sp.members.iter().map(|m| m.genome.clone()))
            .collect()
    }

    /// Parent pool for rung `rung` of the open SH bracket `sh_bracket`.
    pub fn build_parent_pool(&self, sh_bracket: usize, rung: usize) -> Result<ParentPool> {
        let b = self
            .open
            .iter()
            .find(|b| b.index == sh_bracket)
            .ok_or_else(|| Error::Sequencing(format!("SH bracket {sh_bracket} is not open")))?;
        if rung == 0 || rung > b.plan.s {
            return Err(Error::Sequencing(format!("rung {rung} has no lower rung in this bracket")));
        }
        let lower = b.rung_results(rung - 1).filter(|r| r.len() == b.plan.n_configs[rung - 1]);
        let lower = lower.ok_or_else(|| {
            Error::Sequencing(format!("rung {} of SH bracket {sh_bracket} is incomplete", rung - 1))
        })?;
        Ok(parent_pool_from(
            &lower,
            b.plan.n_configs[rung - 1],
            self.cfg.hb.eta,
            b.plan.budgets[rung],
        ))
    }

    fn stop_issuing(&self) -> bool {
        match self.termination {
            Termination::Brackets(_) => false,
            Termination::Evaluations(n) => self.next_job as usize >= n,
            Termination::CostBudget(c) => self.cumulative_cost >= c,
        }
    }

    fn schedule_has(&self, sh_index: usize) -> bool {
        match self.termination {
            Termination::Brackets(k) => sh_index < k * (self.s_max + 1),
            _ => true,
        }
    }

    /// Next evaluation to run, honoring the rung barrier.
    pub fn ask(&mut self) -> Ask {
        if self.stop_issuing() {
            return Ask::Done;
        }
        if let Some(pos) = self.open.iter().position(ShBracket::can_issue) {
            return Ask::Job(self.issue(pos));
        }
        if (self.open.is_empty() || self.opportunistic) && self.schedule_has(self.next_sh) {
            self.open_next_bracket();
            let pos = self.open.len() - 1;
            return Ask::Job(self.issue(pos));
        }
        if self.outstanding.is_empty() {
            Ask::Done
        } else {
            Ask::Wait
        }
    }

    fn open_next_bracket(&mut self) {
        let index = self.next_sh;
        self.next_sh += 1;
        let per_cycle = self.s_max + 1;
        let plan = plan_bracket(&self.cfg.hb, index % per_cycle);
        let n_rungs = plan.n_rungs();
        let first_level = plan.first_level(self.s_max);
        self.open.push_back(ShBracket {
            index,
            bracket: index / per_cycle,
            evaluated: plan.n_configs.iter().map(|&n| vec![None; n]).collect(),
            plan,
            first_level,
            rung: 0,
            issued: 0,
            reported: vec![0; n_rungs],
            parent_pool: None,
            promotion_order: Vec::new(),
        });
    }

    fn issue(&mut self, pos: usize) -> Suggestion {
        let (index, bracket, iteration, rung, slot_in_rung, level, budget) = {
            let b = &mut self.open[pos];
            let slot = b.issued;
            b.issued += 1;
            (
                b.index,
                b.bracket,
                b.plan.iteration,
                b.rung,
                slot,
                b.first_level + b.rung,
                b.plan.budgets[b.rung],
            )
        };
        let job_id = self.next_job;
        self.next_job += 1;

        let (genome, role, target_index, parents) = if rung == 0 {
            match self.unevaluated_slot(level) {
                Some(slot) => {
                    self.pending_init.insert((level, slot));
                    let genome = self.subpops[level].members[slot].genome.clone();
                    (genome, Role::InitRandom, slot, Vec::new())
                }
                None => self.evolve(level, None),
            }
        } else if bracket == 0 {
            let order = &self.open[pos].promotion_order;
            let genome = order[slot_in_rung % order.len()].clone();
            (genome, Role::Promotion, slot_in_rung, Vec::new())
        } else {
            let pool = self.open[pos].parent_pool.clone().expect("set when the rung opened");
            self.evolve(level, Some(&pool))
        };

        let suggestion = Suggestion {
            job_id,
            genome,
            budget,
            role,
            target_index,
            bracket,
            sh_bracket: index,
            iteration,
            rung,
            parents,
        };
        self.outstanding.insert(
            job_id,
            Pending {
                suggestion: suggestion.clone(),
                level,
                slot_in_rung,
            },
        );
        suggestion
    }

    fn unevaluated_slot(&self, level: usize) -> Option<usize> {
        self.subpops[level]
            .members
            .iter()
            .enumerate()
            .find(|(slot, m)| !m.is_evaluated() && !self.pending_init.contains(&(level, *slot)))
            .map(|(slot, _)| slot)
    }

    /// Mutation plus crossover against the next rolling target at `level`.
    /// `pool` selects altered mutation.
    fn evolve(
        &mut self,
        level: usize,
        pool: Option<&ParentPool>,
    ) -> (UnitVector, Role, usize, Vec<ParentSource>) {
        let target = self.subpops[level].next_target();
        let target_genome = self.subpops[level].members[target].genome.clone();

        let (role, candidates): (Role, Vec<(ParentSource, UnitVector)>) = match pool {
            None => (
                Role::VanillaEvolution,
                self.subpops[level]
                    .members
                    .iter()
                    .enumerate()
                    .filter(|(slot, _)| *slot != target)
                    .map(|(slot, m)| (ParentSource::Subpopulation(slot), m.genome.clone()))
                    .collect(),
            ),
            Some(pool) => (
                Role::AlteredEvolution,
                pool.members
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| **g != target_genome)
                    .map(|(i, g)| (ParentSource::ParentPool(i), g.clone()))
                    .collect(),
            ),
        };

        let rng = &mut self.streams.mutation;
        let mut parents: Vec<(ParentSource, UnitVector)> = if candidates.len() >= PARENTS {
            index::sample(rng, candidates.len(), PARENTS)
                .into_iter()
                .map(|i| candidates[i].clone())
                .collect()
        } else {
            let mut all = candidates;
            all.shuffle(rng);
            all
        };

        if parents.len() < PARENTS {
            let global: Vec<(ParentSource, UnitVector)> = self
                .subpops
                .iter()
                .enumerate()
                .flat_map(|(l, sp)| {
                    sp.members
                        .iter()
                        .enumerate()
                        .map(move |(slot, m)| (ParentSource::Global(l, slot), m.genome.clone()))
                })
                .collect();
            let eligible: Vec<usize> = (0..global.len())
                .filter(|&i| global[i].0 != ParentSource::Global(level, target))
                .collect();
            let need = PARENTS - parents.len();
            if eligible.len() >= need {
                for i in index::sample(rng, eligible.len(), need) {
                    parents.push(global[eligible[i]].clone());
                }
            } else {
                // Degenerate ladders (a single slot in total) fall back to
                // drawing with replacement.
                for _ in 0..need {
                    let i = rng.random_range(0..global.len());
                    parents.push(global[i].clone());
                }
            }
        }

        let mutant = mutate_rand1(
            &parents[0].1,
            &parents[1].1,
            &parents[2].1,
            self.cfg.f,
            &mut self.streams.boundary,
        )
        .expect("all genomes share the space dimension");
        let trial = crossover_binomial(&target_genome, &mutant, self.cfg.p, &mut self.streams.crossover)
            .expect("all genomes share the space dimension");
        (trial, role, target, parents.into_iter().map(|(s, _)| s).collect())
    }

    /// Applies a report, timing it on the cumulative-cost clock.
    pub fn tell(&mut self, report: Report) -> Result<()> {
        let started = self.cumulative_cost;
        self.tell_timed(report, started, started + report.cost, false)
    }

    /// Applies a report with externally measured start and finish times.
    /// `failed` marks evaluations whose fitness is a failure sentinel.
    pub fn tell_timed(&mut self, report: Report, started: f64, finished: f64, failed: bool) -> Result<()> {
        let pending = self
            .outstanding
            .remove(&report.job_id)
            .ok_or(Error::UnknownJob(report.job_id))?;
        let s = &pending.suggestion;
        let level = pending.level;
        let budget = s.budget;

        let subpop = &mut self.subpops[level];
        let evaluated = Individual::evaluated(s.genome.clone(), report.fitness, budget);
        match s.role {
            Role::InitRandom | Role::Promotion => {
                self.pending_init.remove(&(level, s.target_index));
                subpop.members[s.target_index] = evaluated;
            }
            Role::VanillaEvolution | Role::AlteredEvolution => {
                let slot = &mut subpop.members[s.target_index];
                let replace = match slot.fitness {
                    None => true,
                    Some(current) => trial_survives(current, report.fitness),
                };
                if replace {
                    *slot = evaluated;
                }
            }
        }

        self.cumulative_cost += report.cost;
        self.trace.entries.push(TraceEntry {
            index: self.trace.entries.len(),
            job_id: report.job_id,
            budget,
            fitness: report.fitness,
            cost: report.cost,
            cumulative_cost: self.cumulative_cost,
            role: s.role,
            bracket: s.bracket,
            sh_bracket: s.sh_bracket,
            rung: s.rung,
            started,
            finished,
            failed,
        });
        if level == self.s_max {
            self.trace
                .offer_incumbent(self.cumulative_cost, report.fitness, s.genome.as_slice());
        }

        self.record_rung_result(&pending, report.fitness);
        Ok(())
    }

    fn record_rung_result(&mut self, pending: &Pending, fitness: f64) {
        let s = &pending.suggestion;
        let pos = self
            .open
            .iter()
            .position(|b| b.index == s.sh_bracket)
            .expect("an outstanding job's bracket stays open");
        let b = &mut self.open[pos];
        b.evaluated[s.rung][pending.slot_in_rung] = Some((s.genome.clone(), fitness));
        b.reported[s.rung] += 1;

        if b.is_complete() {
            self.open.remove(pos);
            return;
        }
        let rung_done = b.rung == s.rung
            && b.issued == b.plan.n_configs[b.rung]
            && b.reported[b.rung] == b.plan.n_configs[b.rung];
        if !rung_done {
            return;
        }
        b.rung += 1;
        b.issued = 0;
        if b.bracket == 0 {
            let lower = &self.subpops[b.first_level + b.rung - 1];
            b.promotion_order = lower
                .ranked()
                .into_iter()
                .map(|i| lower.members[i].genome.clone())
                .collect();
        } else {
            let lower = b.rung_results(b.rung - 1).expect("rung complete");
            b.parent_pool = Some(parent_pool_from(
                &lower,
                b.plan.n_configs[b.rung - 1],
                self.cfg.hb.eta,
                b.plan.budgets[b.rung],
            ));
        }
    }
}

#[derive(Clone, Debug)]
pub struct DehbOutcome {
    pub incumbent: Option<IncumbentRecord>,
    pub trace: RunTrace,
    pub state: DehbState,
}

/// Runs DEHB sequentially: one evaluation at a time.
pub fn run<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    cfg: DehbConfig,
    termination: Termination,
    seed: u64,
) -> std::result::Result<DehbOutcome, RunFailure> {
    let mut state = DehbState::new(space.dim(), cfg, termination, seed).map_err(|error| RunFailure {
        error,
        trace: RunTrace::default(),
    })?;
    loop {
        let suggestion = match state.ask() {
            Ask::Job(s) => s,
            Ask::Done => break,
            Ask::Wait => unreachable!("a sequential run never has jobs in flight"),
        };
        let evaluated = space
            .decode(&suggestion.genome)
            .and_then(|config| objective.evaluate(&config, suggestion.budget, suggestion.job_id));
        let eval = match evaluated {
            Ok(eval) => eval,
            Err(error) => {
                return Err(RunFailure {
                    error,
                    trace: state.into_trace(),
                })
            }
        };
        state
            .tell(Report {
                job_id: suggestion.job_id,
                fitness: eval.fitness,
                cost: eval.cost,
            })
            .expect("the suggestion was just issued");
    }
    Ok(DehbOutcome {
        incumbent: state.incumbent().cloned(),
        trace: state.trace().clone(),
        state,
    })
}
