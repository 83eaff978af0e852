use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use dehb::benchmarks::{CountingOnes, MfQuadratic};
use dehb::orchestrator::{run_parallel, Clock, OrchestratorPolicy, FAILED_FITNESS};
use dehb::{DehbConfig, Evaluation, HbConfig, NativeConfig, Objective, ParameterSpace, RunTrace, Termination};

fn ladder_1_27_3() -> DehbConfig {
    DehbConfig::new(HbConfig::new(1.0, 27.0, 3.0).unwrap())
}

fn simulated(opportunistic: bool) -> OrchestratorPolicy {
    OrchestratorPolicy {
        opportunistic_brackets: opportunistic,
        clock: Clock::Simulated,
    }
}

#[test]
fn one_worker_equals_sequential_engine() {
    let q = MfQuadratic::new(4, 27.0).unwrap();
    let space = q.space().clone();
    for seed in 0..10 {
        let seq = dehb::run(&q, &space, ladder_1_27_3(), Termination::Brackets(3), seed).unwrap();
        let par = run_parallel(&q, &space, ladder_1_27_3(), Termination::Brackets(3), 1, simulated(true), seed).unwrap();
        assert_eq!(seq.trace, par.trace, "seed {seed}");
    }
    let co = CountingOnes::new(3, 3, 77).unwrap();
    let cfg = DehbConfig::new(HbConfig::new(9.0, 243.0, 3.0).unwrap());
    let seq = dehb::run(&co, co.space(), cfg, Termination::Brackets(2), 4).unwrap();
    let par = run_parallel(&co, co.space(), cfg, Termination::Brackets(2), 1, simulated(true), 4).unwrap();
    assert_eq!(seq.trace, par.trace);
}

/// Rung `i + 1` of an SH bracket never starts before the last rung-`i`
/// report of that bracket.
fn assert_barrier(trace: &RunTrace) {
    let mut finish: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in &trace.entries {
        let f = finish.entry((e.sh_bracket, e.rung)).or_insert(f64::NEG_INFINITY);
        *f = f.max(e.finished);
    }
    for e in &trace.entries {
        if e.rung > 0 {
            let lower = finish[&(e.sh_bracket, e.rung - 1)];
            assert!(e.started >= lower, "job {} started {} before rung end {}", e.job_id, e.started, lower);
        }
    }
}

#[test]
fn rung_barrier_holds_with_many_workers() {
    let q = MfQuadratic::new(3, 27.0).unwrap();
    for workers in [2, 4, 7, 16] {
        for opportunistic in [true, false] {
            let out = run_parallel(
                &q,
                q.space(),
                ladder_1_27_3(),
                Termination::Brackets(3),
                workers,
                simulated(opportunistic),
                workers as u64,
            )
            .unwrap();
            assert_eq!(out.trace.entries.len(), 3 * 69);
            assert_barrier(&out.trace);
            let ids: HashSet<u64> = out.trace.entries.iter().map(|e| e.job_id).collect();
            assert_eq!(ids.len(), out.trace.entries.len());
            if !opportunistic {
                // brackets never overlap in time
                let mut spans: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
                for e in &out.trace.entries {
                    let s = spans.entry(e.sh_bracket).or_insert((f64::INFINITY, f64::NEG_INFINITY));
                    s.0 = s.0.min(e.started);
                    s.1 = s.1.max(e.finished);
                }
                let spans: Vec<_> = spans.values().collect();
                assert!(spans.windows(2).all(|w| w[1].0 >= w[0].1));
            }
        }
    }
}

#[test]
fn opportunistic_brackets_use_more_workers() {
    let q = MfQuadratic::new(3, 27.0).unwrap();
    let run = |opp| {
        run_parallel(&q, q.space(), ladder_1_27_3(), Termination::Brackets(4), 8, simulated(opp), 3)
            .unwrap()
            .trace
            .entries
            .iter()
            .map(|e| e.finished)
            .fold(0.0, f64::max)
    };
    assert!(run(true) < run(false));
}

/// Fails the first `failures[job]` attempts of each listed job.
struct Flaky {
    inner: MfQuadratic,
    failures: Mutex<HashMap<u64, usize>>,
}

impl Objective for Flaky {
    fn evaluate(&self, c: &NativeConfig, budget: f64, job_id: u64) -> dehb::Result<Evaluation> {
        let mut f = self.failures.lock().unwrap();
        if let Some(n) = f.get_mut(&job_id) {
            if *n > 0 {
                *n -= 1;
                return Err(dehb::Error::Objective(format!("job {job_id} crashed")));
            }
        }
        drop(f);
        self.inner.evaluate(c, budget, job_id)
    }
}

#[test]
fn failures_are_retried_once_then_recorded() {
    for clock in [Clock::Simulated, Clock::Wall] {
        let flaky = Flaky {
            inner: MfQuadratic::new(3, 27.0).unwrap(),
            failures: Mutex::new(HashMap::from([(3, 1), (5, 2), (30, 5), (68, 2)])),
        };
        let space = flaky.inner.space().clone();
        let policy = OrchestratorPolicy {
            opportunistic_brackets: true,
            clock,
        };
        let out = run_parallel(&flaky, &space, ladder_1_27_3(), Termination::Brackets(1), 3, policy, 0).unwrap();
        assert_eq!(out.trace.entries.len(), 69);
        let by_id: HashMap<u64, _> = out.trace.entries.iter().map(|e| (e.job_id, e)).collect();
        assert!(!by_id[&3].failed && by_id[&3].fitness.is_finite());
        for id in [5, 30, 68] {
            let e = by_id[&id];
            assert!(e.failed);
            assert_eq!(e.fitness, FAILED_FITNESS);
            assert_eq!(e.cost, e.budget);
        }
        assert_eq!(out.trace.entries.iter().filter(|e| e.failed).count(), 3);
        // job 68 is the last b_max evaluation: a failure never becomes incumbent
        assert!(out.trace.incumbent_history.iter().all(|r| r.fitness.is_finite()));
        assert_barrier(&out.trace);
    }
}

#[test]
fn wall_clock_run_completes_the_schedule() {
    let co = CountingOnes::new(4, 4, 1).unwrap();
    let cfg = DehbConfig::new(HbConfig::new(9.0, 243.0, 3.0).unwrap());
    let policy = OrchestratorPolicy {
        opportunistic_brackets: true,
        clock: Clock::Wall,
    };
    let out = run_parallel(&co, co.space(), cfg, Termination::Brackets(2), 4, policy, 6).unwrap();
    let per_bracket: usize = dehb::hyperband::cycle_plans(&cfg.hb).iter().map(|p| p.total_configs()).sum();
    assert_eq!(out.trace.entries.len(), 2 * per_bracket);
    assert!(out.incumbent.is_some());
    assert_barrier(&out.trace);
    let inc: Vec<f64> = out.trace.incumbent_history.iter().map(|r| r.fitness).collect();
    assert!(inc.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn zero_workers_is_a_config_error() {
    let space = ParameterSpace::unit_box(2).unwrap();
    let q = MfQuadratic::new(2, 27.0).unwrap();
    let err = run_parallel(&q, &space, ladder_1_27_3(), Termination::Brackets(1), 0, simulated(true), 0).unwrap_err();
    assert!(err.error.to_string().contains("n_workers"));
}
