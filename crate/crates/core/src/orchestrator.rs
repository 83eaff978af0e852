//! Parallel DEHB: one control loop owns the [`DehbState`] and hands decoded
//! configurations to a pool of workers.
//!
//! Rungs inside an SH bracket stay synchronous (the engine will not issue
//! rung `i + 1` before rung `i` is fully reported). When every open bracket
//! is blocked on that barrier and a worker is idle, the next SH bracket of
//! the schedule is opened, unless the policy disables it.
//!
//! Two clocks are available. [`Clock::Simulated`] runs evaluations inline and
//! advances a virtual clock by each evaluation's reported cost, so runs are
//! deterministic and speedups can be measured without sleeping.
//! [`Clock::Wall`] runs workers on threads and applies reports in arrival
//! order.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{mpsc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{Ask, DehbConfig, DehbOutcome, DehbState, Report, Suggestion, Termination};
use crate::error::{Error, Result, RunFailure};
use crate::objective::{Evaluation, Objective};
use crate::space::{NativeConfig, ParameterSpace};

/// Fitness recorded for an evaluation that failed twice.
pub const FAILED_FITNESS: f64 = f64::INFINITY;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    Simulated,
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrchestratorPolicy {
    pub opportunistic_brackets: bool,
    pub clock: Clock,
}

impl Default for OrchestratorPolicy {
    fn default() -> Self {
        Self {
            opportunistic_brackets: true,
            clock: Clock::Simulated,
        }
    }
}

/// What a worker is given: nothing but the decoded configuration.
#[derive(Clone, Debug)]
struct Job {
    job_id: u64,
    config: NativeConfig,
    budget: f64,
}

struct Done {
    worker: usize,
    job: Job,
    outcome: Result<Evaluation>,
    started: f64,
    finished: f64,
}

struct Busy {
    suggestion: Suggestion,
    started: f64,
    retried: bool,
}

pub fn run_parallel<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    cfg: DehbConfig,
    termination: Termination,
    n_workers: usize,
    policy: OrchestratorPolicy,
    seed: u64,
) -> std::result::Result<DehbOutcome, RunFailure> {
    let setup = || -> Result<DehbState> {
        if n_workers == 0 {
            return Err(Error::config("n_workers", "must be at least 1"));
        }
        let mut state = DehbState::new(space.dim(), cfg, termination, seed)?;
        state.set_opportunistic(policy.opportunistic_brackets);
        Ok(state)
    };
    let state = setup().map_err(|error| RunFailure {
        error,
        trace: Default::default(),
    })?;
    let state = match policy.clock {
        Clock::Simulated => simulated(objective, space, state, n_workers),
        Clock::Wall => threaded(objective, space, state, n_workers),
    };
    Ok(DehbOutcome {
        incumbent: state.incumbent().cloned(),
        trace: state.trace().clone(),
        state,
    })
}

fn job_for(space: &ParameterSpace, s: &Suggestion) -> Job {
    Job {
        job_id: s.job_id,
        config: space.decode(&s.genome).expect("engine genomes lie in the unit cube"),
        budget: s.budget,
    }
}

/// Report for an evaluation; `None` asks for a retry.
fn settle(busy: &mut Busy, outcome: Result<Evaluation>) -> Option<(Report, bool)> {
    let s = &busy.suggestion;
    match outcome {
        Ok(eval) => Some((
            Report {
                job_id: s.job_id,
                fitness: eval.fitness,
                cost: eval.cost,
            },
            false,
        )),
        Err(_) if !busy.retried => {
            busy.retried = true;
            None
        }
        Err(_) => Some((
            Report {
                job_id: s.job_id,
                fitness: FAILED_FITNESS,
                cost: s.budget,
            },
            true,
        )),
    }
}

fn simulated<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    mut state: DehbState,
    n_workers: usize,
) -> DehbState {
    // (busy, job, finish time, outcome) per worker.
    let mut workers: Vec<Option<(Busy, Job, f64, Result<Evaluation>)>> =
        (0..n_workers).map(|_| None).collect();
    let mut now = 0.0_f64;
    let mut exhausted = false;

    let start = |objective: &O, busy: Busy, job: Job, at: f64| {
        let outcome = objective.evaluate(&job.config, job.budget, job.job_id);
        let cost = match &outcome {
            Ok(e) => e.cost,
            Err(_) => job.budget,
        };
        (busy, job, at + cost, outcome)
    };

    loop {
        while !exhausted {
            let Some(free) = workers.iter().position(Option::is_none) else {
                break;
            };
            match state.ask() {
                Ask::Job(s) => {
                    let job = job_for(space, &s);
                    let busy = Busy {
                        suggestion: s,
                        started: now,
                        retried: false,
                    };
                    workers[free] = Some(start(objective, busy, job, now));
                }
                Ask::Wait => break,
                Ask::Done => exhausted = true,
            }
        }

        // Earliest finisher; ties go to the lower worker index.
        let Some(next) = workers
            .iter()
            .enumerate()
            .filter_map(|(w, slot)| slot.as_ref().map(|(_, _, t, _)| (w, *t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(w, _)| w)
        else {
            break;
        };
        let (mut busy, job, finished, outcome) = workers[next].take().expect("busy");
        now = finished;
        match settle(&mut busy, outcome) {
            Some((report, failed)) => {
                state
                    .tell_timed(report, busy.started, finished, failed)
                    .expect("job was issued by this state");
            }
            None => workers[next] = Some(start(objective, busy, job, now)),
        }
    }
    state
}

fn threaded<O: Objective + ?Sized>(
    objective: &O,
    space: &ParameterSpace,
    mut state: DehbState,
    n_workers: usize,
) -> DehbState {
    let epoch = Instant::now();
    let elapsed = move || epoch.elapsed().as_secs_f64();

    std::thread::scope(|scope| {
        let (done_tx, done_rx) = mpsc::channel::<Done>();
        let mut job_txs = Vec::with_capacity(n_workers);
        for worker in 0..n_workers {
            let (tx, rx) = mpsc::channel::<Job>();
            job_txs.push(tx);
            let done_tx = done_tx.clone();
            scope.spawn(move || {
                for job in rx {
                    let started = elapsed();
                    let outcome = objective.evaluate(&job.config, job.budget, job.job_id);
                    let finished = elapsed();
                    let msg = Done {
                        worker,
                        job,
                        outcome,
                        started,
                        finished,
                    };
                    if done_tx.send(msg).is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);

        let mut busy: Vec<Option<Busy>> = (0..n_workers).map(|_| None).collect();
        let mut exhausted = false;
        loop {
            while !exhausted {
                let Some(free) = busy.iter().position(Option::is_none) else {
                    break;
                };
                match state.ask() {
                    Ask::Job(s) => {
                        job_txs[free].send(job_for(space, &s)).expect("worker alive");
                        busy[free] = Some(Busy {
                            suggestion: s,
                            started: elapsed(),
                            retried: false,
                        });
                    }
                    Ask::Wait => break,
                    Ask::Done => exhausted = true,
                }
            }
            if busy.iter().all(Option::is_none) {
                break;
            }
            let done = done_rx.recv().expect("workers outlive the control loop");
            let slot = busy[done.worker].as_mut().expect("worker was busy");
            if !slot.retried {
                slot.started = done.started;
            }
            match settle(slot, done.outcome) {
                Some((report, failed)) => {
                    let started = slot.started;
                    busy[done.worker] = None;
                    state
                        .tell_timed(report, started, done.finished, failed)
                        .expect("job was issued by this state");
                }
                None => job_txs[done.worker].send(done.job).expect("worker alive"),
            }
        }
        drop(job_txs);
    });
    state
}

/// Job line of the subprocess worker protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobMessage {
    pub job_id: u64,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub budget: f64,
}

/// Report line of the subprocess worker protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMessage {
    pub job_id: u64,
    pub fitness: f64,
    pub cost: f64,
}

/// Serves the worker side of the protocol: one JSON job per input line,
/// one JSON report per output line. Returns at end of input.
pub fn serve_worker<O, R, W>(objective: &O, space: &ParameterSpace, input: R, mut output: W) -> Result<()>
where
    O: Objective + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let job: JobMessage = serde_json::from_str(&line)?;
        let config = space.from_json_object(&job.config)?;
        let eval = objective.evaluate(&config, job.budget, job.job_id)?;
        let report = ReportMessage {
            job_id: job.job_id,
            fitness: eval.fitness,
            cost: eval.cost,
        };
        serde_json::to_writer(&mut output, &report)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

struct WorkerProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// An objective evaluated by external worker processes speaking the
/// newline-delimited JSON protocol over stdio.
pub struct SubprocessObjective {
    space: ParameterSpace,
    procs: Vec<Mutex<WorkerProcess>>,
}

impl SubprocessObjective {
    /// Spawns `n_procs` copies of `program args...`.
    pub fn spawn(program: &str, args: &[String], space: ParameterSpace, n_procs: usize) -> Result<Self> {
        let procs = (0..n_procs.max(1))
            .map(|_| {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped");
                let stdout = BufReader::new(child.stdout.take().expect("piped"));
                Ok(Mutex::new(WorkerProcess { child, stdin, stdout }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { space, procs })
    }

    fn exchange(&self, proc: &mut WorkerProcess, job: &JobMessage) -> Result<ReportMessage> {
        serde_json::to_writer(&mut proc.stdin, job)?;
        proc.stdin.write_all(b"\n")?;
        proc.stdin.flush()?;
        let mut line = String::new();
        if proc.stdout.read_line(&mut line)? == 0 {
            return Err(Error::Objective("worker process closed its output".into()));
        }
        let report: ReportMessage = serde_json::from_str(&line)?;
        if report.job_id != job.job_id {
            return Err(Error::Objective(format!(
                "worker answered job {} for job {}",
                report.job_id, job.job_id
            )));
        }
        Ok(report)
    }
}

impl Objective for SubprocessObjective {
    fn evaluate(&self, config: &NativeConfig, budget: f64, job_id: u64) -> Result<Evaluation> {
        let job = JobMessage {
            job_id,
            config: self.space.to_json_object(config),
            budget,
        };
        let idle = self.procs.iter().find_map(|p| p.try_lock().ok());
        let mut proc = match idle {
            Some(guard) => guard,
            None => self.procs[job_id as usize % self.procs.len()]
                .lock()
                .map_err(|_| Error::Objective("worker lock poisoned".into()))?,
        };
        let report = self.exchange(&mut proc, &job)?;
        Ok(Evaluation {
            fitness: report.fitness,
            cost: report.cost,
        })
    }
}

impl Drop for SubprocessObjective {
    fn drop(&mut self) {
        for proc in &self.procs {
            if let Ok(mut p) = proc.lock() {
                let _ = p.child.kill();
                let _ = p.child.wait();
            }
        }
    }
}
