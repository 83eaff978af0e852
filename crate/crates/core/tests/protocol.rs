use std::io::Cursor;

use dehb::benchmarks::CountingOnes;
use dehb::orchestrator::{serve_worker, JobMessage, ReportMessage, SubprocessObjective};
use dehb::{HbConfig, Objective, ParameterSpace, Termination};

const BIN: &str = env!("CARGO_BIN_EXE_dehb");

#[test]
fn serve_worker_answers_each_job_line() {
    let co = CountingOnes::new(2, 2, 5).unwrap();
    let space = co.space().clone();
    let config = space.decode_slice(&[0.9, 0.1, 1.0, 1.0]).unwrap();
    let job = JobMessage {
        job_id: 7,
        config: space.to_json_object(&config),
        budget: 9.0,
    };
    let input = format!("{}\n\n{}\n", serde_json::to_string(&job).unwrap(), serde_json::to_string(&job).unwrap());
    let mut out = Vec::new();
    serve_worker(&co, &space, Cursor::new(input), &mut out).unwrap();
    let lines: Vec<ReportMessage> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    let direct = co.evaluate(&config, 9.0, 7).unwrap();
    for r in lines {
        assert_eq!((r.job_id, r.fitness, r.cost), (7, direct.fitness, direct.cost));
    }
}

#[test]
fn malformed_job_is_an_error() {
    let co = CountingOnes::new(1, 1, 0).unwrap();
    let space = co.space().clone();
    let mut out = Vec::new();
    assert!(serve_worker(&co, &space, Cursor::new("{not json}\n"), &mut out).is_err());
    let unknown = r#"{"job_id":1,"config":{"nope":1},"budget":3}"#;
    assert!(serve_worker(&co, &space, Cursor::new(format!("{unknown}\n")), &mut out).is_err());
}

fn worker_args(seed: u64) -> Vec<String> {
    ["worker", "--benchmark", "counting-ones", "--n-cat", "2", "--n-cont", "2", "--seed"]
        .iter()
        .map(|s| s.to_string())
        .chain([seed.to_string()])
        .collect()
}

#[test]
fn subprocess_objective_matches_in_process_benchmark() {
    let co = CountingOnes::new(2, 2, dehb::harness::noise_seed(3)).unwrap();
    let space = co.space().clone();
    let remote = SubprocessObjective::spawn(BIN, &worker_args(3), space.clone(), 2).unwrap();
    for (job, u) in [[0.2, 0.7, 0.5, 0.5], [0.9, 0.9, 1.0, 0.0], [0.0, 0.0, 0.3, 0.8]].iter().enumerate() {
        let c = space.decode_slice(u).unwrap();
        let a = remote.evaluate(&c, 27.0, job as u64).unwrap();
        let b = co.evaluate(&c, 27.0, job as u64).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn dehb_over_subprocess_workers_equals_in_process_run() {
    let co = CountingOnes::new(2, 2, dehb::harness::noise_seed(3)).unwrap();
    let space = co.space().clone();
    let remote = SubprocessObjective::spawn(BIN, &worker_args(3), space.clone(), 3).unwrap();
    let cfg = dehb::DehbConfig::new(HbConfig::new(9.0, 81.0, 3.0).unwrap());
    let a = dehb::run(&remote, &space, cfg, Termination::Brackets(1), 1).unwrap();
    let b = dehb::run(&co, &space, cfg, Termination::Brackets(1), 1).unwrap();
    assert_eq!(a.trace, b.trace);
}

#[test]
fn dead_worker_surfaces_as_objective_error() {
    let space = ParameterSpace::unit_box(1).unwrap();
    let remote = SubprocessObjective::spawn("true", &[], space.clone(), 1).unwrap();
    let c = space.decode_slice(&[0.5]).unwrap();
    assert!(remote.evaluate(&c, 1.0, 0).is_err());
}
