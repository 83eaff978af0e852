use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use dehb::benchmarks::CountingOnes;
use dehb::harness::{
    hb_baseline, read_trace, rs_baseline, run_experiment, run_sweep, Algorithm, BenchmarkSpec, ExperimentConfig,
    SweepParam, ABLATION_GRID,
};
use dehb::hyperband::cycle_plans;
use dehb::{Evaluation, HbConfig, NativeConfig, Objective, ParameterSpace, Role, Termination};

fn counting(n: usize) -> BenchmarkSpec {
    BenchmarkSpec::CountingOnes { n_cat: n, n_cont: n }
}

fn grid() -> HbConfig {
    HbConfig::new(9.0, 729.0, 3.0).unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn rs_experiment_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Algorithm::Rs, counting(4), grid(), Termination::Brackets(2));
    cfg.seeds = (0..10).collect();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let summary = run_experiment(&cfg).unwrap();
    let names = files_in(dir.path());
    for seed in 0..10 {
        assert!(names.contains(&format!("rs_seed{seed}.csv")));
        assert!(names.contains(&format!("rs_seed{seed}_incumbent.csv")));
    }
    assert!(names.contains(&"summary.json".to_string()));
    assert!(names.contains(&"config.json".to_string()));
    assert_eq!(names.len(), 22);

    let on_disk: dehb::harness::Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk.final_regrets, summary.final_regrets);
    assert_eq!(summary.final_regrets.len(), 10);
    assert!(!summary.incomplete);
    let curve: Vec<f64> = summary.checkpoints.iter().map(|c| c.mean_regret).collect();
    assert!(curve.len() > 2);
    assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{curve:?}");
    assert!(summary.checkpoints.iter().all(|c| c.n == 10));
    let costs: Vec<f64> = summary.checkpoints.iter().map(|c| c.cost).collect();
    let ratios: Vec<f64> = costs.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(ratios.windows(2).all(|r| (r[0] - r[1]).abs() < 1e-9 * r[0]));
    assert!(summary.final_regret.formatted.contains(" ± "));

    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(sidecar["config"]["algorithm"], "rs");
    assert!(sidecar["version"].is_string());
}

#[test]
fn dehb_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let mut cfg = ExperimentConfig::new(Algorithm::Dehb, counting(4), grid(), Termination::Brackets(2));
        cfg.seeds = vec![1, 2];
        cfg.out_dir = Some(dir.path().to_path_buf());
        run_experiment(&cfg).unwrap();
        files_in(dir.path())
            .into_iter()
            .map(|n| (n.clone(), std::fs::read(dir.path().join(&n)).unwrap()))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn traces_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Algorithm::Dehb, counting(3), grid(), Termination::Brackets(1));
    cfg.seeds = vec![4];
    cfg.out_dir = Some(dir.path().to_path_buf());
    let (_, runs) = dehb::harness::run_experiment_with_runs(&cfg).unwrap();
    let back = read_trace(dir.path(), Algorithm::Dehb, 4).unwrap();
    assert_eq!(back, runs[0].trace);
}

#[test]
fn ablation_sweep_gives_one_summary_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Algorithm::Dehb, counting(2), grid(), Termination::Brackets(1));
    cfg.seeds = vec![0, 1];
    cfg.out_dir = Some(dir.path().to_path_buf());
    let summaries = run_sweep(&cfg, SweepParam::F, &ABLATION_GRID).unwrap();
    assert_eq!(ABLATION_GRID, [0.1, 0.3, 0.5, 0.7, 0.9]);
    assert_eq!(summaries.len(), 5);
    for (s, f) in summaries.iter().zip(ABLATION_GRID) {
        assert_eq!((s.f, s.p), (f, 0.5));
        assert!(dir.path().join(format!("F_{f}")).join("summary.json").exists());
    }
    let p_sweep = run_sweep(&cfg, SweepParam::P, &[0.1, 0.9]).unwrap();
    assert_eq!(p_sweep.iter().map(|s| (s.f, s.p)).collect::<Vec<_>>(), vec![(0.5, 0.1), (0.5, 0.9)]);
}

#[test]
fn invalid_config_names_the_field() {
    let mut cfg = ExperimentConfig::new(Algorithm::Dehb, counting(2), grid(), Termination::Brackets(1));
    cfg.f = 3.0;
    let msg = run_experiment(&cfg).unwrap_err().to_string();
    assert!(msg.contains("F:"), "{msg}");
    cfg.f = 0.5;
    cfg.n_workers = 0;
    assert!(run_experiment(&cfg).unwrap_err().to_string().contains("n_workers"));
    cfg.n_workers = 1;
    cfg.termination = Termination::Evaluations(0);
    assert!(run_experiment(&cfg).unwrap_err().to_string().contains("termination"));
}

#[test]
fn failing_benchmark_marks_summary_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let space_path = dir.path().join("space.json");
    std::fs::write(&space_path, ParameterSpace::unit_box(2).unwrap().to_json_string()).unwrap();
    let bench = BenchmarkSpec::Subprocess {
        command: "true".into(),
        args: vec![],
        space: space_path,
    };
    let mut cfg = ExperimentConfig::new(Algorithm::Rs, bench, grid(), Termination::Evaluations(3));
    cfg.seeds = vec![0, 1];
    cfg.out_dir = Some(dir.path().join("out"));
    let summary = run_experiment(&cfg).unwrap();
    assert!(summary.incomplete);
    assert_eq!(summary.failures.len(), 2);
    assert_eq!(summary.failures[0].seed, 0);
}

/// Records every evaluation so the HB promotion rule can be audited.
struct Logged {
    inner: CountingOnes,
    log: Mutex<Vec<(Vec<u64>, f64, f64)>>,
}

impl Objective for Logged {
    fn evaluate(&self, c: &NativeConfig, budget: f64, job_id: u64) -> dehb::Result<Evaluation> {
        let e = self.inner.evaluate(c, budget, job_id)?;
        let key = c.values.iter().map(|v| v.as_f64().to_bits()).collect();
        self.log.lock().unwrap().push((key, budget, e.fitness));
        Ok(e)
    }
}

#[test]
fn hb_counts_and_promotions_follow_successive_halving() {
    let hb = HbConfig::new(1.0, 27.0, 3.0).unwrap();
    let obj = Logged {
        inner: CountingOnes::new(3, 3, 5).unwrap(),
        log: Mutex::new(Vec::new()),
    };
    let space = obj.inner.space().clone();
    let trace = hb_baseline(&obj, &space, &hb, Termination::Brackets(2), 8).unwrap();
    let log = obj.log.into_inner().unwrap();
    assert_eq!(trace.entries.len(), 2 * 69);

    let plans = cycle_plans(&hb);
    let mut by_rung: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, e) in trace.entries.iter().enumerate() {
        by_rung.entry((e.sh_bracket, e.rung)).or_default().push(i);
        assert_eq!(e.role, if e.rung == 0 { Role::InitRandom } else { Role::Promotion });
    }
    for sh in 0..8 {
        let plan = &plans[sh % 4];
        for (rung, &n) in plan.n_configs.iter().enumerate() {
            let idx = &by_rung[&(sh, rung)];
            assert_eq!(idx.len(), n, "bracket {sh} rung {rung}");
            assert!(idx.iter().all(|&i| trace.entries[i].budget == plan.budgets[rung]));
            if rung > 0 {
                let mut lower: Vec<usize> = by_rung[&(sh, rung - 1)].clone();
                lower.sort_by(|&a, &b| log[a].2.total_cmp(&log[b].2));
                let top: Vec<&Vec<u64>> = lower.iter().take(n).map(|&i| &log[i].0).collect();
                for &i in idx {
                    assert!(top.contains(&&log[i].0), "bracket {sh} rung {rung}: not a top-{n} config");
                }
            }
        }
    }
}

#[test]
fn rs_budgets_are_all_b_max() {
    let co = CountingOnes::new(2, 2, 0).unwrap();
    let trace = rs_baseline(&co, co.space(), &grid(), Termination::Evaluations(40), 1).unwrap();
    assert!(trace.entries.iter().all(|e| e.budget == 729.0));
    assert_eq!(trace.entries.len(), 40);
}

#[test]
fn counting_ones_regret_uses_noiseless_value() {
    let mut cfg = ExperimentConfig::new(Algorithm::Rs, counting(2), grid(), Termination::Evaluations(20));
    cfg.seeds = vec![3];
    let (_, runs) = dehb::harness::run_experiment_with_runs(&cfg).unwrap();
    let (obj, space) = cfg.benchmark.build(3, &cfg.hb, 1).unwrap();
    let co = CountingOnes::new(2, 2, 0).unwrap();
    for (rec, regret) in runs[0].trace.incumbent_history.iter().zip(&runs[0].regrets) {
        let c = space.decode_slice(&rec.genome).unwrap();
        let f = co.noiseless(&c).unwrap();
        assert_eq!(*regret, (f + 4.0) / 4.0);
        assert_eq!(obj.regret(&c), Some(*regret));
    }
}
