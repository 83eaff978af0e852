use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_dehb");

fn dehb(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dehb(&[
        "run", "--algo", "dehb", "--benchmark", "counting-ones", "--n-cat", "2", "--n-cont", "2", "--bmin", "1",
        "--bmax", "27", "--seeds", "3", "--brackets", "2", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("final regret"), "{stdout}");
    for seed in 0..3 {
        assert!(dir.path().join(format!("dehb_seed{seed}.csv")).exists());
    }
    let csv = std::fs::read_to_string(dir.path().join("dehb_seed0.csv")).unwrap();
    assert!(csv.starts_with(
        "index,job_id,budget,fitness,cost,cumulative_cost,role,bracket,sh_bracket,rung,started,finished,failed"
    ));
    assert_eq!(csv.lines().count(), 1 + 2 * 69);
}

#[test]
fn every_algorithm_runs_from_the_cli() {
    for algo in ["dehb", "de", "hb", "rs"] {
        let o = dehb(&["run", "--algo", algo, "--benchmark", "mf-quadratic", "--dim", "3", "--bmin", "1", "--bmax", "27", "--evals", "60"]);
        assert!(o.status.success(), "{algo}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn invalid_flags_are_usage_errors() {
    let o = dehb(&["run", "--F", "5", "--brackets", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("F:"));
    let o = dehb(&["run", "--brackets", "1", "--evals", "3"]);
    assert!(!o.status.success());
    let o = dehb(&["run", "--bmin", "10", "--bmax", "5"]);
    assert!(!o.status.success());
    let o = dehb(&["run", "--algo", "de", "--pop-size", "3", "--evals", "10"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("pop_size"));
}

#[test]
fn sweep_runs_the_ablation_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dehb(&[
        "sweep", "--param", "p", "--n-cat", "2", "--n-cont", "2", "--bmin", "1", "--bmax", "9", "--brackets", "1",
        "--seeds", "2", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 5);
    for p in ["0.1", "0.3", "0.5", "0.7", "0.9"] {
        assert!(dir.path().join(format!("p_{p}")).join("summary.json").exists());
    }
}

#[test]
fn tabular_benchmark_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let mut rows = String::from("lr,depth,budget,fitness,cost\n");
    for lr in ["0.1", "0.01"] {
        for depth in ["2", "4"] {
            for b in [1, 3, 9] {
                let f = if lr == "0.01" && depth == "4" { 0.1 } else { 0.5 } + 1.0 / b as f64;
                rows.push_str(&format!("{lr},{depth},{b},{f},{}\n", b * 2));
            }
        }
    }
    std::fs::write(&table, rows).unwrap();
    let o = dehb(&[
        "run", "--benchmark", "tabular", "--table", table.to_str().unwrap(), "--bmin", "1", "--bmax", "9",
        "--brackets", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final regret 0.0e0"));
}

#[test]
fn subprocess_benchmark_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("space.json");
    std::fs::write(
        &space,
        r#"[{"name":"x0","kind":"float","bounds":[-1,1]},{"name":"x1","kind":"float","bounds":[-1,1]}]"#,
    )
    .unwrap();
    let o = dehb(&[
        "run", "--benchmark", "subprocess", "--space", space.to_str().unwrap(), "--worker-cmd", BIN, "--bmin",
        "1", "--bmax", "27", "--brackets", "1", "--workers", "2", "--", "worker", "--benchmark", "mf-quadratic",
        "--dim", "2", "--bmax", "27",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
