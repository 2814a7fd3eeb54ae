use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
experiment = "small"
k = 8
gamma = 0.25
lambdas = [0.1, 0.3]
delta_max = 16
episodes = 2
slots = 3000
seed = 5
"#;

fn rtt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtt"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RTT_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn simulate_writes_one_row() {
    let dir = setup();
    let out = rtt(
        &["simulate", "--config", "small.toml", "--policy", "greedy", "--out", "g.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "experiment,policy,K,gamma,N,avg_cost,ci95,avg_commands,commands_ci95,episodes,slots,seed,wall_seconds"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("small,greedy,8,0.25,2,"));
}

#[test]
fn sweep_rows_follow_axis_then_policy() {
    let dir = setup();
    let out = rtt(
        &[
            "sweep",
            "--config",
            "small.toml",
            "--axis",
            "k",
            "--values",
            "4,8",
            "--policies",
            "greedy,relax-truncate",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let keys: Vec<(String, String)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].to_string())
        })
        .collect();
    let expect = [("greedy", "4"), ("relax-truncate", "4"), ("greedy", "8"), ("relax-truncate", "8")];
    assert_eq!(keys.len(), 4);
    for ((p, k), (ep, ek)) in keys.iter().zip(expect) {
        assert_eq!((p.as_str(), k.as_str()), (ep, ek));
    }
}

#[test]
fn same_seed_same_costs() {
    let dir = setup();
    let run = |seed: &str| {
        let out = rtt(&["simulate", "--config", "small.toml", "--seed", seed], dir.path());
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let row: Vec<String> = text.lines().nth(1).unwrap().split(',').map(String::from).collect();
        row[..12].to_vec()
    };
    assert_eq!(run("11"), run("11"));
    assert_ne!(run("11"), run("12"));
}

#[test]
fn solve_populates_cache_and_reuses_it() {
    let dir = setup();
    let cache = dir.path().join("cache");
    let args = ["solve", "--config", "small.toml", "--exact", "--cache-dir", cache.to_str().unwrap()];
    let first = rtt(&args, dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let files = std::fs::read_dir(&cache).unwrap().count();
    assert!(files > 0);
    let second = rtt(&args, dir.path());
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), files);

    let v: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    let partial = &v["partial"];
    let inactive = partial["inactive"].as_bool().unwrap();
    let fleet = partial["fleet_commands"].as_f64().unwrap();
    assert!(inactive || (fleet - 0.25).abs() <= 1e-6);
}

#[test]
fn verify_passes_on_small_fleet() {
    let dir = setup();
    let out = rtt(&["verify", "--config", "small.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(!text.contains("FAILED"));
}

#[test]
fn bad_configuration_exits_nonzero() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "k = 5\nn = 9\n").unwrap();
    let out = rtt(&["simulate", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n = 9"));

    let out = rtt(&["simulate", "--config", "missing.toml"], dir.path());
    assert!(!out.status.success());
}
