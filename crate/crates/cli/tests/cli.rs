use std::path::Path;
use std::process::{Command, Output};

fn cbsql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbsql"))
        .args(args)
        .env("CBSQL_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"
env = "chain"
states = 5
horizon = 5
noise_std = 1.0
step_reward = -0.1
goal_reward = 1.0
agent = "cbsql"
gamma = 0.99
epsilon = 0.01
learning_rate = 1.0
kappa = 0.01
episodes = 10
runs = 4
base_seed = 3
output = "ignored.csv"
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_then_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let res = cbsql(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let a = std::fs::read_to_string(&out_a).unwrap();
    assert_eq!(a, std::fs::read_to_string(&out_b).unwrap());
    assert!(a.starts_with("agent,run_id,episode,return\ncbsql,0,0,"));
    assert_eq!(a.lines().count(), 1 + 40);

    let res = cbsql(&[
        "aggregate",
        "--in",
        out_a.to_str().unwrap(),
        "--window",
        "5",
    ]);
    assert!(res.status.success());
    let text = stdout(&res);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("agent,trailing_mean,trailing_std"));
    assert!(lines.next().unwrap().starts_with("cbsql,"));
}

#[test]
fn bad_config_fails_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{CONFIG}beta = 3.0\n"));
    let res = cbsql(&["run", "--config", &config]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("beta"));
}

#[test]
fn reproduce_exit_status_follows_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.csv");
    let res = cbsql(&[
        "reproduce-chainwalk",
        "--runs",
        "200",
        "--out",
        summary.to_str().unwrap(),
    ]);
    let text = stdout(&res);
    let passed = text.contains("verdict: PASS");
    assert!(passed || text.contains("verdict: FAIL"), "{text}");
    assert_eq!(res.status.success(), passed);
    let csv = std::fs::read_to_string(&summary).unwrap();
    assert_eq!(csv.lines().count(), 6);
    for label in [
        "q_learning",
        "sql_beta10",
        "sql_beta100",
        "sql_beta1000",
        "cbsql",
    ] {
        assert!(csv.contains(&format!("\n{label},")), "{label}");
    }
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let dir = tempfile::tempdir().unwrap();
            let text = std::fs::read_to_string(&path)
                .unwrap()
                .replace("runs = 1000", "runs = 2")
                .replace("runs = 20", "runs = 2");
            let config = write_config(dir.path(), &text);
            let out = dir.path().join("o.csv");
            let res = cbsql(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
            assert!(
                res.status.success(),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&res.stderr)
            );
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
