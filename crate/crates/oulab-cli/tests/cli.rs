//! CLI surface tests: config schema, constants table shape, sweep
//! monotonicity, manifest echo, env-var overrides, simulate determinism.

use std::path::Path;
use std::process::Command;

const BASE_CONFIG: &str = r#"
[flow]
a_inf = [[-1.0, 0.0], [0.0, -1.0]]
m = [[0.0, 1.0], [1.0, 0.0]]
a = 0.5
b = 1.0

[perturbation]
kind = "frozen-gaussian"
sigma = 0.1

[model]
epsilon = 0.05
epsilon_sweep = [0.1, 0.01, 0.001]

[simulation]
dt = 0.01
horizon = 2.0
num_traj = 50
seed = 3

[estimation]
n_list = [1, 2]
samples = 150
grid_points = 8
horizon = 2.0

[certification]
certificates = ["averaged-flow", "lemma"]
nu = 0.5
t = 4.0
lemma_t_grid = [0.5, 1.0]
samples = 150

[output]
dir = "out"
"#;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_oulab")
}

fn run_in(dir: &Path, config: &str, args: &[&str]) -> (i32, String) {
    let config_path = dir.join("run.toml");
    std::fs::write(&config_path, config).unwrap();
    let out = Command::new(bin())
        .args(args)
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("OULAB_TEST_ZERO_BOUND")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read_csv(dir: &Path, name: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("out").join(name)).unwrap();
    text.lines()
        .map(|l| l.split(',').map(|f| f.to_string()).collect())
        .collect()
}

#[test]
fn constants_table_has_sweep_rows_with_monotone_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run_in(dir.path(), BASE_CONFIG, &["constants"]);
    assert_eq!(code, 0, "stderr: {err}");
    let rows = read_csv(dir.path(), "constants.csv");
    assert_eq!(
        rows[0],
        vec![
            "n",
            "epsilon",
            "c_n",
            "c_2n",
            "t_n",
            "t_n_eps",
            "eps_n_nu",
            "eps_2n_threshold",
            "cbar_n",
            "d"
        ]
    );
    // 2 orders x 3 sweep epsilons.
    assert_eq!(rows.len() - 1, 6);
    // T_n^eps strictly increases as epsilon decreases within each n block.
    for block in rows[1..].chunks(3) {
        let t: Vec<f64> = block.iter().map(|r| r[5].parse().unwrap()).collect();
        assert!(t[0] < t[1] && t[1] < t[2], "t_n_eps not increasing: {t:?}");
    }
}

#[test]
fn manifest_echoes_defaults_and_hashes_config() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run_in(dir.path(), BASE_CONFIG, &["constants"]);
    assert_eq!(code, 0, "stderr: {err}");
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("config_hash = \"sha256:"));
    assert!(manifest.contains("[effective_config.certification]"));
    // A value the config never set must appear with its default.
    assert!(manifest.contains("window_points = 5"));
    assert!(manifest.contains("method = \"euler-maruyama\""));
}

#[test]
fn sweep_emits_one_block_per_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run_in(dir.path(), BASE_CONFIG, &["sweep"]);
    assert_eq!(code, 0, "stderr: {err}");
    let rows = read_csv(dir.path(), "sweep.csv");
    let eps_col: std::collections::BTreeSet<String> =
        rows[1..].iter().map(|r| r[2].clone()).collect();
    assert_eq!(
        eps_col.len(),
        3,
        "expected 3 distinct epsilons, rows: {rows:?}"
    );
}

#[test]
fn simulate_rerun_is_byte_identical_and_noiseless_cov_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    // B = 0, epsilon = 0: the covariance-trace column must be exactly zero.
    let config = BASE_CONFIG
        .replace("epsilon = 0.05", "epsilon = 0.0")
        .replace("kind = \"frozen-gaussian\"", "kind = \"frozen-gaussian\"\n# noiseless run")
        .replace("[certification]", "[diffusion]\nkind = \"constant-psd\"\nb0 = [[0.0, 0.0], [0.0, 0.0]]\n\n[certification]");
    let (code, err) = run_in(dir.path(), &config, &["simulate"]);
    assert_eq!(code, 0, "stderr: {err}");
    let first = std::fs::read(dir.path().join("out/simulate.csv")).unwrap();
    let rows = read_csv(dir.path(), "simulate.csv");
    for row in &rows[1..] {
        let cov: f64 = row[2].parse().unwrap();
        assert_eq!(cov, 0.0);
    }
    let (code, _) = run_in(dir.path(), &config, &["simulate"]);
    assert_eq!(code, 0);
    let second = std::fs::read(dir.path().join("out/simulate.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn env_overrides_mirror_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(&config_path, BASE_CONFIG).unwrap();
    let out_dir = dir.path().join("env-out");
    let status = Command::new(bin())
        .arg("constants")
        .env("OULAB_CONFIG", &config_path)
        .env("OULAB_OUT", &out_dir)
        .env("OULAB_SEED", "99")
        .env_remove("OULAB_TEST_ZERO_BOUND")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 99"));
}

#[test]
fn missing_config_is_a_config_error() {
    let out = Command::new(bin())
        .args(["certify", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_certificate_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = BASE_CONFIG.replace("\"averaged-flow\", \"lemma\"", "\"no-such-certificate\"");
    let (code, err) = run_in(dir.path(), &config, &["certify"]);
    assert_eq!(code, 2, "stderr: {err}");
    assert!(err.contains("unknown certificate"));
}
