//! End-to-end tests of the `curves` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn curves(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_curves"));
    cmd.args(args).env_remove("CURVES_OUT").env_remove("CURVES_JOBS").env_remove("CURVES_MEM_BUDGET");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const THEORY: &str = "\
mode = theory
rho = relu
sigma = identity
t = [0.1, 0.5]
psi_d = 0.5
psi_n = 10
sweep = psi_p
grid = log(0.5, 50, 5)
";

const SIMULATE: &str = "\
mode = simulate
rho = relu
sigma = identity
t = 0.2
psi_d = 0.5
psi_n = 2
sweep = psi_p
grid = [0.5, 1.5]
d = 30
seeds = [1, 2, 3]
noise = sampled
n_z = 2
n_test = 300
n_mc_score = 200
score = true
";

fn body(csv: &str) -> Vec<&str> {
    csv.lines().collect()
}

#[test]
fn version_prints_package_version() {
    let out = curves(&["version"], &[]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("curves {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn theory_run_writes_versioned_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.cfg", THEORY);
    let csv = dir.path().join("out/t.csv");
    let out = curves(&["run", &cfg, "--out", csv.to_str().unwrap(), "--jobs", "2"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines = body(&text);
    assert_eq!(lines[0], "# schema=1");
    let header: Vec<&str> = lines[1].split(',').collect();
    assert!(header.contains(&"e_test") && header.contains(&"e_train") && header.contains(&"psi_p"));
    assert_eq!(lines.len(), 2 + 2 * 5);
    let e_test = header.iter().position(|h| *h == "e_test").unwrap();
    for row in &lines[2..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), header.len());
        let v: f64 = cells[e_test].parse().unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/t.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], 1);
    assert_eq!(json["rows"], 10);
    assert_eq!(json["jobs"], 2);
    assert!(json["failed_points"].as_array().unwrap().is_empty());
}

#[test]
fn output_path_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.cfg", THEORY);
    let csv = dir.path().join("env.csv");
    let out = curves(&["run", &cfg], &[("CURVES_OUT", csv.to_str().unwrap()), ("CURVES_JOBS", "1")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(csv.exists());
}

#[test]
fn empty_grid_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.cfg", &THEORY.replace("grid = log(0.5, 50, 5)", "grid = []"));
    let csv = dir.path().join("e.csv");
    let out = curves(&["run", &cfg, "--out", csv.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!csv.exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 8"));
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "u.cfg", &format!("{THEORY}colour = blue\n"));
    let out = curves(&["run", &cfg, "--out", dir.path().join("u.csv").to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 9") && err.contains("colour"), "{err}");
}

#[test]
fn simulate_reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", SIMULATE);
    let mut bodies = Vec::new();
    for (i, jobs) in ["1", "3", "1"].iter().enumerate() {
        let csv = dir.path().join(format!("s{i}.csv"));
        let out = curves(&["run", &cfg, "--out", csv.to_str().unwrap(), "--jobs", jobs], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        bodies.push(fs::read(&csv).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0], bodies[2]);
    let text = String::from_utf8(bodies.remove(0)).unwrap();
    // Per-seed rows plus one aggregate per grid point.
    assert_eq!(text.lines().count(), 2 + 2 * (3 + 1));
}

#[test]
fn memory_budget_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.cfg", SIMULATE);
    let csv = dir.path().join("m.csv");
    let out = curves(&["run", &cfg, "--out", csv.to_str().unwrap(), "--mem-budget", "1e-7"], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("memory"));
}

#[test]
fn glm_baseline_and_sample_complexity_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    let glm = write(
        dir.path(),
        "g.cfg",
        "mode = glm-baseline\nsigma = identity\npsi_d = [0.5, 1]\nsweep = t\ngrid = [0.1, 0.5]\n",
    );
    let csv = dir.path().join("g.csv");
    let out = curves(&["run", &glm, "--out", csv.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2 + 4);

    let sc = write(
        dir.path(),
        "c.cfg",
        "mode = sample-complexity\nrho = relu\nsigma = identity\npsi_d = [0.1, 0.3]\npsi_p = 1000\n\
         sweep = psi_n\ngrid = log(1, 1000, 31)\nt_grid = [0.1]\nepsilon = 0.2\n",
    );
    let csv = dir.path().join("c.csv");
    let out = curves(&["run", &sc, "--out", csv.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("psi_n_star"));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        curves_cli::SweepConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 6);
}
