use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output};
use std::thread;
use std::time::Duration;

const BIN: &str = env!("CARGO_BIN_EXE_sdnum");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn sdnum(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SDNUM_OUT").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = sdnum(args);
    assert!(out.status.success(), "sdnum {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Compares `path` with the golden file `name`; `UPDATE_GOLDEN=1` rewrites it.
fn golden(path: &Path, name: &str) {
    let got = fs::read_to_string(path).unwrap();
    let file = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&file, &got).unwrap();
        return;
    }
    let want = fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing golden file {name}"));
    assert_eq!(got, want, "{name} differs from its golden copy");
}

const PANDEMIC: &str = r#"
schema_version = 1
mode = "pandemic"
seed = 5

[horizon]
horizon = 10
period = 3
epochs = 6

[market]
z = 3

[estimate]
replicas = 20

[evaluate]
budgets = [0, 1, 2]
replicas = 50

[compare]
policies = ["none", "random", "old_first"]
replicas = 40
epochs = 10
budget = 1

[[pandemic.sites]]
preset = "Loc.1"

[[pandemic.sites]]
preset = "Loc.2"
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synthetic_run_matches_golden_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = configs().join("synthetic.toml");
    ok(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for name in ["controller.csv", "market.csv", "surrogate.csv", "outcome.csv"] {
        golden(&out.join(name), &format!("synthetic_{name}"));
    }
}

#[test]
fn pandemic_outputs_match_golden_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PANDEMIC);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    ok(&["evaluate", &cfg, "--out", out_s]);
    golden(&out.join("evaluate.csv"), "pandemic_evaluate.csv");
    ok(&["compare-policies", &cfg, "--out", out_s]);
    golden(&out.join("compare.csv"), "pandemic_compare.csv");
    ok(&["run", &cfg, "--out", out_s]);
    golden(&out.join("controller.csv"), "pandemic_controller.csv");
    golden(&out.join("outcome.csv"), "pandemic_outcome.csv");
}

#[test]
fn fit_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.txt");
    let fitted = dir.path().join("fitted.csv");
    let samples = configs().join("samples.csv");
    ok(&["fit", samples.to_str().unwrap(), "--out", model.to_str().unwrap(), "--fitted", fitted.to_str().unwrap()]);
    golden(&model, "fit_model.txt");
    golden(&fitted, "fit_fitted.csv");
}

#[test]
fn manifest_replays_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PANDEMIC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    // overrides land in the manifest, so the replay needs no flags
    ok(&["run", &cfg, "--out", a.to_str().unwrap(), "--seed", "42", "--replicas", "10"]);
    ok(&["run", a.join("manifest.toml").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    for name in ["manifest.toml", "controller.csv", "market.csv", "surrogate.csv", "outcome.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs on replay");
    }
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 42"));
    assert!(manifest.contains("# site seeds: "));
}

#[test]
fn single_budget_and_single_policy_give_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = PANDEMIC.replace("budgets = [0, 1, 2]", "budgets = [0]");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    ok(&["evaluate", &cfg, "--out", out_s]);
    let rows = fs::read_to_string(out.join("evaluate.csv")).unwrap();
    // one row per site at the single budget
    assert_eq!(rows.lines().count(), 1 + 2);
    ok(&["compare-policies", &cfg, "--out", out_s, "--policies", "old_first"]);
    let rows = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(rows.lines().filter(|l| l.contains("old_first")).count(), 2);
    assert!(rows.lines().skip(1).all(|l| l.contains(",old_first,")));
}

#[test]
fn zero_allocation_still_advances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &PANDEMIC.replace("z = 3", "z = 0"));
    let out = dir.path().join("out");
    ok(&["run", &cfg, "--out", out.to_str().unwrap()]);
    let controller = fs::read_to_string(out.join("controller.csv")).unwrap();
    for line in controller.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(&f[6..8], &["0", "0"], "{line}");
    }
    let outcome = fs::read_to_string(out.join("outcome.csv")).unwrap();
    // six epochs for two sites
    assert_eq!(outcome.lines().count(), 1 + 12);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sdnum(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sdnum(&["run"]).status.code(), Some(2));

    let bad_mode = write_config(dir.path(), "schema_version = 1\nmode = \"plague\"\n");
    assert_eq!(sdnum(&["run", &bad_mode]).status.code(), Some(3));

    let unknown_key = write_config(dir.path(), &PANDEMIC.replace("[market]", "[market]\nspeed = 3"));
    let out = sdnum(&["run", &unknown_key]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));

    let zero = write_config(dir.path(), PANDEMIC);
    assert_eq!(
        sdnum(&["compare-policies", &zero, "--replicas", "0", "--out", dir.path().to_str().unwrap()]).status.code(),
        Some(3)
    );

    let missing = dir.path().join("nope.csv");
    assert_eq!(sdnum(&["fit", missing.to_str().unwrap()]).status.code(), Some(5));

    let unreachable = write_config(dir.path(), PANDEMIC);
    let port = free_port();
    let out = sdnum(&[
        "coordinate",
        &unreachable,
        "--endpoints",
        &format!("127.0.0.1:{port},127.0.0.1:{port}"),
        "--retries",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn serve(cfg: &str, site: usize, port: u16, crash_after: Option<usize>) -> Child {
    let mut cmd = Command::new(BIN);
    cmd.args(["serve-site", cfg, "--site", &site.to_string(), "--listen", &format!("127.0.0.1:{port}")]);
    if let Some(n) = crash_after {
        cmd.args(["--crash-after", &n.to_string()]);
    }
    cmd.spawn().unwrap()
}

#[test]
fn coordinate_over_processes_matches_run_despite_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PANDEMIC);
    let local = dir.path().join("local");
    ok(&["run", &cfg, "--out", local.to_str().unwrap()]);

    let ports = [free_port(), free_port()];
    let mut site0 = serve(&cfg, 0, ports[0], None);
    let crashing = serve(&cfg, 1, ports[1], Some(7));
    let restart_cfg = cfg.clone();
    let restarter = thread::spawn(move || {
        let status = crashing.wait_with_output().unwrap().status;
        assert_eq!(status.code(), Some(5), "the simulated crash exits as a transport failure");
        serve(&restart_cfg, 1, ports[1], None).wait().unwrap()
    });
    thread::sleep(Duration::from_millis(300));
    let remote = dir.path().join("remote");
    let endpoints = format!("127.0.0.1:{},127.0.0.1:{}", ports[0], ports[1]);
    ok(&["coordinate", &cfg, "--endpoints", &endpoints, "--out", remote.to_str().unwrap()]);
    assert!(site0.wait().unwrap().success());
    assert!(restarter.join().unwrap().success());
    for name in ["controller.csv", "market.csv", "surrogate.csv", "outcome.csv"] {
        assert_eq!(fs::read(local.join(name)).unwrap(), fs::read(remote.join(name)).unwrap(), "{name}");
    }
}
