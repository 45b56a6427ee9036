use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn ergoloop(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergoloop"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn body(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    body(path)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_example_one_absorbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ex1.cfg");
    let out = ergoloop(
        &["simulate", "--config", cfg.to_str().unwrap(), "--seed", "7"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = csv_rows(&dir.path().join("trace.csv"));
    assert_eq!(rows.len(), 101);
    let last: Vec<f64> = rows[100][1..3].iter().map(|v| v.parse().unwrap()).collect();
    assert!(last == [0.0, 1.0] || last == [1.0, 0.0], "{last:?}");
}

#[test]
fn outputs_carry_digest_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ex1.cfg");
    let out = ergoloop(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let expected = ergoloop_cli::config::digest(&std::fs::read_to_string(&cfg).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# config-sha256={expected}"));
    assert_eq!(lines.next().unwrap(), "# seed=11");
}

#[test]
fn zero_horizon_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("pivslag.cfg");
    let out = ergoloop(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--horizon",
            "0",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    for variant in ["pi", "lag"] {
        let text = body(&dir.path().join(format!("trace-{variant}.csv")));
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,x_1,x_2,x_3,x_4,y,yhat,e,pi,xc_1");
        assert_eq!(lines.count(), 1);
    }
}

#[test]
fn missing_or_invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergoloop(&["simulate", "--config", "/no/such/file.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[system]\nreference = \"high\"\n").unwrap();
    let out = ergoloop(&["certify", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // binary agents with a signal that can leave [0, 1]
    let unbounded = dir.path().join("unbounded.cfg");
    std::fs::write(
        &unbounded,
        "[system]\nreference = 1.0\nagents = [{ kind = \"binary\", count = 2 }]\ncontroller = { kind = \"gain\", gain = 3.0 }\n",
    )
    .unwrap();
    let out = ergoloop(
        &["simulate", "--config", unbounded.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ergoloop"))
        .args(["reproduce", "fig2", "--out"])
        .arg(dir.path())
        .env("ERGOLOOP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn certify_reports_verdicts_as_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("pivslag.cfg");
    let out = ergoloop(&["certify", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let pi = body(&dir.path().join("certificates-pi.txt"));
    let lag = body(&dir.path().join("certificates-lag.txt"));
    let theorem3 = pi
        .split("\n\n")
        .find(|d| d.starts_with("kind=theorem3"))
        .unwrap();
    assert!(theorem3.contains("verdict=non-ergodic-certified"));
    assert!(theorem3.contains("generator=1/2"));
    assert!(theorem3.contains("output_count=9"));
    let theorem1 = lag
        .split("\n\n")
        .find(|d| d.starts_with("kind=theorem1"))
        .unwrap();
    assert!(theorem1.contains("verdict=ergodic-certified"));

    let cfg = config("ex1.cfg");
    let out = ergoloop(&["certify", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let doc = body(&dir.path().join("certificates.txt"));
    assert!(doc.contains(
        "kind=finite-chain\nverdict=non-ergodic-certified\nstates=4\nrecurrent_classes=2\n"
    ));
}

#[test]
fn certify_skips_inapplicable_analyses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lag.cfg");
    std::fs::write(
        &cfg,
        std::fs::read_to_string(config("pivslag.cfg"))
            .unwrap()
            .replace(
                "certificates = [\"theorem1\", \"theorem3\"]",
                "certificates = [\"finite-chain\"]",
            ),
    )
    .unwrap();
    let out = ergoloop(&["certify", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let doc = body(&dir.path().join("certificates-lag.txt"));
    assert!(doc.starts_with("kind=finite-chain\nskipped="), "{doc}");
}

#[test]
fn ensemble_smoke_run_on_example_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ex2.cfg");
    let args = [
        "ensemble",
        "--config",
        cfg.to_str().unwrap(),
        "--realizations",
        "1",
        "--horizon",
        "50",
    ];
    let out = ergoloop(&args, dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = body(&dir.path().join("ensemble.csv"));
    assert!(text.starts_with("ic,group,agent_mean,stderr,R,horizon\n"));
    let rows = csv_rows(&dir.path().join("ensemble.csv"));
    // counts 0 and 100 have a single group, the rest two
    assert_eq!(rows.len(), 2 + 99 * 2);
    let labels: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels.len(), 101);
    assert!(rows.iter().all(|r| r[4] == "1" && r[5] == "50"));
}

#[test]
fn pivslag_ensemble_writes_four_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("pivslag.cfg");
    let args = [
        "ensemble",
        "--config",
        cfg.to_str().unwrap(),
        "--realizations",
        "8",
        "--horizon",
        "100",
    ];
    assert!(ergoloop(&args, dir.path()).status.success());
    for variant in ["pi", "lag"] {
        for ic in ["xc_50", "xc_-50"] {
            let path = dir.path().join(format!("trajectories-{variant}-{ic}.csv"));
            let text = body(&path);
            assert!(text.starts_with("k,y,x_1,xc\n"));
            assert_eq!(text.lines().count(), 102);
        }
        let test = body(&dir.path().join(format!("ic-test-{variant}.txt")));
        assert!(test.contains("verdict="));
    }
}

#[test]
fn reproduce_fig2_prints_transition_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergoloop(&["reproduce", "fig2"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("(0 0),1/4,1/4,1/4,1/4\n"));
    assert!(stdout.contains("(0 1),0,1,0,0\n"));
    let plot = body(&dir.path().join("fig2-plot.csv"));
    assert!(plot.starts_with("curve,x,y\n"));
    assert_eq!(plot.lines().count(), 1 + 16);
}

#[test]
fn reproduce_fig3_emits_two_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = ergoloop(
        &[
            "reproduce",
            "fig3",
            "--realizations",
            "2",
            "--horizon",
            "20",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("fig3-plot.csv"));
    let active = rows.iter().filter(|r| r[0] == "initially-active").count();
    let inactive = rows.iter().filter(|r| r[0] == "initially-inactive").count();
    assert_eq!((active, inactive), (100, 100));
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("pivslag.cfg");
    let args = [
        "ensemble",
        "--config",
        cfg.to_str().unwrap(),
        "--realizations",
        "16",
        "--horizon",
        "200",
    ];
    assert!(ergoloop(&args, a.path()).status.success());
    assert!(ergoloop(&args, b.path()).status.success());
    for name in ["ensemble-pi.csv", "trajectories-lag-xc_-50.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
    let c = tempfile::tempdir().unwrap();
    let mut reseeded = args.to_vec();
    reseeded.extend(["--seed", "1"]);
    assert!(ergoloop(&reseeded, c.path()).status.success());
    assert_ne!(
        body(&a.path().join("ensemble-pi.csv")),
        body(&c.path().join("ensemble-pi.csv"))
    );
}

#[test]
fn thread_count_does_not_change_output() {
    let cfg = config("pivslag.cfg");
    let args = [
        "ensemble",
        "--config",
        cfg.to_str().unwrap(),
        "--realizations",
        "130",
        "--horizon",
        "100",
    ];
    let mut bodies = Vec::new();
    for threads in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_ergoloop"))
            .args(args)
            .arg("--out")
            .arg(dir.path())
            .env("ERGOLOOP_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        bodies.push(std::fs::read(dir.path().join("ensemble-lag.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}
