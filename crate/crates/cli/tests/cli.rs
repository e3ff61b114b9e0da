use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcpa")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mcpa(args);
    assert!(out.status.success(), "mcpa {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth(dir: &Path) -> String {
    let p = path(dir, "p.json");
    ok(&["synth", "--poses", "6", "--points", "200", "--sigma-max", "1", "--seed", "2", "--out", &p]);
    p
}

#[test]
fn optimize_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path());
    let (report, summary, points) = (path(dir.path(), "r.csv"), path(dir.path(), "s.json"), path(dir.path(), "x.csv"));
    let stdout = ok(&[
        "optimize", "--problem", &p, "--mode", "mcpalr", "--max-iters", "5", "--report", &report, "--summary", &summary,
        "--points-out", &points,
    ]);
    assert!(stdout.contains("mcpalr"));
    let report = fs::read_to_string(report).unwrap();
    assert_eq!(report.lines().next().unwrap(), "iter,cost,lambda,accepted,wall_ms");
    assert!(report.lines().count() >= 2 && report.lines().count() <= 7);
    let summary = fs::read_to_string(summary).unwrap();
    assert!(summary.contains("\"hessian_bytes\"") && summary.contains("\"eps_r\""));
    assert_eq!(fs::read_to_string(points).unwrap().lines().next().unwrap(), "track_id,x,y,z");
}

#[test]
fn selected_bases_are_kept_by_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path());
    let based = path(dir.path(), "b.json");
    ok(&["select-bases", "--problem", &p, "--base-strategy", "max-theta", "--out", &based]);
    assert!(fs::read_to_string(&based).unwrap().contains("\"base\""));
    let stdout = ok(&["optimize", "--problem", &based, "--max-iters", "2"]);
    // No reselection happens when every track already has bases.
    assert!(!stdout.contains("bases selected"));
}

#[test]
fn triangulate_methods_both_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path());
    for method in ["sot", "midpoint"] {
        let out = path(dir.path(), &format!("{method}.csv"));
        ok(&["triangulate", "--problem", &p, "--method", method, "--out", &out]);
        assert!(fs::read_to_string(out).unwrap().lines().count() > 1);
    }
}

#[test]
fn bench_header_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "b.csv");
    ok(&["bench", "--cell", "6x200x1", "--modes", "mcpa,ba", "--out", &out]);
    let text = fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "cell,trial,mode,poses,points,observations,runtime_s,hessian_bytes,eps_r,eps_t,eps_x,status"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn import_colmap_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cameras.txt"), "1 PINHOLE 640 480 500 500 320 240\n").unwrap();
    fs::write(
        d.join("images.txt"),
        "1 1 0 0 0 0 0 0 1 a.png\n100 200 3\n2 1 0 0 0 -0.3 0 0 1 b.png\n70 200 3\n",
    )
    .unwrap();
    fs::write(d.join("points3D.txt"), "3 0 0 5 0 0 0 0 1 0 2 0\n").unwrap();
    fs::write(d.join("rig.txt"), "1 0 0\n2 0 1\n").unwrap();
    let rig = r#"{"cameras": [
        {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480, "R": [1,0,0,0,1,0,0,0,1], "t": [0,0,0]},
        {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480, "R": [1,0,0,0,1,0,0,0,1], "t": [0.3,0,0]}
    ]}"#;
    fs::write(d.join("rig.json"), rig).unwrap();
    let out = path(d, "imported.json");
    let stdout = ok(&[
        "import-colmap", "--dir", &d.to_string_lossy(), "--rig-map", &path(d, "rig.txt"), "--rig", &path(d, "rig.json"),
        "--out", &out,
    ]);
    assert!(stdout.contains("1 tracks"), "{stdout}");
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"version\": \"mcpa-problem/1\""));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.json");
    fs::write(&bad, "{\"version\": \"mcpa-problem/2\"}").unwrap();
    let out = mcpa(&["optimize", "--problem", &bad]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let out = Command::new(env!("CARGO_BIN_EXE_mcpa"))
        .env("MCPA_THREADS", "zero")
        .args(["synth", "--out", &path(dir.path(), "p.json")])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let summary = path(dir.path(), &format!("s{threads}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_mcpa"))
            .env("MCPA_THREADS", threads)
            .args(["optimize", "--problem", &p, "--summary", &summary, "--no-timing"])
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(fs::read(summary).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
