//! End-to-end runs of the `cowqkd` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cowqkd::synth::Scenario;

fn cowqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cowqkd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cowqkd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Two-day five-link scenario written to `root/scenario.toml`.
fn short_scenario(root: &Path) -> PathBuf {
    let mut sc = Scenario::default();
    sc.duration = "2d".into();
    let path = root.join("scenario.toml");
    std::fs::write(&path, sc.to_toml().unwrap()).unwrap();
    path
}

fn synth_and_prep(root: &Path) -> Vec<PathBuf> {
    let sc = short_scenario(root);
    let data = root.join("data");
    ok(&["synth", "--scenario", p(&sc), "--out", p(&data)]);
    (1..=5)
        .map(|id| {
            let frame = root.join(format!("link{id}.csv"));
            ok(&["prep", "--in", p(&data.join(format!("link{id}"))), "--out", p(&frame)]);
            frame
        })
        .collect()
}

#[test]
fn synth_writes_five_link_dirs_and_honours_seed() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let out = dir.path().join("a");
    ok(&["synth", "--scenario", p(&sc), "--out", p(&out)]);
    for id in 1..=5 {
        for f in ["skr.csv", "qber.csv", "visibility.csv", "laserpower.csv", "link.toml"] {
            assert!(out.join(format!("link{id}")).join(f).exists(), "link{id}/{f}");
        }
    }
    let run = |name: &str, seed: &str| {
        let d = dir.path().join(name);
        ok(&["synth", "--scenario", p(&sc), "--out", p(&d), "--seed", seed]);
        std::fs::read(d.join("link1/skr.csv")).unwrap()
    };
    let (x, y, z) = (run("s7", "7"), run("s7b", "7"), run("s8", "8"));
    assert_eq!(x, y);
    assert_ne!(x, z);
}

#[test]
fn usage_errors_exit_with_2() {
    let out = cowqkd(&["synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--scenario"));
    assert!(out.stdout.is_empty());
    assert_eq!(cowqkd(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn prep_averages_the_raw_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("frame.csv");
    ok(&["prep", "--in", p(&fixture("raw_skr_excerpt")), "--window", "10m", "--lags", "none", "--out", p(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let first = text.lines().nth(1).unwrap();
    let (ts, value) = first.split_once(',').unwrap();
    assert_eq!(ts, "2023-11-29T18:50:00Z");
    // all 19 rows fall into the 18:50 window: 23204 / 19
    assert!((value.parse::<f64>().unwrap() - 23204.0 / 19.0).abs() < 1e-9);
}

#[test]
fn prep_reports_bad_lines_and_short_frames() {
    let dir = tempfile::tempdir().unwrap();
    let link = dir.path().join("link");
    std::fs::create_dir(&link).unwrap();
    std::fs::write(
        link.join("skr.csv"),
        "2023-11-29 18:55:49.323195+00:00,1326\n2023-11-29 18:55:56+00:00,abc\n",
    )
    .unwrap();
    let out = cowqkd(&["prep", "--in", p(&link), "--out", p(&dir.path().join("f.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skr.csv:2"));

    std::fs::write(link.join("skr.csv"), "2023-11-29 18:55:49+00:00,1326\n").unwrap();
    let out = cowqkd(&["prep", "--in", p(&link), "--lags", "1", "--out", p(&dir.path().join("f.csv"))]);
    assert!(!out.status.success());
    assert!(!dir.path().join("f.csv").exists());
}

#[test]
fn fit_train_predict_evaluate_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let frames = synth_and_prep(root);
    let f = |i: usize| p(&frames[i - 1]);

    let fit_json = root.join("fit.json");
    let out = ok(&["fit", "--frame", f(2), "--free", "alpha,eta", "--out", p(&fit_json)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha ="));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit_json).unwrap()).unwrap();
    assert!(json["residual_rms"].as_f64().unwrap() <= json["initial_rms"].as_f64().unwrap());
    let samples = std::fs::read_to_string(root.join("fit.csv")).unwrap();
    assert!(samples.starts_with("timestamp,measured,calculated,residual\n"));

    let model = root.join("model.bin");
    ok(&[
        "train", "--frame", f(1), "--frame", f(2), "--frame", f(4), "--epochs", "3", "--seed", "5", "--out", p(&model),
    ]);

    let report = root.join("report.csv");
    let args: Vec<&str> = ["evaluate", "--model", p(&model), "--out", p(&report)]
        .into_iter()
        .chain((1..=5).flat_map(|i| ["--frame", f(i)]))
        .collect();
    ok(&args);
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "link,model,me,mae,mre,mse,n");
    assert_eq!(lines.len(), 6);
    assert!(lines[3].starts_with("link3,model,"));

    let pred = root.join("pred.csv");
    ok(&[
        "predict", "--model", p(&model), "--frame", f(3), "--link-loss", "20", "--link-loss", "57", "--out", p(&pred),
    ]);
    let (a, b) = (root.join("pred_ll20.csv"), root.join("pred_ll57.csv"));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(std::fs::read_to_string(&a)
        .unwrap()
        .starts_with("timestamp,measured,predicted,measured_scaled,predicted_scaled\n"));

    let small = root.join("small.bin");
    ok(&["train", "--frame", f(1), "--topology", "simplified", "--epochs", "2", "--out", p(&small)]);
    let small_len = std::fs::metadata(&small).unwrap().len();
    assert!(small_len < std::fs::metadata(&model).unwrap().len() / 10);
    ok(&["predict", "--model", p(&small), "--frame", f(3), "--out", p(&root.join("small.csv"))]);

    let corr = root.join("corr.csv");
    ok(&["correlate", "--frame", f(1), "--out", p(&corr)]);
    let text = std::fs::read_to_string(&corr).unwrap();
    assert!(text.starts_with("parameter,skr,qber,visibility,laserpower\n"));
    let vis: f64 = text.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!(vis > 0.5);
}

#[test]
fn evaluate_perfect_predictions_gives_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("perfect.csv");
    std::fs::write(
        &pred,
        "timestamp,measured,predicted,measured_scaled,predicted_scaled\n\
         2023-11-29T18:50:00Z,1200,1200,0.25,0.25\n\
         2023-11-29T19:00:00Z,1300,1300,0.75,0.75\n",
    )
    .unwrap();
    let report = dir.path().join("r.csv");
    ok(&["evaluate", "--predictions", p(&pred), "--name", "ideal", "--out", p(&report)]);
    assert_eq!(
        std::fs::read_to_string(&report).unwrap(),
        "link,model,me,mae,mre,mse,n\nperfect,ideal,0,0,0,0,2\n"
    );
}

#[test]
fn correlate_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let frame = dir.path().join("f.csv");
    std::fs::write(&frame, "timestamp,skr,copy\n2023-11-29T18:50:00Z,1,1\n2023-11-29T19:00:00Z,3,3\n2023-11-29T19:10:00Z,2,2\n")
        .unwrap();
    let out = dir.path().join("c.csv");
    ok(&["correlate", "--frame", p(&frame), "--columns", "skr,copy", "--out", p(&out)]);
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "parameter,skr,copy\nskr,1.000000,1.000000\ncopy,1.000000,1.000000\n"
    );
    std::fs::write(&frame, "timestamp,skr\n2023-11-29T18:50:00Z,1\n").unwrap();
    assert_eq!(cowqkd(&["correlate", "--frame", p(&frame), "--out", p(&out)]).status.code(), Some(1));
}

#[test]
fn reference_page_is_current() {
    let page = String::from_utf8(ok(&["reference"]).stdout).unwrap();
    let committed = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/cli.md")).unwrap();
    assert_eq!(page, committed, "regenerate docs/cli.md with `cowqkd reference`");
}
