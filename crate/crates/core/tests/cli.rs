use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use multilink::cli::{parse_points_csv, FitOutput};
use multilink::evaluation::{generate_scene, preset, SceneSpec};

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multilink"))
        .args(args)
        .current_dir(dir)
        .env_remove("MULTILINK_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = bin(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_labels(dir: &Path, name: &str, labels: &[u32]) {
    let mut text = String::from("x,y,label\n");
    for (i, l) in labels.iter().enumerate() {
        text.push_str(&format!("{i},0,{l}\n"));
    }
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn synth_fit_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let line = ok(&["synth", "--preset", "star5", "--seed", "4", "--output", "s.csv"], d);
    assert!(line.starts_with("500 points"), "{line}");
    let points = parse_points_csv(&fs::read_to_string(d.join("s.csv")).unwrap(), Path::new("s.csv")).unwrap();
    assert_eq!(points, generate_scene(&preset("star5", 4).unwrap()).unwrap());

    let summary = ok(
        &["fit", "--input", "s.csv", "--epsilon", "0.0225", "--seed", "4", "--min-size", "25", "--output", "f.json"],
        d,
    );
    assert!(summary.starts_with("line: "), "{summary}");
    let fit: FitOutput = serde_json::from_str(&fs::read_to_string(d.join("f.json")).unwrap()).unwrap();
    assert_eq!(fit.schema_version, 1);
    assert_eq!(fit.labels.len(), 500);
    assert!(fit.merge_log.is_none());
    let members: usize = fit.structures.iter().map(|s| s.members.len()).sum();
    assert_eq!(members + fit.outliers.len(), 500);

    let me = ok(&["eval", "--pred", "f.json", "--truth", "s.csv", "--output", "r.json"], d);
    assert!(me.starts_with("ME ") && me.trim_end().ends_with('%'), "{me}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["points"], 500);

    ok(&["plot", "--scene", "s.csv", "--segmentation", "f.json", "--output", "a.svg"], d);
    ok(&["plot", "--scene", "s.csv", "--segmentation", "f.json", "--output", "b.svg"], d);
    let svg = fs::read(d.join("a.svg")).unwrap();
    assert_eq!(svg, fs::read(d.join("b.svg")).unwrap());
    assert_eq!(String::from_utf8(svg).unwrap().matches("<polyline").count(), fit.structures.len());
}

#[test]
fn tlinkage_shares_the_pool_and_log_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--preset", "circles4", "--seed", "1", "--output", "c.csv"], d);
    let common = ["fit", "--input", "c.csv", "--classes", "line,circle", "--epsilon", "0.18", "--seed", "7"];
    ok(&[&common[..], &["--output", "m.json", "--merge-log"]].concat(), d);
    ok(&[&common[..], &["--output", "t.json", "--algorithm", "tlinkage"]].concat(), d);
    let m: FitOutput = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    let t: FitOutput = serde_json::from_str(&fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(m.pool_hash, t.pool_hash);
    assert!(m.merge_log.as_ref().is_some_and(|l| !l.is_empty()));
    assert_eq!(t.algorithm.name(), "tlinkage");
}

#[test]
fn automatic_threshold_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--preset", "star5", "--output", "s.csv"], d);
    ok(
        &[
            "fit",
            "--input",
            "s.csv",
            "--epsilon",
            "auto:0.01:0.3",
            "--epsilon-budget",
            "4",
            "--hypotheses",
            "300",
            "--output",
            "f.json",
        ],
        d,
    );
    let fit: FitOutput = serde_json::from_str(&fs::read_to_string(d.join("f.json")).unwrap()).unwrap();
    let search = fit.epsilon_search.expect("search recorded");
    assert_eq!(search.grid.len(), 4);
    assert_eq!(search.epsilon, fit.epsilon);
    assert!(search.grid.iter().any(|g| g.epsilon == fit.epsilon));
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_labels(d, "gt.csv", &[1, 1, 2, 2, 0, 3]);
    write_labels(d, "swap.csv", &[2, 2, 1, 1, 0, 7]);
    assert_eq!(ok(&["eval", "--pred", "gt.csv", "--truth", "gt.csv"], d).trim(), "ME 0.00%");
    assert_eq!(ok(&["eval", "--pred", "swap.csv", "--truth", "gt.csv"], d).trim(), "ME 0.00%");
    let halves: Vec<u32> = (0..100).map(|i| if i < 50 { 1 } else { 2 }).collect();
    write_labels(d, "halves.csv", &halves);
    write_labels(d, "one.csv", &[1; 100]);
    assert_eq!(ok(&["eval", "--pred", "one.csv", "--truth", "halves.csv"], d).trim(), "ME 50.00%");
    let out = bin(&["eval", "--pred", "gt.csv", "--truth", "halves.csv", "--output", "r.json"], d);
    assert!(!out.status.success());
    assert!(!d.join("r.json").exists());
}

#[test]
fn synth_specs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = SceneSpec { structures: vec![], outlier_count: 30, bbox: [0.0, 0.0, 2.0, 1.0], seed: 9 };
    fs::write(d.join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    ok(&["synth", "--spec", "spec.json", "--output", "o.csv"], d);
    let points = parse_points_csv(&fs::read_to_string(d.join("o.csv")).unwrap(), Path::new("o.csv")).unwrap();
    assert_eq!(points.len(), 30);
    assert!(points.labels().unwrap().iter().all(|&l| l == 0));
    let back: SceneSpec = serde_json::from_str(&fs::read_to_string(d.join("spec.json")).unwrap()).unwrap();
    assert_eq!(back, spec);

    ok(&["synth", "--preset", "mixed_conics", "--seed", "2", "--output", "m1.csv"], d);
    ok(&["synth", "--preset", "mixed_conics", "--seed", "2", "--output", "m2.csv"], d);
    assert_eq!(fs::read(d.join("m1.csv")).unwrap(), fs::read(d.join("m2.csv")).unwrap());

    let out = bin(&["synth", "--preset", "nope", "--output", "x.csv"], d);
    assert!(!out.status.success());
    assert!(!d.join("x.csv").exists());
    let out = bin(&["fit", "--input", "missing.csv", "--epsilon", "0.1", "--output", "x.json"], d);
    assert!(!out.status.success());
    let out = bin(&["fit", "--input", "o.csv", "--epsilon", "zero", "--output", "x.json"], d);
    assert!(!out.status.success());
    let out = bin(&["fit", "--input", "o.csv", "--classes", "ellipse", "--epsilon", "0.1", "--output", "x.json"], d);
    assert!(!out.status.success());
    assert!(!d.join("x.json").exists());
}

#[test]
fn plot_without_segmentation_is_gray() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--preset", "circles4", "--output", "c.csv"], d);
    ok(&["plot", "--scene", "c.csv", "--output", "c.svg"], d);
    let svg = fs::read_to_string(d.join("c.svg")).unwrap();
    assert_eq!(svg.matches("#b0b0b0").count(), 286);
    assert!(!svg.contains("<polyline"));
}

#[test]
fn sweep_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut scene = preset("star5", 0).unwrap();
    scene.outlier_count = 50;
    let cfg = serde_json::json!({
        "scene": scene,
        "classes": ["line"],
        "axis": "epsilon",
        "values": [0.02, 0.04],
        "seeds": [1, 2],
        "epsilon": 0.0225,
        "hypotheses_per_class": 300,
    });
    fs::write(d.join("sweep.json"), cfg.to_string()).unwrap();
    let line = ok(&["sweep", "--config", "sweep.json", "--csv", "t.csv", "--json", "t.json"], d);
    assert_eq!(line.trim(), "4 rows, 8 runs");
    let csv = fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 8);
}
