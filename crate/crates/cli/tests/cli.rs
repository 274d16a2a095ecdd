use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn trajmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajmap")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SUBCOMMANDS: [&str; 8] = [
    "synth",
    "rasterize",
    "targets",
    "train",
    "predict",
    "eval",
    "report-occlusion",
    "gradcheck",
];

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(trajmap(&["--help"]).status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let out = trajmap(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--seed"), "{sub} help lists global flags");
    }
    let train = String::from_utf8_lossy(&trajmap(&["train", "--help"]).stdout).into_owned();
    for flag in ["--corpus", "--fusion", "--attention", "--modeling", "--pretrain-target", "--steps", "--lr", "--out"] {
        assert!(train.contains(flag), "{flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["bogus"],
        vec!["eval", "--nope"],
        vec![],
        vec!["train", "--corpus", "x", "--fusion", "post", "--out", "y"],
        vec!["synth", "--out", "d"],
        vec!["--jobs", "0", "gradcheck"],
    ] {
        let out = trajmap(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn missing_or_corrupt_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = trajmap(&["rasterize", "--scene", "/nonexistent.json", "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\": 1}").unwrap();
    let out = trajmap(&["targets", "--scene", s(&bad), "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let out = trajmap(&["gradcheck", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("10/10 gradient checks passed"));
}

#[test]
fn perfect_predictions_score_map_one() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let p = fixtures().join("perfect");
    #[rustfmt::skip]
    let out = trajmap(&["eval", "--corpus", s(&p.join("corpus")), "--preds", s(&p.join("preds")),
        "--thresholds", "0.5,1.0,1.5", "--score-threshold", "0.7", "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["mAP"].as_f64(), Some(1.0), "{v}");
    assert!(std::fs::read_to_string(report.with_extension("txt")).unwrap().contains("mAP"));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("ten_scenes.json");
    for d in ["a", "b"] {
        let out = trajmap(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join(d))]);
        assert_eq!(out.status.code(), Some(0));
    }
    let names: Vec<_> = std::fs::read_dir(dir.path().join("a/scenes")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 10);
    for n in names {
        let a = std::fs::read(dir.path().join("a/scenes").join(&n)).unwrap();
        let b = std::fs::read(dir.path().join("b/scenes").join(&n)).unwrap();
        assert_eq!(a, b);
    }
    // --seed overrides the config seed
    let other = dir.path().join("c");
    assert_eq!(trajmap(&["synth", "--config", s(&cfg), "--seed", "8", "--out", s(&other)]).status.code(), Some(0));
    assert_ne!(
        std::fs::read(other.join("scenes/scene_0000.json")).unwrap(),
        std::fs::read(dir.path().join("a/scenes/scene_0000.json")).unwrap()
    );
}

#[test]
fn rasterize_and_targets_reproduce_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixtures().join("perfect");
    let scene = p.join("corpus/scenes/scene_0000.json");
    let raster = dir.path().join("r.raster");
    let targets = dir.path().join("t.json");
    assert_eq!(trajmap(&["rasterize", "--scene", s(&scene), "--out", s(&raster)]).status.code(), Some(0));
    #[rustfmt::skip]
    let out = trajmap(&["targets", "--scene", s(&scene), "--kind", "lane_edge", "--lane-width", "3.5",
        "--out", s(&targets)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(raster).unwrap(), std::fs::read(p.join("scene_0000.raster")).unwrap());
    assert_eq!(std::fs::read(targets).unwrap(), std::fs::read(p.join("scene_0000.targets.json")).unwrap());
}

#[test]
fn committed_loss_curve_decreases() {
    let tsv = std::fs::read_to_string(fixtures().join("ten_scenes/trained.params.loss.tsv")).unwrap();
    let value = |key: &str| -> f64 {
        let line = tsv.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('\t').nth(1).unwrap().parse().unwrap()
    };
    let (initial, last) = (value("# initial_loss"), value("# final_loss"));
    assert!(last < initial, "{last} !< {initial}");
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), 201);
}

#[test]
fn in_process_run_matches_exit_codes() {
    assert_eq!(trajmap_cli::run(["trajmap", "--help"]), 0);
    assert_eq!(trajmap_cli::run(["trajmap", "frobnicate"]), 1);
    assert_eq!(trajmap_cli::run(["trajmap", "predict", "--corpus", "/nonexistent", "--params", "/x", "--out", "/tmp/x"]), 2);
}
