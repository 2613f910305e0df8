use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ichseg(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ichseg"));
    cmd.args(args).env_remove("ICHSEG_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

/// Synthetic dataset in `dir` plus its generated `pipeline.json`.
fn fixture(dir: &Path) -> PathBuf {
    let o = ichseg(&["synth-fixture", "--out", dir.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    dir.join("pipeline.json")
}

/// Writes a config next to the fixture's manifest with `extra` merged in.
fn config(dir: &Path, name: &str, extra: serde_json::Value) -> PathBuf {
    let mut base: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("pipeline.json")).unwrap()).unwrap();
    for (k, v) in extra.as_object().unwrap() {
        base[k] = v.clone();
    }
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&base).unwrap()).unwrap();
    p
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn run_on_synthetic_fixture_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let o = ichseg(&["run", "-c", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let out = dir.path().join("out");
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval["segmentation"]["dice"]["mean"], 1.0);
    assert_eq!(eval["detection"]["metrics"]["accuracy"]["value"], 1.0);
    assert!(text(&o).contains("Accuracy"));
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 12);
    assert!(out.join("scores.csv").is_file() && out.join("evaluation.txt").is_file());
}

#[test]
fn same_seed_gives_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "4")] {
        let o = ichseg(
            &["run", "-c", cfg, "-o", out.to_str().unwrap(), "--workers", workers],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    assert_eq!(read_tree(&a), read_tree(&b));
}

#[test]
fn seed_changes_masks_but_not_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cfg = config(
        dir.path(),
        "fill.json",
        serde_json::json!({"segmenter": {"kind": "fill_box"}, "variant": "bbox"}),
    );
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("s1"), dir.path().join("s2"));
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let o = ichseg(
            &["segment", "-c", cfg, "-o", out.to_str().unwrap(), "--seed", seed],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    let ta = read_tree(&a);
    let tb = read_tree(&b);
    let masks = |t: &[(String, Vec<u8>)]| {
        t.iter()
            .filter(|(n, _)| n.starts_with("masks"))
            .cloned()
            .collect::<Vec<_>>()
    };
    assert_ne!(masks(&ta), masks(&tb));
    let keys = |p: &Path| {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.join("run_report.json")).unwrap()).unwrap();
        v.as_object().unwrap().keys().cloned().collect::<Vec<_>>()
    };
    assert_eq!(keys(&a), keys(&b));
}

#[test]
fn invalid_window_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cfg = config(
        dir.path(),
        "bad.json",
        serde_json::json!({
            "output_dir": "never",
            "windows": [
                {"name": "brain", "level": 40, "width": 0},
                {"name": "subdural", "level": 80, "width": 200},
                {"name": "bone", "level": 600, "width": 2800}
            ],
            "perturbation": {"count": 10, "min_expand_px": 5, "max_expand_px": 4}
        }),
    );
    let o = ichseg(&["preprocess", "-c", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    let msg = text(&o);
    assert!(
        msg.contains("windows[0].width") && msg.contains("perturbation.max_expand_px"),
        "{msg}"
    );
    assert!(!dir.path().join("never").exists());
}

#[test]
fn point_variant_with_box_only_segmenter_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let cfg = config(
        dir.path(),
        "fill.json",
        serde_json::json!({"segmenter": {"kind": "fill_box"}}),
    );
    let o = ichseg(&["segment", "-c", cfg.to_str().unwrap(), "--variant", "point"], &[]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    let report = fs::read_to_string(dir.path().join("out/run_report.json")).unwrap();
    assert!(report.contains("member 0: segmenter `fill-box` does not support the Point variant"));
}

#[test]
fn output_dir_from_environment_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let cfg = cfg.to_str().unwrap();
    let env_out = dir.path().join("from-env");
    let o = ichseg(&["export-index", "-c", cfg], &[("ICHSEG_OUTPUT_DIR", &env_out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(env_out.join("index.json").is_file());
    let flag_out = dir.path().join("from-flag");
    let o = ichseg(
        &["export-index", "-c", cfg, "-o", flag_out.to_str().unwrap()],
        &[("ICHSEG_OUTPUT_DIR", &env_out)],
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(flag_out.join("index.json").is_file());
}

#[test]
fn preprocess_is_idempotent_and_overlay_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&ichseg(&["preprocess", "-c", cfg], &[])), 0);
    let first = read_tree(&dir.path().join("out"));
    assert_eq!(first.iter().filter(|(n, _)| n.ends_with(".png")).count(), 12);
    assert_eq!(code(&ichseg(&["preprocess", "-c", cfg], &[])), 0);
    assert_eq!(read_tree(&dir.path().join("out")), first);

    assert_eq!(code(&ichseg(&["run", "-c", cfg], &[])), 0);
    let o = ichseg(&["overlay", "-c", cfg, "--slice", "P001_S002"], &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.path().join("out/overlays/P001_S002.png").is_file());
    assert_eq!(code(&ichseg(&["overlay", "-c", cfg, "--slice", "missing"], &[])), 2);
}

#[test]
fn detect_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    assert_eq!(code(&ichseg(&["detect", "-c", cfg.to_str().unwrap()], &[])), 0);
    let replay = config(
        dir.path(),
        "replay.json",
        serde_json::json!({"detector": {"backend": {"kind": "replay", "path": "out/detections.json"}}, "output_dir": "replayed"}),
    );
    let o = ichseg(&["run", "-c", replay.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("1.000 ± 0.000"));
}

#[test]
fn usage_errors_exit_with_validation_code() {
    assert_eq!(code(&ichseg(&["run"], &[])), 1);
    assert_eq!(code(&ichseg(&["--help"], &[])), 0);
    let dir = tempfile::tempdir().unwrap();
    let bhx = dir.path().join("bhx.csv");
    fs::write(
        &bhx,
        "SOPInstanceUID,data,labelName\nID_1,\"{'x': 1, 'y': 2, 'width': 3, 'height': 4}\",Epidural\n",
    )
    .unwrap();
    let out = dir.path().join("ann.csv");
    let o = ichseg(
        &[
            "export-index",
            "--bhx",
            bhx.to_str().unwrap(),
            "--annotations-out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(
        fs::read_to_string(out).unwrap(),
        "slice_id,subtype,x0,y0,x1,y1\nID_1,EDH,1,2,4,6\n"
    );
}
