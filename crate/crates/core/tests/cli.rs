use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_hpf-roi");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SPEC: &str = r#"{
  "width": 1024,
  "height": 768,
  "resolution_um_per_px": 4.0,
  "tissue": [{"cx": 512, "cy": 384, "semi_x": 470, "semi_y": 340}],
  "hotspots": [{"cx": 700, "cy": 300, "sigma_px": 60, "rate": 3000}],
  "base_rate": 150,
  "noise_sigma": 6,
  "disagreement_fraction": 0.1,
  "unclassifiable_fraction": 0.05,
  "seed": 7
}"#;

fn synth(dir: &Path) {
    let spec = dir.join("spec.json");
    fs::write(&spec, SPEC).unwrap();
    let out = run(&[
        "synth", "--spec", p(&spec), "--scale", "8", "--circle-radius", "6", "--pred-fn-rate", "0.2",
        "--pred-fp-rate", "20", "--pred-blur", "1", "--out", p(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_flag_is_a_usage_error() {
    let out = run(&["propose", "--slide", "s.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_input_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let slide = dir.path().join("s.pgm");
    fs::write(&slide, b"P5\n2 2\n255\n\x00\x01").unwrap();
    let out = run(&["mask", "--slide", p(&slide), "--resolution", "4", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn pipeline_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for f in ["slide.pgm", "slide.meta.json", "annotations.csv", "annotations.meta.json", "gt_map.fras", "pred_map.fras"] {
        assert!(d.join(f).exists(), "{f}");
    }

    let out = run(&[
        "propose", "--slide", p(&d.join("slide.pgm")), "--activity", p(&d.join("gt_map.fras")),
        "--annotations", p(&d.join("annotations.csv")), "--downsample", "8", "--out", p(&d.join("prop")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(d.join("prop/proposal.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut ordered = keys.clone();
    ordered.sort_by_key(|k| text.find(&format!("\"{k}\"")).unwrap());
    assert_eq!(
        ordered,
        ["origin_x", "origin_y", "width_px", "height_px", "activity_score", "gt_mc", "quartile"]
    );
    assert_eq!((v["width_px"].as_u64(), v["height_px"].as_u64()), (Some(444), Some(333)));
    assert!(v["gt_mc"].as_u64().unwrap() > 0);
    assert_eq!(v["quartile"], "Q4");
    assert!(d.join("prop/overlay.pgm").exists());

    let out = run(&[
        "evaluate", "--gt", p(&d.join("annotations.csv")), "--pred-map", p(&d.join("pred_map.fras")),
        "--proposal", p(&d.join("prop/proposal.json")), "--radius", "12", "--circle-radius", "6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["f1"].as_f64().unwrap() > 0.0);
    assert!(m["mean_iou"].as_f64().unwrap() > 0.0);
    assert!(m["pearson_r"].is_null());
    assert!(m["per_slide"][0]["estimated_mc"].as_f64().is_some());

    let out = run(&["mask", "--slide", p(&d.join("slide.pgm")), "--downsample", "8", "--out", p(&d.join("mask"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_str(&fs::read_to_string(d.join("mask/mask_summary.json")).unwrap()).unwrap();
    assert!(summary["valid_origins"].as_u64().unwrap() > 0);
    assert!(d.join("mask/valid_mask.pgm").exists());

    let out = run(&["gt-map", "--annotations", p(&d.join("annotations.csv")), "--scale", "8", "--circle-radius", "6", "--out", p(&d.join("gt"))]);
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("gt/gt_map.fras")).unwrap(), fs::read(d.join("gt_map.fras")).unwrap());

    let out = run(&[
        "sample-patches", "--annotations", p(&d.join("annotations.csv")), "--patch-size", "128", "--count", "50",
        "--seed", "3", "--subset", "val", "--out", p(&d.join("patches")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("patches/patches.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 150);
    let val_start = (768.0 * 0.8f64).floor() as u32;
    for line in csv.lines().skip(1) {
        let y: u32 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(y >= val_start && y + 128 <= 768, "{line}");
    }
}

#[test]
fn evaluate_points_reports_f1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ann = d.join("a.csv");
    fs::write(&ann, "x,y,obs1,obs2\n10,10,mitosis,mitosis\n50,50,mitosis,mitosis\n90,20,mitosis,nonmitosis\n").unwrap();
    fs::write(d.join("a.meta.json"), r#"{"width_px": 100, "height_px": 100}"#).unwrap();
    let pts = d.join("p.csv");
    fs::write(&pts, "x,y\n12,11\n80,80\n").unwrap();
    let out = run(&["evaluate", "--pred-points", p(&pts), "--gt", p(&ann), "--radius", "25", "--out", p(d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["f1"].as_f64(), Some(0.5));
    assert_eq!(m["per_slide"][0]["true_positives"], 1);
}

#[test]
fn stitch_reassembles_patches() {
    use hpf_roi::density::{cut_patches, OverlapMode, PatchGrid};
    use hpf_roi::raster::{read_fras, write_fras, DensityMap};

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (w, h) = (150u32, 100u32);
    let vals = (0..w * h).map(|i| (i % 97) as f32 / 97.0).collect();
    let map = DensityMap::new(w, h, 1, vals).unwrap();
    let grid = PatchGrid::new(w, h, 64, 8, OverlapMode::PerSide).unwrap();
    for (o, patch) in grid.origins().into_iter().zip(cut_patches(&map, &grid).unwrap()) {
        write_fras(&patch, &d.join(hpf_roi::cli::patch_file_name(o))).unwrap();
    }
    let out = run(&[
        "stitch", "--patch-dir", p(d), "--width", "150", "--height", "100", "--patch-size", "64", "--margin", "8",
        "--out", p(&d.join("out")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_fras(&d.join("out/activity.fras")).unwrap(), map);
}

#[test]
fn help_shows_defaults() {
    let out = run(&["propose", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--slide", "--activity", "--annotations", "--resolution", "--hpf-area", "--n-fields", "--aspect", "--downsample",
        "--closing-radius", "--coverage", "--out", "--threads", "--overlay",
    ] {
        assert!(text.contains(flag), "{flag}");
    }
    assert!(text.contains("[default: 0.237]") && text.contains("[default: 0.95]"));
}
