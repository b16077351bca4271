use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semabridge::degradation::Image8;
use semabridge::tensor::io;
use semabridge::{Rng, Tensor};
use semabridge_cli::{run, RunConfig, EXIT_INVALID, EXIT_IO, EXIT_OK};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semabridge"))
        .args(args)
        .output()
        .expect("spawn semabridge")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn flops_large_scale() {
    let v = json(&bin(&["flops", "--n", "8192", "--mcat", "1024", "--c", "256", "--no-measure"]));
    assert_eq!(v["analytic_dir"], 4u64 * 8192 * 8192 * 256);
    assert_eq!(v["analytic_bridge"], 4u64 * 8192 * 1024 * 256);
    assert_eq!(v["ratio"], 0.125);
    assert!(v["counted_dir"].is_null());
}

#[test]
fn flops_measured_matches_analytic() {
    let v = json(&bin(&["flops", "--n", "64", "--mcat", "4", "--c", "8"]));
    assert_eq!(v["counted_dir"], v["analytic_dir"]);
    assert_eq!(v["counted_bridge"], v["analytic_bridge"]);
}

#[test]
fn flops_zero_is_invalid() {
    let out = bin(&["flops", "--n", "0"]);
    assert_eq!(out.status.code(), Some(EXIT_INVALID));
}

#[test]
fn degrade_level_zero_copies_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    let output = dir.path().join("out.pgm");
    let mut rng = Rng::new(3);
    let mut img = Image8::filled(1, 9, 7, 0).unwrap();
    for v in img.data_mut() {
        *v = (rng.next_u64() >> 56) as u8;
    }
    std::fs::write(&input, img.encode_pnm().unwrap()).unwrap();
    json(&bin(&["degrade", "--level", "0", s(&input), s(&output)]));
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&output).unwrap());
}

#[test]
fn degrade_darkens_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    std::fs::write(&input, Image8::filled(1, 16, 16, 128).unwrap().encode_pnm().unwrap()).unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    let va = json(&bin(&["degrade", "--seed", "4", "--level", "6", s(&input), "--out", s(&a)]));
    json(&bin(&["degrade", "--seed", "4", "--level", "6", s(&input), "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(va["mean_out"].as_f64().unwrap() < va["mean_in"].as_f64().unwrap());
}

#[test]
fn degrade_missing_input_is_io() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["degrade", "--level", "2", "/definitely/not/here.pgm", s(&dir.path().join("o.pgm"))]);
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn degrade_bad_header_is_format() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.pgm");
    std::fs::write(&input, b"P5\n4 x\n255\n").unwrap();
    let out = bin(&["degrade", "--level", "1", s(&input), s(&dir.path().join("o.pgm"))]);
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn gradcheck_csv_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let v = json(&bin(&["gradcheck", "--module", "bridge-fusion", "--seed", "7", "--out", s(&a)]));
    json(&bin(&["gradcheck", "--module", "bridge-fusion", "--seed", "7", "--out", s(&b)]));
    assert_eq!(v["pass"], true);
    let csv = std::fs::read_to_string(&a).unwrap();
    assert_eq!(csv, std::fs::read_to_string(&b).unwrap());
    assert!(csv.lines().count() > 1);
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = bin(&["bogus"]);
    assert_eq!(out.status.code(), Some(EXIT_INVALID));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    let out = bin(&["--help"]);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck"));
}

#[test]
fn missing_config_is_io() {
    let out = bin(&["flops", "--config", "/no/such/config.json"]);
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn malformed_config_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"shapes": {"height": 0}}"#).unwrap();
    assert_eq!(bin(&["flops", "--config", s(&cfg)]).status.code(), Some(EXIT_INVALID));
    std::fs::write(&cfg, r#"{"sedd": 3}"#).unwrap();
    assert_eq!(bin(&["flops", "--config", s(&cfg)]).status.code(), Some(EXIT_INVALID));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 99}"#).unwrap();
    let v = json(&bin(&["synth", "--config", s(&cfg), "--seed", "5"]));
    assert_eq!(v["seed"], 5);
    let v = json(&bin(&["synth", "--config", s(&cfg)]));
    assert_eq!(v["seed"], 99);
}

#[test]
fn shipped_config_is_default() {
    let text = std::fs::read_to_string(default_config()).unwrap();
    let parsed: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, RunConfig::default());
}

#[test]
fn fuse_reads_tensor_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(21);
    let files = [
        ("rgb.bten", Tensor::randn(&[3, 4, 5], 1.0, &mut rng)),
        ("ir.bten", Tensor::randn(&[2, 4, 5], 1.0, &mut rng)),
        ("text.bten", Tensor::randn(&[3, 6], 1.0, &mut rng)),
    ];
    for (name, t) in &files {
        io::write_file(dir.path().join(name), t).unwrap();
    }
    let p = |n: &str| dir.path().join(n).display().to_string();
    let out = dir.path().join("fused.bten");
    let v = json(&bin(&[
        "fuse", "--rgb", &p("rgb.bten"), "--ir", &p("ir.bten"), "--text", &p("text.bten"), "--out", s(&out),
    ]));
    assert!(v["support"]["identity_residual"].as_f64().unwrap() <= 1e-15);
    let fused = io::read_file(&out).unwrap();
    assert_eq!(fused.shape(), &[3, 4, 5]);

    let bytes = std::fs::read(p("ir.bten")).unwrap();
    std::fs::write(p("ir.bten"), &bytes[..bytes.len() - 3]).unwrap();
    let out = bin(&["fuse", "--rgb", &p("rgb.bten"), "--ir", &p("ir.bten"), "--text", &p("text.bten")]);
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn fuse_needs_all_three_inputs() {
    let out = bin(&["fuse", "--rgb", "x.bten"]);
    assert_eq!(out.status.code(), Some(EXIT_INVALID));
}

#[test]
fn occupancy_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = Image8::filled(1, 40, 40, 10).unwrap();
    // left half of the box hot
    for y in 10..30 {
        for x in 10..20 {
            img.set(0, y, x, 240);
        }
    }
    let ir = dir.path().join("ir.pgm");
    let boxes = dir.path().join("boxes.json");
    let csv = dir.path().join("occ.csv");
    img.write_pnm(&ir).unwrap();
    std::fs::write(&boxes, "[[10, 10, 30, 30], [0, 0, 5, 5]]").unwrap();
    let v = json(&bin(&["occupancy", "--ir", s(&ir), "--boxes", s(&boxes), "--out", s(&csv)]));
    assert_eq!(v["source"], "file");
    assert_eq!(v["degenerate"], 1);
    assert!((v["mean_r"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("box,x1,y1,x2,y2,r,threshold,degenerate\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn synth_writes_scene() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    json(&bin(&["synth", "--seed", "2", "--objects", "2", "--out", s(&scene)]));
    let ir = Image8::read_pnm(scene.join("ir.pgm")).unwrap();
    let rgb = Image8::read_pnm(scene.join("rgb.ppm")).unwrap();
    assert_eq!((ir.channels(), rgb.channels()), (1, 3));
    let boxes: Vec<[f64; 4]> = serde_json::from_str(&std::fs::read_to_string(scene.join("boxes.json")).unwrap()).unwrap();
    assert_eq!(boxes.len(), 2);
}

#[test]
fn nmrp_rows_in_unit_interval() {
    let v = json(&bin(&["nmrp", "--seed", "3", "--images", "2", "--levels", "0,5"]));
    let rows = v["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let x = row["nmrp"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{row}");
    }
}

#[test]
fn baseline_zero_prompt_is_identity() {
    let v = json(&bin(&["baseline", "--zero-prompt", "--seed", "8"]));
    assert_eq!(v["film_identity"], true);
    assert_eq!(v["counted_flops"], v["expected_flops"]);
}

#[test]
fn in_process_run_matches_binary() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(["semabridge", "flops", "--n", "16", "--mcat", "2", "--c", "4"], &mut out, &mut err);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, bin(&["flops", "--n", "16", "--mcat", "2", "--c", "4"]).stdout);
}

#[test]
fn flops_small_counts() {
    let v = json(&bin(&["flops", "--n", "16", "--mcat", "2", "--c", "8"]));
    assert_eq!(v["counted_dir"], 8192);
    assert_eq!(v["counted_bridge"], 1024);
}
