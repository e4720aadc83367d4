//! Black-box tests of the `ptlayer` binary: exit codes, output atomicity,
//! byte-exact behavior.

use std::path::Path;
use std::process::{Command, Output};

use pt_layer::image::{encode_pnm, load_image, save_image};
use pt_layer::ImageTensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ptlayer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_test_image(path: &Path, seed: u64) -> ImageTensor {
    let t = ImageTensor::from_fn(1, 8, 8, 1, |_, y, x, _| {
        let v = (seed as f64 * 0.37 + y as f64 * 0.11 + x as f64 * 0.07).sin();
        0.5 + 0.4 * v
    })
    .unwrap();
    save_image(&t, path, 255).unwrap();
    t
}

#[test]
fn warp_with_identity_tm_matches_resaving_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    write_test_image(&input, 1);
    let out = dir.path().join("out.pgm");

    let status = run(&[
        "warp",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--params",
        "1,0,0,0,1,0,0,0",
    ]);
    assert!(status.status.success(), "{status:?}");

    let resaved = encode_pnm(&load_image(&input).unwrap(), 255).unwrap();
    let warped = std::fs::read(&out).unwrap();
    assert_eq!(warped, resaved, "identity warp must be byte-identical");
}

#[test]
fn unknown_subcommand_exits_1_with_usage() {
    let output = run(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn help_exits_0() {
    let output = run(&["--help"]);
    assert_eq!(output.status.code(), Some(0));
}

#[test]
fn missing_input_is_a_data_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.pgm");
    let output = run(&[
        "warp",
        "--in",
        dir.path().join("absent.pgm").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--params",
        "1,0,0,0,1,0,0,0",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.exists(), "no output file may exist after a failure");
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn singular_params_are_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    write_test_image(&input, 2);
    let out = dir.path().join("out.pgm");
    let output = run(&[
        "warp",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--params",
        "0,0,0,0,0,0,0,0",
    ]);
    assert_eq!(output.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn warp_requires_exactly_one_tm_source() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    write_test_image(&input, 3);
    let out = dir.path().join("out.pgm");
    let output = run(&[
        "warp",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn warp_accepts_bicubic_with_custom_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    write_test_image(&input, 8);
    let out = dir.path().join("out.pgm");
    let output = run(&[
        "warp",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--params",
        "1,0,0.5,0,1,0.5,0,0",
        "--kernel",
        "bicubic:-0.75",
    ]);
    assert!(output.status.success(), "{output:?}");
    assert!(out.exists());

    let bad = run(&[
        "warp",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--params",
        "1,0,0,0,1,0,0,0",
        "--kernel",
        "bicubic:nan?",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn distort_rejects_out_of_range_rho() {
    let dir = tempfile::tempdir().unwrap();
    write_test_image(&dir.path().join("a.pgm"), 4);
    let output = run(&[
        "distort",
        "--in",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--rho",
        "0.7",
        "--keep",
        "0",
        "--seed",
        "1",
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(!dir.path().join("out").join("manifest.csv").exists());
}

#[test]
fn rectify_pipeline_produces_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let orig = dir.path().join("orig");
    std::fs::create_dir(&orig).unwrap();
    for i in 0..2u64 {
        write_test_image(&orig.join(format!("img{i}.pgm")), 10 + i);
    }
    let dist = dir.path().join("dist");
    let out = run(&[
        "distort",
        "--in",
        orig.to_str().unwrap(),
        "--out",
        dist.to_str().unwrap(),
        "--rho",
        "0.1",
        "--keep",
        "0.5",
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "{out:?}");

    let report = dir.path().join("loss.csv");
    let tms = dir.path().join("tms");
    let rect = dir.path().join("rect");
    let out = run(&[
        "rectify",
        "--pairs",
        dist.join("manifest.csv").to_str().unwrap(),
        "--in",
        orig.to_str().unwrap(),
        "--layers",
        "2",
        "--epochs",
        "10",
        "--lr",
        "1e-3",
        "--kernel",
        "bilinear",
        "--seed",
        "4",
        "--report",
        report.to_str().unwrap(),
        "--save-tms",
        tms.to_str().unwrap(),
        "--out",
        rect.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");

    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("epoch,mse\n"));
    assert_eq!(csv.lines().count(), 11);
    for name in ["layer0.tm", "layer1.tm", "composite.tm"] {
        assert!(tms.join(name).exists(), "missing {name}");
    }
    assert!(rect.join("img0.pgm").exists() && rect.join("img1.pgm").exists());
}

#[test]
fn rectify_with_bad_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(&manifest, "bogus\n").unwrap();
    write_test_image(&dir.path().join("a.pgm"), 6);
    let output = run(&[
        "rectify",
        "--pairs",
        manifest.to_str().unwrap(),
        "--in",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_on_a_correct_build() {
    let output = run(&["gradcheck", "--seed", "1", "--configs", "100"]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("Bilinear") && stdout.contains("Bicubic"));
}

#[test]
fn inspect_prints_matrix_and_inverse() {
    let dir = tempfile::tempdir().unwrap();
    let tm = dir.path().join("h.tm");
    let h = pt_layer::Homography::from_params([1.0, 0.0, 2.0, 0.0, 1.0, -1.0, 0.0, 0.0]).unwrap();
    std::fs::write(&tm, h.to_text()).unwrap();
    let output = run(&["inspect", "--tm", tm.to_str().unwrap()]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("determinant"));
    assert!(stdout.contains("inverse"));
    assert!(stdout.contains("(0, 0) -> (2.000000, -1.000000)"));
}

#[test]
fn inspect_missing_file_is_a_data_error() {
    let output = run(&["inspect", "--tm", "/nonexistent/h.tm"]);
    assert_eq!(output.status.code(), Some(2));
}
