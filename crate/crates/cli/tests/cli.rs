use std::path::Path;
use std::process::{Command, Output};

use dense_se3::fieldops::Se3Field;
use dense_se3::io::{read_ppm, read_se3_field, write_se3_field};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dense-se3"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small_scene(dir: &Path) -> String {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"height": 24, "width": 32, "num_objects": 2, "depth_range": [2.0, 8.0],
            "motion_scale": 0.1, "seed": 5}"#,
    )
    .unwrap();
    let scene = dir.join("scene");
    let out = run(&["generate", "--spec", spec.to_str().unwrap(), "--out", scene.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    scene.to_str().unwrap().to_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["solve", "--help"])), 0);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["solve", "--bogus"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = run(&["solve", "--scene", missing.to_str().unwrap(), "--out", "x.se3"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    let out = run(&["generate", "--spec", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_parameters_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let field = dir.path().join("f.se3");
    let f = field.to_str().unwrap();
    assert_eq!(code(&run(&["solve", "--scene", &scene, "--out", f, "--radius", "0"])), 1);
    assert_eq!(code(&run(&["solve", "--scene", &scene, "--out", f, "--lambda", "-1"])), 1);
    assert_eq!(code(&run(&["viz", "--out", f])), 1);
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn solve_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let field = dir.path().join("f.se3");
    let f = field.to_str().unwrap();
    let out = run(&["solve", "--scene", &scene, "--out", f, "--iters", "6", "--radius", "6"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_se3_field(&field).unwrap().shape(), (24, 32));
    assert!(dir.path().join("f.json").exists());

    let out = run(&["eval", "--scene", &scene, "--field", f]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["epe3d_mean"].as_f64().unwrap() < 1e-4);
    assert_eq!(report["acc3d_05"].as_f64().unwrap(), 1.0);
}

#[test]
fn too_many_flagged_pixels_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let field = dir.path().join("f.se3");
    // a one-pixel window leaves occluded pixels without any constraint
    let out = run(&[
        "solve", "--scene", &scene, "--out", field.to_str().unwrap(), "--iters", "1",
        "--radius", "1", "--stride", "2", "--smoothing", "off", "--max-flagged", "0",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identity_field_renders_mid_grey() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene(dir.path());
    let field = dir.path().join("identity.se3");
    write_se3_field(&field, &Se3Field::identity(24, 32)).unwrap();
    let images = dir.path().join("viz");
    let out = run(&[
        "viz", "--scene", &scene, "--field", field.to_str().unwrap(), "--out",
        images.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["flow.ppm", "tau.ppm", "phi.ppm"] {
        let img = read_ppm(&images.join(name)).unwrap();
        assert_eq!(img.shape(), (24, 32));
        assert!(img.iter().all(|p| *p == [128, 128, 128]), "{name}");
    }
    let gt = read_ppm(&images.join("flow_gt.ppm")).unwrap();
    assert!(gt.iter().any(|p| *p != [128, 128, 128]));
}
