use std::fs;

use dense_se3::fieldops::Se3Field;
use dense_se3::grid::Grid;
use dense_se3::io::{
    read_flo, read_kitti_disparity_png, read_kitti_flow_png, read_pfm, read_pgm, read_ppm,
    read_scene, read_se3_field, scene_files, write_flo, write_pfm, write_pgm, write_ppm,
    write_scene, write_se3_field,
};
use dense_se3::se3::{Se3Transform, Twist};
use dense_se3::synth::{generate, SceneSpec};
use proptest::prelude::*;

fn grid<T: std::fmt::Debug>(elem: impl Strategy<Value = T> + Clone) -> impl Strategy<Value = Grid<T>> {
    (1usize..9, 1usize..9).prop_flat_map(move |(h, w)| {
        prop::collection::vec(elem.clone(), h * w).prop_map(move |v| Grid::from_vec(h, w, v).unwrap())
    })
}

fn finite_f32() -> impl Strategy<Value = f32> + Clone {
    prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pfm_is_bitwise(g in grid(finite_f32())) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        write_pfm(&path, &g).unwrap();
        let back = read_pfm(&path).unwrap();
        prop_assert_eq!(back.shape(), g.shape());
        for (a, b) in back.iter().zip(g.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn flo_keeps_values_and_validity(
        g in grid((-5e3f32..5e3, -5e3f32..5e3, any::<bool>())),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.flo");
        let uv = g.map(|(u, v, _)| [*u, *v]);
        let valid = g.map(|(_, _, ok)| *ok);
        write_flo(&path, &uv, &valid).unwrap();
        let (uv2, valid2) = read_flo(&path).unwrap();
        prop_assert_eq!(&valid2, &valid);
        for i in 0..uv.len() {
            if valid[i] {
                prop_assert_eq!(uv2[i], uv[i]);
            }
        }
    }

    #[test]
    fn pgm_and_ppm_are_exact(g in grid(any::<u8>()), c in grid(any::<[u8; 3]>())) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        write_pgm(&p, &g).unwrap();
        prop_assert_eq!(read_pgm(&p).unwrap(), g);
        let p = dir.path().join("x.ppm");
        write_ppm(&p, &c).unwrap();
        prop_assert_eq!(read_ppm(&p).unwrap(), c);
    }

    #[test]
    fn se3_field_is_bitwise(g in grid(prop::array::uniform6(-2.0..2.0f64))) {
        let field = Se3Field::from_grid(g.map(|v| Se3Transform::exp(&Twist::from_slice(v))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.se3");
        write_se3_field(&path, &field).unwrap();
        let back = read_se3_field(&path).unwrap();
        prop_assert_eq!(back.shape(), field.shape());
        for (a, b) in back.iter().zip(field.iter()) {
            let (a, b) = (a.to_components(), b.to_components());
            for k in 0..7 {
                prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }
}

#[test]
fn scene_directory_roundtrip() {
    let scene = generate(&SceneSpec::standard(3, 42)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &scene).unwrap();
    let back = read_scene(dir.path()).unwrap();
    assert_eq!(back.spec.num_objects, scene.spec.num_objects);
    assert_eq!(back.intrinsics, scene.intrinsics);
    assert_eq!(back.labels, scene.labels);
    assert_eq!(back.occlusion, scene.occlusion);
    assert_eq!(back.t_gt, scene.t_gt);
    assert_eq!(back.flow_gt.valid, scene.flow_gt.valid);
    assert_eq!(back.num_segments(), scene.num_segments());
    for i in 0..scene.labels.len() {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        assert!(rel(back.z1.values()[i], scene.z1.values()[i]) < 1e-7);
        assert!(rel(back.z2.values()[i], scene.z2.values()[i]) < 1e-7);
        if scene.flow_gt.valid[i] {
            let (a, b) = (back.flow_gt.values[i], scene.flow_gt.values[i]);
            for k in 0..3 {
                assert!(rel(a[k], b[k]) < 1e-6);
            }
        }
    }
    // writing the reloaded scene reproduces the same files
    let again = tempfile::tempdir().unwrap();
    write_scene(again.path(), &back).unwrap();
    for name in [
        scene_files::INV_DEPTH1,
        scene_files::FLOW,
        scene_files::LABELS,
        scene_files::T_GT,
    ] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    fs::write(p("bad.pfm"), b"P6\n2 2\n-1.0\n").unwrap();
    assert!(read_pfm(&p("bad.pfm")).is_err());
    fs::write(p("short.pfm"), b"Pf\n4 4\n-1.0\n\0\0\0\0").unwrap();
    assert!(read_pfm(&p("short.pfm")).is_err());
    fs::write(p("nan_scale.pfm"), b"Pf\n1 1\nabc\n\0\0\0\0").unwrap();
    assert!(read_pfm(&p("nan_scale.pfm")).is_err());

    fs::write(p("bad.flo"), b"NOPE00000000").unwrap();
    assert!(read_flo(&p("bad.flo")).is_err());
    let mut flo = 202021.25f32.to_le_bytes().to_vec();
    flo.extend(3i32.to_le_bytes());
    flo.extend(3i32.to_le_bytes());
    flo.extend([0u8; 8]);
    fs::write(p("short.flo"), flo).unwrap();
    assert!(read_flo(&p("short.flo")).is_err());

    fs::write(p("bad.pgm"), b"P2\n1 1\n255\n\x01").unwrap();
    assert!(read_pgm(&p("bad.pgm")).is_err());
    fs::write(p("short.ppm"), b"P6\n2 2\n255\n\x01\x02").unwrap();
    assert!(read_ppm(&p("short.ppm")).is_err());

    let mut se3 = b"SE3F".to_vec();
    se3.extend(1i32.to_le_bytes());
    se3.extend(1i32.to_le_bytes());
    se3.extend([0u8; 56]);
    fs::write(p("zero_q.se3"), se3).unwrap();
    assert!(read_se3_field(&p("zero_q.se3")).is_err());
    fs::write(p("magic.se3"), b"SE3X\0\0\0\0\0\0\0\0").unwrap();
    assert!(read_se3_field(&p("magic.se3")).is_err());

    assert!(read_pfm(&p("missing.pfm")).is_err());
    let empty = tempfile::tempdir().unwrap();
    assert!(read_scene(empty.path()).is_err());
}

#[test]
fn kitti_pngs_decode() {
    let dir = tempfile::tempdir().unwrap();
    let flow_path = dir.path().join("flow.png");
    let mut img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(2, 1);
    img.put_pixel(0, 0, image::Rgb([32768 + 64 * 3, 32768 - 32, 1]));
    img.put_pixel(1, 0, image::Rgb([0, 0, 0]));
    img.save(&flow_path).unwrap();
    let (uv, valid) = read_kitti_flow_png(&flow_path).unwrap();
    assert_eq!(uv[0], [3.0, -0.5]);
    assert_eq!(valid.as_slice(), &[true, false]);

    let disp_path = dir.path().join("disp.png");
    let mut d = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(2, 1);
    d.put_pixel(0, 0, image::Luma([256 * 10 + 128]));
    d.save(&disp_path).unwrap();
    let (disp, valid) = read_kitti_disparity_png(&disp_path).unwrap();
    assert_eq!(disp[0], 10.5);
    assert_eq!(valid.as_slice(), &[true, false]);
}
