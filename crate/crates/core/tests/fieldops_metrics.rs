use dense_se3::camera::PinholeIntrinsics;
use dense_se3::dense_se3::{DenseSe3Config, Neighborhood};
use dense_se3::fieldops::{
    induced_flow, scene_flow, sequence_loss, solve_scene, upsample_se3, FlowField3, LossParams,
    Se3Field, SolveOptions, UpsampleWeights,
};
use dense_se3::grid::Grid;
use dense_se3::metrics::{epe2d, epe2d_errors, epe3d, epe3d_errors, report, threshold_metrics};
use dense_se3::se3::{Se3Transform, Twist};
use dense_se3::synth::{generate, OracleConfig, SceneOracle, SceneSpec, SyntheticScene};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(k: usize) -> SyntheticScene {
    generate(&SceneSpec::standard(k, 42)).unwrap()
}

/// Ground truth with a per-pixel perturbation applied on the left.
fn perturbed(scene: &SyntheticScene, seed: u64, size: f64) -> Se3Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = scene.t_gt.clone();
    for i in 0..f.len() {
        let v: [f64; 6] = std::array::from_fn(|_| rng.random_range(-size..size));
        f[i] = Se3Transform::exp(&Twist::from_slice(&v)) * f[i];
    }
    f
}

/// `(R X + t) − X` from the rotation matrix directly.
fn point_flow(t: &Se3Transform, x: &Vector3<f64>) -> Vector3<f64> {
    t.rotation_matrix() * x + t.translation() - x
}

fn backproject(scene: &SyntheticScene, r: usize, c: usize) -> Option<Vector3<f64>> {
    let d = scene.z1.at(r, c);
    if !(d > 0.0 && d.is_finite()) {
        return None;
    }
    let k = &scene.intrinsics;
    let z = 1.0 / d;
    Some(Vector3::new((c as f64 - k.cx) / k.fx * z, (r as f64 - k.cy) / k.fy * z, z))
}

#[test]
fn epe2d_matches_scalar_loop() {
    let s = scene(3);
    let pred = perturbed(&s, 1, 0.01);
    let flow = induced_flow(&pred, &s.z1, &s.intrinsics).unwrap();
    let mask = s.eval_mask();
    let (h, w) = s.shape();
    let (mut sum, mut n) = (0.0, 0usize);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !mask[i] || !flow.valid[i] || !s.flow_gt.valid[i] {
                continue;
            }
            let du = flow.values[i].x - s.flow_gt.values[i].x;
            let dv = flow.values[i].y - s.flow_gt.values[i].y;
            sum += (du * du + dv * dv).sqrt();
            n += 1;
        }
    }
    let got = epe2d(&flow, &s.flow_gt, &mask).unwrap();
    assert!((got - sum / n as f64).abs() < 1e-12);
}

#[test]
fn epe3d_matches_scalar_loop() {
    let s = scene(3);
    let pred = perturbed(&s, 2, 0.01);
    let mask = s.eval_mask();
    let (h, w) = s.shape();
    let (mut sum, mut n) = (0.0, 0usize);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let Some(x) = backproject(&s, r, c) else { continue };
            if !mask[i] {
                continue;
            }
            sum += (point_flow(&pred[i], &x) - point_flow(&s.t_gt[i], &x)).norm();
            n += 1;
        }
    }
    let got = epe3d(&pred, &s).unwrap();
    assert!((got - sum / n as f64).abs() < 1e-12, "{got} vs {}", sum / n as f64);
}

#[test]
fn thresholds_match_scalar_loop() {
    let s = scene(2);
    let pred = perturbed(&s, 3, 0.03);
    let mask = s.eval_mask();
    let e3 = epe3d_errors(&pred, &s).unwrap();
    let thresholds = [0.02, 0.05, 0.1, 0.5];
    let got = threshold_metrics(&e3, &mask, &thresholds).unwrap();
    let selected: Vec<f64> = (0..mask.len()).filter(|&i| mask[i]).filter_map(|i| e3[i]).collect();
    for (t, frac) in thresholds.iter().zip(&got) {
        let count = selected.iter().filter(|e| **e < *t).count();
        assert!((frac - count as f64 / selected.len() as f64).abs() < 1e-12);
    }
    // fractions grow with the threshold
    assert!(got.windows(2).all(|p| p[0] <= p[1]));
    assert!(threshold_metrics(&e3, &mask, &[0.0]).is_err());
}

#[test]
fn depth_translation_gives_known_epe3d() {
    let s = scene(3);
    let shift = Se3Transform::from_translation(Vector3::new(0.0, 0.0, 0.1));
    let mut pred = s.t_gt.clone();
    for i in 0..pred.len() {
        pred[i] = shift * pred[i];
    }
    let got = epe3d(&pred, &s).unwrap();
    assert!((got - 0.1).abs() < 1e-12, "{got}");
    assert!(epe3d(&s.t_gt, &s).unwrap() < 1e-15);
}

#[test]
fn ground_truth_reproduces_flow() {
    let s = scene(4);
    let flow = induced_flow(&s.t_gt, &s.z1, &s.intrinsics).unwrap();
    let e2 = epe2d_errors(&flow, &s.flow_gt).unwrap();
    let worst = e2.iter().flatten().fold(0.0, |a: f64, b| a.max(*b));
    assert!(worst < 1e-9, "{worst}");
    let sf = scene_flow(&s.t_gt, &s.z1, &s.intrinsics);
    assert!(sf.iter().filter(|v| v.is_some()).count() > 0);
}

#[test]
fn report_on_ground_truth_is_perfect() {
    let s = scene(2);
    let rep = report(&s.t_gt, &s, None, Vec::new()).unwrap();
    assert!(rep.epe2d_mean < 1e-9 && rep.epe3d_mean < 1e-12);
    assert_eq!((rep.acc_1px, rep.acc3d_05, rep.acc3d_10), (1.0, 1.0, 1.0));
    assert_eq!(rep.pixel_count, s.eval_mask().iter().filter(|m| **m).count());
    let limited = report(&s.t_gt, &s, Some(0.5), Vec::new()).unwrap();
    assert!(limited.pixel_count <= rep.pixel_count);
}

#[test]
fn static_scene_solve_stays_put() {
    let mut spec = SceneSpec::standard(2, 42);
    spec.height = 32;
    spec.width = 40;
    spec.motion_scale = 0.0;
    let s = generate(&spec).unwrap();
    let mut oracle = SceneOracle::new(&s, OracleConfig::default()).unwrap();
    let options = SolveOptions {
        iterations: 3,
        dense: DenseSe3Config::new(Neighborhood::new(4, 1).unwrap()),
        smoothing: true,
    };
    let out = solve_scene(&s.z1, &s.z2, &s.intrinsics, &mut oracle, &options).unwrap();
    let flow = induced_flow(&out.field, &s.z1, &s.intrinsics).unwrap();
    let e = epe2d(&flow, &s.flow_gt, &s.eval_mask()).unwrap();
    assert!(e < 1e-6, "{e}");
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.diagnostics.len(), 3);
}

#[test]
fn zero_iterations_return_identity() {
    let s = scene(2);
    let mut oracle = SceneOracle::new(&s, OracleConfig::default()).unwrap();
    let options = SolveOptions {
        iterations: 0,
        dense: DenseSe3Config::new(Neighborhood::new(2, 1).unwrap()),
        smoothing: false,
    };
    let out = solve_scene(&s.z1, &s.z2, &s.intrinsics, &mut oracle, &options).unwrap();
    assert!(out.field.iter().all(|t| *t == Se3Transform::identity()));
    assert!(out.history.is_empty());
    assert!(out.initial_accuracy.is_some());
}

#[test]
fn unit_discount_is_a_plain_sum() {
    let s = scene(2);
    let preds: Vec<Se3Field> = (0..4).map(|seed| perturbed(&s, seed, 0.02)).collect();
    let params = LossParams {
        gamma: 1.0,
        revision_loss_weight: 0.0,
    };
    let total = sequence_loss(&preds, &s.flow_gt, &s.z1, &s.intrinsics, &params).unwrap();
    let separate: f64 = preds
        .iter()
        .map(|p| sequence_loss(std::slice::from_ref(p), &s.flow_gt, &s.z1, &s.intrinsics, &params).unwrap())
        .sum();
    assert!((total - separate).abs() < 1e-10 * total);
    let bad = LossParams {
        gamma: 0.0,
        revision_loss_weight: 0.0,
    };
    assert!(sequence_loss(&preds, &s.flow_gt, &s.z1, &s.intrinsics, &bad).is_err());
    assert!(sequence_loss(&[], &s.flow_gt, &s.z1, &s.intrinsics, &params).is_err());
}

#[test]
fn half_blend_of_coaxial_rotations_is_the_midpoint() {
    let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
    let a = Se3Transform::new(
        UnitQuaternion::from_scaled_axis(axis * 0.2),
        Vector3::new(0.4, 0.0, 0.0),
    );
    let b = Se3Transform::new(
        UnitQuaternion::from_scaled_axis(axis * 0.6),
        Vector3::new(0.4, 0.0, 0.0),
    );
    let coarse = Se3Field::from_grid(Grid::from_vec(1, 2, vec![a, b]).unwrap());
    let mut weights = UpsampleWeights::nearest(1, 2, 1);
    let mut half = [0.0; 9];
    half[4] = 0.5;
    half[5] = 0.5;
    weights.weights[0] = half;
    let fine = upsample_se3(&coarse, &weights, 1).unwrap();
    // same axis: log-space averaging halves the angle difference
    let mid = fine[0];
    let expected = UnitQuaternion::from_scaled_axis(axis * 0.4);
    assert!(mid.rotation().angle_to(&expected) < 1e-12);
    assert_eq!(fine[1], b);
}

#[test]
fn induced_flow_by_hand() {
    let k = PinholeIntrinsics::new(100.0, 100.0, 1.0, 1.0).unwrap();
    let z = dense_se3::camera::InverseDepthMap::new(Grid::filled(3, 3, 0.5));
    let t = Se3Transform::from_translation(Vector3::new(0.2, 0.0, 0.0));
    let field = Se3Field::from_grid(Grid::filled(3, 3, t));
    let flow: FlowField3 = induced_flow(&field, &z, &k).unwrap();
    // fx·tx/Z = 100·0.2/2 = 10 px to the right, no depth change
    for v in flow.values.iter() {
        assert!((v - Vector3::new(10.0, 0.0, 0.0)).amax() < 1e-12);
    }
}
