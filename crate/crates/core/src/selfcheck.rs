//! Quick numerical self-test used by `dense-se3 selftest`: each check
//! compares a library routine against an independent computation
//! (finite differences, dense linear algebra, brute-force loops).

use nalgebra::{DMatrix, DVector, Matrix3x6, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bilap::{smooth_backward, BilapSystem, EdgeWeights};
use crate::camera::{backproject, mapping_jacobian, project, InverseDepthMap, PinholeIntrinsics};
use crate::dense_se3::{
    affinity, build_normal_equations, linear_solve_adjoint, residual, EmbeddingField, Neighborhood,
    RevisionBundle,
};
use crate::fieldops::Se3Field;
use crate::grid::Grid;
use crate::se3::{Se3Transform, Twist};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst observed error against the reference.
    pub error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error < self.tolerance
    }
}

fn random_twist(rng: &mut impl Rng, max_angle: f64) -> Twist {
    let tau = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0f64));
    let phi = axis.normalize() * rng.random_range(0.0..max_angle);
    Twist::new(tau, phi)
}

fn random_intrinsics(rng: &mut impl Rng) -> PinholeIntrinsics {
    let fx = rng.random_range(50.0..500.0);
    PinholeIntrinsics {
        fx,
        fy: fx * rng.random_range(0.8..1.2),
        cx: rng.random_range(10.0..100.0),
        cy: rng.random_range(10.0..100.0),
    }
}

fn lie_roundtrip(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let xi = random_twist(rng, std::f64::consts::PI - 1e-3);
        let back = Se3Transform::exp(&xi).log();
        worst = worst.max((back.to_vector() - xi.to_vector()).amax());
    }
    CheckResult {
        name: "exp/log roundtrip",
        error: worst,
        tolerance: 1e-9,
    }
}

fn jacobian_fd(rng: &mut ChaCha8Rng) -> CheckResult {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = random_intrinsics(rng);
        let t = Se3Transform::exp(&random_twist(rng, 0.5).scale(0.5));
        let x = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(2.0..6.0),
        );
        let xp = t.act(&x);
        let analytic = mapping_jacobian(&xp, &k).unwrap();
        let mut numeric = Matrix3x6::zeros();
        for a in 0..6 {
            let mut e = [0.0; 6];
            e[a] = eps;
            let plus = project(&Se3Transform::exp(&Twist::from_slice(&e)).act(&xp), &k).unwrap();
            e[a] = -eps;
            let minus = project(&Se3Transform::exp(&Twist::from_slice(&e)).act(&xp), &k).unwrap();
            numeric.set_column(a, &((plus - minus) / (2.0 * eps)));
        }
        let rel = (analytic - numeric).norm() / numeric.norm().max(1e-12);
        worst = worst.max(rel);
    }
    CheckResult {
        name: "mapping Jacobian vs finite differences",
        error: worst,
        tolerance: 1e-5,
    }
}

fn normal_equations(rng: &mut ChaCha8Rng) -> CheckResult {
    let (h, w, ch) = (7, 9, 3);
    let k = PinholeIntrinsics {
        fx: 20.0,
        fy: 22.0,
        cx: 4.0,
        cy: 3.0,
    };
    let z = InverseDepthMap::new(Grid::from_fn(h, w, |_, _| rng.random_range(0.2..0.5)));
    let field = Se3Field::from_grid(Grid::from_fn(h, w, |_, _| {
        Se3Transform::exp(&random_twist(rng, 0.2).scale(0.1))
    }));
    let emb = EmbeddingField::from_vec(
        h,
        w,
        ch,
        (0..h * w * ch).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let mut rev = RevisionBundle::zeros(h, w);
    for i in 0..h * w {
        rev.revision[i] = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.01..0.01),
        );
        rev.confidence[i] = Vector3::from_fn(|_, _| rng.random_range(0.0..1.0));
    }
    let nbhd = Neighborhood::new(2, 1).unwrap();
    let systems = build_normal_equations(&field, &emb, &rev, &z, &k, &nbhd).unwrap();

    // stack every residual of pixel i into one dense Jacobian
    let mut worst: f64 = 0.0;
    for i in 0..h * w {
        let (ri, ci) = ((i / w) as isize, (i % w) as isize);
        let mut rows: Vec<[f64; 6]> = Vec::new();
        let mut res = Vec::new();
        let mut weights = Vec::new();
        for j in 0..h * w {
            let (rj, cj) = ((j / w) as isize, (j % w) as isize);
            if (rj - ri).abs() > 2 || (cj - ci).abs() > 2 {
                continue;
            }
            let Some(r) = residual(i, j, &field, &rev, &z, &k) else {
                continue;
            };
            let xj = backproject(&z.pixel(j / w, j % w).unwrap(), &k).unwrap();
            let jac = mapping_jacobian(&field[i].act(&xj), &k).unwrap();
            let a = affinity(emb.vector(i), emb.vector(j));
            for comp in 0..3 {
                let mut row = [0.0; 6];
                for (c, v) in row.iter_mut().enumerate() {
                    *v = jac[(comp, c)];
                }
                rows.push(row);
                res.push(r[comp]);
                weights.push(a * rev.confidence[j][comp]);
            }
        }
        let jd = DMatrix::from_fn(rows.len(), 6, |r, c| rows[r][c]);
        let wd = DMatrix::from_diagonal(&DVector::from_vec(weights));
        let rd = DVector::from_vec(res);
        let h_ref = jd.transpose() * &wd * &jd;
        let b_ref = jd.transpose() * &wd * &rd;
        let sys = &systems[i];
        let scale = h_ref.amax().max(1.0);
        for r in 0..6 {
            worst = worst.max((b_ref[r] - sys.b[r]).abs() / scale);
            for c in 0..6 {
                worst = worst.max((h_ref[(r, c)] - sys.h[(r, c)]).abs() / scale);
            }
        }
    }
    CheckResult {
        name: "normal equations vs dense Jacobian",
        error: worst,
        tolerance: 1e-10,
    }
}

fn bilap_solve_and_gradients(rng: &mut ChaCha8Rng) -> Vec<CheckResult> {
    let (h, w) = (6, 7);
    let weights = EdgeWeights {
        wx: Grid::from_fn(h, w, |_, _| rng.random_range(0.0..3.0)),
        wy: Grid::from_fn(h, w, |_, _| rng.random_range(0.0..3.0)),
    };
    let v = EmbeddingField::from_vec(h, w, 1, (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let g: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();

    let system = BilapSystem::build(&weights).unwrap();
    let u = system.factorize().unwrap().solve(v.as_slice()).unwrap();
    let au = system.apply(&u);
    let res = au
        .iter()
        .zip(v.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let vmax = v.as_slice().iter().map(|x| x.abs()).fold(0.0, f64::max);

    // L(w) = gᵀ A(w)⁻¹ v
    let loss = |wts: &EdgeWeights| -> f64 {
        let u = BilapSystem::build(wts).unwrap().factorize().unwrap().solve(v.as_slice()).unwrap();
        u.iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    let u_star = EmbeddingField::from_vec(h, w, 1, u.clone()).unwrap();
    let grads = smooth_backward(&u_star, &weights, &EmbeddingField::from_vec(h, w, 1, g.clone()).unwrap())
        .unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for idx in 0..h * w {
        for (axis, analytic) in [(0, grads.grad_wx[idx]), (1, grads.grad_wy[idx])] {
            let mut plus = weights.clone();
            let mut minus = weights.clone();
            let (p, m) = if axis == 0 {
                (&mut plus.wx, &mut minus.wx)
            } else {
                (&mut plus.wy, &mut minus.wy)
            };
            p[idx] += eps;
            m[idx] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1e-3));
        }
    }

    vec![
        CheckResult {
            name: "bi-Laplacian solve residual",
            error: res / vmax.max(1e-300),
            tolerance: 1e-8,
        },
        CheckResult {
            name: "bi-Laplacian weight gradients vs finite differences",
            error: worst,
            tolerance: 1e-4,
        },
    ]
}

fn adjoint_fd(rng: &mut ChaCha8Rng) -> CheckResult {
    let n = 5;
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * n as f64;
    let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let solve = |h: &DMatrix<f64>, b: &DVector<f64>| h.clone().lu().solve(b).unwrap();
    let u = solve(&h, &b);
    let (grad_b, grad_h) = linear_solve_adjoint(&h, &u, &g).unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for r in 0..n {
        let mut bp = b.clone();
        let mut bm = b.clone();
        bp[r] += eps;
        bm[r] -= eps;
        let num = (g.dot(&solve(&h, &bp)) - g.dot(&solve(&h, &bm))) / (2.0 * eps);
        worst = worst.max((num - grad_b[r]).abs());
        for c in 0..n {
            let mut hp = h.clone();
            let mut hm = h.clone();
            hp[(r, c)] += eps;
            hm[(r, c)] -= eps;
            let num = (g.dot(&solve(&hp, &b)) - g.dot(&solve(&hm, &b))) / (2.0 * eps);
            worst = worst.max((num - grad_h[(r, c)]).abs());
        }
    }
    CheckResult {
        name: "linear-solve adjoint vs finite differences",
        error: worst,
        tolerance: 1e-7,
    }
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut out = vec![
        lie_roundtrip(&mut rng),
        jacobian_fd(&mut rng),
        normal_equations(&mut rng),
    ];
    out.extend(bilap_solve_and_gradients(&mut rng));
    out.push(adjoint_fd(&mut rng));
    out
}
