//! The Dense-SE3 layer.
//!
//! For every pixel `i` the layer minimizes
//!
//! ```text
//! E_i(δ) = Σ_{j ∈ N_i} a_ij ‖ r_j + π(T_j X_j) − π(exp(δ) T_i X_j) ‖²_{w_j}
//! ```
//!
//! with one damped Gauss-Newton step. Each pixel owns an independent 6×6
//! system that is accumulated in place, so no Jacobian is ever stored and
//! memory does not grow with the neighbourhood size.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix6, Vector3, Vector6};
use rayon::prelude::*;

use crate::camera::{backproject, project, InverseDepthMap, PinholeIntrinsics, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::fieldops::Se3Field;
use crate::grid::Grid;
use crate::se3::Twist;

/// Per-pixel rigid-motion embedding vectors, pixel-major with `channels`
/// values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingField {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl EmbeddingField {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} embedding field",
                data.len()
            )));
        }
        if channels == 0 {
            return Err(Error::InvalidParameter("embedding needs at least one channel".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite embedding entry".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn vector(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.channels..(pixel + 1) * self.channels]
    }

    #[inline]
    pub fn vector_mut(&mut self, pixel: usize) -> &mut [f64] {
        &mut self.data[pixel * self.channels..(pixel + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// One channel as a row-major `height × width` vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn set_channel(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.height * self.width);
        for (p, &v) in values.iter().enumerate() {
            self.data[p * self.channels + c] = v;
        }
    }
}

/// Revision targets `(r_x, r_y, r_z)` and their confidences per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RevisionBundle {
    pub revision: Grid<Vector3<f64>>,
    pub confidence: Grid<Vector3<f64>>,
}

impl RevisionBundle {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            revision: Grid::filled(height, width, Vector3::zeros()),
            confidence: Grid::filled(height, width, Vector3::zeros()),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.revision.shape()
    }

    pub fn validate(&self) -> Result<()> {
        self.revision.check_shape(&self.confidence, "revision confidences")?;
        for (i, w) in self.confidence.iter().enumerate() {
            if w.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::InvalidParameter(format!(
                    "confidence {w:?} at pixel {i} outside [0, 1]"
                )));
            }
        }
        if self.revision.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("non-finite revision".into()));
        }
        Ok(())
    }
}

/// Square window of offsets `k·stride` with `|k·stride| ≤ radius`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    radius: usize,
    stride: usize,
}

impl Neighborhood {
    pub fn new(radius: usize, stride: usize) -> Result<Self> {
        if radius < 1 {
            return Err(Error::InvalidParameter("neighborhood radius must be >= 1".into()));
        }
        if stride < 1 {
            return Err(Error::InvalidParameter("neighborhood stride must be >= 1".into()));
        }
        Ok(Self { radius, stride })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Neighbour coordinates of `(row, col)` clipped to the image, in
    /// row-major order.
    pub fn neighbors(
        &self,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    ) -> impl Iterator<Item = (usize, usize)> {
        let reach = (self.radius / self.stride) as isize;
        let stride = self.stride as isize;
        let (row, col) = (row as isize, col as isize);
        let (h, w) = (height as isize, width as isize);
        let rows = (-reach..=reach)
            .map(move |k| row + k * stride)
            .filter(move |&r| r >= 0 && r < h);
        rows.flat_map(move |r| {
            (-reach..=reach)
                .map(move |k| col + k * stride)
                .filter(move |&c| c >= 0 && c < w)
                .map(move |c| (r as usize, c as usize))
        })
    }

    pub fn len(&self) -> usize {
        let side = 2 * (self.radius / self.stride) + 1;
        side * side
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Levenberg-style damping added to the normal equations before solving.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Damping {
    /// Scales `diag(H)`. Kept small: small windows leave a weak
    /// translation/rotation direction that stronger damping crawls along.
    pub relative: f64,
    /// Multiplies the identity.
    pub absolute: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Self {
            relative: 1e-6,
            absolute: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseSe3Config {
    pub neighborhood: Neighborhood,
    pub damping: Damping,
    /// Pixels whose accumulated weight `Σ a_ij (w_x + w_y + w_z)` falls below
    /// this are left unchanged.
    pub weight_cutoff: f64,
}

impl DenseSe3Config {
    pub fn new(neighborhood: Neighborhood) -> Self {
        Self {
            neighborhood,
            damping: Damping::default(),
            weight_cutoff: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PixelStatus {
    #[default]
    Updated,
    Unconstrained,
    FactorizationFailure,
}

/// Normal equations `H δ = b` of one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalSystem6 {
    pub h: Matrix6<f64>,
    pub b: Vector6<f64>,
    /// `Σ_j a_ij (w_x + w_y + w_z)` over contributing terms.
    pub weight: f64,
    /// Objective value at `δ = 0`.
    pub objective: f64,
}

impl NormalSystem6 {
    pub fn zero() -> Self {
        Self {
            h: Matrix6::zeros(),
            b: Vector6::zeros(),
            weight: 0.0,
            objective: 0.0,
        }
    }
}

/// `2·σ(−‖vi − vj‖²)`; equals 1 exactly when `vi == vj`.
#[inline]
pub fn affinity(vi: &[f64], vj: &[f64]) -> f64 {
    debug_assert_eq!(vi.len(), vj.len());
    let dist_sq: f64 = vi.iter().zip(vj).map(|(a, b)| (a - b) * (a - b)).sum();
    2.0 / (1.0 + dist_sq.exp())
}

fn check_inputs(
    field: &Se3Field,
    emb: Option<&EmbeddingField>,
    rev: &RevisionBundle,
    inverse_depth: &InverseDepthMap,
) -> Result<()> {
    let shape = field.shape();
    let mismatch = |what: &str, got: (usize, usize)| {
        Error::ShapeMismatch(format!(
            "{what} is {}x{}, transform field is {}x{}",
            got.0, got.1, shape.0, shape.1
        ))
    };
    if let Some(emb) = emb {
        if emb.shape() != shape {
            return Err(mismatch("embedding field", emb.shape()));
        }
    }
    if rev.shape() != shape || rev.confidence.shape() != shape {
        return Err(mismatch("revision bundle", rev.shape()));
    }
    if inverse_depth.shape() != shape {
        return Err(mismatch("inverse depth", inverse_depth.shape()));
    }
    Ok(())
}

/// Reprojection residual `r_j + π(T_j X_j) − π(T_i X_j)` for the pair
/// `(i, j)` at `δ_i = 0`. `None` when pixel `j` has no valid depth or either
/// projection fails.
pub fn residual(
    i: usize,
    j: usize,
    field: &Se3Field,
    rev: &RevisionBundle,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
) -> Option<Vector3<f64>> {
    let (_, w) = field.shape();
    let pj = inverse_depth.pixel(j / w, j % w)?;
    let xj = backproject(&pj, k).ok()?;
    let own = project(&field[j].act(&xj), k).ok()?;
    let other = project(&field[i].act(&xj), k).ok()?;
    Some(rev.revision[j] + own.to_vector() - other.to_vector())
}

/// Per-pixel quantities shared by every system that references pixel `j`.
struct Correspondence {
    point: Vector3<f64>,
    target: Vector3<f64>,
    confidence: Vector3<f64>,
}

fn correspondences(
    field: &Se3Field,
    rev: &RevisionBundle,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
) -> Vec<Option<Correspondence>> {
    let w = field.width();
    (0..field.len())
        .into_par_iter()
        .map(|j| {
            let confidence = rev.confidence[j];
            if confidence == Vector3::zeros() {
                return None;
            }
            let pj = inverse_depth.pixel(j / w, j % w)?;
            let point = backproject(&pj, k).ok()?;
            let own = project(&field[j].act(&point), k).ok()?;
            Some(Correspondence {
                point,
                target: rev.revision[j] + own.to_vector(),
                confidence,
            })
        })
        .collect()
}

/// Packed upper triangle of a symmetric 6×6 matrix.
const UPPER: usize = 21;

#[inline]
fn accumulate_row(h: &mut [f64; UPPER], b: &mut [f64; 6], row: &[f64; 6], weight: f64, res: f64) {
    let mut idx = 0;
    for r in 0..6 {
        let wr = weight * row[r];
        b[r] += wr * res;
        for c in r..6 {
            h[idx] += wr * row[c];
            idx += 1;
        }
    }
}

fn unpack(h: &[f64; UPPER]) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let mut idx = 0;
    for r in 0..6 {
        for c in r..6 {
            m[(r, c)] = h[idx];
            m[(c, r)] = h[idx];
            idx += 1;
        }
    }
    m
}

fn accumulate_pixel(
    i: usize,
    field: &Se3Field,
    emb: &EmbeddingField,
    corr: &[Option<Correspondence>],
    k: &PinholeIntrinsics,
    nbhd: &Neighborhood,
) -> NormalSystem6 {
    let (height, width) = field.shape();
    let ti = &field[i];
    let rot = ti.rotation_matrix();
    let trans = *ti.translation();
    let vi = emb.vector(i);

    let mut h = [0.0; UPPER];
    let mut b = [0.0; 6];
    let mut weight = 0.0;
    let mut objective = 0.0;

    for (r, c) in nbhd.neighbors(i / width, i % width, height, width) {
        let j = r * width + c;
        let Some(cj) = &corr[j] else { continue };
        let p = rot * cj.point + trans;
        if !(p.z > MIN_DEPTH) {
            continue;
        }
        let a = affinity(vi, emb.vector(j));
        let (x, y) = (p.x, p.y);
        let d = 1.0 / p.z;
        let d2 = d * d;
        let res = cj.target - Vector3::new(k.fx * x * d + k.cx, k.fy * y * d + k.cy, d);

        // Rows of J_π · [I | −hat(X')], expanded with Z'·d' = 1.
        let rows = [
            [
                k.fx * d,
                0.0,
                -k.fx * x * d2,
                -k.fx * x * y * d2,
                k.fx * (1.0 + x * x * d2),
                -k.fx * y * d,
            ],
            [
                0.0,
                k.fy * d,
                -k.fy * y * d2,
                -k.fy * (1.0 + y * y * d2),
                k.fy * x * y * d2,
                k.fy * x * d,
            ],
            [0.0, 0.0, -d2, -y * d2, x * d2, 0.0],
        ];
        for comp in 0..3 {
            let wk = a * cj.confidence[comp];
            if wk == 0.0 {
                continue;
            }
            accumulate_row(&mut h, &mut b, &rows[comp], wk, res[comp]);
            objective += wk * res[comp] * res[comp];
            weight += wk;
        }
    }

    NormalSystem6 {
        h: unpack(&h),
        b: Vector6::from_column_slice(&b),
        weight,
        objective,
    }
}

/// Assembles every pixel's normal equations in place.
pub fn build_normal_equations(
    field: &Se3Field,
    emb: &EmbeddingField,
    rev: &RevisionBundle,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
    nbhd: &Neighborhood,
) -> Result<Grid<NormalSystem6>> {
    check_inputs(field, Some(emb), rev, inverse_depth)?;
    let corr = correspondences(field, rev, inverse_depth, k);
    let systems: Vec<NormalSystem6> = (0..field.len())
        .into_par_iter()
        .map(|i| accumulate_pixel(i, field, emb, &corr, k, nbhd))
        .collect();
    Grid::from_vec(field.height(), field.width(), systems)
}

/// Solves `(H + λ_rel·diag(H) + λ_abs·I) δ = b`.
pub fn solve_damped(sys: &NormalSystem6, damping: &Damping, weight_cutoff: f64) -> (Twist, PixelStatus) {
    if !(sys.weight >= weight_cutoff) {
        return (Twist::zero(), PixelStatus::Unconstrained);
    }
    let mut a = sys.h;
    for d in 0..6 {
        a[(d, d)] += damping.relative * sys.h[(d, d)] + damping.absolute;
    }
    match Cholesky::new(a) {
        Some(chol) => {
            let x = chol.solve(&sys.b);
            if x.iter().all(|v| v.is_finite()) {
                (Twist::from_vector(&x), PixelStatus::Updated)
            } else {
                (Twist::zero(), PixelStatus::FactorizationFailure)
            }
        }
        None => (Twist::zero(), PixelStatus::FactorizationFailure),
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub field: Se3Field,
    pub status: Grid<PixelStatus>,
    /// Total objective `Σ_i E_i(0)` before the update.
    pub objective: f64,
    /// Mean `‖δ_i‖` over updated pixels.
    pub mean_update_norm: f64,
}

impl StepOutput {
    pub fn flagged(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s != PixelStatus::Updated)
            .count()
    }
}

/// One Gauss-Newton update `T'_i = exp(δ_i)·T_i` for every pixel.
pub fn dense_se3_step(
    field: &Se3Field,
    emb: &EmbeddingField,
    rev: &RevisionBundle,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
    config: &DenseSe3Config,
) -> Result<StepOutput> {
    let systems = build_normal_equations(field, emb, rev, inverse_depth, k, &config.neighborhood)?;
    let solved: Vec<(Twist, PixelStatus)> = systems
        .as_slice()
        .par_iter()
        .map(|sys| solve_damped(sys, &config.damping, config.weight_cutoff))
        .collect();

    let mut out = field.clone();
    let mut status = Grid::filled(field.height(), field.width(), PixelStatus::Updated);
    let mut norm_sum = 0.0;
    let mut updated = 0usize;
    for (i, (delta, st)) in solved.iter().enumerate() {
        status[i] = *st;
        if *st == PixelStatus::Updated {
            out[i] = field[i].retract(delta);
            norm_sum += delta.norm();
            updated += 1;
        }
    }
    let objective = systems.iter().map(|s| s.objective).sum();
    Ok(StepOutput {
        field: out,
        status,
        objective,
        mean_update_norm: if updated > 0 { norm_sum / updated as f64 } else { 0.0 },
    })
}

/// Backward pass of `u* = H⁻¹ b` for symmetric positive definite `H`.
///
/// Returns `(∂L/∂b, ∂L/∂H)` given `∂L/∂u*`. With `d = H⁻ᵀ ∂L/∂u*`,
/// `∂L/∂b = d` and `∂L/∂H = −d u*ᵀ`; the minus sign comes from
/// `d(H⁻¹) = −H⁻¹ dH H⁻¹`.
pub fn linear_solve_adjoint(
    h: &DMatrix<f64>,
    u_star: &DVector<f64>,
    grad_u: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    if h.ncols() != n || u_star.len() != n || grad_u.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "adjoint of a {}x{} system with vectors of length {} and {}",
            h.nrows(),
            h.ncols(),
            u_star.len(),
            grad_u.len()
        )));
    }
    let chol = Cholesky::new(h.clone())
        .ok_or_else(|| Error::FactorizationFailure("adjoint system is not SPD".into()))?;
    let grad_b = chol.solve(grad_u);
    let grad_h = -(&grad_b * u_star.transpose());
    Ok((grad_b, grad_h))
}
