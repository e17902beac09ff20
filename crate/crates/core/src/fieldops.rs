//! Whole-field operations: twist conversion, induced flow, convex upsampling
//! in the Lie algebra, the iterative solver driver and the sequence loss.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bilap::{smooth, EdgeWeights};
use crate::camera::{backproject, map_pixel, InverseDepthMap, PinholeIntrinsics};
use crate::dense_se3::{dense_se3_step, DenseSe3Config, EmbeddingField, RevisionBundle};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::se3::{Se3Transform, Twist};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Resolution {
    #[default]
    Full,
    /// Downsampled by the given integer factor.
    Reduced(usize),
}

/// Per-pixel rigid-body transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct Se3Field {
    grid: Grid<Se3Transform>,
    resolution: Resolution,
}

impl Se3Field {
    pub fn identity(height: usize, width: usize) -> Self {
        Self::from_grid(Grid::filled(height, width, Se3Transform::identity()))
    }

    pub fn from_grid(grid: Grid<Se3Transform>) -> Self {
        Self {
            grid,
            resolution: Resolution::Full,
        }
    }

    pub fn with_resolution(mut self, resolution: Resolution) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn grid(&self) -> &Grid<Se3Transform> {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Se3Transform> {
        self.grid.iter()
    }

    pub fn get(&self, row: usize, col: usize) -> &Se3Transform {
        self.grid.get(row, col)
    }
}

impl std::ops::Index<usize> for Se3Field {
    type Output = Se3Transform;

    fn index(&self, index: usize) -> &Se3Transform {
        &self.grid[index]
    }
}

impl std::ops::IndexMut<usize> for Se3Field {
    fn index_mut(&mut self, index: usize) -> &mut Se3Transform {
        &mut self.grid[index]
    }
}

/// Per-pixel `(Δx, Δy, Δd)` with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField3 {
    pub values: Grid<Vector3<f64>>,
    pub valid: Grid<bool>,
}

impl FlowField3 {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            values: Grid::filled(height, width, Vector3::zeros()),
            valid: Grid::filled(height, width, true),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

pub fn twist_field(field: &Se3Field) -> Grid<Twist> {
    field.grid().map(Se3Transform::log)
}

pub fn field_from_twists(twists: &Grid<Twist>) -> Se3Field {
    Se3Field::from_grid(twists.map(Se3Transform::exp))
}

/// `π(T·π⁻¹(x)) − x` at every pixel; pixels without valid depth, or mapped
/// behind the camera, are masked out.
pub fn induced_flow(
    field: &Se3Field,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
) -> Result<FlowField3> {
    if field.shape() != inverse_depth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "field {:?} vs inverse depth {:?}",
            field.shape(),
            inverse_depth.shape()
        )));
    }
    let (h, w) = field.shape();
    let mut flow = FlowField3::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mapped = inverse_depth
                .pixel(r, c)
                .and_then(|p| map_pixel(&p, &field[i], k).ok().map(|m| m - p));
            match mapped {
                Some(f) => flow.values[i] = f,
                None => flow.valid[i] = false,
            }
        }
    }
    Ok(flow)
}

/// 3D scene flow `T·X − X` for every pixel with valid depth.
pub fn scene_flow(
    field: &Se3Field,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
) -> Grid<Option<Vector3<f64>>> {
    let w = field.width();
    Grid::from_fn(field.height(), w, |r, c| {
        let p = inverse_depth.pixel(r, c)?;
        let x = backproject(&p, k).ok()?;
        Some(field[r * w + c].act(&x) - x)
    })
}

/// Convex weights over the 3×3 coarse neighbourhood of every fine pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleWeights {
    /// Fine-resolution grid; entry `k` of each array weights coarse offset
    /// `(k / 3 − 1, k % 3 − 1)`.
    pub weights: Grid<[f64; 9]>,
}

impl UpsampleWeights {
    /// Weights reproducing bilinear interpolation of coarse pixel centres.
    pub fn bilinear(coarse_height: usize, coarse_width: usize, factor: usize) -> Self {
        let f = factor as f64;
        let axis = |fine: usize| -> [f64; 3] {
            let coarse = fine / factor;
            let offset = (fine as f64 + 0.5) / f - 0.5 - coarse as f64;
            if offset >= 0.0 {
                [0.0, 1.0 - offset, offset]
            } else {
                [-offset, 1.0 + offset, 0.0]
            }
        };
        let weights = Grid::from_fn(coarse_height * factor, coarse_width * factor, |r, c| {
            let wy = axis(r);
            let wx = axis(c);
            std::array::from_fn(|k| wy[k / 3] * wx[k % 3])
        });
        Self { weights }
    }

    /// Every fine pixel copies its own coarse pixel.
    pub fn nearest(coarse_height: usize, coarse_width: usize, factor: usize) -> Self {
        let mut one_hot = [0.0; 9];
        one_hot[4] = 1.0;
        Self {
            weights: Grid::filled(coarse_height * factor, coarse_width * factor, one_hot),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (index, w) in self.weights.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            let min = w.iter().copied().fold(f64::INFINITY, f64::min);
            if !(min >= 0.0) || !((sum - 1.0).abs() <= 1e-6) {
                return Err(Error::NonConvexWeights { index, sum, min });
            }
        }
        Ok(())
    }
}

/// Upsamples by `factor` as `exp(Σ_k w_k log T_k)` over each 3×3 coarse
/// neighbourhood. Neighbours beyond the coarse border are clamped.
pub fn upsample_se3(coarse: &Se3Field, weights: &UpsampleWeights, factor: usize) -> Result<Se3Field> {
    let (ch, cw) = coarse.shape();
    if factor == 0 {
        return Err(Error::InvalidParameter("upsampling factor must be positive".into()));
    }
    if weights.weights.shape() != (ch * factor, cw * factor) {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} for a {ch}x{cw} field upsampled by {factor}",
            weights.weights.shape()
        )));
    }
    weights.validate()?;
    let twists = twist_field(coarse);
    let grid = Grid::from_fn(ch * factor, cw * factor, |r, c| {
        let (cr, cc) = (r / factor, c / factor);
        let w = weights.weights.get(r, c);
        let mut acc = Twist::zero();
        let mut sum = 0.0;
        // index of the single coarse transform used so far, if only one is
        let mut source: Option<Option<usize>> = None;
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            let rr = (cr as isize + k as isize / 3 - 1).clamp(0, ch as isize - 1) as usize;
            let ccol = (cc as isize + k as isize % 3 - 1).clamp(0, cw as isize - 1) as usize;
            let idx = rr * cw + ccol;
            source = match source {
                None => Some(Some(idx)),
                Some(Some(prev)) if coarse[prev] == coarse[idx] => Some(Some(prev)),
                _ => Some(None),
            };
            acc = acc + twists[idx].scale(wk);
            sum += wk;
        }
        // a convex combination of one transform is that transform, exactly
        match source {
            Some(Some(idx)) if sum == 1.0 => coarse[idx],
            _ => Se3Transform::exp(&acc),
        }
    });
    Ok(Se3Field::from_grid(grid))
}

/// Picks the top-left fine pixel of each `factor × factor` block.
pub fn downsample_nearest(fine: &Se3Field, factor: usize) -> Se3Field {
    let (h, w) = fine.shape();
    let grid = Grid::from_fn(h / factor, w / factor, |r, c| *fine.get(r * factor, c * factor));
    Se3Field::from_grid(grid).with_resolution(Resolution::Reduced(factor))
}

/// Source of per-iteration solver inputs; stands in for a learned update
/// operator.
pub trait MotionOracle {
    /// Revision targets and confidences relative to `field`.
    fn revisions(&mut self, iteration: usize, field: &Se3Field) -> Result<RevisionBundle>;

    fn embeddings(&mut self, iteration: usize, field: &Se3Field) -> Result<EmbeddingField>;

    /// Boundary-aware weights for embedding smoothing.
    fn edge_weights(&mut self, iteration: usize) -> Result<EdgeWeights>;

    /// Accuracy of `field` against ground truth, when it is known.
    fn evaluate(&self, _field: &Se3Field) -> Option<IterationAccuracy> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationAccuracy {
    pub epe2d: f64,
    pub epe3d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub objective: f64,
    pub mean_update_norm: f64,
    pub flagged_pixels: usize,
    pub accuracy: Option<IterationAccuracy>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub iterations: usize,
    pub dense: DenseSe3Config,
    pub smoothing: bool,
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub field: Se3Field,
    /// Field after every iteration, oldest first.
    pub history: Vec<Se3Field>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Accuracy of the identity initialization, if known.
    pub initial_accuracy: Option<IterationAccuracy>,
}

/// Iterates oracle → optional embedding smoothing → Dense-SE3 step, starting
/// from the identity field.
pub fn solve_scene(
    first: &InverseDepthMap,
    second: &InverseDepthMap,
    k: &PinholeIntrinsics,
    oracle: &mut dyn MotionOracle,
    options: &SolveOptions,
) -> Result<SolveOutput> {
    if first.shape() != second.shape() {
        return Err(Error::ShapeMismatch(format!(
            "frame inverse depths {:?} and {:?}",
            first.shape(),
            second.shape()
        )));
    }
    let (h, w) = first.shape();
    let mut field = Se3Field::identity(h, w);
    let initial_accuracy = oracle.evaluate(&field);
    let mut history = Vec::with_capacity(options.iterations);
    let mut diagnostics = Vec::with_capacity(options.iterations);

    for iteration in 0..options.iterations {
        let rev = oracle.revisions(iteration, &field)?;
        rev.validate()?;
        let mut emb = oracle.embeddings(iteration, &field)?;
        if options.smoothing {
            let weights = oracle.edge_weights(iteration)?;
            emb = smooth(&emb, &weights)?;
        }
        let step = dense_se3_step(&field, &emb, &rev, first, k, &options.dense)?;
        let flagged_pixels = step.flagged();
        field = step.field;
        diagnostics.push(IterationDiagnostics {
            iteration: iteration + 1,
            objective: step.objective,
            mean_update_norm: step.mean_update_norm,
            flagged_pixels,
            accuracy: oracle.evaluate(&field),
        });
        history.push(field.clone());
    }

    Ok(SolveOutput {
        field,
        history,
        diagnostics,
        initial_accuracy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub gamma: f64,
    /// Weight of the auxiliary term on raw revisions; 0 disables it.
    pub revision_loss_weight: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            revision_loss_weight: 0.0,
        }
    }
}

impl LossParams {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Mean L1 distance between two flow fields over pixels valid in both.
pub fn flow_l1(pred: &FlowField3, gt: &FlowField3) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predicted flow {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..pred.values.len() {
        if pred.valid[i] && gt.valid[i] {
            sum += (pred.values[i] - gt.values[i]).abs().sum();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// `Σ_k γ^{N−k} ‖f_k − f_gt‖₁` over the predicted sequence.
pub fn sequence_loss(
    preds: &[Se3Field],
    gt_flow: &FlowField3,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
    params: &LossParams,
) -> Result<f64> {
    params.validate()?;
    if preds.is_empty() {
        return Err(Error::EmptyPredictionList);
    }
    let n = preds.len();
    let mut loss = 0.0;
    for (idx, pred) in preds.iter().enumerate() {
        let flow = induced_flow(pred, inverse_depth, k)?;
        loss += params.gamma.powi((n - 1 - idx) as i32) * flow_l1(&flow, gt_flow)?;
    }
    Ok(loss)
}

/// [`sequence_loss`] plus `revision_loss_weight · Σ_k γ^{N−k} ‖f_k + r_k − f_gt‖₁`,
/// where `r_k` are the revisions that produced prediction `k` and only the
/// flow/inverse-depth targets they imply are supervised.
pub fn sequence_loss_with_revisions(
    preds: &[Se3Field],
    revisions: &[RevisionBundle],
    gt_flow: &FlowField3,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
    params: &LossParams,
) -> Result<f64> {
    let base = sequence_loss(preds, gt_flow, inverse_depth, k, params)?;
    if params.revision_loss_weight == 0.0 {
        return Ok(base);
    }
    if revisions.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} revision maps for {} predictions",
            revisions.len(),
            preds.len()
        )));
    }
    let n = preds.len();
    let mut extra = 0.0;
    for (idx, (pred, rev)) in preds.iter().zip(revisions).enumerate() {
        let mut flow = induced_flow(pred, inverse_depth, k)?;
        if rev.shape() != flow.shape() {
            return Err(Error::ShapeMismatch("revision map vs flow".into()));
        }
        for i in 0..flow.values.len() {
            flow.values[i] += rev.revision[i];
        }
        extra += params.gamma.powi((n - 1 - idx) as i32) * flow_l1(&flow, gt_flow)?;
    }
    Ok(base + params.revision_loss_weight * extra)
}

/// Sequence loss evaluated after upsampling each coarse prediction to full
/// resolution.
pub fn sequence_loss_upsampled(
    coarse_preds: &[Se3Field],
    weights: &UpsampleWeights,
    factor: usize,
    gt_flow: &FlowField3,
    inverse_depth: &InverseDepthMap,
    k: &PinholeIntrinsics,
    params: &LossParams,
) -> Result<f64> {
    let fine = coarse_preds
        .iter()
        .map(|p| upsample_se3(p, weights, factor))
        .collect::<Result<Vec<_>>>()?;
    sequence_loss(&fine, gt_flow, inverse_depth, k, params)
}
