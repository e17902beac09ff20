//! End-point-error and threshold metrics over a pixel mask.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldops::{induced_flow, scene_flow, FlowField3, IterationDiagnostics, Se3Field};
use crate::grid::Grid;
use crate::synth::SyntheticScene;

/// Per-pixel 2D end-point error; `None` where either flow is invalid.
pub fn epe2d_errors(pred: &FlowField3, gt: &FlowField3) -> Result<Grid<Option<f64>>> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predicted flow {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (h, w) = pred.shape();
    Ok(Grid::from_fn(h, w, |r, c| {
        let i = r * w + c;
        (pred.valid[i] && gt.valid[i]).then(|| (pred.values[i].xy() - gt.values[i].xy()).norm())
    }))
}

/// Per-pixel distance between predicted and ground-truth 3D scene flow.
pub fn epe3d_errors(pred: &Se3Field, scene: &SyntheticScene) -> Result<Grid<Option<f64>>> {
    if pred.shape() != scene.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predicted field {:?} vs scene {:?}",
            pred.shape(),
            scene.shape()
        )));
    }
    let p = scene_flow(pred, &scene.z1, &scene.intrinsics);
    let g = scene_flow(&scene.t_gt, &scene.z1, &scene.intrinsics);
    Ok(Grid::from_fn(p.height(), p.width(), |r, c| {
        let (a, b): (&Option<Vector3<f64>>, _) = (p.get(r, c), g.get(r, c));
        Some((a.as_ref()? - b.as_ref()?).norm())
    }))
}

fn masked_mean(errors: &Grid<Option<f64>>, mask: &Grid<bool>) -> Result<f64> {
    errors.check_shape(mask, "mask")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (e, &m) in errors.iter().zip(mask.iter()) {
        if let (true, Some(e)) = (m, e) {
            sum += e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Mean 2D end-point error over `mask`.
pub fn epe2d(pred: &FlowField3, gt: &FlowField3, mask: &Grid<bool>) -> Result<f64> {
    masked_mean(&epe2d_errors(pred, gt)?, mask)
}

/// Mean 3D end-point error over the scene's evaluation mask.
pub fn epe3d(pred: &Se3Field, scene: &SyntheticScene) -> Result<f64> {
    epe3d_masked(pred, scene, &scene.eval_mask())
}

pub fn epe3d_masked(pred: &Se3Field, scene: &SyntheticScene, mask: &Grid<bool>) -> Result<f64> {
    masked_mean(&epe3d_errors(pred, scene)?, mask)
}

/// Fraction of masked pixels whose error is strictly below each threshold.
pub fn threshold_metrics(
    errors: &Grid<Option<f64>>,
    mask: &Grid<bool>,
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    errors.check_shape(mask, "mask")?;
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidParameter(format!("threshold {t} must be positive")));
    }
    let selected: Vec<f64> = errors
        .iter()
        .zip(mask.iter())
        .filter_map(|(e, &m)| if m { *e } else { None })
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = selected.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| selected.iter().filter(|&&e| e < t).count() as f64 / n)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub objective: f64,
    pub mean_update_norm: f64,
    pub epe2d: Option<f64>,
    pub epe3d: Option<f64>,
}

impl From<&IterationDiagnostics> for CurvePoint {
    fn from(d: &IterationDiagnostics) -> Self {
        Self {
            iteration: d.iteration,
            objective: d.objective,
            mean_update_norm: d.mean_update_norm,
            epe2d: d.accuracy.map(|a| a.epe2d),
            epe3d: d.accuracy.map(|a| a.epe3d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe2d_mean: f64,
    pub epe3d_mean: f64,
    /// δ_2D < 1 px
    pub acc_1px: f64,
    /// δ_3D < 0.05
    pub acc3d_05: f64,
    /// δ_3D < 0.10
    pub acc3d_10: f64,
    pub pixel_count: usize,
    pub curves: Vec<CurvePoint>,
}

/// Evaluation mask: the scene's non-occluded valid pixels, optionally
/// restricted to ground-truth flow magnitude at most `max_flow` pixels.
pub fn evaluation_mask(scene: &SyntheticScene, max_flow: Option<f64>) -> Grid<bool> {
    let mut mask = scene.eval_mask();
    if let Some(limit) = max_flow {
        for i in 0..mask.len() {
            if scene.flow_gt.values[i].xy().norm() > limit {
                mask[i] = false;
            }
        }
    }
    mask
}

pub fn report(
    pred: &Se3Field,
    scene: &SyntheticScene,
    max_flow: Option<f64>,
    curves: Vec<CurvePoint>,
) -> Result<MetricReport> {
    let mask = evaluation_mask(scene, max_flow);
    let flow = induced_flow(pred, &scene.z1, &scene.intrinsics)?;
    let e2 = epe2d_errors(&flow, &scene.flow_gt)?;
    let e3 = epe3d_errors(pred, scene)?;
    let acc2 = threshold_metrics(&e2, &mask, &[1.0])?;
    let acc3 = threshold_metrics(&e3, &mask, &[0.05, 0.10])?;
    let pixel_count = e2
        .iter()
        .zip(e3.iter())
        .zip(mask.iter())
        .filter(|((a, b), &m)| m && a.is_some() && b.is_some())
        .count();
    Ok(MetricReport {
        epe2d_mean: masked_mean(&e2, &mask)?,
        epe3d_mean: masked_mean(&e3, &mask)?,
        acc_1px: acc2[0],
        acc3d_05: acc3[0],
        acc3d_10: acc3[1],
        pixel_count,
        curves,
    })
}
