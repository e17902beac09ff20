//! Augmented pinhole camera: projection to `(x, y, inverse depth)`, its
//! inverse, the analytic Jacobians used by the Gauss-Newton layer, and the
//! frame-to-frame pixel mapping.

use nalgebra::{Matrix3, Matrix3x6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::se3::{hat, Se3Transform};

/// Points with `Z` at or below this value are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite principal point".into()));
        }
        Ok(())
    }

    /// Intrinsics for an image downsampled by an integer `factor`, with
    /// pixel centres kept aligned.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx + 0.5) / f - 0.5,
            cy: (self.cy + 0.5) / f - 0.5,
        }
    }
}

/// Pixel coordinates plus inverse depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPixel {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

impl AugmentedPixel {
    pub fn new(x: f64, y: f64, d: f64) -> Self {
        Self { x, y, d }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.d)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl std::ops::Sub for AugmentedPixel {
    type Output = Vector3<f64>;

    fn sub(self, rhs: AugmentedPixel) -> Vector3<f64> {
        Vector3::new(self.x - rhs.x, self.y - rhs.y, self.d - rhs.d)
    }
}

/// Per-pixel inverse depth. Entries that are not strictly positive and
/// finite are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseDepthMap {
    values: Grid<f64>,
}

impl InverseDepthMap {
    pub fn new(values: Grid<f64>) -> Self {
        Self { values }
    }

    pub fn from_depth(depth: &Grid<f64>) -> Self {
        Self {
            values: depth.map(|&z| if z > 0.0 && z.is_finite() { 1.0 / z } else { 0.0 }),
        }
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    #[inline]
    pub fn is_valid_value(d: f64) -> bool {
        d > 0.0 && d.is_finite()
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        Self::is_valid_value(self.values[index])
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        *self.values.get(row, col)
    }

    /// Augmented pixel at a grid location, if its inverse depth is valid.
    pub fn pixel(&self, row: usize, col: usize) -> Option<AugmentedPixel> {
        let d = self.at(row, col);
        Self::is_valid_value(d).then(|| AugmentedPixel::new(col as f64, row as f64, d))
    }

    /// Bilinear sample at continuous pixel coordinates. Locations needing
    /// border clamping, or whose footprint touches an invalid entry, yield
    /// `None`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (h, w) = self.shape();
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (y.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let v00 = self.at(y0, x0);
        let v01 = self.at(y0, x1);
        let v10 = self.at(y1, x0);
        let v11 = self.at(y1, x1);
        if ![v00, v01, v10, v11].iter().all(|&v| Self::is_valid_value(v)) {
            return None;
        }
        Some(
            (1.0 - ay) * ((1.0 - ax) * v00 + ax * v01) + ay * ((1.0 - ax) * v10 + ax * v11),
        )
    }
}

pub fn project(point: &Vector3<f64>, k: &PinholeIntrinsics) -> Result<AugmentedPixel> {
    if !(point.z > MIN_DEPTH) {
        return Err(Error::NonPositiveDepth(point.z));
    }
    let d = 1.0 / point.z;
    Ok(AugmentedPixel {
        x: k.fx * point.x * d + k.cx,
        y: k.fy * point.y * d + k.cy,
        d,
    })
}

pub fn backproject(p: &AugmentedPixel, k: &PinholeIntrinsics) -> Result<Vector3<f64>> {
    if !InverseDepthMap::is_valid_value(p.d) {
        return Err(Error::NonPositiveInverseDepth(p.d));
    }
    let z = 1.0 / p.d;
    Ok(Vector3::new(
        (p.x - k.cx) / k.fx * z,
        (p.y - k.cy) / k.fy * z,
        z,
    ))
}

/// `∂π/∂X'` evaluated at a transformed point.
pub fn projection_jacobian(point: &Vector3<f64>, k: &PinholeIntrinsics) -> Result<Matrix3<f64>> {
    if !(point.z > MIN_DEPTH) {
        return Err(Error::NonPositiveDepth(point.z));
    }
    let d = 1.0 / point.z;
    let d2 = d * d;
    Ok(Matrix3::new(
        k.fx * d,
        0.0,
        -k.fx * point.x * d2,
        0.0,
        k.fy * d,
        -k.fy * point.y * d2,
        0.0,
        0.0,
        -d2,
    ))
}

/// `∂(exp(δ)·X')/∂δ` at `δ = 0` for left-multiplicative twists `(tau, phi)`.
///
/// The rotational block is `-hat(X')` because `phi × X' = -X' × phi`.
pub fn transform_jacobian(point: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(point)));
    j
}

/// Full 3×6 Jacobian of `δ ↦ π(exp(δ)·X')`.
pub fn mapping_jacobian(point: &Vector3<f64>, k: &PinholeIntrinsics) -> Result<Matrix3x6<f64>> {
    Ok(projection_jacobian(point, k)? * transform_jacobian(point))
}

/// Correspondence of `p` in the second frame under `t`.
pub fn map_pixel(
    p: &AugmentedPixel,
    t: &Se3Transform,
    k: &PinholeIntrinsics,
) -> Result<AugmentedPixel> {
    let x = backproject(p, k)?;
    project(&t.act(&x), k)
}

/// `d' - d̄'`: predicted inverse depth of the mapped point minus the
/// second-frame inverse depth sampled at its location.
pub fn depth_residual(
    p: &AugmentedPixel,
    t: &Se3Transform,
    k: &PinholeIntrinsics,
    second: &InverseDepthMap,
) -> Result<f64> {
    let mapped = map_pixel(p, t, k)?;
    let sampled = second
        .sample_bilinear(mapped.x, mapped.y)
        .ok_or(Error::OutOfBounds {
            x: mapped.x,
            y: mapped.y,
        })?;
    Ok(mapped.d - sampled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Twist;

    fn unit_k() -> PinholeIntrinsics {
        PinholeIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap()
    }

    fn desk_k() -> PinholeIntrinsics {
        PinholeIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    #[test]
    fn project_optical_axis() {
        let p = project(&Vector3::new(0.0, 0.0, 1.0), &unit_k()).unwrap();
        assert_eq!(p, AugmentedPixel::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn project_by_hand() {
        // (100·2/4 + 50, 100·(-1)/4 + 50, 1/4)
        let p = project(&Vector3::new(2.0, -1.0, 4.0), &desk_k()).unwrap();
        assert_eq!(p, AugmentedPixel::new(100.0, 25.0, 0.25));
        let x = backproject(&p, &desk_k()).unwrap();
        assert_eq!(x, Vector3::new(2.0, -1.0, 4.0));
    }

    #[test]
    fn backproject_optical_axis() {
        let x = backproject(&AugmentedPixel::new(0.0, 0.0, 1.0), &unit_k()).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn depth_errors() {
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, 0.0), &unit_k()),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -2.0), &unit_k()),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(matches!(
            backproject(&AugmentedPixel::new(1.0, 1.0, 0.0), &unit_k()),
            Err(Error::NonPositiveInverseDepth(_))
        ));
        assert!(projection_jacobian(&Vector3::new(1.0, 1.0, 1e-7), &unit_k()).is_err());
    }

    #[test]
    fn intrinsics_reject_bad_focal() {
        assert!(PinholeIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(PinholeIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn projection_jacobian_on_axis() {
        let j = projection_jacobian(&Vector3::new(0.0, 0.0, 1.0), &unit_k()).unwrap();
        assert_eq!(
            j,
            Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0)
        );
    }

    #[test]
    fn projection_jacobian_linear_in_fx() {
        let x = Vector3::new(0.3, -0.2, 2.0);
        let k = desk_k();
        let k2 = PinholeIntrinsics { fx: 2.0 * k.fx, ..k };
        let a = projection_jacobian(&x, &k).unwrap();
        let b = projection_jacobian(&x, &k2).unwrap();
        assert_eq!(b.row(0), a.row(0) * 2.0);
        assert_eq!(b.rows(1, 2), a.rows(1, 2));
    }

    #[test]
    fn transform_jacobian_blocks() {
        let j = transform_jacobian(&Vector3::zeros());
        let mut expected = Matrix3x6::zeros();
        expected.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        assert_eq!(j, expected);

        let j = transform_jacobian(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(
            j.fixed_view::<3, 3>(0, 3).into_owned(),
            hat(&Vector3::new(0.0, 0.0, -1.0))
        );
    }

    #[test]
    fn map_pixel_identity_and_z_translation() {
        let p = AugmentedPixel::new(12.5, -3.0, 0.4);
        let same = map_pixel(&p, &Se3Transform::identity(), &desk_k()).unwrap();
        assert!((same - p).norm() < 1e-13);

        let t = Se3Transform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let moved = map_pixel(&AugmentedPixel::new(0.0, 0.0, 1.0), &t, &unit_k()).unwrap();
        assert_eq!(moved, AugmentedPixel::new(0.0, 0.0, 0.5));
    }

    #[test]
    fn map_pixel_behind_camera_fails() {
        let t = Se3Transform::from_translation(Vector3::new(0.0, 0.0, -3.0));
        assert!(map_pixel(&AugmentedPixel::new(0.0, 0.0, 1.0), &t, &unit_k()).is_err());
    }

    #[test]
    fn depth_residual_static_plane_is_zero() {
        let z = InverseDepthMap::new(Grid::filled(6, 8, 0.25));
        let k = PinholeIntrinsics::new(5.0, 5.0, 3.5, 2.5).unwrap();
        for r in 0..6 {
            for c in 0..8 {
                let p = z.pixel(r, c).unwrap();
                let res = depth_residual(&p, &Se3Transform::identity(), &k, &z).unwrap();
                assert!(res.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depth_residual_out_of_frame() {
        let z = InverseDepthMap::new(Grid::filled(4, 4, 1.0));
        let t = Se3Transform::from_translation(Vector3::new(10.0, 0.0, 0.0));
        let p = z.pixel(1, 1).unwrap();
        assert!(matches!(
            depth_residual(&p, &t, &unit_k(), &z),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn bilinear_is_exact_on_affine_maps() {
        let g = Grid::from_fn(5, 7, |r, c| 0.5 + 0.01 * r as f64 + 0.02 * c as f64);
        let z = InverseDepthMap::new(g);
        let v = z.sample_bilinear(3.3, 2.7).unwrap();
        assert!((v - (0.5 + 0.027 + 0.066)).abs() < 1e-14);
        assert!(z.sample_bilinear(6.0, 4.0).is_some());
        assert!(z.sample_bilinear(6.01, 1.0).is_none());
        assert!(z.sample_bilinear(-0.01, 1.0).is_none());
    }

    #[test]
    fn chain_rule_against_central_differences() {
        let k = desk_k();
        let t = Se3Transform::exp(&Twist::from_slice(&[0.1, -0.2, 0.3, 0.05, -0.1, 0.02]));
        let x = Vector3::new(0.4, -0.3, 3.0);
        let xp = t.act(&x);
        let j = mapping_jacobian(&xp, &k).unwrap();
        let h = 1e-6;
        for c in 0..6 {
            let mut e = [0.0; 6];
            e[c] = h;
            let plus = project(&Se3Transform::exp(&Twist::from_slice(&e)).compose(&t).act(&x), &k)
                .unwrap();
            e[c] = -h;
            let minus =
                project(&Se3Transform::exp(&Twist::from_slice(&e)).compose(&t).act(&x), &k)
                    .unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let col = j.column(c);
            assert!((fd - col).norm() <= 1e-6 * col.norm().max(1.0), "column {c}");
        }
    }
}
