//! Tile-based splatting of world-space Gaussians and its backward pass.
//!
//! Pixel centers sit at integer coordinates: pixel `(i, j)` is evaluated
//! at `(i, j)` in the image plane, so a principal point of
//! `((W-1)/2, (H-1)/2)` is the image center.

mod backward;
mod forward;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Point3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::image::Image;
use crate::sh;

pub use backward::{backward, render_with_gradients, GradientBuffer};
pub use forward::{rasterize, render, Frame};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn from_vertical_fov(fov_y: f64, width: usize, height: usize) -> Self {
        let fy = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self {
            fx: fy,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }
}

/// A pinhole camera with a world-to-camera pose and an optional target image.
///
/// Camera space is x right, y down, z forward.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub id: String,
    pub intrinsics: Intrinsics,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation: `x_cam = R x + T`.
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    pub target: Option<Arc<Image>>,
}

impl CameraView {
    pub fn new(
        id: impl Into<String>,
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            id: id.into(),
            intrinsics,
            rotation,
            translation,
            width,
            height,
            target: None,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `center` looking at `target`, with `up` as the world up hint.
    pub fn look_at(
        id: impl Into<String>,
        center: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - center).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // looking along the up hint; pick any perpendicular axis
            let alt = if forward.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * center.coords);
        Self::new(id, intrinsics, rotation, translation, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive: {k:?}")));
        }
        if !(0.0..self.width as f64).contains(&k.cx) || !(0.0..self.height as f64).contains(&k.cy) {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{}",
                k.cx, k.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn with_target(mut self, target: Image) -> Self {
        self.target = Some(Arc::new(target));
        self
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// Pixel coordinates of a world point, `None` when at or behind the camera.
    pub fn project_point(&self, p: &Point3<f64>) -> Option<Vector2<f64>> {
        let t = self.world_to_camera(p);
        if t.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some(Vector2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy))
    }

    /// The same camera after moving the world by `x -> q x + t`.
    pub fn transformed(&self, q: &Rotation3<f64>, t: &Vector3<f64>) -> Self {
        // x_cam = R x + T = R qᵀ (x' - t) + T
        let rotation = self.rotation * q.matrix().transpose();
        let translation = self.translation - rotation * t;
        Self {
            rotation,
            translation,
            ..self.clone()
        }
    }
}

/// Rasterizer conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub tile_size: usize,
    pub background: [f64; 3],
    /// Splats at or nearer than this camera-space depth (m) are culled.
    pub near: f64,
    /// Added to the screen-space covariance diagonal (px²).
    pub dilation: f64,
    pub alpha_max: f64,
    /// Blending stops once transmittance would fall below this value.
    pub min_transmittance: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            background: [1.0; 3],
            near: 0.01,
            dilation: 0.3,
            alpha_max: 0.99,
            min_transmittance: 1e-4,
        }
    }
}

/// Squared Mahalanobis radius of the screen-space support (3σ).
pub const SUPPORT_SQ: f64 = 9.0;
/// The footprint is tapered to zero between this radius² and [`SUPPORT_SQ`].
pub const TAPER_START_SQ: f64 = 6.25;

/// Smooth falloff applied to the Gaussian footprint near the 3σ boundary,
/// with its derivative with respect to the squared Mahalanobis distance.
#[inline]
pub(crate) fn taper(q: f64) -> (f64, f64) {
    if q <= TAPER_START_SQ {
        (1.0, 0.0)
    } else if q >= SUPPORT_SQ {
        (0.0, 0.0)
    } else {
        let span = SUPPORT_SQ - TAPER_START_SQ;
        let t = (SUPPORT_SQ - q) / span;
        let w = t * t * t * (t * (6.0 * t - 15.0) + 10.0);
        let dw_dt = 30.0 * t * t * (t - 1.0) * (t - 1.0);
        (w, -dw_dt / span)
    }
}

/// `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`; errors when `Σ` is singular.
pub fn gaussian_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "point {n}, mean {}, covariance {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let lu = cov.clone().lu();
    let d = x - mean;
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || lu.determinant().abs() <= f64::EPSILON * scale.powi(n as i32) {
        return Err(Error::SingularCovariance);
    }
    let solved = lu
        .solve(&d)
        .ok_or(Error::SingularCovariance)?;
    Ok((-0.5 * d.dot(&solved)).exp())
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian.
    pub id: u32,
    pub mean: Vector2<f64>,
    /// Screen-space covariance including dilation (px²).
    pub cov: Matrix2<f64>,
    /// Inverse covariance entries `(a, b, c)` of `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Camera-space depth (m).
    pub depth: f64,
    pub rgb: [f64; 3],
    pub opacity: f64,
    /// 3σ bounding radius in pixels.
    pub radius: f64,
}

/// Intermediate quantities of a projection, reused by the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Projection {
    pub splat: Splat2D,
    pub cam_pos: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov3d: Matrix3<f64>,
    /// Unclamped SH color.
    pub raw_rgb: [f64; 3],
    /// Unit view direction from the camera center to the Gaussian.
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
}

pub(crate) fn project_full(
    id: u32,
    g: &GaussianParams,
    cam: &CameraView,
    cam_center: &Point3<f64>,
    cfg: &RenderConfig,
) -> Option<Projection> {
    let t = cam.rotation * g.position + cam.translation;
    if !(t.z > cfg.near) {
        return None;
    }
    let k = &cam.intrinsics;
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let jacobian = Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * t.x * inv_z2,
        0.0,
        k.fy * inv_z,
        -k.fy * t.y * inv_z2,
    );
    let cov3d = g.covariance();
    let m = jacobian * cam.rotation;
    let mut cov = m * cov3d * m.transpose();
    cov[(0, 1)] = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(1, 0)] = cov[(0, 1)];
    cov[(0, 0)] += cfg.dilation;
    cov[(1, 1)] += cfg.dilation;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();
    let mean = Vector2::new(k.fx * t.x * inv_z + k.cx, k.fy * t.y * inv_z + k.cy);
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean.x + radius < 0.0 || mean.x - radius > w - 1.0 || mean.y + radius < 0.0 || mean.y - radius > h - 1.0 {
        return None;
    }
    let v = g.position - cam_center.coords;
    let view_dist = v.norm();
    let view_dir = if view_dist > 0.0 { v / view_dist } else { Vector3::z() };
    let raw_rgb = sh::eval_sh_raw(&g.sh, &view_dir);
    let rgb = raw_rgb.map(|c| c.clamp(0.0, 1.0));
    Some(Projection {
        splat: Splat2D {
            id,
            mean,
            cov,
            conic,
            depth: t.z,
            rgb,
            opacity: g.opacity(),
            radius,
        },
        cam_pos: t,
        jacobian,
        cov3d,
        raw_rgb,
        view_dir,
        view_dist,
    })
}

/// Project one Gaussian; `None` when it is culled (behind the near plane or
/// with a 3σ footprint entirely outside the viewport).
pub fn project_gaussian(g: &GaussianParams, cam: &CameraView, cfg: &RenderConfig) -> Option<Splat2D> {
    project_full(0, g, cam, &cam.center(), cfg).map(|p| p.splat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianParams;

    fn unit_camera(width: usize, height: usize) -> CameraView {
        CameraView {
            id: "c".into(),
            intrinsics: Intrinsics {
                fx: 1.0,
                fy: 1.0,
                cx: 0.0,
                cy: 0.0,
            },
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            width,
            height,
            target: None,
        }
    }

    #[test]
    fn density_examples() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let i2 = DMatrix::identity(2, 2);
        assert_eq!(gaussian_density(&x, &x, &i2).unwrap(), 1.0);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        assert!((gaussian_density(&y, &x, &i2).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let z = DVector::from_vec(vec![3.0, 2.0]);
        // (2,0)ᵀ diag(1/4, 1) (2,0) = 1
        assert!((gaussian_density(&z, &x, &cov).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(gaussian_density(&z, &x, &singular).is_err());
    }

    /// Σ' = J Σ Jᵀ by explicit loops.
    fn screen_cov_oracle(z: f64, s: f64) -> [[f64; 2]; 2] {
        let j = [[1.0 / z, 0.0, 0.0], [0.0, 1.0 / z, 0.0]];
        let sigma = [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]];
        let mut out = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for i in 0..3 {
                    for k in 0..3 {
                        out[a][b] += j[a][i] * sigma[i][k] * j[b][k];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn on_axis_projection() {
        let cam = unit_camera(4, 4);
        let cfg = RenderConfig::default();
        let mut g = GaussianParams::default();
        g.position = Vector3::new(0.0, 0.0, 1.0);
        let s = project_gaussian(&g, &cam, &cfg).unwrap();
        assert!(s.mean.norm() < 1e-15);
        let expect = Matrix2::identity() * (1.0 + cfg.dilation);
        assert!((s.cov - expect).norm() < 1e-15);

        g.position.z = 2.0;
        let s = project_gaussian(&g, &cam, &cfg).unwrap();
        let o = screen_cov_oracle(2.0, 1.0);
        assert!((s.cov[(0, 0)] - (o[0][0] + cfg.dilation)).abs() < 1e-15);
        assert!((s.cov[(0, 0)] - 0.55).abs() < 1e-15);
        assert_eq!(s.cov[(0, 1)], 0.0);
        assert!((s.cov[(1, 1)] - 0.55).abs() < 1e-15);
        assert_eq!(s.depth, 2.0);

        g.position.z = -1.0;
        assert!(project_gaussian(&g, &cam, &cfg).is_none());
        g.position.z = 0.005;
        assert!(project_gaussian(&g, &cam, &cfg).is_none());
    }

    #[test]
    fn off_screen_footprint_is_culled() {
        let cam = unit_camera(4, 4);
        let cfg = RenderConfig::default();
        let mut g = GaussianParams::default();
        g.log_scale = Vector3::repeat(-5.0);
        g.position = Vector3::new(100.0, 0.0, 1.0);
        assert!(project_gaussian(&g, &cam, &cfg).is_none());
        g.position = Vector3::new(1.0, 1.0, 1.0);
        assert!(project_gaussian(&g, &cam, &cfg).is_some());
    }

    #[test]
    fn taper_is_smooth() {
        assert_eq!(taper(0.0), (1.0, 0.0));
        assert_eq!(taper(TAPER_START_SQ).0, 1.0);
        assert_eq!(taper(SUPPORT_SQ).0, 0.0);
        let h = 1e-6;
        for q in [6.5, 7.0, 8.0, 8.9] {
            let fd = (taper(q + h).0 - taper(q - h).0) / (2.0 * h);
            assert!((fd - taper(q).1).abs() < 1e-6);
        }
    }

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let k = Intrinsics::from_vertical_fov(60f64.to_radians(), 65, 33);
        for center in [Point3::new(2.0, 0.3, -1.0), Point3::new(0.0, 2.0, 0.0), Point3::new(0.0, 0.0, 2.0)] {
            let cam = CameraView::look_at("c", center, Point3::origin(), Vector3::y(), k, 65, 33).unwrap();
            let p = cam.project_point(&Point3::origin()).unwrap();
            assert!((p - Vector2::new(k.cx, k.cy)).norm() < 1e-9);
            assert!((cam.center() - center).norm() < 1e-12);
            let r = cam.rotation;
            assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        let k = Intrinsics { fx: 0.0, fy: 1.0, cx: 1.0, cy: 1.0 };
        assert!(CameraView::new("c", k, Matrix3::identity(), Vector3::zeros(), 4, 4).is_err());
        let k = Intrinsics { fx: 1.0, fy: 1.0, cx: 4.0, cy: 1.0 };
        assert!(CameraView::new("c", k, Matrix3::identity(), Vector3::zeros(), 4, 4).is_err());
    }
}
