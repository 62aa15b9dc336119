//! Gaussian splat parameters, covariance construction, and the transform
//! between a face's local frame and world space.
//!
//! Scale is stored as log-scale and opacity as a logit; both are activated
//! on read so optimizer updates stay unconstrained. Quaternions are stored
//! raw in `(w, x, y, z)` order and normalized on activation.

use nalgebra::{Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::FaceFrame;
use crate::sh::{self, ShCoeffs, ShRotation, SH_BASIS};

/// Length of the flat raw parameter vector of one Gaussian.
pub const RAW_LEN: usize = 3 + 4 + 3 + 1 + 3 * SH_BASIS;

/// Offsets of each parameter group in the flat raw vector.
pub mod layout {
    use std::ops::Range;
    pub const POSITION: Range<usize> = 0..3;
    pub const ROTATION: Range<usize> = 3..7;
    pub const SCALE: Range<usize> = 7..10;
    pub const OPACITY: usize = 10;
    pub const SH_DC: Range<usize> = 11..14;
    pub const SH_REST: Range<usize> = 14..59;
    pub const SH: Range<usize> = 11..59;
}

/// One splat's parameters. In an [`EmbeddedGaussian`] the position,
/// rotation and log-scale are expressed in the anchor face's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub position: Vector3<f64>,
    /// Raw quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: ShCoeffs,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: [[0.0; 3]; SH_BASIS],
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn quat_of(q: &[f64; 4]) -> Quaternion<f64> {
    Quaternion::new(q[0], q[1], q[2], q[3])
}

#[inline]
fn quat_to_array(q: &Quaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Normalize a raw quaternion; the zero quaternion maps to the identity.
pub fn normalize_quat(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        q.map(|v| v / n)
    }
}

/// `Σ = R S Sᵀ Rᵀ` from a (not necessarily unit) quaternion and activated scales.
pub fn covariance(rotation: &[f64; 4], scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = quat_to_matrix(&normalize_quat(rotation));
    let rs = r * Matrix3::from_diagonal(scale);
    rs * rs.transpose()
}

impl GaussianParams {
    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn unit_rotation(&self) -> [f64; 4] {
        normalize_quat(&self.rotation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.unit_rotation())
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance(&self.rotation, &self.scale())
    }

    /// Color seen from `camera_center` (clamped below at 0).
    pub fn color_from(&self, camera_center: &Point3<f64>) -> [f64; 3] {
        let d = self.position - camera_center.coords;
        let n = d.norm();
        let dir = if n > 0.0 { d / n } else { Vector3::z() };
        sh::eval_sh(&self.sh, &dir)
    }

    pub fn to_raw(&self) -> [f64; RAW_LEN] {
        let mut raw = [0.0; RAW_LEN];
        raw[layout::POSITION].copy_from_slice(self.position.as_slice());
        raw[layout::ROTATION].copy_from_slice(&self.rotation);
        raw[layout::SCALE].copy_from_slice(self.log_scale.as_slice());
        raw[layout::OPACITY] = self.opacity_logit;
        for k in 0..SH_BASIS {
            raw[layout::SH.start + 3 * k..layout::SH.start + 3 * k + 3].copy_from_slice(&self.sh[k]);
        }
        raw
    }

    pub fn from_raw(raw: &[f64; RAW_LEN]) -> Self {
        let mut sh = [[0.0; 3]; SH_BASIS];
        for (k, coeffs) in sh.iter_mut().enumerate() {
            coeffs.copy_from_slice(&raw[layout::SH.start + 3 * k..layout::SH.start + 3 * k + 3]);
        }
        Self {
            position: Vector3::from_column_slice(&raw[layout::POSITION]),
            rotation: [raw[3], raw[4], raw[5], raw[6]],
            log_scale: Vector3::from_column_slice(&raw[layout::SCALE]),
            opacity_logit: raw[layout::OPACITY],
            sh,
        }
    }
}

/// Which parameter groups of a Gaussian receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamMask {
    pub position: bool,
    pub rotation: bool,
    pub scale: bool,
    pub opacity: bool,
    pub sh: bool,
}

impl ParamMask {
    pub const ALL: Self = Self {
        position: true,
        rotation: true,
        scale: true,
        opacity: true,
        sh: true,
    };
    pub const NONE: Self = Self {
        position: false,
        rotation: false,
        scale: false,
        opacity: false,
        sh: false,
    };

    pub fn any(&self) -> bool {
        self.position || self.rotation || self.scale || self.opacity || self.sh
    }

    /// Whether raw parameter `i` (see [`layout`]) is trainable.
    pub fn allows(&self, i: usize) -> bool {
        match i {
            _ if layout::POSITION.contains(&i) => self.position,
            _ if layout::ROTATION.contains(&i) => self.rotation,
            _ if layout::SCALE.contains(&i) => self.scale,
            layout::OPACITY => self.opacity,
            _ => self.sh,
        }
    }
}

/// A splat expressed in the local frame of an anchor face of the original mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedGaussian {
    /// Anchor (root) face index in the original mesh.
    pub anchor: u32,
    /// Position, rotation and log-scale in the anchor's local frame.
    pub local: GaussianParams,
    pub level: u32,
    pub frozen: bool,
    /// Vertex Gaussians keep their position fixed during level-0 training.
    pub position_locked: bool,
}

impl EmbeddedGaussian {
    /// Parameter groups that may be optimized, given the freeze flags.
    pub fn trainable(&self) -> ParamMask {
        if self.frozen {
            ParamMask::NONE
        } else {
            ParamMask {
                position: !self.position_locked,
                ..ParamMask::ALL
            }
        }
    }

    pub fn to_world(&self, frame: &FaceFrame, k: f64) -> GaussianParams {
        to_world(self, frame, k)
    }
}

/// Map an embedded Gaussian to world space:
/// `X = k·R·Xˡ + T`, `r = quat(R)·rˡ`, `s = k·sˡ`; opacity unchanged.
///
/// Color coefficients are constant in the local frame: the view-dependent
/// bands are carried through `R` so the surface's appearance turns with it,
/// and the DC band is copied as is.
pub fn to_world(g: &EmbeddedGaussian, frame: &FaceFrame, k: f64) -> GaussianParams {
    local_to_world(&g.local, frame, &frame.quaternion(), &ShRotation::from_matrix(&frame.rotation), k)
}

/// Same as [`to_world`] with a precomputed frame quaternion and color rotation.
pub fn local_to_world(
    local: &GaussianParams,
    frame: &FaceFrame,
    frame_quat: &UnitQuaternion<f64>,
    sh_rotation: &ShRotation,
    k: f64,
) -> GaussianParams {
    let position = frame.rotation * local.position * k + frame.origin.coords;
    let rotation = quat_to_array(&(frame_quat.quaternion() * quat_of(&local.rotation)));
    let log_scale = local.log_scale.add_scalar(k.ln());
    GaussianParams {
        position,
        rotation,
        log_scale,
        opacity_logit: local.opacity_logit,
        sh: sh_rotation.apply(&local.sh),
    }
}

/// Inverse of [`to_world`]: express a world-space Gaussian in `frame`.
pub fn embed(g: &GaussianParams, anchor: u32, frame: &FaceFrame, k: f64) -> Result<EmbeddedGaussian> {
    Ok(EmbeddedGaussian {
        anchor,
        local: world_to_local(g, frame, k)?,
        level: 0,
        frozen: false,
        position_locked: false,
    })
}

/// Local parameters of a world-space Gaussian; `k` must be positive.
pub fn world_to_local(g: &GaussianParams, frame: &FaceFrame, k: f64) -> Result<GaussianParams> {
    if !(k > 0.0) {
        return Err(Error::NonPositiveScale(k));
    }
    let position = frame.rotation.transpose() * (g.position - frame.origin.coords) / k;
    let q_inv = frame.quaternion().inverse();
    let rotation = quat_to_array(&(q_inv.quaternion() * quat_of(&g.rotation)));
    let log_scale = g.log_scale.add_scalar(-k.ln());
    Ok(GaussianParams {
        position,
        rotation,
        log_scale,
        opacity_logit: g.opacity_logit,
        sh: ShRotation::from_matrix(&frame.rotation).apply_transpose(&g.sh),
    })
}

/// Pull a world-space raw gradient back to the anchor's local raw parameters.
///
/// Position picks up `k·Rᵀ`; the quaternion gradient is multiplied by the
/// transpose of the left-multiplication matrix of the frame quaternion,
/// which equals left multiplication by its conjugate. Color gradients go
/// through the transposed color rotation. Log-scale and opacity pass
/// through unchanged.
pub fn world_grad_to_local(
    grad: &[f64; RAW_LEN],
    frame: &FaceFrame,
    frame_quat: &UnitQuaternion<f64>,
    sh_rotation: &ShRotation,
    k: f64,
) -> [f64; RAW_LEN] {
    let mut out = *grad;
    let gp = Vector3::from_column_slice(&grad[layout::POSITION]);
    let lp = frame.rotation.transpose() * gp * k;
    out[layout::POSITION].copy_from_slice(lp.as_slice());
    let gq = Quaternion::new(grad[3], grad[4], grad[5], grad[6]);
    let lq = frame_quat.quaternion().conjugate() * gq;
    out[layout::ROTATION].copy_from_slice(&quat_to_array(&lq));
    let mut gsh = [[0.0; 3]; SH_BASIS];
    for (k, c) in gsh.iter_mut().enumerate() {
        c.copy_from_slice(&grad[layout::SH.start + 3 * k..layout::SH.start + 3 * k + 3]);
    }
    for (k, c) in sh_rotation.apply_transpose(&gsh).iter().enumerate() {
        out[layout::SH.start + 3 * k..layout::SH.start + 3 * k + 3].copy_from_slice(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::triangle_frame;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    /// Covariance by explicit triple loops, independent of nalgebra products.
    fn covariance_oracle(q: [f64; 4], s: [f64; 3]) -> [[f64; 3]; 3] {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        let r = [
            [1. - 2. * (y * y + z * z), 2. * (x * y - w * z), 2. * (x * z + w * y)],
            [2. * (x * y + w * z), 1. - 2. * (x * x + z * z), 2. * (y * z - w * x)],
            [2. * (x * z - w * y), 2. * (y * z + w * x), 1. - 2. * (x * x + y * y)],
        ];
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += r[i][k] * s[k] * s[k] * r[j][k];
                }
            }
        }
        out
    }

    #[test]
    fn identity_covariance() {
        let c = covariance(&[1., 0., 0., 0.], &Vector3::new(1., 1., 1.));
        assert!((c - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn rotated_about_z_swaps_axes() {
        let q = [FRAC_PI_4.cos(), 0., 0., FRAC_PI_4.sin()];
        let c = covariance(&q, &Vector3::new(2., 1., 1.));
        let o = covariance_oracle(q, [2., 1., 1.]);
        let expect = Matrix3::from_diagonal(&Vector3::new(1., 4., 1.));
        assert!((c - expect).norm() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[(i, j)] - o[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn to_world_basic_cases() {
        let frame = triangle_frame(
            &Point3::new(0.3, 0.1, 0.0),
            &Point3::new(1.0, 0.2, 0.1),
            &Point3::new(0.1, 0.9, -0.2),
        )
        .unwrap();
        let g = EmbeddedGaussian {
            anchor: 0,
            local: GaussianParams::default(),
            level: 0,
            frozen: false,
            position_locked: false,
        };
        let w = to_world(&g, &frame, 1.0);
        assert!((w.position - frame.origin.coords).norm() < 1e-15);

        let id = FaceFrame {
            origin: Point3::new(1., 2., 3.),
            rotation: Matrix3::identity(),
        };
        let mut g2 = g;
        g2.local.position = Vector3::new(0.1, 0., 0.);
        g2.local.log_scale = Vector3::repeat(0.01f64.ln());
        let w = to_world(&g2, &id, 2.0);
        assert!((w.position - Vector3::new(1.2, 2., 3.)).norm() < 1e-15);
        assert!((w.scale() - Vector3::repeat(0.02)).norm() < 1e-15);
        assert_eq!(w.sh, g2.local.sh);
        assert_eq!(w.opacity_logit, g2.local.opacity_logit);
    }

    #[test]
    fn embed_rejects_non_positive_k() {
        let g = GaussianParams::default();
        assert!(embed(&g, 0, &FaceFrame::identity(), 0.0).is_err());
        assert!(embed(&g, 0, &FaceFrame::identity(), -1.0).is_err());
    }

    #[test]
    fn embed_at_origin_and_halving() {
        let frame = FaceFrame {
            origin: Point3::new(0.5, -1., 2.),
            rotation: Matrix3::identity(),
        };
        let mut g = GaussianParams::default();
        g.position = frame.origin.coords;
        g.log_scale = Vector3::new(0.2f64.ln(), 0.4f64.ln(), 0.6f64.ln());
        let e = embed(&g, 3, &frame, 2.0).unwrap();
        assert!(e.local.position.norm() < 1e-15);
        assert!((e.local.scale() - Vector3::new(0.1, 0.2, 0.3)).norm() < 1e-15);
    }

    #[test]
    fn raw_round_trip() {
        let mut g = GaussianParams::default();
        g.position = Vector3::new(1., 2., 3.);
        g.rotation = [0.1, 0.2, 0.3, 0.4];
        g.sh[5] = [7., 8., 9.];
        g.opacity_logit = -1.5;
        assert_eq!(GaussianParams::from_raw(&g.to_raw()), g);
        assert_eq!(g.to_raw()[layout::SH.start + 15], 7.0);
    }

    pub(crate) fn frame_strategy() -> impl Strategy<Value = FaceFrame> {
        (
            [-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0],
            [-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0],
        )
            .prop_map(|(axis, origin)| FaceFrame {
                origin: Point3::from(origin),
                rotation: *nalgebra::Rotation3::from_scaled_axis(Vector3::from(axis)).matrix(),
            })
    }

    pub(crate) fn gaussian_strategy() -> impl Strategy<Value = GaussianParams> {
        (
            [-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0],
            [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
            [-5.0f64..0.0, -5.0f64..0.0, -5.0f64..0.0],
            -4.0f64..4.0,
        )
            .prop_filter("nonzero quaternion", |(_, q, _, _)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-2
            })
            .prop_map(|(p, q, s, o)| GaussianParams {
                position: Vector3::from(p),
                rotation: q,
                log_scale: Vector3::from(s),
                opacity_logit: o,
                sh: [[0.1; 3]; SH_BASIS],
            })
    }

    proptest! {
        #[test]
        fn embed_and_to_world_are_inverse(
            frame in frame_strategy(), g in gaussian_strategy(), k in 0.1f64..10.0,
        ) {
            let e = embed(&g, 0, &frame, k).unwrap();
            let back = to_world(&e, &frame, k);
            let (a, b) = (g.to_raw(), back.to_raw());
            for i in 0..RAW_LEN {
                prop_assert!((a[i] - b[i]).abs() <= 1e-9);
            }
        }

        #[test]
        fn world_covariance_transforms_covariantly(
            frame in frame_strategy(), g in gaussian_strategy(), k in 0.1f64..10.0,
        ) {
            let e = EmbeddedGaussian { anchor: 0, local: g, level: 0, frozen: false, position_locked: false };
            let w = to_world(&e, &frame, k);
            let m = frame.rotation * g.rotation_matrix() * k;
            let s = Matrix3::from_diagonal(&g.scale());
            let expect = m * s * s.transpose() * m.transpose();
            prop_assert!((w.covariance() - expect).norm() <= 1e-8);
        }

        #[test]
        fn gradient_pullback_matches_finite_differences(
            frame in frame_strategy(), g in gaussian_strategy(), k in 0.1f64..10.0, seed in 0u64..1000,
        ) {
            // the map is affine outside the rotation slots, so differences are exact up to rounding
            let mut s = seed;
            let mut upstream = [0.0; RAW_LEN];
            for u in upstream.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *u = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            }
            let q = frame.quaternion();
            let rot = ShRotation::from_matrix(&frame.rotation);
            let score = |p: &GaussianParams| -> f64 {
                let w = local_to_world(p, &frame, &q, &rot, k).to_raw();
                w.iter().zip(&upstream).map(|(a, b)| a * b).sum()
            };
            let pulled = world_grad_to_local(&upstream, &frame, &q, &rot, k);
            let base = g.to_raw();
            for j in (0..RAW_LEN).filter(|j| !layout::ROTATION.contains(j)) {
                let h = 1e-4;
                let (mut hi, mut lo) = (base, base);
                hi[j] += h;
                lo[j] -= h;
                let fd = (score(&GaussianParams::from_raw(&hi)) - score(&GaussianParams::from_raw(&lo))) / (2.0 * h);
                prop_assert!((fd - pulled[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "slot {}: {} vs {}", j, fd, pulled[j]);
            }
        }

        #[test]
        fn covariance_is_symmetric_psd(g in gaussian_strategy()) {
            let c = g.covariance();
            prop_assert!((c - c.transpose()).norm() == 0.0 || (c - c.transpose()).norm() < 1e-15);
            let eig = c.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-9);
        }
    }
}
