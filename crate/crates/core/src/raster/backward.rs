use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::{footprint, rasterize, Frame};
use super::{CameraView, Projection, RenderConfig};
use crate::error::{Error, Result};
use crate::gaussian::{layout, GaussianParams, ParamMask, RAW_LEN};
use crate::image::Image;
use crate::sh::{self, SH_BASIS};

/// Per-Gaussian gradients with respect to the raw parameter vector
/// (see [`crate::gaussian::layout`]).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub grads: Vec<[f64; RAW_LEN]>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            grads: vec![[0.0; RAW_LEN]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64; RAW_LEN] {
        &self.grads[i]
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|&v| v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Gradients with respect to the screen-space quantities of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

struct Hit {
    slot: usize,
    alpha: f64,
    clamped: bool,
    e: f64,
    g: f64,
    w: f64,
    dw: f64,
    dx: f64,
    dy: f64,
    trans: f64,
}

fn tile_backward(frame: &Frame, tile: usize, dl: &Image) -> Vec<ScreenGrad> {
    let (x0, y0, x1, y1) = frame.tile_bounds(tile);
    let list = &frame.tiles[tile];
    let cfg = &frame.cfg;
    let mut out = vec![ScreenGrad::default(); list.len()];
    let mut hits: Vec<Hit> = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let gpix = dl.pixel(x, y);
            if gpix == [0.0; 3] {
                continue;
            }
            hits.clear();
            let mut trans = 1.0;
            for (slot, &p) in list.iter().enumerate() {
                let s = &frame.projections[p as usize].splat;
                let Some((e, g, w, dw, dx, dy)) = footprint(s, x as f64, y as f64) else {
                    continue;
                };
                let raw_alpha = s.opacity * e;
                let alpha = raw_alpha.min(cfg.alpha_max);
                if alpha <= 0.0 {
                    continue;
                }
                let next = trans * (1.0 - alpha);
                if next < cfg.min_transmittance {
                    break;
                }
                hits.push(Hit {
                    slot,
                    alpha,
                    clamped: raw_alpha > cfg.alpha_max,
                    e,
                    g,
                    w,
                    dw,
                    dx,
                    dy,
                    trans,
                });
                trans = next;
            }
            // color of everything behind the current splat, per unit transmittance
            let mut behind = cfg.background;
            for h in hits.iter().rev() {
                let s = &frame.projections[list[h.slot] as usize].splat;
                let sg = &mut out[h.slot];
                let mut dl_dalpha = 0.0;
                for c in 0..3 {
                    sg.color[c] += h.alpha * h.trans * gpix[c];
                    dl_dalpha += (s.rgb[c] - behind[c]) * gpix[c];
                    behind[c] = s.rgb[c] * h.alpha + (1.0 - h.alpha) * behind[c];
                }
                dl_dalpha *= h.trans;
                if h.clamped {
                    continue;
                }
                sg.opacity += dl_dalpha * h.e;
                let dl_de = dl_dalpha * s.opacity;
                let dl_dq = dl_de * h.g * (h.dw - 0.5 * h.w);
                let [a, b, c] = s.conic;
                sg.mean[0] -= dl_dq * 2.0 * (a * h.dx + b * h.dy);
                sg.mean[1] -= dl_dq * 2.0 * (b * h.dx + c * h.dy);
                sg.conic[0] += dl_dq * h.dx * h.dx;
                sg.conic[1] += dl_dq * 2.0 * h.dx * h.dy;
                sg.conic[2] += dl_dq * h.dy * h.dy;
            }
        }
    }
    out
}

/// Derivatives of the rotation matrix entries with respect to a unit
/// quaternion `(w, x, y, z)`, contracted with `dl_dr`.
fn rotation_grad_to_quat(q: &[f64; 4], dl_dr: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let g = |i: usize, j: usize| dl_dr[(i, j)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
        - 2.0 * x * g(2, 2));
    let dy = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
        - 2.0 * y * g(2, 2));
    let dz = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
        + x * g(2, 0) + y * g(2, 1));
    [dw, dx, dy, dz]
}

fn splat_backward(
    proj: &Projection,
    sg: &ScreenGrad,
    g: &GaussianParams,
    cam: &CameraView,
    mask: ParamMask,
) -> [f64; RAW_LEN] {
    let mut out = [0.0; RAW_LEN];
    let k = &cam.intrinsics;
    let w_rot = cam.rotation;
    let t = proj.cam_pos;
    let j: Matrix2x3<f64> = proj.jacobian;

    // color
    let mut gc = [0.0; 3];
    for c in 0..3 {
        if proj.raw_rgb[c] > 0.0 && proj.raw_rgb[c] < 1.0 {
            gc[c] = sg.color[c];
        }
    }
    let basis = sh::basis(&proj.view_dir);
    if mask.sh {
        for kk in 0..SH_BASIS {
            for c in 0..3 {
                out[layout::SH.start + 3 * kk + c] = basis[kk] * gc[c];
            }
        }
    }
    let jac = sh::basis_jacobian(&proj.view_dir);
    let mut dl_ddir = Vector3::zeros();
    for kk in 1..SH_BASIS {
        let weight: f64 = (0..3).map(|c| g.sh[kk][c] * gc[c]).sum();
        if weight != 0.0 {
            dl_ddir += Vector3::from(jac[kk]) * weight;
        }
    }
    let d = proj.view_dir;
    let mut dl_dpos = if proj.view_dist > 0.0 {
        (dl_ddir - d * d.dot(&dl_ddir)) / proj.view_dist
    } else {
        Vector3::zeros()
    };

    // opacity
    let o = proj.splat.opacity;
    out[layout::OPACITY] = sg.opacity * o * (1.0 - o);

    // conic to screen covariance
    let cov = &proj.splat.cov;
    let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let det = a * c - b * b;
    let inv_det2 = 1.0 / (det * det);
    let [ga, gb, gcn] = sg.conic;
    let g_a = (-c * c * ga + b * c * gb - b * b * gcn) * inv_det2;
    let g_b = (2.0 * b * c * ga - (a * c + b * b) * gb + 2.0 * a * b * gcn) * inv_det2;
    let g_c = (-b * b * ga + a * b * gb - a * a * gcn) * inv_det2;

    // screen covariance M Σ Mᵀ with M = J W
    let m = j * w_rot;
    let m0: Vector3<f64> = m.row(0).transpose();
    let m1: Vector3<f64> = m.row(1).transpose();
    let sigma = &proj.cov3d;
    let dl_dm0 = sigma * m0 * (2.0 * g_a) + sigma * m1 * g_b;
    let dl_dm1 = sigma * m0 * g_b + sigma * m1 * (2.0 * g_c);
    let dl_dm = Matrix2x3::from_rows(&[dl_dm0.transpose(), dl_dm1.transpose()]);
    let dl_dj = dl_dm * w_rot.transpose();

    // camera-space position through J and the projected mean
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let [gmx, gmy] = sg.mean;
    let dt = Vector3::new(
        gmx * k.fx * inv_z - dl_dj[(0, 2)] * k.fx * inv_z2,
        gmy * k.fy * inv_z - dl_dj[(1, 2)] * k.fy * inv_z2,
        -gmx * k.fx * t.x * inv_z2 - gmy * k.fy * t.y * inv_z2 - dl_dj[(0, 0)] * k.fx * inv_z2
            + dl_dj[(0, 2)] * 2.0 * k.fx * t.x * inv_z3
            - dl_dj[(1, 1)] * k.fy * inv_z2
            + dl_dj[(1, 2)] * 2.0 * k.fy * t.y * inv_z3,
    );
    dl_dpos += w_rot.transpose() * dt;
    if mask.position {
        out[layout::POSITION].copy_from_slice(dl_dpos.as_slice());
    }

    // Σ = (R S)(R S)ᵀ
    let g_sigma = m0 * m0.transpose() * g_a + m0 * m1.transpose() * g_b + m1 * m1.transpose() * g_c;
    let q_unit = g.unit_rotation();
    let r = g.rotation_matrix();
    let s = g.scale();
    let rs = r * Matrix3::from_diagonal(&s);
    let dl_drs = (g_sigma + g_sigma.transpose()) * rs;
    if mask.scale {
        for i in 0..3 {
            let ds: f64 = (0..3).map(|row| dl_drs[(row, i)] * r[(row, i)]).sum();
            out[layout::SCALE.start + i] = ds * s[i];
        }
    }
    if mask.rotation {
        let mut dl_dr = dl_drs;
        for i in 0..3 {
            dl_dr.set_column(i, &(dl_drs.column(i) * s[i]));
        }
        let dq = rotation_grad_to_quat(&q_unit, &dl_dr);
        let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = (0..4).map(|i| dq[i] * q_unit[i]).sum();
        for i in 0..4 {
            out[layout::ROTATION.start + i] = (dq[i] - q_unit[i] * dot) / norm;
        }
    }
    if !mask.position {
        out[layout::POSITION].fill(0.0);
    }
    if !mask.opacity {
        out[layout::OPACITY] = 0.0;
    }
    out
}

/// Backward pass: gradients of a loss with per-pixel gradient `dl_dimage`
/// with respect to every Gaussian's raw parameters.
///
/// `masks`, when given, holds one entry per Gaussian; masked-off groups get
/// exactly zero gradient.
pub fn backward(
    frame: &Frame,
    gaussians: &[GaussianParams],
    cam: &CameraView,
    dl_dimage: &Image,
    masks: Option<&[ParamMask]>,
) -> Result<GradientBuffer> {
    frame.image.same_size(dl_dimage)?;
    if let Some(m) = masks {
        if m.len() != gaussians.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} masks for {} gaussians",
                m.len(),
                gaussians.len()
            )));
        }
    }
    let per_tile: Vec<Vec<ScreenGrad>> = (0..frame.tiles.len())
        .into_par_iter()
        .map(|t| tile_backward(frame, t, dl_dimage))
        .collect();
    let mut screen = vec![ScreenGrad::default(); frame.projections.len()];
    for (t, grads) in per_tile.iter().enumerate() {
        for (slot, sg) in grads.iter().enumerate() {
            screen[frame.tiles[t][slot] as usize].add(sg);
        }
    }
    let mut buffer = GradientBuffer::zeros(gaussians.len());
    let rows: Vec<(usize, [f64; RAW_LEN])> = frame
        .projections
        .par_iter()
        .zip(screen.par_iter())
        .filter_map(|(proj, sg)| {
            let id = proj.splat.id as usize;
            let mask = masks.map_or(ParamMask::ALL, |m| m[id]);
            if !mask.any() {
                return None;
            }
            Some((id, splat_backward(proj, sg, &gaussians[id], cam, mask)))
        })
        .collect();
    for (id, g) in rows {
        buffer.grads[id] = g;
    }
    Ok(buffer)
}

/// Forward and backward in one call, for a loss whose image gradient does
/// not depend on the render.
pub fn render_with_gradients(
    gaussians: &[GaussianParams],
    cam: &CameraView,
    cfg: &RenderConfig,
    dl_dimage: &Image,
    masks: Option<&[ParamMask]>,
) -> Result<(Image, GradientBuffer)> {
    let frame = rasterize(gaussians, cam, cfg);
    let grads = backward(&frame, gaussians, cam, dl_dimage, masks)?;
    Ok((frame.image, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use crate::raster::{render, Intrinsics};
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraView {
        let k = Intrinsics::from_vertical_fov(60f64.to_radians(), 32, 32);
        CameraView::look_at("c", Point3::new(0.3, -0.2, -2.0), Point3::origin(), Vector3::y(), k, 32, 32).unwrap()
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<GaussianParams> {
        (0..n)
            .map(|_| {
                let mut g = GaussianParams {
                    position: Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)),
                    rotation: [rng.random_range(0.5..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
                    log_scale: Vector3::new(rng.random_range(-2.8..-1.8), rng.random_range(-2.8..-1.8), rng.random_range(-2.8..-1.8)),
                    opacity_logit: logit(rng.random_range(0.2..0.8)),
                    ..Default::default()
                };
                for k in 0..SH_BASIS {
                    for c in 0..3 {
                        g.sh[k][c] = if k == 0 { rng.random_range(-0.5..0.5) } else { rng.random_range(-0.05..0.05) };
                    }
                }
                g
            })
            .collect()
    }

    fn weighted_sum(img: &Image, w: &Image) -> f64 {
        img.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cam = camera();
        let cfg = RenderConfig::default();
        for n in [1, 3, 8] {
            let scene = random_scene(&mut rng, n);
            let w = Image::from_fn(32, 32, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let (_, grads) = render_with_gradients(&scene, &cam, &cfg, &w, None).unwrap();
            let h = 1e-4;
            let mut worst = 0.0f64;
            for i in 0..n {
                for p in 0..RAW_LEN {
                    let eval = |delta: f64| {
                        let mut s = scene.clone();
                        let mut raw = s[i].to_raw();
                        raw[p] += delta;
                        s[i] = GaussianParams::from_raw(&raw);
                        weighted_sum(&render(&s, &cam, &cfg), &w)
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let an = grads.grads[i][p];
                    let err = (fd - an).abs();
                    let tol = 1e-3 * fd.abs().max(an.abs());
                    if err > tol.max(1e-6) {
                        worst = worst.max(err / tol.max(1e-6));
                        eprintln!("n={n} splat {i} param {p}: analytic {an:e} fd {fd:e}");
                    }
                }
            }
            assert!(worst == 0.0, "worst ratio {worst}");
        }
    }

    #[test]
    fn frozen_gaussians_get_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = random_scene(&mut rng, 5);
        let w = Image::filled(32, 32, [1.0, -1.0, 0.5]);
        let masks = vec![ParamMask::NONE; 5];
        let (_, grads) = render_with_gradients(&scene, &camera(), &RenderConfig::default(), &w, Some(&masks)).unwrap();
        assert!(grads.is_zero());
        let mut masks = vec![ParamMask::ALL; 5];
        masks[2] = ParamMask { position: false, ..ParamMask::ALL };
        let (_, grads) = render_with_gradients(&scene, &camera(), &RenderConfig::default(), &w, Some(&masks)).unwrap();
        assert!(grads.grads[2][..3].iter().all(|&v| v == 0.0));
        assert!(grads.grads[2][3..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn culled_gaussian_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut scene = random_scene(&mut rng, 2);
        scene[1].position = Vector3::new(0.0, 0.0, -5.0);
        let w = Image::filled(32, 32, [1.0; 3]);
        let (_, grads) = render_with_gradients(&scene, &camera(), &RenderConfig::default(), &w, None).unwrap();
        assert!(grads.grads[1].iter().all(|&v| v == 0.0));
    }
}
