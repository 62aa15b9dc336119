use rayon::prelude::*;

use super::{project_full, taper, CameraView, Projection, RenderConfig, Splat2D, SUPPORT_SQ};
use crate::gaussian::GaussianParams;
use crate::image::Image;

/// Result of a forward pass, retained so the backward pass can replay it.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub(crate) projections: Vec<Projection>,
    /// Per tile, indices into `projections` sorted front to back.
    pub(crate) tiles: Vec<Vec<u32>>,
    pub(crate) tiles_x: usize,
    pub(crate) cfg: RenderConfig,
}

impl Frame {
    /// The visible splats in Gaussian id order.
    pub fn splats(&self) -> impl Iterator<Item = &Splat2D> {
        self.projections.iter().map(|p| &p.splat)
    }

    pub fn visible_count(&self) -> usize {
        self.projections.len()
    }

    pub fn into_image(self) -> Image {
        self.image
    }

    pub(crate) fn tile_bounds(&self, tile: usize) -> (usize, usize, usize, usize) {
        let ts = self.cfg.tile_size;
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * ts;
        let y0 = ty * ts;
        (x0, y0, (x0 + ts).min(self.image.width()), (y0 + ts).min(self.image.height()))
    }
}

/// Footprint weight of a splat at a pixel: the tapered Gaussian value,
/// together with the squared Mahalanobis distance and offsets.
#[inline]
pub(crate) fn footprint(s: &Splat2D, px: f64, py: f64) -> Option<(f64, f64, f64, f64, f64, f64)> {
    let dx = px - s.mean.x;
    let dy = py - s.mean.y;
    let [a, b, c] = s.conic;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if !(q < SUPPORT_SQ) {
        return None;
    }
    let g = (-0.5 * q).exp();
    let (w, dw) = taper(q);
    Some((g * w, g, w, dw, dx, dy))
}

/// Project, bin and blend `gaussians` as seen from `cam`.
pub fn rasterize(gaussians: &[GaussianParams], cam: &CameraView, cfg: &RenderConfig) -> Frame {
    let center = cam.center();
    let projections: Vec<Projection> = gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_full(i as u32, g, cam, &center, cfg))
        .collect();

    let ts = cfg.tile_size.max(1);
    let (width, height) = (cam.width, cam.height);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (p, proj) in projections.iter().enumerate() {
        let s = &proj.splat;
        let x_lo = (s.mean.x - s.radius).ceil().max(0.0);
        let x_hi = (s.mean.x + s.radius).floor().min(width as f64 - 1.0);
        let y_lo = (s.mean.y - s.radius).ceil().max(0.0);
        let y_hi = (s.mean.y + s.radius).floor().min(height as f64 - 1.0);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        let (tx0, tx1) = (x_lo as usize / ts, x_hi as usize / ts);
        let (ty0, ty1) = (y_lo as usize / ts, y_hi as usize / ts);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(p as u32);
            }
        }
    }
    tiles.par_iter_mut().for_each(|list| {
        list.sort_by(|&i, &j| {
            let (a, b) = (&projections[i as usize].splat, &projections[j as usize].splat);
            a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id))
        })
    });

    let cfg = RenderConfig { tile_size: ts, ..*cfg };
    let mut frame = Frame {
        image: Image::new(width, height),
        projections,
        tiles,
        tiles_x,
        cfg,
    };
    let blocks: Vec<Vec<f64>> = (0..frame.tiles.len())
        .into_par_iter()
        .map(|t| shade_tile(&frame, t))
        .collect();
    for (t, block) in blocks.into_iter().enumerate() {
        let (x0, y0, x1, y1) = frame.tile_bounds(t);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                frame.image.set_pixel(x, y, [block[k], block[k + 1], block[k + 2]]);
                k += 3;
            }
        }
    }
    frame
}

fn shade_tile(frame: &Frame, tile: usize) -> Vec<f64> {
    let (x0, y0, x1, y1) = frame.tile_bounds(tile);
    let list = &frame.tiles[tile];
    let cfg = &frame.cfg;
    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0) * 3);
    for y in y0..y1 {
        for x in x0..x1 {
            let mut color = [0.0; 3];
            let mut trans = 1.0;
            for &p in list {
                let s = &frame.projections[p as usize].splat;
                let Some((e, ..)) = footprint(s, x as f64, y as f64) else {
                    continue;
                };
                let alpha = (s.opacity * e).min(cfg.alpha_max);
                if alpha <= 0.0 {
                    continue;
                }
                let next = trans * (1.0 - alpha);
                if next < cfg.min_transmittance {
                    break;
                }
                for c in 0..3 {
                    color[c] += s.rgb[c] * alpha * trans;
                }
                trans = next;
            }
            for c in 0..3 {
                out.push(color[c] + cfg.background[c] * trans);
            }
        }
    }
    out
}

/// Render `gaussians` to an image.
pub fn render(gaussians: &[GaussianParams], cam: &CameraView, cfg: &RenderConfig) -> Image {
    rasterize(gaussians, cam, cfg).image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use crate::raster::Intrinsics;
    use crate::sh::rgb_to_dc;
    use nalgebra::{Matrix3, Point3, Rotation3, Vector3};

    fn camera(size: usize) -> CameraView {
        let k = Intrinsics::from_vertical_fov(60f64.to_radians(), size, size);
        CameraView::look_at("c", Point3::new(0.0, 0.0, -2.0), Point3::origin(), Vector3::y(), k, size, size).unwrap()
    }

    fn splat(pos: [f64; 3], rgb: [f64; 3], opacity: f64, log_scale: f64) -> GaussianParams {
        let mut g = GaussianParams {
            position: Vector3::from(pos),
            opacity_logit: logit(opacity),
            log_scale: Vector3::repeat(log_scale),
            ..Default::default()
        };
        g.sh[0] = rgb.map(rgb_to_dc);
        g
    }

    #[test]
    fn empty_scene_is_background() {
        let img = render(&[], &camera(20), &RenderConfig::default());
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_opaque_red_over_white() {
        let cam = camera(21);
        let g = splat([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.5, -3.0);
        let img = render(&[g], &cam, &RenderConfig::default());
        let p = img.pixel(10, 10);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
        assert!((p[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn front_splat_dominates() {
        let cam = camera(21);
        let red = splat([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.999, -3.0);
        let blue = splat([0.0, 0.0, 0.5], [0.0, 0.0, 1.0], 0.999, -3.0);
        let p = render(&[blue, red], &cam, &RenderConfig::default()).pixel(10, 10);
        // 0.99 red, then 0.99 of the remaining 0.01 blue, then white
        let oracle = [0.99 + 0.0001, 0.0001, 0.0099 + 0.0001];
        for c in 0..3 {
            assert!((p[c] - oracle[c]).abs() < 1e-9);
            assert!((p[c] - [0.99, 0.01, 0.01][c]).abs() < 0.02);
        }
    }

    fn scatter(n: usize) -> Vec<GaussianParams> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                let mut g = splat(
                    [0.4 * (1.3 * t).sin(), 0.4 * (0.7 * t).cos(), 0.3 * (2.1 * t).sin()],
                    [(0.3 * t).sin().abs(), (0.5 * t).cos().abs(), 0.5],
                    0.3 + 0.6 * ((0.9 * t).sin().abs()),
                    -2.5 + 0.5 * (t * 0.37).sin(),
                );
                g.rotation = [1.0, 0.2 * t.sin(), 0.3 * t.cos(), 0.1];
                g.log_scale.x += 0.6;
                g
            })
            .collect()
    }

    #[test]
    fn tile_size_does_not_change_the_image() {
        let cam = camera(70);
        let gs = scatter(60);
        let a = render(&gs, &cam, &RenderConfig::default());
        let b = render(&gs, &cam, &RenderConfig { tile_size: 32, ..Default::default() });
        assert!(a.max_abs_diff(&b).unwrap() < 1.0 / 255.0);
        assert_eq!(a, b);
    }

    #[test]
    fn pixels_stay_in_unit_range_and_repeat() {
        let cam = camera(48);
        let mut gs = scatter(80);
        gs[3].sh[0] = [10.0, -10.0, 3.0];
        let a = render(&gs, &cam, &RenderConfig::default());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let b = render(&gs, &cam, &RenderConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn equal_depth_ties_break_by_id() {
        let cam = camera(21);
        let red = splat([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.6, -3.0);
        let blue = splat([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.6, -3.0);
        let p = render(&[red, blue], &cam, &RenderConfig::default()).pixel(10, 10);
        assert!(p[0] > p[2]);
        let q = render(&[blue, red], &cam, &RenderConfig::default()).pixel(10, 10);
        assert!(q[2] > q[0]);
    }

    #[test]
    fn rigid_motion_of_scene_and_camera() {
        let cam = camera(40);
        let gs = scatter(40);
        let base = render(&gs, &cam, &RenderConfig::default());
        let q = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let t = Vector3::new(0.5, -2.0, 1.0);
        let qm: Matrix3<f64> = *q.matrix();
        let uq = nalgebra::UnitQuaternion::from_rotation_matrix(&q);
        let moved: Vec<_> = gs
            .iter()
            .map(|g| {
                let r = uq.quaternion() * nalgebra::Quaternion::new(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
                GaussianParams {
                    position: qm * g.position + t,
                    rotation: [r.w, r.i, r.j, r.k],
                    ..*g
                }
            })
            .collect();
        let img = render(&moved, &cam.transformed(&q, &t), &RenderConfig::default());
        assert!(base.max_abs_diff(&img).unwrap() <= 2.0 / 255.0);
    }
}
