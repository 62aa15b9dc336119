use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::Mesh;
use crate::raster::CameraView;

const NEAR: f64 = 1e-3;

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Rasterize a textured mesh with a z-buffer and perspective-correct
/// bilinear texture lookups over a white background.
///
/// Pixel centers are at integer coordinates, as in the splat rasterizer.
/// Faces with a vertex closer than 1 mm to the camera plane are skipped.
pub fn render_mesh(mesh: &Mesh, cam: &CameraView) -> Result<Image> {
    let (w, h) = (cam.width, cam.height);
    let mut image = Image::filled(w, h, [1.0; 3]);
    if mesh.faces.is_empty() {
        return Ok(image);
    }
    if !mesh.has_texture() {
        return Err(Error::MissingTexture);
    }
    let k = &cam.intrinsics;
    let cam_pts: Vec<_> = mesh.vertices.iter().map(|p| cam.world_to_camera(p)).collect();
    let mut depth = vec![f64::INFINITY; w * h];
    let mut hit: Vec<Option<(usize, [f64; 3])>> = vec![None; w * h];

    for (fi, face) in mesh.faces.iter().enumerate() {
        let c = face.map(|v| cam_pts[v as usize]);
        if c.iter().any(|p| p.z <= NEAR) {
            continue;
        }
        let s = c.map(|p| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy));
        let area = edge(&s[0], &s[1], &s[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let x1 = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let y0 = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let y1 = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let inv_z = c.map(|p| 1.0 / p.z);
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let p = Vector2::new(x as f64, y as f64);
                let b = [
                    edge(&s[1], &s[2], &p) / area,
                    edge(&s[2], &s[0], &p) / area,
                    edge(&s[0], &s[1], &p) / area,
                ];
                if b.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let iz = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
                let z = 1.0 / iz;
                let idx = y * w + x;
                if z < depth[idx] {
                    depth[idx] = z;
                    let pc = [b[0] * inv_z[0] * z, b[1] * inv_z[1] * z, b[2] * inv_z[2] * z];
                    hit[idx] = Some((fi, pc));
                }
            }
        }
    }
    for (idx, h) in hit.iter().enumerate() {
        if let Some((face, bary)) = h {
            let rgb = mesh.albedo_at(*face, *bary).ok_or(Error::MissingTexture)?;
            image.set_pixel(idx % w, idx / w, rgb);
        }
    }
    Ok(image)
}
