//! Procedural meshes and textures for tests, demos and benchmarks.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Point3, Vector2};

use crate::image::Image;
use crate::mesh::Mesh;

/// Icosahedron vertices (unnormalized) and faces, counter-clockwise seen from outside.
fn icosahedron() -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = vec![
        Point3::new(-1.0, t, 0.0),
        Point3::new(1.0, t, 0.0),
        Point3::new(-1.0, -t, 0.0),
        Point3::new(1.0, -t, 0.0),
        Point3::new(0.0, -1.0, t),
        Point3::new(0.0, 1.0, t),
        Point3::new(0.0, -1.0, -t),
        Point3::new(0.0, 1.0, -t),
        Point3::new(t, 0.0, -1.0),
        Point3::new(t, 0.0, 1.0),
        Point3::new(-t, 0.0, -1.0),
        Point3::new(-t, 0.0, 1.0),
    ];
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (v, f)
}

/// Unit-sphere points of an icosahedron subdivided `subdivisions` times.
pub fn icosphere_points(subdivisions: u32) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let (mut verts, mut faces) = icosahedron();
    for v in &mut verts {
        *v = Point3::from(v.coords.normalize());
    }
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Point3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = (verts[a as usize].coords + verts[b as usize].coords).normalize();
                verts.push(Point3::from(p));
                verts.len() as u32 - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Icosphere of the given radius with planar UVs `(x, y)` mapped to `[0,1]²`.
pub fn icosphere(subdivisions: u32, radius: f64) -> Mesh {
    let (verts, faces) = icosphere_points(subdivisions);
    let uvs = verts
        .iter()
        .map(|p| Vector2::new(0.5 + 0.5 * p.x, 0.5 + 0.5 * p.y))
        .collect();
    let verts = verts.into_iter().map(|p| p * radius).collect();
    Mesh::new(verts, faces)
        .and_then(|m| m.with_uvs(uvs))
        .expect("icosphere is a valid mesh")
}

/// Latitude-longitude sphere with `rings` interior latitude circles of
/// `segments` vertices each plus two poles.
///
/// Has `rings·segments + 2` vertices and `2·rings·segments` faces; 84 rings
/// of 82 segments match the vertex and face counts of common body models.
pub fn uv_sphere(rings: usize, segments: usize, radius: f64) -> Mesh {
    assert!(rings >= 1 && segments >= 3);
    let mut verts = Vec::with_capacity(rings * segments + 2);
    let mut uvs = Vec::with_capacity(rings * segments + 2);
    verts.push(Point3::new(0.0, radius, 0.0));
    uvs.push(Vector2::new(0.5, 1.0));
    for r in 0..rings {
        let theta = PI * (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            verts.push(Point3::new(
                radius * theta.sin() * phi.cos(),
                radius * theta.cos(),
                -radius * theta.sin() * phi.sin(),
            ));
            uvs.push(Vector2::new(s as f64 / segments as f64, 1.0 - theta / PI));
        }
    }
    verts.push(Point3::new(0.0, -radius, 0.0));
    uvs.push(Vector2::new(0.5, 0.0));
    let bottom = (verts.len() - 1) as u32;
    let ring = |r: usize, s: usize| (1 + r * segments + s % segments) as u32;
    let mut faces = Vec::with_capacity(2 * rings * segments);
    for s in 0..segments {
        faces.push([0, ring(0, s), ring(0, s + 1)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    for s in 0..segments {
        faces.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    Mesh::new(verts, faces)
        .and_then(|m| m.with_uvs(uvs))
        .expect("uv sphere is a valid mesh")
}

/// Axis-aligned square of side `size` in the z = 0 plane, centered at the
/// origin, facing +z, split into two triangles.
pub fn quad(size: f64, texture: Option<Image>) -> Mesh {
    let h = size / 2.0;
    let verts = vec![
        Point3::new(-h, -h, 0.0),
        Point3::new(h, -h, 0.0),
        Point3::new(h, h, 0.0),
        Point3::new(-h, h, 0.0),
    ];
    let uvs = vec![
        Vector2::new(0.0, 0.0),
        Vector2::new(1.0, 0.0),
        Vector2::new(1.0, 1.0),
        Vector2::new(0.0, 1.0),
    ];
    let mesh = Mesh::new(verts, vec![[0, 1, 2], [0, 2, 3]])
        .and_then(|m| m.with_uvs(uvs))
        .expect("quad is a valid mesh");
    match texture {
        Some(t) => mesh.with_texture(t),
        None => mesh,
    }
}

/// Smooth color bands in UV space.
pub fn wave_texture(size: usize, frequency: f64) -> Image {
    Image::from_fn(size, size, |x, y| {
        let u = (x as f64 + 0.5) / size as f64;
        let v = (y as f64 + 0.5) / size as f64;
        let w = 2.0 * PI * frequency;
        [
            0.5 + 0.35 * (w * u).sin(),
            0.5 + 0.35 * (w * v).cos(),
            0.5 + 0.3 * (w * (u + v) * 0.5).sin(),
        ]
    })
}

/// Checkerboard with `cells` squares per side.
pub fn checker_texture(size: usize, cells: usize, a: [f64; 3], b: [f64; 3]) -> Image {
    Image::from_fn(size, size, |x, y| {
        if ((x * cells / size) + (y * cells / size)) % 2 == 0 {
            a
        } else {
            b
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_radius() {
        for s in 0..4 {
            let m = icosphere(s, 2.0);
            let f = 20 * 4usize.pow(s);
            assert_eq!(m.face_count(), f);
            assert_eq!(m.vertex_count(), f / 2 + 2);
            assert!(m.vertices.iter().all(|p| (p.coords.norm() - 2.0).abs() < 1e-12));
            // outward winding
            for face in 0..m.face_count() {
                let fr = m.face_frame(face).unwrap();
                assert!(fr.rotation.column(2).dot(&fr.origin.coords) > 0.0);
            }
        }
    }

    #[test]
    fn uv_sphere_matches_body_model_size() {
        let m = uv_sphere(84, 82, 1.0);
        assert_eq!(m.vertex_count(), 6890);
        assert_eq!(m.face_count(), 13776);
        let small = uv_sphere(3, 5, 1.0);
        for face in 0..small.face_count() {
            let fr = small.face_frame(face).unwrap();
            assert!(fr.rotation.column(2).dot(&fr.origin.coords) > 0.0);
        }
    }

    #[test]
    fn quad_faces_forward() {
        let q = quad(1.0, None);
        for f in 0..2 {
            assert!((q.face_frame(f).unwrap().rotation.column(2).z - 1.0).abs() < 1e-12);
        }
    }
}
