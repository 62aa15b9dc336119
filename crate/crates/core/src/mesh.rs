//! Shared-vertex triangle meshes and the per-face local frames that anchor
//! embedded Gaussians.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::Image;

/// Faces with area at or below this value (m²) have no well-defined frame.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Triangle mesh with per-vertex UVs and an optional albedo texture.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    /// Counter-clockwise vertex-index triples.
    pub faces: Vec<[u32; 3]>,
    /// Per-vertex texture coordinates, empty when the mesh is untextured.
    pub uvs: Vec<Vector2<f64>>,
    pub texture: Option<Arc<Image>>,
    pub texture_path: Option<PathBuf>,
}

impl Mesh {
    /// Build a mesh and check its index invariants.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            uvs: Vec::new(),
            texture: None,
            texture_path: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_uvs(mut self, uvs: Vec<Vector2<f64>>) -> Result<Self> {
        if uvs.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} uvs for {} vertices",
                uvs.len(),
                self.vertices.len()
            )));
        }
        self.uvs = uvs;
        Ok(self)
    }

    pub fn with_texture(mut self, texture: Image) -> Self {
        self.texture = Some(Arc::new(texture));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {f} references a vertex outside 0..{n}: {face:?}"
                )));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::InvalidMesh(format!("face {f} repeats a vertex: {face:?}")));
            }
        }
        if !self.uvs.is_empty() && self.uvs.len() != n {
            return Err(Error::InvalidMesh(format!("{} uvs for {n} vertices", self.uvs.len())));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn has_texture(&self) -> bool {
        self.texture.is_some() && !self.uvs.is_empty()
    }

    /// Same topology and UVs, different vertex positions (a keyframe).
    pub fn with_positions(&self, vertices: Vec<Point3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::TopologyMismatch(format!(
                "{} vertices, expected {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    /// Error unless `other` has the same vertex count and face list.
    pub fn check_same_topology(&self, other: &Mesh) -> Result<()> {
        if self.vertices.len() != other.vertices.len() || self.faces != other.faces {
            return Err(Error::TopologyMismatch(format!(
                "V={} F={} vs V={} F={}",
                self.vertices.len(),
                self.faces.len(),
                other.vertices.len(),
                other.faces.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        face_area(self, face)
    }

    pub fn face_frame(&self, face: usize) -> Result<FaceFrame> {
        face_frame(self, face)
    }

    /// Centroid and radius of the bounding sphere around the vertex centroid.
    pub fn extent(&self) -> (Point3<f64>, f64) {
        if self.vertices.is_empty() {
            return (Point3::origin(), 0.0);
        }
        let sum = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        let center = Point3::from(sum / self.vertices.len() as f64);
        let radius = self
            .vertices
            .iter()
            .map(|p| (p - center).norm())
            .fold(0.0, f64::max);
        (center, radius)
    }

    /// Apply `x -> rotation * x + translation` to every vertex.
    pub fn transformed(&self, rotation: &Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|p| rotation * p + translation)
            .collect();
        Self {
            vertices,
            ..self.clone()
        }
    }

    /// Texture coordinate at barycentric weights `bary` inside `face`.
    pub fn uv_at(&self, face: usize, bary: [f64; 3]) -> Option<Vector2<f64>> {
        if self.uvs.is_empty() {
            return None;
        }
        let [a, b, c] = self.faces[face];
        Some(
            self.uvs[a as usize] * bary[0]
                + self.uvs[b as usize] * bary[1]
                + self.uvs[c as usize] * bary[2],
        )
    }

    /// Albedo at barycentric weights `bary` inside `face`.
    pub fn albedo_at(&self, face: usize, bary: [f64; 3]) -> Option<[f64; 3]> {
        let texture = self.texture.as_ref()?;
        let uv = self.uv_at(face, bary)?;
        Some(texture.sample_uv(uv.x, uv.y))
    }

    /// Read a triangulated OBJ (`v`, `vt`, `f` records).
    ///
    /// UVs are per-vertex: when a vertex is referenced with several `vt`
    /// indices the first one wins. A `mtllib` whose material names a
    /// `map_Kd` texture is loaded when present.
    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut mesh = parse_obj(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if mesh.texture_path.is_none() {
            if let Some(mtl) = find_mtllib(&text) {
                mesh.texture_path = read_map_kd(&base.join(mtl)).map(|p| base.join(p));
            }
        }
        if let Some(tex) = mesh.texture_path.clone() {
            let tex = if tex.is_absolute() { tex } else { base.join(tex) };
            if tex.exists() {
                mesh.texture = Some(Arc::new(Image::load_png(&tex)?));
                mesh.texture_path = Some(tex);
            } else {
                log::warn!("texture {} not found", tex.display());
                mesh.texture_path = None;
            }
        }
        Ok(mesh)
    }

    /// Write an OBJ with one `vt` per vertex. The texture, if any, is not
    /// copied; use [`Mesh::save_obj_with_texture`] for a self-contained file.
    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
        }
        for uv in &self.uvs {
            let _ = writeln!(out, "vt {:?} {:?}", uv.x, uv.y);
        }
        let textured = !self.uvs.is_empty();
        for f in &self.faces {
            if textured {
                let _ = writeln!(
                    out,
                    "f {a}/{a} {b}/{b} {c}/{c}",
                    a = f[0] + 1,
                    b = f[1] + 1,
                    c = f[2] + 1
                );
            } else {
                let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Write `stem.obj`, `stem.mtl` and `stem.png` (when textured) into `dir`.
    pub fn save_obj_with_texture(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let obj_path = dir.join(format!("{stem}.obj"));
        self.save_obj(&obj_path)?;
        if let Some(tex) = &self.texture {
            tex.save_png(dir.join(format!("{stem}.png")))?;
            let mtl = format!("newmtl albedo\nmap_Kd {stem}.png\n");
            fs::write(dir.join(format!("{stem}.mtl")), mtl)
                .map_err(|e| Error::io("writing mtl", e))?;
            let body = fs::read_to_string(&obj_path).map_err(|e| Error::io("reading obj", e))?;
            fs::write(&obj_path, format!("mtllib {stem}.mtl\nusemtl albedo\n{body}"))
                .map_err(|e| Error::io("writing obj", e))?;
        }
        Ok(obj_path)
    }
}

fn find_mtllib(text: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix("mtllib ").map(|s| s.trim().to_string()))
}

fn read_map_kd(path: &Path) -> Option<PathBuf> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .find_map(|l| l.trim().strip_prefix("map_Kd ").map(|s| PathBuf::from(s.trim())))
}

fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let err = |line: usize, msg: String| Error::Obj {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut vertices = Vec::new();
    let mut texcoords: Vec<Vector2<f64>> = Vec::new();
    let mut faces = Vec::new();
    let mut face_uv_refs: Vec<[Option<usize>; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let raw = raw.split('#').next().unwrap_or("").trim();
        let mut parts = raw.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(line, format!("bad vertex: {e}")))?;
                if xyz.len() != 3 {
                    return Err(err(line, "vertex needs three coordinates".into()));
                }
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("vt") => {
                let uv: Vec<f64> = parts
                    .take(2)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(line, format!("bad texcoord: {e}")))?;
                if uv.len() != 2 {
                    return Err(err(line, "texcoord needs two values".into()));
                }
                texcoords.push(Vector2::new(uv[0], uv[1]));
            }
            Some("f") => {
                let mut vidx = Vec::with_capacity(3);
                let mut tidx = Vec::with_capacity(3);
                for tok in parts {
                    let mut fields = tok.split('/');
                    let v = resolve_index(fields.next().unwrap_or(""), vertices.len())
                        .ok_or_else(|| err(line, format!("bad vertex reference {tok:?}")))?;
                    let t = match fields.next() {
                        Some(s) if !s.is_empty() => Some(
                            resolve_index(s, texcoords.len())
                                .ok_or_else(|| err(line, format!("bad texcoord reference {tok:?}")))?,
                        ),
                        _ => None,
                    };
                    vidx.push(v);
                    tidx.push(t);
                }
                if vidx.len() != 3 {
                    return Err(err(line, format!("expected a triangle, got {} vertices", vidx.len())));
                }
                faces.push([vidx[0] as u32, vidx[1] as u32, vidx[2] as u32]);
                face_uv_refs.push([tidx[0], tidx[1], tidx[2]]);
            }
            Some("map_Kd") => {}
            _ => {}
        }
    }

    let mut uvs = Vec::new();
    if !texcoords.is_empty() {
        let mut per_vertex: Vec<Option<Vector2<f64>>> = vec![None; vertices.len()];
        for (face, refs) in faces.iter().zip(&face_uv_refs) {
            for k in 0..3 {
                if let Some(t) = refs[k] {
                    per_vertex[face[k] as usize].get_or_insert(texcoords[t]);
                }
            }
        }
        // Unreferenced vertices may legitimately lack a UV; an OBJ whose
        // vt count equals its v count maps one-to-one.
        if per_vertex.iter().any(|uv| uv.is_none()) && texcoords.len() == vertices.len() {
            uvs = texcoords;
        } else {
            uvs = per_vertex.into_iter().map(|uv| uv.unwrap_or_default()).collect();
        }
    }

    let mesh = Mesh {
        vertices,
        faces,
        uvs,
        texture: None,
        texture_path: None,
    };
    mesh.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(mesh)
}

fn resolve_index(s: &str, len: usize) -> Option<usize> {
    let i: i64 = s.parse().ok()?;
    let idx = if i > 0 {
        i as usize - 1
    } else if i < 0 {
        (len as i64 + i) as usize
    } else {
        return None;
    };
    (idx < len).then_some(idx)
}

/// Orthonormal local frame of a triangle: origin at the centroid, z along
/// the unit normal, x toward the first vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFrame {
    pub origin: Point3<f64>,
    /// Columns are the local x, y, z axes in world coordinates.
    pub rotation: Matrix3<f64>,
}

impl FaceFrame {
    pub fn identity() -> Self {
        Self {
            origin: Point3::origin(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn to_world_point(&self, local: &Vector3<f64>) -> Point3<f64> {
        self.origin + self.rotation * local
    }

    pub fn to_local_point(&self, world: &Point3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (world - self.origin)
    }

    /// Unit quaternion of the frame rotation.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        rotation_to_quaternion(&self.rotation)
    }
}

/// Branch-stable rotation-matrix to quaternion conversion (largest-diagonal
/// pivot), returning the representative with non-negative w.
pub fn rotation_to_quaternion(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let q = nalgebra::Quaternion::new(w, x, y, z);
    let q = if w < 0.0 { -q } else { q };
    UnitQuaternion::new_normalize(q)
}

/// `‖(B−A)×(C−A)‖ / 2`.
pub fn face_area(mesh: &Mesh, face: usize) -> f64 {
    let [a, b, c] = mesh.triangle(face);
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Local frame of `face`; errors when its area is at most [`DEGENERATE_AREA`].
pub fn face_frame(mesh: &Mesh, face: usize) -> Result<FaceFrame> {
    let [a, b, c] = mesh.triangle(face);
    triangle_frame(&a, &b, &c).ok_or_else(|| Error::DegenerateTriangle {
        face,
        area: face_area(mesh, face),
    })
}

/// Frame of an explicit triangle, `None` when degenerate.
pub fn triangle_frame(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<FaceFrame> {
    let n = (b - a).cross(&(c - a));
    let twice_area = n.norm();
    if 0.5 * twice_area <= DEGENERATE_AREA {
        return None;
    }
    let origin = Point3::from((a.coords + b.coords + c.coords) / 3.0);
    let z = n / twice_area;
    let to_first = a - origin;
    // remove the (round-off) normal component before normalizing
    let x = to_first - z * z.dot(&to_first);
    let x_norm = x.norm();
    if x_norm <= f64::EPSILON {
        return None;
    }
    let x = x / x_norm;
    let y = z.cross(&x);
    Some(FaceFrame {
        origin,
        rotation: Matrix3::from_columns(&[x, y, z]),
    })
}

/// Isotropic scale factor `sqrt(area_posed / area_rest)` of a face.
///
/// Returns 0 for a collapsed posed face; errors only when the rest face is
/// degenerate.
pub fn face_scale_factor(rest: &Mesh, posed: &Mesh, face: usize) -> Result<f64> {
    let rest_area = face_area(rest, face);
    if rest_area <= DEGENERATE_AREA {
        return Err(Error::DegenerateTriangle {
            face,
            area: rest_area,
        });
    }
    let posed_area = face_area(posed, face);
    if posed_area <= DEGENERATE_AREA {
        return Ok(0.0);
    }
    Ok((posed_area / rest_area).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Mesh {
        Mesh::new(
            vec![Point3::from(a), Point3::from(b), Point3::from(c)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn unit_right_triangle_frame() {
        let m = tri([0., 0., 0.], [1., 0., 0.], [0., 1., 0.]);
        let f = face_frame(&m, 0).unwrap();
        assert!((f.origin - Point3::new(1. / 3., 1. / 3., 0.)).norm() < 1e-15);
        let r = f.rotation;
        let expect_x = Vector3::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2, 0.);
        let expect_y = Vector3::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2, 0.);
        assert!((r.column(0) - expect_x).norm() < 1e-15);
        assert!((r.column(1) - expect_y).norm() < 1e-15);
        assert!((r.column(2) - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn translated_triangle_frame() {
        let m = tri([5., 0., 0.], [6., 0., 0.], [5., 1., 0.]);
        let f = face_frame(&m, 0).unwrap();
        let base = face_frame(&tri([0., 0., 0.], [1., 0., 0.], [0., 1., 0.]), 0).unwrap();
        assert!((f.origin - Point3::new(16. / 3., 1. / 3., 0.)).norm() < 1e-14);
        assert!((f.rotation - base.rotation).norm() < 1e-15);
    }

    #[test]
    fn coincident_vertices_are_degenerate() {
        let m = Mesh {
            vertices: vec![Point3::origin(), Point3::origin(), Point3::new(0., 1., 0.)],
            faces: vec![[0, 1, 2]],
            uvs: vec![],
            texture: None,
            texture_path: None,
        };
        assert!(matches!(face_frame(&m, 0), Err(Error::DegenerateTriangle { .. })));
    }

    #[test]
    fn repeated_index_is_rejected() {
        let verts = vec![Point3::origin(), Point3::new(1., 0., 0.), Point3::new(0., 1., 0.)];
        assert!(Mesh::new(verts.clone(), vec![[0, 0, 2]]).is_err());
        assert!(Mesh::new(verts, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn areas() {
        let m = tri([0., 0., 0.], [1., 0., 0.], [0., 1., 0.]);
        assert_eq!(face_area(&m, 0), 0.5);
        let m3 = tri([0., 0., 0.], [3., 0., 0.], [0., 3., 0.]);
        assert!((face_area(&m3, 0) - 4.5).abs() < 1e-15);
        let p = Point3::new(1., 2., 3.);
        let m0 = Mesh {
            vertices: vec![p, p, p],
            faces: vec![[0, 1, 2]],
            uvs: vec![],
            texture: None,
            texture_path: None,
        };
        assert_eq!(face_area(&m0, 0), 0.0);
    }

    #[test]
    fn scale_factor_cases() {
        let rest = tri([0., 0., 0.], [1., 0., 0.], [0., 1., 0.]);
        assert_eq!(face_scale_factor(&rest, &rest, 0).unwrap(), 1.0);
        let doubled = rest
            .with_positions(rest.vertices.iter().map(|p| p * 2.0).collect())
            .unwrap();
        assert!((face_scale_factor(&rest, &doubled, 0).unwrap() - 2.0).abs() < 1e-15);
        let collapsed = rest.with_positions(vec![Point3::origin(); 3]).unwrap();
        assert_eq!(face_scale_factor(&rest, &collapsed, 0).unwrap(), 0.0);
        assert!(face_scale_factor(&collapsed, &rest, 0).is_err());
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = tri([0., 0., 0.], [1., 0., 0.], [0., 1., 0.])
            .with_uvs(vec![Vector2::new(0., 0.), Vector2::new(1., 0.), Vector2::new(0., 1.)])
            .unwrap()
            .with_texture(Image::filled(2, 2, [1.0, 0.0, 0.0]));
        let path = m.save_obj_with_texture(dir.path(), "tri").unwrap();
        let back = Mesh::load_obj(&path).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.uvs, m.uvs);
        assert_eq!(back.texture.unwrap().pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn obj_rejects_quads_and_bad_refs() {
        let p = Path::new("x.obj");
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n", p).is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n", p).is_err());
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", p).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    fn rotation_strategy() -> impl Strategy<Value = Rotation3<f64>> {
        (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0)
            .prop_map(|(a, b, c)| Rotation3::from_scaled_axis(Vector3::new(a, b, c)))
    }

    fn point() -> impl Strategy<Value = [f64; 3]> {
        [-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0]
    }

    proptest! {
        #[test]
        fn frame_is_orthonormal_and_rigidly_equivariant(
            a in point(), b in point(), c in point(),
            q in rotation_strategy(),
            t in point(),
        ) {
            let m = tri(a, b, c);
            prop_assume!(face_area(&m, 0) > 1e-3);
            let f = face_frame(&m, 0).unwrap();
            let r = f.rotation;
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);

            let t = Vector3::from(t);
            let moved = m.transformed(&q, &t);
            let g = face_frame(&moved, 0).unwrap();
            prop_assert!((g.rotation - q.matrix() * r).norm() < 1e-9);
            prop_assert!((g.origin - (q * f.origin + t)).norm() < 1e-9);
            prop_assert_eq!(face_scale_factor(&m, &m, 0).unwrap(), 1.0);
        }

        #[test]
        fn quaternion_conversion_matches_matrix(r in rotation_strategy()) {
            let q = rotation_to_quaternion(r.matrix());
            prop_assert!((q.to_rotation_matrix().matrix() - r.matrix()).norm() < 1e-12);
        }
    }
}
