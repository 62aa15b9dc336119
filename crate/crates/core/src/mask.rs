//! Mask-driven face selection for selective detail enhancement.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::BinaryImage;
use crate::mesh::Mesh;
use crate::raster::{CameraView, Intrinsics};

/// A binary image (true = enhance) seen through a camera.
#[derive(Debug, Clone)]
pub struct Mask {
    pub image: BinaryImage,
    pub camera: CameraView,
}

impl Mask {
    pub fn new(image: BinaryImage, camera: CameraView) -> Result<Self> {
        if image.width() != camera.width || image.height() != camera.height {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{}, camera {} is {}x{}",
                image.width(),
                image.height(),
                camera.id,
                camera.width,
                camera.height
            )));
        }
        Ok(Self { image, camera })
    }

    /// Load a grayscale PNG (values ≥ 128 are true).
    pub fn load(path: impl AsRef<Path>, camera: CameraView) -> Result<Self> {
        Self::new(BinaryImage::load_png(path)?, camera)
    }

    /// Mask value at the pixel nearest to `p` (half-way rounds up); false
    /// outside the image.
    pub fn lookup(&self, p: &Vector2<f64>) -> bool {
        let x = (p.x + 0.5).floor();
        let y = (p.y + 0.5).floor();
        if !(x >= 0.0 && y >= 0.0 && x < self.image.width() as f64 && y < self.image.height() as f64) {
            return false;
        }
        self.image.get(x as usize, y as usize)
    }
}

/// `[u, v, w]ᵀ = K [R | T] [x, y, z, 1]ᵀ`, returning `(u/w, v/w)`, or
/// `None` when the point is at or behind the camera (`w ≤ 0`).
pub fn project_vertex(
    k: &Intrinsics,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    vertex: &Point3<f64>,
) -> Option<Vector2<f64>> {
    let kmat = Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0);
    let uvw = kmat * (rotation * vertex.coords + translation);
    if uvw.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(uvw.x / uvw.z, uvw.y / uvw.z))
}

/// Faces of `mesh` whose three vertices, taken from `keyframe`, all project
/// in front of the mask camera onto true mask pixels. No occlusion test.
pub fn select_faces(mesh: &Mesh, keyframe: &Mesh, mask: &Mask) -> Result<BTreeSet<usize>> {
    mesh.check_same_topology(keyframe)?;
    let cam = &mask.camera;
    let inside: Vec<bool> = keyframe
        .vertices
        .iter()
        .map(|v| {
            project_vertex(&cam.intrinsics, &cam.rotation, &cam.translation, v).is_some_and(|p| mask.lookup(&p))
        })
        .collect();
    Ok(mesh
        .faces
        .iter()
        .enumerate()
        .filter(|(_, f)| f.iter().all(|&v| inside[v as usize]))
        .map(|(i, _)| i)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use proptest::prelude::*;

    fn front_camera(size: usize) -> CameraView {
        let k = Intrinsics::from_vertical_fov(60f64.to_radians(), size, size);
        CameraView::look_at("cam00", Point3::new(0.0, 0.0, 2.0), Point3::origin(), Vector3::y(), k, size, size).unwrap()
    }

    #[test]
    fn projection_examples() {
        let k = Intrinsics { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0 };
        let (r, t) = (Matrix3::identity(), Vector3::zeros());
        assert_eq!(project_vertex(&k, &r, &t, &Point3::new(0.0, 0.0, 2.0)), Some(Vector2::new(50.0, 50.0)));
        assert_eq!(project_vertex(&k, &r, &t, &Point3::new(1.0, 0.0, 2.0)), Some(Vector2::new(100.0, 50.0)));
        assert_eq!(project_vertex(&k, &r, &t, &Point3::new(0.0, 0.0, -1.0)), None);
    }

    #[test]
    fn all_true_and_all_false_masks() {
        let quad = synthetic::quad(1.0, None);
        let cam = front_camera(64);
        let all = Mask::new(BinaryImage::filled(64, 64, true), cam.clone()).unwrap();
        assert_eq!(select_faces(&quad, &quad, &all).unwrap().len(), 2);
        let none = Mask::new(BinaryImage::filled(64, 64, false), cam).unwrap();
        assert!(select_faces(&quad, &quad, &none).unwrap().is_empty());
    }

    #[test]
    fn mask_over_one_face_selects_it() {
        let quad = synthetic::quad(1.0, None);
        let cam = front_camera(64);
        // paint the projected triangle of face 0, with its vertices' pixels
        let tri: Vec<Vector2<f64>> = quad.faces[0]
            .iter()
            .map(|&v| cam.project_point(&quad.vertices[v as usize]).unwrap())
            .collect();
        let mut img = BinaryImage::new(64, 64);
        let edge = |a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        for y in 0..64 {
            for x in 0..64 {
                let p = Vector2::new(x as f64, y as f64);
                let e = [edge(&tri[0], &tri[1], &p), edge(&tri[1], &tri[2], &p), edge(&tri[2], &tri[0], &p)];
                if e.iter().all(|&v| v >= 0.0) || e.iter().all(|&v| v <= 0.0) {
                    img.set(x, y, true);
                }
            }
        }
        for p in &tri {
            img.set((p.x + 0.5).floor() as usize, (p.y + 0.5).floor() as usize, true);
        }
        // vertex 2 is shared; clear face 1's private vertex pixel
        let private = cam.project_point(&quad.vertices[3]).unwrap();
        img.set((private.x + 0.5).floor() as usize, (private.y + 0.5).floor() as usize, false);
        let mask = Mask::new(img, cam).unwrap();
        assert_eq!(select_faces(&quad, &quad, &mask).unwrap(), BTreeSet::from([0]));
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(Mask::new(BinaryImage::new(10, 10), front_camera(12)).is_err());
    }

    proptest! {
        #[test]
        fn growing_the_mask_never_shrinks_selection(seed in 0u64..1000, extra in 0usize..400) {
            let mesh = synthetic::icosphere(2, 0.8);
            let cam = front_camera(48);
            let mut img = BinaryImage::new(48, 48);
            let mut s = seed;
            for _ in 0..600 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                img.set(((s >> 33) % 48) as usize, ((s >> 17) % 48) as usize, true);
            }
            let small = select_faces(&mesh, &mesh, &Mask::new(img.clone(), cam.clone()).unwrap()).unwrap();
            for _ in 0..extra {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                img.set(((s >> 33) % 48) as usize, ((s >> 17) % 48) as usize, true);
            }
            let large = select_faces(&mesh, &mesh, &Mask::new(img, cam).unwrap()).unwrap();
            prop_assert!(small.is_subset(&large));
        }

        #[test]
        fn rigid_motion_keeps_selection(ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0, tx in -2.0f64..2.0) {
            let mesh = synthetic::icosphere(2, 0.8);
            let cam = front_camera(48);
            let img = {
                let mut m = BinaryImage::new(48, 48);
                for y in 10..30 { for x in 5..40 { m.set(x, y, true); } }
                m
            };
            let base = select_faces(&mesh, &mesh, &Mask::new(img.clone(), cam.clone()).unwrap()).unwrap();
            let q = nalgebra::Rotation3::from_euler_angles(ax, ay, az);
            let t = Vector3::new(tx, 0.5, -1.0);
            let moved = mesh.transformed(&q, &t);
            let mcam = cam.transformed(&q, &t);
            let after = select_faces(&moved, &moved, &Mask::new(img, mcam).unwrap()).unwrap();
            prop_assert_eq!(base, after);
        }
    }
}
