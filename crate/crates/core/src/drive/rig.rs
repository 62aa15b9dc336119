use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::DEFAULT_FOV_Y;
use crate::error::{Error, Result};
use crate::raster::{CameraView, Intrinsics};
use crate::synthetic::icosphere_points;

/// Cameras on a sphere around the origin, all looking at the origin.
#[derive(Debug, Clone)]
pub struct CameraRig {
    pub views: Vec<CameraView>,
    pub radius: f64,
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    pub id: String,
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// On-disk form of a rig (`cameras.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub image_size: [usize; 2],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub cameras: Vec<RigCamera>,
}

/// Unit directions for `count` cameras: the 42 vertices of a once-subdivided
/// icosahedron when `count == 42`, a Fibonacci spiral otherwise.
fn directions(count: usize) -> Vec<Vector3<f64>> {
    if count == 42 {
        return icosphere_points(1).0.into_iter().map(|p| p.coords).collect();
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// `count` cameras at distance `radius` from the origin with a 60° vertical
/// field of view, ids `cam00`, `cam01`, ...
pub fn build_camera_rig(radius: f64, count: usize, width: usize, height: usize) -> Result<CameraRig> {
    if !(radius > 0.0) || count == 0 || width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "camera rig needs positive radius, count and size (got {radius}, {count}, {width}x{height})"
        )));
    }
    let intrinsics = Intrinsics::from_vertical_fov(DEFAULT_FOV_Y, width, height);
    let views = directions(count)
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            CameraView::look_at(
                format!("cam{i:02}"),
                Point3::from(d * radius),
                Point3::origin(),
                Vector3::y(),
                intrinsics,
                width,
                height,
            )
        })
        .collect::<Result<_>>()?;
    Ok(CameraRig { views, radius, intrinsics, width, height })
}

/// `frames` cameras circling the vertical axis at `radius` and height 0.
pub fn orbit_path(radius: f64, frames: usize, width: usize, height: usize) -> Result<Vec<CameraView>> {
    let intrinsics = Intrinsics::from_vertical_fov(DEFAULT_FOV_Y, width, height);
    (0..frames)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / frames.max(1) as f64;
            CameraView::look_at(
                format!("orbit{i:03}"),
                Point3::new(radius * a.sin(), 0.0, radius * a.cos()),
                Point3::origin(),
                Vector3::y(),
                intrinsics,
                width,
                height,
            )
        })
        .collect()
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CameraView> {
        self.views.iter().find(|v| v.id == id)
    }

    /// Smallest angle between two camera directions as seen from the origin.
    pub fn min_pairwise_angle(&self) -> f64 {
        let dirs: Vec<Vector3<f64>> = self.views.iter().map(|v| v.center().coords.normalize()).collect();
        let mut best = f64::INFINITY;
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                best = best.min(dirs[i].dot(&dirs[j]).clamp(-1.0, 1.0).acos());
            }
        }
        best
    }

    pub fn to_file(&self) -> RigFile {
        RigFile {
            image_size: [self.width, self.height],
            fx: self.intrinsics.fx,
            fy: self.intrinsics.fy,
            cx: self.intrinsics.cx,
            cy: self.intrinsics.cy,
            cameras: self
                .views
                .iter()
                .map(|v| {
                    let r = &v.rotation;
                    RigCamera {
                        id: v.id.clone(),
                        rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
                        translation: [v.translation.x, v.translation.y, v.translation.z],
                    }
                })
                .collect(),
        }
    }

    pub fn from_file(file: &RigFile) -> Result<Self> {
        let [width, height] = file.image_size;
        let intrinsics = Intrinsics { fx: file.fx, fy: file.fy, cx: file.cx, cy: file.cy };
        let views: Vec<CameraView> = file
            .cameras
            .iter()
            .map(|c| {
                CameraView::new(
                    c.id.clone(),
                    intrinsics,
                    Matrix3::from_row_slice(&c.rotation),
                    Vector3::from(c.translation),
                    width,
                    height,
                )
            })
            .collect::<Result<_>>()?;
        let radius = views.first().map_or(0.0, |v| v.center().coords.norm());
        Ok(Self { views, radius, intrinsics, width, height })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_file(&serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rig_geometry() {
        for count in [8, 24, 42] {
            let rig = build_camera_rig(2.0, count, 64, 48).unwrap();
            assert_eq!(rig.len(), count);
            assert!(rig.min_pairwise_angle() > 0.3, "count {count}: {}", rig.min_pairwise_angle());
            for v in &rig.views {
                assert!((v.center().coords.norm() - 2.0).abs() < 1e-12);
                let p = v.project_point(&Point3::origin()).unwrap();
                assert!((p.x - 31.5).abs() < 1e-9 && (p.y - 23.5).abs() < 1e-9);
            }
        }
        assert_eq!(build_camera_rig(2.0, 42, 8, 8).unwrap().views[7].id, "cam07");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_camera_rig(0.0, 4, 8, 8).is_err());
        assert!(build_camera_rig(1.0, 0, 8, 8).is_err());
    }

    #[test]
    fn file_round_trip() {
        let rig = build_camera_rig(2.0, 42, 32, 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        rig.save(&path).unwrap();
        let back = CameraRig::load(&path).unwrap();
        assert_eq!(back.to_file(), rig.to_file());
        assert!((back.radius - 2.0).abs() < 1e-12);
    }
}
