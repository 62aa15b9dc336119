use std::fs;
use std::path::Path;

use nalgebra::{Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Keyframe vertex positions sharing the rest mesh's topology.
#[derive(Debug, Clone)]
pub struct Animation {
    pub frames: Vec<Vec<Point3<f64>>>,
    /// Seconds, strictly increasing.
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub time: f64,
}

/// `manifest.json` of an animation directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationManifest {
    pub keyframes: Vec<ManifestEntry>,
}

impl Animation {
    pub fn new(frames: Vec<Vec<Point3<f64>>>, times: Vec<f64>) -> Result<Self> {
        if frames.len() != times.len() {
            return Err(Error::Config(format!("{} keyframes but {} timestamps", frames.len(), times.len())));
        }
        if let Some(first) = frames.first() {
            if let Some(bad) = frames.iter().position(|f| f.len() != first.len()) {
                return Err(Error::TopologyMismatch(format!(
                    "keyframe {bad} has {} vertices, keyframe 0 has {}",
                    frames[bad].len(),
                    first.len()
                )));
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("keyframe timestamps must be strictly increasing".into()));
        }
        Ok(Self { frames, times })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Keyframe `i` as a mesh with the rest mesh's topology and UVs.
    pub fn keyframe_mesh(&self, rest: &Mesh, i: usize) -> Result<Mesh> {
        rest.with_positions(self.frames[i].clone())
    }

    /// A smooth procedural motion: the mesh sways, twists about the vertical
    /// axis proportionally to height, and breathes slightly.
    pub fn procedural(rest: &Mesh, count: usize, fps: f64) -> Self {
        let (center, radius) = rest.extent();
        let radius = radius.max(1e-9);
        let frames = (0..count)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / count.max(1) as f64;
                let sway = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.15 * phase.sin());
                let breathe = 1.0 + 0.03 * (2.0 * phase).sin();
                rest.vertices
                    .iter()
                    .map(|p| {
                        let d = p - center;
                        let h = d.y / radius;
                        let twist = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.4 * h * phase.sin());
                        let mut q = twist * d;
                        q.x *= breathe;
                        q.z *= breathe;
                        center + sway * q
                    })
                    .collect()
            })
            .collect();
        let times = (0..count).map(|i| i as f64 / fps).collect();
        Self { frames, times }
    }

    /// Read `manifest.json` and the OBJ files it lists.
    pub fn load_dir(dir: impl AsRef<Path>, rest: &Mesh) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: AnimationManifest = serde_json::from_str(&text)?;
        let mut frames = Vec::with_capacity(manifest.keyframes.len());
        let mut times = Vec::with_capacity(manifest.keyframes.len());
        for entry in &manifest.keyframes {
            let mesh = Mesh::load_obj(dir.join(&entry.file))?;
            rest.check_same_topology(&mesh)?;
            frames.push(mesh.vertices);
            times.push(entry.time);
        }
        Self::new(frames, times)
    }

    /// Write one OBJ per keyframe plus `manifest.json`.
    pub fn save_dir(&self, dir: impl AsRef<Path>, rest: &Mesh) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut keyframes = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let file = format!("keyframe_{i:04}.obj");
            let mut mesh = self.keyframe_mesh(rest, i)?;
            mesh.texture = None;
            mesh.texture_path = None;
            mesh.save_obj(dir.join(&file))?;
            keyframes.push(ManifestEntry { file, time: self.times[i] });
        }
        let text = serde_json::to_string_pretty(&AnimationManifest { keyframes })?;
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn validates_inputs() {
        let p = vec![Point3::origin(); 3];
        assert!(Animation::new(vec![p.clone(), p.clone()], vec![0.0, 1.0]).is_ok());
        assert!(Animation::new(vec![p.clone(), p.clone()], vec![1.0, 1.0]).is_err());
        assert!(Animation::new(vec![p.clone(), vec![Point3::origin(); 2]], vec![0.0, 1.0]).is_err());
        assert!(Animation::new(vec![p], vec![]).is_err());
    }

    #[test]
    fn directory_round_trip() {
        let rest = synthetic::icosphere(1, 0.5);
        let anim = Animation::procedural(&rest, 4, 30.0);
        let dir = tempfile::tempdir().unwrap();
        anim.save_dir(dir.path(), &rest).unwrap();
        let back = Animation::load_dir(dir.path(), &rest).unwrap();
        assert_eq!(back.times, anim.times);
        assert_eq!(back.frames, anim.frames);
    }
}
