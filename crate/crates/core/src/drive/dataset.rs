use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::animation::Animation;
use super::mesh_render::render_mesh;
use super::rig::CameraRig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::Mesh;
use crate::optim::KeyframeViews;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetView {
    pub keyframe: usize,
    pub camera: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetKeyframe {
    /// Frame index within the source animation.
    pub frame: usize,
    pub time: f64,
    pub mesh: String,
}

/// `manifest.json` of a rendered dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub rest_mesh: String,
    pub keyframes: Vec<DatasetKeyframe>,
    pub views: Vec<DatasetView>,
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub rest: Mesh,
    pub rig: CameraRig,
    pub keyframes: Vec<KeyframeViews>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Render every rig camera for each selected animation frame of the textured
/// `rest` mesh and write the results under `out_dir`:
/// `images/frame{i:04}_cam{j:02}.png`, `keyframes/*.obj`, `rest/mesh.obj`
/// (with its texture), `cameras.json` and `manifest.json`.
pub fn generate_dataset(
    rest: &Mesh,
    anim: &Animation,
    rig: &CameraRig,
    frames: &[usize],
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out = out_dir.as_ref();
    if frames.is_empty() || rig.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = frames.iter().find(|&&f| f >= anim.len()) {
        return Err(Error::Config(format!("frame {bad} out of range (animation has {})", anim.len())));
    }
    for sub in ["images", "keyframes", "rest"] {
        create_dir(&out.join(sub))?;
    }
    let rest_obj = rest.save_obj_with_texture(out.join("rest"), "mesh")?;
    let mut keyframes = Vec::with_capacity(frames.len());
    let mut meshes = Vec::with_capacity(frames.len());
    for &f in frames {
        let mut mesh = anim.keyframe_mesh(rest, f)?;
        let file = format!("keyframes/frame{f:04}.obj");
        let mut bare = mesh.clone();
        bare.texture = None;
        bare.texture_path = None;
        bare.save_obj(out.join(&file))?;
        mesh.texture = rest.texture.clone();
        meshes.push(mesh);
        keyframes.push(DatasetKeyframe { frame: f, time: anim.times[f], mesh: file });
    }
    let jobs: Vec<(usize, usize)> = (0..frames.len())
        .flat_map(|k| (0..rig.len()).map(move |c| (k, c)))
        .collect();
    let views = jobs
        .par_iter()
        .map(|&(k, c)| {
            let cam = &rig.views[c];
            let file = format!("images/frame{:04}_cam{c:02}.png", frames[k]);
            render_mesh(&meshes[k], cam)?.save_png(out.join(&file))?;
            Ok(DatasetView { keyframe: k, camera: cam.id.clone(), file })
        })
        .collect::<Result<Vec<_>>>()?;
    rig.save(out.join("cameras.json"))?;
    let manifest = DatasetManifest {
        rest_mesh: rest_obj
            .strip_prefix(out)
            .map(Path::to_path_buf)
            .unwrap_or(rest_obj.clone())
            .to_string_lossy()
            .into_owned(),
        keyframes,
        views,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Read a dataset written by [`generate_dataset`].
///
/// Cameras whose id is in `exclude` are left out of every keyframe, which
/// holds them back for evaluation.
pub fn load_dataset(dir: impl AsRef<Path>, exclude: &[&str]) -> Result<LoadedDataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let rig = CameraRig::load(dir.join("cameras.json"))?;
    let rest = Mesh::load_obj(dir.join(&manifest.rest_mesh))?;
    let mut keyframes = manifest
        .keyframes
        .iter()
        .map(|k| {
            let mesh = Mesh::load_obj(dir.join(&k.mesh))?;
            rest.check_same_topology(&mesh)?;
            let mesh = rest.with_positions(mesh.vertices)?;
            Ok(KeyframeViews { mesh: Arc::new(mesh), views: Vec::new() })
        })
        .collect::<Result<Vec<_>>>()?;
    for v in &manifest.views {
        if exclude.contains(&v.camera.as_str()) {
            continue;
        }
        let cam = rig
            .get(&v.camera)
            .ok_or_else(|| Error::Config(format!("view {} names unknown camera {}", v.file, v.camera)))?;
        let kf = keyframes
            .get_mut(v.keyframe)
            .ok_or_else(|| Error::Config(format!("view {} names unknown keyframe {}", v.file, v.keyframe)))?;
        let target = Image::load_png(dir.join(&v.file))?;
        if target.width() != cam.width || target.height() != cam.height {
            return Err(Error::DimensionMismatch(format!(
                "{} is {}x{}, camera {} is {}x{}",
                v.file,
                target.width(),
                target.height(),
                cam.id,
                cam.width,
                cam.height
            )));
        }
        kf.views.push(cam.clone().with_target(target));
    }
    Ok(LoadedDataset { rest, rig, keyframes })
}
