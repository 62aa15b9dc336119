//! On-disk avatar directories.
//!
//! ```text
//! avatar.ply       rest-pose world Gaussians (32-bit floats, viewer layout)
//! embedded.ply     local Gaussians with anchor, level and flags (64-bit)
//! hierarchy.json   refinement tree
//! mesh.obj         rest mesh, plus mesh.mtl / mesh.png when textured
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hierarchy::AvatarHierarchy;
use crate::mesh::Mesh;
use crate::ply;

pub const WORLD_PLY: &str = "avatar.ply";
pub const EMBEDDED_PLY: &str = "embedded.ply";
pub const HIERARCHY_JSON: &str = "hierarchy.json";
pub const MESH_OBJ: &str = "mesh.obj";

pub fn save_avatar(h: &AvatarHierarchy, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    if h.mesh.has_texture() {
        h.mesh.save_obj_with_texture(dir, "mesh")?;
    } else {
        let mut bare = (*h.mesh).clone();
        bare.texture_path = None;
        bare.save_obj(dir.join(MESH_OBJ))?;
    }
    ply::export_embedded(&h.gaussians, dir.join(EMBEDDED_PLY))?;
    h.save_json(dir.join(HIERARCHY_JSON))?;
    ply::export_ply(&h.rest_gaussians(), dir.join(WORLD_PLY))
}

pub fn load_avatar(dir: impl AsRef<Path>) -> Result<AvatarHierarchy> {
    let dir = dir.as_ref();
    let mesh = Mesh::load_obj(dir.join(MESH_OBJ))?;
    let gaussians = ply::import_embedded(dir.join(EMBEDDED_PLY))?;
    AvatarHierarchy::from_parts(mesh, gaussians, dir.join(HIERARCHY_JSON))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn directory_round_trip() {
        let mesh = synthetic::icosphere(1, 0.5).with_texture(synthetic::wave_texture(16, 1.0));
        let mut h = AvatarHierarchy::initialize_level0(mesh).unwrap();
        h.mark_level_optimized(0);
        h.subdivide(&[0, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_avatar(&h, dir.path()).unwrap();
        let back = load_avatar(dir.path()).unwrap();
        assert_eq!(back.gaussians, h.gaussians);
        assert_eq!(back.roots, h.roots);
        assert_eq!(back.mesh.vertices, h.mesh.vertices);
        assert!(back.mesh.has_texture());
        assert_eq!(ply::import_ply(dir.path().join(WORLD_PLY)).unwrap().len(), h.len());
    }

    #[test]
    fn untextured_mesh_round_trip() {
        let h = AvatarHierarchy::initialize_level0(synthetic::quad(1.0, None)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_avatar(&h, dir.path()).unwrap();
        assert_eq!(load_avatar(dir.path()).unwrap().len(), 6);
    }
}
