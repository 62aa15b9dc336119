//! Driving avatars with keyframe meshes, the spherical camera rig, a
//! textured-mesh renderer for targets, and training-dataset generation.

mod animation;
mod dataset;
mod mesh_render;
mod rig;

pub use animation::{Animation, AnimationManifest, ManifestEntry};
pub use dataset::{generate_dataset, load_dataset, DatasetKeyframe, DatasetManifest, DatasetView, LoadedDataset};
pub use mesh_render::render_mesh;
pub use rig::{build_camera_rig, orbit_path, CameraRig, RigFile, RigCamera};

use crate::error::Result;
use crate::gaussian::GaussianParams;
use crate::hierarchy::AvatarHierarchy;
use crate::mesh::Mesh;

/// World-space Gaussians of `h` posed on `keyframe`, in Gaussian id order.
pub fn pose_avatar(h: &AvatarHierarchy, keyframe: &Mesh) -> Result<Vec<GaussianParams>> {
    h.pose(keyframe)
}

/// Default vertical field of view of rig cameras (radians).
pub const DEFAULT_FOV_Y: f64 = std::f64::consts::FRAC_PI_3;
/// Default rig radius in meters.
pub const DEFAULT_RIG_RADIUS: f64 = 2.0;
