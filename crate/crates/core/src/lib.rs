//! Drivable, level-of-detail Gaussian-splat avatars.
//!
//! Gaussians are embedded in the local frames of a triangle mesh's faces,
//! optimized against multi-view renders with a staged freeze-and-refine
//! schedule, and re-posed by recomputing face frames on deformed keyframes.
//!
//! The main entry points are:
//!
//! * [`mesh`]: the triangle mesh, face frames and area scale factors.
//! * [`gaussian`]: splat parameters, covariance, and the local/world transform.
//! * [`hierarchy`]: level-0 initialization, subdivision and Gaussian accounting.
//! * [`raster`]: tile-based forward splatting and its backward pass.
//! * [`optim`]: the L1 + D-SSIM loss, the adaptive step rule and staged training.
//! * [`mask`]: mask-driven face selection for selective enhancement.
//! * [`drive`]: posing, the camera rig, mesh rendering and dataset generation.
//! * [`metrics`] and [`bench`]: image quality metrics and the render-cost benchmark.

pub mod avatar;
pub mod bench;
pub mod drive;
pub mod error;
pub mod gaussian;
pub mod hierarchy;
pub mod image;
pub mod mask;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod ply;
pub mod raster;
pub mod sh;
pub mod synthetic;

pub use crate::error::{Error, Result};
pub use crate::gaussian::{EmbeddedGaussian, GaussianParams};
pub use crate::hierarchy::{gaussian_count, AnchorFace, AvatarHierarchy};
pub use crate::image::Image;
pub use crate::mesh::{FaceFrame, Mesh};
pub use crate::raster::{CameraView, Intrinsics, RenderConfig};

/// Environment variable capping worker parallelism.
pub const THREADS_ENV: &str = "LODSPLAT_THREADS";

/// Configure the global worker pool from `LODSPLAT_THREADS`, if set.
///
/// Returns the number of threads in effect. Calling this more than once is
/// harmless; only the first successful configuration takes effect.
pub fn configure_threads() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}
