//! Render-cost benchmark over a camera path.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::drive::orbit_path;
use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::hierarchy::{AvatarHierarchy, RootPose};
use crate::mesh::Mesh;
use crate::raster::{render, CameraView, RenderConfig};

pub const DEFAULT_FRAMES: usize = 300;
pub const DEFAULT_ORBIT_RADIUS: f64 = 2.0;

/// An avatar and the keyframes used to drive it in dynamic mode.
#[derive(Debug, Clone)]
pub struct BenchAvatar {
    pub id: String,
    pub hierarchy: Arc<AvatarHierarchy>,
    /// Keyframe meshes cycled through in dynamic mode; empty means the rest
    /// mesh is re-posed every frame.
    pub keyframes: Vec<Arc<Mesh>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub radius: f64,
    pub render: RenderConfig,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            frames: DEFAULT_FRAMES,
            width: 512,
            height: 512,
            radius: DEFAULT_ORBIT_RADIUS,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub avatar: String,
    /// Gaussians in one copy of the avatar.
    pub gaussians: usize,
    pub dynamic: bool,
    pub multiplicity: usize,
    pub mean_ms: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Lateral offsets for `n` side-by-side copies, spaced by `spacing`.
fn copy_offsets(n: usize, spacing: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|i| Vector3::new((i as f64 - (n as f64 - 1.0) / 2.0) * spacing, 0.0, 0.0))
        .collect()
}

struct Scene<'a> {
    avatar: &'a BenchAvatar,
    offsets: Vec<Vector3<f64>>,
    dynamic: bool,
    /// Posed once up front in static mode.
    cached: Vec<GaussianParams>,
}

impl<'a> Scene<'a> {
    fn new(avatar: &'a BenchAvatar, offsets: Vec<Vector3<f64>>, dynamic: bool) -> Self {
        let cached = if dynamic {
            Vec::new()
        } else {
            let rest = avatar.hierarchy.rest_gaussians();
            offsets
                .iter()
                .flat_map(|off| rest.iter().map(move |g| GaussianParams { position: g.position + off, ..*g }))
                .collect()
        };
        Self { avatar, offsets, dynamic, cached }
    }

    fn posed(&self, frame: usize) -> Result<Vec<GaussianParams>> {
        let h = &self.avatar.hierarchy;
        let mut out = Vec::with_capacity(h.len() * self.offsets.len());
        for (c, off) in self.offsets.iter().enumerate() {
            let mesh = match self.avatar.keyframes.len() {
                0 => h.mesh.clone(),
                n => self.avatar.keyframes[(frame + c) % n].clone(),
            };
            let moved = mesh.transformed(&Rotation3::identity(), off);
            let poses: Vec<Option<RootPose>> = h.root_poses(&moved)?;
            out.extend(h.pose_with(&poses));
        }
        Ok(out)
    }
}

fn time_frame(scene: &Scene, frame: usize, cam: &CameraView, cfg: &RenderConfig) -> Result<f64> {
    let start = Instant::now();
    let img = if scene.dynamic {
        render(&scene.posed(frame)?, cam, cfg)
    } else {
        render(&scene.cached, cam, cfg)
    };
    std::hint::black_box(img);
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Render every avatar along a horizontal orbit, `multiplicity` copies side
/// by side, and report the mean wall-clock time per frame.
///
/// Dynamic mode re-poses every copy from its keyframe on each frame; static
/// mode poses once up front and only renders. For each avatar the static and dynamic frames
/// are interleaved so that machine noise affects both alike.
pub fn bench(
    avatars: &[BenchAvatar],
    modes: &[bool],
    multiplicity: usize,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    if !(1..=3).contains(&multiplicity) {
        return Err(Error::Config(format!("multiplicity must be 1..=3, got {multiplicity}")));
    }
    if opts.frames == 0 {
        return Err(Error::Config("bench needs at least one frame".into()));
    }
    let path = orbit_path(opts.radius, opts.frames, opts.width, opts.height)?;
    let mut report = BenchReport::default();
    for avatar in avatars {
        let (_, r) = avatar.hierarchy.mesh.extent();
        let offsets = copy_offsets(multiplicity, 2.2 * r);
        let scenes: Vec<Scene> = modes.iter().map(|&dynamic| Scene::new(avatar, offsets.clone(), dynamic)).collect();
        // warm-up
        for s in &scenes {
            time_frame(s, 0, &path[0], &opts.render)?;
        }
        let mut totals = vec![0.0; scenes.len()];
        for (f, cam) in path.iter().enumerate() {
            for (s, scene) in scenes.iter().enumerate() {
                totals[s] += time_frame(scene, f, cam, &opts.render)?;
            }
        }
        for (s, &dynamic) in modes.iter().enumerate() {
            report.rows.push(BenchRow {
                avatar: avatar.id.clone(),
                gaussians: avatar.hierarchy.len(),
                dynamic,
                multiplicity,
                mean_ms: (totals[s] / opts.frames as f64).max(f64::MIN_POSITIVE),
                frames: opts.frames,
            });
        }
    }
    Ok(report)
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("avatar,gaussians,mode,multiplicity,mean_ms,frames\n");
        for r in &self.rows {
            let mode = if r.dynamic { "dynamic" } else { "static" };
            let _ = writeln!(out, "{},{},{mode},{},{:.4},{}", r.avatar, r.gaussians, r.multiplicity, r.mean_ms, r.frames);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Spearman correlation between Gaussian count (times multiplicity) and
    /// mean frame time over all rows.
    pub fn count_time_correlation(&self) -> f64 {
        let x: Vec<f64> = self.rows.iter().map(|r| (r.gaussians * r.multiplicity) as f64).collect();
        let y: Vec<f64> = self.rows.iter().map(|r| r.mean_ms).collect();
        spearman(&x, &y)
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// NaN when either input has fewer than two distinct values.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]), -1.0);
        // classic formula 1 - 6Σd²/(n(n²-1)) without ties: d = (0, 0, 1, -1, 0)
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 4.0, 3.0, 5.0]);
        assert!((r - (1.0 - 6.0 * 2.0 / (5.0 * 24.0))).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn report_rows_and_counts() {
        let mesh = synthetic::icosphere(1, 0.5).with_texture(synthetic::wave_texture(8, 1.0));
        let h = Arc::new(AvatarHierarchy::initialize_level0(mesh).unwrap());
        let avatar = BenchAvatar { id: "a".into(), hierarchy: h.clone(), keyframes: vec![] };
        let opts = BenchOptions { frames: 3, width: 32, height: 32, ..Default::default() };
        let report = bench(&[avatar], &[false, true], 2, &opts).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert_eq!(r.gaussians, h.len());
            assert!(r.mean_ms > 0.0);
            assert_eq!(r.frames, 3);
        }
        assert!(report.to_csv().starts_with("avatar,gaussians,mode"));
        assert!(bench(&[], &[false], 4, &opts).is_err());
    }

    #[test]
    fn copies_are_offset_symmetrically() {
        let o = copy_offsets(3, 1.0);
        assert_eq!(o, vec![Vector3::new(-1.0, 0.0, 0.0), Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]);
        assert_eq!(copy_offsets(1, 5.0), vec![Vector3::zeros()]);
    }
}
