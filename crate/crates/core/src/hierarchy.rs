//! Level-0 initialization, hierarchical subdivision and Gaussian accounting.
//!
//! Every Gaussian is anchored to a root face of the rest mesh and stores its
//! position, rotation and scale in that root's local frame. Refinement adds
//! virtual anchor faces inside a root; they never get a drive frame of their
//! own, so posing costs one frame per root face at any level of detail.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{local_to_world, EmbeddedGaussian, GaussianParams};
use crate::mesh::{face_scale_factor, FaceFrame, Mesh};
use crate::sh::{rgb_to_dc, ShRotation, SH_BASIS};

/// Gaussians owned by one root face refined to `level`: `(4^(level+1) - 1) / 3`.
pub fn nodes_per_face(level: u32) -> u64 {
    (4u64.pow(level + 1) - 1) / 3
}

/// `V + Σ_f (4^(L(f)+1) - 1) / 3` for per-face refinement levels.
pub fn gaussian_count(vertices: u64, face_levels: &[u32]) -> u64 {
    vertices + face_levels.iter().map(|&l| nodes_per_face(l)).sum::<u64>()
}

/// [`gaussian_count`] with every face at the same level.
pub fn uniform_gaussian_count(vertices: u64, faces: u64, level: u32) -> u64 {
    vertices + faces * nodes_per_face(level)
}

/// A (possibly virtual) triangle of the refinement tree owning one center Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorFace {
    pub root: u32,
    /// Corners in the root face's local frame.
    pub corners: [Vector3<f64>; 3],
    pub level: u32,
    pub center_gaussian: u32,
}

impl AnchorFace {
    pub fn centroid(&self) -> Vector3<f64> {
        (self.corners[0] + self.corners[1] + self.corners[2]) / 3.0
    }

    pub fn mean_edge_length(&self) -> f64 {
        let [a, b, c] = &self.corners;
        ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0
    }
}

/// Refinement state of one root face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootFace {
    /// Anchor faces by level; `levels[l]` holds `4^l` entries.
    pub levels: Vec<Vec<AnchorFace>>,
    /// Whether the Gaussians of the deepest level have been trained.
    pub optimized: bool,
}

impl RootFace {
    pub fn level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }
}

/// Frame and scale factor of one root face in some pose.
#[derive(Debug, Clone)]
pub struct RootPose {
    pub frame: FaceFrame,
    pub quat: UnitQuaternion<f64>,
    pub sh: ShRotation,
    pub k: f64,
}

#[derive(Serialize, Deserialize)]
struct HierarchyFile {
    vertex_count: usize,
    face_count: usize,
    vertex_gaussians: Vec<Option<u32>>,
    roots: Vec<Option<RootFace>>,
    gaussian_count: usize,
}

/// Gaussians embedded in a rest mesh together with their refinement tree.
#[derive(Debug, Clone)]
pub struct AvatarHierarchy {
    pub mesh: Arc<Mesh>,
    pub gaussians: Vec<EmbeddedGaussian>,
    /// Gaussian id of each mesh vertex; `None` for vertices with no valid face.
    pub vertex_gaussians: Vec<Option<u32>>,
    /// Per face of the rest mesh; `None` for degenerate faces.
    pub roots: Vec<Option<RootFace>>,
    rest_frames: Vec<Option<FaceFrame>>,
}

/// Texture-seeded initial parameters of a new Gaussian.
fn seed_params(mesh: &Mesh, root: usize, position: Vector3<f64>, edge: f64, bary: [f64; 3]) -> GaussianParams {
    let tangential = (0.5 * edge).max(1e-9);
    let mut sh = [[0.0; 3]; SH_BASIS];
    if let Some(rgb) = mesh.albedo_at(root, bary) {
        sh[0] = rgb.map(rgb_to_dc);
    }
    GaussianParams {
        position,
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale: Vector3::new(tangential.ln(), tangential.ln(), (0.1 * tangential).ln()),
        opacity_logit: 0.0,
        sh,
    }
}

/// Barycentric weights of the in-plane projection of `p` in the triangle
/// `corners`, clamped to the triangle.
fn plane_barycentric(corners: &[Vector3<f64>; 3], p: &Vector3<f64>) -> [f64; 3] {
    let (a, b, c) = (corners[0].xy(), corners[1].xy(), corners[2].xy());
    let q = p.xy();
    let v0 = b - a;
    let v1 = c - a;
    let v2 = q - a;
    let det = v0.x * v1.y - v1.x * v0.y;
    if det.abs() < 1e-300 {
        return [1.0 / 3.0; 3];
    }
    let l1 = (v2.x * v1.y - v1.x * v2.y) / det;
    let l2 = (v0.x * v2.y - v2.x * v0.y) / det;
    let mut w = [1.0 - l1 - l2, l1, l2].map(|v: f64| v.max(0.0));
    let sum: f64 = w.iter().sum();
    if sum <= 0.0 {
        return [1.0 / 3.0; 3];
    }
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

impl AvatarHierarchy {
    /// One Gaussian per mesh vertex followed by one per face center.
    ///
    /// Vertex Gaussians are anchored to their lowest-index non-degenerate
    /// incident face and have their position locked. Degenerate faces are
    /// skipped with a warning.
    pub fn initialize_level0(mesh: Mesh) -> Result<Self> {
        mesh.validate()?;
        let mesh = Arc::new(mesh);
        let rest_frames: Vec<Option<FaceFrame>> = (0..mesh.face_count())
            .map(|f| match mesh.face_frame(f) {
                Ok(fr) => Some(fr),
                Err(e) => {
                    warn!("skipping face {f}: {e}");
                    None
                }
            })
            .collect();

        let mut vertex_anchor: Vec<Option<(usize, usize)>> = vec![None; mesh.vertex_count()];
        for (f, face) in mesh.faces.iter().enumerate() {
            if rest_frames[f].is_none() {
                continue;
            }
            for (corner, &v) in face.iter().enumerate() {
                vertex_anchor[v as usize].get_or_insert((f, corner));
            }
        }

        let mut gaussians = Vec::with_capacity(mesh.vertex_count() + mesh.face_count());
        let mut vertex_gaussians = vec![None; mesh.vertex_count()];
        for (v, anchor) in vertex_anchor.iter().enumerate() {
            let Some((f, corner)) = *anchor else {
                warn!("vertex {v} has no valid incident face; no Gaussian created");
                continue;
            };
            let frame = rest_frames[f].as_ref().expect("valid face");
            let local = frame.to_local_point(&mesh.vertices[v]);
            let mut bary = [0.0; 3];
            bary[corner] = 1.0;
            let edge = mean_edge(&mesh, f);
            vertex_gaussians[v] = Some(gaussians.len() as u32);
            gaussians.push(EmbeddedGaussian {
                anchor: f as u32,
                local: seed_params(&mesh, f, local, edge, bary),
                level: 0,
                frozen: false,
                position_locked: true,
            });
        }

        let mut roots = Vec::with_capacity(mesh.face_count());
        for (f, frame) in rest_frames.iter().enumerate() {
            let Some(frame) = frame else {
                roots.push(None);
                continue;
            };
            let tri = mesh.triangle(f);
            let corners = tri.map(|p| frame.to_local_point(&p));
            let id = gaussians.len() as u32;
            gaussians.push(EmbeddedGaussian {
                anchor: f as u32,
                local: seed_params(&mesh, f, Vector3::zeros(), mean_edge(&mesh, f), [1.0 / 3.0; 3]),
                level: 0,
                frozen: false,
                position_locked: false,
            });
            roots.push(Some(RootFace {
                levels: vec![vec![AnchorFace {
                    root: f as u32,
                    corners,
                    level: 0,
                    center_gaussian: id,
                }]],
                optimized: false,
            }));
        }

        Ok(Self {
            mesh,
            gaussians,
            vertex_gaussians,
            roots,
            rest_frames,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Number of Gaussians predicted by the closed-form count.
    pub fn expected_count(&self) -> u64 {
        let vertices = self.vertex_gaussians.iter().flatten().count() as u64;
        let levels: Vec<u32> = self.roots.iter().flatten().map(RootFace::level).collect();
        gaussian_count(vertices, &levels)
    }

    /// Deepest refinement level over all root faces.
    pub fn current_level(&self) -> u32 {
        self.roots.iter().flatten().map(RootFace::level).max().unwrap_or(0)
    }

    pub fn root_level(&self, root: usize) -> Option<u32> {
        self.roots.get(root)?.as_ref().map(RootFace::level)
    }

    /// Indices of all non-degenerate root faces.
    pub fn valid_roots(&self) -> Vec<usize> {
        (0..self.roots.len()).filter(|&r| self.roots[r].is_some()).collect()
    }

    pub fn rest_frame(&self, root: usize) -> Option<&FaceFrame> {
        self.rest_frames.get(root)?.as_ref()
    }

    /// Record that the deepest-level Gaussians of every root at `level` are trained.
    pub fn mark_level_optimized(&mut self, level: u32) {
        for root in self.roots.iter_mut().flatten() {
            if root.level() == level {
                root.optimized = true;
            }
        }
    }

    pub fn mark_roots_optimized(&mut self, roots: &[usize]) {
        for &r in roots {
            if let Some(Some(root)) = self.roots.get_mut(r) {
                root.optimized = true;
            }
        }
    }

    fn check_roots(&self, roots: &BTreeSet<usize>) -> Result<()> {
        for &r in roots {
            match self.roots.get(r) {
                None => {
                    return Err(Error::InvalidLevel(format!(
                        "root face {r} out of range 0..{}",
                        self.roots.len()
                    )))
                }
                Some(None) => return Err(Error::InvalidLevel(format!("root face {r} is degenerate"))),
                Some(Some(_)) => {}
            }
        }
        Ok(())
    }

    /// Refine each selected root by one level.
    ///
    /// Every anchor face `(A, B, C)` of the root's deepest level, with center
    /// Gaussian at `c`, yields the anchor faces `(c, B, C)`, `(A, c, C)`,
    /// `(A, B, c)` and `(A, B, C)` one level deeper, each with a new center
    /// Gaussian at its centroid. All earlier Gaussians of the root, including
    /// vertex Gaussians anchored to it, become frozen.
    pub fn subdivide(&mut self, selected_roots: &[usize]) -> Result<()> {
        let selected: BTreeSet<usize> = selected_roots.iter().copied().collect();
        self.check_roots(&selected)?;
        for &r in &selected {
            let root = self.roots[r].as_ref().expect("checked");
            if !root.optimized {
                return Err(Error::NotOptimized { root: r, level: root.level() });
            }
        }
        self.subdivide_unchecked(&selected);
        Ok(())
    }

    fn subdivide_unchecked(&mut self, selected: &BTreeSet<usize>) {
        let mut is_selected = vec![false; self.roots.len()];
        for &r in selected {
            is_selected[r] = true;
        }
        for g in &mut self.gaussians {
            if is_selected[g.anchor as usize] {
                g.frozen = true;
            }
        }
        for &r in selected {
            let root = self.roots[r].as_ref().expect("checked");
            let level = root.level() + 1;
            let parents = root.levels.last().expect("level 0 exists").clone();
            let root_corners = root.levels[0][0].corners;
            let mut next = Vec::with_capacity(parents.len() * 4);
            for parent in &parents {
                let c = self.gaussians[parent.center_gaussian as usize].local.position;
                let [a, b, cc] = parent.corners;
                for corners in [[c, b, cc], [a, c, cc], [a, b, c], [a, b, cc]] {
                    let mut anchor = AnchorFace {
                        root: r as u32,
                        corners,
                        level,
                        center_gaussian: self.gaussians.len() as u32,
                    };
                    let centroid = anchor.centroid();
                    let bary = plane_barycentric(&root_corners, &centroid);
                    let local = seed_params(&self.mesh, r, centroid, anchor.mean_edge_length(), bary);
                    self.gaussians.push(EmbeddedGaussian {
                        anchor: r as u32,
                        local,
                        level,
                        frozen: false,
                        position_locked: false,
                    });
                    anchor.center_gaussian = self.gaussians.len() as u32 - 1;
                    next.push(anchor);
                }
            }
            let root = self.roots[r].as_mut().expect("checked");
            root.levels.push(next);
            root.optimized = false;
        }
    }

    /// Subdivide every valid root once.
    pub fn subdivide_all(&mut self) -> Result<()> {
        let roots = self.valid_roots();
        self.subdivide(&roots)
    }

    /// Refine `selected_roots` until each reaches `target_level`, calling
    /// `refine` after every subdivision so the new level can be trained
    /// before it is used as the next level's corners.
    ///
    /// Roots already at or beyond the target are an error. The first
    /// subdivision requires the roots to be optimized at their current level;
    /// `refine` is responsible for marking later levels optimized.
    pub fn enhance_with(
        &mut self,
        selected_roots: &[usize],
        target_level: u32,
        mut refine: impl FnMut(&mut Self, u32) -> Result<()>,
    ) -> Result<()> {
        let selected: BTreeSet<usize> = selected_roots.iter().copied().collect();
        self.check_roots(&selected)?;
        for &r in &selected {
            let level = self.root_level(r).expect("checked");
            if level >= target_level {
                return Err(Error::InvalidLevel(format!(
                    "root face {r} is already at level {level}, target {target_level}"
                )));
            }
        }
        loop {
            let pending: Vec<usize> = selected
                .iter()
                .copied()
                .filter(|&r| self.root_level(r).expect("checked") < target_level)
                .collect();
            if pending.is_empty() {
                return Ok(());
            }
            self.subdivide(&pending)?;
            let level = pending.iter().map(|&r| self.root_level(r).expect("checked")).min().unwrap_or(0);
            refine(self, level)?;
        }
    }

    /// [`Self::enhance_with`] without intermediate training: intermediate
    /// levels keep their initial parameters and are marked optimized.
    pub fn enhance(&mut self, selected_roots: &[usize], target_level: u32) -> Result<()> {
        self.enhance_with(selected_roots, target_level, |h, _| {
            h.mark_roots_optimized(selected_roots);
            Ok(())
        })
    }

    /// Frames and scale factors of every valid root on `keyframe`.
    ///
    /// A root whose posed face is degenerate gets `k = 0` and keeps its rest
    /// orientation, so its Gaussians collapse onto the posed centroid.
    pub fn root_poses(&self, keyframe: &Mesh) -> Result<Vec<Option<RootPose>>> {
        self.mesh.check_same_topology(keyframe)?;
        (0..self.roots.len())
            .map(|r| {
                let Some(rest) = self.rest_frames[r] else {
                    return Ok(None);
                };
                let k = face_scale_factor(&self.mesh, keyframe, r)?;
                let frame = match keyframe.face_frame(r) {
                    Ok(f) if k > 0.0 => f,
                    _ => {
                        let [a, b, c] = keyframe.triangle(r);
                        FaceFrame {
                            origin: Point3::from((a.coords + b.coords + c.coords) / 3.0),
                            rotation: rest.rotation,
                        }
                    }
                };
                Ok(Some(RootPose {
                    quat: frame.quaternion(),
                    sh: ShRotation::from_matrix(&frame.rotation),
                    frame,
                    k,
                }))
            })
            .collect()
    }

    /// World-space Gaussians on `keyframe`, in Gaussian id order.
    pub fn pose(&self, keyframe: &Mesh) -> Result<Vec<GaussianParams>> {
        let poses = self.root_poses(keyframe)?;
        Ok(self.pose_with(&poses))
    }

    pub fn pose_with(&self, poses: &[Option<RootPose>]) -> Vec<GaussianParams> {
        self.gaussians
            .iter()
            .map(|g| {
                let p = poses[g.anchor as usize].as_ref().expect("gaussians anchor to valid roots");
                local_to_world(&g.local, &p.frame, &p.quat, &p.sh, p.k)
            })
            .collect()
    }

    /// World-space Gaussians in the rest pose.
    pub fn rest_gaussians(&self) -> Vec<GaussianParams> {
        let mesh = self.mesh.clone();
        self.pose(&mesh).expect("rest mesh matches itself")
    }

    /// Raw parameters of every Gaussian below `level`, in id order.
    pub fn raw_below_level(&self, level: u32) -> Vec<[f64; crate::gaussian::RAW_LEN]> {
        self.gaussians
            .iter()
            .filter(|g| g.level < level)
            .map(|g| g.local.to_raw())
            .collect()
    }

    /// Write the refinement tree as JSON (Gaussian parameters live in the PLY).
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = HierarchyFile {
            vertex_count: self.mesh.vertex_count(),
            face_count: self.mesh.face_count(),
            vertex_gaussians: self.vertex_gaussians.clone(),
            roots: self.roots.clone(),
            gaussian_count: self.gaussians.len(),
        };
        let text = serde_json::to_string(&file)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Rebuild a hierarchy from its rest mesh, Gaussians and JSON tree.
    pub fn from_parts(mesh: Mesh, gaussians: Vec<EmbeddedGaussian>, json_path: impl AsRef<Path>) -> Result<Self> {
        let path = json_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let file: HierarchyFile = serde_json::from_str(&text)?;
        if file.vertex_count != mesh.vertex_count() || file.face_count != mesh.face_count() {
            return Err(Error::TopologyMismatch(format!(
                "hierarchy expects V={} F={}, mesh has V={} F={}",
                file.vertex_count,
                file.face_count,
                mesh.vertex_count(),
                mesh.face_count()
            )));
        }
        if file.gaussian_count != gaussians.len() {
            return Err(Error::InvalidLevel(format!(
                "hierarchy lists {} gaussians, found {}",
                file.gaussian_count,
                gaussians.len()
            )));
        }
        let rest_frames = (0..mesh.face_count()).map(|f| mesh.face_frame(f).ok()).collect();
        let h = Self {
            mesh: Arc::new(mesh),
            gaussians,
            vertex_gaussians: file.vertex_gaussians,
            roots: file.roots,
            rest_frames,
        };
        h.validate()?;
        Ok(h)
    }

    /// Check the count identity and that tree ids point at matching Gaussians.
    pub fn validate(&self) -> Result<()> {
        if self.expected_count() != self.gaussians.len() as u64 {
            return Err(Error::InvalidLevel(format!(
                "{} gaussians, closed form predicts {}",
                self.gaussians.len(),
                self.expected_count()
            )));
        }
        for (r, root) in self.roots.iter().enumerate() {
            let Some(root) = root else { continue };
            if self.rest_frames[r].is_none() {
                return Err(Error::InvalidLevel(format!("root face {r} is degenerate in the mesh")));
            }
            for (l, anchors) in root.levels.iter().enumerate() {
                if anchors.len() != 4usize.pow(l as u32) {
                    return Err(Error::InvalidLevel(format!(
                        "root {r} level {l} has {} anchor faces",
                        anchors.len()
                    )));
                }
                for a in anchors {
                    let g = self.gaussians.get(a.center_gaussian as usize).ok_or_else(|| {
                        Error::InvalidLevel(format!("gaussian id {} out of range", a.center_gaussian))
                    })?;
                    if g.anchor as usize != r || g.level as usize != l {
                        return Err(Error::InvalidLevel(format!(
                            "gaussian {} is not the level-{l} center of root {r}",
                            a.center_gaussian
                        )));
                    }
                }
            }
        }
        for g in &self.gaussians {
            if self.roots.get(g.anchor as usize).and_then(Option::as_ref).is_none() {
                return Err(Error::InvalidLevel(format!("gaussian anchored to invalid face {}", g.anchor)));
            }
        }
        Ok(())
    }
}

fn mean_edge(mesh: &Mesh, face: usize) -> f64 {
    let [a, b, c] = mesh.triangle(face);
    ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0
}
