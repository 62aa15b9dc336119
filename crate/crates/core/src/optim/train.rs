use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig, LearningRates};
use super::loss::{loss_weighted, LossWeights};
use crate::error::{Error, Result};
use crate::gaussian::{world_grad_to_local, ParamMask};
use crate::hierarchy::{AvatarHierarchy, RootPose};
use crate::mesh::Mesh;
use crate::metrics::psnr;
use crate::raster::{backward, rasterize, render, CameraView, RenderConfig};

/// One keyframe mesh and the views captured of it (each with a target image).
#[derive(Debug, Clone)]
pub struct KeyframeViews {
    pub mesh: Arc<Mesh>,
    pub views: Vec<CameraView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub iterations: usize,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub seed: u64,
    pub render: RenderConfig,
    /// Record a log row every this many iterations (0 disables logging).
    pub log_every: usize,
    /// `(keyframe, view)` used for the PSNR column of the log.
    pub probe: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            iterations: 3_000,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            seed: 0,
            render: RenderConfig::default(),
            log_every: 100,
            probe: (0, 0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.weights.l1 + self.weights.dssim - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "loss weights must sum to 1, got {} + {}",
                self.weights.l1, self.weights.dssim
            )));
        }
        if self.weights.l1 < 0.0 || self.weights.dssim < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub probe_psnr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub level: u32,
    /// Loss of every iteration.
    pub losses: Vec<f64>,
    pub log: Vec<LogRow>,
    pub trained_gaussians: usize,
}

impl TrainReport {
    /// Mean loss over the first and last 10% of iterations (at least one each).
    pub fn head_tail_means(&self) -> Option<(f64, f64)> {
        let n = self.losses.len();
        if n == 0 {
            return None;
        }
        let k = (n / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..k]), mean(&self.losses[n - k..])))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,psnr\n");
        for row in &self.log {
            let _ = writeln!(out, "{},{:.9},{:.6}", row.iteration, row.loss, row.probe_psnr);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Train the Gaussians of `level`.
///
/// Only Gaussians whose own level equals `level` and that are not frozen
/// receive updates; vertex Gaussians additionally keep their position.
/// Each iteration draws one `(keyframe, view)` pair, poses the avatar on the
/// keyframe, renders, and applies one adaptive step. Roots at `level` are
/// marked optimized afterwards.
pub fn train_stage(
    h: &mut AvatarHierarchy,
    dataset: &[KeyframeViews],
    level: u32,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() || dataset.iter().all(|k| k.views.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if h.roots.iter().flatten().all(|r| r.level() < level) {
        return Err(Error::InvalidLevel(format!(
            "no root face is at level {level} (deepest is {})",
            h.current_level()
        )));
    }
    for kf in dataset {
        for v in &kf.views {
            if v.target.is_none() {
                return Err(Error::Config(format!("view {} has no target image", v.id)));
            }
        }
    }

    let masks: Vec<ParamMask> = h
        .gaussians
        .iter()
        .map(|g| if g.level == level { g.trainable() } else { ParamMask::NONE })
        .collect();
    let trainable: Vec<usize> = (0..masks.len()).filter(|&i| masks[i].any()).collect();
    let mut report = TrainReport {
        level,
        trained_gaussians: trainable.len(),
        ..Default::default()
    };
    if cfg.iterations == 0 {
        return Ok(report);
    }

    let poses: Vec<Vec<Option<RootPose>>> = dataset.iter().map(|k| h.root_poses(&k.mesh)).collect::<Result<_>>()?;
    let (_, extent) = h.mesh.extent();
    let mut slot_of = vec![usize::MAX; masks.len()];
    for (slot, &i) in trainable.iter().enumerate() {
        slot_of[i] = slot;
    }
    let mut adam = Adam::new(trainable.len(), cfg.lr.per_slot(extent.max(f64::MIN_POSITIVE)), cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(k, kf)| (0..kf.views.len()).map(move |v| (k, v)))
        .collect();
    let probe = dataset
        .get(cfg.probe.0)
        .and_then(|k| k.views.get(cfg.probe.1))
        .map(|v| (cfg.probe.0, v));

    for it in 0..cfg.iterations {
        let (k, v) = pairs[rng.random_range(0..pairs.len())];
        let cam = &dataset[k].views[v];
        let world = h.pose_with(&poses[k]);
        let frame = rasterize(&world, cam, &cfg.render);
        let target = cam.target.as_ref().expect("checked");
        let (l, dl) = loss_weighted(&frame.image, target, &cfg.weights)?;
        let grads = backward(&frame, &world, cam, &dl, Some(&masks))?;
        adam.begin_step();
        for &i in &trainable {
            let g = &mut h.gaussians[i];
            let pose = poses[k][g.anchor as usize].as_ref().expect("anchored to a valid root");
            let local_grad = world_grad_to_local(&grads.grads[i], &pose.frame, &pose.quat, &pose.sh, pose.k);
            let mut raw = g.local.to_raw();
            adam.update(slot_of[i], &mut raw, &local_grad, masks[i])?;
            g.local = crate::gaussian::GaussianParams::from_raw(&raw);
        }
        report.losses.push(l);
        let last = it + 1 == cfg.iterations;
        if cfg.log_every > 0 && ((it + 1) % cfg.log_every == 0 || last) {
            let probe_psnr = match probe {
                Some((pk, view)) => {
                    let img = render(&h.pose_with(&poses[pk]), view, &cfg.render);
                    psnr(&img, view.target.as_ref().expect("checked"))?
                }
                None => f64::NAN,
            };
            report.log.push(LogRow {
                iteration: it + 1,
                loss: l,
                probe_psnr,
            });
        }
    }
    h.mark_level_optimized(level);
    Ok(report)
}
