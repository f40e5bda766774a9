//! Optimization loop: loss assembly, backward pass, Adam updates,
//! anchor growth and pruning, augmentation rounds and checkpoints.

mod adam;
mod checkpoint;
mod model;
mod oracle;

pub use adam::{MomentGroup, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{DecodeTape, DirectModel, Model, ModelKind, DIRECT_GROUPS, SCAFFOLD_GROUPS};
pub use oracle::{oracle_from_spec, save_ground_truth, GROUND_TRUTH_FILE};

use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{augmentation_step, AugmentationConfig, ViewOracle};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::{Image, Raster};
use crate::io::{SceneDataset, View};
use crate::losses::{depth_loss, fnv1a64, photometric_loss, regularization, LossWeights, PerceptualMetric};
use crate::primitives::Gaussian3D;
use crate::rasterizer::RenderOutput;
use crate::render::{render, render_backward, RenderSettings, RenderTape};
use crate::scaffold::{
    densify_anchors, init_anchors_from_points, prune_anchors, DecoderBank, ScaffoldConfig, ScaffoldModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Initial position rate, multiplied by the scene scale.
    pub position: f64,
    /// Final/initial ratio of the exponential position decay.
    pub position_final_ratio: f64,
    pub offsets: f64,
    pub features: f64,
    pub scaling: f64,
    pub decoders: f64,
    pub appearance: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final_ratio: 0.01,
            offsets: 1e-2,
            features: 2.5e-3,
            scaling: 5e-3,
            decoders: 2e-3,
            appearance: 1e-3,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 0.05,
            sh: 2.5e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub interval: u64,
    pub start: u64,
    pub stop: u64,
    pub grow_threshold: f64,
    pub prune_threshold: f64,
    /// Grid used for growing; defaults to the initialization voxel size.
    pub voxel_size: Option<f64>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 500,
            stop: 15000,
            grow_threshold: 2e-4,
            prune_threshold: 0.005,
            voxel_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub seed: u64,
    pub model: ModelKind,
    /// SH degree of direct-mode Gaussians.
    pub sh_degree: usize,
    /// Anchor voxel size; defaults to the point-cloud diagonal / 128.
    pub init_voxel_size: Option<f64>,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub loss: LossWeights,
    pub augmentation: AugmentationConfig,
    pub render: RenderSettings,
    pub scaffold: ScaffoldConfig,
    /// Write a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            seed: 0,
            model: ModelKind::Scaffold,
            sh_degree: 0,
            init_voxel_size: None,
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            loss: LossWeights::default(),
            augmentation: AugmentationConfig::default(),
            render: RenderSettings::default(),
            scaffold: ScaffoldConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        let lr = &self.lr;
        let rates = [
            lr.position,
            lr.offsets,
            lr.features,
            lr.scaling,
            lr.decoders,
            lr.appearance,
            lr.log_scale,
            lr.rotation,
            lr.opacity,
            lr.sh,
        ];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(lr.position_final_ratio > 0.0 && lr.position_final_ratio <= 1.0) {
            return Err(Error::Config("position_final_ratio must be in (0, 1]".into()));
        }
        if self.densify.interval == 0 {
            return Err(Error::Config("densify interval must be positive".into()));
        }
        if self.sh_degree > crate::geometry::MAX_SH_DEGREE {
            return Err(Error::Config(format!("sh_degree {} too large", self.sh_degree)));
        }
        if let Some(v) = self.init_voxel_size.or(self.densify.voxel_size) {
            if !(v > 0.0) {
                return Err(Error::Config("voxel sizes must be positive".into()));
            }
        }
        self.loss.validate()?;
        self.augmentation.validate()?;
        self.scaffold.validate()
    }
}

/// Loss components of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub iteration: u64,
    pub view: String,
    pub total: f64,
    pub photometric: f64,
    pub l1: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub depth: Option<f64>,
    pub regularization: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diffusion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub augmented_views: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub active_gates: Option<usize>,
    pub gaussians: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anchors: Option<usize>,
}

/// Window statistics driving anchor growth and pruning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    /// `‖abs_grad2d‖` summed per neural Gaussian slot (`anchor × k`).
    pub grad_sum: Vec<f64>,
    pub hits: Vec<u32>,
    /// Mean visible opacity per anchor, summed over renders.
    pub opacity_sum: Vec<f64>,
    pub opacity_count: Vec<u32>,
}

impl DensifyStats {
    fn zeros(anchors: usize, k: usize) -> Self {
        Self {
            grad_sum: vec![0.0; anchors * k],
            hits: vec![0; anchors * k],
            opacity_sum: vec![0.0; anchors],
            opacity_count: vec![0; anchors],
        }
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub moments: Vec<MomentGroup>,
    /// Completed steps.
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub scene_scale: f64,
    pub voxel_size: f64,
    pub stats: DensifyStats,
}

type AugTape = (Vec<Gaussian3D>, DecodeTape, RenderTape);

fn points_extent(points: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Seed for augmentation round `iteration`, independent of the trainer RNG.
fn round_seed(seed: u64, iteration: u64) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(&iteration.to_le_bytes());
    fnv1a64(&bytes)
}

impl Trainer {
    /// Initializes from the dataset's seed points.
    pub fn new(config: TrainConfig, dataset: &SceneDataset) -> Result<Self> {
        config.validate()?;
        if dataset.points.is_empty() {
            return Err(Error::invalid("dataset has no points"));
        }
        let positions: Vec<Vector3<f64>> = dataset.points.iter().map(|p| p.position).collect();
        let extent = points_extent(&positions);
        let voxel_size = config
            .init_voxel_size
            .unwrap_or(if extent > 0.0 { extent / 128.0 } else { 0.01 });
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = match config.model {
            ModelKind::Direct => Model::Direct(DirectModel::from_points(&dataset.points, config.sh_degree)?),
            ModelKind::Scaffold => {
                let sc = config.scaffold;
                let anchors = init_anchors_from_points(&positions, voxel_size, sc.offsets_per_anchor, sc.feature_dim)?;
                let decoders = DecoderBank::new(&sc, dataset.image_count(), &mut rng);
                Model::Scaffold(ScaffoldModel {
                    config: sc,
                    anchors,
                    decoders,
                })
            }
        };
        Self::from_model(config, model, dataset.scene_scale, voxel_size, rng)
    }

    /// Wraps an existing model with fresh optimizer state.
    pub fn from_model(
        config: TrainConfig,
        model: Model,
        scene_scale: f64,
        voxel_size: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if config.model != model.kind() {
            return Err(Error::Config("config model kind does not match the model".into()));
        }
        let moments = model.groups().iter().map(|g| MomentGroup::zeros(g.len())).collect();
        let stats = match &model {
            Model::Scaffold(s) => DensifyStats::zeros(s.anchors.len(), s.config.offsets_per_anchor),
            Model::Direct(_) => DensifyStats::default(),
        };
        Ok(Self {
            config,
            model,
            moments,
            iteration: 0,
            rng,
            scene_scale: if scene_scale > 0.0 { scene_scale } else { 1.0 },
            voxel_size,
            stats,
        })
    }

    /// Index of the view trained at 1-based `iteration`: a seeded
    /// permutation per epoch.
    pub fn view_index(&self, iteration: u64, view_count: usize) -> usize {
        let n = view_count as u64;
        let epoch = (iteration - 1) / n;
        let mut order: Vec<usize> = (0..view_count).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch + 1);
        order.shuffle(&mut rng);
        order[((iteration - 1) % n) as usize]
    }

    fn position_lr(&self, iteration: u64) -> f64 {
        let lr = &self.config.lr;
        let span = self.config.iterations.saturating_sub(1).max(1) as f64;
        let t = ((iteration - 1) as f64 / span).min(1.0);
        lr.position * self.scene_scale * lr.position_final_ratio.powf(t)
    }

    fn group_lrs(&self, iteration: u64) -> Vec<f64> {
        let lr = &self.config.lr;
        let pos = self.position_lr(iteration);
        match self.model {
            Model::Direct(_) => vec![pos, lr.log_scale, lr.rotation, lr.opacity, lr.sh],
            Model::Scaffold(_) => vec![
                pos,
                lr.offsets,
                lr.features,
                lr.scaling,
                lr.decoders,
                lr.decoders,
                lr.decoders,
                lr.appearance,
            ],
        }
    }

    /// Renders the current model at a camera.
    pub fn render(&self, camera: &Camera, appearance_id: usize) -> Result<RenderOutput> {
        let (g, _) = self.model.decode(&camera.center(), appearance_id)?;
        Ok(render(&g, camera, &self.config.render)?.0)
    }

    /// Gaussians the model produces for a camera.
    pub fn gaussians_for(&self, camera: &Camera, appearance_id: usize) -> Result<Vec<Gaussian3D>> {
        Ok(self.model.decode(&camera.center(), appearance_id)?.0)
    }

    /// One optimization step on the next view of the schedule.
    ///
    /// Augmentation runs on scheduled iterations when an oracle is given.
    pub fn train_step(
        &mut self,
        views: &[View],
        oracle: Option<&dyn ViewOracle>,
        metric: &dyn PerceptualMetric,
    ) -> Result<LossBreakdown> {
        if views.is_empty() {
            return Err(Error::invalid("no training views"));
        }
        let iteration = self.iteration + 1;
        let view = &views[self.view_index(iteration, views.len())];
        let camera = view.camera();
        let weights = self.config.loss;
        for (name, p) in self.model.group_names().iter().zip(self.model.groups()) {
            check_finite(&format!("parameter {name}"), p)?;
        }

        let (gaussians, decode_tape) = self.model.decode(&camera.center(), view.appearance_id)?;
        let (out, rtape) = render(&gaussians, &camera, &self.config.render)?;
        check_finite("rendered color", &out.color.data)?;
        check_finite("rendered depth", &out.depth.data)?;

        let phot = photometric_loss(&out.color, &view.image, view.mask.as_ref(), weights.lambda_ssim)?;
        let mut dl_ddepth = Raster::new(out.depth.width, out.depth.height);
        let mut depth_value = None;
        if let (Some(prior), true) = (&view.mono_depth, weights.lambda_sd > 0.0) {
            let d = depth_loss(&out.depth, prior, view.mask.as_ref(), weights.depth_kind)?;
            for (o, g) in dl_ddepth.data.iter_mut().zip(&d.grad.data) {
                *o = weights.lambda_sd * g;
            }
            depth_value = Some(d.value);
        }
        let (mut ggrads, stats) = render_backward(&gaussians, &rtape, &phot.grad, &dl_ddepth)?;
        let reg = regularization(&gaussians, &weights.regularization(), &mut ggrads);
        let mut grads = self.model.backward(&decode_tape, &ggrads);

        let mut diffusion = None;
        let mut aug_counts = None;
        if let (Some(oracle), true) = (oracle, self.config.augmentation.runs_at(iteration)) {
            let round = augmentation_step(
                views,
                oracle,
                metric,
                &self.config.augmentation,
                weights.epsilon,
                round_seed(self.config.seed, iteration),
                |cam, app| -> Result<(Image, AugTape)> {
                    let (g, dt) = self.model.decode(&cam.center(), app)?;
                    let (o, rt) = render(&g, cam, &self.config.render)?;
                    Ok((o.color, (g, dt, rt)))
                },
            )?;
            for (v, ((g, dt, rt), grad)) in round.views.iter().zip(round.tapes.iter().zip(&round.grads)) {
                if !v.active {
                    continue;
                }
                let mut scaled = grad.clone();
                for x in scaled.data.iter_mut() {
                    *x *= weights.lambda_gs;
                }
                let zero_depth = Raster::new(scaled.width, scaled.height);
                let (gg, _) = render_backward(g, rt, &scaled, &zero_depth)?;
                for (acc, add) in grads.iter_mut().zip(self.model.backward(dt, &gg)) {
                    for (a, b) in acc.iter_mut().zip(add) {
                        *a += b;
                    }
                }
            }
            diffusion = Some(round.loss);
            aug_counts = Some((round.views.len(), round.active));
        }

        let total = phot.value
            + weights.lambda_sd * depth_value.unwrap_or(0.0)
            + reg
            + weights.lambda_gs * diffusion.unwrap_or(0.0);
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at iteration {iteration} (photometric {}, depth {:?}, regularization {reg}, diffusion {diffusion:?})",
                phot.value, depth_value
            )));
        }
        for (name, g) in self.model.group_names().iter().zip(&grads) {
            check_finite(&format!("gradient of {name}"), g)?;
        }

        self.accumulate_stats(&decode_tape, &stats.abs_grad2d, &stats.hit_count);

        let lrs = self.group_lrs(iteration);
        let mut params = self.model.groups_mut();
        for (((p, g), m), lr) in params.iter_mut().zip(&grads).zip(self.moments.iter_mut()).zip(lrs) {
            m.update(p, g, lr);
        }
        self.iteration = iteration;

        let d = &self.config.densify;
        if matches!(self.model, Model::Scaffold(_))
            && iteration.is_multiple_of(d.interval)
            && iteration > d.start
            && iteration <= d.stop
        {
            self.densify_and_prune()?;
        }

        Ok(LossBreakdown {
            iteration,
            view: view.name.clone(),
            total,
            photometric: phot.value,
            l1: phot.l1,
            ssim: phot.ssim,
            depth: depth_value,
            regularization: reg,
            diffusion,
            augmented_views: aug_counts.map(|c| c.0),
            active_gates: aug_counts.map(|c| c.1),
            gaussians: gaussians.len(),
            anchors: match &self.model {
                Model::Scaffold(s) => Some(s.anchors.len()),
                Model::Direct(_) => None,
            },
        })
    }

    fn accumulate_stats(&mut self, tape: &DecodeTape, abs_grad2d: &[nalgebra::Vector2<f64>], hits: &[u32]) {
        let (Model::Scaffold(s), DecodeTape::Scaffold(t)) = (&self.model, tape) else {
            return;
        };
        let k = s.config.offsets_per_anchor;
        for (i, &(a, slot)) in t.sources.iter().enumerate() {
            if hits[i] > 0 {
                self.stats.grad_sum[a * k + slot] += abs_grad2d[i].norm();
                self.stats.hits[a * k + slot] += hits[i];
            }
        }
        for a in 0..s.anchors.len() {
            let o = &t.opacities[a * k..(a + 1) * k];
            self.stats.opacity_sum[a] += o.iter().map(|v| v.max(0.0)).sum::<f64>() / k as f64;
            self.stats.opacity_count[a] += 1;
        }
    }

    /// Prunes faint anchors and grows new ones from the window statistics,
    /// then resets the statistics.
    pub fn densify_and_prune(&mut self) -> Result<()> {
        let Model::Scaffold(s) = &mut self.model else {
            return Ok(());
        };
        let d = self.config.densify;
        let voxel = d.voxel_size.unwrap_or(self.voxel_size);
        let keep = prune_anchors(&self.stats.opacity_sum, &self.stats.opacity_count, d.prune_threshold)?;
        let grown = densify_anchors(
            &s.anchors,
            &self.stats.grad_sum,
            &self.stats.hits,
            voxel,
            d.grow_threshold,
            &mut self.rng,
        )?;
        let k = s.config.offsets_per_anchor;
        let rows = [3, 3 * k, s.config.feature_dim, 3];
        s.anchors.retain(&keep);
        for (m, row) in self.moments.iter_mut().zip(rows) {
            m.retain_rows(row, &keep);
        }
        for a in &grown {
            s.anchors.push(a)?;
        }
        for (m, row) in self.moments.iter_mut().zip(rows) {
            m.append_zeros(row * grown.len());
        }
        let pruned = keep.iter().filter(|k| !**k).count();
        log::debug!(
            "iteration {}: pruned {pruned} anchors, grew {}",
            self.iteration,
            grown.len()
        );
        self.stats = DensifyStats::zeros(s.anchors.len(), k);
        Ok(())
    }

    /// Runs steps until `self.iteration == until`, calling `on_step` after each.
    pub fn run<F>(
        &mut self,
        views: &[View],
        oracle: Option<&dyn ViewOracle>,
        metric: &dyn PerceptualMetric,
        until: u64,
        mut on_step: F,
    ) -> Result<()>
    where
        F: FnMut(&LossBreakdown, &Trainer) -> Result<()>,
    {
        while self.iteration < until {
            let b = self.train_step(views, oracle, metric)?;
            on_step(&b, self)?;
        }
        Ok(())
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} (element {i} is {})", values[i])));
    }
    Ok(())
}
