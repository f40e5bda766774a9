//! Pseudo-view augmentation: proximal pairs, spline cameras, oracle
//! generation and the gated perceptual loss.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interpolate_pose_spline, select_proximal_pairs, Camera, Pose, DEFAULT_ROTATION_WEIGHT};
use crate::image::Image;
use crate::io::{read_image, View};
use crate::losses::{diffusion_loss, fnv1a64, PerceptualMetric};
use crate::primitives::Gaussian3D;
use crate::render::{render, RenderSettings};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Run on iterations divisible by this.
    pub every: usize,
    pub pairs: usize,
    pub per_pair: usize,
    pub noise_level: f64,
    pub rotation_weight: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            every: 3,
            pairs: 4,
            per_pair: 2,
            noise_level: 0.5,
            rotation_weight: DEFAULT_ROTATION_WEIGHT,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.every == 0 || self.pairs == 0 || self.per_pair == 0 {
            return Err(Error::Config(
                "augmentation every, pairs and per_pair must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!(
                "noise_level {} outside [0, 1]",
                self.noise_level
            )));
        }
        Ok(())
    }

    pub fn runs_at(&self, iteration: u64) -> bool {
        self.enabled && iteration.is_multiple_of(self.every as u64)
    }
}

/// One camera to generate a pseudo-view for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedCamera {
    pub camera: Camera,
    /// Indices of the view pair it was interpolated from.
    pub pair: (usize, usize),
}

/// Interior spline samples `t = j/(m+1)` between each pair; intrinsics
/// come from the first view of the pair.
pub fn build_augmented_cameras(
    views: &[View],
    pairs: &[(usize, usize)],
    per_pair: usize,
) -> Result<Vec<AugmentedCamera>> {
    if per_pair == 0 {
        return Err(Error::invalid("per_pair must be at least 1"));
    }
    let mut out = Vec::with_capacity(pairs.len() * per_pair);
    for &(a, b) in pairs {
        let (va, vb) = match (views.get(a), views.get(b)) {
            (Some(va), Some(vb)) => (va, vb),
            _ => return Err(Error::invalid(format!("pair ({a}, {b}) out of range"))),
        };
        let keys = [va.pose, vb.pose];
        for j in 1..=per_pair {
            let t = j as f64 / (per_pair + 1) as f64;
            out.push(AugmentedCamera {
                camera: Camera::new(va.intrinsics, interpolate_pose_spline(&keys, t)?),
                pair: (a, b),
            });
        }
    }
    Ok(out)
}

/// Stand-in for a multi-view generative model.
pub trait ViewOracle: Send + Sync {
    /// One result per target. A failed target is dropped by the caller.
    fn generate(
        &self,
        references: &[&View],
        targets: &[Camera],
        renders: &[Image],
        noise_level: f64,
        seed: u64,
    ) -> Vec<Result<Image>>;

    fn name(&self) -> &str;
}

/// Returns the renders unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityOracle;

impl ViewOracle for IdentityOracle {
    fn generate(&self, _: &[&View], _: &[Camera], renders: &[Image], _: f64, _: u64) -> Vec<Result<Image>> {
        renders.iter().cloned().map(Ok).collect()
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Renders known Gaussians and adds seeded pixel noise of std `0.1·noise_level`.
#[derive(Clone, Debug)]
pub struct GroundTruthOracle {
    pub gaussians: Vec<Gaussian3D>,
    pub settings: RenderSettings,
}

impl GroundTruthOracle {
    pub fn new(gaussians: Vec<Gaussian3D>, settings: RenderSettings) -> Self {
        Self { gaussians, settings }
    }
}

impl ViewOracle for GroundTruthOracle {
    fn generate(
        &self,
        _: &[&View],
        targets: &[Camera],
        _: &[Image],
        noise_level: f64,
        seed: u64,
    ) -> Vec<Result<Image>> {
        targets
            .par_iter()
            .enumerate()
            .map(|(i, cam)| {
                let mut img = render(&self.gaussians, cam, &self.settings)?.0.color;
                let std = 0.1 * noise_level;
                if std > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    let noise = Normal::new(0.0, std).expect("valid normal");
                    for v in img.data.iter_mut() {
                        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                }
                Ok(img)
            })
            .collect()
    }

    fn name(&self) -> &str {
        "ground_truth"
    }
}

/// Uniform noise unrelated to the scene.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoiseOracle;

impl ViewOracle for NoiseOracle {
    fn generate(&self, _: &[&View], targets: &[Camera], _: &[Image], _: f64, seed: u64) -> Vec<Result<Image>> {
        let uniform = Uniform::new(0.0, 1.0).expect("valid range");
        targets
            .iter()
            .enumerate()
            .map(|(i, cam)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let data = (0..cam.width() * cam.height() * 3)
                    .map(|_| uniform.sample(&mut rng))
                    .collect();
                Image::from_data(cam.width(), cam.height(), data)
            })
            .collect()
    }

    fn name(&self) -> &str {
        "noise"
    }
}

/// FNV-1a 64 of the pose as seven little-endian doubles
/// `(qw qx qy qz tx ty tz)`, each rounded to 1e-6.
pub fn pose_hash(pose: &Pose) -> u64 {
    let mut bytes = Vec::with_capacity(56);
    for v in pose.to_array() {
        // Adding 0.0 folds -0.0 into +0.0.
        let r = (v * 1e6).round() / 1e6 + 0.0;
        bytes.extend_from_slice(&r.to_le_bytes());
    }
    fnv1a64(&bytes)
}

pub fn pose_key(pose: &Pose) -> String {
    format!("{:016x}", pose_hash(pose))
}

/// Reads precomputed images from `<root>/aug/<pose-hash>.png`.
#[derive(Clone, Debug)]
pub struct FileOracle {
    root: PathBuf,
}

impl FileOracle {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_for(&self, pose: &Pose) -> PathBuf {
        image_path(&self.root, pose)
    }
}

pub fn image_path(root: &Path, pose: &Pose) -> PathBuf {
    root.join("aug").join(format!("{}.png", pose_key(pose)))
}

impl ViewOracle for FileOracle {
    fn generate(&self, _: &[&View], targets: &[Camera], _: &[Image], _: f64, _: u64) -> Vec<Result<Image>> {
        targets
            .iter()
            .map(|cam| {
                let path = self.path_for(&cam.pose);
                if !path.exists() {
                    return Err(Error::Oracle(format!("no precomputed image {}", path.display())));
                }
                let img = read_image(&path)?;
                if img.width != cam.width() || img.height != cam.height() {
                    return Err(Error::Oracle(format!("{} has the wrong size", path.display())));
                }
                Ok(img)
            })
            .collect()
    }

    fn name(&self) -> &str {
        "file"
    }
}

/// Pseudo-observation with its gate status.
#[derive(Clone, Debug)]
pub struct AugmentedView {
    pub camera: Camera,
    pub pair: (usize, usize),
    pub appearance_id: usize,
    pub generated: Image,
    pub rendered: Image,
    pub gate_distance: f64,
    pub active: bool,
}

/// Result of one augmentation round. `grads[i]` is `∂loss/∂rendered` of
/// `views[i]` (zero when inactive); `tapes[i]` is whatever the render
/// callback returned for it.
pub struct AugmentationRound<T> {
    pub views: Vec<AugmentedView>,
    pub tapes: Vec<T>,
    pub grads: Vec<Image>,
    /// Mean gated loss over active views, 0 if none.
    pub loss: f64,
    pub active: usize,
    pub dropped: usize,
}

/// One round: pairs → cameras → renders → oracle → gated loss.
///
/// `render_fn(camera, appearance_id)` renders the current model. Targets the
/// oracle fails on are dropped with a warning.
#[allow(clippy::too_many_arguments)]
pub fn augmentation_step<T, F>(
    views: &[View],
    oracle: &dyn ViewOracle,
    metric: &dyn PerceptualMetric,
    config: &AugmentationConfig,
    epsilon: f64,
    seed: u64,
    render_fn: F,
) -> Result<AugmentationRound<T>>
where
    F: Fn(&Camera, usize) -> Result<(Image, T)>,
{
    let poses: Vec<Pose> = views.iter().map(|v| v.pose).collect();
    let pairs = select_proximal_pairs(&poses, config.pairs, config.rotation_weight)?;
    let cameras = build_augmented_cameras(views, &pairs, config.per_pair)?;
    let mut renders = Vec::with_capacity(cameras.len());
    let mut tapes = Vec::with_capacity(cameras.len());
    for c in &cameras {
        let (img, tape) = render_fn(&c.camera, views[c.pair.0].appearance_id)?;
        renders.push(img);
        tapes.push(tape);
    }
    let mut refs: Vec<&View> = Vec::new();
    for &(a, b) in &pairs {
        for i in [a, b] {
            if !refs.iter().any(|r| std::ptr::eq(*r, &views[i])) {
                refs.push(&views[i]);
            }
        }
    }
    let targets: Vec<Camera> = cameras.iter().map(|c| c.camera).collect();
    let generated = oracle.generate(&refs, &targets, &renders, config.noise_level, seed);
    if generated.len() != targets.len() {
        return Err(Error::Oracle(format!(
            "oracle {} returned {} images for {} targets",
            oracle.name(),
            generated.len(),
            targets.len()
        )));
    }
    let mut kept = Vec::new();
    let mut dropped = 0;
    for (i, (g, (r, t))) in generated.into_iter().zip(renders.into_iter().zip(tapes)).enumerate() {
        match g.and_then(|g| check_generated(g, &r)) {
            Ok(g) => kept.push((i, g, r, t)),
            Err(e) => {
                log::warn!("augmentation target {i} dropped: {e}");
                dropped += 1;
            }
        }
    }
    let pairs_to_score: Vec<(&Image, &Image)> = kept.iter().map(|(_, g, r, _)| (r, g)).collect();
    let gated: Vec<_> = pairs_to_score
        .par_iter()
        .map(|(r, g)| diffusion_loss(r, g, metric, epsilon))
        .collect::<Result<_>>()?;
    let active = gated.iter().filter(|g| g.active).count();
    let scale = if active > 0 { 1.0 / active as f64 } else { 0.0 };
    let loss = gated.iter().map(|g| g.value).sum::<f64>() * scale;
    let mut out_views = Vec::with_capacity(kept.len());
    let mut out_tapes = Vec::with_capacity(kept.len());
    let mut grads = Vec::with_capacity(kept.len());
    for ((i, g, r, t), gl) in kept.into_iter().zip(gated) {
        let mut grad = gl.grad;
        for v in grad.data.iter_mut() {
            *v *= scale;
        }
        grads.push(grad);
        out_tapes.push(t);
        out_views.push(AugmentedView {
            camera: cameras[i].camera,
            pair: cameras[i].pair,
            appearance_id: views[cameras[i].pair.0].appearance_id,
            generated: g,
            rendered: r,
            gate_distance: gl.distance,
            active: gl.active,
        });
    }
    Ok(AugmentationRound {
        views: out_views,
        tapes: out_tapes,
        grads,
        loss,
        active,
        dropped,
    })
}

fn check_generated(g: Image, rendered: &Image) -> Result<Image> {
    if !g.same_shape(rendered) {
        return Err(Error::Oracle(format!(
            "generated {}x{} but target is {}x{}",
            g.width, g.height, rendered.width, rendered.height
        )));
    }
    if g.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Oracle("generated image outside [0, 1]".into()));
    }
    Ok(g)
}
