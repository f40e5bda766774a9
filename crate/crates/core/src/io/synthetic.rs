//! Seeded synthetic scenes rendered from known Gaussians.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::dataset::{ColoredPoint, SceneDataset, View};
use crate::error::Result;
use crate::geometry::{evaluate_sh, rgb_to_sh0, Camera, CameraIntrinsics, Pose};
use crate::image::Raster;
use crate::primitives::{logit, Gaussian3D};
use crate::render::{render, RenderSettings};

/// `count` colored, mostly opaque Gaussians inside `[-1, 1]³` (degree-0 SH).
pub fn random_gaussians(count: usize, seed: u64) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mu = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let base: f64 = rng.random_range(0.08..0.2);
            let log_scale = Vector3::from_fn(|_, _| (base * rng.random_range(0.6..1.6)).ln());
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::from(axis)), angle);
            let rgb = [0; 3].map(|_| rng.random_range(0.1..0.9));
            Gaussian3D {
                mu,
                log_scale,
                rotation: *q.quaternion(),
                opacity_logit: logit(rng.random_range(0.7..0.95)),
                sh: rgb.iter().map(|c| rgb_to_sh0(*c)).collect(),
            }
        })
        .collect()
}

/// Cameras on a horizontal arc of `arc_degrees` around the origin, all
/// looking at it, evenly spaced from one end to the other.
pub fn arc_cameras(
    n: usize,
    radius: f64,
    arc_degrees: f64,
    size: usize,
    focal: f64,
) -> Result<Vec<(CameraIntrinsics, Pose)>> {
    let angles: Vec<f64> = (0..n)
        .map(|i| {
            if n > 1 {
                (i as f64 / (n - 1) as f64 - 0.5) * arc_degrees
            } else {
                0.0
            }
        })
        .collect();
    orbit_cameras(&angles, radius, size, focal)
}

/// Cameras at the given azimuths (degrees), slightly above the origin and
/// looking at it.
pub fn orbit_cameras(
    angles_deg: &[f64],
    radius: f64,
    size: usize,
    focal: f64,
) -> Result<Vec<(CameraIntrinsics, Pose)>> {
    let intr = CameraIntrinsics::centered(focal, size, size)?;
    Ok(angles_deg
        .iter()
        .map(|deg| {
            let a = deg.to_radians();
            let eye = Vector3::new(radius * a.sin(), -0.3 * radius, -radius * a.cos());
            (intr, Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0)))
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct SyntheticOptions {
    /// Indices (into the camera list) held out for evaluation.
    pub test_indices: Vec<usize>,
    /// Std of the noise added to Gaussian means to form the seed points.
    pub point_noise: f64,
    pub with_depth: bool,
    pub seed: u64,
    pub settings: RenderSettings,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            test_indices: Vec::new(),
            point_noise: 0.02,
            with_depth: false,
            seed: 0,
            settings: RenderSettings::default(),
        }
    }
}

/// Renders ground truth at every camera. Images are 8-bit quantized and
/// depth f32-rounded so that saving and reloading is exact.
pub fn synthetic_dataset(
    gaussians: &[Gaussian3D],
    cameras: &[(CameraIntrinsics, Pose)],
    opts: &SyntheticOptions,
) -> Result<SceneDataset> {
    let mut views = Vec::new();
    let mut test_views = Vec::new();
    for (i, (intr, pose)) in cameras.iter().enumerate() {
        let (out, _) = render(gaussians, &Camera::new(*intr, *pose), &opts.settings)?;
        let mono_depth = opts.with_depth.then(|| {
            let far = out.depth.data.iter().cloned().fold(1.0, f64::max);
            Raster {
                width: out.depth.width,
                height: out.depth.height,
                data: out
                    .depth
                    .data
                    .iter()
                    .map(|d| if *d > 0.0 { *d as f32 as f64 } else { far as f32 as f64 })
                    .collect(),
            }
        });
        let view = View {
            name: format!("view_{i:03}"),
            intrinsics: *intr,
            pose: *pose,
            image: out.color.quantized(),
            mask: None,
            mono_depth,
            appearance_id: i,
        };
        if opts.test_indices.contains(&i) {
            test_views.push(view);
        } else {
            views.push(view);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.point_noise.max(0.0)).expect("valid normal");
    let points = gaussians
        .iter()
        .map(|g| {
            let rgb = evaluate_sh(0, &g.sh[..3], &Vector3::z()).unwrap_or([0.5; 3]);
            ColoredPoint {
                position: g.mu + Vector3::from_fn(|_, _| noise.sample(&mut rng)),
                color: rgb.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8),
            }
        })
        .collect();
    SceneDataset::new(views, test_views, points)
}
