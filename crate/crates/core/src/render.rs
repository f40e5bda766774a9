//! Full differentiable render of a Gaussian set: projection, mip filter,
//! rasterization, and the chained backward pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Camera;
use crate::image::{Image, Raster};
use crate::primitives::{
    apply_mip_filter, mip_filter_backward, project_gaussian, project_gaussian_backward, Gaussian3D, GaussianGrad,
    Splat2D, DEFAULT_MIP_VARIANCE,
};
use crate::rasterizer::{
    rasterize_backward, rasterize_forward, BlendRecord, GradStats, RenderOutput, DEFAULT_DEPTH_TEMPERATURE,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub mip_variance: f64,
    pub depth_temperature: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            mip_variance: DEFAULT_MIP_VARIANCE,
            depth_temperature: DEFAULT_DEPTH_TEMPERATURE,
        }
    }
}

/// Intermediate state kept between [`render`] and [`render_backward`].
#[derive(Clone, Debug)]
pub struct RenderTape {
    camera: Camera,
    settings: RenderSettings,
    /// Unfiltered splats; `source_id` is the Gaussian index.
    pre_mip: Vec<Splat2D>,
    record: BlendRecord,
}

impl RenderTape {
    pub fn splat_count(&self) -> usize {
        self.pre_mip.len()
    }
}

pub fn render(
    gaussians: &[Gaussian3D],
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<(RenderOutput, RenderTape)> {
    let projected: Vec<Option<(Splat2D, Splat2D)>> = gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let pre = project_gaussian(g, camera, i)?;
            let post = apply_mip_filter(&pre, settings.mip_variance);
            post.cov2d.inverse()?;
            Some((pre, post))
        })
        .collect();
    let (pre_mip, splats): (Vec<_>, Vec<_>) = projected.into_iter().flatten().unzip();
    let (out, record) = rasterize_forward(
        &splats,
        camera.width(),
        camera.height(),
        settings.background,
        settings.depth_temperature,
    )?;
    Ok((
        out,
        RenderTape {
            camera: *camera,
            settings: *settings,
            pre_mip,
            record,
        },
    ))
}

/// Gradients with respect to every Gaussian (zero for culled ones) plus
/// screen-space statistics indexed by Gaussian.
pub fn render_backward(
    gaussians: &[Gaussian3D],
    tape: &RenderTape,
    dl_dcolor: &Image,
    dl_ddepth: &Raster,
) -> Result<(Vec<GaussianGrad>, GradStats)> {
    let (splat_grads, splat_stats) = rasterize_backward(&tape.record, dl_dcolor, dl_ddepth)?;
    let mut grads: Vec<GaussianGrad> = gaussians.iter().map(|g| GaussianGrad::zeros(g.sh.len())).collect();
    let per_splat: Vec<(usize, GaussianGrad)> = tape
        .pre_mip
        .par_iter()
        .zip(&splat_grads)
        .map(|(pre, sg)| {
            let i = pre.source_id;
            let g = mip_filter_backward(pre, tape.settings.mip_variance, sg);
            let mut out = GaussianGrad::zeros(gaussians[i].sh.len());
            project_gaussian_backward(&gaussians[i], &tape.camera, &g, &mut out);
            (i, out)
        })
        .collect();
    for (i, g) in per_splat {
        grads[i] = g;
    }
    let mut stats = GradStats::zeros(gaussians.len());
    for (k, pre) in tape.pre_mip.iter().enumerate() {
        let i = pre.source_id;
        stats.abs_grad2d[i] = splat_stats.abs_grad2d[k];
        stats.grad2d[i] = splat_stats.grad2d[k];
        stats.hit_count[i] = splat_stats.hit_count[k];
    }
    Ok((grads, stats))
}
