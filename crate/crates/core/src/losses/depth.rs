use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Raster;

/// Fewest active pixels for which a correlation is meaningful.
pub const MIN_DEPTH_PIXELS: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthLossKind {
    /// `1 − Pearson(rendered, prior)`.
    #[default]
    Pearson,
    /// Mean |rendered − (a·prior + b)| with `(a, b)` fitted by least squares
    /// and held constant for the gradient.
    AlignedL1,
}

#[derive(Clone, Debug)]
pub struct DepthLoss {
    pub value: f64,
    pub grad: Raster,
    pub active_pixels: usize,
    /// Zero variance in either raster; value and gradient are zero.
    pub degenerate: bool,
}

fn active_pixels(rendered: &Raster, prior: &Raster, mask: Option<&Raster>) -> Result<Vec<usize>> {
    if rendered.width != prior.width || rendered.height != prior.height {
        return Err(Error::invalid("rendered and prior depth differ in shape"));
    }
    if let Some(m) = mask {
        if m.width != prior.width || m.height != prior.height {
            return Err(Error::invalid("mask shape does not match the depth raster"));
        }
    }
    let idx: Vec<usize> = (0..prior.data.len())
        .filter(|&p| mask.is_none_or(|m| m.data[p] == 1.0) && prior.data[p].is_finite() && prior.data[p] > 0.0)
        .collect();
    if idx.len() < MIN_DEPTH_PIXELS {
        return Err(Error::invalid(format!(
            "depth loss needs at least {MIN_DEPTH_PIXELS} active pixels, got {}",
            idx.len()
        )));
    }
    Ok(idx)
}

/// Scale-invariant depth loss against a monocular prior over mask-active pixels.
pub fn depth_loss(rendered: &Raster, prior: &Raster, mask: Option<&Raster>, kind: DepthLossKind) -> Result<DepthLoss> {
    let idx = active_pixels(rendered, prior, mask)?;
    match kind {
        DepthLossKind::Pearson => Ok(pearson(rendered, prior, &idx)),
        DepthLossKind::AlignedL1 => Ok(aligned_l1(rendered, prior, &idx)),
    }
}

fn pearson(rendered: &Raster, prior: &Raster, idx: &[usize]) -> DepthLoss {
    let n = idx.len() as f64;
    let mean = |r: &Raster| idx.iter().map(|&p| r.data[p]).sum::<f64>() / n;
    let (mx, my) = (mean(rendered), mean(prior));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &p in idx {
        let dx = rendered.data[p] - mx;
        let dy = prior.data[p] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let mut grad = Raster::new(rendered.width, rendered.height);
    let flat = |ss: f64, m: f64| ss <= 1e-20 * n * (m * m).max(1e-300);
    if flat(sxx, mx) || flat(syy, my) {
        return DepthLoss {
            value: 0.0,
            grad,
            active_pixels: idx.len(),
            degenerate: true,
        };
    }
    let denom = (sxx * syy).sqrt();
    let r = sxy / denom;
    // dr/dx_i = (y_i − ȳ)/√(sxx·syy) − r·(x_i − x̄)/sxx
    for &p in idx {
        let dx = rendered.data[p] - mx;
        let dy = prior.data[p] - my;
        grad.data[p] = -(dy / denom - r * dx / sxx);
    }
    DepthLoss {
        value: 1.0 - r,
        grad,
        active_pixels: idx.len(),
        degenerate: false,
    }
}

fn aligned_l1(rendered: &Raster, prior: &Raster, idx: &[usize]) -> DepthLoss {
    let n = idx.len() as f64;
    let mx = idx.iter().map(|&p| prior.data[p]).sum::<f64>() / n;
    let my = idx.iter().map(|&p| rendered.data[p]).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &p in idx {
        let dx = prior.data[p] - mx;
        sxx += dx * dx;
        sxy += dx * (rendered.data[p] - my);
    }
    let mut grad = Raster::new(rendered.width, rendered.height);
    if sxx == 0.0 {
        return DepthLoss {
            value: 0.0,
            grad,
            active_pixels: idx.len(),
            degenerate: true,
        };
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let mut value = 0.0;
    for &p in idx {
        let d = rendered.data[p] - (a * prior.data[p] + b);
        value += d.abs();
        grad.data[p] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    DepthLoss {
        value: value / n,
        grad,
        active_pixels: idx.len(),
        degenerate: false,
    }
}
