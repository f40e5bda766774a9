use super::ssim::ssim_map;
use crate::error::{Error, Result};
use crate::image::{Image, Raster};

/// Value and gradient of the masked photometric objective.
#[derive(Clone, Debug)]
pub struct PhotometricLoss {
    pub value: f64,
    /// Mean masked SSIM over active pixels and channels.
    pub ssim: f64,
    /// Mean masked absolute error over active pixels and channels.
    pub l1: f64,
    /// ∂L/∂rendered; exactly zero on masked-out pixels.
    pub grad: Image,
    pub active_pixels: usize,
}

/// `λ·(1 − SSIM) + (1 − λ)·L1`, both averaged over mask-active pixels.
///
/// SSIM statistics are computed on mask-multiplied images, so nothing inside
/// the masked-out region reaches the value or the gradient.
pub fn photometric_loss(
    rendered: &Image,
    target: &Image,
    mask: Option<&Raster>,
    lambda_ssim: f64,
) -> Result<PhotometricLoss> {
    if !rendered.same_shape(target) {
        return Err(Error::invalid("rendered and target images differ in shape"));
    }
    let (w, h) = (rendered.width, rendered.height);
    let m: Vec<f64> = match mask {
        Some(mask) => {
            if !mask.same_shape_as_image(rendered) {
                return Err(Error::invalid("mask shape does not match the image"));
            }
            if mask.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid("mask must be binary"));
            }
            mask.data.clone()
        }
        None => vec![1.0; w * h],
    };
    let active = m.iter().filter(|&&v| v == 1.0).count();
    let mut grad = Image::new(w, h);
    if active == 0 {
        return Ok(PhotometricLoss {
            value: 0.0,
            ssim: 0.0,
            l1: 0.0,
            grad,
            active_pixels: 0,
        });
    }
    let norm = 1.0 / (3 * active) as f64;

    let mut l1 = 0.0;
    for p in 0..w * h {
        if m[p] == 0.0 {
            continue;
        }
        for c in 0..3 {
            let d = rendered.data[p * 3 + c] - target.data[p * 3 + c];
            l1 += d.abs();
            grad.data[p * 3 + c] += (1.0 - lambda_ssim) * norm * sign(d);
        }
    }
    l1 *= norm;

    let mut ssim = 0.0;
    if lambda_ssim != 0.0 {
        let dmap: Vec<f64> = m.iter().map(|v| -lambda_ssim * norm * v).collect();
        for c in 0..3 {
            let x: Vec<f64> = (0..w * h).map(|p| m[p] * rendered.data[p * 3 + c]).collect();
            let y: Vec<f64> = (0..w * h).map(|p| m[p] * target.data[p * 3 + c]).collect();
            let sm = ssim_map(&x, &y, w, h);
            ssim += sm.map.iter().zip(&m).map(|(s, v)| s * v).sum::<f64>();
            let g = sm.backward(&x, &y, &dmap);
            for p in 0..w * h {
                grad.data[p * 3 + c] += m[p] * g[p];
            }
        }
        ssim *= norm;
    } else {
        for c in 0..3 {
            let x: Vec<f64> = (0..w * h).map(|p| m[p] * rendered.data[p * 3 + c]).collect();
            let y: Vec<f64> = (0..w * h).map(|p| m[p] * target.data[p * 3 + c]).collect();
            ssim += ssim_map(&x, &y, w, h)
                .map
                .iter()
                .zip(&m)
                .map(|(s, v)| s * v)
                .sum::<f64>();
        }
        ssim *= norm;
    }
    // Masked pixels: force exact zeros (m·g can be −0.0).
    for p in 0..w * h {
        if m[p] == 0.0 {
            grad.data[p * 3..p * 3 + 3].fill(0.0);
        }
    }
    Ok(PhotometricLoss {
        value: lambda_ssim * (1.0 - ssim) + (1.0 - lambda_ssim) * l1,
        ssim,
        l1,
        grad,
        active_pixels: active,
    })
}

#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}
