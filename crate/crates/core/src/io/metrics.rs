//! Image quality metrics.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::ssim::ssim_map;

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "metric shape mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.data.is_empty() {
        return Err(Error::invalid("metric on an empty image"));
    }
    Ok(())
}

/// `10·log10(1/MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean windowed SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let mut total = 0.0;
    for c in 0..3 {
        let x = a.channel(c).data;
        let y = b.channel(c).data;
        total += ssim_map(&x, &y, a.width, a.height).map.iter().sum::<f64>();
    }
    Ok(total / a.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let a = Image::filled(12, 12, [0.3, 0.6, 0.1]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_gives_20_db() {
        let a = Image::filled(8, 8, [0.5; 3]);
        let b = Image::filled(8, 8, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut a = Image::new(16, 16);
        let mut b = Image::new(16, 16);
        for i in 0..a.data.len() {
            a.data[i] = ((i * 7919) % 101) as f64 / 100.0;
            b.data[i] = ((i * 104729) % 89) as f64 / 88.0;
        }
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }
}
