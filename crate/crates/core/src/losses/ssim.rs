//! Windowed SSIM on [0, 1] rasters with its gradient.
//!
//! Local statistics use an 11×11 Gaussian window (σ = 1.5) applied as a
//! separable, zero-padded "same" convolution, with C₁ = 0.01² and C₂ = 0.03².

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Zero-padded separable Gaussian blur. Self-adjoint because the kernel is symmetric.
pub(crate) fn blur(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let half = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = x as isize + i as isize - half;
                if sx >= 0 && (sx as usize) < width {
                    acc += kv * row[sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sy = y as isize + i as isize - half;
                if sy >= 0 && (sy as usize) < height {
                    acc += kv * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// SSIM map of one channel plus what its backward pass needs.
pub(crate) struct SsimMap {
    pub map: Vec<f64>,
    width: usize,
    height: usize,
    d_mu: Vec<f64>,
    d_exx: Vec<f64>,
    d_exy: Vec<f64>,
}

pub(crate) fn ssim_map(x: &[f64], y: &[f64], width: usize, height: usize) -> SsimMap {
    let n = width * height;
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(y.len(), n);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = blur(x, width, height);
    let mu_y = blur(y, width, height);
    let e_xx = blur(&xx, width, height);
    let e_yy = blur(&yy, width, height);
    let e_xy = blur(&xy, width, height);

    let mut map = vec![0.0; n];
    let mut d_mu = vec![0.0; n];
    let mut d_exx = vec![0.0; n];
    let mut d_exy = vec![0.0; n];
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sxx = e_xx[p] - mx * mx;
        let syy = e_yy[p] - my * my;
        let sxy = e_xy[p] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * sxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = sxx + syy + SSIM_C2;
        let s = (a1 * a2) / (b1 * b2);
        map[p] = s;
        d_mu[p] = 2.0 * my * (a2 - a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2);
        d_exx[p] = -s / b2;
        d_exy[p] = 2.0 * a1 / (b1 * b2);
    }
    SsimMap {
        map,
        width,
        height,
        d_mu,
        d_exx,
        d_exy,
    }
}

impl SsimMap {
    /// Gradient with respect to the first image given `dL/dmap`.
    pub fn backward(&self, x: &[f64], y: &[f64], dmap: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let a: Vec<f64> = dmap.iter().zip(&self.d_mu).map(|(g, d)| g * d).collect();
        let b: Vec<f64> = dmap.iter().zip(&self.d_exx).map(|(g, d)| g * d).collect();
        let c: Vec<f64> = dmap.iter().zip(&self.d_exy).map(|(g, d)| g * d).collect();
        let a = blur(&a, w, h);
        let b = blur(&b, w, h);
        let c = blur(&c, w, h);
        (0..w * h).map(|q| a[q] + 2.0 * x[q] * b[q] + y[q] * c[q]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(k[i], k[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn blur_is_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w, h) = (9, 7);
        let u: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let v: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let lhs: f64 = blur(&u, w, h).iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(blur(&v, w, h)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn identical_inputs_give_unit_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..64).map(|_| rng.random()).collect();
        let m = ssim_map(&x, &x, 8, 8);
        assert!(m.map.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (8, 8);
        let x: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let wts: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| -> f64 { ssim_map(x, &y, w, h).map.iter().zip(&wts).map(|(a, b)| a * b).sum() };
        let g = ssim_map(&x, &y, w, h).backward(&x, &y, &wts);
        let eps = 1e-6;
        for q in 0..w * h {
            let mut p = x.clone();
            let mut m = x.clone();
            p[q] += eps;
            m[q] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((fd - g[q]).abs() <= 1e-4 * fd.abs().max(1e-2), "{q}: {fd} vs {}", g[q]);
        }
    }
}
