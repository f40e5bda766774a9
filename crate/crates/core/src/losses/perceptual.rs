//! Perceptual distance used to gate and weight generated-view supervision.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::ssim::{ssim_map, SSIM_WINDOW};
use crate::error::{Error, Result};
use crate::image::Image;

/// Distance between two equally shaped [0, 1] images and its gradient with
/// respect to the first. Implementations must be deterministic.
pub trait PerceptualMetric: Send + Sync {
    fn distance(&self, a: &Image, b: &Image) -> Result<(f64, Image)>;

    fn name(&self) -> &str;
}

const MS_SSIM_WEIGHTS: [f64; 3] = [0.0448, 0.2856, 0.3001];
/// Per-scale SSIM below this is treated as the floor (no gradient).
const MS_SSIM_FLOOR: f64 = 1e-6;

/// `1 − MS-SSIM` over up to three dyadic scales.
///
/// Each scale contributes its full mean SSIM (luminance, contrast, structure),
/// combined by a weighted geometric mean with the standard first three
/// MS-SSIM weights renormalized. Scales whose shorter side is below the SSIM
/// window are dropped; at least one scale is always used.
#[derive(Clone, Copy, Debug, Default)]
pub struct MsSsimDistance;

fn downsample(src: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = vec![0.0; nw * nh * 3];
    for y in 0..nh {
        for x in 0..nw {
            for c in 0..3 {
                let at = |xx: usize, yy: usize| src[(yy * w + xx) * 3 + c];
                out[(y * nw + x) * 3 + c] =
                    0.25 * (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1));
            }
        }
    }
    (out, nw, nh)
}

fn upsample_adjoint(grad: &[f64], w: usize, h: usize, fine_w: usize, fine_h: usize) -> Vec<f64> {
    let mut out = vec![0.0; fine_w * fine_h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let g = 0.25 * grad[(y * w + x) * 3 + c];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out[((2 * y + dy) * fine_w + 2 * x + dx) * 3 + c] += g;
                }
            }
        }
    }
    out
}

impl MsSsimDistance {
    fn scale_count(w: usize, h: usize) -> usize {
        let mut n = 1;
        let (mut w, mut h) = (w / 2, h / 2);
        while n < MS_SSIM_WEIGHTS.len() && w.min(h) >= SSIM_WINDOW {
            n += 1;
            w /= 2;
            h /= 2;
        }
        n
    }
}

impl PerceptualMetric for MsSsimDistance {
    fn distance(&self, a: &Image, b: &Image) -> Result<(f64, Image)> {
        if !a.same_shape(b) {
            return Err(Error::invalid("perceptual distance needs equally shaped images"));
        }
        let scales = Self::scale_count(a.width, a.height);
        let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
        let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / wsum).collect();

        // Pyramid.
        let mut levels = vec![(a.data.clone(), b.data.clone(), a.width, a.height)];
        for _ in 1..scales {
            let (pa, pb, w, h) = levels.last().unwrap();
            let (da, nw, nh) = downsample(pa, *w, *h);
            let (db, _, _) = downsample(pb, *w, *h);
            levels.push((da, db, nw, nh));
        }

        let mut per_scale = Vec::with_capacity(scales);
        let mut maps = Vec::with_capacity(scales);
        for (pa, pb, w, h) in &levels {
            let mut channel_maps = Vec::with_capacity(3);
            let mut total = 0.0;
            for c in 0..3 {
                let x: Vec<f64> = pa.iter().skip(c).step_by(3).copied().collect();
                let y: Vec<f64> = pb.iter().skip(c).step_by(3).copied().collect();
                let m = ssim_map(&x, &y, *w, *h);
                total += m.map.iter().sum::<f64>();
                channel_maps.push((m, x, y));
            }
            per_scale.push(total / (3 * w * h) as f64);
            maps.push(channel_maps);
        }

        let clamped: Vec<f64> = per_scale.iter().map(|s| s.max(MS_SSIM_FLOOR)).collect();
        let ms: f64 = clamped.iter().zip(&weights).map(|(s, w)| s.powf(*w)).product();

        // Backward, coarse to fine.
        let mut grad_fine: Option<Vec<f64>> = None;
        for j in (0..scales).rev() {
            let (_, _, w, h) = &levels[j];
            let mut g = vec![0.0; w * h * 3];
            if per_scale[j] > MS_SSIM_FLOOR {
                // d(1 − ms)/dS_j = −w_j·ms/S_j, and dS_j/dmap = 1/(3wh).
                let coef = -weights[j] * ms / per_scale[j] / (3 * w * h) as f64;
                let dmap = vec![coef; w * h];
                for (c, (m, x, y)) in maps[j].iter().enumerate() {
                    let gc = m.backward(x, y, &dmap);
                    for p in 0..w * h {
                        g[p * 3 + c] += gc[p];
                    }
                }
            }
            if let Some(coarse) = grad_fine.take() {
                let (_, _, cw, ch) = &levels[j + 1];
                let up = upsample_adjoint(&coarse, *cw, *ch, *w, *h);
                for (gi, ui) in g.iter_mut().zip(up) {
                    *gi += ui;
                }
            }
            grad_fine = Some(g);
        }
        let grad = Image::from_data(a.width, a.height, grad_fine.unwrap())?;
        Ok((1.0 - ms, grad))
    }

    fn name(&self) -> &str {
        "ms-ssim"
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Key of an image for [`PrecomputedDistance`]: FNV-1a of its 8-bit quantized bytes.
pub fn image_key(img: &Image) -> String {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    format!("{:016x}", fnv1a64(&bytes))
}

/// File-backed distance table keyed by the second (generated) image.
///
/// JSON: `{"default": 0.3, "entries": {"<image_key>": 0.7, ...}}`. The
/// gradient is always zero.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecomputedDistance {
    #[serde(default)]
    pub default: Option<f64>,
    #[serde(default)]
    pub entries: HashMap<String, f64>,
}

impl PrecomputedDistance {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn constant(d: f64) -> Self {
        Self {
            default: Some(d),
            entries: HashMap::new(),
        }
    }
}

impl PerceptualMetric for PrecomputedDistance {
    fn distance(&self, a: &Image, b: &Image) -> Result<(f64, Image)> {
        if !a.same_shape(b) {
            return Err(Error::invalid("perceptual distance needs equally shaped images"));
        }
        let key = image_key(b);
        let d = self
            .entries
            .get(&key)
            .copied()
            .or(self.default)
            .ok_or_else(|| Error::invalid(format!("no precomputed distance for image {key}")))?;
        Ok((d, Image::new(a.width, a.height)))
    }

    fn name(&self) -> &str {
        "precomputed"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    fn smooth_image(w: usize, h: usize, phase: f64) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5 + 0.4 * ((x as f64 * 0.3 + phase).sin() * (y as f64 * 0.2).cos());
                img.set_pixel(x, y, [v, 1.0 - v, 0.5 * v]);
            }
        }
        img
    }

    #[test]
    fn identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 48, 40);
        assert_eq!(MsSsimDistance.distance(&a, &a).unwrap().0, 0.0);
    }

    #[test]
    fn black_versus_white_is_near_one() {
        // Away from the border, SSIM of constant 0 vs 1 is C₁ / (1 + C₁) ≈ 1e-4;
        // zero padding only lowers it further near the edges.
        let a = Image::filled(64, 64, [0.0; 3]);
        let b = Image::filled(64, 64, [1.0; 3]);
        let (d, _) = MsSsimDistance.distance(&a, &b).unwrap();
        assert!(d <= 1.0 && (d - 1.0).abs() < 1e-3, "{d}");
    }

    #[test]
    fn symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 50, 45);
        let b = smooth_image(50, 45, 0.3);
        let (d1, _) = MsSsimDistance.distance(&a, &b).unwrap();
        let (d2, _) = MsSsimDistance.distance(&b, &a).unwrap();
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn scale_fallback() {
        assert_eq!(MsSsimDistance::scale_count(64, 64), 3);
        assert_eq!(MsSsimDistance::scale_count(30, 30), 2);
        assert_eq!(MsSsimDistance::scale_count(16, 16), 1);
        assert_eq!(MsSsimDistance::scale_count(5, 5), 1);
        let a = Image::filled(5, 5, [0.2; 3]);
        assert!(MsSsimDistance.distance(&a, &a).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = smooth_image(24, 22, 0.0);
        let b = smooth_image(24, 22, 0.7);
        let (_, g) = MsSsimDistance.distance(&a, &b).unwrap();
        let eps = 1e-6;
        for i in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += eps;
            m.data[i] -= eps;
            let fd =
                (MsSsimDistance.distance(&p, &b).unwrap().0 - MsSsimDistance.distance(&m, &b).unwrap().0) / (2.0 * eps);
            assert!(
                (fd - g.data[i]).abs() <= 1e-4 * fd.abs().max(1e-4),
                "{i}: {fd} vs {}",
                g.data[i]
            );
        }
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn precomputed_lookup() {
        let a = Image::filled(4, 4, [0.1; 3]);
        let b = Image::filled(4, 4, [0.9; 3]);
        let mut table = PrecomputedDistance::constant(0.2);
        table.entries.insert(image_key(&b), 0.8);
        assert_eq!(table.distance(&a, &b).unwrap().0, 0.8);
        assert_eq!(table.distance(&b, &a).unwrap().0, 0.2);
        let strict = PrecomputedDistance {
            default: None,
            entries: HashMap::new(),
        };
        assert!(strict.distance(&a, &b).is_err());
    }
}
