//! Tile-based α-blending rasterizer with softmax-weighted depth and its
//! analytic backward pass.
//!
//! Splats are sorted once by depth (ascending, ties by index) and binned into
//! 16×16 tiles by the exact footprint where their α can reach the 1/255
//! floor. Each pixel blends front to back:
//!
//! ```text
//! C = Σ c_i α_i T_i + background · T_final,   T_i = Π_{j<i} (1 − α_j)
//! D = Σ d_i softmax_i(α_i T_i / τ)
//! ```
//!
//! Blending stops before a splat would push transmittance under 1e-4.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Raster};
use crate::primitives::{Splat2D, SplatGrad, Sym2};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const DEFAULT_DEPTH_TEMPERATURE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub depth: Raster,
    pub final_transmittance: Raster,
    pub contrib_count: Vec<u32>,
}

/// Per-splat screen-space gradient statistics from one backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    /// Σ over pixels of |∂L/∂mean2d|, component-wise.
    pub abs_grad2d: Vec<Vector2<f64>>,
    /// Σ over pixels of ∂L/∂mean2d.
    pub grad2d: Vec<Vector2<f64>>,
    /// 1 if the splat contributed to any pixel of this render.
    pub hit_count: Vec<u32>,
}

impl GradStats {
    pub fn zeros(n: usize) -> Self {
        Self {
            abs_grad2d: vec![Vector2::zeros(); n],
            grad2d: vec![Vector2::zeros(); n],
            hit_count: vec![0; n],
        }
    }
}

#[derive(Clone, Debug)]
struct TileRecord {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    /// Splat indices overlapping the tile, in blend order.
    list: Vec<u32>,
    /// Per-pixel contributor ranges into `contributors`.
    offsets: Vec<u32>,
    contributors: Vec<u32>,
}

/// Everything the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BlendRecord {
    width: usize,
    height: usize,
    background: [f64; 3],
    tau: f64,
    splats: Vec<Splat2D>,
    conics: Vec<Sym2>,
    tiles: Vec<TileRecord>,
}

impl BlendRecord {
    pub fn splats(&self) -> &[Splat2D] {
        &self.splats
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// α of a splat at a pixel center, before the contribution floor.
struct AlphaEval {
    alpha: f64,
    gauss: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

#[inline]
fn eval_alpha(s: &Splat2D, conic: &Sym2, px: f64, py: f64) -> Option<AlphaEval> {
    let dx = px - s.mean2d.x;
    let dy = py - s.mean2d.y;
    let power = -0.5 * (conic.xx * dx * dx + conic.yy * dy * dy) - conic.xy * dx * dy;
    if power > 0.0 {
        return None;
    }
    let gauss = power.exp();
    let raw = s.opacity * gauss;
    let clamped = raw > ALPHA_MAX;
    let alpha = if clamped { ALPHA_MAX } else { raw };
    if alpha < ALPHA_MIN {
        return None;
    }
    Some(AlphaEval {
        alpha,
        gauss,
        clamped,
        dx,
        dy,
    })
}

/// Pixel-index bounds `[x0, x1) × [y0, y1)` where the splat can reach the α floor.
fn footprint(s: &Splat2D, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let peak = s.opacity.min(ALPHA_MAX);
    if !(peak >= ALPHA_MIN) {
        return None;
    }
    let r2 = 2.0 * (s.opacity / ALPHA_MIN).ln().max(0.0);
    let hx = (r2 * s.cov2d.xx).sqrt();
    let hy = (r2 * s.cov2d.yy).sqrt();
    // Pixel x has center x + 0.5.
    let lo_x = (s.mean2d.x - hx - 0.5).ceil().max(0.0);
    let hi_x = (s.mean2d.x + hx - 0.5).floor() + 1.0;
    let lo_y = (s.mean2d.y - hy - 0.5).ceil().max(0.0);
    let hi_y = (s.mean2d.y + hy - 0.5).floor() + 1.0;
    if !(lo_x.is_finite() && hi_x.is_finite() && lo_y.is_finite() && hi_y.is_finite()) {
        return None;
    }
    let x1 = hi_x.min(width as f64);
    let y1 = hi_y.min(height as f64);
    if lo_x >= x1 || lo_y >= y1 {
        return None;
    }
    Some((lo_x as usize, x1 as usize, lo_y as usize, y1 as usize))
}

struct PixelOut {
    color: [f64; 3],
    depth: f64,
    transmittance: f64,
}

/// Stable softmax weights of `w / tau`.
fn softmax(weights: &[f64], tau: f64, out: &mut Vec<f64>) {
    out.clear();
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &w in weights {
        let e = ((w - max) / tau).exp();
        out.push(e);
        sum += e;
    }
    for e in out.iter_mut() {
        *e /= sum;
    }
}

pub fn rasterize_forward(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    background: [f64; 3],
    tau: f64,
) -> Result<(RenderOutput, BlendRecord)> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image size {width}x{height} must be positive")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("depth temperature {tau} must be positive")));
    }
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);

    let conics: Vec<Sym2> = splats.iter().map(|s| s.cov2d.inverse().unwrap_or_default()).collect();

    let mut order: Vec<usize> = (0..splats.len())
        .filter(|&i| splats[i].cov2d.inverse().is_some() && splats[i].depth > 0.0)
        .collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));

    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let Some((x0, x1, y0, y1)) = footprint(&splats[i], width, height) else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=(y1 - 1) / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=(x1 - 1) / TILE_SIZE {
                tile_lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let tiles: Vec<(TileRecord, Vec<PixelOut>)> = tile_lists
        .into_par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(width);
            let y1 = (y0 + TILE_SIZE).min(height);
            let mut offsets = Vec::with_capacity((x1 - x0) * (y1 - y0) + 1);
            let mut contributors = Vec::new();
            let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut weights = Vec::new();
            let mut depths = Vec::new();
            let mut soft = Vec::new();
            offsets.push(0u32);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut t_acc = 1.0;
                    let mut acc = [0.0; 3];
                    weights.clear();
                    depths.clear();
                    for &id in &list {
                        let s = &splats[id as usize];
                        let Some(a) = eval_alpha(s, &conics[id as usize], px, py) else {
                            continue;
                        };
                        let next_t = t_acc * (1.0 - a.alpha);
                        if next_t < TRANSMITTANCE_MIN {
                            break;
                        }
                        let w = a.alpha * t_acc;
                        for c in 0..3 {
                            acc[c] += s.color[c] * w;
                        }
                        weights.push(w);
                        depths.push(s.depth);
                        contributors.push(id);
                        t_acc = next_t;
                    }
                    offsets.push(contributors.len() as u32);
                    let depth = if weights.is_empty() {
                        0.0
                    } else {
                        softmax(&weights, tau, &mut soft);
                        soft.iter().zip(&depths).map(|(s, d)| s * d).sum()
                    };
                    pixels.push(PixelOut {
                        color: std::array::from_fn(|c| acc[c] + background[c] * t_acc),
                        depth,
                        transmittance: t_acc,
                    });
                }
            }
            (
                TileRecord {
                    x0,
                    y0,
                    x1,
                    y1,
                    list,
                    offsets,
                    contributors,
                },
                pixels,
            )
        })
        .collect();

    let mut color = Image::new(width, height);
    let mut depth = Raster::new(width, height);
    let mut final_t = Raster::new(width, height);
    let mut contrib_count = vec![0u32; width * height];
    let mut records = Vec::with_capacity(tiles.len());
    for (rec, pixels) in tiles {
        let mut k = 0;
        for y in rec.y0..rec.y1 {
            for x in rec.x0..rec.x1 {
                let p = &pixels[k];
                color.set_pixel(x, y, p.color);
                depth.set(x, y, p.depth);
                final_t.set(x, y, p.transmittance);
                contrib_count[y * width + x] = rec.offsets[k + 1] - rec.offsets[k];
                k += 1;
            }
        }
        records.push(rec);
    }

    Ok((
        RenderOutput {
            color,
            depth,
            final_transmittance: final_t,
            contrib_count,
        },
        BlendRecord {
            width,
            height,
            background,
            tau,
            splats: splats.to_vec(),
            conics,
            tiles: records,
        },
    ))
}

#[derive(Clone, Copy, Default)]
struct Partial {
    mean2d: Vector2<f64>,
    abs2d: Vector2<f64>,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    hit: bool,
}

/// Backward pass: per-splat gradients (indexed like the forward input) and
/// screen-space gradient statistics.
pub fn rasterize_backward(
    record: &BlendRecord,
    dl_dcolor: &Image,
    dl_ddepth: &Raster,
) -> Result<(Vec<SplatGrad>, GradStats)> {
    let (w, h) = (record.width, record.height);
    if dl_dcolor.width != w || dl_dcolor.height != h || dl_ddepth.width != w || dl_ddepth.height != h {
        return Err(Error::invalid(format!(
            "cotangent shapes {}x{} / {}x{} do not match the {w}x{h} render",
            dl_dcolor.width, dl_dcolor.height, dl_ddepth.width, dl_ddepth.height
        )));
    }
    let splats = &record.splats;
    let conics = &record.conics;
    let bg = record.background;
    let tau = record.tau;

    let partials: Vec<Vec<Partial>> = record
        .tiles
        .par_iter()
        .map(|tile| {
            let mut local = vec![Partial::default(); tile.list.len()];
            if tile.list.is_empty() {
                return local;
            }
            // Map splat id -> position in this tile's list.
            let slot = |id: u32| {
                tile.list.binary_search_by(|&other| {
                    let (a, b) = (&splats[other as usize], &splats[id as usize]);
                    a.depth.total_cmp(&b.depth).then(other.cmp(&id))
                })
            };
            let mut alphas = Vec::new();
            let mut trans = Vec::new();
            let mut evals = Vec::new();
            let mut weights = Vec::new();
            let mut soft = Vec::new();
            let mut k = 0;
            for y in tile.y0..tile.y1 {
                for x in tile.x0..tile.x1 {
                    let range = tile.offsets[k] as usize..tile.offsets[k + 1] as usize;
                    k += 1;
                    let ids = &tile.contributors[range];
                    if ids.is_empty() {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let gi = (y * w + x) * 3;
                    let g_c = [dl_dcolor.data[gi], dl_dcolor.data[gi + 1], dl_dcolor.data[gi + 2]];
                    let g_d = dl_ddepth.data[y * w + x];

                    alphas.clear();
                    trans.clear();
                    evals.clear();
                    weights.clear();
                    let mut t_acc = 1.0;
                    for &id in ids {
                        let s = &splats[id as usize];
                        let a = eval_alpha(s, &conics[id as usize], px, py)
                            .expect("contributor must have α above the floor");
                        trans.push(t_acc);
                        alphas.push(a.alpha);
                        weights.push(a.alpha * t_acc);
                        t_acc *= 1.0 - a.alpha;
                        evals.push(a);
                    }
                    let t_final = t_acc;
                    softmax(&weights, tau, &mut soft);
                    let depth: f64 = soft.iter().zip(ids).map(|(s, &id)| s * splats[id as usize].depth).sum();

                    let mut suffix = (g_c[0] * bg[0] + g_c[1] * bg[1] + g_c[2] * bg[2]) * t_final;
                    for n in (0..ids.len()).rev() {
                        let id = ids[n];
                        let s = &splats[id as usize];
                        let e = &evals[n];
                        let p = &mut local[slot(id).expect("contributor listed in tile")];
                        p.hit = true;
                        let wgt = weights[n];
                        for c in 0..3 {
                            p.color[c] += g_c[c] * wgt;
                        }
                        p.depth += g_d * soft[n];
                        let g_w = g_c[0] * s.color[0]
                            + g_c[1] * s.color[1]
                            + g_c[2] * s.color[2]
                            + g_d * soft[n] * (s.depth - depth) / tau;
                        let d_alpha = g_w * trans[n] - suffix / (1.0 - alphas[n]);
                        suffix += g_w * wgt;
                        if e.clamped {
                            continue;
                        }
                        p.opacity += d_alpha * e.gauss;
                        let d_power = d_alpha * e.alpha;
                        let c = &conics[id as usize];
                        let gm = Vector2::new(
                            d_power * (c.xx * e.dx + c.xy * e.dy),
                            d_power * (c.xy * e.dx + c.yy * e.dy),
                        );
                        p.mean2d += gm;
                        p.abs2d += gm.abs();
                        p.conic[0] += -0.5 * d_power * e.dx * e.dx;
                        p.conic[1] += -d_power * e.dx * e.dy;
                        p.conic[2] += -0.5 * d_power * e.dy * e.dy;
                    }
                }
            }
            local
        })
        .collect();

    let n = splats.len();
    let mut acc = vec![Partial::default(); n];
    for (tile, local) in record.tiles.iter().zip(&partials) {
        for (&id, p) in tile.list.iter().zip(local) {
            let a = &mut acc[id as usize];
            a.mean2d += p.mean2d;
            a.abs2d += p.abs2d;
            for c in 0..3 {
                a.conic[c] += p.conic[c];
                a.color[c] += p.color[c];
            }
            a.opacity += p.opacity;
            a.depth += p.depth;
            a.hit |= p.hit;
        }
    }

    let mut grads = Vec::with_capacity(n);
    let mut stats = GradStats::zeros(n);
    for (i, a) in acc.iter().enumerate() {
        let inv = &conics[i];
        // dL/dΣ = −Σ⁻¹ (dL/dΣ⁻¹) Σ⁻¹ with the shared off-diagonal split in half.
        let gi = nalgebra::Matrix2::new(a.conic[0], 0.5 * a.conic[1], 0.5 * a.conic[1], a.conic[2]);
        let m = nalgebra::Matrix2::new(inv.xx, inv.xy, inv.xy, inv.yy);
        let full = -(m * gi * m);
        grads.push(SplatGrad {
            mean2d: a.mean2d,
            cov2d: Sym2::new(full[(0, 0)], full[(0, 1)] + full[(1, 0)], full[(1, 1)]),
            depth: a.depth,
            opacity: a.opacity,
            color: a.color,
        });
        stats.abs_grad2d[i] = a.abs2d;
        stats.grad2d[i] = a.mean2d;
        stats.hit_count[i] = a.hit as u32;
    }
    Ok((grads, stats))
}
