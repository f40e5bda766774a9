//! Anchor-based neural Gaussians.
//!
//! Each anchor carries a position `x_v`, a feature vector, `k` learnable
//! offsets and a per-axis scaling `l_v`. For a given camera it spawns `k`
//! Gaussians at `μ_i = x_v + O_i ⊙ l_v`, with opacity, color, scale and
//! rotation decoded by small MLPs from `(feature, ‖x_v − c‖, (x_v − c)/‖x_v − c‖)`.
//! The color head also receives a per-image appearance embedding.

mod densify;
mod mlp;

pub use densify::{densify_anchors, init_anchors_from_points, prune_anchors, voxel_key};
pub use mlp::{param_count, Mlp, MlpTape};

use nalgebra::{Quaternion, Vector3, Vector4};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SH_C0;
use crate::primitives::{logit, Gaussian3D, GaussianGrad};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaffoldConfig {
    pub offsets_per_anchor: usize,
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub appearance_dim: usize,
    /// Initial output bias of the opacity head (tanh space).
    pub opacity_bias: f64,
}

impl Default for ScaffoldConfig {
    fn default() -> Self {
        Self {
            offsets_per_anchor: 10,
            feature_dim: 32,
            hidden_width: 32,
            appearance_dim: 16,
            opacity_bias: 0.5,
        }
    }
}

impl ScaffoldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.offsets_per_anchor == 0 || self.feature_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config("scaffold sizes must be positive".into()));
        }
        Ok(())
    }

    fn base_input_dim(&self) -> usize {
        self.feature_dim + 4
    }
}

/// One anchor, as an owned value.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub position: Vector3<f64>,
    pub feature: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
    /// `l_v`, strictly positive.
    pub scaling: Vector3<f64>,
}

/// Anchors stored column-wise so each field is one optimizer group.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub k: usize,
    pub feature_dim: usize,
    pub positions: Vec<f64>,
    pub offsets: Vec<f64>,
    pub features: Vec<f64>,
    /// `ln l_v`.
    pub log_scaling: Vec<f64>,
}

impl AnchorSet {
    pub fn new(k: usize, feature_dim: usize) -> Self {
        Self {
            k,
            feature_dim,
            positions: Vec::new(),
            offsets: Vec::new(),
            features: Vec::new(),
            log_scaling: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.positions[3 * i..3 * i + 3])
    }

    pub fn get(&self, i: usize) -> Anchor {
        let k = self.k;
        Anchor {
            position: self.position(i),
            feature: self.features[i * self.feature_dim..(i + 1) * self.feature_dim].to_vec(),
            offsets: (0..k)
                .map(|j| Vector3::from_column_slice(&self.offsets[(i * k + j) * 3..(i * k + j) * 3 + 3]))
                .collect(),
            scaling: Vector3::from_column_slice(&self.log_scaling[3 * i..3 * i + 3]).map(f64::exp),
        }
    }

    pub fn push(&mut self, a: &Anchor) -> Result<()> {
        if a.offsets.len() != self.k || a.feature.len() != self.feature_dim {
            return Err(Error::invalid("anchor shape does not match the set"));
        }
        if a.scaling.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("anchor scaling must be positive"));
        }
        self.positions.extend(a.position.iter());
        self.features.extend(&a.feature);
        for o in &a.offsets {
            self.offsets.extend(o.iter());
        }
        self.log_scaling.extend(a.scaling.iter().map(|s| s.ln()));
        Ok(())
    }

    /// Keeps anchors where `keep[i]` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        fn filter(v: &mut Vec<f64>, row: usize, keep: &[bool]) {
            let mut out = Vec::with_capacity(v.len());
            for (i, chunk) in v.chunks(row).enumerate() {
                if keep[i] {
                    out.extend_from_slice(chunk);
                }
            }
            *v = out;
        }
        filter(&mut self.positions, 3, keep);
        filter(&mut self.offsets, 3 * self.k, keep);
        filter(&mut self.features, self.feature_dim, keep);
        filter(&mut self.log_scaling, 3, keep);
    }
}

/// Decoder heads and the per-image appearance table.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBank {
    pub k: usize,
    pub appearance_dim: usize,
    pub opacity: Mlp,
    pub color: Mlp,
    pub scale_rot: Mlp,
    /// `image_count × appearance_dim`, row-major.
    pub appearance: Vec<f64>,
}

impl DecoderBank {
    pub fn new<R: Rng>(cfg: &ScaffoldConfig, image_count: usize, rng: &mut R) -> Self {
        let k = cfg.offsets_per_anchor;
        let inp = cfg.base_input_dim();
        let h = cfg.hidden_width;
        let mut opacity = Mlp::new(&[inp, h, h, k], rng);
        let color = Mlp::new(&[inp + cfg.appearance_dim, h, h, 3 * k], rng);
        let mut scale_rot = Mlp::new(&[inp, h, h, 7 * k], rng);
        opacity.output_bias_mut().fill(cfg.opacity_bias);
        // Start rotations near identity.
        for q in scale_rot.output_bias_mut()[3 * k..].chunks_mut(4) {
            q[0] = 1.0;
        }
        Self {
            k,
            appearance_dim: cfg.appearance_dim,
            opacity,
            color,
            scale_rot,
            appearance: vec![0.0; image_count * cfg.appearance_dim],
        }
    }

    pub fn image_count(&self) -> usize {
        self.appearance.len().checked_div(self.appearance_dim).unwrap_or(0)
    }

    fn embedding(&self, id: usize) -> Result<&[f64]> {
        if self.appearance_dim == 0 {
            return Ok(&[]);
        }
        if id >= self.image_count() {
            return Err(Error::invalid(format!(
                "appearance id {id} outside table of {}",
                self.image_count()
            )));
        }
        Ok(&self.appearance[id * self.appearance_dim..(id + 1) * self.appearance_dim])
    }
}

/// Gradient buffers matching [`AnchorSet`] and [`DecoderBank`] layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldGrads {
    pub positions: Vec<f64>,
    pub offsets: Vec<f64>,
    pub features: Vec<f64>,
    pub log_scaling: Vec<f64>,
    pub opacity: Vec<f64>,
    pub color: Vec<f64>,
    pub scale_rot: Vec<f64>,
    pub appearance: Vec<f64>,
}

impl ScaffoldGrads {
    pub fn zeros(anchors: &AnchorSet, dec: &DecoderBank) -> Self {
        Self {
            positions: vec![0.0; anchors.positions.len()],
            offsets: vec![0.0; anchors.offsets.len()],
            features: vec![0.0; anchors.features.len()],
            log_scaling: vec![0.0; anchors.log_scaling.len()],
            opacity: vec![0.0; dec.opacity.params.len()],
            color: vec![0.0; dec.color.params.len()],
            scale_rot: vec![0.0; dec.scale_rot.params.len()],
            appearance: vec![0.0; dec.appearance.len()],
        }
    }
}

/// The `k` decoded Gaussians of one anchor; invisible ones carry α = 0.
#[derive(Clone, Debug)]
pub struct NeuralGaussians {
    pub gaussians: Vec<Gaussian3D>,
    pub visible: Vec<bool>,
    /// Raw tanh opacity per Gaussian (≤ 0 means invisible).
    pub opacity: Vec<f64>,
}

/// Forward state for one anchor.
#[derive(Clone, Debug)]
pub struct AnchorTape {
    dist: f64,
    dir: Vector3<f64>,
    opacity_tape: MlpTape,
    color_tape: MlpTape,
    scale_rot_tape: MlpTape,
    alphas: Vec<f64>,
    rgb: Vec<f64>,
    raw_quats: Vec<Vector4<f64>>,
    appearance_id: usize,
}

/// Keeps the logit finite for α at the ends of (0, 1).
const ALPHA_GUARD: f64 = 1e-9;

pub fn decode_neural_gaussians(
    anchor: &Anchor,
    decoders: &DecoderBank,
    camera_center: &Vector3<f64>,
    appearance_id: usize,
) -> Result<NeuralGaussians> {
    decode_with_tape(anchor, decoders, camera_center, appearance_id).map(|(n, _)| n)
}

pub(crate) fn decode_with_tape(
    anchor: &Anchor,
    dec: &DecoderBank,
    camera_center: &Vector3<f64>,
    appearance_id: usize,
) -> Result<(NeuralGaussians, AnchorTape)> {
    let k = dec.k;
    if anchor.offsets.len() != k {
        return Err(Error::invalid("anchor offset count does not match the decoders"));
    }
    let embedding = dec.embedding(appearance_id)?;
    let v = anchor.position - camera_center;
    let dist = v.norm();
    let dir = if dist > 0.0 {
        v / dist
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };

    let mut input = anchor.feature.clone();
    input.push(dist);
    input.extend(dir.iter());
    if input.len() != dec.opacity.input_dim() {
        return Err(Error::invalid("anchor feature size does not match the decoders"));
    }
    let (op_out, opacity_tape) = dec.opacity.forward(&input);
    let (sr_out, scale_rot_tape) = dec.scale_rot.forward(&input);
    input.extend_from_slice(embedding);
    let (col_out, color_tape) = dec.color.forward(&input);

    let alphas: Vec<f64> = op_out.iter().map(|h| h.tanh()).collect();
    let rgb: Vec<f64> = col_out.iter().map(|h| crate::primitives::sigmoid(*h)).collect();
    let log_l = anchor.scaling.map(f64::ln);
    let mut gaussians = Vec::with_capacity(k);
    let mut visible = Vec::with_capacity(k);
    let mut raw_quats = Vec::with_capacity(k);
    for i in 0..k {
        let vis = alphas[i] > 0.0;
        let q = Vector4::new(
            sr_out[3 * k + 4 * i],
            sr_out[3 * k + 4 * i + 1],
            sr_out[3 * k + 4 * i + 2],
            sr_out[3 * k + 4 * i + 3],
        );
        raw_quats.push(q);
        let qn = q.norm();
        let qu = if qn > 0.0 {
            q / qn
        } else {
            Vector4::new(1.0, 0.0, 0.0, 0.0)
        };
        let a = alphas[i].clamp(ALPHA_GUARD, 1.0 - ALPHA_GUARD);
        gaussians.push(Gaussian3D {
            mu: anchor.position + anchor.offsets[i].component_mul(&anchor.scaling),
            log_scale: Vector3::new(sr_out[3 * i], sr_out[3 * i + 1], sr_out[3 * i + 2]) + log_l,
            rotation: Quaternion::new(qu[0], qu[1], qu[2], qu[3]),
            opacity_logit: if vis { logit(a) } else { f64::NEG_INFINITY },
            sh: (0..3).map(|c| (rgb[3 * i + c] - 0.5) / SH_C0).collect(),
        });
        visible.push(vis);
    }
    Ok((
        NeuralGaussians {
            gaussians,
            visible,
            opacity: alphas.clone(),
        },
        AnchorTape {
            dist,
            dir,
            opacity_tape,
            color_tape,
            scale_rot_tape,
            alphas,
            rgb,
            raw_quats,
            appearance_id,
        },
    ))
}

/// Per-anchor gradient before scattering into [`ScaffoldGrads`].
#[derive(Clone, Debug)]
pub(crate) struct AnchorGrad {
    pub position: Vector3<f64>,
    pub feature: Vec<f64>,
    pub offsets: Vec<Vector3<f64>>,
    pub log_scaling: Vector3<f64>,
    pub opacity: Vec<f64>,
    pub color: Vec<f64>,
    pub scale_rot: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Backward through one anchor's decode; `grads[i]` is the gradient of the
/// i-th neural Gaussian (ignored when invisible).
pub(crate) fn decode_backward(
    anchor: &Anchor,
    dec: &DecoderBank,
    tape: &AnchorTape,
    grads: &[Option<&GaussianGrad>],
) -> AnchorGrad {
    let k = dec.k;
    let mut out = AnchorGrad {
        position: Vector3::zeros(),
        feature: vec![0.0; anchor.feature.len()],
        offsets: vec![Vector3::zeros(); k],
        log_scaling: Vector3::zeros(),
        opacity: vec![0.0; dec.opacity.params.len()],
        color: vec![0.0; dec.color.params.len()],
        scale_rot: vec![0.0; dec.scale_rot.params.len()],
        embedding: vec![0.0; dec.appearance_dim],
    };
    let mut d_op = vec![0.0; k];
    let mut d_col = vec![0.0; 3 * k];
    let mut d_sr = vec![0.0; 7 * k];
    let mut any = false;
    for i in 0..k {
        let Some(g) = grads[i] else { continue };
        if tape.alphas[i] <= 0.0 {
            continue;
        }
        any = true;
        // μ_i = x_v + O_i ⊙ l_v
        out.position += g.mu;
        out.offsets[i] += g.mu.component_mul(&anchor.scaling);
        out.log_scaling += g.mu.component_mul(&anchor.offsets[i]).component_mul(&anchor.scaling);
        // log_scale_i = raw + ln l_v
        out.log_scaling += g.log_scale;
        for c in 0..3 {
            d_sr[3 * i + c] = g.log_scale[c];
        }
        // Unit quaternion from the raw head output.
        let q = tape.raw_quats[i];
        let qn = q.norm();
        if qn > 0.0 {
            let u = q / qn;
            let dq = (g.rotation - u * u.dot(&g.rotation)) / qn;
            for c in 0..4 {
                d_sr[3 * k + 4 * i + c] = dq[c];
            }
        }
        // Opacity: logit(α) with α = tanh(h).
        let a = tape.alphas[i];
        let ac = a.clamp(ALPHA_GUARD, 1.0 - ALPHA_GUARD);
        let d_alpha = if ac == a {
            g.opacity_logit / (a * (1.0 - a))
        } else {
            0.0
        };
        d_op[i] = d_alpha * (1.0 - a * a);
        // Color: sh0 = (rgb − 0.5)/C0, rgb = σ(h).
        for c in 0..3 {
            let r = tape.rgb[3 * i + c];
            d_col[3 * i + c] = g.sh[c] / SH_C0 * r * (1.0 - r);
        }
    }
    if !any {
        return out;
    }
    let f = anchor.feature.len();
    let mut d_in = dec.opacity.backward(&tape.opacity_tape, &d_op, &mut out.opacity);
    let d_sr_in = dec.scale_rot.backward(&tape.scale_rot_tape, &d_sr, &mut out.scale_rot);
    let d_col_in = dec.color.backward(&tape.color_tape, &d_col, &mut out.color);
    for (i, d) in d_in.iter_mut().enumerate() {
        *d += d_sr_in[i] + d_col_in[i];
    }
    out.embedding.copy_from_slice(&d_col_in[f + 4..]);
    out.feature.copy_from_slice(&d_in[..f]);
    let d_dist = d_in[f];
    let d_dir = Vector3::new(d_in[f + 1], d_in[f + 2], d_in[f + 3]);
    if tape.dist > 0.0 {
        out.position += tape.dir * d_dist + (d_dir - tape.dir * tape.dir.dot(&d_dir)) / tape.dist;
    }
    out
}

/// Anchors plus decoders, i.e. the full scaffold scene representation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldModel {
    pub config: ScaffoldConfig,
    pub anchors: AnchorSet,
    pub decoders: DecoderBank,
}

/// Forward state for a whole-model decode.
#[derive(Clone, Debug)]
pub struct ScaffoldTape {
    tapes: Vec<AnchorTape>,
    /// `(anchor, slot)` of each emitted (visible) Gaussian.
    pub sources: Vec<(usize, usize)>,
    /// Raw tanh opacities, `anchor × k`.
    pub opacities: Vec<f64>,
}

impl ScaffoldModel {
    /// Visible neural Gaussians for a camera, in anchor-major order.
    pub fn decode(
        &self,
        camera_center: &Vector3<f64>,
        appearance_id: usize,
    ) -> Result<(Vec<Gaussian3D>, ScaffoldTape)> {
        let decoded: Vec<(NeuralGaussians, AnchorTape)> = (0..self.anchors.len())
            .into_par_iter()
            .map(|i| decode_with_tape(&self.anchors.get(i), &self.decoders, camera_center, appearance_id))
            .collect::<Result<_>>()?;
        let mut gaussians = Vec::new();
        let mut sources = Vec::new();
        let mut tapes = Vec::with_capacity(decoded.len());
        let mut opacities = Vec::with_capacity(decoded.len() * self.config.offsets_per_anchor);
        for (a, (neural, tape)) in decoded.into_iter().enumerate() {
            for (slot, (g, vis)) in neural.gaussians.into_iter().zip(neural.visible).enumerate() {
                if vis {
                    gaussians.push(g);
                    sources.push((a, slot));
                }
            }
            opacities.extend(neural.opacity);
            tapes.push(tape);
        }
        Ok((
            gaussians,
            ScaffoldTape {
                tapes,
                sources,
                opacities,
            },
        ))
    }

    /// Scatters per-Gaussian gradients (aligned with the output of
    /// [`ScaffoldModel::decode`]) into parameter gradients.
    pub fn backward(&self, tape: &ScaffoldTape, grads: &[GaussianGrad], out: &mut ScaffoldGrads) {
        let k = self.config.offsets_per_anchor;
        let mut per_anchor: Vec<Vec<Option<&GaussianGrad>>> = vec![vec![None; k]; self.anchors.len()];
        for (g, &(a, slot)) in grads.iter().zip(&tape.sources) {
            per_anchor[a][slot] = Some(g);
        }
        let results: Vec<Option<AnchorGrad>> = per_anchor
            .par_iter()
            .enumerate()
            .map(|(a, gs)| {
                if gs.iter().all(Option::is_none) {
                    return None;
                }
                Some(decode_backward(
                    &self.anchors.get(a),
                    &self.decoders,
                    &tape.tapes[a],
                    gs,
                ))
            })
            .collect();
        let f = self.config.feature_dim;
        let adim = self.decoders.appearance_dim;
        for (a, r) in results.into_iter().enumerate() {
            let Some(g) = r else { continue };
            for c in 0..3 {
                out.positions[3 * a + c] += g.position[c];
                out.log_scaling[3 * a + c] += g.log_scaling[c];
            }
            for j in 0..k {
                for c in 0..3 {
                    out.offsets[(a * k + j) * 3 + c] += g.offsets[j][c];
                }
            }
            for (d, s) in out.features[a * f..(a + 1) * f].iter_mut().zip(&g.feature) {
                *d += s;
            }
            for (d, s) in out.opacity.iter_mut().zip(&g.opacity) {
                *d += s;
            }
            for (d, s) in out.color.iter_mut().zip(&g.color) {
                *d += s;
            }
            for (d, s) in out.scale_rot.iter_mut().zip(&g.scale_rot) {
                *d += s;
            }
            let id = tape.tapes[a].appearance_id;
            if adim > 0 {
                for (d, s) in out.appearance[id * adim..(id + 1) * adim].iter_mut().zip(&g.embedding) {
                    *d += s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ScaffoldConfig {
        ScaffoldConfig {
            offsets_per_anchor: 3,
            feature_dim: 4,
            hidden_width: 6,
            appearance_dim: 2,
            opacity_bias: 0.5,
        }
    }

    fn anchor(cfg: &ScaffoldConfig, offsets: Vec<Vector3<f64>>, scaling: Vector3<f64>) -> Anchor {
        Anchor {
            position: Vector3::new(0.5, -0.2, 3.0),
            feature: (0..cfg.feature_dim).map(|i| 0.1 * i as f64).collect(),
            offsets,
            scaling,
        }
    }

    #[test]
    fn zero_offsets_collapse_to_anchor() {
        let cfg = small_cfg();
        let dec = DecoderBank::new(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(1));
        let a = anchor(&cfg, vec![Vector3::zeros(); 3], Vector3::repeat(0.7));
        let n = decode_neural_gaussians(&a, &dec, &Vector3::zeros(), 0).unwrap();
        assert!(n.gaussians.iter().all(|g| g.mu == a.position));
    }

    #[test]
    fn offsets_scale_by_anchor_scaling() {
        let cfg = small_cfg();
        let dec = DecoderBank::new(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(1));
        let a = anchor(&cfg, vec![Vector3::new(1.0, 0.0, 0.0); 3], Vector3::repeat(2.0));
        let n = decode_neural_gaussians(&a, &dec, &Vector3::zeros(), 0).unwrap();
        for g in &n.gaussians {
            assert_eq!(g.mu, a.position + Vector3::new(2.0, 0.0, 0.0));
        }
    }

    #[test]
    fn negative_opacity_is_invisible() {
        let cfg = small_cfg();
        let mut dec = DecoderBank::new(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(1));
        dec.opacity.output_weights_mut().fill(0.0);
        dec.opacity.output_bias_mut().fill(-0.5);
        let a = anchor(&cfg, vec![Vector3::zeros(); 3], Vector3::repeat(1.0));
        let n = decode_neural_gaussians(&a, &dec, &Vector3::zeros(), 0).unwrap();
        assert!(n.visible.iter().all(|v| !v));
        assert!(n.gaussians.iter().all(|g| g.opacity() == 0.0));
    }

    #[test]
    fn appearance_id_out_of_range() {
        let cfg = small_cfg();
        let dec = DecoderBank::new(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let a = anchor(&cfg, vec![Vector3::zeros(); 3], Vector3::repeat(1.0));
        assert!(decode_neural_gaussians(&a, &dec, &Vector3::zeros(), 2).is_err());
    }

    #[test]
    fn decode_backward_matches_finite_differences() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut dec = DecoderBank::new(&cfg, 2, &mut rng);
        for v in dec.appearance.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let offsets = (0..3)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let a = anchor(&cfg, offsets, Vector3::new(0.3, 0.5, 0.4));
        let center = Vector3::new(0.1, 0.3, -0.5);
        // Random linear functional of every Gaussian field.
        let w: Vec<GaussianGrad> = (0..3)
            .map(|_| GaussianGrad {
                mu: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                rotation: Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                opacity_logit: rng.random_range(-1.0..1.0),
                sh: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let functional = |a: &Anchor, dec: &DecoderBank| -> f64 {
            let n = decode_neural_gaussians(a, dec, &center, 1).unwrap();
            let mut s = 0.0;
            for (g, wg) in n.gaussians.iter().zip(&w) {
                if g.opacity_logit.is_finite() {
                    s += wg.opacity_logit * g.opacity_logit;
                }
                s += wg.mu.dot(&g.mu) + wg.log_scale.dot(&g.log_scale);
                s += wg
                    .rotation
                    .dot(&Vector4::new(g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k));
                s += (0..3).map(|c| wg.sh[c] * g.sh[c]).sum::<f64>();
            }
            s
        };
        let (n, tape) = decode_with_tape(&a, &dec, &center, 1).unwrap();
        let gs: Vec<Option<&GaussianGrad>> = w.iter().map(Some).collect();
        let mut g = decode_backward(&a, &dec, &tape, &gs);
        // Invisible Gaussians propagate nothing; the functional above must
        // match, so only compare when all are visible.
        assert!(n.visible.iter().all(|v| *v), "test setup expects all visible");
        let h = 1e-6;
        let check = |name: &str, analytic: f64, perturb: &dyn Fn(&mut Anchor, &mut DecoderBank, f64)| {
            let (mut ap, mut dp) = (a.clone(), dec.clone());
            let (mut am, mut dm) = (a.clone(), dec.clone());
            perturb(&mut ap, &mut dp, h);
            perturb(&mut am, &mut dm, -h);
            let fd = (functional(&ap, &dp) - functional(&am, &dm)) / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-4 * fd.abs().max(1e-2),
                "{name}: fd {fd} vs {analytic}"
            );
        };
        for c in 0..3 {
            check("position", g.position[c], &|a, _, d| a.position[c] += d);
            check("log_scaling", g.log_scaling[c], &|a, _, d| a.scaling[c] *= d.exp());
            for j in 0..3 {
                check("offset", g.offsets[j][c], &|a, _, d| a.offsets[j][c] += d);
            }
        }
        for i in 0..cfg.feature_dim {
            check("feature", g.feature[i], &|a, _, d| a.feature[i] += d);
        }
        for i in 0..dec.opacity.params.len() {
            check("opacity mlp", g.opacity[i], &|_, dec, d| dec.opacity.params[i] += d);
        }
        for i in 0..dec.color.params.len() {
            check("color mlp", g.color[i], &|_, dec, d| dec.color.params[i] += d);
        }
        for i in 0..dec.scale_rot.params.len() {
            check("scale_rot mlp", g.scale_rot[i], &|_, dec, d| {
                dec.scale_rot.params[i] += d
            });
        }
        for i in 0..cfg.appearance_dim {
            check("embedding", g.embedding[i], &|_, dec, d| dec.appearance[2 + i] += d);
        }
        g.embedding.clear();
    }
}
