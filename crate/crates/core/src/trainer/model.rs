//! Trainable scene representations and their flat parameter groups.

use nalgebra::{Quaternion, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rgb_to_sh0, sh_coeff_count};
use crate::io::ColoredPoint;
use crate::primitives::{logit, Gaussian3D, GaussianGrad};
use crate::scaffold::{ScaffoldGrads, ScaffoldModel, ScaffoldTape};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Scaffold,
    Direct,
}

/// Initial opacity of Gaussians seeded from points.
const INITIAL_OPACITY: f64 = 0.1;

/// Free Gaussians stored column-wise. Rotations are raw quaternions,
/// normalized on use.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectModel {
    pub sh_degree: usize,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

impl DirectModel {
    pub fn empty(sh_degree: usize) -> Self {
        Self {
            sh_degree,
            means: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    fn sh_len(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    pub fn push(&mut self, g: &Gaussian3D) -> Result<()> {
        if g.sh.len() != self.sh_len() {
            return Err(Error::invalid("Gaussian SH length does not match the model degree"));
        }
        self.means.extend(g.mu.iter());
        self.log_scales.extend(g.log_scale.iter());
        self.rotations
            .extend([g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
        self.opacity_logits.push(g.opacity_logit);
        self.sh.extend(&g.sh);
        Ok(())
    }

    pub fn from_gaussians(sh_degree: usize, gaussians: &[Gaussian3D]) -> Result<Self> {
        let mut m = Self::empty(sh_degree);
        for g in gaussians {
            m.push(g)?;
        }
        Ok(m)
    }

    /// One isotropic Gaussian per point, sized by the mean distance to its
    /// three nearest neighbours.
    pub fn from_points(points: &[ColoredPoint], sh_degree: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("no points to initialize Gaussians from"));
        }
        let radii: Vec<f64> = points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut best = [f64::INFINITY; 3];
                for (j, q) in points.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let d = (p.position - q.position).norm_squared();
                    if d < best[2] {
                        best[2] = d;
                        best.sort_by(f64::total_cmp);
                    }
                }
                let found: Vec<f64> = best.iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
                if found.is_empty() {
                    0.1
                } else {
                    (found.iter().sum::<f64>() / found.len() as f64).max(1e-4)
                }
            })
            .collect();
        let mut m = Self::empty(sh_degree);
        for (p, r) in points.iter().zip(radii) {
            let mut sh = vec![0.0; sh_coeff_count(sh_degree)];
            for c in 0..3 {
                sh[c] = rgb_to_sh0(p.color[c] as f64 / 255.0);
            }
            m.push(&Gaussian3D {
                mu: p.position,
                log_scale: Vector3::repeat(r.ln()),
                rotation: Quaternion::identity(),
                opacity_logit: logit(INITIAL_OPACITY),
                sh,
            })?;
        }
        Ok(m)
    }

    pub fn gaussian(&self, i: usize) -> Gaussian3D {
        let q = Vector4::from_column_slice(&self.rotations[4 * i..4 * i + 4]);
        let qn = q.norm();
        let u = if qn > 0.0 {
            q / qn
        } else {
            Vector4::new(1.0, 0.0, 0.0, 0.0)
        };
        let n = self.sh_len();
        Gaussian3D {
            mu: Vector3::from_column_slice(&self.means[3 * i..3 * i + 3]),
            log_scale: Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3]),
            rotation: Quaternion::new(u[0], u[1], u[2], u[3]),
            opacity_logit: self.opacity_logits[i],
            sh: self.sh[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn gaussians(&self) -> Vec<Gaussian3D> {
        (0..self.len()).map(|i| self.gaussian(i)).collect()
    }

    fn backward(&self, grads: &[GaussianGrad]) -> Vec<Vec<f64>> {
        let n = self.sh_len();
        let mut out = vec![
            vec![0.0; self.means.len()],
            vec![0.0; self.log_scales.len()],
            vec![0.0; self.rotations.len()],
            vec![0.0; self.opacity_logits.len()],
            vec![0.0; self.sh.len()],
        ];
        for (i, g) in grads.iter().enumerate() {
            for c in 0..3 {
                out[0][3 * i + c] = g.mu[c];
                out[1][3 * i + c] = g.log_scale[c];
            }
            let q = Vector4::from_column_slice(&self.rotations[4 * i..4 * i + 4]);
            let qn = q.norm();
            if qn > 0.0 {
                let u = q / qn;
                let dq = (g.rotation - u * u.dot(&g.rotation)) / qn;
                out[2][4 * i..4 * i + 4].copy_from_slice(dq.as_slice());
            }
            out[3][i] = g.opacity_logit;
            out[4][i * n..(i + 1) * n].copy_from_slice(&g.sh);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Direct(DirectModel),
    Scaffold(ScaffoldModel),
}

pub enum DecodeTape {
    Direct,
    Scaffold(ScaffoldTape),
}

pub const DIRECT_GROUPS: [&str; 5] = ["means", "log_scales", "rotations", "opacity_logits", "sh"];
pub const SCAFFOLD_GROUPS: [&str; 8] = [
    "anchor_positions",
    "anchor_offsets",
    "anchor_features",
    "anchor_log_scaling",
    "opacity_decoder",
    "color_decoder",
    "scale_rot_decoder",
    "appearance",
];

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Direct(_) => ModelKind::Direct,
            Model::Scaffold(_) => ModelKind::Scaffold,
        }
    }

    pub fn group_names(&self) -> &'static [&'static str] {
        match self {
            Model::Direct(_) => &DIRECT_GROUPS,
            Model::Scaffold(_) => &SCAFFOLD_GROUPS,
        }
    }

    pub fn groups(&self) -> Vec<&Vec<f64>> {
        match self {
            Model::Direct(m) => vec![&m.means, &m.log_scales, &m.rotations, &m.opacity_logits, &m.sh],
            Model::Scaffold(s) => vec![
                &s.anchors.positions,
                &s.anchors.offsets,
                &s.anchors.features,
                &s.anchors.log_scaling,
                &s.decoders.opacity.params,
                &s.decoders.color.params,
                &s.decoders.scale_rot.params,
                &s.decoders.appearance,
            ],
        }
    }

    pub fn groups_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Model::Direct(m) => vec![
                &mut m.means,
                &mut m.log_scales,
                &mut m.rotations,
                &mut m.opacity_logits,
                &mut m.sh,
            ],
            Model::Scaffold(s) => vec![
                &mut s.anchors.positions,
                &mut s.anchors.offsets,
                &mut s.anchors.features,
                &mut s.anchors.log_scaling,
                &mut s.decoders.opacity.params,
                &mut s.decoders.color.params,
                &mut s.decoders.scale_rot.params,
                &mut s.decoders.appearance,
            ],
        }
    }

    /// Number of Gaussians (direct) or anchors (scaffold).
    pub fn primitive_count(&self) -> usize {
        match self {
            Model::Direct(m) => m.len(),
            Model::Scaffold(s) => s.anchors.len(),
        }
    }

    pub fn decode(&self, camera_center: &Vector3<f64>, appearance_id: usize) -> Result<(Vec<Gaussian3D>, DecodeTape)> {
        match self {
            Model::Direct(m) => Ok((m.gaussians(), DecodeTape::Direct)),
            Model::Scaffold(s) => {
                let (g, t) = s.decode(camera_center, appearance_id)?;
                Ok((g, DecodeTape::Scaffold(t)))
            }
        }
    }

    /// Per-group gradients, aligned with [`Model::groups`].
    pub fn backward(&self, tape: &DecodeTape, grads: &[GaussianGrad]) -> Vec<Vec<f64>> {
        match (self, tape) {
            (Model::Direct(m), _) => m.backward(grads),
            (Model::Scaffold(s), DecodeTape::Scaffold(t)) => {
                let mut out = ScaffoldGrads::zeros(&s.anchors, &s.decoders);
                s.backward(t, grads, &mut out);
                vec![
                    out.positions,
                    out.offsets,
                    out.features,
                    out.log_scaling,
                    out.opacity,
                    out.color,
                    out.scale_rot,
                    out.appearance,
                ]
            }
            (Model::Scaffold(_), DecodeTape::Direct) => unreachable!("scaffold model with a direct tape"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_round_trip_through_columns() {
        let g = crate::io::synthetic::random_gaussians(5, 1);
        let m = DirectModel::from_gaussians(0, &g).unwrap();
        for (a, b) in m.gaussians().iter().zip(&g) {
            assert!((a.mu - b.mu).norm() == 0.0);
            assert!((a.rotation.coords - b.rotation.coords).norm() < 1e-15);
        }
    }

    #[test]
    fn points_seed_isotropic_gaussians() {
        let pts: Vec<ColoredPoint> = (0..4)
            .map(|i| ColoredPoint {
                position: Vector3::new(i as f64, 0.0, 0.0),
                color: [255, 0, 128],
            })
            .collect();
        let m = DirectModel::from_points(&pts, 1).unwrap();
        assert_eq!(m.len(), 4);
        let g = m.gaussian(0);
        // Neighbours at 1, 2, 3.
        assert!((g.scales()[0] - 2.0).abs() < 1e-12);
        assert!((g.opacity() - INITIAL_OPACITY).abs() < 1e-12);
        assert_eq!(g.sh.len(), 12);
        assert!(DirectModel::from_points(&[], 0).is_err());
    }
}
