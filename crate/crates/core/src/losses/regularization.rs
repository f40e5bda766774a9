use crate::primitives::{Gaussian3D, GaussianGrad};

/// Regularizer weights; `max_aniso_ratio` is the allowed max/min scale ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationWeights {
    pub opacity: f64,
    pub scale: f64,
    pub aniso: f64,
    pub max_aniso_ratio: f64,
}

/// `λ_o·mean(α) + λ_s·mean(Σ scales) + λ_a·mean(max(max/min − r, 0))` over
/// the given Gaussians. Gradients are accumulated into `grads`.
pub fn regularization(gaussians: &[Gaussian3D], weights: &RegularizationWeights, grads: &mut [GaussianGrad]) -> f64 {
    if gaussians.is_empty() {
        return 0.0;
    }
    let inv_n = 1.0 / gaussians.len() as f64;
    let mut value = 0.0;
    for (g, out) in gaussians.iter().zip(grads.iter_mut()) {
        if weights.opacity != 0.0 {
            let a = g.opacity();
            value += weights.opacity * a * inv_n;
            out.opacity_logit += weights.opacity * inv_n * a * (1.0 - a);
        }
        let s = g.scales();
        if weights.scale != 0.0 {
            value += weights.scale * s.sum() * inv_n;
            for k in 0..3 {
                out.log_scale[k] += weights.scale * inv_n * s[k];
            }
        }
        if weights.aniso != 0.0 {
            let (imax, smax) = s.argmax();
            let (imin, smin) = s.argmin();
            let ratio = smax / smin;
            let excess = ratio - weights.max_aniso_ratio;
            if excess > 0.0 {
                value += weights.aniso * excess * inv_n;
                out.log_scale[imax] += weights.aniso * inv_n * ratio;
                out.log_scale[imin] -= weights.aniso * inv_n * ratio;
            }
        }
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Quaternion, Vector3};

    fn gaussian(scales: [f64; 3], logit: f64) -> Gaussian3D {
        Gaussian3D {
            mu: Vector3::zeros(),
            log_scale: Vector3::from(scales).map(f64::ln),
            rotation: Quaternion::identity(),
            opacity_logit: logit,
            sh: vec![0.0; 3],
        }
    }

    fn w(o: f64, s: f64, a: f64) -> RegularizationWeights {
        RegularizationWeights {
            opacity: o,
            scale: s,
            aniso: a,
            max_aniso_ratio: 10.0,
        }
    }

    #[test]
    fn zero_weights() {
        let g = [gaussian([1.0, 2.0, 30.0], 0.4)];
        let mut grads = vec![GaussianGrad::zeros(3)];
        assert_eq!(regularization(&g, &w(0.0, 0.0, 0.0), &mut grads), 0.0);
    }

    #[test]
    fn isotropic_has_no_anisotropy_penalty() {
        let g = [gaussian([0.3; 3], 0.0)];
        let mut grads = vec![GaussianGrad::zeros(3)];
        assert_eq!(regularization(&g, &w(0.0, 0.0, 1.0), &mut grads), 0.0);
    }

    #[test]
    fn elongated_penalty() {
        let g = [gaussian([20.0, 1.0, 1.0], 0.0)];
        let mut grads = vec![GaussianGrad::zeros(3)];
        let v = regularization(&g, &w(0.0, 0.0, 1.0), &mut grads);
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let gs = vec![gaussian([0.5, 0.03, 0.2], 0.3), gaussian([0.1, 0.12, 0.11], -1.0)];
        let wt = w(0.3, 0.7, 0.5);
        let mut grads = vec![GaussianGrad::zeros(3), GaussianGrad::zeros(3)];
        regularization(&gs, &wt, &mut grads);
        let h = 1e-6;
        let f = |gs: &[Gaussian3D]| {
            let mut scratch = vec![GaussianGrad::zeros(3), GaussianGrad::zeros(3)];
            regularization(gs, &wt, &mut scratch)
        };
        for i in 0..2 {
            for k in 0..3 {
                let mut p = gs.clone();
                let mut m = gs.clone();
                p[i].log_scale[k] += h;
                m[i].log_scale[k] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                assert!((fd - grads[i].log_scale[k]).abs() < 1e-7);
            }
            let mut p = gs.clone();
            let mut m = gs.clone();
            p[i].opacity_logit += h;
            m[i].opacity_logit -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - grads[i].opacity_logit).abs() < 1e-8);
        }
    }
}
