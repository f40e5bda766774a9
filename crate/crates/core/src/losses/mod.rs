//! Training objectives and their gradients.

mod depth;
mod diffusion;
mod perceptual;
mod photometric;
mod regularization;
pub(crate) mod ssim;

use serde::{Deserialize, Serialize};

pub use depth::{depth_loss, DepthLoss, DepthLossKind, MIN_DEPTH_PIXELS};
pub use diffusion::{diffusion_loss, GatedLoss};
pub use perceptual::{fnv1a64, image_key, MsSsimDistance, PerceptualMetric, PrecomputedDistance};
pub use photometric::{photometric_loss, PhotometricLoss};
pub use regularization::{regularization, RegularizationWeights};
pub use ssim::{SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};

/// Loss weights.
///
/// `lambda_gs` weights the gated generated-view term and `lambda_sd` the depth
/// term in the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_gs: f64,
    pub lambda_sd: f64,
    pub epsilon: f64,
    pub lambda_opacity: f64,
    pub lambda_scale: f64,
    pub lambda_aniso: f64,
    pub max_aniso_ratio: f64,
    pub depth_kind: DepthLossKind,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_gs: 0.5,
            lambda_sd: 0.1,
            epsilon: 0.5,
            lambda_opacity: 0.01,
            lambda_scale: 0.01,
            lambda_aniso: 0.1,
            max_aniso_ratio: 10.0,
            depth_kind: DepthLossKind::Pearson,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::Config(format!("lambda_ssim {} not in [0, 1]", self.lambda_ssim)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon {} not in (0, 1]", self.epsilon)));
        }
        let all = [
            self.lambda_gs,
            self.lambda_sd,
            self.lambda_opacity,
            self.lambda_scale,
            self.lambda_aniso,
        ];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.max_aniso_ratio >= 1.0) {
            return Err(Error::Config("max_aniso_ratio must be at least 1".into()));
        }
        Ok(())
    }

    pub fn regularization(&self) -> RegularizationWeights {
        RegularizationWeights {
            opacity: self.lambda_opacity,
            scale: self.lambda_scale,
            aniso: self.lambda_aniso,
            max_aniso_ratio: self.max_aniso_ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_validate() {
        let w = LossWeights::default();
        assert_eq!(
            (w.lambda_ssim, w.lambda_gs, w.lambda_sd, w.epsilon),
            (0.2, 0.5, 0.1, 0.5)
        );
        w.validate().unwrap();
        assert!(LossWeights { epsilon: 0.0, ..w }.validate().is_err());
        assert!(LossWeights { lambda_ssim: 1.5, ..w }.validate().is_err());
        assert!(LossWeights {
            lambda_scale: -1.0,
            ..w
        }
        .validate()
        .is_err());
    }
}
