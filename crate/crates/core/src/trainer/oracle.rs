use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{load_checkpoint, save_checkpoint, DirectModel, Model, ModelKind, TrainConfig, Trainer};
use crate::augmentation::{FileOracle, GroundTruthOracle, IdentityOracle, ViewOracle};
use crate::error::{Error, Result};
use crate::geometry::sh_degree_for_len;
use crate::primitives::Gaussian3D;
use crate::render::RenderSettings;

/// File holding the ground-truth Gaussians of a synthetic dataset.
pub const GROUND_TRUTH_FILE: &str = "ground_truth.gsdf";

/// Builds an oracle from `identity`, `gt` or `file:PATH`.
///
/// `gt` reads [`GROUND_TRUTH_FILE`] from `data_dir`.
pub fn oracle_from_spec(spec: &str, data_dir: &Path) -> Result<Box<dyn ViewOracle>> {
    match spec {
        "identity" => Ok(Box::new(IdentityOracle)),
        "gt" => {
            let gt = load_checkpoint(&data_dir.join(GROUND_TRUTH_FILE))?;
            let Model::Direct(m) = &gt.model else {
                return Err(Error::Config("ground truth checkpoint must hold a direct model".into()));
            };
            Ok(Box::new(GroundTruthOracle::new(m.gaussians(), gt.config.render)))
        }
        other => match other.strip_prefix("file:") {
            Some(path) => Ok(Box::new(FileOracle::new(path))),
            None => Err(Error::Config(format!("unknown oracle '{other}'"))),
        },
    }
}

/// Writes `gaussians` as a direct-model checkpoint readable by the `gt` oracle.
pub fn save_ground_truth(gaussians: &[Gaussian3D], settings: RenderSettings, path: &Path) -> Result<()> {
    let config = TrainConfig {
        model: ModelKind::Direct,
        render: settings,
        ..Default::default()
    };
    let degree = gaussians.first().map_or(Ok(0), |g| sh_degree_for_len(g.sh.len()))?;
    let model = Model::Direct(DirectModel::from_gaussians(degree, gaussians)?);
    let trainer = Trainer::from_model(config, model, 1.0, 0.01, ChaCha8Rng::seed_from_u64(0))?;
    save_checkpoint(&trainer, path)
}
