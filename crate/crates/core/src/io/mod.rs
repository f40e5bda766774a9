//! Dataset loading and saving, file codecs, metrics and synthetic scenes.

mod codecs;
mod dataset;
mod metrics;
pub mod synthetic;

pub use codecs::{read_image, read_mask, read_pfm, write_image, write_mask, write_pfm};
pub use dataset::{load_dataset, read_camera_file, save_dataset, ColoredPoint, SceneDataset, View};
pub use metrics::{psnr, ssim};
