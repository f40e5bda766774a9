#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augmentation;
pub mod error;
pub mod geometry;
pub mod image;
pub mod primitives;

pub use error::{Error, Result};
pub mod io;
pub mod losses;
pub mod rasterizer;
pub mod render;
pub mod scaffold;
pub mod trainer;
