//! Cameras, poses, view-dependent color, and camera-path utilities.

mod camera;
mod pairs;
mod sh;
mod spline;

pub use camera::{project_point, rotation_angle, Camera, CameraIntrinsics, Pose, MIN_PROJECT_DEPTH};
pub use pairs::{select_proximal_pairs, DEFAULT_ROTATION_WEIGHT};
pub use sh::{
    evaluate_sh, rgb_to_sh0, sh_basis, sh_basis_count, sh_coeff_count, sh_degree_for_len, MAX_SH_DEGREE, SH_C0,
};
pub(crate) use sh::{sh_backward, sh_raw};
pub use spline::interpolate_pose_spline;
