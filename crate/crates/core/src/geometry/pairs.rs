use super::camera::{rotation_angle, Pose};
use crate::error::{Error, Result};

/// Default blend weight between normalized translation and rotation distance.
pub const DEFAULT_ROTATION_WEIGHT: f64 = 0.5;

/// Picks the `k` closest camera pairs.
///
/// Distance is `‖c_i − c_j‖ / s + w·angle(R_i, R_j)` where `c` are camera
/// centers and `s` the diagonal of their bounding box. Ties break on
/// ascending `(i, j)`. Asking for more pairs than exist returns all of them.
pub fn select_proximal_pairs(poses: &[Pose], k: usize, rotation_weight: f64) -> Result<Vec<(usize, usize)>> {
    if poses.len() < 2 {
        return Err(Error::invalid("pair selection needs at least two views"));
    }
    if k == 0 {
        return Err(Error::invalid("pair count must be at least 1"));
    }
    let centers: Vec<_> = poses.iter().map(Pose::center).collect();
    let mut lo = centers[0];
    let mut hi = centers[0];
    for c in &centers[1..] {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let diag = (hi - lo).norm();
    let scale = if diag > 1e-12 { diag } else { 1.0 };

    let mut scored = Vec::with_capacity(poses.len() * (poses.len() - 1) / 2);
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            let d = (centers[i] - centers[j]).norm() / scale
                + rotation_weight * rotation_angle(&poses[i].rotation, &poses[j].rotation);
            scored.push((d, i, j));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    Ok(scored.into_iter().take(k).map(|(_, i, j)| (i, j)).collect())
}
