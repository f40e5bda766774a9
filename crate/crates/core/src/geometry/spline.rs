//! Camera trajectories through keyframe poses.
//!
//! Translation follows a uniform Catmull-Rom spline through the keyframe
//! translations; the first and last segments lack an outer neighbor and fall
//! back to linear interpolation. Rotation uses per-segment slerp along the
//! shortest arc.

use nalgebra::Vector3;

use super::camera::Pose;
use crate::error::{Error, Result};

/// Pose at parameter `t ∈ [0, n-1]` along the keyframe trajectory.
pub fn interpolate_pose_spline(keyframes: &[Pose], t: f64) -> Result<Pose> {
    let n = keyframes.len();
    if n < 2 {
        return Err(Error::invalid("spline needs at least two keyframes"));
    }
    if t.is_nan() {
        return Err(Error::invalid("spline parameter is NaN"));
    }
    let last = (n - 1) as f64;
    if !(0.0..=last).contains(&t) {
        return Err(Error::invalid(format!("spline parameter {t} outside [0, {last}]")));
    }
    if t.fract() == 0.0 {
        return Ok(keyframes[t as usize]);
    }
    let seg = (t.floor() as usize).min(n - 2);
    let u = t - seg as f64;
    let p1 = keyframes[seg].translation;
    let p2 = keyframes[seg + 1].translation;
    let translation = if seg == 0 || seg + 2 >= n {
        p1.lerp(&p2, u)
    } else {
        catmull_rom(
            &keyframes[seg - 1].translation,
            &p1,
            &p2,
            &keyframes[seg + 2].translation,
            u,
        )
    };
    let mut q2 = keyframes[seg + 1].rotation;
    if keyframes[seg].rotation.coords.dot(&q2.coords) < 0.0 {
        q2 = nalgebra::UnitQuaternion::new_unchecked(-q2.into_inner());
    }
    let rotation = keyframes[seg]
        .rotation
        .try_slerp(&q2, u, 1e-12)
        .unwrap_or(keyframes[seg].rotation);
    Ok(Pose::new(rotation, translation))
}

fn catmull_rom(p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>, p3: &Vector3<f64>, u: f64) -> Vector3<f64> {
    let u2 = u * u;
    let u3 = u2 * u;
    0.5 * (2.0 * p1 + (p2 - p0) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera::rotation_angle;
    use nalgebra::UnitQuaternion;

    fn pose(axis_angle: [f64; 3], t: [f64; 3]) -> Pose {
        Pose::new(
            UnitQuaternion::from_scaled_axis(Vector3::from(axis_angle)),
            Vector3::from(t),
        )
    }

    #[test]
    fn endpoints_and_integers_are_exact() {
        let keys = vec![
            pose([0.1, 0.2, 0.0], [0.0, 0.0, 0.0]),
            pose([0.0, 0.5, 0.1], [1.0, 2.0, 0.0]),
            pose([0.3, 0.0, 0.2], [2.0, 1.0, 1.0]),
            pose([0.0, 0.0, 0.9], [4.0, 0.0, -1.0]),
        ];
        for (i, k) in keys.iter().enumerate() {
            assert_eq!(interpolate_pose_spline(&keys, i as f64).unwrap(), *k);
        }
    }

    #[test]
    fn constant_trajectory() {
        let p = pose([0.4, -0.1, 0.3], [1.0, -2.0, 3.0]);
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let q = interpolate_pose_spline(&[p, p], t).unwrap();
            assert!((q.translation - p.translation).norm() < 1e-12);
            assert!(rotation_angle(&q.rotation, &p.rotation) < 1e-7);
        }
    }

    #[test]
    fn linear_midpoint() {
        let a = pose([0.0; 3], [0.0, 0.0, 0.0]);
        let b = pose([0.0; 3], [2.0, 0.0, 0.0]);
        let m = interpolate_pose_spline(&[a, b], 0.5).unwrap();
        assert!((m.translation - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn interior_segment_uses_catmull_rom() {
        // Collinear, evenly spaced keyframes: Catmull-Rom reproduces the line.
        let keys: Vec<Pose> = (0..4).map(|i| pose([0.0; 3], [i as f64, 0.0, 0.0])).collect();
        let m = interpolate_pose_spline(&keys, 1.5).unwrap();
        assert!((m.translation - Vector3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
        // Non-collinear: the interior segment bends away from the chord.
        let keys = vec![
            pose([0.0; 3], [0.0, 0.0, 0.0]),
            pose([0.0; 3], [1.0, 1.0, 0.0]),
            pose([0.0; 3], [2.0, 1.0, 0.0]),
            pose([0.0; 3], [3.0, 0.0, 0.0]),
        ];
        let m = interpolate_pose_spline(&keys, 1.5).unwrap();
        assert!((m.translation.y - 1.125).abs() < 1e-12);
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        let a = Pose::identity();
        let mut b = pose([0.0, 0.0, 0.5], [0.0; 3]);
        b.rotation = UnitQuaternion::new_unchecked(-b.rotation.into_inner());
        let m = interpolate_pose_spline(&[a, b], 0.5).unwrap();
        assert!((rotation_angle(&m.rotation, &a.rotation) - 0.25).abs() < 1e-9);
        assert!((m.rotation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argument_errors() {
        let p = Pose::identity();
        assert!(interpolate_pose_spline(&[p], 0.0).is_err());
        assert!(interpolate_pose_spline(&[p, p], f64::NAN).is_err());
        assert!(interpolate_pose_spline(&[p, p], 1.5).is_err());
    }
}
