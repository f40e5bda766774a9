use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Half-angle tangents of the horizontal and vertical field of view.
    pub fn half_tan_fov(&self) -> (f64, f64) {
        (0.5 * self.width as f64 / self.fx, 0.5 * self.height as f64 / self.fy)
    }
}

/// World-to-camera rigid transform: `x_cam = R * x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from `[qw, qx, qy, qz, tx, ty, tz]`, normalizing the quaternion.
    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::invalid("pose quaternion has zero or non-finite norm"));
        }
        if v[4..].iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("pose translation is not finite"));
        }
        Ok(Self {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(v[4], v[5], v[6]),
        })
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    /// Camera placed at `eye`, looking at `target`, with image-up roughly along `-up`.
    ///
    /// The camera frame is x right, y down, z forward.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world space.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_matrix(&r);
        let translation = -(rotation * eye);
        Self { rotation, translation }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let dot = a.quaternion().dot(b.quaternion()).abs().min(1.0);
    2.0 * dot.acos()
}

/// Intrinsics plus pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.center()
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }
}

/// Pinhole projection of a world point; returns the pixel and camera-space depth.
pub fn project_point(intrinsics: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
    let c = pose.transform(p);
    if !(c.z > MIN_PROJECT_DEPTH) {
        return Err(Error::BehindCamera(c.z));
    }
    Ok((
        Vector2::new(
            intrinsics.fx * c.x / c.z + intrinsics.cx,
            intrinsics.fy * c.y / c.z + intrinsics.cy,
        ),
        c.z,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn axis_point_hits_principal_point() {
        let (px, d) = project_point(&k100(), &Pose::identity(), &Vector3::new(0.0, 0.0, 3.5)).unwrap();
        assert_eq!(px, Vector2::new(50.0, 50.0));
        assert_eq!(d, 3.5);
    }

    #[test]
    fn direct_formula() {
        let (px, d) = project_point(&k100(), &Pose::identity(), &Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(100.0, 50.0));
        assert_eq!(d, 2.0);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let r = project_point(&k100(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(r, Err(Error::BehindCamera(_))));
        let r = project_point(&k100(), &Pose::identity(), &Vector3::new(0.0, 0.0, 1e-7));
        assert!(matches!(r, Err(Error::BehindCamera(_))));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 4.0, 4, 4).is_ok());
    }

    #[test]
    fn look_at_puts_target_on_axis() {
        let eye = Vector3::new(3.0, -1.0, 2.0);
        let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0));
        let c = pose.transform(&Vector3::zeros());
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
        assert!((c.z - eye.norm()).abs() < 1e-12);
        assert!((pose.center() - eye).norm() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _)| {
                q.iter().map(|x| x * x).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| Pose::from_array([q[0], q[1], q[2], q[3], t[0], t[1], t[2]]).unwrap())
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(p in arb_pose()) {
            let id = p.compose(&p.inverse());
            prop_assert!((id.rotation.quaternion().norm() - 1.0).abs() < 1e-6);
            prop_assert!(rotation_angle(&id.rotation, &UnitQuaternion::identity()) < 1e-6);
            prop_assert!(id.translation.norm() < 1e-6);
        }
    }
}
