//! Gaussian primitives: 3D parameterization, covariance construction, EWA
//! projection to screen space, and the 2D mip low-pass filter, each with its
//! analytic backward pass.

use nalgebra::{Matrix2x3, Matrix3, Quaternion, Vector2, Vector3, Vector4};

use crate::geometry::{sh_backward, sh_basis_count, sh_raw, Camera};

/// Gaussians closer than this (camera-space z, meters) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Perspective Jacobian guard, as a multiple of the half field-of-view tangent.
pub const FRUSTUM_GUARD: f64 = 1.3;
/// Default mip filter variance in pixel².
pub const DEFAULT_MIP_VARIANCE: f64 = 0.1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One 3D Gaussian splat.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mu: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`; local-to-world rotation of the ellipsoid axes.
    pub rotation: Quaternion<f64>,
    pub opacity_logit: f64,
    /// Spherical-harmonic coefficients, basis-major, `3·(L+1)²` values.
    pub sh: Vec<f64>,
}

impl Gaussian3D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn sh_degree(&self) -> usize {
        match self.sh.len() {
            3 => 0,
            12 => 1,
            27 => 2,
            _ => 3,
        }
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_from(&self.log_scale, &self.rotation)
    }
}

/// Symmetric 2×2 matrix stored as `(xx, xy, yy)`.
///
/// Gradients with respect to a `Sym2` treat `xy` as one scalar shared by both
/// off-diagonal entries.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Inverse, or `None` if not positive definite.
    #[inline]
    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        if !(det > 0.0) || !(self.xx > 0.0) {
            return None;
        }
        Some(Sym2::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let mid = 0.5 * (self.xx + self.yy);
        let rad = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        mid + rad
    }

    fn to_full_grad(self) -> nalgebra::Matrix2<f64> {
        nalgebra::Matrix2::new(self.xx, 0.5 * self.xy, 0.5 * self.xy, self.yy)
    }
}

/// Screen-space Gaussian produced by projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Sym2,
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub source_id: usize,
}

/// Gradient with respect to every field of a [`Splat2D`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean2d: Vector2<f64>,
    pub cov2d: Sym2,
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Gradient with respect to the fields of a [`Gaussian3D`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mu: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// `(w, x, y, z)`, with respect to the quaternion as used (no renormalization).
    pub rotation: Vector4<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
}

impl GaussianGrad {
    pub fn zeros(sh_len: usize) -> Self {
        Self {
            mu: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            rotation: Vector4::zeros(),
            opacity_logit: 0.0,
            sh: vec![0.0; sh_len],
        }
    }
}

/// Rotation matrix of a quaternion `(w, x, y, z)`, assumed unit.
pub fn quat_to_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Chain `dL/dR` back to the quaternion components of [`quat_to_matrix`].
fn quat_matrix_backward(q: &Quaternion<f64>, dr: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let g = |r: usize, c: usize| dr[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    Vector4::new(dw, dx, dy, dz)
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_from(log_scale: &Vector3<f64>, rotation: &Quaternion<f64>) -> Matrix3<f64> {
    let r = quat_to_matrix(rotation);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    let sigma = m * m.transpose();
    // Exact symmetry regardless of rounding in the product.
    0.5 * (sigma + sigma.transpose())
}

struct ProjectionTerms {
    w: Matrix3<f64>,
    t_cam: Vector3<f64>,
    clamped_x: bool,
    clamped_y: bool,
    tx: f64,
    ty: f64,
    j: Matrix2x3<f64>,
}

fn projection_terms(mu: &Vector3<f64>, camera: &Camera) -> Option<ProjectionTerms> {
    let k = &camera.intrinsics;
    let w = camera.pose.rotation_matrix();
    let t_cam = w * mu + camera.pose.translation;
    if !(t_cam.z > NEAR_PLANE) {
        return None;
    }
    let (tan_x, tan_y) = k.half_tan_fov();
    let (lim_x, lim_y) = (FRUSTUM_GUARD * tan_x, FRUSTUM_GUARD * tan_y);
    let z = t_cam.z;
    let (rx, ry) = (t_cam.x / z, t_cam.y / z);
    let clamped_x = rx.abs() > lim_x;
    let clamped_y = ry.abs() > lim_y;
    let tx = rx.clamp(-lim_x, lim_x) * z;
    let ty = ry.clamp(-lim_y, lim_y) * z;
    let j = Matrix2x3::new(k.fx / z, 0.0, -k.fx * tx / (z * z), 0.0, k.fy / z, -k.fy * ty / (z * z));
    Some(ProjectionTerms {
        w,
        t_cam,
        clamped_x,
        clamped_y,
        tx,
        ty,
        j,
    })
}

fn view_dir(mu: &Vector3<f64>, camera: &Camera) -> (Vector3<f64>, f64) {
    let v = mu - camera.center();
    let n = v.norm();
    if n > 0.0 {
        (v / n, n)
    } else {
        (Vector3::new(0.0, 0.0, 1.0), 0.0)
    }
}

/// EWA projection of one Gaussian. Returns `None` when the center is not in
/// front of the near plane.
pub fn project_gaussian(g: &Gaussian3D, camera: &Camera, source_id: usize) -> Option<Splat2D> {
    let terms = projection_terms(&g.mu, camera)?;
    let k = &camera.intrinsics;
    let sigma = g.covariance();
    let t = terms.j * terms.w;
    let cov = t * sigma * t.transpose();
    let z = terms.t_cam.z;
    let (dir, _) = view_dir(&g.mu, camera);
    let degree = g.sh_degree();
    let color = sh_raw(degree, &g.sh[..3 * sh_basis_count(degree)], &dir).map(|v| v.max(0.0));
    Some(Splat2D {
        mean2d: Vector2::new(k.fx * terms.t_cam.x / z + k.cx, k.fy * terms.t_cam.y / z + k.cy),
        cov2d: Sym2::new(cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]),
        depth: z,
        opacity: g.opacity(),
        color,
        source_id,
    })
}

/// Backward of [`project_gaussian`]: maps a splat gradient (before the mip
/// filter) to the Gaussian's parameters, accumulating into `out`.
pub fn project_gaussian_backward(g: &Gaussian3D, camera: &Camera, grad: &SplatGrad, out: &mut GaussianGrad) {
    let Some(terms) = projection_terms(&g.mu, camera) else {
        return;
    };
    let k = &camera.intrinsics;
    let z = terms.t_cam.z;

    let alpha = g.opacity();
    out.opacity_logit += grad.opacity * alpha * (1.0 - alpha);

    let (dir, dist) = view_dir(&g.mu, camera);
    let degree = g.sh_degree();
    let ddir = sh_backward(degree, &g.sh, &dir, grad.color, &mut out.sh);
    if dist > 0.0 {
        out.mu += (ddir - dir * dir.dot(&ddir)) / dist;
    }

    // Covariance branch.
    let r = quat_to_matrix(&g.rotation);
    let s = g.scales();
    let m = r * Matrix3::from_diagonal(&s);
    let sigma = m * m.transpose();
    let t = terms.j * terms.w;
    let gc = grad.cov2d.to_full_grad();
    let dsigma = t.transpose() * gc * t;
    let dt = 2.0 * gc * t * sigma;
    let dj = dt * terms.w.transpose();

    let dm = 2.0 * dsigma * m;
    let mut dr = Matrix3::zeros();
    for jcol in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            dr[(i, jcol)] = dm[(i, jcol)] * s[jcol];
            ds += dm[(i, jcol)] * r[(i, jcol)];
        }
        out.log_scale[jcol] += ds * s[jcol];
    }
    out.rotation += quat_matrix_backward(&g.rotation, &dr);

    // Camera-space position: through J, mean2d and depth.
    let mut dtc = Vector3::zeros();
    dtc.z += -k.fx / (z * z) * dj[(0, 0)] - k.fy / (z * z) * dj[(1, 1)];
    if terms.clamped_x {
        dtc.z += k.fx * terms.tx / (z * z * z) * dj[(0, 2)];
    } else {
        dtc.x += -k.fx / (z * z) * dj[(0, 2)];
        dtc.z += 2.0 * k.fx * terms.tx / (z * z * z) * dj[(0, 2)];
    }
    if terms.clamped_y {
        dtc.z += k.fy * terms.ty / (z * z * z) * dj[(1, 2)];
    } else {
        dtc.y += -k.fy / (z * z) * dj[(1, 2)];
        dtc.z += 2.0 * k.fy * terms.ty / (z * z * z) * dj[(1, 2)];
    }
    let tcx = terms.t_cam.x;
    let tcy = terms.t_cam.y;
    dtc.x += grad.mean2d.x * k.fx / z;
    dtc.y += grad.mean2d.y * k.fy / z;
    dtc.z += -grad.mean2d.x * k.fx * tcx / (z * z) - grad.mean2d.y * k.fy * tcy / (z * z);
    dtc.z += grad.depth;
    out.mu += terms.w.transpose() * dtc;
}

/// Convolves the splat with an isotropic low-pass of variance `s` and rescales
/// opacity so that `opacity · sqrt(det cov2d)` is preserved.
pub fn apply_mip_filter(splat: &Splat2D, s: f64) -> Splat2D {
    if s == 0.0 {
        return splat.clone();
    }
    let old = splat.cov2d;
    let new = Sym2::new(old.xx + s, old.xy, old.yy + s);
    let ratio = (old.det() / new.det()).max(0.0);
    Splat2D {
        cov2d: new,
        opacity: splat.opacity * ratio.sqrt(),
        ..splat.clone()
    }
}

/// Backward of [`apply_mip_filter`]; `pre` is the unfiltered splat.
pub fn mip_filter_backward(pre: &Splat2D, s: f64, grad: &SplatGrad) -> SplatGrad {
    if s == 0.0 {
        return grad.clone();
    }
    let c = pre.cov2d;
    let det0 = c.det();
    let det1 = (c.xx + s) * (c.yy + s) - c.xy * c.xy;
    if !(det0 > 0.0) {
        return SplatGrad {
            cov2d: grad.cov2d,
            ..grad.clone()
        };
    }
    let r = (det0 / det1).sqrt();
    let go = grad.opacity;
    // d r / d θ = r/2 · (ddet0/dθ / det0 − ddet1/dθ / det1)
    let k = 0.5 * r * pre.opacity * go;
    let d_xx = k * (c.yy / det0 - (c.yy + s) / det1);
    let d_yy = k * (c.xx / det0 - (c.xx + s) / det1);
    let d_xy = k * (-2.0 * c.xy / det0 + 2.0 * c.xy / det1);
    SplatGrad {
        mean2d: grad.mean2d,
        cov2d: Sym2::new(grad.cov2d.xx + d_xx, grad.cov2d.xy + d_xy, grad.cov2d.yy + d_yy),
        depth: grad.depth,
        opacity: go * r,
        color: grad.color,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera(f: f64) -> Camera {
        Camera::new(CameraIntrinsics::centered(f, 64, 48).unwrap(), Pose::identity())
    }

    fn iso(mu: Vector3<f64>, sigma: f64) -> Gaussian3D {
        Gaussian3D {
            mu,
            log_scale: Vector3::repeat(sigma.ln()),
            rotation: Quaternion::identity(),
            opacity_logit: 0.0,
            sh: vec![0.0; 3],
        }
    }

    #[test]
    fn covariance_examples() {
        let id = Quaternion::identity();
        assert_eq!(covariance_from(&Vector3::zeros(), &id), Matrix3::identity());
        let c = covariance_from(&Vector3::new(2f64.ln(), 0.0, 0.0), &id);
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).norm() < 1e-12);
        let q = UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -1.1, 0.7)).into_inner();
        let c = covariance_from(&Vector3::repeat(0.5f64.ln()), &q);
        assert!((c - Matrix3::<f64>::identity() * 0.25).norm() < 1e-12);
    }

    #[test]
    fn covariance_spectrum_matches_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let ls = Vector3::from_fn(|_, _| rng.random_range(-3.0..1.0));
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let c = covariance_from(&ls, &q);
            assert_eq!(c, c.transpose());
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            let mut want: Vec<f64> = ls.iter().map(|l| (2.0 * l).exp()).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (e, w) in eig.iter().zip(&want) {
                assert!(*e > 0.0);
                assert!((e - w).abs() < 1e-6 * w.max(1.0), "{e} vs {w}");
            }
        }
    }

    #[test]
    fn on_axis_isotropic_projection() {
        let cam = camera(80.0);
        let (sigma, z) = (0.2, 4.0);
        let s = project_gaussian(&iso(Vector3::new(0.0, 0.0, z), sigma), &cam, 0).unwrap();
        let want = (80.0 * sigma / z).powi(2);
        assert!((s.cov2d.xx - want).abs() < 1e-12);
        assert!((s.cov2d.yy - want).abs() < 1e-12);
        assert!(s.cov2d.xy.abs() < 1e-15);
        assert_eq!(s.mean2d, Vector2::new(32.0, 24.0));
        assert_eq!(s.depth, z);

        let far = project_gaussian(&iso(Vector3::new(0.0, 0.0, 2.0 * z), sigma), &cam, 0).unwrap();
        assert!((far.cov2d.xx.sqrt() - 0.5 * s.cov2d.xx.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = camera(80.0);
        assert!(project_gaussian(&iso(Vector3::new(0.0, 0.0, -1.0), 0.1), &cam, 0).is_none());
        assert!(project_gaussian(&iso(Vector3::new(0.0, 0.0, 0.005), 0.1), &cam, 0).is_none());
    }

    fn splat_with(cov: Sym2, opacity: f64) -> Splat2D {
        Splat2D {
            mean2d: Vector2::new(3.0, 4.0),
            cov2d: cov,
            depth: 2.0,
            opacity,
            color: [0.1, 0.2, 0.3],
            source_id: 5,
        }
    }

    #[test]
    fn mip_examples() {
        let s = splat_with(Sym2::new(1.0, 0.0, 1.0), 1.0);
        assert_eq!(apply_mip_filter(&s, 0.0), s);
        let f = apply_mip_filter(&s, 0.1);
        assert!((f.cov2d.xx - 1.1).abs() < 1e-15 && (f.cov2d.yy - 1.1).abs() < 1e-15);
        assert!((f.opacity - (1.0f64 / 1.21).sqrt()).abs() < 1e-12);
        assert!((f.opacity - 0.9091).abs() < 1e-4);
        let big = apply_mip_filter(&s, 1e6);
        assert!(big.opacity < 1e-5);
        let energy = |s: &Splat2D| s.opacity * 2.0 * std::f64::consts::PI * s.cov2d.det().sqrt();
        assert!((energy(&big) - energy(&s)).abs() < 1e-9);
        assert_eq!(f.source_id, 5);
        assert_eq!(f.color, s.color);
    }

    proptest! {
        #[test]
        fn mip_conserves_energy(
            a in 0.05f64..20.0, b in 0.05f64..20.0, rho in -0.95f64..0.95,
            op in 0.01f64..1.0, s in 0.0f64..5.0,
        ) {
            let cov = Sym2::new(a, rho * (a * b).sqrt(), b);
            let sp = splat_with(cov, op);
            let f = apply_mip_filter(&sp, s);
            let e0 = sp.opacity * sp.cov2d.det().sqrt();
            let e1 = f.opacity * f.cov2d.det().sqrt();
            prop_assert!((e0 - e1).abs() < 1e-9);
        }
    }

    #[test]
    fn mip_backward_matches_finite_differences() {
        let s = 0.3;
        let pre = splat_with(Sym2::new(1.3, 0.4, 0.9), 0.7);
        let grad_out = SplatGrad {
            mean2d: Vector2::new(0.2, -0.1),
            cov2d: Sym2::new(0.5, -0.7, 0.3),
            depth: 0.0,
            opacity: 1.7,
            color: [0.0; 3],
        };
        let loss = |p: &Splat2D| {
            let f = apply_mip_filter(p, s);
            grad_out.cov2d.xx * f.cov2d.xx
                + grad_out.cov2d.xy * f.cov2d.xy
                + grad_out.cov2d.yy * f.cov2d.yy
                + grad_out.opacity * f.opacity
        };
        let g = mip_filter_backward(&pre, s, &grad_out);
        let h = 1e-6;
        let fd = |f: &dyn Fn(&mut Splat2D, f64)| {
            let mut p = pre.clone();
            let mut m = pre.clone();
            f(&mut p, h);
            f(&mut m, -h);
            (loss(&p) - loss(&m)) / (2.0 * h)
        };
        assert!((fd(&|s, d| s.cov2d.xx += d) - g.cov2d.xx).abs() < 1e-8);
        assert!((fd(&|s, d| s.cov2d.xy += d) - g.cov2d.xy).abs() < 1e-8);
        assert!((fd(&|s, d| s.cov2d.yy += d) - g.cov2d.yy).abs() < 1e-8);
        assert!((fd(&|s, d| s.opacity += d) - g.opacity).abs() < 1e-8);
    }

    /// Scalar functional of a projected splat with fixed random cotangents.
    fn splat_loss(s: &Splat2D, w: &[f64; 10]) -> f64 {
        w[0] * s.mean2d.x
            + w[1] * s.mean2d.y
            + w[2] * s.cov2d.xx
            + w[3] * s.cov2d.xy
            + w[4] * s.cov2d.yy
            + w[5] * s.depth
            + w[6] * s.opacity
            + w[7] * s.color[0]
            + w[8] * s.color[1]
            + w[9] * s.color[2]
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = Camera::new(
            CameraIntrinsics::new(70.0, 65.0, 30.0, 26.0, 64, 48).unwrap(),
            Pose::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(0.1, -0.2, 0.05)),
                Vector3::new(0.3, -0.1, 0.5),
            ),
        );
        for case in 0..40 {
            // Some cases land outside the guard band to exercise the clamp.
            let spread = if case % 4 == 0 { 6.0 } else { 0.8 };
            let g = Gaussian3D {
                mu: Vector3::new(
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(2.0..5.0),
                ),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(-2.5..-0.5)),
                rotation: Quaternion::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize(),
                opacity_logit: rng.random_range(-2.0..2.0),
                sh: (0..48).map(|_| rng.random_range(-0.3..0.3)).collect(),
            };
            let w: [f64; 10] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let grad = SplatGrad {
                mean2d: Vector2::new(w[0], w[1]),
                cov2d: Sym2::new(w[2], w[3], w[4]),
                depth: w[5],
                opacity: w[6],
                color: [w[7], w[8], w[9]],
            };
            let mut out = GaussianGrad::zeros(48);
            project_gaussian_backward(&g, &cam, &grad, &mut out);

            let eval = |g: &Gaussian3D| splat_loss(&project_gaussian(g, &cam, 0).unwrap(), &w);
            let h = 1e-6;
            let check = |name: &str, analytic: f64, f: &dyn Fn(&mut Gaussian3D, f64)| {
                let mut p = g.clone();
                let mut m = g.clone();
                f(&mut p, h);
                f(&mut m, -h);
                let fd = (eval(&p) - eval(&m)) / (2.0 * h);
                let denom = fd.abs().max(analytic.abs()).max(1e-3);
                assert!(
                    (fd - analytic).abs() / denom < 1e-4,
                    "case {case} {name}: fd {fd} analytic {analytic}"
                );
            };
            for a in 0..3 {
                check("mu", out.mu[a], &|g, d| g.mu[a] += d);
                check("log_scale", out.log_scale[a], &|g, d| g.log_scale[a] += d);
            }
            check("qw", out.rotation[0], &|g, d| g.rotation.w += d);
            check("qx", out.rotation[1], &|g, d| g.rotation.i += d);
            check("qy", out.rotation[2], &|g, d| g.rotation.j += d);
            check("qz", out.rotation[3], &|g, d| g.rotation.k += d);
            check("opacity", out.opacity_logit, &|g, d| g.opacity_logit += d);
            for i in 0..48 {
                check("sh", out.sh[i], &|g, d| g.sh[i] += d);
            }
        }
    }
}
