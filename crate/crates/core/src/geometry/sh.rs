//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Coefficients are stored basis-major: `coeffs[b * 3 + channel]`.
//! Color is `0.5 + Σ c_b · Y_b(dir)` clamped below at zero.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of basis functions for `degree`.
pub const fn sh_basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Number of scalar coefficients (three channels) for `degree`.
pub const fn sh_coeff_count(degree: usize) -> usize {
    3 * sh_basis_count(degree)
}

/// Infers the degree from a coefficient slice length.
pub fn sh_degree_for_len(len: usize) -> Result<usize> {
    (0..=MAX_SH_DEGREE)
        .find(|&d| sh_coeff_count(d) == len)
        .ok_or_else(|| Error::invalid(format!("{len} is not a valid SH coefficient count")))
}

/// Converts an rgb color to the degree-0 coefficient producing it.
pub fn rgb_to_sh0(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

/// Basis values for directions `dir`; only the first `sh_basis_count(degree)` are meaningful.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> [f64; 16] {
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree == 0 {
        return b;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Partial derivatives of each basis function with respect to the (unnormalized)
/// direction components, as polynomials in x, y, z.
fn sh_basis_jacobian(degree: usize, dir: &Vector3<f64>) -> [[f64; 3]; 16] {
    let mut j = [[0.0; 3]; 16];
    if degree == 0 {
        return j;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    j[1] = [0.0, -SH_C1, 0.0];
    j[2] = [0.0, 0.0, SH_C1];
    j[3] = [-SH_C1, 0.0, 0.0];
    if degree == 1 {
        return j;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let c = SH_C2;
    j[4] = [c[0] * y, c[0] * x, 0.0];
    j[5] = [0.0, c[1] * z, c[1] * y];
    j[6] = [-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z];
    j[7] = [c[3] * z, 0.0, c[3] * x];
    j[8] = [2.0 * c[4] * x, -2.0 * c[4] * y, 0.0];
    if degree == 2 {
        return j;
    }
    let c = SH_C3;
    j[9] = [6.0 * c[0] * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0];
    j[10] = [c[1] * y * z, c[1] * x * z, c[1] * x * y];
    j[11] = [
        -2.0 * c[2] * x * y,
        c[2] * (4.0 * zz - xx - 3.0 * yy),
        8.0 * c[2] * y * z,
    ];
    j[12] = [
        -6.0 * c[3] * x * z,
        -6.0 * c[3] * y * z,
        c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    j[13] = [
        c[4] * (4.0 * zz - 3.0 * xx - yy),
        -2.0 * c[4] * x * y,
        8.0 * c[4] * x * z,
    ];
    j[14] = [2.0 * c[5] * x * z, -2.0 * c[5] * y * z, c[5] * (xx - yy)];
    j[15] = [c[6] * (3.0 * xx - 3.0 * yy), -6.0 * c[6] * x * y, 0.0];
    j
}

/// Unclamped `0.5 + Σ c·Y` per channel. Caller guarantees `coeffs.len() == sh_coeff_count(degree)`.
pub(crate) fn sh_raw(degree: usize, coeffs: &[f64], dir: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(degree, dir);
    let mut rgb = [0.5; 3];
    for (b, yb) in basis.iter().enumerate().take(sh_basis_count(degree)) {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += coeffs[b * 3 + c] * yb;
        }
    }
    rgb
}

/// View-dependent color for a unit direction.
pub fn evaluate_sh(degree: usize, coeffs: &[f64], dir: &Vector3<f64>) -> Result<[f64; 3]> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::invalid(format!("SH degree {degree} exceeds {MAX_SH_DEGREE}")));
    }
    if coeffs.len() != sh_coeff_count(degree) {
        return Err(Error::invalid(format!(
            "degree {degree} needs {} SH coefficients, got {}",
            sh_coeff_count(degree),
            coeffs.len()
        )));
    }
    if (dir.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("SH direction must be a unit vector"));
    }
    Ok(sh_raw(degree, coeffs, dir).map(|v| v.max(0.0)))
}

/// Gradients of the clamped color with respect to the coefficients and to the
/// unit direction used at evaluation.
pub(crate) fn sh_backward(
    degree: usize,
    coeffs: &[f64],
    dir: &Vector3<f64>,
    dl_drgb: [f64; 3],
    dl_dcoeffs: &mut [f64],
) -> Vector3<f64> {
    let raw = sh_raw(degree, coeffs, dir);
    let g: [f64; 3] = std::array::from_fn(|c| if raw[c] < 0.0 { 0.0 } else { dl_drgb[c] });
    let basis = sh_basis(degree, dir);
    let jac = sh_basis_jacobian(degree, dir);
    let mut ddir = Vector3::zeros();
    for b in 0..sh_basis_count(degree) {
        let mut dl_dbasis = 0.0;
        for c in 0..3 {
            dl_dcoeffs[b * 3 + c] += g[c] * basis[b];
            dl_dbasis += g[c] * coeffs[b * 3 + c];
        }
        for a in 0..3 {
            ddir[a] += dl_dbasis * jac[b][a];
        }
    }
    ddir
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z).normalize()
    }

    #[test]
    fn zero_coefficients_give_offset_only() {
        for d in 0..=3 {
            let c = vec![0.0; sh_coeff_count(d)];
            let rgb = evaluate_sh(d, &c, &unit(0.3, -0.2, 0.9)).unwrap();
            assert_eq!(rgb, [0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn degree_zero_constant() {
        // Y00 = 1 / (2 sqrt(pi))
        let y00 = 0.5 / std::f64::consts::PI.sqrt();
        assert!((y00 - 0.28209479).abs() < 1e-8);
        let c = [0.4, -0.2, 1.0];
        let rgb = evaluate_sh(0, &c, &unit(1.0, 0.0, 0.0)).unwrap();
        for ch in 0..3 {
            assert!((rgb[ch] - (0.5 + y00 * c[ch]).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn band_one_is_odd() {
        let mut c = vec![0.0; sh_coeff_count(1)];
        for (i, v) in c.iter_mut().enumerate().skip(3) {
            *v = 0.1 * i as f64 - 0.5;
        }
        let d = unit(0.2, 0.5, -0.7);
        let a = evaluate_sh(1, &c, &d).unwrap();
        let b = evaluate_sh(1, &c, &(-d)).unwrap();
        for ch in 0..3 {
            assert!(((a[ch] - 0.5) + (b[ch] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_count_rejected() {
        assert!(evaluate_sh(1, &[0.0; 3], &unit(0.0, 0.0, 1.0)).is_err());
        assert!(evaluate_sh(0, &[0.0; 3], &Vector3::new(0.0, 0.0, 2.0)).is_err());
        assert!(sh_degree_for_len(48).unwrap() == 3);
        assert!(sh_degree_for_len(10).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let degree = 3;
        let coeffs: Vec<f64> = (0..sh_coeff_count(degree))
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.05)
            .collect();
        let dir = Vector3::new(0.3, -0.5, 0.8);
        let g = [0.7, -1.3, 0.4];
        let loss = |c: &[f64], d: &Vector3<f64>| {
            let rgb = sh_raw(degree, c, d).map(|v| v.max(0.0));
            rgb[0] * g[0] + rgb[1] * g[1] + rgb[2] * g[2]
        };
        let mut dc = vec![0.0; coeffs.len()];
        let dd = sh_backward(degree, &coeffs, &dir, g, &mut dc);
        let h = 1e-6;
        for i in 0..coeffs.len() {
            let mut p = coeffs.clone();
            let mut m = coeffs.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (loss(&p, &dir) - loss(&m, &dir)) / (2.0 * h);
            assert!((fd - dc[i]).abs() < 1e-7, "coeff {i}: {fd} vs {}", dc[i]);
        }
        for a in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p[a] += h;
            m[a] -= h;
            let fd = (loss(&coeffs, &p) - loss(&coeffs, &m)) / (2.0 * h);
            assert!((fd - dd[a]).abs() < 1e-7, "dir {a}: {fd} vs {}", dd[a]);
        }
    }
}
