//! Pointwise geometry on the unit sphere and the changes of variables used
//! throughout the crate.
//!
//! Three equivalent descriptions of a map m: ℝ → S² are supported, each valid
//! on its own open set:
//!
//! * the sphere-valued field m = (m₁, m₂, m₃) itself;
//! * the stereographic projection u = (m₁ + i m₂)/(1 + m₃) from the south
//!   pole, defined while m stays away from (0,0,−1);
//! * the hydrodynamical pair (u, φ) with u = m₃ and
//!   m₁ + i m₂ = √(1−u²)(sin φ + i cos φ), defined while the in-plane
//!   component does not vanish (no "vacuum").
//!
//! The field-level conversions ([`sphere_to_hydro`], [`hydro_to_sphere`])
//! additionally carry the phase through w = −∂x φ, so that a hydrodynamical
//! state (v, w) can be lifted back to the sphere up to a rotation about e₃.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{self, Grid1D};

/// A point of ℝ³ (fields are `Vec<Vec3>`).
pub type Vec3 = [f64; 3];

/// Rejection threshold for the stereographic chart: `1 + m₃` must exceed this.
pub const SOUTH_POLE_TOL: f64 = 1e-12;

/// Rejection threshold for the hydrodynamical chart: `1 − m₃²` must exceed it.
pub const VACUUM_TOL: f64 = 1e-10;

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Normalizes `a`, returning an error if its norm is below 1e-14.
pub fn normalize(a: Vec3) -> Result<Vec3> {
    let n = norm(a);
    if n < 1e-14 {
        return Err(Error::numerical("cannot normalize a near-zero vector"));
    }
    Ok(scale(a, 1.0 / n))
}

/// Largest deviation of `|m_i|` from 1 over the field.
pub fn max_unit_defect(ms: &[Vec3]) -> f64 {
    ms.iter()
        .map(|&m| (norm(m) - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Gilbert damping parameter α ∈ [0, 1] together with β = √(1−α²).
///
/// α = 0 is the Schrödinger map (conservative precession), α = 1 the
/// harmonic map heat flow; intermediate values blend the two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub alpha: f64,
    pub beta: f64,
}

impl Damping {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!(
                "damping alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Damping {
            alpha,
            beta: (1.0 - alpha * alpha).max(0.0).sqrt(),
        })
    }

    /// The complex diffusion coefficient α + iβ of the associated
    /// dissipative Schrödinger semigroup.
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.alpha, self.beta)
    }
}

/// Anisotropy coefficients λ₁, λ₃ ≥ 0 of the energy density
/// ½(|∂x m|² + λ₁ m₁² + λ₃ m₃²).
///
/// λ₁ = λ₃ = 0 is the isotropic equation; λ₁ = 0, λ₃ > 0 is easy-plane;
/// λ₁ = λ₃ > 0 is easy-axis (the e₂ axis is preferred).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Anisotropy {
    pub lambda1: f64,
    pub lambda3: f64,
}

impl Anisotropy {
    pub const ISOTROPIC: Anisotropy = Anisotropy {
        lambda1: 0.0,
        lambda3: 0.0,
    };

    pub fn new(lambda1: f64, lambda3: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda3 >= 0.0) {
            return Err(Error::config(format!(
                "anisotropies must be nonnegative, got ({lambda1}, {lambda3})"
            )));
        }
        Ok(Anisotropy { lambda1, lambda3 })
    }

    /// Easy-plane normalization λ₁ = 0, λ₃ = 1 used by the soliton module.
    pub fn easy_plane() -> Self {
        Anisotropy {
            lambda1: 0.0,
            lambda3: 1.0,
        }
    }

    /// Frequency of plane waves linearized around the stationary state e₂:
    /// ω(k) = √(k⁴ + (λ₁+λ₃)k² + λ₁λ₃).
    pub fn omega(&self, k: f64) -> f64 {
        let k2 = k * k;
        (k2 * k2 + (self.lambda1 + self.lambda3) * k2 + self.lambda1 * self.lambda3).sqrt()
    }
}

/// Stereographic projection u = (m₁ + i m₂)/(1 + m₃).
///
/// Fails if m is within [`SOUTH_POLE_TOL`] of the south pole, where the
/// chart degenerates.
pub fn stereographic(m: Vec3) -> Result<Complex64> {
    let denom = 1.0 + m[2];
    if denom <= SOUTH_POLE_TOL {
        return Err(Error::numerical(format!(
            "stereographic chart degenerates near the south pole (1 + m3 = {denom:.3e})"
        )));
    }
    Ok(Complex64::new(m[0] / denom, m[1] / denom))
}

/// Inverse stereographic projection; always lands exactly on S².
pub fn stereographic_inv(u: Complex64) -> Vec3 {
    let r2 = u.norm_sqr();
    let denom = 1.0 + r2;
    [2.0 * u.re / denom, 2.0 * u.im / denom, (1.0 - r2) / denom]
}

/// The in-plane complex combination m₁ + i m₂ (the "easy-plane" convention).
pub fn complex_m12(m: Vec3) -> Complex64 {
    Complex64::new(m[0], m[1])
}

/// The complex combination m₁ + i m₃ used by the easy-axis (cubic NLS)
/// regime, where the preferred direction is e₂.
pub fn complex_m13(m: Vec3) -> Complex64 {
    Complex64::new(m[0], m[2])
}

/// Hydrodynamical coordinates of a single point: (u, φ) with u = m₃ and
/// m₁ + i m₂ = √(1−u²)(sin φ + i cos φ), φ ∈ (−π, π].
pub fn to_hydro_point(m: Vec3) -> Result<(f64, f64)> {
    let u = m[2];
    if 1.0 - u * u <= VACUUM_TOL {
        return Err(Error::numerical(format!(
            "hydrodynamical chart degenerates at vacuum (1 - m3^2 = {:.3e})",
            1.0 - u * u
        )));
    }
    Ok((u, m[0].atan2(m[1])))
}

/// Inverse of [`to_hydro_point`].
pub fn from_hydro_point(u: f64, phi: f64) -> Vec3 {
    let r = (1.0 - u * u).max(0.0).sqrt();
    [r * phi.sin(), r * phi.cos(), u]
}

/// A field in hydrodynamical variables: v = m₃, the unwrapped phase φ, and
/// the phase gradient w = −∂x φ.
#[derive(Debug, Clone)]
pub struct HydroField {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Converts a sphere-valued field to hydrodynamical variables.
///
/// The phase is unwrapped along the grid (no 2π jumps between neighbors) and
/// w is computed with the fourth-order difference of the grid's boundary
/// type. Fails at vacuum points.
pub fn sphere_to_hydro(grid: &Grid1D, ms: &[Vec3]) -> Result<HydroField> {
    grid.check_len(ms.len())?;
    let mut v: Vec<f64> = Vec::with_capacity(ms.len());
    let mut phi: Vec<f64> = Vec::with_capacity(ms.len());
    for (i, &m) in ms.iter().enumerate() {
        let (u, mut p) = to_hydro_point(m)
            .map_err(|e| Error::numerical(format!("at node {i}: {e}")))?;
        if let Some(&prev) = phi.last() {
            // Unwrap: shift by multiples of 2π to stay continuous.
            let two_pi = 2.0 * std::f64::consts::PI;
            p += two_pi * ((prev - p) / two_pi).round();
        }
        v.push(u);
        phi.push(p);
    }
    let mut w = grid::d1_fd4(grid, &phi);
    for wi in &mut w {
        *wi = -*wi;
    }
    Ok(HydroField { v, w, phi })
}

/// Lifts (v, w) back to the sphere through
/// m = (√(1−v²) cos Φ, √(1−v²) sin Φ, v), Φ(x) = ∫₀ˣ w.
///
/// The integration constant is fixed so that Φ vanishes at x = 0 (the value
/// there is obtained by linear interpolation if 0 is not a node). The result
/// is exactly unit-norm. Composing with [`sphere_to_hydro`] recovers (v, w);
/// the sphere field itself is recovered up to a rotation about e₃.
pub fn hydro_to_sphere(grid: &Grid1D, v: &[f64], w: &[f64]) -> Result<Vec<Vec3>> {
    grid.check_len(v.len())?;
    grid.check_len(w.len())?;
    for (i, &vi) in v.iter().enumerate() {
        if 1.0 - vi * vi < 0.0 {
            return Err(Error::config(format!(
                "hydrodynamical field leaves [-1, 1] at node {i} (v = {vi})"
            )));
        }
    }
    let mut phase = grid::cumtrapz4(grid, w);
    let at0 = grid.interp_linear(&phase, 0.0).unwrap_or(phase[0]);
    for p in &mut phase {
        *p -= at0;
    }
    Ok(v.iter()
        .zip(&phase)
        .map(|(&vi, &ph)| {
            let r = (1.0 - vi * vi).max(0.0).sqrt();
            [r * ph.cos(), r * ph.sin(), vi]
        })
        .collect())
}

/// Applies a fixed rotation matrix to every point of a field.
pub fn rotate_field(r: &nalgebra::Matrix3<f64>, ms: &[Vec3]) -> Vec<Vec3> {
    ms.iter()
        .map(|&m| {
            let p = r * nalgebra::Vector3::new(m[0], m[1], m[2]);
            [p.x, p.y, p.z]
        })
        .collect()
}

/// The rotation about e₃ by angle θ.
pub fn rotation_e3(theta: f64) -> nalgebra::Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    nalgebra::Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn on_sphere(a: f64, b: f64, c: f64) -> Option<Vec3> {
        let n = (a * a + b * b + c * c).sqrt();
        (n > 1e-3).then(|| [a / n, b / n, c / n])
    }

    #[test]
    fn stereographic_known_points() {
        // North pole -> origin, equator points -> unit circle.
        let u = stereographic([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(u, Complex64::new(0.0, 0.0));
        let u = stereographic([1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(u.re, 1.0);
        assert_relative_eq!(u.im, 0.0);
        assert!(stereographic([0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn hydro_point_conventions() {
        // m = e1 has phase π/2, m = e2 has phase 0.
        let (u, phi) = to_hydro_point([1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(u, 0.0);
        assert_relative_eq!(phi, std::f64::consts::FRAC_PI_2);
        let (_, phi) = to_hydro_point([0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(phi, 0.0);
        assert!(to_hydro_point([0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn dispersion_special_cases() {
        let iso = Anisotropy::ISOTROPIC;
        assert_relative_eq!(iso.omega(2.0), 4.0); // ω = k² when λ₁ = λ₃ = 0
        let ep = Anisotropy::easy_plane();
        assert_relative_eq!(ep.omega(1.0), 2.0f64.sqrt()); // √(k⁴ + k²)
    }

    #[test]
    fn field_roundtrip_through_hydro() {
        // A smooth non-vacuum field: tilted precession profile.
        let grid = Grid1D::pinned(-10.0, 10.0, 2001).unwrap();
        let ms: Vec<Vec3> = grid
            .xs()
            .map(|x| {
                let th = 0.4 * (-x * x / 8.0f64).exp();
                let ph = 0.3 * x;
                [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]
            })
            .map(|m| normalize(m).unwrap())
            .collect();
        // m3 = cos θ ≤ cos(0.4) < 1 only at the center... the tails approach
        // the north pole, so tilt the whole field towards e2 first.
        let r = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let ms = rotate_field(&r, &ms);
        let hyd = sphere_to_hydro(&grid, &ms).unwrap();
        let back = hydro_to_sphere(&grid, &hyd.v, &hyd.w).unwrap();
        // Reconstruction is only defined up to a rotation about e3; align by
        // the phase at x = 0 and compare.
        let hyd2 = sphere_to_hydro(&grid, &back).unwrap();
        let mid = grid.n / 2;
        let dphi = hyd.phi[mid] - hyd2.phi[mid];
        let aligned = rotate_field(&rotation_e3(-dphi), &back);
        let err = ms
            .iter()
            .zip(&aligned)
            .map(|(a, b)| distance(*a, *b))
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "roundtrip error {err:.3e}");
        // And w itself round-trips at fourth order.
        let werr = hyd
            .w
            .iter()
            .zip(&hyd2.w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(werr < 1e-9, "w roundtrip error {werr:.3e}");
    }

    proptest! {
        #[test]
        fn stereographic_roundtrip(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            prop_assume!(on_sphere(a, b, c).is_some());
            let m = on_sphere(a, b, c).unwrap();
            prop_assume!(1.0 + m[2] > 1e-6);
            let u = stereographic(m).unwrap();
            let back = stereographic_inv(u);
            prop_assert!(distance(m, back) < 1e-12);
        }

        #[test]
        fn inverse_stereographic_is_unit(re in -10.0f64..10.0, im in -10.0f64..10.0) {
            let m = stereographic_inv(Complex64::new(re, im));
            prop_assert!((norm(m) - 1.0).abs() < 1e-14);
        }

        #[test]
        fn hydro_point_roundtrip(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -0.9f64..0.9) {
            prop_assume!(on_sphere(a, b, c).is_some());
            let mut m = on_sphere(a, b, c).unwrap();
            // keep a safe distance from vacuum
            prop_assume!(1.0 - m[2] * m[2] > 1e-4);
            let (u, phi) = to_hydro_point(m).unwrap();
            let back = from_hydro_point(u, phi);
            prop_assert!(distance(m, back) < 1e-12);
            m[2] = -m[2];
            let (u2, _) = to_hydro_point(m).unwrap();
            prop_assert!((u2 + u).abs() < 1e-15);
        }

        #[test]
        fn cross_is_orthogonal(a in proptest::array::uniform3(-1.0f64..1.0),
                               b in proptest::array::uniform3(-1.0f64..1.0)) {
            let c = cross(a, b);
            prop_assert!(dot(c, a).abs() < 1e-12);
            prop_assert!(dot(c, b).abs() < 1e-12);
        }
    }
}
