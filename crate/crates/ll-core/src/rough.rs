//! Rough (jump) initial data: the dissipative semigroup, parabolic
//! function-space norms, and the Duhamel fixed point.
//!
//! For damping α ∈ (0, 1] the stereographic form of the flow is a
//! quasilinear Schrödinger equation with complex diffusion z = α + iβ,
//!
//! ```text
//! ∂t u = z ∂xx u + g(u),      g(u) = −2z ū (∂x u)² / (1 + |u|²),
//! ```
//!
//! whose linear part is solved exactly by convolution with the oscillatory
//! Gaussian kernel
//!
//! ```text
//! G_α(x, t) = (4π z t)^{−1/2} exp(−x² / (4 z t)),     |G_α| = (4πt)^{−1/2} e^{−αx²/(4t)}.
//! ```
//!
//! Small rough data — bounded, with small BMO seminorm — is handled through
//! the parabolic Carleson-measure norms
//!
//! ```text
//! [v]_X  = sup_t √t ‖∂x v‖_∞  +  sup_{x,r} ( r⁻¹ ∫_{Q_r(x)} |∂x v|² )^{1/2},
//! ‖v‖_Y  = sup_t t ‖v‖_∞      +  sup_{x,r}   r⁻¹ ∫_{Q_r(x)} |v|,
//! ```
//!
//! with Q_r(x) = [x−r, x+r] × [0, r²]; these are the natural spaces for
//! small-BMO well-posedness, and the self-similar fields m(x/√t) have
//! finite, scale-invariant X-seminorm. [`duhamel_solve`] runs the Picard
//! iteration u ↦ S_α(t)u⁰ + ∫₀ᵗ S_α(t−s) g(u(s)) ds on a logarithmic time
//! ladder and reports the measured contraction factors together with a
//! smallness audit ([`ContractionAudit`]): the fixed-point inequality
//! 8C(ρ+ε)² ≤ ρ admits a solution ρ > 0 iff ε ≤ 1/(32C), where ε bounds the
//! data's BMO seminorm and C is a calibrated constant — a guard with a
//! measured margin, not a claimed bound.
//!
//! The remaining pieces tie the rough theory back to the self-similar
//! profiles: [`self_similar_field`] samples m(x/√t) on an evolution grid,
//! and [`multiplicity_scan`] locates every curvature amplitude whose corner
//! angle matches a prescribed ϑ, exhibiting non-uniqueness of the jump
//! initial-value problem.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::cell::RefCell;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frenet::{self, IntegrateOptions, NegativeSide, ProfileKind, ProfileParams};
use crate::geometry::{self, Damping, Vec3};
use crate::grid::{d1_fd4, sup_norm, Boundary, Grid1D, GridValue, Spectral};

/// e^{−LOG_TRUNC} ≈ 3e−17: the kernel window is cut where its modulus has
/// decayed below double precision relative to the peak.
const LOG_TRUNC: f64 = 38.0;

/// Calibrated constant of the smallness audit 8C(ρ+ε)² ≤ ρ. Measured by
/// bisection on two chirped-Gaussian data families (α = 0.6, T = 1): the
/// Picard iteration stops contracting at data BMO seminorm ≈ 0.816 and
/// ≈ 0.765 respectively. C = 1/(16·0.765) uses the smaller threshold and
/// places the audit boundary ε_max = 1/(32C) at half of it — a guard with
/// a measured 2× margin, not a universal constant.
pub const CONTRACTION_C: f64 = 0.0817;

const MAX_PICARD: usize = 24;

/// Time nodes of the Duhamel ladder: s = 0 plus this many log-spaced nodes.
const DUHAMEL_NODES: usize = 32;

/// First positive ladder node as a fraction of the final time.
const DUHAMEL_HEAD: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Kernel and semigroup
// ---------------------------------------------------------------------------

/// Damping and time of one dissipative-semigroup kernel G_α(·, t).
///
/// Strictly positive damping is required — the kernel modulus decays like
/// e^{−αx²/(4t)} and loses all localization as α → 0 — and strictly
/// positive time, since t sits in a denominator; `semigroup_apply` handles
/// t = 0 separately as the identity.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    pub damping: Damping,
    pub t: f64,
}

impl KernelParams {
    pub fn new(alpha: f64, t: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config(format!(
                "kernel damping must lie in (0, 1], got {alpha}"
            )));
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::config(format!(
                "kernel time must be positive and finite, got {t}"
            )));
        }
        Ok(KernelParams {
            damping: Damping::new(alpha)?,
            t,
        })
    }

    /// Kernel value G_α(x, t). Uses 1/z = z̄ (z is unimodular) and the
    /// principal square root, which is safe: 4πzt has positive real part.
    pub fn eval(&self, x: f64) -> Complex64 {
        let z = self.damping.z();
        let arg = -(x * x) * z.conj() / (4.0 * self.t);
        arg.exp() / (4.0 * PI * self.t * z).sqrt()
    }

    /// Radius beyond which the kernel modulus is below e^{−LOG_TRUNC} of
    /// its peak; the discrete convolution window is cut there.
    pub fn radius(&self) -> f64 {
        (4.0 * self.t * LOG_TRUNC / self.damping.alpha).sqrt()
    }
}

/// Raw discrete kernel mass h·Σ_j G_α(jh, t) over the truncation window.
///
/// By Poisson summation this equals 1 up to aliasing e^{−αt(2π/h)²} and the
/// cut tail, both far below 1e−10 once t ≳ h.
pub fn kernel_mass(alpha: f64, t: f64, h: f64) -> Result<Complex64> {
    if !(h > 0.0) {
        return Err(Error::config(format!("spacing must be positive, got {h}")));
    }
    let params = KernelParams::new(alpha, t)?;
    let j_max = (params.radius() / h).ceil() as i64;
    let mut mass = Complex64::new(0.0, 0.0);
    for j in -j_max..=j_max {
        mass += params.eval(j as f64 * h);
    }
    Ok(mass * h)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!(
            "semigroup damping must lie in (0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Applies the dissipative semigroup S_α(t) to a complex field.
///
/// Periodic grids use the exact Fourier multiplier e^{−(α+iβ)tk²}. Pinned
/// grids convolve with the sampled kernel, extending the field by its edge
/// values — the data classes of interest (jumps, stereographic projections
/// of profiles) are constant near the boundary, and constant extension
/// avoids manufacturing a boundary layer. The sampled window is
/// renormalized to unit mass so constants are reproduced exactly and the
/// operator stays a near-identity average even when t ≲ h².
pub fn semigroup_apply(
    grid: &Grid1D,
    phi: &[Complex64],
    alpha: f64,
    t: f64,
) -> Result<Vec<Complex64>> {
    grid.check_len(phi.len())?;
    check_alpha(alpha)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::config(format!(
            "semigroup time must be nonnegative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(phi.to_vec());
    }
    match grid.boundary {
        Boundary::Periodic => {
            let spectral = Spectral::new(grid)?;
            let z = Damping::new(alpha)?.z();
            Ok(spectral.apply_multiplier(phi, |k| (-z * t * k * k).exp()))
        }
        Boundary::Pinned => {
            let params = KernelParams::new(alpha, t)?;
            let h = grid.h;
            let j_max = (params.radius() / h).ceil() as isize;
            let mut w: Vec<Complex64> = (-j_max..=j_max)
                .map(|j| params.eval(j as f64 * h) * h)
                .collect();
            let mass: Complex64 = w.iter().sum();
            if mass.norm() < 0.1 {
                return Err(Error::numerical(format!(
                    "kernel window degenerate (discrete mass {:.3e})",
                    mass.norm()
                )));
            }
            for wj in &mut w {
                *wj /= mass;
            }
            let n = grid.n as isize;
            let out: Vec<Complex64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (idx, &wj) in w.iter().enumerate() {
                        let k = (i - (idx as isize - j_max)).clamp(0, n - 1) as usize;
                        acc += wj * phi[k];
                    }
                    acc
                })
                .collect();
            Ok(out)
        }
    }
}

/// Ratios ‖S_α(t)φ‖_∞ / ‖φ‖_∞ at the requested times.
///
/// The analytic kernel has modulus mass 1/√α > 1 for β ≠ 0, so the sup norm
/// is *not* contracted for every datum; on the benign fields arising here
/// the measured ratios stay ≤ 1, and this helper reports them rather than
/// asserting a false general bound.
pub fn modulus_contraction_report(
    grid: &Grid1D,
    phi: &[Complex64],
    alpha: f64,
    ts: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let base = sup_norm(phi);
    if base == 0.0 {
        return Err(Error::config("contraction report needs nonzero data"));
    }
    ts.iter()
        .map(|&t| {
            let out = semigroup_apply(grid, phi, alpha, t)?;
            Ok((t, sup_norm(&out) / base))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Jump data
// ---------------------------------------------------------------------------

/// A two-valued datum m⁰ = A⁺ χ_{x>0} + A⁻ χ_{x<0} on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpData {
    #[serde(rename = "A_plus")]
    pub a_plus: Vec3,
    #[serde(rename = "A_minus")]
    pub a_minus: Vec3,
}

impl JumpData {
    /// Both vectors must be unit up to 1e−8; they are renormalized exactly.
    pub fn new(a_plus: Vec3, a_minus: Vec3) -> Result<Self> {
        for v in [a_plus, a_minus] {
            if (geometry::norm(v) - 1.0).abs() > 1e-8 {
                return Err(Error::config(format!(
                    "jump values must be unit vectors, got |A| = {}",
                    geometry::norm(v)
                )));
            }
        }
        Ok(JumpData {
            a_plus: geometry::normalize(a_plus)?,
            a_minus: geometry::normalize(a_minus)?,
        })
    }

    /// Jump angle ϑ = arccos(A⁺·A⁻) ∈ [0, π].
    pub fn angle(&self) -> f64 {
        geometry::dot(self.a_plus, self.a_minus).clamp(-1.0, 1.0).acos()
    }

    /// The sharp jump sampled on a grid; a node at x = 0 receives the
    /// geodesic midpoint.
    pub fn sharp_field(&self, grid: &Grid1D) -> Result<Vec<Vec3>> {
        let theta = self.angle();
        let tol = 1e-12 * grid.h.max(1.0);
        grid.xs()
            .map(|x| {
                if x > tol {
                    Ok(self.a_plus)
                } else if x < -tol {
                    Ok(self.a_minus)
                } else {
                    slerp(self.a_minus, self.a_plus, 0.5, theta)
                }
            })
            .collect()
    }

    /// The jump mollified over `cells` grid cells: the geodesic from A⁻ to
    /// A⁺ traversed along a C² quintic ramp centred at x = 0. This is what
    /// an evolution solver can actually ingest — the sharp jump has no
    /// meaningful discrete gradient.
    pub fn mollified_field(&self, grid: &Grid1D, cells: f64) -> Result<Vec<Vec3>> {
        if !(cells > 0.0) {
            return Err(Error::config(format!(
                "mollification width must be positive, got {cells} cells"
            )));
        }
        let theta = self.angle();
        let width = cells * grid.h;
        grid.xs()
            .map(|x| slerp(self.a_minus, self.a_plus, smoothstep5(x / width + 0.5), theta))
            .collect()
    }
}

/// Quintic smoothstep: 0 for s ≤ 0, 1 for s ≥ 1, C² monotone in between.
fn smoothstep5(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    }
}

/// Spherical interpolation from a (s = 0) to b (s = 1) along the shorter
/// geodesic; the pair must not be antipodal.
fn slerp(a: Vec3, b: Vec3, s: f64, theta: f64) -> Result<Vec3> {
    if s <= 0.0 {
        return Ok(a);
    }
    if s >= 1.0 {
        return Ok(b);
    }
    if theta < 1e-12 {
        return Ok(a);
    }
    if theta > PI - 1e-9 {
        return Err(Error::numerical(
            "geodesic between antipodal jump values is not unique",
        ));
    }
    let sin_t = theta.sin();
    let ca = ((1.0 - s) * theta).sin() / sin_t;
    let cb = (s * theta).sin() / sin_t;
    geometry::normalize(geometry::add(
        geometry::scale(a, ca),
        geometry::scale(b, cb),
    ))
}

// ---------------------------------------------------------------------------
// Trajectories and parabolic norms
// ---------------------------------------------------------------------------

/// A field sampled at increasing times on a fixed grid.
#[derive(Debug, Clone)]
pub struct FieldTrajectory<T: GridValue> {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<T>>,
}

impl<T: GridValue> FieldTrajectory<T> {
    pub fn new(grid: Grid1D, times: Vec<f64>, fields: Vec<Vec<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::config(format!(
                "trajectory needs matching, nonempty times/fields ({} vs {})",
                times.len(),
                fields.len()
            )));
        }
        for pair in times.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::config("trajectory times must strictly increase"));
            }
        }
        if !(times[0] >= 0.0) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::config("trajectory times must be finite and ≥ 0"));
        }
        for f in &fields {
            grid.check_len(f.len())?;
        }
        Ok(FieldTrajectory { grid, times, fields })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is nonempty")
    }

    pub fn final_field(&self) -> &[T] {
        self.fields.last().expect("trajectory is nonempty")
    }
}

/// The sup/gradient/Carleson components of the parabolic X- and Y-norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParabolicNorms {
    /// sup_t ‖v(t)‖_∞
    pub sup_mod: f64,
    /// sup_t √t ‖∂x v(t)‖_∞
    pub grad_sup: f64,
    /// sup_{x,r} ( r⁻¹ ∫_{Q_r(x)} |∂x v|² )^{1/2}
    pub carleson_grad: f64,
    /// sup_t t ‖v(t)‖_∞
    pub y_sup: f64,
    /// sup_{x,r} r⁻¹ ∫_{Q_r(x)} |v|
    pub y_carleson: f64,
}

impl ParabolicNorms {
    /// [v]_X = sup √t‖∂x v‖_∞ + Carleson term.
    pub fn x_seminorm(&self) -> f64 {
        self.grad_sup + self.carleson_grad
    }

    /// ‖v‖_X = sup‖v‖_∞ + [v]_X.
    pub fn x_norm(&self) -> f64 {
        self.sup_mod + self.x_seminorm()
    }

    /// ‖v‖_Y = sup t‖v‖_∞ + Carleson L¹ term.
    pub fn y_norm(&self) -> f64 {
        self.y_sup + self.y_carleson
    }
}

/// Measures all parabolic norm components of a trajectory.
///
/// Discretization: gradients are fourth-order finite differences; the
/// parabolic balls run over the dyadic family r = h·2^j with centers every
/// h·2^{j−1} nodes (every node at the finest level); space integrals are
/// h-weighted node sums over [x−r, x+r] clamped to the domain.
///
/// Time integrals over [0, r²] use the trapezoid rule on the available
/// samples plus a model-based head below the first sample time t₁ > 0:
/// |∂x v|² is extended by the parabolic rate I(t) = I(t₁)√(t₁/t) — exact
/// for self-similar fields, where the head carries a fixed fraction of the
/// Carleson mass — and |v| by a constant. Radii whose r² overshoots the
/// last sample are integrated only as far as the data goes.
pub fn x_seminorm<T: GridValue>(traj: &FieldTrajectory<T>) -> ParabolicNorms {
    let grid = &traj.grid;
    let (n, h) = (grid.n, grid.h);

    // Per-time prefix sums of |∂x v|² and |v|, plus running sups.
    let slices: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = traj
        .fields
        .iter()
        .map(|f| {
            let g = d1_fd4(grid, f);
            let mut p2 = Vec::with_capacity(n + 1);
            let mut p1 = Vec::with_capacity(n + 1);
            p2.push(0.0);
            p1.push(0.0);
            let (mut s2, mut s1) = (0.0, 0.0);
            for i in 0..n {
                s2 += g[i].abs_sq();
                s1 += f[i].abs_sq().sqrt();
                p2.push(s2);
                p1.push(s1);
            }
            (p2, p1, sup_norm(f), sup_norm(&g))
        })
        .collect();

    let mut norms = ParabolicNorms {
        sup_mod: 0.0,
        grad_sup: 0.0,
        carleson_grad: 0.0,
        y_sup: 0.0,
        y_carleson: 0.0,
    };
    for (k, s) in slices.iter().enumerate() {
        let t = traj.times[k];
        norms.sup_mod = norms.sup_mod.max(s.2);
        norms.grad_sup = norms.grad_sup.max(t.sqrt() * s.3);
        norms.y_sup = norms.y_sup.max(t * s.2);
    }

    let mut best_g = 0.0f64;
    let mut best_y = 0.0f64;
    let mut w = 1usize;
    loop {
        let r = w as f64 * h;
        let r2 = r * r;
        let step = (w / 2).max(1);
        let mut ic = 0usize;
        loop {
            let lo = ic.saturating_sub(w);
            let hi = (ic + w).min(n - 1);
            let tg = time_integral(
                &traj.times,
                |k| h * (slices[k].0[hi + 1] - slices[k].0[lo]),
                r2,
                true,
            );
            let ty = time_integral(
                &traj.times,
                |k| h * (slices[k].1[hi + 1] - slices[k].1[lo]),
                r2,
                false,
            );
            best_g = best_g.max(tg / r);
            best_y = best_y.max(ty / r);
            if ic >= n - 1 {
                break;
            }
            ic = (ic + step).min(n - 1);
        }
        if w >= n {
            break;
        }
        w = (w * 2).min(n);
    }
    norms.carleson_grad = best_g.sqrt();
    norms.y_carleson = best_y;
    norms
}

/// ‖v‖_Y of a trajectory; see [`x_seminorm`] for the discretization.
pub fn y_norm<T: GridValue>(traj: &FieldTrajectory<T>) -> f64 {
    x_seminorm(traj).y_norm()
}

/// ∫₀^{r²} I(t) dt from samples I(t_k), with the model head described in
/// [`x_seminorm`]: I ∝ t^{−1/2} below the first sample when
/// `singular_head`, constant otherwise.
fn time_integral(times: &[f64], value: impl Fn(usize) -> f64, r2: f64, singular_head: bool) -> f64 {
    let t1 = times[0];
    let mut total = 0.0;
    if t1 > 0.0 {
        let i1 = value(0);
        if r2 <= t1 {
            return if singular_head {
                2.0 * i1 * (t1 * r2).sqrt()
            } else {
                i1 * r2
            };
        }
        total += if singular_head { 2.0 * i1 * t1 } else { i1 * t1 };
    }
    for k in 0..times.len() - 1 {
        let (ta, tb) = (times[k], times[k + 1]);
        if tb <= r2 {
            total += 0.5 * (tb - ta) * (value(k) + value(k + 1));
        } else {
            if r2 > ta {
                let frac = (r2 - ta) / (tb - ta);
                let ir = value(k) * (1.0 - frac) + value(k + 1) * frac;
                total += 0.5 * (r2 - ta) * (value(k) + ir);
            }
            return total;
        }
    }
    total
}

// ---------------------------------------------------------------------------
// BMO
// ---------------------------------------------------------------------------

/// Dyadic BMO seminorm: the largest L¹ mean oscillation
/// (1/|I|)∫_I |f − avg_I f| over windows of 2^j nodes, j ≥ 1, slid by half
/// a window (windows do not wrap on periodic grids). Node sums use uniform
/// weights, so the seminorm depends on the sample values only — it is
/// invariant under grid dilation by construction, up to the dyadic
/// quantization of the window family.
pub fn bmo_seminorm<T: GridValue>(grid: &Grid1D, f: &[T]) -> f64 {
    assert_eq!(f.len(), grid.n, "field length must match grid");
    let n = f.len();
    if n < 2 {
        return 0.0;
    }
    let mut prefix: Vec<T> = Vec::with_capacity(n + 1);
    prefix.push(T::zero());
    for (i, &v) in f.iter().enumerate() {
        let p = prefix[i].axpy(1.0, v);
        prefix.push(p);
    }
    let mut best = 0.0f64;
    let mut w = 2usize;
    loop {
        let step = (w / 2).max(1);
        let inv = 1.0 / w as f64;
        let osc_at = |i0: usize| {
            let sum = prefix[i0 + w].axpy(-1.0, prefix[i0]);
            let mean = T::zero().axpy(inv, sum);
            let mut osc = 0.0;
            for k in i0..i0 + w {
                osc += f[k].axpy(-1.0, mean).abs_sq().sqrt();
            }
            osc * inv
        };
        let mut i0 = 0usize;
        while i0 + w <= n {
            best = best.max(osc_at(i0));
            i0 += step;
        }
        // Right-aligned window, in case the stride skipped the tail.
        if (n - w) % step != 0 {
            best = best.max(osc_at(n - w));
        }
        if w >= n {
            break;
        }
        w = (w * 2).min(n);
    }
    best
}

// ---------------------------------------------------------------------------
// Self-similar fields on evolution grids
// ---------------------------------------------------------------------------

fn symmetric_origin(grid: &Grid1D) -> Result<usize> {
    let last = grid.x(grid.n - 1);
    let symmetric = grid.boundary == Boundary::Pinned
        && (grid.x0 + last).abs() <= 1e-9 * last.abs().max(1.0);
    if !symmetric {
        return Err(Error::config(
            "self-similar sampling needs a symmetric pinned grid (use Grid1D::symmetric)",
        ));
    }
    let j0 = grid
        .nearest_index(0.0)
        .ok_or_else(|| Error::config("grid does not contain the origin"))?;
    if grid.x(j0).abs() > 1e-9 * grid.h {
        return Err(Error::config("grid has no node at the origin"));
    }
    Ok(j0)
}

/// Samples the expander solution m(x, t) = m_prof(x/√t) on an evolution
/// grid at one time.
///
/// The profile is integrated on the rescaled grid ξ = x/√t with output
/// spacing h/√t, so profile nodes land exactly on the requested nodes and
/// no interpolation is involved; the grid must be symmetric with a node at
/// the origin.
pub fn self_similar_field(
    c: f64,
    alpha: f64,
    grid: &Grid1D,
    t: f64,
    tol: f64,
) -> Result<Vec<Vec3>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::config(format!(
            "self-similar time must be positive, got {t}"
        )));
    }
    let j0 = symmetric_origin(grid)?;
    let params = ProfileParams::new(c, alpha)?;
    let h_out = grid.h / t.sqrt();
    let offset = j0.max(grid.n - 1 - j0);
    let sol = frenet::integrate_profile_with(
        ProfileKind::Expander,
        &params,
        offset as f64 * h_out,
        tol,
        &IntegrateOptions {
            h_out: Some(h_out),
            negative: NegativeSide::Parity,
        },
    )?;
    let i0 = sol
        .grid
        .nearest_index(0.0)
        .ok_or_else(|| Error::numerical("profile grid lost the origin"))?;
    (0..grid.n)
        .map(|i| {
            let k = i0 as isize + i as isize - j0 as isize;
            sol.m
                .get(k as usize)
                .copied()
                .ok_or_else(|| Error::numerical("profile grid too short for the field grid"))
        })
        .collect()
}

/// The expander solution sampled at several times, as a trajectory.
pub fn self_similar_trajectory(
    c: f64,
    alpha: f64,
    grid: &Grid1D,
    times: &[f64],
    tol: f64,
) -> Result<FieldTrajectory<Vec3>> {
    let fields = times
        .par_iter()
        .map(|&t| self_similar_field(c, alpha, grid, t, tol))
        .collect::<Result<Vec<_>>>()?;
    FieldTrajectory::new(*grid, times.to_vec(), fields)
}

// ---------------------------------------------------------------------------
// Duhamel fixed point
// ---------------------------------------------------------------------------

/// Smallness audit for the Duhamel iteration.
///
/// The fixed-point argument closes when 8C(ρ+ε)² ≤ ρ for some ball radius
/// ρ, with ε the data's BMO seminorm; the quadratic admits positive
/// solutions exactly on ε ≤ 1/(32C), and then on ρ between the two roots
/// (1 − 16Cε ∓ √(1 − 32Cε))/(16C). C is [`CONTRACTION_C`], calibrated, so
/// the audit is a guard with a measured margin rather than a proved bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContractionAudit {
    /// BMO seminorm of the data.
    pub epsilon: f64,
    /// Sup norm of the data (recorded for the run manifest; the audit
    /// inequality constrains only the seminorm).
    pub sup: f64,
    /// Calibrated constant used.
    pub c_cal: f64,
    /// Audit boundary 1/(32·c_cal).
    pub epsilon_max: f64,
    /// Admissible ball radii [ρ₋, ρ₊], when they exist.
    pub rho_range: Option<(f64, f64)>,
    pub passes: bool,
}

/// Audits a complex datum against the calibrated smallness condition.
pub fn contraction_audit(grid: &Grid1D, u0: &[Complex64]) -> ContractionAudit {
    contraction_audit_with(grid, u0, CONTRACTION_C)
}

/// Same audit with an explicit constant (calibration and tests).
pub fn contraction_audit_with(grid: &Grid1D, u0: &[Complex64], c_cal: f64) -> ContractionAudit {
    let epsilon = bmo_seminorm(grid, u0);
    let epsilon_max = 1.0 / (32.0 * c_cal);
    let disc = 1.0 - 32.0 * c_cal * epsilon;
    let rho_range = (disc >= 0.0).then(|| {
        let mid = 1.0 - 16.0 * c_cal * epsilon;
        let half = disc.sqrt();
        ((mid - half) / (16.0 * c_cal), (mid + half) / (16.0 * c_cal))
    });
    ContractionAudit {
        epsilon,
        sup: sup_norm(u0),
        c_cal,
        epsilon_max,
        rho_range,
        passes: epsilon <= epsilon_max,
    }
}

/// Result of [`duhamel_solve`]: the Picard limit (or last iterate), the
/// measured iterate distances and contraction factors, and the data audit.
#[derive(Debug, Clone)]
pub struct DuhamelReport {
    pub trajectory: FieldTrajectory<Complex64>,
    pub audit: ContractionAudit,
    /// X-norm distances ‖u^{m+1} − u^m‖_X per iteration.
    pub distances: Vec<f64>,
    /// Ratios of consecutive distances.
    pub factors: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn nonlinearity(grid: &Grid1D, u: &[Complex64], z: Complex64) -> Vec<Complex64> {
    let du = d1_fd4(grid, u);
    u.iter()
        .zip(du)
        .map(|(&ui, dui)| -2.0 * z * ui.conj() * dui * dui / (1.0 + ui.norm_sqr()))
        .collect()
}

/// Solves ∂t u = z ∂xx u + g(u) by Picard iteration on the Duhamel form
/// u = S_α(t)u⁰ + ∫₀ᵗ S_α(t−s) g(u(s)) ds.
///
/// Time nodes are s = 0 plus [`DUHAMEL_NODES`] log-spaced values from
/// 1e−4·T to T: the integrand carries an integrable ∼s^{−1/2} head for
/// rough data, which a logarithmic ladder resolves where a uniform one
/// cannot. The s-integral is a trapezoid over the ladder; u(0) is pinned to
/// the datum throughout.
///
/// Iteration stops when the X-norm distance between consecutive iterates
/// falls below `tol` (converged), exceeds 1e8 or turns non-finite
/// (diverged), or after [`MAX_PICARD`] sweeps. Non-contraction is not an
/// error: the report carries the measured factors and the smallness audit,
/// and callers decide what to make of a factor above one.
pub fn duhamel_solve(
    grid: &Grid1D,
    u0: &[Complex64],
    alpha: f64,
    t_final: f64,
    tol: f64,
) -> Result<DuhamelReport> {
    grid.check_len(u0.len())?;
    check_alpha(alpha)?;
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::config(format!(
            "final time must be positive, got {t_final}"
        )));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::config(format!(
            "Picard tolerance must lie in (0, 1), got {tol}"
        )));
    }
    let audit = contraction_audit(grid, u0);
    let z = Damping::new(alpha)?.z();

    let tau1 = t_final * DUHAMEL_HEAD;
    let ratio = (t_final / tau1).ln() / (DUHAMEL_NODES - 1) as f64;
    let mut times = vec![0.0];
    for j in 0..DUHAMEL_NODES {
        times.push(tau1 * (ratio * j as f64).exp());
    }
    let k_last = times.len() - 1;
    times[k_last] = t_final;

    let base: Vec<Vec<Complex64>> = times[1..]
        .par_iter()
        .map(|&t| semigroup_apply(grid, u0, alpha, t))
        .collect::<Result<Vec<_>>>()?;

    let mut u: Vec<Vec<Complex64>> = std::iter::once(u0.to_vec())
        .chain(base.iter().cloned())
        .collect();
    let mut distances = Vec::new();
    let mut factors = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..MAX_PICARD {
        iterations += 1;
        let gs: Vec<Vec<Complex64>> = u.par_iter().map(|f| nonlinearity(grid, f, z)).collect();
        let next: Vec<Vec<Complex64>> = (1..times.len())
            .into_par_iter()
            .map(|k| {
                let tk = times[k];
                let mut acc = base[k - 1].clone();
                for j in 0..=k {
                    let w_j = 0.5
                        * ((times[(j + 1).min(k)] - times[j])
                            + (times[j] - times[j.saturating_sub(1)]));
                    let term = if j == k {
                        gs[k].clone()
                    } else {
                        semigroup_apply(grid, &gs[j], alpha, tk - times[j])?
                    };
                    for (a, t) in acc.iter_mut().zip(&term) {
                        *a += w_j * t;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;

        let diff: Vec<Vec<Complex64>> = next
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.iter()
                    .zip(&u[k + 1])
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>()
            })
            .collect();
        let diff_traj = FieldTrajectory::new(*grid, times[1..].to_vec(), diff)?;
        let d = x_seminorm(&diff_traj).x_norm();
        if let Some(&prev) = distances.last() {
            if prev > 0.0 {
                factors.push(d / prev);
            }
        }
        distances.push(d);

        u = std::iter::once(u0.to_vec()).chain(next).collect();
        if d <= tol {
            converged = true;
            break;
        }
        if !d.is_finite() || d > 1e8 {
            break;
        }
    }

    Ok(DuhamelReport {
        trajectory: FieldTrajectory::new(*grid, times, u)?,
        audit,
        distances,
        factors,
        converged,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Multiplicity of self-similar solutions at fixed corner angle
// ---------------------------------------------------------------------------

/// Roots of the angle map ϑ(c, α) = ϑ, exhibiting several distinct
/// self-similar solutions with the same jump data.
#[derive(Debug, Clone, Serialize)]
pub struct MultiplicityScan {
    pub theta: f64,
    pub alpha: f64,
    /// Sampled angle map (for CSV output).
    pub cs: Vec<f64>,
    pub angles: Vec<f64>,
    /// Located roots, increasing.
    pub roots: Vec<f64>,
    /// Whether at least the requested number of roots was found. Fewer is
    /// reported, not fatal: how far the multiplicity range extends below
    /// α = 1 is not known a priori.
    pub complete: bool,
}

const SCAN_STEP: f64 = 0.1;
const SCAN_C_MAX: f64 = 8.0;

/// Finds curvature amplitudes whose expander corner angle equals `theta`.
///
/// At α = 1 the angle map is arccos(cos(2c√π)) and the roots are read off
/// the closed form; otherwise the angle map is scanned on a uniform c-grid
/// (in parallel), sign changes are bracketed and refined by Brent's
/// method. The scan range grows until `k_wanted` roots are found or the
/// range cap is hit.
pub fn multiplicity_scan(theta: f64, alpha: f64, k_wanted: usize) -> Result<MultiplicityScan> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(Error::config(format!(
            "corner angle must lie in (0, π], got {theta}"
        )));
    }
    ProfileParams::new(0.0, alpha)?;
    if k_wanted == 0 {
        return Err(Error::config("at least one root must be requested"));
    }

    if alpha == 1.0 {
        let mut c_max = PI.sqrt() * (k_wanted as f64).max(1.0);
        let roots = loop {
            let roots = frenet::multiplicity_roots(theta, c_max)?;
            if roots.len() >= k_wanted {
                break roots;
            }
            c_max *= 2.0;
        };
        let samples = 257;
        let cs: Vec<f64> = (0..samples)
            .map(|i| c_max * i as f64 / (samples - 1) as f64)
            .collect();
        let angles = cs.iter().map(|&c| frenet::limit_angle_alpha1(c)).collect();
        return Ok(MultiplicityScan {
            theta,
            alpha,
            cs,
            angles,
            roots,
            complete: true,
        });
    }

    let mut cs: Vec<f64> = Vec::new();
    let mut angles: Vec<f64> = Vec::new();
    let mut roots: Vec<f64> = Vec::new();
    let mut c_max = (0.9 * (k_wanted as f64 + 1.0)).max(2.0);
    let mut scanned_to = 0.0f64;
    loop {
        let mut new_cs = Vec::new();
        let mut c = scanned_to + SCAN_STEP;
        while c <= c_max + 0.5 * SCAN_STEP {
            new_cs.push(c);
            c += SCAN_STEP;
        }
        let new_angles = frenet::angle_map(alpha, &new_cs)?;
        cs.extend_from_slice(&new_cs);
        angles.extend_from_slice(&new_angles);
        scanned_to = *cs.last().unwrap_or(&0.0);

        roots.clear();
        for i in 0..cs.len().saturating_sub(1) {
            let (fa, fb) = (angles[i] - theta, angles[i + 1] - theta);
            if fa == 0.0 {
                roots.push(cs[i]);
            } else if fa * fb < 0.0 {
                roots.push(refine_angle_root(alpha, theta, cs[i], cs[i + 1])?);
            }
        }
        if angles.last().map(|a| a - theta) == Some(0.0) {
            roots.push(*cs.last().unwrap());
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-6);

        if roots.len() >= k_wanted || c_max >= SCAN_C_MAX {
            break;
        }
        c_max = (c_max * 1.5).min(SCAN_C_MAX);
    }
    let complete = roots.len() >= k_wanted;
    Ok(MultiplicityScan {
        theta,
        alpha,
        cs,
        angles,
        roots,
        complete,
    })
}

fn refine_angle_root(alpha: f64, theta: f64, a: f64, b: f64) -> Result<f64> {
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let f = |c: f64| match ProfileParams::new(c, alpha).and_then(|p| frenet::limit_angle(&p)) {
        Ok(angle) => angle - theta,
        Err(e) => {
            *failure.borrow_mut() = Some(e);
            0.0
        }
    };
    let root = crate::numerics::brent_root(f, a, b, 1e-6)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(root)
}

// ---------------------------------------------------------------------------
