//! Self-similar profiles of the damped flow.
//!
//! A profile is the trace `m(x, t) = 𝔪(x/√(±t))` of a self-similar solution:
//! expanders spread forward from a corner singularity at `t = 0`, shrinkers
//! collapse onto one as `t → T⁻`. In both cases the unit tangent 𝔪 solves a
//! Serret–Frenet system with curvature `k(x) = c·e^{∓αx²/4}` and torsion
//! `τ(x) = ±βx/2`, integrated here from the canonical frame at the origin.
//!
//! Beyond raw integration this module recovers the objects that describe the
//! profile's behavior at infinity:
//!
//! - expander limit vectors `A±` and the angle of the initial corner,
//!   extracted by fitting the decaying oscillation `(2c/s)·e^{−αs²/4}`;
//! - shrinker limit circles: great circles with normals `B±` that the
//!   profile spirals towards, recovered from the oscillation amplitudes and
//!   cross-checked against the secular drift term;
//! - a fully independent oracle for expanders built on the second-order
//!   complex reduction of the Frenet system, used to validate the direct
//!   integration to the same tolerance.
//!
//! Conventions: `β = √(1−α²) ≥ 0`; profiles obey the parity
//! `𝔪(−x) = σ𝔪(x)` with `σ = diag(1,−1,−1)`, so only `x ≥ 0` is integrated
//! unless a dual-integration cross-check is requested.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::grid::{self, Grid1D};
use crate::numerics;
use crate::ode::{Dopri5, OdeStats};
use crate::report;

/// Oscillation envelope `(2c/x)e^{−αx²/4}` must fall below this level at the
/// end of the grid before limit vectors may be read off by fitting.
pub const LIMIT_ENVELOPE_MAX: f64 = 1e-10;

/// Absolute accuracy floor of an integrated profile. Asymptotic terms whose
/// predicted size is below `MEASURABLE_FACTOR` times this floor are treated
/// as unmeasurable rather than compared against noise.
pub const PROFILE_NOISE_FLOOR: f64 = 1e-10;

/// Signal-to-floor factor required before a decaying term counts as visible.
pub const MEASURABLE_FACTOR: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Expander,
    Shrinker,
}

/// Curvature amplitude and damping of a self-similar profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub c: f64,
    pub alpha: f64,
}

impl ProfileParams {
    pub fn new(c: f64, alpha: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::config(format!(
                "curvature amplitude must be finite and nonnegative, got {c}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!(
                "damping must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(ProfileParams { c, alpha })
    }

    /// Precession coefficient β = √(1−α²).
    pub fn beta(&self) -> f64 {
        (1.0 - self.alpha * self.alpha).max(0.0).sqrt()
    }
}

/// Curvature and torsion laws. Expanders carry `(c e^{−αx²/4}, βx/2)`,
/// shrinkers `(c e^{αx²/4}, −βx/2)`.
pub fn curvature_torsion(kind: ProfileKind, params: &ProfileParams, x: f64) -> (f64, f64) {
    let q = 0.25 * params.alpha * x * x;
    let half_bx = 0.5 * params.beta() * x;
    match kind {
        ProfileKind::Expander => (params.c * (-q).exp(), half_bx),
        ProfileKind::Shrinker => (params.c * q.exp(), -half_bx),
    }
}

/// Smallest abscissa from which the expander tail expansion is valid:
/// `s₀ = 4√(8+c²)`.
pub fn asymptotic_onset(c: f64) -> f64 {
    4.0 * (8.0 + c * c).sqrt()
}

/// One orthonormal frame node.
#[derive(Clone, Copy, Debug)]
pub struct FrenetFrame {
    pub m: Vec3,
    pub n: Vec3,
    pub b: Vec3,
}

impl FrenetFrame {
    /// Identity frame (e1, e2, e3) used as initial data at the origin.
    pub fn canonical() -> Self {
        FrenetFrame {
            m: [1.0, 0.0, 0.0],
            n: [0.0, 1.0, 0.0],
            b: [0.0, 0.0, 1.0],
        }
    }

    /// Largest deviation from orthonormality, including `b = m × n`.
    pub fn defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for v in [self.m, self.n, self.b] {
            d = d.max((geometry::dot(v, v) - 1.0).abs());
        }
        d = d.max(geometry::dot(self.m, self.n).abs());
        d = d.max(geometry::dot(self.m, self.b).abs());
        d = d.max(geometry::dot(self.n, self.b).abs());
        d.max(geometry::distance(
            self.b,
            geometry::cross(self.m, self.n),
        ))
    }
}

/// How the negative half-axis is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeSide {
    /// Mirror the positive leg through the parity `m(−x) = σm(x)`,
    /// `n(−x) = −σn(x)`, `b(−x) = −σb(x)` with `σ = diag(1,−1,−1)`.
    Parity,
    /// Integrate the reflected system directly (used to *verify* parity).
    Direct,
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions {
    /// Output node spacing; `None` picks `1e-3`, shrunk for shrinkers so the
    /// fastest oscillation keeps `k·h ≤ 0.1`.
    pub h_out: Option<f64>,
    pub negative: NegativeSide,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            h_out: None,
            negative: NegativeSide::Parity,
        }
    }
}

/// A profile sampled on a symmetric uniform grid.
#[derive(Clone, Debug)]
pub struct ProfileSolution {
    pub kind: ProfileKind,
    pub params: ProfileParams,
    pub grid: Grid1D,
    pub m: Vec<Vec3>,
    pub n: Vec<Vec3>,
    pub b: Vec<Vec3>,
    pub k: Vec<f64>,
    pub tau: Vec<f64>,
    pub tol: f64,
    pub stats: OdeStats,
}

impl ProfileSolution {
    /// Index of the origin node.
    pub fn i0(&self) -> usize {
        self.grid.n / 2
    }

    pub fn frame(&self, i: usize) -> FrenetFrame {
        FrenetFrame {
            m: self.m[i],
            n: self.n[i],
            b: self.b[i],
        }
    }

    /// Worst orthonormality defect over all nodes.
    pub fn orthonormality_defect(&self) -> f64 {
        (0..self.grid.n)
            .map(|i| self.frame(i).defect())
            .fold(0.0, f64::max)
    }

    /// Sup-distance between `|m′|` measured by finite differences and the
    /// curvature law. Limited by the stencil error, not by the integrator.
    pub fn tangent_speed_defect(&self) -> f64 {
        let dm = grid::d1_fd4(&self.grid, &self.m);
        dm.iter()
            .zip(&self.k)
            .map(|(d, k)| (geometry::norm(*d) - k).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `x, m1, m2, m3, n1, n2, n3, b1, b2, b3, k, tau` rows.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let header = [
            "x", "m1", "m2", "m3", "n1", "n2", "n3", "b1", "b2", "b3", "k", "tau",
        ];
        let rows = (0..self.grid.n).map(|i| {
            let mut row = Vec::with_capacity(12);
            row.push(self.grid.x(i));
            for v in [self.m[i], self.n[i], self.b[i]] {
                row.extend_from_slice(&v);
            }
            row.push(self.k[i]);
            row.push(self.tau[i]);
            row
        });
        report::write_csv(path, &header, rows)
            .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))
    }
}

/// Sup over nodes of the frame-to-frame distance between two solutions on
/// identical grids.
pub fn frame_distance(a: &ProfileSolution, b: &ProfileSolution) -> Result<f64> {
    if a.grid.n != b.grid.n || (a.grid.h - b.grid.h).abs() > 1e-12 {
        return Err(Error::config("profiles live on different grids"));
    }
    let mut sup: f64 = 0.0;
    for i in 0..a.grid.n {
        sup = sup.max(geometry::distance(a.m[i], b.m[i]));
        sup = sup.max(geometry::distance(a.n[i], b.n[i]));
        sup = sup.max(geometry::distance(a.b[i], b.b[i]));
    }
    Ok(sup)
}

fn orthonormalize_frame(y: &mut [f64]) {
    let mut m = [y[0], y[1], y[2]];
    let mut n = [y[3], y[4], y[5]];
    let im = 1.0 / geometry::norm(m);
    m = geometry::scale(m, im);
    let mn = geometry::dot(n, m);
    n = geometry::sub(n, geometry::scale(m, mn));
    let inn = 1.0 / geometry::norm(n);
    n = geometry::scale(n, inn);
    let b = geometry::cross(m, n);
    y[..3].copy_from_slice(&m);
    y[3..6].copy_from_slice(&n);
    y[6..9].copy_from_slice(&b);
}

fn integrate_leg(
    kind: ProfileKind,
    params: &ProfileParams,
    mirrored: bool,
    out_xs: &[f64],
    h_out: f64,
    tol: f64,
) -> Result<(Vec<Vec<f64>>, OdeStats)> {
    let x_end = *out_xs.last().expect("positive leg has nodes");
    // The mirrored system m(−ξ) satisfies Serret–Frenet with k ↦ −k.
    let sign_k = if mirrored { -1.0 } else { 1.0 };
    let p = *params;
    let y0 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let solver = Dopri5 {
        rtol: tol,
        atol: 1e-2 * tol,
        h_init: None,
        // Samples between step endpoints come from the dense interpolant,
        // whose error has small kinks at step boundaries. Finite differences
        // over the output grid amplify such kinks by 1/h, so never step
        // further than the output spacing.
        h_max: Some(h_out),
        max_steps: 40_000_000,
    };
    let mut sol = solver.solve(
        |s, y, dy| {
            let (k, tau) = curvature_torsion(kind, &p, s);
            let k = sign_k * k;
            for i in 0..3 {
                dy[i] = k * y[3 + i];
                dy[3 + i] = -k * y[i] + tau * y[6 + i];
                dy[6 + i] = -tau * y[3 + i];
            }
        },
        0.0,
        x_end,
        &y0,
        out_xs,
        |_, y| orthonormalize_frame(y),
    )?;
    // The step-end repair does not reach interior dense samples; restore
    // exact orthonormality there too.
    for y in &mut sol.samples {
        orthonormalize_frame(y);
    }
    Ok((sol.samples, sol.stats))
}

/// Integrates a profile over `[−x_max, x_max]` with default options.
pub fn integrate_profile(
    kind: ProfileKind,
    params: &ProfileParams,
    x_max: f64,
    tol: f64,
) -> Result<ProfileSolution> {
    integrate_profile_with(kind, params, x_max, tol, &IntegrateOptions::default())
}

/// Integrates a profile with explicit output spacing / negative-side policy.
pub fn integrate_profile_with(
    kind: ProfileKind,
    params: &ProfileParams,
    x_max: f64,
    tol: f64,
    opts: &IntegrateOptions,
) -> Result<ProfileSolution> {
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(Error::config(format!("x_max must be positive, got {x_max}")));
    }
    if !(tol > 1e-14 && tol < 1e-4) {
        return Err(Error::config(format!(
            "tolerance must lie in (1e-14, 1e-4), got {tol}"
        )));
    }
    let h_out = match opts.h_out {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::config(format!("output spacing must be positive, got {h}"))),
        None => {
            let (k_end, _) = curvature_torsion(kind, params, x_max);
            (1e-3f64).min(0.1 / k_end.max(1e-300)).max(x_max * 1e-7)
        }
    };
    let grid_full = Grid1D::symmetric(x_max, h_out)?;
    let n = grid_full.n;
    let i0 = n / 2;
    let pos_xs: Vec<f64> = (i0..n).map(|i| grid_full.x(i)).collect();

    let (pos, mut stats) = integrate_leg(kind, params, false, &pos_xs, h_out, tol)?;

    let mut m = vec![[0.0; 3]; n];
    let mut nn = vec![[0.0; 3]; n];
    let mut b = vec![[0.0; 3]; n];
    for (j, y) in pos.iter().enumerate() {
        m[i0 + j] = [y[0], y[1], y[2]];
        nn[i0 + j] = [y[3], y[4], y[5]];
        b[i0 + j] = [y[6], y[7], y[8]];
    }
    match opts.negative {
        NegativeSide::Parity => {
            for j in 1..=i0 {
                let (mp, np, bp) = (m[i0 + j], nn[i0 + j], b[i0 + j]);
                m[i0 - j] = [mp[0], -mp[1], -mp[2]];
                nn[i0 - j] = [-np[0], np[1], np[2]];
                b[i0 - j] = [-bp[0], bp[1], bp[2]];
            }
        }
        NegativeSide::Direct => {
            let (neg, neg_stats) = integrate_leg(kind, params, true, &pos_xs, h_out, tol)?;
            stats.steps += neg_stats.steps;
            stats.rejected += neg_stats.rejected;
            stats.evals += neg_stats.evals;
            for (j, y) in neg.iter().enumerate() {
                m[i0 - j] = [y[0], y[1], y[2]];
                nn[i0 - j] = [y[3], y[4], y[5]];
                b[i0 - j] = [y[6], y[7], y[8]];
            }
        }
    }

    let mut k = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let (ki, ti) = curvature_torsion(kind, params, grid_full.x(i));
        k.push(ki);
        tau.push(ti);
    }
    Ok(ProfileSolution {
        kind,
        params: *params,
        grid: grid_full,
        m,
        n: nn,
        b,
        k,
        tau,
        tol,
        stats,
    })
}

/// Sup-norm of the profile equation residual
/// `α m″ + α|m′|² m + β (m×m′)′ ± (x/2) m′` over interior nodes, with all
/// derivatives taken by 4th-order finite differences. The sign of the drift
/// term is `+` for expanders and `−` for shrinkers.
pub fn ode_residual(
    kind: ProfileKind,
    params: &ProfileParams,
    profile: &ProfileSolution,
) -> Result<f64> {
    if kind != profile.kind || *params != profile.params {
        return Err(Error::config("residual request does not match the profile"));
    }
    let (alpha, beta) = (params.alpha, params.beta());
    let sign = match kind {
        ProfileKind::Expander => 1.0,
        ProfileKind::Shrinker => -1.0,
    };
    let g = &profile.grid;
    let d1 = grid::d1_fd4(g, &profile.m);
    let d2 = grid::d2_fd4(g, &profile.m);
    let mut sup: f64 = 0.0;
    // Skip the one-sided stencils at each end; they are noisier and carry no
    // extra information on a symmetric grid.
    for i in 3..g.n.saturating_sub(3) {
        let x = g.x(i);
        let speed2 = geometry::dot(d1[i], d1[i]);
        let mut r = geometry::scale(d2[i], alpha);
        r = geometry::add(r, geometry::scale(profile.m[i], alpha * speed2));
        r = geometry::add(r, geometry::scale(geometry::cross(profile.m[i], d2[i]), beta));
        r = geometry::add(r, geometry::scale(d1[i], sign * 0.5 * x));
        sup = sup.max(geometry::norm(r));
    }
    Ok(sup)
}

/// Frame trajectory reconstructed from the complex second-order reduction of
/// the expander system, on `[0, x_max]`.
///
/// Each column j of the frame corresponds to one solution f_j of
/// `f″ + (s/2)(α+iβ) f′ + (k(s)²/4) f = 0` with `f_j(0) = 1` and
/// `f′(0) ∈ {0, c/2, ic/2}`; the observables are recovered through
/// `m_j = (k²|f|² − 4|f′|²)/Q`, `n_j = 4k·Re(f′ f̄)/Q`, `b_j = 4k·Im(f′ f̄)/Q`
/// with `Q = k²|f|² + 4|f′|²`. `Q` is conserved up to the factor
/// `e^{−αs²/2}`, which `q_drift` monitors.
#[derive(Clone, Debug)]
pub struct ComplexReduction {
    pub grid: Grid1D,
    pub m: Vec<Vec3>,
    pub n: Vec<Vec3>,
    pub b: Vec<Vec3>,
    pub q_drift: f64,
    pub stats: OdeStats,
}

/// Integrates the complex reduction as an oracle independent of the
/// Serret–Frenet route. Expanders only.
pub fn complex_reduction_oracle(
    params: &ProfileParams,
    x_max: f64,
    tol: f64,
) -> Result<ComplexReduction> {
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(Error::config(format!("x_max must be positive, got {x_max}")));
    }
    if !(tol > 1e-14 && tol < 1e-4) {
        return Err(Error::config(format!(
            "tolerance must lie in (1e-14, 1e-4), got {tol}"
        )));
    }
    let n_nodes = (x_max / 1e-3).round() as usize + 1;
    let g = Grid1D::pinned(0.0, x_max, n_nodes.max(9))?;
    let c = params.c;
    if c == 0.0 {
        // k ≡ 0: the frame never moves.
        let id = FrenetFrame::canonical();
        return Ok(ComplexReduction {
            m: vec![id.m; g.n],
            n: vec![id.n; g.n],
            b: vec![id.b; g.n],
            grid: g,
            q_drift: 0.0,
            stats: OdeStats::default(),
        });
    }
    let (alpha, beta) = (params.alpha, params.beta());
    // State: [Re f, Im f, Re f′, Im f′] per column, 12 reals total.
    let mut y0 = vec![0.0; 12];
    let fp0 = [
        Complex64::new(0.0, 0.0),
        Complex64::new(0.5 * c, 0.0),
        Complex64::new(0.0, 0.5 * c),
    ];
    for j in 0..3 {
        y0[4 * j] = 1.0;
        y0[4 * j + 2] = fp0[j].re;
        y0[4 * j + 3] = fp0[j].im;
    }
    let solver = Dopri5 {
        rtol: tol,
        // f′ decays like e^{−αs²/4}; an absolute floor would freeze its
        // relative accuracy, so keep the control purely relative.
        atol: 1e-290,
        h_init: None,
        h_max: None,
        max_steps: 40_000_000,
    };
    let out_xs: Vec<f64> = (0..g.n).map(|i| g.x(i)).collect();
    let sol = solver.solve(
        |s, y, dy| {
            let k = c * (-0.25 * alpha * s * s).exp();
            let quarter_k2 = 0.25 * k * k;
            let half_s = 0.5 * s;
            for j in 0..3 {
                let o = 4 * j;
                let (fr, fi, pr, pi) = (y[o], y[o + 1], y[o + 2], y[o + 3]);
                dy[o] = pr;
                dy[o + 1] = pi;
                // f″ = −(s/2)(α+iβ) f′ − (k²/4) f
                dy[o + 2] = -half_s * (alpha * pr - beta * pi) - quarter_k2 * fr;
                dy[o + 3] = -half_s * (alpha * pi + beta * pr) - quarter_k2 * fi;
            }
        },
        0.0,
        x_max,
        &y0,
        &out_xs,
        |_, _| {},
    )?;

    let mut m = vec![[0.0; 3]; g.n];
    let mut nn = vec![[0.0; 3]; g.n];
    let mut b = vec![[0.0; 3]; g.n];
    let mut q_drift: f64 = 0.0;
    let q0 = [c * c, 2.0 * c * c, 2.0 * c * c];
    for (i, y) in sol.samples.iter().enumerate() {
        let s = g.x(i);
        let k = c * (-0.25 * alpha * s * s).exp();
        let decay = (-0.5 * alpha * s * s).exp();
        for j in 0..3 {
            let o = 4 * j;
            let f = Complex64::new(y[o], y[o + 1]);
            let fp = Complex64::new(y[o + 2], y[o + 3]);
            let q = k * k * f.norm_sqr() + 4.0 * fp.norm_sqr();
            if !(q > 0.0) {
                return Err(Error::numerical(format!(
                    "complex reduction lost the conserved normalization at s = {s}"
                )));
            }
            let cross = fp * f.conj();
            m[i][j] = (k * k * f.norm_sqr() - 4.0 * fp.norm_sqr()) / q;
            nn[i][j] = 4.0 * k * cross.re / q;
            b[i][j] = 4.0 * k * cross.im / q;
            q_drift = q_drift.max((q / (q0[j] * decay) - 1.0).abs());
        }
    }
    Ok(ComplexReduction {
        grid: g,
        m,
        n: nn,
        b,
        q_drift,
        stats: sol.stats,
    })
}

// ---------------------------------------------------------------------------
// Limit objects
// ---------------------------------------------------------------------------

/// Identifying data of a limit extraction, embedded in [`LimitData`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LimitParams {
    pub kind: ProfileKind,
    pub c: f64,
    pub alpha: f64,
    pub x_max: f64,
    pub tol: f64,
}

/// Quality diagnostics of a limit extraction.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LimitTolerances {
    pub fit_window: [f64; 2],
    pub fit_rms: f64,
    /// |raw limit vector| − 1 before renormalization.
    pub unit_defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_at_x_max: Option<f64>,
    /// Deviation of the fitted oscillation from a great circle
    /// (max of ||u|−1|, ||v|−1|, |u·v|).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circle_defect: Option<f64>,
    /// |cosine| between the plane normal from the oscillation and the one
    /// from the secular drift term; should be close to 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secular_alignment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planarity_defect: Option<f64>,
}

/// Limit vectors (expanders) or limit-circle normals (shrinkers), with the
/// fitted oscillation phases and amplitudes.
#[derive(Clone, Debug, Serialize)]
pub struct LimitData {
    #[serde(rename = "A_plus", skip_serializing_if = "Option::is_none")]
    pub a_plus: Option<Vec3>,
    #[serde(rename = "A_minus", skip_serializing_if = "Option::is_none")]
    pub a_minus: Option<Vec3>,
    #[serde(rename = "B_plus", skip_serializing_if = "Option::is_none")]
    pub b_plus: Option<Vec3>,
    #[serde(rename = "B_minus", skip_serializing_if = "Option::is_none")]
    pub b_minus: Option<Vec3>,
    /// Angle between the two limit objects, in [0, π].
    pub angle: f64,
    /// Expanders: fitted phase constants a_j ∈ [0, 2π). Shrinkers: circle
    /// phases φ_j ∈ [0, 2π).
    pub phases: [f64; 3],
    /// Expanders: fitted oscillation amplitudes (ideally √(1−A_j²)).
    /// Shrinkers: circle amplitudes ρ_j ∈ [0, 1].
    pub amplitudes: [f64; 3],
    pub params: LimitParams,
    pub tolerances: LimitTolerances,
}

impl LimitData {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::numerical(format!("limit data serialization failed: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))
    }
}

/// Integrand of the tail phase: Θ′(u) = ½√(u² + 4c²e^{−αu²/2}).
fn phase_rate(params: &ProfileParams, u: f64) -> f64 {
    let e = (-0.5 * params.alpha * u * u).exp();
    0.5 * (u * u + 4.0 * params.c * params.c * e).sqrt()
}

/// Tail phase Θ(s) = ∫_{s₀}^s Θ′(u) du on uniformly spaced nodes, where
/// `xs[0] ≥ s₀` need not equal s₀.
fn phase_on_nodes(params: &ProfileParams, s0: f64, xs: &[f64]) -> Result<Vec<f64>> {
    let base = numerics::quad_adaptive(&|u| phase_rate(params, u), s0, xs[0], 1e-13);
    if xs.len() == 1 {
        return Ok(vec![base]);
    }
    let g = Grid1D::pinned(xs[0], xs[xs.len() - 1], xs.len())?;
    let rates: Vec<f64> = xs.iter().map(|&u| phase_rate(params, u)).collect();
    let mut theta = grid::cumtrapz4(&g, &rates);
    for t in &mut theta {
        *t += base;
    }
    Ok(theta)
}

fn wrap_2pi(x: f64) -> f64 {
    x.rem_euclid(2.0 * PI)
}

/// Extracts expander limit vectors `A±` from the integrated profile.
///
/// For α > 0 the oscillation `(2c/s)e^{−αs²/4}` must already be below
/// [`LIMIT_ENVELOPE_MAX`] at the end of the grid; the constant, oscillatory
/// and `e^{−αs²/2}` terms of the tail expansion are then fitted per component
/// by least squares over the final decade. For α = 0 the oscillation never
/// dies, so `A⁺` is taken as a smoothly windowed (Cesàro-type) average of the
/// tail and the oscillation is fitted afterwards only as a diagnostic.
pub fn limit_vectors(profile: &ProfileSolution) -> Result<LimitData> {
    if profile.kind != ProfileKind::Expander {
        return Err(Error::config("limit vectors are an expander notion"));
    }
    let params = profile.params;
    let (c, alpha, beta) = (params.c, params.alpha, params.beta());
    let g = &profile.grid;
    let x_max = g.x(g.n - 1);
    let s0 = asymptotic_onset(c);
    let lp = LimitParams {
        kind: ProfileKind::Expander,
        c,
        alpha,
        x_max,
        tol: profile.tol,
    };

    if c == 0.0 {
        return Ok(LimitData {
            a_plus: Some([1.0, 0.0, 0.0]),
            a_minus: Some([1.0, 0.0, 0.0]),
            b_plus: None,
            b_minus: None,
            angle: 0.0,
            phases: [0.0; 3],
            amplitudes: [0.0; 3],
            params: lp,
            tolerances: LimitTolerances {
                fit_window: [0.0, x_max],
                fit_rms: 0.0,
                unit_defect: 0.0,
                envelope_at_x_max: Some(0.0),
                circle_defect: None,
                secular_alignment: None,
                planarity_defect: None,
            },
        });
    }
    if x_max < s0 {
        return Err(Error::config(format!(
            "grid ends at {x_max:.3} but the tail expansion only starts at {s0:.3}"
        )));
    }
    let envelope_end = 2.0 * c / x_max * (-0.25 * alpha * x_max * x_max).exp();
    if alpha > 0.0 && envelope_end > LIMIT_ENVELOPE_MAX {
        return Err(Error::numerical(format!(
            "oscillation envelope {envelope_end:.3e} at x = {x_max} still exceeds \
             {LIMIT_ENVELOPE_MAX:.0e}; refusing to extrapolate a limit vector"
        )));
    }

    // Fit window: the final decade, but never before the expansion is valid.
    let s_lo_target = if alpha > 0.0 {
        s0.max(0.1 * x_max)
    } else {
        s0.max(0.4 * x_max)
    };
    let i0 = profile.i0();
    let j_lo = ((s_lo_target - g.x(i0)) / g.h).ceil() as usize;
    let idx_lo = i0 + j_lo;
    if idx_lo + 16 >= g.n {
        return Err(Error::config("fit window holds too few nodes"));
    }
    let xs: Vec<f64> = (idx_lo..g.n).map(|i| g.x(i)).collect();
    let theta = phase_on_nodes(&params, s0, &xs)?;

    let mut col_a = Vec::with_capacity(xs.len());
    let mut col_p = Vec::with_capacity(xs.len());
    let mut col_q = Vec::with_capacity(xs.len());
    for (idx, &s) in xs.iter().enumerate() {
        let env = 2.0 * c / s * (-0.25 * alpha * s * s).exp();
        let sq = (-0.5 * alpha * s * s).exp();
        col_a.push(1.0 - 2.0 * c * c / (s * s) * sq);
        col_p.push(-env * theta[idx].sin());
        col_q.push(-env * theta[idx].cos());
    }
    // Oscillation columns are dropped once the envelope itself is buried in
    // integration noise; the constant column alone then determines A.
    let env_peak = 2.0 * c / xs[0] * (-0.25 * alpha * xs[0] * xs[0]).exp();
    let fit_osc = env_peak > 50.0 * PROFILE_NOISE_FLOOR;

    let mut a_raw = [0.0; 3];
    let mut p_fit = [0.0; 3];
    let mut q_fit = [0.0; 3];
    let mut rms: f64 = 0.0;
    for j in 0..3 {
        let y: Vec<f64> = (idx_lo..g.n).map(|i| profile.m[i][j]).collect();
        if alpha == 0.0 {
            // Cesàro-type average with a smooth sin⁴ window, normalized
            // against the averaged constant column.
            let mut wy = 0.0;
            let mut wa = 0.0;
            let span = xs[xs.len() - 1] - xs[0];
            for (i, &s) in xs.iter().enumerate() {
                let w = ((PI * (s - xs[0]) / span).sin()).powi(4);
                wy += w * y[i];
                wa += w * col_a[i];
            }
            a_raw[j] = wy / wa;
            let resid: Vec<f64> = (0..xs.len()).map(|i| y[i] - a_raw[j] * col_a[i]).collect();
            let (coef, r, _) = numerics::lsq(&[col_p.clone(), col_q.clone()], &resid)?;
            p_fit[j] = coef[0];
            q_fit[j] = coef[1];
            rms = rms.max(r);
        } else if fit_osc {
            let (coef, r, _) =
                numerics::lsq(&[col_a.clone(), col_p.clone(), col_q.clone()], &y)?;
            a_raw[j] = coef[0];
            p_fit[j] = coef[1];
            q_fit[j] = coef[2];
            rms = rms.max(r);
        } else {
            let (coef, r, _) = numerics::lsq(&[col_a.clone()], &y)?;
            a_raw[j] = coef[0];
            rms = rms.max(r);
        }
    }

    let unit_defect = (geometry::norm(a_raw) - 1.0).abs();
    let a_plus = geometry::normalize(a_raw)?;
    let a_minus = [a_plus[0], -a_plus[1], -a_plus[2]];
    let angle = geometry::dot(a_plus, a_minus).clamp(-1.0, 1.0).acos();
    // P = B sin(a+δ), Q = B cos(a+δ) with δ = atan2(β, α).
    let delta = beta.atan2(alpha);
    let mut phases = [0.0; 3];
    let mut amplitudes = [0.0; 3];
    for j in 0..3 {
        amplitudes[j] = p_fit[j].hypot(q_fit[j]);
        if amplitudes[j] > 0.0 {
            phases[j] = wrap_2pi(p_fit[j].atan2(q_fit[j]) - delta);
        }
    }

    Ok(LimitData {
        a_plus: Some(a_plus),
        a_minus: Some(a_minus),
        b_plus: None,
        b_minus: None,
        angle,
        phases,
        amplitudes,
        params: lp,
        tolerances: LimitTolerances {
            fit_window: [xs[0], x_max],
            fit_rms: rms,
            unit_defect,
            envelope_at_x_max: Some(envelope_end),
            circle_defect: None,
            secular_alignment: None,
            planarity_defect: None,
        },
    })
}

/// Grid half-width needed before the oscillation envelope allows a limit
/// vector to be extracted at the given curvature amplitude.
pub fn limit_grid_extent(params: &ProfileParams) -> f64 {
    let (c, alpha) = (params.c, params.alpha);
    let s0 = asymptotic_onset(c);
    if c == 0.0 {
        return s0 + 2.0;
    }
    if alpha == 0.0 {
        return (s0 + 20.0).max(40.0);
    }
    // Solve (2c/x) e^{−αx²/4} = envelope cap by fixed point.
    let mut x: f64 = (4.0 / alpha * (2.0 * c / LIMIT_ENVELOPE_MAX).ln()).max(1.0).sqrt();
    for _ in 0..40 {
        let t = 2.0 * c / (LIMIT_ENVELOPE_MAX * x);
        x = (4.0 / alpha * t.ln()).max(1.0).sqrt();
    }
    (x + 0.5).max(s0 + 2.0)
}

/// Corner angle ϑ = arccos(A⁺·A⁻) measured from a fresh integration.
pub fn limit_angle(params: &ProfileParams) -> Result<f64> {
    if params.c == 0.0 {
        return Ok(0.0);
    }
    let x_max = limit_grid_extent(params);
    let profile = integrate_profile(ProfileKind::Expander, params, x_max, 1e-12)?;
    Ok(limit_vectors(&profile)?.angle)
}

/// Corner angle in the undamped-precession-free case α = 1, where the
/// profile is planar and the angle reduces to arccos(cos(2c√π)).
pub fn limit_angle_alpha1(c: f64) -> f64 {
    (2.0 * c * PI.sqrt()).cos().acos()
}

/// All curvature amplitudes c ∈ (0, c_max] whose α = 1 corner angle equals
/// `theta`, via the closed form: 2c√π = 2πj ± theta.
pub fn multiplicity_roots(theta: f64, c_max: f64) -> Result<Vec<f64>> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::config(format!(
            "angle must lie in [0, π], got {theta}"
        )));
    }
    if !(c_max > 0.0) {
        return Err(Error::config(format!("c_max must be positive, got {c_max}")));
    }
    let half_inv = 0.5 / PI.sqrt();
    let mut roots = Vec::new();
    let mut j = 0u32;
    loop {
        let base = 2.0 * PI * f64::from(j);
        let lo = (base - theta) * half_inv;
        let hi = (base + theta) * half_inv;
        if lo > c_max && hi > c_max {
            break;
        }
        for cand in [lo, hi] {
            if cand > 0.0 && cand <= c_max {
                roots.push(cand);
            }
        }
        j += 1;
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(roots)
}

/// Corner angles for a batch of curvature amplitudes at fixed damping.
/// Profiles are independent, so the sweep runs in parallel.
pub fn angle_map(alpha: f64, cs: &[f64]) -> Result<Vec<f64>> {
    cs.par_iter()
        .map(|&c| limit_angle(&ProfileParams::new(c, alpha)?))
        .collect()
}

/// Calibrated cap on the weighted tail residual |resid|·s³·e^{αs²/4} of the
/// expander expansion; depends on the curvature amplitude only. The measured
/// sup over [s₀, s₀+5] is very nearly linear in c (≈ 1070·c at c ∈
/// [0.2, 0.8]); the cap adds a comfortable margin plus an additive floor that
/// absorbs the noise-induced weighted values near the measurability edge.
pub fn weighted_residual_cap(c: f64) -> f64 {
    120.0 + 1800.0 * c
}

/// Evaluates the three-term tail expansion at `s` using fitted constants.
/// Returns the predicted tangent and the residual envelope
/// `cap(c)·e^{−αs²/4}/s³`.
pub fn expander_asymptotics(limits: &LimitData, s: f64) -> Result<(Vec3, f64)> {
    let lp = &limits.params;
    if lp.kind != ProfileKind::Expander {
        return Err(Error::config("tail expansion applies to expanders"));
    }
    let a_plus = limits
        .a_plus
        .ok_or_else(|| Error::config("limit data carries no A⁺"))?;
    let params = ProfileParams::new(lp.c, lp.alpha)?;
    let s0 = asymptotic_onset(lp.c);
    if s < s0 {
        return Err(Error::config(format!(
            "tail expansion is valid only for s ≥ {s0:.3}, got {s}"
        )));
    }
    let (c, alpha, beta) = (lp.c, lp.alpha, params.beta());
    let theta = numerics::quad_adaptive(&|u| phase_rate(&params, u), s0, s, 1e-12);
    let env = 2.0 * c / s * (-0.25 * alpha * s * s).exp();
    let sq = (-0.5 * alpha * s * s).exp();
    let mut pred = [0.0; 3];
    for j in 0..3 {
        let bj = (1.0 - a_plus[j] * a_plus[j]).max(0.0).sqrt();
        let phi = theta + limits.phases[j];
        pred[j] = a_plus[j] * (1.0 - 2.0 * c * c / (s * s) * sq)
            - env * bj * (alpha * phi.sin() + beta * phi.cos());
    }
    let envelope = weighted_residual_cap(c) * (-0.25 * alpha * s * s).exp() / (s * s * s);
    Ok((pred, envelope))
}

/// Outcome of checking the integrated profile against the tail expansion.
#[derive(Clone, Copy, Debug)]
pub struct AsymptoticsCheck {
    /// Sup of |m − prediction|·s³·e^{αs²/4} over nodes where the residual
    /// envelope is measurable above the noise floor.
    pub weighted_sup: f64,
    pub weighted_nodes: usize,
    /// Sup of the raw deviation over the whole window.
    pub raw_sup: f64,
    pub cap: f64,
    pub noise_floor: f64,
}

/// Compares an expander profile against its fitted tail expansion over
/// `[s_lo, s_hi]`. Where the predicted residual envelope
/// `cap(c)·e^{−αs²/4}/s³` has decayed below measurement noise, the weighted
/// residual is meaningless and those nodes only contribute to `raw_sup`.
pub fn asymptotics_check(
    profile: &ProfileSolution,
    limits: &LimitData,
    s_lo: f64,
    s_hi: f64,
) -> Result<AsymptoticsCheck> {
    if profile.kind != ProfileKind::Expander {
        return Err(Error::config("tail expansion applies to expanders"));
    }
    let params = profile.params;
    let (c, alpha, beta) = (params.c, params.alpha, params.beta());
    let s0 = asymptotic_onset(c);
    if s_lo < s0 {
        return Err(Error::config(format!(
            "window must start at or after the onset {s0:.3}, got {s_lo}"
        )));
    }
    let a_plus = limits
        .a_plus
        .ok_or_else(|| Error::config("limit data carries no A⁺"))?;
    let g = &profile.grid;
    let i0 = profile.i0();
    let idx_lo = i0 + ((s_lo - g.x(i0)) / g.h).ceil() as usize;
    let idx_hi = (i0 + ((s_hi - g.x(i0)) / g.h).floor() as usize).min(g.n - 1);
    if idx_lo >= idx_hi {
        return Err(Error::config("empty comparison window"));
    }
    let xs: Vec<f64> = (idx_lo..=idx_hi).map(|i| g.x(i)).collect();
    let theta = phase_on_nodes(&params, s0, &xs)?;
    let cap = weighted_residual_cap(c);
    let mut weighted_sup: f64 = 0.0;
    let mut weighted_nodes = 0usize;
    let mut raw_sup: f64 = 0.0;
    for (o, &s) in xs.iter().enumerate() {
        let env = 2.0 * c / s * (-0.25 * alpha * s * s).exp();
        let sq = (-0.5 * alpha * s * s).exp();
        let mut pred = [0.0; 3];
        for j in 0..3 {
            let bj = (1.0 - a_plus[j] * a_plus[j]).max(0.0).sqrt();
            let phi = theta[o] + limits.phases[j];
            pred[j] = a_plus[j] * (1.0 - 2.0 * c * c / (s * s) * sq)
                - env * bj * (alpha * phi.sin() + beta * phi.cos());
        }
        let resid = geometry::distance(profile.m[idx_lo + o], pred);
        raw_sup = raw_sup.max(resid);
        let weight_env = (-0.25 * alpha * s * s).exp() / (s * s * s);
        if cap * weight_env >= MEASURABLE_FACTOR * PROFILE_NOISE_FLOOR {
            weighted_sup = weighted_sup.max(resid / weight_env);
            weighted_nodes += 1;
        }
    }
    Ok(AsymptoticsCheck {
        weighted_sup,
        weighted_nodes,
        raw_sup,
        cap,
        noise_floor: PROFILE_NOISE_FLOOR,
    })
}

/// Closed form of the tail integral ∫_x^∞ s²e^{−αs²/4} ds appearing in the
/// shrinker oscillation correction.
fn secular_tail_integral(alpha: f64, x: f64) -> f64 {
    2.0 * x / alpha * (-0.25 * alpha * x * x).exp()
        + 2.0 * PI.sqrt() / alpha.powf(1.5) * libm::erfc(0.5 * alpha.sqrt() * x)
}

/// Extracts the shrinker limit circles.
///
/// The positive tail is modelled per component as
/// `ρ_j cos(cΦ_α − φ_j) − (βB_j/2c)·x·e^{−αx²/4} +
///  (β²ρ_j/8c)·sin(cΦ_α − φ_j)·∫_x^∞ s²e^{−αs²/4}ds`,
/// which is linear in (ρcosφ, ρsinφ, B) and fitted by least squares on the
/// outer half of the grid. The plane normal is taken from the cross product
/// of the two oscillation vectors (the most accurate source) with its sign
/// pinned by the secular drift coefficient; `B⁻ = (−B₁, B₂, B₃)` by parity.
pub fn shrinker_limit_circles(profile: &ProfileSolution) -> Result<LimitData> {
    if profile.kind != ProfileKind::Shrinker {
        return Err(Error::config("limit circles are a shrinker notion"));
    }
    let params = profile.params;
    let (c, alpha, beta) = (params.c, params.alpha, params.beta());
    if c <= 0.0 {
        return Err(Error::config("limit circles need a nonconstant profile (c > 0)"));
    }
    if alpha <= 0.0 {
        return Err(Error::config("shrinkers require damping α ∈ (0, 1]"));
    }
    let g = &profile.grid;
    let i0 = profile.i0();
    let x_max = g.x(g.n - 1);
    let lp = LimitParams {
        kind: ProfileKind::Shrinker,
        c,
        alpha,
        x_max,
        tol: profile.tol,
    };

    if alpha == 1.0 {
        // β = 0: the profile is planar and both circles are the equator.
        let planarity = profile.m[i0..].iter().map(|v| v[2].abs()).fold(0.0, f64::max);
        if planarity > 1e-6 {
            return Err(Error::numerical(format!(
                "profile is not planar at α = 1 (|m₃| up to {planarity:.3e})"
            )));
        }
        return Ok(LimitData {
            a_plus: None,
            a_minus: None,
            b_plus: Some([0.0, 0.0, 1.0]),
            b_minus: Some([0.0, 0.0, 1.0]),
            angle: 0.0,
            phases: [0.0, 0.5 * PI, 0.0],
            amplitudes: [1.0, 1.0, 0.0],
            params: lp,
            tolerances: LimitTolerances {
                fit_window: [0.0, x_max],
                fit_rms: 0.0,
                unit_defect: 0.0,
                envelope_at_x_max: None,
                circle_defect: None,
                secular_alignment: None,
                planarity_defect: Some(planarity),
            },
        });
    }

    // Oscillation phase θ = c·Φ_α with Φ_α(x) = ∫_0^x e^{αs²/4} ds.
    let pos_xs: Vec<f64> = (i0..g.n).map(|i| g.x(i)).collect();
    let gpos = Grid1D::pinned(0.0, x_max, pos_xs.len())?;
    let growth: Vec<f64> = pos_xs.iter().map(|&x| (0.25 * alpha * x * x).exp()).collect();
    let phi = grid::cumtrapz4(&gpos, &growth);

    let fit = |x_lo: f64| -> Result<([f64; 3], [f64; 3], [f64; 3], f64)> {
        let j_lo = ((x_lo - pos_xs[0]) / g.h).ceil() as usize;
        if j_lo + 32 >= pos_xs.len() {
            return Err(Error::config("shrinker fit window holds too few nodes"));
        }
        let kappa = beta * beta / (8.0 * c);
        let mut c1 = Vec::with_capacity(pos_xs.len() - j_lo);
        let mut c2 = Vec::with_capacity(pos_xs.len() - j_lo);
        let mut c3 = Vec::with_capacity(pos_xs.len() - j_lo);
        for j in j_lo..pos_xs.len() {
            let x = pos_xs[j];
            let th = c * phi[j];
            let tail = kappa * secular_tail_integral(alpha, x);
            c1.push(th.cos() + tail * th.sin());
            c2.push(th.sin() - tail * th.cos());
            c3.push(x * (-0.25 * alpha * x * x).exp());
        }
        let mut p = [0.0; 3];
        let mut q = [0.0; 3];
        let mut sec = [0.0; 3];
        let mut rms: f64 = 0.0;
        for comp in 0..3 {
            let y: Vec<f64> = (j_lo..pos_xs.len())
                .map(|j| profile.m[i0 + j][comp])
                .collect();
            let (coef, r, _) = numerics::lsq(&[c1.clone(), c2.clone(), c3.clone()], &y)?;
            p[comp] = coef[0];
            q[comp] = coef[1];
            // Column 3 carries −βB_j/(2c).
            sec[comp] = -2.0 * c / beta * coef[2];
            rms = rms.max(r);
        }
        Ok((p, q, sec, rms))
    };

    // The model omits a remainder with envelope x²e^{−αx²/2}; start the
    // window where that envelope has dropped to a few permille so it cannot
    // bias the fitted plane, but keep at least the final fifth of the grid.
    let x_lo = {
        let eta = 5e-3f64;
        let mut x = (2.0 / alpha * (1.0 / eta).ln()).sqrt();
        for _ in 0..20 {
            x = (2.0 / alpha * (x * x / eta).max(1.0).ln()).sqrt();
        }
        x.clamp(0.5 * x_max, 0.8 * x_max)
    };
    let (p, q, sec, rms) = fit(x_lo)?;
    let circle_defect = {
        let du = (geometry::norm(p) - 1.0).abs();
        let dv = (geometry::norm(q) - 1.0).abs();
        du.max(dv).max(geometry::dot(p, q).abs())
    };
    let normal_raw = geometry::cross(p, q);
    let unit_defect = (geometry::norm(normal_raw) - 1.0).abs();
    let mut b_plus = geometry::normalize(normal_raw)?;
    let sec_unit = geometry::normalize(sec)?;
    let alignment = geometry::dot(b_plus, sec_unit);
    if alignment < 0.0 {
        b_plus = geometry::scale(b_plus, -1.0);
    }
    let b_minus = [-b_plus[0], b_plus[1], b_plus[2]];
    let angle = geometry::dot(b_plus, b_minus).clamp(-1.0, 1.0).acos();
    let mut phases = [0.0; 3];
    let mut amplitudes = [0.0; 3];
    for j in 0..3 {
        amplitudes[j] = p[j].hypot(q[j]).min(1.0);
        if amplitudes[j] > 1e-12 {
            phases[j] = wrap_2pi(q[j].atan2(p[j]));
        }
    }

    Ok(LimitData {
        a_plus: None,
        a_minus: None,
        b_plus: Some(b_plus),
        b_minus: Some(b_minus),
        angle,
        phases,
        amplitudes,
        params: lp,
        tolerances: LimitTolerances {
            fit_window: [x_lo, x_max],
            fit_rms: rms,
            unit_defect,
            envelope_at_x_max: None,
            circle_defect: Some(circle_defect),
            secular_alignment: Some(alignment.abs()),
            planarity_defect: None,
        },
    })
}

/// Distance from a point of S² to the great circle with the given unit
/// normal.
pub fn circle_distance(p: Vec3, normal: Vec3) -> f64 {
    let h = geometry::dot(p, normal);
    let r = (1.0 - h * h).max(0.0).sqrt();
    (h * h + (r - 1.0) * (r - 1.0)).sqrt()
}

/// Result of the pointwise circle-distance bound check.
#[derive(Clone, Copy, Debug)]
pub struct CircleCheck {
    /// Sup over |x| ≥ 1 of distance / bound.
    pub max_ratio: f64,
    /// Same sup over the outer quarter of the grid.
    pub tail_ratio: f64,
    pub max_distance: f64,
    /// Prefactor 15√2·β/(cα²) of the bound.
    pub bound_coeff: f64,
}

/// Verifies dist(m(x), C±) ≤ (15√2β/(cα²))·|x|·e^{−αx²/4} for |x| ≥ 1.
pub fn circle_distance_check(profile: &ProfileSolution, limits: &LimitData) -> Result<CircleCheck> {
    if profile.kind != ProfileKind::Shrinker {
        return Err(Error::config("the circle bound applies to shrinkers"));
    }
    let b_plus = limits
        .b_plus
        .ok_or_else(|| Error::config("limit data carries no circle normals"))?;
    let b_minus = limits
        .b_minus
        .ok_or_else(|| Error::config("limit data carries no circle normals"))?;
    let params = profile.params;
    let (c, alpha, beta) = (params.c, params.alpha, params.beta());
    let g = &profile.grid;
    let x_max = g.x(g.n - 1);
    let coeff = 15.0 * 2.0f64.sqrt() * beta / (c * alpha * alpha);
    let tail_from = (0.75 * x_max).max(1.0);
    let mut max_ratio: f64 = 0.0;
    let mut tail_ratio: f64 = 0.0;
    let mut max_distance: f64 = 0.0;
    for i in 0..g.n {
        let x = g.x(i);
        if x.abs() < 1.0 {
            continue;
        }
        let normal = if x > 0.0 { b_plus } else { b_minus };
        let d = circle_distance(profile.m[i], normal);
        max_distance = max_distance.max(d);
        if beta == 0.0 {
            continue;
        }
        let bound = coeff * x.abs() * (-0.25 * alpha * x * x).exp();
        let ratio = d / bound;
        max_ratio = max_ratio.max(ratio);
        if x.abs() >= tail_from {
            tail_ratio = tail_ratio.max(ratio);
        }
    }
    Ok(CircleCheck {
        max_ratio,
        tail_ratio,
        max_distance,
        bound_coeff: coeff,
    })
}

/// Scaled error function Erf(s) = ∫₀ˢ e^{−σ²/4} dσ = √π·erf(s/2), the phase
/// of the planar α = 1 expander.
pub fn erf_scaled(s: f64) -> f64 {
    PI.sqrt() * libm::erf(0.5 * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(c: f64, alpha: f64) -> ProfileParams {
        ProfileParams::new(c, alpha).unwrap()
    }

    #[test]
    fn curvature_torsion_laws() {
        let (k, tau) = curvature_torsion(ProfileKind::Expander, &params(0.7, 0.3), 0.0);
        assert_eq!((k, tau), (0.7, 0.0));

        let (k, _) = curvature_torsion(ProfileKind::Expander, &params(0.8, 0.4), 2.0);
        assert_relative_eq!(k, 0.8 * (-0.4f64).exp(), epsilon = 1e-15);

        let (k, tau) = curvature_torsion(ProfileKind::Shrinker, &params(0.5, 0.5), 2.0);
        assert_relative_eq!(k, 0.5 * 0.5f64.exp(), epsilon = 1e-15);
        assert_relative_eq!(tau, -(0.75f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn zero_curvature_profile_is_constant() {
        let prof =
            integrate_profile(ProfileKind::Expander, &params(0.0, 0.5), 5.0, 1e-10).unwrap();
        for i in 0..prof.grid.n {
            assert_abs_diff_eq!(
                geometry::distance(prof.m[i], [1.0, 0.0, 0.0]),
                0.0,
                epsilon = 1e-12
            );
        }
        // The residual of an exactly constant field is pure finite-difference
        // rounding (ε/h² cancellation noise), not integration error.
        let resid = ode_residual(ProfileKind::Expander, &params(0.0, 0.5), &prof).unwrap();
        assert!(resid < 1e-10, "constant profile residual {resid:.3e}");
    }

    #[test]
    fn alpha1_expander_matches_planar_closed_form() {
        let p = params(0.8, 1.0);
        let tol = 1e-11;
        let prof = integrate_profile(ProfileKind::Expander, &p, 10.0, tol).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..prof.grid.n {
            let ph = 0.8 * erf_scaled(prof.grid.x(i));
            let exact = [ph.cos(), ph.sin(), 0.0];
            sup = sup.max(geometry::distance(prof.m[i], exact));
        }
        assert!(sup <= 10.0 * tol, "closed-form gap {sup:.3e}");
        assert!(prof.orthonormality_defect() <= 1e-10);
    }

    #[test]
    fn alpha1_shrinker_matches_planar_closed_form() {
        let p = params(0.5, 1.0);
        let tol = 1e-11;
        let prof = integrate_profile(ProfileKind::Shrinker, &p, 3.6, tol).unwrap();
        // Phase Φ₁(x) = ∫₀ˣ e^{s²/4} ds on the positive nodes.
        let i0 = prof.i0();
        let xs: Vec<f64> = (i0..prof.grid.n).map(|i| prof.grid.x(i)).collect();
        let gpos = Grid1D::pinned(0.0, *xs.last().unwrap(), xs.len()).unwrap();
        let growth: Vec<f64> = xs.iter().map(|&x| (0.25 * x * x).exp()).collect();
        let phi = grid::cumtrapz4(&gpos, &growth);
        let mut sup: f64 = 0.0;
        for j in 0..xs.len() {
            let ph = 0.5 * phi[j];
            let exact = [ph.cos(), ph.sin(), 0.0];
            sup = sup.max(geometry::distance(prof.m[i0 + j], exact));
        }
        assert!(sup <= 1e-9, "closed-form gap {sup:.3e}");
    }

    #[test]
    fn parity_and_direct_negative_legs_agree() {
        let p = params(0.8, 0.5);
        let tol = 1e-12;
        let a = integrate_profile_with(
            ProfileKind::Expander,
            &p,
            6.0,
            tol,
            &IntegrateOptions {
                h_out: Some(2e-3),
                negative: NegativeSide::Parity,
            },
        )
        .unwrap();
        let b = integrate_profile_with(
            ProfileKind::Expander,
            &p,
            6.0,
            tol,
            &IntegrateOptions {
                h_out: Some(2e-3),
                negative: NegativeSide::Direct,
            },
        )
        .unwrap();
        let gap = frame_distance(&a, &b).unwrap();
        assert!(gap <= 1e-10, "parity vs direct gap {gap:.3e}");
    }

    #[test]
    fn tangent_speed_matches_curvature_law() {
        let p = params(0.8, 0.5);
        let prof = integrate_profile(ProfileKind::Expander, &p, 10.0, 1e-11).unwrap();
        let defect = prof.tangent_speed_defect();
        assert!(defect <= 1e-8, "tangent speed defect {defect:.3e}");

        // Shrinker curvature grows like e^{αx²/4}; keep the leg short enough
        // that the h⁴ k⁽⁵⁾ truncation of the stencil stays below the bound.
        let sh = integrate_profile(ProfileKind::Shrinker, &params(0.5, 0.5), 4.2, 1e-11).unwrap();
        let defect = sh.tangent_speed_defect();
        assert!(defect <= 1e-8, "shrinker tangent speed defect {defect:.3e}");
    }

    #[test]
    fn residual_of_integrated_profile_is_small() {
        // The finite-difference probe has a rounding floor of ~ε/h² and a
        // truncation tail of ~h⁴, so the residual grid is chosen where both
        // sit far below the bound; the bound itself then tracks the requested
        // tolerance as it is refined.
        let p = params(0.5, 0.5);
        let opts = IntegrateOptions {
            h_out: Some(5e-3),
            negative: NegativeSide::Parity,
        };
        for tol in [1e-9, 1e-10] {
            let prof =
                integrate_profile_with(ProfileKind::Expander, &p, 5.0, tol, &opts).unwrap();
            let resid = ode_residual(ProfileKind::Expander, &p, &prof).unwrap();
            assert!(
                resid <= 10.0 * tol * (1.0 + p.c * p.c),
                "residual {resid:.3e} at tol {tol:.1e}"
            );
        }
    }

    #[test]
    fn residual_on_sampled_closed_form_refines_at_fourth_order() {
        // Sample the planar α = 1 profile on two grids; the finite-difference
        // residual should drop by ~2⁴ when h halves.
        let p = params(0.8, 1.0);
        let resid_at = |h: f64| {
            let g = Grid1D::symmetric(5.0, h).unwrap();
            let mut m = Vec::with_capacity(g.n);
            let mut nn = Vec::with_capacity(g.n);
            let mut b = Vec::with_capacity(g.n);
            let mut k = Vec::with_capacity(g.n);
            let mut tau = Vec::with_capacity(g.n);
            for x in g.xs() {
                let ph = 0.8 * erf_scaled(x);
                m.push([ph.cos(), ph.sin(), 0.0]);
                nn.push([-ph.sin(), ph.cos(), 0.0]);
                b.push([0.0, 0.0, 1.0]);
                let (kk, tt) = curvature_torsion(ProfileKind::Expander, &p, x);
                k.push(kk);
                tau.push(tt);
            }
            let prof = ProfileSolution {
                kind: ProfileKind::Expander,
                params: p,
                grid: g,
                m,
                n: nn,
                b,
                k,
                tau,
                tol: 1e-12,
                stats: OdeStats::default(),
            };
            ode_residual(ProfileKind::Expander, &p, &prof).unwrap()
        };
        // Keep h coarse enough that truncation (h⁴) dominates the ε/h²
        // rounding floor of the centered stencils.
        let (r1, r2) = (resid_at(0.04), resid_at(0.02));
        let order = (r1 / r2).log2();
        assert!(
            (order - 4.0).abs() < 0.4,
            "measured order {order:.2} (residuals {r1:.3e}, {r2:.3e})"
        );
    }

    #[test]
    fn complex_reduction_agrees_with_frenet_integration() {
        let p = params(0.8, 0.5);
        let tol = 1e-11;
        let prof = integrate_profile(ProfileKind::Expander, &p, 10.0, tol).unwrap();
        let orc = complex_reduction_oracle(&p, 10.0, tol).unwrap();
        assert!(orc.q_drift <= 10.0 * tol, "Q drift {:.3e}", orc.q_drift);
        let i0 = prof.i0();
        let mut sup: f64 = 0.0;
        for j in 0..orc.grid.n {
            sup = sup.max(geometry::distance(prof.m[i0 + j], orc.m[j]));
            sup = sup.max(geometry::distance(prof.n[i0 + j], orc.n[j]));
            sup = sup.max(geometry::distance(prof.b[i0 + j], orc.b[j]));
        }
        assert!(sup <= 10.0 * tol, "dual-route gap {sup:.3e}");
    }

    #[test]
    fn complex_reduction_alpha1_matches_closed_form() {
        let tol = 1e-11;
        let orc = complex_reduction_oracle(&params(0.8, 1.0), 8.0, tol).unwrap();
        let mut sup: f64 = 0.0;
        for j in 0..orc.grid.n {
            let ph = 0.8 * erf_scaled(orc.grid.x(j));
            sup = sup.max(geometry::distance(orc.m[j], [ph.cos(), ph.sin(), 0.0]));
        }
        assert!(sup <= 10.0 * tol, "oracle closed-form gap {sup:.3e}");
    }

    #[test]
    fn complex_reduction_zero_curvature_is_identity() {
        let orc = complex_reduction_oracle(&params(0.0, 0.3), 5.0, 1e-10).unwrap();
        for j in 0..orc.grid.n {
            assert_abs_diff_eq!(
                geometry::distance(orc.m[j], [1.0, 0.0, 0.0]),
                0.0,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn limit_vectors_alpha1_match_closed_form() {
        let p = params(0.8, 1.0);
        let prof = integrate_profile(ProfileKind::Expander, &p, 12.5, 1e-12).unwrap();
        let lim = limit_vectors(&prof).unwrap();
        let a = lim.a_plus.unwrap();
        let ph = 0.8 * PI.sqrt();
        assert!(
            geometry::distance(a, [ph.cos(), ph.sin(), 0.0]) <= 1e-6,
            "A⁺ = {a:?}"
        );
        let am = lim.a_minus.unwrap();
        assert!(geometry::distance(am, [ph.cos(), -ph.sin(), 0.0]) <= 1e-6);
        assert_abs_diff_eq!(lim.angle, limit_angle_alpha1(0.8), epsilon = 1e-6);
    }

    #[test]
    fn limit_vectors_refuse_live_oscillation() {
        let p = params(0.8, 0.1);
        let prof = integrate_profile(ProfileKind::Expander, &p, 14.0, 1e-10).unwrap();
        assert!(limit_vectors(&prof).is_err());
    }

    #[test]
    fn limit_vector_of_zero_curvature_is_e1() {
        let prof =
            integrate_profile(ProfileKind::Expander, &params(0.0, 0.5), 12.0, 1e-10).unwrap();
        let lim = limit_vectors(&prof).unwrap();
        assert_eq!(lim.a_plus.unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(lim.angle, 0.0);
    }

    #[test]
    fn limit_angle_at_quarter_sqrt_pi_is_right_angle() {
        let c = 0.25 * PI.sqrt();
        let theta = limit_angle(&params(c, 1.0)).unwrap();
        assert_abs_diff_eq!(theta, 0.5 * PI, epsilon = 1e-6);
        assert_abs_diff_eq!(limit_angle_alpha1(c), 0.5 * PI, epsilon = 1e-14);
    }

    #[test]
    fn multiplicity_roots_at_angle_pi() {
        let roots = multiplicity_roots(PI, 6.0).unwrap();
        // 2c√π ≡ π (mod 2π) ⇒ c = (2j+1)√π/2.
        for (j, c) in roots.iter().enumerate() {
            let expected = (2.0 * j as f64 + 1.0) * PI.sqrt() / 2.0;
            assert_abs_diff_eq!(*c, expected, epsilon = 1e-12);
        }
        assert!(!roots.is_empty());
        // Every root indeed maps back to the requested angle.
        for c in &roots {
            assert!((limit_angle_alpha1(*c) - PI).abs() < 1e-6);
        }
    }

    #[test]
    fn multiplicity_roots_hit_requested_angle() {
        let theta = 1.2345;
        for c in multiplicity_roots(theta, 8.0).unwrap() {
            assert_abs_diff_eq!(limit_angle_alpha1(c), theta, epsilon = 1e-10);
        }
    }

    #[test]
    fn expander_asymptotics_refuses_early_abscissa() {
        let p = params(0.5, 1.0);
        let prof = integrate_profile(ProfileKind::Expander, &p, 12.0, 1e-11).unwrap();
        let lim = limit_vectors(&prof).unwrap();
        assert!(expander_asymptotics(&lim, 0.5 * asymptotic_onset(0.5)).is_err());
        let (pred, env) = expander_asymptotics(&lim, asymptotic_onset(0.5) + 0.5).unwrap();
        assert!(env > 0.0);
        assert!((geometry::norm(pred) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn alpha0_phase_grows_like_quarter_square_plus_log() {
        // Θ(s) − s²/4 − c²·ln s settles to a constant as s grows.
        let p = params(0.5, 0.0);
        let s0 = asymptotic_onset(0.5);
        let v = |s: f64| {
            numerics::quad_adaptive(&|u| phase_rate(&p, u), s0, s, 1e-12)
                - 0.25 * s * s
                - p.c * p.c * s.ln()
        };
        let (d1, d2) = ((v(25.0) - v(20.0)).abs(), (v(30.0) - v(25.0)).abs());
        assert!(d2 < d1, "phase correction is not settling: {d1:.3e} vs {d2:.3e}");
        assert!(d2 < 1e-3, "phase correction still moving by {d2:.3e}");
    }

    #[test]
    fn alpha0_limit_vector_is_stable_under_window_growth() {
        let p = params(0.5, 0.0);
        let prof_long =
            integrate_profile(ProfileKind::Expander, &p, 48.0, 1e-11).unwrap();
        let prof_short =
            integrate_profile(ProfileKind::Expander, &p, 40.0, 1e-11).unwrap();
        let (long, short) = (
            limit_vectors(&prof_long).unwrap(),
            limit_vectors(&prof_short).unwrap(),
        );
        let gap = geometry::distance(long.a_plus.unwrap(), short.a_plus.unwrap());
        assert!(gap <= 2e-3, "α=0 Cesàro average drifted by {gap:.3e}");
        assert!(long.tolerances.unit_defect <= 1e-3);
    }

    #[test]
    fn shrinker_alpha1_circles_are_the_equator() {
        let prof =
            integrate_profile(ProfileKind::Shrinker, &params(0.5, 1.0), 3.6, 1e-11).unwrap();
        let lim = shrinker_limit_circles(&prof).unwrap();
        assert_eq!(lim.b_plus.unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(lim.angle, 0.0);
        assert!(lim.tolerances.planarity_defect.unwrap() <= 1e-8);
        let check = circle_distance_check(&prof, &lim).unwrap();
        assert_eq!(check.max_ratio, 0.0);
        assert!(check.max_distance <= 1e-8);
    }

    #[test]
    fn shrinker_circle_fit_is_consistent() {
        // Moderate window keeps this test fast; the production-size run with
        // published reference values lives in the acceptance suite.
        let prof =
            integrate_profile(ProfileKind::Shrinker, &params(0.5, 0.9), 5.2, 1e-11).unwrap();
        let lim = shrinker_limit_circles(&prof).unwrap();
        let b = lim.b_plus.unwrap();
        assert_relative_eq!(geometry::norm(b), 1.0, epsilon = 1e-12);
        assert!(lim.tolerances.circle_defect.unwrap() < 1e-2);
        assert!(lim.tolerances.secular_alignment.unwrap() > 0.9);
        let check = circle_distance_check(&prof, &lim).unwrap();
        assert!(check.max_ratio <= 1.0, "ratio {:.3}", check.max_ratio);
    }

    #[test]
    fn limit_vector_matches_frozen_reference() {
        // Reference frozen from two independent long runs (extent and
        // extent + 2, tol 1e-13) that agreed to 1.8e-10.
        let p = params(0.8, 0.5);
        let frozen = [
            0.22989076066804365,
            0.73800146935711375,
            0.63443208413998853,
        ];
        let x_max = limit_grid_extent(&p);
        let prof = integrate_profile(ProfileKind::Expander, &p, x_max, 1e-12).unwrap();
        let lim = limit_vectors(&prof).unwrap();
        let gap = geometry::distance(lim.a_plus.unwrap(), frozen);
        assert!(gap <= 1e-8, "A⁺ drifted from frozen reference by {gap:.3e}");
    }

    #[test]
    fn shrinker_circles_match_published_values() {
        let prof =
            integrate_profile(ProfileKind::Shrinker, &params(0.5, 0.5), 7.5, 1e-11).unwrap();
        let lim = shrinker_limit_circles(&prof).unwrap();
        let b = lim.b_plus.unwrap();
        for (got, want) in b.iter().zip([-0.72, -0.30, 0.63]) {
            assert!(
                (got - want).abs() <= 0.01,
                "B⁺ component {got:.5} vs {want}"
            );
        }
        assert!(
            (lim.angle - 1.5951).abs() <= 1e-3,
            "circle angle {:.6}",
            lim.angle
        );
    }

    #[test]
    fn circle_distance_ratio_plateaus_at_secular_scale() {
        // The leading deviation from the limit circle is the secular term,
        // directed along the plane normal; dividing by the bound leaves the
        // constant α²/(30√2) in the tail rather than decay to zero.
        let p = params(0.5, 0.5);
        let prof = integrate_profile(ProfileKind::Shrinker, &p, 7.5, 1e-11).unwrap();
        let lim = shrinker_limit_circles(&prof).unwrap();
        let check = circle_distance_check(&prof, &lim).unwrap();
        assert!(check.max_ratio <= 1.0, "ratio {:.3}", check.max_ratio);
        let plateau = p.alpha * p.alpha / (30.0 * 2.0f64.sqrt());
        assert!(
            (check.tail_ratio / plateau - 1.0).abs() <= 0.3,
            "tail ratio {:.4e} vs plateau {plateau:.4e}",
            check.tail_ratio
        );
    }

    #[test]
    fn weighted_tail_residual_stays_under_cap_across_damping() {
        // One cap per curvature amplitude must hold across the damping range;
        // where the predicted envelope is unmeasurable the raw deviation must
        // sit at the noise floor.
        let c = 0.5;
        let s0 = asymptotic_onset(c);
        for alpha in [0.1, 1.0] {
            let p = params(c, alpha);
            let x_max = limit_grid_extent(&p).max(s0 + 5.0);
            let prof = integrate_profile(ProfileKind::Expander, &p, x_max, 1e-12).unwrap();
            let lim = limit_vectors(&prof).unwrap();
            let chk = asymptotics_check(&prof, &lim, s0, s0 + 5.0).unwrap();
            if chk.weighted_nodes > 0 {
                assert!(
                    chk.weighted_sup <= chk.cap,
                    "α={alpha}: weighted sup {:.1} over cap {:.1}",
                    chk.weighted_sup,
                    chk.cap
                );
            } else {
                assert!(
                    chk.raw_sup <= MEASURABLE_FACTOR * chk.noise_floor,
                    "α={alpha}: raw deviation {:.3e}",
                    chk.raw_sup
                );
            }
        }
    }

    #[test]
    fn csv_and_json_outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let prof =
            integrate_profile(ProfileKind::Expander, &params(0.5, 1.0), 12.0, 1e-10).unwrap();
        let csv_path = dir.path().join("profile.csv");
        prof.to_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "x,m1,m2,m3,n1,n2,n3,b1,b2,b3,k,tau"
        );
        assert_eq!(text.lines().count(), prof.grid.n + 1);

        let lim = limit_vectors(&prof).unwrap();
        let json_path = dir.path().join("limits.json");
        lim.write_json(&json_path).unwrap();
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        for key in ["A_plus", "A_minus", "angle", "phases", "amplitudes", "params", "tolerances"] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
    }
}
