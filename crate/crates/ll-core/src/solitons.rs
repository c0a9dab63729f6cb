//! Easy-plane traveling solitons and their variational structure.
//!
//! With anisotropy (λ₁, λ₃) = (0, 1) the equation admits the explicit
//! traveling waves, for |c| < 1 and ρ = √(1−c²),
//!
//! ```text
//! m_c(x) = (c sech(ρx), tanh(ρx), ρ sech(ρx)),
//! ```
//!
//! moving with speed c. In the hydrodynamical pair (v, w) — see
//! [`crate::geometry::sphere_to_hydro`] — the wave reads v_c = ρ sech(ρx),
//! w_c = c·v_c/(1−v_c²), and is a critical point of E − cP for
//!
//! ```text
//! E(v,w) = ½ ∫ (v′)²/(1−v²) + (1−v²)w² + v² dx,      P(v,w) = ∫ v·w dx,
//! ```
//!
//! with closed values E(v_c) = 2√(1−c²) and P(v_c) = 2 arctan(√(1−c²)/c).
//! Besides the closed forms and quadrature versions of E and P, the module
//! builds signed sums of several waves and runs a discrete coercivity study
//! of the quadratic form Q_c = E″ − cP″ at the wave: the kernel direction
//! ∂ₓ(v_c, w_c), the unique negative direction, and the positive lower bound
//! Λ_c once both span{∂ₓ(v_c, w_c)} and the momentum gradient (w_c, v_c) are
//! projected out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VACUUM_TOL;
use crate::grid::{d1_fd4, d2_fd4, trapezoid, Boundary, Grid1D};
use crate::numerics::{eig_nearest, smallest_eig, BandedSym};
use crate::Vec3;

fn rho(c: f64) -> f64 {
    (1.0 - c * c).sqrt()
}

fn sech(t: f64) -> f64 {
    1.0 / t.cosh()
}

fn check_speed(c: f64) -> Result<()> {
    if !c.is_finite() || c.abs() >= 1.0 {
        return Err(Error::config(format!(
            "soliton speed must satisfy |c| < 1 (got c = {c})"
        )));
    }
    Ok(())
}

/// The traveling wave m_c(x) on the sphere. Defined for |c| < 1; the
/// stationary case c = 0 degenerates to (0, tanh x, sech x).
pub fn soliton_profile(c: f64, x: f64) -> Result<Vec3> {
    check_speed(c)?;
    let r = rho(c);
    let s = sech(r * x);
    Ok([c * s, (r * x).tanh(), r * s])
}

/// Sphere-valued soliton sampled on a grid, centered at x = a.
pub fn soliton_field(c: f64, a: f64, grid: &Grid1D) -> Result<Vec<Vec3>> {
    check_speed(c)?;
    grid.xs().map(|x| soliton_profile(c, x - a)).collect()
}

/// Hydrodynamical pair (v_c, w_c) at a point. The stationary wave c = 0 has
/// no hydrodynamical representative (its in-plane part vanishes at the
/// origin), so c = 0 is rejected.
pub fn hydro_soliton(c: f64, x: f64) -> Result<(f64, f64)> {
    check_speed(c)?;
    if c == 0.0 {
        return Err(Error::config(
            "the stationary soliton touches the poles; no hydrodynamical pair exists for c = 0",
        ));
    }
    let v = rho(c) * sech(rho(c) * x);
    Ok((v, c * v / (1.0 - v * v)))
}

/// Energy of the traveling wave, E(v_c) = 2√(1−c²), for c ∈ (−1, 1).
pub fn soliton_energy(c: f64) -> f64 {
    2.0 * rho(c)
}

/// Momentum of the traveling wave: 2 arctan(√(1−c²)/c) for c ∈ (0, 1),
/// extended oddly to c ∈ (−1, 0). Undefined at c = 0 (the formula jumps from
/// −π to π there); returns NaN.
pub fn soliton_momentum(c: f64) -> f64 {
    if c == 0.0 {
        return f64::NAN;
    }
    c.signum() * 2.0 * (rho(c) / c.abs()).atan()
}

/// d/dc P(v_c) = −2/√(1−c²), valid on either side of c = 0.
pub fn momentum_derivative(c: f64) -> f64 {
    -2.0 / rho(c)
}

/// A hydrodynamical state (v, w) on a grid, kept strictly away from the
/// vacuum |v| = 1 so the metric factor 1/(1−v²) stays finite.
#[derive(Clone, Debug)]
pub struct HydroState {
    pub grid: Grid1D,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl HydroState {
    pub fn new(grid: Grid1D, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        grid.check_len(v.len())?;
        grid.check_len(w.len())?;
        let max = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if !max.is_finite() || max > 1.0 - VACUUM_TOL {
            return Err(Error::config(format!(
                "hydrodynamical state touches the vacuum: max |v| = {max}"
            )));
        }
        Ok(HydroState { grid, v, w })
    }

    pub fn max_amplitude(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// The soliton as a [`HydroState`] on the given grid (c ≠ 0, |c| < 1).
pub fn hydro_soliton_state(c: f64, grid: &Grid1D) -> Result<HydroState> {
    let mut v = Vec::with_capacity(grid.n);
    let mut w = Vec::with_capacity(grid.n);
    for x in grid.xs() {
        let (vi, wi) = hydro_soliton(c, x)?;
        v.push(vi);
        w.push(wi);
    }
    HydroState::new(*grid, v, w)
}

/// E(v, w) = ½ ∫ (v′)²/(1−v²) + (1−v²)w² + v² by trapezoidal quadrature,
/// with v′ from the fourth-order stencil.
pub fn functional_energy(state: &HydroState) -> f64 {
    let vp = d1_fd4(&state.grid, &state.v);
    let f: Vec<f64> = (0..state.grid.n)
        .map(|i| {
            let q = 1.0 - state.v[i] * state.v[i];
            vp[i] * vp[i] / q + q * state.w[i] * state.w[i] + state.v[i] * state.v[i]
        })
        .collect();
    0.5 * trapezoid(&state.grid, &f)
}

/// P(v, w) = ∫ v·w by trapezoidal quadrature.
pub fn functional_momentum(state: &HydroState) -> f64 {
    let f: Vec<f64> = state.v.iter().zip(&state.w).map(|(v, w)| v * w).collect();
    trapezoid(&state.grid, &f)
}

/// Sup-norm residuals of the traveling-wave identity E′(v,w) = c·P′(v,w),
/// returned as (v-equation, w-equation). To keep the measurement meaningful
/// near the vacuum the v-equation is tested in the form cleared of the
/// metric denominator,
///
/// ```text
/// −v″ − v (v′)²/(1−v²) + (1−v²)(v − v w² − c w) = 0,
/// (1−v²) w − c v = 0,
/// ```
///
/// (the raw Euler–Lagrange residual times the positive weight 1−v², which
/// also keeps the finite-difference rounding floor independent of c).
pub fn euler_lagrange_residual(state: &HydroState, c: f64) -> (f64, f64) {
    let vp = d1_fd4(&state.grid, &state.v);
    let vpp = d2_fd4(&state.grid, &state.v);
    let mut rv = 0.0f64;
    let mut rw = 0.0f64;
    for i in 0..state.grid.n {
        let (v, w) = (state.v[i], state.w[i]);
        let q = 1.0 - v * v;
        let res_v = -vpp[i] - v * vp[i] * vp[i] / q + q * (v - v * w * w - c * w);
        let res_w = q * w - c * v;
        rv = rv.max(res_v.abs());
        rw = rw.max(res_w.abs());
    }
    (rv, rw)
}

/// One summand of a multisoliton configuration: speed c_j ∈ (−1,1)\{0},
/// center a_j, and sign s_j = ±1 (s = −1 applies the opposite map
/// (v, w) ↦ (−v, −w)).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolitonSpec {
    pub c: f64,
    pub a: f64,
    pub s: f64,
}

impl SolitonSpec {
    fn validate(&self) -> Result<()> {
        check_speed(self.c)?;
        if self.c == 0.0 {
            return Err(Error::config("multisoliton summands need c ≠ 0"));
        }
        if !(self.s == 1.0 || self.s == -1.0) {
            return Err(Error::config(format!(
                "soliton sign must be ±1 (got s = {})",
                self.s
            )));
        }
        Ok(())
    }
}

/// A pointwise sum Σ_j s_j (v_{c_j}, w_{c_j})(· − a_j). The sum itself always
/// exists; whether it lifts back to a sphere-valued field requires
/// max |V| < 1, recorded in `admissible` rather than enforced.
#[derive(Clone, Debug)]
pub struct SolitonSum {
    pub specs: Vec<SolitonSpec>,
    pub grid: Grid1D,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub max_amplitude: f64,
    pub admissible: bool,
}

impl SolitonSum {
    /// The sum as a validated [`HydroState`]; fails when the configuration
    /// is not admissible (the amplitude reaches the vacuum).
    pub fn state(&self) -> Result<HydroState> {
        if !self.admissible {
            return Err(Error::config(format!(
                "inadmissible soliton sum: max |V| = {} ≥ 1",
                self.max_amplitude
            )));
        }
        HydroState::new(self.grid, self.v.clone(), self.w.clone())
    }
}

/// Sum of M solitons in the hydrodynamical variables. Errors only on invalid
/// summands; an amplitude reaching the vacuum merely clears `admissible`.
pub fn sum_solitons(specs: &[SolitonSpec], grid: &Grid1D) -> Result<SolitonSum> {
    if specs.is_empty() {
        return Err(Error::config("soliton sum needs at least one summand"));
    }
    for s in specs {
        s.validate()?;
    }
    let mut v = vec![0.0; grid.n];
    let mut w = vec![0.0; grid.n];
    for spec in specs {
        for (i, x) in grid.xs().enumerate() {
            let (vj, wj) = hydro_soliton(spec.c, x - spec.a)?;
            v[i] += spec.s * vj;
            w[i] += spec.s * wj;
        }
    }
    let max_amplitude = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    Ok(SolitonSum {
        specs: specs.to_vec(),
        grid: *grid,
        v,
        w,
        max_amplitude,
        admissible: max_amplitude < 1.0,
    })
}

/// Closed-form wave data at one point: v_c and w_c with their first (and for
/// v, second) derivatives. Keeps the Hessian assembly free of sampling error.
struct WavePoint {
    v: f64,
    vp: f64,
    vpp: f64,
    w: f64,
    wp: f64,
}

fn wave_point(c: f64, x: f64) -> WavePoint {
    let r = rho(c);
    let s = sech(r * x);
    let t = (r * x).tanh();
    let v = r * s;
    let vp = -r * r * s * t;
    let vpp = r * r * r * s * (t * t - s * s);
    let q = 1.0 - v * v;
    WavePoint { v, vp, vpp, w: c * v / q, wp: c * vp * (1.0 + v * v) / (q * q) }
}

/// Outcome of the discrete coercivity study of Q_c = E″ − cP″ at the wave.
#[derive(Clone, Debug)]
pub struct CoercivityReport {
    pub c: f64,
    /// Eigenvalue nearest zero (the discrete translation kernel).
    pub eig_kernel: f64,
    /// |cos| of the angle between the kernel eigenvector and ∂ₓ(v_c, w_c).
    pub kernel_alignment: f64,
    /// Smallest unconstrained eigenvalue (the negative direction).
    pub eig_negative: f64,
    /// Number of eigenvalues below −10⁻⁶ (expected: exactly one).
    pub negative_count: usize,
    /// Smallest eigenvalue on the orthogonal complement of
    /// span{∂ₓ(v_c, w_c), (w_c, v_c)}.
    pub lambda_c: f64,
    /// Matrix dimension (two fields on the interior nodes).
    pub dim: usize,
}

/// Assembles the second variation of E − cP at (v_c, w_c) and resolves its
/// three distinguished eigenvalues.
///
/// Expanding E − cP to second order in a perturbation (φ, ψ) and integrating
/// the φφ′ cross term by parts leaves the quadratic form
///
/// ```text
/// Q_c(φ,ψ) = ∫ g φ′² + f_vv φ² + 2 f_vw φψ + (1−v²) ψ²,     g = 1/(1−v²),
/// f_vv = −½ g″(v) v′² − g′(v) v″ − w² + 1,      f_vw = −2vw − c,
/// ```
///
/// discretized with the conservative second-order stencil
/// −(g φ′)′ ≈ (g_{i−½}(φ_i−φ_{i−1}) − g_{i+½}(φ_{i+1}−φ_i))/h² and Dirichlet
/// truncation at the domain edge, where the wave's tail is far below the
/// eigenvalue tolerance. All coefficients use the closed-form profile.
/// The grid must be pinned and should resolve the soliton width 1/√(1−c²).
pub fn coercivity_check(c: f64, grid: &Grid1D) -> Result<CoercivityReport> {
    check_speed(c)?;
    if c == 0.0 {
        return Err(Error::config("coercivity study needs c ≠ 0"));
    }
    if grid.boundary != Boundary::Pinned {
        return Err(Error::config("coercivity study needs a pinned grid"));
    }
    if grid.n < 64 {
        return Err(Error::config("coercivity grid is too coarse"));
    }
    let h = grid.h;
    let ni = grid.n - 2;
    let dim = 2 * ni;
    let g_at = |x: f64| {
        let v = rho(c) * sech(rho(c) * x);
        1.0 / (1.0 - v * v)
    };

    let mut a = BandedSym::zeros(dim, 2);
    let mut z1 = vec![0.0; dim];
    let mut z2 = vec![0.0; dim];
    for i in 0..ni {
        let x = grid.x(i + 1);
        let wp = wave_point(c, x);
        let q = 1.0 - wp.v * wp.v;
        let gp = 2.0 * wp.v / (q * q);
        let gpp = (2.0 + 6.0 * wp.v * wp.v) / (q * q * q);
        let f_vv = -0.5 * gpp * wp.vp * wp.vp - gp * wp.vpp - wp.w * wp.w + 1.0;
        let f_vw = -2.0 * wp.v * wp.w - c;
        let g_w = g_at(x - 0.5 * h);
        let g_e = g_at(x + 0.5 * h);
        a.add(2 * i, 2 * i, (g_w + g_e) / (h * h) + f_vv);
        a.add(2 * i, 2 * i + 1, f_vw);
        a.add(2 * i + 1, 2 * i + 1, q);
        if i + 1 < ni {
            a.add(2 * i, 2 * i + 2, -g_e / (h * h));
        }
        z1[2 * i] = wp.vp;
        z1[2 * i + 1] = wp.wp;
        z2[2 * i] = wp.w;
        z2[2 * i + 1] = wp.v;
    }

    let kernel = eig_nearest(&a, 0.0, &[], Some(&z1), 60)
        .or_else(|_| eig_nearest(&a, 1e-12, &[], Some(&z1), 60))?;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let kernel_alignment =
        dot(&kernel.vector, &z1).abs() / (dot(&z1, &z1).sqrt() * dot(&kernel.vector, &kernel.vector).sqrt());

    // Gershgorin lower bound for the bisection bracket of the negative mode;
    // the ±g/h² couplings cancel against the diagonal, so this stays O(1).
    let mut lower = f64::INFINITY;
    for r in 0..dim {
        let mut off = 0.0;
        for d in 1..=2usize {
            if r + d < dim {
                off += a.diags[d][r].abs();
            }
            if r >= d {
                off += a.diags[d][r - d].abs();
            }
        }
        lower = lower.min(a.diags[0][r] - off);
    }
    let negative = smallest_eig(&a, lower - 1.0, -1e-8)?;
    let negative_count = a.count_below(-1e-6);

    let constrained = eig_nearest(&a, 0.0, &[z1.clone(), z2.clone()], None, 90)
        .or_else(|_| eig_nearest(&a, 1e-12, &[z1, z2], None, 90))?;

    Ok(CoercivityReport {
        c,
        eig_kernel: kernel.value,
        kernel_alignment,
        eig_negative: negative.value,
        negative_count,
        lambda_c: constrained.value,
        dim,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridSummary {
    pub x_min: f64,
    pub x_max: f64,
    pub h: f64,
    pub n: usize,
}

impl From<&Grid1D> for GridSummary {
    fn from(grid: &Grid1D) -> Self {
        GridSummary {
            x_min: grid.x0,
            x_max: grid.x(grid.n - 1),
            h: grid.h,
            n: grid.n,
        }
    }
}

/// Per-speed summary: quadrature values of the functionals, the measured
/// Grillakis–Shatah–Strauss slope dP/dc, and the coercivity eigenvalues.
#[derive(Clone, Debug, Serialize)]
pub struct SolitonReport {
    pub c: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "P")]
    pub momentum: f64,
    #[serde(rename = "dPdc")]
    pub dpdc: f64,
    pub eig_kernel: f64,
    pub eig_negative: f64,
    #[serde(rename = "Lambda_c")]
    pub lambda_c: f64,
    pub grid: GridSummary,
}

/// Assembles the JSON-facing report for one speed: E and P by quadrature on
/// the given grid, dP/dc by central differences of the quadrature momentum,
/// and the three coercivity eigenvalues.
pub fn soliton_report(c: f64, grid: &Grid1D) -> Result<SolitonReport> {
    let state = hydro_soliton_state(c, grid)?;
    let delta = 1e-4f64.min(0.25 * c.abs().min(1.0 - c.abs()));
    let p_hi = functional_momentum(&hydro_soliton_state(c + delta, grid)?);
    let p_lo = functional_momentum(&hydro_soliton_state(c - delta, grid)?);
    let coercivity = coercivity_check(c, grid)?;
    Ok(SolitonReport {
        c,
        energy: functional_energy(&state),
        momentum: functional_momentum(&state),
        dpdc: (p_hi - p_lo) / (2.0 * delta),
        eig_kernel: coercivity.eig_kernel,
        eig_negative: coercivity.eig_negative,
        lambda_c: coercivity.lambda_c,
        grid: GridSummary::from(grid),
    })
}

impl SolitonReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::numerical(format!("soliton report serialization failed: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))
    }
}
