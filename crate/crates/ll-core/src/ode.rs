//! Adaptive Dormand–Prince 5(4) integration with dense output.
//!
//! The solver drives a first-order system y′ = f(t, y) with embedded error
//! control and exposes:
//!
//! * samples of the solution at arbitrary requested times, interpolated with
//!   the scheme's own fifth-order dense-output polynomial (no extra steps are
//!   forced onto the requested times);
//! * a `post_step` hook invoked after every accepted step, which is how the
//!   Frenet integrators re-orthonormalize their frame without touching the
//!   solver;
//! * evaluation counts for performance reporting.

use crate::error::{Error, Result};

/// Butcher tableau of the Dormand–Prince 5(4) pair.
mod tableau {
    pub const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    pub const A2: [f64; 1] = [0.2];
    pub const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
    pub const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
    pub const A5: [f64; 4] = [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ];
    pub const A6: [f64; 5] = [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ];
    /// Fifth-order weights (also row 7 of A; the pair is FSAL).
    pub const B: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    /// B − B̂: multiplied by h·k this is the local error estimate.
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    /// Dense-output weights for the fifth interpolation coefficient.
    pub const D: [f64; 7] = [
        -12715105075.0 / 11282082432.0,
        0.0,
        87487479700.0 / 32700410799.0,
        -10690763975.0 / 1880347072.0,
        701980252875.0 / 199316789632.0,
        -1453857185.0 / 822651844.0,
        69997945.0 / 29380423.0,
    ];
}

/// Solver configuration. `h_max` bounds the step (useful when the requested
/// output grid is much finer than the dynamics), `max_steps` guards runaway
/// integrations.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: None,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
}

pub struct OdeSolution {
    /// Solution sampled at the requested output times.
    pub samples: Vec<Vec<f64>>,
    /// State at the final time (after the last `post_step`).
    pub y_end: Vec<f64>,
    pub stats: OdeStats,
}

impl Dopri5 {
    /// Integrates y′ = f(t, y) from `t0` to `t1 > t0`, sampling at `out_ts`
    /// (ascending, inside [t0, t1]). `post_step(t, y)` runs after each
    /// accepted step and may adjust `y` in place; dense samples inside a step
    /// are taken before the adjustment.
    pub fn solve(
        &self,
        mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
        t0: f64,
        t1: f64,
        y0: &[f64],
        out_ts: &[f64],
        mut post_step: impl FnMut(f64, &mut [f64]),
    ) -> Result<OdeSolution> {
        if !(t1 > t0) {
            return Err(Error::config(format!(
                "integration interval must be forward, got [{t0}, {t1}]"
            )));
        }
        if out_ts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("output times must be ascending"));
        }
        if let (Some(&first), Some(&last)) = (out_ts.first(), out_ts.last()) {
            if first < t0 - 1e-12 || last > t1 + 1e-12 {
                return Err(Error::config(format!(
                    "output times [{first}, {last}] leave the integration interval [{t0}, {t1}]"
                )));
            }
        }
        let dim = y0.len();
        let mut stats = OdeStats::default();
        let mut y = y0.to_vec();
        let mut t = t0;
        let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
        let mut ytmp = vec![0.0; dim];
        let mut y1 = vec![0.0; dim];
        let mut samples: Vec<Vec<f64>> = Vec::with_capacity(out_ts.len());
        let mut next_out = 0;

        // Output times that coincide with t0.
        while next_out < out_ts.len() && out_ts[next_out] <= t0 + 1e-14 * (1.0 + t0.abs()) {
            samples.push(y.clone());
            next_out += 1;
        }

        let h_cap = self.h_max.unwrap_or(t1 - t0).min(t1 - t0);
        let mut h = match self.h_init {
            Some(h) => h.min(h_cap),
            None => {
                // Modest heuristic; the controller corrects it within a few steps.
                rhs(t0, &y, &mut k[0]);
                stats.evals += 1;
                let scale = 1.0 + k[0].iter().map(|v| v.abs()).fold(0.0, f64::max);
                (1e-3 * (t1 - t0) / scale).min(h_cap).max(1e-12)
            }
        };

        loop {
            let roundoff = 1e-14 * (1.0 + t.abs());
            if t1 - t <= roundoff {
                // Reached t1 to round-off; a capped step size can leave a
                // sliver here that no step should be asked to cover.
                break;
            }
            if stats.steps + stats.rejected > self.max_steps {
                return Err(Error::numerical(format!(
                    "step budget exhausted at t = {t} (h = {h:.3e})"
                )));
            }
            if h < roundoff {
                return Err(Error::numerical(format!("step size underflow at t = {t}")));
            }
            // Stretch rule: absorb the final interval into this step when it
            // is within 1% of the current step size.
            let last = t + 1.01 * h >= t1;
            if last {
                h = t1 - t;
            }

            rhs(t, &y, &mut k[0]);
            stats.evals += 1;
            let stage = |k: &[Vec<f64>], coeffs: &[f64], ytmp: &mut [f64], y: &[f64], h: f64| {
                for i in 0..ytmp.len() {
                    let mut acc = 0.0;
                    for (j, &a) in coeffs.iter().enumerate() {
                        acc += a * k[j][i];
                    }
                    ytmp[i] = y[i] + h * acc;
                }
            };
            stage(&k, &tableau::A2, &mut ytmp, &y, h);
            rhs(t + tableau::C[1] * h, &ytmp, &mut k[1]);
            stage(&k, &tableau::A3, &mut ytmp, &y, h);
            rhs(t + tableau::C[2] * h, &ytmp, &mut k[2]);
            stage(&k, &tableau::A4, &mut ytmp, &y, h);
            rhs(t + tableau::C[3] * h, &ytmp, &mut k[3]);
            stage(&k, &tableau::A5, &mut ytmp, &y, h);
            rhs(t + tableau::C[4] * h, &ytmp, &mut k[4]);
            stage(&k, &tableau::A6, &mut ytmp, &y, h);
            rhs(t + tableau::C[5] * h, &ytmp, &mut k[5]);
            for i in 0..dim {
                let mut acc = 0.0;
                for j in 0..6 {
                    acc += tableau::B[j] * k[j][i];
                }
                y1[i] = y[i] + h * acc;
            }
            rhs(t + h, &y1, &mut k[6]);
            stats.evals += 5;

            // Scaled RMS error of the embedded pair.
            let mut err_acc = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for j in 0..7 {
                    e += tableau::E[j] * k[j][i];
                }
                let scale = self.atol + self.rtol * y[i].abs().max(y1[i].abs());
                let r = h * e / scale;
                err_acc += r * r;
            }
            let err = (err_acc / dim as f64).sqrt();

            if err <= 1.0 {
                // Serve dense output inside (t, t+h].
                while next_out < out_ts.len() && out_ts[next_out] <= t + h + 1e-14 * (1.0 + t.abs()) {
                    let theta = ((out_ts[next_out] - t) / h).clamp(0.0, 1.0);
                    samples.push(self.dense_eval(&y, &y1, &k, h, theta));
                    next_out += 1;
                }
                t += h;
                y.copy_from_slice(&y1);
                post_step(t, &mut y);
                stats.steps += 1;
                if last || t >= t1 {
                    break;
                }
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = (h * grow).min(h_cap).min(t1 - t);
            } else {
                stats.rejected += 1;
                h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
        }

        // Anything that requested exactly t1.
        while next_out < out_ts.len() {
            samples.push(y.clone());
            next_out += 1;
        }
        Ok(OdeSolution {
            samples,
            y_end: y,
            stats,
        })
    }

    fn dense_eval(&self, y0: &[f64], y1: &[f64], k: &[Vec<f64>], h: f64, theta: f64) -> Vec<f64> {
        let dim = y0.len();
        let mut out = vec![0.0; dim];
        for i in 0..dim {
            let dy = y1[i] - y0[i];
            let r1 = y0[i];
            let r2 = dy;
            let r3 = h * k[0][i] - dy;
            let r4 = dy - h * k[6][i] - r3;
            let mut r5 = 0.0;
            for j in 0..7 {
                r5 += tableau::D[j] * k[j][i];
            }
            r5 *= h;
            out[i] = r1 + theta * (r2 + (1.0 - theta) * (r3 + theta * (r4 + (1.0 - theta) * r5)));
        }
        out
    }
}

/// One classical fixed-step RK4 step, writing the result into `y` itself.
/// `scratch` must hold 5 vectors of the state size.
pub fn rk4_step(
    mut rhs: impl FnMut(f64, &[f64], &mut [f64]),
    t: f64,
    y: &mut [f64],
    dt: f64,
    scratch: &mut [Vec<f64>; 5],
) {
    let n = y.len();
    let [k1, k2, k3, k4, tmp] = scratch;
    for v in [&mut *k1, &mut *k2, &mut *k3, &mut *k4, &mut *tmp] {
        v.resize(n, 0.0);
    }
    rhs(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    rhs(t + 0.5 * dt, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    rhs(t + 0.5 * dt, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    rhs(t + dt, tmp, k4);
    for i in 0..n {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}
