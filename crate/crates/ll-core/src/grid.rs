//! Uniform one-dimensional grids, finite-difference stencils, quadrature and
//! a small spectral (FFT) toolbox for periodic grids.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Boundary treatment of a grid.
///
/// `Periodic` identifies x₀ + L with x₀ (the right endpoint is not stored);
/// `Pinned` stores both endpoints and uses one-sided stencils there, which is
/// appropriate for fields that are constant (or decaying onto a constant)
/// outside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Boundary {
    Periodic,
    Pinned,
}

/// A uniform grid x_i = x₀ + i·h, i = 0..n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub x0: f64,
    pub h: f64,
    pub n: usize,
    pub boundary: Boundary,
}

impl Grid1D {
    /// Periodic grid covering [x₀, x₀ + length) with n nodes, h = length/n.
    pub fn periodic(x0: f64, length: f64, n: usize) -> Result<Self> {
        if n < 4 || !(length > 0.0) {
            return Err(Error::config(format!(
                "periodic grid needs n >= 4 and positive length (n = {n}, length = {length})"
            )));
        }
        Ok(Grid1D {
            x0,
            h: length / n as f64,
            n,
            boundary: Boundary::Periodic,
        })
    }

    /// Pinned grid on [a, b] with n nodes (n ≥ 8 so the one-sided stencils fit).
    pub fn pinned(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 8 || !(b > a) {
            return Err(Error::config(format!(
                "pinned grid needs n >= 8 and b > a (n = {n}, interval [{a}, {b}])"
            )));
        }
        Ok(Grid1D {
            x0: a,
            h: (b - a) / (n - 1) as f64,
            n,
            boundary: Boundary::Pinned,
        })
    }

    /// Symmetric pinned grid on [−x_max, x_max] with an odd node count and
    /// spacing at most `h_target`, so that x = 0 is a node.
    pub fn symmetric(x_max: f64, h_target: f64) -> Result<Self> {
        if !(x_max > 0.0 && h_target > 0.0) {
            return Err(Error::config("symmetric grid needs positive x_max and h"));
        }
        let half = (x_max / h_target).ceil() as usize;
        Self::pinned(-x_max, x_max, 2 * half.max(4) + 1)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + self.h * i as f64
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Total extent: n·h for periodic grids, (n−1)·h for pinned ones.
    pub fn length(&self) -> f64 {
        match self.boundary {
            Boundary::Periodic => self.h * self.n as f64,
            Boundary::Pinned => self.h * (self.n - 1) as f64,
        }
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::config(format!(
                "field length {len} does not match grid size {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Index of the node nearest to x, if x lies inside the grid.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        let t = (x - self.x0) / self.h;
        let i = t.round();
        (i >= 0.0 && i <= (self.n - 1) as f64).then_some(i as usize)
    }

    /// Linear interpolation of nodal values at x (None outside the grid).
    pub fn interp_linear(&self, f: &[f64], x: f64) -> Option<f64> {
        let t = (x - self.x0) / self.h;
        if !(0.0..=(self.n - 1) as f64).contains(&t) {
            return None;
        }
        let i = (t.floor() as usize).min(self.n - 2);
        let s = t - i as f64;
        Some(f[i] * (1.0 - s) + f[i + 1] * s)
    }
}

/// Scalar-like values that finite-difference stencils can combine: reals,
/// complex numbers and points of ℝ³.
pub trait GridValue: Copy {
    fn zero() -> Self;
    /// self + a·other
    fn axpy(self, a: f64, other: Self) -> Self;
    fn abs_sq(self) -> f64;
}

impl GridValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn axpy(self, a: f64, other: Self) -> Self {
        self + a * other
    }
    fn abs_sq(self) -> f64 {
        self * self
    }
}

impl GridValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn axpy(self, a: f64, other: Self) -> Self {
        self + a * other
    }
    fn abs_sq(self) -> f64 {
        self.norm_sqr()
    }
}

impl GridValue for Vec3 {
    fn zero() -> Self {
        [0.0; 3]
    }
    fn axpy(self, a: f64, other: Self) -> Self {
        [
            self[0] + a * other[0],
            self[1] + a * other[1],
            self[2] + a * other[2],
        ]
    }
    fn abs_sq(self) -> f64 {
        self[0] * self[0] + self[1] * self[1] + self[2] * self[2]
    }
}

fn combine<T: GridValue>(values: &[T], idx: &[isize], coeffs: &[f64], scale: f64) -> T {
    let n = values.len() as isize;
    let mut acc = T::zero();
    for (&j, &c) in idx.iter().zip(coeffs) {
        let jj = j.rem_euclid(n) as usize;
        acc = acc.axpy(c * scale, values[jj]);
    }
    acc
}

/// Fourth-order first derivative (central inside, one-sided at pinned ends).
pub fn d1_fd4<T: GridValue>(grid: &Grid1D, f: &[T]) -> Vec<T> {
    let n = f.len();
    assert_eq!(n, grid.n, "field length must match grid");
    let s = 1.0 / (12.0 * grid.h);
    let central = |f: &[T], i: isize| {
        combine(f, &[i - 2, i - 1, i + 1, i + 2], &[1.0, -8.0, 8.0, -1.0], s)
    };
    match grid.boundary {
        Boundary::Periodic => (0..n as isize).map(|i| central(f, i)).collect(),
        Boundary::Pinned => {
            let m = n as isize;
            (0..m)
                .map(|i| {
                    if i >= 2 && i < m - 2 {
                        central(f, i)
                    } else if i == 0 {
                        combine(f, &[0, 1, 2, 3, 4], &[-25.0, 48.0, -36.0, 16.0, -3.0], s)
                    } else if i == 1 {
                        combine(f, &[0, 1, 2, 3, 4], &[-3.0, -10.0, 18.0, -6.0, 1.0], s)
                    } else if i == m - 2 {
                        combine(
                            f,
                            &[m - 1, m - 2, m - 3, m - 4, m - 5],
                            &[3.0, 10.0, -18.0, 6.0, -1.0],
                            s,
                        )
                    } else {
                        combine(
                            f,
                            &[m - 1, m - 2, m - 3, m - 4, m - 5],
                            &[25.0, -48.0, 36.0, -16.0, 3.0],
                            s,
                        )
                    }
                })
                .collect()
        }
    }
}

/// Fourth-order second derivative.
pub fn d2_fd4<T: GridValue>(grid: &Grid1D, f: &[T]) -> Vec<T> {
    let n = f.len();
    assert_eq!(n, grid.n, "field length must match grid");
    let s = 1.0 / (12.0 * grid.h * grid.h);
    let central = |f: &[T], i: isize| {
        combine(
            f,
            &[i - 2, i - 1, i, i + 1, i + 2],
            &[-1.0, 16.0, -30.0, 16.0, -1.0],
            s,
        )
    };
    match grid.boundary {
        Boundary::Periodic => (0..n as isize).map(|i| central(f, i)).collect(),
        Boundary::Pinned => {
            let m = n as isize;
            let fwd0 = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
            let fwd1 = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];
            (0..m)
                .map(|i| {
                    if i >= 2 && i < m - 2 {
                        central(f, i)
                    } else if i == 0 {
                        combine(f, &[0, 1, 2, 3, 4, 5], &fwd0, s)
                    } else if i == 1 {
                        combine(f, &[0, 1, 2, 3, 4, 5], &fwd1, s)
                    } else if i == m - 2 {
                        combine(f, &[m - 1, m - 2, m - 3, m - 4, m - 5, m - 6], &fwd1, s)
                    } else {
                        combine(f, &[m - 1, m - 2, m - 3, m - 4, m - 5, m - 6], &fwd0, s)
                    }
                })
                .collect()
        }
    }
}

/// Second-order first derivative (used by refinement studies).
pub fn d1_fd2<T: GridValue>(grid: &Grid1D, f: &[T]) -> Vec<T> {
    let n = f.len();
    assert_eq!(n, grid.n, "field length must match grid");
    let s = 1.0 / (2.0 * grid.h);
    match grid.boundary {
        Boundary::Periodic => (0..n as isize)
            .map(|i| combine(f, &[i - 1, i + 1], &[-1.0, 1.0], s))
            .collect(),
        Boundary::Pinned => {
            let m = n as isize;
            (0..m)
                .map(|i| {
                    if i >= 1 && i < m - 1 {
                        combine(f, &[i - 1, i + 1], &[-1.0, 1.0], s)
                    } else if i == 0 {
                        combine(f, &[0, 1, 2], &[-3.0, 4.0, -1.0], s)
                    } else {
                        combine(f, &[m - 1, m - 2, m - 3], &[3.0, -4.0, 1.0], s)
                    }
                })
                .collect()
        }
    }
}

/// Second-order second derivative.
pub fn d2_fd2<T: GridValue>(grid: &Grid1D, f: &[T]) -> Vec<T> {
    let n = f.len();
    assert_eq!(n, grid.n, "field length must match grid");
    let s = 1.0 / (grid.h * grid.h);
    match grid.boundary {
        Boundary::Periodic => (0..n as isize)
            .map(|i| combine(f, &[i - 1, i, i + 1], &[1.0, -2.0, 1.0], s))
            .collect(),
        Boundary::Pinned => {
            let m = n as isize;
            (0..m)
                .map(|i| {
                    if i >= 1 && i < m - 1 {
                        combine(f, &[i - 1, i, i + 1], &[1.0, -2.0, 1.0], s)
                    } else if i == 0 {
                        combine(f, &[0, 1, 2, 3], &[2.0, -5.0, 4.0, -1.0], s)
                    } else {
                        combine(f, &[m - 1, m - 2, m - 3, m - 4], &[2.0, -5.0, 4.0, -1.0], s)
                    }
                })
                .collect()
        }
    }
}

/// Trapezoidal quadrature over the whole grid. On periodic grids this is the
/// plain node sum times h (spectrally accurate for smooth periodic data);
/// on pinned grids the endpoints get weight ½.
pub fn trapezoid<T: GridValue>(grid: &Grid1D, f: &[T]) -> T {
    assert_eq!(f.len(), grid.n, "field length must match grid");
    let mut acc = T::zero();
    for &v in f {
        acc = acc.axpy(1.0, v);
    }
    if grid.boundary == Boundary::Pinned {
        acc = acc.axpy(-0.5, f[0]);
        acc = acc.axpy(-0.5, f[grid.n - 1]);
    }
    T::zero().axpy(grid.h, acc)
}

/// Cumulative trapezoid: F_i = ∫_{x₀}^{x_i} f, F_0 = 0 (second order).
pub fn cumtrapz<T: GridValue>(grid: &Grid1D, f: &[T]) -> Vec<T> {
    assert_eq!(f.len(), grid.n, "field length must match grid");
    let mut out = Vec::with_capacity(f.len());
    let mut acc = T::zero();
    out.push(acc);
    for i in 1..f.len() {
        acc = acc.axpy(0.5 * grid.h, f[i - 1]);
        acc = acc.axpy(0.5 * grid.h, f[i]);
        out.push(acc);
    }
    out
}

/// Fourth-order cumulative quadrature (corrected trapezoid): interior steps
/// use h/24·(−f_{i−1} + 13 f_i + 13 f_{i+1} − f_{i+2}), the first and last
/// step the one-sided h/24·(9 f₀ + 19 f₁ − 5 f₂ + f₃) rule.
pub fn cumtrapz4<T: GridValue>(grid: &Grid1D, f: &[T]) -> Vec<T> {
    let n = f.len();
    assert_eq!(n, grid.n, "field length must match grid");
    if n < 4 {
        return cumtrapz(grid, f);
    }
    let w = grid.h / 24.0;
    let mut out = Vec::with_capacity(n);
    let mut acc = T::zero();
    out.push(acc);
    for i in 0..n - 1 {
        let step = if i == 0 {
            combine(f, &[0, 1, 2, 3], &[9.0, 19.0, -5.0, 1.0], w)
        } else if i == n - 2 {
            let m = n as isize;
            combine(f, &[m - 1, m - 2, m - 3, m - 4], &[9.0, 19.0, -5.0, 1.0], w)
        } else {
            let i = i as isize;
            combine(f, &[i - 1, i, i + 1, i + 2], &[-1.0, 13.0, 13.0, -1.0], w)
        };
        acc = acc.axpy(1.0, step);
        out.push(acc);
    }
    out
}

/// L² norm of a field, √(∫|f|²).
pub fn l2_norm<T: GridValue>(grid: &Grid1D, f: &[T]) -> f64 {
    let sq: Vec<f64> = f.iter().map(|v| v.abs_sq()).collect();
    trapezoid(grid, &sq).max(0.0).sqrt()
}

/// Sup norm of a field.
pub fn sup_norm<T: GridValue>(f: &[T]) -> f64 {
    f.iter().map(|v| v.abs_sq().sqrt()).fold(0.0, f64::max)
}

/// FFT helper bound to one periodic grid: cached plans, the wavenumber array
/// and Fourier-multiplier application. The forward transform is normalized
/// by 1/n so that `inverse(forward(f)) == f` and Parseval reads
/// ‖f‖²_L² = L·Σ_k |f̂_k|².
pub struct Spectral {
    pub n: usize,
    pub length: f64,
    /// Signed wavenumber of each FFT bin, k_j = 2π·j̃/L with j̃ ∈ (−n/2, n/2].
    pub k: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(grid: &Grid1D) -> Result<Self> {
        if grid.boundary != Boundary::Periodic {
            return Err(Error::config("spectral operations need a periodic grid"));
        }
        let mut planner = FftPlanner::new();
        let n = grid.n;
        let length = grid.length();
        let k = (0..n)
            .map(|j| {
                let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * std::f64::consts::PI * jj / length
            })
            .collect();
        Ok(Spectral {
            n,
            length,
            k,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn forward(&self, f: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(f.len(), self.n);
        let mut buf = f.to_vec();
        self.fwd.process(&mut buf);
        let s = 1.0 / self.n as f64;
        for v in &mut buf {
            *v *= s;
        }
        buf
    }

    pub fn inverse(&self, fh: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(fh.len(), self.n);
        let mut buf = fh.to_vec();
        self.inv.process(&mut buf);
        buf
    }

    /// Applies a Fourier multiplier k ↦ μ(k) to a complex field.
    pub fn apply_multiplier(&self, f: &[Complex64], mu: impl Fn(f64) -> Complex64) -> Vec<Complex64> {
        let mut fh = self.forward(f);
        for (v, &k) in fh.iter_mut().zip(&self.k) {
            *v *= mu(k);
        }
        self.inverse(&fh)
    }

    /// Spectral derivative of given order. Odd orders zero the Nyquist mode
    /// (its derivative has no consistent sign on an even grid).
    pub fn derivative_c(&self, f: &[Complex64], order: u32) -> Vec<Complex64> {
        let nyquist = self.n / 2;
        let even_n = self.n % 2 == 0;
        let mut fh = self.forward(f);
        for (j, v) in fh.iter_mut().enumerate() {
            if order % 2 == 1 && even_n && j == nyquist {
                *v = Complex64::new(0.0, 0.0);
                continue;
            }
            *v *= Complex64::new(0.0, self.k[j]).powu(order);
        }
        self.inverse(&fh)
    }

    pub fn derivative(&self, f: &[f64], order: u32) -> Vec<f64> {
        let fc: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.derivative_c(&fc, order).iter().map(|v| v.re).collect()
    }

    /// Sobolev norm ‖f‖_{H^s} (or the homogeneous Ḣ^s seminorm).
    pub fn sobolev_c(&self, f: &[Complex64], s: f64, homogeneous: bool) -> f64 {
        let fh = self.forward(f);
        let sum: f64 = fh
            .iter()
            .zip(&self.k)
            .map(|(v, &k)| {
                let weight = if homogeneous {
                    (k * k).powf(s)
                } else {
                    (1.0 + k * k).powf(s)
                };
                weight * v.norm_sqr()
            })
            .sum();
        (self.length * sum).sqrt()
    }

    pub fn sobolev(&self, f: &[f64], s: f64, homogeneous: bool) -> f64 {
        let fc: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.sobolev_c(&fc, s, homogeneous)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fd4_exact_on_quartics() {
        let grid = Grid1D::pinned(-1.0, 2.0, 61).unwrap();
        let f: Vec<f64> = grid.xs().map(|x| x.powi(4) + 2.0 * x.powi(3) - x).collect();
        let d1 = d1_fd4(&grid, &f);
        let d2 = d2_fd4(&grid, &f);
        for (i, x) in grid.xs().enumerate() {
            assert_relative_eq!(d1[i], 4.0 * x.powi(3) + 6.0 * x * x - 1.0,
                epsilon = 1e-9, max_relative = 1e-9);
            assert_relative_eq!(d2[i], 12.0 * x * x + 12.0 * x,
                epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn fd4_periodic_trig() {
        let n = 128;
        let grid = Grid1D::periodic(0.0, 2.0 * std::f64::consts::PI, n).unwrap();
        let f: Vec<f64> = grid.xs().map(|x| (3.0 * x).sin()).collect();
        let d1 = d1_fd4(&grid, &f);
        // FD4 error ≈ (kh)⁴·k/30 ≈ 1.4e-3·... generous bound 1e-2, and
        // fourth-order decay is checked by halving h.
        let err: f64 = grid
            .xs()
            .enumerate()
            .map(|(i, x)| (d1[i] - 3.0 * (3.0 * x).cos()).abs())
            .fold(0.0, f64::max);
        let grid2 = Grid1D::periodic(0.0, 2.0 * std::f64::consts::PI, 2 * n).unwrap();
        let f2: Vec<f64> = grid2.xs().map(|x| (3.0 * x).sin()).collect();
        let d12 = d1_fd4(&grid2, &f2);
        let err2: f64 = grid2
            .xs()
            .enumerate()
            .map(|(i, x)| (d12[i] - 3.0 * (3.0 * x).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2);
        let order = (err / err2).log2();
        assert!((order - 4.0).abs() < 0.2, "measured order {order}");
    }

    #[test]
    fn trapezoid_gaussian() {
        // Trapezoid on decaying analytic data is superalgebraically accurate.
        let grid = Grid1D::pinned(-10.0, 10.0, 401).unwrap();
        let f: Vec<f64> = grid.xs().map(|x| (-x * x).exp()).collect();
        assert_relative_eq!(
            trapezoid(&grid, &f),
            std::f64::consts::PI.sqrt(),
            epsilon = 1e-13
        );
    }

    #[test]
    fn cumtrapz4_matches_erf() {
        let grid = Grid1D::pinned(-8.0, 8.0, 1601).unwrap();
        let f: Vec<f64> = grid
            .xs()
            .map(|x| 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp())
            .collect();
        let cum = cumtrapz4(&grid, &f);
        let mut worst = 0.0f64;
        for (i, x) in grid.xs().enumerate() {
            let exact = libm::erf(x) - libm::erf(-8.0);
            worst = worst.max((cum[i] - exact).abs());
        }
        // O(h⁴) with h = 0.01 and |f⁗| ≈ 13 accumulates to a few times 1e-10.
        assert!(worst < 2e-9, "cumtrapz4 error {worst:.3e}");
        // Halving h must shrink the error by ~16.
        let fine = Grid1D::pinned(-8.0, 8.0, 3201).unwrap();
        let ff: Vec<f64> = fine
            .xs()
            .map(|x| 2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp())
            .collect();
        let cumf = cumtrapz4(&fine, &ff);
        let mut worst_f = 0.0f64;
        for (i, x) in fine.xs().enumerate() {
            let exact = libm::erf(x) - libm::erf(-8.0);
            worst_f = worst_f.max((cumf[i] - exact).abs());
        }
        let order = (worst / worst_f).log2();
        assert!(order > 3.5, "cumtrapz4 refinement order {order}");
    }

    #[test]
    fn spectral_derivative_and_norms() {
        let n = 64;
        let grid = Grid1D::periodic(0.0, 2.0 * std::f64::consts::PI, n).unwrap();
        let sp = Spectral::new(&grid).unwrap();
        let f: Vec<f64> = grid.xs().map(|x| (3.0 * x).sin()).collect();
        let d1 = sp.derivative(&f, 1);
        for (i, x) in grid.xs().enumerate() {
            assert_relative_eq!(d1[i], 3.0 * (3.0 * x).cos(), epsilon = 1e-11);
        }
        // Single mode e^{i5x}: ‖f‖²_{H^s} = L·(1+25)^s.
        let fc: Vec<Complex64> = grid
            .xs()
            .map(|x| Complex64::new(0.0, 5.0 * x).exp())
            .collect();
        let l = grid.length();
        assert_relative_eq!(sp.sobolev_c(&fc, 0.0, false), l.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(
            sp.sobolev_c(&fc, 2.0, false),
            (l * 26.0f64.powi(2)).sqrt(),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            sp.sobolev_c(&fc, 1.0, true),
            (l * 25.0).sqrt(),
            epsilon = 1e-10
        );
        // Round trip.
        let back = sp.inverse(&sp.forward(&fc));
        for (a, b) in fc.iter().zip(&back) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn interp_linear_hits_nodes() {
        let grid = Grid1D::pinned(0.0, 1.0, 11).unwrap();
        let f: Vec<f64> = grid.xs().map(|x| x * x).collect();
        assert_eq!(grid.interp_linear(&f, 0.5), Some(0.25));
        assert_relative_eq!(grid.interp_linear(&f, 0.55).unwrap(), 0.305, epsilon = 1e-15);
        assert_eq!(grid.interp_linear(&f, 1.5), None);
    }
}
