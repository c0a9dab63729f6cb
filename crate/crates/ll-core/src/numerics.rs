//! Small numerical building blocks: banded symmetric factorizations and
//! eigen-solves, least squares, scalar root finding and minimization, and a
//! frequency estimator for sampled oscillations.
//!
//! Everything here is sized for the crate's needs (matrices come from
//! second-order 1-D operators, so bandwidths are tiny and systems have at
//! most a handful of dense columns on the side).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric banded matrix stored by diagonals: `diags[d][i] = A[i+d][i]`
/// for d = 0..=bw (lower triangle).
#[derive(Debug, Clone)]
pub struct BandedSym {
    pub n: usize,
    pub bw: usize,
    pub diags: Vec<Vec<f64>>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let diags = (0..=bw).map(|d| vec![0.0; n - d]).collect();
        BandedSym { n, bw, diags }
    }

    /// Adds `v` to A[i][j] (and its mirror); |i−j| must be within the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        assert!(d <= self.bw, "entry ({i},{j}) outside bandwidth {}", self.bw);
        self.diags[d][lo] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.diags[0][i] * x[i];
        }
        for d in 1..=self.bw {
            for i in 0..self.n - d {
                let a = self.diags[d][i];
                y[i + d] += a * x[i];
                y[i] += a * x[i + d];
            }
        }
        y
    }

    /// LDLᵀ factorization of A − σI (no pivoting; the matrices this crate
    /// builds are strongly diagonally dominant away from their few small
    /// eigenvalues, and shifts are nudged off exact pivots by the callers).
    pub fn ldl(&self, sigma: f64) -> Result<BandedLdl> {
        let n = self.n;
        let bw = self.bw;
        let mut d = vec![0.0; n];
        // l[dd][i] = L[i+dd+1][i]
        let mut l: Vec<Vec<f64>> = (0..bw).map(|dd| vec![0.0; n.saturating_sub(dd + 1)]).collect();
        for j in 0..n {
            let mut dj = self.diags[0][j] - sigma;
            let k0 = j.saturating_sub(bw);
            for k in k0..j {
                let ljk = l[j - k - 1][k];
                dj -= ljk * ljk * d[k];
            }
            if dj == 0.0 || !dj.is_finite() {
                return Err(Error::numerical(format!(
                    "zero or non-finite pivot at row {j} in banded LDL^T"
                )));
            }
            d[j] = dj;
            for i in j + 1..(j + bw + 1).min(n) {
                let mut a = if i - j <= bw { self.diags[i - j][j] } else { 0.0 };
                let k0 = i.saturating_sub(bw);
                for k in k0..j {
                    a -= l[i - k - 1][k] * l[j - k - 1][k] * d[k];
                }
                l[i - j - 1][j] = a / dj;
            }
        }
        Ok(BandedLdl { n, bw, d, l })
    }

    /// Number of eigenvalues strictly below `sigma` (Sylvester's law applied
    /// to the LDLᵀ inertia). Retries with a nudged shift on pivot breakdown.
    pub fn count_below(&self, sigma: f64) -> usize {
        let mut s = sigma;
        for _ in 0..8 {
            match self.ldl(s) {
                Ok(f) => return f.d.iter().filter(|&&v| v < 0.0).count(),
                Err(_) => s += 1e-12 * (1.0 + sigma.abs()),
            }
        }
        // Deterministic matrices built by this crate never get here.
        panic!("inertia computation failed near sigma = {sigma}");
    }
}

/// LDLᵀ factors of a shifted banded matrix.
pub struct BandedLdl {
    n: usize,
    bw: usize,
    d: Vec<f64>,
    l: Vec<Vec<f64>>,
}

impl BandedLdl {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        // L y = b
        for j in 0..self.n {
            let xj = x[j];
            for i in j + 1..(j + self.bw + 1).min(self.n) {
                x[i] -= self.l[i - j - 1][j] * xj;
            }
        }
        // D z = y
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        // Lᵀ x = z
        for j in (0..self.n).rev() {
            let mut s = x[j];
            for i in j + 1..(j + self.bw + 1).min(self.n) {
                s -= self.l[i - j - 1][j] * x[i];
            }
            x[j] = s;
        }
        x
    }
}

fn normalize_inplace(x: &mut [f64]) -> f64 {
    let n = (x.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
    n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of an eigenpair computation.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Inverse iteration for the eigenpair of `a` nearest `sigma`, optionally
/// restricted to the orthogonal complement of the (orthonormalized)
/// constraint vectors. Constrained solves go through the bordered system
/// [[A−σI, Z], [Zᵀ, 0]] eliminated with the banded factor.
pub fn eig_nearest(
    a: &BandedSym,
    sigma: f64,
    constraints: &[Vec<f64>],
    start: Option<&[f64]>,
    iters: usize,
) -> Result<EigPair> {
    let n = a.n;
    // Orthonormalize the constraints (for the final projection).
    let mut z: Vec<Vec<f64>> = Vec::new();
    for c in constraints {
        let mut v = c.clone();
        for u in &z {
            let p = dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        if normalize_inplace(&mut v) > 1e-12 {
            z.push(v);
        }
    }
    let project = |x: &mut Vec<f64>| {
        for u in &z {
            let p = dot(x, u);
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi -= p * ui;
            }
        }
    };

    let mut x: Vec<f64> = match start {
        Some(s) => s.to_vec(),
        None => (0..n).map(|i| (0.37 * (i as f64 + 1.0)).sin()).collect(),
    };
    project(&mut x);
    if normalize_inplace(&mut x) == 0.0 {
        return Err(Error::numerical("inverse iteration started from a zero vector"));
    }

    let mut value = sigma;
    let mut factor = a.ldl(sigma)?;
    // Precompute W = (A−σ)⁻¹Z and the small Schur complement S = ZᵀW.
    let mut w: Vec<Vec<f64>> = z.iter().map(|c| factor.solve(c)).collect();
    let mut schur = schur_inv(&z, &w)?;

    for it in 0..iters {
        // y = (A−σ)⁻¹x, then eliminate the constraint block.
        let mut y = factor.solve(&x);
        if !z.is_empty() {
            let rhs: Vec<f64> = z.iter().map(|c| dot(c, &y)).collect();
            let mu = &schur * DVector::from_vec(rhs);
            for (j, wj) in w.iter().enumerate() {
                for (yi, wji) in y.iter_mut().zip(wj) {
                    *yi -= mu[j] * wji;
                }
            }
            project(&mut y);
        }
        if normalize_inplace(&mut y) == 0.0 {
            return Err(Error::numerical("inverse iteration collapsed to zero"));
        }
        let ay = a.matvec(&y);
        let new_value = dot(&y, &ay);
        let converged = (new_value - value).abs() < 1e-14 * (1.0 + new_value.abs());
        value = new_value;
        x = y;
        if converged && it >= 3 {
            break;
        }
        // One Rayleigh-quotient re-shift near the end sharpens the estimate.
        if it == iters.saturating_sub(3) {
            if let Ok(f2) = a.ldl(value + 1e-13) {
                factor = f2;
                w = z.iter().map(|c| factor.solve(c)).collect();
                schur = schur_inv(&z, &w)?;
            }
        }
    }
    Ok(EigPair { value, vector: x })
}

fn schur_inv(z: &[Vec<f64>], w: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = z.len();
    if m == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let s = DMatrix::from_fn(m, m, |i, j| dot(&z[i], &w[j]));
    s.try_inverse()
        .ok_or_else(|| Error::numerical("singular constraint Schur complement"))
}

/// Smallest eigenvalue of `a` located by inertia bisection on [lo, hi]
/// followed by inverse iteration at the bracket midpoint.
pub fn smallest_eig(a: &BandedSym, lo: f64, hi: f64) -> Result<EigPair> {
    if a.count_below(lo) != 0 {
        return Err(Error::numerical(format!(
            "eigenvalues exist below the bracket start {lo}"
        )));
    }
    let mut lo = lo;
    let mut hi = hi;
    if a.count_below(hi) == 0 {
        return Err(Error::numerical(format!(
            "no eigenvalue below {hi}; bracket is empty"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if a.count_below(mid) == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * (1.0 + hi.abs()) {
            break;
        }
    }
    eig_nearest(a, 0.5 * (lo + hi), &[], None, 40)
}

/// Linear least squares min‖C·x − y‖₂ through the normal equations, with
/// column equilibration. Returns the coefficients and the residual (RMS, max).
pub fn lsq(columns: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let m = columns.len();
    if m == 0 {
        return Err(Error::config("least squares needs at least one column"));
    }
    let rows = y.len();
    let mut scales = Vec::with_capacity(m);
    for c in columns {
        if c.len() != rows {
            return Err(Error::config("least-squares column length mismatch"));
        }
        let s = (c.iter().map(|v| v * v).sum::<f64>()).sqrt();
        scales.push(if s > 0.0 { s } else { 1.0 });
    }
    let g = DMatrix::from_fn(m, m, |i, j| dot(&columns[i], &columns[j]) / (scales[i] * scales[j]));
    let rhs = DVector::from_fn(m, |i, _| dot(&columns[i], y) / scales[i]);
    let sol = g
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular least-squares system"))?;
    let coeff: Vec<f64> = sol.iter().zip(&scales).map(|(v, s)| v / s).collect();
    let mut rss = 0.0;
    let mut rmax = 0.0f64;
    for r in 0..rows {
        let fit: f64 = coeff.iter().zip(columns).map(|(c, col)| c * col[r]).sum();
        let res = y[r] - fit;
        rss += res * res;
        rmax = rmax.max(res.abs());
    }
    Ok((coeff, (rss / rows as f64).sqrt(), rmax))
}

/// Brent's method for a root of `f` on a sign-changing bracket [a, b].
pub fn brent_root(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::numerical(format!(
            "brent_root needs a sign change on [{a}, {b}] (f = {fa:.3e}, {fb:.3e})"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            (a, b, c) = (b, c, b);
            (fa, fb, fc) = (fb, fc, fb);
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let (qq, r) = (fa / fc, fb / fc);
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Err(Error::numerical("brent_root did not converge"))
}

/// Golden-section minimization of a unimodal function on [a, b].
pub fn golden_min(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let xm = 0.5 * (a + b);
    (xm, f(xm))
}

/// Least-squares slope and intercept of ln y against ln x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::config("slope fit needs at least two matched points"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    if lx.iter().chain(&ly).any(|v| !v.is_finite()) {
        return Err(Error::numerical("slope fit hit a nonpositive value"));
    }
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Adaptive Simpson quadrature of a smooth function on [a, b].
pub fn quad_adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Angular frequency of a sampled sinusoid a(t_j) = Σ c_± e^{±iωt_j} on a
/// uniform time step, from the exact three-term recursion
/// a_{j+1} + a_{j−1} = 2cos(ω·dt)·a_j, solved in least squares.
pub fn sampled_frequency(series: &[f64], dt: f64) -> Result<f64> {
    if series.len() < 3 {
        return Err(Error::config("frequency fit needs at least three samples"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 1..series.len() - 1 {
        num += series[j] * (series[j + 1] + series[j - 1]);
        den += 2.0 * series[j] * series[j];
    }
    if den < 1e-300 {
        return Err(Error::numerical("frequency fit on an identically zero series"));
    }
    let q = num / den;
    if !(-1.0..=1.0).contains(&q) {
        return Err(Error::numerical(format!(
            "three-term recursion gave cos(w dt) = {q}, outside [-1, 1]"
        )));
    }
    Ok(q.acos() / dt)
}
