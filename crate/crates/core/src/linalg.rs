//! Dense symmetric eigendecomposition and statistical leverage scores.
//!
//! The solver reduces the input to tridiagonal form with Householder
//! reflections and then runs implicit-shift QL. Two paths share the
//! reduction:
//!
//! * [`eig_sym`] accumulates every rotation and returns the full basis.
//! * [`leverage_scores`] only needs the leading eigenvectors, so it runs QL
//!   on the eigenvalues alone, picks the rank, and recovers the leading
//!   vectors by inverse iteration on the tridiagonal matrix followed by a
//!   back-transform through the stored reflectors. This keeps the per-call
//!   cost near the 4/3·m³ of the reduction for the kernel sizes the
//!   strategies produce.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_RTOL * λ₁` reject a matrix as not PSD.
pub const PSD_RTOL: f64 = 1e-6;
/// Entries at or below this magnitude are skipped by the sign convention.
const SIGN_TOL: f64 = 1e-12;
const MAX_QL_ITERS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    /// Eigenvalues in non-increasing order.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector paired with `eigenvalues[i]`.
    pub eigenvectors: Array2<f64>,
}

impl EigenDecomposition {
    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (mut col, &lambda) in scaled.columns_mut().into_iter().zip(&self.eigenvalues) {
            col *= lambda;
        }
        scaled.dot(&u.t())
    }
}

/// Leverage scores of an SPSD matrix relative to its best rank-`rank`
/// approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageProfile {
    /// Squared row norms of the leading `rank` eigenvectors; each in [0, 1].
    pub unscaled: Vec<f64>,
    /// `unscaled * m / rank`; averages to one.
    pub scaled: Vec<f64>,
    pub rank: usize,
    pub tau: f64,
}

impl LeverageProfile {
    pub fn len(&self) -> usize {
        self.unscaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unscaled.is_empty()
    }
}

/// Checks shape, finiteness and symmetry; returns the dimension.
pub fn validate_symmetric(a: &Array2<f64>) -> Result<usize> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::DimensionMismatch { expected: rows, got: cols });
    }
    if rows == 0 {
        return Err(Error::Empty("matrix has no rows"));
    }
    for ((i, j), &v) in a.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row: i, col: j });
        }
    }
    for i in 0..rows {
        for j in (i + 1)..rows {
            let diff = (a[[i, j]] - a[[j, i]]).abs();
            if diff > SYMMETRY_TOL {
                return Err(Error::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok(rows)
}

/// Householder reflector `I - beta v vᵀ` acting on coordinates `offset..n`.
#[derive(Debug, Clone)]
struct Reflector {
    offset: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    fn apply(&self, x: &mut [f64]) {
        let tail = &mut x[self.offset..];
        let dot: f64 = self.v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
        let s = self.beta * dot;
        for (t, &v) in tail.iter_mut().zip(&self.v) {
            *t -= s * v;
        }
    }
}

/// `A = Q T Qᵀ` with `T` symmetric tridiagonal and `Q` a product of reflectors.
#[derive(Debug, Clone)]
struct Tridiagonal {
    n: usize,
    diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    off: Vec<f64>,
    reflectors: Vec<Reflector>,
}

impl Tridiagonal {
    fn reduce(a: &Array2<f64>) -> Tridiagonal {
        let n = a.nrows();
        // Row-major working copy, symmetrized to absorb sub-tolerance asymmetry.
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                w[i * n + j] = 0.5 * (a[[i, j]] + a[[j, i]]);
            }
        }
        let mut off = vec![0.0; n.saturating_sub(1)];
        let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
        let mut p = vec![0.0; n];

        for k in 0..n.saturating_sub(2) {
            let start = k + 1;
            let len = n - start;
            let x: Vec<f64> = w[k * n + start..k * n + n].to_vec();
            if x[1..].iter().all(|&v| v == 0.0) {
                off[k] = x[0];
                continue;
            }
            // Work with x / max|x| so tiny columns do not underflow; the
            // reflector is unchanged by rescaling v.
            let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let mut v: Vec<f64> = x.iter().map(|t| t / scale).collect();
            let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            let alpha_scaled = if v[0] >= 0.0 { -norm } else { norm };
            let alpha = alpha_scaled * scale;
            v[0] -= alpha_scaled;
            let vtv: f64 = v.iter().map(|t| t * t).sum();
            let beta = 2.0 / vtv;

            // p = beta * B v over the trailing block B.
            for i in 0..len {
                let row = &w[(start + i) * n + start..(start + i) * n + n];
                let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                p[i] = beta * dot;
            }
            let ptv: f64 = p[..len].iter().zip(&v).map(|(a, b)| a * b).sum();
            let half = 0.5 * beta * ptv;
            for i in 0..len {
                p[i] -= half * v[i];
            }
            // B -= v pᵀ + p vᵀ
            for i in 0..len {
                let vi = v[i];
                let pi = p[i];
                let row = &mut w[(start + i) * n + start..(start + i) * n + n];
                for ((b, &vj), &pj) in row.iter_mut().zip(&v).zip(&p[..len]) {
                    *b -= vi * pj + pi * vj;
                }
            }
            off[k] = alpha;
            reflectors.push(Reflector { offset: start, v, beta });
        }
        if n >= 2 {
            off[n - 2] = w[(n - 2) * n + (n - 1)];
        }
        let diag = (0..n).map(|i| w[i * n + i]).collect();
        Tridiagonal { n, diag, off, reflectors }
    }

    /// Explicit `Qᵀ`, row-major, so that row `i` is column `i` of `Q`.
    fn q_transposed(&self) -> Vec<f64> {
        let n = self.n;
        let mut qt = vec![0.0; n * n];
        for i in 0..n {
            qt[i * n + i] = 1.0;
        }
        // Row i of Qᵀ is Q e_i.
        for row in qt.chunks_mut(n) {
            self.back_transform(row);
        }
        qt
    }

    /// `Q z`.
    fn back_transform(&self, z: &mut [f64]) {
        for h in self.reflectors.iter().rev() {
            h.apply(z);
        }
    }

    fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut d = self.diag.clone();
        let mut e = self.off.clone();
        ql_implicit(&mut d, &mut e, None)?;
        sort_descending(&mut d);
        Ok(d)
    }

    fn full(&self) -> Result<EigenDecomposition> {
        let n = self.n;
        let mut d = self.diag.clone();
        let mut e = self.off.clone();
        let mut zt = self.q_transposed();
        ql_implicit(&mut d, &mut e, Some(&mut zt))?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
        let eigenvalues = order.iter().map(|&i| d[i]).collect();
        let mut vectors = Array2::zeros((n, n));
        for (col, &src) in order.iter().enumerate() {
            let mut v = zt[src * n..(src + 1) * n].to_vec();
            fix_sign(&mut v);
            for (r, x) in v.into_iter().enumerate() {
                vectors[[r, col]] = x;
            }
        }
        Ok(EigenDecomposition { eigenvalues, eigenvectors: vectors })
    }

    /// Unit eigenvectors of `A` for the given eigenvalues of `T`, one column
    /// each, mutually orthonormal.
    fn eigenvectors_for(&self, values: &[f64]) -> Array2<f64> {
        let n = self.n;
        let scale = self
            .diag
            .iter()
            .map(|v| v.abs())
            .chain(self.off.iter().map(|v| v.abs()))
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let tiny = f64::EPSILON * scale;
        let mut found: Vec<Vec<f64>> = Vec::with_capacity(values.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1e7e);

        for (j, &lambda) in values.iter().enumerate() {
            // Separate shifts inside a cluster so the factorizations differ.
            let mut shift = lambda;
            if j > 0 && (values[j - 1] - lambda).abs() <= 10.0 * tiny {
                shift = lambda - (j as f64) * tiny;
            }
            let lu = TridiagonalLu::factor(&self.diag, &self.off, shift, tiny);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            orthonormalize(&mut x, &found);
            for iter in 0..12 {
                lu.solve(&mut x);
                orthonormalize(&mut x, &found);
                if iter >= 2 && residual(&self.diag, &self.off, lambda, &x) <= 1e3 * tiny {
                    break;
                }
            }
            found.push(x);
        }

        let mut out = Array2::zeros((n, values.len()));
        for (col, mut z) in found.into_iter().enumerate() {
            self.back_transform(&mut z);
            fix_sign(&mut z);
            for (r, x) in z.into_iter().enumerate() {
                out[[r, col]] = x;
            }
        }
        out
    }
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. On return `d` holds
/// the eigenvalues (unordered); when `zt` is given, row `i` of it is rotated
/// into the eigenvector for `d[i]`.
fn ql_implicit(d: &mut [f64], off: &mut [f64], mut zt: Option<&mut Vec<f64>>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;

    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERS {
                    return Err(Error::InvalidParameter(format!(
                        "QL iteration did not converge for eigenvalue {l}"
                    )));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = zt.as_deref_mut() {
                        let (head, tail) = z.split_at_mut((i + 1) * n);
                        let zi = &mut head[i * n..];
                        let zi1 = &mut tail[..n];
                        for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                            let hb = *b;
                            *b = s * *a + c * hb;
                            *a = c * *a - s * hb;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// LU with partial pivoting of `T - shift·I`; `U` has two superdiagonals.
struct TridiagonalLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    fn factor(diag: &[f64], off: &[f64], shift: f64, tiny: f64) -> TridiagonalLu {
        let n = diag.len();
        let mut u0: Vec<f64> = diag.iter().map(|d| d - shift).collect();
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        u1[..n - 1].copy_from_slice(off);
        let mut mult = vec![0.0; n.saturating_sub(1)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        let nonzero = |x: f64| if x == 0.0 { tiny } else { x };

        for i in 0..n.saturating_sub(1) {
            let sub = off[i];
            let next_diag = u0[i + 1];
            let next_super = if i + 2 < n { off[i + 1] } else { 0.0 };
            if u0[i].abs() >= sub.abs() {
                let piv = nonzero(u0[i]);
                u0[i] = piv;
                let l = sub / piv;
                mult[i] = l;
                u0[i + 1] = next_diag - l * u1[i];
                u1[i + 1] = next_super;
            } else {
                let l = u0[i] / sub;
                let old_super = u1[i];
                mult[i] = l;
                swapped[i] = true;
                u0[i] = sub;
                u1[i] = next_diag;
                u2[i] = next_super;
                u0[i + 1] = old_super - l * next_diag;
                u1[i + 1] = -l * next_super;
            }
        }
        if n > 0 {
            u0[n - 1] = nonzero(u0[n - 1]);
        }
        TridiagonalLu { u0, u1, u2, mult, swapped }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.mult[i] * b[i];
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            if i + 1 < n {
                acc -= self.u1[i] * b[i + 1];
            }
            if i + 2 < n {
                acc -= self.u2[i] * b[i + 2];
            }
            b[i] = acc / self.u0[i];
        }
    }
}

fn residual(diag: &[f64], off: &[f64], lambda: f64, x: &[f64]) -> f64 {
    let n = x.len();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let mut y = (diag[i] - lambda) * x[i];
        if i > 0 {
            y += off[i - 1] * x[i - 1];
        }
        if i + 1 < n {
            y += off[i] * x[i + 1];
        }
        worst = worst.max(y.abs());
    }
    worst
}

/// Two passes of Gram-Schmidt against `basis`, then normalization.
fn orthonormalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let dot: f64 = q.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi -= dot * qi;
            }
        }
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for xi in x.iter_mut() {
            *xi /= norm;
        }
    }
}

/// First entry with magnitude above `SIGN_TOL` is made positive.
fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > SIGN_TOL) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn sort_descending(v: &mut [f64]) {
    v.sort_by(|a, b| b.total_cmp(a));
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back non-increasing; each eigenvector's first entry with
/// magnitude above 1e-12 is positive, so results are reproducible.
pub fn eig_sym(a: &Array2<f64>) -> Result<EigenDecomposition> {
    validate_symmetric(a)?;
    Tridiagonal::reduce(a).full()
}

/// Eigenvalues only, non-increasing.
pub fn eigvals_sym(a: &Array2<f64>) -> Result<Vec<f64>> {
    validate_symmetric(a)?;
    Tridiagonal::reduce(a).eigenvalues()
}

/// All eigenvalues plus the eigenvectors of the `count` largest.
pub fn top_eigenpairs(a: &Array2<f64>, count: usize) -> Result<EigenDecomposition> {
    let n = validate_symmetric(a)?;
    if count > n {
        return Err(Error::InvalidParameter(format!("requested {count} eigenvectors of a {n}x{n} matrix")));
    }
    let tri = Tridiagonal::reduce(a);
    let eigenvalues = tri.eigenvalues()?;
    let eigenvectors = tri.eigenvectors_for(&eigenvalues[..count]);
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

/// Smallest `k` whose leading eigenvalues hold at least a `tau` fraction of
/// the spectrum's mass. Eigenvalues at or below `len * eps * max` are
/// rounding noise and count as zero, so `tau = 1` gives the numerical rank.
pub fn rank_selector(lambda: &[f64], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {tau}")));
    }
    if lambda.is_empty() {
        return Err(Error::Empty("spectrum"));
    }
    if let Some(bad) = lambda.iter().find(|&&l| !l.is_finite() || l < -1e-10) {
        return Err(Error::InvalidParameter(format!("eigenvalue {bad} is negative")));
    }
    let mut sorted: Vec<f64> = lambda.iter().map(|&l| l.max(0.0)).collect();
    sort_descending(&mut sorted);
    let floor = sorted[0] * sorted.len() as f64 * f64::EPSILON;
    sorted.iter_mut().filter(|l| **l <= floor).for_each(|l| *l = 0.0);
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    // Each surviving value moves the running sum, so it equals `total` for
    // the first time at the last nonzero eigenvalue.
    let mut cumulative = 0.0;
    for (i, &l) in sorted.iter().enumerate() {
        cumulative += l;
        if cumulative >= tau * total {
            return Ok(i + 1);
        }
    }
    Ok(sorted.len())
}

/// Clamps floating-point noise below zero; rejects genuinely indefinite spectra.
fn clamp_spectrum(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let bottom = eigenvalues.last().copied().unwrap_or(0.0);
    if bottom < -PSD_RTOL * top.max(0.0) {
        return Err(Error::NotPsd { min: bottom, max: top });
    }
    Ok(eigenvalues.iter().map(|&l| l.max(0.0)).collect())
}

/// Leverage scores of an SPSD matrix with the rank picked by
/// [`rank_selector`] at threshold `tau`.
pub fn leverage_scores(a: &Array2<f64>, tau: f64) -> Result<LeverageProfile> {
    let m = validate_symmetric(a)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 1], got {tau}")));
    }
    let tri = Tridiagonal::reduce(a);
    let eigenvalues = tri.eigenvalues()?;
    let clamped = clamp_spectrum(&eigenvalues)?;
    let rank = rank_selector(&clamped, tau)?;
    let leading = tri.eigenvectors_for(&eigenvalues[..rank]);
    Ok(profile_from_basis(&leading, m, rank, tau))
}

/// Leverage profile from an already computed decomposition.
pub fn leverage_from_decomposition(eig: &EigenDecomposition, tau: f64) -> Result<LeverageProfile> {
    let clamped = clamp_spectrum(&eig.eigenvalues)?;
    let rank = rank_selector(&clamped, tau)?;
    let m = eig.eigenvectors.nrows();
    let leading = eig.eigenvectors.slice(ndarray::s![.., ..rank]).to_owned();
    Ok(profile_from_basis(&leading, m, rank, tau))
}

fn profile_from_basis(u1: &Array2<f64>, m: usize, rank: usize, tau: f64) -> LeverageProfile {
    let unscaled: Vec<f64> = u1.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let factor = m as f64 / rank as f64;
    let scaled = unscaled.iter().map(|l| l * factor).collect();
    LeverageProfile { unscaled, scaled, rank, tau }
}
