//! Kernel SVM trained with SMO, plus Platt posterior calibration.
//!
//! The solver minimizes the standard C-SVC dual
//! `0.5 αᵀQα - Σα` subject to `0 ≤ α ≤ C`, `Σ yα = 0`, with
//! `Q_ij = y_i y_j K(x_i, x_j)`, choosing the maximal violating pair at
//! every step. Training rows are put into a canonical order first, so the
//! model does not depend on how the caller ordered its examples.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// KKT gap at which SMO stops.
pub const SMO_TOLERANCE: f64 = 1e-3;
/// Curvature floor for pairs whose kernel rows coincide.
const TAU: f64 = 1e-12;
/// Gradient norm at which Platt's Newton iterations stop.
pub const PLATT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// `α_i y_i` for every support vector.
    pub support_coefficients: Vec<f64>,
    pub bias: f64,
    pub support_vectors: Array2<f64>,
    pub spec: KernelSpec,
    pub c_penalty: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the KKT gap closed.
    pub converged: bool,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    /// `f(x) = Σ coef_i K(sv_i, x) + bias` for every row of `x`.
    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        if x.nrows() == 0 {
            return Ok(Vec::new());
        }
        if self.support_coefficients.is_empty() {
            return Ok(vec![self.bias; x.nrows()]);
        }
        let k = self.spec.cross(x, self.support_vectors.view())?;
        Ok(k.rows()
            .into_iter()
            .map(|row| row.iter().zip(&self.support_coefficients).map(|(k, c)| k * c).sum::<f64>() + self.bias)
            .collect())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Label>> {
        Ok(self.decision_values(x)?.into_iter().map(Label::from_decision).collect())
    }

    /// Largest violation of `0 ≤ α ≤ C` and `|Σ α y|`, recovered from the
    /// stored coefficients.
    pub fn dual_residuals(&self) -> (f64, f64) {
        let box_violation = self
            .support_coefficients
            .iter()
            .map(|c| (c.abs() - self.c_penalty).max(0.0))
            .fold(0.0, f64::max);
        let balance = self.support_coefficients.iter().sum::<f64>().abs();
        (box_violation, balance)
    }
}

/// Lexicographic order on feature rows, then label.
fn canonical_order(x: ArrayView2<f64>, y: &[Label]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| {
        for (u, v) in x.row(a).iter().zip(x.row(b).iter()) {
            match u.total_cmp(v) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        y[a].cmp(&y[b])
    });
    order
}

pub fn train(x: ArrayView2<f64>, labels: &[Label], spec: &KernelSpec, c: f64) -> Result<SvmModel> {
    let n = labels.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: n });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {c}")));
    }
    spec.validate()?;
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }

    let order = canonical_order(x, labels);
    let xs = x.select(Axis(0), &order);
    let y: Vec<f64> = order.iter().map(|&i| labels[i].sign()).collect();
    let k = spec.cross(xs.view(), xs.view())?;

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let cap = (10 * n * n).max(10_000);
    let mut iterations = 0;
    let mut converged = false;

    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    while iterations < cap {
        let mut i = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], y[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < SMO_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;

        // Move along d_i = y_i, d_j = -y_j by a step t ≥ 0.
        let eta = (k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]]).max(TAU);
        let mut step = (g_max - g_min) / eta;
        let room_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let room_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        step = step.min(room_i).min(room_j);

        alpha[i] += y[i] * step;
        alpha[j] -= y[j] * step;
        // Snap to the box so bound membership is exact.
        for idx in [i, j] {
            if alpha[idx] < 1e-14 * c {
                alpha[idx] = 0.0;
            } else if alpha[idx] > c * (1.0 - 1e-14) {
                alpha[idx] = c;
            }
        }
        for t in 0..n {
            grad[t] += y[t] * step * (k[[t, i]] - k[[t, j]]);
        }
    }
    if !converged {
        log::warn!("SMO stopped at the iteration cap ({cap}) before reaching tolerance");
    }

    let bias = -compute_rho(&alpha, &y, &grad, c);
    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        support_coefficients: sv.iter().map(|&t| alpha[t] * y[t]).collect(),
        bias,
        support_vectors: xs.select(Axis(0), &sv),
        spec: *spec,
        c_penalty: c,
        iterations,
        converged,
    })
}

/// Offset `rho` with `f(x) = Σ α y K - rho`: the mean of `y G` over free
/// vectors, or the midpoint of the feasible interval when none are free.
fn compute_rho(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// A trained SVM, or a constant answer when the labeled set has one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Svm(SvmModel),
    Constant(Label),
}

impl Predictor {
    /// Trains an SVM, falling back to a constant predictor on single-class input.
    pub fn fit(x: ArrayView2<f64>, labels: &[Label], spec: &KernelSpec, c: f64) -> Result<Predictor> {
        match train(x, labels, spec, c) {
            Ok(m) => Ok(Predictor::Svm(m)),
            Err(Error::SingleClass) => {
                let label = labels.first().copied().ok_or(Error::Empty("no labeled examples"))?;
                Ok(Predictor::Constant(label))
            }
            Err(e) => Err(e),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Predictor::Constant(_))
    }

    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            Predictor::Svm(m) => m.decision_values(x),
            Predictor::Constant(l) => Ok(vec![l.sign(); x.nrows()]),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Label>> {
        Ok(self.decision_values(x)?.into_iter().map(Label::from_decision).collect())
    }
}

/// `p(y = 1 | f) = 1 / (1 + exp(slope * f + intercept))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattCalibration {
    pub slope: f64,
    pub intercept: f64,
}

impl PlattCalibration {
    pub fn probability(&self, f: f64) -> f64 {
        let z = self.slope * f + self.intercept;
        // Evaluate on the side that cannot overflow.
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Negative log-likelihood of the smoothed targets; shared with tests.
pub fn platt_objective(f: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    f.iter()
        .zip(targets)
        .map(|(&fi, &t)| {
            let z = fi * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Smoothed targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)`.
pub fn platt_targets(labels: &[Label]) -> Vec<f64> {
    let pos = labels.iter().filter(|l| l.is_positive()).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    labels.iter().map(|l| if l.is_positive() { hi } else { lo }).collect()
}

/// Fits Platt's sigmoid by Newton's method with backtracking.
pub fn platt_fit(decision_values: &[f64], labels: &[Label]) -> Result<PlattCalibration> {
    if decision_values.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: decision_values.len() });
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    if let Some(i) = decision_values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    let f = decision_values;
    let t = platt_targets(labels);
    let neg = (labels.len() - pos) as f64;
    let mut a = 0.0;
    let mut b = ((neg + 1.0) / (pos as f64 + 1.0)).ln();
    let mut fval = platt_objective(f, &t, a, b);
    const RIDGE: f64 = 1e-12;
    const MIN_STEP: f64 = 1e-10;

    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (RIDGE, RIDGE, 0.0, 0.0, 0.0);
        for (&fi, &ti) in f.iter().zip(&t) {
            let z = fi * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
            let d1 = ti - p;
            g1 += fi * d1;
            g2 += d1;
        }
        if g1.hypot(g2) < PLATT_TOLERANCE {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = platt_objective(f, &t, na, nb);
            if nf <= fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    Ok(PlattCalibration { slope: a, intercept: b })
}

/// `p(y = 1 | x)` for every row of `x`.
pub fn posterior(model: &Predictor, calibration: &PlattCalibration, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(model.decision_values(x)?.into_iter().map(|f| calibration.probability(f)).collect())
}

/// `1 - max(p, 1 - p)`; 0.5 at maximal doubt.
pub fn uncertainty(p: f64) -> f64 {
    1.0 - p.max(1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const P: Label = Label::Positive;
    const N: Label = Label::Negative;

    #[test]
    fn separable_pair() {
        let x = array![[-1.0], [1.0]];
        let m = train(x.view(), &[N, P], &KernelSpec::linear(), 1.0).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), vec![N, P]);
        let f = m.decision_values(array![[-3.0], [0.5]].view()).unwrap();
        assert!(f[0] < 0.0 && f[1] > 0.0);
        assert!(m.decision_values(Array2::zeros((0, 1)).view()).unwrap().is_empty());
        assert!(m.decision_values(Array2::zeros((1, 2)).view()).is_err());
    }

    #[test]
    fn xor_rbf() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [N, N, P, P];
        let m = train(x.view(), &y, &KernelSpec::rbf(1.0), 10.0).unwrap();
        assert!(m.converged);
        assert_eq!(m.predict(x.view()).unwrap(), y.to_vec());
        let (box_v, bal) = m.dual_residuals();
        assert!(box_v == 0.0 && bal <= 1e-6);
    }

    #[test]
    fn conflicting_duplicates() {
        let x = array![[0.0], [0.0], [0.0], [0.0]];
        let y = [N, P, N, P];
        let m = train(x.view(), &y, &KernelSpec::rbf(1.0), 1.0).unwrap();
        let pred = m.predict(x.view()).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 4.0;
        assert!(acc <= 0.5);
    }

    #[test]
    fn single_class_rejected_and_fallback() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(train(x.view(), &[P, P], &KernelSpec::linear(), 1.0), Err(Error::SingleClass)));
        let p = Predictor::fit(x.view(), &[N, N], &KernelSpec::linear(), 1.0).unwrap();
        assert!(p.is_constant());
        assert_eq!(p.predict(x.view()).unwrap(), vec![N, N]);
    }

    #[test]
    fn decision_values_match_direct_sum() {
        let x = array![[0.0, 0.1], [1.0, 0.9], [0.2, 1.4], [1.1, -0.3], [0.5, 0.5], [1.5, 1.2]];
        let y = [N, P, P, N, N, P];
        let spec = KernelSpec::rbf(0.7);
        let m = train(x.view(), &y, &spec, 2.0).unwrap();
        let probe = array![[0.3, 0.3], [2.0, -1.0], [0.0, 0.0]];
        let got = m.decision_values(probe.view()).unwrap();
        for (r, g) in probe.rows().into_iter().zip(got) {
            let mut s = m.bias;
            for (sv, c) in m.support_vectors.rows().into_iter().zip(&m.support_coefficients) {
                let d2: f64 = sv.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                s += c * (-0.7 * d2).exp();
            }
            assert!((s - g).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_decision_maps_to_positive() {
        assert_eq!(Label::from_decision(0.0), P);
        assert_eq!(Label::from_decision(-0.0), P);
    }

    #[test]
    fn platt_symmetric() {
        let cal = platt_fit(&[-1.0, 1.0], &[N, P]).unwrap();
        assert!((cal.probability(0.0) - 0.5).abs() < 1e-12);
        assert!(cal.slope < 0.0);
        assert!(platt_fit(&[1.0, 2.0], &[P, P]).is_err());
    }

    /// Plain gradient descent on the same objective, started from zero.
    fn descend(f: &[f64], t: &[f64]) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        let lr = 0.5 / f.len() as f64;
        for _ in 0..400_000 {
            let (mut ga, mut gb) = (0.0, 0.0);
            for (&fi, &ti) in f.iter().zip(t) {
                let p = 1.0 / (1.0 + (a * fi + b).exp());
                ga += fi * (ti - p);
                gb += ti - p;
            }
            a -= lr * ga;
            b -= lr * gb;
            if ga.hypot(gb) < 1e-11 {
                break;
            }
        }
        (a, b)
    }

    #[test]
    fn platt_matches_gradient_descent() {
        let f = [-2.1, -1.7, -1.2, -0.9, -0.8, -0.4, -0.3, -0.1, 0.05, 0.2, 0.3, 0.45, 0.6, 0.8, 1.0, 1.1, 1.4, 1.9, -0.5, 0.7];
        let y = [N, N, N, N, P, N, N, P, N, P, P, N, P, P, P, P, P, P, N, N];
        let cal = platt_fit(&f, &y).unwrap();
        let (a, b) = descend(&f, &platt_targets(&y));
        assert!((cal.slope - a).abs() < 1e-4, "{} vs {a}", cal.slope);
        assert!((cal.intercept - b).abs() < 1e-4, "{} vs {b}", cal.intercept);
    }

    #[test]
    fn posterior_values() {
        let cal = PlattCalibration { slope: -1.0, intercept: 0.0 };
        let model = Predictor::Constant(P);
        let p = posterior(&model, &cal, array![[0.0]].view()).unwrap();
        assert!((p[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(uncertainty(0.5), 0.5);
        assert!(uncertainty(cal.probability(1e6)) < 1e-12);
        for (f, a, b) in [(0.3, -2.0, 0.1), (-1.0, -0.5, 0.2), (2.5, -1.5, -0.7), (0.0, -3.0, 1.0), (-4.0, -0.1, 0.0)] {
            let c = PlattCalibration { slope: a, intercept: b };
            let manual = 1.0 / (1.0 + f64::exp(a * f + b));
            assert!((c.probability(f) - manual).abs() < 1e-15);
        }
    }

    fn separable_sample() -> impl Strategy<Value = (Vec<[f64; 2]>, Vec<Label>)> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            prop::collection::vec(((-5.0f64..5.0), (-5.0f64..5.0)), 2..20),
        )
            .prop_filter_map("needs both classes with a margin", |(wx, wy, pts)| {
                let norm = wx.hypot(wy);
                if norm < 0.1 {
                    return None;
                }
                let (wx, wy) = (wx / norm, wy / norm);
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (px, py) in pts {
                    let s = wx * px + wy * py;
                    if s.abs() < 0.2 {
                        continue;
                    }
                    xs.push([px, py]);
                    ys.push(Label::from_decision(s));
                }
                let pos = ys.iter().filter(|l| l.is_positive()).count();
                (pos > 0 && pos < ys.len()).then_some((xs, ys))
            })
    }

    fn to_array(pts: &[[f64; 2]]) -> Array2<f64> {
        Array2::from_shape_fn((pts.len(), 2), |(i, j)| pts[i][j])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn separable_linear_fits_perfectly((pts, y) in separable_sample()) {
            let x = to_array(&pts);
            let m = train(x.view(), &y, &KernelSpec::linear(), 1e6).unwrap();
            prop_assert_eq!(m.predict(x.view()).unwrap(), y);
            let (box_v, bal) = m.dual_residuals();
            prop_assert!(box_v == 0.0 && bal <= 1e-6);
        }

        #[test]
        fn permutation_does_not_change_model((pts, y) in separable_sample(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..y.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let x = to_array(&pts);
            let xp = x.select(Axis(0), &order);
            let yp: Vec<Label> = order.iter().map(|&i| y[i]).collect();
            let spec = KernelSpec::rbf(0.3);
            let a = train(x.view(), &y, &spec, 1.0).unwrap();
            let b = train(xp.view(), &yp, &spec, 1.0).unwrap();
            let grid = Array2::from_shape_fn((49, 2), |(i, j)| if j == 0 { (i / 7) as f64 - 3.0 } else { (i % 7) as f64 - 3.0 });
            let fa = a.decision_values(grid.view()).unwrap();
            let fb = b.decision_values(grid.view()).unwrap();
            for (u, v) in fa.iter().zip(&fb) {
                prop_assert!((u - v).abs() <= 1e-6);
            }
        }

        #[test]
        fn platt_monotone_on_separated((pts, y) in separable_sample()) {
            let f: Vec<f64> = pts.iter().zip(&y).map(|(p, l)| l.sign() * (1.0 + p[0].abs())).collect();
            let cal = platt_fit(&f, &y).unwrap();
            prop_assert!(cal.slope < 0.0);
        }
    }
}
