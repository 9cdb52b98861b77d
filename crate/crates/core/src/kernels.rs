//! Kernel functions and kernel matrices over feature rows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PSD_RTOL, SYMMETRY_TOL};

/// Rows sampled by [`gamma_heuristic`] on large inputs.
pub const GAMMA_SAMPLE_ROWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
    Polynomial,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(KernelKind::Rbf),
            "linear" => Ok(KernelKind::Linear),
            "polynomial" | "poly" => Ok(KernelKind::Polynomial),
            other => Err(Error::InvalidParameter(format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// Kernel parameters.
///
/// RBF is `exp(-gamma * ||x - y||²)`, i.e. `gamma = 1 / (2 sigma²)` for a
/// Gaussian width `sigma`. Polynomial is `(<x, y> + coeff)^degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: u32,
    pub coeff: f64,
    /// Min-max rescale linear/polynomial matrices into [0, 1].
    pub normalize: bool,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        KernelSpec { kind: KernelKind::Rbf, gamma, degree: 1, coeff: 0.0, normalize: false }
    }

    pub fn linear() -> Self {
        KernelSpec { kind: KernelKind::Linear, gamma: 1.0, degree: 1, coeff: 0.0, normalize: false }
    }

    pub fn polynomial(degree: u32, coeff: f64) -> Self {
        KernelSpec { kind: KernelKind::Polynomial, gamma: 1.0, degree, coeff, normalize: false }
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Rbf if !(self.gamma > 0.0 && self.gamma.is_finite()) => {
                Err(Error::InvalidParameter(format!("rbf gamma must be positive, got {}", self.gamma)))
            }
            KernelKind::Polynomial if self.degree < 1 => {
                Err(Error::InvalidParameter("polynomial degree must be at least 1".into()))
            }
            KernelKind::Polynomial if !self.coeff.is_finite() => {
                Err(Error::InvalidParameter("polynomial coeff must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Linear => x.dot(&y),
            KernelKind::Polynomial => (x.dot(&y) + self.coeff).powi(self.degree as i32),
        }
    }

    /// Kernel values between every row of `a` and every row of `b`.
    pub fn cross(&self, a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
        }
        let gram = a.dot(&b.t());
        Ok(match self.kind {
            KernelKind::Rbf => {
                let na = row_sq_norms(a);
                let nb = row_sq_norms(b);
                let mut k = gram;
                for ((i, j), v) in k.indexed_iter_mut() {
                    let d2 = (na[i] + nb[j] - 2.0 * *v).max(0.0);
                    *v = (-self.gamma * d2).exp();
                }
                k
            }
            KernelKind::Linear => gram,
            KernelKind::Polynomial => gram.mapv(|g| (g + self.coeff).powi(self.degree as i32)),
        })
    }
}

fn row_sq_norms(a: ArrayView2<f64>) -> Array1<f64> {
    a.map_axis(Axis(1), |r| r.dot(&r))
}

/// A symmetric kernel matrix over a subset of pool examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub entries: Array2<f64>,
    pub spec: KernelSpec,
    /// `row_ids[i]` is the pool id of row (and column) `i`.
    pub row_ids: Vec<usize>,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    /// Copy with entries rescaled into [0, 1] when the kernel is not
    /// already bounded there. RBF matrices are returned unchanged.
    pub fn scaled_to_unit(&self) -> KernelMatrix {
        let mut out = self.clone();
        if self.spec.kind != KernelKind::Rbf {
            min_max_normalize(&mut out.entries);
        }
        out.spec.normalize = true;
        out
    }
}

fn min_max_normalize(k: &mut Array2<f64>) {
    let (lo, hi) = k.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        k.mapv_inplace(|v| (v - lo) / range);
    } else {
        // constant matrix: every pair is maximally similar
        k.fill(1.0);
    }
}

fn check_finite(x: ArrayView2<f64>) -> Result<()> {
    for ((i, j), &v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row: i, col: j });
        }
    }
    Ok(())
}

/// Kernel matrix over the rows of `x`; row `i` is labelled `row_ids[i]`.
pub fn kernel_matrix(x: ArrayView2<f64>, row_ids: Vec<usize>, spec: &KernelSpec) -> Result<KernelMatrix> {
    spec.validate()?;
    let m = x.nrows();
    if m == 0 {
        return Err(Error::Empty("feature matrix has no rows"));
    }
    if row_ids.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: row_ids.len() });
    }
    check_finite(x)?;
    let mut entries = spec.cross(x, x)?;
    for i in 0..m {
        for j in (i + 1)..m {
            let v = entries[[i, j]];
            entries[[j, i]] = v;
        }
        if spec.kind == KernelKind::Rbf {
            entries[[i, i]] = 1.0;
        }
    }
    if spec.normalize && spec.kind != KernelKind::Rbf {
        min_max_normalize(&mut entries);
    }
    Ok(KernelMatrix { entries, spec: *spec, row_ids })
}

/// Kernel matrix over the pool rows named by `ids`.
pub fn kernel_matrix_for(features: &Array2<f64>, ids: &[usize], spec: &KernelSpec) -> Result<KernelMatrix> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= features.nrows()) {
        return Err(Error::UnknownId(bad));
    }
    let rows = features.select(Axis(0), ids);
    kernel_matrix(rows.view(), ids.to_vec(), spec)
}

/// Median-distance bandwidth: `1 / (2 median²)` over pairwise Euclidean
/// distances of at most [`GAMMA_SAMPLE_ROWS`] rows (sampled with `seed`
/// when the input is larger). Falls back to `1 / d` when every sampled row
/// is identical.
pub fn gamma_heuristic(x: ArrayView2<f64>, seed: u64) -> Result<f64> {
    let (m, d) = x.dim();
    if m < 2 {
        return Err(Error::InvalidParameter(format!("gamma heuristic needs at least 2 rows, got {m}")));
    }
    if d == 0 {
        return Err(Error::Empty("feature matrix has no columns"));
    }
    check_finite(x)?;
    let rows: Vec<usize> = if m > GAMMA_SAMPLE_ROWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, m, GAMMA_SAMPLE_ROWS).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..m).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let d2: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            dists.push(d2.sqrt());
        }
    }
    let median = median(&mut dists);
    if median > 0.0 {
        Ok(1.0 / (2.0 * median * median))
    } else {
        Ok(1.0 / d as f64)
    }
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Outcome of [`check_spsd`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsdReport {
    pub is_spsd: bool,
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Symmetry within 1e-10 and smallest eigenvalue at least `-1e-6 λ₁`.
pub fn check_spsd(k: &Array2<f64>) -> SpsdReport {
    let n = k.nrows();
    let mut max_asymmetry = 0.0_f64;
    let mut finite = k.ncols() == n && n > 0;
    if finite {
        for i in 0..n {
            for j in 0..n {
                let v = k[[i, j]];
                if !v.is_finite() {
                    finite = false;
                }
                max_asymmetry = max_asymmetry.max((v - k[[j, i]]).abs());
            }
        }
    }
    if !finite {
        return SpsdReport {
            is_spsd: false,
            symmetric: false,
            max_asymmetry: f64::NAN,
            min_eigenvalue: f64::NAN,
            max_eigenvalue: f64::NAN,
        };
    }
    let symmetric = max_asymmetry <= SYMMETRY_TOL;
    let sym = (k + &k.t()) * 0.5;
    let eig = linalg::eigvals_sym(&sym).unwrap_or_else(|_| vec![f64::NAN]);
    let max_eigenvalue = eig.first().copied().unwrap_or(f64::NAN);
    let min_eigenvalue = eig.last().copied().unwrap_or(f64::NAN);
    let psd = min_eigenvalue >= -PSD_RTOL * max_eigenvalue.max(0.0);
    SpsdReport { is_spsd: symmetric && psd, symmetric, max_asymmetry, min_eigenvalue, max_eigenvalue }
}
