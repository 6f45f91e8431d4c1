//! Principal components and the static-form TVP design operator.

use std::path::Path;

use nalgebra::{DMatrix, DVectorView, DVectorViewMut, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};

/// Principal components of standardized data, frozen at fit time.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// `p × K`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Eigenvalues of the sample correlation matrix, descending.
    pub explained: Vec<f64>,
}

/// Fits `k` principal components of the column-standardized `x`.
///
/// Components are the leading eigenvectors of the sample correlation matrix.
/// Each loading column is signed so its largest-magnitude entry is positive.
pub fn fit_pca(x: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::arg("PCA needs at least two observations"));
    }
    if k > n.min(p) {
        return Err(Error::arg(format!(
            "cannot extract {k} components from a {n}×{p} matrix"
        )));
    }
    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::data(format!("column {j} has zero variance")));
        }
        means.push(mean);
        scales.push(var.sqrt());
    }
    let z = standardize(x, &means, &scales);
    let corr = (z.transpose() * &z) / (n - 1) as f64;
    let eig = SymmetricEigen::new(corr);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut loadings = DMatrix::zeros(p, k);
    let mut explained = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(c, &v);
        explained.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        means,
        scales,
        loadings,
        explained,
    })
}

fn standardize(x: &DMatrix<f64>, means: &[f64], scales: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - means[j]) / scales[j])
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }

    /// Factor scores of `x` using the stored means and scales.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::arg(format!(
                "PCA was fitted on {} columns, got {}",
                self.means.len(),
                x.ncols()
            )));
        }
        Ok(standardize(x, &self.means, &self.scales) * &self.loadings)
    }
}

/// Matrix-free access to a linear map `A` and its elementwise square `A∘A`.
///
/// The `*_into` methods panic on dimension mismatch; the allocating
/// wrappers check dimensions and return [`Error::Argument`].
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `out = A v`
    fn forward_into(&self, v: &[f64], out: &mut [f64]);
    /// `out = A' u`
    fn adjoint_into(&self, u: &[f64], out: &mut [f64]);
    /// `out = (A∘A) v`
    fn forward_sq_into(&self, v: &[f64], out: &mut [f64]);
    /// `out = (A∘A)' u`
    fn adjoint_sq_into(&self, u: &[f64], out: &mut [f64]);

    fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("forward", v.len(), self.ncols())?;
        let mut out = vec![0.0; self.nrows()];
        self.forward_into(v, &mut out);
        Ok(out)
    }

    fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint", u.len(), self.nrows())?;
        let mut out = vec![0.0; self.ncols()];
        self.adjoint_into(u, &mut out);
        Ok(out)
    }

    fn forward_sq(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("forward_sq", v.len(), self.ncols())?;
        let mut out = vec![0.0; self.nrows()];
        self.forward_sq_into(v, &mut out);
        Ok(out)
    }

    fn adjoint_sq(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint_sq", u.len(), self.nrows())?;
        let mut out = vec![0.0; self.ncols()];
        self.adjoint_sq_into(u, &mut out);
        Ok(out)
    }
}

fn check_len(op: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::arg(format!("{op}: expected length {want}, got {got}")))
    }
}

/// Implicit `T × (T+1)p` design of the static TVP regression.
///
/// Row `t` holds `x_t` in columns `0..p` (constant coefficients) and again in
/// columns `(t+1)p..(t+2)p` (period-`t` deviations). Only the `T × p` base
/// rows are stored.
#[derive(Debug, Clone)]
pub struct TvpDesignOperator {
    t: usize,
    p: usize,
    rows: Vec<f64>,
    rows_sq: Vec<f64>,
}

/// Dense materialization is refused above this many columns.
pub const DENSE_COLUMN_LIMIT: usize = 5_000;

pub fn build_tvp_operator(base: &DMatrix<f64>) -> Result<TvpDesignOperator> {
    TvpDesignOperator::new(base)
}

impl TvpDesignOperator {
    pub fn new(base: &DMatrix<f64>) -> Result<Self> {
        let (t, p) = base.shape();
        if t == 0 || p == 0 {
            return Err(Error::arg(format!("TVP design needs T > 0 and p > 0, got {t}×{p}")));
        }
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("TVP design rows contain non-finite values"));
        }
        let rows: Vec<f64> = (0..t).flat_map(|i| (0..p).map(move |j| base[(i, j)])).collect();
        let rows_sq = rows.iter().map(|v| v * v).collect();
        Ok(TvpDesignOperator { t, p, rows, rows_sq })
    }

    /// Number of observations `T`.
    pub fn periods(&self) -> usize {
        self.t
    }

    /// Regressors per period `p`.
    pub fn regressors(&self) -> usize {
        self.p
    }

    pub fn base_row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.p..(t + 1) * self.p]
    }

    /// Column index of the period-`t` deviation of regressor `j`.
    pub fn deviation_column(&self, t: usize, j: usize) -> usize {
        (t + 1) * self.p + j
    }

    /// Splits a static-form coefficient vector into constant and deviation parts.
    pub fn coefficient_path(&self, beta: &[f64]) -> Result<CoefficientPath> {
        check_len("coefficient_path", beta.len(), self.ncols())?;
        let (t, p) = (self.t, self.p);
        let constant = beta[..p].to_vec();
        let deviations = DMatrix::from_fn(t, p, |i, j| beta[(i + 1) * p + j]);
        let combined = DMatrix::from_fn(t, p, |i, j| constant[j] + deviations[(i, j)]);
        Ok(CoefficientPath {
            constant,
            deviations,
            combined,
        })
    }

    /// Dense copy of 𝒳, for debugging small problems only.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let q = self.ncols();
        if q > DENSE_COLUMN_LIMIT {
            return Err(Error::arg(format!(
                "refusing to materialize {q} columns (limit {DENSE_COLUMN_LIMIT})"
            )));
        }
        let mut dense = DMatrix::zeros(self.t, q);
        for i in 0..self.t {
            for (j, &x) in self.base_row(i).iter().enumerate() {
                dense[(i, j)] = x;
                dense[(i, self.deviation_column(i, j))] = x;
            }
        }
        Ok(dense)
    }

    pub fn write_dense_csv(&self, path: &Path) -> Result<()> {
        let dense = self.to_dense()?;
        let header: Vec<String> = (0..dense.ncols()).map(|j| format!("c{j}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            path,
            &header,
            dense.row_iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>()),
        )
    }

    fn apply(&self, rows: &[f64], v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.ncols(), "operator input length");
        assert_eq!(out.len(), self.t, "operator output length");
        let p = self.p;
        let constant = &v[..p];
        for (t, o) in out.iter_mut().enumerate() {
            let x = &rows[t * p..(t + 1) * p];
            let dev = &v[(t + 1) * p..(t + 2) * p];
            // Constant block first, then deviations: the dense column order.
            let mut acc = 0.0;
            for (xj, c) in x.iter().zip(constant) {
                acc += xj * c;
            }
            for (xj, d) in x.iter().zip(dev) {
                acc += xj * d;
            }
            *o = acc;
        }
    }

    fn apply_adjoint(&self, rows: &[f64], u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.t, "adjoint input length");
        assert_eq!(out.len(), self.ncols(), "adjoint output length");
        let p = self.p;
        let (constant, deviations) = out.split_at_mut(p);
        constant.fill(0.0);
        for (t, &ut) in u.iter().enumerate() {
            let x = &rows[t * p..(t + 1) * p];
            let dev = &mut deviations[t * p..(t + 1) * p];
            for ((c, d), &xj) in constant.iter_mut().zip(dev.iter_mut()).zip(x) {
                let v = xj * ut;
                *c += v;
                *d = v;
            }
        }
    }
}

impl LinearOperator for TvpDesignOperator {
    fn nrows(&self) -> usize {
        self.t
    }

    fn ncols(&self) -> usize {
        (self.t + 1) * self.p
    }

    fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply(&self.rows, v, out)
    }

    fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        self.apply_adjoint(&self.rows, u, out)
    }

    fn forward_sq_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply(&self.rows_sq, v, out)
    }

    fn adjoint_sq_into(&self, u: &[f64], out: &mut [f64]) {
        self.apply_adjoint(&self.rows_sq, u, out)
    }
}

/// Ordinary dense regression matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    a: DMatrix<f64>,
    a_sq: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(a: DMatrix<f64>) -> Self {
        let a_sq = a.map(|v| v * v);
        DenseOperator { a, a_sq }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn mul(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), m.ncols(), "operator input length");
        assert_eq!(out.len(), m.nrows(), "operator output length");
        let v = DVectorView::from_slice(v, v.len());
        let n = out.len();
        DVectorViewMut::from_slice(out, n).gemv(1.0, m, &v, 0.0);
    }

    fn mul_t(m: &DMatrix<f64>, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), m.nrows(), "adjoint input length");
        assert_eq!(out.len(), m.ncols(), "adjoint output length");
        let u = DVectorView::from_slice(u, u.len());
        let n = out.len();
        DVectorViewMut::from_slice(out, n).gemv_tr(1.0, m, &u, 0.0);
    }
}

impl LinearOperator for DenseOperator {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }

    fn ncols(&self) -> usize {
        self.a.ncols()
    }

    fn forward_into(&self, v: &[f64], out: &mut [f64]) {
        Self::mul(&self.a, v, out)
    }

    fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        Self::mul_t(&self.a, u, out)
    }

    fn forward_sq_into(&self, v: &[f64], out: &mut [f64]) {
        Self::mul(&self.a_sq, v, out)
    }

    fn adjoint_sq_into(&self, u: &[f64], out: &mut [f64]) {
        Self::mul_t(&self.a_sq, u, out)
    }
}

/// Non-centered coefficient path `β_t = β̃ + β̃_t`.
#[derive(Debug, Clone)]
pub struct CoefficientPath {
    pub constant: Vec<f64>,
    /// `T × p`
    pub deviations: DMatrix<f64>,
    /// `T × p`
    pub combined: DMatrix<f64>,
}
