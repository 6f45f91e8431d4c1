//! Seeded synthetic data for the Monte Carlo designs.
//!
//! Every replication draws from its own ChaCha20 stream: the generator is
//! seeded with `seed` and switched to stream `replication`, so replications
//! are independent and can be generated in any order or in parallel.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Months, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RawPanel, TransformCode};
use crate::io::{fmt_f64, write_csv};

/// Coefficients of the AR(4) design.
pub const AR4_COEFFICIENTS: [f64; 4] = [0.40, 0.22, 0.05, 0.14];
/// Discarded start-up draws for the AR(4) design.
pub const AR4_BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SimKind {
    PoissonJumps,
    RegressionEffects,
    RandomWalk,
    SparseRegression,
    Ar4,
}

impl SimKind {
    /// True for the local-level designs whose target is a coefficient path.
    pub fn is_tvp(self) -> bool {
        matches!(
            self,
            SimKind::PoissonJumps | SimKind::RegressionEffects | SimKind::RandomWalk
        )
    }
}

impl std::str::FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::arg(format!("unknown simulation kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimSpec {
    pub kind: SimKind,
    #[serde(rename = "T")]
    pub t: usize,
    /// Predictor count (sparse regression only).
    #[serde(default)]
    pub p: usize,
    /// Predictor correlation `ρ^|i−j|` (sparse regression only).
    #[serde(default)]
    pub rho: f64,
    /// Fraction of active predictors (sparse regression only).
    #[serde(default)]
    pub c: f64,
    /// Jump intensity (Poisson jumps only).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Whiten the predictors with the Cholesky factor of their sample covariance.
    #[serde(default)]
    pub orthogonalize: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda() -> f64 {
    0.1
}

impl SimSpec {
    pub fn new(kind: SimKind, t: usize, seed: u64) -> Self {
        SimSpec {
            kind,
            t,
            p: 0,
            rho: 0.0,
            c: 0.0,
            lambda: default_lambda(),
            orthogonalize: false,
            seed,
        }
    }

    pub fn sparse(t: usize, p: usize, rho: f64, c: f64, seed: u64) -> Self {
        SimSpec {
            p,
            rho,
            c,
            ..SimSpec::new(SimKind::SparseRegression, t, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::arg(format!("T must be at least 2, got {}", self.t)));
        }
        if self.kind == SimKind::SparseRegression {
            if self.p == 0 {
                return Err(Error::arg("sparse regression needs p ≥ 1"));
            }
            if !(0.0..1.0).contains(&self.rho) {
                return Err(Error::arg(format!("rho must lie in [0, 1), got {}", self.rho)));
            }
            if !(self.c > 0.0 && self.c < 1.0) {
                return Err(Error::arg(format!("c must lie in (0, 1), got {}", self.c)));
            }
        }
        if self.kind == SimKind::PoissonJumps && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Number of active coefficients, `round(c·p)`.
    pub fn active_count(&self) -> usize {
        (self.c * self.p as f64).round() as usize
    }
}

/// The data-generating coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueCoefficients {
    /// `T × p` path for time-varying designs.
    Path(DMatrix<f64>),
    Static(Vec<f64>),
}

impl TrueCoefficients {
    pub fn values(&self) -> &[f64] {
        match self {
            TrueCoefficients::Path(m) => m.as_slice(),
            TrueCoefficients::Static(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimMeta {
    pub seed: u64,
    pub replication: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_times: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_set: Option<Vec<usize>>,
    /// Moduli of the companion-matrix eigenvalues.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ar_root_moduli: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub truth: TrueCoefficients,
    pub meta: SimMeta,
}

impl SimOutput {
    /// Writes `t,y,x1..xp` plus `truth1..truthp` columns for path designs.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let p = self.x.ncols();
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend((1..=p).map(|j| format!("x{j}")));
        let path_truth = match &self.truth {
            TrueCoefficients::Path(m) => {
                header.extend((1..=m.ncols()).map(|j| format!("truth{j}")));
                Some(m)
            }
            TrueCoefficients::Static(_) => None,
        };
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            path,
            &header,
            (0..self.y.len()).map(|t| {
                let mut row = vec![t.to_string(), fmt_f64(self.y[t])];
                row.extend((0..p).map(|j| fmt_f64(self.x[(t, j)])));
                if let Some(m) = path_truth {
                    row.extend((0..m.ncols()).map(|j| fmt_f64(m[(t, j)])));
                }
                row
            }),
        )
    }
}

/// Generator for replication `replication` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Dispatches on `spec.kind`.
pub fn simulate(spec: &SimSpec, replication: u64) -> Result<SimOutput> {
    spec.validate()?;
    let mut rng = replication_rng(spec.seed, replication);
    let mut out = match spec.kind {
        SimKind::PoissonJumps => poisson_jumps(spec, &mut rng)?,
        SimKind::RegressionEffects => regression_effects(spec, &mut rng),
        SimKind::RandomWalk => random_walk(spec, &mut rng),
        SimKind::SparseRegression => sparse_regression(spec, &mut rng)?,
        SimKind::Ar4 => ar4(spec, &mut rng),
    };
    out.meta.seed = spec.seed;
    out.meta.replication = replication;
    Ok(out)
}

pub fn simulate_poisson_jumps(spec: &SimSpec, replication: u64) -> Result<SimOutput> {
    expect_kind(spec, SimKind::PoissonJumps)?;
    simulate(spec, replication)
}

pub fn simulate_regression_effects(spec: &SimSpec, replication: u64) -> Result<SimOutput> {
    expect_kind(spec, SimKind::RegressionEffects)?;
    simulate(spec, replication)
}

pub fn simulate_random_walk(spec: &SimSpec, replication: u64) -> Result<SimOutput> {
    expect_kind(spec, SimKind::RandomWalk)?;
    simulate(spec, replication)
}

pub fn simulate_sparse_regression(spec: &SimSpec, replication: u64) -> Result<SimOutput> {
    expect_kind(spec, SimKind::SparseRegression)?;
    simulate(spec, replication)
}

pub fn simulate_ar4(spec: &SimSpec, replication: u64) -> Result<SimOutput> {
    expect_kind(spec, SimKind::Ar4)?;
    simulate(spec, replication)
}

fn expect_kind(spec: &SimSpec, kind: SimKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::arg(format!("expected kind {kind:?}, got {:?}", spec.kind)));
    }
    Ok(())
}

/// `y_t = c_t + ε_t` with a column of ones as the regressor.
fn local_level(c: Vec<f64>, rng: &mut ChaCha20Rng) -> SimOutput {
    let t = c.len();
    let y = c
        .iter()
        .map(|&ct| ct + rng.sample::<f64, _>(StandardNormal))
        .collect();
    SimOutput {
        y,
        x: DMatrix::from_element(t, 1, 1.0),
        truth: TrueCoefficients::Path(DMatrix::from_vec(t, 1, c)),
        meta: SimMeta::default(),
    }
}

fn poisson_jumps(spec: &SimSpec, rng: &mut ChaCha20Rng) -> Result<SimOutput> {
    let t = spec.t;
    let poisson = Poisson::new(spec.lambda).map_err(|e| Error::arg(e.to_string()))?;
    let noise = Normal::new(0.0, (t as f64).powf(-0.75).sqrt()).expect("positive scale");
    let mu = rng.random_range(0.0..4.0);
    let mut c = Vec::with_capacity(t);
    let mut jumps = Vec::new();
    for i in 0..t {
        let k: f64 = poisson.sample(rng);
        let delta: f64 = rng.random_range(-1.0..1.0);
        let sign = if delta < 0.0 { -1.0 } else { 1.0 };
        if k > 0.0 {
            jumps.push(i);
        }
        c.push(mu + sign * mu * k + noise.sample(rng));
    }
    let mut out = local_level(c, rng);
    out.meta.jump_times = Some(jumps);
    Ok(out)
}

fn regression_effects(spec: &SimSpec, rng: &mut ChaCha20Rng) -> SimOutput {
    let t = spec.t;
    let noise = Normal::new(0.0, (t as f64).powf(-0.75).sqrt()).expect("positive scale");
    let beta: Vec<f64> = (0..11).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = (0..t)
        .map(|_| {
            let mut ct = beta[0];
            for b in &beta[1..] {
                ct += b * rng.sample::<f64, _>(StandardNormal);
            }
            ct + noise.sample(rng)
        })
        .collect();
    let mut out = local_level(c, rng);
    out.meta.true_coefficients = Some(beta);
    out
}

fn random_walk(spec: &SimSpec, rng: &mut ChaCha20Rng) -> SimOutput {
    let t = spec.t;
    let noise = Normal::new(0.0, (t as f64).powf(-0.5).sqrt()).expect("positive scale");
    let mut level: f64 = rng.random_range(-1.0..1.0);
    let c = (0..t)
        .map(|_| {
            level += noise.sample(rng);
            level
        })
        .collect();
    local_level(c, rng)
}

fn sparse_regression(spec: &SimSpec, rng: &mut ChaCha20Rng) -> Result<SimOutput> {
    let (t, p) = (spec.t, spec.p);
    let corr = DMatrix::from_fn(p, p, |i, j| spec.rho.powi(i.abs_diff(j) as i32));
    let chol = corr
        .cholesky()
        .ok_or_else(|| Error::numerical("correlation matrix is not positive definite"))?;
    let z = DMatrix::from_fn(t, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = z * chol.l().transpose();
    if spec.orthogonalize {
        x = orthogonalize(&x)?;
    }

    let q = spec.active_count();
    if q == 0 {
        log::warn!("round(c·p) = 0: no active predictors (c={}, p={p})", spec.c);
    }
    let mut beta = vec![0.0; p];
    for b in beta.iter_mut().take(q) {
        *b = rng.random_range(-4.0..4.0);
    }
    let signal = &x * DVector::from_column_slice(&beta);
    let y = signal
        .iter()
        .map(|s| s + rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(SimOutput {
        y,
        x,
        meta: SimMeta {
            active_set: Some((0..q).collect()),
            ..SimMeta::default()
        },
        truth: TrueCoefficients::Static(beta),
    })
}

/// `X W⁻¹` with `W′W` the sample covariance of `X`; the result has identity
/// sample covariance.
pub fn orthogonalize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, p) = x.shape();
    if t < p {
        return Err(Error::Rank(format!(
            "cannot whiten {p} predictors from {t} observations"
        )));
    }
    if t < 2 {
        return Err(Error::Rank("need at least two observations".into()));
    }
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / (t as f64 - 1.0);
    let scale = cov.diagonal().max();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank("sample covariance is not positive definite".into()))?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min_pivot > 1e-12 * scale) {
        return Err(Error::Rank("sample covariance is numerically singular".into()));
    }
    let whitened_t = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Rank("singular Cholesky factor".into()))?;
    Ok(whitened_t.transpose())
}

fn ar4(spec: &SimSpec, rng: &mut ChaCha20Rng) -> SimOutput {
    let lags = AR4_COEFFICIENTS.len();
    let total = AR4_BURN_IN + spec.t;
    let mut series = vec![0.0; lags + total];
    for i in lags..series.len() {
        let mut v: f64 = rng.sample(StandardNormal);
        for (k, a) in AR4_COEFFICIENTS.iter().enumerate() {
            v += a * series[i - 1 - k];
        }
        series[i] = v;
    }
    let start = lags + AR4_BURN_IN;
    let y = series[start..].to_vec();
    let x = DMatrix::from_fn(spec.t, lags, |t, k| series[start + t - 1 - k]);
    SimOutput {
        y,
        x,
        truth: TrueCoefficients::Static(AR4_COEFFICIENTS.to_vec()),
        meta: SimMeta {
            ar_root_moduli: Some(ar_root_moduli(&AR4_COEFFICIENTS)),
            ..SimMeta::default()
        },
    }
}

/// Settings for a synthetic monthly price index driven by latent factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct InflationPanelSpec {
    #[serde(rename = "T")]
    pub t: usize,
    /// Noisy factor mixtures to publish; 0 publishes the factors themselves.
    pub n_series: usize,
    pub n_factors: usize,
    /// AR(1) persistence of every factor.
    pub factor_rho: f64,
    /// Standard deviation of the random-walk coefficient increments.
    pub coefficient_step: f64,
    /// Standard deviation of the annualized inflation shock.
    pub noise: f64,
    pub seed: u64,
}

impl Default for InflationPanelSpec {
    fn default() -> Self {
        InflationPanelSpec {
            t: 300,
            n_series: 0,
            n_factors: 5,
            factor_rho: 0.8,
            coefficient_step: 0.05,
            noise: 1.0,
            seed: 1,
        }
    }
}

/// Price index `CPI` plus factor-driven predictors.
///
/// Annualized monthly inflation is `2 + Σ_j β_{t,j} f_{t-1,j} + ε_t` with
/// random-walk `β_{t,j}`. With `n_series > 0` the predictors `X01, X02, ...`
/// are noisy loading combinations of the current factors; otherwise the
/// factors are published as `F1, F2, ...`. Predictors carry code 1 and the
/// price code 5.
pub fn synthetic_inflation_panel(spec: &InflationPanelSpec) -> Result<RawPanel> {
    if spec.t < 10 || spec.n_factors == 0 {
        return Err(Error::arg("inflation panel needs T >= 10 and at least one factor"));
    }
    if !(spec.factor_rho.abs() < 1.0) || !(spec.coefficient_step >= 0.0) || !(spec.noise > 0.0) {
        return Err(Error::arg("inflation panel needs |rho| < 1, step >= 0 and noise > 0"));
    }
    let mut rng = replication_rng(spec.seed, 0);
    let (t, k) = (spec.t, spec.n_factors);
    let innovation_sd = (1.0 - spec.factor_rho * spec.factor_rho).sqrt();
    let mut f = DMatrix::<f64>::zeros(t, k);
    for j in 0..k {
        f[(0, j)] = rng.sample(StandardNormal);
        for i in 1..t {
            let e: f64 = rng.sample(StandardNormal);
            f[(i, j)] = spec.factor_rho * f[(i - 1, j)] + innovation_sd * e;
        }
    }
    let loadings = DMatrix::<f64>::from_fn(k, spec.n_series, |_, _| rng.sample(StandardNormal));
    let mut beta: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut price = Vec::with_capacity(t);
    price.push(100.0);
    for i in 1..t {
        let mut pi = 2.0;
        for (j, b) in beta.iter_mut().enumerate() {
            *b += spec.coefficient_step * rng.sample::<f64, _>(StandardNormal);
            pi += *b * f[(i - 1, j)];
        }
        pi += spec.noise * rng.sample::<f64, _>(StandardNormal);
        price.push(price[i - 1] * (pi / 1200.0).exp());
    }
    let common = &f * &loadings;
    let start = NaiveDate::from_ymd_opt(1960, 1, 1).expect("valid date");
    let dates: Vec<NaiveDate> = (0..t)
        .map(|i| start.checked_add_months(Months::new(i as u32)).expect("date in range"))
        .collect();
    let mut names = vec!["CPI".to_string()];
    let mut levels = HashMap::new();
    let mut tcodes = HashMap::new();
    levels.insert("CPI".to_string(), price);
    tcodes.insert("CPI".to_string(), TransformCode::LogDiff);
    let published: Vec<(String, Vec<f64>)> = if spec.n_series == 0 {
        (0..k)
            .map(|j| (format!("F{}", j + 1), f.column(j).iter().copied().collect()))
            .collect()
    } else {
        (0..spec.n_series)
            .map(|s| {
                let col = (0..t)
                    .map(|i| common[(i, s)] + 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (format!("X{:02}", s + 1), col)
            })
            .collect()
    };
    for (name, col) in published {
        levels.insert(name.clone(), col);
        tcodes.insert(name.clone(), TransformCode::Level);
        names.push(name);
    }
    RawPanel::new(dates, names, levels, tcodes)
}

/// Moduli of the companion-matrix eigenvalues, largest first.
pub fn ar_root_moduli(coefficients: &[f64]) -> Vec<f64> {
    let k = coefficients.len();
    let companion = DMatrix::from_fn(k, k, |i, j| {
        if i == 0 {
            coefficients[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut moduli: Vec<f64> = companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli
}
