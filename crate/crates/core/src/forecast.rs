//! Recursive out-of-sample forecasting and forecast evaluation.
//!
//! At every origin `t` the pipeline sees only observations `0..=t`: principal
//! components are refitted on the predictor panel up to `t`, the direct
//! `h`-step regression is rebuilt and re-estimated, and the forecast of
//! `π^h_{t+h}` uses the regressor row dated `t`. TVP models forecast with the
//! last in-sample coefficients `β_T` and error variance `σ̂²_T`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Months, NaiveDate};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{fit_pca, DenseOperator};
use crate::error::{Error, Result};
use crate::gamp::{gamp_solve, solve_tvp, GampConfig};
use crate::ingest::{
    build_inflation_target, make_regression_frame, FrameSpec, RawPanel, RegressionFrame,
    StationaryPanel, TargetForm,
};
use crate::io::{fmt_f64, write_csv};
use crate::oracles::ols;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ForecastModel {
    TvpGamp,
    ConstGamp,
    /// OLS on an intercept and the own lags.
    Ar2Benchmark,
}

impl ForecastModel {
    pub fn label(self) -> &'static str {
        match self {
            ForecastModel::TvpGamp => "tvp_gamp",
            ForecastModel::ConstGamp => "const_gamp",
            ForecastModel::Ar2Benchmark => "ar2",
        }
    }
}

impl std::str::FromStr for ForecastModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tvpGamp" | "tvp_gamp" | "tvp" => Ok(ForecastModel::TvpGamp),
            "constGamp" | "const_gamp" | "const" => Ok(ForecastModel::ConstGamp),
            "ar2Benchmark" | "ar2" => Ok(ForecastModel::Ar2Benchmark),
            _ => Err(Error::arg(format!("unknown forecast model `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ForecastSpec {
    pub horizon: usize,
    pub target_form: TargetForm,
    pub n_factors: usize,
    /// Number of own inflation terms, dated `t, t-1, ...`.
    pub own_lags: usize,
    pub factor_lags: Vec<usize>,
    /// Share of the sample kept out of the first training window.
    pub holdout_fraction: f64,
    pub model: ForecastModel,
}

impl Default for ForecastSpec {
    fn default() -> Self {
        ForecastSpec {
            horizon: 1,
            target_form: TargetForm::Gap,
            n_factors: 20,
            own_lags: 2,
            factor_lags: vec![0, 1],
            holdout_fraction: 0.5,
            model: ForecastModel::TvpGamp,
        }
    }
}

impl ForecastSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::arg("forecast horizon must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::arg(format!(
                "holdout fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if self.model != ForecastModel::Ar2Benchmark && self.n_factors > 0 && self.factor_lags.is_empty() {
            return Err(Error::arg("factor lags must be non-empty when factors are used"));
        }
        Ok(())
    }

    fn frame_spec(&self) -> FrameSpec {
        FrameSpec {
            horizon: self.horizon,
            form: self.target_form,
            own_lags: (0..self.own_lags).collect(),
            predictor_lags: self.factor_lags.clone(),
        }
    }

    fn uses_factors(&self) -> bool {
        self.model != ForecastModel::Ar2Benchmark && self.n_factors > 0
    }
}

/// A price index and the stationary predictor panel it is forecast from.
#[derive(Debug, Clone)]
pub struct ForecastData {
    pub dates: Vec<NaiveDate>,
    pub price: Vec<f64>,
    pub predictors: StationaryPanel,
}

impl ForecastData {
    /// Splits `price_name` off `raw` and transforms the remaining series.
    pub fn from_raw(raw: &RawPanel, price_name: &str) -> Result<Self> {
        let (price, rest) = raw.split_off(price_name)?;
        if rest.names.is_empty() {
            return Err(Error::data("panel has no predictors besides the price index"));
        }
        Ok(ForecastData {
            dates: raw.dates.clone(),
            price,
            predictors: rest.transform()?,
        })
    }

    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }

    /// Copy holding observations `0..=last` only.
    pub fn truncate(&self, last: usize) -> Result<Self> {
        if last >= self.len() {
            return Err(Error::arg(format!("cannot keep rows through {last} of {}", self.len())));
        }
        let mut predictors = self.predictors.clone();
        predictors.dates.truncate(last + 1);
        for s in predictors.series.values_mut() {
            s.truncate(last + 1);
        }
        Ok(ForecastData {
            dates: self.dates[..=last].to_vec(),
            price: self.price[..=last].to_vec(),
            predictors,
        })
    }

    /// Origins whose target lies inside the sample, after the first training window.
    pub fn origins(&self, spec: &ForecastSpec) -> std::ops::Range<usize> {
        let first = ((self.len() as f64) * (1.0 - spec.holdout_fraction)).floor() as usize;
        let end = self.len().saturating_sub(spec.horizon);
        first.max(1)..end.max(first.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub origin: NaiveDate,
    pub target: NaiveDate,
    /// Forecast of `π^h_{t+h}`.
    pub point: f64,
    pub variance: f64,
    pub realized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastFailure {
    pub origin: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ForecastRun {
    pub records: Vec<ForecastRecord>,
    /// Origins where estimation failed; these are excluded from `records`.
    pub failures: Vec<ForecastFailure>,
}

/// Builds the information set at origin `t` and forecasts `π^h_{t+h}`.
///
/// Only rows `0..=t` of `data` are read, except for the realized value.
pub fn forecast_at(
    data: &ForecastData,
    spec: &ForecastSpec,
    cfg: &GampConfig,
    t: usize,
) -> Result<ForecastRecord> {
    spec.validate()?;
    if t >= data.len() {
        return Err(Error::arg(format!("origin {t} beyond {} observations", data.len())));
    }
    let predictors = if spec.uses_factors() {
        factor_scores(&data.predictors, spec.n_factors, t)?
    } else {
        Vec::new()
    };
    let frame = make_regression_frame(&data.price[..=t], &predictors, &spec.frame_spec(), t)?;
    let origin = frame
        .origin
        .clone()
        .ok_or_else(|| Error::data(format!("regressors are incomplete at origin {t}")))?;
    let (prediction, variance) = match spec.model {
        ForecastModel::TvpGamp => tvp_prediction(&frame, &origin.x, cfg)?,
        ForecastModel::ConstGamp => const_prediction(&frame, &origin.x, cfg)?,
        ForecastModel::Ar2Benchmark => ols_prediction(&frame, &origin.x)?,
    };
    if !(variance > 0.0 && variance.is_finite() && prediction.is_finite()) {
        return Err(Error::numerical(format!(
            "non-finite forecast at origin {t}: point {prediction}, variance {variance}"
        )));
    }
    let h = spec.horizon;
    let realized = if t + h < data.len() {
        build_inflation_target(&data.price[..=t + h], h)?[t + h]
    } else {
        None
    };
    let target = data.dates[t]
        .checked_add_months(Months::new(h as u32))
        .ok_or_else(|| Error::data("target date out of range"))?;
    Ok(ForecastRecord {
        origin: data.dates[t],
        target,
        point: prediction + origin.anchor,
        variance,
        realized,
    })
}

/// Forecasts from every holdout origin in parallel, merged by origin date.
pub fn run_recursive(data: &ForecastData, spec: &ForecastSpec, cfg: &GampConfig) -> Result<ForecastRun> {
    spec.validate()?;
    cfg.validate()?;
    let origins: Vec<usize> = data.origins(spec).collect();
    if origins.is_empty() {
        return Err(Error::data("no forecast origins in the holdout window"));
    }
    let results: Vec<(usize, Result<ForecastRecord>)> = origins
        .into_par_iter()
        .map(|t| (t, forecast_at(data, spec, cfg, t)))
        .collect();
    let mut run = ForecastRun::default();
    for (t, res) in results {
        match res {
            Ok(rec) => run.records.push(rec),
            Err(e @ (Error::Divergence { .. } | Error::Numerical(_) | Error::Rank(_))) => {
                log::warn!("origin {}: {e}", data.dates[t]);
                run.failures.push(ForecastFailure {
                    origin: data.dates[t],
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if !run.failures.is_empty() {
        log::warn!(
            "{} of {} origins failed and are excluded",
            run.failures.len(),
            run.failures.len() + run.records.len()
        );
    }
    Ok(run)
}

/// Principal-component scores through row `last`, `None` before the panel is complete.
fn factor_scores(
    panel: &StationaryPanel,
    k: usize,
    last: usize,
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let start = panel.first_complete_row();
    if start >= last {
        return Err(Error::data(format!("no complete predictor rows before origin {last}")));
    }
    let block = panel.block(start, last)?;
    let pca = fit_pca(&block, k)?;
    let scores = pca.transform(&block)?;
    Ok((0..k)
        .map(|j| {
            let mut col = vec![None; last + 1];
            for i in start..=last {
                col[i] = Some(scores[(i - start, j)]);
            }
            (format!("F{}", j + 1), col)
        })
        .collect())
}

fn unshrunk(frame: &RegressionFrame, cfg: &GampConfig) -> GampConfig {
    let mut cfg = cfg.clone();
    cfg.no_shrink = (0..frame.n_unshrunk).collect();
    cfg
}

fn tvp_prediction(frame: &RegressionFrame, x: &[f64], cfg: &GampConfig) -> Result<(f64, f64)> {
    let fit = solve_tvp(&frame.x, &frame.y, &unshrunk(frame, cfg))?;
    let last = frame.rows.len() - 1;
    let beta = fit.path.combined.row(last);
    let tau = fit.combined_variance(last);
    let point: f64 = x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
    let spread: f64 = x.iter().zip(&tau).map(|(a, v)| a * a * v).sum();
    Ok((point, spread + fit.solution.state.sigma2[last]))
}

fn const_prediction(frame: &RegressionFrame, x: &[f64], cfg: &GampConfig) -> Result<(f64, f64)> {
    let sol = gamp_solve(&DenseOperator::new(frame.x.clone()), &frame.y, &unshrunk(frame, cfg))?;
    let st = &sol.state;
    let point: f64 = x.iter().zip(&st.beta_hat).map(|(a, b)| a * b).sum();
    let spread: f64 = x.iter().zip(&st.tau_beta).map(|(a, v)| a * a * v).sum();
    Ok((point, spread + st.sigma2[st.sigma2.len() - 1]))
}

/// OLS on intercept and own lags; variance `s²(1 + x(X′X)⁻¹x′)`.
fn ols_prediction(frame: &RegressionFrame, x: &[f64]) -> Result<(f64, f64)> {
    let (n, k) = frame.x.shape();
    if n <= k {
        return Err(Error::Rank(format!("{n} observations for {k} OLS coefficients")));
    }
    let beta = ols(&frame.x, &frame.y)?;
    let fitted = &frame.x * DVector::from_column_slice(&beta);
    let ssr: f64 = frame.y.iter().zip(fitted.iter()).map(|(y, f)| (y - f).powi(2)).sum();
    let s2 = ssr / (n - k) as f64;
    let gram = frame.x.transpose() * &frame.x;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Rank("OLS Gram matrix is not positive definite".into()))?;
    let xv = DVector::from_column_slice(x);
    let leverage = xv.dot(&chol.solve(&xv));
    let point = xv.dot(&DVector::from_column_slice(&beta));
    Ok((point, s2 * (1.0 + leverage)))
}

fn realized_pairs(records: &[ForecastRecord]) -> Result<Vec<(f64, &ForecastRecord)>> {
    records
        .iter()
        .map(|r| {
            r.realized
                .map(|v| (v, r))
                .ok_or_else(|| Error::data(format!("forecast from {} has no realized value", r.origin)))
        })
        .collect()
}

pub fn squared_errors(records: &[ForecastRecord]) -> Result<Vec<f64>> {
    Ok(realized_pairs(records)?
        .into_iter()
        .map(|(v, r)| (v - r.point).powi(2))
        .collect())
}

pub fn msfe(records: &[ForecastRecord]) -> Result<f64> {
    let se = squared_errors(records)?;
    if se.is_empty() {
        return Err(Error::data("no forecasts to evaluate"));
    }
    Ok(se.iter().sum::<f64>() / se.len() as f64)
}

/// Model MSFE over benchmark MSFE; both must share the origin set.
pub fn relative_msfe(records: &[ForecastRecord], benchmark: &[ForecastRecord]) -> Result<f64> {
    check_aligned(records, benchmark)?;
    Ok(msfe(records)? / msfe(benchmark)?)
}

/// Mean over origins of `log N(realized | point, variance)`.
pub fn log_apl(records: &[ForecastRecord]) -> Result<f64> {
    let pairs = realized_pairs(records)?;
    if pairs.is_empty() {
        return Err(Error::data("no forecasts to evaluate"));
    }
    let total: f64 = pairs
        .iter()
        .map(|(v, r)| {
            -0.5 * (2.0 * std::f64::consts::PI * r.variance).ln()
                - (v - r.point).powi(2) / (2.0 * r.variance)
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Diebold-Mariano statistic for `loss_a − loss_b`, Bartlett HAC with `h − 1` lags.
///
/// Negative values favour `a`. Returns 0 when the differential is identically zero.
pub fn dm_statistic(loss_a: &[f64], loss_b: &[f64], h: usize) -> Result<f64> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::arg(format!(
            "loss series differ in length ({} vs {})",
            loss_a.len(),
            loss_b.len()
        )));
    }
    let n = loss_a.len();
    if n < 2 {
        return Err(Error::data("Diebold-Mariano needs at least two forecasts"));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let autocov = |k: usize| -> f64 {
        (k..n).map(|i| (d[i] - mean) * (d[i - k] - mean)).sum::<f64>() / n as f64
    };
    let lags = h.saturating_sub(1).min(n - 1);
    let mut lrv = autocov(0);
    for k in 1..=lags {
        lrv += 2.0 * (1.0 - k as f64 / (lags + 1) as f64) * autocov(k);
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    if !(lrv > 0.0) {
        return Err(Error::numerical("loss differential has zero long-run variance"));
    }
    Ok(mean / (lrv / n as f64).sqrt())
}

/// Running sums of squared errors, keyed by origin date.
pub fn cumulative_sfe(records: &[ForecastRecord]) -> Result<Vec<(NaiveDate, f64)>> {
    let se = squared_errors(records)?;
    let mut acc = 0.0;
    Ok(records
        .iter()
        .zip(se)
        .map(|(r, e)| {
            acc += e;
            (r.origin, acc)
        })
        .collect())
}

fn check_aligned(a: &[ForecastRecord], b: &[ForecastRecord]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.origin != y.origin || x.target != y.target) {
        return Err(Error::data("model and benchmark forecasts cover different origins"));
    }
    Ok(())
}

/// Restricts two forecast sets to their common origins, in date order.
pub fn align(a: &[ForecastRecord], b: &[ForecastRecord]) -> (Vec<ForecastRecord>, Vec<ForecastRecord>) {
    let index: BTreeMap<NaiveDate, &ForecastRecord> = b.iter().map(|r| (r.origin, r)).collect();
    let mut left = Vec::new();
    let mut right = Vec::new();
    for r in a {
        if let Some(&other) = index.get(&r.origin) {
            left.push(r.clone());
            right.push(other.clone());
        }
    }
    left.sort_by_key(|r| r.origin);
    right.sort_by_key(|r| r.origin);
    (left, right)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub n_forecasts: usize,
    pub msfe: f64,
    pub log_apl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub msfe_relative_to_ar2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_apl_spread_vs_ar2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dm_statistic: Option<f64>,
    #[serde(skip)]
    pub cumulative_sfe: Vec<(NaiveDate, f64)>,
}

/// Scores `records`, and against `benchmark` on the common origins when given.
pub fn evaluate(
    records: &[ForecastRecord],
    benchmark: Option<&[ForecastRecord]>,
    h: usize,
) -> Result<EvalReport> {
    let (model, bench) = match benchmark {
        Some(b) => {
            let (m, b) = align(records, b);
            (m, Some(b))
        }
        None => (records.to_vec(), None),
    };
    let mut report = EvalReport {
        n_forecasts: model.len(),
        msfe: msfe(&model)?,
        log_apl: log_apl(&model)?,
        msfe_relative_to_ar2: None,
        log_apl_spread_vs_ar2: None,
        dm_statistic: None,
        cumulative_sfe: cumulative_sfe(&model)?,
    };
    if let Some(b) = bench {
        report.msfe_relative_to_ar2 = Some(relative_msfe(&model, &b)?);
        report.log_apl_spread_vs_ar2 = Some(report.log_apl - log_apl(&b)?);
        report.dm_statistic = Some(dm_statistic(&squared_errors(&model)?, &squared_errors(&b)?, h)?);
    }
    Ok(report)
}

pub fn write_forecasts_csv(path: &Path, records: &[ForecastRecord]) -> Result<()> {
    write_csv(
        path,
        &["origin", "target", "point", "variance", "realized"],
        records.iter().map(|r| {
            vec![
                r.origin.to_string(),
                r.target.to_string(),
                fmt_f64(r.point),
                fmt_f64(r.variance),
                r.realized.map(fmt_f64).unwrap_or_default(),
            ]
        }),
    )
}

pub fn read_forecasts_csv(path: &Path) -> Result<Vec<ForecastRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let cell = |j: usize| row.get(j).unwrap_or("").trim();
        let date = |j: usize| {
            NaiveDate::parse_from_str(cell(j), "%Y-%m-%d")
                .map_err(|e| Error::data(format!("forecast row {}: bad date `{}`: {e}", i + 1, cell(j))))
        };
        let num = |j: usize| {
            cell(j)
                .parse::<f64>()
                .map_err(|_| Error::data(format!("forecast row {}: `{}` is not a number", i + 1, cell(j))))
        };
        out.push(ForecastRecord {
            origin: date(0)?,
            target: date(1)?,
            point: num(2)?,
            variance: num(3)?,
            realized: if cell(4).is_empty() { None } else { Some(num(4)?) },
        });
    }
    Ok(out)
}

/// Months between origin and target of the first record.
pub fn infer_horizon(records: &[ForecastRecord]) -> Result<usize> {
    use chrono::Datelike;
    let r = records.first().ok_or_else(|| Error::data("no forecasts"))?;
    let months = (r.target.year() - r.origin.year()) * 12 + r.target.month() as i32 - r.origin.month() as i32;
    usize::try_from(months)
        .ok()
        .filter(|&m| m > 0)
        .ok_or_else(|| Error::data("target precedes origin"))
}

pub fn write_cumsfe_csv(path: &Path, path_sfe: &[(NaiveDate, f64)]) -> Result<()> {
    write_csv(
        path,
        &["origin", "cumsfe"],
        path_sfe.iter().map(|(d, v)| vec![d.to_string(), fmt_f64(*v)]),
    )
}
