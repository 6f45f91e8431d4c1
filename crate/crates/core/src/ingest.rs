//! Panel ingestion, stationarity transforms and regression-frame construction.
//!
//! Panels follow a FRED-MD style CSV layout: a `date` column of ISO-8601
//! dates, one column per mnemonic and an optional second row whose date cell
//! reads `transform` and carries the transformation codes 1–6. Codes may also
//! come from a sidecar JSON file `{ "tcodes": { "<mnemonic>": <int> } }`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stationarity transformation applied to a level series `w_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum TransformCode {
    /// `x_t = w_t`
    Level,
    /// `x_t = w_t - w_{t-1}`
    Diff,
    /// `x_t = Δw_t - Δw_{t-1}`
    Diff2,
    /// `x_t = log w_t`
    Log,
    /// `x_t = log w_t - log w_{t-1}`
    LogDiff,
    /// `x_t = Δlog w_t - Δlog w_{t-1}`
    LogDiff2,
}

impl TransformCode {
    pub fn code(self) -> i64 {
        match self {
            TransformCode::Level => 1,
            TransformCode::Diff => 2,
            TransformCode::Diff2 => 3,
            TransformCode::Log => 4,
            TransformCode::LogDiff => 5,
            TransformCode::LogDiff2 => 6,
        }
    }

    /// Number of leading observations lost to differencing.
    pub fn diff_order(self) -> usize {
        match self {
            TransformCode::Level | TransformCode::Log => 0,
            TransformCode::Diff | TransformCode::LogDiff => 1,
            TransformCode::Diff2 | TransformCode::LogDiff2 => 2,
        }
    }

    pub fn takes_log(self) -> bool {
        matches!(
            self,
            TransformCode::Log | TransformCode::LogDiff | TransformCode::LogDiff2
        )
    }
}

impl TryFrom<i64> for TransformCode {
    type Error = Error;

    fn try_from(code: i64) -> Result<Self> {
        Ok(match code {
            1 => TransformCode::Level,
            2 => TransformCode::Diff,
            3 => TransformCode::Diff2,
            4 => TransformCode::Log,
            5 => TransformCode::LogDiff,
            6 => TransformCode::LogDiff2,
            other => return Err(Error::arg(format!("unknown transformation code {other}"))),
        })
    }
}

impl From<TransformCode> for i64 {
    fn from(code: TransformCode) -> i64 {
        code.code()
    }
}

impl std::str::FromStr for TransformCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("transformation code `{s}` is not a number")))?;
        if v.fract() != 0.0 {
            return Err(Error::data(format!("transformation code `{s}` is not an integer")));
        }
        TransformCode::try_from(v as i64)
    }
}

/// Applies `code` to the level series `w`.
///
/// The first `code.diff_order()` entries are `None`. Log codes reject
/// non-positive levels with [`Error::Domain`] naming `series` and the index.
pub fn apply_transform(series: &str, w: &[f64], code: TransformCode) -> Result<Vec<Option<f64>>> {
    let d = code.diff_order();
    if w.len() <= d {
        return Err(Error::arg(format!(
            "series `{series}` has {} observations, code {} needs more than {d}",
            w.len(),
            code.code()
        )));
    }
    let base: Vec<f64> = if code.takes_log() {
        w.iter()
            .enumerate()
            .map(|(index, &value)| {
                if value > 0.0 {
                    Ok(value.ln())
                } else {
                    Err(Error::Domain {
                        series: series.to_string(),
                        index,
                        value,
                    })
                }
            })
            .collect::<Result<_>>()?
    } else {
        w.to_vec()
    };

    let out = (0..base.len())
        .map(|t| {
            if t < d {
                return None;
            }
            Some(match d {
                0 => base[t],
                1 => base[t] - base[t - 1],
                _ => (base[t] - base[t - 1]) - (base[t - 1] - base[t - 2]),
            })
        })
        .collect();
    Ok(out)
}

/// Annualized `h`-period inflation `(1200/h)·log(P_t / P_{t-h})`.
///
/// The first `h` entries are `None`.
pub fn build_inflation_target(price: &[f64], h: usize) -> Result<Vec<Option<f64>>> {
    if h == 0 {
        return Err(Error::arg("inflation horizon must be positive"));
    }
    if let Some((i, &p)) = price.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
        return Err(Error::Domain {
            series: "price".to_string(),
            index: i,
            value: p,
        });
    }
    let scale = 1200.0 / h as f64;
    Ok((0..price.len())
        .map(|t| (t >= h).then(|| scale * (price[t] / price[t - h]).ln()))
        .collect())
}

/// Levels as read from disk.
#[derive(Debug, Clone)]
pub struct RawPanel {
    pub dates: Vec<NaiveDate>,
    /// Mnemonics in file order.
    pub names: Vec<String>,
    pub levels: HashMap<String, Vec<f64>>,
    pub tcodes: HashMap<String, TransformCode>,
}

/// Transformed series, `None` where differencing consumed an observation.
#[derive(Debug, Clone)]
pub struct StationaryPanel {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub series: HashMap<String, Vec<Option<f64>>>,
    pub leading_missing: HashMap<String, usize>,
}

#[derive(Debug, Deserialize, Serialize)]
struct TcodeSidecar {
    tcodes: HashMap<String, i64>,
}

/// Reads `{ "tcodes": { "<mnemonic>": <int> } }`.
pub fn read_tcodes_json(path: &Path) -> Result<HashMap<String, TransformCode>> {
    let sidecar: TcodeSidecar = serde_json::from_reader(File::open(path)?)?;
    sidecar
        .tcodes
        .into_iter()
        .map(|(k, v)| Ok((k, TransformCode::try_from(v)?)))
        .collect()
}

impl RawPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        levels: HashMap<String, Vec<f64>>,
        tcodes: HashMap<String, TransformCode>,
    ) -> Result<Self> {
        let panel = RawPanel {
            dates,
            names,
            levels,
            tcodes,
        };
        panel.validate()?;
        Ok(panel)
    }

    fn validate(&self) -> Result<()> {
        if let Some(w) = self.dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::data(format!(
                "dates must be strictly increasing ({} is followed by {})",
                w[0], w[1]
            )));
        }
        for name in &self.names {
            let series = self
                .levels
                .get(name)
                .ok_or_else(|| Error::data(format!("series `{name}` has no values")))?;
            if series.len() != self.dates.len() {
                return Err(Error::data(format!(
                    "series `{name}` has {} values for {} dates",
                    series.len(),
                    self.dates.len()
                )));
            }
            if !self.tcodes.contains_key(name) {
                return Err(Error::data(format!("no transformation code for `{name}`")));
            }
        }
        Ok(())
    }

    /// Reads a panel CSV; `sidecar` codes override any in-file `transform` row.
    pub fn read_csv(path: &Path, sidecar: Option<&Path>) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        let sidecar_codes = sidecar.map(read_tcodes_json).transpose()?;
        Self::parse_csv(text.as_bytes(), sidecar_codes)
    }

    pub fn parse_csv<R: Read>(
        reader: R,
        sidecar: Option<HashMap<String, TransformCode>>,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("date") {
            return Err(Error::data("first CSV column must be named `date`"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
        if names.is_empty() {
            return Err(Error::data("panel has no series columns"));
        }

        let mut tcodes = HashMap::new();
        let mut dates = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let stamp = record.get(0).unwrap_or("").trim();
            if row == 0 && stamp.eq_ignore_ascii_case("transform") {
                for (name, cell) in names.iter().zip(record.iter().skip(1)) {
                    tcodes.insert(name.clone(), cell.parse::<TransformCode>()?);
                }
                continue;
            }
            let date = NaiveDate::parse_from_str(stamp, "%Y-%m-%d")
                .map_err(|e| Error::data(format!("row {}: bad date `{stamp}`: {e}", row + 1)))?;
            dates.push(date);
            for (j, name) in names.iter().enumerate() {
                let cell = record.get(j + 1).unwrap_or("").trim();
                if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    return Err(Error::data(format!(
                        "series `{name}` is missing a value at {date}; panels must be complete"
                    )));
                }
                let value: f64 = cell.parse().map_err(|_| {
                    Error::data(format!("series `{name}` at {date}: `{cell}` is not a number"))
                })?;
                columns[j].push(value);
            }
        }
        if let Some(codes) = sidecar {
            tcodes.extend(codes);
        }
        let levels = names.iter().cloned().zip(columns).collect();
        RawPanel::new(dates, names, levels, tcodes)
    }

    /// Applies every series' transformation code.
    pub fn transform(&self) -> Result<StationaryPanel> {
        let mut series = HashMap::new();
        let mut leading_missing = HashMap::new();
        for name in &self.names {
            let code = self.tcodes[name];
            series.insert(name.clone(), apply_transform(name, &self.levels[name], code)?);
            leading_missing.insert(name.clone(), code.diff_order());
        }
        Ok(StationaryPanel {
            dates: self.dates.clone(),
            names: self.names.clone(),
            series,
            leading_missing,
        })
    }

    /// Splits off one series' levels (e.g. a price index) from the rest.
    pub fn split_off(&self, name: &str) -> Result<(Vec<f64>, RawPanel)> {
        let levels = self
            .levels
            .get(name)
            .ok_or_else(|| Error::data(format!("no series named `{name}`")))?
            .clone();
        let mut rest = self.clone();
        rest.names.retain(|n| n != name);
        rest.levels.remove(name);
        rest.tcodes.remove(name);
        Ok((levels, rest))
    }
}

impl StationaryPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// First row at which every series is observed.
    pub fn first_complete_row(&self) -> usize {
        self.leading_missing.values().copied().max().unwrap_or(0)
    }

    /// Dense block of rows `start..=end` (all series, file order).
    pub fn block(&self, start: usize, end: usize) -> Result<DMatrix<f64>> {
        if start > end || end >= self.len() {
            return Err(Error::arg(format!(
                "row range {start}..={end} is outside a panel of {} rows",
                self.len()
            )));
        }
        let n = end - start + 1;
        let mut out = DMatrix::zeros(n, self.names.len());
        for (j, name) in self.names.iter().enumerate() {
            let col = &self.series[name];
            for i in 0..n {
                out[(i, j)] = col[start + i].ok_or_else(|| {
                    Error::data(format!("series `{name}` is missing at row {}", start + i))
                })?;
            }
        }
        Ok(out)
    }
}

/// Left-hand side of the direct forecasting regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetForm {
    /// `π^h_{t+h} - π_t`, own lags enter as `Δπ_t`.
    Gap,
    /// `π^h_{t+h}`, own lags enter as `π_t`.
    Level,
}

/// Lag structure of a direct `h`-step forecasting regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub horizon: usize,
    pub form: TargetForm,
    /// Offsets of the own monthly inflation terms (0 = dated t).
    pub own_lags: Vec<usize>,
    /// Offsets applied to every predictor series.
    pub predictor_lags: Vec<usize>,
}

/// Regressor row for the forecast made at the information cutoff.
#[derive(Debug, Clone)]
pub struct OriginRow {
    pub index: usize,
    pub x: Vec<f64>,
    /// Added to a model prediction to get a `π^h` forecast (π_t for gap, 0 for level).
    pub anchor: f64,
}

/// Aligned `(y, X)` with regressors dated `rows[i]` and targets dated `rows[i] + h`.
#[derive(Debug, Clone)]
pub struct RegressionFrame {
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub anchor: Vec<f64>,
    /// Intercept plus own lags occupy columns `0..n_unshrunk`.
    pub n_unshrunk: usize,
    pub origin: Option<OriginRow>,
    pub horizon: usize,
}

impl RegressionFrame {
    /// Index of the target observation for training row `row`.
    pub fn target_index(&self, row: usize) -> usize {
        self.rows[row] + self.horizon
    }
}

/// Builds the direct-forecast regression from a price level and predictors.
///
/// Only observations with index `≤ last` are read. Training rows need their
/// target `t + h ≤ last`; the row at `last` itself is returned as the
/// forecast origin when all its regressors exist. `predictors` are aligned
/// with `price` and may only be missing at the head.
pub fn make_regression_frame(
    price: &[f64],
    predictors: &[(String, Vec<Option<f64>>)],
    spec: &FrameSpec,
    last: usize,
) -> Result<RegressionFrame> {
    let h = spec.horizon;
    if h == 0 {
        return Err(Error::arg("forecast horizon must be positive"));
    }
    if last >= price.len() {
        return Err(Error::arg(format!(
            "information cutoff {last} beyond {} observations",
            price.len()
        )));
    }
    for (name, series) in predictors {
        if series.len() != price.len() {
            return Err(Error::data(format!(
                "predictor `{name}` has {} values, price has {}",
                series.len(),
                price.len()
            )));
        }
    }
    let price = &price[..=last];
    let monthly = build_inflation_target(price, 1)?;
    let target = build_inflation_target(price, h)?;
    let own: Vec<Option<f64>> = match spec.form {
        TargetForm::Level => monthly.clone(),
        TargetForm::Gap => (0..monthly.len())
            .map(|t| match (t.checked_sub(1).and_then(|s| monthly[s]), monthly[t]) {
                (Some(prev), Some(cur)) => Some(cur - prev),
                _ => None,
            })
            .collect(),
    };

    let mut names = vec!["intercept".to_string()];
    names.extend(spec.own_lags.iter().map(|l| own_name(spec.form, *l)));
    for (name, _) in predictors {
        names.extend(spec.predictor_lags.iter().map(|l| lag_name(name, *l)));
    }
    let n_unshrunk = 1 + spec.own_lags.len();

    let regressors = |t: usize| -> Option<Vec<f64>> {
        let mut x = Vec::with_capacity(names.len());
        x.push(1.0);
        for &l in &spec.own_lags {
            x.push(own[t.checked_sub(l)?]?);
        }
        for (_, series) in predictors {
            for &l in &spec.predictor_lags {
                x.push(series[t.checked_sub(l)?]?);
            }
        }
        Some(x)
    };
    let anchor_at = |t: usize| -> Option<f64> {
        match spec.form {
            TargetForm::Gap => monthly[t],
            TargetForm::Level => Some(0.0),
        }
    };

    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut anchor = Vec::new();
    let mut data = Vec::new();
    for t in 0..=last.saturating_sub(h) {
        if t + h > last {
            break;
        }
        let (Some(x), Some(a), Some(tgt)) = (regressors(t), anchor_at(t), target[t + h]) else {
            if !rows.is_empty() {
                return Err(Error::data(format!(
                    "missing value inside the sample at row {t}; only leading gaps are allowed"
                )));
            }
            continue;
        };
        rows.push(t);
        y.push(tgt - a);
        anchor.push(a);
        data.extend(x);
    }
    if rows.is_empty() {
        return Err(Error::data(
            "no complete observations after aligning targets and lags",
        ));
    }
    let x = DMatrix::from_row_slice(rows.len(), names.len(), &data);
    let origin = regressors(last).zip(anchor_at(last)).map(|(x, anchor)| OriginRow {
        index: last,
        x,
        anchor,
    });
    Ok(RegressionFrame {
        rows,
        y,
        x,
        names,
        anchor,
        n_unshrunk,
        origin,
        horizon: h,
    })
}

fn own_name(form: TargetForm, lag: usize) -> String {
    let base = match form {
        TargetForm::Gap => "dpi",
        TargetForm::Level => "pi",
    };
    lag_name(base, lag)
}

fn lag_name(base: &str, lag: usize) -> String {
    if lag == 0 {
        base.to_string()
    } else {
        format!("{base}_l{lag}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_by_code() {
        let w = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(apply_transform("x", &w, TransformCode::Level).unwrap()[3], Some(8.0));
        let d = apply_transform("x", &w, TransformCode::Diff).unwrap();
        assert_eq!(d, vec![None, Some(1.0), Some(2.0), Some(4.0)]);
        let dd = apply_transform("x", &w, TransformCode::Diff2).unwrap();
        assert_eq!(dd, vec![None, None, Some(1.0), Some(2.0)]);
        let ld = apply_transform("x", &w, TransformCode::LogDiff).unwrap();
        assert!((ld[1].unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_code_rejects_non_positive() {
        let err = apply_transform("gdp", &[1.0, 0.0, 2.0], TransformCode::Log).unwrap_err();
        assert!(matches!(err, Error::Domain { ref series, index: 1, .. } if series == "gdp"));
    }

    #[test]
    fn inflation_target_annualizes() {
        let p = [100.0, 100.0 * (0.01f64).exp(), 100.0 * (0.03f64).exp()];
        let one = build_inflation_target(&p, 1).unwrap();
        assert_eq!(one[0], None);
        assert!((one[1].unwrap() - 12.0).abs() < 1e-10);
        let two = build_inflation_target(&p, 2).unwrap();
        assert!((two[2].unwrap() - 18.0).abs() < 1e-10);
        assert!(build_inflation_target(&p, 0).is_err());
    }

    #[test]
    fn parses_transform_row_and_rejects_gaps() {
        let text = "date,a,b\ntransform,1,5\n2000-01-01,1,2\n2000-02-01,2,3\n";
        let panel = RawPanel::parse_csv(text.as_bytes(), None).unwrap();
        assert_eq!(panel.dates.len(), 2);
        assert_eq!(panel.tcodes["b"], TransformCode::LogDiff);
        let gap = "date,a\ntransform,1\n2000-01-01,\n";
        assert!(RawPanel::parse_csv(gap.as_bytes(), None).is_err());
        let order = "date,a\ntransform,1\n2000-02-01,1\n2000-01-01,2\n";
        assert!(RawPanel::parse_csv(order.as_bytes(), None).is_err());
    }

    #[test]
    fn frame_ignores_data_after_cutoff() {
        let price: Vec<f64> = (0..40).map(|t| 100.0 * (0.002 * t as f64 + 0.001 * (t as f64).sin()).exp()).collect();
        let pred = vec![("z".to_string(), (0..40).map(|t| Some(t as f64)).collect::<Vec<_>>())];
        let spec = FrameSpec {
            horizon: 3,
            form: TargetForm::Gap,
            own_lags: vec![0, 1],
            predictor_lags: vec![0, 1],
        };
        let full = make_regression_frame(&price, &pred, &spec, 30).unwrap();
        let mut poisoned = price.clone();
        for v in &mut poisoned[31..] {
            *v = 1e6;
        }
        let cut = make_regression_frame(&poisoned, &pred, &spec, 30).unwrap();
        assert_eq!(full.y, cut.y);
        assert_eq!(full.x, cut.x);
        assert_eq!(*full.rows.last().unwrap() + 3, 30);
        let origin = full.origin.unwrap();
        assert_eq!(origin.index, 30);
        assert_eq!(full.n_unshrunk, 3);
        assert_eq!(full.names, ["intercept", "dpi", "dpi_l1", "z", "z_l1"]);
    }
}
