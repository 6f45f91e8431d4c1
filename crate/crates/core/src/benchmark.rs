//! Monte Carlo comparison of GAMP against the reference estimators.
//!
//! Replications run in parallel on the ambient rayon pool; results are
//! collected in replication order, so the AD values do not depend on the
//! thread count.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DenseOperator;
use crate::dgp::{replication_rng, simulate, SimKind, SimOutput, SimSpec, TrueCoefficients};
use crate::error::{Error, Result};
use crate::gamp::{gamp_solve, solve_tvp, GampConfig, VarianceMode};
use crate::io::{fmt_f64, write_csv};
use crate::oracles::{
    ad_statistic, gibbs_lasso_with_rng, gibbs_ssvs_with_rng, ols, per_predictor_ols, GibbsConfig,
};
use crate::volatility::{SvCombine, VariancePrior};

// Offsets separating the Gibbs random streams from the data streams.
const LASSO_SEED_OFFSET: u64 = 0x4c41_5353_4f00_0001;
const SSVS_SEED_OFFSET: u64 = 0x5353_5653_0000_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Estimator {
    Gamp,
    /// Joint least squares on all columns.
    Ols,
    /// Least squares one column at a time.
    OlsPerPredictor,
    /// Sample mean as a constant-coefficient fit of a path.
    OlsConstant,
    Lasso,
    Ssvs,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Gamp => "gamp_sbl",
            Estimator::Ols => "ols",
            Estimator::OlsPerPredictor => "ols_per_predictor",
            Estimator::OlsConstant => "ols_constant",
            Estimator::Lasso => "gibbs_lasso",
            Estimator::Ssvs => "gibbs_ssvs",
        }
    }

    fn applies_to(self, kind: SimKind) -> bool {
        match self {
            Estimator::Gamp => true,
            Estimator::OlsConstant => kind.is_tvp(),
            _ => !kind.is_tvp(),
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Estimator::Gamp,
            Estimator::Ols,
            Estimator::OlsPerPredictor,
            Estimator::OlsConstant,
            Estimator::Lasso,
            Estimator::Ssvs,
        ]
        .into_iter()
        .find(|e| e.label() == s)
        .ok_or_else(|| Error::arg(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchmarkSpec {
    pub sim: SimSpec,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    pub gamp: GampConfig,
    pub gibbs: GibbsConfig,
}

impl BenchmarkSpec {
    /// GAMP settings per design: stochastic volatility for the path designs,
    /// the constant-variance EM update for the static ones.
    pub fn new(sim: SimSpec, reps: usize) -> Self {
        let estimators = match sim.kind {
            k if k.is_tvp() => vec![Estimator::Gamp, Estimator::OlsConstant],
            SimKind::Ar4 => vec![Estimator::Gamp, Estimator::Ols],
            _ => vec![Estimator::Gamp, Estimator::OlsPerPredictor],
        };
        BenchmarkSpec {
            gamp: default_gamp_config(sim.kind),
            gibbs: GibbsConfig {
                seed: sim.seed,
                ..GibbsConfig::default()
            },
            sim,
            reps,
            estimators,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.gamp.validate()?;
        if self.reps == 0 {
            return Err(Error::arg("reps must be at least 1"));
        }
        if let Some(e) = self.estimators.iter().find(|e| !e.applies_to(self.sim.kind)) {
            return Err(Error::arg(format!(
                "estimator {} does not apply to {:?}",
                e.label(),
                self.sim.kind
            )));
        }
        if self
            .estimators
            .iter()
            .any(|e| matches!(e, Estimator::Lasso | Estimator::Ssvs))
        {
            self.gibbs.validate()?;
        }
        Ok(())
    }
}

pub fn default_gamp_config(kind: SimKind) -> GampConfig {
    let variance = if kind.is_tvp() {
        VarianceMode::StochasticVolatility {
            combine: SvCombine::Printed,
        }
    } else {
        VarianceMode::EmConstant {
            prior: VariancePrior::default(),
        }
    };
    GampConfig {
        variance,
        ..GampConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdRecord {
    pub rep: u64,
    pub estimator: Estimator,
    pub ad: f64,
    pub seconds: f64,
    /// GAMP only: whether the solve met the tolerance.
    pub converged: Option<bool>,
    /// GAMP hit the divergence guard; `ad` is NaN and ranks last in medians.
    pub diverged: bool,
}

/// Coefficient estimate (or path) from one estimator on one replication.
pub fn estimate(
    estimator: Estimator,
    data: &SimOutput,
    spec: &BenchmarkSpec,
    rep: u64,
) -> Result<(Vec<f64>, Option<bool>)> {
    let (x, y) = (&data.x, &data.y);
    match estimator {
        Estimator::Gamp => match &data.truth {
            TrueCoefficients::Path(_) => {
                let fit = solve_tvp(x, y, &spec.gamp)?;
                Ok((
                    fit.path.combined.as_slice().to_vec(),
                    Some(fit.solution.state.converged),
                ))
            }
            TrueCoefficients::Static(_) => {
                let sol = gamp_solve(&DenseOperator::new(x.clone()), y, &spec.gamp)?;
                Ok((sol.state.beta_hat, Some(sol.state.converged)))
            }
        },
        Estimator::Ols => Ok((ols(x, y)?, None)),
        Estimator::OlsPerPredictor => Ok((per_predictor_ols(x, y)?, None)),
        Estimator::OlsConstant => {
            let b = ols(x, y)?;
            let path = DMatrix::from_fn(x.nrows(), x.ncols(), |_, j| b[j]);
            Ok((path.as_slice().to_vec(), None))
        }
        Estimator::Lasso => {
            let mut rng = replication_rng(spec.gibbs.seed.wrapping_add(LASSO_SEED_OFFSET), rep);
            let draws = gibbs_lasso_with_rng(x, y, &spec.gibbs, &mut rng)?;
            Ok((draws.posterior_mean(), None))
        }
        Estimator::Ssvs => {
            let mut rng = replication_rng(spec.gibbs.seed.wrapping_add(SSVS_SEED_OFFSET), rep);
            let draws = gibbs_ssvs_with_rng(x, y, &spec.gibbs, &mut rng)?;
            Ok((draws.posterior_mean(), None))
        }
    }
}

fn run_replication(spec: &BenchmarkSpec, rep: u64) -> Result<Vec<AdRecord>> {
    let data = simulate(&spec.sim, rep)?;
    spec.estimators
        .iter()
        .map(|&estimator| {
            let start = Instant::now();
            let (ad, converged, diverged) = match estimate(estimator, &data, spec, rep) {
                Ok((est, converged)) => (ad_statistic(&est, data.truth.values())?, converged, false),
                Err(e @ Error::Divergence { .. }) => {
                    log::warn!("replication {rep}, {}: {e}", estimator.label());
                    (f64::NAN, Some(false), true)
                }
                Err(e) => return Err(e),
            };
            Ok(AdRecord {
                rep,
                estimator,
                ad,
                seconds: start.elapsed().as_secs_f64(),
                converged,
                diverged,
            })
        })
        .collect()
}

/// Runs every replication, in parallel, returning records ordered by
/// replication then estimator.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<Vec<AdRecord>> {
    spec.validate()?;
    let per_rep: Vec<Vec<AdRecord>> = (0..spec.reps as u64)
        .into_par_iter()
        .map(|rep| run_replication(spec, rep))
        .collect::<Result<_>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Median of a non-empty slice (mean of the middle pair for even length).
///
/// NaN sorts above every number, so a diverged replication counts as the worst.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimatorSummary {
    pub estimator: &'static str,
    pub reps: usize,
    pub median_ad: f64,
    pub mean_ad: f64,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    /// Replications where GAMP stopped at `max_iter` or diverged.
    pub unconverged: usize,
    pub diverged: usize,
}

/// Per-estimator summary in the order estimators were requested.
pub fn summarize(records: &[AdRecord], estimators: &[Estimator]) -> Vec<EstimatorSummary> {
    estimators
        .iter()
        .map(|&e| {
            let rows: Vec<&AdRecord> = records.iter().filter(|r| r.estimator == e).collect();
            let ads: Vec<f64> = rows.iter().map(|r| r.ad).collect();
            let n = rows.len().max(1) as f64;
            EstimatorSummary {
                estimator: e.label(),
                reps: rows.len(),
                median_ad: if ads.is_empty() { f64::NAN } else { median(&ads) },
                mean_ad: ads.iter().sum::<f64>() / n,
                mean_seconds: rows.iter().map(|r| r.seconds).sum::<f64>() / n,
                max_seconds: rows.iter().map(|r| r.seconds).fold(0.0, f64::max),
                unconverged: rows.iter().filter(|r| r.converged == Some(false)).count(),
                diverged: rows.iter().filter(|r| r.diverged).count(),
            }
        })
        .collect()
}

/// Boxplot-ready `rep,estimator,ad,seconds`.
pub fn write_ad_csv(path: &Path, records: &[AdRecord]) -> Result<()> {
    write_csv(
        path,
        &["rep", "estimator", "ad", "seconds"],
        records.iter().map(|r| {
            vec![
                r.rep.to_string(),
                r.estimator.label().to_string(),
                fmt_f64(r.ad),
                fmt_f64(r.seconds),
            ]
        }),
    )
}

/// One row per estimator: `T,p,estimator,mean_seconds,median_ad`.
pub fn write_timing_csv(path: &Path, spec: &BenchmarkSpec, summary: &[EstimatorSummary]) -> Result<()> {
    write_csv(
        path,
        &["T", "p", "estimator", "mean_seconds", "max_seconds", "median_ad", "mean_ad"],
        summary.iter().map(|s| {
            vec![
                spec.sim.t.to_string(),
                spec.sim.p.to_string(),
                s.estimator.to_string(),
                fmt_f64(s.mean_seconds),
                fmt_f64(s.max_seconds),
                fmt_f64(s.median_ad),
                fmt_f64(s.mean_ad),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn labels_round_trip() {
        for e in [Estimator::Gamp, Estimator::Lasso, Estimator::OlsConstant] {
            assert_eq!(e.label().parse::<Estimator>().unwrap(), e);
        }
    }

    #[test]
    fn rejects_mismatched_estimators() {
        let mut spec = BenchmarkSpec::new(SimSpec::new(SimKind::RandomWalk, 30, 1), 2);
        spec.estimators.push(Estimator::Lasso);
        assert!(run_benchmark(&spec).is_err());
        let spec = BenchmarkSpec::new(SimSpec::new(SimKind::RandomWalk, 30, 1), 0);
        assert!(run_benchmark(&spec).is_err());
    }

    #[test]
    fn records_are_ordered_by_replication() {
        let spec = BenchmarkSpec::new(SimSpec::new(SimKind::Ar4, 60, 3), 4);
        let recs = run_benchmark(&spec).unwrap();
        assert_eq!(recs.len(), 8);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.rep, (i / 2) as u64);
        }
        let again = run_benchmark(&spec).unwrap();
        let ads = |v: &[AdRecord]| v.iter().map(|r| r.ad).collect::<Vec<_>>();
        assert_eq!(ads(&recs), ads(&again));
    }
}
