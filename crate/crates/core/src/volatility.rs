//! Error-variance estimators used inside the GAMP loop.
//!
//! The time-varying estimator treats `log(r_t² + 1e-10)` as log-volatility
//! plus a log-χ²₁ disturbance, approximated by the seven-component Gaussian
//! mixture of Kim, Shephard and Chib (1998).

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};

/// Offset inside the logarithm keeping zero residuals finite.
pub const LOG_OFFSET: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Gaussian mixture approximation to the log-χ²₁ density.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTable {
    pub components: [MixtureComponent; 7],
}

impl MixtureTable {
    /// Seven-component table of Kim, Shephard and Chib (1998).
    pub fn ksc() -> Self {
        const ROWS: [(f64, f64, f64); 7] = [
            (0.00730, -10.12999, 5.79596),
            (0.10556, -3.97281, 2.61369),
            (0.00002, -8.56686, 5.17950),
            (0.04395, 2.77786, 0.16735),
            (0.34001, 0.61942, 0.64009),
            (0.24566, 1.79518, 0.34023),
            (0.25750, -1.08819, 1.26261),
        ];
        MixtureTable {
            components: ROWS.map(|(weight, mean, variance)| MixtureComponent {
                weight,
                mean,
                variance,
            }),
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// `Σ π_i μ_i`
    pub fn weighted_mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }
}

impl Default for MixtureTable {
    fn default() -> Self {
        Self::ksc()
    }
}

/// How the seven per-component log-volatility estimates are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SvCombine {
    /// `exp(Σ π_i (ỹ_t − μ_i) / 7)`, as printed in the original algorithm.
    #[default]
    Printed,
    /// `exp(ỹ_t − Σ π_i μ_i)`, the weighted mean without the `/7` divisor.
    WeightedMean,
}

/// Per-observation variance estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityPath {
    pub sigma2: Vec<f64>,
    /// `ỹ_t = log(r_t² + 1e-10)`
    pub log_residuals: Vec<f64>,
}

impl VolatilityPath {
    pub fn constant(t: usize, sigma2: f64) -> Self {
        VolatilityPath {
            sigma2: vec![sigma2; t],
            log_residuals: vec![f64::NAN; t],
        }
    }

    /// Writes `date,sigma2` (or `t,sigma2` when `dates` is `None`).
    pub fn write_csv(&self, path: &Path, dates: Option<&[NaiveDate]>) -> Result<()> {
        if let Some(d) = dates {
            if d.len() != self.sigma2.len() {
                return Err(Error::arg("date index does not match volatility path"));
            }
        }
        let key = |t: usize| dates.map_or_else(|| t.to_string(), |d| d[t].to_string());
        write_csv(
            path,
            &[if dates.is_some() { "date" } else { "t" }, "sigma2"],
            self.sigma2.iter().enumerate().map(|(t, &s)| vec![key(t), fmt_f64(s)]),
        )
    }
}

/// Mixture stochastic-volatility estimate from residuals `r_t = y_t − x_t β̂`.
pub fn sv_update(residuals: &[f64], table: &MixtureTable, combine: SvCombine) -> VolatilityPath {
    let mut path = VolatilityPath {
        sigma2: vec![0.0; residuals.len()],
        log_residuals: vec![0.0; residuals.len()],
    };
    sv_update_into(residuals, table, combine, &mut path);
    path
}

pub(crate) fn sv_update_into(
    residuals: &[f64],
    table: &MixtureTable,
    combine: SvCombine,
    path: &mut VolatilityPath,
) {
    let weight_sum = table.weight_sum();
    let weighted_mean = table.weighted_mean();
    for ((r, ly), s2) in residuals
        .iter()
        .zip(path.log_residuals.iter_mut())
        .zip(path.sigma2.iter_mut())
    {
        *ly = (r * r + LOG_OFFSET).ln();
        // Σ π_i (ỹ − μ_i) = ỹ Σπ_i − Σπ_i μ_i
        let centered = *ly * weight_sum - weighted_mean;
        *s2 = match combine {
            SvCombine::Printed => (centered / 7.0).exp(),
            SvCombine::WeightedMean => centered.exp(),
        };
    }
}

/// Hyperparameters of the inverse-Gamma prior behind the constant-variance update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for VariancePrior {
    fn default() -> Self {
        VariancePrior {
            shape: 0.01,
            rate: 0.01,
        }
    }
}

/// Approximate posterior mode `(2c₂ + Σ r_t²) / (T + 2c₁ − 2)`.
pub fn em_constant_variance(residuals: &[f64], prior: VariancePrior) -> Result<f64> {
    let denom = residuals.len() as f64 + 2.0 * prior.shape - 2.0;
    if !(denom > 0.0) {
        return Err(Error::arg(format!(
            "constant-variance update needs T + 2c1 - 2 > 0, got {denom}"
        )));
    }
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    Ok((2.0 * prior.rate + ssr) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_first_row_and_weights() {
        let t = MixtureTable::ksc();
        let c = t.components[0];
        assert_eq!((c.weight, c.mean, c.variance), (0.00730, -10.12999, 5.79596));
        assert!((t.weight_sum() - 1.0).abs() < 1e-12);
        assert!(t.components.iter().all(|c| c.variance > 0.0));
    }

    #[test]
    fn unit_residual() {
        let t = MixtureTable::ksc();
        let path = sv_update(&[1.0, -1.0], &t, SvCombine::Printed);
        let expected = ((1e-10f64).ln_1p() - t.weighted_mean()).exp().powf(1.0 / 7.0);
        assert!((path.log_residuals[0] - 1e-10).abs() < 1e-15);
        assert!((path.sigma2[0] - expected).abs() < 1e-12);
        assert!((path.sigma2[0] - 1.0).abs() < 1e-3);
        assert_eq!(path.sigma2[0], path.sigma2[1]);
    }

    #[test]
    fn zero_residual() {
        let path = sv_update(&[0.0], &MixtureTable::ksc(), SvCombine::Printed);
        assert!((path.log_residuals[0] + 23.025850929940457).abs() < 1e-12);
        assert!((path.sigma2[0] - 0.0372).abs() < 1e-4);
    }

    #[test]
    fn weighted_mean_mode_drops_divisor() {
        let t = MixtureTable::ksc();
        let printed = sv_update(&[2.0], &t, SvCombine::Printed).sigma2[0];
        let mean = sv_update(&[2.0], &t, SvCombine::WeightedMean).sigma2[0];
        assert!((printed.powi(7) - mean).abs() < 1e-9 * mean);
    }

    #[test]
    fn printed_estimate_scales_sublinearly() {
        let t = MixtureTable::ksc();
        let base = sv_update(&[3.0], &t, SvCombine::Printed).sigma2[0];
        let scaled = sv_update(&[30.0], &t, SvCombine::Printed).sigma2[0];
        assert!((scaled / base - 100f64.powf(1.0 / 7.0)).abs() < 1e-9);
    }

    #[test]
    fn constant_variance_examples() {
        let prior = VariancePrior::default();
        let r = vec![1.0; 100];
        assert!((em_constant_variance(&r, prior).unwrap() - 100.02 / 98.02).abs() < 1e-12);
        let z = vec![0.0; 100];
        assert!((em_constant_variance(&z, prior).unwrap() - 0.02 / 98.02).abs() < 1e-15);
        let p = VariancePrior { shape: 1.0, rate: 0.0 };
        assert_eq!(em_constant_variance(&[1.0, 1.0], p).unwrap(), 1.0);
    }

    #[test]
    fn constant_variance_rejects_empty_denominator() {
        let p = VariancePrior { shape: 0.0, rate: 1.0 };
        assert!(em_constant_variance(&[1.0, 2.0], p).is_err());
    }
}
