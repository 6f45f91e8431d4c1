//! Generalized approximate message passing for `y = Aβ + ε`.
//!
//! The output channel is additive white Gaussian noise with per-observation
//! variance `σ²_t`; the input channel is the sparse Bayesian learning prior
//! `β_i | α_i ~ N(0, 1/α_i)` with EM updates of the precisions `α_i`. Each
//! iteration runs one output step over observations, one input step over
//! coefficients, the precision update and the variance update.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{CoefficientPath, LinearOperator, TvpDesignOperator};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};
use crate::volatility::{
    em_constant_variance, sv_update_into, MixtureTable, SvCombine, VariancePrior, VolatilityPath,
};

/// `‖β̂‖∞` above which a solve is declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e10;

/// EM rule for the prior precisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AlphaUpdate {
    /// Gamma mode `(2a − 1)/(2b + β̂²)`; negative (then clamped) for `a < ½`.
    GammaMode,
    /// Gamma posterior mean `(2a + 1)/(2b + β̂² + τ̂ᵝ)`.
    #[default]
    Mean,
    /// Precisions stay at their initial value.
    Fixed,
}

/// Treatment of the error variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "mode")]
pub enum VarianceMode {
    KnownConstant { sigma2: f64 },
    EmConstant { prior: VariancePrior },
    StochasticVolatility { combine: SvCombine },
}

impl Default for VarianceMode {
    fn default() -> Self {
        VarianceMode::StochasticVolatility {
            combine: SvCombine::Printed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct GampConfig {
    /// Gamma prior shape on each precision.
    pub a: f64,
    /// Gamma prior rate on each precision.
    pub b: f64,
    pub max_iter: usize,
    /// Stop once `‖β̂⁽ʳ⁾ − β̂⁽ʳ⁻¹⁾‖∞ < tol`.
    pub tol: f64,
    /// Weight on the new iterate, in `(0, 1]`.
    pub damping: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_update: AlphaUpdate,
    /// Starting precision for every coefficient.
    pub alpha_init: f64,
    /// Starting posterior variance for every coefficient.
    pub tau_beta_init: f64,
    pub variance: VarianceMode,
    /// Columns held at `alpha_min` (never shrunk).
    pub no_shrink: Vec<usize>,
    pub record_trace: bool,
}

impl Default for GampConfig {
    fn default() -> Self {
        GampConfig {
            a: 1e-10,
            b: 1e-10,
            max_iter: 1000,
            tol: 1e-6,
            damping: 0.9,
            alpha_min: 1e-8,
            alpha_max: 1e12,
            alpha_update: AlphaUpdate::Mean,
            alpha_init: 1.0 / 100.0,
            tau_beta_init: 100.0,
            variance: VarianceMode::default(),
            no_shrink: Vec::new(),
            record_trace: false,
        }
    }
}

impl GampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::arg(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::arg("tolerance must be positive"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < self.alpha_max) {
            return Err(Error::arg(format!(
                "need 0 < alpha_min < alpha_max, got {} and {}",
                self.alpha_min, self.alpha_max
            )));
        }
        if !(self.alpha_init > 0.0 && self.tau_beta_init > 0.0) {
            return Err(Error::arg("initial precision and variance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::arg("max_iter must be at least 1"));
        }
        match self.variance {
            VarianceMode::KnownConstant { sigma2 } if !(sigma2 > 0.0) => {
                Err(Error::arg("known variance must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Message quantities after the last completed iteration.
#[derive(Debug, Clone)]
pub struct GampState {
    pub beta_hat: Vec<f64>,
    /// Posterior variances of `β̂`.
    pub tau_beta: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub tau_s: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub tau_c: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub tau_z: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// `Σ_t x²_ti τ̂ˢ_t`
    pub prec_d: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub iter: usize,
    pub converged: bool,
}

impl GampState {
    fn initial(t: usize, q: usize, cfg: &GampConfig) -> Self {
        let sigma2 = match cfg.variance {
            VarianceMode::KnownConstant { sigma2 } => sigma2,
            _ => 1.0,
        };
        let mut alpha = vec![cfg.alpha_init; q];
        for &i in &cfg.no_shrink {
            alpha[i] = cfg.alpha_min;
        }
        GampState {
            beta_hat: vec![0.0; q],
            tau_beta: vec![cfg.tau_beta_init; q],
            s_hat: vec![0.0; t],
            tau_s: vec![0.0; t],
            c_hat: vec![0.0; t],
            tau_c: vec![0.0; t],
            z_hat: vec![0.0; t],
            tau_z: vec![0.0; t],
            d_hat: vec![0.0; q],
            prec_d: vec![0.0; q],
            alpha,
            sigma2: vec![sigma2; t],
            iter: 0,
            converged: false,
        }
    }
}

/// Output of the AWGN channel for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMessages {
    pub z_hat: f64,
    pub tau_z: f64,
    pub s_hat: f64,
    pub tau_s: f64,
}

/// AWGN output step for one observation.
///
/// Computes `τ̂ᶻ = τ̂ᶜσ²/(τ̂ᶜ+σ²)`, `ẑ = τ̂ᶻ(y/σ² + ĉ/τ̂ᶜ)`,
/// `ŝ = (ẑ−ĉ)/τ̂ᶜ` and `τ̂ˢ = (1−τ̂ᶻ/τ̂ᶜ)/τ̂ᶜ`. The differences `ẑ−ĉ` and
/// `1−τ̂ᶻ/τ̂ᶜ` are evaluated as `τ̂ᶻ(y−ĉ)/σ²` and `τ̂ᶻ/σ²`, which are exact
/// rewrites that avoid cancellation when `τ̂ᶜ ≪ σ²`.
pub fn gamp_output_step(c_hat: f64, tau_c: f64, y: f64, sigma2: f64) -> Result<OutputMessages> {
    if !(tau_c > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::numerical(format!(
            "output step needs positive variances, got tau_c={tau_c}, sigma2={sigma2}"
        )));
    }
    let tau_z = tau_c * sigma2 / (tau_c + sigma2);
    let z_hat = tau_z * (y / sigma2 + c_hat / tau_c);
    let z_minus_c = tau_z * (y - c_hat) / sigma2;
    let one_minus_ratio = tau_z / sigma2;
    Ok(OutputMessages {
        z_hat,
        tau_z,
        s_hat: z_minus_c / tau_c,
        tau_s: one_minus_ratio / tau_c,
    })
}

/// Gaussian prior `N(0, 1/α)` times pseudo-likelihood `N(d̂, 1/prec_d)`.
///
/// Returns the posterior mean and variance. With `prec_d = 0` the prior is
/// returned unchanged.
pub fn gamp_input_step(d_hat: f64, prec_d: f64, alpha: f64) -> Result<(f64, f64)> {
    if prec_d < 0.0 || alpha < 0.0 {
        return Err(Error::numerical(format!(
            "input step needs non-negative precisions, got prec_d={prec_d}, alpha={alpha}"
        )));
    }
    let total = alpha + prec_d;
    if !(total > 0.0) {
        return Err(Error::numerical("degenerate posterior: alpha + prec_d = 0"));
    }
    Ok((prec_d * d_hat / total, 1.0 / total))
}

/// EM update of one prior precision, clamped to `[alpha_min, alpha_max]`.
pub fn em_alpha_update(beta_hat: f64, tau_beta: f64, cfg: &GampConfig) -> f64 {
    let raw = match cfg.alpha_update {
        AlphaUpdate::GammaMode => (2.0 * cfg.a - 1.0) / (2.0 * cfg.b + beta_hat * beta_hat),
        AlphaUpdate::Mean => {
            (2.0 * cfg.a + 1.0) / (2.0 * cfg.b + beta_hat * beta_hat + tau_beta.max(0.0))
        }
        AlphaUpdate::Fixed => return cfg.alpha_init.clamp(cfg.alpha_min, cfg.alpha_max),
    };
    if raw.is_nan() {
        cfg.alpha_max
    } else {
        raw.clamp(cfg.alpha_min, cfg.alpha_max)
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub max_delta: f64,
    /// `‖y − Aβ̂‖²`
    pub residual_ss: f64,
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    write_csv(
        path,
        &["iteration", "max_delta_beta", "residual_ss"],
        trace.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_f64(r.max_delta),
                fmt_f64(r.residual_ss),
            ]
        }),
    )
}

#[derive(Debug, Clone)]
pub struct GampSolution {
    pub state: GampState,
    pub volatility: VolatilityPath,
    pub trace: Vec<TraceRow>,
}

/// Runs GAMP on `y = Aβ + ε` until `‖Δβ̂‖∞ < tol` or `max_iter`.
///
/// Hitting `max_iter` is not an error: the returned state has
/// `converged == false`. Non-finite iterates or `‖β̂‖∞ > 1e10` raise
/// [`Error::Divergence`].
pub fn gamp_solve<A: LinearOperator + ?Sized>(
    a: &A,
    y: &[f64],
    cfg: &GampConfig,
) -> Result<GampSolution> {
    cfg.validate()?;
    let (t, q) = (a.nrows(), a.ncols());
    if y.len() != t {
        return Err(Error::arg(format!("operator has {t} rows, y has {}", y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::data(format!("y[{i}] is not finite")));
    }
    if let Some(&i) = cfg.no_shrink.iter().find(|&&i| i >= q) {
        return Err(Error::arg(format!("no-shrink column {i} outside 0..{q}")));
    }
    let mut keep_diffuse = vec![false; q];
    for &i in &cfg.no_shrink {
        keep_diffuse[i] = true;
    }

    let table = MixtureTable::ksc();
    let mut st = GampState::initial(t, q, cfg);
    let mut volatility = VolatilityPath::constant(t, st.sigma2[0]);
    let mut trace = Vec::new();
    let damp = cfg.damping;

    let mut fitted = vec![0.0; t];
    let mut correlation = vec![0.0; q];
    let mut residuals = vec![0.0; t];

    for r in 1..=cfg.max_iter {
        // Output step: τ̂ᶜ first, then the Onsager-corrected ĉ.
        a.forward_sq_into(&st.tau_beta, &mut st.tau_c);
        for i in 0..t {
            st.c_hat[i] = fitted[i] - st.s_hat[i] * st.tau_c[i];
            let out = gamp_output_step(st.c_hat[i], st.tau_c[i], y[i], st.sigma2[i])
                .map_err(|e| diverged(r, e.to_string()))?;
            st.z_hat[i] = out.z_hat;
            st.tau_z[i] = out.tau_z;
            if r == 1 {
                st.s_hat[i] = out.s_hat;
                st.tau_s[i] = out.tau_s;
            } else {
                st.s_hat[i] = damp * out.s_hat + (1.0 - damp) * st.s_hat[i];
                st.tau_s[i] = damp * out.tau_s + (1.0 - damp) * st.tau_s[i];
            }
        }

        // Input step.
        a.adjoint_sq_into(&st.tau_s, &mut st.prec_d);
        a.adjoint_into(&st.s_hat, &mut correlation);
        let mut max_delta: f64 = 0.0;
        for i in 0..q {
            let prec = st.prec_d[i];
            let old = st.beta_hat[i];
            let (beta, tau) = if prec > 0.0 {
                st.d_hat[i] = old + correlation[i] / prec;
                gamp_input_step(st.d_hat[i], prec, st.alpha[i])
                    .map_err(|e| diverged(r, e.to_string()))?
            } else {
                st.d_hat[i] = old;
                (0.0, 1.0 / st.alpha[i])
            };
            let new_beta = damp * beta + (1.0 - damp) * old;
            st.tau_beta[i] = damp * tau + (1.0 - damp) * st.tau_beta[i];
            st.beta_hat[i] = new_beta;
            max_delta = max_delta.max((new_beta - old).abs());
        }
        check_finite(&st.beta_hat, r)?;

        // Prior precisions.
        if cfg.alpha_update != AlphaUpdate::Fixed {
            for i in 0..q {
                st.alpha[i] = if keep_diffuse[i] {
                    cfg.alpha_min
                } else {
                    em_alpha_update(st.beta_hat[i], st.tau_beta[i], cfg)
                };
            }
        }

        // Error variance.
        a.forward_into(&st.beta_hat, &mut fitted);
        for i in 0..t {
            residuals[i] = y[i] - fitted[i];
        }
        match cfg.variance {
            VarianceMode::KnownConstant { .. } => {}
            VarianceMode::EmConstant { prior } => {
                let s2 = em_constant_variance(&residuals, prior)?;
                if !(s2 > 0.0 && s2.is_finite()) {
                    return Err(diverged(r, format!("variance update gave {s2}")));
                }
                st.sigma2.fill(s2);
                volatility.sigma2.fill(s2);
            }
            VarianceMode::StochasticVolatility { combine } => {
                sv_update_into(&residuals, &table, combine, &mut volatility);
                st.sigma2.copy_from_slice(&volatility.sigma2);
                if let Some(bad) = st.sigma2.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
                    return Err(diverged(r, format!("volatility update gave {bad}")));
                }
            }
        }

        st.iter = r;
        if cfg.record_trace {
            trace.push(TraceRow {
                iteration: r,
                max_delta,
                residual_ss: residuals.iter().map(|e| e * e).sum(),
            });
        }
        if max_delta < cfg.tol {
            st.converged = true;
            break;
        }
    }

    // An unconverged iterate that fits worse than β = 0 is an oscillation
    // the coefficient bound did not catch.
    if !st.converged {
        let ssr: f64 = residuals.iter().map(|e| e * e).sum();
        let tss: f64 = y.iter().map(|v| v * v).sum();
        if ssr > tss {
            return Err(diverged(
                st.iter,
                format!("unconverged with residual SS {ssr:e} above ‖y‖² = {tss:e}"),
            ));
        }
    }

    if let VarianceMode::KnownConstant { sigma2 } = cfg.variance {
        volatility.sigma2.fill(sigma2);
    }
    Ok(GampSolution {
        state: st,
        volatility,
        trace,
    })
}

fn diverged(iteration: usize, reason: String) -> Error {
    Error::Divergence { iteration, reason }
}

fn check_finite(beta: &[f64], iteration: usize) -> Result<()> {
    let mut worst: f64 = 0.0;
    for &b in beta {
        if !b.is_finite() {
            return Err(diverged(iteration, "non-finite coefficient".to_string()));
        }
        worst = worst.max(b.abs());
    }
    if worst > DIVERGENCE_BOUND {
        return Err(diverged(iteration, format!("max |beta| = {worst:e}")));
    }
    Ok(())
}

/// GAMP fit of a TVP regression in static form.
#[derive(Debug, Clone)]
pub struct TvpFit {
    pub operator: TvpDesignOperator,
    pub solution: GampSolution,
    pub path: CoefficientPath,
}

impl TvpFit {
    /// Posterior variances of the combined coefficients in period `t`,
    /// ignoring the cross-covariance between constant and deviation parts.
    pub fn combined_variance(&self, t: usize) -> Vec<f64> {
        let p = self.operator.regressors();
        let tau = &self.solution.state.tau_beta;
        (0..p)
            .map(|j| tau[j] + tau[self.operator.deviation_column(t, j)])
            .collect()
    }
}

/// Builds the TVP operator from `base` (`T × p`) and runs [`gamp_solve`].
///
/// `cfg.no_shrink` indexes the `p` base regressors and applies to their
/// constant coefficients only; the period deviations are always shrunk.
pub fn solve_tvp(base: &DMatrix<f64>, y: &[f64], cfg: &GampConfig) -> Result<TvpFit> {
    let operator = TvpDesignOperator::new(base)?;
    if let Some(&j) = cfg.no_shrink.iter().find(|&&j| j >= operator.regressors()) {
        return Err(Error::arg(format!("no-shrink regressor {j} outside 0..{}", base.ncols())));
    }
    let solution = gamp_solve(&operator, y, cfg)?;
    let path = operator.coefficient_path(&solution.state.beta_hat)?;
    Ok(TvpFit {
        operator,
        solution,
        path,
    })
}
