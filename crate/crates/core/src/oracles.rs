//! Reference estimators: least squares, the exact Gaussian posterior, and
//! Gibbs samplers for the Bayesian LASSO and SSVS priors.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};

/// Largest coefficient count the dense posterior oracle will factor.
pub const EXACT_POSTERIOR_LIMIT: usize = 2000;
/// Diagonal jitter for the single Cholesky retry.
pub const CHOLESKY_JITTER: f64 = 1e-10;
const MAX_IG_RETRIES: usize = 100;

/// Joint least squares `(X′X)⁻¹X′y`.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    check_shapes(x, y)?;
    if x.nrows() < x.ncols() {
        return Err(Error::Rank(format!(
            "OLS with {} columns needs at least as many rows, got {}",
            x.ncols(),
            x.nrows()
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|d| !(d.abs() > 1e-12 * scale)) {
        return Err(Error::Rank("design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Rank("singular triangular factor".into()))?;
    Ok(beta.as_slice().to_vec())
}

/// Slope of `y` on each column separately (no intercept).
pub fn per_predictor_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    check_shapes(x, y)?;
    let y = DVector::from_column_slice(y);
    x.column_iter()
        .enumerate()
        .map(|(j, col)| {
            let ss = col.norm_squared();
            if ss > 0.0 {
                Ok(col.dot(&y) / ss)
            } else {
                Err(Error::Rank(format!("column {j} is identically zero")))
            }
        })
        .collect()
}

/// Posterior of `y ~ N(Xβ, σ²I)`, `β_i ~ N(0, 1/α_i)`.
///
/// Returns the mean `(X′X/σ² + diag α)⁻¹X′y/σ²` and the diagonal of the
/// posterior covariance.
pub fn exact_gaussian_posterior(
    x: &DMatrix<f64>,
    y: &[f64],
    alpha: &[f64],
    sigma2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(x, y)?;
    let q = x.ncols();
    if q > EXACT_POSTERIOR_LIMIT {
        return Err(Error::arg(format!(
            "exact posterior limited to {EXACT_POSTERIOR_LIMIT} coefficients, got {q}"
        )));
    }
    if alpha.len() != q {
        return Err(Error::arg(format!("alpha has length {}, need {q}", alpha.len())));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::arg("sigma2 must be positive"));
    }
    let mut precision = x.transpose() * x / sigma2;
    for (i, a) in alpha.iter().enumerate() {
        precision[(i, i)] += a;
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::numerical("posterior precision is not positive definite"))?;
    let rhs = x.transpose() * DVector::from_column_slice(y) / sigma2;
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    Ok((mean.as_slice().to_vec(), cov.diagonal().as_slice().to_vec()))
}

/// Mean absolute deviation between an estimate and the truth.
pub fn ad_statistic(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::arg(format!(
            "AD needs equal non-empty shapes, got {} and {}",
            estimate.len(),
            truth.len()
        )));
    }
    let total: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum();
    Ok(total / estimate.len() as f64)
}

fn check_shapes(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::arg(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    if x.ncols() == 0 || y.is_empty() {
        return Err(Error::arg("empty regression"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoPrior {
    /// Gamma shape on `λ²`.
    pub r: f64,
    /// Gamma rate on `λ²`.
    pub delta: f64,
}

impl Default for LassoPrior {
    fn default() -> Self {
        LassoPrior { r: 1.0, delta: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsvsPrior {
    /// Prior inclusion probability.
    pub pi0: f64,
    /// Spike standard deviation.
    pub tau0: f64,
    /// Slab standard deviation.
    pub tau1: f64,
}

impl Default for SsvsPrior {
    fn default() -> Self {
        SsvsPrior {
            pi0: 0.5,
            tau0: 0.001,
            tau1: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct GibbsConfig {
    pub n_save: usize,
    pub n_burn: usize,
    pub seed: u64,
    pub lasso: LassoPrior,
    pub ssvs: SsvsPrior,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_save: 2000,
            n_burn: 1000,
            seed: 0,
            lasso: LassoPrior::default(),
            ssvs: SsvsPrior::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_save == 0 || self.n_burn == 0 {
            return Err(Error::arg("n_save and n_burn must be positive"));
        }
        if !(self.lasso.r > 0.0 && self.lasso.delta > 0.0) {
            return Err(Error::arg("LASSO hyperparameters must be positive"));
        }
        let s = self.ssvs;
        if !(s.tau0 > 0.0 && s.tau0 < s.tau1) {
            return Err(Error::arg(format!("need 0 < tau0 < tau1, got {} and {}", s.tau0, s.tau1)));
        }
        if !(0.0..=1.0).contains(&s.pi0) {
            return Err(Error::arg("pi0 must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// `n_save × p`
    pub beta: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    /// SSVS indicators, `n_save × p`.
    pub inclusion: Option<DMatrix<u8>>,
    /// LASSO penalty draws.
    pub lambda2: Option<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn posterior_mean(&self) -> Vec<f64> {
        self.beta.row_mean().iter().copied().collect()
    }

    /// Posterior inclusion frequencies (SSVS only).
    pub fn inclusion_rate(&self) -> Option<Vec<f64>> {
        self.inclusion.as_ref().map(|g| {
            let n = g.nrows() as f64;
            g.column_iter()
                .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / n)
                .collect()
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let p = self.beta.ncols();
        let mut header = vec!["draw".to_string(), "sigma2".to_string()];
        if self.lambda2.is_some() {
            header.push("lambda2".into());
        }
        header.extend((1..=p).map(|j| format!("beta{j}")));
        if self.inclusion.is_some() {
            header.extend((1..=p).map(|j| format!("gamma{j}")));
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            path,
            &header,
            (0..self.beta.nrows()).map(|d| {
                let mut row = vec![d.to_string(), fmt_f64(self.sigma2[d])];
                if let Some(l) = &self.lambda2 {
                    row.push(fmt_f64(l[d]));
                }
                row.extend(self.beta.row(d).iter().map(|&b| fmt_f64(b)));
                if let Some(g) = &self.inclusion {
                    row.extend(g.row(d).iter().map(|v| v.to_string()));
                }
                row
            }),
        )
    }
}

/// Cholesky factor of `m`, retrying once with a small diagonal jitter.
fn cholesky_with_retry(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = m.diagonal().amax().max(1.0);
    let jittered = m + DMatrix::<f64>::identity(n, n) * (CHOLESKY_JITTER * scale);
    jittered
        .cholesky()
        .ok_or_else(|| Error::numerical("Gibbs precision matrix is not positive definite"))
}

/// Draws from `N(P⁻¹b, scale² P⁻¹)` given the precision `P`.
fn draw_gaussian(
    precision: DMatrix<f64>,
    b: &DVector<f64>,
    scale: f64,
    rng: &mut ChaCha20Rng,
) -> Result<DVector<f64>> {
    let chol = cholesky_with_retry(precision)?;
    let mean = chol.solve(b);
    let z = DVector::from_fn(b.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // P = LL′, so L′⁻¹z has covariance P⁻¹.
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    Ok(mean + noise * scale)
}

fn inverse_gamma(shape: f64, scale: f64, rng: &mut ChaCha20Rng) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::numerical(format!("inverse-Gamma({shape}, {scale}): {e}")))?;
    let v = 1.0 / g.sample(rng);
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::numerical(format!("inverse-Gamma draw {v}")))
    }
}

/// Inverse-Gaussian draw by the Michael–Schucany–Haas transformation.
///
/// Non-finite or non-positive candidates are redrawn; after 100 failures the
/// sampler gives up.
pub fn sample_inverse_gaussian(mu: f64, lambda: f64, rng: &mut ChaCha20Rng) -> Result<f64> {
    if !(mu > 0.0) || !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::numerical(format!("inverse-Gaussian({mu}, {lambda}) is undefined")));
    }
    for _ in 0..MAX_IG_RETRIES {
        let nu: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let v = nu * nu;
        let r = mu * v;
        // Smaller root of the quadratic, written without cancellation or
        // overflow: μ + μr/2λ − (μ/2λ)√(r² + 4λr) = 4λ / (v(1 + √(1 + 4λ/r))²).
        let x = if r == 0.0 {
            mu
        } else {
            let root = 1.0 + (1.0 + 4.0 * lambda / r).sqrt();
            4.0 * lambda / (v * root * root)
        };
        let draw = if u <= mu / (mu + x) { x } else { mu * mu / x };
        if draw.is_finite() && draw > 0.0 {
            return Ok(draw);
        }
    }
    Err(Error::numerical(format!(
        "inverse-Gaussian({mu:e}, {lambda:e}) failed {MAX_IG_RETRIES} times"
    )))
}

fn sum_sq_resid(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (y - x * beta).norm_squared()
}

/// Bayesian LASSO Gibbs sampler seeded from `cfg.seed`.
pub fn gibbs_lasso(x: &DMatrix<f64>, y: &[f64], cfg: &GibbsConfig) -> Result<PosteriorDraws> {
    gibbs_lasso_with_rng(x, y, cfg, &mut ChaCha20Rng::seed_from_u64(cfg.seed))
}

pub fn gibbs_lasso_with_rng(
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &GibbsConfig,
    rng: &mut ChaCha20Rng,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    check_shapes(x, y)?;
    let (t, p) = x.shape();
    if t <= 2 {
        return Err(Error::arg("Gibbs samplers need T > 2"));
    }
    let prior = cfg.lasso;
    let yv = DVector::from_column_slice(y);
    let gram = x.transpose() * x;
    let xty = x.transpose() * &yv;

    let mut inv_tau2 = vec![1.0; p];
    let mut sigma2 = sample_variance(y).max(1e-8);
    let mut lambda2 = 1.0;
    let mut beta;

    let mut out_beta = DMatrix::zeros(cfg.n_save, p);
    let mut out_sigma2 = Vec::with_capacity(cfg.n_save);
    let mut out_lambda2 = Vec::with_capacity(cfg.n_save);

    for sweep in 0..cfg.n_burn + cfg.n_save {
        let mut precision = gram.clone();
        for (j, w) in inv_tau2.iter().enumerate() {
            precision[(j, j)] += w;
        }
        beta = draw_gaussian(precision, &xty, sigma2.sqrt(), rng)?;

        let mut tau2_sum = 0.0;
        for j in 0..p {
            let b2 = (beta[j] * beta[j]).max(f64::MIN_POSITIVE);
            let mu = (lambda2 * sigma2 / b2).sqrt();
            inv_tau2[j] = sample_inverse_gaussian(mu, lambda2, rng)?;
            tau2_sum += 1.0 / inv_tau2[j];
        }

        let rate = 0.5 * tau2_sum + prior.delta;
        lambda2 = Gamma::new(p as f64 + prior.r, 1.0 / rate)
            .map_err(|e| Error::numerical(format!("lambda² draw: {e}")))?
            .sample(rng);

        let penalty: f64 = (0..p).map(|j| beta[j] * beta[j] * inv_tau2[j]).sum();
        let shape = (t as f64 - 1.0) / 2.0 + p as f64 / 2.0;
        let scale = 0.5 * sum_sq_resid(x, &yv, &beta) + 0.5 * penalty;
        sigma2 = inverse_gamma(shape, scale, rng)?;

        if sweep >= cfg.n_burn {
            let d = sweep - cfg.n_burn;
            out_beta.row_mut(d).copy_from(&beta.transpose());
            out_sigma2.push(sigma2);
            out_lambda2.push(lambda2);
        }
    }
    Ok(PosteriorDraws {
        beta: out_beta,
        sigma2: out_sigma2,
        inclusion: None,
        lambda2: Some(out_lambda2),
    })
}

/// Probability that `γ_i = 1` given `β_i`:
/// `πN(β|0,τ₁²) / [(1−π)N(β|0,τ₀²) + πN(β|0,τ₁²)]`, evaluated in logs.
pub fn ssvs_inclusion_probability(beta: f64, prior: &SsvsPrior) -> f64 {
    let log_slab = prior.pi0.ln() - prior.tau1.ln() - beta * beta / (2.0 * prior.tau1 * prior.tau1);
    let log_spike =
        (1.0 - prior.pi0).ln() - prior.tau0.ln() - beta * beta / (2.0 * prior.tau0 * prior.tau0);
    if log_slab == f64::NEG_INFINITY {
        return 0.0;
    }
    1.0 / (1.0 + (log_spike - log_slab).exp())
}

/// SSVS Gibbs sampler seeded from `cfg.seed`.
pub fn gibbs_ssvs(x: &DMatrix<f64>, y: &[f64], cfg: &GibbsConfig) -> Result<PosteriorDraws> {
    gibbs_ssvs_with_rng(x, y, cfg, &mut ChaCha20Rng::seed_from_u64(cfg.seed))
}

pub fn gibbs_ssvs_with_rng(
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &GibbsConfig,
    rng: &mut ChaCha20Rng,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    check_shapes(x, y)?;
    let (t, p) = x.shape();
    if t <= 2 {
        return Err(Error::arg("Gibbs samplers need T > 2"));
    }
    let prior = cfg.ssvs;
    let yv = DVector::from_column_slice(y);
    let gram = x.transpose() * x;
    let xty = x.transpose() * &yv;
    let (inv_spike, inv_slab) = (1.0 / (prior.tau0 * prior.tau0), 1.0 / (prior.tau1 * prior.tau1));

    let mut gamma = vec![1u8; p];
    let mut sigma2 = sample_variance(y).max(1e-8);

    let mut out_beta = DMatrix::zeros(cfg.n_save, p);
    let mut out_gamma = DMatrix::<u8>::zeros(cfg.n_save, p);
    let mut out_sigma2 = Vec::with_capacity(cfg.n_save);

    for sweep in 0..cfg.n_burn + cfg.n_save {
        let mut precision = &gram / sigma2;
        for (j, g) in gamma.iter().enumerate() {
            precision[(j, j)] += if *g == 1 { inv_slab } else { inv_spike };
        }
        let beta = draw_gaussian(precision, &(&xty / sigma2), 1.0, rng)?;

        for j in 0..p {
            let prob = ssvs_inclusion_probability(beta[j], &prior);
            gamma[j] = u8::from(rng.random::<f64>() < prob);
        }

        sigma2 = inverse_gamma(t as f64 / 2.0, 0.5 * sum_sq_resid(x, &yv, &beta), rng)?;

        if sweep >= cfg.n_burn {
            let d = sweep - cfg.n_burn;
            out_beta.row_mut(d).copy_from(&beta.transpose());
            for j in 0..p {
                out_gamma[(d, j)] = gamma[j];
            }
            out_sigma2.push(sigma2);
        }
    }
    Ok(PosteriorDraws {
        beta: out_beta,
        sigma2: out_sigma2,
        inclusion: Some(out_gamma),
        lambda2: None,
    })
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}
