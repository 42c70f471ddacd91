//! Single-Gaussian deep evidential regression, written out directly.
//!
//! This is the reference the mixture model must reduce to when it has one
//! component. It deliberately shares no code with [`crate::evidential`] and uses
//! `statrs` for the gamma-function family.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Hyperparameters `(gamma, nu, alpha, beta)` of one NIG prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigParams {
    pub gamma: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigParams {
    pub fn new(gamma: f64, nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        let ok = gamma.is_finite()
            && nu.is_finite()
            && nu > 0.0
            && alpha.is_finite()
            && alpha > 1.0
            && beta.is_finite()
            && beta > 0.0;
        if !ok {
            return Err(Error::domain(format!(
                "invalid NIG parameters ({gamma}, {nu}, {alpha}, {beta})"
            )));
        }
        Ok(Self {
            gamma,
            nu,
            alpha,
            beta,
        })
    }
}

/// Negative log of the Student-t evidence for one target.
pub fn nll(y: f64, p: &NigParams) -> f64 {
    let two_b_lambda = 2.0 * p.beta * (1.0 + p.nu);
    0.5 * (std::f64::consts::PI / p.nu).ln() - p.alpha * two_b_lambda.ln()
        + (p.alpha + 0.5) * (p.nu * (y - p.gamma).powi(2) + two_b_lambda).ln()
        + ln_gamma(p.alpha)
        - ln_gamma(p.alpha + 0.5)
}

/// Evidence regulariser `|y - gamma| (2 nu + alpha)`.
pub fn regularizer(y: f64, p: &NigParams) -> f64 {
    (y - p.gamma).abs() * (2.0 * p.nu + p.alpha)
}

pub fn prediction(p: &NigParams) -> f64 {
    p.gamma
}

pub fn aleatoric(p: &NigParams) -> f64 {
    p.beta / (p.alpha - 1.0)
}

pub fn epistemic(p: &NigParams) -> f64 {
    p.beta / (p.nu * (p.alpha - 1.0))
}

/// Mean of `nll + lambda * regularizer` over a batch.
pub fn loss(y: &[f64], params: &[NigParams], lambda: f64) -> Result<f64> {
    if y.len() != params.len() {
        return Err(Error::Dimension {
            context: "classic loss",
            expected: y.len(),
            got: params.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let total: f64 = y
        .iter()
        .zip(params)
        .map(|(&yi, p)| nll(yi, p) + lambda * regularizer(yi, p))
        .sum();
    Ok(total / y.len() as f64)
}

/// Partial derivatives of `nll + lambda * regularizer` with respect to
/// `(gamma, nu, alpha, beta)`.
pub fn loss_gradient(y: f64, p: &NigParams, lambda: f64) -> [f64; 4] {
    let NigParams {
        gamma,
        nu,
        alpha,
        beta,
    } = *p;
    let r = y - gamma;
    let two_b_lambda = 2.0 * beta * (1.0 + nu);
    let denom = nu * r * r + two_b_lambda;
    let d_gamma = -(alpha + 0.5) * 2.0 * nu * r / denom;
    let d_nu = -0.5 / nu - alpha * 2.0 * beta / two_b_lambda
        + (alpha + 0.5) * (r * r + 2.0 * beta) / denom;
    let d_alpha = -two_b_lambda.ln() + denom.ln() + digamma(alpha) - digamma(alpha + 0.5);
    let d_beta = -alpha / beta + (alpha + 0.5) * 2.0 * (1.0 + nu) / denom;
    let sign = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    [
        d_gamma - lambda * sign * (2.0 * nu + alpha),
        d_nu + lambda * 2.0 * r.abs(),
        d_alpha + lambda * r.abs(),
        d_beta,
    ]
}
