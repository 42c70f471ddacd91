//! Closed-form math of the mixture evidential model.
//!
//! Every target is modelled as a Gaussian mixture whose components share one
//! mean `mu` but carry their own variance `sigma_k^2`. Each pair
//! `(mu, sigma_k^2)` has a Normal-Inverse-Gamma prior `NIG(gamma, nu_k, alpha_k,
//! beta_k)`. Integrating the prior out gives a mixture of Student-t marginals,
//! from which the losses and the uncertainty moments below follow.
//!
//! All functions here are pure.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma, log_sum_exp};

/// Tolerance on probability vectors summing to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// One component's inverse-gamma and mean-precision hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigComponent {
    nu: f64,
    alpha: f64,
    beta: f64,
}

impl NigComponent {
    /// Requires `nu > 0`, `alpha > 1` and `beta > 0`, all finite.
    pub fn new(nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::domain(format!("nu must be finite and > 0, got {nu}")));
        }
        if !(alpha.is_finite() && alpha > 1.0) {
            return Err(Error::domain(format!(
                "alpha must be finite and > 1, got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::domain(format!(
                "beta must be finite and > 0, got {beta}"
            )));
        }
        Ok(Self { nu, alpha, beta })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Virtual-observation count `2 nu + alpha`.
    pub fn total_evidence(&self) -> f64 {
        2.0 * self.nu + self.alpha
    }
}

/// Hyperparameters of the full mixture for a single target.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEvidentialParams {
    gamma: f64,
    components: Vec<NigComponent>,
    weights: Vec<f64>,
}

impl MixtureEvidentialParams {
    pub fn new(gamma: f64, components: Vec<NigComponent>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain("a mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::Dimension {
                context: "mixture weights",
                expected: components.len(),
                got: weights.len(),
            });
        }
        if !gamma.is_finite() {
            return Err(Error::domain(format!("gamma must be finite, got {gamma}")));
        }
        check_simplex(&weights, "mixture weights")?;
        Ok(Self {
            gamma,
            components,
            weights,
        })
    }

    /// The single-Gaussian case: one component with weight one.
    pub fn single(gamma: f64, component: NigComponent) -> Result<Self> {
        Self::new(gamma, vec![component], vec![1.0])
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn components(&self) -> &[NigComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

fn check_simplex(weights: &[f64], what: &str) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::domain(format!("{what}: entry {w} is not a probability")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::domain(format!("{what} sum to {total}, not 1")));
    }
    Ok(())
}

/// Row-stochastic `N x K` matrix of soft assignments of targets to components.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    matrix: Array2<f64>,
}

impl Responsibilities {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.ncols() == 0 {
            return Err(Error::domain("responsibilities need at least one column"));
        }
        for (i, row) in matrix.axis_iter(Axis(0)).enumerate() {
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
                return Err(Error::domain(format!(
                    "responsibility row {i} has entry {v} outside [0, 1]"
                )));
            }
            let total = row.sum();
            if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::domain(format!(
                    "responsibility row {i} sums to {total}"
                )));
            }
        }
        Ok(Self { matrix })
    }

    /// Every row assigned entirely to one component.
    pub fn one_hot(n: usize, k: usize, component: usize) -> Result<Self> {
        let mut m = Array2::zeros((n, k));
        m.column_mut(component).fill(1.0);
        Self::new(m)
    }

    pub fn uniform(n: usize, k: usize) -> Result<Self> {
        Self::new(Array2::from_elem((n, k), 1.0 / k as f64))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn n_samples(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix
            .row(i)
            .to_slice()
            .expect("responsibility rows are contiguous")
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.matrix
    }
}

/// Location-scale Student-t. `scale` is the squared scale: the density uses
/// `sqrt(scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTParams {
    location: f64,
    scale: f64,
    dof: f64,
}

impl StudentTParams {
    pub fn new(location: f64, scale: f64, dof: f64) -> Result<Self> {
        if !location.is_finite() {
            return Err(Error::domain(format!("location must be finite, got {location}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::domain(format!("scale must be > 0, got {scale}")));
        }
        if !(dof.is_finite() && dof > 0.0) {
            return Err(Error::domain(format!("dof must be > 0, got {dof}")));
        }
        Ok(Self {
            location,
            scale,
            dof,
        })
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }
}

fn check_finite(value: f64, name: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite, got {value}")))
    }
}

/// Log density of a location-scale Student-t.
pub fn student_t_logpdf(y: f64, p: &StudentTParams) -> Result<f64> {
    check_finite(y, "y")?;
    let d = p.dof;
    let z2 = (y - p.location).powi(2) / (d * p.scale);
    Ok(ln_gamma(0.5 * (d + 1.0))
        - ln_gamma(0.5 * d)
        - 0.5 * (d * std::f64::consts::PI * p.scale).ln()
        - 0.5 * (d + 1.0) * z2.ln_1p())
}

/// Student-t marginal of one component after integrating out `(mu, sigma^2)`:
/// `St(gamma, beta (1 + nu) / (nu alpha), 2 alpha)`.
pub fn component_marginal(c: &NigComponent, gamma: f64) -> StudentTParams {
    StudentTParams {
        location: gamma,
        scale: c.beta * (1.0 + c.nu) / (c.nu * c.alpha),
        dof: 2.0 * c.alpha,
    }
}

/// Evaluates the per-component negative log marginal and everything built on
/// it. The default kernel is exact; [`LossKernel::with_bias`] adds a constant
/// to every per-component loss so the verification suite can prove that it
/// notices a wrong loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossKernel {
    bias: f64,
}

impl LossKernel {
    pub const EXACT: LossKernel = LossKernel { bias: 0.0 };

    /// Fault injection for mutation testing only.
    pub fn with_bias(bias: f64) -> Self {
        Self { bias }
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// `1/2 ln(pi/nu) - alpha ln(Omega) + (alpha + 1/2) ln(nu (y - gamma)^2 + Omega)
    /// + ln Gamma(alpha) - ln Gamma(alpha + 1/2)` with `Omega = 2 beta (1 + nu)`.
    pub fn nll_component(&self, y: f64, gamma: f64, c: &NigComponent) -> Result<f64> {
        check_finite(y, "y")?;
        check_finite(gamma, "gamma")?;
        Ok(nll_component_unchecked(y, gamma, c) + self.bias)
    }

    /// `ln sum_k pi_k St_k(y)`, stabilised by shifting with the largest term.
    pub fn marginal_loglik(&self, y: f64, m: &MixtureEvidentialParams) -> Result<f64> {
        let mut terms = Vec::with_capacity(m.n_components());
        for (c, &w) in m.components.iter().zip(&m.weights) {
            if w > 0.0 {
                terms.push(w.ln() - self.nll_component(y, m.gamma, c)?);
            }
        }
        Ok(log_sum_exp(terms.iter().copied()))
    }
}

pub(crate) fn nll_component_unchecked(y: f64, gamma: f64, c: &NigComponent) -> f64 {
    let omega = 2.0 * c.beta * (1.0 + c.nu);
    let r = y - gamma;
    0.5 * (std::f64::consts::PI / c.nu).ln() - c.alpha * omega.ln()
        + (c.alpha + 0.5) * (r * r * c.nu + omega).ln()
        + ln_gamma(c.alpha)
        - ln_gamma(c.alpha + 0.5)
}

/// Value and partial derivatives of the per-component loss with respect to
/// `(gamma, nu, alpha, beta)`.
pub(crate) fn nll_component_partials(y: f64, gamma: f64, nu: f64, alpha: f64, beta: f64) -> [f64; 5] {
    let omega = 2.0 * beta * (1.0 + nu);
    let r = y - gamma;
    let spread = r * r * nu + omega;
    let value = 0.5 * (std::f64::consts::PI / nu).ln() - alpha * omega.ln()
        + (alpha + 0.5) * spread.ln()
        + ln_gamma(alpha)
        - ln_gamma(alpha + 0.5);
    let d_gamma = -(2.0 * alpha + 1.0) * nu * r / spread;
    // d omega / d nu = 2 beta, so alpha * 2 beta / omega = alpha / (1 + nu)
    let d_nu = -0.5 / nu - alpha / (1.0 + nu) + (alpha + 0.5) * (r * r + 2.0 * beta) / spread;
    let d_alpha = (spread / omega).ln() + digamma(alpha) - digamma(alpha + 0.5);
    let d_beta = -alpha / beta + (2.0 * alpha + 1.0) * (1.0 + nu) / spread;
    [value, d_gamma, d_nu, d_alpha, d_beta]
}

/// Per-component negative log Student-t marginal.
pub fn nll_component(y: f64, gamma: f64, c: &NigComponent) -> Result<f64> {
    LossKernel::EXACT.nll_component(y, gamma, c)
}

/// Log marginal likelihood of `y` under the Student-t mixture.
pub fn marginal_loglik(y: f64, m: &MixtureEvidentialParams) -> Result<f64> {
    LossKernel::EXACT.marginal_loglik(y, m)
}

/// Point prediction `E[mu] = gamma`.
pub fn predict(m: &MixtureEvidentialParams) -> f64 {
    m.gamma
}

/// Aleatoric uncertainty of one component, `E[sigma_k^2] = beta / (alpha - 1)`.
pub fn aleatoric_per_component(c: &NigComponent) -> Result<f64> {
    if c.alpha <= 1.0 {
        return Err(Error::domain(format!(
            "aleatoric uncertainty needs alpha > 1, got {}",
            c.alpha
        )));
    }
    Ok(c.beta / (c.alpha - 1.0))
}

/// Epistemic uncertainty `Var[mu] = sum_k pi_k beta_k / (nu_k (alpha_k - 1))`.
pub fn epistemic(m: &MixtureEvidentialParams) -> Result<f64> {
    let mut total = 0.0;
    for (c, w) in m.components.iter().zip(&m.weights) {
        total += w * aleatoric_per_component(c)? / c.nu;
    }
    Ok(total)
}

fn check_batch(
    y: &[f64],
    gamma: &[f64],
    comps: &[Vec<NigComponent>],
    p: &Responsibilities,
) -> Result<()> {
    let n = y.len();
    for (context, got) in [
        ("gamma", gamma.len()),
        ("components", comps.len()),
        ("responsibility rows", p.n_samples()),
    ] {
        if got != n {
            return Err(Error::Dimension {
                context,
                expected: n,
                got,
            });
        }
    }
    let k = p.n_components();
    if let Some(row) = comps.iter().find(|row| row.len() != k) {
        return Err(Error::Dimension {
            context: "components per sample",
            expected: k,
            got: row.len(),
        });
    }
    if n == 0 {
        return Err(Error::domain("empty batch"));
    }
    Ok(())
}

/// Responsibility-weighted mean of the per-component losses:
/// `1/N sum_i sum_k p_ik L_ik`.
pub fn weighted_nll(
    y: &[f64],
    gamma: &[f64],
    comps: &[Vec<NigComponent>],
    p: &Responsibilities,
) -> Result<f64> {
    check_batch(y, gamma, comps, p)?;
    let mut total = 0.0;
    for i in 0..y.len() {
        for (c, &w) in comps[i].iter().zip(p.row(i)) {
            total += w * nll_component(y[i], gamma[i], c)?;
        }
    }
    Ok(total / y.len() as f64)
}

/// Incorrect-evidence penalty `1/N sum_i sum_k p_ik |y_i - gamma_i| (2 nu_ik + alpha_ik)`.
pub fn evidence_penalty(
    y: &[f64],
    gamma: &[f64],
    comps: &[Vec<NigComponent>],
    p: &Responsibilities,
) -> Result<f64> {
    check_batch(y, gamma, comps, p)?;
    let mut total = 0.0;
    for i in 0..y.len() {
        let residual = (y[i] - gamma[i]).abs();
        for (c, &w) in comps[i].iter().zip(p.row(i)) {
            total += w * residual * c.total_evidence();
        }
    }
    Ok(total / y.len() as f64)
}

/// `weighted_nll + lambda * evidence_penalty`.
pub fn total_loss(
    y: &[f64],
    gamma: &[f64],
    comps: &[Vec<NigComponent>],
    p: &Responsibilities,
    lambda: f64,
) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(weighted_nll(y, gamma, comps, p)? + lambda * evidence_penalty(y, gamma, comps, p)?)
}

/// Mixing coefficients as column means of the responsibilities.
pub fn mixing_estimate(p: &Responsibilities) -> Result<Vec<f64>> {
    let n = p.n_samples();
    if n == 0 {
        return Err(Error::domain("cannot estimate mixing weights from zero rows"));
    }
    let mut weights: Vec<f64> = p
        .view()
        .axis_iter(Axis(1))
        .map(|col| col.sum() / n as f64)
        .collect();
    // Column means of row-stochastic rows already sum to one up to rounding.
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}
