//! Training objectives evaluated on head outputs.
//!
//! An [`Objective`] turns a batch of [`HeadOutputs`] and targets into a scalar
//! loss plus its gradient with respect to the activated `gamma`, `nu`, `alpha`,
//! `beta` outputs and the raw responsibility logits. The network's backward
//! pass takes it from there.

use ndarray::{Array1, Array2, ArrayView1};

use crate::classic::{self, NigParams};
use crate::error::{Error, Result};
use crate::evidential::nll_component_partials;
use crate::net::{Head, HeadOutputs};

/// Gradient of a loss with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub gamma: Array1<f64>,
    pub nu: Array2<f64>,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    /// With respect to the pre-softmax responsibility logits.
    pub logits: Array2<f64>,
}

impl OutputGrads {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            gamma: Array1::zeros(n),
            nu: Array2::zeros((n, k)),
            alpha: Array2::zeros((n, k)),
            beta: Array2::zeros((n, k)),
            logits: Array2::zeros((n, k)),
        }
    }

    pub fn first_non_finite(&self) -> Option<Head> {
        if self.gamma.iter().any(|x| !x.is_finite()) {
            Some(Head::Gamma)
        } else if self.nu.iter().any(|x| !x.is_finite()) {
            Some(Head::Nu)
        } else if self.alpha.iter().any(|x| !x.is_finite()) {
            Some(Head::Alpha)
        } else if self.beta.iter().any(|x| !x.is_finite()) {
            Some(Head::Beta)
        } else if self.logits.iter().any(|x| !x.is_finite()) {
            Some(Head::Responsibility)
        } else {
            None
        }
    }
}

pub trait Objective {
    fn evaluate(&self, out: &HeadOutputs, y: ArrayView1<'_, f64>) -> Result<(f64, OutputGrads)>;
}

/// How the responsibility head enters the maximisation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResponsibilityMode {
    /// Responsibilities are the head's output and receive gradient through
    /// the weighted loss and the penalty, in the same step as everything else.
    #[default]
    Joint,
    /// Classic EM: the expectation step computes posterior responsibilities
    /// `q_ik ∝ p_ik St_k(y_i)` and holds them fixed; the maximisation step
    /// follows the gradient of `sum q_ik (loss_ik - ln p_ik)`, so the head
    /// learns the posteriors by cross-entropy while the other heads see `q` as
    /// constant weights. The reported loss is the free energy at the
    /// posterior, `-ln sum_k p_ik St_k(y_i)` plus the `q`-weighted penalty;
    /// with `lambda = 0` the step direction is its exact gradient.
    Frozen,
}

/// Responsibility-weighted Student-t NLL plus `lambda` times the evidence
/// penalty, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureObjective {
    lambda: f64,
    mode: ResponsibilityMode,
}

impl MixtureObjective {
    pub fn new(lambda: f64, mode: ResponsibilityMode) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::domain(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { lambda, mode })
    }

    pub fn joint(lambda: f64) -> Result<Self> {
        Self::new(lambda, ResponsibilityMode::Joint)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> ResponsibilityMode {
        self.mode
    }
}

fn check_targets(out: &HeadOutputs, y: ArrayView1<'_, f64>) -> Result<()> {
    if y.len() != out.n_samples() {
        return Err(Error::Dimension {
            context: "targets",
            expected: out.n_samples(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    Ok(())
}

impl Objective for MixtureObjective {
    fn evaluate(&self, out: &HeadOutputs, y: ArrayView1<'_, f64>) -> Result<(f64, OutputGrads)> {
        check_targets(out, y)?;
        let n = out.n_samples();
        let k = out.n_components();
        let scale = 1.0 / n as f64;
        let lambda = self.lambda;
        let p = out.resp.view();
        let mut grads = OutputGrads::zeros(n, k);
        let mut loss = 0.0;
        let mut cost = vec![0.0; k];
        let mut partials = vec![[0.0; 5]; k];
        let mut weights = vec![0.0; k];

        for i in 0..n {
            let r = y[i] - out.gamma[i];
            let abs_r = r.abs();
            // Subgradient of |r| is 0 at r = 0.
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            for j in 0..k {
                let (nu, alpha, beta) = (out.nu[[i, j]], out.alpha[[i, j]], out.beta[[i, j]]);
                partials[j] = nll_component_partials(y[i], out.gamma[i], nu, alpha, beta);
                cost[j] = partials[j][0] + lambda * abs_r * (2.0 * nu + alpha);
            }

            // Expectation step: the weights applied to each component's cost.
            match self.mode {
                ResponsibilityMode::Joint => {
                    for j in 0..k {
                        weights[j] = p[[i, j]];
                    }
                }
                ResponsibilityMode::Frozen => {
                    let log_post: Vec<f64> = (0..k)
                        .map(|j| out.log_resp[[i, j]] - partials[j][0])
                        .collect();
                    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let norm: f64 = log_post.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..k {
                        weights[j] = (log_post[j] - max).exp() / norm;
                    }
                    // Free energy at the posterior: the negative log marginal.
                    loss -= max + norm.ln();
                }
            }

            // Maximisation step.
            let mut mean_cost = 0.0;
            for j in 0..k {
                let w = weights[j];
                let [_, d_gamma, d_nu, d_alpha, d_beta] = partials[j];
                let (nu, alpha) = (out.nu[[i, j]], out.alpha[[i, j]]);
                grads.gamma[i] += scale * w * (d_gamma - lambda * sign * (2.0 * nu + alpha));
                grads.nu[[i, j]] = scale * w * (d_nu + lambda * 2.0 * abs_r);
                grads.alpha[[i, j]] = scale * w * (d_alpha + lambda * abs_r);
                grads.beta[[i, j]] = scale * w * d_beta;
                mean_cost += p[[i, j]] * cost[j];
            }
            match self.mode {
                ResponsibilityMode::Joint => {
                    for j in 0..k {
                        loss += p[[i, j]] * cost[j];
                        grads.logits[[i, j]] = scale * p[[i, j]] * (cost[j] - mean_cost);
                    }
                }
                ResponsibilityMode::Frozen => {
                    for j in 0..k {
                        let w = weights[j];
                        loss += w * lambda * abs_r * (2.0 * out.nu[[i, j]] + out.alpha[[i, j]]);
                        grads.logits[[i, j]] = scale * (p[[i, j]] - w);
                    }
                }
            }
        }
        Ok((loss * scale, grads))
    }
}

/// Single-Gaussian evidential loss from [`crate::classic`]; requires `K = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicObjective {
    pub lambda: f64,
}

impl Objective for ClassicObjective {
    fn evaluate(&self, out: &HeadOutputs, y: ArrayView1<'_, f64>) -> Result<(f64, OutputGrads)> {
        check_targets(out, y)?;
        if out.n_components() != 1 {
            return Err(Error::Dimension {
                context: "classic objective components",
                expected: 1,
                got: out.n_components(),
            });
        }
        let n = out.n_samples();
        let scale = 1.0 / n as f64;
        let mut grads = OutputGrads::zeros(n, 1);
        let mut params = Vec::with_capacity(n);
        for i in 0..n {
            let p = NigParams::new(
                out.gamma[i],
                out.nu[[i, 0]],
                out.alpha[[i, 0]],
                out.beta[[i, 0]],
            )?;
            let [dg, dn, da, db] = classic::loss_gradient(y[i], &p, self.lambda);
            grads.gamma[i] = scale * dg;
            grads.nu[[i, 0]] = scale * dn;
            grads.alpha[[i, 0]] = scale * da;
            grads.beta[[i, 0]] = scale * db;
            params.push(p);
        }
        let loss = classic::loss(y.as_slice().unwrap_or(&y.to_vec()), &params, self.lambda)?;
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidential::{nll_component, total_loss, NigComponent};

    #[test]
    fn partials_match_value_and_finite_differences() {
        let (y, g, nu, a, b) = (0.7, -0.2, 1.3, 2.4, 0.8);
        let v = nll_component_partials(y, g, nu, a, b);
        let c = NigComponent::new(nu, a, b).unwrap();
        assert!((v[0] - nll_component(y, g, &c).unwrap()).abs() < 1e-14);
        let f = |g: f64, nu: f64, a: f64, b: f64| nll_component_partials(y, g, nu, a, b)[0];
        let h = 1e-6;
        let fd = [
            (f(g + h, nu, a, b) - f(g - h, nu, a, b)) / (2.0 * h),
            (f(g, nu + h, a, b) - f(g, nu - h, a, b)) / (2.0 * h),
            (f(g, nu, a + h, b) - f(g, nu, a - h, b)) / (2.0 * h),
            (f(g, nu, a, b + h) - f(g, nu, a, b - h)) / (2.0 * h),
        ];
        for j in 0..4 {
            assert!((fd[j] - v[j + 1]).abs() < 1e-8, "{j}: {} vs {}", fd[j], v[j + 1]);
        }
    }

    fn outputs() -> HeadOutputs {
        use crate::evidential::Responsibilities;
        use ndarray::array;
        let probs = array![[0.3, 0.7], [0.9, 0.1], [0.5, 0.5]];
        HeadOutputs {
            gamma: array![0.1, -0.4, 2.0],
            nu: array![[1.0, 0.5], [2.0, 0.1], [0.3, 3.0]],
            alpha: array![[1.5, 2.5], [1.1, 4.0], [2.0, 1.2]],
            beta: array![[0.2, 1.0], [0.7, 0.4], [2.0, 0.05]],
            log_resp: probs.mapv(f64::ln),
            resp: Responsibilities::new(probs).unwrap(),
        }
    }

    #[test]
    fn joint_loss_equals_total_loss() {
        let out = outputs();
        let y = ndarray::array![0.5, -1.0, 2.0];
        let obj = MixtureObjective::joint(0.3).unwrap();
        let (loss, _) = obj.evaluate(&out, y.view()).unwrap();
        let expected = total_loss(
            y.as_slice().unwrap(),
            out.gamma.as_slice().unwrap(),
            &out.all_components().unwrap(),
            &out.resp,
            0.3,
        )
        .unwrap();
        assert!((loss - expected).abs() < 1e-13);
    }

    #[test]
    fn frozen_logit_gradient_is_prior_minus_posterior() {
        let out = outputs();
        let y = ndarray::array![0.5, -1.0, 2.0];
        let obj = MixtureObjective::new(0.0, ResponsibilityMode::Frozen).unwrap();
        let (_, g) = obj.evaluate(&out, y.view()).unwrap();
        for row in g.logits.rows() {
            assert!(row.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(MixtureObjective::joint(-1.0).is_err());
    }
}
