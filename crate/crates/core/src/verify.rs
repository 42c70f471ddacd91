//! The oracle suite behind `mogel verify`: closed forms against quadrature,
//! Monte Carlo, the single-Gaussian reference and finite differences.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::classic::{self, NigParams};
use crate::error::Result;
use crate::evidential::{
    aleatoric_per_component, component_marginal, epistemic, student_t_logpdf, total_loss,
    weighted_nll, LossKernel, MixtureEvidentialParams, NigComponent, Responsibilities,
};
use crate::gradcheck::{check_gradient, sample_indices};
use crate::net::{Activation, NetworkSpec, NetworkWeights};
use crate::objective::MixtureObjective;
use crate::oracle::{mc_moments, quad_marginal, QuadratureSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Added to every per-component loss, to show the suite catches it.
    pub perturb_loss: f64,
    pub n_param_sets: usize,
    pub n_identity: usize,
    pub mc_samples: usize,
    pub n_grad_configs: usize,
    pub grad_weights_per_config: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            perturb_loss: 0.0,
            n_param_sets: 30,
            n_identity: 1000,
            mc_samples: 1_000_000,
            n_grad_configs: 10,
            grad_weights_per_config: 20,
        }
    }
}

pub const QUADRATURE_TOLERANCE: f64 = 1e-5;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const MC_STANDARD_ERRORS: f64 = 3.0;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
/// Inverse-gamma tail left outside the quadrature box on each side.
pub const QUADRATURE_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub comparisons: usize,
    /// Largest error statistic over all comparisons.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Where the worst case occurred.
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} {:>6} {:>12.3e} {:>10.1e}  {}  {}",
            self.name,
            self.comparisons,
            self.worst,
            self.tolerance,
            if self.passed { "ok  " } else { "FAIL" },
            self.detail
        )
    }
}

pub fn table_header() -> String {
    format!(
        "{:<20} {:>6} {:>12} {:>10}  {}  {}",
        "check", "n", "worst", "tolerance", "pass", "worst case"
    )
}

/// Tracks the worst statistic seen by one check.
struct Worst {
    name: &'static str,
    tolerance: f64,
    n: usize,
    value: f64,
    detail: String,
}

impl Worst {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            n: 0,
            value: 0.0,
            detail: String::new(),
        }
    }

    fn record(&mut self, value: f64, detail: impl FnOnce() -> String) {
        self.n += 1;
        // NaN counts as worst.
        if !(value <= self.value) {
            self.value = value;
            self.detail = detail();
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            comparisons: self.n,
            worst: self.value,
            tolerance: self.tolerance,
            passed: self.value <= self.tolerance,
            detail: self.detail,
        }
    }
}

/// A random mixture with `1..=4` components, `nu` and `beta` log-uniform on
/// `[0.1, 10]`, `alpha` uniform on `alpha_range` and random weights.
pub fn random_mixture(rng: &mut impl Rng, alpha_range: (f64, f64)) -> MixtureEvidentialParams {
    let k = rng.random_range(1..=4);
    let log_uniform = |rng: &mut dyn rand::RngCore| 10f64.powf(rng.random_range(-1.0..1.0));
    let components: Vec<NigComponent> = (0..k)
        .map(|_| {
            let nu = log_uniform(rng);
            let alpha = rng.random_range(alpha_range.0..alpha_range.1);
            let beta = log_uniform(rng);
            NigComponent::new(nu, alpha, beta).expect("valid by construction")
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    MixtureEvidentialParams::new(rng.random_range(-3.0..3.0), components, weights)
        .expect("valid by construction")
}

fn random_component(rng: &mut impl Rng) -> NigComponent {
    let nu = 10f64.powf(rng.random_range(-2.0..2.0));
    let alpha = 1.0 + 10f64.powf(rng.random_range(-2.0..1.5));
    let beta = 10f64.powf(rng.random_range(-2.0..2.0));
    NigComponent::new(nu, alpha, beta).expect("valid by construction")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Quadrature of the hierarchical model against the Student-t mixture.
pub fn check_marginal_quadrature(opts: &VerifyOptions) -> Result<CheckResult> {
    let kernel = LossKernel::with_bias(opts.perturb_loss);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = Worst::new("marginal-quadrature", QUADRATURE_TOLERANCE);
    for set in 0..opts.n_param_sets {
        let m = random_mixture(&mut rng, (1.1, 10.0));
        let q = QuadratureSpec::adaptive(&m, QUADRATURE_TAIL)?;
        let scale = m
            .components()
            .iter()
            .map(|c| component_marginal(c, 0.0).scale().sqrt())
            .fold(0.0, f64::max);
        for offset in [0.0, 0.7, -2.5] {
            let y = m.gamma() + offset * scale;
            let quad = quad_marginal(y, &m, &q)?;
            let closed = kernel.marginal_loglik(y, &m)?.exp();
            worst.record((closed - quad).abs() / quad, || {
                format!("set {set}, K={}, y={y:.4}", m.n_components())
            });
        }
    }
    Ok(worst.finish())
}

/// Per-component loss against the negative Student-t log density.
pub fn check_loss_identity(opts: &VerifyOptions) -> Result<CheckResult> {
    let kernel = LossKernel::with_bias(opts.perturb_loss);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut worst = Worst::new("loss-identity", IDENTITY_TOLERANCE);
    for i in 0..opts.n_identity {
        let c = random_component(&mut rng);
        let gamma = rng.random_range(-5.0..5.0);
        let y = gamma + rng.random_range(-20.0..20.0);
        let loss = kernel.nll_component(y, gamma, &c)?;
        let logpdf = student_t_logpdf(y, &component_marginal(&c, gamma))?;
        worst.record(rel(loss, -logpdf), || format!("input {i}"));
    }
    Ok(worst.finish())
}

/// With one component every quantity equals the single-Gaussian reference.
pub fn check_single_component(opts: &VerifyOptions) -> Result<CheckResult> {
    let kernel = LossKernel::with_bias(opts.perturb_loss);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let mut worst = Worst::new("k1-reduction", IDENTITY_TOLERANCE);
    for i in 0..opts.n_identity {
        let c = random_component(&mut rng);
        let gamma = rng.random_range(-5.0..5.0);
        let y = gamma + rng.random_range(-20.0..20.0);
        let lambda = rng.random_range(0.0..1.0);
        let m = MixtureEvidentialParams::single(gamma, c)?;
        let p = NigParams::new(gamma, c.nu(), c.alpha(), c.beta())?;
        let one = Responsibilities::one_hot(1, 1, 0)?;
        let comps = [vec![c]];
        let pairs = [
            ("marginal", kernel.marginal_loglik(y, &m)?, -classic::nll(y, &p)),
            ("epistemic", epistemic(&m)?, classic::epistemic(&p)),
            ("aleatoric", aleatoric_per_component(&c)?, classic::aleatoric(&p)),
            (
                "weighted-nll",
                weighted_nll(&[y], &[gamma], &comps, &one)?,
                classic::loss(&[y], &[p], 0.0)?,
            ),
            (
                "total-loss",
                total_loss(&[y], &[gamma], &comps, &one, lambda)?,
                classic::loss(&[y], &[p], lambda)?,
            ),
        ];
        for (what, a, b) in pairs {
            worst.record(rel(a, b), || format!("input {i}, {what}"));
        }
    }
    Ok(worst.finish())
}

/// Sampled moments of the hierarchical model against the closed forms, as
/// z-scores. `alpha > 2.5` keeps the fourth moments behind the standard
/// errors finite.
pub fn check_mc_moments(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let mut worst = Worst::new("mc-moments", MC_STANDARD_ERRORS);
    for set in 0..opts.n_param_sets {
        let m = random_mixture(&mut rng, (2.5, 10.0));
        let mc = mc_moments(&m, opts.mc_samples, rng.random())?;
        let z_mean = (mc.mean_mu - m.gamma()).abs() / mc.mean_mu_se;
        worst.record(z_mean, || format!("set {set}, E[mu]"));
        let z_var = (mc.var_mu - epistemic(&m)?).abs() / mc.var_mu_se;
        worst.record(z_var, || format!("set {set}, Var[mu]"));
        for (k, c) in m.components().iter().enumerate() {
            let z = (mc.mean_sigma2_per_component[k] - aleatoric_per_component(c)?).abs()
                / mc.mean_sigma2_se[k];
            worst.record(z, || format!("set {set}, E[sigma2_{k}]"));
        }
    }
    Ok(worst.finish())
}

/// A small random network, batch and penalty weight for gradient checks.
pub fn gradient_case(seed: u64) -> Result<(NetworkWeights, Array2<f64>, Array1<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(1..=3);
    let hidden = match rng.random_range(0..3) {
        0 => vec![10],
        1 => vec![8, 6],
        _ => vec![16, 16],
    };
    let spec = NetworkSpec {
        input_dim,
        hidden_layers: hidden,
        activation: if rng.random::<bool>() {
            Activation::Tanh
        } else {
            Activation::Relu
        },
        n_components: rng.random_range(1..=4),
    };
    let mut w = NetworkWeights::init(&spec, seed)?;
    for p in w.params_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *p += 0.1 * z;
    }
    let n = 12;
    let x = Array2::from_shape_fn((n, input_dim), |_| StandardNormal.sample(&mut rng));
    let y = Array1::from_shape_fn(n, |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        2.0 * z
    });
    let lambda = [0.0, 0.01, 0.1, 1.0][rng.random_range(0..4)];
    Ok((w, x, y, lambda))
}

/// Central differences of the total loss through all heads.
pub fn check_gradients(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst = Worst::new("gradient-fd", GRADIENT_TOLERANCE);
    for config in 0..opts.n_grad_configs {
        let seed = opts.seed.wrapping_mul(1000).wrapping_add(config as u64);
        let (w, x, y, lambda) = gradient_case(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let idx = sample_indices(&w, opts.grad_weights_per_config, &mut rng);
        let objective = MixtureObjective::joint(lambda)?;
        for e in check_gradient(&w, x.view(), y.view(), &objective, &idx, FD_STEP)? {
            worst.record(e.rel_error, || {
                format!("config {config}, {}[{}]", e.layer, e.index)
            });
        }
    }
    Ok(worst.finish())
}

/// Runs every check in order; the marginal-likelihood check comes first.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_marginal_quadrature(opts)?,
        check_loss_identity(opts)?,
        check_single_component(opts)?,
        check_mc_moments(opts)?,
        check_gradients(opts)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions {
            n_param_sets: 3,
            n_identity: 50,
            mc_samples: 100_000,
            n_grad_configs: 2,
            grad_weights_per_config: 10,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn small_suite_passes() {
        for r in run_all(&small()).unwrap() {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn perturbation_is_caught() {
        let opts = VerifyOptions {
            perturb_loss: 1e-3,
            ..small()
        };
        let first = run_all(&opts).unwrap().into_iter().find(|r| !r.passed).unwrap();
        assert_eq!(first.name, "marginal-quadrature");
    }
}
