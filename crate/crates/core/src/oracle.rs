//! Brute-force reference values for the closed forms in [`crate::evidential`].
//!
//! The marginal likelihood is evaluated by integrating the Gaussian likelihood
//! against each component's Normal-Inverse-Gamma prior on a tensor grid, and
//! the moments are estimated by ancestral sampling. Nothing here calls into the
//! closed-form module; normalising constants come from `statrs`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::evidential::{MixtureEvidentialParams, NigComponent};

/// Minimum prior mass the integration box must capture.
pub const REQUIRED_PRIOR_MASS: f64 = 1.0 - 1e-4;
/// Minimum node count along either axis.
pub const MIN_POINTS: usize = 64;
/// Smallest sample count accepted by [`mc_moments`].
pub const MIN_MC_SAMPLES: usize = 100_000;

// Half-widths (in standard deviations) of the Gaussian factors kept on the mu axis.
const MU_HALF_WIDTH: f64 = 12.0;

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Discretisation of the `(mu, sigma^2)` integration domain.
///
/// The `sigma^2` axis is integrated in `ln sigma^2` over `sigma2_range`. On the
/// `mu` axis each `sigma^2` slice integrates over the part of `mu_range` where
/// both Gaussian factors are within twelve standard deviations of their means.
/// Both axes use composite 8-point Gauss-Legendre panels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub mu_range: (f64, f64),
    pub sigma2_range: (f64, f64),
    pub mu_points: usize,
    pub sigma2_points: usize,
}

impl QuadratureSpec {
    pub fn new(
        mu_range: (f64, f64),
        sigma2_range: (f64, f64),
        mu_points: usize,
        sigma2_points: usize,
    ) -> Result<Self> {
        let q = Self {
            mu_range,
            sigma2_range,
            mu_points,
            sigma2_points,
        };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        let (mlo, mhi) = self.mu_range;
        let (slo, shi) = self.sigma2_range;
        if !(mlo.is_finite() && mhi.is_finite() && mlo < mhi) {
            return Err(Error::domain(format!("empty mu range {:?}", self.mu_range)));
        }
        if !(slo.is_finite() && shi.is_finite() && slo > 0.0 && slo < shi) {
            return Err(Error::domain(format!(
                "sigma^2 range {:?} must be a nonempty positive interval",
                self.sigma2_range
            )));
        }
        if self.mu_points < MIN_POINTS || self.sigma2_points < MIN_POINTS {
            return Err(Error::domain(format!(
                "need at least {MIN_POINTS} points per axis, got {} x {}",
                self.mu_points, self.sigma2_points
            )));
        }
        Ok(())
    }

    /// Box bounded by inverse-gamma quantiles at `tail` and `1 - tail` across
    /// all components, and `gamma +/- 12 sqrt(max sigma^2 / min nu)` in `mu`.
    pub fn adaptive(m: &MixtureEvidentialParams, tail: f64) -> Result<Self> {
        if !(tail > 0.0 && tail < 0.5) {
            return Err(Error::domain(format!("tail probability {tail} out of range")));
        }
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut min_nu = f64::INFINITY;
        for c in m.components() {
            let (a, b) = inverse_gamma_interval(c.alpha(), c.beta(), tail);
            lo = lo.min(a);
            hi = hi.max(b);
            min_nu = min_nu.min(c.nu());
        }
        let half = MU_HALF_WIDTH * (hi / min_nu).sqrt();
        Self::new(
            (m.gamma() - half, m.gamma() + half),
            (lo, hi),
            256,
            512,
        )
    }
}

/// Central interval of `InvGamma(alpha, beta)` leaving `tail` mass on each side.
pub fn inverse_gamma_interval(alpha: f64, beta: f64, tail: f64) -> (f64, f64) {
    // sigma^2 = beta / g with g ~ Gamma(alpha, 1).
    let g_upper = bisect_log(|g| gamma_ur(alpha, g) - tail, false);
    let g_lower = bisect_log(|g| gamma_lr(alpha, g) - tail, true);
    (beta / g_upper, beta / g_lower)
}

// Root of a monotone function of g > 0 by bisection in ln g. `increasing`
// tells the direction of monotonicity.
fn bisect_log(f: impl Fn(f64) -> f64, increasing: bool) -> f64 {
    let mut lo = -700.0f64;
    let mut hi = 700.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid.exp());
        if (v < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn inverse_gamma_ln_pdf(x: f64, alpha: f64, beta: f64) -> f64 {
    alpha * beta.ln() - ln_gamma(alpha) - (alpha + 1.0) * x.ln() - beta / x
}

fn gauss_legendre(lo: f64, hi: f64, points: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let panels = points.div_ceil(8);
    let width = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        let mut panel = 0.0;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
            panel += w * f(mid + half * x);
        }
        total += panel * half;
    }
    total
}

// Integrates `weight(mu, sigma^2) * NIG(mu, sigma^2)` over the box, where the
// mu window for each slice is supplied by `window`.
fn integrate_component(
    c: &NigComponent,
    gamma: f64,
    q: &QuadratureSpec,
    window: impl Fn(f64) -> (f64, f64),
    weight: impl Fn(f64, f64) -> f64,
) -> f64 {
    let (slo, shi) = q.sigma2_range;
    gauss_legendre(slo.ln(), shi.ln(), q.sigma2_points, |t| {
        let s2 = t.exp();
        let density = inverse_gamma_ln_pdf(s2, c.alpha(), c.beta()).exp();
        if density == 0.0 {
            return 0.0;
        }
        let (a, b) = window(s2);
        let a = a.max(q.mu_range.0);
        let b = b.min(q.mu_range.1);
        let prior_var = s2 / c.nu();
        let inner = gauss_legendre(a, b, q.mu_points, |mu| {
            normal_pdf(mu, gamma, prior_var) * weight(mu, s2)
        });
        // d sigma^2 = sigma^2 dt
        inner * density * s2
    })
}

/// Prior mass of one component captured by the box.
pub fn prior_mass(c: &NigComponent, gamma: f64, q: &QuadratureSpec) -> f64 {
    integrate_component(
        c,
        gamma,
        q,
        |s2| {
            let sd = (s2 / c.nu()).sqrt();
            (gamma - MU_HALF_WIDTH * sd, gamma + MU_HALF_WIDTH * sd)
        },
        |_, _| 1.0,
    )
}

/// Quadrature estimate of `p(y | m) = sum_k pi_k ∫∫ N(y | mu, sigma^2) NIG_k(mu, sigma^2)`.
pub fn quad_marginal(y: f64, m: &MixtureEvidentialParams, q: &QuadratureSpec) -> Result<f64> {
    q.validate()?;
    if !y.is_finite() {
        return Err(Error::domain(format!("y must be finite, got {y}")));
    }
    let gamma = m.gamma();
    let mut total = 0.0;
    for (c, &w) in m.components().iter().zip(m.weights()) {
        let mass = prior_mass(c, gamma, q);
        if mass < REQUIRED_PRIOR_MASS {
            return Err(Error::Coverage {
                mass,
                required: REQUIRED_PRIOR_MASS,
            });
        }
        let value = integrate_component(
            c,
            gamma,
            q,
            |s2| {
                let prior_sd = (s2 / c.nu()).sqrt();
                let lik_sd = s2.sqrt();
                (
                    (gamma - MU_HALF_WIDTH * prior_sd).max(y - MU_HALF_WIDTH * lik_sd),
                    (gamma + MU_HALF_WIDTH * prior_sd).min(y + MU_HALF_WIDTH * lik_sd),
                )
            },
            |mu, s2| normal_pdf(y, mu, s2),
        );
        total += w * value;
    }
    Ok(total)
}

/// Sample moments of the hierarchical model with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McMoments {
    pub n_samples: usize,
    pub mean_mu: f64,
    pub mean_mu_se: f64,
    pub var_mu: f64,
    pub var_mu_se: f64,
    pub mean_sigma2_per_component: Vec<f64>,
    pub mean_sigma2_se: Vec<f64>,
    pub draws_per_component: Vec<usize>,
}

#[derive(Default, Clone, Copy)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    fn standard_error(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Draws `k ~ Cat(pi)`, `sigma^2 ~ InvGamma(alpha_k, beta_k)`,
/// `mu ~ N(gamma, sigma^2 / nu_k)` and reports moments of `mu` and the
/// per-component means of `sigma^2`.
pub fn mc_moments(m: &MixtureEvidentialParams, n_samples: usize, seed: u64) -> Result<McMoments> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::domain(format!(
            "need at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    let k = m.n_components();
    let gammas = m
        .components()
        .iter()
        .map(|c| Gamma::new(c.alpha(), 1.0 / c.beta()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::domain(format!("gamma sampler: {e}")))?;
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for w in m.weights() {
        acc += w;
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = m.gamma();
    let mut mu_stats = Running::default();
    let mut sigma2_stats = vec![Running::default(); k];
    let mut mus = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let u: f64 = rng.random::<f64>() * acc;
        let j = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);
        let s2 = 1.0 / gammas[j].sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let mu = gamma + (s2 / m.components()[j].nu()).sqrt() * z;
        mu_stats.push(mu);
        sigma2_stats[j].push(s2);
        mus.push(mu);
    }

    // Second pass for the variance of squared deviations around the sample mean.
    let mut sq = Running::default();
    for mu in &mus {
        sq.push((mu - mu_stats.mean).powi(2));
    }
    Ok(McMoments {
        n_samples,
        mean_mu: mu_stats.mean,
        mean_mu_se: mu_stats.standard_error(),
        var_mu: mu_stats.variance(),
        var_mu_se: sq.standard_error(),
        mean_sigma2_per_component: sigma2_stats.iter().map(|s| s.mean).collect(),
        mean_sigma2_se: sigma2_stats.iter().map(|s| s.standard_error()).collect(),
        draws_per_component: sigma2_stats.iter().map(|s| s.n).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidential::{marginal_loglik, NigComponent};

    fn single(gamma: f64, nu: f64, alpha: f64, beta: f64) -> MixtureEvidentialParams {
        MixtureEvidentialParams::single(gamma, NigComponent::new(nu, alpha, beta).unwrap())
            .unwrap()
    }

    #[test]
    fn prior_mass_is_one() {
        let m = single(0.0, 1.0, 2.0, 1.0);
        let q = QuadratureSpec::adaptive(&m, 1e-12).unwrap();
        let mass = prior_mass(&m.components()[0], 0.0, &q);
        assert!((mass - 1.0).abs() < 1e-4, "{mass}");
    }

    #[test]
    fn inverse_gamma_interval_tails() {
        let (lo, hi) = inverse_gamma_interval(2.0, 3.0, 1e-6);
        assert!((gamma_ur(2.0, 3.0 / lo) - 1e-6).abs() < 1e-12);
        assert!((gamma_lr(2.0, 3.0 / hi) - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form_single() {
        let m = single(0.0, 1.0, 2.0, 1.0);
        let q = QuadratureSpec::adaptive(&m, 1e-12).unwrap();
        let quad = quad_marginal(0.0, &m, &q).unwrap();
        let exact = marginal_loglik(0.0, &m).unwrap().exp();
        assert!(((quad - exact) / exact).abs() < 1e-6, "{quad} vs {exact}");
    }

    #[test]
    fn quadrature_is_symmetric() {
        let m = single(0.0, 0.7, 2.5, 1.3);
        let q = QuadratureSpec::adaptive(&m, 1e-12).unwrap();
        let a = quad_marginal(1.3, &m, &q).unwrap();
        let b = quad_marginal(-1.3, &m, &q).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn narrow_box_reports_coverage() {
        let m = single(0.0, 1.0, 2.0, 1.0);
        let q = QuadratureSpec::new((-1.0, 1.0), (0.5, 2.0), 64, 64).unwrap();
        match quad_marginal(0.0, &m, &q) {
            Err(Error::Coverage { mass, .. }) => assert!(mass < 0.9),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn box_validation() {
        assert!(QuadratureSpec::new((1.0, 1.0), (0.1, 1.0), 64, 64).is_err());
        assert!(QuadratureSpec::new((0.0, 1.0), (0.0, 1.0), 64, 64).is_err());
        assert!(QuadratureSpec::new((0.0, 1.0), (0.1, 1.0), 63, 64).is_err());
    }

    #[test]
    fn mc_moments_single_component() {
        let m = single(0.4, 1.0, 2.0, 1.0);
        let mc = mc_moments(&m, 200_000, 3).unwrap();
        assert!((mc.mean_mu - 0.4).abs() < 3.0 * mc.mean_mu_se);
        let m = single(0.0, 1.0, 4.0, 3.0);
        let mc = mc_moments(&m, 200_000, 5).unwrap();
        assert!((mc.mean_sigma2_per_component[0] - 1.0).abs() < 3.0 * mc.mean_sigma2_se[0]);
        assert!((mc.var_mu - 1.0).abs() < 3.0 * mc.var_mu_se);
    }

    #[test]
    fn mc_moments_deterministic() {
        let m = single(0.0, 2.0, 3.0, 1.0);
        assert_eq!(
            mc_moments(&m, 100_000, 9).unwrap(),
            mc_moments(&m, 100_000, 9).unwrap()
        );
        assert!(mc_moments(&m, 10, 9).is_err());
    }
}
