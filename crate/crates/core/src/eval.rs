//! Metrics and experiment harnesses: held-out RMSE and NLL, repeated-split
//! benchmarks, component-count sweeps and out-of-distribution reports.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{RegressionDataset, Split};
use crate::error::{Error, Result};
use crate::evidential::{marginal_loglik, MixtureEvidentialParams};
use crate::net::{NetworkSpec, NetworkWeights};
use crate::trainer::{fit, predict_with_uncertainty, FittedModel, TrainConfig};

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            context: "rmse",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::domain("rmse of an empty vector"));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Mean negative marginal log-likelihood of standardized targets, shifted by
/// `ln(target_std)` so the value is a density in original units.
pub fn nll_metric(y: &[f64], params: &[MixtureEvidentialParams], target_std: f64) -> Result<f64> {
    if y.len() != params.len() {
        return Err(Error::Dimension {
            context: "nll metric",
            expected: y.len(),
            got: params.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::domain("nll of an empty vector"));
    }
    if !(target_std.is_finite() && target_std > 0.0) {
        return Err(Error::domain(format!("target std must be > 0, got {target_std}")));
    }
    let mut total = 0.0;
    for (yi, m) in y.iter().zip(params) {
        total -= marginal_loglik(*yi, m)?;
    }
    Ok(total / y.len() as f64 + target_std.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub nll: f64,
    pub n_test: usize,
    pub trial_id: usize,
}

/// RMSE and NLL of a fitted model on raw features and targets.
pub fn evaluate_model(
    model: &FittedModel,
    x: &Array2<f64>,
    y: &Array1<f64>,
    trial_id: usize,
) -> Result<MetricReport> {
    let out = model.forward_raw(x)?;
    let st = &model.standardization;
    let z = st.targets(y.view());
    let params: Vec<_> = (0..z.len())
        .map(|i| out.sample_params(i))
        .collect::<Result<_>>()?;
    let nll = nll_metric(z.as_slice().expect("contiguous"), &params, st.target_std)?;
    let pred: Vec<f64> = out
        .gamma
        .iter()
        .map(|g| st.destandardize_target(*g))
        .collect();
    Ok(MetricReport {
        rmse: rmse(&pred, y.as_slice().expect("contiguous"))?,
        nll,
        n_test: y.len(),
        trial_id,
    })
}

/// Mean and sample standard deviation; one value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

/// Repeated random splits: trial `t` splits and trains with seed
/// `base_seed + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub n_trials: usize,
    pub base_seed: u64,
    pub fractions: [f64; 3],
}

impl TrialPlan {
    /// 90/10 train/test with a tenth of the training part held out for validation.
    pub const BENCHMARK_FRACTIONS: [f64; 3] = [0.81, 0.09, 0.10];

    pub fn benchmark(n_trials: usize, base_seed: u64) -> Self {
        Self {
            n_trials,
            base_seed,
            fractions: Self::BENCHMARK_FRACTIONS,
        }
    }

    pub fn seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        Ok(())
    }
}

/// Outcome of one trial; failures keep the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: usize,
    pub seed: u64,
    pub n_components: usize,
    pub metrics: Option<MetricReport>,
    pub epochs_run: Option<usize>,
    pub error: Option<String>,
}

fn run_trial(
    data: &RegressionDataset,
    template: &NetworkSpec,
    cfg: &TrainConfig,
    plan: &TrialPlan,
    trial: usize,
) -> TrialOutcome {
    let seed = plan.seed(trial);
    let result = (|| {
        let split = data.clone().split(plan.fractions, seed)?;
        let cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let (model, report) = fit(template, &split, &cfg)?;
        let (x, y) = split.raw(Split::Test)?;
        Ok::<_, Error>((evaluate_model(&model, &x, &y, trial)?, report.epochs_run))
    })();
    let (metrics, epochs_run, error) = match result {
        Ok((m, e)) => (Some(m), Some(e), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    TrialOutcome {
        trial_id: trial,
        seed,
        n_components: cfg.n_components,
        metrics,
        epochs_run,
        error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

impl Aggregate {
    fn from_trials(trials: &[TrialOutcome]) -> Self {
        let ok: Vec<&MetricReport> = trials.iter().filter_map(|t| t.metrics.as_ref()).collect();
        let (rmse_mean, rmse_std) = mean_std(&ok.iter().map(|m| m.rmse).collect::<Vec<_>>());
        let (nll_mean, nll_std) = mean_std(&ok.iter().map(|m| m.nll).collect::<Vec<_>>());
        Self {
            rmse_mean,
            rmse_std,
            nll_mean,
            nll_std,
            n_ok: ok.len(),
            n_failed: trials.len() - ok.len(),
        }
    }

    /// Standard error of the mean RMSE and NLL.
    pub fn standard_errors(&self) -> (f64, f64) {
        let n = (self.n_ok.max(1) as f64).sqrt();
        (self.rmse_std / n, self.nll_std / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub plan: TrialPlan,
    pub trials: Vec<TrialOutcome>,
    pub aggregate: Aggregate,
    pub warnings: Vec<String>,
}

/// Trains and scores one model per trial. Failed trials are reported and the
/// aggregate covers the successful ones.
pub fn benchmark(
    data: &RegressionDataset,
    template: &NetworkSpec,
    cfg: &TrainConfig,
    plan: &TrialPlan,
) -> Result<BenchmarkReport> {
    plan.validate()?;
    cfg.validate()?;
    let trials: Vec<TrialOutcome> = (0..plan.n_trials)
        .map(|t| run_trial(data, template, cfg, plan, t))
        .collect();
    let aggregate = Aggregate::from_trials(&trials);
    let warnings = trials
        .iter()
        .filter_map(|t| {
            t.error
                .as_ref()
                .map(|e| format!("trial {} (seed {}) failed: {e}", t.trial_id, t.seed))
        })
        .collect();
    Ok(BenchmarkReport {
        plan: plan.clone(),
        trials,
        aggregate,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub plan: TrialPlan,
    /// Sorted by strictly increasing `k`.
    pub rows: Vec<SweepRow>,
    pub cells: Vec<TrialOutcome>,
    /// `k` with the lowest mean NLL, if any row has a successful trial.
    pub best_k: Option<usize>,
}

impl SweepReport {
    /// Per trial, the `k` with the lowest NLL among cells that succeeded.
    pub fn best_k_per_trial(&self) -> Vec<Option<usize>> {
        (0..self.plan.n_trials)
            .map(|t| {
                self.cells
                    .iter()
                    .filter(|c| c.trial_id == t)
                    .filter_map(|c| c.metrics.as_ref().map(|m| (c.n_components, m.nll)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k)
            })
            .collect()
    }
}

/// Trains every `k` on every trial split, sharing the split and seed across
/// `k` within a trial.
pub fn component_sweep(
    data: &RegressionDataset,
    template: &NetworkSpec,
    cfg: &TrainConfig,
    k_values: &[usize],
    plan: &TrialPlan,
) -> Result<SweepReport> {
    plan.validate()?;
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::Config("component sweep needs k values >= 1".into()));
    }
    let mut cells = Vec::with_capacity(ks.len() * plan.n_trials);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let cfg = TrainConfig {
            n_components: k,
            ..cfg.clone()
        };
        cfg.validate()?;
        let trials: Vec<TrialOutcome> = (0..plan.n_trials)
            .map(|t| run_trial(data, template, &cfg, plan, t))
            .collect();
        rows.push(SweepRow {
            k,
            aggregate: Aggregate::from_trials(&trials),
        });
        cells.extend(trials);
    }
    let best_k = rows
        .iter()
        .filter(|r| r.aggregate.n_ok > 0)
        .min_by(|a, b| a.aggregate.nll_mean.total_cmp(&b.aggregate.nll_mean))
        .map(|r| r.k);
    Ok(SweepReport {
        plan: plan.clone(),
        rows,
        cells,
        best_k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub mean_epistemic_in: f64,
    pub mean_epistemic_out: f64,
    /// `mean_epistemic_out / mean_epistemic_in`.
    pub ratio: f64,
}

/// Mean epistemic uncertainty inside and outside the training domain, both
/// batches already in the network's input units.
pub fn ood_report(
    w: &NetworkWeights,
    in_domain: ArrayView2<'_, f64>,
    out_domain: ArrayView2<'_, f64>,
) -> Result<OodReport> {
    if in_domain.nrows() == 0 || out_domain.nrows() == 0 {
        return Err(Error::domain("OOD report needs nonempty batches"));
    }
    let mean = |x: ArrayView2<'_, f64>| -> Result<f64> {
        let r = predict_with_uncertainty(w, x)?;
        Ok(r.epistemic.iter().sum::<f64>() / r.len() as f64)
    };
    let mean_epistemic_in = mean(in_domain)?;
    let mean_epistemic_out = mean(out_domain)?;
    Ok(OodReport {
        mean_epistemic_in,
        mean_epistemic_out,
        ratio: mean_epistemic_out / mean_epistemic_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidential::NigComponent;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((v - 3.535_533_905_932_737_6).abs() < 1e-15);
        assert!(rmse(&[0.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn nll_metric_std_correction() {
        let c = NigComponent::new(1.0, 2.0, 1.0).unwrap();
        let m = MixtureEvidentialParams::single(0.0, c).unwrap();
        let params = vec![m.clone(), m];
        let y = [0.3, -0.2];
        let base = nll_metric(&y, &params, 1.0).unwrap();
        let doubled = nll_metric(&y, &params, 2.0).unwrap();
        assert!((doubled - base - std::f64::consts::LN_2).abs() < 1e-14);
        assert!(nll_metric(&y, &params, 0.0).is_err());
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ood_identity_and_random_weights() {
        let spec = NetworkSpec::new(1, 2);
        let w = NetworkWeights::init(&spec, 3).unwrap();
        let x = crate::data::grid(-1.0, 1.0, 25);
        let r = ood_report(&w, x.view(), x.view()).unwrap();
        assert_eq!(r.ratio, 1.0);
        let far = crate::data::grid(5.0, 7.0, 10);
        let r = ood_report(&w, x.view(), far.view()).unwrap();
        assert!(r.mean_epistemic_in > 0.0 && r.mean_epistemic_out > 0.0 && r.ratio > 0.0);
    }
}
