//! Mini-batch training with early stopping, and uncertainty read-out.
//!
//! Each step runs one forward pass, which yields responsibilities and the
//! NIG hyperparameters together (expectation), then one Adam step on the
//! objective (maximisation).

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{RegressionDataset, Split, Standardization};
use crate::error::{Error, Result};
use crate::evidential::{aleatoric_per_component, mixing_estimate, NigComponent};
use crate::net::{gather_rows, loss_and_grad_with, NetworkSpec, NetworkWeights};
use crate::objective::{MixtureObjective, Objective, ResponsibilityMode};
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_components: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub freeze_responsibilities: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_components: 1,
            lambda: 0.01,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            freeze_responsibilities: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.n_components == 0 {
            return bad("n_components must be >= 1");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        Ok(())
    }

    pub fn mode(&self) -> ResponsibilityMode {
        if self.freeze_responsibilities {
            ResponsibilityMode::Frozen
        } else {
            ResponsibilityMode::Joint
        }
    }

    pub fn objective(&self) -> Result<MixtureObjective> {
        MixtureObjective::new(self.lambda, self.mode())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mixing estimate over the training set at the end of the epoch.
    pub mixing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Mixing estimate of the returned weights over the training set.
    pub mixing: Vec<f64>,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub skipped_batches: usize,
    pub wall_time_secs: f64,
    /// Mini-batch objective value at every optimizer step.
    #[serde(skip)]
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    /// Best validation loss seen up to and including each epoch.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.epochs
            .iter()
            .map(|r| {
                best = best.min(r.val_loss);
                best
            })
            .collect()
    }

    /// The log as line-delimited JSON, one epoch per line.
    pub fn log_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes") + "\n")
            .collect()
    }
}

/// Trains on the training rows of a split dataset, stopping early on the
/// validation rows. Both are standardized with the training statistics.
pub fn train(
    spec: &NetworkSpec,
    data: &RegressionDataset,
    cfg: &TrainConfig,
) -> Result<(NetworkWeights, TrainReport)> {
    if spec.input_dim != data.n_features() {
        return Err(Error::Config(format!(
            "network expects {} inputs, dataset has {} features",
            spec.input_dim,
            data.n_features()
        )));
    }
    let (x_train, y_train) = data.standardized(Split::Train)?;
    let (x_val, y_val) = data.standardized(Split::Val)?;
    if y_val.is_empty() {
        return Err(Error::Schema("training needs at least one validation row".into()));
    }
    let objective = cfg.objective()?;
    train_arrays(
        spec,
        (x_train.view(), y_train.view()),
        (x_val.view(), y_val.view()),
        cfg,
        &objective,
    )
}

/// Training on explicit arrays with any objective.
pub fn train_arrays(
    spec: &NetworkSpec,
    train: (ArrayView2<'_, f64>, ArrayView1<'_, f64>),
    val: (ArrayView2<'_, f64>, ArrayView1<'_, f64>),
    cfg: &TrainConfig,
    objective: &dyn Objective,
) -> Result<(NetworkWeights, TrainReport)> {
    cfg.validate()?;
    spec.validate()?;
    if spec.n_components != cfg.n_components {
        return Err(Error::Config(format!(
            "network has {} components, configuration asks for {}",
            spec.n_components, cfg.n_components
        )));
    }
    let (x, y) = train;
    let (xv, yv) = val;
    if y.is_empty() || yv.is_empty() {
        return Err(Error::Schema("training and validation sets must be nonempty".into()));
    }
    if x.nrows() != y.len() || xv.nrows() != yv.len() {
        return Err(Error::Dimension {
            context: "training rows",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let start = Instant::now();
    let mut weights = NetworkWeights::init(spec, cfg.seed)?;
    let mut opt = Adam::new(weights.n_params(), cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut records = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(NetworkWeights, usize, f64)> = None;
    let mut last_finite: Option<NetworkWeights> = None;
    let mut since_best = 0;
    let mut skipped = 0;
    let mut early_stopped = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut finite_batches = 0;
        let mut last_error = None;
        for batch in order.chunks(cfg.batch_size) {
            let (bx, by) = gather_rows(x, y, batch);
            match loss_and_grad_with(&weights, bx.view(), by.view(), objective) {
                Ok((loss, grad)) => {
                    opt.step(weights.params_mut(), grad.params())?;
                    step_losses.push(loss);
                    finite_batches += 1;
                }
                Err(e @ (Error::Numeric { .. } | Error::Domain(_))) => {
                    step_losses.push(f64::NAN);
                    skipped += 1;
                    last_error = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        if finite_batches == 0 {
            return Err(Error::Divergence {
                epoch,
                detail: last_error.map_or_else(|| "no finite batch".into(), |e| e.to_string()),
                last_finite: last_finite.map(Box::new),
            });
        }
        if weights.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: "weights became non-finite".into(),
                last_finite: last_finite.map(Box::new),
            });
        }

        let (train_loss, mixing) = match evaluate(&weights, x, y, objective) {
            Ok(v) => v,
            Err(_) => (f64::INFINITY, vec![f64::NAN; cfg.n_components]),
        };
        let val_loss = evaluate(&weights, xv, yv, objective).map_or(f64::INFINITY, |v| v.0);
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            mixing,
        });
        if train_loss.is_finite() {
            last_finite = Some(weights.clone());
        }

        let improved = best.as_ref().is_none_or(|(_, _, b)| val_loss < *b);
        if improved && val_loss.is_finite() {
            best = Some((weights.clone(), epoch, val_loss));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
    }

    let epochs_run = records.len();
    let (weights, best_epoch, best_val_loss) = match best {
        Some(b) => b,
        None => {
            return Err(Error::Divergence {
                epoch: epochs_run,
                detail: "validation loss was never finite".into(),
                last_finite: last_finite.map(Box::new),
            })
        }
    };
    let resp = weights.forward(x)?.resp;
    let mixing = mixing_estimate(&resp)?;
    Ok((
        weights,
        TrainReport {
            epochs: records,
            best_epoch,
            best_val_loss,
            mixing,
            epochs_run,
            early_stopped,
            skipped_batches: skipped,
            wall_time_secs: start.elapsed().as_secs_f64(),
            step_losses,
        },
    ))
}

/// Full-batch objective value and mixing estimate.
pub fn evaluate(
    w: &NetworkWeights,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    objective: &dyn Objective,
) -> Result<(f64, Vec<f64>)> {
    let out = w.forward(x)?;
    let (loss, _) = objective.evaluate(&out, y)?;
    Ok((loss, mixing_estimate(&out.resp)?))
}

/// Prediction and uncertainty for a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    /// `gamma` for each sample.
    pub prediction: Vec<f64>,
    /// `beta_k / (alpha_k - 1)`, one row per sample.
    pub aleatoric: Vec<Vec<f64>>,
    /// Responsibility-weighted sum of the per-component aleatoric values.
    pub aleatoric_total: Vec<f64>,
    /// `sum_k p_k beta_k / (nu_k (alpha_k - 1))`.
    pub epistemic: Vec<f64>,
    pub responsibilities: Vec<Vec<f64>>,
    /// Column means of the responsibilities over the batch.
    pub mixing: Vec<f64>,
}

impl UncertaintyReport {
    pub fn len(&self) -> usize {
        self.prediction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prediction.is_empty()
    }

    pub fn n_components(&self) -> usize {
        self.mixing.len()
    }

    /// Maps predictions and variances back to original target units.
    pub fn destandardize(mut self, st: &Standardization) -> Self {
        let var = |v: &mut f64| *v = st.destandardize_variance(*v);
        self.prediction
            .iter_mut()
            .for_each(|p| *p = st.destandardize_target(*p));
        self.aleatoric.iter_mut().flatten().for_each(var);
        self.aleatoric_total.iter_mut().for_each(var);
        self.epistemic.iter_mut().for_each(var);
        self
    }
}

/// Closed-form read-out in the network's own (standardized) units.
pub fn predict_with_uncertainty(
    w: &NetworkWeights,
    x: ArrayView2<'_, f64>,
) -> Result<UncertaintyReport> {
    let out = w.forward(x)?;
    let n = out.n_samples();
    let k = out.n_components();
    let mut aleatoric = Vec::with_capacity(n);
    let mut aleatoric_total = Vec::with_capacity(n);
    let mut epistemic = Vec::with_capacity(n);
    let mut responsibilities = Vec::with_capacity(n);
    for i in 0..n {
        let p = out.resp.row(i);
        let mut row = Vec::with_capacity(k);
        let (mut total, mut epi) = (0.0, 0.0);
        for j in 0..k {
            let c = NigComponent::new(out.nu[[i, j]], out.alpha[[i, j]], out.beta[[i, j]])?;
            let a = aleatoric_per_component(&c)?;
            total += p[j] * a;
            epi += p[j] * a / c.nu();
            row.push(a);
        }
        aleatoric.push(row);
        aleatoric_total.push(total);
        epistemic.push(epi);
        responsibilities.push(p.to_vec());
    }
    let mixing = if n > 0 {
        mixing_estimate(&out.resp)?
    } else {
        Vec::new()
    };
    Ok(UncertaintyReport {
        prediction: out.gamma.to_vec(),
        aleatoric,
        aleatoric_total,
        epistemic,
        responsibilities,
        mixing,
    })
}

/// Trained weights together with the standardization they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub weights: NetworkWeights,
    pub standardization: Standardization,
}

impl FittedModel {
    /// Prediction and uncertainty in original units for raw features.
    pub fn predict(&self, x: &Array2<f64>) -> Result<UncertaintyReport> {
        let z = self.standardization.features(x)?;
        Ok(predict_with_uncertainty(&self.weights, z.view())?.destandardize(&self.standardization))
    }

    /// Head outputs on raw features, still in standardized target units.
    pub fn forward_raw(&self, x: &Array2<f64>) -> Result<crate::net::HeadOutputs> {
        let z = self.standardization.features(x)?;
        self.weights.forward(z.view())
    }

    /// Targets mapped into the network's units.
    pub fn standardize_targets(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        self.standardization.targets(y)
    }
}

/// Builds the network for `data` from `template` (hidden layers and
/// activation) and trains it.
pub fn fit(
    template: &NetworkSpec,
    data: &RegressionDataset,
    cfg: &TrainConfig,
) -> Result<(FittedModel, TrainReport)> {
    let spec = NetworkSpec {
        input_dim: data.n_features(),
        n_components: cfg.n_components,
        ..template.clone()
    };
    let (weights, report) = train(&spec, data, cfg)?;
    let standardization = data
        .standardization()
        .cloned()
        .ok_or_else(|| Error::Schema("dataset has not been split".into()))?;
    Ok((
        FittedModel {
            weights,
            standardization,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lambda: -0.1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_weights_read_out() {
        let spec = NetworkSpec::new(2, 3);
        let w = NetworkWeights::zeros(&spec).unwrap();
        let r = predict_with_uncertainty(&w, array![[0.5, -1.0], [2.0, 0.0]].view()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let a = (ln2 + 1e-6) / (ln2 + 1e-6);
        assert_eq!(r.prediction, vec![0.0, 0.0]);
        for row in &r.aleatoric {
            assert!(row.iter().all(|v| (v - a).abs() < 1e-12));
        }
        assert!(r.epistemic.iter().all(|e| (e - a / (ln2 + 1e-6)).abs() < 1e-12));
        assert!(r.mixing.iter().all(|m| (m - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn destandardize_scales_variances() {
        let st = Standardization {
            feature_means: vec![0.0],
            feature_stds: vec![1.0],
            target_mean: 10.0,
            target_std: 2.0,
        };
        let r = UncertaintyReport {
            prediction: vec![1.0],
            aleatoric: vec![vec![0.5, 1.0]],
            aleatoric_total: vec![0.75],
            epistemic: vec![0.25],
            responsibilities: vec![vec![0.5, 0.5]],
            mixing: vec![0.5, 0.5],
        }
        .destandardize(&st);
        assert_eq!(r.prediction, vec![12.0]);
        assert_eq!(r.aleatoric, vec![vec![2.0, 4.0]]);
        assert_eq!(r.aleatoric_total, vec![3.0]);
        assert_eq!(r.epistemic, vec![1.0]);
    }
}
