//! Fully-connected evidential regressor with five output heads.
//!
//! A shared trunk of dense layers feeds five linear heads: `gamma` (width 1)
//! and `nu`, `alpha`, `beta` and responsibility logits (width `K` each).
//! All parameters live in a single flat buffer so that optimisers, gradient
//! checks and checkpoints can treat them uniformly; [`LayerShape`] records
//! where each dense layer sits inside it.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{MixtureEvidentialParams, NigComponent, Responsibilities};
use crate::objective::{MixtureObjective, Objective, OutputGrads};
use crate::special::{sigmoid, softplus};

/// Additive floor applied to `nu`, `beta` and `alpha - 1` after softplus.
pub const EVIDENCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected relu or tanh)"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// The five output heads, in parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Gamma,
    Nu,
    Alpha,
    Beta,
    Responsibility,
}

impl Head {
    pub const ALL: [Head; 5] = [
        Head::Gamma,
        Head::Nu,
        Head::Alpha,
        Head::Beta,
        Head::Responsibility,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Head::Gamma => "gamma",
            Head::Nu => "nu",
            Head::Alpha => "alpha",
            Head::Beta => "beta",
            Head::Responsibility => "responsibility",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub n_components: usize,
}

impl NetworkSpec {
    /// Two hidden layers of 64 ReLU units.
    pub fn new(input_dim: usize, n_components: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: vec![64, 64],
            activation: Activation::Relu,
            n_components,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.n_components == 0 {
            return Err(Error::Config("need at least one mixture component".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        self.hidden_layers.last().copied().unwrap_or(self.input_dim)
    }

    pub fn head_width(&self, head: Head) -> usize {
        match head {
            Head::Gamma => 1,
            _ => self.n_components,
        }
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, fan_in: usize, fan_out: usize| {
            shapes.push(LayerShape {
                name,
                fan_in,
                fan_out,
                offset,
            });
            offset += fan_in * fan_out + fan_out;
        };
        let mut fan_in = self.input_dim;
        for (i, &width) in self.hidden_layers.iter().enumerate() {
            push(format!("trunk.{i}"), fan_in, width);
            fan_in = width;
        }
        for head in Head::ALL {
            push(format!("head.{}", head.name()), fan_in, self.head_width(head));
        }
        shapes
    }
}

/// Position of one dense layer (`fan_in x fan_out` weights, then `fan_out`
/// biases) inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

/// All trainable parameters, or a gradient with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    spec: NetworkSpec,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

impl NetworkWeights {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_shapes();
        let n = layers.iter().map(LayerShape::len).sum();
        Ok(Self {
            spec: spec.clone(),
            layers,
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights in `+/- sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &w.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for p in &mut w.params[layer.weight_range()] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(w)
    }

    pub fn from_params(spec: &NetworkSpec, params: Vec<f64>) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        if params.len() != w.params.len() {
            return Err(Error::Dimension {
                context: "network parameters",
                expected: w.params.len(),
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::domain(format!("parameter {i} is not finite")));
        }
        w.params = params;
        Ok(w)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Which layer a flat index belongs to.
    pub fn layer_of(&self, index: usize) -> &LayerShape {
        self.layers
            .iter()
            .find(|l| index >= l.offset && index < l.offset + l.len())
            .expect("index within parameter buffer")
    }

    pub fn layer_params(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.params[l.offset..l.offset + l.len()]
    }

    fn weight(&self, layer: &LayerShape) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((layer.fan_in, layer.fan_out), &self.params[layer.weight_range()])
            .expect("layer shape matches buffer")
    }

    fn bias(&self, layer: &LayerShape) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[layer.bias_range()])
    }

    fn head_layer(&self, head: Head) -> &LayerShape {
        let idx = self.spec.hidden_layers.len() + head as usize;
        &self.layers[idx]
    }

    fn dense(&self, layer: &LayerShape, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weight(layer));
        out += &self.bias(layer);
        out
    }
}

/// Activated head outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub gamma: Array1<f64>,
    pub nu: Array2<f64>,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub resp: Responsibilities,
    /// `ln p_ik`, computed from the logits rather than from `resp`.
    pub log_resp: Array2<f64>,
}

impl HeadOutputs {
    pub fn n_samples(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_components(&self) -> usize {
        self.nu.ncols()
    }

    pub fn components(&self, i: usize) -> Result<Vec<NigComponent>> {
        (0..self.n_components())
            .map(|k| NigComponent::new(self.nu[[i, k]], self.alpha[[i, k]], self.beta[[i, k]]))
            .collect()
    }

    pub fn all_components(&self) -> Result<Vec<Vec<NigComponent>>> {
        (0..self.n_samples()).map(|i| self.components(i)).collect()
    }

    /// Per-sample mixture using the responsibilities as mixing weights.
    pub fn sample_params(&self, i: usize) -> Result<MixtureEvidentialParams> {
        MixtureEvidentialParams::new(
            self.gamma[i],
            self.components(i)?,
            self.resp.row(i).to_vec(),
        )
    }
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    layer_inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    raw_nu: Array2<f64>,
    raw_alpha: Array2<f64>,
    raw_beta: Array2<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut probs = logits.clone();
    let mut log_probs = logits.clone();
    for (mut p, mut lp) in probs
        .axis_iter_mut(Axis(0))
        .zip(log_probs.axis_iter_mut(Axis(0)))
    {
        let max = lp.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        lp.mapv_inplace(|v| v - max);
        let log_norm = lp.mapv(f64::exp).sum().ln();
        lp.mapv_inplace(|v| v - log_norm);
        p.assign(&lp.mapv(f64::exp));
        // Renormalise so rows sum to one to the last bit that matters.
        let total = p.sum();
        p.mapv_inplace(|v| v / total);
    }
    (probs, log_probs)
}

impl NetworkWeights {
    /// Runs the network, keeping what [`NetworkWeights::backward`] needs.
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(HeadOutputs, ForwardCache)> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::Dimension {
                context: "input features",
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite input feature"));
        }
        let act = self.spec.activation;
        let n_hidden = self.spec.hidden_layers.len();
        let mut layer_inputs = Vec::with_capacity(n_hidden + 1);
        let mut pre_activations = Vec::with_capacity(n_hidden);
        let mut h = x.to_owned();
        for layer in &self.layers[..n_hidden] {
            let z = self.dense(layer, h.view());
            let next = z.mapv(|v| act.apply(v));
            layer_inputs.push(h);
            pre_activations.push(z);
            h = next;
        }

        let gamma = self
            .dense(self.head_layer(Head::Gamma), h.view())
            .column(0)
            .to_owned();
        let raw_nu = self.dense(self.head_layer(Head::Nu), h.view());
        let raw_alpha = self.dense(self.head_layer(Head::Alpha), h.view());
        let raw_beta = self.dense(self.head_layer(Head::Beta), h.view());
        let logits = self.dense(self.head_layer(Head::Responsibility), h.view());
        layer_inputs.push(h);

        let nu = raw_nu.mapv(|v| softplus(v) + EVIDENCE_FLOOR);
        let alpha = raw_alpha.mapv(|v| softplus(v) + 1.0 + EVIDENCE_FLOOR);
        let beta = raw_beta.mapv(|v| softplus(v) + EVIDENCE_FLOOR);
        let (probs, log_resp) = softmax_rows(&logits);
        let first_bad = |head: Head| match head {
            Head::Gamma => gamma.iter().find(|v| !v.is_finite()).copied(),
            Head::Nu => nu.iter().find(|v| !v.is_finite()).copied(),
            Head::Alpha => alpha.iter().find(|v| !v.is_finite()).copied(),
            Head::Beta => beta.iter().find(|v| !v.is_finite()).copied(),
            Head::Responsibility => probs.iter().find(|v| !v.is_finite()).copied(),
        };
        for head in Head::ALL {
            if let Some(v) = first_bad(head) {
                return Err(Error::Numeric {
                    head: head.name().into(),
                    detail: format!("forward produced {v}"),
                });
            }
        }
        let resp = Responsibilities::new(probs)?;
        Ok((
            HeadOutputs {
                gamma,
                nu,
                alpha,
                beta,
                resp,
                log_resp,
            },
            ForwardCache {
                layer_inputs,
                pre_activations,
                raw_nu,
                raw_alpha,
                raw_beta,
            },
        ))
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<HeadOutputs> {
        self.forward_cached(x).map(|(out, _)| out)
    }

    /// Reverse-mode pass from gradients on the activated head outputs (and on
    /// the raw responsibility logits) back to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grads: &OutputGrads) -> NetworkWeights {
        let mut out = NetworkWeights {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: vec![0.0; self.params.len()],
        };
        let n_hidden = self.spec.hidden_layers.len();
        let h = &cache.layer_inputs[n_hidden];

        let raw_grad = |g: &Array2<f64>, raw: &Array2<f64>| {
            let mut d = g.clone();
            d.zip_mut_with(raw, |gv, &r| *gv *= sigmoid(r));
            d
        };
        let d_gamma = grads.gamma.view().insert_axis(Axis(1)).to_owned();
        let head_grads = [
            (Head::Gamma, d_gamma),
            (Head::Nu, raw_grad(&grads.nu, &cache.raw_nu)),
            (Head::Alpha, raw_grad(&grads.alpha, &cache.raw_alpha)),
            (Head::Beta, raw_grad(&grads.beta, &cache.raw_beta)),
            (Head::Responsibility, grads.logits.clone()),
        ];

        let mut d_h = Array2::<f64>::zeros((h.nrows(), self.spec.trunk_width()));
        for (head, d_raw) in &head_grads {
            let layer = self.head_layer(*head);
            out.accumulate_dense(layer, h.view(), d_raw.view());
            d_h += &d_raw.dot(&self.weight(layer).t());
        }

        let act = self.spec.activation;
        for l in (0..n_hidden).rev() {
            let layer = &self.layers[l];
            let mut d_pre = d_h;
            d_pre.zip_mut_with(&cache.pre_activations[l], |d, &z| *d *= act.derivative(z));
            out.accumulate_dense(layer, cache.layer_inputs[l].view(), d_pre.view());
            d_h = d_pre.dot(&self.weight(layer).t());
        }
        out
    }

    fn accumulate_dense(
        &mut self,
        layer: &LayerShape,
        input: ArrayView2<'_, f64>,
        d_out: ArrayView2<'_, f64>,
    ) {
        let dw = input.t().dot(&d_out);
        let db = d_out.sum_axis(Axis(0));
        let w_range = layer.weight_range();
        for (p, g) in self.params[w_range].iter_mut().zip(dw.iter()) {
            *p += g;
        }
        for (p, g) in self.params[layer.bias_range()].iter_mut().zip(db.iter()) {
            *p += g;
        }
    }
}

/// Loss and gradient of `objective` with respect to every weight.
pub fn loss_and_grad_with(
    w: &NetworkWeights,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    objective: &dyn Objective,
) -> Result<(f64, NetworkWeights)> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            context: "targets",
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite target"));
    }
    let (out, cache) = w.forward_cached(x)?;
    let (loss, grads) = objective.evaluate(&out, y)?;
    if !loss.is_finite() {
        let head = grads.first_non_finite().unwrap_or(Head::Gamma);
        return Err(Error::Numeric {
            head: head.name().into(),
            detail: format!("loss evaluated to {loss}"),
        });
    }
    if let Some(head) = grads.first_non_finite() {
        return Err(Error::Numeric {
            head: head.name().into(),
            detail: "non-finite gradient".into(),
        });
    }
    Ok((loss, w.backward(&cache, &grads)))
}

/// Total loss (responsibility-weighted Student-t NLL plus `lambda` times the
/// evidence penalty) and its exact gradient, with responsibilities trained
/// jointly.
pub fn loss_and_grad(
    w: &NetworkWeights,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<(f64, NetworkWeights)> {
    loss_and_grad_with(w, x, y, &MixtureObjective::joint(lambda)?)
}

/// Copies rows `idx` of `x` and `y` into a contiguous batch.
pub fn gather_rows(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    idx: &[usize],
) -> (Array2<f64>, Array1<f64>) {
    let mut bx = Array2::zeros((idx.len(), x.ncols()));
    let mut by = Array1::zeros(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        bx.slice_mut(s![row, ..]).assign(&x.row(i));
        by[row] = y[i];
    }
    (bx, by)
}
