//! Conditional generator networks and the training loop against a released embedding.
//!
//! The generator maps `[z, onehot(y)]` through fully connected hidden layers
//! (optional batch normalization, then the activation) to the data feature
//! space. Image outputs pass through a sigmoid; tabular outputs are linear on
//! numeric slots and sigmoid on categorical one-hot blocks.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::data::{argmax, Domain, LabeledDataset, Schema, SplitTag};
use crate::embedding::{generated_embedding, mmd_loss, MeanEmbedding, Normalization};
use crate::error::{Error, Result};
use crate::ntk::{Activation, NtkFeatureMap};
use crate::rng::Rng;
use crate::tensor::{Gradients, Tape, Tensor, Var};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const SAMPLE_CHUNK: usize = 1024;

const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    MlpTabular,
    MlpImage,
}

/// Running statistics of one batch-normalized layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    kind: GeneratorKind,
    latent_dim: usize,
    hidden: Vec<usize>,
    activation: Activation,
    batch_norm: bool,
    schema: Schema,
    /// Per hidden layer: `W (in×out)`, `b (1×out)`, and with batch norm
    /// `γ (1×out)`, `β (1×out)`; then the output `W`, `b`.
    params: Vec<Tensor>,
    running: Vec<RunningStats>,
    /// Label distribution for sampling; uniform when absent.
    label_weights: Option<Vec<f64>>,
    training: bool,
}

/// One hidden layer's batch statistics, recorded in training mode.
struct BatchStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GeneratorModel {
    /// A freshly initialized generator for data with `schema`.
    ///
    /// Weights and biases are drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(
        schema: Schema,
        latent_dim: usize,
        hidden: Vec<usize>,
        activation: Activation,
        batch_norm: bool,
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Domain("latent dimension must be positive".into()));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::Domain(format!("hidden widths must be positive: {hidden:?}")));
        }
        if schema.num_classes() == 0 || schema.feature_dim() == 0 {
            return Err(Error::Schema("schema has no features or no classes".into()));
        }
        let kind = match schema.domain {
            Domain::Image => GeneratorKind::MlpImage,
            Domain::Tabular => GeneratorKind::MlpTabular,
        };
        let mut rng = Rng::derive(seed, STREAM_INIT);
        let mut uniform = |fan_in: usize, shape: &[usize]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches")
        };
        let mut params = Vec::new();
        let mut running = Vec::new();
        let mut fan_in = latent_dim + schema.num_classes();
        for &w in &hidden {
            params.push(uniform(fan_in, &[fan_in, w]));
            params.push(uniform(fan_in, &[1, w]));
            if batch_norm {
                params.push(Tensor::ones(&[1, w]));
                params.push(Tensor::zeros(&[1, w]));
                running.push(RunningStats {
                    mean: vec![0.0; w],
                    var: vec![1.0; w],
                });
            }
            fan_in = w;
        }
        let p = schema.feature_dim();
        params.push(uniform(fan_in, &[fan_in, p]));
        params.push(uniform(fan_in, &[1, p]));
        Ok(GeneratorModel {
            kind,
            latent_dim,
            hidden,
            activation,
            batch_norm,
            schema,
            params,
            running,
            label_weights: None,
            training: true,
        })
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.schema.num_classes()
    }

    pub fn output_dim(&self) -> usize {
        self.schema.feature_dim()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Switch batch norm between batch statistics (`true`) and running statistics.
    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn label_weights(&self) -> Option<&[f64]> {
        self.label_weights.as_deref()
    }

    pub fn set_label_weights(&mut self, weights: Option<Vec<f64>>) -> Result<()> {
        if let Some(w) = &weights {
            if w.len() != self.num_classes()
                || w.iter().any(|v| !(*v >= 0.0))
                || !(w.iter().sum::<f64>() > 0.0)
            {
                return Err(Error::Domain(format!("invalid label weights {w:?}")));
            }
        }
        self.label_weights = weights;
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    /// Draw labels and codes, returning the generator input `[z, onehot(y)]`.
    fn sample_inputs(&self, rng: &mut Rng, n: usize) -> Result<(Tensor, Vec<usize>)> {
        let c = self.num_classes();
        let width = self.latent_dim + c;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(match &self.label_weights {
                Some(w) => rng.weighted_label(w)?,
                None => rng.uniform_label(c)?,
            });
        }
        let mut input = Tensor::zeros(&[n, width]);
        let data = input.data_mut();
        for (i, &k) in labels.iter().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            for v in &mut row[..self.latent_dim] {
                *v = rng.standard_normal();
            }
            row[self.latent_dim + k] = 1.0;
        }
        Ok((input, labels))
    }

    /// Record the forward pass on `tape` with parameter handles `theta`.
    fn forward<'t>(
        &self,
        tape: &'t Tape,
        theta: &[Var<'t>],
        input: Tensor,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var<'t>> {
        let n = input.rows();
        let mut a = tape.constant(input);
        let mut k = 0;
        for layer in 0..self.hidden.len() {
            let (w, b) = (theta[k], theta[k + 1]);
            k += 2;
            let mut h = a.matmul(w)?.add(b.expand_rows(n)?)?;
            if self.batch_norm {
                let (gamma, beta) = (theta[k], theta[k + 1]);
                k += 2;
                h = self.batch_norm_layer(tape, h, gamma, beta, layer, stats)?;
            }
            a = match self.activation {
                Activation::Relu => h.relu(),
                Activation::Tanh => h.tanh(),
                Activation::Linear => h,
            };
        }
        let out = a.matmul(theta[k])?.add(theta[k + 1].expand_rows(n)?)?;
        match self.kind {
            GeneratorKind::MlpImage => Ok(out.sigmoid()),
            GeneratorKind::MlpTabular => {
                let mask = self.schema.categorical_mask();
                if !mask.iter().any(|&m| m) {
                    return Ok(out);
                }
                let m: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                let keep: Vec<f64> = m.iter().map(|v| 1.0 - v).collect();
                let m = tape.constant(Tensor::row_vector(m)).expand_rows(n)?;
                let keep = tape.constant(Tensor::row_vector(keep)).expand_rows(n)?;
                out.sigmoid().mul(m)?.add(out.mul(keep)?)
            }
        }
    }

    fn batch_norm_layer<'t>(
        &self,
        tape: &'t Tape,
        h: Var<'t>,
        gamma: Var<'t>,
        beta: Var<'t>,
        layer: usize,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var<'t>> {
        let n = h.shape()[0];
        let (centered, inv_std) = if self.training {
            let mean = h.col_sums().scale(1.0 / n as f64);
            let centered = h.sub(mean.expand_rows(n)?)?;
            let var = centered.square().col_sums().scale(1.0 / n as f64);
            stats.push(BatchStats {
                mean: mean.value().into_data(),
                var: var.value().into_data(),
            });
            (centered, var.shift(BN_EPS).sqrt().recip())
        } else {
            let rs = &self.running[layer];
            let mean = tape.constant(Tensor::row_vector(rs.mean.clone()));
            let inv: Vec<f64> = rs.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            (
                h.sub(mean.expand_rows(n)?)?,
                tape.constant(Tensor::row_vector(inv)),
            )
        };
        centered
            .mul(inv_std.expand_rows(n)?)?
            .mul(gamma.expand_rows(n)?)?
            .add(beta.expand_rows(n)?)
    }

    fn update_running(&mut self, stats: &[BatchStats], n: usize) {
        let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        for (rs, s) in self.running.iter_mut().zip(stats) {
            for j in 0..rs.mean.len() {
                rs.mean[j] = (1.0 - BN_MOMENTUM) * rs.mean[j] + BN_MOMENTUM * s.mean[j];
                rs.var[j] = (1.0 - BN_MOMENTUM) * rs.var[j] + BN_MOMENTUM * s.var[j] * unbias;
            }
        }
    }
}

/// Generate `n` points: returns the `n×p` outputs and the `n×c` one-hot labels.
///
/// Uses the model's current mode; in training mode batch norm sees this batch
/// but the running statistics are left alone.
pub fn generate_batch(g: &GeneratorModel, rng: &mut Rng, n: usize) -> Result<(Tensor, Tensor)> {
    if n == 0 {
        return Err(Error::Domain("generate_batch needs n ≥ 1".into()));
    }
    let (input, labels) = g.sample_inputs(rng, n)?;
    let tape = Tape::new();
    let theta: Vec<Var> = g.params.iter().map(|p| tape.constant(p.clone())).collect();
    let x = g.forward(&tape, &theta, input, &mut Vec::new())?.value();
    let c = g.num_classes();
    let mut y = Tensor::zeros(&[n, c]);
    for (i, &k) in labels.iter().enumerate() {
        y.data_mut()[i * c + k] = 1.0;
    }
    Ok((x, y))
}

/// The squared-MMD training loss for one generated batch, with its gradient handles.
pub struct StepLoss<'t> {
    pub loss: Var<'t>,
    pub theta: Vec<Var<'t>>,
}

/// Record one generated batch and its loss against `target` on `tape`.
pub fn batch_loss<'t>(
    g: &GeneratorModel,
    map: &NtkFeatureMap,
    target: &MeanEmbedding,
    tape: &'t Tape,
    rng: &mut Rng,
    n: usize,
) -> Result<StepLoss<'t>> {
    let (loss, theta, _) = batch_loss_with_stats(g, map, target, tape, rng, n)?;
    Ok(StepLoss { loss, theta })
}

fn batch_loss_with_stats<'t>(
    g: &GeneratorModel,
    map: &NtkFeatureMap,
    target: &MeanEmbedding,
    tape: &'t Tape,
    rng: &mut Rng,
    n: usize,
) -> Result<(Var<'t>, Vec<Var<'t>>, Vec<BatchStats>)> {
    if n == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    let (input, labels) = g.sample_inputs(rng, n)?;
    let theta: Vec<Var> = g.params.iter().map(|p| tape.leaf(p.clone())).collect();
    let mut stats = Vec::new();
    let x = g.forward(tape, &theta, input, &mut stats)?;
    let gen = generated_embedding(
        map,
        tape,
        x,
        &labels,
        g.num_classes(),
        target.normalization(),
    )?;
    Ok((mmd_loss(tape, target, &gen)?, theta, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            lr,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_iter: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    /// Log the loss every this many iterations; 0 disables.
    #[serde(default)]
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Domain(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: GeneratorModel,
    /// Loss at each iteration, before that iteration's update.
    pub losses: Vec<f64>,
}

/// Fit `g` to the released embedding `target` by Adam on the squared MMD.
///
/// Each iteration draws a fresh batch from a stream derived from `cfg.seed`.
/// Classes with per-class weights in `target` are sampled in those
/// proportions. Returns the model in evaluation mode.
pub fn train(
    g: &GeneratorModel,
    map: &NtkFeatureMap,
    target: &MeanEmbedding,
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if target.fingerprint() != map.fingerprint() {
        return Err(Error::Fingerprint {
            expected: target.fingerprint().to_string(),
            found: map.fingerprint(),
        });
    }
    if target.num_classes() != g.num_classes() || map.input_dim() != g.output_dim() {
        return Err(Error::Shape(format!(
            "generator emits {} features and {} classes; embedding wants {} and {}",
            g.output_dim(),
            g.num_classes(),
            map.input_dim(),
            target.num_classes()
        )));
    }
    if !target.is_privatized() {
        info!("training against a non-private embedding");
    }
    let mut model = g.clone();
    model.set_training(true);
    if let Some(w) = target.class_weights() {
        if target.normalization() == Normalization::PerClass {
            model.set_label_weights(Some(w.proportions()))?;
        }
    }
    let mut rng = Rng::derive(cfg.seed, STREAM_TRAIN);
    let mut adam = Adam::new(&model.params, cfg.lr, cfg.adam);
    let mut losses = Vec::with_capacity(cfg.n_iter);
    let mut tape = Tape::new();
    for iter in 0..cfg.n_iter {
        tape.reset();
        let (loss, theta, stats) =
            batch_loss_with_stats(&model, map, target, &tape, &mut rng, cfg.batch_size)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss is {value} at iteration {iter}")));
        }
        let grads: Gradients = tape.backward(loss)?;
        let grads: Vec<Tensor> = theta.iter().map(|&t| grads.wrt(t)).collect();
        adam.step(&mut model.params, &grads)?;
        model.update_running(&stats, cfg.batch_size);
        if !model.all_finite() {
            return Err(Error::NonFinite(format!(
                "generator parameters diverged at iteration {iter}"
            )));
        }
        losses.push(value);
        if cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0 {
            info!("iter {}: loss {value:.6e}", iter + 1);
        } else {
            debug!("iter {}: loss {value:.6e}", iter + 1);
        }
    }
    model.set_training(false);
    Ok(Trained { model, losses })
}

/// `n` synthetic points in the data schema, generated in evaluation mode.
///
/// Categorical blocks are decoded by argmax into exact one-hot vectors.
pub fn sample_dataset(g: &GeneratorModel, rng: &mut Rng, n: usize) -> Result<LabeledDataset> {
    let mut model = g.clone();
    model.set_training(false);
    let p = model.output_dim();
    let c = model.num_classes();
    let mut features = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n * c);
    let mut left = n;
    while left > 0 {
        let k = left.min(SAMPLE_CHUNK);
        let (x, y) = generate_batch(&model, rng, k)?;
        features.extend_from_slice(x.data());
        labels.extend_from_slice(y.data());
        left -= k;
    }
    for (offset, width) in model.schema.categorical_blocks() {
        for row in features.chunks_exact_mut(p) {
            let block = &mut row[offset..offset + width];
            let k = argmax(block);
            block.fill(0.0);
            block[k] = 1.0;
        }
    }
    LabeledDataset::new(
        Tensor::matrix(n, p, features)?,
        Tensor::matrix(n, c, labels)?,
        model.schema.clone(),
        SplitTag::Synthetic,
    )
}

/// Loss trace as CSV with header `iter,loss`, iterations counted from 1.
pub fn write_loss_trace(losses: &[f64], mut w: impl Write) -> Result<()> {
    writeln!(w, "iter,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{:e}", i + 1, l)?;
    }
    Ok(())
}

/// Trained generator plus everything needed to reuse it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: GeneratorModel,
    pub train: TrainConfig,
    pub fingerprint: String,
    /// Caller-supplied run configuration, echoed verbatim.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if !ck.model.all_finite() {
            return Err(Error::NonFinite("checkpoint holds non-finite parameters".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, ColumnKind};
    use crate::embedding::data_embedding;
    use crate::ntk::NtkArchitecture;

    fn tabular_schema() -> Schema {
        Schema {
            domain: Domain::Tabular,
            columns: vec![
                Column {
                    name: "x".into(),
                    kind: ColumnKind::Numeric {
                        mean: 0.0,
                        std: 1.0,
                        round: false,
                    },
                    offset: 0,
                },
                Column {
                    name: "colour".into(),
                    kind: ColumnKind::Categorical {
                        categories: vec!["blue".into(), "green".into(), "red".into()],
                    },
                    offset: 1,
                },
            ],
            label: "y".into(),
            classes: vec!["no".into(), "yes".into()],
        }
    }

    fn image_model(bn: bool) -> GeneratorModel {
        let schema = Schema::image(2, 2, vec!["a".into(), "b".into(), "c".into()]);
        GeneratorModel::new(schema, 3, vec![8, 6], Activation::Relu, bn, 11).unwrap()
    }

    fn cfg(n_iter: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            n_iter,
            batch_size: 32,
            lr,
            adam: AdamConfig::default(),
            seed: 5,
            eval_every: 0,
        }
    }

    #[test]
    fn parameter_layout() {
        let g = image_model(true);
        assert_eq!(g.params().len(), 2 * 4 + 2);
        assert_eq!(g.params()[0].shape(), &[6, 8]);
        assert_eq!(g.params()[8].shape(), &[6, 4]);
        assert_eq!(image_model(false).params().len(), 6);
        assert_eq!(g.kind(), GeneratorKind::MlpImage);
    }

    #[test]
    fn batch_is_seeded_and_shaped() {
        let g = image_model(true);
        let (x, y) = generate_batch(&g, &mut Rng::new(3), 17).unwrap();
        assert_eq!(x.shape(), &[17, 4]);
        assert_eq!(y.shape(), &[17, 3]);
        assert!(x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (x2, y2) = generate_batch(&g, &mut Rng::new(3), 17).unwrap();
        assert_eq!((x, y), (x2, y2));
        assert!(generate_batch(&g, &mut Rng::new(3), 0).is_err());
    }

    #[test]
    fn labels_follow_weights() {
        let mut g = image_model(false);
        g.set_label_weights(Some(vec![0.0, 1.0, 3.0])).unwrap();
        let (_, y) = generate_batch(&g, &mut Rng::new(0), 4000).unwrap();
        let counts: Vec<f64> = (0..3).map(|k| (0..4000).map(|i| y.at(i, k)).sum()).collect();
        assert_eq!(counts[0], 0.0);
        assert!((counts[2] / 4000.0 - 0.75).abs() < 0.03);
        assert!(g.set_label_weights(Some(vec![1.0])).is_err());
    }

    #[test]
    fn tabular_outputs_mix_linear_and_sigmoid() {
        let g = GeneratorModel::new(tabular_schema(), 2, vec![5], Activation::Tanh, false, 1)
            .unwrap();
        let (x, _) = generate_batch(&g, &mut Rng::new(1), 50).unwrap();
        for i in 0..50 {
            assert!(x.row(i)[1..].iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let ds = sample_dataset(&g, &mut Rng::new(2), 30).unwrap();
        for i in 0..30 {
            let block = &ds.features().row(i)[1..];
            assert_eq!(block.iter().sum::<f64>(), 1.0);
            assert!(block.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        let decoded = ds.decode();
        assert!(decoded
            .iter()
            .all(|r| ["blue", "green", "red"].contains(&r[1].as_str())));
    }

    #[test]
    fn empty_sample_keeps_schema() {
        let g = image_model(true);
        let ds = sample_dataset(&g, &mut Rng::new(0), 0).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.schema(), g.schema());
        assert_eq!(ds.split, SplitTag::Synthetic);
    }

    #[test]
    fn adam_with_zero_lr_is_identity() {
        let g = image_model(true);
        let mut params = g.params().to_vec();
        let grads: Vec<Tensor> = params.iter().map(|p| p.map(|_| 0.7)).collect();
        let mut adam = Adam::new(&params, 0.0, AdamConfig::default());
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params, g.params());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::row_vector(vec![1.0, -1.0])];
        let g = vec![Tensor::row_vector(vec![3.0, -0.01])];
        let mut adam = Adam::new(&p, 0.1, AdamConfig::default());
        adam.step(&mut p, &g).unwrap();
        assert!((p[0].data()[0] - 0.9).abs() < 1e-8);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    fn toy_problem() -> (NtkFeatureMap, MeanEmbedding, GeneratorModel) {
        let mut rng = Rng::new(0);
        let m = 200;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..m {
            let k = i % 2;
            let c = if k == 0 { -1.0 } else { 1.0 };
            x.push(c + 0.3 * rng.standard_normal());
            x.push(-c + 0.3 * rng.standard_normal());
            y.push(k);
        }
        let mut schema = tabular_schema();
        schema.columns = vec![schema.columns[0].clone(), schema.columns[0].clone()];
        schema.columns[1].name = "x2".into();
        schema.columns[1].offset = 1;
        let data = LabeledDataset::from_indices(
            Tensor::matrix(m, 2, x).unwrap(),
            &y,
            schema.clone(),
            SplitTag::Train,
        )
        .unwrap();
        let map = NtkFeatureMap::init(NtkArchitecture::fc_1l(2, 20, 2, Activation::Relu), 3)
            .unwrap();
        let emb = data_embedding(&map, &data).unwrap();
        let g = GeneratorModel::new(schema, 2, vec![16, 16], Activation::Relu, true, 4).unwrap();
        (map, emb, g)
    }

    #[test]
    fn zero_iterations_leave_model_unchanged() {
        let (map, emb, g) = toy_problem();
        let out = train(&g, &map, &emb, &cfg(0, 0.01)).unwrap();
        assert!(out.losses.is_empty());
        assert_eq!(out.model.params(), g.params());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (map, emb, g) = toy_problem();
        let a = train(&g, &map, &emb, &cfg(300, 0.01)).unwrap();
        let b = train(&g, &map, &emb, &cfg(300, 0.01)).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model, b.model);
        let head: f64 = a.losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = a.losses[290..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
        assert!(!a.model.is_training());
    }

    #[test]
    fn train_rejects_foreign_embedding() {
        let (_, emb, g) = toy_problem();
        let other = NtkFeatureMap::init(NtkArchitecture::fc_1l(2, 20, 2, Activation::Relu), 99)
            .unwrap();
        assert!(matches!(
            train(&g, &other, &emb, &cfg(1, 0.01)),
            Err(Error::Fingerprint { .. })
        ));
        assert!(train(&g, &other, &emb, &cfg(1, 0.0)).is_err());
    }

    #[test]
    fn loss_trace_and_checkpoint_round_trip() {
        let mut buf = Vec::new();
        write_loss_trace(&[0.5, 0.25], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,loss\n1,5e-1\n2,2.5e-1\n");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let ck = Checkpoint {
            model: image_model(true),
            train: cfg(3, 0.01),
            fingerprint: "abc".into(),
            config: serde_json::json!({"iter": 3}),
        };
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
