//! Synthetic-to-real utility: fit classifiers on one dataset, score them on another.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{argmax, LabeledDataset};
use crate::error::{Error, Result};
use crate::generator::{Adam, AdamConfig};
use crate::rng::Rng;
use crate::tensor::tape::softmax_rows;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LogisticRegression,
    Mlp,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::LogisticRegression => "logistic_regression",
            ClassifierKind::Mlp => "mlp",
        })
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic_regression" | "logreg" => Ok(ClassifierKind::LogisticRegression),
            "mlp" => Ok(ClassifierKind::Mlp),
            _ => Err(Error::Domain(format!("unknown classifier {s:?}"))),
        }
    }
}

/// Full-batch Adam on softmax cross-entropy plus `l2/2 · ‖W‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub n_iter: usize,
    pub lr: f64,
    pub l2: f64,
    /// Hidden width of the MLP; unused by logistic regression.
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            n_iter: 300,
            lr: 0.05,
            l2: 1e-4,
            hidden: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub kind: ClassifierKind,
    /// Logistic regression: `W (p×c)`, `b (1×c)`.
    /// MLP: `W₁ (p×h)`, `b₁`, `W₂ (h×c)`, `b₂`.
    pub params: Vec<Tensor>,
}

impl Classifier {
    fn logits<'t>(&self, tape: &'t Tape, theta: &[Var<'t>], x: &Tensor) -> Result<Var<'t>> {
        let n = x.rows();
        let x = tape.constant(x.clone());
        match self.kind {
            ClassifierKind::LogisticRegression => {
                x.matmul(theta[0])?.add(theta[1].expand_rows(n)?)
            }
            ClassifierKind::Mlp => {
                let h = x.matmul(theta[0])?.add(theta[1].expand_rows(n)?)?.relu();
                h.matmul(theta[2])?.add(theta[3].expand_rows(n)?)
            }
        }
    }

    /// `n×c` class probabilities.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let theta: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(softmax_rows(&self.logits(&tape, &theta, x)?.value()))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|i| argmax(p.row(i))).collect())
    }
}

fn check_trainable(train: &LabeledDataset) -> Result<()> {
    let present = train.class_counts().iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(Error::Domain(format!(
            "training data must contain at least 2 classes, found {present}"
        )));
    }
    Ok(())
}

fn fit(mut model: Classifier, train: &LabeledDataset, cfg: &ClassifierConfig) -> Result<Classifier> {
    let weights: Vec<usize> = match model.kind {
        ClassifierKind::LogisticRegression => vec![0],
        ClassifierKind::Mlp => vec![0, 2],
    };
    let mut adam = Adam::new(&model.params, cfg.lr, AdamConfig::default());
    let mut tape = Tape::new();
    for iter in 0..cfg.n_iter {
        tape.reset();
        let theta: Vec<Var> = model.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut loss = model
            .logits(&tape, &theta, train.features())?
            .softmax_cross_entropy(train.labels())?;
        if cfg.l2 > 0.0 {
            for &w in &weights {
                loss = loss.add(theta[w].frobenius_sq().scale(0.5 * cfg.l2))?;
            }
        }
        if !loss.item().is_finite() {
            return Err(Error::NonFinite(format!("classifier loss diverged at iteration {iter}")));
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = theta.iter().map(|&t| grads.wrt(t)).collect();
        adam.step(&mut model.params, &grads)?;
    }
    Ok(model)
}

/// Multinomial logistic regression from zero weights.
pub fn train_logreg(train: &LabeledDataset, cfg: &ClassifierConfig) -> Result<Classifier> {
    check_trainable(train)?;
    let (p, c) = (train.feature_dim(), train.num_classes());
    let model = Classifier {
        kind: ClassifierKind::LogisticRegression,
        params: vec![Tensor::zeros(&[p, c]), Tensor::zeros(&[1, c])],
    };
    fit(model, train, cfg)
}

/// One-hidden-layer relu MLP. The first layer is randomly initialized from
/// `seed`; the output layer starts at zero.
pub fn train_mlp(train: &LabeledDataset, cfg: &ClassifierConfig, seed: u64) -> Result<Classifier> {
    check_trainable(train)?;
    if cfg.hidden == 0 {
        return Err(Error::Domain("MLP hidden width must be positive".into()));
    }
    let (p, c, h) = (train.feature_dim(), train.num_classes(), cfg.hidden);
    let mut rng = Rng::new(seed);
    let w1 = rng.gaussian_tensor(&[p, h]).scale((2.0 / p as f64).sqrt());
    let model = Classifier {
        kind: ClassifierKind::Mlp,
        params: vec![
            w1,
            Tensor::zeros(&[1, h]),
            Tensor::zeros(&[h, c]),
            Tensor::zeros(&[1, c]),
        ],
    };
    fit(model, train, cfg)
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the rank statistic, ties sharing their average rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                pos_rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Area under the precision-recall curve as step-wise average precision:
/// `Σ (R_k − R_{k−1}) P_k` over distinct score thresholds, highest first.
pub fn prc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if labels[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Unweighted mean of per-class F1 over `0..classes`; a class with no
/// predictions and no true members scores 0.
pub fn macro_f1(pred: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Domain("macro_f1 needs at least one class".into()));
    }
    if let Some(&k) = pred.iter().chain(labels).find(|&&k| k >= classes) {
        return Err(Error::Domain(format!("class {k} out of {classes}")));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &y) in pred.iter().zip(labels) {
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fn_[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / classes as f64)
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::Shape("accuracy needs equal, non-empty inputs".into()));
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub roc_auc: f64,
    pub prc_auc: f64,
    pub macro_f1: f64,
}

impl Metrics {
    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len().max(1) as f64;
        let sum = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: sum(|m| m.accuracy),
            roc_auc: sum(|m| m.roc_auc),
            prc_auc: sum(|m| m.prc_auc),
            macro_f1: sum(|m| m.macro_f1),
        }
    }
}

/// Score probabilities against true labels.
///
/// Binary problems use the class-1 probability; multiclass ROC and PRC are
/// one-vs-rest macro averages over the classes present in `labels`.
pub fn score(proba: &Tensor, labels: &[usize]) -> Result<Metrics> {
    let (n, c) = proba.dims2();
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} predictions for {} labels", labels.len())));
    }
    let pred: Vec<usize> = (0..n).map(|i| argmax(proba.row(i))).collect();
    let column = |k: usize| (0..n).map(|i| proba.at(i, k)).collect::<Vec<_>>();
    let one_vs_rest = |k: usize| labels.iter().map(|&y| y == k).collect::<Vec<_>>();
    let (roc, prc) = if c == 2 {
        let (s, y) = (column(1), one_vs_rest(1));
        (roc_auc(&s, &y)?, prc_auc(&s, &y)?)
    } else {
        let mut rocs = Vec::new();
        let mut prcs = Vec::new();
        for k in 0..c {
            let y = one_vs_rest(k);
            if y.iter().any(|&b| b) && y.iter().any(|&b| !b) {
                let s = column(k);
                rocs.push(roc_auc(&s, &y)?);
                prcs.push(prc_auc(&s, &y)?);
            }
        }
        if rocs.is_empty() {
            return Err(Error::Domain("test labels hold a single class".into()));
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (avg(&rocs), avg(&prcs))
    };
    Ok(Metrics {
        accuracy: accuracy(&pred, labels)?,
        roc_auc: roc,
        prc_auc: prc,
        macro_f1: macro_f1(&pred, labels, c)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub classifiers: Vec<ClassifierKind>,
    pub seeds: Vec<u64>,
    pub logreg: ClassifierConfig,
    pub mlp: ClassifierConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            classifiers: vec![ClassifierKind::LogisticRegression, ClassifierKind::Mlp],
            seeds: vec![0],
            logreg: ClassifierConfig::default(),
            mlp: ClassifierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub per_seed: Vec<Metrics>,
    pub mean: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub classifiers: BTreeMap<ClassifierKind, ClassifierReport>,
}

impl EvalReport {
    /// Average of several reports' per-seed metrics, e.g. across generator seeds.
    pub fn merge(reports: &[EvalReport]) -> Result<EvalReport> {
        let mut seeds = Vec::new();
        let mut per: BTreeMap<ClassifierKind, Vec<Metrics>> = BTreeMap::new();
        for r in reports {
            seeds.extend(&r.seeds);
            for (k, c) in &r.classifiers {
                per.entry(*k).or_default().extend(&c.per_seed);
            }
        }
        if per.is_empty() {
            return Err(Error::Domain("no reports to merge".into()));
        }
        Ok(EvalReport {
            seeds,
            classifiers: per
                .into_iter()
                .map(|(k, v)| {
                    let mean = Metrics::mean(&v);
                    (k, ClassifierReport { per_seed: v, mean })
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = Vec::new();
        for k in self.classifiers.keys() {
            for m in ["accuracy", "roc_auc", "prc_auc", "macro_f1"] {
                cols.push(format!("{k}_{m}"));
            }
        }
        cols.join(",")
    }

    /// Mean metrics in the order of [`EvalReport::csv_header`].
    pub fn csv_row(&self) -> String {
        let mut vals = Vec::new();
        for c in self.classifiers.values() {
            let m = c.mean;
            for v in [m.accuracy, m.roc_auc, m.prc_auc, m.macro_f1] {
                vals.push(format!("{v}"));
            }
        }
        vals.join(",")
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        writeln!(w, "{}", self.csv_row())?;
        Ok(())
    }
}

/// Train every configured classifier on `synthetic` once per seed and score it on `real_test`.
pub fn synth_to_real_eval(
    synthetic: &LabeledDataset,
    real_test: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    synthetic.schema().check_compatible(real_test.schema())?;
    if cfg.seeds.is_empty() {
        return Err(Error::Domain("evaluation needs at least one seed".into()));
    }
    let labels = real_test.label_indices();
    let mut classifiers = BTreeMap::new();
    for &kind in &cfg.classifiers {
        let mut per_seed = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let model = match kind {
                ClassifierKind::LogisticRegression => train_logreg(synthetic, &cfg.logreg)?,
                ClassifierKind::Mlp => train_mlp(synthetic, &cfg.mlp, seed)?,
            };
            per_seed.push(score(&model.predict_proba(real_test.features())?, &labels)?);
        }
        let mean = Metrics::mean(&per_seed);
        classifiers.insert(kind, ClassifierReport { per_seed, mean });
    }
    Ok(EvalReport {
        seeds: cfg.seeds.clone(),
        classifiers,
    })
}
