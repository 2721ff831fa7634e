//! Regression-head training on frozen features.
//!
//! Only `w` and `b` are learned; the backbone is fixed. The loss is mean
//! squared error against the raw 0-5 score. Training is single-threaded over
//! a seeded batch order, so a fixed seed reproduces the weights bit for bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{macro_f1, ConfusionCounts};
use crate::record::atomic_write;

use super::features::{Backbone, FeatureExtractor, SparseVector};
use super::labels::LabeledDoc;
use super::model::{binarize, QualityModel, TrainingMeta, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent with a constant rate.
    #[default]
    Sgd,
    /// Adam with the usual moment decay rates (0.9, 0.999).
    Adam,
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Used when `lr_grid` is empty.
    pub learning_rate: f64,
    pub lr_grid: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Binarization threshold for validation F1 and the saved model.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 3e-4,
            lr_grid: vec![1e-4, 3e-4, 1e-3],
            batch_size: 256,
            seed: 0,
            optimizer: Optimizer::Sgd,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.learning_rates().iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=5.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 5]", self.threshold)));
        }
        Ok(())
    }

    /// The rates that will actually be tried.
    pub fn learning_rates(&self) -> Vec<f64> {
        if self.lr_grid.is_empty() {
            vec![self.learning_rate]
        } else {
            self.lr_grid.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean squared error over the whole training set after the epoch.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub learning_rate: f64,
    pub epochs: Vec<EpochMetrics>,
    /// Set when the loss went non-finite; the curve stops there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: QualityModel,
    pub curves: Vec<TrainingCurve>,
}

/// Loss and gradient of the head on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    /// `mean((w.x + b - y)^2)`.
    pub loss: f64,
    /// `d loss / d w`, sparse, indices increasing.
    pub weights: SparseVector,
    pub bias: f64,
}

/// Analytic loss and gradient for a batch of `(x, y)` pairs.
pub fn head_loss_and_grad(batch: &[(&SparseVector, f64)], w: &[f64], b: f64) -> HeadGradient {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut gb = 0.0;
    let mut terms: Vec<(u32, f64)> = Vec::new();
    for (x, y) in batch {
        let err = x.dot(w) + b - y;
        loss += err * err;
        let scale = 2.0 * err / n;
        gb += scale;
        terms.extend(x.indices.iter().zip(&x.values).map(|(&i, &v)| (i, scale * v)));
    }
    // Stable sort keeps per-index summation in batch order.
    terms.sort_by_key(|t| t.0);
    let mut grad = SparseVector::default();
    for (i, g) in terms {
        if grad.indices.last() == Some(&i) {
            *grad.values.last_mut().unwrap() += g;
        } else {
            grad.indices.push(i);
            grad.values.push(g);
        }
    }
    HeadGradient {
        loss: loss / n,
        weights: grad,
        bias: gb,
    }
}

struct Head {
    w: Vec<f64>,
    b: f64,
}

impl Head {
    fn predict(&self, x: &SparseVector) -> f64 {
        x.dot(&self.w) + self.b
    }
}

enum OptState {
    Sgd,
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        mb: f64,
        vb: f64,
        t: i32,
    },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl OptState {
    fn new(kind: Optimizer, dim: usize) -> Self {
        match kind {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => OptState::Adam {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                mb: 0.0,
                vb: 0.0,
                t: 0,
            },
        }
    }

    fn step(&mut self, head: &mut Head, g: &HeadGradient, lr: f64) {
        match self {
            OptState::Sgd => {
                for (&i, &gi) in g.weights.indices.iter().zip(&g.weights.values) {
                    head.w[i as usize] -= lr * gi;
                }
                head.b -= lr * g.bias;
            }
            OptState::Adam { m, v, mb, vb, t } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                // Dense update: coordinates with zero gradient still decay
                // their moments and move on momentum.
                let mut k = 0;
                for j in 0..head.w.len() {
                    let gj = if g.weights.indices.get(k) == Some(&(j as u32)) {
                        k += 1;
                        g.weights.values[k - 1]
                    } else {
                        0.0
                    };
                    if gj == 0.0 && m[j] == 0.0 && v[j] == 0.0 {
                        continue;
                    }
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                    head.w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
                }
                *mb = BETA1 * *mb + (1.0 - BETA1) * g.bias;
                *vb = BETA2 * *vb + (1.0 - BETA2) * g.bias * g.bias;
                head.b -= lr * (*mb / c1) / ((*vb / c2).sqrt() + EPS);
            }
        }
    }
}

fn mse(head: &Head, xs: &[SparseVector], ys: &[f64]) -> f64 {
    let s: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = head.predict(x) - y;
            e * e
        })
        .sum();
    s / xs.len() as f64
}

fn val_f1(head: &Head, xs: &[SparseVector], ys: &[f64], threshold: f64) -> f64 {
    let mut c = ConfusionCounts::default();
    for (x, y) in xs.iter().zip(ys) {
        c.add(binarize(head.predict(x), threshold), binarize(*y, threshold));
    }
    macro_f1(&c)
}

struct Checkpoint {
    epoch: usize,
    w: Vec<f64>,
    b: f64,
    val_f1: Option<f64>,
    val_mse: Option<f64>,
}

/// Whether `a` beats `b`: higher val macro-F1, then lower val MSE. Earlier
/// candidates win ties because they are seen first.
fn better(a: (Option<f64>, Option<f64>), b: (Option<f64>, Option<f64>)) -> bool {
    let f = |x: Option<f64>| x.unwrap_or(f64::NEG_INFINITY);
    let m = |x: Option<f64>| x.unwrap_or(f64::INFINITY);
    f(a.0) > f(b.0) || (f(a.0) == f(b.0) && m(a.1) < m(b.1))
}

struct RunResult {
    curve: TrainingCurve,
    best: Option<Checkpoint>,
}

struct Data<'a> {
    train_x: &'a [SparseVector],
    train_y: &'a [f64],
    val_x: &'a [SparseVector],
    val_y: &'a [f64],
}

fn run_one(data: &Data, dim: usize, lr: f64, cfg: &TrainConfig) -> RunResult {
    let mut head = Head { w: vec![0.0; dim], b: 0.0 };
    let mut opt = OptState::new(cfg.optimizer, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    let has_val = !data.val_x.is_empty();
    let mut curve = TrainingCurve {
        learning_rate: lr,
        epochs: Vec::new(),
        diverged: None,
    };
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&SparseVector, f64)> =
                chunk.iter().map(|&i| (&data.train_x[i], data.train_y[i])).collect();
            let g = head_loss_and_grad(&batch, &head.w, head.b);
            if !g.loss.is_finite() {
                curve.diverged = Some(format!("non-finite loss at epoch {epoch}, batch {bi}"));
                return RunResult { curve, best };
            }
            opt.step(&mut head, &g, lr);
        }
        let train_mse = mse(&head, data.train_x, data.train_y);
        if !train_mse.is_finite() || !head.b.is_finite() {
            curve.diverged = Some(format!("non-finite loss after epoch {epoch}"));
            return RunResult { curve, best };
        }
        let (val_mse, val_macro_f1) = if has_val {
            (
                Some(mse(&head, data.val_x, data.val_y)),
                Some(val_f1(&head, data.val_x, data.val_y, cfg.threshold)),
            )
        } else {
            (None, None)
        };
        log::debug!("lr={lr} epoch={epoch} train_mse={train_mse:.5} val_mse={val_mse:?} val_f1={val_macro_f1:?}");
        curve.epochs.push(EpochMetrics {
            epoch,
            train_mse,
            val_mse,
            val_macro_f1,
        });
        // Without validation data the final epoch is kept.
        let take = !has_val || best.as_ref().is_none_or(|b| better((val_macro_f1, val_mse), (b.val_f1, b.val_mse)));
        if take {
            best = Some(Checkpoint {
                epoch,
                w: head.w.clone(),
                b: head.b,
                val_f1: val_macro_f1,
                val_mse,
            });
        }
    }
    RunResult { curve, best }
}

fn features(docs: &[LabeledDoc], backbone: &Backbone) -> Result<(Vec<SparseVector>, Vec<f64>)> {
    let xs = docs
        .par_iter()
        .map(|l| backbone.features(&l.doc))
        .collect::<Result<Vec<_>>>()?;
    Ok((xs, docs.iter().map(|l| l.score).collect()))
}

/// Trains one head per grid learning rate and keeps the best checkpoint.
///
/// Selection is by validation macro-F1 at `cfg.threshold`, then validation
/// MSE, then the earlier epoch and earlier grid entry. With an empty
/// validation set each run keeps its final epoch and the rate with the
/// lowest final training MSE wins. A rate whose loss goes non-finite is
/// marked as diverged in its curve; the call fails only if every rate
/// diverges.
pub fn train_regressor(
    train: &[LabeledDoc],
    val: &[LabeledDoc],
    fx: &FeatureExtractor,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let backbone = Backbone::load(fx)?;
    train_with_backbone(train, val, fx, &backbone, cfg)
}

pub fn train_with_backbone(
    train: &[LabeledDoc],
    val: &[LabeledDoc],
    fx: &FeatureExtractor,
    backbone: &Backbone,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if let Some(bad) = train.iter().chain(val).find(|l| !(0.0..=5.0).contains(&l.score)) {
        return Err(Error::InvalidInput(format!(
            "score {} of {:?} outside [0, 5]",
            bad.score, bad.doc.id
        )));
    }
    if !backbone.compatible_with(fx) {
        return Err(Error::InvalidInput("backbone does not match extractor".into()));
    }
    if val.is_empty() {
        log::warn!("empty validation set: keeping the final epoch of each run");
    }
    let (train_x, train_y) = features(train, backbone)?;
    let (val_x, val_y) = features(val, backbone)?;
    let data = Data {
        train_x: &train_x,
        train_y: &train_y,
        val_x: &val_x,
        val_y: &val_y,
    };

    let mut curves = Vec::new();
    let mut chosen: Option<(f64, Checkpoint)> = None;
    for lr in cfg.learning_rates() {
        let RunResult { curve, best } = run_one(&data, fx.dim(), lr, cfg);
        if let Some(reason) = &curve.diverged {
            log::warn!("learning rate {lr} diverged: {reason}");
        }
        if curve.diverged.is_none() {
            let best = best.expect("a finished run has a checkpoint");
            let wins = match &chosen {
                None => true,
                Some((_, c)) if val.is_empty() => {
                    let last = |c: &Checkpoint| mse(&Head { w: c.w.clone(), b: c.b }, &train_x, &train_y);
                    last(&best) < last(c)
                }
                Some((_, c)) => better((best.val_f1, best.val_mse), (c.val_f1, c.val_mse)),
            };
            if wins {
                chosen = Some((lr, best));
            }
        }
        curves.push(curve);
    }

    let Some((lr, best)) = chosen else {
        let last = curves.last().expect("at least one rate");
        return Err(Error::NonFiniteLoss {
            learning_rate: last.learning_rate,
            epoch: last.epochs.len() + 1,
            batch: 0,
        });
    };
    let model = QualityModel {
        extractor: fx.clone(),
        weights: best.w,
        bias: best.b,
        threshold: cfg.threshold,
        training_meta: TrainingMeta {
            epochs: cfg.epochs,
            learning_rate: lr,
            best_epoch: best.epoch,
            seed: cfg.seed,
            batch_size: cfg.batch_size,
            optimizer: cfg.optimizer.to_string(),
            train_size: train.len(),
            val_size: val.len(),
            val_macro_f1: best.val_f1,
            val_mse: best.val_mse,
        },
    };
    Ok(TrainOutcome { model, curves })
}

/// Writes one JSON file per curve: `<prefix>.lr-<rate>.json`.
pub fn save_curves(curves: &[TrainingCurve], prefix: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let prefix = prefix.as_ref();
    let mut paths = Vec::new();
    for c in curves {
        let mut name = prefix.as_os_str().to_owned();
        name.push(format!(".lr-{:e}.json", c.learning_rate));
        let path = std::path::PathBuf::from(name);
        let body = serde_json::to_vec_pretty(c)?;
        atomic_write(&path, |w| w.write_all(&body))?;
        paths.push(path);
    }
    Ok(paths)
}
