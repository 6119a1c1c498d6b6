//! Losses, the Adam training loop with dev-accuracy early stopping, and
//! embedding extraction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::datapipe::{AugmentConfig, AugmentParams, BinaryBalancer, Example, QueueSet, TrainingData};
use crate::error::{shape_err, Error, Result};
use crate::netdef::{build, Gradients, Mode, Network, NetworkSpec};
use crate::ops::softmax_xent_pair;
use crate::tensor::{Real, Tensor};

/// Per-attribute normaliser of the multi-task loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrNormalization {
    /// Every attribute is averaged over the whole batch.
    #[default]
    BatchSize,
    /// Every attribute is divided by its positive count in the batch (at least 1).
    PositiveCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    pub normalization: AttrNormalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            eval_every: 100,
            patience: 5,
            max_steps: 5000,
            seed: 0,
            optimizer: AdamConfig::default(),
            augment: Some(AugmentConfig::default()),
            normalization: AttrNormalization::BatchSize,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("batch_size, eval_every and patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxSteps,
    Diverged,
    /// Dev accuracy reached 1, which no later step can beat.
    Perfect,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    /// Step whose weights were returned.
    pub best_step: usize,
    pub best_dev_accuracy: f64,
    pub stop_reason: StopReason,
}

/// Losses and gradients over a batch where sample `i`, attribute `a`
/// contributes `weights[a] * xent(i, a)`.
fn weighted_loss<T: Real>(net: &Network<T>, batch: &[Example<T>], weights: &[f64]) -> Result<(f64, Gradients<T>)> {
    const CHUNK: usize = 4;
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, Option<Gradients<T>>)> {
            let mut loss = 0.0;
            let mut acc: Option<Gradients<T>> = None;
            for ex in chunk {
                let (out, trace) = net.forward_traced(&ex.input)?;
                let logits = out.logits.data();
                let mut grad = Vec::with_capacity(logits.len());
                for (a, &w) in weights.iter().enumerate() {
                    let (l, g) = softmax_xent_pair(logits[2 * a].as_f64(), logits[2 * a + 1].as_f64(), ex.labels[a]);
                    loss += w * l;
                    grad.extend(g.iter().map(|&v| T::from_f64_lossy(w * v)));
                }
                let grads = net.backward(&trace, &Tensor::new(vec![weights.len(), 2], grad)?)?;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(acc) => {
                        for (s, g) in acc.iter_mut().zip(&grads) {
                            s.add_assign(g)?;
                        }
                    }
                }
            }
            Ok((loss, acc))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = 0.0;
    let mut sum: Option<Gradients<T>> = None;
    for (loss, grads) in partials {
        total += loss;
        match (&mut sum, grads) {
            (None, g) => sum = g,
            (Some(s), Some(g)) => {
                for (a, b) in s.iter_mut().zip(&g) {
                    a.add_assign(b)?;
                }
            }
            (Some(_), None) => {}
        }
    }
    Ok((total, sum.expect("non-empty batch")))
}

fn check_batch<T: Real>(net: &Network<T>, batch: &[Example<T>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let a = net.spec.num_attrs;
    for ex in batch {
        if ex.labels.len() != a {
            return Err(shape_err!("network predicts {a} attributes, sample has {} labels", ex.labels.len()));
        }
        if ex.labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
    }
    Ok(())
}

/// Mean two-way softmax cross-entropy of a single-attribute network.
pub fn binary_loss<T: Real>(net: &Network<T>, batch: &[Example<T>]) -> Result<(f64, Gradients<T>)> {
    if net.spec.num_attrs != 1 {
        return Err(shape_err!("binary loss needs a one-attribute network, got {}", net.spec.num_attrs));
    }
    multitask_loss(net, batch, AttrNormalization::BatchSize)
}

/// Average over the network's attributes of each attribute's normalised
/// cross-entropy sum.
pub fn multitask_loss<T: Real>(
    net: &Network<T>,
    batch: &[Example<T>],
    normalization: AttrNormalization,
) -> Result<(f64, Gradients<T>)> {
    check_batch(net, batch)?;
    let a = net.spec.num_attrs;
    let weights: Vec<f64> = (0..a)
        .map(|attr| {
            let n = match normalization {
                AttrNormalization::BatchSize => batch.len(),
                AttrNormalization::PositiveCount => batch.iter().filter(|e| e.labels[attr] == 1).count().max(1),
            };
            1.0 / (a as f64 * n as f64)
        })
        .collect();
    weighted_loss(net, batch, &weights)
}

/// Shared last-FC activation for one input.
pub fn embed<T: Real>(net: &Network<T>, crop: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(net.forward(crop)?.embedding)
}

/// Per-attribute accuracy of argmax predictions.
pub fn accuracy<T: Real>(net: &Network<T>, examples: &[Example<T>]) -> Result<Vec<f64>> {
    check_batch(net, examples)?;
    let a = net.spec.num_attrs;
    let correct = examples
        .par_iter()
        .map(|ex| -> Result<Vec<usize>> {
            let out = net.forward(&ex.input)?;
            let l = out.logits.data();
            Ok((0..a).map(|k| usize::from(u8::from(l[2 * k + 1] > l[2 * k]) == ex.labels[k])).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..a).map(|k| correct.iter().map(|c| c[k]).sum::<usize>() as f64 / examples.len() as f64).collect())
}

pub fn mean_accuracy<T: Real>(net: &Network<T>, examples: &[Example<T>]) -> Result<f64> {
    let acc = accuracy(net, examples)?;
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

enum Sampler {
    Binary(BinaryBalancer),
    Multi(QueueSet),
}

/// Trains a freshly initialised network (weights seeded by `config.seed`).
pub fn train(spec: &NetworkSpec, data: &TrainingData, config: &TrainConfig) -> Result<(Network, TrainReport)> {
    train_from(build(spec, config.seed)?, data, config)
}

/// Continues training `net`; use a lower learning rate to fine-tune.
pub fn train_from(mut net: Network, data: &TrainingData, config: &TrainConfig) -> Result<(Network, TrainReport)> {
    config.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::Data("training needs non-empty train and dev splits".into()));
    }
    check_batch(&net, &data.train)?;
    check_batch(&net, &data.dev)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3f_1e00_0001);
    let labels: Vec<Vec<u8>> = data.train.iter().map(|e| e.labels.clone()).collect();
    let mut sampler = match net.spec.mode {
        Mode::Binary => Sampler::Binary(BinaryBalancer::new(&labels.iter().map(|l| l[0]).collect::<Vec<_>>())?),
        Mode::Multi => Sampler::Multi(QueueSet::new(&labels, &mut rng)?),
    };
    let mut adam = AdamState::new(config.optimizer, net.params());

    let mut report = TrainReport {
        losses: Vec::new(),
        evals: Vec::new(),
        best_step: 0,
        best_dev_accuracy: f64::NEG_INFINITY,
        stop_reason: StopReason::MaxSteps,
    };
    let mut best = net.clone();
    let mut stale = 0;

    for step in 1..=config.max_steps {
        let ids = match &mut sampler {
            Sampler::Binary(b) => b.next_batch(config.batch_size, &mut rng),
            Sampler::Multi(q) => q.sample_batch(config.batch_size, &mut rng),
        };
        let batch: Vec<Example> = ids
            .iter()
            .map(|&i| {
                let ex = &data.train[i];
                let input = match &config.augment {
                    Some(cfg) => AugmentParams::sample(cfg, &mut rng).apply(&ex.input),
                    None => ex.input.clone(),
                };
                Example { input, labels: ex.labels.clone() }
            })
            .collect();
        let (loss, grads) = multitask_loss(&net, &batch, config.normalization)?;
        report.losses.push(loss);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            report.stop_reason = StopReason::Diverged;
            return Err(Error::Diverged { step, report: Box::new(report) });
        }
        adam_step(&mut net.params_mut(), &grads, &mut adam)?;

        if step % config.eval_every == 0 || step == config.max_steps {
            let acc = mean_accuracy(&net, &data.dev)?;
            report.evals.push(EvalPoint { step, dev_accuracy: acc });
            log::debug!("step {step}: loss {loss:.5}, dev accuracy {acc:.4}");
            if acc > report.best_dev_accuracy {
                report.best_dev_accuracy = acc;
                report.best_step = step;
                best = net.clone();
                stale = 0;
                if acc >= 1.0 {
                    report.stop_reason = StopReason::Perfect;
                    break;
                }
            } else {
                stale += 1;
                if stale >= config.patience {
                    report.stop_reason = StopReason::Patience;
                    break;
                }
            }
        }
    }
    if report.evals.is_empty() {
        let acc = mean_accuracy(&net, &data.dev)?;
        report.evals.push(EvalPoint { step: 0, dev_accuracy: acc });
        report.best_dev_accuracy = acc;
        best = net;
    }
    Ok((best, report))
}
