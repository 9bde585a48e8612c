//! Joint training from high-level labels, probe training on frozen
//! embeddings, and the loss, scheduler and split machinery they share.

mod split;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::models::{HierarchicalModel, ProbeHead};
use crate::nn::{argmax, softmax, ParamSet};
use crate::signal::WindowedSample;
use crate::tensor::Tensor;

pub use split::{
    make_folds, proportion_deviation, stratified_participant_split, FoldPlan, SplitPlan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightsMode {
    #[default]
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Zero epochs leaves the parameters at their initial values.
    pub max_epochs: usize,
    pub lr_gamma: f64,
    pub lr_step_epochs: usize,
    pub seed: u64,
    pub class_weights_mode: ClassWeightsMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            max_epochs: 30,
            lr_gamma: 0.5,
            lr_step_epochs: 10,
            seed: 0,
            class_weights_mode: ClassWeightsMode::InverseFrequency,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad(format!(
                "lr_gamma must lie in (0, 1], got {}",
                self.lr_gamma
            ));
        }
        if self.lr_step_epochs == 0 {
            return bad("lr_step_epochs must be positive".into());
        }
        Ok(())
    }
}

/// `lr0 * gamma^floor(epoch / step)` for a zero-based epoch.
pub fn step_lr(epoch: usize, config: &TrainConfig) -> f64 {
    let k = (epoch / config.lr_step_epochs) as i32;
    config.learning_rate * config.lr_gamma.powi(k)
}

/// `w_c = N / (K * n_c)` over the classes that occur; absent classes get
/// weight zero since they never appear as targets.
pub fn inverse_frequency_weights(counts: &[u64]) -> Vec<f64> {
    let n: u64 = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n as f64 / (k * c as f64)
            }
        })
        .collect()
}

pub fn class_weights(labels: &[usize], k: usize, mode: ClassWeightsMode) -> Result<Vec<f64>> {
    match mode {
        ClassWeightsMode::Uniform => Ok(vec![1.0; k]),
        ClassWeightsMode::InverseFrequency => {
            let mut counts = vec![0u64; k];
            for &l in labels {
                *counts.get_mut(l).ok_or_else(|| {
                    Error::ShapeMismatch(format!("label {l} out of range for {k} classes"))
                })? += 1;
            }
            Ok(inverse_frequency_weights(&counts))
        }
    }
}

/// Loss `-w[t] ln p[t]` and its gradient `w[t] (p - onehot(t))` with
/// respect to the logits that produced `p`.
pub fn weighted_cross_entropy(p: &[f64], target: usize, weights: &[f64]) -> (f64, Vec<f64>) {
    let w = weights[target];
    let loss = -(w * p[target].ln());
    let grad = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| w * (pi - if i == target { 1.0 } else { 0.0 }))
        .collect();
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_macro_f1: Option<f64>,
    pub test_micro_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    /// Mean weighted loss over the training set before any update.
    pub initial_loss: f64,
    /// Mean weighted loss over the training set after the last update.
    pub final_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Report on the test set after the last epoch.
    pub final_report: Option<EvalReport>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("epoch,lr,train_loss,test_macro_f1,test_micro_acc\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch,
                e.lr,
                e.train_loss,
                opt(e.test_macro_f1),
                opt(e.test_micro_acc)
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Anything the shared loop can fit: a forward/backward pass per example
/// and a parameter set to step.
trait Learner {
    type Input;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn zeroed_grads(&self) -> Vec<Tensor>;
    fn probs(&self, x: &Self::Input) -> Result<Vec<f64>>;
    /// Adds the weighted loss gradient for one example to `grads` and
    /// returns that loss.
    fn probs_backward(
        &self,
        x: &Self::Input,
        target: usize,
        weights: &[f64],
        grads: &mut [Tensor],
    ) -> Result<f64>;
}

impl Learner for HierarchicalModel {
    type Input = Vec<Tensor>;

    fn params_mut(&mut self) -> &mut ParamSet {
        HierarchicalModel::params_mut(self)
    }

    fn zeroed_grads(&self) -> Vec<Tensor> {
        self.params().zeroed_grads()
    }

    fn probs(&self, x: &Vec<Tensor>) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits_prepared(x)?))
    }

    fn probs_backward(
        &self,
        x: &Vec<Tensor>,
        target: usize,
        weights: &[f64],
        grads: &mut [Tensor],
    ) -> Result<f64> {
        let (logits, tape) = self.forward_recorded(x)?;
        let (loss, g) = weighted_cross_entropy(&softmax(&logits), target, weights);
        if loss.is_finite() {
            self.backward(&tape, &g, grads)?;
        }
        Ok(loss)
    }
}

impl Learner for ProbeHead {
    type Input = Vec<f64>;

    fn params_mut(&mut self) -> &mut ParamSet {
        ProbeHead::params_mut(self)
    }

    fn zeroed_grads(&self) -> Vec<Tensor> {
        self.params().zeroed_grads()
    }

    fn probs(&self, x: &Vec<f64>) -> Result<Vec<f64>> {
        ProbeHead::probs(self, x)
    }

    fn probs_backward(
        &self,
        x: &Vec<f64>,
        target: usize,
        weights: &[f64],
        grads: &mut [Tensor],
    ) -> Result<f64> {
        let (logits, tape) = self.forward_recorded(x)?;
        let (loss, g) = weighted_cross_entropy(&softmax(&logits), target, weights);
        if loss.is_finite() {
            self.backward(&tape, &g, grads)?;
        }
        Ok(loss)
    }
}

fn mean_loss<L: Learner>(learner: &L, xs: &[L::Input], ys: &[usize], w: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        total += weighted_cross_entropy(&learner.probs(x)?, y, w).0;
    }
    Ok(total / xs.len().max(1) as f64)
}

fn report<L: Learner>(learner: &L, xs: &[L::Input], ys: &[usize], k: usize) -> Result<EvalReport> {
    let preds = xs
        .iter()
        .map(|x| learner.probs(x).map(|p| argmax(&p)))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&preds, ys, k)
}

struct Split<'a, X> {
    xs: &'a [X],
    ys: &'a [usize],
}

fn fit<L: Learner>(
    learner: &mut L,
    train: Split<L::Input>,
    test: Split<L::Input>,
    k: usize,
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    if train.xs.is_empty() {
        return Err(Error::DegenerateData("empty training set".into()));
    }
    let weights = class_weights(train.ys, k, config.class_weights_mode)?;
    let mut history = History {
        initial_loss: mean_loss(learner, train.xs, train.ys, &weights)?,
        ..History::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.xs.len()).collect();
    let mut grads = learner.zeroed_grads();
    for epoch in 0..config.max_epochs {
        let lr = step_lr(epoch, config);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss +=
                    learner.probs_backward(&train.xs[i], train.ys[i], &weights, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::DivergenceDetected {
                    epoch: epoch + 1,
                    batch: b,
                    loss: batch_loss / batch.len() as f64,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            let params = learner.params_mut();
            params.zero_grad();
            params.accumulate_grads(&grads)?;
            params.sgd_step(lr);
        }
        let train_loss = epoch_loss / train.xs.len() as f64;
        let (f1, acc) = if test.xs.is_empty() {
            (None, None)
        } else {
            let r = report(learner, test.xs, test.ys, k)?;
            (Some(r.macro_f1), Some(r.micro_accuracy))
        };
        log::info!(
            "epoch {} lr {lr:.5} loss {train_loss:.5} test macro-F1 {}",
            epoch + 1,
            f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            test_macro_f1: f1,
            test_micro_acc: acc,
        });
    }
    history.final_loss = mean_loss(learner, train.xs, train.ys, &weights)?;
    if !test.xs.is_empty() {
        history.final_report = Some(report(learner, test.xs, test.ys, k)?);
    }
    Ok(history)
}

fn check_labels(samples: &[WindowedSample], k: usize) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            if s.label < k {
                Ok(s.label)
            } else {
                Err(Error::ShapeMismatch(format!(
                    "label {} out of range for {k} classes",
                    s.label
                )))
            }
        })
        .collect()
}

/// Normalized, partitioned inputs for a set of high-level windows.
pub fn prepare_high_level(
    model: &HierarchicalModel,
    samples: &[WindowedSample],
) -> Result<Vec<Vec<Tensor>>> {
    samples.iter().map(|s| model.prepare_hl(&s.data)).collect()
}

/// Fits normalization on `train`, then trains encoder and head together
/// from the high-level labels. `test` is scored after every epoch.
pub fn train_hierarchical(
    model: &mut HierarchicalModel,
    train: &[WindowedSample],
    test: &[WindowedSample],
    config: &TrainConfig,
) -> Result<History> {
    let k = model.num_classes();
    let ys = check_labels(train, k)?;
    let test_ys = check_labels(test, k)?;
    model.fit_norm(train.iter().map(|s| &s.data))?;
    let xs = prepare_high_level(model, train)?;
    let test_xs = prepare_high_level(model, test)?;
    fit(
        model,
        Split { xs: &xs, ys: &ys },
        Split {
            xs: &test_xs,
            ys: &test_ys,
        },
        k,
        config,
    )
}

/// Scores a trained model on raw high-level windows.
pub fn evaluate_hierarchical(
    model: &HierarchicalModel,
    samples: &[WindowedSample],
) -> Result<EvalReport> {
    let k = model.num_classes();
    let ys = check_labels(samples, k)?;
    report(model, &prepare_high_level(model, samples)?, &ys, k)
}

/// Embeds raw low-level windows with the frozen encoder.
pub fn embed_low_level(
    model: &HierarchicalModel,
    samples: &[WindowedSample],
) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| model.encode_low_level(&s.data))
        .collect()
}

/// Trains only the probe on embeddings from `model`'s frozen encoder.
pub fn train_probe(
    model: &HierarchicalModel,
    probe: &mut ProbeHead,
    train: &[WindowedSample],
    test: &[WindowedSample],
    config: &TrainConfig,
) -> Result<History> {
    let k = probe.spec().num_classes;
    let ys = check_labels(train, k)?;
    let test_ys = check_labels(test, k)?;
    let xs = embed_low_level(model, train)?;
    let test_xs = embed_low_level(model, test)?;
    fit(
        probe,
        Split { xs: &xs, ys: &ys },
        Split {
            xs: &test_xs,
            ys: &test_ys,
        },
        k,
        config,
    )
}

/// Scores a probe on raw low-level windows.
pub fn evaluate_probe(
    model: &HierarchicalModel,
    probe: &ProbeHead,
    samples: &[WindowedSample],
) -> Result<EvalReport> {
    let k = probe.spec().num_classes;
    let ys = check_labels(samples, k)?;
    report(probe, &embed_low_level(model, samples)?, &ys, k)
}

/// Held-out reports from training a fresh probe per participant fold.
pub fn cross_validate_probe(
    model: &HierarchicalModel,
    samples: &[WindowedSample],
    class_names: &[String],
    folds: usize,
    config: &TrainConfig,
) -> Result<Vec<EvalReport>> {
    let plan = make_folds(
        samples.iter().map(|s| (s.participant_id.as_str(), s.label)),
        folds,
        config.seed,
    )?;
    let mut reports = Vec::with_capacity(folds);
    for (f, held) in plan.folds.iter().enumerate() {
        let (test, train): (Vec<_>, Vec<_>) = samples
            .iter()
            .cloned()
            .partition(|s| held.contains(&s.participant_id));
        let mut probe = ProbeHead::for_model(
            model,
            class_names.to_vec(),
            config.seed.wrapping_add(f as u64),
        )?;
        train_probe(model, &mut probe, &train, &[], config)?;
        reports.push(evaluate_probe(model, &probe, &test)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests;
