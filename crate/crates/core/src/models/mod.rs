//! The model zoo: low-level encoders, high-level heads, their hierarchical
//! composition, the frozen-encoder probe, and resource accounting.

mod accounting;
mod checkpoint;
mod probe;
mod spec;
pub mod zoo;

pub use accounting::{
    check_deploy_budget, count_flops, count_params, encoder_footprint, BudgetReport, Footprint,
    ModelFootprint, DEPLOY_PARAM_LIMIT,
};
pub use checkpoint::{
    load_model, load_probe, model_from_bytes, model_to_bytes, save_model, save_probe,
    FORMAT_VERSION,
};
pub use probe::ProbeHead;
pub use spec::{
    parse_toml, EncoderSpec, EncoderVariant, HeadSpec, HeadVariant, InputSpec, ModelSpec,
    ProbeSpec, SpecFile,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{softmax, ParamSet, Sequential, Tape};
use crate::signal::{extract_features, NormStats, CHANNELS, FEATURE_LEN};
use crate::tensor::Tensor;

pub const ENCODER_PREFIX: &str = "encoder.";
pub const HEAD_PREFIX: &str = "head.";

/// Encoder and head sharing one parameter set, plus the input
/// normalization fitted on the training split.
#[derive(Debug, Clone)]
pub struct HierarchicalModel {
    spec: ModelSpec,
    encoder: Sequential,
    head: Sequential,
    params: ParamSet,
    norm: NormStats,
    class_names: Vec<String>,
    n: usize,
    ll_samples: usize,
}

/// Recorded intermediates of one high-level forward pass.
#[derive(Debug, Clone)]
pub struct HierarchicalTape {
    encoder: Vec<Tape>,
    head: Tape,
}

impl HierarchicalModel {
    pub fn new(spec: ModelSpec, class_names: Vec<String>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if class_names.len() != spec.head.num_classes {
            return Err(Error::InvalidConfig(format!(
                "{} class names for a head with {} classes",
                class_names.len(),
                spec.head.num_classes
            )));
        }
        let n = spec.input.n()?;
        let ll_samples = spec.input.ll_samples()?;
        let o = spec.encoder.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Sequential::build(
            &spec.encoder.layers(),
            &spec.encoder.input_shape(ll_samples),
            ENCODER_PREFIX,
            &mut params,
            &mut rng,
        )?;
        let head = Sequential::build(
            &spec.head.layers(o, n),
            &spec.head.input_shape(o, n),
            HEAD_PREFIX,
            &mut params,
            &mut rng,
        )?;
        let dim = if spec.encoder.variant.uses_features() {
            FEATURE_LEN
        } else {
            CHANNELS
        };
        Ok(HierarchicalModel {
            norm: NormStats::identity(dim),
            spec,
            encoder,
            head,
            params,
            class_names,
            n,
            ll_samples,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm(&mut self, norm: NormStats) -> Result<()> {
        if norm.dim() != self.norm.dim() {
            return Err(shape_err(format!(
                "normalization covers {} inputs, model expects {}",
                norm.dim(),
                self.norm.dim()
            )));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Low-level windows per high-level window.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.encoder.embedding_dim
    }

    pub fn ll_samples(&self) -> usize {
        self.ll_samples
    }

    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn head(&self) -> &Sequential {
        &self.head
    }

    /// SHA-256 of the encoder parameters only.
    pub fn encoder_fingerprint(&self) -> String {
        self.params.fingerprint_prefix(ENCODER_PREFIX)
    }

    /// Fits input normalization on training high-level windows. The
    /// unnormalized variant keeps identity statistics.
    pub fn fit_norm<'a, I>(&mut self, train_windows: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Tensor>,
    {
        let variant = self.spec.encoder.variant;
        if !variant.normalizes_input() {
            return Ok(());
        }
        let stats = if variant.uses_features() {
            let mut feats = Vec::new();
            for hl in train_windows {
                for w in self.split(hl)? {
                    feats.push(extract_features(&w)?.to_tensor());
                }
            }
            NormStats::fit(&feats)?
        } else {
            NormStats::fit(train_windows)?
        };
        self.set_norm(stats)
    }

    fn split(&self, hl: &Tensor) -> Result<Vec<Tensor>> {
        if hl.rank() != 2 || hl.rows() != CHANNELS {
            return Err(shape_err(format!(
                "high-level window must be [{CHANNELS}, T], got {:?}",
                hl.shape()
            )));
        }
        let len = hl.cols();
        if len % self.ll_samples != 0 {
            return Err(Error::NonDivisibleWindow {
                window: len,
                sub: self.ll_samples,
            });
        }
        if len / self.ll_samples != self.n {
            return Err(shape_err(format!(
                "high-level window has {} samples, model expects {}",
                len,
                self.n * self.ll_samples
            )));
        }
        (0..self.n)
            .map(|i| hl.slice_cols(i * self.ll_samples, self.ll_samples))
            .collect()
    }

    /// Turns one raw `[6, T_ll]` window into the encoder's input.
    pub fn prepare_ll(&self, raw: &Tensor) -> Result<Tensor> {
        if raw.shape() != [CHANNELS, self.ll_samples] {
            return Err(shape_err(format!(
                "low-level window must be [{CHANNELS}, {}], got {:?}",
                self.ll_samples,
                raw.shape()
            )));
        }
        let variant = self.spec.encoder.variant;
        if variant.uses_features() {
            self.norm.apply(&extract_features(raw)?.to_tensor())
        } else if variant.normalizes_input() {
            self.norm.apply(raw)
        } else {
            Ok(raw.clone())
        }
    }

    /// Splits a raw high-level window into `n` prepared encoder inputs.
    pub fn prepare_hl(&self, raw: &Tensor) -> Result<Vec<Tensor>> {
        self.split(raw)?
            .iter()
            .map(|w| self.prepare_ll(w))
            .collect()
    }

    pub fn encode_prepared(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.encoder.forward(&self.params, x)?.into_data())
    }

    /// Embedding of one raw low-level window.
    pub fn encode_low_level(&self, raw: &Tensor) -> Result<Vec<f64>> {
        self.encode_prepared(&self.prepare_ll(raw)?)
    }

    /// Concatenation for the MLP head, `[o, n]` sequence otherwise.
    pub fn head_input(&self, embeddings: &[Vec<f64>]) -> Result<Tensor> {
        let o = self.embedding_dim();
        if embeddings.len() != self.n || embeddings.iter().any(|e| e.len() != o) {
            return Err(shape_err(format!(
                "head expects {} embeddings of length {o}",
                self.n
            )));
        }
        match self.spec.head.variant {
            HeadVariant::Mlp => Ok(Tensor::vector(embeddings.concat())),
            _ => {
                let mut t = Tensor::zeros(&[o, self.n]);
                for (j, e) in embeddings.iter().enumerate() {
                    for (i, v) in e.iter().enumerate() {
                        t.data_mut()[i * self.n + j] = *v;
                    }
                }
                Ok(t)
            }
        }
    }

    pub fn logits_prepared(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        let embeddings = inputs
            .iter()
            .map(|x| self.encode_prepared(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .head
            .forward(&self.params, &self.head_input(&embeddings)?)?
            .into_data())
    }

    /// Class probabilities for one raw `[6, T_hl]` window.
    pub fn classify_high_level(&self, raw: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits_prepared(&self.prepare_hl(raw)?)?))
    }

    pub fn predict_prepared(&self, inputs: &[Tensor]) -> Result<usize> {
        Ok(crate::nn::argmax(&self.logits_prepared(inputs)?))
    }

    pub fn forward_recorded(&self, inputs: &[Tensor]) -> Result<(Vec<f64>, HierarchicalTape)> {
        let mut tapes = Vec::with_capacity(inputs.len());
        let mut embeddings = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (e, tape) = self.encoder.forward_recorded(&self.params, x)?;
            embeddings.push(e.into_data());
            tapes.push(tape);
        }
        let (logits, head) = self
            .head
            .forward_recorded(&self.params, &self.head_input(&embeddings)?)?;
        Ok((
            logits.into_data(),
            HierarchicalTape {
                encoder: tapes,
                head,
            },
        ))
    }

    /// Backpropagates logit gradients through head and every encoder pass,
    /// accumulating into `grads`.
    pub fn backward(
        &self,
        tape: &HierarchicalTape,
        grad_logits: &[f64],
        grads: &mut [Tensor],
    ) -> Result<()> {
        if tape.encoder.len() != self.n {
            return Err(Error::GraphNotRecorded(format!(
                "tape holds {} encoder passes, model needs {}",
                tape.encoder.len(),
                self.n
            )));
        }
        let g_in = self.head.backward(
            &self.params,
            &tape.head,
            &Tensor::vector(grad_logits.to_vec()),
            grads,
        )?;
        let o = self.embedding_dim();
        for (j, enc_tape) in tape.encoder.iter().enumerate() {
            let g: Vec<f64> = match self.spec.head.variant {
                HeadVariant::Mlp => g_in.data()[j * o..(j + 1) * o].to_vec(),
                _ => (0..o).map(|i| g_in.data()[i * self.n + j]).collect(),
            };
            self.encoder
                .backward(&self.params, enc_tape, &Tensor::vector(g), grads)?;
        }
        Ok(())
    }

    /// Hash of every discrete branch taken in a recorded pass.
    pub fn decision_signature(&self, tape: &HierarchicalTape) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in &tape.encoder {
            h.write_u64(self.encoder.decision_signature(t));
        }
        h.write_u64(self.head.decision_signature(&tape.head));
        h.finish()
    }

    /// Resource footprint of this model's architecture.
    pub fn footprint(&self) -> Result<ModelFootprint> {
        ModelFootprint::of(&self.spec)
    }
}
