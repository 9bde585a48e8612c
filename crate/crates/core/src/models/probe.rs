use crate::error::{shape_err, Result};
use crate::nn::{softmax, ParamSet, Sequential, Tape};
use crate::tensor::Tensor;

use super::spec::ProbeSpec;
use super::HierarchicalModel;

/// Leaky ReLU and a single dense layer on top of a frozen encoder's
/// embeddings. Owns only its own parameters.
#[derive(Debug, Clone)]
pub struct ProbeHead {
    spec: ProbeSpec,
    net: Sequential,
    params: ParamSet,
    class_names: Vec<String>,
}

impl ProbeHead {
    pub fn new(spec: ProbeSpec, class_names: Vec<String>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if class_names.len() != spec.num_classes {
            return Err(shape_err(format!(
                "{} class names for a probe with {} classes",
                class_names.len(),
                spec.num_classes
            )));
        }
        let (net, params) = Sequential::init(&spec.layers(), &[spec.embedding_dim], seed)?;
        Ok(ProbeHead {
            spec,
            net,
            params,
            class_names,
        })
    }

    /// A probe sized for `model`'s embeddings.
    pub fn for_model(
        model: &HierarchicalModel,
        class_names: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let spec = ProbeSpec::new(model.embedding_dim(), class_names.len());
        ProbeHead::new(spec, class_names, seed)
    }

    pub fn spec(&self) -> &ProbeSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .net
            .forward(&self.params, &Tensor::vector(embedding.to_vec()))?
            .into_data())
    }

    pub fn forward_recorded(&self, embedding: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let (y, tape) = self
            .net
            .forward_recorded(&self.params, &Tensor::vector(embedding.to_vec()))?;
        Ok((y.into_data(), tape))
    }

    pub fn backward(&self, tape: &Tape, grad_logits: &[f64], grads: &mut [Tensor]) -> Result<()> {
        self.net.backward(
            &self.params,
            tape,
            &Tensor::vector(grad_logits.to_vec()),
            grads,
        )?;
        Ok(())
    }

    /// Probabilities for an embedding.
    pub fn probs(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(embedding)?))
    }

    /// Probabilities for one raw low-level window through the frozen
    /// encoder.
    pub fn probe_forward(&self, model: &HierarchicalModel, raw: &Tensor) -> Result<Vec<f64>> {
        self.probs(&model.encode_low_level(raw)?)
    }

    pub(crate) fn from_parts(
        spec: ProbeSpec,
        class_names: Vec<String>,
        params: ParamSet,
    ) -> Result<Self> {
        let mut probe = ProbeHead::new(spec, class_names, 0)?;
        super::checkpoint::overwrite_params(&mut probe.params, params)?;
        Ok(probe)
    }
}
