//! Parameter and FLOP counting. One multiply-accumulate counts as one FLOP;
//! bias additions, activations, pooling and normalization are free.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::LayerSpec;

use super::spec::{EncoderSpec, InputSpec, ModelSpec};

/// Strict upper bound on encoder parameters for on-chip deployment.
pub const DEPLOY_PARAM_LIMIT: u64 = 25_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub params: u64,
    pub biases: u64,
    pub flops: u64,
}

pub fn count_params(layers: &[LayerSpec]) -> u64 {
    layers.iter().map(|l| l.param_count() as u64).sum()
}

/// MACs of one forward pass over an input of `input_shape`. Recurrent
/// layers count every time step.
pub fn count_flops(layers: &[LayerSpec], input_shape: &[usize]) -> Result<u64> {
    let mut shape = input_shape.to_vec();
    let mut total = 0;
    for l in layers {
        total += l.macs(&shape)?;
        shape = l.output_shape(&shape)?;
    }
    Ok(total)
}

impl Footprint {
    pub fn of(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Self> {
        Ok(Footprint {
            params: count_params(layers),
            biases: layers.iter().map(|l| l.bias_count() as u64).sum(),
            flops: count_flops(layers, input_shape)?,
        })
    }
}

/// Encoder cost per low-level window and head cost per high-level window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFootprint {
    pub encoder: Footprint,
    pub head: Footprint,
    /// Low-level windows per high-level window.
    pub n: u64,
}

impl ModelFootprint {
    pub fn of(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.input.n()?;
        let o = spec.encoder.embedding_dim;
        Ok(ModelFootprint {
            encoder: encoder_footprint(&spec.encoder, &spec.input)?,
            head: Footprint::of(&spec.head.layers(o, n), &spec.head.input_shape(o, n))?,
            n: n as u64,
        })
    }

    /// FLOPs to classify one high-level window from raw input.
    pub fn total_flops(&self) -> u64 {
        self.n * self.encoder.flops + self.head.flops
    }
}

pub fn encoder_footprint(enc: &EncoderSpec, input: &InputSpec) -> Result<Footprint> {
    enc.validate()?;
    Footprint::of(&enc.layers(), &enc.input_shape(input.ll_samples()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub params: u64,
    pub flops: u64,
    pub limit: u64,
    pub pass: bool,
    /// `limit - params`; negative when over budget.
    pub margin: i64,
}

impl BudgetReport {
    pub fn for_counts(params: u64, flops: u64) -> Self {
        BudgetReport {
            params,
            flops,
            limit: DEPLOY_PARAM_LIMIT,
            pass: params < DEPLOY_PARAM_LIMIT,
            margin: DEPLOY_PARAM_LIMIT as i64 - params as i64,
        }
    }
}

pub fn check_deploy_budget(enc: &EncoderSpec, input: &InputSpec) -> Result<BudgetReport> {
    let f = encoder_footprint(enc, input)?;
    Ok(BudgetReport::for_counts(f.params, f.flops))
}
