use serde::{Deserialize, Serialize};

use super::conv::{self, ConvCache, GroupNormCache, PoolCache};
use super::functional::sigmoid;
use super::params::{ParamId, ParamSet};
use super::recurrent::{self, GruCache, LstmCache};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Average,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 || x.is_nan() {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => super::functional::leaky_relu(x, slope),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    fn has_kink(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }
}

/// Architecture of one layer. Rank-2 activations are `[features, time]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Parallel zero-padded "same" convolutions sharing a kernel size, one
    /// branch per dilation, concatenated along the channel axis.
    Conv1dBank {
        in_channels: usize,
        out_channels_per_kernel: usize,
        kernel_size: usize,
        dilations: Vec<usize>,
    },
    Gru {
        input_size: usize,
        hidden_size: usize,
        return_sequences: bool,
    },
    Lstm {
        input_size: usize,
        hidden_size: usize,
        return_sequences: bool,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// Non-overlapping pooling over time; `size: None` pools the whole
    /// sequence into a vector.
    Pool {
        kind: PoolKind,
        size: Option<usize>,
    },
    Activation {
        activation: Activation,
    },
    GroupNorm {
        num_groups: usize,
        num_channels: usize,
    },
}

/// How a freshly allocated parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub is_bias: bool,
}

fn shape(name: impl Into<String>, shape: &[usize], init: Init, is_bias: bool) -> ParamShape {
    ParamShape {
        name: name.into(),
        shape: shape.to_vec(),
        init,
        is_bias,
    }
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::InvalidConfig(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Conv1dBank {
                in_channels,
                out_channels_per_kernel,
                kernel_size,
                dilations,
            } => {
                positive("in_channels", *in_channels)?;
                positive("out_channels_per_kernel", *out_channels_per_kernel)?;
                positive("kernel_size", *kernel_size)?;
                if dilations.is_empty() {
                    return Err(Error::InvalidConfig("dilation set is empty".into()));
                }
                for (i, d) in dilations.iter().enumerate() {
                    positive("dilation", *d)?;
                    if dilations[..i].contains(d) {
                        return Err(Error::InvalidConfig(format!("dilation {d} repeated")));
                    }
                }
                Ok(())
            }
            LayerSpec::Gru {
                input_size,
                hidden_size,
                ..
            }
            | LayerSpec::Lstm {
                input_size,
                hidden_size,
                ..
            } => {
                positive("input_size", *input_size)?;
                positive("hidden_size", *hidden_size)
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                positive("in_features", *in_features)?;
                positive("out_features", *out_features)
            }
            LayerSpec::Pool { size, .. } => match size {
                Some(s) => positive("pool size", *s),
                None => Ok(()),
            },
            LayerSpec::Activation { activation } => match activation {
                Activation::LeakyRelu { slope } if !slope.is_finite() => Err(Error::InvalidConfig(
                    "leaky relu slope must be finite".into(),
                )),
                _ => Ok(()),
            },
            LayerSpec::GroupNorm {
                num_groups,
                num_channels,
            } => {
                positive("num_groups", *num_groups)?;
                positive("num_channels", *num_channels)?;
                if num_channels % num_groups != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "{num_channels} channels cannot be split into {num_groups} groups"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Parameter tensors this layer owns, in allocation order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        match self {
            LayerSpec::Conv1dBank {
                in_channels,
                out_channels_per_kernel,
                kernel_size,
                dilations,
            } => dilations
                .iter()
                .flat_map(|d| {
                    [
                        shape(
                            format!("d{d}.weight"),
                            &[*out_channels_per_kernel, *in_channels, *kernel_size],
                            Init::Uniform {
                                fan_in: in_channels * kernel_size,
                            },
                            false,
                        ),
                        shape(
                            format!("d{d}.bias"),
                            &[*out_channels_per_kernel],
                            Init::Zeros,
                            true,
                        ),
                    ]
                })
                .collect(),
            LayerSpec::Gru {
                input_size,
                hidden_size,
                ..
            } => recurrent_shapes(3, *input_size, *hidden_size),
            LayerSpec::Lstm {
                input_size,
                hidden_size,
                ..
            } => recurrent_shapes(4, *input_size, *hidden_size),
            LayerSpec::Dense {
                in_features,
                out_features,
                bias,
            } => {
                let mut v = vec![shape(
                    "weight",
                    &[*out_features, *in_features],
                    Init::Uniform {
                        fan_in: *in_features,
                    },
                    false,
                )];
                if *bias {
                    v.push(shape("bias", &[*out_features], Init::Zeros, true));
                }
                v
            }
            LayerSpec::GroupNorm { num_channels, .. } => vec![
                shape("gamma", &[*num_channels], Init::Ones, false),
                shape("beta", &[*num_channels], Init::Zeros, true),
            ],
            LayerSpec::Pool { .. } | LayerSpec::Activation { .. } => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    pub fn bias_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .filter(|p| p.is_bias)
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let need_rank2 = |what: &str, rows: usize| -> Result<usize> {
            match input {
                [r, t] if *r == rows => Ok(*t),
                _ => Err(shape_err(format!(
                    "{what} expects [{rows}, T] input, got {input:?}"
                ))),
            }
        };
        match self {
            LayerSpec::Conv1dBank {
                in_channels,
                out_channels_per_kernel,
                dilations,
                ..
            } => {
                let t = need_rank2("conv1d bank", *in_channels)?;
                Ok(vec![dilations.len() * out_channels_per_kernel, t])
            }
            LayerSpec::Gru {
                input_size,
                hidden_size,
                return_sequences,
            }
            | LayerSpec::Lstm {
                input_size,
                hidden_size,
                return_sequences,
            } => {
                let t = need_rank2("recurrent layer", *input_size)?;
                if t == 0 {
                    return Err(shape_err("recurrent layer needs at least one time step"));
                }
                Ok(if *return_sequences {
                    vec![*hidden_size, t]
                } else {
                    vec![*hidden_size]
                })
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => match input {
                [n] if n == in_features => Ok(vec![*out_features]),
                _ => Err(shape_err(format!(
                    "dense layer expects [{in_features}] input, got {input:?}"
                ))),
            },
            LayerSpec::Pool { size, .. } => match (input, size) {
                ([c, t], None) if *t > 0 => Ok(vec![*c]),
                ([c, t], Some(p)) if *t >= *p => Ok(vec![*c, t / p]),
                _ => Err(shape_err(format!(
                    "pool of size {size:?} cannot consume input {input:?}"
                ))),
            },
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
            LayerSpec::GroupNorm { num_channels, .. } => {
                need_rank2("group norm", *num_channels)?;
                Ok(input.to_vec())
            }
        }
    }

    /// Multiply-accumulate count of one forward pass. Bias additions,
    /// activations, pooling and normalization are not counted.
    pub fn macs(&self, input: &[usize]) -> Result<u64> {
        let out = self.output_shape(input)?;
        let m = match self {
            LayerSpec::Conv1dBank {
                in_channels,
                out_channels_per_kernel,
                kernel_size,
                dilations,
            } => {
                let t = out[1];
                dilations.len() * t * out_channels_per_kernel * kernel_size * in_channels
            }
            LayerSpec::Gru {
                input_size,
                hidden_size,
                ..
            } => input[1] * 3 * (input_size * hidden_size + hidden_size * hidden_size),
            LayerSpec::Lstm {
                input_size,
                hidden_size,
                ..
            } => input[1] * 4 * (input_size * hidden_size + hidden_size * hidden_size),
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => in_features * out_features,
            LayerSpec::Pool { .. } | LayerSpec::Activation { .. } | LayerSpec::GroupNorm { .. } => {
                0
            }
        };
        Ok(m as u64)
    }
}

fn recurrent_shapes(gates: usize, input: usize, hidden: usize) -> Vec<ParamShape> {
    vec![
        shape(
            "w_ih",
            &[gates * hidden, input],
            Init::Uniform { fan_in: input },
            false,
        ),
        shape(
            "w_hh",
            &[gates * hidden, hidden],
            Init::Uniform { fan_in: hidden },
            false,
        ),
        shape("bias", &[gates * hidden], Init::Zeros, true),
    ]
}

/// A layer bound to its parameters inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) params: Vec<ParamId>,
}

/// Intermediates recorded by a forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Conv(ConvCache),
    Gru(GruCache),
    Lstm(LstmCache),
    Dense { input: Tensor },
    Pool(PoolCache),
    Activation { input: Tensor, output: Tensor },
    GroupNorm(GroupNormCache),
}

impl Layer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn forward(&self, p: &ParamSet, x: &Tensor) -> Result<(Tensor, Cache)> {
        let out_shape = self.spec.output_shape(x.shape())?;
        let ids = &self.params;
        match &self.spec {
            LayerSpec::Conv1dBank {
                kernel_size,
                dilations,
                ..
            } => {
                let y = conv::conv_bank_forward(p, ids, *kernel_size, dilations, x, &out_shape);
                Ok((y, Cache::Conv(ConvCache { input: x.clone() })))
            }
            LayerSpec::Gru {
                hidden_size,
                return_sequences,
                ..
            } => {
                let (y, c) = recurrent::gru_forward(p, ids, *hidden_size, *return_sequences, x)?;
                Ok((y, Cache::Gru(c)))
            }
            LayerSpec::Lstm {
                hidden_size,
                return_sequences,
                ..
            } => {
                let (y, c) = recurrent::lstm_forward(p, ids, *hidden_size, *return_sequences, x)?;
                Ok((y, Cache::Lstm(c)))
            }
            LayerSpec::Dense { bias, .. } => {
                let w = p.value(ids[0]);
                let (out, inp) = (w.shape()[0], w.shape()[1]);
                let xd = x.data();
                let mut y = vec![0.0; out];
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w.data()[o * inp..(o + 1) * inp];
                    *yo = row.iter().zip(xd).map(|(a, b)| a * b).sum();
                }
                if *bias {
                    for (yo, b) in y.iter_mut().zip(p.value(ids[1]).data()) {
                        *yo += b;
                    }
                }
                Ok((Tensor::vector(y), Cache::Dense { input: x.clone() }))
            }
            LayerSpec::Pool { kind, size } => {
                let (y, c) = conv::pool_forward(*kind, *size, x, &out_shape);
                Ok((y, Cache::Pool(c)))
            }
            LayerSpec::Activation { activation } => {
                let mut y = x.clone();
                y.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = activation.apply(*v));
                Ok((
                    y.clone(),
                    Cache::Activation {
                        input: x.clone(),
                        output: y,
                    },
                ))
            }
            LayerSpec::GroupNorm { num_groups, .. } => {
                let (y, c) = conv::group_norm_forward(p, ids, *num_groups, x);
                Ok((y, Cache::GroupNorm(c)))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(
        &self,
        p: &ParamSet,
        cache: &Cache,
        gy: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let ids = &self.params;
        match (&self.spec, cache) {
            (
                LayerSpec::Conv1dBank {
                    kernel_size,
                    dilations,
                    ..
                },
                Cache::Conv(c),
            ) => Ok(conv::conv_bank_backward(
                p,
                ids,
                *kernel_size,
                dilations,
                &c.input,
                gy,
                grads,
            )),
            (LayerSpec::Gru { .. }, Cache::Gru(c)) => recurrent::gru_backward(p, ids, c, gy, grads),
            (LayerSpec::Lstm { .. }, Cache::Lstm(c)) => {
                recurrent::lstm_backward(p, ids, c, gy, grads)
            }
            (LayerSpec::Dense { bias, .. }, Cache::Dense { input }) => {
                let w = p.value(ids[0]);
                let (out, inp) = (w.shape()[0], w.shape()[1]);
                let xd = input.data();
                let g = gy.data();
                let gw = grads[ids[0].0].data_mut();
                for o in 0..out {
                    let go = g[o];
                    if go != 0.0 {
                        for (gwi, xi) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xd) {
                            *gwi += go * xi;
                        }
                    }
                }
                if *bias {
                    for (gb, go) in grads[ids[1].0].data_mut().iter_mut().zip(g) {
                        *gb += go;
                    }
                }
                let mut gx = vec![0.0; inp];
                for o in 0..out {
                    let go = g[o];
                    if go != 0.0 {
                        for (gxi, wi) in gx.iter_mut().zip(&w.data()[o * inp..(o + 1) * inp]) {
                            *gxi += go * wi;
                        }
                    }
                }
                Ok(Tensor::vector(gx))
            }
            (LayerSpec::Pool { kind, .. }, Cache::Pool(c)) => Ok(conv::pool_backward(*kind, c, gy)),
            (LayerSpec::Activation { activation }, Cache::Activation { input, output }) => {
                let mut gx = gy.clone();
                for ((g, x), y) in gx
                    .data_mut()
                    .iter_mut()
                    .zip(input.data())
                    .zip(output.data())
                {
                    *g *= activation.derivative(*x, *y);
                }
                Ok(gx)
            }
            (LayerSpec::GroupNorm { .. }, Cache::GroupNorm(c)) => {
                Ok(conv::group_norm_backward(p, ids, c, gy, grads))
            }
            (spec, _) => Err(Error::GraphNotRecorded(format!(
                "cache does not belong to layer {spec:?}"
            ))),
        }
    }
}

impl Cache {
    /// Feeds every discrete branch decision (ReLU signs, max-pool winners)
    /// into `h`. Two forward passes with equal signatures are on the same
    /// smooth piece of the network function.
    pub(crate) fn hash_decisions(&self, spec: &LayerSpec, h: &mut impl std::hash::Hasher) {
        match (spec, self) {
            (LayerSpec::Activation { activation }, Cache::Activation { input, .. })
                if activation.has_kink() =>
            {
                for x in input.data() {
                    h.write_u8(u8::from(*x >= 0.0) + u8::from(*x > 0.0));
                }
            }
            (LayerSpec::Pool { .. }, Cache::Pool(c)) => {
                for i in &c.argmax {
                    h.write_usize(*i);
                }
            }
            _ => {}
        }
    }
}
