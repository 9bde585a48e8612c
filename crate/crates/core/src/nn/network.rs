use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Cache, Init, Layer, LayerSpec};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A stack of layers whose parameters live in a shared [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Sequential {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
}

/// Intermediates of one recorded forward pass through a [`Sequential`].
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

impl Tape {
    pub fn empty() -> Self {
        Tape { caches: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.caches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }
}

impl Sequential {
    /// Validates `specs` against `input_shape` and allocates their parameters
    /// in `params` under `prefix`, initialized from `rng`.
    pub fn build(
        specs: &[LayerSpec],
        input_shape: &[usize],
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            shape = spec.output_shape(&shape)?;
            let mut ids = Vec::new();
            for ps in spec.param_shapes() {
                let mut t = Tensor::zeros(&ps.shape);
                match ps.init {
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        t.data_mut()
                            .iter_mut()
                            .for_each(|v| *v = rng.random_range(-bound..bound));
                    }
                    Init::Zeros => {}
                    Init::Ones => t.fill(1.0),
                }
                ids.push(params.add(format!("{prefix}{i}.{}", ps.name), t)?);
            }
            layers.push(Layer {
                spec: spec.clone(),
                params: ids,
            });
        }
        Ok(Sequential {
            layers,
            input_shape: input_shape.to_vec(),
        })
    }

    /// Builds a standalone network and parameter set from a seed.
    pub fn init(specs: &[LayerSpec], input_shape: &[usize], seed: u64) -> Result<(Self, ParamSet)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let net = Sequential::build(specs, input_shape, "", &mut params, &mut rng)?;
        Ok((net, params))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(Layer::spec)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(params, &cur)?.0;
        }
        Ok(cur)
    }

    pub fn forward_recorded(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, Tape)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(params, &cur)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, Tape { caches }))
    }

    /// Backpropagates `grad_out` through a recorded pass, accumulating into
    /// `grads` (shaped like `params`). Returns the input gradient.
    pub fn backward(
        &self,
        params: &ParamSet,
        tape: &Tape,
        grad_out: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::GraphNotRecorded(format!(
                "tape has {} entries for {} layers",
                tape.caches.len(),
                self.layers.len()
            )));
        }
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch(
                "gradient buffers do not match the parameter set".into(),
            ));
        }
        let mut g = grad_out.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = layer.backward(params, cache, &g, grads)?;
        }
        Ok(g)
    }

    /// Hash of every discrete branch taken during the recorded pass.
    pub fn decision_signature(&self, tape: &Tape) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (layer, cache) in self.layers.iter().zip(&tape.caches) {
            cache.hash_decisions(layer.spec(), &mut h);
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, PoolKind};

    #[test]
    fn dense_32_to_3_allocates_99_scalars() {
        let specs = [LayerSpec::Dense {
            in_features: 32,
            out_features: 3,
            bias: true,
        }];
        let (_, p) = Sequential::init(&specs, &[32], 1).unwrap();
        assert_eq!(p.scalar_count(), 99);
    }

    #[test]
    fn init_is_seeded() {
        let specs = [
            LayerSpec::Conv1dBank {
                in_channels: 6,
                out_channels_per_kernel: 4,
                kernel_size: 3,
                dilations: vec![1, 2],
            },
            LayerSpec::Gru {
                input_size: 8,
                hidden_size: 5,
                return_sequences: false,
            },
        ];
        let (_, a) = Sequential::init(&specs, &[6, 10], 7).unwrap();
        let (_, b) = Sequential::init(&specs, &[6, 10], 7).unwrap();
        let (_, c) = Sequential::init(&specs, &[6, 10], 8).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let specs = [LayerSpec::Dense {
            in_features: 16,
            out_features: 8,
            bias: true,
        }];
        let (_, p) = Sequential::init(&specs, &[16], 3).unwrap();
        assert!(p.get("0.weight").unwrap().max_abs() <= 0.25);
        assert_eq!(p.get("0.bias").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn backward_without_tape_is_rejected() {
        let specs = [
            LayerSpec::Dense {
                in_features: 2,
                out_features: 2,
                bias: true,
            },
            LayerSpec::Activation {
                activation: Activation::Tanh,
            },
        ];
        let (net, p) = Sequential::init(&specs, &[2], 0).unwrap();
        let mut g = p.zeroed_grads();
        let err = net
            .backward(&p, &Tape::empty(), &Tensor::vector(vec![1.0, 1.0]), &mut g)
            .unwrap_err();
        assert!(matches!(err, Error::GraphNotRecorded(_)));
    }

    #[test]
    fn build_rejects_bad_specs() {
        let bad = [LayerSpec::Conv1dBank {
            in_channels: 6,
            out_channels_per_kernel: 2,
            kernel_size: 3,
            dilations: vec![2, 2],
        }];
        assert!(Sequential::init(&bad, &[6, 10], 0).is_err());
        let wrong_input = [LayerSpec::Pool {
            kind: PoolKind::Max,
            size: Some(4),
        }];
        assert!(Sequential::init(&wrong_input, &[6, 3], 0).is_err());
    }
}
