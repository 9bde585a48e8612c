//! Architecture descriptions, their plain-text (TOML) form and the layer
//! stacks they expand to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, PoolKind};
use crate::signal::{samples_for, CHANNELS, FEATURE_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    MlpFeatures,
    Cnn,
    Imu2clip,
    CnnLstm,
    CnnGru,
}

impl EncoderVariant {
    /// Whether the encoder consumes the 30 summary features instead of the
    /// raw window.
    pub fn uses_features(self) -> bool {
        self == EncoderVariant::MlpFeatures
    }

    /// Whether inputs are standardized before encoding.
    pub fn normalizes_input(self) -> bool {
        self != EncoderVariant::Imu2clip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    Mlp,
    Gru,
    Lstm,
}

fn d_embedding() -> usize {
    32
}
fn d_kernel() -> usize {
    3
}
fn d_dilations() -> Vec<usize> {
    vec![1, 2, 4]
}
fn d_channels() -> usize {
    16
}
fn d_conv_layers() -> usize {
    2
}
fn d_mlp_hidden() -> Vec<usize> {
    vec![48, 48]
}
fn d_groups() -> usize {
    4
}

/// Low-level encoder. Fields that a variant does not use are ignored.
///
/// * `mlp_features`: dense layers of widths `hidden` with ReLU, then a
///   dense projection to `embedding_dim`.
/// * `cnn`: `conv_layers` x (dilated conv bank, ReLU), global average pool,
///   dense projection.
/// * `imu2clip`: `conv_layers` x (single-dilation conv, group norm, ReLU),
///   then a GRU of width `embedding_dim`. Inputs are not normalized.
/// * `cnn_lstm` / `cnn_gru`: `conv_layers` x (dilated conv bank, ReLU),
///   optional average pool of `pool_size` steps, then an LSTM / GRU of width
///   `embedding_dim` whose last output is the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub variant: EncoderVariant,
    #[serde(default = "d_embedding")]
    pub embedding_dim: usize,
    #[serde(default = "d_kernel")]
    pub kernel_size: usize,
    #[serde(default = "d_dilations")]
    pub dilations: Vec<usize>,
    #[serde(default = "d_channels")]
    pub channels_per_kernel: usize,
    #[serde(default = "d_conv_layers")]
    pub conv_layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(default = "d_mlp_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_groups")]
    pub num_groups: usize,
}

impl EncoderSpec {
    pub fn new(variant: EncoderVariant) -> Self {
        EncoderSpec {
            variant,
            embedding_dim: d_embedding(),
            kernel_size: d_kernel(),
            dilations: d_dilations(),
            channels_per_kernel: d_channels(),
            conv_layers: d_conv_layers(),
            pool_size: None,
            hidden: d_mlp_hidden(),
            num_groups: d_groups(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("encoder.{k}");
        positive(&key("embedding_dim"), self.embedding_dim)?;
        match self.variant {
            EncoderVariant::MlpFeatures => {
                for &h in &self.hidden {
                    positive(&key("hidden"), h)?;
                }
            }
            _ => {
                positive(&key("kernel_size"), self.kernel_size)?;
                positive(&key("channels_per_kernel"), self.channels_per_kernel)?;
                positive(&key("conv_layers"), self.conv_layers)?;
                if self.dilations.is_empty() || self.dilations.contains(&0) {
                    return Err(spec_err(
                        key("dilations"),
                        "must be a non-empty list of positive integers",
                    ));
                }
                let mut sorted = self.dilations.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != self.dilations.len() {
                    return Err(spec_err(key("dilations"), "values must be distinct"));
                }
                if let Some(p) = self.pool_size {
                    positive(&key("pool_size"), p)?;
                }
            }
        }
        if self.variant == EncoderVariant::Imu2clip {
            if self.dilations.len() != 1 {
                return Err(spec_err(
                    key("dilations"),
                    "imu2clip uses a single fixed dilation",
                ));
            }
            positive(&key("num_groups"), self.num_groups)?;
            if self.channels_per_kernel % self.num_groups != 0 {
                return Err(spec_err(
                    key("num_groups"),
                    format!(
                        "must divide channels_per_kernel ({})",
                        self.channels_per_kernel
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Shape of one prepared low-level input.
    pub fn input_shape(&self, ll_samples: usize) -> Vec<usize> {
        if self.variant.uses_features() {
            vec![FEATURE_LEN]
        } else {
            vec![CHANNELS, ll_samples]
        }
    }

    /// Expands to a layer stack producing an `embedding_dim` vector.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let o = self.embedding_dim;
        let relu = LayerSpec::Activation {
            activation: Activation::Relu,
        };
        let mut layers = Vec::new();
        if self.variant == EncoderVariant::MlpFeatures {
            let mut width = FEATURE_LEN;
            for &h in &self.hidden {
                layers.push(dense(width, h));
                layers.push(relu.clone());
                width = h;
            }
            layers.push(dense(width, o));
            return layers;
        }
        let mut channels = CHANNELS;
        for _ in 0..self.conv_layers {
            layers.push(LayerSpec::Conv1dBank {
                in_channels: channels,
                out_channels_per_kernel: self.channels_per_kernel,
                kernel_size: self.kernel_size,
                dilations: self.dilations.clone(),
            });
            channels = self.channels_per_kernel * self.dilations.len();
            if self.variant == EncoderVariant::Imu2clip {
                layers.push(LayerSpec::GroupNorm {
                    num_groups: self.num_groups,
                    num_channels: channels,
                });
            }
            layers.push(relu.clone());
        }
        let recurrent = |input_size| match self.variant {
            EncoderVariant::CnnLstm => LayerSpec::Lstm {
                input_size,
                hidden_size: o,
                return_sequences: false,
            },
            _ => LayerSpec::Gru {
                input_size,
                hidden_size: o,
                return_sequences: false,
            },
        };
        match self.variant {
            EncoderVariant::Cnn => {
                layers.push(LayerSpec::Pool {
                    kind: PoolKind::Average,
                    size: None,
                });
                layers.push(dense(channels, o));
            }
            EncoderVariant::Imu2clip => layers.push(recurrent(channels)),
            _ => {
                if let Some(size) = self.pool_size {
                    layers.push(LayerSpec::Pool {
                        kind: PoolKind::Average,
                        size: Some(size),
                    });
                }
                layers.push(recurrent(channels));
            }
        }
        layers
    }
}

/// High-level head. `mlp` consumes the concatenated embeddings; `gru` and
/// `lstm` stack one recurrent layer per `hidden` entry over the embedding
/// sequence and classify from the last output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub variant: HeadVariant,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(spec_err(
                "head.num_classes",
                "at least 2 classes are required",
            ));
        }
        for &h in &self.hidden {
            positive("head.hidden", h)?;
        }
        if self.variant != HeadVariant::Mlp && self.hidden.is_empty() {
            return Err(spec_err(
                "head.hidden",
                "recurrent heads need at least one layer",
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self, embedding_dim: usize, n: usize) -> Vec<usize> {
        match self.variant {
            HeadVariant::Mlp => vec![n * embedding_dim],
            _ => vec![embedding_dim, n],
        }
    }

    /// Layer stack ending in class logits.
    pub fn layers(&self, embedding_dim: usize, n: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let last = self.hidden.len().saturating_sub(1);
        match self.variant {
            HeadVariant::Mlp => {
                let mut width = n * embedding_dim;
                for &h in &self.hidden {
                    layers.push(dense(width, h));
                    layers.push(LayerSpec::Activation {
                        activation: Activation::Relu,
                    });
                    width = h;
                }
                layers.push(dense(width, self.num_classes));
            }
            HeadVariant::Gru | HeadVariant::Lstm => {
                let mut width = embedding_dim;
                for (i, &h) in self.hidden.iter().enumerate() {
                    let (input_size, hidden_size, return_sequences) = (width, h, i != last);
                    layers.push(if self.variant == HeadVariant::Gru {
                        LayerSpec::Gru {
                            input_size,
                            hidden_size,
                            return_sequences,
                        }
                    } else {
                        LayerSpec::Lstm {
                            input_size,
                            hidden_size,
                            return_sequences,
                        }
                    });
                    width = h;
                }
                layers.push(dense(width, self.num_classes));
            }
        }
        layers
    }
}

fn d_rate() -> f64 {
    50.0
}
fn d_ll() -> f64 {
    1.0
}
fn d_hl() -> f64 {
    30.0
}

/// Sampling rate and the two window lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default = "d_rate")]
    pub rate_hz: f64,
    #[serde(default = "d_ll")]
    pub ll_window_s: f64,
    #[serde(default = "d_hl")]
    pub hl_window_s: f64,
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec {
            rate_hz: d_rate(),
            ll_window_s: d_ll(),
            hl_window_s: d_hl(),
        }
    }
}

impl InputSpec {
    pub fn ll_samples(&self) -> Result<usize> {
        samples_for(self.ll_window_s, self.rate_hz)
    }

    pub fn hl_samples(&self) -> Result<usize> {
        samples_for(self.hl_window_s, self.rate_hz)
    }

    /// Low-level windows per high-level window.
    pub fn n(&self) -> Result<usize> {
        let (hl, ll) = (self.hl_samples()?, self.ll_samples()?);
        if hl % ll != 0 {
            return Err(Error::NonDivisibleWindow {
                window: hl,
                sub: ll,
            });
        }
        Ok(hl / ll)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("input.rate_hz", self.rate_hz),
            ("input.ll_window_s", self.ll_window_s),
            ("input.hl_window_s", self.hl_window_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(spec_err(key, "must be a positive number"));
            }
        }
        self.n().map_err(|e| spec_err("input", e.to_string()))?;
        Ok(())
    }
}

/// A complete hierarchical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub input: InputSpec,
    pub encoder: EncoderSpec,
    pub head: HeadSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        self.encoder.validate()?;
        self.head.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = parse_toml(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model specs always serialize")
    }
}

fn d_slope() -> f64 {
    0.01
}

/// Frozen-encoder probe: leaky ReLU, one dense layer, softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "d_embedding")]
    pub embedding_dim: usize,
    pub num_classes: usize,
    #[serde(default = "d_slope")]
    pub slope: f64,
}

impl ProbeSpec {
    pub fn new(embedding_dim: usize, num_classes: usize) -> Self {
        ProbeSpec {
            embedding_dim,
            num_classes,
            slope: d_slope(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("probe.embedding_dim", self.embedding_dim)?;
        if self.num_classes < 2 {
            return Err(spec_err(
                "probe.num_classes",
                "at least 2 classes are required",
            ));
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return Err(spec_err("probe.slope", "must be a non-negative number"));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Activation {
                activation: Activation::LeakyRelu { slope: self.slope },
            },
            dense(self.embedding_dim, self.num_classes),
        ]
    }
}

/// Any combination of sections, as accepted by the counting tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    #[serde(default)]
    pub input: InputSpec,
    pub encoder: Option<EncoderSpec>,
    pub head: Option<HeadSpec>,
    pub probe: Option<ProbeSpec>,
}

impl SpecFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: SpecFile = parse_toml(text)?;
        if f.encoder.is_none() && f.head.is_none() && f.probe.is_none() {
            return Err(spec_err(
                "encoder",
                "spec declares no encoder, head or probe section",
            ));
        }
        f.input.validate()?;
        if let Some(e) = &f.encoder {
            e.validate()?;
        }
        if let Some(h) = &f.head {
            h.validate()?;
        }
        if let Some(p) = &f.probe {
            p.validate()?;
        }
        Ok(f)
    }

    pub fn model(&self) -> Option<ModelSpec> {
        Some(ModelSpec {
            input: self.input,
            encoder: self.encoder.clone()?,
            head: self.head.clone()?,
        })
    }
}

fn dense(in_features: usize, out_features: usize) -> LayerSpec {
    LayerSpec::Dense {
        in_features,
        out_features,
        bias: true,
    }
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(spec_err(key, "must be positive"))
    } else {
        Ok(())
    }
}

pub(crate) fn spec_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::SpecParseError {
        key: key.into(),
        message: message.into(),
    }
}

/// Deserializes TOML, reporting the offending key on failure.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let message = e.message().trim().to_string();
        spec_err(offending_key(text, &message, e.span()), message)
    })
}

fn offending_key(text: &str, message: &str, span: Option<std::ops::Range<usize>>) -> String {
    // serde names unknown and missing fields in backticks.
    let named = ["unknown field `", "missing field `"]
        .iter()
        .find_map(|p| message.split_once(p))
        .and_then(|(_, rest)| rest.split('`').next());
    let (table, line_key) = match &span {
        Some(r) => locate(text, r.start),
        None => (String::new(), None),
    };
    let key = named.map(str::to_string).or(line_key).unwrap_or_default();
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

/// Enclosing `[table]` and `key =` for a byte offset.
fn locate(text: &str, offset: usize) -> (String, Option<String>) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let table = before[..line_start]
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            l.strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .map(str::trim)
        })
        .unwrap_or("")
        .to_string();
    let trimmed = line.trim();
    if trimmed.starts_with('[') {
        let t = trimmed.trim_start_matches('[').trim_end_matches(']').trim();
        return (t.to_string(), None);
    }
    let key = line.split_once('=').map(|(k, _)| k.trim().to_string());
    (table, key)
}
