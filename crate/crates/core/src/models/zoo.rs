//! Shipped configurations.
//!
//! Widths are chosen to fit the on-chip budget. `mlp_features` uses the
//! 30-48-48-32 stack, 5,408 parameters.

use super::spec::{
    EncoderSpec, EncoderVariant, HeadSpec, HeadVariant, InputSpec, ModelSpec, ProbeSpec,
};

pub const VARIANTS: [EncoderVariant; 5] = [
    EncoderVariant::MlpFeatures,
    EncoderVariant::Cnn,
    EncoderVariant::Imu2clip,
    EncoderVariant::CnnLstm,
    EncoderVariant::CnnGru,
];

pub const HEADS: [HeadVariant; 3] = [HeadVariant::Mlp, HeadVariant::Gru, HeadVariant::Lstm];

/// Default encoder of each variant.
pub fn encoder(variant: EncoderVariant) -> EncoderSpec {
    let mut e = EncoderSpec::new(variant);
    if variant == EncoderVariant::Imu2clip {
        e.kernel_size = 5;
        e.dilations = vec![1];
        e.channels_per_kernel = 24;
        e.num_groups = 4;
    }
    e
}

/// Dilated CNN-GRU encoder: kernel 3, dilations {1, 2, 4}, 16 channels per
/// kernel, two conv layers, GRU of width 32.
pub fn default_encoder() -> EncoderSpec {
    encoder(EncoderVariant::CnnGru)
}

/// The group-normalized variant at a width that exceeds the budget.
pub fn imu2clip_reference() -> EncoderSpec {
    let mut e = encoder(EncoderVariant::Imu2clip);
    e.channels_per_kernel = 64;
    e.num_groups = 8;
    e
}

pub fn head(variant: HeadVariant, num_classes: usize) -> HeadSpec {
    HeadSpec {
        variant,
        hidden: vec![64],
        num_classes,
    }
}

/// CNN-GRU encoder with a single-layer GRU head of width 64.
pub fn default_model(num_classes: usize) -> ModelSpec {
    ModelSpec {
        input: InputSpec::default(),
        encoder: default_encoder(),
        head: head(HeadVariant::Gru, num_classes),
    }
}

/// A small CNN-GRU that trains in seconds on one core: one conv bank of 4
/// channels per dilation, 5-step average pooling, GRU of width 32 and a GRU
/// head of width 16.
pub fn toy_model(num_classes: usize) -> ModelSpec {
    let mut encoder = default_encoder();
    encoder.conv_layers = 1;
    encoder.channels_per_kernel = 4;
    encoder.pool_size = Some(5);
    ModelSpec {
        input: InputSpec::default(),
        encoder,
        head: HeadSpec {
            variant: HeadVariant::Gru,
            hidden: vec![16],
            num_classes,
        },
    }
}

/// Miniature encoder of each variant for gradient checks.
pub fn tiny_encoder(variant: EncoderVariant) -> EncoderSpec {
    let mut e = EncoderSpec::new(variant);
    e.embedding_dim = 4;
    e.channels_per_kernel = 2;
    e.dilations = vec![1, 2];
    e.conv_layers = 2;
    e.hidden = vec![5];
    e.num_groups = 2;
    if variant == EncoderVariant::Imu2clip {
        e.dilations = vec![2];
        e.channels_per_kernel = 4;
    }
    e
}

/// Miniature hierarchical model (2 s windows of 0.5 s at 10 Hz).
pub fn tiny_model(variant: EncoderVariant, head: HeadVariant, num_classes: usize) -> ModelSpec {
    ModelSpec {
        input: InputSpec {
            rate_hz: 10.0,
            ll_window_s: 0.5,
            hl_window_s: 2.0,
        },
        encoder: tiny_encoder(variant),
        head: HeadSpec {
            variant: head,
            hidden: if head == HeadVariant::Mlp {
                vec![6]
            } else {
                vec![5, 3]
            },
            num_classes,
        },
    }
}

pub fn probe(num_classes: usize) -> ProbeSpec {
    ProbeSpec::new(32, num_classes)
}
