//! Deterministic preprocessing: resampling, two-level windowing,
//! normalization and the hand-picked per-window features.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 6;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["ax", "ay", "az", "gx", "gy", "gz"];
pub const FEATURES_PER_CHANNEL: usize = 5;
pub const FEATURE_LEN: usize = CHANNELS * FEATURES_PER_CHANNEL;
/// Floor applied to fitted standard deviations.
pub const STD_EPSILON: f64 = 1e-8;

/// One participant's continuous accelerometer (m/s²) and gyroscope (rad/s)
/// stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuRecording {
    participant_id: String,
    timestamps: Vec<f64>,
    channels: [Vec<f64>; CHANNELS],
    label: Option<String>,
}

impl ImuRecording {
    /// Validates lengths, finiteness and strictly increasing timestamps.
    pub fn new(
        participant_id: impl Into<String>,
        timestamps: Vec<f64>,
        channels: [Vec<f64>; CHANNELS],
        label: Option<String>,
    ) -> Result<Self> {
        let n = timestamps.len();
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != n {
                return Err(shape_err(format!(
                    "channel {} has {} samples but there are {n} timestamps",
                    CHANNEL_NAMES[c],
                    ch.len()
                )));
            }
            if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    channel: c,
                    index: i,
                });
            }
        }
        if let Some(i) = timestamps.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonMonotonicTimestamps { index: i });
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicTimestamps { index: i + 1 });
        }
        Ok(ImuRecording {
            participant_id: participant_id.into(),
            timestamps,
            channels,
            label,
        })
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[Vec<f64>; CHANNELS] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn set_label(&mut self, label: Option<String>) {
        self.label = label;
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Time between first and last sample.
    pub fn span(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// A fixed-duration `[6, T]` slice of a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub data: Tensor,
    pub label: usize,
    pub participant_id: String,
    pub start_time: f64,
}

/// Mean, max, min, variance and peak-to-peak per channel, channel-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_LEN]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; FEATURE_LEN] {
        &self.0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.0.to_vec())
    }
}

/// `seconds * rate` as a whole sample count, if it is one.
pub fn samples_for(seconds: f64, rate_hz: f64) -> Result<usize> {
    let x = seconds * rate_hz;
    let r = x.round();
    if !(x.is_finite() && r >= 1.0 && (x - r).abs() <= 1e-9 * r.max(1.0)) {
        return Err(Error::InvalidWindow(format!(
            "{seconds} s at {rate_hz} Hz is not a positive whole number of samples"
        )));
    }
    Ok(r as usize)
}

/// Linearly interpolates every channel onto a uniform grid at `target_hz`
/// anchored at the first timestamp.
pub fn resample_linear(rec: &ImuRecording, target_hz: f64) -> Result<ImuRecording> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    let ts = &rec.timestamps;
    if ts.len() < 2 {
        return Err(Error::EmptyRecording);
    }
    if let Some(i) = ts.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotonicTimestamps { index: i + 1 });
    }
    let t0 = ts[0];
    let count = (rec.span() * target_hz + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..count).map(|i| t0 + i as f64 / target_hz).collect();

    // Bracketing source index and interpolation weight per grid point.
    let mut brackets = Vec::with_capacity(count);
    let mut j = 0;
    for &t in &grid {
        while j + 2 < ts.len() && ts[j + 1] <= t {
            j += 1;
        }
        let frac = ((t - ts[j]) / (ts[j + 1] - ts[j])).clamp(0.0, 1.0);
        brackets.push((j, frac));
    }
    let channels = std::array::from_fn(|c| {
        let src = &rec.channels[c];
        brackets
            .iter()
            .map(|&(j, f)| {
                if f == 0.0 {
                    src[j]
                } else if f == 1.0 {
                    src[j + 1]
                } else {
                    src[j] + (src[j + 1] - src[j]) * f
                }
            })
            .collect()
    });
    Ok(ImuRecording {
        participant_id: rec.participant_id.clone(),
        timestamps: grid,
        channels,
        label: rec.label.clone(),
    })
}

/// Number of windows a sliding enumeration produces over `len` samples.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window || stride == 0 {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Slides a `window_s` window with `stride_s` stride over a recording that
/// is already sampled at `rate_hz`.
pub fn window(
    rec: &ImuRecording,
    label: usize,
    window_s: f64,
    stride_s: f64,
    rate_hz: f64,
) -> Result<Vec<WindowedSample>> {
    let w = samples_for(window_s, rate_hz)?;
    let s = samples_for(stride_s, rate_hz)?;
    let count = window_count(rec.len(), w, s);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * s;
        let mut data = Vec::with_capacity(CHANNELS * w);
        for ch in &rec.channels {
            data.extend_from_slice(&ch[start..start + w]);
        }
        out.push(WindowedSample {
            data: Tensor::from_vec(&[CHANNELS, w], data)?,
            label,
            participant_id: rec.participant_id.clone(),
            start_time: rec.timestamps[start],
        });
    }
    Ok(out)
}

/// Partitions a high-level window into contiguous, non-overlapping
/// low-level windows in temporal order.
pub fn split_low_level(
    hl: &WindowedSample,
    ll_window_s: f64,
    rate_hz: f64,
) -> Result<Vec<WindowedSample>> {
    let sub = samples_for(ll_window_s, rate_hz)?;
    let len = hl.data.cols();
    if len % sub != 0 {
        return Err(Error::NonDivisibleWindow { window: len, sub });
    }
    (0..len / sub)
        .map(|i| {
            Ok(WindowedSample {
                data: hl.data.slice_cols(i * sub, sub)?,
                label: hl.label,
                participant_id: hl.participant_id.clone(),
                start_time: hl.start_time + (i * sub) as f64 / rate_hz,
            })
        })
        .collect()
}

/// Per-channel [mean, max, min, population variance, peak-to-peak].
pub fn extract_features(data: &Tensor) -> Result<FeatureVector> {
    if data.rank() != 2 || data.rows() != CHANNELS || data.cols() == 0 {
        return Err(shape_err(format!(
            "features need a non-empty [{CHANNELS}, T] window, got {:?}",
            data.shape()
        )));
    }
    let mut out = [0.0; FEATURE_LEN];
    for c in 0..CHANNELS {
        let row = data.row(c);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        out[c * FEATURES_PER_CHANNEL..(c + 1) * FEATURES_PER_CHANNEL].copy_from_slice(&[
            mean,
            max,
            min,
            var,
            max - min,
        ]);
    }
    Ok(FeatureVector(out))
}

/// Global per-channel (or per-feature) standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits over every row of rank-2 inputs (all time steps of all windows
    /// pooled) or every element of rank-1 inputs.
    pub fn fit<'a, I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Tensor>,
    {
        let samples: Vec<&Tensor> = samples.into_iter().collect();
        let first = samples
            .first()
            .ok_or_else(|| Error::DegenerateData("no samples to fit normalization on".into()))?;
        let dim = stat_dim(first);
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for s in &samples {
            if stat_dim(s) != dim || s.rank() != first.rank() {
                return Err(shape_err(format!(
                    "normalization inputs disagree: {:?} vs {:?}",
                    first.shape(),
                    s.shape()
                )));
            }
            for (d, acc) in sum.iter_mut().enumerate() {
                *acc += stat_row(s, d).iter().sum::<f64>();
            }
            count += s.len() / dim;
        }
        if count == 0 {
            return Err(Error::DegenerateData(
                "normalization inputs are empty".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; dim];
        for s in &samples {
            for (d, acc) in sq.iter_mut().enumerate() {
                let m = mean[d];
                *acc += stat_row(s, d)
                    .iter()
                    .map(|v| (v - m) * (v - m))
                    .sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .enumerate()
            .map(|(d, v)| {
                let sd = (v / count as f64).sqrt();
                if sd < STD_EPSILON {
                    log::warn!(
                        "channel {d} is degenerate (std {sd:e}); flooring to {STD_EPSILON:e}"
                    );
                    STD_EPSILON
                } else {
                    sd
                }
            })
            .collect();
        Ok(NormStats { mean, std })
    }

    /// Indices whose deviation was floored during fitting.
    pub fn degenerate(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&d| self.std[d] <= STD_EPSILON)
            .collect()
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        self.apply_in_place(&mut y)?;
        Ok(y)
    }

    pub fn apply_in_place(&self, x: &mut Tensor) -> Result<()> {
        if stat_dim(x) != self.dim() {
            return Err(shape_err(format!(
                "stats cover {} channels but input has shape {:?}",
                self.dim(),
                x.shape()
            )));
        }
        match x.rank() {
            1 => {
                for (d, v) in x.data_mut().iter_mut().enumerate() {
                    *v = (*v - self.mean[d]) / self.std[d];
                }
            }
            _ => {
                for d in 0..self.dim() {
                    let (m, s) = (self.mean[d], self.std[d]);
                    x.row_mut(d).iter_mut().for_each(|v| *v = (*v - m) / s);
                }
            }
        }
        Ok(())
    }
}

fn stat_dim(t: &Tensor) -> usize {
    if t.rank() == 1 {
        t.len()
    } else {
        t.rows()
    }
}

fn stat_row(t: &Tensor, d: usize) -> &[f64] {
    if t.rank() == 1 {
        &t.data()[d..d + 1]
    } else {
        t.row(d)
    }
}
