//! A fixed spectral classifier for the synthetic motifs. It never sees a
//! neural network and bounds what trained models should reach.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal::{samples_for, WindowedSample};
use crate::tensor::Tensor;

const AZ: usize = 2;
const GY: usize = 4;

/// Power spectrum of the mean-removed signal, bins `0..=len/2`.
pub fn power_spectrum(planner: &mut FftPlanner<f64>, x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    planner.plan_fft_forward(x.len()).process(&mut buf);
    buf[..=x.len() / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Frequency in Hz of the strongest non-DC bin.
pub fn dominant_frequency(x: &[f64], rate_hz: f64) -> f64 {
    let p = power_spectrum(&mut FftPlanner::new(), x);
    let k = (1..p.len())
        .max_by(|&a, &b| p[a].total_cmp(&p[b]))
        .unwrap_or(0);
    k as f64 * rate_hz / x.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOracle {
    pub rate_hz: f64,
    pub ll_window_s: f64,
    /// Vertical acceleration RMS below which a window is stationary.
    pub rms_threshold: f64,
    /// Dominant frequencies at or above this are running.
    pub split_hz: f64,
}

impl SpectralOracle {
    pub fn new(rate_hz: f64) -> Self {
        SpectralOracle {
            rate_hz,
            ll_window_s: 1.0,
            rms_threshold: 0.4,
            split_hz: 2.5,
        }
    }

    fn motif_with(
        &self,
        planner: &mut FftPlanner<f64>,
        data: &Tensor,
        start: usize,
        len: usize,
    ) -> usize {
        let az = &data.row(AZ)[start..start + len];
        let gy = &data.row(GY)[start..start + len];
        let mean = az.iter().sum::<f64>() / len as f64;
        let rms = (az.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
        if rms < self.rms_threshold {
            return 0;
        }
        let pa = power_spectrum(planner, az);
        let pg = power_spectrum(planner, gy);
        let k = (1..pa.len())
            .max_by(|&a, &b| (pa[a] + pg[a]).total_cmp(&(pa[b] + pg[b])))
            .unwrap_or(0);
        if (k as f64 * self.rate_hz / len as f64) < self.split_hz {
            1
        } else {
            2
        }
    }

    /// Stationary, walking or running (0, 1, 2) for one `[6, T]` window.
    pub fn classify_motif(&self, data: &Tensor) -> usize {
        self.motif_with(&mut FftPlanner::new(), data, 0, data.cols())
    }

    /// Share of each motif over the non-overlapping low-level windows of a
    /// high-level window.
    pub fn motif_histogram(&self, data: &Tensor) -> Result<[f64; 3]> {
        let len = samples_for(self.ll_window_s, self.rate_hz)?;
        let n = data.cols() / len;
        if n == 0 {
            return Err(Error::InvalidWindow(format!(
                "window of {} samples is shorter than one {len}-sample sub-window",
                data.cols()
            )));
        }
        let mut planner = FftPlanner::new();
        let mut h = [0.0; 3];
        for j in 0..n {
            h[self.motif_with(&mut planner, data, j * len, len)] += 1.0 / n as f64;
        }
        Ok(h)
    }
}

/// Nearest-centroid classifier over motif histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOracle {
    pub oracle: SpectralOracle,
    pub centroids: Vec<[f64; 3]>,
}

impl MixtureOracle {
    pub fn fit(oracle: SpectralOracle, train: &[WindowedSample], k: usize) -> Result<Self> {
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for s in train {
            let h = oracle.motif_histogram(&s.data)?;
            let slot = sums.get_mut(s.label).ok_or_else(|| {
                Error::ShapeMismatch(format!("label {} out of range for {k} classes", s.label))
            })?;
            slot.iter_mut().zip(h).for_each(|(a, b)| *a += b);
            counts[s.label] += 1;
        }
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateData(format!(
                "class {c} has no training windows"
            )));
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| s.map(|v| v / c as f64))
            .collect();
        Ok(MixtureOracle { oracle, centroids })
    }

    pub fn predict(&self, data: &Tensor) -> Result<usize> {
        let h = self.oracle.motif_histogram(data)?;
        let dist = |c: &[f64; 3]| c.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        Ok((0..self.centroids.len())
            .min_by(|&a, &b| dist(&self.centroids[a]).total_cmp(&dist(&self.centroids[b])))
            .unwrap_or(0))
    }
}
