//! Synthetic head-worn IMU streams built from three low-level motion
//! motifs, and high-level classes defined as schedules over them.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ImuRecording, CHANNELS};

use super::LL_CLASSES;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifParams {
    /// Stride frequency in Hz; the vertical channel also carries its
    /// second harmonic.
    pub freq_hz: f64,
    /// Vertical acceleration amplitude in m/s².
    pub amplitude: f64,
    pub noise_std: f64,
    /// Accelerometer offset in m/s² before participant tilt.
    pub gravity: [f64; 3],
}

impl MotifParams {
    fn new(freq_hz: f64, amplitude: f64, noise_std: f64) -> Self {
        MotifParams {
            freq_hz,
            amplitude,
            noise_std,
            gravity: [0.0, 0.0, GRAVITY],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub motif: usize,
    pub min_s: f64,
    pub max_s: f64,
}

/// A high-level class: segments repeated in order, each lasting a uniform
/// random duration in its range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureClass {
    pub name: String,
    pub schedule: Vec<Segment>,
}

impl MixtureClass {
    fn new(name: &str, schedule: &[(usize, f64, f64)]) -> Self {
        MixtureClass {
            name: name.into(),
            schedule: schedule
                .iter()
                .map(|&(motif, min_s, max_s)| Segment {
                    motif,
                    min_s,
                    max_s,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Native sample rate of the generated streams.
    pub rate_hz: f64,
    pub motif_names: Vec<String>,
    pub motifs: Vec<MotifParams>,
    pub hl_classes: Vec<MixtureClass>,
    pub participants: usize,
    pub recordings_per_participant: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Relative per-participant spread of amplitude.
    pub amplitude_jitter: f64,
    /// Relative per-participant spread of frequency.
    pub freq_jitter: f64,
    /// Largest per-participant head tilt in degrees.
    pub tilt_deg: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            rate_hz: 100.0,
            motif_names: LL_CLASSES.iter().map(|s| s.to_string()).collect(),
            motifs: vec![
                MotifParams::new(0.0, 0.0, 0.05),
                MotifParams::new(2.0, 1.5, 0.1),
                MotifParams::new(3.0, 4.5, 0.1),
            ],
            hl_classes: vec![
                MixtureClass::new("desk", &[(0, 6.0, 12.0), (1, 1.0, 3.0)]),
                MixtureClass::new("commute", &[(1, 6.0, 12.0), (0, 1.0, 3.0)]),
                MixtureClass::new("sport", &[(2, 4.0, 8.0), (1, 2.0, 4.0)]),
            ],
            participants: 20,
            recordings_per_participant: 1,
            duration_s: 270.0,
            seed: 0,
            amplitude_jitter: 0.2,
            freq_jitter: 0.07,
            tilt_deg: 10.0,
        }
    }
}

impl SynthSpec {
    pub fn hl_class_names(&self) -> Vec<String> {
        self.hl_classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return bad(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        if self.motifs.len() != self.motif_names.len() || self.motifs.is_empty() {
            return bad("motif names and parameters must pair up".into());
        }
        let top = 1.0 + self.freq_jitter;
        for (name, m) in self.motif_names.iter().zip(&self.motifs) {
            // The harmonic at twice the stride frequency must stay below
            // Nyquist too.
            if !(m.freq_hz >= 0.0 && 2.0 * m.freq_hz * top < self.rate_hz / 2.0) {
                return bad(format!(
                    "motif {name}: {} Hz and its harmonic must stay below {} Hz",
                    m.freq_hz,
                    self.rate_hz / 2.0
                ));
            }
            if !(m.amplitude >= 0.0 && m.noise_std >= 0.0)
                || !m.amplitude.is_finite()
                || !m.noise_std.is_finite()
            {
                return bad(format!(
                    "motif {name}: amplitude and noise must be non-negative"
                ));
            }
            if m.gravity.iter().any(|g| !g.is_finite()) {
                return bad(format!("motif {name}: gravity offset must be finite"));
            }
        }
        for c in &self.hl_classes {
            if c.schedule.is_empty() {
                return bad(format!("class {} has an empty schedule", c.name));
            }
            for s in &c.schedule {
                if s.motif >= self.motifs.len() || !(s.min_s > 0.0 && s.min_s <= s.max_s) {
                    return bad(format!("class {} has an invalid segment", c.name));
                }
            }
        }
        if self.participants == 0 || self.recordings_per_participant == 0 {
            return bad("participants and recordings per participant must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            return bad("duration_s must be positive".into());
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter)
            || !(0.0..1.0).contains(&self.freq_jitter)
            || !(0.0..=45.0).contains(&self.tilt_deg)
        {
            return bad("jitter must lie in [0, 1) and tilt in [0, 45] degrees".into());
        }
        Ok(())
    }
}

/// Fixed per-participant traits.
#[derive(Debug, Clone)]
struct Traits {
    amp: f64,
    freq: f64,
    /// Rotation applied to gravity, row-major.
    rot: [[f64; 3]; 3],
    phase: [f64; CHANNELS],
}

impl Traits {
    fn draw(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let spread = |rng: &mut ChaCha8Rng, j: f64| {
            if j == 0.0 {
                1.0
            } else {
                rng.random_range(1.0 - j..=1.0 + j)
            }
        };
        let amp = spread(rng, spec.amplitude_jitter);
        let freq = spread(rng, spec.freq_jitter);
        let lim = spec.tilt_deg.to_radians();
        let (a, b) = if lim == 0.0 {
            (0.0, 0.0)
        } else {
            (rng.random_range(-lim..=lim), rng.random_range(-lim..=lim))
        };
        let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
        // Rotation about x by a, then about y by b.
        let rot = [
            [cb, sa * sb, ca * sb],
            [0.0, ca, -sa],
            [-sb, sa * cb, ca * cb],
        ];
        let mut phase = [0.0; CHANNELS];
        phase
            .iter_mut()
            .for_each(|p| *p = rng.random_range(0.0..TAU));
        Traits {
            amp,
            freq,
            rot,
            phase,
        }
    }

    fn gravity(&self, g: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (r, o) in self.rot.iter().zip(out.iter_mut()) {
            *o = r[0] * g[0] + r[1] * g[1] + r[2] * g[2];
        }
        out
    }
}

/// Channel gains relative to the vertical acceleration amplitude.
const GAIN: [f64; CHANNELS] = [0.3, 0.2, 1.0, 0.1, 0.3, 0.1];

fn render(
    spec: &SynthSpec,
    traits: &Traits,
    plan: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> [Vec<f64>; CHANNELS] {
    let total: usize = plan.iter().map(|p| p.1).sum();
    let mut ch: [Vec<f64>; CHANNELS] = Default::default();
    ch.iter_mut().for_each(|c| c.reserve(total));
    let mut phase = 0.0;
    let dt = 1.0 / spec.rate_hz;
    for &(motif, len) in plan {
        let m = &spec.motifs[motif];
        let amp = m.amplitude * traits.amp;
        let step = TAU * m.freq_hz * traits.freq * dt;
        let g = traits.gravity(&m.gravity);
        let noise = Normal::new(0.0, m.noise_std).expect("noise std validated as finite");
        for _ in 0..len {
            for (c, out) in ch.iter_mut().enumerate() {
                let p = phase + traits.phase[c];
                let mut v = GAIN[c] * amp * p.sin();
                match c {
                    2 => v += 0.25 * amp * (2.0 * phase).sin(),
                    5 => v = GAIN[c] * amp * (0.5 * phase + traits.phase[c]).sin(),
                    _ => {}
                }
                if c < 3 {
                    v += g[c];
                }
                out.push(v + noise.sample(rng));
            }
            phase = (phase + step) % (TAU * 2.0);
        }
    }
    ch
}

fn timestamps(n: usize, rate: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 / rate).collect()
}

fn participant_id(p: usize) -> String {
    format!("s{p:02}")
}

/// Per-participant traits and recording seeds, drawn in a fixed order.
fn plan_participants(spec: &SynthSpec, per_participant: usize) -> Vec<(Traits, Vec<u64>)> {
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.participants)
        .map(|_| {
            let traits = Traits::draw(spec, &mut master);
            let seeds = (0..per_participant).map(|_| master.random()).collect();
            (traits, seeds)
        })
        .collect()
}

/// One recording per participant, repetition and motif, each holding a
/// single motif for the whole duration.
pub fn generate_low_level(spec: &SynthSpec) -> Result<Vec<ImuRecording>> {
    spec.validate()?;
    let n = (spec.duration_s * spec.rate_hz).round() as usize;
    let per = spec.recordings_per_participant * spec.motifs.len();
    let mut out = Vec::new();
    for (p, (traits, seeds)) in plan_participants(spec, per).iter().enumerate() {
        for (r, seed) in seeds.iter().enumerate() {
            let motif = r % spec.motifs.len();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let ch = render(spec, traits, &[(motif, n)], &mut rng);
            out.push(ImuRecording::new(
                participant_id(p),
                timestamps(n, spec.rate_hz),
                ch,
                Some(spec.motif_names[motif].clone()),
            )?);
        }
    }
    Ok(out)
}

/// One recording per participant, repetition and high-level class, each
/// cycling through its class's motif schedule from a random point.
pub fn generate_high_level(spec: &SynthSpec) -> Result<Vec<ImuRecording>> {
    spec.validate()?;
    if spec.hl_classes.is_empty() {
        return Err(Error::InvalidConfig("no high-level classes defined".into()));
    }
    let n = (spec.duration_s * spec.rate_hz).round() as usize;
    let per = spec.recordings_per_participant * spec.hl_classes.len();
    let mut out = Vec::new();
    for (p, (traits, seeds)) in plan_participants(spec, per).iter().enumerate() {
        for (r, seed) in seeds.iter().enumerate() {
            let class = &spec.hl_classes[r % spec.hl_classes.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut plan = Vec::new();
            let mut filled = 0;
            let mut k = rng.random_range(0..class.schedule.len());
            while filled < n {
                let s = &class.schedule[k % class.schedule.len()];
                let secs = if s.min_s == s.max_s {
                    s.min_s
                } else {
                    rng.random_range(s.min_s..=s.max_s)
                };
                let len = ((secs * spec.rate_hz).round() as usize).clamp(1, n - filled);
                plan.push((s.motif, len));
                filled += len;
                k += 1;
            }
            let ch = render(spec, traits, &plan, &mut rng);
            out.push(ImuRecording::new(
                participant_id(p),
                timestamps(n, spec.rate_hz),
                ch,
                Some(class.name.clone()),
            )?);
        }
    }
    Ok(out)
}
