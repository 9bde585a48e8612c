//! Dataset manifests, CSV ingestion, label vocabularies, per-class
//! subsampling and the synthetic IMU generator.

pub mod oracle;
pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{resample_linear, window, ImuRecording, WindowedSample, CHANNELS};

pub const HL_CLASSES: [&str; 9] = [
    "soccer",
    "basketball",
    "dance",
    "rock climbing",
    "body stretch",
    "housekeeping",
    "cooking",
    "bike repair",
    "music",
];

pub const LL_CLASSES: [&str; 3] = ["stationary", "walking", "running"];

pub const CSV_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "gx", "gy", "gz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

impl Level {
    pub fn default_classes(self) -> Vec<String> {
        let names: &[&str] = match self {
            Level::High => &HL_CLASSES,
            Level::Low => &LL_CLASSES,
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Window length and stride in seconds.
    pub fn default_window(self) -> (f64, f64) {
        match self {
            Level::High => (30.0, 10.0),
            Level::Low => (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingEntry {
    pub participant: String,
    /// CSV path, relative to the manifest's directory.
    pub file: PathBuf,
    /// Label sidecar; defaults to the CSV path with `.label` appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_file: Option<PathBuf>,
}

impl RecordingEntry {
    pub fn label_path(&self) -> PathBuf {
        self.label_file.clone().unwrap_or_else(|| {
            let mut s = self.file.clone().into_os_string();
            s.push(".label");
            PathBuf::from(s)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub level: Level,
    /// Rate every recording is resampled to before windowing.
    pub rate_hz: f64,
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride_s: Option<f64>,
    pub recordings: Vec<RecordingEntry>,
}

impl DatasetManifest {
    pub fn new(level: Level, rate_hz: f64) -> Self {
        DatasetManifest {
            level,
            rate_hz,
            classes: level.default_classes(),
            window_s: None,
            stride_s: None,
            recordings: Vec::new(),
        }
    }

    /// Declared classes, or the level's default vocabulary.
    pub fn class_names(&self) -> Vec<String> {
        if self.classes.is_empty() {
            self.level.default_classes()
        } else {
            self.classes.clone()
        }
    }

    pub fn window(&self) -> (f64, f64) {
        let (w, s) = self.level.default_window();
        (self.window_s.unwrap_or(w), self.stride_s.unwrap_or(s))
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.class_names();
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::InvalidConfig(format!("duplicate class name {n:?}")));
            }
        }
        if names.len() < 2 {
            return Err(Error::InvalidConfig(
                "at least two classes are required".into(),
            ));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rate_hz must be positive, got {}",
                self.rate_hz
            )));
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        let names = self.class_names();
        names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
                vocabulary: names.join(", "),
            })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Reads one `t, ax, ay, az, gx, gy, gz` CSV file.
pub fn read_csv(path: &Path, participant: &str) -> Result<ImuRecording> {
    let shown = path.display().to_string();
    let perr = |line: u64, column: &str, message: String| Error::ParseError {
        path: shown.clone(),
        line,
        column: column.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| perr(0, "", e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| perr(1, "", e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(perr(
            1,
            "",
            format!(
                "expected header {}, found {}",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut t = Vec::new();
    let mut ch: [Vec<f64>; CHANNELS] = Default::default();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            perr(line, "", e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (i, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| perr(line, CSV_HEADER[i], format!("{cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(perr(
                    line,
                    CSV_HEADER[i],
                    format!("non-finite value {cell:?}"),
                ));
            }
            if i == 0 {
                t.push(v);
            } else {
                ch[i - 1].push(v);
            }
        }
    }
    ImuRecording::new(participant.to_string(), t, ch, None)
}

/// Writes a recording in the ingest CSV format; reading it back yields
/// identical values.
pub fn write_csv(rec: &ImuRecording, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    for i in 0..rec.len() {
        let mut row = vec![rec.timestamps()[i].to_string()];
        row.extend((0..CHANNELS).map(|c| rec.channel(c)[i].to_string()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Loads every recording in the manifest and checks its label against the
/// vocabulary.
pub fn ingest(manifest: &DatasetManifest, base_dir: &Path) -> Result<Vec<ImuRecording>> {
    manifest.validate()?;
    let mut out = Vec::with_capacity(manifest.recordings.len());
    for entry in &manifest.recordings {
        let mut rec = read_csv(&base_dir.join(&entry.file), &entry.participant)?;
        let label_path = base_dir.join(entry.label_path());
        let label = std::fs::read_to_string(&label_path)?.trim().to_string();
        manifest.label_index(&label)?;
        rec.set_label(Some(label));
        out.push(rec);
    }
    Ok(out)
}

/// Writes recordings as CSV plus label sidecars under `dir` and returns
/// the manifest describing them.
pub fn export(
    recordings: &[ImuRecording],
    level: Level,
    rate_hz: f64,
    classes: Vec<String>,
    dir: &Path,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = DatasetManifest {
        classes,
        ..DatasetManifest::new(level, rate_hz)
    };
    let mut per_participant: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in recordings {
        let k = per_participant.entry(rec.participant_id()).or_default();
        let file = PathBuf::from(format!("{}_{:03}.csv", rec.participant_id(), k));
        *k += 1;
        write_csv(rec, &dir.join(&file))?;
        let entry = RecordingEntry {
            participant: rec.participant_id().to_string(),
            file,
            label_file: None,
        };
        let label = rec.label().unwrap_or_default();
        manifest.label_index(label)?;
        std::fs::write(dir.join(entry.label_path()), format!("{label}\n"))?;
        manifest.recordings.push(entry);
    }
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Resamples each labeled recording to `rate_hz` and cuts it into windows.
pub fn windows_from(
    recordings: &[ImuRecording],
    class_names: &[String],
    rate_hz: f64,
    window_s: f64,
    stride_s: f64,
) -> Result<Vec<WindowedSample>> {
    let mut out = Vec::new();
    for rec in recordings {
        let label = rec.label().unwrap_or_default();
        let idx =
            class_names
                .iter()
                .position(|n| n == label)
                .ok_or_else(|| Error::UnknownLabel {
                    label: label.to_string(),
                    vocabulary: class_names.join(", "),
                })?;
        let resampled = resample_linear(rec, rate_hz)?;
        out.extend(window(&resampled, idx, window_s, stride_s, rate_hz)?);
    }
    Ok(out)
}

/// Windows a manifest's recordings with its own rate and window settings.
pub fn manifest_windows(
    manifest: &DatasetManifest,
    recordings: &[ImuRecording],
) -> Result<Vec<WindowedSample>> {
    let (w, s) = manifest.window();
    windows_from(recordings, &manifest.class_names(), manifest.rate_hz, w, s)
}

/// At most `n_per_class` samples of each class, drawn uniformly without
/// replacement; smaller classes are kept whole. Original order is kept.
pub fn subsample_per_class(
    samples: &[WindowedSample],
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<WindowedSample>> {
    if n_per_class == 0 {
        return Err(Error::InvalidConfig(
            "samples per class must be at least 1".into(),
        ));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for idx in by_class.values() {
        if idx.len() <= n_per_class {
            keep.extend_from_slice(idx);
        } else {
            keep.extend(
                sample(&mut rng, idx.len(), n_per_class)
                    .into_iter()
                    .map(|j| idx[j]),
            );
        }
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
}

#[cfg(test)]
mod tests;
