//! End-to-end runs from labeled recordings: window, subsample, split
//! by participant, train, score. Sweeps repeat a run while varying one
//! setting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{subsample_per_class, windows_from};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::models::{zoo, HierarchicalModel, ModelSpec};
use crate::signal::{ImuRecording, WindowedSample};
use crate::train::{
    stratified_participant_split, train_hierarchical, History, SplitPlan, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Cap on high-level windows per class; `None` keeps all.
    pub samples_per_class: Option<usize>,
    pub test_fraction: f64,
    pub hl_stride_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: zoo::toy_model(3),
            train: TrainConfig::default(),
            samples_per_class: None,
            test_fraction: 0.2,
            hl_stride_s: 10.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(self.hl_stride_s > 0.0) {
            return Err(Error::InvalidConfig("hl_stride_s must be positive".into()));
        }
        if self.samples_per_class == Some(0) {
            return Err(Error::InvalidConfig(
                "samples_per_class must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Windows, subsamples and splits recordings as `config` describes.
pub fn prepare_split(
    recordings: &[ImuRecording],
    class_names: &[String],
    config: &ExperimentConfig,
) -> Result<(Vec<WindowedSample>, Vec<WindowedSample>, SplitPlan)> {
    config.validate()?;
    let input = &config.model.input;
    let mut windows = windows_from(
        recordings,
        class_names,
        input.rate_hz,
        input.hl_window_s,
        config.hl_stride_s,
    )?;
    if windows.is_empty() {
        return Err(Error::DegenerateData(format!(
            "no recording spans a {} s window",
            input.hl_window_s
        )));
    }
    if let Some(n) = config.samples_per_class {
        windows = subsample_per_class(&windows, n, config.train.seed)?;
    }
    let plan = stratified_participant_split(
        windows.iter().map(|s| (s.participant_id.as_str(), s.label)),
        config.test_fraction,
        config.train.seed,
    )?;
    let (test, train) = windows
        .into_iter()
        .partition(|s| plan.is_test(&s.participant_id));
    Ok((train, test, plan))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: HierarchicalModel,
    pub history: History,
    pub report: EvalReport,
    pub split: SplitPlan,
}

/// One full train and test-set evaluation.
pub fn run(
    recordings: &[ImuRecording],
    class_names: &[String],
    config: &ExperimentConfig,
) -> Result<RunOutcome> {
    let (train, test, split) = prepare_split(recordings, class_names, config)?;
    let mut model = HierarchicalModel::new(
        config.model.clone(),
        class_names.to_vec(),
        config.train.seed,
    )?;
    let history = train_hierarchical(&mut model, &train, &test, &config.train)?;
    let report = history.final_report.clone().ok_or(Error::EmptyEvaluation)?;
    Ok(RunOutcome {
        model,
        history,
        report,
        split,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SamplesPerClass,
    RateHz,
    HlWindowS,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SamplesPerClass => "samples_per_class",
            SweepAxis::RateHz => "rate_hz",
            SweepAxis::HlWindowS => "hl_window_s",
        }
    }

    /// `all` means every sample on the samples axis.
    pub fn parse_value(self, text: &str) -> Result<f64> {
        let text = text.trim();
        if self == SweepAxis::SamplesPerClass && text == "all" {
            return Ok(f64::INFINITY);
        }
        let v: f64 = text.parse().map_err(|_| {
            Error::InvalidConfig(format!("{}: {text:?} is not a number", self.name()))
        })?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "{}: {v} must be positive",
                self.name()
            )));
        }
        if self == SweepAxis::SamplesPerClass && v.fract() != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{}: {v} is not a whole number",
                self.name()
            )));
        }
        Ok(v)
    }

    /// `base` with only this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = base.clone();
        match self {
            SweepAxis::SamplesPerClass => {
                c.samples_per_class = value.is_finite().then_some(value as usize);
            }
            SweepAxis::RateHz => c.model.input.rate_hz = value,
            SweepAxis::HlWindowS => c.model.input.hl_window_s = value,
        }
        c
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "samples_per_class" => Ok(SweepAxis::SamplesPerClass),
            "rate_hz" => Ok(SweepAxis::RateHz),
            "hl_window_s" => Ok(SweepAxis::HlWindowS),
            _ => Err(Error::InvalidConfig(format!(
                "unknown sweep axis {s:?}; expected samples_per_class, rate_hz or hl_window_s"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub macro_f1: Option<f64>,
    pub micro_acc: Option<f64>,
    pub error: Option<String>,
}

fn sweep_row(
    recordings: &[ImuRecording],
    class_names: &[String],
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
) -> SweepRow {
    let outcome = run(recordings, class_names, &axis.apply(base, value));
    match outcome {
        Ok(o) => SweepRow {
            axis,
            value,
            macro_f1: Some(o.report.macro_f1),
            micro_acc: Some(o.report.micro_accuracy),
            error: None,
        },
        Err(e) => {
            log::warn!("{axis}={value} failed: {e}");
            SweepRow {
                axis,
                value,
                macro_f1: None,
                micro_acc: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// One run per value with everything else held at `base`, including the
/// seed. A failing value is recorded and the sweep moves on. With
/// `parallel`, values run on separate threads; rows are identical either
/// way.
pub fn sweep(
    recordings: &[ImuRecording],
    class_names: &[String],
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    parallel: bool,
) -> Vec<SweepRow> {
    if !parallel {
        return values
            .iter()
            .map(|&v| sweep_row(recordings, class_names, base, axis, v))
            .collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = values
            .iter()
            .map(|&v| s.spawn(move || sweep_row(recordings, class_names, base, axis, v)))
            .collect();
        handles
            .into_iter()
            .zip(values)
            .map(|(h, &v)| {
                h.join().unwrap_or_else(|_| SweepRow {
                    axis,
                    value: v,
                    macro_f1: None,
                    micro_acc: None,
                    error: Some("worker panicked".into()),
                })
            })
            .collect()
    })
}

fn format_value(v: f64) -> String {
    if v.is_infinite() {
        "all".into()
    } else {
        v.to_string()
    }
}

/// Tidy table: one row per axis value.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("axis,axis_value,macro_f1,micro_acc,error\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let err = if err.contains(',') {
            format!("\"{err}\"")
        } else {
            err
        };
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.axis,
            format_value(r.value),
            opt(r.macro_f1),
            opt(r.micro_acc),
            err
        ));
    }
    s
}
