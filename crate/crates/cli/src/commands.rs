use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hierhar::data::synth::{generate_high_level, generate_low_level, SynthSpec};
use hierhar::data::{self, subsample_per_class, windows_from, DatasetManifest, Level};
use hierhar::eval::{
    one_vs_rest_accuracy, pca_2d, render_confusion, silhouette, ConfusionMatrix, EvalReport,
    RenderMode,
};
use hierhar::experiment::{self, ExperimentConfig, SweepAxis};
use hierhar::models::{
    check_deploy_budget, encoder_footprint, load_model, save_model, save_probe, Footprint,
    HierarchicalModel, ModelFootprint, ModelSpec, ProbeHead, SpecFile,
};
use hierhar::signal::{ImuRecording, WindowedSample};
use hierhar::train::{
    cross_validate_probe, evaluate_hierarchical, evaluate_probe, make_folds,
    stratified_participant_split, train_probe, SplitPlan,
};

use crate::config::{absolute, run_dir, RunConfig};
use crate::error::{CliError, CliResult};

/// Where a command writes.
pub struct Output {
    pub root: PathBuf,
    pub dir: Option<PathBuf>,
}

fn write(dir: &Path, name: &str, text: impl AsRef<[u8]>) -> CliResult<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
}

fn write_json(dir: &Path, name: &str, v: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(hierhar::Error::from)?;
    s.push('\n');
    write(dir, name, s)
}

fn read_text(p: &Path) -> CliResult<String> {
    std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))
}

/// Names the missing file, which the core error cannot.
fn exists(path: &Path) -> CliResult<()> {
    std::fs::metadata(path)
        .map(|_| ())
        .map_err(|e| CliError::io(path, e))
}

fn load_dataset(path: &Path) -> CliResult<(DatasetManifest, Vec<ImuRecording>)> {
    exists(path)?;
    let m = DatasetManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let recs = data::ingest(&m, base)?;
    Ok((m, recs))
}

fn load_model_spec(path: &Path, classes: usize) -> CliResult<ModelSpec> {
    let file = SpecFile::from_toml(&read_text(path)?)?;
    let spec = file.model().ok_or_else(|| {
        CliError::Core(hierhar::Error::SpecParseError {
            key: if file.encoder.is_none() {
                "encoder"
            } else {
                "head"
            }
            .into(),
            message: "a model spec needs both encoder and head sections".into(),
        })
    })?;
    if spec.head.num_classes != classes {
        return Err(hierhar::Error::InvalidConfig(format!(
            "model head has {} classes but the dataset declares {classes}",
            spec.head.num_classes
        ))
        .into());
    }
    Ok(spec)
}

fn check_classes(model: &HierarchicalModel, manifest: &DatasetManifest) -> CliResult<()> {
    if model.class_names() != manifest.class_names().as_slice() {
        return Err(hierhar::Error::InvalidConfig(format!(
            "checkpoint classes [{}] differ from manifest classes [{}]",
            model.class_names().join(", "),
            manifest.class_names().join(", ")
        ))
        .into());
    }
    Ok(())
}

fn hl_stride(cfg: &RunConfig, manifest: &DatasetManifest) -> f64 {
    cfg.hl_stride_s.or(manifest.stride_s).unwrap_or(10.0)
}

/// Low-level windows sized for `model`'s encoder.
fn ll_windows(
    model: &HierarchicalModel,
    manifest: &DatasetManifest,
    recs: &[ImuRecording],
) -> CliResult<Vec<WindowedSample>> {
    let input = model.spec().input;
    let stride = manifest.stride_s.unwrap_or(input.ll_window_s);
    Ok(windows_from(
        recs,
        &manifest.class_names(),
        input.rate_hz,
        input.ll_window_s,
        stride,
    )?)
}

fn write_report(dir: &Path, report: &EvalReport, names: &[String]) -> CliResult<()> {
    write_json(dir, "report.json", report)?;
    write(
        dir,
        "confusion.csv",
        render_confusion(&report.confusion, RenderMode::Counts, Some(names)),
    )
}

fn summary(report: &EvalReport) -> String {
    format!(
        "macro F1 {:.4}, accuracy {:.4}",
        report.macro_f1, report.micro_accuracy
    )
}

pub fn train(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let manifest_path = absolute(RunConfig::require(&cfg.manifest, "manifest")?);
    let model_path = absolute(RunConfig::require(&cfg.model, "model")?);
    let (manifest, recs) = load_dataset(&manifest_path)?;
    let names = manifest.class_names();
    let spec = load_model_spec(&model_path, names.len())?;
    let exp = ExperimentConfig {
        model: spec.clone(),
        train: cfg.train.resolve(),
        samples_per_class: cfg.samples_per_class,
        test_fraction: cfg.test_fraction.unwrap_or(0.2),
        hl_stride_s: hl_stride(&cfg, &manifest),
    };
    exp.validate()?;
    cfg.manifest = Some(manifest_path);
    cfg.model = Some(model_path);
    cfg.test_fraction = Some(exp.test_fraction);
    cfg.hl_stride_s = Some(exp.hl_stride_s);
    cfg.train = crate::config::TrainOverrides::of(&exp.train);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;
    write(&dir, "model.toml", spec.to_toml())?;

    let o = experiment::run(&recs, &names, &exp)?;
    save_model(&o.model, dir.join("model.ckpt"))?;
    o.history.write_csv(&dir.join("history.csv"))?;
    write_report(&dir, &o.report, &names)?;
    write_json(&dir, "split.json", &o.split)?;
    println!("test {}", summary(&o.report));
    println!("{}", dir.display());
    Ok(())
}

pub fn eval(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let ckpt = absolute(RunConfig::require(&cfg.checkpoint, "checkpoint")?);
    let manifest_path = absolute(RunConfig::require(&cfg.manifest, "manifest")?);
    exists(&ckpt)?;
    let model = load_model(&ckpt)?;
    let (manifest, recs) = load_dataset(&manifest_path)?;
    check_classes(&model, &manifest)?;
    let stride = hl_stride(&cfg, &manifest);
    let input = model.spec().input;
    let mut windows = windows_from(
        &recs,
        model.class_names(),
        input.rate_hz,
        input.hl_window_s,
        stride,
    )?;
    if let Some(p) = &cfg.split {
        let p = absolute(p);
        let plan: SplitPlan =
            serde_json::from_str(&read_text(&p)?).map_err(hierhar::Error::from)?;
        windows.retain(|s| plan.is_test(&s.participant_id));
        cfg.split = Some(p);
    }
    cfg.checkpoint = Some(ckpt);
    cfg.manifest = Some(manifest_path);
    cfg.hl_stride_s = Some(stride);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;
    let report = evaluate_hierarchical(&model, &windows)?;
    write_report(&dir, &report, model.class_names())?;
    println!("{} windows, {}", windows.len(), summary(&report));
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct CvSummary<'a> {
    encoder_fingerprint: String,
    mean_macro_f1: f64,
    mean_micro_accuracy: f64,
    folds: &'a [EvalReport],
}

pub fn probe(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let ckpt = cfg.checkpoint.as_ref().ok_or_else(|| {
        CliError::MissingEncoder("probing needs a trained checkpoint (--checkpoint)".into())
    })?;
    let ckpt = absolute(ckpt);
    let manifest_path = absolute(RunConfig::require(&cfg.manifest, "manifest")?);
    exists(&ckpt)?;
    let model = load_model(&ckpt)?;
    let (manifest, recs) = load_dataset(&manifest_path)?;
    let names = manifest.class_names();
    let mut windows = ll_windows(&model, &manifest, &recs)?;
    let train_cfg = cfg.train.resolve();
    train_cfg.validate()?;
    if let Some(n) = cfg.samples_per_class {
        windows = subsample_per_class(&windows, n, train_cfg.seed)?;
    }
    let folds = cfg.folds.unwrap_or(4);
    cfg.checkpoint = Some(ckpt);
    cfg.manifest = Some(manifest_path);
    cfg.folds = Some(folds);
    cfg.train = crate::config::TrainOverrides::of(&train_cfg);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;

    let reports = cross_validate_probe(&model, &windows, &names, folds, &train_cfg)?;
    let mean =
        |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    let cv = CvSummary {
        encoder_fingerprint: model.encoder_fingerprint(),
        mean_macro_f1: mean(|r| r.macro_f1),
        mean_micro_accuracy: mean(|r| r.micro_accuracy),
        folds: &reports,
    };
    write_json(&dir, "cv.json", &cv)?;
    let mut pooled = vec![vec![0u64; names.len()]; names.len()];
    for r in &reports {
        for (i, row) in r.confusion.counts().iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                pooled[i][j] += c;
            }
        }
    }
    let pooled = ConfusionMatrix::from_counts(pooled)?;
    write(
        &dir,
        "confusion.csv",
        render_confusion(&pooled, RenderMode::Counts, Some(&names)),
    )?;

    let mut probe = ProbeHead::for_model(&model, names.clone(), train_cfg.seed)?;
    let history = train_probe(&model, &mut probe, &windows, &[], &train_cfg)?;
    history.write_csv(&dir.join("history.csv"))?;
    save_probe(&probe, dir.join("probe.ckpt"))?;
    write_json(
        &dir,
        "report.json",
        &evaluate_probe(&model, &probe, &windows)?,
    )?;
    for (f, r) in reports.iter().enumerate() {
        println!("fold {f}: {}", summary(r));
    }
    println!("mean macro F1 {:.4}", cv.mean_macro_f1);
    println!("{}", dir.display());
    Ok(())
}

pub fn embed(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let ckpt = absolute(RunConfig::require(&cfg.checkpoint, "checkpoint")?);
    let manifest_path = absolute(RunConfig::require(&cfg.manifest, "manifest")?);
    exists(&ckpt)?;
    let model = load_model(&ckpt)?;
    let (manifest, recs) = load_dataset(&manifest_path)?;
    let names = manifest.class_names();
    let windows = ll_windows(&model, &manifest, &recs)?;
    cfg.checkpoint = Some(ckpt);
    cfg.manifest = Some(manifest_path);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;
    let mut s = String::from("participant,label,start_time");
    for i in 0..model.embedding_dim() {
        write!(s, ",e{i}").unwrap();
    }
    s.push('\n');
    for w in &windows {
        write!(
            s,
            "{},{},{}",
            w.participant_id, names[w.label], w.start_time
        )
        .unwrap();
        for v in model.encode_low_level(&w.data)? {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    write(&dir, "embeddings.csv", s)?;
    println!("{} embeddings", windows.len());
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct PcaSummary {
    points: usize,
    explained_variance: [f64; 2],
    total_variance: f64,
    silhouette: f64,
    one_vs_rest_accuracy: f64,
}

pub fn pca(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let ckpt = absolute(RunConfig::require(&cfg.checkpoint, "checkpoint")?);
    let manifest_path = absolute(RunConfig::require(&cfg.manifest, "manifest")?);
    exists(&ckpt)?;
    let model = load_model(&ckpt)?;
    let (manifest, recs) = load_dataset(&manifest_path)?;
    let names = manifest.class_names();
    let per_class = cfg.per_class.unwrap_or(80);
    let seed = cfg.train.seed.unwrap_or(0);
    let windows = subsample_per_class(&ll_windows(&model, &manifest, &recs)?, per_class, seed)?;
    cfg.checkpoint = Some(ckpt);
    cfg.manifest = Some(manifest_path);
    cfg.per_class = Some(per_class);
    cfg.train.seed = Some(seed);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;

    let emb = windows
        .iter()
        .map(|w| model.encode_low_level(&w.data))
        .collect::<hierhar::Result<Vec<_>>>()?;
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let p = pca_2d(&emb)?;
    let pts: Vec<Vec<f64>> = p.projections.iter().map(|x| x.to_vec()).collect();
    let summary = PcaSummary {
        points: emb.len(),
        explained_variance: p.explained_variance,
        total_variance: p.total_variance(),
        silhouette: silhouette(&pts, &labels)?,
        one_vs_rest_accuracy: one_vs_rest_accuracy(&p.projections, &labels, names.len())?,
    };
    let mut s = String::from("participant,label,pc1,pc2\n");
    for (w, x) in windows.iter().zip(&p.projections) {
        writeln!(
            s,
            "{},{},{},{}",
            w.participant_id, names[w.label], x[0], x[1]
        )
        .unwrap();
    }
    write(&dir, "pca.csv", s)?;
    write_json(&dir, "pca.json", &summary)?;
    println!(
        "{} points, silhouette {:.3}, one-vs-rest accuracy {:.3}",
        summary.points, summary.silhouette, summary.one_vs_rest_accuracy
    );
    println!("{}", dir.display());
    Ok(())
}

/// Parameter and FLOP table for whatever sections a spec declares.
pub fn count_table(file: &SpecFile) -> CliResult<Vec<(String, Footprint)>> {
    let mut rows = Vec::new();
    if let Some(m) = file.model() {
        let f = ModelFootprint::of(&m)?;
        rows.push(("encoder".to_string(), f.encoder));
        rows.push(("head".to_string(), f.head));
        rows.push((
            "total".to_string(),
            Footprint {
                params: f.encoder.params + f.head.params,
                biases: f.encoder.biases + f.head.biases,
                flops: f.total_flops(),
            },
        ));
    } else if let Some(e) = &file.encoder {
        rows.push(("encoder".to_string(), encoder_footprint(e, &file.input)?));
    } else if let Some(h) = &file.head {
        let n = file.input.n()?;
        let o = file.encoder.as_ref().map(|e| e.embedding_dim).unwrap_or(32);
        rows.push((
            "head".to_string(),
            Footprint::of(&h.layers(o, n), &h.input_shape(o, n))?,
        ));
    }
    if let Some(p) = &file.probe {
        rows.push((
            "probe".to_string(),
            Footprint::of(&p.layers(), &[p.embedding_dim])?,
        ));
    }
    Ok(rows)
}

pub fn count(spec: &Path, out: &Output) -> CliResult<()> {
    let file = SpecFile::from_toml(&read_text(spec)?)?;
    let rows = count_table(&file)?;
    let mut csv = String::from("component,params,biases,flops\n");
    for (name, f) in &rows {
        println!("{name}: params {}, flops {}", f.params, f.flops);
        writeln!(csv, "{name},{},{},{}", f.params, f.biases, f.flops).unwrap();
    }
    let cfg = RunConfig {
        command: Some("count".into()),
        model: Some(absolute(spec)),
        ..RunConfig::default()
    };
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;
    write(&dir, "count.csv", csv)?;
    Ok(())
}

/// Returns whether the encoder fits the deployment budget.
pub fn budget(spec: &Path) -> CliResult<bool> {
    let file = SpecFile::from_toml(&read_text(spec)?)?;
    let enc = file.encoder.as_ref().ok_or_else(|| {
        CliError::Core(hierhar::Error::SpecParseError {
            key: "encoder".into(),
            message: "budget checks need an encoder section".into(),
        })
    })?;
    let r = check_deploy_budget(enc, &file.input)?;
    println!(
        "budget {} (< {}): params {}, flops {}, margin {}",
        if r.pass { "PASS" } else { "FAIL" },
        r.limit,
        r.params,
        r.flops,
        r.margin
    );
    Ok(r.pass)
}

pub fn sweep(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let manifest_path = absolute(RunConfig::require(&cfg.manifest, "manifest")?);
    let model_path = absolute(RunConfig::require(&cfg.model, "model")?);
    let axis: SweepAxis = RunConfig::require(&cfg.axis, "axis")?.parse()?;
    let texts = RunConfig::require(&cfg.values, "values")?.clone();
    let values = texts
        .iter()
        .map(|t| axis.parse_value(t))
        .collect::<hierhar::Result<Vec<_>>>()?;
    let (manifest, recs) = load_dataset(&manifest_path)?;
    let names = manifest.class_names();
    let base = ExperimentConfig {
        model: load_model_spec(&model_path, names.len())?,
        train: cfg.train.resolve(),
        samples_per_class: cfg.samples_per_class,
        test_fraction: cfg.test_fraction.unwrap_or(0.2),
        hl_stride_s: hl_stride(&cfg, &manifest),
    };
    base.validate()?;
    let parallel = cfg.parallel.unwrap_or(false);
    cfg.manifest = Some(manifest_path);
    cfg.model = Some(model_path);
    cfg.test_fraction = Some(base.test_fraction);
    cfg.hl_stride_s = Some(base.hl_stride_s);
    cfg.parallel = Some(parallel);
    cfg.train = crate::config::TrainOverrides::of(&base.train);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;
    let rows = experiment::sweep(&recs, &names, &base, axis, &values, parallel);
    let csv = experiment::sweep_csv(&rows);
    print!("{csv}");
    write(&dir, "sweep.csv", csv)?;
    println!("{}", dir.display());
    Ok(())
}

pub fn synth(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let spec = cfg.synth.clone().unwrap_or_default();
    spec.validate()?;
    let level = cfg.level.unwrap_or(Level::High);
    let rate = cfg.rate_hz.unwrap_or(50.0);
    cfg.synth = Some(spec.clone());
    cfg.level = Some(level);
    cfg.rate_hz = Some(rate);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;
    let (recs, classes) = match level {
        Level::High => (generate_high_level(&spec)?, spec.hl_class_names()),
        Level::Low => (generate_low_level(&spec)?, spec.motif_names.clone()),
    };
    let m = data::export(&recs, level, rate, classes, &dir)?;
    println!("{} recordings", m.recordings.len());
    println!("{}", dir.join("manifest.json").display());
    Ok(())
}

fn synth_spec_of(base: Option<SynthSpec>, f: &SynthFlags) -> Option<SynthSpec> {
    if base.is_none() && f.is_empty() {
        return None;
    }
    let mut s = base.unwrap_or_default();
    if let Some(v) = f.participants {
        s.participants = v;
    }
    if let Some(v) = f.duration_s {
        s.duration_s = v;
    }
    if let Some(v) = f.seed {
        s.seed = v;
    }
    if let Some(v) = f.native_rate_hz {
        s.rate_hz = v;
    }
    Some(s)
}

#[derive(Debug, Default, Clone)]
pub struct SynthFlags {
    pub participants: Option<usize>,
    pub duration_s: Option<f64>,
    pub seed: Option<u64>,
    pub native_rate_hz: Option<f64>,
}

impl SynthFlags {
    fn is_empty(&self) -> bool {
        self.participants.is_none()
            && self.duration_s.is_none()
            && self.seed.is_none()
            && self.native_rate_hz.is_none()
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        cfg.synth = synth_spec_of(cfg.synth.take(), self);
    }
}

pub fn split(mut cfg: RunConfig, out: &Output) -> CliResult<()> {
    let manifest_path = absolute(RunConfig::require(&cfg.manifest, "manifest")?);
    let (manifest, recs) = load_dataset(&manifest_path)?;
    let windows = data::manifest_windows(&manifest, &recs)?;
    if windows.is_empty() {
        return Err(hierhar::Error::DegenerateData(format!(
            "no recording spans a {} s window",
            manifest.window().0
        ))
        .into());
    }
    let seed = cfg.train.seed.unwrap_or(0);
    let fraction = cfg.test_fraction.unwrap_or(0.2);
    cfg.manifest = Some(manifest_path);
    cfg.train.seed = Some(seed);
    cfg.test_fraction = Some(fraction);
    let dir = run_dir(&out.root, out.dir.as_deref(), &cfg)?;
    let keys = || windows.iter().map(|s| (s.participant_id.as_str(), s.label));
    let plan = stratified_participant_split(keys(), fraction, seed)?;
    write_json(&dir, "split.json", &plan)?;
    println!(
        "test {} of {} participants, test fraction {:.3}, max class gap {:.3}",
        plan.test.len(),
        plan.test.len() + plan.train.len(),
        plan.test_fraction,
        plan.max_deviation
    );
    if let Some(k) = cfg.folds {
        let folds = make_folds(keys(), k, seed)?;
        write_json(&dir, "folds.json", &folds)?;
        println!("{k} folds, max class gap {:.3}", folds.max_deviation);
    }
    println!("{}", dir.display());
    Ok(())
}
