//! End-to-end acceptance checks. Runs every criterion in sequence, prints
//! one PASS/FAIL line each, then fails if any criterion failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use hierhar::data::oracle::{MixtureOracle, SpectralOracle};
use hierhar::data::synth::{generate_high_level, generate_low_level, SynthSpec};
use hierhar::data::{subsample_per_class, windows_from, LL_CLASSES};
use hierhar::eval::{evaluate, one_vs_rest_accuracy, pca_2d, silhouette};
use hierhar::experiment::{prepare_split, run, sweep, ExperimentConfig, SweepAxis, SweepRow};
use hierhar::models::{
    check_deploy_budget, load_model, load_probe, model_to_bytes, save_model, save_probe, zoo,
    EncoderVariant, Footprint, HierarchicalModel, InputSpec, ProbeHead,
};
use hierhar::nn::{softmax, LayerSpec};
use hierhar::signal::WindowedSample;
use hierhar::train::{
    cross_validate_probe, make_folds, proportion_deviation, stratified_participant_split,
    train_probe, weighted_cross_entropy, TrainConfig,
};
use hierhar::{Error, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, format!("took {t:.1?}, limit {limit:?}"))
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

fn ll_names() -> Vec<String> {
    LL_CLASSES.map(String::from).to_vec()
}

fn c1_probe_counts() -> Outcome {
    let start = Instant::now();
    let spec = zoo::probe(3);
    let f = Footprint::of(&spec.layers(), &[32]).map_err(|e| e.to_string())?;
    check(
        f.params == 99 && f.flops == 96,
        format!("params {}, flops {}", f.params, f.flops),
    )?;
    let probe = ProbeHead::new(spec, names(3), 0).map_err(|e| e.to_string())?;
    check(
        probe.params().scalar_count() == 99,
        "allocated probe size differs",
    )?;
    within(Duration::from_secs(1), start)?;
    Ok(format!("params {}, flops {}", f.params, f.flops))
}

fn c2_mac_identity() -> Outcome {
    let start = Instant::now();
    let f = hierhar::models::encoder_footprint(
        &zoo::encoder(EncoderVariant::MlpFeatures),
        &InputSpec::default(),
    )
    .map_err(|e| e.to_string())?;
    check(
        (f.params, f.flops, f.biases) == (5_408, 5_280, 128),
        format!(
            "mlp encoder {} params, {} flops, {} biases",
            f.params, f.flops, f.biases
        ),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let depth = rng.random_range(1..6);
        let mut width = rng.random_range(1..64);
        let input = width;
        let mut layers = Vec::new();
        let mut biases = 0u64;
        for _ in 0..depth {
            let out = rng.random_range(1..64);
            let bias = rng.random_bool(0.7);
            biases += if bias { out as u64 } else { 0 };
            layers.push(LayerSpec::Dense {
                in_features: width,
                out_features: out,
                bias,
            });
            width = out;
        }
        let f = Footprint::of(&layers, &[input]).map_err(|e| e.to_string())?;
        check(
            f.flops == f.params - biases && f.biases == biases,
            format!("dense stack {layers:?}: {f:?}"),
        )?;
    }
    within(Duration::from_secs(1), start)?;
    Ok("5,408 - 5,280 = 128 biases; 500 random dense stacks agree".into())
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut total = 0usize;
    for v in zoo::VARIANTS {
        for h in zoo::HEADS {
            let mut model = HierarchicalModel::new(zoo::tiny_model(v, h, 3), names(3), 21)
                .map_err(|e| e.to_string())?;
            let hl = model.spec().input.hl_samples().map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let raw = Tensor::from_vec(
                &[6, hl],
                (0..6 * hl).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .map_err(|e| e.to_string())?;
            model
                .fit_norm(std::iter::once(&raw))
                .map_err(|e| e.to_string())?;
            let x = model.prepare_hl(&raw).map_err(|e| e.to_string())?;
            let w = [0.5, 1.0, 1.5];
            let target = 1;
            let (z, tape) = model.forward_recorded(&x).map_err(|e| e.to_string())?;
            let sig = model.decision_signature(&tape);
            let (_, g) = weighted_cross_entropy(&softmax(&z), target, &w);
            let mut grads = model.params().zeroed_grads();
            model
                .backward(&tape, &g, &mut grads)
                .map_err(|e| e.to_string())?;
            let mut checked = 0;
            for pi in 0..grads.len() {
                for j in 0..grads[pi].len() {
                    let orig = model.params().values()[pi].data()[j];
                    let mut loss_at = |d: f64| -> Result<(f64, bool), String> {
                        model.params_mut().values_mut()[pi].data_mut()[j] = orig + d;
                        let (z, t) = model.forward_recorded(&x).map_err(|e| e.to_string())?;
                        Ok((
                            weighted_cross_entropy(&softmax(&z), target, &w).0,
                            model.decision_signature(&t) == sig,
                        ))
                    };
                    let eps = 1e-5;
                    let (lp, sp) = loss_at(eps)?;
                    let (lm, sm) = loss_at(-eps)?;
                    model.params_mut().values_mut()[pi].data_mut()[j] = orig;
                    if !(sp && sm) {
                        continue;
                    }
                    let fd = (lp - lm) / (2.0 * eps);
                    let an = grads[pi].data()[j];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    if rel >= 1e-4 {
                        return Err(format!(
                            "{v:?}/{h:?} {}[{j}]: analytic {an:e}, numeric {fd:e}",
                            model.params().names()[pi]
                        ));
                    }
                    worst = worst.max(rel);
                    checked += 1;
                }
            }
            check(checked > 0, format!("{v:?}/{h:?}: nothing checked"))?;
            total += checked;
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "15 models, {total} parameters, max relative error {worst:.2e}"
    ))
}

fn c4_budget() -> Outcome {
    let start = Instant::now();
    let input = InputSpec::default();
    let d = check_deploy_budget(&zoo::default_encoder(), &input).map_err(|e| e.to_string())?;
    let r = check_deploy_budget(&zoo::imu2clip_reference(), &input).map_err(|e| e.to_string())?;
    check(d.pass, format!("default encoder {} params fails", d.params))?;
    check(
        !r.pass && r.params > 25_000,
        format!("reference {} params passes", r.params),
    )?;
    within(Duration::from_secs(1), start)?;
    Ok(format!(
        "default {} params PASS, reference {} params FAIL",
        d.params, r.params
    ))
}

fn hl_config() -> ExperimentConfig {
    ExperimentConfig {
        model: zoo::toy_model(3),
        train: TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            max_epochs: 30,
            lr_gamma: 0.5,
            lr_step_epochs: 10,
            seed: 0,
            ..TrainConfig::default()
        },
        samples_per_class: Some(500),
        test_fraction: 0.2,
        hl_stride_s: 10.0,
    }
}

fn oracle_f1(train: &[WindowedSample], test: &[WindowedSample], rate: f64) -> Result<f64, String> {
    let o = MixtureOracle::fit(SpectralOracle::new(rate), train, 3).map_err(|e| e.to_string())?;
    let preds = test
        .iter()
        .map(|s| o.predict(&s.data))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let ys: Vec<usize> = test.iter().map(|s| s.label).collect();
    Ok(evaluate(&preds, &ys, 3)
        .map_err(|e| e.to_string())?
        .macro_f1)
}

fn c5_hierarchical(trained: &mut Option<HierarchicalModel>) -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec::default();
    let recs = generate_high_level(&spec).map_err(|e| e.to_string())?;
    let names = spec.hl_class_names();
    let cfg = hl_config();
    let (train, test, _) = prepare_split(&recs, &names, &cfg).map_err(|e| e.to_string())?;
    let oracle = oracle_f1(&train, &test, cfg.model.input.rate_hz)?;
    let out = run(&recs, &names, &cfg).map_err(|e| e.to_string())?;
    let f1 = out.report.macro_f1;
    let epochs = out.history.epochs.len();
    *trained = Some(out.model);
    let summary = format!(
        "{} train / {} test windows, {epochs} epochs, test macro F1 {f1:.4}, oracle {oracle:.4}",
        train.len(),
        test.len()
    );
    check(oracle >= 0.95, format!("oracle below target: {summary}"))?;
    check(f1 >= 0.95, format!("model below target: {summary}"))?;
    check(
        out.history.final_loss < out.history.initial_loss,
        "loss did not decrease",
    )?;
    within(Duration::from_secs(600), start)?;
    Ok(summary)
}

fn ll_windows(seed: u64) -> Result<Vec<WindowedSample>, String> {
    let spec = SynthSpec {
        participants: 20,
        duration_s: 40.0,
        seed,
        ..SynthSpec::default()
    };
    let recs = generate_low_level(&spec).map_err(|e| e.to_string())?;
    windows_from(&recs, &ll_names(), 50.0, 1.0, 1.0).map_err(|e| e.to_string())
}

fn c6_probe(model: Option<&HierarchicalModel>) -> Outcome {
    let start = Instant::now();
    let model = model.ok_or("no trained encoder available")?;
    let before = model.encoder_fingerprint();
    let windows = ll_windows(101)?;
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 32,
        max_epochs: 30,
        lr_gamma: 0.5,
        lr_step_epochs: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let reports =
        cross_validate_probe(model, &windows, &ll_names(), 4, &cfg).map_err(|e| e.to_string())?;
    let f1s: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    check(
        model.encoder_fingerprint() == before,
        "encoder changed during probing",
    )?;
    let detail = format!(
        "{} windows, fold macro F1 {:?}, mean {mean:.4}",
        windows.len(),
        f1s.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
    );
    check(mean >= 0.90, detail.clone())?;
    within(Duration::from_secs(300), start)?;
    Ok(detail)
}

fn c7_pca(model: Option<&HierarchicalModel>) -> Outcome {
    let start = Instant::now();
    let model = model.ok_or("no trained encoder available")?;
    let windows = subsample_per_class(&ll_windows(202)?, 80, 4).map_err(|e| e.to_string())?;
    let emb = windows
        .iter()
        .map(|s| model.encode_low_level(&s.data))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let labels: Vec<usize> = windows.iter().map(|s| s.label).collect();
    let pca = pca_2d(&emb).map_err(|e| e.to_string())?;
    let pts: Vec<Vec<f64>> = pca.projections.iter().map(|p| p.to_vec()).collect();
    let sil = silhouette(&pts, &labels).map_err(|e| e.to_string())?;
    let sep = one_vs_rest_accuracy(&pca.projections, &labels, 3).map_err(|e| e.to_string())?;
    let detail = format!(
        "{} embeddings, silhouette {sil:.3}, one-vs-rest accuracy {sep:.3}",
        emb.len()
    );
    check(emb.len() == 240, detail.clone())?;
    check(sil >= 0.3 && sep >= 0.9, detail.clone())?;
    within(Duration::from_secs(60), start)?;
    Ok(detail)
}

fn c8_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let k = rng.random_range(2..=9);
        let n = rng.random_range(1..200);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let r = evaluate(&preds, &ys, k).map_err(|e| e.to_string())?;
        let mut f1_sum = 0.0;
        for c in 0..k {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for i in 0..n {
                match (preds[i] == c, ys[i] == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            for t in 0..k {
                let cell = (0..n).filter(|&i| ys[i] == c && preds[i] == t).count() as u64;
                check(
                    r.confusion.get(c, t) == cell,
                    format!("case {case}: cell ({c},{t})"),
                )?;
            }
            let p = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let rc = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            let f1 = if p + rc == 0.0 {
                0.0
            } else {
                2.0 * p * rc / (p + rc)
            };
            let alt = if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            check(
                r.per_class[c].f1 == f1,
                format!("case {case}: class {c} F1"),
            )?;
            check(
                (f1 - alt).abs() < 1e-12,
                format!("case {case}: F1 identity"),
            )?;
            f1_sum += f1;
        }
        let correct = (0..n).filter(|&i| preds[i] == ys[i]).count();
        check(
            r.macro_f1 == f1_sum / k as f64,
            format!("case {case}: macro F1"),
        )?;
        check(
            r.micro_accuracy == correct as f64 / n as f64,
            format!("case {case}: accuracy"),
        )?;
    }
    within(Duration::from_secs(10), start)?;
    Ok("1000 random sets match the tally oracle exactly".into())
}

struct Instance {
    samples: Vec<(String, usize)>,
    rows: Vec<Vec<u64>>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let p = rng.random_range(1..=30);
    let k = rng.random_range(2..=5);
    let mut rows = vec![vec![0u64; k]; p];
    for row in rows.iter_mut() {
        for c in row.iter_mut() {
            if rng.random_bool(0.6) {
                *c = rng.random_range(1..40);
            }
        }
        if row.iter().all(|&c| c == 0) {
            row[rng.random_range(0..k)] = rng.random_range(1..40);
        }
    }
    let mut samples = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            samples.extend((0..n).map(|_| (format!("p{i:02}"), c)));
        }
    }
    Instance { samples, rows }
}

fn side_totals(rows: &[Vec<u64>], mask: &[bool], want: bool) -> Vec<u64> {
    let mut t = vec![0; rows[0].len()];
    for (row, &m) in rows.iter().zip(mask) {
        if m == want {
            t.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
    t
}

/// A split with both gaps within `tol`, found by enumeration for small
/// instances and random search otherwise.
fn feasible(rows: &[Vec<u64>], target: f64, tol: f64, rng: &mut ChaCha8Rng) -> bool {
    let p = rows.len();
    let n: u64 = rows.iter().flatten().sum();
    let ok = |mask: &[bool]| {
        let test = side_totals(rows, mask, true);
        let train = side_totals(rows, mask, false);
        let t: u64 = test.iter().sum();
        t > 0
            && t < n
            && proportion_deviation(&train, &test) <= tol
            && (t as f64 / n as f64 - target).abs() <= tol
    };
    if p <= 16 {
        (1u32..(1 << p) - 1).any(|m| ok(&(0..p).map(|i| m & (1 << i) != 0).collect::<Vec<_>>()))
    } else {
        (0..4000).any(|_| ok(&(0..p).map(|_| rng.random_bool(target)).collect::<Vec<_>>()))
    }
}

fn c9_splits() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut feasible_count, mut infeasible_count, mut worst) = (0, 0, 0.0f64);
    for case in 0..1000 {
        let inst = random_instance(&mut rng);
        let target = [0.2, 0.25, 0.3][case % 3];
        let lone =
            (0..inst.rows[0].len()).any(|c| inst.rows.iter().filter(|r| r[c] > 0).count() == 1);
        let seed = rng.random();
        let res = stratified_participant_split(
            inst.samples.iter().map(|(p, l)| (p.as_str(), *l)),
            target,
            seed,
        );
        match res {
            Err(Error::InfeasibleSplit(_)) => {
                check(
                    lone,
                    format!("case {case}: InfeasibleSplit without a lone class"),
                )?;
                infeasible_count += 1;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
            Ok(plan) => {
                check(!lone, format!("case {case}: lone class not reported"))?;
                let ids: std::collections::BTreeSet<&String> =
                    inst.samples.iter().map(|s| &s.0).collect();
                let mut seen = std::collections::BTreeSet::new();
                for id in plan.train.iter().chain(&plan.test) {
                    check(seen.insert(id), format!("case {case}: {id} on both sides"))?;
                }
                check(
                    seen.len() == ids.len(),
                    format!("case {case}: participants lost"),
                )?;
                if feasible(&inst.rows, target, 0.10, &mut rng) {
                    feasible_count += 1;
                    worst = worst.max(plan.max_deviation);
                    check(
                        plan.max_deviation <= 0.10,
                        format!(
                            "case {case}: deviation {:.3} on a feasible instance",
                            plan.max_deviation
                        ),
                    )?;
                }
                if ids.len() >= 4 {
                    let folds =
                        make_folds(inst.samples.iter().map(|(p, l)| (p.as_str(), *l)), 4, seed)
                            .map_err(|e| e.to_string())?;
                    let mut fseen = std::collections::BTreeSet::new();
                    for f in &folds.folds {
                        for id in f {
                            check(
                                fseen.insert(id.clone()),
                                format!("case {case}: {id} in two folds"),
                            )?;
                        }
                    }
                    check(
                        fseen.len() == ids.len(),
                        format!("case {case}: folds miss participants"),
                    )?;
                }
            }
        }
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!(
        "no leakage; {feasible_count} feasible instances, worst deviation {:.1} pp; {infeasible_count} lone-class instances rejected",
        worst * 100.0
    ))
}

fn f1_of(rows: &[SweepRow]) -> Result<Vec<f64>, String> {
    rows.iter()
        .map(|r| {
            r.macro_f1
                .ok_or_else(|| format!("{}={} failed: {:?}", r.axis, r.value, r.error))
        })
        .collect()
}

fn c10_sweeps() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec::default();
    let recs = generate_high_level(&spec).map_err(|e| e.to_string())?;
    let names = spec.hl_class_names();
    let base = ExperimentConfig {
        samples_per_class: Some(250),
        train: TrainConfig {
            max_epochs: 20,
            ..hl_config().train
        },
        ..hl_config()
    };
    let samples = [100.0, 250.0, f64::INFINITY];
    let windows = [5.0, 10.0, 20.0, 30.0];
    let rates = [15.0, 25.0, 50.0];
    let fs = f1_of(&sweep(
        &recs,
        &names,
        &base,
        SweepAxis::SamplesPerClass,
        &samples,
        false,
    ))?;
    let fw = f1_of(&sweep(
        &recs,
        &names,
        &base,
        SweepAxis::HlWindowS,
        &windows,
        false,
    ))?;
    let fr = f1_of(&sweep(
        &recs,
        &names,
        &base,
        SweepAxis::RateHz,
        &rates,
        false,
    ))?;
    let mut oracle = Vec::new();
    for &w in &windows {
        let cfg = SweepAxis::HlWindowS.apply(&base, w);
        let (train, test, _) = prepare_split(&recs, &names, &cfg).map_err(|e| e.to_string())?;
        oracle.push(oracle_f1(&train, &test, 50.0)?);
    }
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|f| format!("{f:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let detail = format!(
        "samples {{100,250,all}}: {}; window {{5,10,20,30}}: {} (oracle {}); rate {{15,25,50}}: {}",
        fmt(&fs),
        fmt(&fw),
        fmt(&oracle),
        fmt(&fr)
    );
    let monotone = |v: &[f64]| v.windows(2).all(|p| p[1] >= p[0] - 0.02);
    check(monotone(&fs), format!("samples not monotone: {detail}"))?;
    check(monotone(&fw), format!("window not monotone: {detail}"))?;
    check(
        (fr[0] - fr[2]).abs() <= 0.05,
        format!("15 Hz vs 50 Hz gap: {detail}"),
    )?;
    within(Duration::from_secs(1800), start)?;
    Ok(detail)
}

fn sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn c11_determinism() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        participants: 6,
        duration_s: 90.0,
        ..SynthSpec::default()
    };
    let recs = generate_high_level(&spec).map_err(|e| e.to_string())?;
    let names = spec.hl_class_names();
    let cfg = ExperimentConfig {
        samples_per_class: Some(30),
        train: TrainConfig {
            max_epochs: 2,
            ..hl_config().train
        },
        test_fraction: 0.34,
        ..hl_config()
    };
    let a = run(&recs, &names, &cfg).map_err(|e| e.to_string())?;
    let b = run(&recs, &names, &cfg).map_err(|e| e.to_string())?;
    let ha = sha(&model_to_bytes(&a.model).map_err(|e| e.to_string())?);
    let hb = sha(&model_to_bytes(&b.model).map_err(|e| e.to_string())?);
    check(ha == hb, "checkpoint checksums differ")?;
    check(a.history.to_csv() == b.history.to_csv(), "histories differ")?;
    check(
        serde_json::to_string(&a.report).ok() == serde_json::to_string(&b.report).ok(),
        "reports differ",
    )?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    save_model(&a.model, &path).map_err(|e| e.to_string())?;
    let back = load_model(&path).map_err(|e| e.to_string())?;
    let (_, test, _) = prepare_split(&recs, &names, &cfg).map_err(|e| e.to_string())?;
    for s in &test {
        let p = a
            .model
            .classify_high_level(&s.data)
            .map_err(|e| e.to_string())?;
        let q = back
            .classify_high_level(&s.data)
            .map_err(|e| e.to_string())?;
        check(
            p.iter()
                .map(|v| v.to_bits())
                .eq(q.iter().map(|v| v.to_bits())),
            "reloaded model predicts differently",
        )?;
    }

    let ll = subsample_per_class(&ll_windows(5)?, 20, 0).map_err(|e| e.to_string())?;
    let mut probe = ProbeHead::for_model(&a.model, ll_names(), 1).map_err(|e| e.to_string())?;
    let pcfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    train_probe(&a.model, &mut probe, &ll, &[], &pcfg).map_err(|e| e.to_string())?;
    let ppath = dir.path().join("probe.ckpt");
    save_probe(&probe, &ppath).map_err(|e| e.to_string())?;
    let pback = load_probe(&ppath).map_err(|e| e.to_string())?;
    for s in &ll {
        let p = probe
            .probe_forward(&a.model, &s.data)
            .map_err(|e| e.to_string())?;
        let q = pback
            .probe_forward(&back, &s.data)
            .map_err(|e| e.to_string())?;
        check(
            p.iter()
                .map(|v| v.to_bits())
                .eq(q.iter().map(|v| v.to_bits())),
            "reloaded probe predicts differently",
        )?;
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "checkpoint sha256 {}…, {} HL + {} LL predictions bit-exact after reload",
        &ha[..12],
        test.len(),
        ll.len()
    ))
}

#[test]
fn acceptance() {
    let mut trained: Option<HierarchicalModel> = None;
    let mut results: Vec<(usize, &str, Outcome, Duration)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(&mut *f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let (tag, msg) = match &out {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("[{tag}] criterion {id:>2} {name}: {msg} ({took:.1?})");
        results.push((id, name, out, took));
    };
    record(1, "probe counting identity", &mut c1_probe_counts);
    record(2, "MAC convention identity", &mut c2_mac_identity);
    record(3, "gradient suite", &mut c3_gradients);
    record(4, "deployment budget gate", &mut c4_budget);
    record(5, "hierarchical learning on synthetic data", &mut || {
        c5_hierarchical(&mut trained)
    });
    record(6, "probing transfer", &mut || c6_probe(trained.as_ref()));
    record(7, "PCA clustering", &mut || c7_pca(trained.as_ref()));
    record(8, "metric oracle equivalence", &mut c8_metrics);
    record(9, "split and fold properties", &mut c9_splits);
    record(10, "sensitivity shape", &mut c10_sweeps);
    record(11, "determinism and round trips", &mut c11_determinism);
    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
