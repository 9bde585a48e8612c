use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{zoo, EncoderVariant, HeadVariant};

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

/// Random windows whose class shifts the mean of one channel.
fn toy_windows(count: usize, shape: [usize; 2], k: usize, seed: u64) -> Vec<WindowedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let label = i % k;
            let data: Vec<f64> = (0..shape[0] * shape[1])
                .map(|j| {
                    let ch = j / shape[1];
                    let shift = if ch == label { 2.0 } else { 0.0 };
                    shift + rng.random_range(-1.0..1.0)
                })
                .collect();
            WindowedSample {
                data: Tensor::from_vec(&shape, data).unwrap(),
                label,
                participant_id: format!("p{}", i % 4),
                start_time: i as f64,
            }
        })
        .collect()
}

#[test]
fn cross_entropy_of_half() {
    let (loss, grad) = weighted_cross_entropy(&[0.5, 0.25, 0.25], 0, &[1.0; 3]);
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(grad, vec![-0.5, 0.25, 0.25]);
    let (near_zero, _) = weighted_cross_entropy(&[1.0 - 1e-12, 1e-12], 0, &[1.0, 1.0]);
    assert!(near_zero < 1e-11);
}

#[test]
fn inverse_frequency_example() {
    let w = inverse_frequency_weights(&[10, 30, 60]);
    let want = [10.0 / 3.0, 10.0 / 9.0, 5.0 / 9.0];
    for (a, b) in w.iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let mut labels = vec![0; 10];
    labels.extend(vec![1; 30]);
    labels.extend(vec![2; 60]);
    assert_eq!(
        class_weights(&labels, 3, ClassWeightsMode::InverseFrequency).unwrap(),
        w
    );
    assert_eq!(
        class_weights(&labels, 3, ClassWeightsMode::Uniform).unwrap(),
        vec![1.0; 3]
    );
}

#[test]
fn step_lr_examples() {
    let c = TrainConfig {
        learning_rate: 0.1,
        lr_gamma: 0.5,
        lr_step_epochs: 10,
        ..TrainConfig::default()
    };
    assert!((step_lr(25, &c) - 0.025).abs() < 1e-15);
    assert_eq!(step_lr(0, &c), 0.1);
    let flat = TrainConfig {
        lr_gamma: 1.0,
        ..c.clone()
    };
    assert!((0..100).all(|e| step_lr(e, &flat) == 0.1));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr_gamma: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr_step_epochs: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    }
}

proptest! {
    #[test]
    fn scheduler_non_increasing(lr in 1e-4f64..1.0, gamma in 0.01f64..=1.0, step in 1usize..20, e in 0usize..200) {
        let c = TrainConfig { learning_rate: lr, lr_gamma: gamma, lr_step_epochs: step, ..TrainConfig::default() };
        prop_assert!(step_lr(e + 1, &c) <= step_lr(e, &c));
    }

    #[test]
    fn uniform_weights_match_plain_cross_entropy(
        logits in prop::collection::vec(-10.0f64..10.0, 2..8),
        t in 0usize..8,
    ) {
        let t = t % logits.len();
        let p = softmax(&logits);
        let (w, _) = weighted_cross_entropy(&p, t, &vec![1.0; p.len()]);
        prop_assert_eq!(w.to_bits(), (-p[t].ln()).to_bits());
    }

    #[test]
    fn ce_gradient_matches_finite_differences(
        logits in prop::collection::vec(-4.0f64..4.0, 2..7),
        weights in prop::collection::vec(0.1f64..5.0, 7),
        t in 0usize..7,
    ) {
        let k = logits.len();
        let t = t % k;
        let w = &weights[..k];
        let loss = |z: &[f64]| weighted_cross_entropy(&softmax(z), t, w).0;
        let (_, g) = weighted_cross_entropy(&softmax(&logits), t, w);
        for i in 0..k {
            let h = 1e-5;
            let mut up = logits.clone();
            let mut dn = logits.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let err = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-3);
            prop_assert!(err < 1e-6, "logit {} analytic {} fd {}", i, g[i], fd);
        }
    }
}

/// Central-difference check of the loss gradient through head and
/// encoder, skipping perturbations that flip a discrete branch.
#[test]
fn joint_gradient_matches_finite_differences() {
    let k = 3;
    for v in zoo::VARIANTS {
        for h in zoo::HEADS {
            let spec = zoo::tiny_model(v, h, k);
            let mut model = HierarchicalModel::new(spec, names(k), 11).unwrap();
            let hl = model.spec().input.hl_samples().unwrap();
            let sample = &toy_windows(1, [6, hl], k, 5)[0];
            model.fit_norm(std::iter::once(&sample.data)).unwrap();
            let x = model.prepare_hl(&sample.data).unwrap();
            let w = [0.7, 1.3, 2.0];
            let (logits, tape) = model.forward_recorded(&x).unwrap();
            let sig = model.decision_signature(&tape);
            let (_, g) = weighted_cross_entropy(&softmax(&logits), sample.label, &w);
            let mut grads = model.params().zeroed_grads();
            model.backward(&tape, &g, &mut grads).unwrap();

            let mut checked = 0;
            for pi in 0..grads.len() {
                for j in (0..grads[pi].len()).step_by(3) {
                    let orig = model.params().values()[pi].data()[j];
                    let eps = 1e-5;
                    let mut eval = |delta: f64| {
                        model.params_mut().values_mut()[pi].data_mut()[j] = orig + delta;
                        let (z, t) = model.forward_recorded(&x).unwrap();
                        let same = model.decision_signature(&t) == sig;
                        (
                            weighted_cross_entropy(&softmax(&z), sample.label, &w).0,
                            same,
                        )
                    };
                    let (lp, sp) = eval(eps);
                    let (lm, sm) = eval(-eps);
                    model.params_mut().values_mut()[pi].data_mut()[j] = orig;
                    if !(sp && sm) {
                        continue;
                    }
                    let fd = (lp - lm) / (2.0 * eps);
                    let an = grads[pi].data()[j];
                    let scale = fd.abs().max(an.abs()).max(1e-4);
                    assert!(
                        (fd - an).abs() / scale < 1e-4,
                        "{v:?}/{h:?} param {} [{j}]: analytic {an} fd {fd}",
                        model.params().names()[pi]
                    );
                    checked += 1;
                }
            }
            assert!(checked > 10, "{v:?}/{h:?} checked only {checked}");
        }
    }
}

fn tiny_setup(
    v: EncoderVariant,
    h: HeadVariant,
    seed: u64,
) -> (HierarchicalModel, Vec<WindowedSample>) {
    let spec = zoo::tiny_model(v, h, 3);
    let model = HierarchicalModel::new(spec, names(3), seed).unwrap();
    let hl = model.spec().input.hl_samples().unwrap();
    (model, toy_windows(48, [6, hl], 3, seed + 100))
}

#[test]
fn training_updates_encoder_and_head_and_descends() {
    let (mut model, data) = tiny_setup(EncoderVariant::Cnn, HeadVariant::Mlp, 1);
    let enc_before = model.encoder_fingerprint();
    let all_before = model.params().fingerprint();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 8,
        max_epochs: 8,
        lr_gamma: 1.0,
        ..TrainConfig::default()
    };
    let hist = train_hierarchical(&mut model, &data[..36], &data[36..], &cfg).unwrap();
    assert_eq!(hist.epochs.len(), 8);
    assert_ne!(model.encoder_fingerprint(), enc_before);
    assert_ne!(model.params().fingerprint(), all_before);
    assert!(hist.final_loss < hist.initial_loss);
    assert!(hist.epochs.iter().all(|e| e.test_macro_f1.is_some()));
    assert!(hist.final_report.is_some());
    let csv = hist.to_csv();
    assert!(csv.starts_with("epoch,lr,train_loss,test_macro_f1,test_micro_acc\n"));
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn same_seed_same_trace() {
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let (mut model, data) = tiny_setup(EncoderVariant::Cnn, HeadVariant::Lstm, 2);
        let h = train_hierarchical(&mut model, &data, &[], &cfg).unwrap();
        (h.losses(), model.params().fingerprint())
    };
    let (a, fa) = run();
    let (b, fb) = run();
    assert_eq!(
        a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(fa, fb);
}

#[test]
fn non_finite_loss_aborts() {
    let (mut model, data) = tiny_setup(EncoderVariant::MlpFeatures, HeadVariant::Mlp, 3);
    model.params_mut().values_mut()[0].data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    match train_hierarchical(&mut model, &data, &[], &cfg) {
        Err(Error::DivergenceDetected { epoch, batch, loss }) => {
            assert_eq!((epoch, batch), (1, 0));
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn probe_training_leaves_encoder_frozen() {
    let (model, _) = tiny_setup(EncoderVariant::Cnn, HeadVariant::Gru, 4);
    let ll = model.ll_samples();
    let train = toy_windows(60, [6, ll], 3, 7);
    let test = toy_windows(30, [6, ll], 3, 8);
    let enc = model.encoder_fingerprint();
    let mut probe = ProbeHead::for_model(&model, names(3), 5).unwrap();
    let untouched = probe.clone();

    let zero = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let h0 = train_probe(&model, &mut probe, &train, &test, &zero).unwrap();
    assert!(h0.epochs.is_empty());
    for s in &test {
        assert_eq!(
            probe.probe_forward(&model, &s.data).unwrap(),
            untouched.probe_forward(&model, &s.data).unwrap()
        );
    }

    let cfg = TrainConfig {
        learning_rate: 0.5,
        max_epochs: 10,
        ..TrainConfig::default()
    };
    let h = train_probe(&model, &mut probe, &train, &test, &cfg).unwrap();
    assert_eq!(model.encoder_fingerprint(), enc);
    assert_ne!(
        probe.params().fingerprint(),
        untouched.params().fingerprint()
    );
    assert!(h.final_loss < h.initial_loss);
    let r = evaluate_probe(&model, &probe, &test).unwrap();
    assert_eq!(r.confusion.total(), 30);
}

#[test]
fn out_of_range_labels_rejected() {
    let (mut model, mut data) = tiny_setup(EncoderVariant::Cnn, HeadVariant::Mlp, 5);
    data[0].label = 7;
    assert!(matches!(
        train_hierarchical(&mut model, &data, &[], &TrainConfig::default()),
        Err(Error::ShapeMismatch(_))
    ));
}
