use super::oracle::{dominant_frequency, MixtureOracle, SpectralOracle};
use super::synth::{generate_high_level, generate_low_level, SynthSpec, GRAVITY};
use super::*;
use crate::eval::evaluate;
use crate::tensor::Tensor;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn two_row_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "a.csv",
        "t,ax,ay,az,gx,gy,gz\n0,0.1,0.2,9.8,0,0,0\n0.02,0.1,0.2,9.7,0.01,0,0\n",
    );
    let rec = read_csv(&p, "p1").unwrap();
    assert_eq!(rec.len(), 2);
    assert_eq!(rec.channel(2), &[9.8, 9.7]);
    assert_eq!(rec.participant_id(), "p1");
}

#[test]
fn nan_cell_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "a.csv",
        "t,ax,ay,az,gx,gy,gz\n0,0,0,9.8,0,0,0\n0.02,NaN,0,9.8,0,0,0\n",
    );
    match read_csv(&p, "p") {
        Err(Error::ParseError { line, column, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(column, "ax");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let q = write(dir.path(), "b.csv", "t,ax,ay,az,gx,gy,gz\n0,0,0,x,0,0,0\n");
    assert!(matches!(
        read_csv(&q, "p"),
        Err(Error::ParseError { line: 2, ref column, .. }) if column == "az"
    ));
}

#[test]
fn header_and_shape_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "a.csv",
        "time,ax,ay,az,gx,gy,gz\n0,0,0,0,0,0,0\n",
    );
    assert!(matches!(
        read_csv(&p, "p"),
        Err(Error::ParseError { line: 1, .. })
    ));
    let q = write(dir.path(), "b.csv", "t,ax,ay,az,gx,gy,gz\n0,0,0,0,0,0\n");
    assert!(matches!(read_csv(&q, "p"), Err(Error::ParseError { .. })));
    let r = write(
        dir.path(),
        "c.csv",
        "t,ax,ay,az,gx,gy,gz\n1,0,0,0,0,0,0\n0.5,0,0,0,0,0,0\n",
    );
    assert!(matches!(
        read_csv(&r, "p"),
        Err(Error::NonMonotonicTimestamps { .. })
    ));
}

#[test]
fn unknown_label_rejected() {
    let m = DatasetManifest::new(Level::High, 50.0);
    assert_eq!(m.class_names().len(), 9);
    assert_eq!(m.label_index("cooking").unwrap(), 6);
    assert!(matches!(
        m.label_index("juggling"),
        Err(Error::UnknownLabel { ref label, .. }) if label == "juggling"
    ));

    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "r.csv",
        "t,ax,ay,az,gx,gy,gz\n0,0,0,9.8,0,0,0\n",
    );
    write(dir.path(), "r.csv.label", "juggling\n");
    let mut m = DatasetManifest::new(Level::High, 50.0);
    m.recordings.push(RecordingEntry {
        participant: "p".into(),
        file: "r.csv".into(),
        label_file: None,
    });
    assert!(matches!(
        ingest(&m, dir.path()),
        Err(Error::UnknownLabel { .. })
    ));
}

#[test]
fn manifest_validation_and_defaults() {
    let m = DatasetManifest::new(Level::Low, 50.0);
    assert_eq!(m.window(), (1.0, 1.0));
    assert_eq!(
        DatasetManifest::new(Level::High, 50.0).window(),
        (30.0, 10.0)
    );
    let dup = DatasetManifest {
        classes: vec!["a".into(), "a".into()],
        ..m.clone()
    };
    assert!(dup.validate().is_err());
    let text = r#"{"level":"low","rate_hz":50,"recordings":[],"extra":1}"#;
    assert!(serde_json::from_str::<DatasetManifest>(text).is_err());
    let text = r#"{"level":"low","rate_hz":50,"recordings":[]}"#;
    let m: DatasetManifest = serde_json::from_str(text).unwrap();
    assert_eq!(m.class_names(), LL_CLASSES.map(String::from).to_vec());
}

fn small_spec() -> SynthSpec {
    SynthSpec {
        participants: 3,
        duration_s: 40.0,
        ..SynthSpec::default()
    }
}

#[test]
fn export_ingest_round_trip_is_lossless() {
    let spec = small_spec();
    let recs = generate_high_level(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = export(&recs, Level::High, 50.0, spec.hl_class_names(), dir.path()).unwrap();
    let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded, m);
    let back = ingest(&loaded, dir.path()).unwrap();
    assert_eq!(back, recs);
}

#[test]
fn stationary_without_noise_is_flat_gravity() {
    let mut spec = small_spec();
    spec.motifs[0].noise_std = 0.0;
    spec.tilt_deg = 0.0;
    let recs = generate_low_level(&spec).unwrap();
    let still = recs
        .iter()
        .find(|r| r.label() == Some("stationary"))
        .unwrap();
    assert!(still.channel(2).iter().all(|&v| v == GRAVITY));
    assert!(still.channel(0).iter().all(|&v| v == 0.0));
}

#[test]
fn walking_peaks_at_two_hertz() {
    let mut spec = small_spec();
    spec.freq_jitter = 0.0;
    spec.motifs[1].noise_std = 0.0;
    let recs = generate_low_level(&spec).unwrap();
    let walk = recs.iter().find(|r| r.label() == Some("walking")).unwrap();
    let names = LL_CLASSES.map(String::from).to_vec();
    let w = windows_from(std::slice::from_ref(walk), &names, 50.0, 1.0, 1.0).unwrap();
    assert_eq!(w[0].data.cols(), 50);
    for s in &w {
        assert_eq!(dominant_frequency(s.data.row(2), 50.0), 2.0);
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = small_spec();
    assert_eq!(
        generate_high_level(&spec).unwrap(),
        generate_high_level(&spec).unwrap()
    );
    assert_eq!(
        generate_low_level(&spec).unwrap(),
        generate_low_level(&spec).unwrap()
    );
    let other = SynthSpec {
        seed: 1,
        ..spec.clone()
    };
    assert_ne!(
        generate_high_level(&spec).unwrap(),
        generate_high_level(&other).unwrap()
    );
}

#[test]
fn synth_spec_rejects_aliasing() {
    let mut spec = SynthSpec::default();
    spec.motifs[2].freq_hz = 30.0;
    assert!(spec.validate().is_err());
    let mut spec = SynthSpec::default();
    spec.motifs[1].amplitude = -1.0;
    assert!(spec.validate().is_err());
}

fn oracle_accuracy(rate: f64) -> f64 {
    let spec = small_spec();
    let names = LL_CLASSES.map(String::from).to_vec();
    let w = windows_from(&generate_low_level(&spec).unwrap(), &names, rate, 1.0, 1.0).unwrap();
    let o = SpectralOracle::new(rate);
    let hits = w
        .iter()
        .filter(|s| o.classify_motif(&s.data) == s.label)
        .count();
    hits as f64 / w.len() as f64
}

#[test]
fn spectral_oracle_recovers_motifs() {
    for rate in [15.0, 25.0, 50.0] {
        let acc = oracle_accuracy(rate);
        assert!(acc >= 0.99, "rate {rate}: oracle accuracy {acc}");
    }
}

#[test]
fn mixture_oracle_separates_high_level_classes() {
    let spec = SynthSpec {
        participants: 6,
        duration_s: 200.0,
        ..SynthSpec::default()
    };
    let names = spec.hl_class_names();
    let w = windows_from(
        &generate_high_level(&spec).unwrap(),
        &names,
        50.0,
        30.0,
        10.0,
    )
    .unwrap();
    let (train, test): (Vec<_>, Vec<_>) =
        w.into_iter().partition(|s| s.participant_id < "s04".into());
    let o = MixtureOracle::fit(SpectralOracle::new(50.0), &train, 3).unwrap();
    let preds: Vec<usize> = test.iter().map(|s| o.predict(&s.data).unwrap()).collect();
    let ys: Vec<usize> = test.iter().map(|s| s.label).collect();
    let r = evaluate(&preds, &ys, 3).unwrap();
    assert!(r.macro_f1 >= 0.9, "mixture oracle macro F1 {}", r.macro_f1);
}

fn labeled(labels: &[usize]) -> Vec<WindowedSample> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| WindowedSample {
            data: Tensor::zeros(&[6, 1]),
            label,
            participant_id: "p".into(),
            start_time: i as f64,
        })
        .collect()
}

#[test]
fn subsample_examples() {
    let mut labels = vec![0; 10];
    labels.extend([1; 3]);
    let s = labeled(&labels);
    let sub = subsample_per_class(&s, 5, 4).unwrap();
    let zeros: Vec<f64> = sub
        .iter()
        .filter(|x| x.label == 0)
        .map(|x| x.start_time)
        .collect();
    assert_eq!(zeros.len(), 5);
    let mut uniq = zeros.clone();
    uniq.dedup();
    assert_eq!(uniq.len(), 5);
    assert_eq!(sub.iter().filter(|x| x.label == 1).count(), 3);
    assert_eq!(subsample_per_class(&s, 5, 4).unwrap(), sub);
    assert!(subsample_per_class(&s, 0, 4).is_err());
}
