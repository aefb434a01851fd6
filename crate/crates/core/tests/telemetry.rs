use std::fs;

use kinegest::arm::KinematicChain;
use kinegest::features::{extract_features, FEATURE_COUNT};
use kinegest::synth::{canonical_recording, record_path, synthesize_dataset, DatasetConfig};
use kinegest::telemetry::{
    duration, max_displacement, read_dataset, sample_trajectory, write_dataset, Dataset,
    EffortModel, TelemetryError, TimedJoints, JOINTS, MANIFEST_FILE,
};
use kinegest::gesture::{synth_path, GestureClass, StyleProfile, SynthConfig};
use kinegest::{seed, Recording};

fn small_dataset() -> Dataset {
    synthesize_dataset(2, 2, 9, &DatasetConfig::default()).unwrap()
}

fn noiseless() -> DatasetConfig {
    DatasetConfig {
        effort: EffortModel::noiseless(),
        ..Default::default()
    }
}

#[test]
fn ramp_has_exact_interior_velocity() {
    let mut q1 = [0.0; JOINTS];
    q1[0] = 1.0;
    let traj = [TimedJoints { t: 0.0, q: [0.0; JOINTS] }, TimedJoints { t: 1.0, q: q1 }];
    let s = sample_trajectory(&traj, 100.0, &EffortModel::noiseless(), &mut seed::rng(0)).unwrap();
    assert_eq!(s.len(), 101);
    for x in &s[1..100] {
        assert!((x.dq[0] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sample_count_follows_floor_rule() {
    for (span, rate, expect) in [(1.0, 100.0, 101), (1.78, 100.0, 179), (0.255, 100.0, 26), (2.0, 30.0, 61)] {
        let traj = [TimedJoints { t: 0.0, q: [0.0; JOINTS] }, TimedJoints { t: span, q: [0.0; JOINTS] }];
        let s = sample_trajectory(&traj, rate, &EffortModel::default(), &mut seed::rng(1)).unwrap();
        assert_eq!(s.len(), expect, "span {span} rate {rate}");
        assert!(s.iter().all(|x| x.dq == [0.0; JOINTS]));
    }
}

#[test]
fn span_below_one_period_is_too_short() {
    let traj = [TimedJoints { t: 0.0, q: [0.0; JOINTS] }, TimedJoints { t: 0.005, q: [0.0; JOINTS] }];
    let err = sample_trajectory(&traj, 100.0, &EffortModel::default(), &mut seed::rng(1)).unwrap_err();
    assert!(matches!(err, TelemetryError::TooShort(_)));
}

#[test]
fn effort_model_special_cases() {
    let q = [0.3, -0.7, 0.1, -2.0, 0.2, 1.4, 0.6];
    let m = EffortModel::noiseless();
    let tau = m.effort(&q, &[0.0; JOINTS], &mut seed::rng(0));
    for j in 0..JOINTS {
        assert_eq!(tau[j], m.gravity[j] * q[j].cos());
    }
    let viscous = EffortModel {
        gravity: [0.0; JOINTS],
        ..EffortModel::noiseless()
    };
    let dq = [1.0, -2.0, 0.5, 0.0, 3.0, -1.0, 0.25];
    let tau = viscous.effort(&q, &dq, &mut seed::rng(0));
    for j in 0..JOINTS {
        assert_eq!(tau[j], 0.8 * dq[j]);
    }
}

#[test]
fn canonical_durations_and_displacements() {
    let config = noiseless();
    for g in GestureClass::ALL {
        let rec = canonical_recording(g, &config).unwrap();
        assert!((duration(&rec) - g.canonical_duration()).abs() < 1e-9, "{g}");
        let d = max_displacement(&rec, &config.chain).unwrap();
        assert!(
            (d - g.canonical_max_displacement()).abs() <= 0.005,
            "{g}: {d} vs {}",
            g.canonical_max_displacement()
        );
    }
}

#[test]
fn handshake_loads_the_shoulder_more_than_writing() {
    let config = DatasetConfig::default();
    let mean_abs_tau2 = |g| {
        let rec = canonical_recording(g, &config).unwrap();
        rec.samples().iter().map(|s| s.tau[1].abs()).sum::<f64>() / rec.samples().len() as f64
    };
    let (hs, ls) = (mean_abs_tau2(GestureClass::HS), mean_abs_tau2(GestureClass::LS));
    assert!(hs > ls, "HS {hs} vs LS {ls}");
}

#[test]
fn resampling_from_1khz_barely_moves_features() {
    let config = noiseless();
    let synth = SynthConfig {
        path_rate: 1000.0,
        ..config.synth
    };
    let path = synth_path(
        GestureClass::LS,
        &StyleProfile::canonical(),
        &synth.origin_for(GestureClass::LS),
        &synth,
    )
    .unwrap();
    let fast = record_path(&path, 0, 0, 0, &DatasetConfig { sample_rate: 1000.0, ..noiseless() }).unwrap();
    let slow = record_path(&path, 0, 0, 0, &config).unwrap();
    let (ff, fs) = (extract_features(&fast), extract_features(&slow));
    for ch in 0..FEATURE_COUNT / 4 {
        let magnitude = (0..4).map(|s| ff[ch * 4 + s].abs()).fold(0.0, f64::max);
        for s in 0..4 {
            let i = ch * 4 + s;
            let diff = (ff[i] - fs[i]).abs();
            assert!(
                diff <= 0.01 * magnitude,
                "feature {i}: {} at 1 kHz vs {} at 100 Hz",
                ff[i],
                fs[i]
            );
        }
    }
}

#[test]
fn measures_ignore_relabeling() {
    let chain = KinematicChain::panda();
    let rec = canonical_recording(GestureClass::LW, &DatasetConfig::default()).unwrap();
    let other = rec.relabeled(12, 3);
    assert_eq!(duration(&rec), duration(&other));
    assert_eq!(max_displacement(&rec, &chain).unwrap(), max_displacement(&other, &chain).unwrap());
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest(), data.manifest());
    assert_eq!(back.recordings().len(), data.recordings().len());
    for (a, b) in data.recordings().iter().zip(back.recordings()) {
        assert_eq!(a.key(), b.key());
        for (x, y) in a.samples().iter().zip(b.samples()) {
            let bits = |s: &kinegest::JointSample| {
                std::iter::once(s.t)
                    .chain(s.q)
                    .chain(s.dq)
                    .chain(s.tau)
                    .map(f64::to_bits)
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(x), bits(y));
        }
    }
    let again = tempfile::tempdir().unwrap();
    write_dataset(&back, again.path()).unwrap();
    for entry in fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(dir.path().join(&name)).unwrap(),
            fs::read(again.path().join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn csv_layout() {
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("p01_HS_t1.csv")).unwrap();
    let mut lines = text.split('\n');
    let header = lines.next().unwrap();
    let mut expect = vec!["t".to_string()];
    for family in ["q", "dq", "tau"] {
        expect.extend((1..=7).map(|j| format!("{family}{j}")));
    }
    assert_eq!(header, expect.join(","));
    assert!(!text.contains('\r'));
    assert!(lines.filter(|l| !l.is_empty()).all(|l| l.split(',').count() == 22));
}

#[test]
fn missing_trial_is_named() {
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&path).unwrap().replace("\"trials\": 2", "\"trials\": 3");
    fs::write(&path, manifest).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("p00_LS_t2"), "{err}");
}

#[test]
fn unexpected_file_is_rejected() {
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    fs::copy(dir.path().join("p00_LS_t0.csv"), dir.path().join("p07_LS_t0.csv")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("p07_LS_t0"), "{err}");
}

#[test]
fn unknown_schema_version_is_rejected() {
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
    fs::write(&path, manifest).unwrap();
    assert!(matches!(
        read_dataset(dir.path()).unwrap_err(),
        TelemetryError::SchemaVersion { found: 2, .. }
    ));
}

#[test]
fn malformed_row_reports_file_and_line() {
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let path = dir.path().join("p01_LW_t0.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let rest = lines[4][lines[4].find(',').unwrap()..].to_string();
    lines[4] = format!("abc{rest}");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    match read_dataset(dir.path()).unwrap_err() {
        TelemetryError::Malformed { path: p, line, .. } => {
            assert!(p.ends_with("p01_LW_t0.csv"));
            assert_eq!(line, 5);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn short_row_is_located() {
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let path = dir.path().join("p00_GL_t1.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let cut = &lines[2][..lines[2].rfind(',').unwrap()];
    lines[2] = cut;
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("p00_GL_t1.csv:3"), "{err}");
}

#[test]
fn recordings_reject_bad_time_axes() {
    let s = |t| kinegest::JointSample {
        t,
        q: [0.0; JOINTS],
        dq: [0.0; JOINTS],
        tau: [0.0; JOINTS],
    };
    assert!(Recording::new(GestureClass::LS, 0, 0, vec![s(0.0)]).is_err());
    assert!(Recording::new(GestureClass::LS, 0, 0, vec![s(0.1), s(0.2)]).is_err());
    assert!(Recording::new(GestureClass::LS, 0, 0, vec![s(0.0), s(0.0)]).is_err());
    let two = Recording::new(GestureClass::LS, 0, 0, vec![s(0.0), s(0.01)]).unwrap();
    assert_eq!(duration(&two), 0.01);
}
