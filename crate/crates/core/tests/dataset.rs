use kinegest::evaluation::objective::{by_gesture, summarize, Measure};
use kinegest::evaluation::stats::{iqr, median};
use kinegest::gesture::{make_profile, GestureClass};
use kinegest::synth::{synthesize_dataset, DatasetConfig};
use kinegest::telemetry::write_dataset;
use kinegest::KinematicChain;

#[test]
fn one_of_each() {
    let d = synthesize_dataset(1, 1, 77, &DatasetConfig::default()).unwrap();
    assert_eq!(d.recordings().len(), 4);
    let gestures: Vec<_> = d.recordings().iter().map(|r| r.gesture()).collect();
    assert_eq!(gestures, GestureClass::ALL);
}

#[test]
fn zero_counts_are_rejected() {
    assert!(synthesize_dataset(0, 5, 1, &DatasetConfig::default()).is_err());
    assert!(synthesize_dataset(3, 0, 1, &DatasetConfig::default()).is_err());
}

#[test]
fn ls_duration_spread_across_sixteen_participants() {
    let durations: Vec<f64> = (0..16)
        .map(|p| GestureClass::LS.canonical_duration() / make_profile(p, 42).speed)
        .collect();
    let spread = iqr(&durations).unwrap();
    assert!((0.84..=1.26).contains(&spread), "IQR {spread}");
}

#[test]
fn default_population_is_calibrated() {
    let d = synthesize_dataset(16, 5, 42, &DatasetConfig::default()).unwrap();
    assert_eq!(d.recordings().len(), 320);
    for p in 0..16 {
        assert_eq!(d.recordings().iter().filter(|r| r.participant_id() == p).count(), 20);
    }
    let chain = KinematicChain::panda();
    let durations = by_gesture(&d, &chain, Measure::Duration).unwrap();
    let distances = by_gesture(&d, &chain, Measure::Distance).unwrap();
    for g in GestureClass::ALL {
        let md = median(&durations[g.index()]).unwrap();
        let mx = median(&distances[g.index()]).unwrap();
        let rd = md / g.canonical_duration() - 1.0;
        let rx = mx / g.canonical_max_displacement() - 1.0;
        assert!(rd.abs() <= 0.10, "{g} duration median {md} ({:+.1}%)", rd * 100.0);
        assert!(rx.abs() <= 0.10, "{g} distance median {mx} ({:+.1}%)", rx * 100.0);
    }

    let summary = summarize(&d, &chain, Measure::Duration).unwrap();
    assert_eq!(summary.gestures.len(), 4);
    assert_eq!(summary.pairwise.len(), 6);
    assert!(summary.friedman.statistic <= 48.0);
    assert!(summary.friedman.p_raw < 0.001);
}

#[test]
fn synthesis_is_independent_of_thread_count() {
    let files = |threads| {
        let dir = tempfile::tempdir().unwrap();
        let d = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| synthesize_dataset(3, 2, 5, &DatasetConfig::default()).unwrap());
        write_dataset(&d, dir.path()).unwrap();
        let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        out.sort();
        out
    };
    let one = files(1);
    assert_eq!(one.len(), 3 * 4 * 2 + 1);
    assert_eq!(one, files(6));
}
