//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p kinegest-cli --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use futures_util::{SinkExt, StreamExt};
use kinegest::arm::{forward_kinematics, jacobian, solve_ik_position, IkSettings, JointVector, KinematicChain};
use kinegest::evaluation::objective::{summarize, Measure};
use kinegest::evaluation::stats::{bonferroni, friedman_test, wilcoxon_signed_rank};
use kinegest::features::{extract_features, FEATURE_COUNT};
use kinegest::forest::{ForestError, RandomForestModel};
use kinegest::gesture::synth_path;
use kinegest::synth::{canonical_recording, DatasetConfig};
use kinegest::telemetry::{duration, max_displacement, read_dataset, write_dataset, JOINTS};
use kinegest::{GestureClass, JointSample, Recording, StyleProfile};
use kinegest_live::{stroke_from_path, ClientMessage, Effector, Engine, ServerMessage, ServiceOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use tokio_tungstenite::tungstenite::Message;

type Outcome = (bool, String);
type Check = fn(&Workspace) -> Outcome;

fn kinegest(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_kinegest"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn f1_of(report: &Path) -> f64 {
    let json: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    json["mean_macro_f1"].as_f64().unwrap()
}

struct Workspace {
    root: TempDir,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

fn pipeline(ws: &Workspace) -> Outcome {
    let data = ws.path("data");
    let start = Instant::now();
    kinegest(&["synth", "--participants", "16", "--trials", "5", "--seed", "42", "--out", p(&data)]);
    let mut f1 = Vec::new();
    for (protocol, extra) in [("kfold", "5"), ("inverse", "0.2"), ("cross-subject", "2")] {
        let out = ws.path(&format!("{protocol}.json"));
        let flag = if protocol == "inverse" { "--train-fraction" } else { "--folds" };
        kinegest(&["eval", "--protocol", protocol, "--data", p(&data), "--seed", "7", flag, extra, "--out", p(&out)]);
        f1.push(f1_of(&out));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = f1[0] >= 0.95 && f1[1] >= 0.90 && f1[2] >= 0.80 && secs < 120.0;
    (
        pass,
        format!(
            "5-fold {:.3} (>= 0.95), inverse 20-80 {:.3} (>= 0.90), cross-subject 2-fold {:.3} (>= 0.80), synth+eval {secs:.1} s (< 120 s)",
            f1[0], f1[1], f1[2]
        ),
    )
}

/// Independent restatement of the extraction with explicit loops.
fn feature_oracle(rec: &Recording) -> Vec<f64> {
    let mut out = vec![0.0; FEATURE_COUNT];
    for family in 0..3 {
        for joint in 0..JOINTS {
            let xs: Vec<f64> = rec
                .samples()
                .iter()
                .map(|s| [s.q[joint], s.dq[joint], s.tau[joint]][family])
                .collect();
            let (mut lo, mut hi, mut acc) = (xs[0], xs[0], 0.0);
            for &x in &xs {
                if x < lo {
                    lo = x;
                }
                if x > hi {
                    hi = x;
                }
                acc += x - xs[0];
            }
            let mean = xs[0] + acc / xs.len() as f64;
            let mut ss = 0.0;
            for &x in &xs {
                ss += (x - mean) * (x - mean);
            }
            let base = family * 28 + joint * 4;
            out[base..base + 4].copy_from_slice(&[lo, hi, mean, (ss / xs.len() as f64).sqrt()]);
        }
    }
    out
}

fn features(ws: &Workspace) -> Outcome {
    let data = read_dataset(&ws.path("data")).unwrap();
    let all_84 = data.recordings().iter().all(|r| extract_features(r).as_slice().len() == 84);
    let mut rng = ChaCha8Rng::seed_from_u64(84);
    let mut mismatches = 0;
    for i in 0..100 {
        // Half synthetic-dataset recordings, half random telemetry.
        let rec = if i % 2 == 0 {
            data.recordings().choose(&mut rng).unwrap().clone()
        } else {
            let n = rng.gen_range(2..400);
            let samples = (0..n)
                .map(|k| JointSample {
                    t: k as f64 * 0.01,
                    q: std::array::from_fn(|_| rng.gen_range(-2.9..2.9)),
                    dq: std::array::from_fn(|_| rng.gen_range(-3.0..3.0)),
                    tau: std::array::from_fn(|_| rng.gen_range(-40.0..40.0)),
                })
                .collect();
            Recording::new(GestureClass::LS, 0, 0, samples).unwrap()
        };
        let f = extract_features(&rec);
        let o = feature_oracle(&rec);
        mismatches += (0..FEATURE_COUNT).filter(|&i| f[i].to_bits() != o[i].to_bits()).count();
    }
    (
        all_84 && mismatches == 0,
        format!(
            "length 84 on all {} recordings: {all_84}; oracle mismatches on 100 recordings: {mismatches} (tolerance 0)",
            data.recordings().len()
        ),
    )
}

/// Uniform inside the joint limits shrunk by `margin`.
fn random_q(chain: &KinematicChain, rng: &mut ChaCha8Rng, margin: f64) -> JointVector {
    let v = chain
        .joints()
        .iter()
        .map(|j| rng.gen_range(j.limit.min + margin..=j.limit.max - margin))
        .collect();
    chain.joint_vector(v).unwrap()
}

fn kinematics(_: &Workspace) -> Outcome {
    let chain = KinematicChain::panda();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = random_q(&chain, &mut rng, 2.0 * h);
        let jac = jacobian(&chain, &q).unwrap();
        for j in 0..chain.dof() {
            let mut plus = q.as_slice().to_vec();
            let mut minus = q.as_slice().to_vec();
            plus[j] += h;
            minus[j] -= h;
            let fk = |v: Vec<f64>| forward_kinematics(&chain, &chain.joint_vector(v).unwrap()).unwrap().position;
            let fd = (fk(plus) - fk(minus)) / (2.0 * h);
            for k in 0..3 {
                worst = worst.max((fd[k] - jac[(k, j)]).abs());
            }
        }
    }
    let settings = IkSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let home = chain.home();
    let mut solved = 0;
    for _ in 0..1000 {
        let q = random_q(&chain, &mut rng, 0.0);
        let target = forward_kinematics(&chain, &q).unwrap().position;
        if let Ok(sol) = solve_ik_position(&chain, &target, &home, &settings) {
            let reached = forward_kinematics(&chain, &sol).unwrap().position;
            if (reached - target).norm() <= 1e-4 {
                solved += 1;
            }
        }
    }
    (
        worst < 1e-5 && solved >= 990,
        format!("Jacobian vs central differences max error {worst:.2e} (< 1e-5); IK residual <= 1e-4 m on {solved}/1000 targets (>= 990)"),
    )
}

fn calibration(ws: &Workspace) -> Outcome {
    let config = DatasetConfig::default();
    let mut pass = true;
    let mut canon = Vec::new();
    for g in GestureClass::ALL {
        let rec = canonical_recording(g, &config).unwrap();
        let d = duration(&rec);
        let x = max_displacement(&rec, &config.chain).unwrap();
        // Reference values carry two decimals.
        pass &= (d - g.canonical_duration()).abs() < 1e-9 && (x - g.canonical_max_displacement()).abs() <= 0.005;
        canon.push(format!("{g} {d:.2} s/{x:.3} m"));
    }
    let data = read_dataset(&ws.path("data")).unwrap();
    let mut worst: f64 = 0.0;
    for (m, reference) in [
        (Measure::Duration, GestureClass::canonical_duration as fn(GestureClass) -> f64),
        (Measure::Distance, GestureClass::canonical_max_displacement),
    ] {
        let s = summarize(&data, &config.chain, m).unwrap();
        for g in &s.gestures {
            worst = worst.max((g.median / reference(g.gesture) - 1.0).abs());
        }
    }
    pass &= worst <= 0.10;
    (
        pass,
        format!(
            "canonical {}; worst population median deviation {:.1}% (<= 10%)",
            canon.join(", "),
            worst * 100.0
        ),
    )
}

fn permutation_p(data: &[Vec<f64>], draws: usize, seed: u64) -> f64 {
    let k = data[0].len();
    let ranks: Vec<Vec<f64>> = data
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    let below = row.iter().filter(|&&w| w < v).count() as f64;
                    let equal = row.iter().filter(|&&w| w == v).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        })
        .collect();
    let stat = |rows: &[Vec<f64>]| -> f64 { (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>().powi(2)).sum() };
    let observed = stat(&ranks);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = ranks.clone();
    let mut hits = 0;
    for _ in 0..draws {
        for row in work.iter_mut() {
            row.shuffle(&mut rng);
        }
        if stat(&work) >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

fn statistics(_: &Workspace) -> Outcome {
    let b: Vec<f64> = (0..16).map(|i| 10.0 + i as f64).collect();
    let a: Vec<f64> = b.iter().enumerate().map(|(i, x)| x + 1.0 + i as f64 * 0.5).collect();
    let w = wilcoxon_signed_rank(&a, &b).unwrap();
    let (z, r) = (w.z.unwrap(), w.effect_size_r.unwrap());
    let wilcoxon_ok = w.statistic == 136.0 && (z - 3.52).abs() <= 0.01 && (r - 0.62).abs() <= 0.01;

    let consistent: Vec<Vec<f64>> = (0..16).map(|i| (0..4).map(|j| (j * 10 + i) as f64).collect()).collect();
    let chi = friedman_test(&consistent).unwrap().statistic;
    let friedman_ok = (chi - 48.0).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(603);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let data: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let exact = friedman_test(&data).unwrap().p_raw;
        worst = worst.max((exact - permutation_p(&data, 100_000, rng.gen())).abs());
    }
    let clamp = bonferroni(0.4, 6).unwrap();
    (
        wilcoxon_ok && friedman_ok && worst <= 0.02 && clamp == 1.0,
        format!(
            "Wilcoxon W {} Z {z:.3} r {r:.3} (136, 3.52±0.01, 0.62±0.01); Friedman consistent chi2 {chi} (48±1e-9); \
             permutation p gap {worst:.4} (<= 0.02); Bonferroni(0.4, 6) = {clamp}",
            w.statistic
        ),
    )
}

fn determinism(ws: &Workspace) -> Outcome {
    let data = ws.path("data");
    let single = ws.path("data-1t");
    kinegest(&["--threads", "1", "synth", "--participants", "16", "--trials", "5", "--seed", "42", "--out", p(&single)]);
    let synth_same = dir_bytes(&data) == dir_bytes(&single);

    let models: Vec<Vec<u8>> = ["1", "4", "4"]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let out = ws.path(&format!("model-{i}.json"));
            kinegest(&["--threads", t, "train", "--data", p(&data), "--seed", "7", "--out", p(&out)]);
            fs::read(out).unwrap()
        })
        .collect();
    let train_same = models.windows(2).all(|w| w[0] == w[1]);

    let reference = fs::read(ws.path("kfold.json")).unwrap();
    let mut eval_same = true;
    for t in ["1", "3"] {
        let out = ws.path(&format!("kfold-{t}t.json"));
        kinegest(&["--threads", t, "eval", "--protocol", "kfold", "--data", p(&data), "--seed", "7", "--out", p(&out)]);
        eval_same &= fs::read(out).unwrap() == reference;
    }
    (
        synth_same && train_same && eval_same,
        format!("byte-identical reruns across thread counts: synth {synth_same}, train {train_same}, eval {eval_same}"),
    )
}

fn persistence(ws: &Workspace) -> Outcome {
    let data = read_dataset(&ws.path("data")).unwrap();
    let copy = ws.path("data-copy");
    write_dataset(&data, &copy).unwrap();
    let reread = read_dataset(&copy).unwrap();
    let dataset_ok = reread == data && dir_bytes(&copy) == dir_bytes(&ws.path("data"));

    let text = fs::read_to_string(ws.path("model-0.json")).unwrap();
    let model = RandomForestModel::from_json(&text).unwrap();
    let model_ok = model.to_json() == text && RandomForestModel::from_json(&model.to_json()).unwrap() == model;

    let victim = copy.join("p03_HS_t2.csv");
    let mut lines: Vec<String> = fs::read_to_string(&victim).unwrap().lines().map(String::from).collect();
    lines[6] = lines[6].replacen(',', ",oops,", 1);
    fs::write(&victim, lines.join("\n") + "\n").unwrap();
    let csv_err = read_dataset(&copy).unwrap_err().to_string();
    let csv_located = csv_err.contains("p03_HS_t2.csv:7");

    let broken = text.replacen("\"trees\":[", "\"trees\":[{", 1);
    let model_located = matches!(RandomForestModel::from_json(&broken), Err(ForestError::Malformed { line: 1, column, .. }) if column > 0);
    let magic = matches!(
        RandomForestModel::from_json(&text.replacen("kinegest-forest", "other", 1)),
        Err(ForestError::BadMagic(_))
    );
    (
        dataset_ok && model_ok && csv_located && model_located && magic,
        format!(
            "dataset round trip {dataset_ok}, model round trip {model_ok}; malformed CSV -> \"{csv_err}\"; \
             malformed model located {model_located}; wrong magic rejected {magic}"
        ),
    )
}

fn live_loop(ws: &Workspace) -> Outcome {
    let text = fs::read_to_string(ws.path("model-0.json")).unwrap();
    let engine = Arc::new(Engine::new(RandomForestModel::from_json(&text).unwrap()));
    let logs = ws.path("strokes");
    fs::create_dir_all(&logs).unwrap();
    let origin = engine.synth.writing_origin;
    let path = synth_path(GestureClass::LS, &StyleProfile::canonical(), &origin, &engine.synth).unwrap();
    let mut msgs = vec![ClientMessage::Hello { effector: Effector::Knob }];
    msgs.extend(stroke_from_path(&path, &origin, 100.0));

    let runtime = tokio::runtime::Runtime::new().unwrap();
    let online = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let options = ServiceOptions {
            static_dir: None,
            stroke_log: Some(logs.clone()),
        };
        tokio::spawn(kinegest_live::serve(listener, engine, options));
        let (mut socket, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
        for m in &msgs {
            socket.send(Message::Text(serde_json::to_string(m).unwrap().into())).await.unwrap();
        }
        loop {
            if let Message::Text(t) = socket.next().await.unwrap().unwrap() {
                let m: ServerMessage = serde_json::from_str(&t).unwrap();
                if !matches!(m, ServerMessage::ArmState { .. }) {
                    return m;
                }
            }
        }
    });
    let ServerMessage::Prediction { label, votes, .. } = online else {
        return (false, format!("no prediction: {online:?}"));
    };
    let share = votes[GestureClass::LS.index()] as f64 / votes.iter().sum::<u32>() as f64;
    let replies = ws.path("replayed.jsonl");
    kinegest(&[
        "replay",
        "--model",
        p(&ws.path("model-0.json")),
        "--log",
        p(&logs.join("session-1.jsonl")),
        "--out",
        p(&replies),
    ]);
    let offline = fs::read_to_string(&replies)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<ServerMessage>(l).unwrap())
        .find(|m| matches!(m, ServerMessage::Prediction { .. }));
    let same = matches!(&offline, Some(ServerMessage::Prediction { label: l, votes: v, .. }) if *l == label && *v == votes);
    (
        label == GestureClass::LS && share >= 0.7 && same,
        format!("WebSocket canonical LS -> {label} with vote share {share:.2} (>= 0.7); offline CLI replay identical: {same}"),
    )
}

fn main() {
    let ws = Workspace {
        root: TempDir::new().unwrap(),
    };
    // Later criteria reuse the dataset, reports and models of earlier ones.
    let criteria: [(&str, &str, Check); 8] = [
        ("PRIMARY", "pipeline accuracy", pipeline),
        ("PRIMARY", "feature contract", features),
        ("PRIMARY", "kinematics", kinematics),
        ("PRIMARY", "gesture calibration", calibration),
        ("PRIMARY", "statistics anchors", statistics),
        ("PRIMARY", "determinism", determinism),
        ("PRIMARY", "persistence", persistence),
        ("SECONDARY", "live loop", live_loop),
    ];
    let mut failed = 0;
    for (tier, name, check) in criteria {
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(|| check(&ws))) {
            Ok(outcome) => outcome,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += usize::from(!pass);
        println!("{} [{tier}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
