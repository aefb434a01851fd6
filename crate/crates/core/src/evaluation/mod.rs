//! Classification protocols over a feature table, confusion matrices and
//! macro-f1.
//!
//! Every split is reproducible from (table, seed) and is written into the
//! report. Fold construction is stratified: rows of each class, in canonical
//! key order, are shuffled and dealt round-robin into folds, with the dealing
//! position carried over from one class to the next.

pub mod objective;
pub mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureRow, FeatureTable};
use crate::forest::{train_forest, ForestError, RandomForestModel, TrainConfig};
use crate::gesture::GestureClass;
use crate::seed;
use crate::telemetry::RecordingKey;

const CLASSES: usize = GestureClass::COUNT;
const FOLD_STREAM: u64 = 0x464f_4c44;
const SUBJECT_STREAM: u64 = 0x5355_424a;
const FOREST_STREAM: u64 = 0x4652_5354;
const DRAW_STREAM: u64 = 0x4452_4157;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} truths but {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("class {class} has {found} rows, fewer than the {needed} needed")]
    TooFewSamples {
        class: GestureClass,
        found: usize,
        needed: usize,
    },
    #[error("{participants} participants cannot be split into {folds} equal groups")]
    Indivisible { participants: usize, folds: usize },
    #[error("participant {0} appears in both training and test sets")]
    Overlap(u32),
    #[error("invalid protocol parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; CLASSES]; CLASSES]);

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for i in 0..CLASSES {
            for j in 0..CLASSES {
                self.0[i][j] += other.0[i][j];
            }
        }
    }

    pub fn macro_f1(&self) -> f64 {
        macro_f1(&self.0)
    }

    /// CSV with a header row of predicted labels and one row per true label.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for g in GestureClass::ALL {
            s.push(',');
            s.push_str(g.name());
        }
        s.push('\n');
        for g in GestureClass::ALL {
            s.push_str(g.name());
            for c in self.0[g.index()] {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix(truths: &[GestureClass], predictions: &[GestureClass]) -> Result<ConfusionMatrix, EvalError> {
    if truths.len() != predictions.len() {
        return Err(EvalError::LengthMismatch(truths.len(), predictions.len()));
    }
    if truths.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::default();
    for (t, p) in truths.iter().zip(predictions) {
        m.0[t.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1 over the classes that occur as a truth or
/// a prediction. F1 is `2TP / (2TP + FP + FN)`, which equals `2PR / (P + R)`
/// and is 0 when nothing of the class was predicted correctly.
pub fn macro_f1<const N: usize>(m: &[[u64; N]; N]) -> f64 {
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 0..N {
        let tp = m[c][c];
        let actual: u64 = m[c].iter().sum();
        let predicted: u64 = m.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted == 0 {
            continue;
        }
        let (fn_, fp) = (actual - tp, predicted - tp);
        sum += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        classes += 1;
    }
    if classes == 0 {
        0.0
    } else {
        sum / classes as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Kfold,
    Inverse,
    CrossSubject,
    ParticipantSplit,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Kfold => "kfold",
            Protocol::Inverse => "inverse",
            Protocol::CrossSubject => "cross-subject",
            Protocol::ParticipantSplit => "participant-split",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub index: usize,
    pub description: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub parameters: String,
    pub forest: TrainConfig,
    pub folds: Vec<FoldResult>,
    pub mean_macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Forest settings used inside protocols; the seed is replaced per fold.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalConfig {
    pub forest: TrainConfig,
}

fn key(row: &FeatureRow) -> RecordingKey {
    RecordingKey {
        participant: row.participant,
        gesture: row.gesture,
        trial: row.trial,
    }
}

fn sorted_rows(table: &FeatureTable) -> Vec<&FeatureRow> {
    let mut rows: Vec<&FeatureRow> = table.rows.iter().collect();
    rows.sort_by_key(|r| key(r));
    rows
}

pub fn fit(rows: &[&FeatureRow], forest: &TrainConfig) -> Result<RandomForestModel, EvalError> {
    let x: Vec<&[f64]> = rows.iter().map(|r| r.features.as_slice()).collect();
    let y: Vec<GestureClass> = rows.iter().map(|r| r.gesture).collect();
    Ok(train_forest(&x, &y, forest)?)
}

fn evaluate_split(
    index: usize,
    description: String,
    train: &[&FeatureRow],
    test: &[&FeatureRow],
    forest: TrainConfig,
) -> Result<FoldResult, EvalError> {
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::Empty);
    }
    let model = fit(train, &forest)?;
    let mut truths = Vec::with_capacity(test.len());
    let mut preds = Vec::with_capacity(test.len());
    for r in test {
        truths.push(r.gesture);
        preds.push(model.predict(r.features.as_slice())?.label);
    }
    let confusion = confusion_matrix(&truths, &preds)?;
    let names = |rows: &[&FeatureRow]| rows.iter().map(|r| key(r).to_string()).collect();
    Ok(FoldResult {
        index,
        description,
        train: names(train),
        test: names(test),
        macro_f1: confusion.macro_f1(),
        confusion,
    })
}

fn assemble(
    protocol: Protocol,
    seed: u64,
    parameters: String,
    forest: TrainConfig,
    folds: Vec<FoldResult>,
) -> EvalReport {
    let mut confusion = ConfusionMatrix::default();
    for f in &folds {
        confusion.add(&f.confusion);
    }
    let mean_macro_f1 = folds.iter().map(|f| f.macro_f1).sum::<f64>() / folds.len() as f64;
    EvalReport {
        protocol,
        seed,
        parameters,
        forest,
        folds,
        mean_macro_f1,
        confusion,
    }
}

fn forest_for(config: &EvalConfig, seed: u64, fold: usize) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(seed, &[FOREST_STREAM, fold as u64]),
        ..config.forest
    }
}

/// Fold number of every row (in canonical key order).
fn stratified_folds(rows: &[&FeatureRow], k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    if k < 2 {
        return Err(EvalError::Invalid(format!("k = {k} (need at least 2)")));
    }
    let mut fold_of = vec![0; rows.len()];
    let mut next = 0;
    for g in GestureClass::ALL {
        let mut members: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].gesture == g).collect();
        if members.len() < k {
            return Err(EvalError::TooFewSamples {
                class: g,
                found: members.len(),
                needed: k,
            });
        }
        let mut rng = seed::rng(seed::derive(seed, &[FOLD_STREAM, g.index() as u64]));
        seed::shuffle(&mut rng, &mut members);
        for i in members {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    Ok(fold_of)
}

fn partition<'a>(rows: &[&'a FeatureRow], fold_of: &[usize], pick: impl Fn(usize) -> bool) -> (Vec<&'a FeatureRow>, Vec<&'a FeatureRow>) {
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (r, &f) in rows.iter().zip(fold_of) {
        if pick(f) {
            yes.push(*r);
        } else {
            no.push(*r);
        }
    }
    (yes, no)
}

/// Stratified k-fold cross-validation: each fold is the test set once.
pub fn run_kfold(table: &FeatureTable, k: usize, seed: u64, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    let rows = sorted_rows(table);
    let fold_of = stratified_folds(&rows, k, seed)?;
    let folds = (0..k)
        .map(|f| {
            let (test, train) = partition(&rows, &fold_of, |x| x == f);
            evaluate_split(f, format!("test fold {f} of {k}"), &train, &test, forest_for(config, seed, f))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(Protocol::Kfold, seed, format!("k={k}, stratified"), config.forest, folds))
}

/// How the inverse protocol picks its training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    /// With a train fraction of `1/k` (or `1 - 1/k`), build the same `k`
    /// stratified folds as k-fold and train on each single fold (or on all
    /// but one), averaging over the `k` runs. Other fractions fall back to
    /// a single draw.
    Folds,
    /// One stratified draw of `round(fraction * n_class)` rows per class.
    SingleDraw,
}

fn fold_count(fraction: f64) -> Option<(usize, bool)> {
    for (f, small) in [(fraction, true), (1.0 - fraction, false)] {
        let k = (1.0 / f).round();
        if k >= 2.0 && (k * f - 1.0).abs() < 1e-9 {
            return Some((k as usize, small));
        }
    }
    None
}

/// Train on a small stratified share of the data and test on the rest.
pub fn run_inverse(
    table: &FeatureTable,
    train_fraction: f64,
    seed: u64,
    mode: InverseMode,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::Invalid(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let rows = sorted_rows(table);
    let params = format!("train_fraction={train_fraction}");
    if let (InverseMode::Folds, Some((k, single))) = (mode, fold_count(train_fraction)) {
        let fold_of = stratified_folds(&rows, k, seed)?;
        let folds = (0..k)
            .map(|f| {
                let (chosen, rest) = partition(&rows, &fold_of, |x| x == f);
                let (train, test, what) = if single {
                    (chosen, rest, format!("train fold {f} of {k}"))
                } else {
                    (rest, chosen, format!("test fold {f} of {k}"))
                };
                evaluate_split(f, what, &train, &test, forest_for(config, seed, f))
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(assemble(
            Protocol::Inverse,
            seed,
            format!("{params}, {k} stratified folds"),
            config.forest,
            folds,
        ));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for g in GestureClass::ALL {
        let mut members: Vec<&FeatureRow> = rows.iter().copied().filter(|r| r.gesture == g).collect();
        let take = (train_fraction * members.len() as f64).round() as usize;
        if take == 0 || take == members.len() {
            return Err(EvalError::TooFewSamples {
                class: g,
                found: members.len(),
                needed: 2,
            });
        }
        let mut rng = seed::rng(seed::derive(seed, &[DRAW_STREAM, g.index() as u64]));
        seed::shuffle(&mut rng, &mut members);
        test.extend(members.split_off(take));
        train.extend(members);
    }
    train.sort_by_key(|r| key(r));
    test.sort_by_key(|r| key(r));
    let fold = evaluate_split(0, "single stratified draw".into(), &train, &test, forest_for(config, seed, 0))?;
    Ok(assemble(
        Protocol::Inverse,
        seed,
        format!("{params}, single draw"),
        config.forest,
        vec![fold],
    ))
}

/// Participants shuffled into `n_folds` equal groups; a model is trained on
/// each group and tested on every other group.
pub fn run_cross_subject(
    table: &FeatureTable,
    n_folds: usize,
    seed: u64,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if n_folds < 2 {
        return Err(EvalError::Invalid(format!("{n_folds} groups (need at least 2)")));
    }
    let mut participants = table.participants();
    if !participants.len().is_multiple_of(n_folds) || participants.is_empty() {
        return Err(EvalError::Indivisible {
            participants: participants.len(),
            folds: n_folds,
        });
    }
    let mut rng = seed::rng(seed::derive(seed, &[SUBJECT_STREAM]));
    seed::shuffle(&mut rng, &mut participants);
    let size = participants.len() / n_folds;
    let groups: Vec<Vec<u32>> = participants
        .chunks(size)
        .map(|c| {
            let mut g = c.to_vec();
            g.sort_unstable();
            g
        })
        .collect();
    let rows = sorted_rows(table);
    let mut folds = Vec::new();
    for (a, train_group) in groups.iter().enumerate() {
        for (b, test_group) in groups.iter().enumerate() {
            if a == b {
                continue;
            }
            let index = folds.len();
            folds.push(participant_fold(
                index,
                &rows,
                train_group,
                test_group,
                forest_for(config, seed, index),
            )?);
        }
    }
    Ok(assemble(
        Protocol::CrossSubject,
        seed,
        format!("groups={n_folds}, group size {size}"),
        config.forest,
        folds,
    ))
}

/// Train on the rows of `train_participants`, test on `test_participants`.
pub fn run_participant_split(
    table: &FeatureTable,
    train_participants: &[u32],
    test_participants: &[u32],
    seed: u64,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let rows = sorted_rows(table);
    let fold = participant_fold(0, &rows, train_participants, test_participants, forest_for(config, seed, 0))?;
    Ok(assemble(
        Protocol::ParticipantSplit,
        seed,
        "explicit participant lists".into(),
        config.forest,
        vec![fold],
    ))
}

fn participant_fold(
    index: usize,
    rows: &[&FeatureRow],
    train_participants: &[u32],
    test_participants: &[u32],
    forest: TrainConfig,
) -> Result<FoldResult, EvalError> {
    if let Some(p) = train_participants.iter().find(|p| test_participants.contains(p)) {
        return Err(EvalError::Overlap(*p));
    }
    let train: Vec<&FeatureRow> = rows.iter().copied().filter(|r| train_participants.contains(&r.participant)).collect();
    let test: Vec<&FeatureRow> = rows.iter().copied().filter(|r| test_participants.contains(&r.participant)).collect();
    let list = |ps: &[u32]| ps.iter().map(|p| format!("p{p:02}")).collect::<Vec<_>>().join(" ");
    evaluate_split(
        index,
        format!("train [{}] test [{}]", list(train_participants), list(test_participants)),
        &train,
        &test,
        forest,
    )
}
