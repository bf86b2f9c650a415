//! Downstream evaluation: classifiers on frozen encodings, joint multi-task
//! training, linear probes, premise selection and CSV reports.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use indexmap::IndexMap;
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledExample, Task};
use crate::encoders::{EncoderConfig, EncoderModel, Linear};
use crate::fol::{CharVocab, Formula};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Scalar, Var};

/// Hidden layers of the property classifier.
pub const HIDDEN_LAYERS: usize = 6;
pub const HIDDEN_WIDTH: usize = 128;
/// Smallest number of examples per present class a classifier accepts.
pub const MIN_PER_CLASS: usize = 10;
/// Number of validation points over a classifier run.
pub const VALIDATIONS: usize = 30;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no examples")]
    Empty,
    #[error("dataset mixes tasks {0} and {1}")]
    MixedTasks(Task, Task),
    #[error("expected {expected} examples, got {got}")]
    WrongTask { expected: Task, got: Task },
    #[error("class {label} has {count} examples; at least {MIN_PER_CLASS} are needed")]
    TooFewExamples { label: u8, count: usize },
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("encoder parameters changed during frozen training")]
    EncoderModified,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec { train: 0.8, valid: 0.1, test: 0.1, seed }
    }
}

/// Indices into the example list, sorted within each part.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split. Identical `(a, b)` pairs form one group that lands in a
/// single part, so no string pair occurs in two parts; each class fills its
/// valid and test quotas group by group.
pub fn split_examples(examples: &[LabeledExample], spec: &SplitSpec) -> Split {
    let mut groups: IndexMap<(&str, Option<&str>), Vec<usize>> = IndexMap::new();
    for (i, e) in examples.iter().enumerate() {
        groups.entry((e.a.as_str(), e.b.as_deref())).or_default().push(i);
    }
    let mut by_class: BTreeMap<u8, Vec<&Vec<usize>>> = BTreeMap::new();
    for members in groups.values() {
        by_class.entry(examples[members[0]].label).or_default().push(members);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = Split::default();
    for mut class_groups in by_class.into_values() {
        class_groups.shuffle(&mut rng);
        let total: usize = class_groups.iter().map(|g| g.len()).sum();
        let test_quota = (total as f64 * spec.test).round() as usize;
        let valid_quota = (total as f64 * spec.valid).round() as usize;
        let (mut in_test, mut in_valid) = (0, 0);
        for members in class_groups {
            let part = if in_test + members.len() <= test_quota {
                in_test += members.len();
                &mut split.test
            } else if in_valid + members.len() <= valid_quota {
                in_valid += members.len();
                &mut split.valid
            } else {
                &mut split.train
            };
            part.extend_from_slice(members);
        }
    }
    split.train.sort_unstable();
    split.valid.sort_unstable();
    split.test.sort_unstable();
    split
}

/// Feed-forward binary classifier: six ReLU layers of width 128 and one
/// output logit.
#[derive(Debug, Clone)]
pub struct ClassifierNet {
    hidden: Vec<Linear>,
    out: Linear,
    input_dim: usize,
}

impl ClassifierNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, input_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut hidden = Vec::with_capacity(HIDDEN_LAYERS);
        let mut width = input_dim;
        for i in 0..HIDDEN_LAYERS {
            hidden.push(Linear::new(store, &format!("{prefix}.hidden{i}"), width, HIDDEN_WIDTH, rng));
            width = HIDDEN_WIDTH;
        }
        let out = Linear::new(store, &format!("{prefix}.out"), width, 1, rng);
        ClassifierNet { hidden, out, input_dim }
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Logits `[n, 1]` for inputs `[n, input_dim]`.
    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let mut h = x;
        for layer in &self.hidden {
            let z = layer.apply(g, h);
            h = g.relu(z);
        }
        self.out.apply(g, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "desk_adam")]
    pub adam: AdamConfig,
    pub seed: u64,
    /// Steps between validations; `steps / 30` when absent.
    #[serde(default)]
    pub eval_every: Option<usize>,
}

fn default_batch() -> usize {
    32
}

fn desk_adam() -> AdamConfig {
    AdamConfig { lr: 1e-3, ..AdamConfig::default() }
}

impl ClassifierConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        ClassifierConfig { steps, batch: default_batch(), adam: desk_adam(), seed, eval_every: None }
    }

    fn validation_interval(&self) -> usize {
        self.eval_every.unwrap_or(self.steps / VALIDATIONS).max(1)
    }
}

/// Step count for a training set of `train_len` examples: ten passes, at
/// least 3000 steps.
pub fn desk_steps(train_len: usize, batch: usize) -> usize {
    (10 * train_len / batch.max(1)).max(3000)
}

/// One row of the classification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub arch: String,
    pub mode: String,
    /// Test accuracy of the checkpoint with the lowest validation loss.
    pub test_accuracy: f64,
    pub best_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub test_accuracy: f64,
    pub best_step: usize,
    pub best_valid_loss: f64,
    /// (step, validation loss) at every validation point.
    pub valid_curve: Vec<(usize, f64)>,
}

fn check_class_sizes(labels: &[u8]) -> Result<(), EvalError> {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    match counts.into_iter().find(|&(_, c)| c < MIN_PER_CLASS) {
        Some((label, count)) => Err(EvalError::TooFewExamples { label, count }),
        None => Ok(()),
    }
}

fn feature_matrix(features: &[Vec<f32>], rows: &[usize]) -> Vec<f32> {
    rows.iter().flat_map(|&i| features[i].iter().copied()).collect()
}

/// Per-column z-scoring with statistics of a subset of rows; constant
/// columns are only centred.
struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit<T: Copy + Into<f64>>(rows: &[Vec<T>], subset: &[usize]) -> Self {
        let d = rows[0].len();
        let n = subset.len().max(1) as f64;
        let col = |i: usize, j: usize| -> f64 { rows[i][j].into() };
        let mean: Vec<f64> = (0..d).map(|j| subset.iter().map(|&i| col(i, j)).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = subset.iter().map(|&i| (col(i, j) - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-12 { v.sqrt() } else { 1.0 }
            })
            .collect();
        Standardizer { mean, std }
    }

    fn apply<T: Copy + Into<f64>>(&self, row: &[T]) -> Vec<f64> {
        row.iter().zip(self.mean.iter().zip(&self.std)).map(|(&x, (m, s))| (x.into() - m) / s).collect()
    }
}

/// Mean loss and accuracy of `net` over `rows`, in chunks.
fn evaluate(store: &ParamStore<f32>, net: &ClassifierNet, features: &[Vec<f32>], labels: &[u8], rows: &[usize]) -> (f64, f64) {
    const CHUNK: usize = 512;
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in rows.chunks(CHUNK) {
        let mut g = Graph::new(store);
        let x = g.constant(chunk.len(), net.input_dim, feature_matrix(features, chunk));
        let logits = net.logits(&mut g, x);
        let y: Vec<f64> = chunk.iter().map(|&i| f64::from(labels[i])).collect();
        let l = g.binary_cross_entropy(logits, &y);
        loss += g.scalar(l).as_f64() * chunk.len() as f64;
        correct += g.value(logits).iter().zip(&y).filter(|(&z, &t)| (z > 0.0) == (t > 0.5)).count();
    }
    let n = rows.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Trains a [`ClassifierNet`] on precomputed features and reports the test
/// accuracy of the checkpoint with the lowest validation loss (earliest on
/// ties). Step 0, the untrained network, is a candidate. Features are
/// standardized with training-split statistics first.
pub fn fit_classifier(features: &[Vec<f32>], labels: &[u8], split: &Split, config: &ClassifierConfig) -> Result<FitOutcome, EvalError> {
    if features.is_empty() {
        return Err(EvalError::Empty);
    }
    assert_eq!(features.len(), labels.len(), "one label per feature row expected");
    check_class_sizes(labels)?;
    for (part, name) in [(&split.train, "train"), (&split.valid, "valid"), (&split.test, "test")] {
        if part.is_empty() {
            return Err(EvalError::EmptySplit(name));
        }
    }
    let z = Standardizer::fit(features, &split.train);
    let scaled: Vec<Vec<f32>> = features.iter().map(|row| z.apply(row).into_iter().map(|x| x as f32).collect()).collect();
    let features = scaled.as_slice();
    let input_dim = features[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let net = ClassifierNet::new(&mut store, "cls", input_dim, &mut rng);
    let mut adam = Adam::new(config.adam, &store);
    let interval = config.validation_interval();

    let (loss0, _) = evaluate(&store, &net, features, labels, &split.valid);
    let mut curve = vec![(0, loss0)];
    let mut best = (0, loss0, store.clone());
    for step in 1..=config.steps {
        let rows: Vec<usize> = (0..config.batch).map(|_| split.train[rng.random_range(0..split.train.len())]).collect();
        let mut g = Graph::new(&store);
        let x = g.constant(rows.len(), input_dim, feature_matrix(features, &rows));
        let logits = net.logits(&mut g, x);
        let y: Vec<f64> = rows.iter().map(|&i| f64::from(labels[i])).collect();
        let loss = g.binary_cross_entropy(logits, &y);
        let mut grads = g.backward(loss).expect("scalar loss");
        drop(g);
        adam.step(&mut store, &mut grads);
        if step % interval == 0 || step == config.steps {
            let (valid_loss, _) = evaluate(&store, &net, features, labels, &split.valid);
            curve.push((step, valid_loss));
            if valid_loss < best.1 {
                best = (step, valid_loss, store.clone());
            }
        }
    }
    let (_, test_accuracy) = evaluate(&best.2, &net, features, labels, &split.test);
    Ok(FitOutcome { test_accuracy, best_step: best.0, best_valid_loss: best.1, valid_curve: curve })
}

/// Encodes every example: one encoding for single-string tasks, the two
/// encodings concatenated as `(a, b)` for pair tasks. Each distinct string
/// is encoded once.
pub fn encode_examples(model: &EncoderModel<f32>, examples: &[LabeledExample]) -> Vec<Vec<f32>> {
    let mut index: IndexMap<&str, ()> = IndexMap::new();
    for e in examples {
        index.insert(&e.a, ());
        if let Some(b) = &e.b {
            index.insert(b, ());
        }
    }
    let strings: Vec<&str> = index.keys().copied().collect();
    let encoded = model.encode_batch(&strings);
    let lookup: HashMap<&str, &Vec<f32>> = strings.iter().copied().zip(&encoded).collect();
    examples
        .iter()
        .map(|e| {
            let mut v = lookup[e.a.as_str()].clone();
            if let Some(b) = &e.b {
                v.extend_from_slice(lookup[b.as_str()]);
            }
            v
        })
        .collect()
}

fn task_of(examples: &[LabeledExample]) -> Result<Task, EvalError> {
    let first = examples.first().ok_or(EvalError::Empty)?.task;
    match examples.iter().find(|e| e.task != first) {
        Some(e) => Err(EvalError::MixedTasks(first, e.task)),
        None => Ok(first),
    }
}

fn same_bits(a: &ParamStore<f32>, b: &ParamStore<f32>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((_, na, ta), (_, nb, tb))| {
            na == nb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

/// Trains a classifier on encodings from a frozen encoder over an 8/1/1
/// split of `examples`. Fails if the encoder parameters change.
pub fn train_frozen_classifier(
    model: &EncoderModel<f32>,
    examples: &[LabeledExample],
    arch: &str,
    mode: &str,
    config: &ClassifierConfig,
) -> Result<EvalReport, EvalError> {
    let task = task_of(examples)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    check_class_sizes(&labels)?;
    let before = model.store.clone();
    let features = encode_examples(model, examples);
    let split = split_examples(examples, &SplitSpec::new(config.seed));
    let outcome = fit_classifier(&features, &labels, &split, config)?;
    if !same_bits(&before, &model.store) {
        return Err(EvalError::EncoderModified);
    }
    info!("{task} {arch}/{mode}: test accuracy {:.4} at step {}", outcome.test_accuracy, outcome.best_step);
    Ok(EvalReport { task: task.name().into(), arch: arch.into(), mode: mode.into(), test_accuracy: outcome.test_accuracy, best_step: outcome.best_step })
}

/// Premise selection with the frozen-classifier protocol on
/// (conjecture, premise) encodings.
pub fn premise_select(
    model: &EncoderModel<f32>,
    examples: &[LabeledExample],
    arch: &str,
    mode: &str,
    config: &ClassifierConfig,
) -> Result<EvalReport, EvalError> {
    let task = task_of(examples)?;
    if task != Task::PremiseSelection {
        return Err(EvalError::WrongTask { expected: Task::PremiseSelection, got: task });
    }
    train_frozen_classifier(model, examples, arch, mode, config)
}

/// A property head of two fully connected layers.
#[derive(Debug, Clone)]
pub struct PropertyHead {
    pub task: Task,
    hidden: Linear,
    out: Linear,
}

impl PropertyHead {
    fn logits<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let h = self.hidden.apply(g, x);
        let h = g.relu(h);
        self.out.apply(g, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitaskConfig {
    pub steps: usize,
    /// Examples per task per step.
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "desk_adam")]
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
}

fn default_head_hidden() -> usize {
    HIDDEN_WIDTH
}

impl MultitaskConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        MultitaskConfig { steps, batch: default_batch(), adam: desk_adam(), seed, head_hidden: default_head_hidden() }
    }
}

/// An encoder trained end to end with one head per property.
#[derive(Debug, Clone)]
pub struct MultitaskModel {
    pub model: EncoderModel<f32>,
    pub heads: Vec<PropertyHead>,
}

impl MultitaskModel {
    /// Encoder plus heads; head output layers start near zero so the first
    /// predictions are close to uniform.
    pub fn new(config: &EncoderConfig, vocab: CharVocab, tasks: &[Task], head_hidden: usize, seed: u64) -> Self {
        let mut model = EncoderModel::new(config, vocab, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
        let d = config.embedding_dim();
        let heads = tasks
            .iter()
            .enumerate()
            .map(|(i, &task)| {
                let input = if task.is_pairwise() { 2 * d } else { d };
                let name = format!("head{i}.{}", task.name());
                let hidden = Linear::new(&mut model.store, &format!("{name}.fc0"), input, head_hidden, &mut rng);
                let out = Linear::new(&mut model.store, &format!("{name}.fc1"), head_hidden, 1, &mut rng);
                model.store.get_mut(out.w).data_mut().iter_mut().for_each(|w| *w *= 1e-3);
                PropertyHead { task, hidden, out }
            })
            .collect();
        MultitaskModel { model, heads }
    }

    fn inputs<T: Scalar>(model: &EncoderModel<T>, g: &mut Graph<T>, batch: &[&LabeledExample]) -> Var {
        let rows: Vec<Var> = batch
            .iter()
            .map(|e| {
                let a = model.encode_on(g, &e.a);
                match &e.b {
                    Some(b) => {
                        let b = model.encode_on(g, b);
                        g.concat_cols(&[a, b])
                    }
                    None => a,
                }
            })
            .collect();
        g.concat_rows(&rows)
    }

    /// Per-task mean cross-entropy on one batch per head, and their sum.
    pub fn losses(&self, g: &mut Graph<f32>, batches: &[Vec<&LabeledExample>]) -> (Vec<Var>, Var) {
        assert_eq!(batches.len(), self.heads.len(), "one batch per head expected");
        let parts: Vec<Var> = self
            .heads
            .iter()
            .zip(batches)
            .map(|(head, batch)| {
                let x = Self::inputs(&self.model, g, batch);
                let logits = head.logits(g, x);
                let y: Vec<f64> = batch.iter().map(|e| f64::from(e.label)).collect();
                g.binary_cross_entropy(logits, &y)
            })
            .collect();
        let total = g.sum(&parts);
        (parts, total)
    }

    /// Predicted labels for `examples` with head number `head`.
    pub fn predict(&self, head: usize, examples: &[LabeledExample]) -> Vec<u8> {
        let head = &self.heads[head];
        crate::par::map(examples, |e| {
            let mut g = Graph::new(&self.model.store);
            let x = Self::inputs(&self.model, &mut g, &[e]);
            let logit = head.logits(&mut g, x);
            u8::from(g.scalar(logit) > 0.0)
        })
    }

    pub fn accuracy(&self, head: usize, examples: &[LabeledExample]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let predicted = self.predict(head, examples);
        predicted.iter().zip(examples).filter(|(p, e)| **p == e.label).count() as f64 / examples.len() as f64
    }
}

/// Result of explicit training: the model, the total loss per step, and test
/// accuracy per task on the held-out split.
#[derive(Debug, Clone)]
pub struct MultitaskOutcome {
    pub model: MultitaskModel,
    pub losses: Vec<f64>,
    pub reports: Vec<EvalReport>,
}

/// Trains encoder and heads jointly on the sum of the per-task losses. Each
/// dataset is split 8/1/1; reported accuracies are on the test parts after
/// the final step.
pub fn explicit_multitask_train(
    config: &EncoderConfig,
    vocab: CharVocab,
    datasets: &[Vec<LabeledExample>],
    train_config: &MultitaskConfig,
) -> Result<MultitaskOutcome, EvalError> {
    if datasets.is_empty() {
        return Err(EvalError::Empty);
    }
    let tasks = datasets.iter().map(|d| task_of(d)).collect::<Result<Vec<_>, _>>()?;
    let splits: Vec<Split> = datasets.iter().map(|d| split_examples(d, &SplitSpec::new(train_config.seed))).collect();
    for s in &splits {
        if s.train.is_empty() {
            return Err(EvalError::EmptySplit("train"));
        }
        if s.test.is_empty() {
            return Err(EvalError::EmptySplit("test"));
        }
    }
    let mut mt = MultitaskModel::new(config, vocab, &tasks, train_config.head_hidden, train_config.seed);
    let mut adam = Adam::new(train_config.adam, &mt.model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut losses = Vec::with_capacity(train_config.steps);
    for step in 0..train_config.steps {
        let batches: Vec<Vec<&LabeledExample>> = datasets
            .iter()
            .zip(&splits)
            .map(|(d, s)| (0..train_config.batch).map(|_| &d[s.train[rng.random_range(0..s.train.len())]]).collect())
            .collect();
        let mut g = Graph::new(&mt.model.store);
        let (_, total) = mt.losses(&mut g, &batches);
        let loss = g.scalar(total).as_f64();
        let mut grads = g.backward(total).expect("scalar loss");
        drop(g);
        if step % 100 == 0 {
            info!("explicit step {step}: loss {loss:.5}");
        }
        losses.push(loss);
        adam.step(&mut mt.model.store, &mut grads);
    }
    let arch = config.arch.name();
    let reports = tasks
        .iter()
        .zip(datasets)
        .zip(&splits)
        .enumerate()
        .map(|(head, ((&task, d), s))| {
            let test: Vec<LabeledExample> = s.test.iter().map(|&i| d[i].clone()).collect();
            EvalReport {
                task: task.name().into(),
                arch: arch.into(),
                mode: "explicit".into(),
                test_accuracy: mt.accuracy(head, &test),
                best_step: train_config.steps,
            }
        })
        .collect();
    Ok(MultitaskOutcome { model: mt, losses, reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    /// Logistic regression; accuracy of the predicted class.
    Classify,
    /// Least squares; exact-match rate after rounding to the nearest integer.
    Regress,
}

/// Fits a linear probe on 80% of the encodings and returns its accuracy on
/// the remaining 20%. Features are standardized with training statistics.
pub fn linear_probe(encodings: &[Vec<f64>], targets: &[f64], kind: ProbeKind, seed: u64) -> f64 {
    assert_eq!(encodings.len(), targets.len(), "one target per encoding expected");
    let n = encodings.len();
    if n < 2 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * 0.8).round().clamp(1.0, (n - 1) as f64) as usize;
    let (train, test) = order.split_at(cut);
    let z = Standardizer::fit(encodings, train);
    let row = |i: usize| z.apply(&encodings[i]);
    let predictions = match kind {
        ProbeKind::Classify => logistic_probe(&train.iter().map(|&i| row(i)).collect::<Vec<_>>(), &train.iter().map(|&i| targets[i]).collect::<Vec<_>>(), &test.iter().map(|&i| row(i)).collect::<Vec<_>>(), seed),
        ProbeKind::Regress => ridge_probe(&train.iter().map(|&i| row(i)).collect::<Vec<_>>(), &train.iter().map(|&i| targets[i]).collect::<Vec<_>>(), &test.iter().map(|&i| row(i)).collect::<Vec<_>>()),
    };
    let hits = predictions.iter().zip(test).filter(|(p, &i)| (**p - targets[i]).abs() < 0.5).count();
    hits as f64 / test.len() as f64
}

fn logistic_probe(train_x: &[Vec<f64>], train_y: &[f64], test_x: &[Vec<f64>], seed: u64) -> Vec<f64> {
    const STEPS: usize = 400;
    let d = train_x[0].len();
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = Linear::new(&mut store, "probe", d, 1, &mut rng);
    let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, &store);
    let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<f64>>();
    let x_train = flat(train_x);
    for _ in 0..STEPS {
        let mut g = Graph::new(&store);
        let x = g.constant(train_x.len(), d, x_train.clone());
        let z = layer.apply(&mut g, x);
        let loss = g.binary_cross_entropy(z, train_y);
        let mut grads = g.backward(loss).expect("scalar loss");
        drop(g);
        adam.step(&mut store, &mut grads);
    }
    let mut g = Graph::new(&store);
    let x = g.constant(test_x.len(), d, flat(test_x));
    let z = layer.apply(&mut g, x);
    g.value(z).iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect()
}

fn ridge_probe(train_x: &[Vec<f64>], train_y: &[f64], test_x: &[Vec<f64>]) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    const RIDGE: f64 = 1e-3;
    let d = train_x[0].len() + 1;
    let design = |rows: &[Vec<f64>]| DMatrix::from_fn(rows.len(), d, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let x = design(train_x);
    let y = DVector::from_column_slice(train_y);
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * RIDGE;
    let rhs = x.transpose() * y;
    let w = gram.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| gram.lu().solve(&rhs)).unwrap_or_else(|| DVector::zeros(d));
    let predicted = design(test_x) * w;
    predicted.iter().map(|p| p.round()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTarget {
    /// Presence of each connective.
    Connectives,
    /// Number of universal and of existential quantifiers.
    QuantifierCount,
}

impl ProbeTarget {
    pub fn name(self) -> &'static str {
        match self {
            ProbeTarget::Connectives => "connectives",
            ProbeTarget::QuantifierCount => "quantifier-count",
        }
    }
}

impl std::str::FromStr for ProbeTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "connectives" => Ok(ProbeTarget::Connectives),
            "quantifier-count" => Ok(ProbeTarget::QuantifierCount),
            _ => Err(format!("unknown probe target {s:?} (expected connectives or quantifier-count)")),
        }
    }
}

fn has_connective(f: &Formula, symbol: &str) -> bool {
    let mut found = false;
    f.visit(&mut |g| {
        found |= matches!(
            (g, symbol),
            (Formula::Not(_), "~") | (Formula::And(..), "&") | (Formula::Or(..), "|") | (Formula::Implies(..), "=>") | (Formula::Iff(..), "<=>")
        );
    });
    found
}

/// Named probe targets for `formulas`. Connectives that are present in all
/// formulas or in none are left out.
pub fn probe_targets(formulas: &[Formula], target: ProbeTarget) -> Vec<(String, ProbeKind, Vec<f64>)> {
    match target {
        ProbeTarget::Connectives => ["~", "&", "|", "=>", "<=>"]
            .into_iter()
            .map(|c| (c.to_string(), ProbeKind::Classify, formulas.iter().map(|f| f64::from(u8::from(has_connective(f, c)))).collect::<Vec<_>>()))
            .filter(|(_, _, ys)| ys.iter().any(|&y| y > 0.5) && ys.iter().any(|&y| y < 0.5))
            .collect(),
        ProbeTarget::QuantifierCount => {
            let counts: Vec<(usize, usize)> = formulas.iter().map(Formula::quantifier_count).collect();
            vec![
                ("!".into(), ProbeKind::Regress, counts.iter().map(|c| c.0 as f64).collect()),
                ("?".into(), ProbeKind::Regress, counts.iter().map(|c| c.1 as f64).collect()),
            ]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub probe: String,
    pub target: String,
    pub accuracy: f64,
}

/// Encodes `formulas` with a frozen encoder and runs every probe of `target`.
pub fn run_probes(model: &EncoderModel<f32>, formulas: &[Formula], target: ProbeTarget, seed: u64) -> Vec<ProbeRow> {
    let texts: Vec<String> = formulas.iter().map(|f| f.to_string()).collect();
    let encodings: Vec<Vec<f64>> = model.encode_batch(&texts).into_iter().map(|v| v.into_iter().map(f64::from).collect()).collect();
    probe_targets(formulas, target)
        .into_iter()
        .map(|(name, kind, ys)| ProbeRow { probe: target.name().into(), target: name, accuracy: linear_probe(&encodings, &ys, kind, seed) })
        .collect()
}

/// Writes reports sorted by (task, arch, mode) under the fixed header.
pub fn write_report_csv(reports: &[EvalReport], out: impl Write) -> Result<(), EvalError> {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| (&a.task, &a.arch, &a.mode).cmp(&(&b.task, &b.arch, &b.mode)));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["task", "arch", "mode", "test_accuracy", "best_step"])?;
    for r in sorted {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_report_csv(input: impl Read) -> Result<Vec<EvalReport>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<EvalReport>, _>>()?)
}

pub fn write_probe_csv(rows: &[ProbeRow], out: impl Write) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["probe", "target", "accuracy"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_probe_csv(input: impl Read) -> Result<Vec<ProbeRow>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<ProbeRow>, _>>()?)
}
