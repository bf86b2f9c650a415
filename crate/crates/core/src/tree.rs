//! Tree views of formulas and the tree autoencoder: a top-symbol classifier
//! and per-child-index subtree extractors on top of a sequence encoder.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{read_meta, EncoderConfig, EncoderModel, ModelError, ModelMeta};
use crate::fol::{pretty_print, CharVocab, Expr, Formula, Label, LabelKind, SignatureTable, Term};
use crate::par;
use crate::tensor::{
    load_checkpoint, save_checkpoint, sum_gradients, Adam, AdamConfig, CheckpointError, Gradients, Graph, ParamId,
    ParamStore, Scalar, Tensor, Var,
};

pub const DEFAULT_DEPTH_CAP: usize = 32;
/// Number of per-depth columns in decoding reports.
pub const REPORT_DEPTHS: usize = 12;

/// Labeled, ordered tree with label ids from a [`SignatureTable`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub label: usize,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(label: usize) -> Self {
        TreeNode { label, children: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(TreeNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(TreeNode::depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("unknown label {name}/{arity} ({kind:?})")]
    UnknownLabel { name: String, arity: usize, kind: LabelKind },
    #[error("label {name} has arity {arity} but the node has {children} children")]
    Arity { name: String, arity: usize, children: usize },
    #[error("label {0} cannot appear here")]
    Misplaced(String),
    #[error("label id {0} out of range")]
    BadId(usize),
    #[error("child index {index} out of range for {extractors} extractors")]
    ChildIndex { index: usize, extractors: usize },
}

/// The root label of an expression.
pub fn top_label(e: &Expr) -> Label {
    match e {
        Expr::Term(t) => match t {
            Term::Variable(v) => Label::new(v, 0, LabelKind::Variable),
            Term::Constant(c) => Label::new(c, 0, LabelKind::Constant),
            Term::Application(f, args) => Label::new(f, args.len(), LabelKind::Function),
        },
        Expr::Formula(f) => match f {
            Formula::Atom(p, args) => Label::new(p, args.len(), LabelKind::Predicate),
            Formula::Not(_) => Label::new("~", 1, LabelKind::Connective),
            Formula::And(..) => Label::new("&", 2, LabelKind::Connective),
            Formula::Or(..) => Label::new("|", 2, LabelKind::Connective),
            Formula::Implies(..) => Label::new("=>", 2, LabelKind::Connective),
            Formula::Iff(..) => Label::new("<=>", 2, LabelKind::Connective),
            Formula::Forall(..) => Label::new("!", 2, LabelKind::Quantifier),
            Formula::Exists(..) => Label::new("?", 2, LabelKind::Quantifier),
        },
    }
}

/// Children of the root in the tree view. A quantifier's first child is its
/// bound variable.
pub fn expr_children(e: &Expr) -> Vec<Expr> {
    match e {
        Expr::Term(Term::Application(_, args)) | Expr::Formula(Formula::Atom(_, args)) => {
            args.iter().cloned().map(Expr::Term).collect()
        }
        Expr::Term(_) => Vec::new(),
        Expr::Formula(f) => match f {
            Formula::Not(a) => vec![Expr::Formula((**a).clone())],
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                vec![Expr::Formula((**a).clone()), Expr::Formula((**b).clone())]
            }
            Formula::Forall(v, body) | Formula::Exists(v, body) => {
                vec![Expr::Term(Term::var(v.clone())), Expr::Formula((**body).clone())]
            }
            Formula::Atom(..) => unreachable!(),
        },
    }
}

/// Adds every label of `e` to `sig`.
pub fn register_labels(e: &Expr, sig: &mut SignatureTable) {
    sig.register(top_label(e));
    for c in expr_children(e) {
        register_labels(&c, sig);
    }
}

/// Signature and character vocabulary of a corpus.
pub fn build_signature(corpus: &[Expr]) -> SignatureTable {
    let mut sig = SignatureTable::new();
    for e in corpus {
        register_labels(e, &mut sig);
    }
    let texts: Vec<String> = corpus.iter().map(pretty_print).collect();
    sig.chars = CharVocab::build(texts.iter().map(String::as_str));
    sig
}

pub fn to_tree_view(e: &Expr, sig: &SignatureTable) -> Result<TreeNode, TreeError> {
    let l = top_label(e);
    let label = sig.id(&l).ok_or(TreeError::UnknownLabel { name: l.name, arity: l.arity, kind: l.kind })?;
    let children = expr_children(e).iter().map(|c| to_tree_view(c, sig)).collect::<Result<_, _>>()?;
    Ok(TreeNode { label, children })
}

pub fn from_tree_view(t: &TreeNode, sig: &SignatureTable) -> Result<Expr, TreeError> {
    let label = label_of(t, sig)?;
    if label.is_formula_kind() {
        formula_from_tree(t, sig).map(Expr::Formula)
    } else {
        term_from_tree(t, sig).map(Expr::Term)
    }
}

fn label_of<'a>(t: &TreeNode, sig: &'a SignatureTable) -> Result<&'a Label, TreeError> {
    if t.label >= sig.len() {
        return Err(TreeError::BadId(t.label));
    }
    let l = sig.label(t.label);
    if l.arity != t.children.len() {
        return Err(TreeError::Arity { name: l.name.clone(), arity: l.arity, children: t.children.len() });
    }
    Ok(l)
}

fn term_from_tree(t: &TreeNode, sig: &SignatureTable) -> Result<Term, TreeError> {
    let l = label_of(t, sig)?;
    match l.kind {
        LabelKind::Variable => Ok(Term::var(l.name.clone())),
        LabelKind::Constant => Ok(Term::constant(l.name.clone())),
        LabelKind::Function => {
            let args = t.children.iter().map(|c| term_from_tree(c, sig)).collect::<Result<_, _>>()?;
            Ok(Term::Application(l.name.clone(), args))
        }
        _ => Err(TreeError::Misplaced(l.name.clone())),
    }
}

fn formula_from_tree(t: &TreeNode, sig: &SignatureTable) -> Result<Formula, TreeError> {
    let l = label_of(t, sig)?;
    let sub = |i: usize| formula_from_tree(&t.children[i], sig);
    match (l.kind, l.name.as_str()) {
        (LabelKind::Predicate, _) => {
            let args = t.children.iter().map(|c| term_from_tree(c, sig)).collect::<Result<_, _>>()?;
            Ok(Formula::Atom(l.name.clone(), args))
        }
        (LabelKind::Connective, "~") => Ok(Formula::not(sub(0)?)),
        (LabelKind::Connective, "&") => Ok(Formula::and(sub(0)?, sub(1)?)),
        (LabelKind::Connective, "|") => Ok(Formula::or(sub(0)?, sub(1)?)),
        (LabelKind::Connective, "=>") => Ok(Formula::implies(sub(0)?, sub(1)?)),
        (LabelKind::Connective, "<=>") => Ok(Formula::iff(sub(0)?, sub(1)?)),
        (LabelKind::Quantifier, q) => {
            let var = match term_from_tree(&t.children[0], sig)? {
                Term::Variable(v) => v,
                other => return Err(TreeError::Misplaced(other.to_string())),
            };
            let body = sub(1)?;
            Ok(if q == "!" { Formula::forall(var, body) } else { Formula::exists(var, body) })
        }
        _ => Err(TreeError::Misplaced(l.name.clone())),
    }
}

/// Result of free-running decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub tree: TreeNode,
    /// Some subtree hit the depth cap and was left without children.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Difference,
    Recursive,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Difference => "difference",
            TrainMode::Recursive => "recursive",
        }
    }

    pub fn default_batch(self) -> usize {
        match self {
            TrainMode::Difference => 32,
            TrainMode::Recursive => 16,
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "difference" => Ok(TrainMode::Difference),
            "recursive" => Ok(TrainMode::Recursive),
            _ => Err(format!("unknown training mode {s:?} (expected difference or recursive)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    w: ParamId,
    b: ParamId,
}

impl Head {
    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, b)
    }
}

/// Encoder plus decoder heads, all in one parameter store.
#[derive(Debug, Clone)]
pub struct TreeAutoencoder<T: Scalar> {
    pub model: EncoderModel<T>,
    pub signature: SignatureTable,
    top: Head,
    extractors: Vec<Head>,
}

/// One training formula (recursive mode) or subtree (difference mode).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub text: String,
    pub tree: TreeNode,
    /// Text of every direct child, in order.
    pub children: Vec<String>,
}

impl TrainItem {
    pub fn new(e: &Expr, sig: &SignatureTable) -> Result<Self, TreeError> {
        Ok(TrainItem {
            text: pretty_print(e),
            tree: to_tree_view(e, sig)?,
            children: expr_children(e).iter().map(pretty_print).collect(),
        })
    }
}

/// Every subtree of every expression, parents before children.
pub fn all_subtrees(corpus: &[Expr]) -> Vec<Expr> {
    fn walk(e: &Expr, out: &mut Vec<Expr>) {
        out.push(e.clone());
        for c in expr_children(e) {
            walk(&c, out);
        }
    }
    let mut out = Vec::new();
    for e in corpus {
        walk(e, &mut out);
    }
    out
}

impl<T: Scalar> TreeAutoencoder<T> {
    pub fn new(config: &EncoderConfig, signature: SignatureTable, seed: u64) -> Self {
        let model = EncoderModel::new(config, signature.chars.clone(), seed);
        Self::with_encoder(model, signature, seed)
    }

    fn with_encoder(mut model: EncoderModel<T>, signature: SignatureTable, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let d = model.embedding_dim();
        let labels = signature.len().max(1);
        let store = &mut model.store;
        let mut linear = |name: &str, out: usize, rng: &mut ChaCha8Rng| Head {
            w: store.add(format!("{name}.w"), Tensor::glorot(vec![d, out], d, out, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(vec![out])),
        };
        let top = linear("head.top", labels, &mut rng);
        let extractors = (0..signature.max_arity()).map(|i| linear(&format!("head.extract{i}"), d, &mut rng)).collect();
        TreeAutoencoder { model, signature, top, extractors }
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.model.store
    }

    pub fn embedding_dim(&self) -> usize {
        self.model.embedding_dim()
    }

    pub fn extractor_count(&self) -> usize {
        self.extractors.len()
    }

    pub fn encode(&self, s: &str) -> Vec<T> {
        self.model.encode_string(s)
    }

    /// Probability of every label for the tree encoded by `embedding`.
    pub fn classify_top(&self, embedding: &[T]) -> Vec<T> {
        let mut g = Graph::new(&self.model.store);
        let x = g.constant(1, embedding.len(), embedding.to_vec());
        let logits = self.top.apply(&mut g, x);
        let p = g.softmax(logits);
        g.value(p).to_vec()
    }

    pub fn extract_child(&self, embedding: &[T], index: usize) -> Result<Vec<T>, TreeError> {
        let head = *self
            .extractors
            .get(index)
            .ok_or(TreeError::ChildIndex { index, extractors: self.extractors.len() })?;
        let mut g = Graph::new(&self.model.store);
        let x = g.constant(1, embedding.len(), embedding.to_vec());
        let y = head.apply(&mut g, x);
        Ok(g.value(y).to_vec())
    }

    /// Greedy decoding: the most likely label at every node, recursing into
    /// as many extracted children as its arity. Nodes at `depth_cap` are not
    /// expanded.
    pub fn decode(&self, embedding: &[T], depth_cap: usize) -> Decoded {
        let mut truncated = false;
        let tree = self.decode_at(embedding, 1, depth_cap.max(1), &mut truncated);
        Decoded { tree, truncated }
    }

    fn decode_at(&self, emb: &[T], depth: usize, cap: usize, truncated: &mut bool) -> TreeNode {
        let probs = self.classify_top(emb);
        let label = argmax(&probs);
        let arity = self.signature.labels().get(label).map_or(0, |l| l.arity);
        if arity == 0 {
            return TreeNode::leaf(label);
        }
        if depth >= cap {
            *truncated = true;
            return TreeNode::leaf(label);
        }
        let children = (0..arity)
            .map(|i| {
                let child = self.extract_child(emb, i).expect("arity within extractor count");
                self.decode_at(&child, depth + 1, cap, truncated)
            })
            .collect();
        TreeNode { label, children }
    }

    pub fn decode_string(&self, s: &str, depth_cap: usize) -> Decoded {
        self.decode(&self.encode(s), depth_cap)
    }

    /// Difference loss of one subtree: cross-entropy of its top symbol plus
    /// the squared error between each extracted child and that child's own
    /// encoding. With `detach_targets` the child encodings are constants.
    pub fn difference_term(&self, g: &mut Graph<T>, item: &TrainItem, detach_targets: bool) -> Var {
        let emb = self.model.encode_on(g, &item.text);
        let logits = self.top.apply(g, emb);
        let mut parts = vec![g.softmax_cross_entropy(logits, &[item.tree.label])];
        for (i, child) in item.children.iter().enumerate() {
            let predicted = self.extractors[i].apply(g, emb);
            let target = if detach_targets {
                let v = self.model.encode_string(child);
                g.constant(1, v.len(), v)
            } else {
                self.model.encode_on(g, child)
            };
            parts.push(g.mse(predicted, target));
        }
        g.sum(&parts)
    }

    /// Recursive loss of one formula: encode the root once, follow the true
    /// tree through the extractors and add a top-symbol cross-entropy at
    /// every node. Returns the loss and its number of terms.
    pub fn recursive_term(&self, g: &mut Graph<T>, item: &TrainItem) -> (Var, usize) {
        let emb = self.model.encode_on(g, &item.text);
        let mut parts = Vec::new();
        self.recursive_nodes(g, emb, &item.tree, &mut parts);
        let n = parts.len();
        (g.sum(&parts), n)
    }

    fn recursive_nodes(&self, g: &mut Graph<T>, emb: Var, tree: &TreeNode, parts: &mut Vec<Var>) {
        let logits = self.top.apply(g, emb);
        parts.push(g.softmax_cross_entropy(logits, &[tree.label]));
        for (i, child) in tree.children.iter().enumerate() {
            let c = self.extractors[i].apply(g, emb);
            self.recursive_nodes(g, c, child, parts);
        }
    }

    /// Loss of a whole batch on one graph.
    pub fn batch_loss(&self, g: &mut Graph<T>, mode: TrainMode, batch: &[&TrainItem], detach_targets: bool) -> Var {
        let parts: Vec<Var> = batch
            .iter()
            .map(|item| match mode {
                TrainMode::Difference => self.difference_term(g, item, detach_targets),
                TrainMode::Recursive => self.recursive_term(g, item).0,
            })
            .collect();
        g.sum(&parts)
    }

    /// Loss value and gradient of one item on a private graph.
    fn item_gradient(&self, mode: TrainMode, item: &TrainItem, detach_targets: bool) -> (f64, Gradients<T>) {
        let mut g = Graph::new(&self.model.store);
        let loss = self.batch_loss(&mut g, mode, &[item], detach_targets);
        let grads = g.backward(loss).expect("loss depends on the encoder");
        (g.scalar(loss).as_f64(), grads)
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl TreeAutoencoder<f32> {
    /// Saves encoder and heads in one checkpoint, with the signature in the
    /// metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_checkpoint(&self.model.store, path).map_err(CheckpointError::from)?;
        crate::encoders::write_meta(
            path,
            &ModelMeta {
                config: self.model.config().clone(),
                vocab: self.model.vocab.clone(),
                signature: Some(self.signature.clone()),
                mode: None,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let meta = read_meta(path)?;
        meta.config.validate()?;
        let signature = meta.signature.ok_or_else(|| ModelError::Metadata("checkpoint has no signature".into()))?;
        let model = EncoderModel::new(&meta.config, meta.vocab, 0);
        let mut ae = Self::with_encoder(model, signature, 0);
        load_checkpoint(&mut ae.model.store, path, false)?;
        Ok(ae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Items per step; the mode's default when absent.
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub detach_targets: bool,
}

fn default_log_every() -> usize {
    100
}

impl TrainConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        TrainConfig { steps, batch: None, adam: AdamConfig::default(), seed, log_every: 100, detach_targets: false }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at step {step} (max gradient {max_grad})")]
    NonFinite { step: usize, loss: f64, max_grad: f64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("empty training corpus")]
    EmptyCorpus,
}

/// Loss of every logged step, plus the first and last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().map(|&(_, l)| l)
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().map(|&(_, l)| l)
    }
}

/// Training items for `mode`: whole formulas for recursive training, every
/// subtree for difference training.
pub fn training_items(mode: TrainMode, corpus: &[Expr], sig: &SignatureTable) -> Result<Vec<TrainItem>, TreeError> {
    let exprs = match mode {
        TrainMode::Recursive => corpus.to_vec(),
        TrainMode::Difference => all_subtrees(corpus),
    };
    exprs.iter().map(|e| TrainItem::new(e, sig)).collect()
}

/// Runs `config.steps` Adam updates on uniformly sampled batches. The batch
/// loss is the sum of per-item losses; per-item gradients are computed on
/// private graphs and summed in batch order.
pub fn train(
    ae: &mut TreeAutoencoder<f32>,
    mode: TrainMode,
    corpus: &[Expr],
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    let items = training_items(mode, corpus, &ae.signature)?;
    train_items(ae, mode, &items, config)
}

pub fn train_items(
    ae: &mut TreeAutoencoder<f32>,
    mode: TrainMode,
    items: &[TrainItem],
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let batch_size = config.batch.unwrap_or(mode.default_batch());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam, &ae.model.store);
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let batch: Vec<&TrainItem> = (0..batch_size).map(|_| &items[rng.random_range(0..items.len())]).collect();
        let results = par::map(&batch, |item| ae.item_gradient(mode, item, config.detach_targets));
        let loss: f64 = results.iter().map(|(l, _)| l).sum();
        let grads: Vec<Gradients<f32>> = results.into_iter().map(|(_, g)| g).collect();
        let mut total = sum_gradients(ae.model.store.len(), &grads);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step, loss, max_grad: total.max_abs() });
        }
        if step % config.log_every.max(1) == 0 || step + 1 == config.steps {
            info!("{} step {step}: loss {loss:.5}", mode.name());
            log.losses.push((step, loss));
        }
        adam.step(&mut ae.model.store, &mut total);
    }
    Ok(log)
}

/// Decoding accuracy over a held-out corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeMetrics {
    pub formula_accuracy: f64,
    pub symbol_accuracy: f64,
    /// Formula depth -> (formula accuracy, number of formulas).
    pub per_depth: BTreeMap<usize, (f64, usize)>,
    pub total: usize,
    /// Formulas with labels outside the signature; counted as failures.
    pub unseen_labels: usize,
}

impl DecodeMetrics {
    /// Formula accuracy over all formulas whose depth lies in `range`.
    pub fn accuracy_for_depths(&self, range: impl std::ops::RangeBounds<usize>) -> Option<f64> {
        let (mut hits, mut n) = (0.0, 0);
        for (d, &(acc, count)) in &self.per_depth {
            if range.contains(d) {
                hits += acc * count as f64;
                n += count;
            }
        }
        (n > 0).then(|| hits / n as f64)
    }
}

/// Labels matched by aligning `predicted` against `truth` top-down by child
/// index, descending only where both trees have a child.
pub fn matched_labels(predicted: &TreeNode, truth: &TreeNode) -> usize {
    let here = usize::from(predicted.label == truth.label);
    here + predicted.children.iter().zip(&truth.children).map(|(p, t)| matched_labels(p, t)).sum::<usize>()
}

/// Per-formula outcome: exact match and matched-symbol fraction.
pub fn score_decoding(predicted: &Decoded, truth: &TreeNode) -> (bool, f64) {
    let exact = !predicted.truncated && predicted.tree == *truth;
    (exact, matched_labels(&predicted.tree, truth) as f64 / truth.node_count() as f64)
}

pub fn decoding_metrics<T: Scalar>(ae: &TreeAutoencoder<T>, corpus: &[Expr], depth_cap: usize) -> DecodeMetrics {
    let scores: Vec<(usize, bool, f64, bool)> = par::map(corpus, |e| {
        let depth = e.depth();
        match to_tree_view(e, &ae.signature) {
            Ok(truth) => {
                let decoded = ae.decode_string(&pretty_print(e), depth_cap);
                let (exact, symbols) = score_decoding(&decoded, &truth);
                (depth, exact, symbols, false)
            }
            Err(_) => (depth, false, 0.0, true),
        }
    });
    let total = scores.len();
    let mut per_depth: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let (mut exact_n, mut symbol_sum, mut unseen) = (0usize, 0.0, 0);
    for &(d, exact, symbols, missing) in &scores {
        exact_n += usize::from(exact);
        symbol_sum += symbols;
        unseen += usize::from(missing);
        let e = per_depth.entry(d).or_insert((0.0, 0));
        e.0 += f64::from(u8::from(exact));
        e.1 += 1;
    }
    for v in per_depth.values_mut() {
        v.0 /= v.1 as f64;
    }
    let denom = total.max(1) as f64;
    DecodeMetrics {
        formula_accuracy: exact_n as f64 / denom,
        symbol_accuracy: symbol_sum / denom,
        per_depth,
        total,
        unseen_labels: unseen,
    }
}

pub fn metrics_csv_header() -> String {
    let mut h = String::from("arch,mode,dataset,formula_acc,symbol_acc");
    for d in 1..=REPORT_DEPTHS {
        write!(h, ",d{d}").unwrap();
    }
    h
}

/// One report row; depths without formulas are left empty.
pub fn metrics_csv_row(arch: &str, mode: &str, dataset: &str, m: &DecodeMetrics) -> String {
    let mut row = format!("{arch},{mode},{dataset},{:.6},{:.6}", m.formula_accuracy, m.symbol_accuracy);
    for d in 1..=REPORT_DEPTHS {
        match m.per_depth.get(&d) {
            Some((acc, _)) => write!(row, ",{acc:.6}").unwrap(),
            None => row.push(','),
        }
    }
    row
}
