//! Desk-scale acceptance suite.
//!
//! Runs every criterion in order, prints one PASS/FAIL line each and exits
//! non-zero when any of them failed. The whole run takes around half an hour
//! on one core; `cargo test --release -p folvec --test acceptance` runs it
//! alone. Set `ACCEPTANCE_OUT` to keep the CSV/JSONL artifacts and
//! `ACCEPTANCE_QUICK` to stop before the training criteria.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use folvec::checks::gradient_suite;
use folvec::dataset::{
    audit, generate, parse_deepmath, random_corpus, random_formula, write_jsonl, FormulaSpec, LabeledExample, Task,
};
use folvec::encoders::{Arch, EncoderConfig};
use folvec::eval::{desk_steps, premise_select, train_frozen_classifier, ClassifierConfig};
use folvec::fol::{pretty_print, Expr, Formula, Term};
use folvec::oracles::unify;
use folvec::parser::{parse_formula, read_corpus};
use folvec::tensor::{AdamConfig, Graph};
use folvec::tree::{
    build_signature, decoding_metrics, metrics_csv_header, metrics_csv_row, train, training_items,
    DecodeMetrics, TrainConfig, TrainItem, TrainMode, TreeAutoencoder, DEFAULT_DEPTH_CAP,
};

const SEEDS: [u64; 3] = [1, 2, 3];
const TOY_CORPUS_SEED: u64 = 11;
const HOLDOUT_SEED: u64 = 99;
const HOLDOUT: usize = 500;
const AE_STEPS: usize = 5000;
const AE_BATCH: usize = 16;
const AE_LR: f64 = 1e-3;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Verdict {
    fn print(&self) {
        let status = if self.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {:<28} {status}  {}", self.id, self.name, self.detail);
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn fixture_formulas() -> Vec<Formula> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let mut out = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .expect("data directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "p"))
        .collect();
    paths.sort();
    for p in paths {
        out.extend(read_corpus(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display())));
    }
    out
}

// ---------------------------------------------------------------- criterion 1

fn roundtrip_artifact(formulas: &[Formula]) -> (usize, Vec<u8>) {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["formula", "identical"]).unwrap();
    let mut failures = 0;
    for f in formulas {
        let text = pretty_print(&Expr::Formula(f.clone()));
        let same = parse_formula(&text).is_ok_and(|g| g == *f);
        failures += usize::from(!same);
        w.write_record([text.as_str(), if same { "1" } else { "0" }]).unwrap();
    }
    (failures, w.into_inner().unwrap())
}

fn roundtrip_formulas() -> Vec<Formula> {
    let mut all = random_corpus(&FormulaSpec::rich(), 10_000, 6, 7);
    all.extend(fixture_formulas());
    all
}

fn criterion_roundtrip() -> (Verdict, Vec<u8>) {
    let start = Instant::now();
    let formulas = roundtrip_formulas();
    let (failures, bytes) = roundtrip_artifact(&formulas);
    let took = start.elapsed();
    let pass = formulas.len() >= 10_000 && failures == 0 && took < Duration::from_secs(10);
    let detail = format!("{} formulas, {failures} mismatches, {}", formulas.len(), secs(took));
    (Verdict { id: 1, name: "parser round-trip", pass, detail }, bytes)
}

// ---------------------------------------------------------------- criterion 2

fn audit_corpus() -> Vec<Formula> {
    let mut corpus = random_corpus(&FormulaSpec::rich(), 2000, 5, 5);
    corpus.extend(fixture_formulas());
    corpus
}

fn audit_artifact(corpus: &[Formula]) -> Result<(Vec<LabeledExample>, Vec<u8>), String> {
    let mut all = Vec::new();
    for (i, task) in Task::GENERATED.into_iter().enumerate() {
        let examples = generate(task, corpus, 2000, 100 + i as u64).map_err(|e| format!("{task}: {e}"))?;
        all.extend(examples);
    }
    let mut bytes = Vec::new();
    write_jsonl(&all, &mut bytes).unwrap();
    Ok((all, bytes))
}

fn criterion_audit() -> (Verdict, Vec<u8>) {
    let start = Instant::now();
    let corpus = audit_corpus();
    let (pass, detail, bytes) = match audit_artifact(&corpus) {
        Ok((examples, bytes)) => {
            let sig = build_signature(&corpus.iter().cloned().map(Expr::Formula).collect::<Vec<_>>());
            let failures = audit(&examples, &sig);
            let took = start.elapsed();
            if let Some(f) = failures.first() {
                eprintln!("first audit failure: {:?}: {}", f.example, f.reason);
            }
            let pass = examples.len() == 6 * 2000 && failures.is_empty() && took < Duration::from_secs(60);
            (pass, format!("{} examples, {} disagreements, {}", examples.len(), failures.len(), secs(took)), bytes)
        }
        Err(e) => (false, format!("generation failed: {e}"), Vec::new()),
    };
    (Verdict { id: 2, name: "oracle audit", pass, detail }, bytes)
}

// ---------------------------------------------------------------- criterion 3

const UNIF_VARS: [&str; 3] = ["X", "Y", "Z"];

fn random_small_term(depth: usize, rng: &mut ChaCha8Rng) -> Term {
    let leaf = depth <= 1 || rng.random_bool(0.35);
    if leaf {
        return match rng.random_range(0..5) {
            0 => Term::constant("a"),
            1 => Term::constant("b"),
            _ => Term::var(*UNIF_VARS.choose(rng).unwrap()),
        };
    }
    if rng.random_bool(0.5) {
        Term::app("g", vec![random_small_term(depth - 1, rng)])
    } else {
        Term::app("f", vec![random_small_term(depth - 1, rng), random_small_term(depth - 1, rng)])
    }
}

/// Every ground term of depth at most `depth` over {f/2, g/1, a, b}.
fn ground_terms(depth: usize) -> Vec<Term> {
    if depth == 1 {
        return vec![Term::constant("a"), Term::constant("b")];
    }
    let below = ground_terms(depth - 1);
    let mut out = vec![Term::constant("a"), Term::constant("b")];
    out.extend(below.iter().map(|t| Term::app("g", vec![t.clone()])));
    for x in &below {
        for y in &below {
            out.push(Term::app("f", vec![x.clone(), y.clone()]));
        }
    }
    out
}

/// Syntactic equality of `s` and `t` after replacing variables by their
/// ground values in `env`, without building the instances.
fn equal_under(s: &Term, t: &Term, env: &HashMap<&str, &Term>) -> bool {
    let s = match s {
        Term::Variable(v) => env[v.as_str()],
        _ => s,
    };
    let t = match t {
        Term::Variable(v) => env[v.as_str()],
        _ => t,
    };
    match (s, t) {
        (Term::Constant(a), Term::Constant(b)) => a == b,
        (Term::Application(f, xs), Term::Application(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| equal_under(x, y, env))
        }
        _ => false,
    }
}

fn brute_force_unifiable(s: &Term, t: &Term, ground: &[Term]) -> bool {
    let vars: Vec<String> = s.variables().union(&t.variables()).cloned().collect();
    let mut idx = vec![0usize; vars.len()];
    loop {
        let env: HashMap<&str, &Term> = vars.iter().map(String::as_str).zip(idx.iter().map(|&i| &ground[i])).collect();
        if equal_under(s, t, &env) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return false;
            }
            idx[k] += 1;
            if idx[k] < ground.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn unification_artifact() -> (usize, usize, usize, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(Term, Term)> = (0..500).map(|_| (random_small_term(3, &mut rng), random_small_term(3, &mut rng))).collect();
    let ground = ground_terms(3);
    let brute: Vec<bool> = folvec::par::map(&pairs, |(s, t)| brute_force_unifiable(s, t, &ground));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["left", "right", "unifiable", "brute_force", "mgu"]).unwrap();
    let (mut disagreements, mut bad_mgus, mut unifiable) = (0, 0, 0);
    for ((s, t), &b) in pairs.iter().zip(&brute) {
        let r = unify(s, t);
        disagreements += usize::from(r.is_unifiable() != b);
        unifiable += usize::from(r.is_unifiable());
        let mgu = match r.mgu() {
            Some(sigma) => {
                let ok = s.apply(sigma) == t.apply(sigma) && sigma.is_idempotent();
                bad_mgus += usize::from(!ok);
                sigma.to_string()
            }
            None => String::new(),
        };
        let flag = |x: bool| if x { "1" } else { "0" };
        w.write_record([s.to_string(), t.to_string(), flag(r.is_unifiable()).into(), flag(b).into(), mgu]).unwrap();
    }
    (disagreements, bad_mgus, unifiable, w.into_inner().unwrap())
}

fn criterion_unification() -> (Verdict, Vec<u8>) {
    let start = Instant::now();
    let (disagreements, bad_mgus, unifiable, bytes) = unification_artifact();
    let took = start.elapsed();
    let pass = disagreements == 0 && bad_mgus == 0 && took < Duration::from_secs(120);
    let detail = format!("500 pairs ({unifiable} unifiable), {disagreements} disagreements, {bad_mgus} bad unifiers, {}", secs(took));
    (Verdict { id: 3, name: "unification vs brute force", pass, detail }, bytes)
}

// ---------------------------------------------------------------- criterion 4

fn criterion_gradients() -> Verdict {
    let start = Instant::now();
    let checks = gradient_suite(None);
    let took = start.elapsed();
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.clone()).collect();
    let worst = checks.iter().map(|c| c.report.max_relative_error).fold(0.0, f64::max);
    let pass = failed.is_empty() && took < Duration::from_secs(600);
    let detail = format!("{} checks, worst relative error {worst:.2e}, failed {failed:?}, {}", checks.len(), secs(took));
    Verdict { id: 4, name: "gradient checks", pass, detail }
}

// ---------------------------------------------------------------- criterion 5

fn toy_corpus() -> Vec<Expr> {
    random_corpus(&FormulaSpec::toy(), 5000, 4, TOY_CORPUS_SEED).into_iter().map(Expr::Formula).collect()
}

fn criterion_loss_bookkeeping() -> Verdict {
    let corpus = toy_corpus();
    let sig = build_signature(&corpus);
    let config = EncoderConfig::small(Arch::Cnn, 16, 2);
    let ae = TreeAutoencoder::<f64>::new(&config, sig.clone(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut count_mismatches = 0;
    for _ in 0..100 {
        let batch: Vec<&Expr> = corpus.choose_multiple(&mut rng, AE_BATCH).collect();
        let expected: usize = batch.iter().map(|e| e.node_count()).sum();
        let mut g = Graph::new(ae.store());
        let counted: usize = batch
            .iter()
            .map(|e| ae.recursive_term(&mut g, &TrainItem::new(e, &sig).unwrap()).1)
            .sum();
        count_mismatches += usize::from(counted != expected);
    }

    let items = training_items(TrainMode::Difference, &corpus[..200], &sig).unwrap();
    let mut worst_additivity: f64 = 0.0;
    for _ in 0..20 {
        let batch: Vec<&TrainItem> = items.choose_multiple(&mut rng, AE_BATCH).collect();
        let loss_of = |part: &[&TrainItem]| {
            let mut g = Graph::new(ae.store());
            let l = ae.batch_loss(&mut g, TrainMode::Difference, part, false);
            g.scalar(l)
        };
        let (left, right) = batch.split_at(AE_BATCH / 2);
        let whole = loss_of(&batch);
        let parts = loss_of(left) + loss_of(right);
        worst_additivity = worst_additivity.max((whole - parts).abs() / whole.abs().max(1e-12));
    }

    let mut worst_uniform: f64 = 0.0;
    for classes in [2usize, 15, 100] {
        let store = folvec::tensor::ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let logits = g.constant(3, classes, vec![0.25; 3 * classes]);
        let l = g.softmax_cross_entropy(logits, &[0, 1, classes - 1]);
        worst_uniform = worst_uniform.max((g.scalar(l) - (classes as f64).ln()).abs());
    }

    let pass = count_mismatches == 0 && worst_additivity <= 1e-5 && worst_uniform <= 1e-5;
    let detail = format!(
        "term-count mismatches {count_mismatches}/100, additivity error {worst_additivity:.1e}, uniform cross-entropy error {worst_uniform:.1e}"
    );
    Verdict { id: 5, name: "loss bookkeeping", pass, detail }
}

// ---------------------------------------------------------------- criterion 6

/// The toy corpus with a fixed random held-out part.
fn toy_split() -> (Vec<Expr>, Vec<Expr>) {
    let mut corpus = toy_corpus();
    corpus.shuffle(&mut ChaCha8Rng::seed_from_u64(HOLDOUT_SEED));
    let train = corpus.split_off(HOLDOUT);
    (train, corpus)
}

/// The architecture of each family trained at desk scale.
fn desk_configs() -> [EncoderConfig; 2] {
    [EncoderConfig::small(Arch::Cnn, 128, 3), EncoderConfig::small(Arch::Transformer, 64, 2)]
}

struct AutoencoderRun {
    arch: Arch,
    mode: TrainMode,
    seed: u64,
    metrics: DecodeMetrics,
    csv_row: String,
    model: TreeAutoencoder<f32>,
}

fn train_autoencoder(config: &EncoderConfig, mode: TrainMode, seed: u64, steps: usize, split: &(Vec<Expr>, Vec<Expr>)) -> AutoencoderRun {
    let (train_set, test_set) = split;
    let all: Vec<Expr> = train_set.iter().chain(test_set).cloned().collect();
    let mut ae = TreeAutoencoder::<f32>::new(config, build_signature(&all), seed);
    let mut tc = TrainConfig::new(steps, seed);
    tc.batch = Some(AE_BATCH);
    tc.adam = AdamConfig { lr: AE_LR, ..AdamConfig::default() };
    tc.log_every = 1000;
    train(&mut ae, mode, train_set, &tc).expect("training stays finite");
    let metrics = decoding_metrics(&ae, test_set, DEFAULT_DEPTH_CAP);
    let csv_row = metrics_csv_row(config.arch.name(), mode.name(), &format!("toy-seed{seed}"), &metrics);
    AutoencoderRun { arch: config.arch, mode, seed, metrics, csv_row, model: ae }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_autoencoding(split: &(Vec<Expr>, Vec<Expr>)) -> (Verdict, Vec<AutoencoderRun>) {
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in SEEDS {
        for config in desk_configs() {
            for mode in [TrainMode::Recursive, TrainMode::Difference] {
                let run = train_autoencoder(&config, mode, seed, AE_STEPS, split);
                println!("    {}", run.csv_row);
                runs.push(run);
            }
        }
    }
    let at = |arch: Arch, mode: TrainMode, seed: u64| runs.iter().find(|r| r.arch == arch && r.mode == mode && r.seed == seed).unwrap();
    let mut pass = true;
    let mut notes = Vec::new();
    for config in desk_configs() {
        let arch = config.arch;
        let shallow: Vec<f64> = SEEDS.iter().map(|&s| at(arch, TrainMode::Recursive, s).metrics.accuracy_for_depths(..=3).unwrap_or(0.0)).collect();
        let m = median(shallow.clone());
        pass &= m >= 0.80;
        notes.push(format!("{} depth<=3 {:.3} (seeds {shallow:.3?})", arch.name(), m));
        for &seed in &SEEDS {
            let rec = at(arch, TrainMode::Recursive, seed).metrics.accuracy_for_depths(4..=4).unwrap_or(0.0);
            let diff = at(arch, TrainMode::Difference, seed).metrics.accuracy_for_depths(4..=4).unwrap_or(0.0);
            if diff >= rec {
                pass = false;
                notes.push(format!("{} seed {seed}: difference {diff:.3} >= recursive {rec:.3} at depth 4", arch.name()));
            }
        }
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(2 * 3600);
    notes.push(secs(took));
    (Verdict { id: 6, name: "desk-scale autoencoding", pass, detail: notes.join(", ") }, runs)
}

// ---------------------------------------------------------------- criterion 7

fn criterion_classification(split: &(Vec<Expr>, Vec<Expr>), runs: &[AutoencoderRun]) -> Verdict {
    let start = Instant::now();
    let formulas: Vec<Formula> = split
        .0
        .iter()
        .chain(&split.1)
        .map(|e| match e {
            Expr::Formula(f) => f.clone(),
            Expr::Term(_) => unreachable!("the toy corpus holds formulas"),
        })
        .collect();
    let thresholds = [(Task::TermVsFormula, 0.95), (Task::WellFormed, 0.90), (Task::AlphaEquiv, 0.85)];
    let mut scores: BTreeMap<Task, Vec<f64>> = BTreeMap::new();
    for run in runs.iter().filter(|r| r.arch == Arch::Cnn && r.mode == TrainMode::Recursive) {
        for (task, _) in thresholds {
            let examples = generate(task, &formulas, 10_000, run.seed).expect("toy corpus supports the task");
            let cfg = ClassifierConfig::new(desk_steps(examples.len() * 8 / 10, 32), run.seed);
            let report = train_frozen_classifier(&run.model.model, &examples, "cnn", "recursive", &cfg).expect("classifier trains");
            scores.entry(task).or_default().push(report.test_accuracy);
        }
    }
    let mut pass = true;
    let mut notes = Vec::new();
    for (task, min) in thresholds {
        let m = median(scores[&task].clone());
        pass &= m >= min;
        notes.push(format!("{task} {m:.3} (seeds {:.3?})", scores[&task]));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(3600);
    notes.push(secs(took));
    Verdict { id: 7, name: "desk-scale classification", pass, detail: notes.join(", ") }
}

// ---------------------------------------------------------------- criterion 8

/// A random formula over `spec` whose text contains `marker`.
fn formula_with(spec: &FormulaSpec, marker: &str, rng: &mut ChaCha8Rng) -> String {
    loop {
        let s = pretty_print(&Expr::Formula(random_formula(spec, 4, rng)));
        if s.contains(marker) {
            return s;
        }
    }
}

/// Deepmath-format blocks whose useful premises mention `p/1` and never
/// `q/2`, and useless ones the reverse, so the classes are separable from
/// the premise alone. `r/0` is shared; it supplies the depth-1 atoms.
fn separable_deepmath(blocks: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toy = FormulaSpec::toy();
    let with = |name: &str, arity: usize| FormulaSpec { predicates: vec![(name.to_string(), arity), ("r".into(), 0)], ..FormulaSpec::toy() };
    let (useful, useless) = (with("p", 1), with("q", 2));
    let mut text = String::new();
    for _ in 0..blocks {
        text.push_str(&format!("C {}\n", pretty_print(&Expr::Formula(random_formula(&toy, 4, &mut rng)))));
        for _ in 0..2 {
            text.push_str(&format!("+ {}\n", formula_with(&useful, "p(", &mut rng)));
            text.push_str(&format!("- {}\n", formula_with(&useless, "q(", &mut rng)));
        }
        text.push('\n');
    }
    text
}

fn criterion_premise_selection(runs: &[AutoencoderRun]) -> Verdict {
    let start = Instant::now();
    let encoder = &runs.iter().find(|r| r.arch == Arch::Cnn && r.mode == TrainMode::Recursive).expect("a CNN run").model.model;
    let examples = parse_deepmath(&separable_deepmath(1000, 8)).expect("generated blocks parse");
    let mut control = examples.clone();
    let mut labels: Vec<u8> = control.iter().map(|e| e.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(80));
    for (e, l) in control.iter_mut().zip(labels) {
        e.label = l;
    }
    let cfg = ClassifierConfig::new(desk_steps(examples.len() * 8 / 10, 32), 8);
    let real = premise_select(encoder, &examples, "cnn", "recursive", &cfg).expect("classifier trains");
    let shuffled = premise_select(encoder, &control, "cnn", "recursive", &cfg).expect("classifier trains");
    let pass = real.test_accuracy >= 0.90 && shuffled.test_accuracy <= 0.55;
    let detail = format!(
        "{} examples, separable {:.3}, shuffled control {:.3}, {}",
        examples.len(),
        real.test_accuracy,
        shuffled.test_accuracy,
        secs(start.elapsed())
    );
    Verdict { id: 8, name: "premise-selection harness", pass, detail }
}

// ---------------------------------------------------------------- criterion 9

fn criterion_determinism(
    first: &BTreeMap<&'static str, Vec<u8>>,
    split: &(Vec<Expr>, Vec<Expr>),
    runs: &[AutoencoderRun],
) -> (Verdict, BTreeMap<&'static str, Vec<u8>>) {
    let start = Instant::now();
    let mut again: BTreeMap<&'static str, Vec<u8>> = BTreeMap::new();
    again.insert("roundtrip.csv", roundtrip_artifact(&roundtrip_formulas()).1);
    again.insert("audit.jsonl", audit_artifact(&audit_corpus()).map(|(_, b)| b).unwrap_or_default());
    again.insert("unification.csv", unification_artifact().3);
    // One full-scale autoencoder run per family is repeated; the others
    // share the same code path.
    let mut repeated = vec![metrics_csv_header()];
    let mut original = vec![metrics_csv_header()];
    for config in desk_configs() {
        let rerun = train_autoencoder(&config, TrainMode::Recursive, SEEDS[0], AE_STEPS, split);
        let old = runs.iter().find(|r| r.arch == config.arch && r.mode == TrainMode::Recursive && r.seed == SEEDS[0]).unwrap();
        repeated.push(rerun.csv_row);
        original.push(old.csv_row.clone());
    }
    again.insert("decoding.csv", (repeated.join("\n") + "\n").into_bytes());
    let mut baseline = first.clone();
    baseline.insert("decoding.csv", (original.join("\n") + "\n").into_bytes());

    let differing: Vec<&str> = baseline.iter().filter(|(k, v)| again.get(*k) != Some(*v) || v.is_empty()).map(|(k, _)| *k).collect();
    let pass = differing.is_empty();
    let detail = format!("{} artifacts compared, differing {differing:?}, {}", baseline.len(), secs(start.elapsed()));
    (Verdict { id: 9, name: "determinism", pass, detail }, again)
}

fn record(v: Verdict, verdicts: &mut Vec<Verdict>) {
    v.print();
    verdicts.push(v);
}

fn keep_artifacts(dir: &Path, artifacts: &BTreeMap<&'static str, Vec<u8>>) {
    std::fs::create_dir_all(dir).expect("artifact directory");
    for (name, bytes) in artifacts {
        std::fs::write(dir.join(name), bytes).expect("artifact written");
    }
}

fn main() {
    // The test harness passes flags such as `--nocapture`; this runner
    // takes none, but honours a name filter as the libtest one would.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }
    folvec::par::init_threads(Some(1));

    let mut verdicts = Vec::new();
    let mut artifacts: BTreeMap<&'static str, Vec<u8>> = BTreeMap::new();

    let (v, bytes) = criterion_roundtrip();
    artifacts.insert("roundtrip.csv", bytes);
    record(v, &mut verdicts);
    let (v, bytes) = criterion_audit();
    artifacts.insert("audit.jsonl", bytes);
    record(v, &mut verdicts);
    let (v, bytes) = criterion_unification();
    artifacts.insert("unification.csv", bytes);
    record(v, &mut verdicts);
    record(criterion_gradients(), &mut verdicts);
    record(criterion_loss_bookkeeping(), &mut verdicts);

    if std::env::var_os("ACCEPTANCE_QUICK").is_some() {
        println!("criteria 6-9 skipped (ACCEPTANCE_QUICK is set)");
        finish(&verdicts);
        return;
    }

    let split = toy_split();
    let all: Vec<Expr> = split.0.iter().chain(&split.1).cloned().collect();
    println!("    toy corpus: {} train, {} held out, {} labels", split.0.len(), split.1.len(), build_signature(&all).len());
    let (v, runs) = criterion_autoencoding(&split);
    record(v, &mut verdicts);
    record(criterion_classification(&split, &runs), &mut verdicts);
    record(criterion_premise_selection(&runs), &mut verdicts);
    let (v, _) = criterion_determinism(&artifacts, &split, &runs);
    record(v, &mut verdicts);

    if let Ok(dir) = std::env::var("ACCEPTANCE_OUT") {
        let mut rows = vec![metrics_csv_header()];
        rows.extend(runs.iter().map(|r| r.csv_row.clone()));
        artifacts.insert("decoding.csv", (rows.join("\n") + "\n").into_bytes());
        keep_artifacts(Path::new(&dir), &artifacts);
    }

    finish(&verdicts);
}

fn finish(verdicts: &[Verdict]) {
    println!();
    for v in verdicts {
        v.print();
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
