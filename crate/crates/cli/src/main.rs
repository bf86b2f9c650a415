//! Command-line front end for the folvec pipeline.
//!
//! Exit codes: 0 on success, 1 when an input violates a contract (bad
//! syntax, failed check, invalid configuration), 2 on I/O failure.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use folvec::checks::{gradient_suite, GRADCHECK_TOLERANCE};
use folvec::dataset::{generate, gen_subtree_pairs, random_corpus, FormulaSpec, load_deepmath, load_jsonl, save_jsonl, DataError, GenError, LabeledExample, Task};
use folvec::encoders::{build_vocab, read_meta, write_meta, Arch, EncoderConfig, EncoderModel, ModelError};
use folvec::eval::{
    desk_steps, explicit_multitask_train, premise_select, run_probes, train_frozen_classifier, write_probe_csv, write_report_csv,
    ClassifierConfig, EvalError, MultitaskConfig, ProbeTarget,
};
use folvec::fol::{pretty_print, Expr, Formula, SignatureTable};
use folvec::oracles::{alpha_equivalent, is_subformula, is_well_formed, mp_derivable, unify, UnifyResult, DEFAULT_MP_STEPS};
use folvec::parser::{classify_string, corpus_line, parse_formula, parse_term, read_corpus, CorpusError, StringClass};
use folvec::tensor::{AdamConfig, CheckpointError};
use folvec::tree::{
    build_signature, decoding_metrics, metrics_csv_header, metrics_csv_row, train, TrainConfig, TrainError, TrainMode, TreeAutoencoder,
    DEFAULT_DEPTH_CAP,
};

#[derive(Parser)]
#[command(name = "folvec", version, about = "Decodable vector encodings of first-order formulas")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that every formula line of a file parses; reports the first error.
    Parse { file: PathBuf },
    /// Decide one property and print 0 or 1 (plus the unifier for `unify`).
    Oracle(OracleArgs),
    /// Write distinct random formulas, one per line.
    Corpus(CorpusArgs),
    /// Generate a balanced labeled dataset as JSONL.
    Gen(GenArgs),
    /// Write one (formula, child index, subtree) record per tree edge.
    GenSubtrees {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a tree autoencoder and save its checkpoint.
    TrainAe(TrainAeArgs),
    /// Decode a corpus with a trained autoencoder and write accuracy CSV.
    EvalDecode(EvalDecodeArgs),
    /// Train a classifier on frozen encodings of a JSONL dataset.
    TrainCls(TrainClsArgs),
    /// Train an encoder jointly with one head per property.
    TrainExplicit(TrainExplicitArgs),
    /// Premise selection on a deepmath-format file with a frozen encoder.
    Premise(PremiseArgs),
    /// Linear probes of frozen encodings.
    Probe(ProbeArgs),
    /// Finite-difference gradient checks; exit 0 iff all are within 1e-3.
    Gradcheck {
        /// Check only this architecture (cnn, wavenet, bilstm, transformer).
        #[arg(long)]
        arch: Option<Arch>,
    },
}

#[derive(Args)]
struct OracleArgs {
    /// well_formed, subformula, modus_ponens, alpha_equiv, term_vs_formula or unify.
    property: String,
    a: String,
    b: Option<String>,
    /// Corpus whose signature decides term_vs_formula for bare symbols.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Derivation steps for modus_ponens.
    #[arg(long, default_value_t = DEFAULT_MP_STEPS)]
    steps: usize,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Signature {
    /// p/1 q/2 r/0, f/1, a b, X Y Z and the connectives ~ & | => ! ?
    Toy,
    /// A larger signature with every connective.
    Rich,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, value_enum, default_value = "toy")]
    signature: Signature,
    /// Upper bound; fewer are written if the signature runs out of distinct formulas.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// well_formed, subformula, modus_ponens, alpha_equiv, term_vs_formula or unifiable.
    task: Task,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Options shared by commands that build an encoder. Flags override the
/// values of `--config`.
#[derive(Args)]
struct EncoderArgs {
    /// JSON run configuration (see README); unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder architecture [default: cnn].
    #[arg(long)]
    arch: Option<Arch>,
    /// Token and output width; with --layers selects a reduced encoder.
    #[arg(long)]
    dim: Option<usize>,
    /// Encoder layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Adam learning rate [default: 1e-4 for autoencoders, 1e-3 otherwise].
    #[arg(long)]
    lr: Option<f64>,
    /// Items per step.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Required, here or in --config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainAeArgs {
    #[arg(long)]
    mode: TrainMode,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Regress extracted children onto fixed (detached) child encodings.
    #[arg(long)]
    detach_targets: bool,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Args)]
struct EvalDecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DEPTH_CAP)]
    depth_cap: usize,
    /// Dataset name for the report [default: corpus file stem].
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct TrainClsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Classifier steps [default: ten passes over the training split, at least 3000].
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Args)]
struct TrainExplicitArgs {
    /// Formula corpora; their formulas are pooled.
    #[arg(long, num_args = 1.., required = true)]
    corpora: Vec<PathBuf>,
    /// Comma-separated property tasks.
    #[arg(long, value_delimiter = ',', required = true)]
    tasks: Vec<Task>,
    /// Examples generated per task.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-task test accuracies as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Args)]
struct PremiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// connectives or quantifier-count.
    #[arg(long)]
    target: ProbeTarget,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// JSON run configuration. Every key is optional; command-line flags take
/// precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// Full encoder configuration; the architecture preset when absent.
    encoder: Option<EncoderConfig>,
    adam: Option<AdamConfig>,
    steps: Option<usize>,
    batch: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Contract(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Contract(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

fn contract(msg: impl Into<String>) -> Failure {
    Failure::Contract(msg.into())
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => Failure::Io(e.to_string()),
            CorpusError::Parse { .. } => Failure::Contract(e.to_string()),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => Failure::Io(e.to_string()),
            DataError::Line { .. } => Failure::Contract(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(CheckpointError::Io(_)) => Failure::Io(e.to_string()),
            _ => Failure::Contract(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Csv(c) if c.is_io_error() => Failure::Io(e.to_string()),
            _ => Failure::Contract(e.to_string()),
        }
    }
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        Failure::Contract(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure::Contract(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage errors are contract violations; 2 is reserved for I/O.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).init();
    folvec::par::init_threads(None);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Contract(m) | Failure::Io(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Parse { file } => parse_file(&file),
        Command::Oracle(a) => oracle(a),
        Command::Corpus(a) => write_corpus(a),
        Command::Gen(a) => gen(a),
        Command::GenSubtrees { corpus, out } => {
            let pairs = gen_subtree_pairs(&read_corpus(&corpus)?);
            save_jsonl(&pairs, &out)?;
            Ok(())
        }
        Command::TrainAe(a) => train_ae(a),
        Command::EvalDecode(a) => eval_decode(a),
        Command::TrainCls(a) => train_cls(a),
        Command::TrainExplicit(a) => train_explicit(a),
        Command::Premise(a) => premise(a),
        Command::Probe(a) => probe(a),
        Command::Gradcheck { arch } => gradcheck(arch),
    }
}

fn parse_file(path: &Path) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        let Some(body) = corpus_line(line) else { continue };
        if let Err(e) = parse_formula(body) {
            return Err(contract(format!("{}:{}: {e}\n  {body}\n  {}^", path.display(), i + 1, " ".repeat(e.position))));
        }
        count += 1;
    }
    println!("{count} formulas parsed");
    Ok(())
}

fn print_bit(b: bool) {
    println!("{}", u8::from(b));
}

fn oracle(args: OracleArgs) -> Outcome {
    let formula = |s: &str| parse_formula(s).map_err(|e| contract(format!("{s:?}: {e}")));
    let term = |s: &str| parse_term(s).map_err(|e| contract(format!("{s:?}: {e}")));
    let second = || args.b.as_deref().ok_or_else(|| contract(format!("{} needs two arguments", args.property)));
    match args.property.as_str() {
        "well_formed" => print_bit(is_well_formed(&args.a)),
        "subformula" => print_bit(is_subformula(&formula(second()?)?, &formula(&args.a)?)),
        "modus_ponens" => print_bit(mp_derivable(&formula(&args.a)?, &formula(second()?)?, args.steps)),
        "alpha_equiv" => print_bit(alpha_equivalent(&formula(&args.a)?, &formula(second()?)?)),
        "term_vs_formula" => {
            let sig = match &args.corpus {
                Some(p) => signature_of(&read_corpus(p)?),
                None => SignatureTable::new(),
            };
            match classify_string(&args.a, &sig) {
                StringClass::Formula => print_bit(true),
                StringClass::Term => print_bit(false),
                StringClass::Neither => return Err(contract(format!("{:?} is neither a term nor a formula", args.a))),
            }
        }
        "unify" | "unifiable" => match unify(&term(&args.a)?, &term(second()?)?) {
            UnifyResult::Unifiable(s) => println!("1\n{s}"),
            UnifyResult::NotUnifiable(_) => print_bit(false),
        },
        other => return Err(contract(format!("unknown property {other:?}"))),
    }
    Ok(())
}

fn signature_of(corpus: &[Formula]) -> SignatureTable {
    let exprs: Vec<Expr> = corpus.iter().cloned().map(Expr::Formula).collect();
    build_signature(&exprs)
}

fn write_corpus(args: CorpusArgs) -> Outcome {
    let spec = match args.signature {
        Signature::Toy => FormulaSpec::toy(),
        Signature::Rich => FormulaSpec::rich(),
    };
    let mut out = BufWriter::new(File::create(&args.out).map_err(|e| Failure::Io(format!("{}: {e}", args.out.display())))?);
    for f in random_corpus(&spec, args.n, args.max_depth, args.seed) {
        writeln!(out, "{}", pretty_print(&Expr::Formula(f)))?;
    }
    out.flush()?;
    Ok(())
}

fn gen(args: GenArgs) -> Outcome {
    if args.task == Task::PremiseSelection {
        return Err(contract("premise_selection data is read from deepmath files, not generated"));
    }
    let corpus = if args.n == 0 { Vec::new() } else { read_corpus(&args.corpus)? };
    let examples = generate(args.task, &corpus, args.n, args.seed)?;
    save_jsonl(&examples, &args.out)?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| contract(format!("{}: {e}", path.display())))
}

/// Encoder configuration, Adam settings, steps, batch and seed after merging
/// flags over the config file.
struct Resolved {
    encoder: EncoderConfig,
    adam: AdamConfig,
    steps: Option<usize>,
    batch: Option<usize>,
    seed: u64,
}

fn resolve(args: &EncoderArgs, default_lr: f64) -> Result<Resolved, Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let arch = args.arch.or(cfg.encoder.as_ref().map(|e| e.arch)).unwrap_or(Arch::Cnn);
    let mut encoder = match (&cfg.encoder, args.dim, args.layers) {
        (Some(e), None, None) if args.arch.is_none() || args.arch == Some(e.arch) => e.clone(),
        (_, Some(d), l) => EncoderConfig::small(arch, d, l.unwrap_or(2)),
        (_, None, _) => EncoderConfig::new(arch),
    };
    if let (Some(l), None) = (args.layers, args.dim) {
        encoder.layers = l;
    }
    encoder.validate().map_err(|e| contract(e.to_string()))?;
    let mut adam = cfg.adam.unwrap_or(AdamConfig { lr: default_lr, ..AdamConfig::default() });
    if let Some(lr) = args.lr {
        adam.lr = lr;
    }
    let seed = args.seed.or(cfg.seed).ok_or_else(|| contract("a seed is required (--seed or \"seed\" in --config)"))?;
    Ok(Resolved { encoder, adam, steps: args.steps.or(cfg.steps), batch: args.batch.or(cfg.batch), seed })
}

fn train_ae(args: TrainAeArgs) -> Outcome {
    let r = resolve(&args.encoder, AdamConfig::default().lr)?;
    let steps = r.steps.ok_or_else(|| contract("--steps is required"))?;
    let corpus: Vec<Expr> = read_corpus(&args.corpus)?.into_iter().map(Expr::Formula).collect();
    let signature = build_signature(&corpus);
    let mut ae = TreeAutoencoder::<f32>::new(&r.encoder, signature, r.seed);
    let config = TrainConfig { batch: r.batch, adam: r.adam, detach_targets: args.detach_targets, ..TrainConfig::new(steps, r.seed) };
    let log = train(&mut ae, args.mode, &corpus, &config)?;
    ae.save(&args.out)?;
    set_mode(&args.out, args.mode.name())?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!("{} {}: loss {first:.4} -> {last:.4} over {steps} steps", r.encoder.arch, args.mode.name());
    }
    Ok(())
}

fn set_mode(ckpt: &Path, mode: &str) -> Outcome {
    let mut meta = read_meta(ckpt)?;
    meta.mode = Some(mode.to_string());
    write_meta(ckpt, &meta)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn eval_decode(args: EvalDecodeArgs) -> Outcome {
    let ae = TreeAutoencoder::<f32>::load(&args.ckpt)?;
    let meta = read_meta(&args.ckpt)?;
    let corpus: Vec<Expr> = read_corpus(&args.corpus)?.into_iter().map(Expr::Formula).collect();
    let metrics = decoding_metrics(&ae, &corpus, args.depth_cap);
    let dataset = args.dataset.unwrap_or_else(|| args.corpus.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let mode = meta.mode.unwrap_or_else(|| "unknown".into());
    let mut out = create(&args.out)?;
    writeln!(out, "{}", metrics_csv_header())?;
    writeln!(out, "{}", metrics_csv_row(meta.config.arch.name(), &mode, &dataset, &metrics))?;
    out.flush()?;
    println!("formula accuracy {:.4}, symbol accuracy {:.4} over {} formulas", metrics.formula_accuracy, metrics.symbol_accuracy, metrics.total);
    Ok(())
}

fn load_encoder(ckpt: &Path) -> Result<(EncoderModel<f32>, String, String), Failure> {
    let (model, meta) = EncoderModel::load(ckpt)?;
    let arch = meta.config.arch.name().to_string();
    Ok((model, arch, meta.mode.unwrap_or_else(|| "unknown".into())))
}

fn classifier_config(steps: Option<usize>, examples: usize, seed: u64) -> ClassifierConfig {
    let base = ClassifierConfig::new(0, seed);
    ClassifierConfig { steps: steps.unwrap_or_else(|| desk_steps(examples * 8 / 10, base.batch)), ..base }
}

fn train_cls(args: TrainClsArgs) -> Outcome {
    let (model, arch, mode) = load_encoder(&args.ckpt)?;
    let examples: Vec<LabeledExample> = load_jsonl(&args.data)?;
    let mut config = classifier_config(args.steps, examples.len(), args.seed);
    config.batch = args.batch;
    config.adam.lr = args.lr;
    let report = train_frozen_classifier(&model, &examples, &arch, &mode, &config)?;
    println!("{} {arch}/{mode}: test accuracy {:.4} (step {})", report.task, report.test_accuracy, report.best_step);
    write_report_csv(&[report], create(&args.out)?)?;
    Ok(())
}

fn train_explicit(args: TrainExplicitArgs) -> Outcome {
    let r = resolve(&args.encoder, 1e-3)?;
    let mut corpus = Vec::new();
    for p in &args.corpora {
        corpus.extend(read_corpus(p)?);
    }
    let mut datasets = Vec::new();
    for (i, &task) in args.tasks.iter().enumerate() {
        if task == Task::PremiseSelection {
            return Err(contract("premise_selection is not a generated property"));
        }
        datasets.push(generate(task, &corpus, args.n, r.seed.wrapping_add(i as u64))?);
    }
    let vocab = build_vocab(datasets.iter().flatten().flat_map(|e| std::iter::once(e.a.as_str()).chain(e.b.as_deref())));
    let steps = r.steps.ok_or_else(|| contract("--steps is required"))?;
    let config = MultitaskConfig { batch: r.batch.unwrap_or(32), adam: r.adam, ..MultitaskConfig::new(steps, r.seed) };
    let outcome = explicit_multitask_train(&r.encoder, vocab, &datasets, &config)?;
    outcome.model.model.save(&args.out, None)?;
    set_mode(&args.out, "explicit")?;
    for rep in &outcome.reports {
        println!("{}: test accuracy {:.4}", rep.task, rep.test_accuracy);
    }
    if let Some(path) = &args.report {
        write_report_csv(&outcome.reports, create(path)?)?;
    }
    Ok(())
}

fn premise(args: PremiseArgs) -> Outcome {
    let (model, arch, mode) = load_encoder(&args.ckpt)?;
    let examples = load_deepmath(&args.data)?;
    let config = classifier_config(args.steps, examples.len(), args.seed);
    let report = premise_select(&model, &examples, &arch, &mode, &config)?;
    println!("premise selection {arch}/{mode}: test accuracy {:.4}", report.test_accuracy);
    write_report_csv(&[report], create(&args.out)?)?;
    Ok(())
}

fn probe(args: ProbeArgs) -> Outcome {
    let (model, _, _) = load_encoder(&args.ckpt)?;
    let corpus = read_corpus(&args.corpus)?;
    let rows = run_probes(&model, &corpus, args.target, args.seed);
    for r in &rows {
        println!("{} {}: {:.4}", r.probe, r.target, r.accuracy);
    }
    write_probe_csv(&rows, create(&args.out)?)?;
    Ok(())
}

fn gradcheck(arch: Option<Arch>) -> Outcome {
    let checks = gradient_suite(arch);
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!c.passed());
        println!("{:<28} max rel err {:.3e} ({} checked, {} skipped) {verdict}", c.name, c.report.max_relative_error, c.report.checked, c.report.skipped);
    }
    if failed > 0 {
        return Err(contract(format!("{failed} of {} gradient checks exceed {GRADCHECK_TOLERANCE:e}", checks.len())));
    }
    Ok(())
}
