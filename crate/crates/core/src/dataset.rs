//! Seeded generators for the logical-property datasets, subtree pairs for
//! difference training, random formula corpora, and the deepmath ingester.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fol::{is_symbol_name, pretty_print, Expr, Formula, LabelKind, SignatureTable, Term};
use crate::oracles::{alpha_equivalent, is_subformula, is_well_formed, mp_derivable, subformulas, unify, DEFAULT_MP_STEPS};
use crate::parser::{classify_string, parse_formula, parse_term, StringClass};
use crate::tree::{all_subtrees, build_signature, expr_children};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    WellFormed,
    Subformula,
    ModusPonens,
    AlphaEquiv,
    TermVsFormula,
    Unifiable,
    PremiseSelection,
}

impl Task {
    /// The six generated property tasks.
    pub const GENERATED: [Task; 6] =
        [Task::WellFormed, Task::Subformula, Task::ModusPonens, Task::AlphaEquiv, Task::TermVsFormula, Task::Unifiable];

    pub fn name(self) -> &'static str {
        match self {
            Task::WellFormed => "well_formed",
            Task::Subformula => "subformula",
            Task::ModusPonens => "modus_ponens",
            Task::AlphaEquiv => "alpha_equiv",
            Task::TermVsFormula => "term_vs_formula",
            Task::Unifiable => "unifiable",
            Task::PremiseSelection => "premise_selection",
        }
    }

    pub fn is_pairwise(self) -> bool {
        !matches!(self, Task::WellFormed | Task::TermVsFormula)
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = Task::GENERATED.into_iter().chain([Task::PremiseSelection]);
        all.clone().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<&str> = all.map(Task::name).collect();
            format!("unknown task {s:?} (expected one of {})", names.join(", "))
        })
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledExample {
    pub task: Task,
    pub a: String,
    pub b: Option<String>,
    pub label: u8,
}

impl LabeledExample {
    fn single(task: Task, a: String, label: bool) -> Self {
        LabeledExample { task, a, b: None, label: u8::from(label) }
    }

    fn pair(task: Task, a: String, b: String, label: bool) -> Self {
        LabeledExample { task, a, b: Some(b), label: u8::from(label) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreePair {
    pub formula: String,
    pub child_index: usize,
    pub subtree: String,
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{task}: could not produce {wanted} {class} examples (got {got})")]
    Exhausted { task: Task, class: &'static str, wanted: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Attempts per requested example before a generator gives up.
const ATTEMPTS_PER_EXAMPLE: usize = 200;
/// Swap rounds before a well-formedness negative is abandoned.
const SWAP_ROUNDS: usize = 50;

/// Collects examples of one class, preferring unseen ones until a budget of
/// attempts is spent.
struct ClassCollector {
    wanted: usize,
    out: Vec<LabeledExample>,
    seen: HashSet<(String, Option<String>)>,
    attempts: usize,
}

impl ClassCollector {
    fn new(wanted: usize) -> Self {
        ClassCollector { wanted, out: Vec::new(), seen: HashSet::new(), attempts: 0 }
    }

    fn done(&self) -> bool {
        self.out.len() >= self.wanted
    }

    /// Duplicates are accepted once the unique budget is used up.
    fn offer(&mut self, e: LabeledExample) {
        self.attempts += 1;
        let key = (e.a.clone(), e.b.clone());
        let relaxed = self.attempts > ATTEMPTS_PER_EXAMPLE / 4 * self.wanted.max(1);
        if self.seen.insert(key) || relaxed {
            self.out.push(e);
        }
    }

    fn exhausted(&self) -> bool {
        self.attempts > ATTEMPTS_PER_EXAMPLE * self.wanted.max(1)
    }

    fn finish(self, task: Task, class: &'static str) -> Result<Vec<LabeledExample>, GenError> {
        if self.done() {
            Ok(self.out)
        } else {
            Err(GenError::Exhausted { task, class, wanted: self.wanted, got: self.out.len() })
        }
    }
}

/// Runs positive and negative samplers until both classes are full, then
/// shuffles. Positives get the extra example when `n` is odd.
fn balanced<P, N>(task: Task, n: usize, rng: &mut ChaCha8Rng, mut pos: P, mut neg: N) -> Result<Vec<LabeledExample>, GenError>
where
    P: FnMut(&mut ChaCha8Rng) -> Option<LabeledExample>,
    N: FnMut(&mut ChaCha8Rng) -> Option<LabeledExample>,
{
    let mut p = ClassCollector::new(n - n / 2);
    let mut q = ClassCollector::new(n / 2);
    while !p.done() && !p.exhausted() {
        match pos(rng) {
            Some(e) => p.offer(e),
            None => p.attempts += 1,
        }
    }
    while !q.done() && !q.exhausted() {
        match neg(rng) {
            Some(e) => q.offer(e),
            None => q.attempts += 1,
        }
    }
    let mut out = p.finish(task, "positive")?;
    out.extend(q.finish(task, "negative")?);
    out.shuffle(rng);
    Ok(out)
}

fn text(f: &Formula) -> String {
    pretty_print(&Expr::Formula(f.clone()))
}

fn term_text(t: &Term) -> String {
    pretty_print(&Expr::Term(t.clone()))
}

/// Positives are corpus formulas; negatives swap random character pairs of a
/// corpus formula until it no longer parses.
pub fn gen_well_formed(corpus: &[Formula], n: usize, seed: u64) -> Result<Vec<LabeledExample>, GenError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if corpus.is_empty() {
        return Err(GenError::EmptyCorpus);
    }
    let texts: Vec<String> = corpus.iter().map(text).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skipped = 0usize;
    let out = balanced(
        Task::WellFormed,
        n,
        &mut rng,
        |rng| Some(LabeledExample::single(Task::WellFormed, texts.choose(rng)?.clone(), true)),
        |rng| {
            let broken = break_string(texts.choose(rng)?, rng);
            if broken.is_none() {
                skipped += 1;
            }
            broken.map(|s| LabeledExample::single(Task::WellFormed, s, false))
        },
    );
    if skipped > 0 {
        warn!("well_formed: {skipped} formulas survived {SWAP_ROUNDS} swap rounds and were resampled");
    }
    out
}

fn break_string(s: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let mut chars: Vec<char> = s.chars().collect();
    if chars.len() < 2 {
        return None;
    }
    for _ in 0..SWAP_ROUNDS {
        let i = rng.random_range(0..chars.len());
        let j = rng.random_range(0..chars.len());
        chars.swap(i, j);
        let candidate: String = chars.iter().collect();
        if !is_well_formed(&candidate) {
            return Some(candidate);
        }
    }
    None
}

/// Positives pair a formula with one of its proper subformulas; negatives
/// with a subformula of another corpus formula that does not occur in it.
pub fn gen_subformula(corpus: &[Formula], n: usize, seed: u64) -> Result<Vec<LabeledExample>, GenError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if corpus.is_empty() {
        return Err(GenError::EmptyCorpus);
    }
    let subs: Vec<Vec<Formula>> = corpus.iter().map(|f| subformulas(f).into_iter().collect()).collect();
    let with_proper: Vec<usize> = (0..corpus.len()).filter(|&i| subs[i].len() > 1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    balanced(
        Task::Subformula,
        n,
        &mut rng,
        |rng| {
            let &i = with_proper.choose(rng)?;
            let proper: Vec<&Formula> = subs[i].iter().filter(|s| **s != corpus[i]).collect();
            let s = proper.choose(rng)?;
            Some(LabeledExample::pair(Task::Subformula, text(&corpus[i]), text(s), true))
        },
        |rng| {
            let i = rng.random_range(0..corpus.len());
            let j = rng.random_range(0..corpus.len());
            let candidate = subs[j].choose(rng)?;
            (!is_subformula(candidate, &corpus[i]))
                .then(|| LabeledExample::pair(Task::Subformula, text(&corpus[i]), text(candidate), false))
        },
    )
}

fn conjoin(parts: Vec<Formula>) -> Formula {
    let mut it = parts.into_iter().rev();
    let last = it.next().expect("at least one conjunct");
    it.fold(last, |acc, f| Formula::and(f, acc))
}

fn universal_closure(vars: &BTreeSet<String>, body: Formula) -> Formula {
    Formula::forall_many(vars.iter().cloned(), body)
}

/// Premise `!vars: (A => B) & A & distractors` (shuffled) and goal `!vars: B`,
/// where `vars` are the free variables of the conjunction.
fn mp_instance(a: Formula, b: Formula, distractors: Vec<Formula>, drop_antecedent: bool, rng: &mut ChaCha8Rng) -> (Formula, Formula) {
    let mut parts = vec![Formula::implies(a.clone(), b.clone())];
    if !drop_antecedent {
        parts.push(a);
    }
    parts.extend(distractors);
    parts.shuffle(rng);
    let conj = conjoin(parts);
    let vars = conj.free_variables();
    (universal_closure(&vars, conj), universal_closure(&vars, b))
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(3..=6);
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

/// An atom with a fresh random predicate over some of `vars`.
fn random_atom(vars: &[&str], rng: &mut ChaCha8Rng) -> Formula {
    let arity = rng.random_range(0..=vars.len().min(2));
    let args = (0..arity).map(|_| Term::var(*vars.choose(rng).unwrap())).collect();
    Formula::atom(random_name(rng), args)
}

fn random_small_formula(vars: &[&str], rng: &mut ChaCha8Rng) -> Formula {
    match rng.random_range(0..4) {
        0 => Formula::not(random_atom(vars, rng)),
        1 => Formula::or(random_atom(vars, rng), random_atom(vars, rng)),
        _ => random_atom(vars, rng),
    }
}

/// Modus ponens pairs: half built from implications found in the corpus,
/// half from synthetic formulas over random predicate names. Conjuncts are
/// shuffled and 0-2 distractors inserted; every label is confirmed with the
/// oracle at the default step budget.
pub fn gen_modus_ponens(corpus: &[Formula], n: usize, seed: u64) -> Result<Vec<LabeledExample>, GenError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut implications: Vec<(Formula, Formula)> = Vec::new();
    let mut pool: Vec<Formula> = Vec::new();
    for f in corpus {
        f.visit(&mut |g| {
            if let Formula::Implies(a, b) = g {
                implications.push(((**a).clone(), (**b).clone()));
            }
            pool.push(g.clone());
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let derived = |rng: &mut ChaCha8Rng| -> bool { !implications.is_empty() && rng.random_bool(0.5) };
    let draw = |rng: &mut ChaCha8Rng, from_corpus: bool| -> (Formula, Formula, Vec<Formula>) {
        let k = rng.random_range(0..=2);
        if from_corpus {
            let (a, b) = implications.choose(rng).unwrap().clone();
            let d = (0..k).map(|_| pool.choose(rng).unwrap().clone()).collect();
            (a, b, d)
        } else {
            let vars = ["X", "Y"];
            let width = rng.random_range(1..=2);
            let vs = &vars[..width];
            let d = (0..k).map(|_| random_small_formula(vs, rng)).collect();
            (random_small_formula(vs, rng), random_atom(vs, rng), d)
        }
    };
    let example = |p: Formula, g: Formula, label: bool| {
        (mp_derivable(&p, &g, DEFAULT_MP_STEPS) == label).then(|| LabeledExample::pair(Task::ModusPonens, text(&p), text(&g), label))
    };
    balanced(
        Task::ModusPonens,
        n,
        &mut rng,
        |rng| {
            let from_corpus = derived(rng);
            let (a, b, d) = draw(rng, from_corpus);
            let (p, g) = mp_instance(a, b, d, false, rng);
            example(p, g, true)
        },
        |rng| {
            let from_corpus = derived(rng);
            let (a, b, d) = draw(rng, from_corpus);
            if rng.random_bool(0.5) {
                // The antecedent is missing.
                let (p, g) = mp_instance(a, b, d, true, rng);
                example(p, g, false)
            } else {
                // The goal is some other formula.
                let other = if from_corpus { pool.choose(rng).unwrap().clone() } else { random_atom(&["X"], rng) };
                let (p, _) = mp_instance(a, b, d, false, rng);
                let (vars, _) = p.universal_prefix();
                let vars: BTreeSet<String> = vars.into_iter().map(str::to_string).collect();
                example(p.clone(), universal_closure(&vars, other), false)
            }
        },
    )
}

/// Variable names used when renaming bound variables.
const NAME_POOL: [&str; 8] = ["X", "Y", "Z", "U", "V", "W", "A", "B"];

fn bound_names(f: &Formula) -> Vec<String> {
    let mut names = BTreeSet::new();
    f.visit(&mut |g| {
        if let Formula::Forall(v, _) | Formula::Exists(v, _) = g {
            names.insert(v.clone());
        }
    });
    names.into_iter().collect()
}

/// Renames every bound variable injectively into names that are not free in
/// `f`.
fn random_alpha_variant(f: &Formula, pool: &[String], rng: &mut ChaCha8Rng) -> Formula {
    let bound = bound_names(f);
    let free = f.free_variables();
    let mut targets: Vec<&String> = pool.iter().filter(|n| !free.contains(*n)).collect();
    targets.shuffle(rng);
    if targets.len() < bound.len() {
        return f.clone();
    }
    let map: HashMap<String, String> = bound.iter().cloned().zip(targets.into_iter().cloned()).collect();
    f.rename_bound(&map)
}

/// Mutations that usually break alpha-equivalence: merge two bound variables
/// or change one symbol or variable occurrence.
fn alpha_mutation(f: &Formula, sig: &SignatureTable, rng: &mut ChaCha8Rng) -> Option<Formula> {
    let bound = bound_names(f);
    if bound.len() >= 2 && rng.random_bool(0.5) {
        let pick: Vec<&String> = bound.choose_multiple(rng, 2).collect();
        let map = HashMap::from([(pick[0].clone(), pick[1].clone())]);
        return Some(f.rename_bound(&map));
    }
    let mut sites = 0usize;
    count_sites(f, &mut sites);
    if sites == 0 {
        return None;
    }
    let target = rng.random_range(0..sites);
    let mut counter = 0usize;
    let mut replacement = |name: &str, arity: usize, site: Site, rng: &mut ChaCha8Rng| -> String {
        let options: Vec<String> = match site {
            Site::Variable => NAME_POOL.iter().map(|s| s.to_string()).filter(|s| s != name).collect(),
            Site::Predicate | Site::Symbol => sig
                .labels()
                .iter()
                .filter(|l| l.arity == arity && l.name != name && is_symbol_name(&l.name))
                .filter(|l| (l.kind == LabelKind::Predicate) == (site == Site::Predicate))
                .filter(|l| matches!(l.kind, LabelKind::Predicate | LabelKind::Function | LabelKind::Constant))
                .map(|l| l.name.clone())
                .collect(),
        };
        options.choose(rng).cloned().unwrap_or_else(|| format!("{}x", name.to_lowercase()))
    };
    Some(mutate_formula(f, target, &mut counter, &mut replacement, rng))
}

fn count_sites(f: &Formula, n: &mut usize) {
    match f {
        Formula::Atom(_, args) => {
            *n += 1;
            for a in args {
                *n += a.node_count();
            }
        }
        Formula::Not(a) => count_sites(a, n),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
            count_sites(a, n);
            count_sites(b, n);
        }
        Formula::Forall(_, a) | Formula::Exists(_, a) => count_sites(a, n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Site {
    Predicate,
    Symbol,
    Variable,
}

type Replace<'a> = dyn FnMut(&str, usize, Site, &mut ChaCha8Rng) -> String + 'a;

fn mutate_formula(f: &Formula, target: usize, counter: &mut usize, rep: &mut Replace, rng: &mut ChaCha8Rng) -> Formula {
    let mut sub = |g: &Formula, counter: &mut usize, rng: &mut ChaCha8Rng| Box::new(mutate_formula(g, target, counter, rep, rng));
    match f {
        Formula::Atom(p, args) => {
            let name = if *counter == target { rep(p, args.len(), Site::Predicate, rng) } else { p.clone() };
            *counter += 1;
            let args = args.iter().map(|a| mutate_term(a, target, counter, rep, rng)).collect();
            Formula::Atom(name, args)
        }
        Formula::Not(a) => Formula::Not(sub(a, counter, rng)),
        Formula::And(a, b) => Formula::And(sub(a, counter, rng), sub(b, counter, rng)),
        Formula::Or(a, b) => Formula::Or(sub(a, counter, rng), sub(b, counter, rng)),
        Formula::Implies(a, b) => Formula::Implies(sub(a, counter, rng), sub(b, counter, rng)),
        Formula::Iff(a, b) => Formula::Iff(sub(a, counter, rng), sub(b, counter, rng)),
        Formula::Forall(v, a) => Formula::Forall(v.clone(), sub(a, counter, rng)),
        Formula::Exists(v, a) => Formula::Exists(v.clone(), sub(a, counter, rng)),
    }
}

fn mutate_term(t: &Term, target: usize, counter: &mut usize, rep: &mut Replace, rng: &mut ChaCha8Rng) -> Term {
    let hit = *counter == target;
    *counter += 1;
    match t {
        Term::Variable(v) => Term::Variable(if hit { rep(v, 0, Site::Variable, rng) } else { v.clone() }),
        Term::Constant(c) => {
            if hit {
                Term::app(rep(c, 0, Site::Symbol, rng), vec![])
            } else {
                t.clone()
            }
        }
        Term::Application(h, args) => {
            let name = if hit { rep(h, args.len(), Site::Symbol, rng) } else { h.clone() };
            Term::Application(name, args.iter().map(|a| mutate_term(a, target, counter, rep, rng)).collect())
        }
    }
}

/// Positives rename bound variables injectively; negatives mutate the
/// formula and then rename it the same way, so that variable names alone do
/// not give the label away.
pub fn gen_alpha(corpus: &[Formula], n: usize, seed: u64) -> Result<Vec<LabeledExample>, GenError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if corpus.is_empty() {
        return Err(GenError::EmptyCorpus);
    }
    let exprs: Vec<Expr> = corpus.iter().cloned().map(Expr::Formula).collect();
    let sig = build_signature(&exprs);
    let mut pool: BTreeSet<String> = NAME_POOL.iter().map(|s| s.to_string()).collect();
    for f in corpus {
        pool.extend(f.all_variables());
    }
    let pool: Vec<String> = pool.into_iter().collect();
    let with_binders: Vec<&Formula> = corpus.iter().filter(|f| !bound_names(f).is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    balanced(
        Task::AlphaEquiv,
        n,
        &mut rng,
        |rng| {
            let f = *with_binders.choose(rng)?;
            let g = random_alpha_variant(f, &pool, rng);
            alpha_equivalent(f, &g).then(|| LabeledExample::pair(Task::AlphaEquiv, text(f), text(&g), true))
        },
        |rng| {
            let f = corpus.choose(rng)?;
            let m = alpha_mutation(f, &sig, rng)?;
            let g = random_alpha_variant(&m, &pool, rng);
            // Mutations must stay parseable with the same reading.
            let reparsed = parse_formula(&text(&g)).ok()?;
            (!alpha_equivalent(f, &reparsed)).then(|| LabeledExample::pair(Task::AlphaEquiv, text(f), text(&reparsed), false))
        },
    )
}

/// All terms occurring as atom arguments, with their subterms.
pub fn harvest_terms(corpus: &[Formula]) -> Vec<Term> {
    let mut seen = BTreeSet::new();
    for f in corpus {
        for t in f.terms() {
            seen.insert(t.clone());
        }
    }
    seen.into_iter().collect()
}

/// Formulas (label 1) against terms harvested from atom arguments (label 0).
/// Strings whose class is ambiguous under the corpus signature are skipped.
pub fn gen_term_vs_formula(corpus: &[Formula], n: usize, seed: u64) -> Result<Vec<LabeledExample>, GenError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if corpus.is_empty() {
        return Err(GenError::EmptyCorpus);
    }
    let exprs: Vec<Expr> = corpus.iter().cloned().map(Expr::Formula).collect();
    let sig = build_signature(&exprs);
    let formulas: Vec<String> =
        corpus.iter().map(text).filter(|s| classify_string(s, &sig) == StringClass::Formula).collect();
    let terms: Vec<String> = harvest_terms(corpus)
        .iter()
        .map(term_text)
        .filter(|s| classify_string(s, &sig) == StringClass::Term)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    balanced(
        Task::TermVsFormula,
        n,
        &mut rng,
        |rng| formulas.choose(rng).map(|s| LabeledExample::single(Task::TermVsFormula, s.clone(), true)),
        |rng| terms.choose(rng).map(|s| LabeledExample::single(Task::TermVsFormula, s.clone(), false)),
    )
}

/// Renames the variables of `t` to names unused in `avoid`.
fn rename_apart(t: &Term, avoid: &BTreeSet<String>) -> Term {
    let mut map = HashMap::new();
    let mut next = 1;
    for v in t.variables() {
        let fresh = loop {
            let candidate = format!("{v}{next}");
            next += 1;
            if !avoid.contains(&candidate) {
                break candidate;
            }
        };
        map.insert(v, fresh);
    }
    t.rename_vars(&map)
}

/// Replaces a random subterm with a fresh variable, giving a term that
/// unifies with the original.
fn generalize(t: &Term, rng: &mut ChaCha8Rng) -> Term {
    let subs = t.subterms();
    let target = rng.random_range(0..subs.len());
    fn go(t: &Term, target: usize, counter: &mut usize) -> Term {
        let here = *counter;
        *counter += 1;
        if here == target {
            return Term::var("G");
        }
        match t {
            Term::Application(h, args) => Term::Application(h.clone(), args.iter().map(|a| go(a, target, counter)).collect()),
            _ => t.clone(),
        }
    }
    go(t, target, &mut 0)
}

/// Pairs of harvested terms, variables renamed apart, labeled by the
/// unification oracle. When one class is rare, positives are also built by
/// generalizing a term.
pub fn gen_unifiability(corpus: &[Formula], n: usize, seed: u64) -> Result<Vec<LabeledExample>, GenError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let terms = harvest_terms(corpus);
    if terms.is_empty() {
        return Err(GenError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| {
        let a = terms.choose(rng).unwrap().clone();
        let b = terms.choose(rng).unwrap();
        let b = rename_apart(b, &a.variables());
        (a, b)
    };
    let emit = |a: &Term, b: &Term, label: bool| {
        (unify(a, b).is_unifiable() == label).then(|| LabeledExample::pair(Task::Unifiable, term_text(a), term_text(b), label))
    };
    balanced(
        Task::Unifiable,
        n,
        &mut rng,
        |rng| {
            if rng.random_bool(0.75) {
                let (a, b) = sample(rng);
                emit(&a, &b, true)
            } else {
                let a = terms.choose(rng).unwrap().clone();
                let g = rename_apart(&generalize(&a, rng), &a.variables());
                emit(&a, &g, true)
            }
        },
        |rng| {
            let (a, b) = sample(rng);
            emit(&a, &b, false)
        },
    )
}

pub fn generate(task: Task, corpus: &[Formula], n: usize, seed: u64) -> Result<Vec<LabeledExample>, GenError> {
    match task {
        Task::WellFormed => gen_well_formed(corpus, n, seed),
        Task::Subformula => gen_subformula(corpus, n, seed),
        Task::ModusPonens => gen_modus_ponens(corpus, n, seed),
        Task::AlphaEquiv => gen_alpha(corpus, n, seed),
        Task::TermVsFormula => gen_term_vs_formula(corpus, n, seed),
        Task::Unifiable => gen_unifiability(corpus, n, seed),
        Task::PremiseSelection => Err(GenError::Exhausted { task, class: "any", wanted: n, got: 0 }),
    }
}

/// One record per parent-child edge of every subtree of every formula.
pub fn gen_subtree_pairs(corpus: &[Formula]) -> Vec<SubtreePair> {
    let exprs: Vec<Expr> = corpus.iter().cloned().map(Expr::Formula).collect();
    let mut out = Vec::new();
    for e in all_subtrees(&exprs) {
        let formula = pretty_print(&e);
        for (i, c) in expr_children(&e).iter().enumerate() {
            out.push(SubtreePair { formula: formula.clone(), child_index: i, subtree: pretty_print(c) });
        }
    }
    out
}

/// A disagreement between an example's label and its oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditFailure {
    pub index: usize,
    pub example: LabeledExample,
    pub reason: String,
}

/// Re-derives every label with the matching oracle. `signature` is used for
/// the term/formula distinction. Premise-selection examples are not checked.
pub fn audit(examples: &[LabeledExample], signature: &SignatureTable) -> Vec<AuditFailure> {
    let verdicts = crate::par::map(examples, |e| check_label(e, signature));
    verdicts
        .into_iter()
        .enumerate()
        .filter_map(|(index, r)| r.err().map(|reason| AuditFailure { index, example: examples[index].clone(), reason }))
        .collect()
}

fn check_label(e: &LabeledExample, sig: &SignatureTable) -> Result<(), String> {
    let b = || e.b.as_deref().ok_or_else(|| "missing second string".to_string());
    let f = |s: &str| parse_formula(s).map_err(|err| format!("{s:?}: {err}"));
    let t = |s: &str| parse_term(s).map_err(|err| format!("{s:?}: {err}"));
    let truth = match e.task {
        Task::WellFormed => is_well_formed(&e.a),
        Task::Subformula => is_subformula(&f(b()?)?, &f(&e.a)?),
        Task::ModusPonens => mp_derivable(&f(&e.a)?, &f(b()?)?, DEFAULT_MP_STEPS),
        Task::AlphaEquiv => alpha_equivalent(&f(&e.a)?, &f(b()?)?),
        Task::TermVsFormula => match classify_string(&e.a, sig) {
            StringClass::Formula => true,
            StringClass::Term => false,
            StringClass::Neither => return Err("neither term nor formula".into()),
        },
        Task::Unifiable => unify(&t(&e.a)?, &t(b()?)?).is_unifiable(),
        Task::PremiseSelection => return Ok(()),
    };
    if e.task.is_pairwise() != e.b.is_some() {
        return Err("second string presence does not match the task".into());
    }
    if u8::from(truth) == e.label {
        Ok(())
    } else {
        Err(format!("oracle says {}", u8::from(truth)))
    }
}

/// Reads premise-selection blocks: a `C <conjecture>` line followed by
/// `+ <premise>` / `- <premise>` lines, blocks separated by blank lines.
pub fn parse_deepmath(text: &str) -> Result<Vec<LabeledExample>, DataError> {
    let mut out = Vec::new();
    let mut conjecture: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: &str| DataError::Line { line: i + 1, message: message.to_string() };
        if line.is_empty() {
            conjecture = None;
            continue;
        }
        let (tag, rest) = line.split_at(1);
        let body = rest.trim();
        if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
            return Err(err("expected a `C`, `+` or `-` prefix followed by a space"));
        }
        if body.is_empty() {
            return Err(err("missing formula"));
        }
        match tag {
            "C" => {
                if conjecture.is_some() {
                    return Err(err("second conjecture in one block"));
                }
                conjecture = Some(body.to_string());
            }
            "+" | "-" => {
                let c = conjecture.as_ref().ok_or_else(|| err("premise before any conjecture"))?;
                out.push(LabeledExample::pair(Task::PremiseSelection, c.clone(), body.to_string(), tag == "+"));
            }
            _ => return Err(err("expected a `C`, `+` or `-` prefix")),
        }
    }
    Ok(out)
}

pub fn load_deepmath(path: &Path) -> Result<Vec<LabeledExample>, DataError> {
    parse_deepmath(&std::fs::read_to_string(path)?)
}

pub fn write_jsonl<T: Serialize>(items: &[T], out: &mut impl Write) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl<T: Serialize>(items: &[T], path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_jsonl(items, &mut w)?;
    w.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(input: impl BufRead) -> Result<Vec<T>, DataError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DataError::Line { line: i + 1, message: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}

pub fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    read_jsonl(BufReader::new(File::open(path)?))
}

/// Symbols available to [`random_formula`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaSpec {
    pub predicates: Vec<(String, usize)>,
    pub functions: Vec<(String, usize)>,
    pub constants: Vec<String>,
    pub variables: Vec<String>,
    /// Include `<=>` among the binary connectives.
    pub iff: bool,
    /// Include the existential quantifier.
    pub exists: bool,
}

impl FormulaSpec {
    /// Fifteen labels: `~ & | =>`, `!`, `?`, predicates `p/1 q/2 r/0`,
    /// function `f/1`, constants `a b` and variables `X Y Z`.
    pub fn toy() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        FormulaSpec {
            predicates: vec![("p".into(), 1), ("q".into(), 2), ("r".into(), 0)],
            functions: vec![("f".into(), 1)],
            constants: s(&["a", "b"]),
            variables: s(&["X", "Y", "Z"]),
            iff: false,
            exists: true,
        }
    }

    /// A larger signature with every connective, for parser and oracle
    /// stress tests.
    pub fn rich() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        FormulaSpec {
            predicates: vec![("p".into(), 1), ("q".into(), 2), ("r".into(), 0), ("s".into(), 3), ("in".into(), 2)],
            functions: vec![("f".into(), 1), ("g".into(), 2), ("h".into(), 1)],
            constants: s(&["a", "b", "c", "zero"]),
            variables: s(&["X", "Y", "Z", "W"]),
            iff: true,
            exists: true,
        }
    }

    pub fn label_count(&self) -> usize {
        let connectives = 4 + usize::from(self.iff);
        let quantifiers = 1 + usize::from(self.exists);
        connectives + quantifiers + self.predicates.len() + self.functions.len() + self.constants.len() + self.variables.len()
    }
}

/// A random formula whose tree depth is at most `max_depth` (at least 1).
/// Variables appear only where bound, except when the spec has no constants.
pub fn random_formula(spec: &FormulaSpec, max_depth: usize, rng: &mut impl Rng) -> Formula {
    gen_formula(spec, max_depth.max(1), &mut Vec::new(), rng)
}

fn gen_formula(spec: &FormulaSpec, depth: usize, bound: &mut Vec<String>, rng: &mut impl Rng) -> Formula {
    let atoms_only = depth <= 1;
    let choice = if atoms_only { 0 } else { rng.random_range(0..8) };
    match choice {
        0..=2 => gen_atom(spec, depth, bound, rng),
        3 => Formula::not(gen_formula(spec, depth - 1, bound, rng)),
        4..=5 => {
            let a = gen_formula(spec, depth - 1, bound, rng);
            let b = gen_formula(spec, depth - 1, bound, rng);
            let ops = if spec.iff { 4 } else { 3 };
            match rng.random_range(0..ops) {
                0 => Formula::and(a, b),
                1 => Formula::or(a, b),
                2 => Formula::implies(a, b),
                _ => Formula::iff(a, b),
            }
        }
        _ => {
            let v = spec.variables.choose(rng).expect("spec has variables").clone();
            bound.push(v.clone());
            let body = gen_formula(spec, depth - 1, bound, rng);
            bound.pop();
            if spec.exists && rng.random_bool(0.5) {
                Formula::exists(v, body)
            } else {
                Formula::forall(v, body)
            }
        }
    }
}

fn gen_atom(spec: &FormulaSpec, depth: usize, bound: &[String], rng: &mut impl Rng) -> Formula {
    let fits: Vec<&(String, usize)> = spec.predicates.iter().filter(|(_, a)| *a == 0 || depth >= 2).collect();
    let (name, arity) = (*fits.choose(rng).expect("spec has a predicate")).clone();
    let args = (0..arity).map(|_| gen_term(spec, depth - 1, bound, rng)).collect();
    Formula::atom(name, args)
}

fn gen_term(spec: &FormulaSpec, depth: usize, bound: &[String], rng: &mut impl Rng) -> Term {
    if depth >= 2 && !spec.functions.is_empty() && rng.random_bool(0.3) {
        let (name, arity) = spec.functions.choose(rng).unwrap().clone();
        let args = (0..arity).map(|_| gen_term(spec, depth - 1, bound, rng)).collect();
        return Term::app(name, args);
    }
    let use_var = !bound.is_empty() && (spec.constants.is_empty() || rng.random_bool(0.6));
    if use_var {
        Term::var(bound.choose(rng).unwrap().clone())
    } else if let Some(c) = spec.constants.choose(rng) {
        Term::constant(c.clone())
    } else {
        Term::var(spec.variables.choose(rng).expect("spec has variables").clone())
    }
}

/// Up to `n` distinct random formulas; a target depth is drawn uniformly from
/// `1..=max_depth` for each attempt.
pub fn random_corpus(spec: &FormulaSpec, n: usize, max_depth: usize, seed: u64) -> Vec<Formula> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < n && attempts < 50 * n.max(1) {
        attempts += 1;
        let d = rng.random_range(1..=max_depth.max(1));
        let f = random_formula(spec, d, &mut rng);
        if seen.insert(f.clone()) {
            out.push(f);
        }
    }
    out
}

/// Count of examples per label.
pub fn class_counts(examples: &[LabeledExample]) -> BTreeMap<u8, usize> {
    let mut m = BTreeMap::new();
    for e in examples {
        *m.entry(e.label).or_insert(0) += 1;
    }
    m
}
