//! Abstract syntax for first-order terms and formulas.
//!
//! Variables start with an uppercase letter, function, constant and
//! predicate names with a lowercase letter or digit. Values are immutable
//! once built and can be shared freely between threads.

mod signature;
mod subst;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

pub use signature::{Label, LabelKind, SignatureTable, CharVocab, PAD, UNK};
pub use subst::Substitution;

/// A first-order term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Variable(String),
    Constant(String),
    /// Function application with at least one argument.
    Application(String, Vec<Term>),
}

/// A first-order formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Atom(String, Vec<Term>),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Forall(String, Box<Formula>),
    Exists(String, Box<Formula>),
}

/// Either a term or a formula. Subtrees of the labeled tree view can be of
/// both sorts, so most tree-level code works on this type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Term(Term),
    Formula(Formula),
}

pub fn is_variable_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn is_symbol_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c.is_ascii_digit())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Variable(name.into())
    }

    pub fn constant(name: impl Into<String>) -> Term {
        Term::Constant(name.into())
    }

    /// Builds an application, falling back to a constant when `args` is empty.
    pub fn app(name: impl Into<String>, args: Vec<Term>) -> Term {
        if args.is_empty() {
            Term::Constant(name.into())
        } else {
            Term::Application(name.into(), args)
        }
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Term::Variable(_))
    }

    /// Top symbol name and arity.
    pub fn head(&self) -> (&str, usize) {
        match self {
            Term::Variable(v) => (v, 0),
            Term::Constant(c) => (c, 0),
            Term::Application(f, args) => (f, args.len()),
        }
    }

    pub fn occurs(&self, var: &str) -> bool {
        match self {
            Term::Variable(v) => v == var,
            Term::Constant(_) => false,
            Term::Application(_, args) => args.iter().any(|a| a.occurs(var)),
        }
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Variable(v) => {
                out.insert(v.clone());
            }
            Term::Constant(_) => {}
            Term::Application(_, args) => args.iter().for_each(|a| a.collect_variables(out)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Term::Variable(_) | Term::Constant(_) => 1,
            Term::Application(_, args) => 1 + args.iter().map(Term::depth).max().unwrap_or(0),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Term::Variable(_) | Term::Constant(_) => 1,
            Term::Application(_, args) => 1 + args.iter().map(Term::node_count).sum::<usize>(),
        }
    }

    /// Every subterm, including the term itself, in pre-order.
    pub fn subterms(&self) -> Vec<&Term> {
        let mut out = vec![self];
        if let Term::Application(_, args) = self {
            for a in args {
                out.extend(a.subterms());
            }
        }
        out
    }

    /// Simultaneous replacement of variables.
    pub fn apply(&self, s: &Substitution) -> Term {
        match self {
            Term::Variable(v) => s.get(v).cloned().unwrap_or_else(|| self.clone()),
            Term::Constant(_) => self.clone(),
            Term::Application(f, args) => {
                Term::Application(f.clone(), args.iter().map(|a| a.apply(s)).collect())
            }
        }
    }

    /// Renames variables according to `map`; unmapped variables are kept.
    pub fn rename_vars(&self, map: &HashMap<String, String>) -> Term {
        match self {
            Term::Variable(v) => Term::Variable(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            Term::Constant(_) => self.clone(),
            Term::Application(f, args) => {
                Term::Application(f.clone(), args.iter().map(|a| a.rename_vars(map)).collect())
            }
        }
    }
}

/// Free-standing form of [`Term::apply`].
pub fn apply_substitution(t: &Term, s: &Substitution) -> Term {
    t.apply(s)
}

impl Formula {
    pub fn atom(pred: impl Into<String>, args: Vec<Term>) -> Formula {
        Formula::Atom(pred.into(), args)
    }

    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn iff(a: Formula, b: Formula) -> Formula {
        Formula::Iff(Box::new(a), Box::new(b))
    }

    pub fn forall(v: impl Into<String>, body: Formula) -> Formula {
        Formula::Forall(v.into(), Box::new(body))
    }

    pub fn exists(v: impl Into<String>, body: Formula) -> Formula {
        Formula::Exists(v.into(), Box::new(body))
    }

    /// Wraps `body` in universal quantifiers over `vars`, outermost first.
    pub fn forall_many<I, S>(vars: I, body: Formula) -> Formula
    where
        I: IntoIterator<Item = S>,
        I::IntoIter: DoubleEndedIterator,
        S: Into<String>,
    {
        vars.into_iter()
            .rev()
            .fold(body, |acc, v| Formula::forall(v, acc))
    }

    pub fn is_quantifier(&self) -> bool {
        matches!(self, Formula::Forall(..) | Formula::Exists(..))
    }

    /// Direct formula children (quantifier bodies, connective operands).
    pub fn formula_children(&self) -> Vec<&Formula> {
        match self {
            Formula::Atom(..) => vec![],
            Formula::Not(a) | Formula::Forall(_, a) | Formula::Exists(_, a) => vec![a],
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                vec![a, b]
            }
        }
    }

    /// Depth in the labeled tree view (bound-variable leaves and term
    /// arguments included).
    pub fn depth(&self) -> usize {
        match self {
            Formula::Atom(_, args) => 1 + args.iter().map(Term::depth).max().unwrap_or(0),
            Formula::Not(a) => 1 + a.depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                1 + a.depth().max(b.depth())
            }
            Formula::Forall(_, a) | Formula::Exists(_, a) => 1 + a.depth().max(1),
        }
    }

    /// Number of labeled nodes in the tree view.
    pub fn node_count(&self) -> usize {
        match self {
            Formula::Atom(_, args) => 1 + args.iter().map(Term::node_count).sum::<usize>(),
            Formula::Not(a) => 1 + a.node_count(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                1 + a.node_count() + b.node_count()
            }
            Formula::Forall(_, a) | Formula::Exists(_, a) => 2 + a.node_count(),
        }
    }

    pub fn free_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            Formula::Atom(_, args) => {
                for v in args.iter().flat_map(Term::variables) {
                    if !bound.contains(&v) {
                        out.insert(v);
                    }
                }
            }
            Formula::Not(a) => a.collect_free(bound, out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::Forall(v, a) | Formula::Exists(v, a) => {
                bound.push(v.clone());
                a.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    /// All variable names occurring anywhere, bound or free.
    pub fn all_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| match f {
            Formula::Atom(_, args) => out.extend(args.iter().flat_map(Term::variables)),
            Formula::Forall(v, _) | Formula::Exists(v, _) => {
                out.insert(v.clone());
            }
            _ => {}
        });
        out
    }

    /// Pre-order walk over formula nodes.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Formula)) {
        f(self);
        for c in self.formula_children() {
            c.visit(f);
        }
    }

    /// Terms that appear as atom arguments, with all their subterms.
    pub fn terms(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        self.visit(&mut |f| {
            if let Formula::Atom(_, args) = f {
                for a in args {
                    out.extend(a.subterms());
                }
            }
        });
        out
    }

    /// Renames bound variables to `V1, V2, ...` in order of first binder
    /// occurrence (pre-order, left to right). Free variables are kept; any
    /// canonical name that clashes with a free variable is skipped.
    pub fn canonical_rename(&self) -> Formula {
        let free = self.free_variables();
        let mut next = 0usize;
        let mut scope: Vec<(String, String)> = Vec::new();
        self.canonical_inner(&free, &mut next, &mut scope)
    }

    fn canonical_inner(
        &self,
        free: &BTreeSet<String>,
        next: &mut usize,
        scope: &mut Vec<(String, String)>,
    ) -> Formula {
        match self {
            Formula::Atom(p, args) => {
                let map: HashMap<String, String> = scope.iter().cloned().collect();
                Formula::Atom(p.clone(), args.iter().map(|a| a.rename_vars(&map)).collect())
            }
            Formula::Not(a) => Formula::not(a.canonical_inner(free, next, scope)),
            Formula::And(a, b) => Formula::and(
                a.canonical_inner(free, next, scope),
                b.canonical_inner(free, next, scope),
            ),
            Formula::Or(a, b) => Formula::or(
                a.canonical_inner(free, next, scope),
                b.canonical_inner(free, next, scope),
            ),
            Formula::Implies(a, b) => Formula::implies(
                a.canonical_inner(free, next, scope),
                b.canonical_inner(free, next, scope),
            ),
            Formula::Iff(a, b) => Formula::iff(
                a.canonical_inner(free, next, scope),
                b.canonical_inner(free, next, scope),
            ),
            Formula::Forall(v, body) | Formula::Exists(v, body) => {
                let fresh = loop {
                    *next += 1;
                    let name = format!("V{next}");
                    if !free.contains(&name) {
                        break name;
                    }
                };
                // Later entries shadow earlier ones when collected into a map.
                scope.push((v.clone(), fresh.clone()));
                let inner = body.canonical_inner(free, next, scope);
                scope.pop();
                if matches!(self, Formula::Forall(..)) {
                    Formula::forall(fresh, inner)
                } else {
                    Formula::exists(fresh, inner)
                }
            }
        }
    }

    /// Renames bound variables through `map` (binder name -> new name),
    /// respecting scope so free occurrences of the same name are untouched.
    pub fn rename_bound(&self, map: &HashMap<String, String>) -> Formula {
        self.rename_bound_inner(map, &mut Vec::new())
    }

    fn rename_bound_inner(&self, map: &HashMap<String, String>, scope: &mut Vec<(String, String)>) -> Formula {
        match self {
            Formula::Atom(p, args) => {
                let m: HashMap<String, String> = scope.iter().cloned().collect();
                Formula::Atom(p.clone(), args.iter().map(|a| a.rename_vars(&m)).collect())
            }
            Formula::Not(a) => Formula::not(a.rename_bound_inner(map, scope)),
            Formula::And(a, b) => Formula::and(a.rename_bound_inner(map, scope), b.rename_bound_inner(map, scope)),
            Formula::Or(a, b) => Formula::or(a.rename_bound_inner(map, scope), b.rename_bound_inner(map, scope)),
            Formula::Implies(a, b) => {
                Formula::implies(a.rename_bound_inner(map, scope), b.rename_bound_inner(map, scope))
            }
            Formula::Iff(a, b) => Formula::iff(a.rename_bound_inner(map, scope), b.rename_bound_inner(map, scope)),
            Formula::Forall(v, body) | Formula::Exists(v, body) => {
                let new = map.get(v).cloned().unwrap_or_else(|| v.clone());
                scope.push((v.clone(), new.clone()));
                let inner = body.rename_bound_inner(map, scope);
                scope.pop();
                if matches!(self, Formula::Forall(..)) {
                    Formula::forall(new, inner)
                } else {
                    Formula::exists(new, inner)
                }
            }
        }
    }

    /// Strips leading universal quantifiers, returning the bound names and
    /// the remaining body.
    pub fn universal_prefix(&self) -> (Vec<&str>, &Formula) {
        let mut vars = Vec::new();
        let mut cur = self;
        while let Formula::Forall(v, body) = cur {
            vars.push(v.as_str());
            cur = body;
        }
        (vars, cur)
    }

    /// Counts (universal, existential) quantifier nodes.
    pub fn quantifier_count(&self) -> (usize, usize) {
        let mut counts = (0, 0);
        self.visit(&mut |f| match f {
            Formula::Forall(..) => counts.0 += 1,
            Formula::Exists(..) => counts.1 += 1,
            _ => {}
        });
        counts
    }
}

/// Pretty-prints a formula in the TPTP-like surface syntax. Binary
/// connectives are always parenthesized; left operands that would swallow
/// the rest of the line (quantifiers) get an extra pair of parentheses.
pub fn pretty_print(e: &Expr) -> String {
    e.to_string()
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Variable(v) | Term::Constant(v) => f.write_str(v),
            Term::Application(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

// Quantifier bodies extend maximally to the right, so a formula whose printed
// form ends in an open quantifier must be bracketed when something follows it.
fn ends_open(f: &Formula) -> bool {
    match f {
        Formula::Forall(..) | Formula::Exists(..) => true,
        Formula::Not(a) => ends_open(a),
        _ => false,
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let binary = |f: &mut fmt::Formatter<'_>, a: &Formula, op: &str, b: &Formula| {
            if ends_open(a) {
                write!(f, "(({a}) {op} {b})")
            } else {
                write!(f, "({a} {op} {b})")
            }
        };
        match self {
            Formula::Atom(p, args) => {
                f.write_str(p)?;
                if !args.is_empty() {
                    f.write_str("(")?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            f.write_str(",")?;
                        }
                        write!(f, "{a}")?;
                    }
                    f.write_str(")")?;
                }
                Ok(())
            }
            Formula::Not(a) => write!(f, "~{a}"),
            Formula::And(a, b) => binary(f, a, "&", b),
            Formula::Or(a, b) => binary(f, a, "|", b),
            Formula::Implies(a, b) => binary(f, a, "=>", b),
            Formula::Iff(a, b) => binary(f, a, "<=>", b),
            Formula::Forall(v, a) => write!(f, "![{v}]: {a}"),
            Formula::Exists(v, a) => write!(f, "?[{v}]: {a}"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Term(t) => t.fmt(f),
            Expr::Formula(g) => g.fmt(f),
        }
    }
}

impl Expr {
    pub fn depth(&self) -> usize {
        match self {
            Expr::Term(t) => t.depth(),
            Expr::Formula(f) => f.depth(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Term(t) => t.node_count(),
            Expr::Formula(f) => f.node_count(),
        }
    }
}

impl From<Term> for Expr {
    fn from(t: Term) -> Self {
        Expr::Term(t)
    }
}

impl From<Formula> for Expr {
    fn from(f: Formula) -> Self {
        Expr::Formula(f)
    }
}
