//! Exact deciders for the logical properties used to label datasets.

use std::collections::BTreeSet;

use crate::fol::{Formula, Substitution, Term};
use crate::parser::parse_formula;

/// Default step budget for [`mp_derivable`].
pub const DEFAULT_MP_STEPS: usize = 3;

/// All subformulas of `f`, including `f` itself. Recursion stops at atoms;
/// terms are never entered.
pub fn subformulas(f: &Formula) -> BTreeSet<Formula> {
    let mut out = BTreeSet::new();
    f.visit(&mut |g| {
        out.insert(g.clone());
    });
    out
}

pub fn is_subformula(candidate: &Formula, whole: &Formula) -> bool {
    let mut found = false;
    whole.visit(&mut |g| found |= g == candidate);
    found
}

/// Equality up to consistent renaming of bound variables.
pub fn alpha_equivalent(a: &Formula, b: &Formula) -> bool {
    a.canonical_rename() == b.canonical_rename()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnifyFailure {
    Clash,
    OccursCheck,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnifyResult {
    Unifiable(Substitution),
    NotUnifiable(UnifyFailure),
}

impl UnifyResult {
    pub fn is_unifiable(&self) -> bool {
        matches!(self, UnifyResult::Unifiable(_))
    }

    pub fn mgu(&self) -> Option<&Substitution> {
        match self {
            UnifyResult::Unifiable(s) => Some(s),
            UnifyResult::NotUnifiable(_) => None,
        }
    }
}

/// Syntactic first-order unification with occurs check. The returned most
/// general unifier is idempotent.
pub fn unify(t1: &Term, t2: &Term) -> UnifyResult {
    let mut sigma = Substitution::new();
    let mut pending = vec![(t1.clone(), t2.clone())];
    while let Some((a, b)) = pending.pop() {
        let a = a.apply(&sigma);
        let b = b.apply(&sigma);
        if a == b {
            continue;
        }
        match (a, b) {
            (Term::Variable(v), t) | (t, Term::Variable(v)) => {
                if t.occurs(&v) {
                    return UnifyResult::NotUnifiable(UnifyFailure::OccursCheck);
                }
                let mut single = Substitution::new();
                single.bind(v, t);
                sigma = sigma.compose(&single);
            }
            (Term::Application(f, xs), Term::Application(g, ys)) if f == g && xs.len() == ys.len() => {
                // Reversed so the leftmost argument pair is solved first.
                pending.extend(xs.into_iter().zip(ys).rev());
            }
            _ => return UnifyResult::NotUnifiable(UnifyFailure::Clash),
        }
    }
    debug_assert!(sigma.is_idempotent());
    debug_assert_eq!(t1.apply(&sigma), t2.apply(&sigma));
    UnifyResult::Unifiable(sigma)
}

/// Whether `goal` follows from `premise` by at most `k` rule applications of
/// conjunction elimination (`A & B` gives both `A` and `B`) and modus ponens
/// with syntactically identical antecedents.
///
/// Both sides are canonically renamed and a shared leading universal prefix
/// is stripped before the search. Facts are compared up to bound-variable
/// renaming, nothing more: no unification or matching takes place.
pub fn mp_derivable(premise: &Formula, goal: &Formula, k: usize) -> bool {
    let p = premise.canonical_rename();
    let g = goal.canonical_rename();
    let (pv, _) = p.universal_prefix();
    let (gv, _) = g.universal_prefix();
    let shared = pv.iter().zip(&gv).take_while(|(a, b)| a == b).count();
    let p = strip_foralls(&p, shared).canonical_rename();
    let g = strip_foralls(&g, shared).canonical_rename();
    let mut known = vec![p];
    search(&mut known, &g, k)
}

fn strip_foralls(f: &Formula, n: usize) -> Formula {
    let mut cur = f;
    for _ in 0..n {
        match cur {
            Formula::Forall(_, body) => cur = body,
            _ => unreachable!("prefix shorter than counted"),
        }
    }
    cur.clone()
}

fn search(known: &mut Vec<Formula>, goal: &Formula, budget: usize) -> bool {
    if known.contains(goal) {
        return true;
    }
    if budget == 0 {
        return false;
    }
    let mut steps: Vec<Vec<Formula>> = Vec::new();
    for fact in known.iter() {
        match fact {
            Formula::And(a, b) => {
                let new: Vec<Formula> = [a.canonical_rename(), b.canonical_rename()]
                    .into_iter()
                    .filter(|x| !known.contains(x))
                    .collect();
                if !new.is_empty() && !steps.contains(&new) {
                    steps.push(new);
                }
            }
            Formula::Implies(a, b) => {
                let consequent = b.canonical_rename();
                if known.contains(&a.canonical_rename()) && !known.contains(&consequent) {
                    let new = vec![consequent];
                    if !steps.contains(&new) {
                        steps.push(new);
                    }
                }
            }
            _ => {}
        }
    }
    for new in steps {
        let before = known.len();
        for f in new {
            if !known.contains(&f) {
                known.push(f);
            }
        }
        let hit = search(known, goal, budget - 1);
        known.truncate(before);
        if hit {
            return true;
        }
    }
    false
}

pub fn is_well_formed(s: &str) -> bool {
    parse_formula(s).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_formula as pf, parse_term as pt};

    #[test]
    fn subformula_set_stops_at_atoms() {
        let f = pf("~f(g(X),c)").unwrap();
        let set = subformulas(&f);
        assert_eq!(set.len(), 2);
        assert!(set.contains(&pf("f(g(X),c)").unwrap()));
        assert!(!set.contains(&pf("g(X)").unwrap()));
        assert_eq!(subformulas(&pf("p").unwrap()).len(), 1);
    }

    #[test]
    fn subformula_set_matches_tree_walk() {
        let f = pf("(p & q) => r").unwrap();
        // Independent walk: explicit stack over formula nodes.
        let mut walk = BTreeSet::new();
        let mut stack = vec![&f];
        while let Some(g) = stack.pop() {
            walk.insert(g.clone());
            stack.extend(g.formula_children());
        }
        assert_eq!(walk.len(), 5);
        assert_eq!(subformulas(&f), walk);
    }

    #[test]
    fn subformula_relation() {
        let whole = pf("~f(g(X),c)").unwrap();
        assert!(is_subformula(&pf("f(g(X),c)").unwrap(), &whole));
        assert!(is_subformula(&whole, &whole));
        assert!(!is_subformula(&pf("q").unwrap(), &pf("p").unwrap()));
    }

    #[test]
    fn alpha_examples() {
        let a = pf("![X]: ![Y]: (p(X) & q(X,Y))").unwrap();
        let b = pf("![Z]: ![Y]: (p(Z) & q(Z,Y))").unwrap();
        assert!(alpha_equivalent(&a, &b));
        assert!(alpha_equivalent(&a, &a));
        assert!(!alpha_equivalent(&pf("![X]: p(X)").unwrap(), &pf("![X]: q(X)").unwrap()));
        assert!(!alpha_equivalent(&pf("![X]: p(X)").unwrap(), &pf("![X]: p(c)").unwrap()));
        // Free variables are not renamed.
        assert!(!alpha_equivalent(&pf("p(X)").unwrap(), &pf("p(Y)").unwrap()));
    }

    #[test]
    fn unify_examples() {
        let r = unify(&pt("f(g(X),Y)").unwrap(), &pt("f(Z,h(zero))").unwrap());
        let s = r.mgu().unwrap();
        assert_eq!(s.to_string(), "{Z -> g(X), Y -> h(zero)}");
        assert_eq!(unify(&pt("X").unwrap(), &pt("X").unwrap()), UnifyResult::Unifiable(Substitution::new()));
        assert_eq!(
            unify(&pt("X").unwrap(), &pt("f(X)").unwrap()),
            UnifyResult::NotUnifiable(UnifyFailure::OccursCheck)
        );
        assert_eq!(unify(&pt("a").unwrap(), &pt("b").unwrap()), UnifyResult::NotUnifiable(UnifyFailure::Clash));
        assert!(!unify(&pt("f(a)").unwrap(), &pt("f(a,b)").unwrap()).is_unifiable());
    }

    #[test]
    fn unify_chains_bindings_idempotently() {
        let r = unify(&pt("f(X,Y,Z)").unwrap(), &pt("f(Y,Z,a)").unwrap());
        let s = r.mgu().unwrap();
        assert!(s.is_idempotent());
        assert_eq!(s.get("X"), Some(&pt("a").unwrap()));
        assert_eq!(s.get("Y"), Some(&pt("a").unwrap()));
    }

    #[test]
    fn modus_ponens_examples() {
        let premise = pf("![X]: ((p(X) => q(X)) & p(X))").unwrap();
        let goal = pf("![X]: q(X)").unwrap();
        assert!(mp_derivable(&premise, &goal, 3));
        assert!(mp_derivable(&premise, &premise, 0));
        let shuffled = pf("![X]: (p(X) & ((p(X) => q(X)) & r(X)))").unwrap();
        assert!(mp_derivable(&shuffled, &goal, 3));
        assert!(!mp_derivable(&shuffled, &goal, 2));
        assert!(!mp_derivable(&premise, &pf("s").unwrap(), 3));
    }

    #[test]
    fn modus_ponens_needs_antecedent() {
        // Exhaustive closure by hand: {(p=>q)&r} -> {p=>q, r}; nothing else applies.
        let premise = pf("(p => q) & r").unwrap();
        assert!(!mp_derivable(&premise, &pf("q").unwrap(), 3));
        assert!(mp_derivable(&premise, &pf("r").unwrap(), 1));
        assert!(!mp_derivable(&premise, &pf("r").unwrap(), 0));
    }

    #[test]
    fn modus_ponens_ignores_bound_names_in_facts() {
        let premise = pf("(![Y]: p(Y)) & ((![Z]: p(Z)) => q)").unwrap();
        assert!(mp_derivable(&premise, &pf("q").unwrap(), 2));
    }

    #[test]
    fn well_formedness() {
        assert!(is_well_formed("![D]: p(D)"));
        assert!(!is_well_formed("!]D[: p(D)"));
    }
}
