use std::fmt;

use indexmap::IndexMap;

use super::Term;

/// Finite map from variable names to terms.
///
/// Bindings keep insertion order for printing; equality ignores order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitution {
    bindings: IndexMap<String, Term>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `var -> term`. Identity bindings are dropped.
    pub fn bind(&mut self, var: impl Into<String>, term: Term) {
        let var = var.into();
        if matches!(&term, Term::Variable(v) if *v == var) {
            self.bindings.shift_remove(&var);
            return;
        }
        self.bindings.insert(var, term);
    }

    pub fn get(&self, var: &str) -> Option<&Term> {
        self.bindings.get(var)
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Term)> {
        self.bindings.iter()
    }

    pub fn domain(&self) -> impl Iterator<Item = &String> {
        self.bindings.keys()
    }

    /// `self` followed by `other`: `t.apply(&s.compose(&o)) == t.apply(&s).apply(&o)`.
    pub fn compose(&self, other: &Substitution) -> Substitution {
        let mut out = Substitution::new();
        for (v, t) in &self.bindings {
            out.bind(v.clone(), t.apply(other));
        }
        for (v, t) in &other.bindings {
            if !self.bindings.contains_key(v) {
                out.bind(v.clone(), t.clone());
            }
        }
        out
    }

    /// Applying twice gives the same result as applying once.
    pub fn is_idempotent(&self) -> bool {
        self.bindings
            .values()
            .all(|t| t.variables().iter().all(|v| !self.bindings.contains_key(v)))
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v} -> {t}")?;
        }
        f.write_str("}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_term() -> impl Strategy<Value = Term> {
        let leaf = prop_oneof![
            prop::sample::select(vec!["X", "Y", "Z"]).prop_map(Term::var),
            prop::sample::select(vec!["a", "b"]).prop_map(Term::constant),
        ];
        leaf.prop_recursive(3, 12, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|t| Term::app("g", vec![t])),
                (inner.clone(), inner).prop_map(|(a, b)| Term::app("f", vec![a, b])),
            ]
        })
    }

    fn arb_subst() -> impl Strategy<Value = Substitution> {
        prop::collection::vec((prop::sample::select(vec!["X", "Y", "Z"]), arb_term()), 0..3).prop_map(|bs| {
            let mut s = Substitution::new();
            for (v, t) in bs {
                s.bind(v, t);
            }
            s
        })
    }

    proptest! {
        #[test]
        fn composition_matches_sequential_application(t in arb_term(), s in arb_subst(), o in arb_subst()) {
            prop_assert_eq!(t.apply(&s.compose(&o)), t.apply(&s).apply(&o));
        }
    }

    #[test]
    fn identity_bindings_are_dropped() {
        let mut s = Substitution::new();
        s.bind("X", Term::var("X"));
        assert!(s.is_empty());
    }

    #[test]
    fn display_keeps_insertion_order() {
        let mut s = Substitution::new();
        s.bind("Z", Term::app("g", vec![Term::var("X")]));
        s.bind("Y", Term::app("h", vec![Term::constant("zero")]));
        assert_eq!(s.to_string(), "{Z -> g(X), Y -> h(zero)}");
        let mut r = Substitution::new();
        r.bind("Y", Term::app("h", vec![Term::constant("zero")]));
        r.bind("Z", Term::app("g", vec![Term::var("X")]));
        assert_eq!(s, r);
    }
}
