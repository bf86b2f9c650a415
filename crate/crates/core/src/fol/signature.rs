use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Reserved character id for padding.
pub const PAD: usize = 0;
/// Reserved character id for characters outside the vocabulary.
pub const UNK: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Connective,
    Quantifier,
    Predicate,
    Function,
    Constant,
    Variable,
}

/// A node label of the tree view: symbol name, arity and syntactic kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub arity: usize,
    pub kind: LabelKind,
}

impl Label {
    pub fn new(name: impl Into<String>, arity: usize, kind: LabelKind) -> Self {
        Label { name: name.into(), arity, kind }
    }

    pub fn is_formula_kind(&self) -> bool {
        matches!(self.kind, LabelKind::Connective | LabelKind::Quantifier | LabelKind::Predicate)
    }
}

/// Bijection between labels and dense integer ids, plus the character
/// vocabulary of the corpus it was built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "SignatureRepr", into = "SignatureRepr")]
pub struct SignatureTable {
    labels: Vec<Label>,
    index: HashMap<Label, usize>,
    max_arity: usize,
    pub chars: CharVocab,
}

#[derive(Serialize, Deserialize)]
struct SignatureRepr {
    labels: Vec<Label>,
    chars: CharVocab,
}

impl From<SignatureRepr> for SignatureTable {
    fn from(r: SignatureRepr) -> Self {
        let mut t = SignatureTable { chars: r.chars, ..Default::default() };
        for l in r.labels {
            t.register(l);
        }
        t
    }
}

impl From<SignatureTable> for SignatureRepr {
    fn from(t: SignatureTable) -> Self {
        SignatureRepr { labels: t.labels, chars: t.chars }
    }
}

impl SignatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `label`, adding it if unseen.
    pub fn register(&mut self, label: Label) -> usize {
        if let Some(&id) = self.index.get(&label) {
            return id;
        }
        let id = self.labels.len();
        self.max_arity = self.max_arity.max(label.arity);
        self.index.insert(label.clone(), id);
        self.labels.push(label);
        id
    }

    pub fn id(&self, label: &Label) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &Label {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_arity(&self) -> usize {
        self.max_arity
    }

    pub fn contains(&self, name: &str, arity: usize, kind: LabelKind) -> bool {
        self.index.contains_key(&Label::new(name, arity, kind))
    }

    pub fn is_predicate(&self, name: &str, arity: usize) -> bool {
        self.contains(name, arity, LabelKind::Predicate)
    }

    /// Predicate symbols grouped by arity, sorted by name.
    pub fn predicates_by_arity(&self) -> BTreeMap<usize, Vec<String>> {
        let mut out: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for l in &self.labels {
            if l.kind == LabelKind::Predicate {
                out.entry(l.arity).or_default().insert(l.name.clone());
            }
        }
        out.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
    }
}

/// Character vocabulary: `PAD = 0`, `UNK = 1`, then every seen character in
/// codepoint order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl Default for CharVocab {
    fn default() -> Self {
        CharVocab::from_chars(std::iter::empty())
    }
}

impl CharVocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        CharVocab { chars: set.into_iter().collect() }
    }

    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(corpus.into_iter().flat_map(str::chars))
    }

    /// Vocabulary size including `PAD` and `UNK`.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.chars.binary_search(&c).map(|i| i + 2).unwrap_or(UNK)
    }

    pub fn char(&self, id: usize) -> Option<char> {
        id.checked_sub(2).and_then(|i| self.chars.get(i)).copied()
    }

    /// Maps a string to ids, truncating to `max_len`.
    pub fn encode(&self, s: &str, max_len: usize) -> Vec<usize> {
        s.chars().take(max_len).map(|c| self.id(c)).collect()
    }
}
