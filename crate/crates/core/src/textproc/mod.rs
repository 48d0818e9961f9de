//! Tokenization, stopwords, stemming and the answer-match kernel.
//!
//! Documents and answers go through [`normalize`]: lowercase, split on
//! non-alphanumeric runs, drop stopwords, Porter-stem. Tokens containing a
//! digit are kept verbatim so dates and counts survive. Questions use
//! [`question_tokens`], which keeps stopwords ("how many" is mostly
//! stopwords).

mod porter;

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::AnswerVocab;

pub use porter::stem;

/// Score of the pilot answer against any modality.
pub const PILOT_KAPPA: f64 = 0.5;

const STOPWORDS: &str = include_str!("stopwords.txt");

fn stopword_set() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stopword_set().contains(word)
}

fn raw_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Stems to a fixpoint so that normalizing normalized text is a no-op.
fn stem_token(token: &str) -> String {
    if token.chars().any(|c| c.is_ascii_digit()) {
        return token.to_string();
    }
    let mut current = stem(token);
    loop {
        let next = stem(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Ordered list of normalized stems.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermList(Vec<String>);

impl TermList {
    pub fn terms(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn truncate(&mut self, len: usize) {
        self.0.truncate(len);
    }

    pub fn extend(&mut self, other: &TermList) {
        self.0.extend(other.0.iter().cloned());
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }
}

impl From<Vec<String>> for TermList {
    fn from(terms: Vec<String>) -> Self {
        TermList(terms)
    }
}

impl<'a> IntoIterator for &'a TermList {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

pub fn normalize(text: &str) -> TermList {
    TermList(
        raw_tokens(text)
            .filter(|t| !is_stopword(t))
            .map(|t| stem_token(&t))
            .filter(|t| !t.is_empty() && !is_stopword(t))
            .collect(),
    )
}

/// Word-level question tokens: stemmed, stopwords kept.
pub fn question_tokens(text: &str) -> Vec<String> {
    raw_tokens(text).map(|t| stem_token(&t)).collect()
}

/// Proportion of the answer's distinct stems found in the candidate.
pub fn kappa(candidate_text: &str, answer_text: &str) -> f64 {
    kappa_terms(normalize(candidate_text).terms(), normalize(answer_text).terms())
}

pub fn kappa_terms(candidate: &[String], answer: &[String]) -> f64 {
    let answer: HashSet<&str> = answer.iter().map(String::as_str).collect();
    if answer.is_empty() {
        return 0.0;
    }
    let candidate: HashSet<&str> = candidate.iter().map(String::as_str).collect();
    let matched = answer.iter().filter(|t| candidate.contains(*t)).count();
    matched as f64 / answer.len() as f64
}

/// Answer class selected for one modality of one photo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRef {
    /// The choice in `slot` won; `class` is its answer-vocabulary index, or
    /// the pilot index when the choice text is outside the vocabulary.
    Choice { slot: usize, class: usize },
    Pilot,
}

impl ClassRef {
    pub fn class_index(self, pilot_index: usize) -> usize {
        match self {
            ClassRef::Choice { class, .. } => class,
            ClassRef::Pilot => pilot_index,
        }
    }

    pub fn is_pilot(self) -> bool {
        self == ClassRef::Pilot
    }
}

pub fn matched_class(modality_text: &str, choices: &[String], vocab: &AnswerVocab) -> ClassRef {
    let modality = normalize(modality_text);
    let choice_terms: Vec<TermList> = choices.iter().map(|c| normalize(c)).collect();
    let classes: Vec<usize> = choices.iter().map(|c| vocab.class_or_pilot(c)).collect();
    matched_class_terms(modality.terms(), &choice_terms, &classes)
}

/// Argmax of κ over the choices plus the pilot. The pilot wins ties at
/// 0.5; among choices the lowest slot wins.
pub fn matched_class_terms(
    modality: &[String],
    choice_terms: &[TermList],
    choice_classes: &[usize],
) -> ClassRef {
    debug_assert_eq!(choice_terms.len(), choice_classes.len());
    let mut best = ClassRef::Pilot;
    let mut best_score = PILOT_KAPPA;
    for (slot, terms) in choice_terms.iter().enumerate() {
        let score = kappa_terms(modality, terms.terms());
        if score > best_score {
            best_score = score;
            best = ClassRef::Choice {
                slot,
                class: choice_classes[slot],
            };
        }
    }
    best
}

/// Dense term ids with `PAD = 0` and `UNK = 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;

    fn empty() -> Self {
        let terms = vec!["<pad>".to_string(), "<unk>".to_string()];
        let ids = terms.iter().cloned().zip(0..).collect();
        Vocabulary { terms, ids }
    }

    /// Ids in first-seen order.
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::empty();
        for term in terms {
            vocab.insert(term.as_ref());
        }
        vocab
    }

    /// The `cap` most frequent terms, ties broken lexicographically.
    pub fn by_frequency<I, S>(terms: I, cap: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for term in terms {
            *counts.entry(term.as_ref().to_string()).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap);
        Self::from_terms(ranked.into_iter().map(|(t, _)| t))
    }

    fn insert(&mut self, term: &str) -> usize {
        if let Some(&id) = self.ids.get(term) {
            return id;
        }
        let id = self.terms.len();
        self.terms.push(term.to_string());
        self.ids.insert(term.to_string(), id);
        id
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.ids.get(term).copied()
    }

    pub fn id(&self, term: &str) -> usize {
        self.get(term).unwrap_or(Self::UNK)
    }

    pub fn encode(&self, terms: &[String]) -> Vec<usize> {
        terms.iter().map(|t| self.id(t)).collect()
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    /// Number of ids including the two specials.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.len() == 2
    }

    /// Regular terms in id order (specials excluded).
    pub fn regular_terms(&self) -> &[String] {
        &self.terms[2..]
    }
}
