use std::collections::HashMap;

use super::QAItem;

/// Answer-class cap used for the real dataset.
pub const DEFAULT_ANSWER_CAP: usize = 7236;

/// Display name of the pilot class.
pub const PILOT_ANSWER: &str = "$";

/// Lowercase, trim, collapse internal whitespace.
pub fn canonicalize_answer(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The `m` answer classes; index `m` is the pilot class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnswerVocab {
    classes: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocab {
    /// The `cap` most frequent canonical choice strings over every
    /// multiple-choice entry; ties broken lexicographically.
    pub fn build(qas: &[QAItem], cap: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for choice in qas.iter().flat_map(|q| &q.choices) {
            *counts.entry(canonicalize_answer(choice)).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap);
        Self::from_classes(ranked.into_iter().map(|(c, _)| c).collect())
    }

    /// Classes in the given order; duplicates after canonicalization are dropped.
    pub fn from_classes(classes: Vec<String>) -> Self {
        let mut out = Vec::with_capacity(classes.len());
        let mut index = HashMap::new();
        for class in classes {
            let class = canonicalize_answer(&class);
            if !index.contains_key(&class) {
                index.insert(class.clone(), out.len());
                out.push(class);
            }
        }
        AnswerVocab {
            classes: out,
            index,
        }
    }

    pub fn lookup(&self, text: &str) -> Option<usize> {
        self.index.get(&canonicalize_answer(text)).copied()
    }

    pub fn class_or_pilot(&self, text: &str) -> usize {
        self.lookup(text).unwrap_or(self.pilot_index())
    }

    /// Number of real classes, `m`.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn pilot_index(&self) -> usize {
        self.classes.len()
    }

    /// `m + 1`, the classifier output width.
    pub fn num_outputs(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_name(&self, index: usize) -> &str {
        self.classes
            .get(index)
            .map(String::as_str)
            .unwrap_or(PILOT_ANSWER)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Category;
    use proptest::prelude::*;

    fn qa(choices: [&str; 4]) -> QAItem {
        QAItem {
            qa_id: "q".into(),
            user_id: "u".into(),
            question: "Where?".into(),
            choices: choices.iter().map(|c| c.to_string()).collect(),
            correct_index: 0,
            evidence_photo_ids: vec!["p".into()],
            category: Category::Where,
        }
    }

    #[test]
    fn most_frequent_with_cap() {
        // park:3 beach:2 dog:1 plus filler answers seen once.
        let qas = [
            qa(["park", "beach", "dog", "w"]),
            qa(["Park", "beach ", "x", "y"]),
            qa(["  PARK", "z", "v", "u"]),
        ];
        let vocab = AnswerVocab::build(&qas, 2);
        assert_eq!(vocab.classes(), &["park".to_string(), "beach".to_string()]);
        assert_eq!(vocab.pilot_index(), 2);
        assert_eq!(vocab.lookup("BEACH"), Some(1));
        assert_eq!(vocab.lookup("dog"), None);
        assert_eq!(vocab.class_or_pilot("dog"), 2);
        assert_eq!(vocab.class_name(2), PILOT_ANSWER);

        let all = AnswerVocab::build(&qas, 100);
        assert_eq!(all.len(), 9);
        // ties at count 1 are lexicographic
        assert_eq!(&all.classes()[2..], &["dog", "u", "v", "w", "x", "y", "z"]);
    }

    #[test]
    fn empty_qas() {
        let vocab = AnswerVocab::build(&[], 10);
        assert!(vocab.is_empty());
        assert_eq!(vocab.pilot_index(), 0);
    }

    proptest! {
        #[test]
        fn canonicalization_idempotent(s in "[ a-zA-Z\t]{0,30}") {
            let once = canonicalize_answer(&s);
            prop_assert_eq!(canonicalize_answer(&once), once.clone());
            prop_assert!(!once.starts_with(' ') && !once.contains("  "));
        }
    }
}
