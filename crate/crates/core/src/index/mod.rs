//! Inverted index over every photo modality, ranked with BM25.
//!
//! Each photo is one document: the concatenated normalized terms of all
//! its modalities. Scores use
//!
//! ```text
//! score(q, d) = Σ_t idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·len/avg_len))
//! idf(t)      = ln(1 + (N − n_t + 0.5) / (n_t + 0.5))
//! ```
//!
//! summed over the distinct query terms. Only documents containing at least
//! one query term are returned; ties are ordered by ascending photo id.

mod snapshot;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Modality};
use crate::textproc::{normalize, TermList};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_len: Vec<u32>,
    avg_len: f64,
    doc_ids: Vec<String>,
    doc_user: Vec<u32>,
    users: Vec<String>,
    ord_by_id: HashMap<String, u32>,
    user_by_id: HashMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub photo_id: String,
    pub score: f64,
}

/// Top-k photos, scores non-increasing, ties by ascending photo id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList(pub Vec<Ranked>);

impl RankedList {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Ranked> {
        self.0.iter()
    }

    pub fn photo_ids(&self) -> Vec<&str> {
        self.0.iter().map(|r| r.photo_id.as_str()).collect()
    }
}

/// All normalized terms of a photo's document, modality by modality.
pub fn document_terms(corpus: &Corpus, photo_position: usize) -> TermList {
    let photo = &corpus.photos()[photo_position];
    let album = corpus.album_of(photo);
    let mut terms = TermList::default();
    for modality in Modality::ALL {
        terms.extend(&normalize(&modality.text(photo, album)));
    }
    terms
}

/// Distinct terms in first-occurrence order.
fn distinct<'a>(query: &'a [String]) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    query
        .iter()
        .map(String::as_str)
        .filter(|t| seen.insert(*t))
        .collect()
}

/// Descending score, then ascending photo id.
fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.photo_id.cmp(&b.photo_id))
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Self {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &Corpus, params: Bm25Params) -> Self {
        let users: Vec<String> = corpus.users().map(str::to_string).collect();
        let user_by_id: HashMap<String, u32> =
            users.iter().cloned().zip(0u32..).collect();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(corpus.photos().len());
        let mut doc_ids = Vec::with_capacity(corpus.photos().len());
        let mut doc_user = Vec::with_capacity(corpus.photos().len());
        for (ord, photo) in corpus.photos().iter().enumerate() {
            let terms = document_terms(corpus, ord);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in terms.iter() {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: ord as u32,
                    tf: count,
                });
            }
            doc_len.push(terms.len() as u32);
            doc_ids.push(photo.photo_id.clone());
            doc_user.push(user_by_id[corpus.user_of(photo)]);
        }
        Self::from_parts(params, postings, doc_len, doc_ids, doc_user, users)
    }

    pub(crate) fn from_parts(
        params: Bm25Params,
        postings: BTreeMap<String, Vec<Posting>>,
        doc_len: Vec<u32>,
        doc_ids: Vec<String>,
        doc_user: Vec<u32>,
        users: Vec<String>,
    ) -> Self {
        let avg_len = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64
        };
        let ord_by_id = doc_ids.iter().cloned().zip(0u32..).collect();
        let user_by_id = users.iter().cloned().zip(0u32..).collect();
        InvertedIndex {
            params,
            postings,
            doc_len,
            avg_len,
            doc_ids,
            doc_user,
            users,
            ord_by_id,
            user_by_id,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_len[doc]
    }

    pub fn doc_id(&self, doc: usize) -> &str {
        &self.doc_ids[doc]
    }

    pub fn doc_ord(&self, photo_id: &str) -> Option<usize> {
        self.ord_by_id.get(photo_id).map(|&o| o as usize)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let n_t = self.doc_frequency(term) as f64;
        (1.0 + (n - n_t + 0.5) / (n_t + 0.5)).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * self.doc_len[doc] as f64 / self.avg_len;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    pub fn term_frequency(&self, term: &str, doc: usize) -> u32 {
        let postings = self.postings(term);
        postings
            .binary_search_by_key(&(doc as u32), |p| p.doc)
            .map(|i| postings[i].tf)
            .unwrap_or(0)
    }

    /// BM25 score of one document; unknown terms contribute 0.
    pub fn bm25(&self, query_terms: &[String], doc: usize) -> f64 {
        distinct(query_terms)
            .into_iter()
            .map(|t| match self.term_frequency(t, doc) {
                0 => 0.0,
                tf => self.term_score(self.idf(t), tf, doc),
            })
            .sum()
    }

    /// Top-k over the whole corpus.
    pub fn search(&self, query_terms: &[String], k: usize) -> RankedList {
        self.search_filtered(query_terms, k, |_| true)
    }

    /// Top-k over one user's photos; unknown users get an empty list.
    pub fn search_user(&self, query_terms: &[String], k: usize, user_id: &str) -> RankedList {
        match self.user_by_id.get(user_id) {
            Some(&u) => self.search_filtered(query_terms, k, |d| self.doc_user[d] == u),
            None => RankedList::default(),
        }
    }

    pub fn search_filtered(
        &self,
        query_terms: &[String],
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> RankedList {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in distinct(query_terms) {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in postings {
                if keep(p.doc as usize) {
                    *scores.entry(p.doc).or_default() += self.term_score(idf, p.tf, p.doc as usize);
                }
            }
        }
        let mut ranked: Vec<Ranked> = scores
            .into_iter()
            .map(|(doc, score)| Ranked {
                photo_id: self.doc_ids[doc as usize].clone(),
                score,
            })
            .collect();
        ranked.sort_by(rank_order);
        ranked.truncate(k);
        RankedList(ranked)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub(crate) fn doc_users(&self) -> &[u32] {
        &self.doc_user
    }

    pub(crate) fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub(crate) fn doc_lens(&self) -> &[u32] {
        &self.doc_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Album, PhotoDoc};

    fn photo(id: &str, album: &str, title: &str, concepts: &[&str]) -> PhotoDoc {
        PhotoDoc {
            photo_id: id.into(),
            album_id: album.into(),
            timestamp: 1_494_943_200,
            gps: None,
            title: title.into(),
            tags: vec![],
            caption: String::new(),
            concepts: concepts.iter().map(|c| c.to_string()).collect(),
            ocr: vec![],
        }
    }

    fn corpus(photos: Vec<PhotoDoc>) -> Corpus {
        let album = Album {
            album_id: "a1".into(),
            user_id: "u1".into(),
            title: String::new(),
            description: String::new(),
            photo_ids: photos.iter().map(|p| p.photo_id.clone()).collect(),
        };
        Corpus::new(vec![album], photos, vec![]).unwrap()
    }

    fn q(terms: &[&str]) -> Vec<String> {
        terms.iter().map(|t| t.to_string()).collect()
    }

    /// Time rendering contributes 7 terms to every document.
    const TIME_TERMS: u32 = 7;

    #[test]
    fn single_doc_postings() {
        let idx = InvertedIndex::build(&corpus(vec![photo("p1", "a1", "park", &[])]));
        assert_eq!(idx.num_docs(), 1);
        assert_eq!(idx.postings("park"), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.doc_len(0), TIME_TERMS + 1);
    }

    #[test]
    fn modalities_concatenate() {
        let idx = InvertedIndex::build(&corpus(vec![photo("p1", "a1", "park", &["park"])]));
        assert_eq!(idx.term_frequency("park", 0), 2);
    }

    #[test]
    fn closed_form_single_doc() {
        let idx = InvertedIndex::build(&corpus(vec![photo("p1", "a1", "park", &[])]));
        // N = 1, n_t = 1, tf = 1, len = avg_len.
        let expected = (1.0f64 + 0.5 / 1.5).ln() * (1.0 * 2.2) / (1.0 + 1.2);
        assert!((idx.bm25(&q(&["park"]), 0) - expected).abs() < 1e-12);
        assert_eq!(idx.bm25(&q(&["beach"]), 0), 0.0);
    }

    #[test]
    fn tf_saturates() {
        let one = photo("p1", "a1", "park", &["grass"]);
        let two = photo("p2", "a1", "park", &["park"]);
        let idx = InvertedIndex::build(&corpus(vec![one, two]));
        // same document length, tf 1 vs 2
        assert_eq!(idx.doc_len(0), idx.doc_len(1));
        let s1 = idx.bm25(&q(&["park"]), 0);
        let s2 = idx.bm25(&q(&["park"]), 1);
        assert!(s2 > s1 && s2 < 2.0 * s1, "{s1} {s2}");
    }

    #[test]
    fn search_ranks_and_breaks_ties() {
        let idx = InvertedIndex::build(&corpus(vec![
            photo("p2", "a1", "lake", &[]),
            photo("p1", "a1", "lake", &[]),
            photo("p3", "a1", "fireworks", &[]),
        ]));
        let hits = idx.search(&q(&["firework"]), 5);
        assert_eq!(hits.photo_ids(), vec!["p3"]);
        let tie = idx.search(&q(&["lake"]), 5);
        assert_eq!(tie.photo_ids(), vec!["p1", "p2"]);
        assert_eq!(tie.0[0].score, tie.0[1].score);
        assert!(idx.search(&[], 3).is_empty());
        assert_eq!(idx.search_user(&q(&["lake"]), 1, "u1").photo_ids(), vec!["p1"]);
        assert!(idx.search_user(&q(&["lake"]), 1, "nobody").is_empty());
    }

    #[test]
    fn duplicate_query_terms_count_once() {
        let idx = InvertedIndex::build(&corpus(vec![photo("p1", "a1", "park", &[])]));
        assert_eq!(idx.bm25(&q(&["park", "park"]), 0), idx.bm25(&q(&["park"]), 0));
    }
}
