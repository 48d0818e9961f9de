use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::index::document_terms;
use crate::textproc::normalize;

pub const QUERY_CONCEPTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            epochs: 100,
            lr: 0.025,
        }
    }
}

/// Word vectors in vocabulary order.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVecs {
    terms: Vec<String>,
    dim: usize,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl WordVecs {
    pub fn new(terms: Vec<String>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != terms.len() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} terms of dim {dim}",
                values.len(),
                terms.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("word vector of {:?}", terms[i / dim])));
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "term",
                    id: t.clone(),
                });
            }
        }
        Ok(WordVecs {
            terms,
            dim,
            values,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, term: &str) -> Option<&[f64]> {
        self.index
            .get(term)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// Cosine similarity; `None` if either term is unknown, 0 for a zero vector.
    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (x, y) = (self.get(a)?, self.get(b)?);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            Some(0.0)
        } else {
            Some(dot / (nx * ny))
        }
    }

    /// One "term v1 … vd" line per term.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.terms.iter().enumerate() {
            out.push_str(t);
            for v in &self.values[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {v}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut values = Vec::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let term = fields.next().expect("non-empty line");
            let row = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    file: "wordvecs".into(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Parse {
                        file: "wordvecs".into(),
                        line: n + 1,
                        message: format!("expected {d} values, found {}", row.len()),
                    })
                }
                _ => {}
            }
            terms.push(term.to_string());
            values.extend(row);
        }
        WordVecs::new(terms, dim.unwrap_or(0), values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Skip-gram with negative sampling over term sentences. Vocabulary is
/// every distinct term in lexicographic order; negatives are drawn from
/// the unigram distribution raised to 3/4.
pub fn train_skipgram(
    sentences: &[Vec<String>],
    config: &SkipGramConfig,
    seed: u64,
) -> Result<WordVecs> {
    if config.window == 0 || config.negatives == 0 || config.dim == 0 {
        return Err(Error::InvalidArgument(
            "skip-gram window, negatives and dim must be >= 1".into(),
        ));
    }
    let vocab: BTreeSet<&str> = sentences.iter().flatten().map(String::as_str).collect();
    if vocab.is_empty() {
        return Err(Error::InvalidArgument("skip-gram text stream is empty".into()));
    }
    let terms: Vec<String> = vocab.iter().map(|s| s.to_string()).collect();
    let id: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().map(|t| id[t.as_str()]).collect())
        .collect();
    let mut counts = vec![0usize; terms.len()];
    encoded.iter().flatten().for_each(|&i| counts[i] += 1);
    let table = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_in: Vec<f64> = (0..terms.len() * d)
        .map(|_| (rng.gen::<f64>() - 0.5) / d as f64)
        .collect();
    let mut w_out = vec![0.0; terms.len() * d];

    let total_steps = (config.epochs * encoded.iter().map(Vec::len).sum::<usize>()).max(1);
    let mut step = 0usize;
    let mut grad = vec![0.0; d];
    for _ in 0..config.epochs {
        for sentence in &encoded {
            for (pos, &center) in sentence.iter().enumerate() {
                let lr = config.lr * (1.0 - step as f64 / total_steps as f64).max(1e-4);
                step += 1;
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(sentence.len());
                for ctx_pos in lo..hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let targets = std::iter::once((sentence[ctx_pos], 1.0)).chain(
                        (0..config.negatives).map(|_| (table.sample(&mut rng), 0.0)),
                    );
                    let targets: Vec<(usize, f64)> = targets.collect();
                    let vin = center * d..(center + 1) * d;
                    for (target, label) in targets {
                        if label == 0.0 && target == sentence[ctx_pos] {
                            continue;
                        }
                        let vout = target * d..(target + 1) * d;
                        let dot: f64 = w_in[vin.clone()]
                            .iter()
                            .zip(&w_out[vout.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        let g = lr * (label - sigmoid(dot));
                        for k in 0..d {
                            grad[k] += g * w_out[vout.start + k];
                            w_out[vout.start + k] += g * w_in[vin.start + k];
                        }
                    }
                    for k in 0..d {
                        w_in[vin.start + k] += grad[k];
                    }
                }
            }
        }
    }
    WordVecs::new(terms, d, w_in)
}

/// One sentence per photo (all modalities) and one per question.
pub fn skipgram_sentences(corpus: &Corpus) -> Vec<Vec<String>> {
    let docs = (0..corpus.photos().len()).map(|i| document_terms(corpus, i).into_vec());
    let questions = corpus.qas().iter().map(|qa| normalize(&qa.question).into_vec());
    docs.chain(questions).filter(|s| !s.is_empty()).collect()
}

/// Every normalized term of every photo's concept list.
pub fn concept_vocab(corpus: &Corpus) -> BTreeSet<String> {
    corpus
        .photos()
        .iter()
        .flat_map(|p| p.concepts.iter())
        .flat_map(|c| normalize(c).into_vec())
        .collect()
}

/// Up to five concepts with relevance weights, weights descending.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryEncoding {
    pub concepts: Vec<(String, f64)>,
}

impl QueryEncoding {
    pub fn terms(&self) -> Vec<String> {
        self.concepts.iter().map(|(t, _)| t.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// Scores each concept by its best cosine against the question's content
/// words (exact matches score 1.0) and keeps the top five, ties by term.
pub fn encode_query(
    question: &str,
    wordvecs: &WordVecs,
    concepts: &BTreeSet<String>,
) -> QueryEncoding {
    let words = normalize(question);
    let mut scored: Vec<(String, f64)> = Vec::new();
    for concept in concepts {
        let mut best: Option<f64> = None;
        for w in words.iter() {
            let s = if w == concept {
                Some(1.0)
            } else {
                wordvecs.cosine(w, concept)
            };
            if let Some(s) = s {
                best = Some(best.map_or(s, |b: f64| b.max(s)));
            }
        }
        if let Some(s) = best {
            scored.push((concept.clone(), s));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(QUERY_CONCEPTS);
    QueryEncoding { concepts: scored }
}

/// The retrieval query: encoded concepts, or the question's own normalized
/// terms when nothing could be scored.
pub fn query_terms(question: &str, wordvecs: &WordVecs, concepts: &BTreeSet<String>) -> Vec<String> {
    let q = encode_query(question, wordvecs, concepts);
    if q.is_empty() {
        normalize(question).into_vec()
    } else {
        q.terms()
    }
}
