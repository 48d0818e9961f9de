//! Comparison models. None of them reads the inverted index: each sees
//! eight photos sampled from the asking user's collection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerVocab, Corpus, FeatureStore, Modality, QAItem};
use crate::encoders::{WordVecs, MAX_QUESTION_TOKENS, WORD_DIM};
use crate::error::{Error, Result};
use crate::mmlookup::modality_terms;
use crate::nn::{
    Activation, Architecture, Dense, Grads, LstmCell, OptimizerKind, ParamId, ParamSet, Tape, Var,
};
use crate::textproc::{normalize, question_tokens, Vocabulary};

pub const CONTEXT_PHOTOS: usize = 8;
pub const BOW_VOCAB_CAP: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Bow,
    Logreg,
    Embedding,
    Lstm,
    LstmAtt,
    LstmMultichannel,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Bow,
        BaselineKind::Logreg,
        BaselineKind::Embedding,
        BaselineKind::Lstm,
        BaselineKind::LstmAtt,
        BaselineKind::LstmMultichannel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Bow => "bow",
            BaselineKind::Logreg => "logreg",
            BaselineKind::Embedding => "embedding",
            BaselineKind::Lstm => "lstm",
            BaselineKind::LstmAtt => "lstm_att",
            BaselineKind::LstmMultichannel => "lstm_multichannel",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(
            self,
            BaselineKind::Lstm | BaselineKind::LstmAtt | BaselineKind::LstmMultichannel
        )
    }

    /// Plain gradient descent for the linear models, Adagrad for the recurrent ones.
    pub fn optimizer(self) -> OptimizerKind {
        if self.is_recurrent() {
            OptimizerKind::adagrad()
        } else {
            OptimizerKind::sgd()
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline kind {s:?}")))
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Eight photo positions from the question's user. Without replacement
/// when the user has at least eight photos; otherwise every photo once
/// plus uniform draws with replacement, shuffled.
pub fn sample_context(qa: &QAItem, corpus: &Corpus, seed: u64) -> Result<Vec<usize>> {
    let pool = corpus.user_photo_positions(&qa.user_id);
    if pool.is_empty() {
        return Err(Error::UnknownUser(qa.user_id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&qa.qa_id) ^ seed);
    let mut out: Vec<usize> = if pool.len() >= CONTEXT_PHOTOS {
        pool.choose_multiple(&mut rng, CONTEXT_PHOTOS).copied().collect()
    } else {
        let mut v = pool.to_vec();
        while v.len() < CONTEXT_PHOTOS {
            v.push(pool[rng.gen_range(0..pool.len())]);
        }
        v
    };
    out.shuffle(&mut rng);
    Ok(out)
}

/// Metadata terms of one photo: every modality's terms in the fixed order.
pub fn photo_metadata(corpus: &Corpus, position: usize) -> Vec<String> {
    let photo = &corpus.photos()[position];
    let album = corpus.album_of(photo);
    Modality::ALL
        .iter()
        .flat_map(|&m| modality_terms(m, photo, album).into_vec())
        .collect()
}

/// Term vocabulary shared by the baselines: question tokens and photo
/// metadata terms, capped by frequency.
pub fn baseline_vocab<'a, I>(corpus: &Corpus, questions: I, cap: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a QAItem>,
{
    let mut all: Vec<String> = Vec::new();
    for qa in questions {
        all.extend(question_tokens(&qa.question));
    }
    for p in 0..corpus.photos().len() {
        all.extend(photo_metadata(corpus, p));
    }
    Vocabulary::by_frequency(all, cap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub vocab_size: usize,
    pub feature_dim: usize,
    /// Answer classes plus the pilot.
    pub num_outputs: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    /// Width of the frozen skip-gram vectors (logreg input).
    pub wordvec_dim: usize,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, vocab_size: usize, feature_dim: usize, num_outputs: usize) -> Self {
        BaselineConfig {
            kind,
            vocab_size,
            feature_dim,
            num_outputs,
            word_dim: WORD_DIM,
            hidden_dim: 32,
            attention_dim: 5,
            wordvec_dim: WORD_DIM,
        }
    }
}

/// Everything a baseline needs about one QA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSample {
    pub qa_id: String,
    pub context: Vec<usize>,
    /// Question token ids (stopwords kept), at most twelve.
    pub question_ids: Vec<usize>,
    /// Metadata term ids, one list per context photo.
    pub photo_terms: Vec<Vec<usize>>,
    pub photo_features: Vec<Vec<f64>>,
    pub mean_feature: Vec<f64>,
    /// Frozen skip-gram averages `[question ‖ metadata]` (zeros when absent).
    pub wordvec_input: Vec<f64>,
    pub choice_classes: Vec<usize>,
    pub correct_index: usize,
}

fn mean_vec(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if rows.is_empty() {
        return out;
    }
    for r in rows {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Shared read-only inputs for building baseline samples.
#[derive(Clone, Copy)]
pub struct BaselineContext<'a> {
    pub corpus: &'a Corpus,
    pub features: &'a FeatureStore,
    pub answers: &'a AnswerVocab,
    pub vocab: &'a Vocabulary,
    pub wordvecs: &'a WordVecs,
}

pub fn prepare_sample(qa: &QAItem, ctx: &BaselineContext, seed: u64) -> Result<BaselineSample> {
    let context = sample_context(qa, ctx.corpus, seed)?;
    let mut question_ids = ctx.vocab.encode(&question_tokens(&qa.question));
    question_ids.truncate(MAX_QUESTION_TOKENS);
    let mut photo_terms = Vec::with_capacity(context.len());
    let mut photo_features = Vec::with_capacity(context.len());
    let mut meta_words = Vec::new();
    for &p in &context {
        let terms = photo_metadata(ctx.corpus, p);
        photo_terms.push(ctx.vocab.encode(&terms));
        meta_words.extend(terms);
        let id = &ctx.corpus.photos()[p].photo_id;
        let f = ctx
            .features
            .get(id)
            .ok_or_else(|| Error::MissingFeature(id.clone()))?;
        photo_features.push(f.to_vec());
    }
    let dim = ctx.features.dim();
    let mean_feature = {
        let rows: Vec<&[f64]> = photo_features.iter().map(Vec::as_slice).collect();
        mean_vec(&rows, dim)
    };
    let wd = ctx.wordvecs.dim();
    let q_words = normalize(&qa.question).into_vec();
    let avg = |words: &[String]| {
        let rows: Vec<&[f64]> = words.iter().filter_map(|w| ctx.wordvecs.get(w)).collect();
        mean_vec(&rows, wd)
    };
    let mut wordvec_input = avg(&q_words);
    wordvec_input.extend(avg(&meta_words));
    Ok(BaselineSample {
        qa_id: qa.qa_id.clone(),
        context,
        question_ids,
        photo_terms,
        photo_features,
        mean_feature,
        wordvec_input,
        choice_classes: qa.choices.iter().map(|c| ctx.answers.class_or_pilot(c)).collect(),
        correct_index: qa.correct_index,
    })
}

/// Parameter handles of one baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub config: BaselineConfig,
    embed: Option<ParamId>,
    lstm: Option<LstmCell>,
    meta_lstm: Option<LstmCell>,
    feature_lstm: Option<LstmCell>,
    att: Option<(ParamId, ParamId, ParamId)>,
    out: Dense,
}

impl Baseline {
    pub fn new(config: BaselineConfig, ps: &mut ParamSet, seed: u64) -> Result<Self> {
        if config.num_outputs == 0 || config.vocab_size < 2 || config.feature_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "baseline {} needs outputs, a vocabulary and features",
                config.kind
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let (d, h) = (c.word_dim, c.hidden_dim);
        let needs_embed = !matches!(c.kind, BaselineKind::Bow | BaselineKind::Logreg);
        let embed = needs_embed.then(|| ps.xavier("bl.embed", &[c.vocab_size, d], 1, d, &mut rng));
        let step_dim = d + c.feature_dim + d;
        let mut lstm = None;
        let mut meta_lstm = None;
        let mut feature_lstm = None;
        let mut att = None;
        let out_in = match c.kind {
            BaselineKind::Bow => c.vocab_size + c.feature_dim,
            BaselineKind::Logreg => 2 * c.wordvec_dim + c.feature_dim,
            BaselineKind::Embedding => 2 * d + c.feature_dim,
            BaselineKind::Lstm | BaselineKind::LstmAtt => {
                lstm = Some(LstmCell::new(ps, "bl.lstm", step_dim, h, &mut rng));
                if c.kind == BaselineKind::LstmAtt {
                    let a = c.attention_dim;
                    att = Some((
                        ps.xavier("bl.att.w1", &[a, h], h, a, &mut rng),
                        ps.xavier("bl.att.w2", &[a, d], d, a, &mut rng),
                        ps.xavier("bl.att.v", &[1, a], a, 1, &mut rng),
                    ));
                }
                h
            }
            BaselineKind::LstmMultichannel => {
                lstm = Some(LstmCell::new(ps, "bl.lstm", d, h, &mut rng));
                meta_lstm = Some(LstmCell::new(ps, "bl.meta_lstm", d, h, &mut rng));
                feature_lstm = Some(LstmCell::new(ps, "bl.feature_lstm", c.feature_dim, h, &mut rng));
                h
            }
        };
        let out = Dense::new(ps, "bl.out", out_in, c.num_outputs, Activation::Linear, &mut rng);
        Ok(Baseline {
            config,
            embed,
            lstm,
            meta_lstm,
            feature_lstm,
            att,
            out,
        })
    }

    /// Handles for an existing parameter set (checkpoint loading).
    pub fn bind(config: BaselineConfig, ps: &ParamSet) -> Result<Self> {
        let mut scratch = ParamSet::new();
        let model = Self::new(config, &mut scratch, 0)?;
        for (id, p) in scratch.iter() {
            match ps.id(&p.name) {
                Some(j) if j == id && ps.get(j).shape == p.shape => {}
                _ => {
                    return Err(Error::Format(format!(
                        "checkpoint lacks param {} of shape {:?}",
                        p.name, p.shape
                    )))
                }
            }
        }
        Ok(model)
    }

    fn embed_rows(&self, t: &mut Tape, ids: &[usize]) -> Result<Vec<Var>> {
        let table = self.embed.expect("kind has embeddings");
        let rows = t.params().get(table).rows();
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            if id == Vocabulary::PAD {
                continue;
            }
            if id >= rows {
                return Err(Error::Shape(format!("token id {id} outside embedding of {rows}")));
            }
            out.push(t.row(table, id));
        }
        Ok(out)
    }

    /// Frequency-weighted mean of embedding rows (zeros when empty).
    fn mean_embedding<'i, I>(&self, t: &mut Tape, ids: I) -> Result<Var>
    where
        I: IntoIterator<Item = &'i usize>,
    {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        let mut total = 0.0;
        for &id in ids {
            if id != Vocabulary::PAD {
                *counts.entry(id).or_default() += 1.0;
                total += 1.0;
            }
        }
        if counts.is_empty() {
            return Ok(t.zeros(self.config.word_dim));
        }
        let unique: Vec<usize> = counts.keys().copied().collect();
        let rows = self.embed_rows(t, &unique)?;
        let w = t.input(counts.values().map(|c| c / total).collect());
        t.weighted_sum(w, &rows)
    }

    fn forward(&self, t: &mut Tape, s: &BaselineSample) -> Result<Var> {
        let c = &self.config;
        if s.mean_feature.len() != c.feature_dim {
            return Err(Error::Shape(format!(
                "feature of length {}, model expects {}",
                s.mean_feature.len(),
                c.feature_dim
            )));
        }
        let x = match c.kind {
            BaselineKind::Bow => {
                let mut v = vec![0.0; c.vocab_size + c.feature_dim];
                for &id in s.question_ids.iter().chain(s.photo_terms.iter().flatten()) {
                    if id != Vocabulary::PAD && id < c.vocab_size {
                        v[id] += 1.0;
                    }
                }
                v[c.vocab_size..].copy_from_slice(&s.mean_feature);
                t.input(v)
            }
            BaselineKind::Logreg => {
                if s.wordvec_input.len() != 2 * c.wordvec_dim {
                    return Err(Error::Shape("word-vector input width".into()));
                }
                let mut v = s.wordvec_input.clone();
                v.extend_from_slice(&s.mean_feature);
                t.input(v)
            }
            BaselineKind::Embedding => {
                let q = self.mean_embedding(t, &s.question_ids)?;
                let m = self.mean_embedding(t, s.photo_terms.iter().flatten())?;
                let f = t.input(s.mean_feature.clone());
                t.concat(&[q, m, f])
            }
            BaselineKind::Lstm | BaselineKind::LstmAtt => {
                let lstm = self.lstm.expect("recurrent kind");
                let m = self.mean_embedding(t, s.photo_terms.iter().flatten())?;
                let f = t.input(s.mean_feature.clone());
                let words = self.embed_rows(t, &s.question_ids)?;
                let steps: Vec<Var> = words.iter().map(|&w| t.concat(&[w, f, m])).collect();
                let hs = lstm.run(t, &steps)?;
                match (c.kind, self.att) {
                    (BaselineKind::LstmAtt, Some((w1, w2, v))) if !hs.is_empty() => {
                        let q = self.mean_embedding(t, &s.question_ids)?;
                        let w2q = t.linear(w2, None, q)?;
                        let mut scores = Vec::with_capacity(hs.len());
                        for &h in &hs {
                            let a = t.linear(w1, None, h)?;
                            let a = t.add(a, w2q)?;
                            let a = t.tanh(a);
                            scores.push(t.linear(v, None, a)?);
                        }
                        let u = t.concat(&scores);
                        let alpha = t.softmax(u);
                        t.weighted_sum(alpha, &hs)?
                    }
                    _ => match hs.last() {
                        Some(&h) => h,
                        None => t.zeros(c.hidden_dim),
                    },
                }
            }
            BaselineKind::LstmMultichannel => {
                let (lq, lm, lf) = (
                    self.lstm.expect("recurrent kind"),
                    self.meta_lstm.expect("recurrent kind"),
                    self.feature_lstm.expect("recurrent kind"),
                );
                let words = self.embed_rows(t, &s.question_ids)?;
                let hq = lq.final_state(t, &words)?;
                let mut meta_steps = Vec::with_capacity(s.photo_terms.len());
                for ids in &s.photo_terms {
                    meta_steps.push(self.mean_embedding(t, ids)?);
                }
                let hm = lm.final_state(t, &meta_steps)?;
                let mut feat_steps = Vec::with_capacity(s.photo_features.len());
                for f in &s.photo_features {
                    feat_steps.push(t.input(f.clone()));
                }
                let hf = lf.final_state(t, &feat_steps)?;
                let p = t.mul(hq, hm)?;
                t.mul(p, hf)?
            }
        };
        let out = self.out.forward(t, x)?;
        t.select(out, &s.choice_classes)
    }
}

impl Architecture for Baseline {
    type Sample = BaselineSample;

    fn choice_logits(&self, ps: &ParamSet, sample: &BaselineSample) -> Result<Vec<f64>> {
        let mut t = Tape::new(ps);
        let z = self.forward(&mut t, sample)?;
        Ok(t.value(z).to_vec())
    }

    fn loss_and_grads(&self, ps: &ParamSet, sample: &BaselineSample) -> Result<(f64, Grads)> {
        let mut t = Tape::new(ps);
        let z = self.forward(&mut t, sample)?;
        let mask = vec![true; sample.choice_classes.len()];
        let loss = t.masked_softmax_ce(z, &mask, sample.correct_index)?;
        Ok((t.scalar(loss), t.backward(loss)))
    }

    fn target(&self, sample: &BaselineSample) -> usize {
        sample.correct_index
    }
}
