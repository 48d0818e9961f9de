//! Answer inference over the top-k retrieved photos.
//!
//! For every modality j and rank i the lookup input is
//! `e_i = [E_m(j) ‖ E_c(class_i)]`, where `class_i` is the answer class
//! whose choice best matches the photo's modality text (or the pilot).
//! A rank LSTM shared across modalities runs over `e_1 … e_k`, and
//!
//! ```text
//! u_i = vᵀ tanh(W1 h_i + W2 φ_r)     α = softmax(u)     c = Σ α_i h_i
//! ```
//!
//! The modality block is `[e_1 ‖ … ‖ e_k ‖ c]`; the blocks of all
//! modalities form Ψ. The classifier reads `[φ_r ‖ Ψ ‖ x_1 ‖ … ‖ x_k]`
//! (x_i the image features), and only the logits of the choices' classes
//! enter the loss.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{canonicalize_answer, Album, AnswerVocab, Corpus, FeatureStore, Modality, PhotoDoc, QAItem};
use crate::encoders::{query_terms, QuestionEncoder, QuestionEncoderConfig, WordVecs};
use crate::error::{Error, Result};
use crate::eval::{argmax, categorize};
use crate::index::{InvertedIndex, Ranked};
use crate::nn::{
    Activation, Architecture, Dense, Grads, LstmCell, ParamId, ParamSet, Tape, Var,
};
use crate::textproc::{matched_class_terms, normalize, ClassRef, TermList, Vocabulary};

pub const MAX_MODALITY_TERMS: usize = 8;

/// Normalized terms of one modality, truncated to the first eight.
pub fn modality_terms(modality: Modality, photo: &PhotoDoc, album: &Album) -> TermList {
    let mut terms = normalize(&modality.text(photo, album));
    terms.truncate(MAX_MODALITY_TERMS);
    terms
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityValue {
    pub modality: Modality,
    pub terms: TermList,
    pub raw_text: String,
}

/// All modalities of a photo in the fixed order.
pub fn gather_modalities(photo: &PhotoDoc, album: &Album) -> Vec<ModalityValue> {
    Modality::ALL
        .iter()
        .map(|&m| ModalityValue {
            modality: m,
            terms: modality_terms(m, photo, album),
            raw_text: m.text(photo, album),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemexNetConfig {
    pub top_k: usize,
    pub modalities: Vec<Modality>,
    pub modality_dim: usize,
    pub class_dim: usize,
    pub rank_hidden: usize,
    pub attention_dim: usize,
    pub fc_hidden: usize,
    pub feature_dim: usize,
    /// Answer classes plus the pilot.
    pub num_outputs: usize,
    pub question_vocab_size: usize,
    pub encoder: QuestionEncoderConfig,
    /// Output activation of the last layer (sigmoid by default).
    pub output: Activation,
}

impl MemexNetConfig {
    pub fn new(num_outputs: usize, question_vocab_size: usize, feature_dim: usize) -> Self {
        MemexNetConfig {
            top_k: 2,
            modalities: Modality::ALL.to_vec(),
            modality_dim: 10,
            class_dim: 10,
            rank_hidden: 5,
            attention_dim: 5,
            fc_hidden: 32,
            feature_dim,
            num_outputs,
            question_vocab_size,
            encoder: QuestionEncoderConfig::default(),
            output: Activation::Sigmoid,
        }
    }

    pub fn lookup_input_dim(&self) -> usize {
        self.modality_dim + self.class_dim
    }

    /// |Ψ| = v·(k·(d_m + d_c) + d_h).
    pub fn lookup_dim(&self) -> usize {
        self.modalities.len() * (self.top_k * self.lookup_input_dim() + self.rank_hidden)
    }

    pub fn classifier_input_dim(&self) -> usize {
        self.encoder.hidden_dim + self.lookup_dim() + self.top_k * self.feature_dim
    }

    pub fn pilot_index(&self) -> usize {
        self.num_outputs - 1
    }
}

/// Everything a forward pass needs that does not depend on parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookupSample {
    pub qa_id: String,
    pub question_ids: Vec<usize>,
    pub query: Vec<String>,
    pub retrieved: Vec<Ranked>,
    /// `[rank][modality]` matched class for each retrieved photo.
    pub matched: Vec<Vec<ClassRef>>,
    pub features: Vec<Vec<f64>>,
    pub choice_classes: Vec<usize>,
    pub correct_index: usize,
}

/// Shared read-only state for preparing samples.
#[derive(Clone, Copy)]
pub struct LookupContext<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a InvertedIndex,
    pub features: &'a FeatureStore,
    pub answers: &'a AnswerVocab,
    pub question_vocab: &'a Vocabulary,
    pub wordvecs: &'a WordVecs,
    pub concepts: &'a BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchTrace {
    /// 1-based rank.
    pub rank: usize,
    /// `None` for a null padding sample.
    pub photo_id: Option<String>,
    pub modality: Modality,
    pub class: ClassRef,
    pub class_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityAttention {
    pub modality: Modality,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub qa_id: String,
    pub query: Vec<String>,
    pub retrieved: Vec<Ranked>,
    pub matches: Vec<MatchTrace>,
    pub attention: Vec<ModalityAttention>,
    pub choice_logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub chosen_index: usize,
    pub chosen: String,
    pub confidence: f64,
    pub evidence: Vec<String>,
    pub trace: Trace,
}

/// Parameter handles and shapes of MemexNet; values live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct MemexNetArch {
    pub config: MemexNetConfig,
    pub encoder: QuestionEncoder,
    pub e_m: ParamId,
    pub e_c: ParamId,
    pub rank: LstmCell,
    pub att_w1: ParamId,
    pub att_w2: ParamId,
    pub att_v: ParamId,
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemexNet {
    pub arch: MemexNetArch,
    pub params: ParamSet,
}

struct Forward {
    logits: Var,
    alphas: Vec<Var>,
}

impl MemexNetArch {
    fn build(config: MemexNetConfig, ps: &mut ParamSet, seed: u64) -> Result<Self> {
        if config.top_k == 0 || config.modalities.is_empty() || config.num_outputs < 1 {
            return Err(Error::InvalidArgument(
                "MemexNet needs top_k >= 1, at least one modality and the pilot class".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = QuestionEncoder::new(ps, config.question_vocab_size, config.encoder, &mut rng);
        let v = config.modalities.len();
        let e_m = ps.xavier("lookup.e_m", &[v, config.modality_dim], 1, config.modality_dim, &mut rng);
        let e_c = ps.xavier(
            "lookup.e_c",
            &[config.num_outputs, config.class_dim],
            1,
            config.class_dim,
            &mut rng,
        );
        let rank = LstmCell::new(ps, "lookup.rank", config.lookup_input_dim(), config.rank_hidden, &mut rng);
        let a = config.attention_dim;
        let att_w1 = ps.xavier("lookup.att.w1", &[a, config.rank_hidden], config.rank_hidden, a, &mut rng);
        let att_w2 = ps.xavier(
            "lookup.att.w2",
            &[a, config.encoder.hidden_dim],
            config.encoder.hidden_dim,
            a,
            &mut rng,
        );
        let att_v = ps.xavier("lookup.att.v", &[1, a], a, 1, &mut rng);
        let fc1 = Dense::new(
            ps,
            "fc1",
            config.classifier_input_dim(),
            config.fc_hidden,
            Activation::Relu,
            &mut rng,
        );
        let fc2 = Dense::new(ps, "fc2", config.fc_hidden, config.num_outputs, config.output, &mut rng);
        Ok(MemexNetArch {
            config,
            encoder,
            e_m,
            e_c,
            rank,
            att_w1,
            att_w2,
            att_v,
            fc1,
            fc2,
        })
    }

    /// Re-derives parameter handles from names (for checkpoint loading).
    pub fn bind(config: MemexNetConfig, ps: &ParamSet) -> Result<Self> {
        let mut scratch = ParamSet::new();
        let arch = Self::build(config, &mut scratch, 0)?;
        for (_, p) in scratch.iter() {
            match ps.id(&p.name) {
                Some(id) if ps.get(id).shape == p.shape => {}
                _ => {
                    return Err(Error::Format(format!(
                        "checkpoint lacks param {} of shape {:?}",
                        p.name, p.shape
                    )))
                }
            }
        }
        // Handles are positional; the same build order gives the same ids.
        for (id, p) in scratch.iter() {
            if ps.id(&p.name) != Some(id) {
                return Err(Error::Format(format!("param {} out of order", p.name)));
            }
        }
        Ok(arch)
    }

    /// Ψ for one sample: modality blocks in order, plus the α variables.
    fn lookup(&self, t: &mut Tape, sample: &LookupSample, phi_r: Var) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.config;
        let pilot = cfg.pilot_index();
        let w2_phi = t.linear(self.att_w2, None, phi_r)?;
        let mut blocks = Vec::with_capacity(cfg.modalities.len());
        let mut alphas = Vec::with_capacity(cfg.modalities.len());
        for j in 0..cfg.modalities.len() {
            let mut inputs = Vec::with_capacity(cfg.top_k);
            for i in 0..cfg.top_k {
                let (em, class) = match sample.matched.get(i) {
                    Some(row) => (t.row(self.e_m, j), row[j].class_index(pilot)),
                    None => (t.zeros(cfg.modality_dim), pilot),
                };
                let ec = t.row(self.e_c, class);
                inputs.push(t.concat(&[em, ec]));
            }
            let hs = self.rank.run(t, &inputs)?;
            let mut scores = Vec::with_capacity(hs.len());
            for &h in &hs {
                let a = t.linear(self.att_w1, None, h)?;
                let a = t.add(a, w2_phi)?;
                let a = t.tanh(a);
                scores.push(t.linear(self.att_v, None, a)?);
            }
            let u = t.concat(&scores);
            let alpha = t.softmax(u);
            let c = t.weighted_sum(alpha, &hs)?;
            let mut block = inputs;
            block.push(c);
            blocks.push(t.concat(&block));
            alphas.push(alpha);
        }
        Ok((t.concat(&blocks), alphas))
    }

    fn forward(&self, t: &mut Tape, sample: &LookupSample) -> Result<Forward> {
        let cfg = &self.config;
        let phi_r = self.encoder.encode(t, &sample.question_ids)?;
        let (psi, alphas) = self.lookup(t, sample, phi_r)?;
        let mut parts = vec![phi_r, psi];
        for i in 0..cfg.top_k {
            let x = match sample.features.get(i) {
                Some(f) if f.len() == cfg.feature_dim => t.input(f.clone()),
                Some(f) => {
                    return Err(Error::Shape(format!(
                        "feature of length {}, model expects {}",
                        f.len(),
                        cfg.feature_dim
                    )))
                }
                None => t.zeros(cfg.feature_dim),
            };
            parts.push(x);
        }
        let x = t.concat(&parts);
        let hidden = self.fc1.forward(t, x)?;
        let out = self.fc2.forward(t, hidden)?;
        let logits = t.select(out, &sample.choice_classes)?;
        Ok(Forward { logits, alphas })
    }

    pub fn trace(&self, ps: &ParamSet, sample: &LookupSample, answers: &AnswerVocab) -> Result<Trace> {
        let mut t = Tape::new(ps);
        let fwd = self.forward(&mut t, sample)?;
        let logits = t.value(fwd.logits).to_vec();
        let pilot = self.config.pilot_index();
        let mut matches = Vec::new();
        for i in 0..self.config.top_k {
            for (j, &modality) in self.config.modalities.iter().enumerate() {
                let class = sample.matched.get(i).map_or(ClassRef::Pilot, |row| row[j]);
                let idx = class.class_index(pilot);
                matches.push(MatchTrace {
                    rank: i + 1,
                    photo_id: sample.retrieved.get(i).map(|r| r.photo_id.clone()),
                    modality,
                    class,
                    class_name: answers.class_name(idx).to_string(),
                });
            }
        }
        let attention = self
            .config
            .modalities
            .iter()
            .zip(&fwd.alphas)
            .map(|(&modality, &a)| ModalityAttention {
                modality,
                weights: t.value(a).to_vec(),
            })
            .collect();
        let probabilities = crate::nn::softmax(&logits);
        Ok(Trace {
            qa_id: sample.qa_id.clone(),
            query: sample.query.clone(),
            retrieved: sample.retrieved.clone(),
            matches,
            attention,
            predicted: argmax(&logits),
            choice_logits: logits,
            probabilities,
        })
    }
}

impl Architecture for MemexNetArch {
    type Sample = LookupSample;

    fn choice_logits(&self, ps: &ParamSet, sample: &LookupSample) -> Result<Vec<f64>> {
        let mut t = Tape::new(ps);
        let fwd = self.forward(&mut t, sample)?;
        Ok(t.value(fwd.logits).to_vec())
    }

    fn loss_and_grads(&self, ps: &ParamSet, sample: &LookupSample) -> Result<(f64, Grads)> {
        let mut t = Tape::new(ps);
        let fwd = self.forward(&mut t, sample)?;
        let mask = vec![true; sample.choice_classes.len()];
        let loss = t.masked_softmax_ce(fwd.logits, &mask, sample.correct_index)?;
        Ok((t.scalar(loss), t.backward(loss)))
    }

    fn target(&self, sample: &LookupSample) -> usize {
        sample.correct_index
    }
}

impl MemexNet {
    pub fn new(config: MemexNetConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let arch = MemexNetArch::build(config, &mut params, seed)?;
        Ok(MemexNet { arch, params })
    }

    pub fn from_params(config: MemexNetConfig, params: ParamSet) -> Result<Self> {
        let arch = MemexNetArch::bind(config, &params)?;
        Ok(MemexNet { arch, params })
    }

    pub fn config(&self) -> &MemexNetConfig {
        &self.arch.config
    }

    /// Retrieval, matching and feature lookup for one QA.
    pub fn prepare(&self, qa: &QAItem, ctx: &LookupContext) -> Result<LookupSample> {
        let cfg = &self.arch.config;
        let query = query_terms(&qa.question, ctx.wordvecs, ctx.concepts);
        let retrieved = ctx.index.search_user(&query, cfg.top_k, &qa.user_id);
        let choice_terms: Vec<TermList> = qa.choices.iter().map(|c| normalize(c)).collect();
        let choice_classes: Vec<usize> = qa
            .choices
            .iter()
            .map(|c| ctx.answers.class_or_pilot(c))
            .collect();
        let mut matched = Vec::with_capacity(retrieved.len());
        let mut features = Vec::with_capacity(retrieved.len());
        for hit in retrieved.iter() {
            let photo = ctx
                .corpus
                .photo(&hit.photo_id)
                .ok_or_else(|| Error::MissingFeature(hit.photo_id.clone()))?;
            let album = ctx.corpus.album_of(photo);
            matched.push(
                cfg.modalities
                    .iter()
                    .map(|&m| {
                        matched_class_terms(
                            modality_terms(m, photo, album).terms(),
                            &choice_terms,
                            &choice_classes,
                        )
                    })
                    .collect(),
            );
            features.push(
                ctx.features
                    .get(&hit.photo_id)
                    .ok_or_else(|| Error::MissingFeature(hit.photo_id.clone()))?
                    .to_vec(),
            );
        }
        Ok(LookupSample {
            qa_id: qa.qa_id.clone(),
            question_ids: self.arch.encoder.token_ids(ctx.question_vocab, &qa.question),
            query,
            retrieved: retrieved.0,
            matched,
            features,
            choice_classes,
            correct_index: qa.correct_index,
        })
    }

    pub fn choice_logits(&self, sample: &LookupSample) -> Result<Vec<f64>> {
        self.arch.choice_logits(&self.params, sample)
    }

    pub fn loss(&self, sample: &LookupSample) -> Result<f64> {
        Ok(self.arch.loss_and_grads(&self.params, sample)?.0)
    }

    pub fn trace(&self, sample: &LookupSample, answers: &AnswerVocab) -> Result<Trace> {
        self.arch.trace(&self.params, sample, answers)
    }

    /// Answers a free-form question about one user's photos.
    pub fn answer(
        &self,
        question: &str,
        choices: &[String],
        user_id: &str,
        ctx: &LookupContext,
    ) -> Result<Answer> {
        if !ctx.corpus.has_user(user_id) {
            return Err(Error::UnknownUser(user_id.to_string()));
        }
        let distinct: BTreeSet<String> = choices.iter().map(|c| canonicalize_answer(c)).collect();
        if choices.len() < 2 || distinct.len() != choices.len() {
            return Err(Error::InvalidArgument(
                "need at least 2 distinct choices".into(),
            ));
        }
        let qa = QAItem {
            qa_id: "ask".into(),
            user_id: user_id.to_string(),
            question: question.to_string(),
            choices: choices.to_vec(),
            correct_index: 0,
            evidence_photo_ids: Vec::new(),
            category: categorize(question),
        };
        let sample = self.prepare(&qa, ctx)?;
        let trace = self.trace(&sample, ctx.answers)?;
        let chosen_index = trace.predicted;
        Ok(Answer {
            chosen_index,
            chosen: choices[chosen_index].clone(),
            confidence: trace.probabilities[chosen_index],
            evidence: trace.retrieved.iter().map(|r| r.photo_id.clone()).collect(),
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Gps;

    fn config(v: usize, k: usize, feature_dim: usize) -> MemexNetConfig {
        let mut c = MemexNetConfig::new(7, 20, feature_dim);
        c.modalities.truncate(v);
        c.top_k = k;
        c
    }

    #[test]
    fn shape_law() {
        for v in [3, 9] {
            for k in [1, 2, 3] {
                let c = config(v, k, 16);
                assert_eq!(c.lookup_dim(), v * (k * 20 + 5));
                assert_eq!(c.classifier_input_dim(), 100 + v * (k * 20 + 5) + k * 16);
            }
        }
        assert_eq!(config(9, 2, 300).classifier_input_dim(), 1105);
        assert_eq!(config(9, 2, 300).lookup_dim(), 405);
    }

    fn photo() -> (PhotoDoc, Album) {
        let p = PhotoDoc {
            photo_id: "p1".into(),
            album_id: "a1".into(),
            timestamp: 1_494_943_200,
            gps: None,
            title: "t".into(),
            tags: (0..12).map(|i| format!("tag{i}")).collect(),
            caption: String::new(),
            concepts: vec![],
            ocr: vec![],
        };
        let a = Album {
            album_id: "a1".into(),
            user_id: "u1".into(),
            title: String::new(),
            description: String::new(),
            photo_ids: vec!["p1".into()],
        };
        (p, a)
    }

    #[test]
    fn gather_rules() {
        let (mut p, a) = photo();
        let mods = gather_modalities(&p, &a);
        assert_eq!(mods.len(), 9);
        assert!(mods[Modality::Gps.index()].terms.is_empty());
        let tags = &mods[Modality::Tags.index()].terms;
        assert_eq!(tags.len(), 8);
        assert_eq!(tags.terms()[0], "tag0");
        assert_eq!(tags.terms()[7], "tag7");
        let time = &mods[Modality::Time.index()].terms;
        for t in ["2017", "mai", "spring"] {
            assert!(time.iter().any(|x| x == t), "{t} in {time:?}");
        }
        p.gps = Some(Gps {
            lat: 1.0,
            lon: 2.0,
            place: None,
        });
        assert!(!gather_modalities(&p, &a)[Modality::Gps.index()].terms.is_empty());
    }

    fn sample(k_retrieved: usize, matched: Vec<Vec<ClassRef>>) -> LookupSample {
        LookupSample {
            qa_id: "q".into(),
            question_ids: vec![2, 3, 4],
            query: vec![],
            retrieved: (0..k_retrieved)
                .map(|i| Ranked {
                    photo_id: format!("p{i}"),
                    score: 1.0,
                })
                .collect(),
            matched,
            features: (0..k_retrieved).map(|i| vec![0.1 * i as f64; 4]).collect(),
            choice_classes: vec![0, 2, 3, 6],
            correct_index: 1,
        }
    }

    #[test]
    fn attention_properties() {
        let mut net = MemexNet::new(config(3, 2, 4), 1).unwrap();
        let v = net.arch.att_v;
        net.params.get_mut(v).value.fill(0.0);
        let answers = AnswerVocab::from_classes((0..6).map(|i| format!("c{i}")).collect());
        let same = vec![vec![ClassRef::Pilot; 3]; 2];
        let tr = net.trace(&sample(2, same), &answers).unwrap();
        for a in &tr.attention {
            assert!((a.weights[0] - 0.5).abs() < 1e-12, "{a:?}");
            assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let net1 = MemexNet::new(config(3, 1, 4), 1).unwrap();
        let tr = net1.trace(&sample(1, vec![vec![ClassRef::Pilot; 3]]), &answers).unwrap();
        assert!(tr.attention.iter().all(|a| a.weights == vec![1.0]));
    }

    #[test]
    fn logits_in_unit_interval_and_padding_is_pilot() {
        let net = MemexNet::new(config(9, 2, 4), 3).unwrap();
        let answers = AnswerVocab::from_classes((0..6).map(|i| format!("c{i}")).collect());
        let s = sample(0, vec![]);
        let logits = net.choice_logits(&s).unwrap();
        assert_eq!(logits.len(), 4);
        assert!(logits.iter().all(|&z| z > 0.0 && z < 1.0));
        let tr = net.trace(&s, &answers).unwrap();
        assert!(tr.matches.iter().all(|m| m.class.is_pilot() && m.photo_id.is_none()));
        assert_eq!(tr.matches.len(), 18);
    }

    #[test]
    fn bind_restores_handles() {
        let net = MemexNet::new(config(9, 2, 4), 3).unwrap();
        let again = MemexNet::from_params(net.config().clone(), net.params.clone()).unwrap();
        assert_eq!(again.arch, net.arch);
        let other = config(3, 2, 4);
        assert!(MemexNet::from_params(other, net.params.clone()).is_err());
    }
}
