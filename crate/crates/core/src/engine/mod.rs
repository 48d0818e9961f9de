//! Wires the corpus, index, vocabularies and word vectors together and
//! trains, evaluates and checkpoints every model kind.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{
    baseline_vocab, prepare_sample, Baseline, BaselineConfig, BaselineContext, BaselineKind,
    BaselineSample, BOW_VOCAB_CAP,
};
use crate::corpus::{split_qas, AnswerVocab, Corpus, FeatureStore, QAItem, Split, DEFAULT_ANSWER_CAP, DEFAULT_SPLIT_RATIOS};
use crate::encoders::{
    concept_vocab, label_question, pretrain_question_encoder, skipgram_sentences, train_skipgram,
    PretrainConfig, PretrainedEncoder, QuestionType, SkipGramConfig, WordVecs,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, AccuracyReport};
use crate::index::{Bm25Params, InvertedIndex};
use crate::mmlookup::{Answer, LookupContext, LookupSample, MemexNet, MemexNetConfig, Trace};
use crate::nn::{fit, grad_check, Architecture, Checkpoint, FitConfig, FitHistory, GradCheckReport, ParamSet};
use crate::textproc::{question_tokens, Vocabulary};

pub const WORDVECS_PARAM: &str = "wordvecs";
pub const QUESTION_VOCAB_CAP: usize = 10_000;
pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub seed: u64,
    pub bm25: Bm25Params,
    pub skipgram: SkipGramConfig,
    pub answer_cap: usize,
    pub question_vocab_cap: usize,
    pub baseline_vocab_cap: usize,
    pub split_ratios: (f64, f64, f64),
    /// Photos retrieved per question by MemexNet.
    pub top_k: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 0,
            bm25: Bm25Params::default(),
            skipgram: SkipGramConfig::default(),
            answer_cap: DEFAULT_ANSWER_CAP,
            question_vocab_cap: QUESTION_VOCAB_CAP,
            baseline_vocab_cap: BOW_VOCAB_CAP,
            split_ratios: DEFAULT_SPLIT_RATIOS,
            top_k: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    MemexNet,
    Baseline(BaselineKind),
}

impl ModelKind {
    pub fn all() -> Vec<ModelKind> {
        std::iter::once(ModelKind::MemexNet)
            .chain(BaselineKind::ALL.into_iter().map(ModelKind::Baseline))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MemexNet => "memexnet",
            ModelKind::Baseline(k) => k.name(),
        }
    }

    /// Default optimizer schedule of the kind.
    pub fn fit_config(self, seed: u64) -> FitConfig {
        let optimizer = match self {
            ModelKind::MemexNet => crate::nn::OptimizerKind::adagrad(),
            ModelKind::Baseline(k) => k.optimizer(),
        };
        FitConfig {
            optimizer,
            seed,
            ..FitConfig::default()
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "memexnet" {
            Ok(ModelKind::MemexNet)
        } else {
            s.parse().map(ModelKind::Baseline).map_err(|_| {
                Error::InvalidArgument(format!(
                    "unknown model kind {s:?}; expected memexnet, bow, logreg, embedding, lstm, lstm_att or lstm_multichannel"
                ))
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    MemexNet(MemexNet),
    Baseline { model: Baseline, params: ParamSet },
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::MemexNet(_) => ModelKind::MemexNet,
            Model::Baseline { model, .. } => ModelKind::Baseline(model.config.kind),
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::MemexNet(net) => &net.params,
            Model::Baseline { params, .. } => params,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub history: FitHistory,
}

/// Shared state for one corpus.
#[derive(Clone, Debug)]
pub struct Engine {
    pub config: EngineConfig,
    pub corpus: Corpus,
    pub features: FeatureStore,
    pub index: InvertedIndex,
    pub answers: AnswerVocab,
    pub question_vocab: Vocabulary,
    pub baseline_vocab: Vocabulary,
    pub wordvecs: WordVecs,
    pub concepts: BTreeSet<String>,
}

impl Engine {
    /// Builds the index and vocabularies and trains the word vectors.
    pub fn new(corpus: Corpus, features: FeatureStore, config: EngineConfig) -> Result<Self> {
        let wordvecs = train_skipgram(&skipgram_sentences(&corpus), &config.skipgram, config.seed)?;
        Self::with_wordvecs(corpus, features, wordvecs, config)
    }

    pub fn with_wordvecs(
        corpus: Corpus,
        features: FeatureStore,
        wordvecs: WordVecs,
        config: EngineConfig,
    ) -> Result<Self> {
        features.check_covers(&corpus)?;
        let index = InvertedIndex::build_with(&corpus, config.bm25);
        let answers = AnswerVocab::build(corpus.qas(), config.answer_cap);
        let question_vocab = Vocabulary::by_frequency(
            corpus.qas().iter().flat_map(|q| question_tokens(&q.question)),
            config.question_vocab_cap,
        );
        let baseline_vocab = baseline_vocab(&corpus, corpus.qas(), config.baseline_vocab_cap);
        let concepts = concept_vocab(&corpus);
        Ok(Engine {
            config,
            corpus,
            features,
            index,
            answers,
            question_vocab,
            baseline_vocab,
            wordvecs,
            concepts,
        })
    }

    pub fn lookup_context(&self) -> LookupContext<'_> {
        LookupContext {
            corpus: &self.corpus,
            index: &self.index,
            features: &self.features,
            answers: &self.answers,
            question_vocab: &self.question_vocab,
            wordvecs: &self.wordvecs,
            concepts: &self.concepts,
        }
    }

    pub fn baseline_context(&self) -> BaselineContext<'_> {
        BaselineContext {
            corpus: &self.corpus,
            features: &self.features,
            answers: &self.answers,
            vocab: &self.baseline_vocab,
            wordvecs: &self.wordvecs,
        }
    }

    pub fn split(&self) -> Result<Split> {
        split_qas(&self.corpus.qa_ids(), self.config.seed, self.config.split_ratios)
    }

    pub fn qas(&self, ids: &[String]) -> Result<Vec<&QAItem>> {
        ids.iter()
            .map(|id| {
                self.corpus.qa(id).ok_or_else(|| Error::DanglingReference {
                    kind: "qa",
                    id: id.clone(),
                    from: "split".into(),
                })
            })
            .collect()
    }

    pub fn memexnet_config(&self) -> MemexNetConfig {
        let mut c = MemexNetConfig::new(
            self.answers.num_outputs(),
            self.question_vocab.len(),
            self.features.dim(),
        );
        c.top_k = self.config.top_k;
        c
    }

    pub fn baseline_config(&self, kind: BaselineKind) -> BaselineConfig {
        let mut c = BaselineConfig::new(
            kind,
            self.baseline_vocab.len(),
            self.features.dim(),
            self.answers.num_outputs(),
        );
        c.wordvec_dim = self.wordvecs.dim();
        c
    }

    /// A freshly initialized model of the given kind.
    pub fn init_model(&self, kind: ModelKind, seed: u64) -> Result<Model> {
        Ok(match kind {
            ModelKind::MemexNet => Model::MemexNet(MemexNet::new(self.memexnet_config(), seed)?),
            ModelKind::Baseline(k) => {
                let mut params = ParamSet::new();
                let model = Baseline::new(self.baseline_config(k), &mut params, seed)?;
                Model::Baseline { model, params }
            }
        })
    }

    pub fn prepare_memexnet(&self, net: &MemexNet, ids: &[String]) -> Result<Vec<LookupSample>> {
        let ctx = self.lookup_context();
        self.qas(ids)?
            .par_iter()
            .map(|qa| net.prepare(qa, &ctx))
            .collect()
    }

    pub fn prepare_baseline(&self, ids: &[String]) -> Result<Vec<BaselineSample>> {
        let ctx = self.baseline_context();
        self.qas(ids)?
            .par_iter()
            .map(|qa| prepare_sample(qa, &ctx, self.config.seed))
            .collect()
    }

    /// Trains `model` in place on the split's train ids, keeping the
    /// parameters of the best validation epoch.
    pub fn fit_model(&self, model: &mut Model, split: &Split, cfg: &FitConfig) -> Result<FitHistory> {
        match model {
            Model::MemexNet(net) => {
                let train = self.prepare_memexnet(net, &split.train)?;
                let val = self.prepare_memexnet(net, &split.val)?;
                fit(&net.arch, &mut net.params, &train, &val, cfg)
            }
            Model::Baseline { model, params } => {
                let train = self.prepare_baseline(&split.train)?;
                let val = self.prepare_baseline(&split.val)?;
                fit(&*model, params, &train, &val, cfg)
            }
        }
    }

    /// Initializes, optionally loads pretrained encoder weights (MemexNet
    /// only), and trains.
    pub fn train(
        &self,
        kind: ModelKind,
        split: &Split,
        cfg: &FitConfig,
        pretrained: Option<&ParamSet>,
    ) -> Result<Trained> {
        let mut model = self.init_model(kind, cfg.seed)?;
        if let (Model::MemexNet(net), Some(init)) = (&mut model, pretrained) {
            let copied = net.params.copy_matching(init);
            log::info!("copied {copied} pretrained params into memexnet");
        }
        let history = self.fit_model(&mut model, split, cfg)?;
        Ok(Trained { model, history })
    }

    /// Choice logits of any model on one QA.
    pub fn choice_logits(&self, model: &Model, qa: &QAItem) -> Result<Vec<f64>> {
        match model {
            Model::MemexNet(net) => {
                let s = net.prepare(qa, &self.lookup_context())?;
                net.choice_logits(&s)
            }
            Model::Baseline { model, params } => {
                let s = prepare_sample(qa, &self.baseline_context(), self.config.seed)?;
                model.choice_logits(params, &s)
            }
        }
    }

    pub fn evaluate(&self, model: &Model, ids: &[String]) -> Result<AccuracyReport> {
        let qas = self.qas(ids)?;
        evaluate(&qas, |qa| self.choice_logits(model, qa))
    }

    pub fn trace(&self, net: &MemexNet, qa: &QAItem) -> Result<Trace> {
        let s = net.prepare(qa, &self.lookup_context())?;
        net.trace(&s, &self.answers)
    }

    pub fn answer(&self, net: &MemexNet, question: &str, choices: &[String], user_id: &str) -> Result<Answer> {
        net.answer(question, choices, user_id, &self.lookup_context())
    }

    /// Central-difference check of a freshly initialized model on one QA.
    pub fn grad_check(&self, kind: ModelKind, qa_id: &str, per_param: usize, seed: u64) -> Result<GradCheckReport> {
        let qa = self.qas(&[qa_id.to_string()])?[0];
        let (h, tol) = (GRAD_CHECK_STEP, GRAD_CHECK_TOL);
        match self.init_model(kind, seed)? {
            Model::MemexNet(mut net) => {
                let s = net.prepare(qa, &self.lookup_context())?;
                grad_check(&mut net.params, |ps| net.arch.loss_and_grads(ps, &s), h, tol, per_param, seed)
            }
            Model::Baseline { model, mut params } => {
                let s = prepare_sample(qa, &self.baseline_context(), self.config.seed)?;
                grad_check(&mut params, |ps| model.loss_and_grads(ps, &s), h, tol, per_param, seed)
            }
        }
    }

    /// In-corpus questions labeled by the leading-word rules.
    pub fn pretraining_questions(&self) -> Vec<(String, QuestionType)> {
        self.corpus
            .qas()
            .iter()
            .filter_map(|q| label_question(&q.question).map(|t| (q.question.clone(), t)))
            .collect()
    }

    pub fn pretrain(&self, config: &PretrainConfig, seed: u64) -> Result<PretrainedEncoder> {
        let data = self.pretraining_questions();
        pretrain_question_encoder(&data, self.question_vocab.clone(), config, seed)
    }

    fn meta(&self, kind: ModelKind, model_config: serde_json::Value, history: Option<&FitHistory>) -> serde_json::Value {
        json!({
            "model": kind.name(),
            "engine": self.config,
            "model_config": model_config,
            "answers": self.answers.classes(),
            "question_vocab": self.question_vocab.regular_terms(),
            "baseline_vocab": self.baseline_vocab.regular_terms(),
            "wordvec_terms": self.wordvecs.terms(),
            "history": history,
        })
    }

    fn with_wordvec_param(&self, ps: &ParamSet) -> ParamSet {
        let mut all = ps.clone();
        all.add(
            WORDVECS_PARAM,
            &[self.wordvecs.len(), self.wordvecs.dim()],
            self.wordvecs.values().to_vec(),
            false,
        );
        all
    }

    pub fn checkpoint(&self, model: &Model, history: Option<&FitHistory>) -> Result<Checkpoint> {
        let model_config = match model {
            Model::MemexNet(net) => serde_json::to_value(net.config())?,
            Model::Baseline { model, .. } => serde_json::to_value(&model.config)?,
        };
        let kind = model.kind();
        Ok(Checkpoint::new(
            kind.name(),
            self.meta(kind, model_config, history),
            &self.with_wordvec_param(model.params()),
        ))
    }

    pub fn pretrain_checkpoint(&self, pre: &PretrainedEncoder, config: &PretrainConfig) -> Result<Checkpoint> {
        let meta = json!({
            "pretrain_config": config,
            "question_vocab": pre.vocab.regular_terms(),
            "history": pre.history,
        });
        Ok(Checkpoint::new("pretrain", meta, &pre.params))
    }

    /// Rebuilds the engine a checkpoint was trained with on the given
    /// corpus, plus the model itself.
    pub fn from_checkpoint(ckpt: &Checkpoint, corpus: Corpus, features: FeatureStore) -> Result<(Engine, Model, Option<FitHistory>)> {
        let kind: ModelKind = ckpt.kind.parse()?;
        let meta = &ckpt.meta;
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint meta lacks {name:?}")))
        };
        let config: EngineConfig = serde_json::from_value(field("engine")?)?;
        let answers: Vec<String> = serde_json::from_value(field("answers")?)?;
        let question_terms: Vec<String> = serde_json::from_value(field("question_vocab")?)?;
        let baseline_terms: Vec<String> = serde_json::from_value(field("baseline_vocab")?)?;
        let wordvec_terms: Vec<String> = serde_json::from_value(field("wordvec_terms")?)?;
        let history: Option<FitHistory> = serde_json::from_value(field("history")?)?;

        let mut all = ckpt.to_param_set();
        let wv_id = all
            .id(WORDVECS_PARAM)
            .ok_or_else(|| Error::Format("checkpoint lacks word vectors".into()))?;
        let wv = all.get(wv_id);
        let dim = wv.cols();
        let wordvecs = WordVecs::new(wordvec_terms, dim, wv.value.clone())?;
        let mut params = ParamSet::new();
        for (_, p) in all.iter().filter(|(_, p)| p.name != WORDVECS_PARAM) {
            params.add(&p.name, &p.shape, p.value.clone(), p.trainable);
        }
        drop(std::mem::take(&mut all));

        features.check_covers(&corpus)?;
        let engine = Engine {
            index: InvertedIndex::build_with(&corpus, config.bm25),
            concepts: concept_vocab(&corpus),
            answers: AnswerVocab::from_classes(answers),
            question_vocab: Vocabulary::from_terms(question_terms),
            baseline_vocab: Vocabulary::from_terms(baseline_terms),
            config,
            corpus,
            features,
            wordvecs,
        };
        let model = match kind {
            ModelKind::MemexNet => {
                let cfg: MemexNetConfig = serde_json::from_value(field("model_config")?)?;
                Model::MemexNet(MemexNet::from_params(cfg, params)?)
            }
            ModelKind::Baseline(_) => {
                let cfg: BaselineConfig = serde_json::from_value(field("model_config")?)?;
                let model = Baseline::bind(cfg, &params)?;
                Model::Baseline { model, params }
            }
        };
        Ok((engine, model, history))
    }

    pub fn load_checkpoint(path: &Path, corpus: Corpus, features: FeatureStore) -> Result<(Engine, Model, Option<FitHistory>)> {
        Self::from_checkpoint(&Checkpoint::read(path)?, corpus, features)
    }
}
