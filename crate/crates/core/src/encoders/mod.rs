//! Question understanding: the LSTM question encoder (with a question-type
//! head for pretraining) and the skip-gram concept query encoder.

mod skipgram;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    epoch_order, minibatch_step, Activation, Dense, LstmCell, Optimizer, OptimizerKind, ParamId,
    ParamSet, Tape, Var,
};
use crate::textproc::{question_tokens, Vocabulary};

pub use skipgram::{
    concept_vocab, encode_query, query_terms, skipgram_sentences, train_skipgram, QueryEncoding,
    SkipGramConfig, WordVecs, QUERY_CONCEPTS,
};

pub const MAX_QUESTION_TOKENS: usize = 12;
pub const WORD_DIM: usize = 32;
pub const QUESTION_STATE_DIM: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionEncoderConfig {
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub max_tokens: usize,
}

impl Default for QuestionEncoderConfig {
    fn default() -> Self {
        QuestionEncoderConfig {
            word_dim: WORD_DIM,
            hidden_dim: QUESTION_STATE_DIM,
            max_tokens: MAX_QUESTION_TOKENS,
        }
    }
}

/// Learned word embeddings feeding an LSTM; the encoding is the final
/// hidden state. Params are named `qenc.*` so pretrained weights can be
/// copied into any model that embeds the encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuestionEncoder {
    pub embed: ParamId,
    pub lstm: LstmCell,
    pub config: QuestionEncoderConfig,
}

impl QuestionEncoder {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        vocab_size: usize,
        config: QuestionEncoderConfig,
        rng: &mut R,
    ) -> Self {
        let embed = ps.xavier(
            "qenc.embed",
            &[vocab_size, config.word_dim],
            1,
            config.word_dim,
            rng,
        );
        let lstm = LstmCell::new(ps, "qenc.lstm", config.word_dim, config.hidden_dim, rng);
        QuestionEncoder { embed, lstm, config }
    }

    /// Word-level ids (stopwords kept), truncated to `max_tokens`.
    pub fn token_ids(&self, vocab: &Vocabulary, question: &str) -> Vec<usize> {
        let mut ids = vocab.encode(&question_tokens(question));
        ids.truncate(self.config.max_tokens);
        ids
    }

    /// Final LSTM state over the non-PAD ids; zero for an empty question.
    pub fn encode(&self, t: &mut Tape, ids: &[usize]) -> Result<Var> {
        let rows = t.params().get(self.embed).rows();
        let mut inputs = Vec::with_capacity(ids.len());
        for &id in ids.iter().take(self.config.max_tokens) {
            if id == Vocabulary::PAD {
                continue;
            }
            if id >= rows {
                return Err(Error::Shape(format!("token id {id} outside embedding of {rows}")));
            }
            inputs.push(t.row(self.embed, id));
        }
        self.lstm.final_state(t, &inputs)
    }
}

/// The six answer types used for pretraining.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    When,
    Where,
    What,
    Who,
    HowMany,
    YesNo,
}

impl QuestionType {
    pub const ALL: [QuestionType; 6] = [
        QuestionType::When,
        QuestionType::Where,
        QuestionType::What,
        QuestionType::Who,
        QuestionType::HowMany,
        QuestionType::YesNo,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::When => "when",
            QuestionType::Where => "where",
            QuestionType::What => "what",
            QuestionType::Who => "who",
            QuestionType::HowMany => "how_many",
            QuestionType::YesNo => "yes_no",
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == label)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown question type {label:?}")))
    }
}

const AUXILIARIES: [&str; 16] = [
    "is", "are", "was", "were", "do", "does", "did", "can", "could", "will", "would", "has",
    "have", "had", "should", "am",
];

/// Rule labeler over the leading words; `None` when no rule applies.
pub fn label_question(question: &str) -> Option<QuestionType> {
    let tokens: Vec<String> = question
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(2)
        .map(str::to_lowercase)
        .collect();
    match (tokens.first().map(String::as_str), tokens.get(1).map(String::as_str)) {
        (Some("how"), Some("many")) => Some(QuestionType::HowMany),
        (Some("when"), _) => Some(QuestionType::When),
        (Some("where"), _) => Some(QuestionType::Where),
        (Some("what" | "which"), _) => Some(QuestionType::What),
        (Some("who" | "whom"), _) => Some(QuestionType::Who),
        (Some(w), _) if AUXILIARIES.contains(&w) => Some(QuestionType::YesNo),
        _ => None,
    }
}

const TEMPLATE_TOPICS: [&str; 12] = [
    "hiking", "wedding", "picnic", "concert", "beach trip", "birthday party", "graduation",
    "parade", "camping trip", "museum visit", "road trip", "fireworks show",
];
const TEMPLATE_THINGS: [&str; 8] = [
    "cake", "dog", "guitar", "kite", "boat", "balloons", "bicycle", "camera",
];

fn type_templates(t: QuestionType) -> &'static [&'static str] {
    match t {
        QuestionType::When => &[
            "When did we go to the {t}?",
            "When was the last {t}?",
            "When did we see the {x}?",
            "When was the {t} with the {x}?",
        ],
        QuestionType::Where => &[
            "Where was the {t}?",
            "Where did we buy the {x}?",
            "Where did the {t} take place?",
            "Where did we see the {x} during the {t}?",
        ],
        QuestionType::What => &[
            "What did we eat at the {t}?",
            "What did we bring to the {t}?",
            "Which {x} did we take to the {t}?",
            "What was on the table at the {t}?",
        ],
        QuestionType::Who => &[
            "Who came to the {t}?",
            "Who brought the {x}?",
            "Who was with us at the {t}?",
            "Who played with the {x} at the {t}?",
        ],
        QuestionType::HowMany => &[
            "How many people were at the {t}?",
            "How many {x} did we see at the {t}?",
            "How many times did we go to the {t}?",
            "How many friends joined the {t}?",
        ],
        QuestionType::YesNo => &[
            "Did we go to the {t}?",
            "Was there a {x} at the {t}?",
            "Is the {x} in the photo from the {t}?",
            "Were there many people at the {t}?",
        ],
    }
}

/// `n` template questions with balanced types, shuffled by `seed`.
pub fn template_questions(n: usize, seed: u64) -> Vec<(String, QuestionType)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(String, QuestionType)> = (0..n)
        .map(|i| {
            let t = QuestionType::ALL[i % QuestionType::ALL.len()];
            let templates = type_templates(t);
            let q = templates[rng.gen_range(0..templates.len())]
                .replace("{t}", TEMPLATE_TOPICS[rng.gen_range(0..TEMPLATE_TOPICS.len())])
                .replace("{x}", TEMPLATE_THINGS[rng.gen_range(0..TEMPLATE_THINGS.len())]);
            (q, t)
        })
        .collect();
    out.shuffle(&mut rng);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub clip: f64,
    pub encoder: QuestionEncoderConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            batch_size: 32,
            optimizer: OptimizerKind::adagrad(),
            clip: 5.0,
            encoder: QuestionEncoderConfig::default(),
        }
    }
}

/// Encoder plus the question-type head it was trained with.
#[derive(Clone, Debug)]
pub struct PretrainedEncoder {
    pub params: ParamSet,
    pub encoder: QuestionEncoder,
    pub head: Dense,
    pub vocab: Vocabulary,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

impl PretrainedEncoder {
    /// Untrained encoder and head.
    pub fn init(vocab: Vocabulary, config: &PretrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = QuestionEncoder::new(&mut params, vocab.len(), config.encoder, &mut rng);
        let head = Dense::new(
            &mut params,
            "qtype",
            config.encoder.hidden_dim,
            QuestionType::ALL.len(),
            Activation::Linear,
            &mut rng,
        );
        PretrainedEncoder {
            params,
            encoder,
            head,
            vocab,
            history: Vec::new(),
        }
    }

    fn logits(&self, ps: &ParamSet, question: &str) -> Result<Vec<f64>> {
        let mut t = Tape::new(ps);
        let ids = self.encoder.token_ids(&self.vocab, question);
        let h = self.encoder.encode(&mut t, &ids)?;
        let z = self.head.forward(&mut t, h)?;
        Ok(t.value(z).to_vec())
    }

    pub fn predict(&self, question: &str) -> Result<QuestionType> {
        let z = self.logits(&self.params, question)?;
        Ok(QuestionType::ALL[crate::eval::argmax(&z)])
    }

    pub fn accuracy(&self, data: &[(String, QuestionType)]) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for (q, t) in data {
            correct += usize::from(self.predict(q)? == *t);
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Trains encoder + type head with softmax cross-entropy.
pub fn pretrain_question_encoder(
    data: &[(String, QuestionType)],
    vocab: Vocabulary,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainedEncoder> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no pretraining questions".into()));
    }
    let mut model = PretrainedEncoder::init(vocab, config, seed);
    let samples: Vec<(Vec<usize>, usize)> = data
        .iter()
        .map(|(q, t)| (model.encoder.token_ids(&model.vocab, q), t.index()))
        .collect();
    let optimizer = Optimizer::new(config.optimizer);
    let mask = [true; 6];
    let (encoder, head) = (model.encoder, model.head);
    for epoch in 0..config.epochs {
        let order = epoch_order(samples.len(), seed, epoch);
        let mut total = 0.0;
        for (iteration, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            let batch: Vec<&(Vec<usize>, usize)> = chunk.iter().map(|&i| &samples[i]).collect();
            let loss = minibatch_step(
                &mut model.params,
                &batch,
                &optimizer,
                Some(config.clip),
                |ps, (ids, target)| {
                    let mut t = Tape::new(ps);
                    let h = encoder.encode(&mut t, ids)?;
                    let z = head.forward(&mut t, h)?;
                    let l = t.masked_softmax_ce(z, &mask, *target)?;
                    Ok((t.scalar(l), t.backward(l)))
                },
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    iteration,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        let mean = total / samples.len() as f64;
        log::debug!("pretrain epoch {epoch}: loss {mean:.4}");
        model.history.push(mean);
    }
    Ok(model)
}
