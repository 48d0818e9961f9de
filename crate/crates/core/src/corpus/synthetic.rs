//! Deterministic synthetic corpus with planted answers.
//!
//! Every photo depicts one event (a concept word unique within its user
//! while the event pool lasts) that appears in its title, tags, caption and
//! concepts. Each question names the event and the leading scene concept
//! of a target photo, and its correct answer is planted verbatim in
//! exactly one modality of that photo:
//!
//! | category | answer pool      | planted in             |
//! |----------|------------------|------------------------|
//! | when     | "month year"     | time (the timestamp)   |
//! | where    | place names      | photo title / concepts |
//! | who      | first names      | tags / caption         |
//! | what     | objects          | concepts / caption     |
//! | how many | counts 2..9      | caption / ocr          |
//!
//! Each event also has a "typical" place, person, object and count; a
//! planted answer takes the typical value with probability
//! `typical_answer_rate`, which gives question-only models something to
//! learn. Image features are a per-event offset plus unit Gaussian noise,
//! both scaled by `feature_scale`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{month_name, month_year, Album, Category, Corpus, FeatureStore, Gps, Modality, PhotoDoc, QAItem};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub albums_per_user: usize,
    pub photos_per_album: usize,
    /// Questions generated about each photo (cycling through the categories).
    pub qas_per_photo: usize,
    pub feature_dim: usize,
    /// Multiplies every feature (per-event offset plus unit noise).
    pub feature_scale: f64,
    pub typical_answer_rate: f64,
}

impl Default for SyntheticConfig {
    /// 4 users × 4 albums × 8 photos, 5 questions per photo (640 QAs).
    fn default() -> Self {
        SyntheticConfig {
            n_users: 4,
            albums_per_user: 4,
            photos_per_album: 8,
            qas_per_photo: 5,
            feature_dim: 16,
            feature_scale: 0.1,
            typical_answer_rate: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn new(
        n_users: usize,
        albums_per_user: usize,
        photos_per_album: usize,
        qas_per_photo: usize,
    ) -> Self {
        SyntheticConfig {
            n_users,
            albums_per_user,
            photos_per_album,
            qas_per_photo,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedAnswer {
    pub planted_modality: Modality,
    pub photo_id: String,
}

/// qa_id → where its correct answer was planted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerKey(pub BTreeMap<String, PlantedAnswer>);

impl AnswerKey {
    pub fn get(&self, qa_id: &str) -> Option<&PlantedAnswer> {
        self.0.get(qa_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) const EVENTS: [&str; 48] = [
    "hiking", "camping", "fireworks", "wedding", "graduation", "picnic", "concert", "birthday",
    "skiing", "surfing", "fishing", "parade", "festival", "marathon", "barbecue", "sailing",
    "kayaking", "snorkeling", "yoga", "karaoke", "bowling", "cycling", "climbing", "bouldering",
    "baking", "painting", "dancing", "swimming", "skating", "rafting", "golfing", "archery",
    "chess", "carnival", "rodeo", "safari", "cruise", "reunion", "halloween", "thanksgiving",
    "christmas", "conference", "hackathon", "workshop", "lecture", "exhibition", "tournament",
    "recital",
];
pub(crate) const GENERIC_CONCEPTS: [&str; 16] = [
    "people", "outdoor", "sky", "tree", "water", "smile", "food", "building", "car", "grass",
    "night", "crowd", "light", "table", "road", "flower",
];
pub(crate) const PLACES: [&str; 10] = [
    "beach", "park", "lake", "mountain", "museum", "stadium", "airport", "garden", "harbor",
    "castle",
];
pub(crate) const NAMES: [&str; 8] = [
    "alice", "bob", "carol", "david", "emma", "frank", "grace", "henry",
];
pub(crate) const OBJECTS: [&str; 10] = [
    "pizza", "sushi", "guitar", "kite", "bicycle", "cake", "balloon", "frisbee", "camera",
    "umbrella",
];
pub(crate) const COUNTS: [&str; 8] = ["2", "3", "4", "5", "6", "7", "8", "9"];
const YEARS: [i32; 2] = [2014, 2015];
const ALBUM_ADJECTIVES: [&str; 8] = [
    "happy", "lazy", "great", "quiet", "busy", "sweet", "golden", "little",
];
const ALBUM_NOUNS: [&str; 8] = [
    "memories", "moments", "times", "days", "collection", "adventures", "stories", "snapshots",
];
const CAPTION_ADJECTIVES: [&str; 5] = ["lovely", "memorable", "relaxing", "wonderful", "exciting"];
const OCR_WORDS: [&str; 6] = ["exit", "sale", "open", "welcome", "menu", "ticket"];

fn templates(category: Category) -> &'static [&'static str] {
    match category {
        Category::When => &[
            "When was the {e} with the {g}?",
            "When did we see the {g} at the {e}?",
            "When did we have the {e} by the {g}?",
        ],
        Category::Where => &[
            "Where was the {e} with the {g}?",
            "Where did we see the {g} at the {e}?",
            "Where did the {e} by the {g} take place?",
        ],
        Category::Who => &[
            "Who was at the {e} with the {g}?",
            "Who joined us for the {e} by the {g}?",
            "Who saw the {g} at the {e}?",
        ],
        Category::What => &[
            "What did we have at the {e} with the {g}?",
            "What did we bring to the {e} by the {g}?",
            "What did we see near the {g} at the {e}?",
        ],
        Category::HowMany => &[
            "How many friends came to the {e} with the {g}?",
            "How many guests saw the {g} at the {e}?",
        ],
    }
}

struct Typical {
    place: usize,
    name: usize,
    object: usize,
    count: usize,
}

struct PhotoDraft {
    doc: PhotoDoc,
    event: usize,
    /// The generic concept in the title.
    generic: String,
    /// Planted (value, modality) per category.
    plants: HashMap<Category, (String, Modality)>,
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn pick_distinct<R: Rng>(rng: &mut R, pool: &[String], exclude: &str, n: usize) -> Vec<String> {
    let mut candidates: Vec<&String> = pool.iter().filter(|v| v.as_str() != exclude).collect();
    candidates.shuffle(rng);
    candidates.into_iter().take(n).cloned().collect()
}

fn month_start(year: i32, month: u32, day: u32) -> i64 {
    chrono::NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp())
        .expect("valid synthetic date")
}

fn when_pool() -> Vec<String> {
    YEARS
        .iter()
        .flat_map(|y| (1..=12).map(move |m| format!("{} {y}", month_name(m))))
        .collect()
}

fn to_strings(pool: &[&str]) -> Vec<String> {
    pool.iter().map(|s| s.to_string()).collect()
}

impl PhotoDraft {
    /// Plants `value` for `category` (or returns the value already planted).
    fn plant<R: Rng>(&mut self, category: Category, value: String, rng: &mut R) -> (String, Modality) {
        if let Some(existing) = self.plants.get(&category) {
            return existing.clone();
        }
        let either = rng.gen_bool(0.5);
        let doc = &mut self.doc;
        let modality = match category {
            Category::When => Modality::Time,
            Category::Where if either => {
                doc.title = format!("{value} {}", doc.title);
                Modality::PhotoTitle
            }
            Category::Where => {
                doc.concepts.insert(1, value.clone());
                Modality::Concepts
            }
            Category::Who if either => {
                doc.tags.push(value.clone());
                Modality::Tags
            }
            Category::Who => {
                doc.caption.push_str(&format!(" with {value}"));
                Modality::Caption
            }
            Category::What if either => {
                doc.concepts.insert(1, value.clone());
                Modality::Concepts
            }
            Category::What => {
                doc.caption.push_str(&format!(" with {value}"));
                Modality::Caption
            }
            Category::HowMany if either => {
                doc.caption.push_str(&format!(" with {value} friends"));
                Modality::Caption
            }
            Category::HowMany => {
                doc.ocr.insert(0, value.clone());
                Modality::Ocr
            }
        };
        self.plants.insert(category, (value.clone(), modality));
        (value, modality)
    }
}

/// Builds a corpus, its feature store and the answer key. Deterministic in `seed`.
pub fn generate_synthetic(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(Corpus, FeatureStore, AnswerKey)> {
    if config.n_users == 0
        || config.albums_per_user == 0
        || config.photos_per_album == 0
        || config.qas_per_photo == 0
        || config.feature_dim == 0
        || !(config.feature_scale.is_finite() && config.feature_scale >= 0.0)
    {
        return Err(Error::InvalidArgument(
            "synthetic corpus counts must all be >= 1 and feature_scale finite and >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let typical: Vec<Typical> = (0..EVENTS.len())
        .map(|_| Typical {
            place: rng.gen_range(0..PLACES.len()),
            name: rng.gen_range(0..NAMES.len()),
            object: rng.gen_range(0..OBJECTS.len()),
            count: rng.gen_range(0..COUNTS.len()),
        })
        .collect();
    let event_offsets: Vec<Vec<f64>> = (0..EVENTS.len())
        .map(|_| {
            (0..config.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let when_values = when_pool();
    let pools: HashMap<Category, Vec<String>> = [
        (Category::Where, to_strings(&PLACES)),
        (Category::Who, to_strings(&NAMES)),
        (Category::What, to_strings(&OBJECTS)),
        (Category::HowMany, to_strings(&COUNTS)),
        (Category::When, when_values),
    ]
    .into_iter()
    .collect();

    let mut albums = Vec::new();
    let mut photos = Vec::new();
    let mut qas = Vec::new();
    let mut key = BTreeMap::new();
    let mut features = FeatureStore::new(config.feature_dim);

    for u in 1..=config.n_users {
        let user_id = format!("u{u}");
        let mut events: Vec<usize> = (0..EVENTS.len()).collect();
        events.shuffle(&mut rng);
        let mut next_event = 0usize;

        for a in 1..=config.albums_per_user {
            let album_id = format!("{user_id}_a{a}");
            let year = YEARS[rng.gen_range(0..YEARS.len())];
            let month = rng.gen_range(1..=12u32);
            let first_day = rng.gen_range(1..=20u32);
            let base = month_start(year, month, first_day);

            let mut drafts: Vec<PhotoDraft> = (1..=config.photos_per_album)
                .map(|p| {
                    let event = events[next_event % events.len()];
                    next_event += 1;
                    let e = EVENTS[event];
                    let mut generic = GENERIC_CONCEPTS.to_vec();
                    generic.shuffle(&mut rng);
                    let timestamp = base
                        + rng.gen_range(0..7i64) * 86_400
                        + rng.gen_range(8..=20i64) * 3_600
                        + rng.gen_range(0..60i64) * 60;
                    let gps = rng.gen_bool(0.5).then(|| Gps {
                        lat: (rng.gen_range(-60.0..60.0f64) * 1e4).round() / 1e4,
                        lon: (rng.gen_range(-170.0..170.0f64) * 1e4).round() / 1e4,
                        place: None,
                    });
                    let ocr = if rng.gen_bool(0.3) {
                        vec![pick(&mut rng, &OCR_WORDS).to_string()]
                    } else {
                        Vec::new()
                    };
                    PhotoDraft {
                        doc: PhotoDoc {
                            photo_id: format!("{album_id}_p{p}"),
                            album_id: album_id.clone(),
                            timestamp,
                            gps,
                            title: format!("{e} {}", generic[0]),
                            tags: vec![e.to_string(), generic[1].to_string()],
                            caption: format!("{} {e}", pick(&mut rng, &CAPTION_ADJECTIVES)),
                            concepts: vec![
                                e.to_string(),
                                generic[0].to_string(),
                                generic[2].to_string(),
                                generic[3].to_string(),
                            ],
                            ocr,
                        },
                        event,
                        generic: generic[0].to_string(),
                        plants: HashMap::new(),
                    }
                })
                .collect();

            let mut q = 0usize;
            for target in 0..drafts.len() {
                let category_offset = rng.gen_range(0..Category::ALL.len());
                for k in 0..config.qas_per_photo {
                    let category = Category::ALL[(k + category_offset) % Category::ALL.len()];
                    let draft = &mut drafts[target];
                    let t = &typical[draft.event];
                    let pool = &pools[&category];
                    let value = match category {
                        Category::When => month_year(draft.doc.timestamp),
                        _ if rng.gen_bool(config.typical_answer_rate) => {
                            let i = match category {
                                Category::Where => t.place,
                                Category::Who => t.name,
                                Category::What => t.object,
                                _ => t.count,
                            };
                            pool[i].clone()
                        }
                        _ => pool[rng.gen_range(0..pool.len())].clone(),
                    };
                    let (answer, modality) = draft.plant(category, value, &mut rng);

                    let mut choices = pick_distinct(&mut rng, pool, &answer, 3);
                    let correct_index = rng.gen_range(0..4);
                    choices.insert(correct_index, answer);
                    let template = pick(&mut rng, templates(category));
                    q += 1;
                    let qa_id = format!("{album_id}_q{q}");
                    qas.push(QAItem {
                        qa_id: qa_id.clone(),
                        user_id: user_id.clone(),
                        question: template
                            .replace("{e}", EVENTS[draft.event])
                            .replace("{g}", &draft.generic),
                        choices,
                        correct_index,
                        evidence_photo_ids: vec![draft.doc.photo_id.clone()],
                        category,
                    });
                    key.insert(
                        qa_id,
                        PlantedAnswer {
                            planted_modality: modality,
                            photo_id: draft.doc.photo_id.clone(),
                        },
                    );
                }
            }

            albums.push(Album {
                album_id: album_id.clone(),
                user_id: user_id.clone(),
                title: format!(
                    "{} {}",
                    pick(&mut rng, &ALBUM_ADJECTIVES),
                    pick(&mut rng, &ALBUM_NOUNS)
                ),
                description: format!("photos from our {}", pick(&mut rng, &ALBUM_NOUNS)),
                photo_ids: drafts.iter().map(|d| d.doc.photo_id.clone()).collect(),
            });
            for draft in drafts {
                let vector: Vec<f64> = event_offsets[draft.event]
                    .iter()
                    .map(|m| config.feature_scale * (m + rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                features.insert(&draft.doc.photo_id, &vector)?;
                photos.push(draft.doc);
            }
        }
    }

    let corpus = Corpus::new(albums, photos, qas)?;
    Ok((corpus, features, AnswerKey(key)))
}
