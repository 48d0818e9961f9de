//! Canonical data model: albums, photos, QA items, features and splits.
//!
//! On disk a corpus is three JSON-lines files (`albums.json`,
//! `photos.json`, `qas.json`) plus `features.bin` / `features.idx.json`.
//! [`Corpus::new`] is the single validation point; everything downstream
//! assumes its invariants.

mod features;
mod render;
mod split;
mod synthetic;
mod vocab;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::FeatureStore;
pub use render::{month_name, month_year, render_gps, render_time, season};
pub use split::{split_qas, Split, DEFAULT_SPLIT_RATIOS};
pub use synthetic::{generate_synthetic, AnswerKey, PlantedAnswer, SyntheticConfig};
pub use vocab::{canonicalize_answer, AnswerVocab, DEFAULT_ANSWER_CAP, PILOT_ANSWER};

pub const ALBUMS_FILE: &str = "albums.json";
pub const PHOTOS_FILE: &str = "photos.json";
pub const QAS_FILE: &str = "qas.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const ANSWER_KEY_FILE: &str = "answer_key.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gps {
    pub lat: f64,
    pub lon: f64,
    /// Optional place name (city, venue) rendered next to the coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotoDoc {
    pub photo_id: String,
    pub album_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    #[serde(default)]
    pub gps: Option<Gps>,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub concepts: Vec<String>,
    #[serde(default)]
    pub ocr: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Album {
    pub album_id: String,
    pub user_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub photo_ids: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    HowMany,
    What,
    When,
    Where,
    Who,
}

impl Category {
    /// Column order of the accuracy table.
    pub const ALL: [Category; 5] = [
        Category::HowMany,
        Category::What,
        Category::When,
        Category::Where,
        Category::Who,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::HowMany => "how_many",
            Category::What => "what",
            Category::When => "when",
            Category::Where => "where",
            Category::Who => "who",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "QaRecord")]
pub struct QAItem {
    pub qa_id: String,
    pub user_id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub correct_index: usize,
    pub evidence_photo_ids: Vec<String>,
    pub category: Category,
}

/// On-disk form; `category` may be omitted and is then derived from the question.
#[derive(Deserialize)]
struct QaRecord {
    qa_id: String,
    user_id: String,
    question: String,
    choices: Vec<String>,
    correct_index: usize,
    evidence_photo_ids: Vec<String>,
    #[serde(default)]
    category: Option<Category>,
}

impl From<QaRecord> for QAItem {
    fn from(r: QaRecord) -> Self {
        let category = r
            .category
            .unwrap_or_else(|| crate::eval::categorize(&r.question));
        QAItem {
            qa_id: r.qa_id,
            user_id: r.user_id,
            question: r.question,
            choices: r.choices,
            correct_index: r.correct_index,
            evidence_photo_ids: r.evidence_photo_ids,
            category,
        }
    }
}

impl QAItem {
    pub fn correct_answer(&self) -> &str {
        &self.choices[self.correct_index]
    }
}

/// One metadata channel of a photo, in the fixed order used by every model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Time,
    Gps,
    AlbumTitle,
    AlbumDesc,
    PhotoTitle,
    Tags,
    Caption,
    Concepts,
    Ocr,
}

impl Modality {
    pub const ALL: [Modality; 9] = [
        Modality::Time,
        Modality::Gps,
        Modality::AlbumTitle,
        Modality::AlbumDesc,
        Modality::PhotoTitle,
        Modality::Tags,
        Modality::Caption,
        Modality::Concepts,
        Modality::Ocr,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Time => "time",
            Modality::Gps => "gps",
            Modality::AlbumTitle => "album_title",
            Modality::AlbumDesc => "album_desc",
            Modality::PhotoTitle => "photo_title",
            Modality::Tags => "tags",
            Modality::Caption => "caption",
            Modality::Concepts => "concepts",
            Modality::Ocr => "ocr",
        }
    }

    /// Raw text of this modality for a photo.
    pub fn text(self, photo: &PhotoDoc, album: &Album) -> String {
        match self {
            Modality::Time => render_time(photo.timestamp),
            Modality::Gps => photo.gps.as_ref().map(render_gps).unwrap_or_default(),
            Modality::AlbumTitle => album.title.clone(),
            Modality::AlbumDesc => album.description.clone(),
            Modality::PhotoTitle => photo.title.clone(),
            Modality::Tags => photo.tags.join(" "),
            Modality::Caption => photo.caption.clone(),
            Modality::Concepts => photo.concepts.join(" "),
            Modality::Ocr => photo.ocr.join(" "),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Counts reported by `stats` and the loaders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CorpusCounts {
    pub users: usize,
    pub albums: usize,
    pub photos: usize,
    pub qas: usize,
}

/// A validated, cross-linked corpus. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Corpus {
    albums: Vec<Album>,
    photos: Vec<PhotoDoc>,
    qas: Vec<QAItem>,
    album_by_id: HashMap<String, usize>,
    photo_by_id: HashMap<String, usize>,
    qa_by_id: HashMap<String, usize>,
    /// Photo positions per user, in corpus order.
    user_photos: BTreeMap<String, Vec<usize>>,
}

fn index_ids<'a>(
    kind: &'static str,
    ids: impl Iterator<Item = &'a String>,
) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(map)
}

fn invalid(id: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        id: id.to_string(),
        message: message.into(),
    }
}

impl Corpus {
    pub fn new(albums: Vec<Album>, photos: Vec<PhotoDoc>, qas: Vec<QAItem>) -> Result<Self> {
        let album_by_id = index_ids("album", albums.iter().map(|a| &a.album_id))?;
        let photo_by_id = index_ids("photo", photos.iter().map(|p| &p.photo_id))?;
        let qa_by_id = index_ids("qa", qas.iter().map(|q| &q.qa_id))?;

        for photo in &photos {
            let Some(&album) = album_by_id.get(&photo.album_id) else {
                return Err(Error::DanglingReference {
                    kind: "album",
                    id: photo.album_id.clone(),
                    from: photo.photo_id.clone(),
                });
            };
            if photo.timestamp < 0 {
                return Err(invalid(&photo.photo_id, "timestamp must be >= 0"));
            }
            if let Some(gps) = &photo.gps {
                if !(-90.0..=90.0).contains(&gps.lat) || !(-180.0..=180.0).contains(&gps.lon) {
                    return Err(invalid(&photo.photo_id, "gps out of range"));
                }
            }
            if !albums[album].photo_ids.contains(&photo.photo_id) {
                return Err(invalid(
                    &photo.photo_id,
                    format!("photo is not listed in album {:?}", photo.album_id),
                ));
            }
        }

        for album in &albums {
            if album.photo_ids.is_empty() {
                return Err(invalid(&album.album_id, "album has no photos"));
            }
            for pid in &album.photo_ids {
                let Some(&p) = photo_by_id.get(pid) else {
                    return Err(Error::DanglingReference {
                        kind: "photo",
                        id: pid.clone(),
                        from: album.album_id.clone(),
                    });
                };
                if photos[p].album_id != album.album_id {
                    return Err(invalid(
                        &album.album_id,
                        format!("photo {pid:?} belongs to album {:?}", photos[p].album_id),
                    ));
                }
            }
        }

        let mut user_photos: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, photo) in photos.iter().enumerate() {
            let album = &albums[album_by_id[&photo.album_id]];
            user_photos.entry(album.user_id.clone()).or_default().push(i);
        }

        for qa in &qas {
            if qa.choices.len() != 4 {
                return Err(invalid(&qa.qa_id, "choices must be exactly 4"));
            }
            if qa.correct_index >= qa.choices.len() {
                return Err(invalid(&qa.qa_id, "correct_index must be in [0, 3]"));
            }
            let distinct: HashSet<String> =
                qa.choices.iter().map(|c| canonicalize_answer(c)).collect();
            if distinct.len() != qa.choices.len() {
                return Err(invalid(&qa.qa_id, "choices must be pairwise distinct"));
            }
            if !user_photos.contains_key(&qa.user_id) {
                return Err(Error::DanglingReference {
                    kind: "user",
                    id: qa.user_id.clone(),
                    from: qa.qa_id.clone(),
                });
            }
            if qa.evidence_photo_ids.is_empty() {
                return Err(invalid(&qa.qa_id, "at least one evidence photo is required"));
            }
            for pid in &qa.evidence_photo_ids {
                let Some(&p) = photo_by_id.get(pid) else {
                    return Err(Error::DanglingReference {
                        kind: "photo",
                        id: pid.clone(),
                        from: qa.qa_id.clone(),
                    });
                };
                let owner = &albums[album_by_id[&photos[p].album_id]].user_id;
                if *owner != qa.user_id {
                    return Err(invalid(
                        &qa.qa_id,
                        format!("evidence photo {pid:?} belongs to user {owner:?}"),
                    ));
                }
            }
        }

        Ok(Corpus {
            albums,
            photos,
            qas,
            album_by_id,
            photo_by_id,
            qa_by_id,
            user_photos,
        })
    }

    pub fn load(album_path: &Path, photo_path: &Path, qa_path: &Path) -> Result<Self> {
        let albums = read_jsonl(album_path)?;
        let photos = read_jsonl(photo_path)?;
        let qas = read_jsonl(qa_path)?;
        Corpus::new(albums, photos, qas)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Corpus::load(
            &dir.join(ALBUMS_FILE),
            &dir.join(PHOTOS_FILE),
            &dir.join(QAS_FILE),
        )
    }

    pub fn write(&self, album_path: &Path, photo_path: &Path, qa_path: &Path) -> Result<()> {
        write_jsonl(album_path, &self.albums)?;
        write_jsonl(photo_path, &self.photos)?;
        write_jsonl(qa_path, &self.qas)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write(
            &dir.join(ALBUMS_FILE),
            &dir.join(PHOTOS_FILE),
            &dir.join(QAS_FILE),
        )
    }

    pub fn albums(&self) -> &[Album] {
        &self.albums
    }

    pub fn photos(&self) -> &[PhotoDoc] {
        &self.photos
    }

    pub fn qas(&self) -> &[QAItem] {
        &self.qas
    }

    pub fn photo(&self, photo_id: &str) -> Option<&PhotoDoc> {
        self.photo_by_id.get(photo_id).map(|&i| &self.photos[i])
    }

    pub fn photo_position(&self, photo_id: &str) -> Option<usize> {
        self.photo_by_id.get(photo_id).copied()
    }

    pub fn album(&self, album_id: &str) -> Option<&Album> {
        self.album_by_id.get(album_id).map(|&i| &self.albums[i])
    }

    /// The album a (validated) photo belongs to.
    pub fn album_of(&self, photo: &PhotoDoc) -> &Album {
        &self.albums[self.album_by_id[&photo.album_id]]
    }

    pub fn user_of(&self, photo: &PhotoDoc) -> &str {
        &self.album_of(photo).user_id
    }

    pub fn qa(&self, qa_id: &str) -> Option<&QAItem> {
        self.qa_by_id.get(qa_id).map(|&i| &self.qas[i])
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_photos.keys().map(String::as_str)
    }

    pub fn has_user(&self, user_id: &str) -> bool {
        self.user_photos.contains_key(user_id)
    }

    /// Positions (into [`Corpus::photos`]) of a user's photos.
    pub fn user_photo_positions(&self, user_id: &str) -> &[usize] {
        self.user_photos
            .get(user_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn counts(&self) -> CorpusCounts {
        CorpusCounts {
            users: self.user_photos.len(),
            albums: self.albums.len(),
            photos: self.photos.len(),
            qas: self.qas.len(),
        }
    }

    pub fn qa_ids(&self) -> Vec<String> {
        self.qas.iter().map(|q| q.qa_id.clone()).collect()
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                file: file.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
