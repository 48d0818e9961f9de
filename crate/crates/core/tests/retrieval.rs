use std::collections::HashSet;
use std::time::Instant;

use memex_core::corpus::{generate_synthetic, Modality, SyntheticConfig};
use memex_core::index::InvertedIndex;
use memex_core::textproc::normalize;
use memex_core::Corpus;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K1: f64 = 1.2;
const B: f64 = 0.75;

/// Term lists of every photo, rebuilt from the raw modality texts.
fn documents(corpus: &Corpus) -> Vec<Vec<String>> {
    corpus
        .photos()
        .iter()
        .map(|p| {
            let album = corpus.album_of(p);
            Modality::ALL
                .iter()
                .flat_map(|m| normalize(&m.text(p, album)).into_vec())
                .collect()
        })
        .collect()
}

/// Scores every document from scratch and sorts by (score desc, id asc),
/// keeping documents that contain at least one query term.
fn brute_force(corpus: &Corpus, docs: &[Vec<String>], query: &[String], user: Option<&str>) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut seen = HashSet::new();
    let terms: Vec<&String> = query.iter().filter(|t| seen.insert(t.as_str())).collect();
    let mut out = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        let photo = &corpus.photos()[d];
        if user.is_some_and(|u| corpus.user_of(photo) != u) {
            continue;
        }
        let mut score = 0.0;
        let mut hit = false;
        for t in &terms {
            let tf = doc.iter().filter(|w| w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let df = docs.iter().filter(|doc| doc.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * doc.len() as f64 / avg));
        }
        if hit {
            out.push((photo.photo_id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// Synthetic corpus where some photos copy another photo's text, so
/// exact score ties occur.
fn corpus_with_ties(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = SyntheticConfig::new(
        rng.gen_range(1..=3),
        rng.gen_range(1..=4),
        rng.gen_range(2..=12),
        1,
    );
    let (corpus, _, _) = generate_synthetic(&config, seed).unwrap();
    let mut photos = corpus.photos().to_vec();
    for i in 1..photos.len() {
        if rng.gen_bool(0.2) && photos[i].album_id == photos[i - 1].album_id {
            let src = photos[i - 1].clone();
            let p = &mut photos[i];
            p.title = src.title;
            p.tags = src.tags;
            p.caption = src.caption;
            p.concepts = src.concepts;
            p.ocr = src.ocr;
            p.timestamp = src.timestamp;
            p.gps = src.gps;
        }
    }
    Corpus::new(corpus.albums().to_vec(), photos, corpus.qas().to_vec()).unwrap()
}

fn random_query(docs: &[Vec<String>], rng: &mut ChaCha8Rng) -> Vec<String> {
    let vocab: Vec<&String> = {
        let mut v: Vec<&String> = docs.iter().flatten().collect();
        v.sort();
        v.dedup();
        v
    };
    let len = rng.gen_range(1..=6);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.1) {
                "unseenterm".to_string()
            } else {
                (*vocab.choose(rng).unwrap()).clone()
            }
        })
        .collect()
}

fn assert_same(got: &[(String, f64)], want: &[(String, f64)], what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (g, w) in got.iter().zip(want) {
        assert_eq!(g.0, w.0, "{what}: order");
        assert!((g.1 - w.1).abs() <= 1e-12, "{what}: {} vs {}", g.1, w.1);
    }
}

#[test]
fn search_matches_brute_force_on_seeded_corpora() {
    let start = Instant::now();
    let mut tie_queries = 0;
    for seed in 0..24u64 {
        let corpus = corpus_with_ties(seed);
        assert!(corpus.photos().len() <= 200);
        let docs = documents(&corpus);
        let index = InvertedIndex::build(&corpus);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let users: Vec<String> = corpus.users().map(str::to_string).collect();
        for q in 0..25 {
            let query = random_query(&docs, &mut rng);
            let k = rng.gen_range(1..=docs.len() + 2);
            let want = brute_force(&corpus, &docs, &query, None);
            if want.windows(2).any(|w| w[0].1 == w[1].1) {
                tie_queries += 1;
            }
            let got: Vec<(String, f64)> = index.search(&query, k).0.into_iter().map(|r| (r.photo_id, r.score)).collect();
            let want_k: Vec<_> = want.into_iter().take(k).collect();
            assert_same(&got, &want_k, &format!("seed {seed} query {q}"));

            let user = &users[q % users.len()];
            let want = brute_force(&corpus, &docs, &query, Some(user));
            let got: Vec<(String, f64)> = index
                .search_user(&query, k, user)
                .0
                .into_iter()
                .map(|r| (r.photo_id, r.score))
                .collect();
            let want_k: Vec<_> = want.into_iter().take(k).collect();
            assert_same(&got, &want_k, &format!("seed {seed} query {q} user {user}"));
        }
    }
    assert!(tie_queries > 0, "no query produced a tie");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn snapshot_reproduces_search() {
    let corpus = corpus_with_ties(5);
    let index = InvertedIndex::build(&corpus);
    let loaded = InvertedIndex::decode(&index.encode()).unwrap();
    let docs = documents(&corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let q = random_query(&docs, &mut rng);
        assert_eq!(index.search(&q, 10), loaded.search(&q, 10));
    }
    assert_eq!(index.encode(), loaded.encode());
}

#[test]
fn document_lengths_match_recount() {
    let (corpus, _, _) = generate_synthetic(&SyntheticConfig::new(1, 2, 4, 1), 3).unwrap();
    let index = InvertedIndex::build(&corpus);
    assert_eq!(index.num_docs(), 8);
    let mut total = 0usize;
    for (d, photo) in corpus.photos().iter().enumerate() {
        let album = corpus.album_of(photo);
        let mut count = 0;
        for m in Modality::ALL {
            let text = m.text(photo, album).to_lowercase();
            count += text
                .split(|c: char| !c.is_ascii_alphanumeric())
                .filter(|w| !w.is_empty())
                .filter(|w| !normalize(w).is_empty())
                .count();
        }
        assert_eq!(index.doc_len(d) as usize, count, "{}", photo.photo_id);
        total += count;
    }
    assert!((index.avg_len() - total as f64 / 8.0).abs() < 1e-12);
}
