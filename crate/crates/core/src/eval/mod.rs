//! Accuracy reports, question categories and the 4W category statistics.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, QAItem};
use crate::error::{Error, Result};

/// Smoothing mass given to zero bins of the reference distribution in [`kl`].
pub const KL_EPSILON: f64 = 1e-9;

/// Category from the leading interrogative: "how many …" → how_many, a first
/// word of what/when/where/who → that category, anything else → what.
pub fn categorize(question: &str) -> Category {
    let lower = question.to_lowercase();
    let mut tokens = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty());
    match (tokens.next(), tokens.next()) {
        (Some("how"), Some("many")) => Category::HowMany,
        (Some("when"), _) => Category::When,
        (Some("where"), _) => Category::Where,
        (Some("who"), _) => Category::Who,
        _ => Category::What,
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Per-category and overall accuracy.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccuracyReport {
    /// Indexed like [`Category::ALL`].
    pub cells: [Cell; 5],
    pub overall: Cell,
}

#[derive(Serialize)]
struct JsonCell {
    correct: usize,
    total: usize,
    accuracy: f64,
}

impl From<Cell> for JsonCell {
    fn from(c: Cell) -> Self {
        JsonCell {
            correct: c.correct,
            total: c.total,
            accuracy: c.accuracy(),
        }
    }
}

impl AccuracyReport {
    pub fn record(&mut self, category: Category, correct: bool) {
        let i = Category::ALL.iter().position(|&c| c == category).expect("known category");
        for cell in [&mut self.cells[i], &mut self.overall] {
            cell.total += 1;
            cell.correct += usize::from(correct);
        }
    }

    pub fn cell(&self, category: Category) -> Cell {
        let i = Category::ALL.iter().position(|&c| c == category).expect("known category");
        self.cells[i]
    }

    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (c, cell) in Category::ALL.iter().zip(self.cells) {
            map.insert(c.name().to_string(), serde_json::to_value(JsonCell::from(cell)).unwrap());
        }
        map.insert(
            "overall".into(),
            serde_json::to_value(JsonCell::from(self.overall)).unwrap(),
        );
        serde_json::Value::Object(map)
    }
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>6} {:>9}", "category", "correct", "total", "accuracy")?;
        let rows = Category::ALL
            .iter()
            .map(|c| c.name())
            .zip(self.cells)
            .chain(std::iter::once(("overall", self.overall)));
        for (name, cell) in rows {
            writeln!(
                f,
                "{:<10} {:>8} {:>6} {:>9.4}",
                name,
                cell.correct,
                cell.total,
                cell.accuracy()
            )?;
        }
        Ok(())
    }
}

/// Scores every QA with `predict` (4 choice logits) in parallel and
/// aggregates in input order.
pub fn evaluate<F>(qas: &[&QAItem], predict: F) -> Result<AccuracyReport>
where
    F: Fn(&QAItem) -> Result<Vec<f64>> + Sync,
{
    let predictions: Vec<Result<usize>> = qas
        .par_iter()
        .map(|qa| predict(qa).map(|logits| argmax(&logits)))
        .collect();
    let mut report = AccuracyReport::default();
    for (qa, pred) in qas.iter().zip(predictions) {
        report.record(qa.category, pred? == qa.correct_index);
    }
    Ok(report)
}

/// Distribution over the 4W categories (what, when, who, where); how-many
/// questions are left out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    pub what: f64,
    pub when: f64,
    pub who: f64,
    pub r#where: f64,
}

impl CategoryDistribution {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.what, self.when, self.who, self.r#where]
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let d: CategoryDistribution = serde_json::from_str(&text)?;
        let v = d.to_vec();
        if v.iter().any(|p| !p.is_finite() || *p < 0.0) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Validation {
                id: path.display().to_string(),
                message: "reference distribution must be non-negative and sum to 1".into(),
            });
        }
        Ok(d)
    }
}

pub fn four_w_distribution<'a, I>(qas: I) -> Result<CategoryDistribution>
where
    I: IntoIterator<Item = &'a QAItem>,
{
    let mut counts = [0usize; 4];
    for qa in qas {
        match qa.category {
            Category::What => counts[0] += 1,
            Category::When => counts[1] += 1,
            Category::Who => counts[2] += 1,
            Category::Where => counts[3] += 1,
            Category::HowMany => {}
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no what/when/who/where questions".into()));
    }
    let p = |c: usize| c as f64 / total as f64;
    Ok(CategoryDistribution {
        what: p(counts[0]),
        when: p(counts[1]),
        who: p(counts[2]),
        r#where: p(counts[3]),
    })
}

/// KL(p‖q) = Σ p_i ln(p_i / q_i), with 0·ln 0 = 0. Zero bins of `q` receive
/// [`KL_EPSILON`] and `q` is renormalized, so the result is always finite.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("kl over {} and {} bins", p.len(), q.len())));
    }
    let q: Vec<f64> = if q.iter().any(|&v| v <= 0.0) {
        let smoothed: Vec<f64> = q.iter().map(|&v| if v <= 0.0 { KL_EPSILON } else { v }).collect();
        let sum: f64 = smoothed.iter().sum();
        smoothed.into_iter().map(|v| v / sum).collect()
    } else {
        q.to_vec()
    };
    Ok(p.iter()
        .zip(&q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qa(category: Category, correct_index: usize) -> QAItem {
        QAItem {
            qa_id: "q".into(),
            user_id: "u".into(),
            question: "?".into(),
            choices: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            correct_index,
            evidence_photo_ids: vec!["p".into()],
            category,
        }
    }

    #[test]
    fn categorize_rules() {
        assert_eq!(categorize("How many times did we have pizza?"), Category::HowMany);
        assert_eq!(categorize("Where was the graduation?"), Category::Where);
        assert_eq!(categorize("Did we go hiking?"), Category::What);
        assert_eq!(categorize("WHEN was it"), Category::When);
        assert_eq!(categorize("who came"), Category::Who);
        assert_eq!(categorize("How long was it?"), Category::What);
    }

    #[test]
    fn oracle_scores_one() {
        let qas: Vec<QAItem> = (0..8).map(|i| qa(Category::ALL[i % 5], i % 4)).collect();
        let refs: Vec<&QAItem> = qas.iter().collect();
        let r = evaluate(&refs, |q| {
            let mut l = vec![0.0; 4];
            l[q.correct_index] = 1.0;
            Ok(l)
        })
        .unwrap();
        assert_eq!(r.accuracy(), 1.0);
        assert_eq!(r.overall.total, 8);
        let per: usize = r.cells.iter().map(|c| c.correct).sum();
        assert_eq!(per, r.overall.correct);
    }

    #[test]
    fn report_formats() {
        let mut r = AccuracyReport::default();
        r.record(Category::When, true);
        r.record(Category::When, false);
        let text = r.to_string();
        assert_eq!(text.lines().count(), 7);
        assert!(text.contains("when") && text.contains("0.5000"));
        let j = r.to_json();
        assert_eq!(j["when"]["accuracy"], 0.5);
        assert_eq!(j["overall"]["total"], 2);
    }

    #[test]
    fn kl_examples() {
        let p = [0.5, 0.5, 0.0, 0.0];
        let u = [0.25; 4];
        assert!(kl(&u, &u).unwrap().abs() < 1e-12);
        assert!((kl(&p, &u).unwrap() - 2f64.ln()).abs() < 1e-9);
        let back = kl(&u, &p).unwrap();
        assert!(back.is_finite() && (back - kl(&p, &u).unwrap()).abs() > 1e-3);
        assert!(kl(&p, &u[..3]).is_err());
    }

    #[test]
    fn four_w_excludes_how_many() {
        let qas = [
            qa(Category::What, 0),
            qa(Category::When, 0),
            qa(Category::HowMany, 0),
            qa(Category::Where, 0),
        ];
        let d = four_w_distribution(&qas).unwrap();
        assert!((d.to_vec().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.who, 0.0);
        assert!((d.what - 1.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn kl_non_negative(a in prop::collection::vec(0.0f64..1.0, 4), b in prop::collection::vec(0.0f64..1.0, 4)) {
            let sa: f64 = a.iter().sum();
            let sb: f64 = b.iter().sum();
            prop_assume!(sa > 1e-6 && sb > 1e-6);
            let p: Vec<f64> = a.iter().map(|v| v / sa).collect();
            let q: Vec<f64> = b.iter().map(|v| v / sb).collect();
            prop_assert!(kl(&p, &q).unwrap() >= -1e-12);
        }
    }
}
