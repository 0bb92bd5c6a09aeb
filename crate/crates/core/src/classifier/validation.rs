//! Rater agreement and classifier validation against majority-vote labels.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("need at least {0}")]
    TooSmall(&'static str),
    #[error("item {item} has {got} ratings, expected {expected}")]
    RaggedRatings { item: String, got: usize, expected: usize },
    #[error("kappa undefined: expected agreement is 1 (all ratings in one category)")]
    UndefinedKappa,
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no labels to score")]
    Empty,
    #[error("label file: {0}")]
    File(String),
}

/// Binary (on-topic yes/no) labels, one row per item, one column per
/// rater. Every row has the same number of raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub item_ids: Vec<String>,
    pub ratings: Vec<Vec<bool>>,
}

impl RatingMatrix {
    pub fn new(item_ids: Vec<String>, ratings: Vec<Vec<bool>>) -> Result<Self, ValidationError> {
        let expected = ratings.first().map_or(0, Vec::len);
        for (id, row) in item_ids.iter().zip(&ratings) {
            if row.len() != expected {
                return Err(ValidationError::RaggedRatings { item: id.clone(), got: row.len(), expected });
            }
        }
        if item_ids.len() != ratings.len() {
            return Err(ValidationError::LengthMismatch(item_ids.len(), ratings.len()));
        }
        Ok(Self { item_ids, ratings })
    }

    pub fn from_rows(ratings: Vec<Vec<bool>>) -> Result<Self, ValidationError> {
        let ids = (0..ratings.len()).map(|i| i.to_string()).collect();
        Self::new(ids, ratings)
    }

    pub fn n_raters(&self) -> usize {
        self.ratings.first().map_or(0, Vec::len)
    }

    /// Per-item category counts `[no, yes]`.
    pub fn count_table(&self) -> Vec<Vec<u64>> {
        self.ratings
            .iter()
            .map(|row| {
                let yes = row.iter().filter(|r| **r).count() as u64;
                vec![row.len() as u64 - yes, yes]
            })
            .collect()
    }

    /// Reads `item_id,rater_id,label` records (comma or tab separated, an
    /// optional header line). Labels: yes/no, y/n, true/false, 1/0.
    pub fn read_labels(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path).map_err(|e| ValidationError::File(e.to_string()))?;
        Self::parse_labels(&text)
    }

    pub fn parse_labels(text: &str) -> Result<Self, ValidationError> {
        let delimiter = if text.lines().next().is_some_and(|l| l.contains('\t')) { b'\t' } else { b',' };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut order: Vec<String> = Vec::new();
        let mut by_item: HashMap<String, Vec<(String, bool)>> = HashMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ValidationError::File(e.to_string()))?;
            if record.len() != 3 {
                return Err(ValidationError::File(format!("line {}: expected 3 fields", line + 1)));
            }
            let label = match record[2].to_ascii_lowercase().as_str() {
                "yes" | "y" | "true" | "1" => true,
                "no" | "n" | "false" | "0" => false,
                other if line == 0 && record[0].eq_ignore_ascii_case("item_id") => {
                    let _ = other;
                    continue;
                }
                other => return Err(ValidationError::File(format!("line {}: bad label {other:?}", line + 1))),
            };
            let item = record[0].to_string();
            if !by_item.contains_key(&item) {
                order.push(item.clone());
            }
            let raters = by_item.entry(item.clone()).or_default();
            if raters.iter().any(|(r, _)| r == &record[1]) {
                return Err(ValidationError::File(format!("line {}: duplicate rating for {item}", line + 1)));
            }
            raters.push((record[1].to_string(), label));
        }
        let ratings = order
            .iter()
            .map(|id| {
                let mut rows = by_item.remove(id).unwrap_or_default();
                rows.sort_by(|a, b| a.0.cmp(&b.0));
                rows.into_iter().map(|(_, l)| l).collect()
            })
            .collect();
        Self::new(order, ratings)
    }
}

/// Fleiss' kappa over a table of per-item category counts. Every row must
/// sum to the same number of raters.
pub fn fleiss_kappa_table(table: &[Vec<u64>]) -> Result<f64, ValidationError> {
    if table.len() < 2 {
        return Err(ValidationError::TooSmall("2 items"));
    }
    let raters: u64 = table[0].iter().sum();
    if raters < 2 {
        return Err(ValidationError::TooSmall("2 raters"));
    }
    let categories = table[0].len();
    for (i, row) in table.iter().enumerate() {
        let got: u64 = row.iter().sum();
        if got != raters || row.len() != categories {
            return Err(ValidationError::RaggedRatings {
                item: i.to_string(),
                got: got as usize,
                expected: raters as usize,
            });
        }
    }
    let n_items = table.len() as f64;
    let r = raters as f64;
    let total = n_items * r;

    let p_bar = table
        .iter()
        .map(|row| {
            let agree: f64 = row.iter().map(|&c| (c * c) as f64).sum::<f64>() - r;
            agree / (r * (r - 1.0))
        })
        .sum::<f64>()
        / n_items;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let pj = table.iter().map(|row| row[j]).sum::<u64>() as f64 / total;
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(ValidationError::UndefinedKappa);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

pub fn fleiss_kappa(matrix: &RatingMatrix) -> Result<f64, ValidationError> {
    fleiss_kappa_table(&matrix.count_table())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Majority {
    Yes,
    No,
    Tie,
}

impl Majority {
    pub fn label(self) -> Option<bool> {
        match self {
            Majority::Yes => Some(true),
            Majority::No => Some(false),
            Majority::Tie => None,
        }
    }
}

/// Strict majority per item; an exact split is a tie.
pub fn majority_vote(matrix: &RatingMatrix) -> Vec<Majority> {
    matrix
        .ratings
        .iter()
        .map(|row| {
            let yes = row.iter().filter(|r| **r).count();
            let no = row.len() - yes;
            match yes.cmp(&no) {
                std::cmp::Ordering::Greater => Majority::Yes,
                std::cmp::Ordering::Less => Majority::No,
                std::cmp::Ordering::Equal => Majority::Tie,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy, precision, recall and F1 with on-topic as the positive class.
/// Undefined ratios (no predicted or no actual positives) are reported as 0.
pub fn confusion_metrics(predicted: &[bool], gold: &[bool]) -> Result<ConfusionMetrics, ValidationError> {
    if predicted.len() != gold.len() {
        return Err(ValidationError::LengthMismatch(predicted.len(), gold.len()));
    }
    if predicted.is_empty() {
        return Err(ValidationError::Empty);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(ConfusionMetrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy: ratio(tp + tn, predicted.len() as u64),
        precision,
        recall,
        f1: harmonic_mean(precision, recall),
    })
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub fleiss_kappa: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Items whose human majority vote was tied; excluded from the metrics.
    pub tie_count: usize,
}

/// Scores `predicted` (one label per matrix item) against the raters'
/// majority vote, dropping tied items.
pub fn validate_classifier(matrix: &RatingMatrix, predicted: &[bool]) -> Result<ValidationReport, ValidationError> {
    if predicted.len() != matrix.ratings.len() {
        return Err(ValidationError::LengthMismatch(predicted.len(), matrix.ratings.len()));
    }
    let kappa = fleiss_kappa(matrix)?;
    let votes = majority_vote(matrix);
    let (pred, gold): (Vec<bool>, Vec<bool>) =
        votes.iter().zip(predicted).filter_map(|(v, &p)| v.label().map(|g| (p, g))).unzip();
    let metrics = confusion_metrics(&pred, &gold)?;
    Ok(ValidationReport {
        fleiss_kappa: kappa,
        accuracy: metrics.accuracy,
        precision: metrics.precision,
        recall: metrics.recall,
        f1: metrics.f1,
        tie_count: votes.iter().filter(|v| **v == Majority::Tie).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unanimous_both_categories_gives_one() {
        let rows = (0..10).map(|i| vec![i % 2 == 0; 4]).collect();
        let m = RatingMatrix::from_rows(rows).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap(), 1.0);
    }

    #[test]
    fn single_category_is_undefined() {
        let m = RatingMatrix::from_rows(vec![vec![true; 4]; 10]).unwrap();
        assert_eq!(fleiss_kappa(&m), Err(ValidationError::UndefinedKappa));
    }

    #[test]
    fn too_small_inputs() {
        assert!(matches!(fleiss_kappa_table(&[vec![2, 2]]), Err(ValidationError::TooSmall(_))));
        assert!(matches!(fleiss_kappa_table(&[vec![1, 0], vec![0, 1]]), Err(ValidationError::TooSmall(_))));
        assert!(matches!(fleiss_kappa_table(&[vec![2, 2], vec![3, 2]]), Err(ValidationError::RaggedRatings { .. })));
    }

    #[test]
    fn textbook_example() {
        // Fleiss (1971)-style worked example from the Wikipedia article on
        // Fleiss' kappa: 10 items, 14 raters, 5 categories -> 0.210.
        let table: Vec<Vec<u64>> = vec![
            vec![0, 0, 0, 0, 14],
            vec![0, 2, 6, 4, 2],
            vec![0, 0, 3, 5, 6],
            vec![0, 3, 9, 2, 0],
            vec![2, 2, 8, 1, 1],
            vec![7, 7, 0, 0, 0],
            vec![3, 2, 6, 3, 0],
            vec![2, 5, 3, 2, 2],
            vec![6, 5, 2, 1, 0],
            vec![0, 2, 2, 3, 7],
        ];
        let k = fleiss_kappa_table(&table).unwrap();
        assert!((k - 0.20993070442195522).abs() < 1e-12, "{k}");
    }

    #[test]
    fn random_labels_have_near_zero_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = (0..10_000).map(|_| (0..4).map(|_| rng.gen_bool(0.5)).collect()).collect();
        let k = fleiss_kappa(&RatingMatrix::from_rows(rows).unwrap()).unwrap();
        assert!(k.abs() < 0.05, "{k}");
    }

    #[test]
    fn majority_with_ties() {
        let m = RatingMatrix::from_rows(vec![
            vec![true, true, true, false],
            vec![true, true, false, false],
            vec![false, false, false, true],
        ])
        .unwrap();
        assert_eq!(majority_vote(&m), vec![Majority::Yes, Majority::Tie, Majority::No]);
    }

    #[test]
    fn confusion_example() {
        // TP=3, FP=1, FN=1, TN=5
        let pred = [true, true, true, true, false, false, false, false, false, false];
        let gold = [true, true, true, false, true, false, false, false, false, false];
        let m = confusion_metrics(&pred, &gold).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 1, 1, 5));
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.f1, 0.75);
    }

    #[test]
    fn perfect_predictions() {
        let gold = [true, false, true, false, false];
        let m = confusion_metrics(&gold, &gold).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn reported_precision_recall_reproduce_f1() {
        let f1 = harmonic_mean(0.966, 0.791);
        assert!((f1 - 0.8698).abs() < 1e-4, "{f1}");
        assert!((f1 - 0.87).abs() <= 0.005);
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(confusion_metrics(&[true], &[]), Err(ValidationError::LengthMismatch(1, 0)));
        assert_eq!(confusion_metrics(&[], &[]), Err(ValidationError::Empty));
    }

    #[test]
    fn validation_excludes_ties() {
        let m = RatingMatrix::from_rows(vec![
            vec![true, true, true, true],
            vec![true, true, false, false],
            vec![false, false, false, false],
            vec![false, false, false, true],
        ])
        .unwrap();
        let report = validate_classifier(&m, &[true, false, false, true]).unwrap();
        assert_eq!(report.tie_count, 1);
        // Scored items: (T,T) (F,F) (T,F) -> acc 2/3, precision 1/2, recall 1.
        assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.precision, 0.5);
        assert_eq!(report.recall, 1.0);
        assert!((-1.0..=1.0).contains(&report.fleiss_kappa));
    }

    #[test]
    fn parses_label_files() {
        let text = "item_id,rater_id,label\nv1,alice,yes\nv1,bob,no\nv2,bob,1\nv2,alice,0\n";
        let m = RatingMatrix::parse_labels(text).unwrap();
        assert_eq!(m.item_ids, vec!["v1", "v2"]);
        assert_eq!(m.ratings, vec![vec![true, false], vec![false, true]]);

        let tsv = "v1\tr1\ty\nv1\tr2\ty\nv2\tr1\tn\nv2\tr2\tn\n";
        assert_eq!(RatingMatrix::parse_labels(tsv).unwrap().n_raters(), 2);

        let ragged = "v1,a,yes\nv1,b,yes\nv2,a,no\n";
        assert!(matches!(RatingMatrix::parse_labels(ragged), Err(ValidationError::RaggedRatings { .. })));
        assert!(RatingMatrix::parse_labels("v1,a,maybe\n").is_err());
        assert!(RatingMatrix::parse_labels("v1,a,yes\nv1,a,no\n").is_err());
    }
}
