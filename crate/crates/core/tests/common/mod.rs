//! Helpers shared by the integration tests: fixture loading and brute-force
//! reference implementations that share no code with the library.

#![allow(dead_code)]

use std::path::PathBuf;

use sancl::corpus::{AnnotationRecord, ProductRecord, ReviewRecord};
use sancl::numeric::Matrix;
use sancl::probe::probe_mask_for;
use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Deserialize)]
struct ProbeCaseLine {
    case: String,
    name: String,
    sentences: Vec<String>,
    annotation: Option<AnnotationLine>,
    expected: Vec<u8>,
}

#[derive(Deserialize)]
struct AnnotationLine {
    core_words: Vec<String>,
    clusters: Vec<Vec<sancl::corpus::Span>>,
}

pub struct ProbeCase {
    pub case: String,
    pub product: ProductRecord,
    pub review: ReviewRecord,
    pub annotation: Option<AnnotationRecord>,
    pub expected: Vec<u8>,
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn probe_cases() -> Vec<ProbeCase> {
    let text = std::fs::read_to_string(fixture("probe_oracle.jsonl")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: ProbeCaseLine = serde_json::from_str(l).unwrap();
            let review = ReviewRecord {
                review_id: "r".into(),
                product_id: "p".into(),
                sentences: c.sentences.iter().map(|s| split(s)).collect(),
                features_path: None,
                visual_features: Matrix::zeros(0, 0),
                votes: 0,
                helpfulness: 0,
            };
            ProbeCase {
                case: c.case,
                product: ProductRecord {
                    product_id: "p".into(),
                    name: split(&c.name),
                    sentences: vec![],
                    features_path: None,
                    visual_features: Matrix::zeros(0, 0),
                },
                annotation: c.annotation.map(|a| AnnotationRecord {
                    review_id: "r".into(),
                    core_words: a.core_words,
                    clusters: a.clusters,
                }),
                review,
                expected: c.expected,
            }
        })
        .collect()
}

/// Cases whose computed mask differs from the hand-derived one.
pub fn probe_mismatches() -> (usize, Vec<String>) {
    let cases = probe_cases();
    let bad = cases
        .iter()
        .filter_map(|c| {
            let (mask, _) = probe_mask_for(&c.review, &c.product, c.annotation.as_ref()).unwrap();
            (mask.values != c.expected).then(|| format!("{}: got {:?}", c.case, mask.values))
        })
        .collect();
    (cases.len(), bad)
}

/// `j` is ranked at or above `i`: higher prediction, or equal prediction
/// and a review id that sorts no later.
fn at_or_above(pred: &[f64], ids: &[String], i: usize, j: usize) -> bool {
    pred[j] > pred[i] || (pred[j] == pred[i] && ids[j] <= ids[i])
}

pub fn reference_ap(pred: &[f64], gold: &[u8], ids: &[String], theta: u8) -> Option<f64> {
    let rel: Vec<usize> = (0..pred.len()).filter(|&i| gold[i] >= theta).collect();
    if rel.is_empty() {
        return None;
    }
    let total: f64 = rel
        .iter()
        .map(|&i| {
            let rank = (0..pred.len()).filter(|&j| at_or_above(pred, ids, i, j)).count();
            let hits = rel.iter().filter(|&&j| at_or_above(pred, ids, i, j)).count();
            hits as f64 / rank as f64
        })
        .sum();
    Some(total / rel.len() as f64)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn dcg_of(order: &[usize], gold: &[u8], n: usize) -> f64 {
    order
        .iter()
        .take(n)
        .enumerate()
        .map(|(k, &i)| (2f64.powi(gold[i] as i32) - 1.0) / ((k + 2) as f64).log2())
        .sum()
}

/// NDCG@n with the ideal DCG found by trying every permutation.
pub fn reference_ndcg(pred: &[f64], gold: &[u8], ids: &[String], n: usize) -> f64 {
    let ideal = permutations(gold.len())
        .iter()
        .map(|p| dcg_of(p, gold, n))
        .fold(0.0, f64::max);
    if ideal == 0.0 {
        return 0.0;
    }
    // Position of each review = number of reviews ranked at or above it.
    let mut order = vec![0; pred.len()];
    for i in 0..pred.len() {
        let pos = (0..pred.len()).filter(|&j| at_or_above(pred, ids, i, j)).count() - 1;
        order[pos] = i;
    }
    dcg_of(&order, gold, n) / ideal
}
