use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Whether visual features take part in the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TextOnly,
    #[default]
    Multimodal,
}

pub type Sentence = Vec<String>;

#[derive(Clone, Debug, PartialEq)]
pub struct ProductRecord {
    pub product_id: String,
    pub name: Vec<String>,
    pub sentences: Vec<Sentence>,
    pub features_path: Option<String>,
    /// Precomputed region-of-interest rows, `n x d`.
    pub visual_features: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReviewRecord {
    pub review_id: String,
    pub product_id: String,
    pub sentences: Vec<Sentence>,
    pub features_path: Option<String>,
    pub visual_features: Matrix,
    pub votes: u64,
    /// Gold score in `0..=4`.
    pub helpfulness: u8,
}

impl ReviewRecord {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Half-open token ranges of each sentence in the flattened review.
    pub fn sentence_bounds(&self) -> Vec<(usize, usize)> {
        sentence_bounds(&self.sentences)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.sentences.iter().flatten()
    }
}

pub fn sentence_bounds(sentences: &[Sentence]) -> Vec<(usize, usize)> {
    let mut start = 0;
    sentences
        .iter()
        .map(|s| {
            let b = (start, start + s.len());
            start += s.len();
            b
        })
        .collect()
}

/// A mention span: sentence index plus a half-open token range in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize, pub usize);

impl Span {
    pub fn sentence(&self) -> usize {
        self.0
    }

    pub fn start(&self) -> usize {
        self.1
    }

    pub fn end(&self) -> usize {
        self.2
    }
}

/// Core words of the product name and coreference clusters of one review.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub review_id: String,
    pub core_words: Vec<String>,
    pub clusters: Vec<Vec<Span>>,
}

impl AnnotationRecord {
    /// Checks every span against the review's sentence structure.
    pub fn validate_against(&self, review: &ReviewRecord) -> Result<()> {
        for (ci, cluster) in self.clusters.iter().enumerate() {
            for span in cluster {
                let Some(sentence) = review.sentences.get(span.sentence()) else {
                    return Err(Error::Annotation(format!(
                        "review {}: cluster {ci} names sentence {} of {}",
                        review.review_id,
                        span.sentence(),
                        review.sentences.len()
                    )));
                };
                if span.start() >= span.end() || span.end() > sentence.len() {
                    return Err(Error::Annotation(format!(
                        "review {}: span {:?} out of bounds for sentence of {} tokens",
                        review.review_id,
                        span,
                        sentence.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Products with their reviews and optional annotations, for one partition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub products: Vec<ProductRecord>,
    pub reviews: Vec<ReviewRecord>,
    pub annotations: BTreeMap<String, AnnotationRecord>,
}

/// A product together with the indices of its reviews in `Dataset::reviews`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductGroup {
    pub product: usize,
    pub reviews: Vec<usize>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.products.is_empty() && self.reviews.is_empty()
    }

    pub fn product_index(&self) -> BTreeMap<&str, usize> {
        self.products
            .iter()
            .enumerate()
            .map(|(i, p)| (p.product_id.as_str(), i))
            .collect()
    }

    /// Reviews grouped by product, in product order; review order is kept.
    pub fn groups(&self) -> Vec<ProductGroup> {
        let index = self.product_index();
        let mut groups: Vec<ProductGroup> = (0..self.products.len())
            .map(|p| ProductGroup {
                product: p,
                reviews: Vec::new(),
            })
            .collect();
        for (ri, r) in self.reviews.iter().enumerate() {
            if let Some(&p) = index.get(r.product_id.as_str()) {
                groups[p].reviews.push(ri);
            }
        }
        groups
    }

    /// Checks the structural invariants shared by every partition.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut dim = None;
        let mut check_dim = |m: &Matrix, owner: &str| -> Result<()> {
            if m.rows() == 0 {
                return Ok(());
            }
            match dim {
                None => dim = Some(m.cols()),
                Some(d) if d != m.cols() => {
                    return Err(Error::Validation(format!(
                        "{owner}: visual feature dim {} differs from corpus dim {d}",
                        m.cols()
                    )))
                }
                _ => {}
            }
            Ok(())
        };
        for p in &self.products {
            if !seen.insert(p.product_id.as_str()) {
                return Err(Error::Validation(format!("duplicate product_id {}", p.product_id)));
            }
            check_sentences(&p.sentences, &p.product_id)?;
            if mode == Mode::Multimodal && p.visual_features.rows() == 0 {
                return Err(Error::Validation(format!(
                    "product {} has no visual features in multimodal mode",
                    p.product_id
                )));
            }
            check_dim(&p.visual_features, &p.product_id)?;
        }
        let mut seen_reviews = BTreeSet::new();
        for r in &self.reviews {
            if !seen_reviews.insert(r.review_id.as_str()) {
                return Err(Error::Validation(format!("duplicate review_id {}", r.review_id)));
            }
            if !seen.contains(r.product_id.as_str()) {
                return Err(Error::Referential(format!(
                    "review {} names unknown product {}",
                    r.review_id, r.product_id
                )));
            }
            check_sentences(&r.sentences, &r.review_id)?;
            if r.helpfulness > 4 {
                return Err(Error::Validation(format!(
                    "review {} has helpfulness {} outside 0..=4",
                    r.review_id, r.helpfulness
                )));
            }
            if mode == Mode::Multimodal && r.visual_features.rows() == 0 {
                return Err(Error::Validation(format!(
                    "review {} has no visual features in multimodal mode",
                    r.review_id
                )));
            }
            check_dim(&r.visual_features, &r.review_id)?;
        }
        let by_id: BTreeMap<&str, &ReviewRecord> =
            self.reviews.iter().map(|r| (r.review_id.as_str(), r)).collect();
        for (id, a) in &self.annotations {
            let review = by_id.get(id.as_str()).ok_or_else(|| {
                Error::Referential(format!("annotation for unknown review {id}"))
            })?;
            a.validate_against(review)?;
        }
        Ok(())
    }

    /// Products that can contribute ranking pairs: at least two reviews with
    /// distinct gold scores.
    pub fn rankable_groups(&self) -> Vec<ProductGroup> {
        self.groups()
            .into_iter()
            .filter(|g| {
                let scores: BTreeSet<u8> =
                    g.reviews.iter().map(|&r| self.reviews[r].helpfulness).collect();
                g.reviews.len() >= 2 && scores.len() >= 2
            })
            .collect()
    }
}

fn check_sentences(sentences: &[Sentence], owner: &str) -> Result<()> {
    if sentences.is_empty() {
        return Err(Error::Validation(format!("{owner} has no sentences")));
    }
    if sentences.iter().any(Vec::is_empty) {
        return Err(Error::Validation(format!("{owner} has an empty sentence")));
    }
    Ok(())
}

/// Train, dev and test partitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl DatasetSplit {
    pub fn partitions(&self) -> [(&'static str, &Dataset); 3] {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
    }
}

/// Helpfulness score from a vote count: `floor(log2 votes)` clipped to `[0, 4]`.
pub fn label_from_votes(votes: i64) -> Result<u8> {
    if votes < 0 {
        return Err(Error::Validation(format!("negative vote count {votes}")));
    }
    if votes <= 1 {
        return Ok(0);
    }
    let floor_log2 = 63 - (votes as u64).leading_zeros();
    Ok(floor_log2.min(4) as u8)
}
