//! Probe masks: sentence-level markers of where a review mentions its product.
//!
//! The pipeline is: core words from the product name, coreference clusters of
//! the review (from an annotation file or [`heuristic_annotate`]), a gold
//! cluster picked by [`select_gold_cluster`], and finally a binary mask that
//! is 1 over every sentence holding a gold mention.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationRecord, ProductRecord, ReviewRecord, Span};
use crate::error::{Error, Result};
use crate::numeric::params::xavier_uniform;
use crate::numeric::{Graph, Matrix, ParamId, ParamStore, Var};

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "been", "but", "by", "can", "did", "do", "does", "for", "from", "had", "has", "have", "he",
    "her", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "my", "no", "not", "of", "on", "or", "our", "out", "she", "so", "than", "that",
    "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
    "those", "to", "too", "up", "very", "was", "we", "were", "what", "when", "which", "who",
    "will", "with", "would", "you", "your",
];

/// Third-person pronoun chains used by the heuristic resolver.
const PRONOUN_CHAINS: &[&[&str]] = &[
    &["it", "its", "itself", "this"],
    &["they", "them", "their", "theirs", "themselves", "these", "those"],
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        stem[..n - 1].to_string()
    } else {
        stem.to_string()
    }
}

/// Lowercases and strips regular plural, `-ing` and `-ed` suffixes.
///
/// Stopwords, pronouns and tokens with non-letters are only lowercased.
pub fn lemmatize(token: &str) -> String {
    let w = token.to_lowercase();
    if is_stopword(&w) || !w.bytes().all(|c| c.is_ascii_alphabetic()) {
        return w;
    }
    let n = w.len();
    if n > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..n - 3]);
    }
    if w.ends_with("sses") {
        return w[..n - 2].to_string();
    }
    if n > 4 && ["xes", "ches", "shes", "zes"].iter().any(|s| w.ends_with(s)) {
        return w[..n - 2].to_string();
    }
    if n > 5 && w.ends_with("ing") {
        return undouble(&w[..n - 3]);
    }
    if n > 4 && w.ends_with("ied") {
        return format!("{}y", &w[..n - 3]);
    }
    if n > 4 && w.ends_with("ed") {
        return undouble(&w[..n - 2]);
    }
    if n > 3 && w.ends_with('s') && !["ss", "us", "is"].iter().any(|s| w.ends_with(s)) {
        return w[..n - 1].to_string();
    }
    w
}

fn is_content(lemma: &str) -> bool {
    !lemma.is_empty() && lemma.bytes().all(|c| c.is_ascii_alphabetic()) && !is_stopword(lemma)
}

fn push_unique(out: &mut Vec<String>, word: String) {
    if !out.contains(&word) {
        out.push(word);
    }
}

/// Dependency information for a product name, when a parser is available.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameParse {
    /// Index of the syntactic root token.
    pub root: usize,
}

/// Core words of a product name.
///
/// With a parse, these are the content lemmas at the root and its immediate
/// neighbours. Without one, the content lemmas of the name up to the first
/// punctuation mark or digit run are used.
pub fn extract_core_words(name: &[String], parse: Option<NameParse>) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(NameParse { root }) = parse {
        let lo = root.saturating_sub(1);
        let hi = (root + 1).min(name.len().saturating_sub(1));
        for tok in name.iter().take(hi + 1).skip(lo) {
            let lemma = lemmatize(tok);
            if is_content(&lemma) {
                push_unique(&mut out, lemma);
            }
        }
        return out;
    }
    for tok in name {
        if tok.starts_with(|c: char| c.is_ascii_digit()) {
            break;
        }
        let word = tok.trim_end_matches(|c: char| !c.is_alphanumeric());
        let had_trailing_punct = word.len() != tok.len();
        if word.is_empty() {
            break;
        }
        let lemma = lemmatize(word);
        if is_content(&lemma) {
            push_unique(&mut out, lemma);
        }
        if had_trailing_punct {
            break;
        }
    }
    out
}

/// A coreference cluster with the lemmas of its mention tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MentionCluster {
    pub spans: Vec<Span>,
    pub lemmas: Vec<String>,
}

impl MentionCluster {
    /// Builds a cluster from plain words, without positions. Useful when only
    /// membership matters.
    pub fn from_words(words: &[&str]) -> Self {
        Self {
            spans: Vec::new(),
            lemmas: words.iter().map(|w| lemmatize(w)).collect(),
        }
    }

    fn contains_any(&self, core_words: &[String]) -> bool {
        self.lemmas.iter().any(|l| core_words.contains(l))
    }
}

/// Attaches mention lemmas to raw span clusters, checking bounds.
pub fn resolve_clusters(review: &ReviewRecord, clusters: &[Vec<Span>]) -> Result<Vec<MentionCluster>> {
    let probe = AnnotationRecord {
        review_id: review.review_id.clone(),
        core_words: Vec::new(),
        clusters: clusters.to_vec(),
    };
    probe.validate_against(review)?;
    Ok(clusters
        .iter()
        .map(|spans| MentionCluster {
            spans: spans.clone(),
            lemmas: spans
                .iter()
                .flat_map(|s| review.sentences[s.sentence()][s.start()..s.end()].iter())
                .map(|t| lemmatize(t))
                .collect(),
        })
        .collect())
}

/// Which of the three resolution outcomes produced the gold cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldCase {
    /// A cluster contains a core word.
    CoreWordMatch,
    /// Clusters exist but none contains a core word; the first one is used.
    FirstClusterFallback,
    /// No clusters at all.
    NoClusters,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldCluster {
    pub index: Option<usize>,
    pub spans: Vec<Span>,
    pub case: GoldCase,
}

impl GoldCluster {
    pub fn is_empty(&self) -> bool {
        self.index.is_none()
    }
}

pub fn select_gold_cluster(clusters: &[MentionCluster], core_words: &[String]) -> GoldCluster {
    if clusters.is_empty() {
        return GoldCluster {
            index: None,
            spans: Vec::new(),
            case: GoldCase::NoClusters,
        };
    }
    let (index, case) = match clusters.iter().position(|c| c.contains_any(core_words)) {
        Some(i) => (i, GoldCase::CoreWordMatch),
        None => (0, GoldCase::FirstClusterFallback),
    };
    GoldCluster {
        index: Some(index),
        spans: clusters[index].spans.clone(),
        case,
    }
}

/// Binary, sentence-aligned token mask over a flattened review.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeMask {
    pub values: Vec<u8>,
    pub sentence_boundaries: Vec<(usize, usize)>,
}

impl ProbeMask {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_ones(bounds: Vec<(usize, usize)>) -> Self {
        let len = bounds.last().map_or(0, |b| b.1);
        Self {
            values: vec![1; len],
            sentence_boundaries: bounds,
        }
    }

    pub fn hot_sentences(&self) -> Vec<usize> {
        self.sentence_boundaries
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| e > s && self.values[s] == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Marks every sentence that holds a gold mention.
pub fn generate_probe_mask(review: &ReviewRecord, gold: &GoldCluster) -> Result<ProbeMask> {
    let bounds = review.sentence_bounds();
    let mut values = vec![0u8; review.token_count()];
    let hot: BTreeSet<usize> = gold
        .spans
        .iter()
        .map(|span| {
            let len = review.sentences.get(span.sentence()).map(Vec::len).ok_or_else(|| {
                Error::Annotation(format!(
                    "review {}: span {:?} names a missing sentence",
                    review.review_id, span
                ))
            })?;
            if span.start() >= span.end() || span.end() > len {
                return Err(Error::Annotation(format!(
                    "review {}: span {:?} out of bounds",
                    review.review_id, span
                )));
            }
            Ok(span.sentence())
        })
        .collect::<Result<_>>()?;
    for s in hot {
        let (start, end) = bounds[s];
        values[start..end].fill(1);
    }
    Ok(ProbeMask {
        values,
        sentence_boundaries: bounds,
    })
}

/// Real-valued mask `alpha * M + beta * (1 - M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealMask {
    pub values: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

pub fn check_mask_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha <= 1.0 && alpha > beta && beta > 0.0) {
        return Err(Error::Parameter(format!(
            "mask weights need 1 >= alpha > beta > 0, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

pub fn realize_mask(mask: &ProbeMask, alpha: f64, beta: f64) -> Result<RealMask> {
    check_mask_weights(alpha, beta)?;
    Ok(RealMask {
        values: mask
            .values
            .iter()
            .map(|&m| alpha * f64::from(m) + beta * (1.0 - f64::from(m)))
            .collect(),
        alpha,
        beta,
    })
}

/// Clusters for a review without an external coreference tool: one cluster
/// of core-word occurrences and one for the most frequent third-person
/// pronoun chain, ordered by first mention.
pub fn heuristic_annotate(review: &ReviewRecord, core_words: &[String]) -> AnnotationRecord {
    let mut core_cluster = Vec::new();
    let mut chains: Vec<Vec<Span>> = vec![Vec::new(); PRONOUN_CHAINS.len()];
    for (si, sentence) in review.sentences.iter().enumerate() {
        for (ti, tok) in sentence.iter().enumerate() {
            let lemma = lemmatize(tok);
            let span = Span(si, ti, ti + 1);
            if core_words.contains(&lemma) {
                core_cluster.push(span);
            } else if let Some(c) = PRONOUN_CHAINS.iter().position(|ch| ch.contains(&lemma.as_str())) {
                chains[c].push(span);
            }
        }
    }
    let mut clusters = Vec::new();
    if !core_cluster.is_empty() {
        clusters.push(core_cluster);
    }
    // Most mentions wins; ties go to the chain mentioned first.
    let best = chains
        .into_iter()
        .filter(|c| !c.is_empty())
        .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b[0].cmp(&a[0])));
    if let Some(chain) = best {
        clusters.push(chain);
    }
    clusters.sort_by_key(|c| c[0]);
    AnnotationRecord {
        review_id: review.review_id.clone(),
        core_words: core_words.to_vec(),
        clusters,
    }
}

/// Full mask pipeline for one review.
///
/// Annotation core words take precedence over the name heuristic; annotation
/// clusters take precedence over the heuristic resolver.
pub fn probe_mask_for(
    review: &ReviewRecord,
    product: &ProductRecord,
    annotation: Option<&AnnotationRecord>,
) -> Result<(ProbeMask, GoldCase)> {
    let core_words = match annotation {
        Some(a) if !a.core_words.is_empty() => a.core_words.iter().map(|w| lemmatize(w)).collect(),
        _ => extract_core_words(&product.name, None),
    };
    let clusters = match annotation {
        Some(a) => a.clusters.clone(),
        None => heuristic_annotate(review, &core_words).clusters,
    };
    let resolved = resolve_clusters(review, &clusters)?;
    let gold = select_gold_cluster(&resolved, &core_words);
    Ok((generate_probe_mask(review, &gold)?, gold.case))
}

/// Per-review cold-region weight `beta = sigmoid(h_seq · w + b)`.
#[derive(Clone, Copy, Debug)]
pub struct BetaGenerator {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl BetaGenerator {
    pub fn register(store: &mut ParamStore, hidden_dim: usize, zero_init: bool, rng: &mut impl Rng) -> Result<Self> {
        let w = if zero_init {
            Matrix::zeros(hidden_dim, 1)
        } else {
            xavier_uniform(hidden_dim, 1, rng)
        };
        Ok(Self {
            weight: store.register("beta_gen.weight", w)?,
            bias: store.register("beta_gen.bias", Matrix::zeros(1, 1))?,
        })
    }

    /// `h_seq` is the `1 x d_h` sequence state; returns a `1 x 1` node.
    pub fn generate(&self, g: &mut Graph, h_seq: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let pre = g.matmul(h_seq, w)?;
        let pre = g.add(pre, b)?;
        Ok(g.sigmoid(pre))
    }
}

/// Plain-vector form of [`BetaGenerator::generate`].
pub fn generate_beta(store: &ParamStore, gen: &BetaGenerator, h_seq: &[f64]) -> Result<f64> {
    let mut g = Graph::new(store);
    let h = g.constant(Matrix::row_vector(h_seq)?);
    let beta = gen.generate(&mut g, h)?;
    Ok(g.scalar(beta))
}
