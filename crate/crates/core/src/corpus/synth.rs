//! Deterministic synthetic corpora with a planted helpfulness signal.
//!
//! Every product owns a handful of attribute words drawn from a shared pool,
//! and a latent visual direction built from them. A review's gold score
//! controls three things:
//!
//! * how many of its product's attribute words appear in the sentences that
//!   mention the product (lexical overlap with the description),
//! * how closely its image regions follow the product's visual direction,
//! * its vote count, from which the score is re-derived on load.
//!
//! Sentences that do not mention the product are filled with attribute words
//! of *other* products at a random rate, so they carry no signal. Because the
//! generator places every mention itself, it also emits ground-truth probe
//! masks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::records::{
    label_from_votes, AnnotationRecord, Dataset, DatasetSplit, ProductRecord, ReviewRecord, Span,
};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

const NOUNS: &[&str] = &[
    "pin", "lamp", "kettle", "blender", "chair", "pillow", "blanket", "towel", "mug", "skillet",
    "candle", "basket", "hook", "curtain", "rug", "clock", "mirror", "vase", "shelf", "bottle",
    "jar", "fan", "heater", "brush",
];

const BRANDS: &[&str] = &[
    "Acme", "Zento", "Lumora", "Brixel", "Calder", "Dovan", "Elkra", "Fennix", "Gorvel", "Hestra",
    "Ivory", "Jostad",
];

const SINGULAR_PRONOUNS: &[&str] = &["it", "it", "this"];
const PLURAL_PRONOUNS: &[&str] = &["these", "they", "them"];

/// Knobs for [`synthesize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub train_products: usize,
    pub dev_products: usize,
    pub test_products: usize,
    pub reviews_per_product: usize,
    /// Number of filler words.
    pub vocab_size: usize,
    /// Size of the shared attribute-word pool.
    pub attribute_pool: usize,
    pub attributes_per_product: usize,
    pub feature_dim: usize,
    pub product_regions: usize,
    pub max_review_regions: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a review mixes a name mention with a pronoun in one
    /// merged cluster (not recoverable by the heuristic resolver).
    pub mixed_mention_rate: f64,
    /// Probability that a review mentions its product only through pronouns.
    pub pronoun_only_rate: f64,
    /// Relative frequency of each gold score.
    pub score_weights: [f64; 5],
    /// Attribute-word rate in product-mention sentences, per gold score.
    pub hot_attribute_rate: [f64; 5],
    /// Upper bound of the (uniform) attribute-word rate in other sentences.
    pub cold_attribute_rate: f64,
    pub visual_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            train_products: 200,
            dev_products: 40,
            test_products: 40,
            reviews_per_product: 10,
            vocab_size: 150,
            attribute_pool: 96,
            attributes_per_product: 6,
            feature_dim: 32,
            product_regions: 3,
            max_review_regions: 3,
            min_sentences: 3,
            max_sentences: 5,
            mixed_mention_rate: 0.15,
            pronoun_only_rate: 0.25,
            score_weights: [0.3, 0.2, 0.2, 0.15, 0.15],
            hot_attribute_rate: [0.0, 0.35, 0.55, 0.75, 0.9],
            cold_attribute_rate: 0.8,
            visual_noise: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("generator config: {m}")));
        if self.reviews_per_product < 2 {
            return bad("reviews_per_product must be at least 2");
        }
        if self.vocab_size == 0 || self.feature_dim == 0 || self.product_regions == 0 || self.max_review_regions == 0 {
            return bad("vocab_size, feature_dim and region counts must be positive");
        }
        if self.attributes_per_product == 0 || self.attributes_per_product > self.attribute_pool {
            return bad("attributes_per_product must be in 1..=attribute_pool");
        }
        if self.min_sentences < 2 || self.max_sentences < self.min_sentences {
            return bad("need 2 <= min_sentences <= max_sentences");
        }
        if self.score_weights.iter().any(|&w| w < 0.0) || self.score_weights.iter().filter(|&&w| w > 0.0).count() < 2 {
            return bad("score_weights need at least two positive entries");
        }
        Ok(())
    }
}

/// A generated split plus the generator's own bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub split: DatasetSplit,
    /// Ground-truth probe mask (one 0/1 per token) for every review.
    pub masks: BTreeMap<String, Vec<u8>>,
    /// Reviews whose mentions the heuristic resolver can recover exactly.
    pub clean: BTreeSet<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MentionForm {
    Name,
    Pronoun,
    Mixed,
}

struct World {
    fillers: Vec<String>,
    attributes: Vec<String>,
    attribute_dirs: Vec<Vec<f64>>,
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalized(v)
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn noisy_rows(center: &[f64], count: usize, noise: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let d = center.len();
    let mut data = Vec::with_capacity(count * d);
    for _ in 0..count {
        for &c in center {
            let e: f64 = StandardNormal.sample(rng);
            // Stored as f32 on disk; round now so in-memory and loaded copies agree.
            data.push((c + noise * e) as f32 as f64);
        }
    }
    Matrix::new(count, d, data).expect("finite features")
}

fn sample_score(weights: &[f64; 5], rng: &mut ChaCha8Rng) -> u8 {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (s, &w) in weights.iter().enumerate() {
        if x < w {
            return s as u8;
        }
        x -= w;
    }
    4
}

fn votes_for(score: u8, rng: &mut ChaCha8Rng) -> u64 {
    match score {
        0 => rng.gen_range(0..=1),
        4 => rng.gen_range(16..=64),
        s => rng.gen_range(1u64 << s..(1u64 << (s + 1))),
    }
}

struct ProductPlan {
    record: ProductRecord,
    noun: &'static str,
    brand: &'static str,
    attributes: Vec<usize>,
    center: Vec<f64>,
}

fn make_product(id: String, cfg: &GeneratorConfig, world: &World, rng: &mut ChaCha8Rng) -> ProductPlan {
    let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
    let brand = BRANDS[rng.gen_range(0..BRANDS.len())];
    let mut pool: Vec<usize> = (0..world.attributes.len()).collect();
    pool.shuffle(rng);
    let attributes: Vec<usize> = pool[..cfg.attributes_per_product].to_vec();

    let qty = rng.gen_range(2..=60);
    let name = vec![
        brand.to_string(),
        format!("{}{}", capitalize(noun), "s"),
        ",".into(),
        world.attributes[attributes[0]].clone(),
        world.attributes[attributes[1 % attributes.len()]].clone(),
        format!("{qty}/pkg"),
    ];
    let n_sent = rng.gen_range(2..=3);
    let sentences = (0..n_sent)
        .map(|_| {
            let len = rng.gen_range(6..=9);
            let mut s: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.6) {
                        world.attributes[*attributes.choose(rng).expect("non-empty")].clone()
                    } else {
                        world.fillers[rng.gen_range(0..world.fillers.len())].clone()
                    }
                })
                .collect();
            s.push(".".into());
            s
        })
        .collect();

    let mut center = vec![0.0; cfg.feature_dim];
    for &a in &attributes {
        for (c, v) in center.iter_mut().zip(&world.attribute_dirs[a]) {
            *c += v;
        }
    }
    let center = normalized(center);
    let visual_features = noisy_rows(&center, cfg.product_regions, cfg.visual_noise, rng);
    ProductPlan {
        record: ProductRecord {
            features_path: Some(format!("features/{id}.sfv")),
            product_id: id,
            name,
            sentences,
            visual_features,
        },
        noun,
        brand,
        attributes,
        center,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

struct ReviewPlan {
    record: ReviewRecord,
    annotation: AnnotationRecord,
    mask: Vec<u8>,
    clean: bool,
}

fn make_review(
    id: String,
    score: u8,
    product: &ProductPlan,
    other_attrs: &[usize],
    cfg: &GeneratorConfig,
    world: &World,
    rng: &mut ChaCha8Rng,
) -> ReviewPlan {
    let form = {
        let x: f64 = rng.gen();
        if x < cfg.mixed_mention_rate {
            MentionForm::Mixed
        } else if x < cfg.mixed_mention_rate + cfg.pronoun_only_rate {
            MentionForm::Pronoun
        } else {
            MentionForm::Name
        }
    };
    let pronouns = if rng.gen_bool(0.5) { SINGULAR_PRONOUNS } else { PLURAL_PRONOUNS };
    let n_sent = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
    let n_hot = if form == MentionForm::Mixed { 2 } else { rng.gen_range(1..=2) };
    let mut order: Vec<usize> = (0..n_sent).collect();
    order.shuffle(rng);
    let mut hot: Vec<usize> = order[..n_hot].to_vec();
    hot.sort_unstable();

    let hot_rate = cfg.hot_attribute_rate[score as usize];
    let filler = |rng: &mut ChaCha8Rng| world.fillers[rng.gen_range(0..world.fillers.len())].clone();

    let mut sentences = Vec::with_capacity(n_sent);
    let mut spans = Vec::new();
    for si in 0..n_sent {
        let mut s: Vec<String> = Vec::new();
        if let Some(k) = hot.iter().position(|&h| h == si) {
            s.push(filler(rng));
            let use_name = match form {
                MentionForm::Name => true,
                MentionForm::Pronoun => false,
                MentionForm::Mixed => k == 0,
            };
            let mention = if use_name {
                if rng.gen_bool(0.5) {
                    product.noun.to_string()
                } else {
                    format!("{}s", product.noun)
                }
            } else {
                pronouns[rng.gen_range(0..pronouns.len())].to_string()
            };
            spans.push(Span(si, s.len(), s.len() + 1));
            s.push(mention);
            let len = rng.gen_range(6..=9);
            for _ in 0..len {
                if rng.gen_bool(hot_rate) {
                    s.push(world.attributes[*product.attributes.choose(rng).expect("non-empty")].clone());
                } else {
                    s.push(filler(rng));
                }
            }
        } else {
            let rate = rng.gen_range(0.0..=cfg.cold_attribute_rate);
            let len = rng.gen_range(6..=10);
            for _ in 0..len {
                if rng.gen_bool(rate) {
                    s.push(world.attributes[*other_attrs.choose(rng).expect("non-empty")].clone());
                } else {
                    s.push(filler(rng));
                }
            }
        }
        s.push(".".into());
        sentences.push(s);
    }

    let mut mask = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        let v = u8::from(hot.contains(&si));
        mask.extend(std::iter::repeat(v).take(s.len()));
    }

    let mix = (score as f64 / 4.0).clamp(0.0, 1.0);
    let off_topic = unit_gaussian(cfg.feature_dim, rng);
    let center: Vec<f64> = product
        .center
        .iter()
        .zip(&off_topic)
        .map(|(p, o)| mix * p + (1.0 - mix) * o)
        .collect();
    let regions = rng.gen_range(1..=cfg.max_review_regions);
    let visual_features = noisy_rows(&normalized(center), regions, cfg.visual_noise, rng);

    let votes = votes_for(score, rng);
    debug_assert_eq!(label_from_votes(votes as i64).ok(), Some(score));
    let core_words = vec![product.brand.to_lowercase(), product.noun.to_string()];
    ReviewPlan {
        record: ReviewRecord {
            features_path: Some(format!("features/{id}.sfv")),
            review_id: id.clone(),
            product_id: product.record.product_id.clone(),
            sentences,
            visual_features,
            votes,
            helpfulness: score,
        },
        annotation: AnnotationRecord {
            review_id: id,
            core_words,
            clusters: vec![spans],
        },
        mask,
        clean: form != MentionForm::Mixed,
    }
}

fn make_partition(
    prefix: &str,
    count: usize,
    cfg: &GeneratorConfig,
    world: &World,
    rng: &mut ChaCha8Rng,
    out: &mut SynthCorpus,
) -> Dataset {
    let plans: Vec<ProductPlan> = (0..count)
        .map(|i| make_product(format!("{prefix}-p{i:04}"), cfg, world, rng))
        .collect();
    let mut dataset = Dataset::default();
    for (pi, plan) in plans.iter().enumerate() {
        let own: BTreeSet<usize> = plan.attributes.iter().copied().collect();
        let other_attrs: Vec<usize> = (0..world.attributes.len()).filter(|a| !own.contains(a)).collect();
        let scores = loop {
            let s: Vec<u8> = (0..cfg.reviews_per_product)
                .map(|_| sample_score(&cfg.score_weights, rng))
                .collect();
            if s.iter().collect::<BTreeSet<_>>().len() >= 2 {
                break s;
            }
        };
        for (ri, &score) in scores.iter().enumerate() {
            let id = format!("{prefix}-p{pi:04}-r{ri:02}");
            let r = make_review(id, score, plan, &other_attrs, cfg, world, rng);
            out.masks.insert(r.record.review_id.clone(), r.mask);
            if r.clean {
                out.clean.insert(r.record.review_id.clone());
            }
            dataset.annotations.insert(r.annotation.review_id.clone(), r.annotation);
            dataset.reviews.push(r.record);
        }
    }
    dataset.products = plans.into_iter().map(|p| p.record).collect();
    dataset
}

/// Generates train/dev/test partitions. Identical `(config, seed)` pairs give
/// identical corpora.
pub fn synthesize(cfg: &GeneratorConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = World {
        fillers: (0..cfg.vocab_size).map(|i| format!("w{i:03}")).collect(),
        attributes: (0..cfg.attribute_pool).map(|i| format!("attr{i:03}")).collect(),
        attribute_dirs: (0..cfg.attribute_pool)
            .map(|_| unit_gaussian(cfg.feature_dim, &mut rng))
            .collect(),
    };
    let mut out = SynthCorpus {
        split: DatasetSplit::default(),
        masks: BTreeMap::new(),
        clean: BTreeSet::new(),
    };
    out.split.train = make_partition("train", cfg.train_products, cfg, &world, &mut rng, &mut out);
    out.split.dev = make_partition("dev", cfg.dev_products, cfg, &world, &mut rng, &mut out);
    out.split.test = make_partition("test", cfg.test_products, cfg, &world, &mut rng, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Mode;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            train_products: 12,
            dev_products: 3,
            test_products: 3,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synthesize(&small(), 7).unwrap();
        let b = synthesize(&small(), 7).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&small(), 8).unwrap();
        assert_ne!(a.split.train.reviews, c.split.train.reviews);
    }

    #[test]
    fn degenerate_config_rejected() {
        let cfg = GeneratorConfig {
            reviews_per_product: 1,
            ..small()
        };
        assert!(synthesize(&cfg, 1).is_err());
    }

    #[test]
    fn output_satisfies_dataset_invariants() {
        for seed in 0..5 {
            let c = synthesize(&small(), seed).unwrap();
            for (_, part) in c.split.partitions() {
                part.validate(Mode::Multimodal).unwrap();
                assert_eq!(part.rankable_groups().len(), part.products.len());
            }
            let train = &c.split.train;
            assert_eq!(train.reviews.len(), 12 * 10);
            for r in &train.reviews {
                assert_eq!(c.masks[&r.review_id].len(), r.token_count());
                assert!(c.masks[&r.review_id].contains(&1));
            }
        }
    }

    #[test]
    fn default_histogram_spans_all_scores() {
        let c = synthesize(&GeneratorConfig::default(), 7).unwrap();
        let mut hist = [0usize; 5];
        for r in &c.split.train.reviews {
            hist[r.helpfulness as usize] += 1;
        }
        assert!(hist.iter().all(|&n| n > 0), "{hist:?}");
        assert_eq!(hist.iter().sum::<usize>(), 2000);
    }
}
