//! The helpfulness model: encoders, selective attention, projection heads
//! and the linear scoring layer, plus the ranking and total losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{masked_pool_var, mask_column, visual_pipeline, CrossAttention, SelfAttention};
use crate::config::ModelConfig;
use crate::contrastive::{
    build_pair_sets, cpc_inner_instance, cpc_product_review_modality, log_score_var, CpcLosses, InstanceRef,
    PairSets, ProjectionHeads, SetSizes,
};
use crate::corpus::{Dataset, Mode};
use crate::encoders::{encode_text, encode_visual, EmbeddingTable, Pretrained, VisualProjection, Vocab};
use crate::error::{Error, Result};
use crate::numeric::params::xavier_uniform;
use crate::numeric::{Graph, Gru, Matrix, ParamId, ParamStore, Var};
use crate::probe::{probe_mask_for, BetaGenerator, GoldCase, ProbeMask};

/// A review with its tokens flattened and its probe mask resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedReview {
    pub review_id: String,
    pub tokens: Vec<String>,
    pub mask: ProbeMask,
    pub gold_case: GoldCase,
    pub visual: Matrix,
    pub score: u8,
}

/// A product with all of its reviews, ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedGroup {
    pub product_id: String,
    pub tokens: Vec<String>,
    pub visual: Matrix,
    pub reviews: Vec<PreparedReview>,
}

impl PreparedGroup {
    pub fn scores(&self) -> Vec<u8> {
        self.reviews.iter().map(|r| r.score).collect()
    }
}

/// Resolves probe masks and flattens text for every product that has at
/// least one review.
pub fn prepare(dataset: &Dataset) -> Result<Vec<PreparedGroup>> {
    let mut out = Vec::new();
    for group in dataset.groups() {
        if group.reviews.is_empty() {
            continue;
        }
        let product = &dataset.products[group.product];
        let mut reviews = Vec::with_capacity(group.reviews.len());
        for &ri in &group.reviews {
            let r = &dataset.reviews[ri];
            let (mask, gold_case) = probe_mask_for(r, product, dataset.annotations.get(&r.review_id))?;
            reviews.push(PreparedReview {
                review_id: r.review_id.clone(),
                tokens: r.tokens().cloned().collect(),
                mask,
                gold_case,
                visual: r.visual_features.clone(),
                score: r.helpfulness,
            });
        }
        out.push(PreparedGroup {
            product_id: product.product_id.clone(),
            tokens: product.sentences.iter().flatten().cloned().collect(),
            visual: product.visual_features.clone(),
            reviews,
        });
    }
    Ok(out)
}

/// Vocabulary over all review and product tokens of `dataset`.
pub fn vocab_for(dataset: &Dataset) -> Vocab {
    let product_tokens = dataset.products.iter().flat_map(|p| p.sentences.iter().flatten());
    let review_tokens = dataset.reviews.iter().flat_map(|r| r.tokens());
    Vocab::build(product_tokens.chain(review_tokens).map(String::as_str))
}

#[derive(Clone, Copy, Debug)]
pub struct VisualModules {
    pub projection: VisualProjection,
    pub review_attention: SelfAttention,
    pub product_attention: SelfAttention,
    pub cross: CrossAttention,
}

#[derive(Clone, Debug)]
pub struct HelpfulnessModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embedding: EmbeddingTable,
    pub gru: Gru,
    pub beta_gen: BetaGenerator,
    pub text_attention: SelfAttention,
    pub text_cross: CrossAttention,
    pub visual: Option<VisualModules>,
    pub heads: ProjectionHeads,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

/// Per-review intermediate nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ReviewNodes {
    pub score: Var,
    pub beta: Option<Var>,
    pub text_ii: Var,
    pub text_pr: Var,
    pub visual_ii: Option<Var>,
    pub visual_pr: Option<Var>,
    /// Product-side visual pooled against this review, projected to `pr`.
    pub visual_pr_product: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct GroupNodes {
    pub text_ii: Var,
    pub text_pr: Var,
    pub visual_ii: Option<Var>,
    pub reviews: Vec<ReviewNodes>,
}

/// Which terms enter the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub gamma: f64,
    pub kappa: f64,
    pub no_cpc_ii: bool,
    pub no_cpc_pr: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            kappa: 0.25,
            no_cpc_ii: false,
            no_cpc_pr: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub task: f64,
    pub cpc: CpcLosses,
    pub sizes: SetSizes,
    pub betas: Vec<f64>,
    /// Products whose reviews all share one gold score.
    pub uniform_products: usize,
}

impl HelpfulnessModel {
    pub fn new(config: ModelConfig, vocab: Vocab, pretrained: Option<&Pretrained>, fine_tune: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trainable = pretrained.is_none() || fine_tune;
        let embedding = EmbeddingTable::register(&mut store, vocab, config.embed_dim, pretrained, trainable, &mut rng)?;
        let gru = Gru::register(&mut store, "gru", config.embed_dim, config.hidden_dim, &mut rng)?;
        let beta_gen = BetaGenerator::register(&mut store, config.hidden_dim, config.beta_zero_init, &mut rng)?;
        let text_attention = SelfAttention::register(&mut store, "text.self", config.hidden_dim, config.plain_residual, &mut rng)?;
        let text_cross = CrossAttention::register(&mut store, "text.cross", config.hidden_dim, &mut rng)?;
        let visual = if config.multimodal() {
            Some(VisualModules {
                projection: VisualProjection::register(&mut store, config.visual_input_dim, config.visual_dim, &mut rng)?,
                review_attention: SelfAttention::register(
                    &mut store,
                    "visual.review",
                    config.visual_dim,
                    config.plain_residual,
                    &mut rng,
                )?,
                product_attention: SelfAttention::register(
                    &mut store,
                    "visual.product",
                    config.visual_dim,
                    config.plain_residual,
                    &mut rng,
                )?,
                cross: CrossAttention::register(&mut store, "visual.cross", config.visual_dim, &mut rng)?,
            })
        } else {
            None
        };
        let heads = ProjectionHeads::register(
            &mut store,
            config.hidden_dim,
            visual.map(|_| config.visual_dim),
            config.shared_dim,
            &mut rng,
        )?;
        let features = if config.multimodal() { 4 } else { 2 } * config.shared_dim;
        let w_o = store.register("output.weight", xavier_uniform(features, 1, &mut rng))?;
        let b_o = store.register("output.bias", Matrix::zeros(1, 1))?;
        store.quantize_f32();
        Ok(Self {
            config,
            store,
            embedding,
            gru,
            beta_gen,
            text_attention,
            text_cross,
            visual,
            heads,
            w_o,
            b_o,
        })
    }

    /// Non-embedding scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        self.store.non_embedding_count()
    }

    /// `ξ = W_o · F + b_o` over the review-side projections, in the order
    /// text/ii, text/pr, visual/ii, visual/pr.
    pub fn predict(&self, g: &mut Graph, features: &[Var]) -> Result<Var> {
        let expected = if self.config.multimodal() { 4 } else { 2 };
        if features.len() != expected {
            return Err(Error::Validation(format!(
                "prediction needs {expected} review representations, got {}",
                features.len()
            )));
        }
        let f = g.concat_cols(features)?;
        let w = g.param(self.w_o);
        let b = g.param(self.b_o);
        let xi = g.matmul(f, w)?;
        g.add(xi, b)
    }

    fn check_visual(&self, m: &Matrix, owner: &str) -> Result<()> {
        if m.rows() == 0 {
            return Err(Error::Validation(format!("{owner} has no image regions")));
        }
        if m.cols() != self.config.visual_input_dim {
            return Err(Error::Dimension {
                op: "visual features",
                left: m.shape(),
                right: (m.rows(), self.config.visual_input_dim),
            });
        }
        Ok(())
    }

    /// Builds the forward graph for one product and its reviews. `dropout`
    /// enables training-mode embedding dropout.
    pub fn forward_group(&self, g: &mut Graph, group: &PreparedGroup, mut dropout: Option<(f64, &mut ChaCha8Rng)>) -> Result<GroupNodes> {
        let cfg = &self.config;
        let mut embed = |g: &mut Graph, tokens: &[String]| match dropout.as_mut() {
            Some((p, rng)) => self.embedding.embed(g, tokens, Some((*p, &mut **rng))),
            None => self.embedding.embed::<_, ChaCha8Rng>(g, tokens, None),
        };

        let pe = embed(g, &group.tokens)?;
        let product_text = encode_text(g, &self.gru, pe)?;
        let hp = self.text_attention.attend(g, product_text.token_states, None)?;
        let s_tp = g.mean_rows(hp)?;
        let text_ii = self.heads.text_ii.project(g, s_tp)?;
        let text_pr = self.heads.text_pr.project(g, s_tp)?;

        let product_visual = match &self.visual {
            Some(v) => {
                self.check_visual(&group.visual, &group.product_id)?;
                let f = g.constant(group.visual.clone());
                Some(encode_visual(g, &v.projection, &v.product_attention, f)?)
            }
            None => None,
        };
        let visual_ii = match product_visual {
            Some(h) => {
                let s = g.mean_rows(h)?;
                Some(self.heads.visual_ii.expect("multimodal heads").project(g, s)?)
            }
            None => None,
        };

        let mut reviews = Vec::with_capacity(group.reviews.len());
        for r in &group.reviews {
            if r.mask.len() != r.tokens.len() {
                return Err(Error::Dimension {
                    op: "probe mask",
                    left: (1, r.mask.len()),
                    right: (1, r.tokens.len()),
                });
            }
            let re = embed(g, &r.tokens)?;
            let text = encode_text(g, &self.gru, re)?;
            let (mask, beta) = if cfg.no_probe_mask {
                let ones = ProbeMask::all_ones(r.mask.sentence_boundaries.clone());
                let b = g.constant(Matrix::scalar(0.0));
                (mask_column(g, &ones, 1.0, b)?, None)
            } else {
                let beta = match cfg.fixed_beta {
                    Some(b) => g.constant(Matrix::scalar(b)),
                    None => self.beta_gen.generate(g, text.sequence_state)?,
                };
                (mask_column(g, &r.mask, cfg.alpha, beta)?, Some(beta))
            };
            let h1 = self.text_attention.attend(g, text.token_states, Some(mask))?;
            let h2 = self.text_cross.attend(g, h1, hp)?;
            let s_tr = masked_pool_var(g, h2, mask)?;
            let r_text_ii = self.heads.text_ii.project(g, s_tr)?;
            let r_text_pr = self.heads.text_pr.project(g, s_tr)?;

            let (mut r_visual_ii, mut r_visual_pr, mut p_visual_pr) = (None, None, None);
            if let (Some(v), Some(hpv)) = (&self.visual, product_visual) {
                self.check_visual(&r.visual, &r.review_id)?;
                let f = g.constant(r.visual.clone());
                let hrv = encode_visual(g, &v.projection, &v.review_attention, f)?;
                let (s_vr, s_vp) = visual_pipeline(g, &v.cross, hrv, hpv)?;
                let ii = self.heads.visual_ii.expect("multimodal heads");
                let pr = self.heads.visual_pr.expect("multimodal heads");
                r_visual_ii = Some(ii.project(g, s_vr)?);
                r_visual_pr = Some(pr.project(g, s_vr)?);
                p_visual_pr = Some(pr.project(g, s_vp)?);
            }

            let mut features = vec![r_text_ii, r_text_pr];
            features.extend(r_visual_ii);
            features.extend(r_visual_pr);
            let score = self.predict(g, &features)?;
            reviews.push(ReviewNodes {
                score,
                beta,
                text_ii: r_text_ii,
                text_pr: r_text_pr,
                visual_ii: r_visual_ii,
                visual_pr: r_visual_pr,
                visual_pr_product: p_visual_pr,
            });
        }
        Ok(GroupNodes {
            text_ii,
            text_pr,
            visual_ii,
            reviews,
        })
    }

    /// Predicted scores for every review of `group` (inference mode).
    pub fn score_group(&self, group: &PreparedGroup) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let nodes = self.forward_group(&mut g, group, None)?;
        Ok(nodes.reviews.iter().map(|r| g.scalar(r.score)).collect())
    }

    /// Total loss of one mini-batch of products.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        groups: &[&PreparedGroup],
        settings: &LossSettings,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<BatchLoss> {
        let mut nodes = Vec::with_capacity(groups.len());
        for group in groups {
            let d = dropout.as_mut().map(|(p, rng)| (*p, &mut **rng));
            nodes.push(self.forward_group(g, group, d)?);
        }

        let mut task_parts = Vec::new();
        let mut uniform_products = 0;
        for (group, n) in groups.iter().zip(&nodes) {
            let scores: Vec<Var> = n.reviews.iter().map(|r| r.score).collect();
            match ranking_loss_var(g, &scores, &group.scores(), settings.gamma)? {
                Some(v) => task_parts.push(v),
                None => uniform_products += 1,
            }
        }
        let task = sum_vars(g, &task_parts)?;

        let gold: Vec<Vec<u8>> = groups.iter().map(|gr| gr.scores()).collect();
        let sets = build_pair_sets(&gold, self.config.thresholds());
        let (cpc, aux) = self.cpc_terms(g, &nodes, &sets, settings)?;
        let total = match aux {
            Some(a) if settings.kappa != 0.0 => {
                let weighted = g.scale(a, settings.kappa);
                g.add(task, weighted)?
            }
            _ => task,
        };
        let betas = nodes
            .iter()
            .flat_map(|n| n.reviews.iter().filter_map(|r| r.beta))
            .map(|b| g.scalar(b))
            .collect();
        Ok(BatchLoss {
            total,
            task: g.scalar(task),
            cpc,
            sizes: sets.sizes(),
            betas,
            uniform_products,
        })
    }

    fn cpc_terms(
        &self,
        g: &mut Graph,
        nodes: &[GroupNodes],
        sets: &PairSets,
        settings: &LossSettings,
    ) -> Result<(CpcLosses, Option<Var>)> {
        let tau = self.config.tau;
        let review = |x: InstanceRef| &nodes[x.product].reviews[x.review.expect("review instance")];
        let mut parts = Vec::new();
        let mut cpc = CpcLosses::default();

        if self.config.multimodal() {
            let (ii, _) = cpc_inner_instance(g, sets, |g, x| {
                let (t, v) = match x.review {
                    None => (nodes[x.product].text_ii, nodes[x.product].visual_ii),
                    Some(_) => (review(x).text_ii, review(x).visual_ii),
                };
                log_score_var(g, t, v.expect("visual node"), tau)
            })?;
            cpc.cpc_ii = ii.scalar(g);
            if !settings.no_cpc_ii {
                parts.extend(ii.value);
            }
        }

        let (pr_t, _) = cpc_product_review_modality(g, sets, |g, x| {
            log_score_var(g, review(x).text_pr, nodes[x.product].text_pr, tau)
        })?;
        cpc.cpc_pr_t = pr_t.scalar(g);
        let mut pr_parts: Vec<Var> = pr_t.value.into_iter().collect();
        if self.config.multimodal() {
            let (pr_v, _) = cpc_product_review_modality(g, sets, |g, x| {
                let r = review(x);
                log_score_var(
                    g,
                    r.visual_pr.expect("visual node"),
                    r.visual_pr_product.expect("visual node"),
                    tau,
                )
            })?;
            cpc.cpc_pr_v = pr_v.scalar(g);
            pr_parts.extend(pr_v.value);
        }
        cpc.cpc_pr = cpc.cpc_pr_t + cpc.cpc_pr_v;
        if !settings.no_cpc_pr {
            parts.extend(pr_parts);
        }
        let aux = if parts.is_empty() { None } else { Some(sum_vars(g, &parts)?) };
        Ok((cpc, aux))
    }
}

fn sum_vars(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    match parts.len() {
        0 => Ok(g.constant(Matrix::scalar(0.0))),
        1 => Ok(parts[0]),
        _ => {
            let c = g.concat_cols(parts)?;
            Ok(g.sum(c))
        }
    }
}

/// Ordered pairs `(i, j)` with `gold[i] > gold[j]`.
pub fn ranking_pairs(gold: &[u8]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, &a) in gold.iter().enumerate() {
        for (j, &b) in gold.iter().enumerate() {
            if a > b {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// `Σ max(0, γ − ξ_i + ξ_j)` over [`ranking_pairs`].
pub fn ranking_loss(scores: &[f64], gold: &[u8], gamma: f64) -> f64 {
    ranking_pairs(gold)
        .into_iter()
        .map(|(i, j)| (gamma - scores[i] + scores[j]).max(0.0))
        .sum()
}

/// Graph form of [`ranking_loss`]; `None` when the product has no pair.
pub fn ranking_loss_var(g: &mut Graph, scores: &[Var], gold: &[u8], gamma: f64) -> Result<Option<Var>> {
    if scores.len() != gold.len() {
        return Err(Error::Dimension {
            op: "ranking_loss",
            left: (scores.len(), 1),
            right: (gold.len(), 1),
        });
    }
    let pairs = ranking_pairs(gold);
    if pairs.is_empty() {
        return Ok(None);
    }
    let n = scores.len();
    let mut d = Matrix::zeros(pairs.len(), n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        d.set(k, i, -1.0);
        d.set(k, j, 1.0);
    }
    let xi = g.concat_rows(scores)?;
    let dv = g.constant(d);
    let diff = g.matmul(dv, xi)?;
    let margin = g.constant(Matrix::filled(pairs.len(), 1, gamma));
    let pre = g.add(margin, diff)?;
    let hinge = g.relu(pre);
    Ok(Some(g.sum(hinge)))
}

/// `task + κ (cpc_ii + cpc_pr)` with ablated terms removed.
pub fn total_loss(task: f64, cpc: &CpcLosses, settings: &LossSettings) -> f64 {
    let ii = if settings.no_cpc_ii { 0.0 } else { cpc.cpc_ii };
    let pr = if settings.no_cpc_pr { 0.0 } else { cpc.cpc_pr };
    task + settings.kappa * (ii + pr)
}

/// Analytic non-embedding parameter count for a configuration.
pub fn expected_parameter_count(c: &ModelConfig) -> usize {
    let (h, s, v) = (c.hidden_dim, c.shared_dim, c.visual_dim);
    let value = if c.plain_residual { 0 } else { 1 };
    let gru = c.embed_dim * 3 * h + h * 2 * h + h * h + 3 * h;
    let beta = h + 1;
    let text = (1 + value) * h * h + 2 * h * h;
    let head = |d: usize| d * s + s + s * s + s;
    let mut total = gru + beta + text + 2 * head(h);
    let mut features = 2 * s;
    if c.mode == Mode::Multimodal {
        total += c.visual_input_dim * v + v;
        total += 2 * (1 + value) * v * v + 2 * v * v;
        total += 2 * head(v);
        features += 2 * s;
    }
    total + features + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize, GeneratorConfig};
    use crate::numeric::{grad_check, GradCheckOptions};

    fn tiny_config(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            embed_dim: 4,
            hidden_dim: 3,
            visual_input_dim: 5,
            visual_dim: 3,
            shared_dim: 2,
            beta_zero_init: false,
            ..ModelConfig::default()
        }
    }

    fn tiny_groups(feature_dim: usize) -> (Vocab, Vec<PreparedGroup>) {
        let cfg = GeneratorConfig {
            train_products: 2,
            dev_products: 0,
            test_products: 0,
            reviews_per_product: 3,
            feature_dim,
            min_sentences: 2,
            max_sentences: 2,
            ..GeneratorConfig::default()
        };
        let corpus = synthesize(&cfg, 11).unwrap();
        let ds = corpus.split.train;
        (vocab_for(&ds), prepare(&ds).unwrap())
    }

    #[test]
    fn parameter_count_matches_analytic_formula() {
        for mode in [Mode::Multimodal, Mode::TextOnly] {
            for plain in [false, true] {
                let c = ModelConfig {
                    plain_residual: plain,
                    ..tiny_config(mode)
                };
                let m = HelpfulnessModel::new(c.clone(), Vocab::default(), None, true, 0).unwrap();
                assert_eq!(m.parameter_count(), expected_parameter_count(&c));
            }
        }
        let full = ModelConfig::default();
        let n = expected_parameter_count(&full);
        assert!((500_000..=2_000_000).contains(&n), "{n}");
    }

    #[test]
    fn doubling_widths_roughly_quadruples_count() {
        let count = |d: usize| {
            let c = ModelConfig {
                embed_dim: d,
                hidden_dim: d,
                visual_input_dim: d,
                visual_dim: d,
                shared_dim: d,
                ..ModelConfig::default()
            };
            HelpfulnessModel::new(c, Vocab::default(), None, true, 0).unwrap().parameter_count() as f64
        };
        let ratio = count(128) / count(64);
        assert!((3.9..4.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn zero_output_weight_gives_bias_for_every_review() {
        let (vocab, groups) = tiny_groups(5);
        let mut m = HelpfulnessModel::new(tiny_config(Mode::Multimodal), vocab, None, true, 1).unwrap();
        m.store.get_mut(m.w_o).value = Matrix::zeros(8, 1);
        m.store.get_mut(m.b_o).value = Matrix::scalar(0.75);
        assert!(m.score_group(&groups[0]).unwrap().iter().all(|&x| x == 0.75));
    }

    #[test]
    fn review_scores_do_not_depend_on_sibling_order() {
        let (vocab, groups) = tiny_groups(5);
        let m = HelpfulnessModel::new(tiny_config(Mode::Multimodal), vocab, None, true, 2).unwrap();
        let a = m.score_group(&groups[0]).unwrap();
        let mut rev = groups[0].clone();
        rev.reviews.reverse();
        let mut b = m.score_group(&rev).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn ranking_loss_examples() {
        assert_eq!(ranking_loss(&[2.0, 0.5], &[4, 0], 1.0), 0.0);
        assert_eq!(ranking_loss(&[1.0, 1.0], &[4, 0], 1.0), 1.0);
        assert_eq!(ranking_loss(&[1.0, 1.0], &[2, 2], 1.0), 0.0);
        let shifted = ranking_loss(&[1.25, -0.25, 0.5], &[1, 3, 0], 1.0);
        assert_eq!(shifted, ranking_loss(&[9.25, 7.75, 8.5], &[1, 3, 0], 1.0));
    }

    #[test]
    fn total_loss_flags() {
        let cpc = CpcLosses {
            cpc_ii: 0.4,
            cpc_pr_t: 0.1,
            cpc_pr_v: 0.2,
            cpc_pr: 0.30000000000000004,
        };
        let base = LossSettings::default();
        assert_eq!(total_loss(2.0, &cpc, &LossSettings { kappa: 0.0, ..base }), 2.0);
        let off = LossSettings {
            no_cpc_ii: true,
            no_cpc_pr: true,
            ..base
        };
        assert_eq!(total_loss(2.0, &cpc, &off), 2.0);
        assert!((total_loss(2.0, &cpc, &base) - (2.0 + 0.25 * 0.7)).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_pieces_add_up() {
        let (vocab, groups) = tiny_groups(5);
        let m = HelpfulnessModel::new(tiny_config(Mode::Multimodal), vocab, None, true, 3).unwrap();
        let refs: Vec<&PreparedGroup> = groups.iter().collect();
        let settings = LossSettings::default();
        let mut g = Graph::new(&m.store);
        let out = m.batch_loss(&mut g, &refs, &settings, None).unwrap();
        let expected = total_loss(out.task, &out.cpc, &settings);
        assert!((g.scalar(out.total) - expected).abs() < 1e-12);
        assert_eq!(out.cpc.cpc_pr, out.cpc.cpc_pr_t + out.cpc.cpc_pr_v);
        assert!(out.betas.iter().all(|&b| b > 0.0 && b < 1.0));
        let scores: Vec<f64> = groups
            .iter()
            .flat_map(|gr| m.score_group(gr).unwrap())
            .collect();
        let task: f64 = groups
            .iter()
            .scan(0, |off, gr| {
                let n = gr.reviews.len();
                let s = &scores[*off..*off + n];
                *off += n;
                Some(ranking_loss(s, &gr.scores(), 1.0))
            })
            .sum();
        assert!((out.task - task).abs() < 1e-12);
    }

    #[test]
    fn full_model_gradient_check() {
        for mode in [Mode::Multimodal, Mode::TextOnly] {
            let (vocab, groups) = tiny_groups(5);
            let mut m = HelpfulnessModel::new(tiny_config(mode), vocab, None, true, 4).unwrap();
            let refs: Vec<&PreparedGroup> = groups.iter().collect();
            let settings = LossSettings {
                gamma: 5.0,
                ..LossSettings::default()
            };
            let (store, model) = {
                let store = std::mem::take(&mut m.store);
                (store, m)
            };
            let mut store = store;
            let opts = GradCheckOptions {
                max_coords_per_param: Some(6),
                ..GradCheckOptions::default()
            };
            let report = grad_check(&mut store, &opts, |g| Ok(model.batch_loss(g, &refs, &settings, None)?.total)).unwrap();
            assert!(report.max_relative_error < 1e-5, "{mode:?} {report:?}");
        }
    }
}
