//! Projection heads and the inner-instance / product-review contrastive losses.
//!
//! Every pair is scored with `φ(a, b) = exp(cos(a, b) / τ)`. A loss over a
//! universe `U` with positives `P ⊆ U` is
//! `-Σ_{j∈P} log(φ_j / Σ_{k∈U} φ_k)`, evaluated as
//! `|P| · ln Σ_k φ_k − Σ_j cos_j / τ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::matrix::dot;
use crate::numeric::params::xavier_uniform;
use crate::numeric::{l2_normalize, Graph, Matrix, ParamId, ParamStore, Var};

/// `W2 · tanh(W1 · s + b1) + b2`.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ProjectionHead {
    pub fn register(store: &mut ParamStore, prefix: &str, input_dim: usize, shared_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            w1: store.register(format!("{prefix}.w1"), xavier_uniform(input_dim, shared_dim, rng))?,
            b1: store.register(format!("{prefix}.b1"), Matrix::zeros(1, shared_dim))?,
            w2: store.register(format!("{prefix}.w2"), xavier_uniform(shared_dim, shared_dim, rng))?,
            b2: store.register(format!("{prefix}.b2"), Matrix::zeros(1, shared_dim))?,
        })
    }

    pub fn project(&self, g: &mut Graph, s: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let x = g.matmul(s, w1)?;
        let x = g.add_row(x, b1)?;
        let x = g.tanh(x);
        let x = g.matmul(x, w2)?;
        g.add_row(x, b2)
    }
}

/// The four heads: one per (modality, domain), shared by both fields.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionHeads {
    pub text_ii: ProjectionHead,
    pub text_pr: ProjectionHead,
    pub visual_ii: Option<ProjectionHead>,
    pub visual_pr: Option<ProjectionHead>,
}

impl ProjectionHeads {
    pub fn register(
        store: &mut ParamStore,
        text_dim: usize,
        visual_dim: Option<usize>,
        shared_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let text_ii = ProjectionHead::register(store, "proj.text.ii", text_dim, shared_dim, rng)?;
        let text_pr = ProjectionHead::register(store, "proj.text.pr", text_dim, shared_dim, rng)?;
        let (visual_ii, visual_pr) = match visual_dim {
            Some(d) => (
                Some(ProjectionHead::register(store, "proj.visual.ii", d, shared_dim, rng)?),
                Some(ProjectionHead::register(store, "proj.visual.pr", d, shared_dim, rng)?),
            ),
            None => (None, None),
        };
        Ok(Self {
            text_ii,
            text_pr,
            visual_ii,
            visual_pr,
        })
    }
}

/// `exp(cos(a, b) / τ)` on plain vectors.
pub fn score(a: &[f64], b: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "score",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    Ok((dot(&l2_normalize(a)?, &l2_normalize(b)?) / tau).exp())
}

/// `cos(a, b) / τ` for `1 x d` rows, i.e. `ln φ(a, b)`.
pub fn log_score_var(g: &mut Graph, a: Var, b: Var, tau: f64) -> Result<Var> {
    let na = g.l2_normalize_rows(a)?;
    let nb = g.l2_normalize_rows(b)?;
    let prod = g.mul(na, nb)?;
    let cos = g.sum(prod);
    Ok(g.scale(cos, 1.0 / tau))
}

/// Identifies a product description (`review: None`) or one of its reviews
/// inside a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub product: usize,
    pub review: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Scores at or above this are positives.
    pub high: u8,
    /// Scores at or below this are negatives.
    pub low: u8,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { high: 3, low: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairSets {
    pub ii_positive: Vec<InstanceRef>,
    pub ii_negative: Vec<InstanceRef>,
    pub ii_product: Vec<InstanceRef>,
    pub pr_positive: Vec<InstanceRef>,
    pub pr_negative: Vec<InstanceRef>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSizes {
    pub ii_positive: usize,
    pub ii_negative: usize,
    pub ii_product: usize,
    pub pr_positive: usize,
    pub pr_negative: usize,
}

impl PairSets {
    pub fn sizes(&self) -> SetSizes {
        SetSizes {
            ii_positive: self.ii_positive.len(),
            ii_negative: self.ii_negative.len(),
            ii_product: self.ii_product.len(),
            pr_positive: self.pr_positive.len(),
            pr_negative: self.pr_negative.len(),
        }
    }
}

/// Splits a batch into pair sets. `scores[p][r]` is the gold score of review
/// `r` of product `p`.
pub fn build_pair_sets(scores: &[Vec<u8>], th: Thresholds) -> PairSets {
    let mut sets = PairSets::default();
    for (p, reviews) in scores.iter().enumerate() {
        sets.ii_product.push(InstanceRef { product: p, review: None });
        for (r, &s) in reviews.iter().enumerate() {
            let at = InstanceRef {
                product: p,
                review: Some(r),
            };
            if s >= th.high {
                sets.ii_positive.push(at);
                sets.pr_positive.push(at);
            } else if s <= th.low {
                sets.ii_negative.push(at);
                sets.pr_negative.push(at);
            }
        }
    }
    sets
}

/// `|P| · ln Σ_U exp(x) − Σ_P x` over log-scores, or `None` for an empty
/// positive set.
fn nce(g: &mut Graph, positives: &[Var], others: &[Var]) -> Result<Option<Var>> {
    if positives.is_empty() {
        return Ok(None);
    }
    let all: Vec<Var> = positives.iter().chain(others).copied().collect();
    let logits = g.concat_cols(&all)?;
    let e = g.exp(logits);
    let total = g.sum(e);
    let log_total = g.ln(total)?;
    let n = g.scale(log_total, positives.len() as f64);
    let pos = g.concat_cols(positives)?;
    let pos_sum = g.sum(pos);
    Ok(Some(g.sub(n, pos_sum)?))
}

/// `φ_j / Σ_U φ_k` for each element of the universe `positives ++ others`.
fn probabilities(g: &Graph, positives: &[Var], others: &[Var]) -> Vec<f64> {
    let logits: Vec<f64> = positives.iter().chain(others).map(|&v| g.scalar(v)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One scalar loss with a flag recording whether any positive existed.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm {
    pub value: Option<Var>,
}

impl LossTerm {
    pub fn scalar(&self, g: &Graph) -> f64 {
        self.value.map_or(0.0, |v| g.scalar(v))
    }
}

/// Inner-instance loss. `log_score(x)` must return `ln φ(text_x, image_x)`.
pub fn cpc_inner_instance<F>(g: &mut Graph, sets: &PairSets, mut log_score: F) -> Result<(LossTerm, Vec<(InstanceRef, f64)>)>
where
    F: FnMut(&mut Graph, InstanceRef) -> Result<Var>,
{
    let members: Vec<InstanceRef> = sets.ii_product.iter().chain(&sets.ii_positive).copied().collect();
    let pos = members.iter().map(|&x| log_score(g, x)).collect::<Result<Vec<_>>>()?;
    let neg = sets.ii_negative.iter().map(|&x| log_score(g, x)).collect::<Result<Vec<_>>>()?;
    let value = nce(g, &pos, &neg)?;
    let probs = probabilities(g, &pos, &neg);
    let diag = members.into_iter().chain(sets.ii_negative.iter().copied()).zip(probs).collect();
    Ok((LossTerm { value }, diag))
}

/// Product-review loss for one modality; denominators range over the
/// reviews of the same product. `log_score(x)` must return
/// `ln φ(review_x, product_x)`.
pub fn cpc_product_review_modality<F>(
    g: &mut Graph,
    sets: &PairSets,
    mut log_score: F,
) -> Result<(LossTerm, Vec<(InstanceRef, f64)>)>
where
    F: FnMut(&mut Graph, InstanceRef) -> Result<Var>,
{
    let mut products: Vec<usize> = sets.pr_positive.iter().map(|x| x.product).collect();
    products.dedup();
    let mut parts = Vec::new();
    let mut diag = Vec::new();
    for p in products {
        let pos_refs: Vec<InstanceRef> = sets.pr_positive.iter().filter(|x| x.product == p).copied().collect();
        let neg_refs: Vec<InstanceRef> = sets.pr_negative.iter().filter(|x| x.product == p).copied().collect();
        let pos = pos_refs.iter().map(|&x| log_score(g, x)).collect::<Result<Vec<_>>>()?;
        let neg = neg_refs.iter().map(|&x| log_score(g, x)).collect::<Result<Vec<_>>>()?;
        if let Some(v) = nce(g, &pos, &neg)? {
            parts.push(v);
        }
        let probs = probabilities(g, &pos, &neg);
        diag.extend(pos_refs.into_iter().chain(neg_refs).zip(probs));
    }
    let value = match parts.len() {
        0 => None,
        1 => Some(parts[0]),
        _ => {
            let c = g.concat_cols(&parts)?;
            Some(g.sum(c))
        }
    };
    Ok((LossTerm { value }, diag))
}

/// Scalar values of the contrastive terms for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CpcLosses {
    pub cpc_ii: f64,
    pub cpc_pr_t: f64,
    pub cpc_pr_v: f64,
    pub cpc_pr: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::params::uniform;
    use crate::numeric::{grad_check, matmul, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn score_examples() {
        let a = [1.0, 2.0, -0.5];
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((score(&a, &a, 1.0).unwrap() - std::f64::consts::E).abs() < 1e-15);
        assert!((score(&a, &neg, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let b = [0.3, -1.0, 2.0];
        let a2: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        assert_eq!(score(&a2, &b, 1.0).unwrap(), score(&a, &b, 1.0).unwrap());
        assert_eq!(score(&a, &b, 0.5).unwrap(), score(&b, &a, 0.5).unwrap());
        assert!(matches!(score(&[0.0, 0.0, 0.0], &b, 1.0), Err(Error::Degenerate(_))));
        assert!(score(&a, &b, 0.0).is_err());
    }

    #[test]
    fn projection_zero_weights_and_oracle() {
        let mut store = ParamStore::new();
        let head = ProjectionHead::register(&mut store, "h", 4, 3, &mut rng(0)).unwrap();
        let s = uniform(1, 4, 1.0, &mut rng(1));
        let mut g = Graph::new(&store);
        let sv = g.constant(s.clone());
        let out = head.project(&mut g, sv).unwrap();
        let hidden = matmul(&s, store.value(head.w1)).unwrap().map(f64::tanh);
        let oracle = matmul(&hidden, store.value(head.w2)).unwrap();
        for (x, y) in g.value(out).data().iter().zip(oracle.data()) {
            assert!((x - y).abs() < 1e-14);
        }

        for id in [head.w1, head.b1, head.w2, head.b2] {
            let (r, c) = store.value(id).shape();
            store.get_mut(id).value = Matrix::zeros(r, c);
        }
        let mut g = Graph::new(&store);
        let sv = g.constant(s);
        let out = head.project(&mut g, sv).unwrap();
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pair_sets_follow_thresholds() {
        let sets = build_pair_sets(&[vec![4, 0]], Thresholds::default());
        assert_eq!(
            sets.sizes(),
            SetSizes {
                ii_positive: 1,
                ii_negative: 1,
                ii_product: 1,
                pr_positive: 1,
                pr_negative: 1
            }
        );
        let sets = build_pair_sets(&[vec![2, 2], vec![2]], Thresholds::default());
        assert!(sets.ii_positive.is_empty() && sets.pr_negative.is_empty());
        assert_eq!(sets.ii_product.len(), 2);
    }

    fn constant_scores(g: &mut Graph, cosines: &[(InstanceRef, f64)]) -> impl FnMut(&mut Graph, InstanceRef) -> Result<Var> {
        let table: Vec<(InstanceRef, Var)> = cosines.iter().map(|&(k, c)| (k, g.constant(Matrix::scalar(c)))).collect();
        move |_, x| Ok(table.iter().find(|(k, _)| *k == x).expect("known instance").1)
    }

    #[test]
    fn one_positive_one_negative_closed_form() {
        let store = ParamStore::new();
        let sets = build_pair_sets(&[vec![4, 0]], Thresholds::default());
        let mut sets_no_product = sets.clone();
        sets_no_product.ii_product.clear();
        let r = |i| InstanceRef { product: 0, review: Some(i) };
        let mut g = Graph::new(&store);
        let f = constant_scores(&mut g, &[(r(0), 1.0), (r(1), -1.0)]);
        let (loss, diag) = cpc_inner_instance(&mut g, &sets_no_product, f).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e / (e + 1.0 / e)).ln();
        assert!((loss.scalar(&g) - expected).abs() < 1e-12);
        assert!((diag[0].1 - e / (e + 1.0 / e)).abs() < 1e-12);

        let f = constant_scores(&mut g, &[(r(0), 1.0), (r(1), -1.0)]);
        let (pr, _) = cpc_product_review_modality(&mut g, &sets, f).unwrap();
        assert!((pr.scalar(&g) - expected).abs() < 1e-12);
    }

    #[test]
    fn lone_positive_costs_nothing_and_empty_sets_are_flagged() {
        let store = ParamStore::new();
        let sets = build_pair_sets(&[vec![4]], Thresholds::default());
        let mut g = Graph::new(&store);
        let f = constant_scores(&mut g, &[(InstanceRef { product: 0, review: Some(0) }, 0.3)]);
        let (pr, _) = cpc_product_review_modality(&mut g, &sets, f).unwrap();
        assert!(pr.scalar(&g).abs() < 1e-15);

        let sets = build_pair_sets(&[vec![2, 2]], Thresholds::default());
        let (pr, _) = cpc_product_review_modality(&mut g, &sets, |_, _| unreachable!()).unwrap();
        assert!(pr.value.is_none());
    }

    #[test]
    fn lower_negative_similarity_lowers_loss() {
        let store = ParamStore::new();
        let sets = build_pair_sets(&[vec![4, 0, 1]], Thresholds::default());
        let r = |i| InstanceRef { product: 0, review: Some(i) };
        let mut g = Graph::new(&store);
        let hi = constant_scores(&mut g, &[(r(0), 0.5), (r(1), 0.2), (r(2), 0.1)]);
        let (a, _) = cpc_product_review_modality(&mut g, &sets, hi).unwrap();
        let lo = constant_scores(&mut g, &[(r(0), 0.5), (r(1), -0.4), (r(2), 0.1)]);
        let (b, _) = cpc_product_review_modality(&mut g, &sets, lo).unwrap();
        assert!(b.scalar(&g) < a.scalar(&g));
    }

    #[test]
    fn losses_pass_gradient_check_through_heads() {
        let mut store = ParamStore::new();
        let mut r = rng(5);
        let heads = ProjectionHeads::register(&mut store, 3, Some(3), 2, &mut r).unwrap();
        let scores = vec![vec![4, 0, 3], vec![1, 4]];
        let sets = build_pair_sets(&scores, Thresholds::default());
        let text: Vec<Matrix> = (0..7).map(|_| uniform(1, 3, 1.0, &mut r)).collect();
        let image: Vec<Matrix> = (0..7).map(|_| uniform(1, 3, 1.0, &mut r)).collect();
        let slot = |x: InstanceRef| match x.review {
            None => x.product,
            Some(i) => 2 + x.product * 3 + i,
        };
        let loss = |g: &mut Graph| {
            let (ii, _) = cpc_inner_instance(g, &sets, |g, x| {
                let t = g.constant(text[slot(x)].clone());
                let v = g.constant(image[slot(x)].clone());
                let t = heads.text_ii.project(g, t)?;
                let v = heads.visual_ii.unwrap().project(g, v)?;
                log_score_var(g, t, v, 1.0)
            })?;
            let (pr, _) = cpc_product_review_modality(g, &sets, |g, x| {
                let rv = g.constant(text[slot(x)].clone());
                let pv = g.constant(text[x.product].clone());
                let rv = heads.text_pr.project(g, rv)?;
                let pv = heads.text_pr.project(g, pv)?;
                log_score_var(g, rv, pv, 1.0)
            })?;
            let parts = [ii.value.unwrap(), pr.value.unwrap()];
            let c = g.concat_cols(&parts)?;
            Ok(g.sum(c))
        };
        let report = grad_check(&mut store, &GradCheckOptions::default(), loss).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}
