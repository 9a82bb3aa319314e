//! Ranking metrics: MAP and NDCG@N over per-product review rankings.
//!
//! Reviews are ranked by descending prediction; equal predictions fall back
//! to ascending review id so every metric is deterministic.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Indices of `predictions` in ranked order.
pub fn rank_order<S: AsRef<str>>(predictions: &[f64], ids: &[S]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .total_cmp(&predictions[a])
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order
}

/// Average precision with `gold >= theta_rel` as relevant; `None` when no
/// review is relevant.
pub fn average_precision<S: AsRef<str>>(predictions: &[f64], gold: &[u8], ids: &[S], theta_rel: u8) -> Option<f64> {
    let relevant = gold.iter().filter(|&&g| g >= theta_rel).count();
    if relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in rank_order(predictions, ids).iter().enumerate() {
        if gold[i] >= theta_rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / relevant as f64)
}

fn dcg(gains: impl Iterator<Item = u8>, n: usize) -> f64 {
    gains
        .take(n)
        .enumerate()
        .map(|(i, g)| (2f64.powi(i32::from(g)) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@n with gain `2^g − 1` and discount `log2(i + 1)`; 0 when every gold
/// score is zero.
pub fn ndcg_at<S: AsRef<str>>(predictions: &[f64], gold: &[u8], ids: &[S], n: usize) -> f64 {
    let mut ideal = gold.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), n);
    if idcg == 0.0 {
        return 0.0;
    }
    let order = rank_order(predictions, ids);
    dcg(order.iter().map(|&i| gold[i]), n) / idcg
}

/// Mean average precision over products given as `(predictions, gold, ids)`.
pub fn map_score<S: AsRef<str>>(products: &[(Vec<f64>, Vec<u8>, Vec<S>)], theta_rel: u8) -> Option<f64> {
    let aps: Vec<f64> = products
        .iter()
        .filter_map(|(p, g, ids)| average_precision(p, g, ids, theta_rel))
        .collect();
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductMetrics {
    pub product_id: String,
    pub reviews: usize,
    pub average_precision: Option<f64>,
    pub ndcg3: f64,
    pub ndcg5: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub ndcg3: f64,
    pub ndcg5: f64,
    pub theta_rel: u8,
    pub products: usize,
    /// Products left out of MAP because none of their reviews is relevant.
    pub products_without_relevant: usize,
    /// Products scored 0 by NDCG because every gold score is zero.
    pub products_all_zero_gold: usize,
    #[serde(skip)]
    pub per_product: Vec<ProductMetrics>,
}

impl MetricReport {
    /// One product per call: `(product_id, predictions, gold, review ids)`.
    pub fn compute<'a, S: AsRef<str> + 'a>(
        products: impl IntoIterator<Item = (&'a str, &'a [f64], &'a [u8], &'a [S])>,
        theta_rel: u8,
    ) -> Self {
        let mut per_product = Vec::new();
        let mut all_zero = 0;
        for (id, pred, gold, ids) in products {
            all_zero += usize::from(gold.iter().all(|&g| g == 0));
            per_product.push(ProductMetrics {
                product_id: id.to_string(),
                reviews: pred.len(),
                average_precision: average_precision(pred, gold, ids, theta_rel),
                ndcg3: ndcg_at(pred, gold, ids, 3),
                ndcg5: ndcg_at(pred, gold, ids, 5),
            });
        }
        let aps: Vec<f64> = per_product.iter().filter_map(|p| p.average_precision).collect();
        let n = per_product.len().max(1) as f64;
        Self {
            map: if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 },
            ndcg3: per_product.iter().map(|p| p.ndcg3).sum::<f64>() / n,
            ndcg5: per_product.iter().map(|p| p.ndcg5).sum::<f64>() / n,
            theta_rel,
            products: per_product.len(),
            products_without_relevant: per_product.len() - aps.len(),
            products_all_zero_gold: all_zero,
            per_product,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("product_id,reviews,average_precision,ndcg3,ndcg5\n");
        for p in &self.per_product {
            let ap = p.average_precision.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", p.product_id, p.reviews, ap, p.ndcg3, p.ndcg5);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn perfect_ordering_is_one() {
        let gold = [4u8, 3, 1, 0, 2];
        let pred: Vec<f64> = gold.iter().map(|&g| f64::from(g)).collect();
        assert_eq!(average_precision(&pred, &gold, &ids(5), 1), Some(1.0));
        assert_eq!(ndcg_at(&pred, &gold, &ids(5), 3), 1.0);
        assert_eq!(ndcg_at(&pred, &gold, &ids(5), 5), 1.0);
    }

    #[test]
    fn single_relevant_last() {
        let gold = [0u8, 0, 0, 2];
        let pred = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(average_precision(&pred, &gold, &ids(4), 1), Some(0.25));
        assert_eq!(average_precision(&pred, &[0, 0, 0, 0], &ids(4), 1), None);
    }

    #[test]
    fn reversed_pair() {
        let v = ndcg_at(&[0.0, 1.0], &[4, 0], &ids(2), 3);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg_at(&[1.0, 2.0], &[0, 0], &ids(2), 3), 0.0);
    }

    #[test]
    fn ties_break_by_review_id() {
        let ids = ["b", "a", "c"];
        assert_eq!(rank_order(&[1.0, 1.0, 2.0], &ids), vec![2, 1, 0]);
        let a = average_precision(&[0.0, 0.0], &[1, 0], &["b", "a"], 1);
        assert_eq!(a, Some(0.5));
    }

    #[test]
    fn report_counts_and_csv() {
        let p1 = (vec![1.0, 0.0], vec![3u8, 0], ids(2));
        let p2 = (vec![1.0, 0.0], vec![0u8, 0], ids(2));
        let r = MetricReport::compute(
            [
                ("p1", p1.0.as_slice(), p1.1.as_slice(), p1.2.as_slice()),
                ("p2", p2.0.as_slice(), p2.1.as_slice(), p2.2.as_slice()),
            ],
            1,
        );
        assert_eq!(r.map, 1.0);
        assert_eq!(r.ndcg3, 0.5);
        assert_eq!(r.products_without_relevant, 1);
        assert_eq!(r.products_all_zero_gold, 1);
        assert_eq!(r.to_csv().lines().count(), 3);
        assert_eq!(map_score(&[p1, p2], 1), Some(1.0));
    }
}
