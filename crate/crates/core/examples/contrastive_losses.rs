//! Contrastive terms on hand-set scores: pair-set construction from gold
//! scores, then the loss and per-instance probabilities.

use sancl::contrastive::{build_pair_sets, cpc_inner_instance, cpc_product_review_modality, score, Thresholds};
use sancl::numeric::{Graph, Matrix, ParamStore};

fn main() -> sancl::Result<()> {
    let gold = vec![vec![4u8, 0, 2], vec![3, 1]];
    let sets = build_pair_sets(&gold, Thresholds::default());
    println!("set sizes: {:?}", sets.sizes());

    // One positive with cosine 1, one negative with cosine -1.
    let a = [1.0, 2.0, -0.5];
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    println!("phi(a, a) = {:.6}, phi(a, -a) = {:.6}", score(&a, &a, 1.0)?, score(&a, &neg, 1.0)?);
    let closed = -(1f64.exp() / (1f64.exp() + (-1f64).exp())).ln();
    println!("closed form for that pair: {closed:.12}");

    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    // Positives and products sit at cosine 0.8, negatives at -0.2.
    let log_score = |g: &mut Graph, x: sancl::contrastive::InstanceRef| {
        let s = match x.review {
            None => 0.8,
            Some(r) if gold[x.product][r] >= 3 => 0.8,
            Some(_) => -0.2,
        };
        Ok(g.constant(Matrix::scalar(s)))
    };
    let (ii, probs) = cpc_inner_instance(&mut g, &sets, log_score)?;
    println!("cpc_ii = {:.6}", ii.scalar(&g));
    for (at, p) in probs {
        println!("  {at:?}: {p:.4}");
    }
    let (pr, _) = cpc_product_review_modality(&mut g, &sets, log_score)?;
    println!("cpc_pr (one modality) = {:.6}", pr.scalar(&g));
    Ok(())
}
