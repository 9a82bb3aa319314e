//! Mask-guided re-weighting of a self-attention matrix and masked pooling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sancl::attention::{masked_pool, reweight};
use sancl::numeric::{softmax_rows, Matrix};
use sancl::probe::{realize_mask, ProbeMask};

fn main() -> sancl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l = 6;
    let scores = Matrix::new(l, l, (0..l * l).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let a = softmax_rows(&scores)?;
    let mask = ProbeMask {
        values: vec![1, 1, 1, 0, 0, 0],
        sentence_boundaries: vec![(0, 3), (3, 6)],
    };
    let (alpha, beta) = (1.0, 0.3);
    let m = realize_mask(&mask, alpha, beta)?;
    let a2 = reweight(&a, &m)?;
    println!("row 0 before: {:.3?}", a.row(0));
    println!("row 0 after:  {:.3?}", a2.row(0));
    println!("row 5 after:  {:.3?}", a2.row(5));
    println!("row sums after: {:.3?}", (0..l).map(|i| a2.row(i).iter().sum::<f64>()).collect::<Vec<_>>());

    let h = Matrix::new(l, 2, (0..l * 2).map(|i| i as f64).collect())?;
    println!("masked pool: {:.4?}", masked_pool(&h, &m)?);
    println!("plain mean:  {:.4?}", [5.0, 6.0]);
    Ok(())
}
