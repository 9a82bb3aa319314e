//! Generates a synthetic corpus, trains the desk-sized model and reports
//! held-out metrics.
//!
//! ```text
//! cargo run --release --example synthetic_train -- [seed] [epochs]
//! ```

use std::time::Instant;

use sancl::config::TrainConfig;
use sancl::corpus::{synthesize, GeneratorConfig};
use sancl::model::prepare;
use sancl::train::{evaluate, train, LogRecord};

fn main() -> sancl::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut config = TrainConfig::desk();
    config.seed = seed;
    if let Some(e) = args.next().and_then(|s| s.parse().ok()) {
        config.epochs = e;
    }

    let corpus = synthesize(&GeneratorConfig::default(), seed)?;
    let started = Instant::now();
    let mut log = Vec::new();
    let outcome = train(&corpus.split, &config, &mut log, None)?;
    for line in String::from_utf8_lossy(&log).lines() {
        if let Ok(LogRecord::Epoch { epoch, dev_map, dev_ndcg5, .. }) = serde_json::from_str(line) {
            println!("epoch {epoch:>2}  dev MAP {:.4}  dev NDCG@5 {:.4}", dev_map.unwrap_or(0.0), dev_ndcg5.unwrap_or(0.0));
        }
    }
    let test = evaluate(&outcome.model, &prepare(&corpus.split.test)?, config.theta_rel)?;
    println!(
        "best epoch {}  test MAP {:.4}  NDCG@3 {:.4}  NDCG@5 {:.4}  ({:.1}s)",
        outcome.best_epoch,
        test.map,
        test.ndcg3,
        test.ndcg5,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
