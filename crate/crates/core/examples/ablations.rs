//! Trains the full model and each ablation over several seeds and prints
//! mean held-out MAP / NDCG@5 per variant.
//!
//! ```text
//! cargo run --release --example ablations -- [seeds] [epochs]
//! ```

use sancl::config::TrainConfig;
use sancl::corpus::{synthesize, GeneratorConfig};
use sancl::model::prepare;
use sancl::train::{evaluate, train};

fn variants() -> Vec<(&'static str, fn(&mut TrainConfig))> {
    vec![
        ("full", |_| {}),
        ("no_probe_mask", |c| c.no_probe_mask = true),
        ("fixed_beta_0.5", |c| c.fixed_beta = Some(0.5)),
        ("no_cpc_ii", |c| c.no_cpc_ii = true),
        ("no_cpc_pr", |c| c.no_cpc_pr = true),
        ("no_cpc", |c| {
            c.no_cpc_ii = true;
            c.no_cpc_pr = true;
        }),
    ]
}

fn main() -> sancl::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: Option<usize> = args.next().and_then(|s| s.parse().ok());
    let corpora: Vec<_> = (0..seeds)
        .map(|s| synthesize(&GeneratorConfig::default(), 7 + s))
        .collect::<Result<_, _>>()?;
    for (name, apply) in variants() {
        let mut maps = Vec::new();
        let mut ndcgs = Vec::new();
        for (s, corpus) in corpora.iter().enumerate() {
            let mut config = TrainConfig::desk();
            config.seed = 7 + s as u64;
            if let Some(e) = epochs {
                config.epochs = e;
            }
            apply(&mut config);
            let out = train(&corpus.split, &config, &mut std::io::sink(), None)?;
            let test = evaluate(&out.model, &prepare(&corpus.split.test)?, config.theta_rel)?;
            maps.push(test.map);
            ndcgs.push(test.ndcg5);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let fmt: Vec<String> = maps.iter().map(|m| format!("{m:.4}")).collect();
        println!("{name:<16} MAP {:.4}  NDCG@5 {:.4}  [{}]", mean(&maps), mean(&ndcgs), fmt.join(" "));
    }
    Ok(())
}
