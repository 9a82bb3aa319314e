//! Finite-difference check of the full training loss on a tiny model.

use std::time::Instant;

use sancl::config::ModelConfig;
use sancl::corpus::{synthesize, GeneratorConfig, Mode};
use sancl::model::{prepare, vocab_for, HelpfulnessModel, LossSettings, PreparedGroup};
use sancl::numeric::{grad_check, GradCheckOptions};

fn main() -> sancl::Result<()> {
    let cfg = GeneratorConfig {
        train_products: 2,
        dev_products: 0,
        test_products: 0,
        reviews_per_product: 3,
        feature_dim: 6,
        min_sentences: 2,
        max_sentences: 2,
        ..GeneratorConfig::default()
    };
    let data = synthesize(&cfg, 5)?.split.train;
    let groups = prepare(&data)?;
    let refs: Vec<&PreparedGroup> = groups.iter().collect();
    for mode in [Mode::Multimodal, Mode::TextOnly] {
        let config = ModelConfig {
            mode,
            embed_dim: 6,
            hidden_dim: 8,
            visual_input_dim: 6,
            visual_dim: 4,
            shared_dim: 3,
            beta_zero_init: false,
            ..ModelConfig::default()
        };
        let mut model = HelpfulnessModel::new(config, vocab_for(&data), None, true, 2)?;
        let mut store = std::mem::take(&mut model.store);
        let settings = LossSettings::default();
        let start = Instant::now();
        let report = grad_check(&mut store, &GradCheckOptions::default(), |g| {
            Ok(model.batch_loss(g, &refs, &settings, None)?.total)
        })?;
        println!(
            "{mode:?}: {} coordinates, max relative error {:.2e} (at {:?}[{}]), {:.1?}",
            report.coords_checked,
            report.max_relative_error,
            report.worst_param.unwrap_or_default(),
            report.worst_index,
            start.elapsed()
        );
    }
    Ok(())
}
