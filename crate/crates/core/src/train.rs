//! Mini-batch training with per-epoch dev evaluation and best-dev
//! checkpointing.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::contrastive::SetSizes;
use crate::corpus::{DatasetSplit, Mode};
use crate::encoders::Pretrained;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{prepare, vocab_for, HelpfulnessModel, LossSettings, PreparedGroup};
use crate::numeric::{Adam, Graph};

/// Shuffling and dropout draw from a stream separate from initialisation.
const DATA_STREAM: u64 = 0x5eed_da7a;

/// One line of the JSONL training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: usize,
        #[serde(rename = "L_task")]
        l_task: f64,
        cpc_ii: f64,
        cpc_pr_t: f64,
        cpc_pr_v: f64,
        cpc_pr: f64,
        #[serde(rename = "L")]
        l: f64,
        beta_min: Option<f64>,
        beta_max: Option<f64>,
        sets: SetSizes,
    },
    Epoch {
        epoch: usize,
        step: usize,
        dev_map: Option<f64>,
        dev_ndcg3: Option<f64>,
        dev_ndcg5: Option<f64>,
        best: bool,
    },
}

pub struct TrainOutcome {
    /// Model from the epoch with the best dev MAP (last epoch without dev).
    pub model: HelpfulnessModel,
    pub best_epoch: usize,
    pub best_dev: Option<MetricReport>,
    pub steps: usize,
    /// Smallest and largest generated β over all steps.
    pub beta_range: Option<(f64, f64)>,
}

/// Predictions for each group, in order.
pub fn predict_all(model: &HelpfulnessModel, groups: &[PreparedGroup]) -> Result<Vec<Vec<f64>>> {
    groups.par_iter().map(|g| model.score_group(g)).collect()
}

pub fn evaluate(model: &HelpfulnessModel, groups: &[PreparedGroup], theta_rel: u8) -> Result<MetricReport> {
    let preds = predict_all(model, groups)?;
    let gold: Vec<Vec<u8>> = groups.iter().map(PreparedGroup::scores).collect();
    let ids: Vec<Vec<&str>> = groups
        .iter()
        .map(|g| g.reviews.iter().map(|r| r.review_id.as_str()).collect())
        .collect();
    Ok(MetricReport::compute(
        groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.product_id.as_str(), preds[i].as_slice(), gold[i].as_slice(), ids[i].as_slice())),
        theta_rel,
    ))
}

fn visual_input_dim(split: &DatasetSplit, mode: Mode) -> Result<usize> {
    if mode == Mode::TextOnly {
        return Ok(0);
    }
    split
        .train
        .products
        .first()
        .map(|p| p.visual_features.cols())
        .ok_or_else(|| Error::Validation("training partition has no products".into()))
}

fn write_record(log: &mut dyn Write, record: &LogRecord) -> Result<()> {
    let line = serde_json::to_string(record)?;
    writeln!(log, "{line}").map_err(|e| Error::io(PathBuf::from("<training log>"), e))
}

/// Trains on `split.train`, evaluating on `split.dev` after every epoch.
/// When `checkpoint_path` is set, the best model so far is written there,
/// and a divergence leaves the last good model in place.
pub fn train(
    split: &DatasetSplit,
    config: &TrainConfig,
    log: &mut dyn Write,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    for (name, part) in split.partitions() {
        part.validate(config.mode).map_err(|e| Error::Validation(format!("{name}: {e}")))?;
    }
    let model_config = config.model_config(visual_input_dim(split, config.mode)?);
    let pretrained = match &config.pretrained_embeddings {
        Some(p) => Some(Pretrained::load(Path::new(p))?),
        None => None,
    };
    let mut model = HelpfulnessModel::new(
        model_config,
        vocab_for(&split.train),
        pretrained.as_ref(),
        config.fine_tune_embeddings,
        config.seed,
    )?;
    let train_groups = prepare(&split.train)?;
    let dev_groups = prepare(&split.dev)?;
    if train_groups.is_empty() {
        return Err(Error::Validation("training partition has no reviews".into()));
    }
    let settings = LossSettings {
        gamma: config.gamma,
        kappa: config.kappa,
        no_cpc_ii: config.no_cpc_ii,
        no_cpc_pr: config.no_cpc_pr,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ DATA_STREAM);
    let mut adam = Adam::new(config.learning_rate);
    let mut best: Option<(f64, HelpfulnessModel, usize, Option<MetricReport>)> = None;
    let mut beta_range: Option<(f64, f64)> = None;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_groups.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&PreparedGroup> = chunk.iter().map(|&i| &train_groups[i]).collect();
            let (record, grads) = {
                let mut g = Graph::new(&model.store);
                let out = model.batch_loss(&mut g, &batch, &settings, Some((config.dropout, &mut rng)))?;
                let total = g.scalar(out.total);
                if !total.is_finite() {
                    if let (Some(path), None) = (checkpoint_path, &best) {
                        checkpoint::save(&model, path)?;
                    }
                    return Err(Error::Divergence { epoch, step });
                }
                let (lo, hi) = out
                    .betas
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                if !out.betas.is_empty() {
                    beta_range = Some(match beta_range {
                        Some((a, b)) => (a.min(lo), b.max(hi)),
                        None => (lo, hi),
                    });
                }
                let record = LogRecord::Step {
                    epoch,
                    step,
                    l_task: out.task,
                    cpc_ii: out.cpc.cpc_ii,
                    cpc_pr_t: out.cpc.cpc_pr_t,
                    cpc_pr_v: out.cpc.cpc_pr_v,
                    cpc_pr: out.cpc.cpc_pr,
                    l: total,
                    beta_min: (!out.betas.is_empty()).then_some(lo),
                    beta_max: (!out.betas.is_empty()).then_some(hi),
                    sets: out.sizes,
                };
                (record, g.backward(out.total)?)
            };
            write_record(log, &record)?;
            model.store.zero_grad();
            grads.accumulate_into(&mut model.store);
            adam.step(&mut model.store);
            model.store.quantize_f32();
        }

        let report = if dev_groups.is_empty() {
            None
        } else {
            Some(evaluate(&model, &dev_groups, config.theta_rel)?)
        };
        let dev_map = report.as_ref().map(|r| r.map);
        let improved = match (&best, dev_map) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some((b, ..)), Some(m)) => m > *b,
        };
        if improved {
            if let Some(path) = checkpoint_path {
                checkpoint::save(&model, path)?;
            }
            best = Some((dev_map.unwrap_or(f64::NEG_INFINITY), model.clone(), epoch, report.clone()));
        }
        write_record(
            log,
            &LogRecord::Epoch {
                epoch,
                step,
                dev_map,
                dev_ndcg3: report.as_ref().map(|r| r.ndcg3),
                dev_ndcg5: report.as_ref().map(|r| r.ndcg5),
                best: improved,
            },
        )?;
    }

    let (model, best_epoch, best_dev) = match best {
        Some((_, m, e, r)) => (m, e, r),
        None => {
            if let Some(path) = checkpoint_path {
                checkpoint::save(&model, path)?;
            }
            (model, 0, None)
        }
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_dev,
        steps: step,
        beta_range,
    })
}
