//! Command-line front end: `synth`, `train`, `eval`, `probe-mask` and
//! `annotate-heuristic`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::corpus::io::{product_from_line, read_jsonl, review_from_line, write_jsonl, ProductLine, ReviewLine};
use crate::corpus::{load_corpus, load_split, save_split, synthesize, AnnotationRecord, Dataset, GeneratorConfig, Mode};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::prepare;
use crate::probe::{extract_core_words, heuristic_annotate, probe_mask_for};
use crate::train::{evaluate, predict_all, train};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MASKS_FILE: &str = "masks.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "sancl", version, about = "Multimodal review helpfulness ranking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/dev/test corpus.
    Synth(SynthArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Score a partition with a checkpoint and print metrics as JSON.
    Eval(EvalArgs),
    /// Write probe masks for a set of reviews.
    ProbeMask(ProbeMaskArgs),
    /// Write heuristic coreference annotations for a set of reviews.
    AnnotateHeuristic(AnnotateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Generator config (JSON); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the small CPU preset instead of the full-scale defaults.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub fixed_beta: Option<f64>,
    #[arg(long)]
    pub no_probe_mask: bool,
    #[arg(long)]
    pub no_cpc_ii: bool,
    #[arg(long)]
    pub no_cpc_pr: bool,
    #[arg(long)]
    pub pretrained_embeddings: Option<String>,
    #[arg(long)]
    pub fine_tune_embeddings: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// A split root (with train/dev/test) or a single partition directory.
    pub data_dir: PathBuf,
    #[arg(long, default_value = "test")]
    pub partition: String,
    #[arg(long, default_value_t = 1)]
    pub theta_rel: u8,
    #[arg(long)]
    pub per_product_csv: Option<PathBuf>,
    /// Recompute MAP with a brute-force reference and fail on disagreement.
    #[arg(long)]
    pub oracle_check: bool,
}

#[derive(Debug, Args)]
pub struct ProbeMaskArgs {
    #[arg(long)]
    pub products: PathBuf,
    #[arg(long)]
    pub reviews: PathBuf,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub products: PathBuf,
    #[arg(long)]
    pub reviews: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "text-only" => Ok(Mode::TextOnly),
        "multimodal" => Ok(Mode::Multimodal),
        _ => Err(format!("expected `text-only` or `multimodal`, got `{s}`")),
    }
}

/// One line of `masks.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskLine {
    pub review_id: String,
    pub mask: Vec<u8>,
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// SHA-256 over the input files, each hashed as `blob <len>\0<bytes>`
    /// in sorted path order.
    pub input_hash: String,
    pub started_at: u64,
    pub finished_at: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                collect_files(&e, out)?;
            }
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Content hash of files and directory trees; manifests are skipped.
pub fn content_hash(inputs: &[&Path]) -> Result<String> {
    let mut files = Vec::new();
    for p in inputs {
        collect_files(p, &mut files)?;
    }
    let mut hasher = Sha256::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
        hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Usage(format!("data directory {} does not exist", dir.display())))
    }
}

fn masks_for(dataset: &Dataset) -> Result<Vec<MaskLine>> {
    let index = dataset.product_index();
    dataset
        .reviews
        .iter()
        .map(|r| {
            let product = index
                .get(r.product_id.as_str())
                .map(|&i| &dataset.products[i])
                .ok_or_else(|| Error::Referential(format!("review {} names unknown product {}", r.review_id, r.product_id)))?;
            let (mask, _) = probe_mask_for(r, product, dataset.annotations.get(&r.review_id))?;
            Ok(MaskLine {
                review_id: r.review_id.clone(),
                mask: mask.values,
            })
        })
        .collect()
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let started_at = now();
    let cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
                key: e.path().to_string(),
                message: e.inner().to_string(),
            })?
        }
        None => GeneratorConfig::default(),
    };
    cfg.validate().map_err(|e| Error::Config {
        key: ".".into(),
        message: e.to_string(),
    })?;
    if let Ok(mut entries) = fs::read_dir(&args.out_dir) {
        if entries.next().is_some() && !args.force {
            return Err(Error::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                args.out_dir.display()
            )));
        }
    }
    let corpus = synthesize(&cfg, args.seed)?;
    ensure_dir(&args.out_dir)?;
    save_split(&corpus.split, &args.out_dir)?;
    for (name, part) in corpus.split.partitions() {
        let lines = part.reviews.iter().map(|r| MaskLine {
            review_id: r.review_id.clone(),
            mask: corpus.masks[&r.review_id].clone(),
        });
        write_jsonl(&args.out_dir.join(name).join(MASKS_FILE), lines)?;
    }
    let config = serde_json::to_value(&cfg)?;
    let input_hash = content_hash(&[])?;
    write_manifest(
        &args.out_dir,
        &RunManifest {
            command: "synth".into(),
            config,
            seed: Some(args.seed),
            input_hash,
            started_at,
            finished_at: now(),
        },
    )
}

/// Resolves file, preset and flag values into one config (flag > file > default).
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let base = if args.desk { TrainConfig::desk() } else { TrainConfig::default() };
    let mut value = serde_json::to_value(base)?;
    if let Some(p) = &args.config {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        // Validate keys and types on their own before merging.
        let file: serde_json::Value = serde_json::to_value(TrainConfig::from_json(&text)?)?;
        let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)?;
        for k in raw.keys() {
            value[k] = file[k].clone();
        }
    }
    let mut config: TrainConfig = serde_json::from_value(value)?;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field.clone() { config.$field = v; })* };
    }
    set!(seed, epochs, learning_rate, batch_size, kappa, gamma, dropout, mode);
    if args.fixed_beta.is_some() {
        config.fixed_beta = args.fixed_beta;
    }
    if args.pretrained_embeddings.is_some() {
        config.pretrained_embeddings = args.pretrained_embeddings.clone();
    }
    config.no_probe_mask |= args.no_probe_mask;
    config.no_cpc_ii |= args.no_cpc_ii;
    config.no_cpc_pr |= args.no_cpc_pr;
    config.fine_tune_embeddings |= args.fine_tune_embeddings;
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainConfig> {
    let started_at = now();
    require_dir(&args.data_dir)?;
    let config = resolve_train_config(args)?;
    let split = load_split(&args.data_dir, config.mode)?;
    let input_hash = content_hash(&[&args.data_dir])?;
    ensure_dir(&args.out_dir)?;
    fs::write(args.out_dir.join(CONFIG_FILE), serde_json::to_string_pretty(&config)? + "\n")
        .map_err(|e| Error::io(args.out_dir.join(CONFIG_FILE), e))?;
    let log_path = args.out_dir.join(LOG_FILE);
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let result = train(&split, &config, &mut log, Some(&args.out_dir.join(CHECKPOINT_FILE)));
    std::io::Write::flush(&mut log).map_err(|e| Error::io(&log_path, e))?;
    let outcome = result?;
    if let Some(dev) = &outcome.best_dev {
        eprintln!(
            "best epoch {}: dev MAP {:.4}, NDCG@3 {:.4}, NDCG@5 {:.4}",
            outcome.best_epoch, dev.map, dev.ndcg3, dev.ndcg5
        );
    }
    write_manifest(
        &args.out_dir,
        &RunManifest {
            command: "train".into(),
            config: serde_json::to_value(&config)?,
            seed: Some(config.seed),
            input_hash,
            started_at,
            finished_at: now(),
        },
    )?;
    Ok(config)
}

/// Reference MAP: for every relevant review, precision is the fraction of
/// relevant reviews among those ranked at or above it, found by pairwise
/// comparison rather than sorting.
pub fn brute_force_map(products: &[(Vec<f64>, Vec<u8>, Vec<String>)], theta_rel: u8) -> Option<f64> {
    let mut aps = Vec::new();
    for (pred, gold, ids) in products {
        let above = |i: usize, j: usize| pred[j] > pred[i] || (pred[j] == pred[i] && ids[j] <= ids[i]);
        let relevant: Vec<usize> = (0..pred.len()).filter(|&i| gold[i] >= theta_rel).collect();
        if relevant.is_empty() {
            continue;
        }
        let sum: f64 = relevant
            .iter()
            .map(|&i| {
                let rank = (0..pred.len()).filter(|&j| above(i, j)).count();
                let hits = relevant.iter().filter(|&&j| above(i, j)).count();
                hits as f64 / rank as f64
            })
            .sum();
        aps.push(sum / relevant.len() as f64);
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricReport> {
    require_dir(&args.data_dir)?;
    let model = checkpoint::load(&args.checkpoint)?;
    let mode = model.config.mode;
    let dir = if args.data_dir.join("products.jsonl").is_file() {
        args.data_dir.clone()
    } else {
        args.data_dir.join(&args.partition)
    };
    let dataset = load_corpus(&dir, mode)?;
    if model.config.multimodal() {
        let dims = dataset
            .products
            .iter()
            .map(|p| p.visual_features.cols())
            .chain(dataset.reviews.iter().map(|r| r.visual_features.cols()));
        for d in dims {
            if d != model.config.visual_input_dim {
                return Err(Error::Checkpoint {
                    version: checkpoint::VERSION,
                    message: format!(
                        "checkpoint expects {}-dimensional visual features, data has {d}",
                        model.config.visual_input_dim
                    ),
                });
            }
        }
    }
    let groups = prepare(&dataset)?;
    let report = evaluate(&model, &groups, args.theta_rel)?;
    if args.oracle_check {
        let preds = predict_all(&model, &groups)?;
        let products: Vec<(Vec<f64>, Vec<u8>, Vec<String>)> = groups
            .iter()
            .zip(preds)
            .map(|(g, p)| (p, g.scores(), g.reviews.iter().map(|r| r.review_id.clone()).collect()))
            .collect();
        let reference = brute_force_map(&products, args.theta_rel).unwrap_or(0.0);
        if (reference - report.map).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "oracle check failed: MAP {} vs brute force {reference}",
                report.map
            )));
        }
        eprintln!("oracle check passed: MAP {reference}");
    }
    if let Some(p) = &args.per_product_csv {
        fs::write(p, report.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    Ok(report)
}

/// Loads products and reviews from explicit files; visual features are not read.
fn load_text_records(products: &Path, reviews: &Path, annotations: Option<&Path>) -> Result<Dataset> {
    let pdir = products.parent().unwrap_or(Path::new("."));
    let rdir = reviews.parent().unwrap_or(Path::new("."));
    let products = read_jsonl::<ProductLine>(products)?
        .into_iter()
        .map(|l| product_from_line(l, pdir, Mode::TextOnly))
        .collect::<Result<Vec<_>>>()?;
    let reviews = read_jsonl::<ReviewLine>(reviews)?
        .into_iter()
        .map(|l| review_from_line(l, rdir, Mode::TextOnly))
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset {
        products,
        reviews,
        annotations: BTreeMap::new(),
    };
    if let Some(a) = annotations {
        for rec in read_jsonl::<AnnotationRecord>(a)? {
            dataset.annotations.insert(rec.review_id.clone(), rec);
        }
    }
    dataset.validate(Mode::TextOnly)?;
    Ok(dataset)
}

pub fn cmd_probe_mask(args: &ProbeMaskArgs) -> Result<usize> {
    let dataset = load_text_records(&args.products, &args.reviews, args.annotations.as_deref())?;
    let lines = masks_for(&dataset)?;
    write_jsonl(&args.out, &lines)?;
    Ok(lines.len())
}

pub fn cmd_annotate_heuristic(args: &AnnotateArgs) -> Result<usize> {
    let dataset = load_text_records(&args.products, &args.reviews, None)?;
    let index = dataset.product_index();
    let records: Vec<AnnotationRecord> = dataset
        .reviews
        .iter()
        .map(|r| {
            let product = &dataset.products[index[r.product_id.as_str()]];
            heuristic_annotate(r, &extract_core_words(&product.name, None))
        })
        .collect();
    write_jsonl(&args.out, &records)?;
    Ok(records.len())
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|()| eprintln!("wrote corpus to {}", a.out_dir.display())),
        Command::Train(a) => cmd_train(a).map(|_| eprintln!("wrote {}", a.out_dir.display())),
        Command::Eval(a) => cmd_eval(a).and_then(|r| {
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }),
        Command::ProbeMask(a) => cmd_probe_mask(a).map(|n| eprintln!("wrote {n} masks to {}", a.out.display())),
        Command::AnnotateHeuristic(a) => {
            cmd_annotate_heuristic(a).map(|n| eprintln!("wrote {n} annotations to {}", a.out.display()))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_map_agrees_on_ties() {
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let products = vec![
            (vec![1.0, 1.0, 0.0], vec![0u8, 2, 3], ids(&["a", "b", "c"])),
            (vec![0.5, 0.2], vec![0u8, 0], ids(&["x", "y"])),
        ];
        let reference = brute_force_map(&products, 1).unwrap();
        let fast = crate::metrics::map_score(&products, 1).unwrap();
        assert_eq!(reference, fast);
        assert!((reference - (1.0 / 2.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn content_hash_ignores_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        let h1 = content_hash(&[dir.path()]).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{}").unwrap();
        assert_eq!(content_hash(&[dir.path()]).unwrap(), h1);
        fs::write(dir.path().join("a.txt"), "y").unwrap();
        assert_ne!(content_hash(&[dir.path()]).unwrap(), h1);
    }
}
