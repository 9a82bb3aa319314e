//! JSONL ingestion and serialization for products, reviews and annotations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{load_features, save_features};
use super::records::{
    label_from_votes, AnnotationRecord, Dataset, DatasetSplit, Mode, ProductRecord, ReviewRecord,
    Sentence,
};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const PRODUCTS_FILE: &str = "products.jsonl";
pub const REVIEWS_FILE: &str = "reviews.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductLine {
    pub product_id: String,
    pub name: Vec<String>,
    pub sentences: Vec<Sentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewLine {
    pub review_id: String,
    pub product_id: String,
    pub sentences: Vec<Sentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_path: Option<String>,
    pub votes: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helpfulness: Option<u8>,
}

/// Parses every non-blank line of a JSONL file, reporting 1-based line numbers.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_optional<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

fn features_for(dir: &Path, rel: &Option<String>, mode: Mode) -> Result<Matrix> {
    match rel {
        Some(rel) if mode == Mode::Multimodal => load_features(&dir.join(rel), mode),
        Some(rel) => {
            let path = dir.join(rel);
            if path.exists() {
                load_features(&path, mode)
            } else {
                Ok(Matrix::zeros(0, 0))
            }
        }
        None if mode == Mode::Multimodal => Err(Error::Validation(
            "record without features_path in multimodal mode".into(),
        )),
        None => Ok(Matrix::zeros(0, 0)),
    }
}

pub fn product_from_line(line: ProductLine, dir: &Path, mode: Mode) -> Result<ProductRecord> {
    let visual_features = features_for(dir, &line.features_path, mode)
        .map_err(|e| with_owner(e, &line.product_id))?;
    Ok(ProductRecord {
        product_id: line.product_id,
        name: line.name,
        sentences: line.sentences,
        features_path: line.features_path,
        visual_features,
    })
}

pub fn review_from_line(line: ReviewLine, dir: &Path, mode: Mode) -> Result<ReviewRecord> {
    let label = label_from_votes(line.votes).map_err(|e| with_owner(e, &line.review_id))?;
    if let Some(h) = line.helpfulness {
        if h != label {
            return Err(Error::Validation(format!(
                "review {}: helpfulness {h} disagrees with {} votes (label {label})",
                line.review_id, line.votes
            )));
        }
    }
    let visual_features = features_for(dir, &line.features_path, mode)
        .map_err(|e| with_owner(e, &line.review_id))?;
    Ok(ReviewRecord {
        review_id: line.review_id,
        product_id: line.product_id,
        sentences: line.sentences,
        features_path: line.features_path,
        visual_features,
        votes: line.votes as u64,
        helpfulness: label,
    })
}

fn with_owner(e: Error, owner: &str) -> Error {
    match e {
        Error::Validation(m) => Error::Validation(format!("{owner}: {m}")),
        other => other,
    }
}

/// Loads one partition directory holding the three JSONL files.
///
/// Missing files are treated as empty; duplicate ids and dangling references
/// are rejected.
pub fn load_corpus(dir: &Path, mode: Mode) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
        ));
    }
    let products = read_optional::<ProductLine>(&dir.join(PRODUCTS_FILE))?
        .into_iter()
        .map(|l| product_from_line(l, dir, mode))
        .collect::<Result<Vec<_>>>()?;
    let reviews = read_optional::<ReviewLine>(&dir.join(REVIEWS_FILE))?
        .into_iter()
        .map(|l| review_from_line(l, dir, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut annotations = BTreeMap::new();
    for a in read_optional::<AnnotationRecord>(&dir.join(ANNOTATIONS_FILE))? {
        if annotations.contains_key(&a.review_id) {
            return Err(Error::Validation(format!("duplicate annotation for {}", a.review_id)));
        }
        annotations.insert(a.review_id.clone(), a);
    }
    let dataset = Dataset {
        products,
        reviews,
        annotations,
    };
    dataset.validate(mode)?;
    Ok(dataset)
}

pub fn product_line(p: &ProductRecord) -> ProductLine {
    ProductLine {
        product_id: p.product_id.clone(),
        name: p.name.clone(),
        sentences: p.sentences.clone(),
        features_path: p.features_path.clone(),
    }
}

pub fn review_line(r: &ReviewRecord) -> ReviewLine {
    ReviewLine {
        review_id: r.review_id.clone(),
        product_id: r.product_id.clone(),
        sentences: r.sentences.clone(),
        features_path: r.features_path.clone(),
        votes: r.votes as i64,
        helpfulness: Some(r.helpfulness),
    }
}

/// Writes a partition in the layout `load_corpus` reads, including feature files.
pub fn save_corpus(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(PRODUCTS_FILE), dataset.products.iter().map(product_line))?;
    write_jsonl(&dir.join(REVIEWS_FILE), dataset.reviews.iter().map(review_line))?;
    if !dataset.annotations.is_empty() {
        write_jsonl(&dir.join(ANNOTATIONS_FILE), dataset.annotations.values())?;
    }
    let with_features = dataset
        .products
        .iter()
        .map(|p| (&p.features_path, &p.visual_features))
        .chain(dataset.reviews.iter().map(|r| (&r.features_path, &r.visual_features)));
    for (rel, m) in with_features {
        if let Some(rel) = rel {
            save_features(&dir.join(rel), m)?;
        }
    }
    Ok(())
}

pub fn load_split(root: &Path, mode: Mode) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        train: load_corpus(&root.join("train"), mode)?,
        dev: load_corpus(&root.join("dev"), mode)?,
        test: load_corpus(&root.join("test"), mode)?,
    })
}

pub fn save_split(split: &DatasetSplit, root: &Path) -> Result<()> {
    for (name, part) in split.partitions() {
        save_corpus(part, &root.join(name))?;
    }
    Ok(())
}
