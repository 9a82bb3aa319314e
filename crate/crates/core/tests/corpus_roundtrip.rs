mod common;

use sancl::corpus::{load_corpus, save_corpus, Mode};

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "features"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            out.push((rel, std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn minimal_corpus_round_trips_byte_for_byte() {
    let src = common::fixture("corpus_min");
    let ds = load_corpus(&src, Mode::Multimodal).unwrap();
    assert_eq!(ds.products.len(), 1);
    assert_eq!(ds.reviews.len(), 2);
    assert_eq!(ds.reviews[0].helpfulness, 3);
    assert_eq!(ds.products[0].visual_features.get(0, 1), -1.25);
    let out = tempfile::tempdir().unwrap();
    save_corpus(&ds, out.path()).unwrap();
    assert_eq!(files(&src), files(out.path()));
}

#[test]
fn text_only_load_ignores_features() {
    let ds = load_corpus(&common::fixture("corpus_min"), Mode::TextOnly).unwrap();
    assert_eq!(ds.reviews[1].votes, 1);
}
