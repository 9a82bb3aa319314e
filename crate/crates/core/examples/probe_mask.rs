//! Walks one review through the probe-mask pipeline: core words from the
//! product name, gold-cluster selection, the sentence mask and its real form.

use sancl::corpus::{ReviewRecord, Span};
use sancl::numeric::Matrix;
use sancl::probe::{extract_core_words, generate_probe_mask, realize_mask, resolve_clusters, select_gold_cluster};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> sancl::Result<()> {
    let name = words("Twisty Pins for Upholstery , Slipcovers , and Bedskirts 50/pkg");
    let core = extract_core_words(&name, None);
    println!("core words: {core:?}");

    let review = ReviewRecord {
        review_id: "r1".into(),
        product_id: "p1".into(),
        sentences: vec![
            words("I used these to hold my sofa cover in place ."),
            words("The cover itself came from another store ."),
            words("They have not come loose once ."),
        ],
        features_path: None,
        visual_features: Matrix::zeros(0, 0),
        votes: 12,
        helpfulness: 3,
    };
    // Annotation-style clusters: the pronoun chain "these ... They" comes
    // first, then "cover ... cover". Neither holds a core word, so the first
    // cluster is taken.
    let clusters = vec![
        vec![Span(0, 2, 3), Span(2, 0, 1)],
        vec![Span(0, 7, 8), Span(1, 1, 2)],
    ];
    let resolved = resolve_clusters(&review, &clusters)?;
    let gold = select_gold_cluster(&resolved, &core);
    println!("gold cluster: {:?} via {:?}", gold.index, gold.case);

    let mask = generate_probe_mask(&review, &gold)?;
    for (s, (a, b)) in mask.sentence_boundaries.iter().enumerate() {
        println!("sentence {s}: mask {:?}", &mask.values[*a..*b]);
    }
    let real = realize_mask(&mask, 1.0, 0.4)?;
    println!("real mask (alpha 1, beta 0.4): {:?}", real.values);
    Ok(())
}
