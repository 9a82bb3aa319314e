mod common;

#[test]
fn handcrafted_cases_match_exactly() {
    let (n, bad) = common::probe_mismatches();
    assert_eq!(n, 12);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn fixture_covers_every_gold_case() {
    use sancl::probe::{probe_mask_for, GoldCase};
    let cases: Vec<GoldCase> = common::probe_cases()
        .iter()
        .map(|c| probe_mask_for(&c.review, &c.product, c.annotation.as_ref()).unwrap().1)
        .collect();
    for want in [GoldCase::CoreWordMatch, GoldCase::FirstClusterFallback, GoldCase::NoClusters] {
        assert!(cases.contains(&want), "{want:?}");
    }
}
