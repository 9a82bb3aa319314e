//! MAP and NDCG@N on a few hand-made rankings, with the per-product CSV.

use sancl::metrics::MetricReport;

fn main() {
    let products: Vec<(&str, Vec<f64>, Vec<u8>, Vec<String>)> = vec![
        ("perfect", vec![0.9, 0.5, 0.1], vec![4, 2, 0], vec!["a".into(), "b".into(), "c".into()]),
        ("reversed", vec![0.1, 0.5, 0.9], vec![4, 2, 0], vec!["a".into(), "b".into(), "c".into()]),
        ("tied", vec![0.5, 0.5, 0.5, 0.5], vec![0, 3, 0, 1], vec!["d".into(), "c".into(), "b".into(), "a".into()]),
        ("no_votes", vec![0.3, 0.2], vec![0, 0], vec!["x".into(), "y".into()]),
    ];
    let report = MetricReport::compute(
        products
            .iter()
            .map(|(id, p, g, ids)| (*id, p.as_slice(), g.as_slice(), ids.as_slice())),
        1,
    );
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    print!("{}", report.to_csv());
}
