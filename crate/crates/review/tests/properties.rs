use std::collections::BTreeSet;

use deid_review::model::{RatingRecord, RealismOption};
use deid_review::{fleiss_kappa, gate_for_clinical_review};
use proptest::prelude::*;

/// Direct floating-point transcription of the Fleiss formula.
fn kappa_direct(table: &[Vec<u32>], n: u32) -> f64 {
    let n = n as f64;
    let items = table.len() as f64;
    let k = table[0].len();
    let p_bar = table
        .iter()
        .map(|row| (row.iter().map(|&c| (c as f64).powi(2)).sum::<f64>() - n) / (n * (n - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| (table.iter().map(|r| r[j] as f64).sum::<f64>() / (items * n)).powi(2))
        .sum();
    (p_bar - p_e) / (1.0 - p_e)
}

fn table_strategy() -> impl Strategy<Value = (Vec<Vec<u32>>, u32)> {
    (2u32..8, 2usize..5, 1usize..30).prop_flat_map(|(n, k, items)| {
        let row = proptest::collection::vec(0u32..=n, k - 1).prop_map(move |cuts| {
            let mut cuts: Vec<u32> = cuts;
            cuts.sort();
            let mut row = Vec::with_capacity(k);
            let mut prev = 0;
            for c in cuts {
                row.push(c - prev);
                prev = c;
            }
            row.push(n - prev);
            row
        });
        (proptest::collection::vec(row, items), Just(n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kappa_matches_direct_formula((table, n) in table_strategy()) {
        let k = fleiss_kappa(&table, n).unwrap();
        prop_assert!(k.value <= 1.0);
        if k.degenerate {
            prop_assert_eq!(k.value, 1.0);
        } else {
            prop_assert!((k.value - kappa_direct(&table, n)).abs() < 1e-12);
        }
        let perfect = table.iter().all(|r| r.iter().any(|&c| c == n));
        prop_assert_eq!(k.value == 1.0, perfect);
    }

    #[test]
    fn gate_equals_brute_force(
        raters in 1usize..5,
        votes in proptest::collection::vec(proptest::option::of(0usize..3), 0..60),
    ) {
        let videos: Vec<String> = (0..votes.len().div_ceil(raters.max(1)).max(1)).map(|i| format!("v{i}")).collect();
        let mut ratings = Vec::new();
        for (i, v) in votes.iter().enumerate() {
            if let Some(o) = v {
                let video = &videos[(i / raters) % videos.len()];
                ratings.push(RatingRecord::new(format!("r{}", i % raters), video.clone(), RealismOption::ALL[*o], 0));
            }
        }
        let g = gate_for_clinical_review(&ratings, &videos, raters);
        for v in &videos {
            let mine: Vec<&RatingRecord> = ratings.iter().filter(|r| &r.video_id == v).collect();
            let who: BTreeSet<&str> = mine.iter().map(|r| r.rater_id.as_str()).collect();
            let complete = who.len() >= raters;
            let all_a = mine.iter().all(|r| r.option == RealismOption::A);
            prop_assert_eq!(g.selected.contains(v), complete && all_a);
            prop_assert_eq!(g.incomplete.contains(v), !complete);
        }
    }
}

#[test]
fn gate_examples() {
    use RealismOption::*;
    let rs = |v: &str, o: [RealismOption; 4]| -> Vec<RatingRecord> {
        o.iter().enumerate().map(|(i, &x)| RatingRecord::new(format!("r{i}"), v, x, 0)).collect()
    };
    let mut all = rs("in", [A, A, A, A]);
    all.extend(rs("out", [A, A, A, B]));
    let g = gate_for_clinical_review(&all, &["in".into(), "out".into()], 4);
    assert_eq!(g.selected, ["in"]);
    assert!(g.incomplete.is_empty());
}
