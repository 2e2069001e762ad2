//! Agreement and score statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RatingRecord, RealismOption};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("need at least one item")]
    NoItems,
    #[error("need at least two raters, got {0}")]
    TooFewRaters(u32),
    #[error("row {row} sums to {sum}, expected {n_raters}")]
    RowSum { row: usize, sum: u64, n_raters: u32 },
    #[error("empty score set")]
    EmptySet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Every rating fell in one category, so chance agreement is 1 and the
    /// ratio is undefined; reported as perfect agreement.
    pub degenerate: bool,
}

/// Fleiss' kappa for an item x category count table with `n_raters`
/// ratings per item.
///
/// All intermediate sums are integers, so the result is one correctly
/// rounded division: with `A = sum_i (sum_j n_ij^2 - n)` and
/// `B = sum_j c_j^2`, `kappa = (A N n - B (n-1)) / ((n-1) ((N n)^2 - B))`.
pub fn fleiss_kappa(table: &[Vec<u32>], n_raters: u32) -> Result<Kappa, StatsError> {
    if table.is_empty() {
        return Err(StatsError::NoItems);
    }
    if n_raters < 2 {
        return Err(StatsError::TooFewRaters(n_raters));
    }
    let n = n_raters as i128;
    let k = table.iter().map(Vec::len).max().unwrap_or(0);
    let mut col = vec![0i128; k];
    let mut a: i128 = 0;
    for (row, counts) in table.iter().enumerate() {
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != n_raters as u64 {
            return Err(StatsError::RowSum { row, sum, n_raters });
        }
        a += counts.iter().map(|&c| (c as i128) * (c as i128)).sum::<i128>() - n;
        for (j, &c) in counts.iter().enumerate() {
            col[j] += c as i128;
        }
    }
    let big_n = table.len() as i128;
    let b: i128 = col.iter().map(|c| c * c).sum();
    let total = big_n * n;
    if b == total * total {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    let num = a * total - b * (n - 1);
    let den = (n - 1) * (total * total - b);
    Ok(Kappa {
        value: num as f64 / den as f64,
        degenerate: false,
    })
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate_scores(scores: &[f64]) -> Result<(f64, f64), StatsError> {
    if scores.is_empty() {
        return Err(StatsError::EmptySet);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateResult {
    /// Videos rated A by every rater.
    pub selected: Vec<String>,
    /// Videos with fewer than the required number of ratings.
    pub incomplete: Vec<String>,
}

/// Unanimity gate: a roster video passes when at least `required_raters`
/// distinct raters rated it and every one of them chose A.
pub fn gate_for_clinical_review(ratings: &[RatingRecord], roster: &[String], required_raters: usize) -> GateResult {
    let mut by_video: BTreeMap<&str, BTreeMap<&str, RealismOption>> = BTreeMap::new();
    for r in ratings {
        by_video.entry(&r.video_id).or_default().insert(&r.rater_id, r.option);
    }
    let mut out = GateResult::default();
    for v in roster {
        let votes = by_video.get(v.as_str());
        let count = votes.map_or(0, BTreeMap::len);
        if count < required_raters.max(1) {
            out.incomplete.push(v.clone());
        } else if votes.is_some_and(|m| m.values().all(|&o| o == RealismOption::A)) {
            out.selected.push(v.clone());
        }
    }
    out
}

/// Count table over the items rated by every rater in `raters`.
pub fn count_table<'a, I, K>(
    votes: I,
    raters: &BTreeSet<&str>,
    n_categories: usize,
) -> (Vec<String>, Vec<Vec<u32>>)
where
    I: IntoIterator<Item = (&'a str, &'a str, K)>,
    K: Into<usize>,
{
    let mut by_item: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (item, rater, cat) in votes {
        if raters.contains(rater) {
            by_item.entry(item).or_default().insert(rater, cat.into());
        }
    }
    let mut items = Vec::new();
    let mut table = Vec::new();
    for (item, votes) in by_item {
        if votes.len() == raters.len() {
            let mut row = vec![0u32; n_categories];
            for c in votes.values() {
                row[*c] += 1;
            }
            items.push(item.to_string());
            table.push(row);
        }
    }
    (items, table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_hand_case() {
        let k = fleiss_kappa(&[vec![3, 0], vec![2, 1]], 3).unwrap();
        assert_eq!(k.value, -0.2);
        assert!(!k.degenerate);
    }

    #[test]
    fn kappa_perfect_and_degenerate() {
        let k = fleiss_kappa(&[vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4]], 4).unwrap();
        assert_eq!(k, Kappa { value: 1.0, degenerate: false });
        let d = fleiss_kappa(&[vec![3, 0], vec![3, 0]], 3).unwrap();
        assert_eq!(d, Kappa { value: 1.0, degenerate: true });
    }

    #[test]
    fn kappa_validation() {
        assert_eq!(
            fleiss_kappa(&[vec![2, 0]], 3),
            Err(StatsError::RowSum { row: 0, sum: 2, n_raters: 3 })
        );
        assert_eq!(fleiss_kappa(&[], 3), Err(StatsError::NoItems));
        assert_eq!(fleiss_kappa(&[vec![1]], 1), Err(StatsError::TooFewRaters(1)));
    }

    #[test]
    fn score_aggregation() {
        assert_eq!(aggregate_scores(&[3.0, 3.0, 2.0, 2.0]).unwrap().0, 2.5);
        assert_eq!(aggregate_scores(&[3.0; 5]).unwrap(), (3.0, 0.0));
        assert_eq!(aggregate_scores(&[1.0, 1.0, 1.0, 0.0]).unwrap().0, 0.75);
        assert_eq!(aggregate_scores(&[]), Err(StatsError::EmptySet));
    }

    #[test]
    fn gate_examples() {
        use RealismOption::*;
        let mk = |v: &str, opts: &[RealismOption]| -> Vec<RatingRecord> {
            opts.iter().enumerate().map(|(i, &o)| RatingRecord::new(format!("r{i}"), v, o, 0)).collect()
        };
        let mut all = mk("v1", &[A, A, A, A]);
        all.extend(mk("v2", &[A, A, A, B]));
        all.extend(mk("v3", &[A, A]));
        let roster: Vec<String> = ["v1", "v2", "v3"].map(String::from).to_vec();
        let g = gate_for_clinical_review(&all, &roster, 4);
        assert_eq!(g.selected, vec!["v1"]);
        assert_eq!(g.incomplete, vec!["v3"]);
    }
}
