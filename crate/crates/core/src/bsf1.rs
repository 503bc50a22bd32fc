//! Bipartite Soft-F1: result-set agreement under optimal row matching.
//!
//! Rows of the two result sets are paired by a minimum-cost assignment over
//! `1 - overlap`. A matched pair with overlap `m` contributes `m` to TP and
//! `1 - m` to both FP and FN; every unmatched row costs one full FP (SQL side)
//! or FN (reference side). Precision and recall are therefore measured in row
//! units.

use serde::{Deserialize, Serialize};

use crate::assign::{hungarian, CostMatrix};
use crate::result::{cell_class_counts, ResultSet, Row};

/// Fraction of cells two rows share, as a multiset under `values_equal`,
/// over the longer row's length. Two empty rows overlap fully.
pub fn overlap_ratio(a: &Row, b: &Row) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 1.0;
    }
    let ca = cell_class_counts(a);
    let cb = cell_class_counts(b);
    let shared: usize = ca
        .iter()
        .filter_map(|(k, &n)| cb.get(k).map(|&m| n.min(m)))
        .sum();
    shared as f64 / denom as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsF1Score {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BsF1Score {
    fn from_counts(tp: f64, fp: f64, fn_: f64) -> Self {
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        BsF1Score { tp, fp, fn_, precision, recall, f1 }
    }
}

/// Scores `e_sql` against the reference result `e_py`.
pub fn bsf1(e_sql: &ResultSet, e_py: &ResultSet) -> BsF1Score {
    let sql = e_sql.normalized();
    let py = e_py.normalized();
    let (n, m) = (sql.len(), py.len());
    if n == 0 && m == 0 {
        return BsF1Score { tp: 0.0, fp: 0.0, fn_: 0.0, precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let overlaps = CostMatrix::from_fn(n, m, |i, j| overlap_ratio(&sql.rows()[i], &py.rows()[j]));
    let costs = CostMatrix::from_fn(n, m, |i, j| 1.0 - overlaps.get(i, j));
    let assignment = hungarian(&costs);

    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for &(i, j) in &assignment.pairs {
        let o = overlaps.get(i, j);
        tp += o;
        fp += 1.0 - o;
        fn_ += 1.0 - o;
    }
    let matched = assignment.pairs.len();
    fp += (n - matched) as f64;
    fn_ += (m - matched) as f64;
    BsF1Score::from_counts(tp, fp, fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuelReason {
    ChampionWon,
    ChallengerWon,
    /// Equal scores; the champion keeps its majority-vote standing.
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuelOutcome {
    pub winner_index: usize,
    pub reason: DuelReason,
    pub s_champ: BsF1Score,
    pub s_chal: BsF1Score,
}

/// Picks whichever duel candidate agrees better with the reference result.
pub fn verdict(
    champion: usize,
    challenger: usize,
    e_champ: &ResultSet,
    e_chal: &ResultSet,
    e_py: &ResultSet,
) -> DuelOutcome {
    let s_champ = bsf1(e_champ, e_py);
    let s_chal = bsf1(e_chal, e_py);
    let (winner_index, reason) = if s_chal.f1 > s_champ.f1 {
        (challenger, DuelReason::ChallengerWon)
    } else if s_champ.f1 > s_chal.f1 {
        (champion, DuelReason::ChampionWon)
    } else {
        (champion, DuelReason::Tie)
    };
    DuelOutcome { winner_index, reason, s_champ, s_chal }
}
