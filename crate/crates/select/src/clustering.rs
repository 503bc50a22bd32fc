//! Executing the candidates on the real database and grouping them.

use mdd_select_core::{canonicalize, cluster_outcomes, select_duel, Cluster, DuelSelection};
use serde::{Deserialize, Serialize};

use crate::sqlite::{execute_sql, Database, ExecOutcome};

/// One question's candidates, in generation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub question_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: Option<String>,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub outcomes: Vec<ExecOutcome>,
    pub clusters: Vec<Cluster>,
    pub selection: DuelSelection,
}

impl Clustering {
    /// The self-consistency choice.
    pub fn majority(&self) -> usize {
        self.selection.champion()
    }
}

/// Serializable summary of one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterSummary {
    pub member_indices: Vec<usize>,
    pub representative_index: usize,
    pub is_error_cluster: bool,
}

impl From<&Cluster> for ClusterSummary {
    fn from(c: &Cluster) -> Self {
        ClusterSummary {
            member_indices: c.member_indices.clone(),
            representative_index: c.representative_index,
            is_error_cluster: c.is_error_cluster,
        }
    }
}

/// Executes each candidate once and clusters by canonical result.
pub fn cluster_candidates(db: &Database, candidates: &[String], timeout_ms: u64) -> Clustering {
    let outcomes: Vec<ExecOutcome> = candidates.iter().map(|sql| execute_sql(db, sql, timeout_ms)).collect();
    let forms: Vec<_> = outcomes.iter().map(|o| o.result.as_ref().ok().map(canonicalize)).collect();
    let clusters = cluster_outcomes(&forms);
    let selection = select_duel(&clusters);
    Clustering { outcomes, clusters, selection }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdd_select_core::DuelPair;

    fn db() -> Database {
        let db = Database::in_memory("c").unwrap();
        db.execute_batch(
            "CREATE TABLE t (a INTEGER, b TEXT);
             INSERT INTO t VALUES (2, 'x');
             INSERT INTO t VALUES (1, 'y');
             CREATE INDEX t_a ON t (a);",
        )
        .unwrap();
        db
    }

    fn sqls(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn definition_example() {
        let c = cluster_candidates(
            &db(),
            &sqls(&["SELECT a FROM t", "SELECT a FROM t ORDER BY a", "SELECT a FROM t WHERE 1", "SELECT b FROM t", "SELECT nope FROM t"]),
            1_000,
        );
        let members: Vec<_> = c.clusters.iter().map(|c| c.member_indices.clone()).collect();
        assert_eq!(members, vec![vec![0, 1, 2], vec![3], vec![4]]);
        assert!(c.clusters[2].is_error_cluster);
        assert_eq!(
            c.selection,
            DuelSelection::Duel(DuelPair { champion_index: 0, challenger_index: 3, champion_cluster_size: 3, challenger_cluster_size: 1 })
        );
    }

    #[test]
    fn reversed_row_orders_co_cluster() {
        let db = db();
        // pinned plans: table scan (insertion order 2, 1) vs index scan (1, 2)
        let by_rowid = "SELECT a FROM t NOT INDEXED";
        let by_index = "SELECT a FROM t INDEXED BY t_a WHERE a > 0";
        let r1 = execute_sql(&db, by_rowid, 1_000).result.unwrap();
        let r2 = execute_sql(&db, by_index, 1_000).result.unwrap();
        assert_ne!(r1.rows(), r2.rows(), "the construction needs differently ordered raw results");
        let mut rev = r1.rows().to_vec();
        rev.reverse();
        assert_eq!(rev, r2.rows());
        let c = cluster_candidates(&db, &sqls(&[by_rowid, by_index]), 1_000);
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.selection, DuelSelection::ChampionOnly(0));
    }
}
