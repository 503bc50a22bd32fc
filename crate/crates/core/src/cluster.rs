//! Execution-consistency clustering and champion/challenger selection.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::result::CanonicalForm;

/// Candidates whose executions produced the same canonical result, or,
/// for the error cluster, every candidate that failed to execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Ascending candidate indices.
    pub member_indices: Vec<usize>,
    /// `None` only for the error cluster.
    pub canonical: Option<CanonicalForm>,
    pub representative_index: usize,
    pub is_error_cluster: bool,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.member_indices.len()
    }
}

/// Groups execution outcomes (`None` = execution error) by canonical result.
///
/// Successful clusters come first, sorted by size descending then
/// representative ascending; the error cluster, if any, is last.
pub fn cluster_outcomes(outcomes: &[Option<CanonicalForm>]) -> Vec<Cluster> {
    let mut groups: BTreeMap<&CanonicalForm, Vec<usize>> = BTreeMap::new();
    let mut failed = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            Some(form) => groups.entry(form).or_default().push(i),
            None => failed.push(i),
        }
    }
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|(form, members)| Cluster {
            representative_index: members[0],
            member_indices: members,
            canonical: Some(form.clone()),
            is_error_cluster: false,
        })
        .collect();
    clusters.sort_by(|a, b| {
        b.size()
            .cmp(&a.size())
            .then(a.representative_index.cmp(&b.representative_index))
    });
    if !failed.is_empty() {
        clusters.push(Cluster {
            representative_index: failed[0],
            member_indices: failed,
            canonical: None,
            is_error_cluster: true,
        });
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuelPair {
    pub champion_index: usize,
    pub challenger_index: usize,
    pub champion_cluster_size: usize,
    pub challenger_cluster_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DuelSelection {
    Duel(DuelPair),
    ChampionOnly(usize),
    /// Every candidate failed; candidate 0 is returned.
    AllFailed(usize),
}

impl DuelSelection {
    /// The majority-vote choice: largest successful cluster's representative.
    pub fn champion(&self) -> usize {
        match *self {
            DuelSelection::Duel(d) => d.champion_index,
            DuelSelection::ChampionOnly(i) | DuelSelection::AllFailed(i) => i,
        }
    }
}

/// Picks the representatives of the two largest successful clusters.
///
/// Expects clusters ordered as [`cluster_outcomes`] returns them; the order
/// is re-established here so hand-built inputs behave the same.
pub fn select_duel(clusters: &[Cluster]) -> DuelSelection {
    let mut ok: Vec<&Cluster> = clusters.iter().filter(|c| !c.is_error_cluster).collect();
    ok.sort_by(|a, b| {
        b.size()
            .cmp(&a.size())
            .then(a.representative_index.cmp(&b.representative_index))
    });
    match ok.as_slice() {
        [] => DuelSelection::AllFailed(0),
        [only] => DuelSelection::ChampionOnly(only.representative_index),
        [champ, chal, ..] => DuelSelection::Duel(DuelPair {
            champion_index: champ.representative_index,
            challenger_index: chal.representative_index,
            champion_cluster_size: champ.size(),
            challenger_cluster_size: chal.size(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::result::{canonicalize, AtomicValue, ResultSet, Row};
    use alloc::vec;
    use proptest::prelude::*;

    fn form(n: i64) -> Option<CanonicalForm> {
        Some(canonicalize(&ResultSet::from_rows(vec![Row(vec![AtomicValue::Integer(n)])])))
    }

    #[test]
    fn groups_and_orders() {
        let c = cluster_outcomes(&[form(1), form(1), form(1), form(2), None]);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].member_indices, vec![0, 1, 2]);
        assert_eq!(c[1].member_indices, vec![3]);
        assert!(c[2].is_error_cluster && c[2].member_indices == vec![4]);
        assert_eq!(
            select_duel(&c),
            DuelSelection::Duel(DuelPair {
                champion_index: 0,
                challenger_index: 3,
                champion_cluster_size: 3,
                challenger_cluster_size: 1
            })
        );
    }

    #[test]
    fn single_and_failed() {
        let c = cluster_outcomes(&vec![form(5); 5]);
        assert_eq!(c.len(), 1);
        assert_eq!(select_duel(&c), DuelSelection::ChampionOnly(0));
        let c = cluster_outcomes(&[None, None, None]);
        assert_eq!(select_duel(&c), DuelSelection::AllFailed(0));
        assert_eq!(select_duel(&cluster_outcomes(&[None, form(2)])), DuelSelection::ChampionOnly(1));
    }

    #[test]
    fn equal_sizes_break_on_representative() {
        // {1,3} and {0,2}: the cluster represented by 0 is champion
        let c = cluster_outcomes(&[form(9), form(4), form(9), form(4)]);
        let DuelSelection::Duel(d) = select_duel(&c) else { panic!() };
        assert_eq!((d.champion_index, d.challenger_index), (0, 1));
        let rev: Vec<Cluster> = c.iter().rev().cloned().collect();
        assert_eq!(select_duel(&rev), select_duel(&c));
    }

    proptest! {
        #[test]
        fn partition_and_permutation_invariance(labels in proptest::collection::vec(proptest::option::of(0i64..4), 1..12), rot in 0usize..12) {
            let outcomes: Vec<_> = labels.iter().map(|l| l.and_then(form_opt)).collect();
            let clusters = cluster_outcomes(&outcomes);
            let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.member_indices.iter().copied()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..outcomes.len()).collect::<Vec<_>>());
            for c in &clusters {
                prop_assert_eq!(c.representative_index, c.member_indices[0]);
                for &m in &c.member_indices {
                    prop_assert_eq!(&outcomes[m], &c.canonical);
                }
            }
            let mut rotated = outcomes.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let mut a: Vec<_> = clusters.iter().map(|c| (c.canonical.clone(), c.size())).collect();
            let mut b: Vec<_> = cluster_outcomes(&rotated).iter().map(|c| (c.canonical.clone(), c.size())).collect();
            a.sort(); b.sort();
            prop_assert_eq!(a, b);
        }
    }

    fn form_opt(n: i64) -> Option<CanonicalForm> {
        form(n)
    }
}
