//! Minimum-cost assignment (Hungarian algorithm, potentials form, `O(n^3)`).

use alloc::vec;
use alloc::vec::Vec;

/// Dense `n_rows x n_cols` cost matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_rows: usize, n_cols: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), n_rows * n_cols, "cost matrix shape mismatch");
        debug_assert!(entries.iter().all(|c| c.is_finite()));
        CostMatrix { n_rows, n_cols, entries }
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                entries.push(f(i, j));
            }
        }
        Self::new(n_rows, n_cols, entries)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_cols + j]
    }
}

/// Row/column pairs of an optimal assignment, ordered by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the assigned entries, accumulated in row order.
    pub cost: f64,
}

/// Cost cells added when squaring a rectangular matrix.
const PAD_COST: f64 = 1.0;

/// Globally cost-minimal assignment of size `min(n_rows, n_cols)`.
///
/// Rectangular inputs are padded to square with [`PAD_COST`]; pad pairs are
/// dropped from the output. Rows are inserted in ascending order and the first
/// minimal column wins each scan, so the result is deterministic.
pub fn hungarian(c: &CostMatrix) -> Assignment {
    let (rows, cols) = (c.n_rows, c.n_cols);
    if rows == 0 || cols == 0 {
        return Assignment { pairs: Vec::new(), cost: 0.0 };
    }
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            c.get(i, j)
        } else {
            PAD_COST
        }
    };

    // 1-based potentials; index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1]; // owner[j] = row matched to column j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of = vec![usize::MAX; n];
    for j in 1..=n {
        col_of[owner[j] - 1] = j - 1;
    }
    let mut pairs = Vec::with_capacity(rows.min(cols));
    let mut total = 0.0;
    for (i, &j) in col_of.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j));
            total += c.get(i, j);
        }
    }
    Assignment { pairs, cost: total }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over injective maps from the smaller side to the larger.
    pub(crate) fn brute_force_min(c: &CostMatrix) -> f64 {
        fn rec(c: &CostMatrix, transposed: bool, k: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let small = if transposed { c.n_cols() } else { c.n_rows() };
            if k == small {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for t in 0..used.len() {
                if used[t] {
                    continue;
                }
                used[t] = true;
                let e = if transposed { c.get(t, k) } else { c.get(k, t) };
                rec(c, transposed, k + 1, used, acc + e, best);
                used[t] = false;
            }
        }
        if c.n_rows() == 0 || c.n_cols() == 0 {
            return 0.0;
        }
        let transposed = c.n_rows() > c.n_cols();
        let large = c.n_rows().max(c.n_cols());
        let mut best = f64::INFINITY;
        rec(c, transposed, 0, &mut vec![false; large], 0.0, &mut best);
        best
    }

    #[test]
    fn identity_favouring_square() {
        let a = hungarian(&CostMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn anti_diagonal_square() {
        let c = CostMatrix::new(2, 2, vec![0.9, 0.1, 0.2, 0.8]);
        let a = hungarian(&c);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        // both permutations: 0.9 + 0.8 = 1.7 vs 0.1 + 0.2 = 0.3
        assert_eq!(brute_force_min(&c), 0.1 + 0.2);
        assert!((a.cost - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_row_picks_min_entry() {
        let a = hungarian(&CostMatrix::new(1, 3, vec![0.5, 0.2, 0.9]));
        assert_eq!(a.pairs, vec![(0, 1)]);
        let t = hungarian(&CostMatrix::new(3, 1, vec![0.5, 0.2, 0.9]));
        assert_eq!(t.pairs, vec![(1, 0)]);
    }

    #[test]
    fn empty_sides() {
        assert!(hungarian(&CostMatrix::new(0, 4, vec![])).pairs.is_empty());
        assert!(hungarian(&CostMatrix::new(3, 0, vec![])).pairs.is_empty());
    }

    fn dyadic_matrix() -> impl Strategy<Value = CostMatrix> {
        (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0u32..=64, r * c)
                .prop_map(move |v| CostMatrix::new(r, c, v.into_iter().map(|k| k as f64 / 64.0).collect()))
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(c in dyadic_matrix()) {
            let a = hungarian(&c);
            prop_assert_eq!(a.pairs.len(), c.n_rows().min(c.n_cols()));
            let mut rows: Vec<_> = a.pairs.iter().map(|p| p.0).collect();
            let mut cols: Vec<_> = a.pairs.iter().map(|p| p.1).collect();
            rows.dedup(); cols.sort_unstable(); cols.dedup();
            prop_assert_eq!(rows.len(), a.pairs.len());
            prop_assert_eq!(cols.len(), a.pairs.len());
            prop_assert_eq!(a.cost, brute_force_min(&c));
        }
    }
}
