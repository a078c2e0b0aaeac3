//! Maximum-weight one-to-one assignment via the Hungarian algorithm
//! (shortest augmenting paths with potentials, O(n^3)).

use ndarray::Array2;

/// Minimum-cost perfect matching on a square cost matrix; returns row -> col.
fn hungarian_min(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols());
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // matched_row[j): row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the stored path.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_to_col[matched_row[j] - 1] = j - 1;
    }
    row_to_col
}

/// One-to-one assignment maximizing total weight. Rectangular inputs are
/// padded with zero-weight entries; only real (row, col) pairs are returned,
/// so the result has `min(nrows, ncols)` pairs sorted by row.
pub fn max_weight_assignment(weights: &Array2<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = (weights.nrows(), weights.ncols());
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        if i < rows && j < cols {
            -weights[[i, j]]
        } else {
            0.0
        }
    });
    let row_to_col = hungarian_min(&cost);
    let mut pairs: Vec<(usize, usize)> = row_to_col
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < rows && j < cols)
        .collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for rest in permutations(n - 1) {
            for pos in 0..=rest.len() {
                let mut p = rest.clone();
                p.insert(pos, n - 1);
                out.push(p);
            }
        }
        out
    }

    fn brute_force_best(weights: &Array2<f64>) -> f64 {
        let (rows, cols) = (weights.nrows(), weights.ncols());
        let mut best = f64::NEG_INFINITY;
        if rows <= cols {
            for perm in permutations(cols) {
                let total: f64 = (0..rows).map(|i| weights[[i, perm[i]]]).sum();
                best = best.max(total);
            }
        } else {
            for perm in permutations(rows) {
                let total: f64 = (0..cols).map(|j| weights[[perm[j], j]]).sum();
                best = best.max(total);
            }
        }
        best
    }

    #[test]
    fn picks_the_obvious_diagonal() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(max_weight_assignment(&w), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn picks_the_off_diagonal_when_better() {
        let w = array![[0.1, 0.9], [0.8, 0.2]];
        assert_eq!(max_weight_assignment(&w), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_inputs_match_the_short_side() {
        let w = array![[0.9, 0.1, 0.5], [0.2, 0.8, 0.4]];
        let pairs = max_weight_assignment(&w);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
    }

    proptest! {
        #[test]
        fn matches_brute_force_total(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in 0u64..5000,
        ) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0));
            let pairs = max_weight_assignment(&w);
            // Valid one-to-one matching of the right size.
            prop_assert_eq!(pairs.len(), rows.min(cols));
            let mut seen_rows = std::collections::HashSet::new();
            let mut seen_cols = std::collections::HashSet::new();
            for &(i, j) in &pairs {
                prop_assert!(seen_rows.insert(i));
                prop_assert!(seen_cols.insert(j));
            }
            let total: f64 = pairs.iter().map(|&(i, j)| w[[i, j]]).sum();
            let best = brute_force_best(&w);
            prop_assert!((total - best).abs() < 1e-9, "total {total} vs brute force {best}");
        }
    }
}
