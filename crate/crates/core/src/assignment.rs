//! Exact rectangular linear assignment (Hungarian method with potentials).

use crate::tensor::Matrix;

/// Minimum-cost injective assignment of the smaller side of `cost` into the
/// larger side. Returns `(row, col)` pairs sorted by row.
///
/// Runs in `O(n^2 m)` for `n = min(rows, cols)`, `m = max(rows, cols)`.
/// Equivalent to zero-padding to a square matrix and discarding the padded
/// assignments. Costs must be finite.
pub fn solve_min(cost: &Matrix) -> Vec<(usize, usize)> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows <= cols {
        solve_wide(rows, cols, |r, c| cost.get(r, c))
    } else {
        let mut pairs: Vec<_> = solve_wide(cols, rows, |r, c| cost.get(c, r))
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Maximum-score assignment; see [`solve_min`].
pub fn solve_max(score: &Matrix) -> Vec<(usize, usize)> {
    solve_min(&score.map(|v| -v))
}

// Shortest augmenting path with dual potentials, n <= m.
fn solve_wide(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    debug_assert!(n <= m);
    // 1-based internally; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut row_of_col = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| row_of_col[j] != 0)
        .map(|j| (row_of_col[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_three_by_three() {
        let cost = Matrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]).unwrap();
        let pairs = solve_min(&cost);
        let total: f64 = pairs.iter().map(|&(r, c)| cost.get(r, c)).sum();
        assert_eq!(total, 5.0);
        assert_eq!(pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn tall_and_wide_cover_smaller_side() {
        let wide = Matrix::from_rows(&[[5.0, 1.0, 9.0, 2.0], [1.0, 8.0, 8.0, 3.0]]).unwrap();
        assert_eq!(solve_min(&wide), vec![(0, 1), (1, 0)]);
        let tall = wide.transpose();
        assert_eq!(solve_min(&tall), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn maximisation_and_empty() {
        let s = Matrix::from_rows(&[[0.9, 0.1], [0.8, 0.7]]).unwrap();
        assert_eq!(solve_max(&s), vec![(0, 0), (1, 1)]);
        assert!(solve_min(&Matrix::zeros(0, 3)).is_empty());
        assert!(solve_min(&Matrix::zeros(3, 0)).is_empty());
    }
}
