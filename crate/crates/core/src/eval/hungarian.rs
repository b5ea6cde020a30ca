//! Maximum-weight assignment on rectangular score matrices.
//!
//! Shortest augmenting path form of the Hungarian algorithm with row/column
//! potentials, O(n²·m) for an n×m problem with n ≤ m. Scores are negated into
//! costs; wider-than-tall inputs are solved transposed.

/// An injective partial assignment of `min(R, C)` row/column pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(row, col)` pairs, ascending by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of matched scores, accumulated in row order.
    pub total: f64,
}

impl Matching {
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }
}

fn total_of(scores: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| scores[r][c]).sum()
}

/// Assignment maximizing the summed score. Rows must share one length.
pub fn hungarian_match(scores: &[Vec<f64>]) -> Matching {
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    assert!(
        scores.iter().all(|r| r.len() == cols),
        "ragged score matrix"
    );
    if rows == 0 || cols == 0 {
        return Matching {
            pairs: Vec::new(),
            total: 0.0,
        };
    }
    let mut pairs = if rows <= cols {
        solve_min(&|r, c| -scores[r][c], rows, cols)
    } else {
        solve_min(&|r, c| -scores[c][r], cols, rows)
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    let total = total_of(scores, &pairs);
    Matching { pairs, total }
}

/// Minimum-cost assignment of every row for an `n × m` cost, `n <= m`.
fn solve_min(cost: &dyn Fn(usize, usize) -> f64, n: usize, m: usize) -> Vec<(usize, usize)> {
    // 1-based arrays; column 0 is the virtual start column.
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
    (1..=m)
        .filter(|&j| row_of_col[j] != 0)
        .map(|j| (row_of_col[j] - 1, j - 1))
        .collect()
}

/// [`hungarian_match`] with columns first sorted by their score vectors.
/// Identical inputs up to a column permutation then give every row the
/// same matched score, so the result does not depend on column labels.
pub fn column_invariant_match(scores: &[Vec<f64>]) -> Matching {
    let cols = scores.first().map_or(0, Vec::len);
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| {
        scores
            .iter()
            .map(|row| row[b].total_cmp(&row[a]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| order.iter().map(|&c| row[c]).collect())
        .collect();
    let m = hungarian_match(&sorted);
    let pairs: Vec<(usize, usize)> = m.pairs.iter().map(|&(r, c)| (r, order[c])).collect();
    Matching {
        total: total_of(scores, &pairs),
        pairs,
    }
}

/// Greedy alternative: repeatedly take the largest remaining score.
/// Ties go to the lowest `(row, col)`.
pub fn greedy_match(scores: &[Vec<f64>]) -> Matching {
    let mut cells: Vec<(usize, usize)> = scores
        .iter()
        .enumerate()
        .flat_map(|(r, row)| (0..row.len()).map(move |c| (r, c)))
        .collect();
    cells.sort_by(|&(r1, c1), &(r2, c2)| {
        scores[r2][c2]
            .total_cmp(&scores[r1][c1])
            .then((r1, c1).cmp(&(r2, c2)))
    });
    let rows = scores.len();
    let cols = scores.first().map_or(0, Vec::len);
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut pairs = Vec::new();
    for (r, c) in cells {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            pairs.push((r, c));
        }
    }
    pairs.sort_unstable();
    let total = total_of(scores, &pairs);
    Matching { pairs, total }
}
