//! Exact max-weight one-to-one assignment.
//!
//! Used for detection↔track association and for event matching during
//! evaluation. Greedy matching is measurably worse on crossing objects, so
//! this is the real thing: the O(n³) shortest-augmenting-path Hungarian
//! method on a square padded cost matrix.

/// One-to-one assignment between rows and columns of `weights` maximizing the
/// total weight. Pairs with weight below `min_weight` are never matched.
///
/// `weights` is rectangular (rows × cols, either side may be empty). Returns
/// matched `(row, col)` pairs sorted by row. Deterministic: ties are broken
/// by index order.
pub fn max_weight_matching(weights: &[Vec<f64>], min_weight: f64) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    // Forbidden and padding cells cost 0; eligible cells cost -w so the
    // minimum-cost perfect matching maximizes the total eligible weight.
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols && weights[i][j] >= min_weight {
            -weights[i][j]
        } else {
            0.0
        }
    };

    // Potentials u/v over rows/cols, p[j] = row assigned to column j.
    // 1-based with column 0 as the virtual start, per the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
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
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = Vec::new();
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols && weights[i - 1][j - 1] >= min_weight {
            out.push((i - 1, j - 1));
        }
    }
    out.sort_unstable();
    out
}
