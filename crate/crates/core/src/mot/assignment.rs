//! Rectangular linear assignment (Hungarian method with potentials).
//!
//! Infinite costs mark forbidden pairs. The solver returns a matching of
//! maximum cardinality among admissible pairs and, among those, minimum total cost.

/// Assignment of rows to columns; `None` for unassigned rows.
pub type Assignment = Vec<Option<usize>>;

/// Solve the assignment problem for a `rows × cols` cost matrix.
///
/// Entries must be non-negative; `f64::INFINITY` (or NaN) forbids a pair.
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == cols), "cost matrix rows must have equal length");
    if cols == 0 {
        return vec![None; rows];
    }

    // Forbidden pairs get a penalty larger than any admissible total, so the
    // optimum first maximizes the number of admissible pairs.
    let finite_sum: f64 = cost.iter().flatten().filter(|c| c.is_finite()).map(|c| c.abs()).sum();
    let big = finite_sum + 1.0;
    let admissible = |r: usize, c: usize| cost[r][c].is_finite();

    let n = rows.max(cols);
    let mut square = vec![vec![big; n]; n];
    for r in 0..rows {
        for c in 0..cols {
            if admissible(r, c) {
                square[r][c] = cost[r][c];
            }
        }
    }

    let col_of_row = solve_square(&square);
    (0..rows)
        .map(|r| {
            let c = col_of_row[r];
            (c < cols && admissible(r, c)).then_some(c)
        })
        .collect()
}

/// Total cost of an assignment (admissible pairs only).
pub fn assignment_cost(cost: &[Vec<f64>], assignment: &Assignment) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum()
}

/// O(n³) shortest augmenting path solver for a dense square matrix.
fn solve_square(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    // 1-based internal indexing; index 0 is the virtual root column.
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
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
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

    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}
