//! Exhaustive maximum-weight matching for small matrices.

/// Best total over all matchings that pair every row (when rows <= cols)
/// or every column (otherwise).
pub fn brute_force_max(m: &[Vec<f64>]) -> f64 {
    let rows = m.len();
    let cols = if rows == 0 { 0 } else { m[0].len() };
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m[i][j]).collect()).collect();
        return brute_force_max(&t);
    }
    let mut used = vec![false; cols];
    let mut best = f64::NEG_INFINITY;
    search(m, 0, &mut used, 0.0, &mut best);
    best
}

fn search(m: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
    if row == m.len() {
        *best = best.max(acc);
        return;
    }
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            search(m, row + 1, used, acc + m[row][j], best);
            used[j] = false;
        }
    }
}
