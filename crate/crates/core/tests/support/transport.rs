//! Brute-force optimal transport between small uniform point clouds.

/// W1 between uniform distributions on `src` and `dst`, by enumerating every
/// integral flow with row sums `q` and column sums `p` (the transportation
/// polytope is integral, so some optimum is among them).
pub fn w1_enumerate(src: &[(f64, f64)], dst: &[(f64, f64)]) -> f64 {
    let (p, q) = (src.len(), dst.len());
    assert!(p > 0 && q > 0 && p <= 4 && q <= 4);
    let cost: Vec<Vec<f64>> = src
        .iter()
        .map(|a| dst.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
        .collect();
    let mut cols = vec![p as u64; q];
    let mut best = f64::INFINITY;
    rows(0, &cost, q as u64, &mut cols, 0.0, &mut best);
    best / (p * q) as f64
}

fn rows(i: usize, cost: &[Vec<f64>], row_total: u64, cols: &mut [u64], acc: f64, best: &mut f64) {
    if i == cost.len() {
        if cols.iter().all(|&c| c == 0) {
            *best = best.min(acc);
        }
        return;
    }
    fill(i, 0, row_total, cost, row_total, cols, acc, best);
}

#[allow(clippy::too_many_arguments)]
fn fill(i: usize, j: usize, left: u64, cost: &[Vec<f64>], row_total: u64, cols: &mut [u64], acc: f64, best: &mut f64) {
    let q = cols.len();
    if j == q - 1 {
        if left <= cols[j] {
            cols[j] -= left;
            rows(i + 1, cost, row_total, cols, acc + left as f64 * cost[i][j], best);
            cols[j] += left;
        }
        return;
    }
    for x in 0..=left.min(cols[j]) {
        cols[j] -= x;
        fill(i, j + 1, left - x, cost, row_total, cols, acc + x as f64 * cost[i][j], best);
        cols[j] += x;
    }
}
