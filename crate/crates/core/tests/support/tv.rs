//! Slow reference for the TV proximal problem: plain projected gradient on
//! the dual, run for many iterations.

use ndarray::{Array2, ArrayView2};

fn tv(u: &Array2<f64>) -> f64 {
    let (p, q) = u.dim();
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..q {
            if i + 1 < p {
                s += (u[(i + 1, j)] - u[(i, j)]).abs();
            }
            if j + 1 < q {
                s += (u[(i, j + 1)] - u[(i, j)]).abs();
            }
        }
    }
    s
}

pub fn objective(u: &Array2<f64>, x: ArrayView2<'_, f64>, weight: f64) -> f64 {
    0.5 * u.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + weight * tv(u)
}

/// `Dᵀ w` for vertical duals `a` ((P−1)×Q) and horizontal duals `b` (P×(Q−1)).
fn div_t(a: &Array2<f64>, b: &Array2<f64>, p: usize, q: usize) -> Array2<f64> {
    let mut out = Array2::zeros((p, q));
    for i in 0..p.saturating_sub(1) {
        for j in 0..q {
            out[(i + 1, j)] += a[(i, j)];
            out[(i, j)] -= a[(i, j)];
        }
    }
    for i in 0..p {
        for j in 0..q.saturating_sub(1) {
            out[(i, j + 1)] += b[(i, j)];
            out[(i, j)] -= b[(i, j)];
        }
    }
    out
}

/// Minimiser of `½‖u − x‖² + κ TV(u)` by projected gradient on the dual
/// with step `1/8`, returning the best primal iterate and its objective.
pub fn tv_prox_reference(x: ArrayView2<'_, f64>, weight: f64, iters: usize) -> (Array2<f64>, f64) {
    let (p, q) = x.dim();
    let mut a = Array2::<f64>::zeros((p.saturating_sub(1), q));
    let mut b = Array2::<f64>::zeros((p, q.saturating_sub(1)));
    let mut best = x.to_owned();
    let mut best_obj = objective(&best, x, weight);
    let step = 1.0 / (8.0 * weight);
    for _ in 0..iters {
        let u = &x - &(div_t(&a, &b, p, q) * weight);
        let obj = objective(&u, x, weight);
        if obj < best_obj {
            best_obj = obj;
            best = u.clone();
        }
        // ascent direction of the dual: κ D u
        for i in 0..p.saturating_sub(1) {
            for j in 0..q {
                a[(i, j)] = (a[(i, j)] + step * (u[(i + 1, j)] - u[(i, j)])).clamp(-1.0, 1.0);
            }
        }
        for i in 0..p {
            for j in 0..q.saturating_sub(1) {
                b[(i, j)] = (b[(i, j)] + step * (u[(i, j + 1)] - u[(i, j)])).clamp(-1.0, 1.0);
            }
        }
    }
    (best, best_obj)
}
