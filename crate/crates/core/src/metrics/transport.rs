//! Exact Wasserstein-1 distance between discrete mass distributions on the
//! pixel lattice, by primal-dual shortest augmenting paths.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Largest support (per side) accepted by the exact solver.
pub const MAX_SUPPORT: usize = 2048;

/// Reduced-cost slack under which an arc counts as tight.
const ADMISSIBLE: f64 = 1e-9;

/// A support point in pixel units with an integer mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassPoint {
    pub x: f64,
    pub y: f64,
    pub mass: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `(source index, target index, normalised mass)`.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn row_sums(&self, n: usize) -> Vec<f64> {
        let mut s = vec![0.0; n];
        for &(i, _, m) in &self.entries {
            s[i] += m;
        }
        s
    }

    pub fn col_sums(&self, n: usize) -> Vec<f64> {
        let mut s = vec![0.0; n];
        for &(_, j, m) in &self.entries {
            s[j] += m;
        }
        s
    }
}

/// Unit-mass support of a binary layer.
pub fn support(layer: ArrayView2<'_, bool>) -> Vec<MassPoint> {
    layer
        .indexed_iter()
        .filter(|(_, &b)| b)
        .map(|((i, j), _)| MassPoint {
            x: i as f64,
            y: j as f64,
            mass: 1,
        })
        .collect()
}

/// Sums `factor × factor` blocks of a binary layer into integer masses at
/// the block centres. Coordinates stay in original pixel units.
pub fn pooled_support(layer: ArrayView2<'_, bool>, factor: usize) -> Result<Vec<MassPoint>> {
    let (nx, ny) = layer.dim();
    if factor == 0 || nx % factor != 0 || ny % factor != 0 {
        return Err(Error::InvalidParameter(format!(
            "pooling factor {factor} does not divide {nx}x{ny}"
        )));
    }
    let off = (factor as f64 - 1.0) / 2.0;
    let mut out = Vec::new();
    for a in 0..nx / factor {
        for b in 0..ny / factor {
            let count = (0..factor)
                .flat_map(|i| (0..factor).map(move |j| (a * factor + i, b * factor + j)))
                .filter(|&p| layer[p])
                .count() as u64;
            if count > 0 {
                out.push(MassPoint {
                    x: (a * factor) as f64 + off,
                    y: (b * factor) as f64 + off,
                    mass: count,
                });
            }
        }
    }
    Ok(out)
}

fn dist(a: &MassPoint, b: &MassPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Exact W1 between the normalised distributions `src` and `dst` under the
/// Euclidean ground cost.
///
/// Masses are rescaled to integers (`src` by the total of `dst` and vice
/// versa) so both sides carry the same total and every augmentation is exact.
pub fn wasserstein1_points(src: &[MassPoint], dst: &[MassPoint]) -> Result<TransportPlan> {
    let total_s: u64 = src.iter().map(|p| p.mass).sum();
    let total_d: u64 = dst.iter().map(|p| p.mass).sum();
    if total_s == 0 || total_d == 0 {
        return Err(Error::EmptySupport(format!(
            "transport between masses {total_s} and {total_d}"
        )));
    }
    if src.len() > MAX_SUPPORT || dst.len() > MAX_SUPPORT {
        return Err(Error::InvalidParameter(format!(
            "support sizes {} and {} exceed the exact-solver cap of {MAX_SUPPORT}; pool the layers first",
            src.len(),
            dst.len()
        )));
    }
    let (p, q) = (src.len(), dst.len());
    let mut supply: Vec<u64> = src.iter().map(|s| s.mass * total_d).collect();
    let mut demand: Vec<u64> = dst.iter().map(|d| d.mass * total_s).collect();
    let cost: Vec<f64> = src
        .iter()
        .flat_map(|s| dst.iter().map(move |d| dist(s, d)))
        .collect();
    let mut flow = vec![0u64; p * q];
    // Mass shared by co-located points stays put: under a metric cost some
    // optimal plan does this, and zero potentials stay dual feasible.
    for (i, s) in src.iter().enumerate() {
        for (j, t) in dst.iter().enumerate() {
            if s.x == t.x && s.y == t.y {
                let m = supply[i].min(demand[j]);
                flow[i * q + j] += m;
                supply[i] -= m;
                demand[j] -= m;
            }
        }
    }
    // potentials: sources 0..p, sinks p..p+q
    let mut pot = vec![0.0f64; p + q];
    let n = p + q;
    let mut d = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut dead = vec![false; n];
    let mut on_path = vec![false; n];
    let mut ptr = vec![0usize; n];

    while supply.iter().any(|&s| s > 0) {
        d.iter_mut().for_each(|v| *v = f64::INFINITY);
        done.iter_mut().for_each(|v| *v = false);
        for i in 0..p {
            if supply[i] > 0 {
                d[i] = 0.0;
            }
        }
        // dense Dijkstra on reduced costs, up to the nearest open sink
        let mut reach = f64::INFINITY;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n {
                if !done[v] && d[v] < best {
                    best = d[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= p && demand[u - p] > 0 {
                reach = d[u];
                break;
            }
            if u < p {
                let row = &cost[u * q..(u + 1) * q];
                for j in 0..q {
                    let v = p + j;
                    if !done[v] {
                        d[v] = d[v].min(d[u] + (row[j] + pot[u] - pot[v]).max(0.0));
                    }
                }
            } else {
                let j = u - p;
                for i in 0..p {
                    if !done[i] && flow[i * q + j] > 0 {
                        d[i] = d[i].min(d[u] + (-cost[i * q + j] + pot[u] - pot[i]).max(0.0));
                    }
                }
            }
        }
        if !reach.is_finite() {
            return Err(Error::InvalidParameter("transport problem is infeasible".into()));
        }
        for v in 0..n {
            pot[v] += d[v].min(reach);
        }

        // augment along every path of zero reduced cost
        dead.iter_mut().for_each(|v| *v = false);
        ptr.iter_mut().for_each(|v| *v = 0);
        for s in 0..p {
            while supply[s] > 0 && !dead[s] {
                let mut path = vec![s];
                on_path[s] = true;
                let found = loop {
                    let Some(&u) = path.last() else { break false };
                    if u >= p && demand[u - p] > 0 {
                        break true;
                    }
                    let next = if u < p {
                        (ptr[u]..q).find(|&j| {
                            let v = p + j;
                            !dead[v] && !on_path[v] && cost[u * q + j] + pot[u] - pot[v] <= ADMISSIBLE
                        })
                        .map(|j| (j, p + j))
                    } else {
                        let j = u - p;
                        (ptr[u]..p).find(|&i| {
                            !dead[i]
                                && !on_path[i]
                                && flow[i * q + j] > 0
                                && -cost[i * q + j] + pot[u] - pot[i] <= ADMISSIBLE
                        })
                        .map(|i| (i, i))
                    };
                    match next {
                        Some((k, v)) => {
                            ptr[u] = k;
                            on_path[v] = true;
                            path.push(v);
                        }
                        None => {
                            dead[u] = true;
                            on_path[u] = false;
                            path.pop();
                            if let Some(&w) = path.last() {
                                ptr[w] += 1;
                            }
                        }
                    }
                };
                if !found {
                    break;
                }
                let t = *path.last().unwrap();
                let mut amount = supply[s].min(demand[t - p]);
                for w in path.windows(2) {
                    if w[0] >= p {
                        amount = amount.min(flow[w[1] * q + (w[0] - p)]);
                    }
                }
                for w in path.windows(2) {
                    if w[0] < p {
                        flow[w[0] * q + (w[1] - p)] += amount;
                    } else {
                        flow[w[1] * q + (w[0] - p)] -= amount;
                    }
                }
                supply[s] -= amount;
                demand[t - p] -= amount;
                path.iter().for_each(|&v| on_path[v] = false);
            }
        }
    }

    let scale = 1.0 / (total_s as f64 * total_d as f64);
    let mut entries = Vec::new();
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..q {
            let f = flow[i * q + j];
            if f > 0 {
                let m = f as f64 * scale;
                total += m * cost[i * q + j];
                entries.push((i, j, m));
            }
        }
    }
    Ok(TransportPlan { entries, cost: total })
}

/// W1 between two binary layers, each normalised to unit mass.
pub fn wasserstein1(f: ArrayView2<'_, bool>, g: ArrayView2<'_, bool>) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::shape(f.shape(), g.shape()));
    }
    Ok(wasserstein1_points(&support(f), &support(g))?.cost)
}

/// [`wasserstein1`] after explicit `factor × factor` mass pooling.
pub fn wasserstein1_pooled(f: ArrayView2<'_, bool>, g: ArrayView2<'_, bool>, factor: usize) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::shape(f.shape(), g.shape()));
    }
    Ok(wasserstein1_points(&pooled_support(f, factor)?, &pooled_support(g, factor)?)?.cost)
}
