//! Slow, obviously-correct reference computations used to check the fast
//! engines in `qxai`. Nothing here shares code with the library.

/// Shapley values by averaging marginal contributions over all `n!` player
/// orders. `v` takes a coalition bitmask.
pub fn shapley_by_permutations(n: usize, v: impl Fn(u32) -> f64) -> Vec<f64> {
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut count = 0usize;
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; n];
    let visit = |order: &[usize], phi: &mut [f64]| {
        let mut mask = 0u32;
        let mut prev = v(0);
        for &p in order {
            mask |= 1 << p;
            let cur = v(mask);
            phi[p] += cur - prev;
            prev = cur;
        }
    };
    visit(&order, &mut phi);
    count += 1;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order, &mut phi);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    phi.iter().map(|p| p / count as f64).collect()
}

/// Hyndman-Fan type 7 sample quantile.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// First-order ALE by direct counting. Bins are `(lo, hi]` except the first,
/// which also holds its left edge; the result is centered so the
/// sample-average of the piecewise-linear curve is zero.
/// Returns `(edges, effects)` with one effect per edge.
pub fn brute_force_ale(
    f: &dyn Fn(&[f64]) -> f64,
    background: &[Vec<f64>],
    feature: usize,
    n_bins: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut col: Vec<f64> = background.iter().map(|r| r[feature]).collect();
    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut edges: Vec<f64> = Vec::new();
    for k in 0..=n_bins {
        let e = quantile_type7(&col, k as f64 / n_bins as f64);
        if edges.last() != Some(&e) {
            edges.push(e);
        }
    }
    if edges.len() < 2 {
        return (vec![edges[0], edges[0]], vec![0.0, 0.0]);
    }
    let in_bin = |b: usize, x: f64| {
        let (lo, hi) = (edges[b], edges[b + 1]);
        (x > lo || (b == 0 && x == lo)) && x <= hi
    };
    let mut effects = vec![0.0];
    for b in 0..edges.len() - 1 {
        let mut total = 0.0;
        let mut n = 0;
        for row in background {
            if !in_bin(b, row[feature]) {
                continue;
            }
            let mut up = row.clone();
            up[feature] = edges[b + 1];
            let mut down = row.clone();
            down[feature] = edges[b];
            total += f(&up) - f(&down);
            n += 1;
        }
        let step = if n == 0 { 0.0 } else { total / n as f64 };
        effects.push(effects[b] + step);
    }
    let at = |x: f64| {
        let b = (0..edges.len() - 1).find(|&b| in_bin(b, x)).expect("sample inside the edge range");
        let t = (x - edges[b]) / (edges[b + 1] - edges[b]);
        effects[b] + t * (effects[b + 1] - effects[b])
    };
    let mean = background.iter().map(|r| at(r[feature])).sum::<f64>() / background.len() as f64;
    let effects = effects.iter().map(|e| e - mean).collect();
    (edges, effects)
}

/// `sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij`.
pub fn svm_dual_value(k: &[Vec<f64>], y: &[f64], a: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * y[i] * y[j] * k[i][j];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 <= a <= c, y.a = 0}` by bisection on the
/// multiplier of the equality.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect() };
    let g = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    // g is non-increasing in lam
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Maximizes the soft-margin dual with accelerated projected gradient.
/// Returns the coefficients and the dual objective.
pub fn svm_dual_reference(k: &[Vec<f64>], y: &[f64], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect()).collect();
    let lipschitz = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(1e-12, f64::max);
    let step = 1.0 / lipschitz;
    let mut a = project(&vec![0.0; n], y, c);
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        // ascent on sum(a) - 1/2 a'Qa: gradient 1 - Qz
        let grad: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| q[i][j] * z[j]).sum::<f64>()).collect();
        let next = project(&z.iter().zip(&grad).map(|(zi, gi)| zi + step * gi).collect::<Vec<_>>(), y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next.iter().zip(&a).map(|(n1, a0)| n1 + (t - 1.0) / t_next * (n1 - a0)).collect();
        a = next;
        t = t_next;
    }
    let obj = svm_dual_value(k, y, &a);
    (a, obj)
}

/// Largest violation of the soft-margin KKT conditions for decision values
/// `f_i = sum_j a_j y_j K_ij + b`. Coefficients within `eps` of a bound count
/// as at that bound.
pub fn svm_kkt_residual(k: &[Vec<f64>], y: &[f64], a: &[f64], b: f64, c: f64) -> f64 {
    let n = y.len();
    let eps = 1e-8 * c.max(1.0);
    let mut worst = 0.0f64;
    for i in 0..n {
        let f = (0..n).map(|j| a[j] * y[j] * k[i][j]).sum::<f64>() + b;
        let m = y[i] * f;
        let v = if a[i] <= eps {
            (1.0 - m).max(0.0)
        } else if a[i] >= c - eps {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    let balance: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
    worst.max(balance.abs())
}
