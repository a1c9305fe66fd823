//! Slow reference implementations used to check the production algorithms.

/// Two-sided exact Mann-Whitney p by enumerating every size-n1 subset of the
/// pooled midranks.
pub fn mann_whitney_exact_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let ranks: Vec<f64> = pooled
        .iter()
        .map(|v| {
            let below = pooled.iter().filter(|w| *w < v).count() as f64;
            let equal = pooled.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks[..x.len()].iter().sum();
    let (mut total, mut lower, mut upper) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        total += 1;
        if s <= observed + 1e-9 {
            lower += 1;
        }
        if s >= observed - 1e-9 {
            upper += 1;
        }
    }
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

/// Benjamini-Hochberg rejections straight from the definition: reject
/// H_(i) for every i <= max{ i : p_(i) <= i * alpha / m }.
pub fn bh_reject(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut k = 0;
    for i in 1..=m {
        if sorted[i - 1] <= i as f64 * alpha / m as f64 {
            k = i;
        }
    }
    if k == 0 {
        return vec![false; m];
    }
    let threshold = sorted[k - 1];
    p.iter().map(|&v| v <= threshold).collect()
}

fn conditional_expectation(tree: &crate::models::DecisionTree, node: usize, x: &[f64], known: u64) -> f64 {
    let n = &tree.nodes[node];
    if n.is_leaf() {
        return n.p1;
    }
    let f = n.feature as usize;
    if known & (1 << f) != 0 {
        let next = if x[f] <= n.threshold { n.left } else { n.right };
        return conditional_expectation(tree, next as usize, x, known);
    }
    let (l, r) = (&tree.nodes[n.left as usize], &tree.nodes[n.right as usize]);
    let total = f64::from(n.n_samples);
    (f64::from(l.n_samples) * conditional_expectation(tree, n.left as usize, x, known)
        + f64::from(r.n_samples) * conditional_expectation(tree, n.right as usize, x, known))
        / total
}

/// Shapley values of the forest's mean H1 probability by enumerating every
/// feature subset, with absent features integrated out along training covers.
pub fn forest_shapley(forest: &crate::models::ForestModel, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    assert!(m <= 20, "brute force is exponential in the feature count");
    let value = |s: u64| forest.trees.iter().map(|t| conditional_expectation(t, 0, x, s)).sum::<f64>() / forest.trees.len() as f64;
    let values: Vec<f64> = (0..1u64 << m).map(value).collect();
    let fact: Vec<f64> = (0..=m).scan(1.0, |acc, i| {
        if i > 0 {
            *acc *= i as f64;
        }
        Some(*acc)
    }).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0..1u64 << m {
            if s & (1 << i) != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = fact[size] * fact[m - size - 1] / fact[m];
            *p += w * (values[(s | (1 << i)) as usize] - values[s as usize]);
        }
    }
    phi
}
