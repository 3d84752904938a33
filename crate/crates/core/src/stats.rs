//! Small numeric helpers shared across modules.

/// Componentwise sum of equal-length vectors by recursive halving; the result depends
/// only on the input order.
pub fn pairwise_sum_paths(paths: &[Vec<f64>]) -> Vec<f64> {
    match paths.len() {
        0 => Vec::new(),
        1 => paths[0].clone(),
        n => {
            let (l, r) = paths.split_at(n / 2);
            let mut a = pairwise_sum_paths(l);
            let b = pairwise_sum_paths(r);
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            a
        }
    }
}

/// Nearest-rank percentile `p` in (0, 1] of the values (sorted internally).
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
