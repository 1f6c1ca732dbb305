//! Order statistics and rank correlation used by sweep aggregation and the
//! independence report.

/// Quantile by linear interpolation between order statistics, the same
/// convention across every report so reimplementations agree.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let idx = (sorted.len() - 1) as f64 * p;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (idx - lo as f64)
    }
}

/// Quantile over censored data: `None` sorts above every finite value. The
/// result is `None` whenever the interpolation touches a censored entry.
pub fn quantile_censored(values: &[Option<usize>], p: f64) -> Option<f64> {
    let mut finite: Vec<f64> = values.iter().flatten().map(|&v| v as f64).collect();
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return None;
    }
    let idx = (n - 1) as f64 * p;
    let hi = idx.ceil() as usize;
    if hi >= finite.len() {
        return None; // touches a censored entry
    }
    let lo = idx.floor() as usize;
    Some(if lo == hi {
        finite[lo]
    } else {
        finite[lo] + (finite[hi] - finite[lo]) * (idx - lo as f64)
    })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// series is constant (correlation undefined).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = (a.len() + 1) as f64 / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    if da == 0.0 || db == 0.0 {
        None
    } else {
        Some(num / (da * db).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_one_to_five() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert_eq!(quantile(&xs, 0.75), 4.0);
    }

    #[test]
    fn interpolated_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert!((quantile(&xs, 0.25) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn censored_median() {
        // half censored: median interpolates between 7 and +inf
        assert_eq!(quantile_censored(&[Some(5), Some(7), None, None], 0.5), None);
        assert_eq!(quantile_censored(&[Some(5), Some(7), Some(9), None], 0.5), Some(7.0));
        assert_eq!(quantile_censored(&[None, None], 0.5), None);
        assert_eq!(quantile_censored(&[Some(3)], 0.5), Some(3.0));
    }

    #[test]
    fn spearman_monotone_and_constant() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let up = [0.1, 0.5, 0.7, 0.9];
        let down = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&a, &up), Some(1.0));
        assert_eq!(spearman(&a, &down), Some(-1.0));
        assert_eq!(spearman(&a, &[2.0, 2.0, 2.0, 2.0]), None);
    }

    #[test]
    fn spearman_handles_ties() {
        let a = [1.0, 1.0, 2.0, 3.0];
        let b = [0.0, 0.0, 1.0, 2.0];
        let r = spearman(&a, &b).unwrap();
        assert!(r > 0.9);
    }
}
