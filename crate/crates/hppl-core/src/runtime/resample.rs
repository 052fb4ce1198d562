//! Weight arithmetic and systematic resampling.

pub fn logsumexp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Normalized weights plus the log of their unnormalized sum.
pub fn normalize_log_weights(logs: &[f64]) -> (Vec<f64>, f64) {
    let lse = logsumexp(logs);
    let norm = logs.iter().map(|l| (l - lse).exp()).collect();
    (norm, lse)
}

/// Systematic resampling: one uniform positions a comb of `n` evenly spaced
/// points over the cumulative weights. Ancestors come out in ascending
/// order.
pub fn systematic(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cum = weights[0];
    for j in 0..n {
        let p = (u + j as f64) / n as f64;
        while p > cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_direct_sum() {
        let logs = [0.0_f64.ln(), 0.5_f64.ln(), 0.25_f64.ln()];
        assert!((logsumexp(&logs) - 0.75_f64.ln()).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn systematic_counts_match_weights() {
        let w = [0.5, 0.25, 0.125, 0.125];
        let anc = systematic(&w, 0.3);
        assert_eq!(anc.len(), 4);
        assert!(anc.windows(2).all(|p| p[0] <= p[1]));
        let hits0 = anc.iter().filter(|&&a| a == 0).count();
        assert_eq!(hits0, 2);
    }

    #[test]
    fn degenerate_weight_takes_all() {
        let w = [0.0, 1.0, 0.0];
        let anc = systematic(&w, 0.99);
        assert!(anc.iter().all(|&a| a == 1));
    }
}
