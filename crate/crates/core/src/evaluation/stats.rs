/// Arithmetic mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn standard_error(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    population_std(values) / (values.len() as f64).sqrt()
}

/// Equal-tailed `level` acceptance region `[lo, hi]` for the count of
/// successes in `n` Bernoulli(`p`) trials: `P(X < lo) ≤ α/2` and
/// `P(X > hi) ≤ α/2` with `α = 1 − level`, both bounds as tight as possible.
pub fn binomial_interval(n: u64, p: f64, level: f64) -> (u64, u64) {
    assert!((0.0..=1.0).contains(&p) && level > 0.0 && level < 1.0);
    let tail = (1.0 - level) / 2.0;
    let pmf = binomial_pmf(n, p);
    let mut lo = 0u64;
    let mut below = 0.0;
    while lo < n && below + pmf[lo as usize] <= tail {
        below += pmf[lo as usize];
        lo += 1;
    }
    let mut hi = n;
    let mut above = 0.0;
    while hi > lo && above + pmf[hi as usize] <= tail {
        above += pmf[hi as usize];
        hi -= 1;
    }
    (lo, hi)
}

fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let n_us = n as usize;
    if p == 0.0 || p == 1.0 {
        let mut v = vec![0.0; n_us + 1];
        v[if p == 0.0 { 0 } else { n_us }] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log = Vec::with_capacity(n_us + 1);
    let mut log_choose = 0.0;
    for k in 0..=n_us {
        if k > 0 {
            log_choose += ((n_us - k + 1) as f64).ln() - (k as f64).ln();
        }
        log.push(log_choose + k as f64 * lp + (n_us - k) as f64 * lq);
    }
    log.into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&v), 2.5);
        assert!((population_std(&v) - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((standard_error(&v) - 1.25f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean(&[]), 0.0);
    }

    #[test]
    fn pmf_sums_to_one_and_matches_small_case() {
        let pmf = binomial_pmf(4, 0.5);
        let want = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        for (a, b) in pmf.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let total: f64 = binomial_pmf(1024, 1.0 / 256.0).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interval_contains_the_mean_and_respects_tails() {
        let (n, p) = (1024, 1.0 / 256.0);
        let (lo, hi) = binomial_interval(n, p, 0.99);
        assert!(lo <= 4 && 4 <= hi);
        let pmf = binomial_pmf(n, p);
        let below: f64 = pmf[..lo as usize].iter().sum();
        let above: f64 = pmf[hi as usize + 1..].iter().sum();
        assert!(below <= 0.005 && above <= 0.005);
        // One step tighter on either side would break the tail bound.
        assert!(below + pmf[lo as usize] > 0.005);
        assert!(above + pmf[hi as usize] > 0.005);
    }

    #[test]
    fn symmetric_case() {
        let (lo, hi) = binomial_interval(100, 0.5, 0.95);
        assert_eq!(lo + hi, 100);
        assert_eq!((lo, hi), (40, 60));
    }
}
