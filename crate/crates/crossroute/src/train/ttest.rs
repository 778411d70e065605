//! One-sided paired t-test via the regularized incomplete beta function
//! (continued-fraction evaluation).

/// P(T <= t) for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if t < 0.0 { 0.0 } else { 1.0 };
    }
    let x = df / (df + t * t);
    let p = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    if t <= 0.0 {
        p
    } else {
        1.0 - p
    }
}

/// One-sided paired test that `candidate` costs are lower than `incumbent`
/// costs. Returns the p-value of mean(candidate - incumbent) < 0; callers
/// compare against their significance level. Identical samples give p = 1.
pub fn paired_t_pvalue(candidate: &[f64], incumbent: &[f64]) -> f64 {
    assert_eq!(candidate.len(), incumbent.len());
    let n = candidate.len();
    if n < 2 {
        return 1.0;
    }
    let diffs: Vec<f64> = candidate.iter().zip(incumbent).map(|(c, i)| c - i).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    if mean >= 0.0 {
        return 1.0;
    }
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return 0.0; // uniformly better by a constant
    }
    let t = mean / (var / n as f64).sqrt();
    student_t_cdf(t, n as f64 - 1.0)
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-14;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 7] = [
        1.000000000190015,
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut ser = G[0];
    for (i, &g) in G.iter().enumerate().skip(1) {
        ser += g / (x + i as f64);
    }
    let tmp = x + 5.5;
    (2.5066282746310005 * ser / x).ln() - tmp + (x + 0.5) * tmp.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        // Classic table values: t_{0.05, df} quantiles.
        // df=10: P(T <= -1.8125) ≈ 0.05
        assert!((student_t_cdf(-1.8125, 10.0) - 0.05).abs() < 1e-3);
        // df=30: P(T <= -1.6973) ≈ 0.05
        assert!((student_t_cdf(-1.6973, 30.0) - 0.05).abs() < 1e-3);
        // symmetry and midpoint
        assert!((student_t_cdf(0.0, 7.0) - 0.5).abs() < 1e-12);
        let p = student_t_cdf(-2.0, 12.0) + student_t_cdf(2.0, 12.0);
        assert!((p - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identical_samples_never_significant() {
        let xs = vec![3.0, 4.0, 5.0, 6.0];
        assert_eq!(paired_t_pvalue(&xs, &xs), 1.0);
    }

    #[test]
    fn constant_improvement_is_certain() {
        let incumbent = vec![5.0, 6.0, 7.0, 8.0];
        let candidate: Vec<f64> = incumbent.iter().map(|c| c - 0.5).collect();
        assert_eq!(paired_t_pvalue(&candidate, &incumbent), 0.0);
    }

    #[test]
    fn synthetic_t_statistic_matches_direct_cdf() {
        // Construct diffs with known mean and variance: t = mean / (s/sqrt(n)).
        let incumbent = vec![0.0; 9];
        let candidate = vec![
            -0.3, -0.1, -0.5, -0.2, -0.4, -0.15, -0.35, -0.25, -0.45,
        ];
        let n = 9.0;
        let mean: f64 = candidate.iter().sum::<f64>() / n;
        let var: f64 = candidate.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let t = mean / (var / n).sqrt();
        let expect = student_t_cdf(t, n - 1.0);
        let got = paired_t_pvalue(&candidate, &incumbent);
        assert!((got - expect).abs() < 1e-12);
        assert!(got < 0.05, "clearly better: {got}");
    }

    #[test]
    fn worse_candidate_is_never_significant() {
        let incumbent = vec![1.0, 1.0, 1.0, 1.0];
        let candidate = vec![1.2, 1.1, 1.3, 1.25];
        assert_eq!(paired_t_pvalue(&candidate, &incumbent), 1.0);
    }
}
