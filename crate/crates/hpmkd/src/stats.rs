//! Small statistics toolkit: mean/std aggregation and paired t-tests with
//! Bonferroni correction for the multi-baseline comparisons.

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two
/// values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Two-sided paired t-test over equal-length observation vectors.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired test needs equal lengths, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput(
            "paired test needs at least 2 observations".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&diffs);
    let sd = sample_std(&diffs);
    let n = diffs.len() as f64;
    let df = diffs.len() - 1;
    if sd == 0.0 {
        // Degenerate: identical pairs give p = 1, any constant shift p = 0.
        return Ok(PairedTTest {
            mean_diff: m,
            t: if m == 0.0 { 0.0 } else { f64::INFINITY * m.signum() },
            df,
            p_value: if m == 0.0 { 1.0 } else { 0.0 },
        });
    }
    let t = m / (sd / n.sqrt());
    let x = df as f64 / (df as f64 + t * t);
    let p = betainc(df as f64 / 2.0, 0.5, x);
    Ok(PairedTTest {
        mean_diff: m,
        t,
        df,
        p_value: p,
    })
}

/// Per-comparison significance threshold under Bonferroni correction.
pub fn bonferroni_threshold(alpha: f64, comparisons: usize) -> f64 {
    alpha / comparisons.max(1) as f64
}

/// ln Gamma(x) by the Lanczos approximation (g = 7, 9 terms).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) by continued fraction.
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 200;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std_hand_instance() {
        // Five values with known mean and sample std.
        let xs = [2.0, 4.0, 4.0, 4.0, 6.0];
        assert_eq!(mean(&xs), 4.0);
        // Sum of squared deviations = 8; 8 / 4 = 2.
        assert!((sample_std(&xs) - 2.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[1.0]), 0.0);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(2.0)).abs() < 1e-12);
        // Gamma(5) = 24.
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-10);
        // Gamma(0.5) = sqrt(pi).
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-10);
    }

    #[test]
    fn t_distribution_quantiles() {
        // Two-sided p at the 97.5% quantile must be 0.05.
        let p = |t: f64, df: usize| betainc(df as f64 / 2.0, 0.5, df as f64 / (df as f64 + t * t));
        assert!((p(12.7062047362, 1) - 0.05).abs() < 1e-6);
        assert!((p(2.7764451052, 4) - 0.05).abs() < 1e-7);
        assert!((p(2.2281388520, 10) - 0.05).abs() < 1e-7);
    }

    #[test]
    fn paired_test_detects_constant_shift() {
        let a = [0.91, 0.93, 0.90, 0.92, 0.94];
        let b: Vec<f64> = a.iter().map(|x| x - 0.05).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.mean_diff - 0.05).abs() < 1e-12);
        assert_eq!(r.df, 4);
        assert_eq!(r.p_value, 0.0); // zero-variance differences
    }

    #[test]
    fn paired_test_identical_vectors() {
        let a = [0.5, 0.6, 0.7];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn paired_test_noisy_shift() {
        let a = [1.02, 1.05, 0.98, 1.03, 1.01, 0.99];
        let b = [0.90, 0.93, 0.88, 0.91, 0.89, 0.92];
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.t > 4.0, "t = {}", r.t);
        assert!(r.p_value < 0.05);
        assert!(r.p_value > 0.0);
    }

    #[test]
    fn paired_test_input_validation() {
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn bonferroni() {
        assert!((bonferroni_threshold(0.05, 3) - 0.05 / 3.0).abs() < 1e-15);
        assert_eq!(bonferroni_threshold(0.05, 0), 0.05);
    }
}
