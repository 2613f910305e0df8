//! Student-t tail probabilities without a statistics dependency.
//!
//! The two-tailed p-value of `t` with `ν` degrees of freedom is
//! `I_x(ν/2, 1/2)` with `x = ν / (ν + t²)`, where `I` is the regularized
//! incomplete beta function. `I` is evaluated with the continued fraction of
//! Numerical Recipes §6.4 (modified Lentz, relative step below 1e-16, using
//! the symmetry `I_x(a,b) = 1 - I_{1-x}(b,a)` when `x > (a+1)/(a+b+2)` so the
//! fraction converges fast). `ln Γ` uses the Lanczos approximation with
//! g = 7 and nine coefficients (relative error around 1e-15).

use serde::{Deserialize, Serialize};

use super::MetricsError;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 1000;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
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

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `0 ≤ x ≤ 1`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Why a t statistic could not be formed normally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestDegeneracy {
    /// All differences are zero: t = 0, p = 1.
    NoDifference,
    /// All differences equal a nonzero constant: t is unbounded, p → 0.
    ConstantDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean_difference: f64,
    /// Absent when the differences are a nonzero constant.
    pub t: Option<f64>,
    pub p: f64,
    pub degenerate: Option<TTestDegeneracy>,
}

/// Paired two-sample t-test on `a[i] - b[i]`, two-tailed, `n - 1` df.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    ttest_on_differences(&d)
}

/// One-sample t-test of `differences` against zero.
pub fn ttest_on_differences(differences: &[f64]) -> Result<TTest, MetricsError> {
    let n = differences.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: n });
    }
    if let Some(v) = differences.iter().find(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(*v));
    }
    let nf = n as f64;
    let mean = differences.iter().sum::<f64>() / nf;
    let var = differences.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                n,
                mean_difference: 0.0,
                t: Some(0.0),
                p: 1.0,
                degenerate: Some(TTestDegeneracy::NoDifference),
            }
        } else {
            TTest {
                n,
                mean_difference: mean,
                t: None,
                p: 0.0,
                degenerate: Some(TTestDegeneracy::ConstantDifference),
            }
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    Ok(TTest {
        n,
        mean_difference: mean,
        t: Some(t),
        p: student_t_two_tailed(t, nf - 1.0),
        degenerate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ln_gamma_at_known_points() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1-x)^b.
        for &x in &[0.1, 0.37, 0.5, 0.93] {
            assert_abs_diff_eq!(regularized_incomplete_beta(1.0, 1.0, x), x, epsilon = 1e-14);
            assert_abs_diff_eq!(regularized_incomplete_beta(3.5, 1.0, x), x.powf(3.5), epsilon = 1e-13);
            assert_abs_diff_eq!(
                regularized_incomplete_beta(1.0, 2.5, x),
                1.0 - (1.0 - x).powf(2.5),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn cauchy_tail() {
        // One degree of freedom is the Cauchy distribution.
        for &t in &[0.3, 1.0, 2.0, 12.0] {
            let exact = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert_abs_diff_eq!(student_t_two_tailed(t, 1.0), exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_df_tail() {
        // With two degrees of freedom the tail is 1 - |t|/sqrt(2 + t^2).
        for &t in &[0.5, 1.7, 4.0] {
            let exact = 1.0 - t / f64::sqrt(2.0 + t * t);
            assert_abs_diff_eq!(student_t_two_tailed(t, 2.0), exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_differences() {
        let r = ttest_on_differences(&[1.0; 4]).unwrap();
        assert_eq!(r.degenerate, Some(TTestDegeneracy::ConstantDifference));
        assert_eq!(r.p, 0.0);
        let r = ttest_on_differences(&[0.0; 4]).unwrap();
        assert_eq!((r.t, r.p), (Some(0.0), 1.0));
    }

    #[test]
    fn alternating_differences_give_t_zero() {
        let r = ttest_on_differences(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(r.t, Some(0.0));
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn negating_differences_negates_t() {
        let d = [0.3, -0.1, 0.25, 0.4, 0.05];
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (a, b) = (ttest_on_differences(&d).unwrap(), ttest_on_differences(&neg).unwrap());
        assert_abs_diff_eq!(a.t.unwrap(), -b.t.unwrap(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.p, b.p, epsilon = 1e-15);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            ttest_on_differences(&[1.0]),
            Err(MetricsError::TooFewSamples { .. })
        ));
        assert!(matches!(
            paired_ttest(&[1.0, 2.0], &[1.0]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }
}
