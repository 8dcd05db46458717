//! Welch's t-test, OLS with a slope test, and small summary helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("sample {which} has {len} values; at least 2 are needed")]
    TooShort { which: char, len: usize },
    #[error("regression needs at least 3 points with distinct x")]
    Regression,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator); zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Two-sided tail probability of a t statistic.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Upper quantile t_{1−a/2, df}.
pub fn t_critical(a: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - a / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Both samples had zero variance; t and p follow the convention
    /// (0 and 1 for equal means, ±∞ and 0 otherwise).
    pub degenerate: bool,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    for (which, s) in [('a', a), ('b', b)] {
        if s.len() < 2 {
            return Err(StatsError::TooShort { which, len: s.len() });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Ok(WelchResult {
            t,
            df: na + nb - 2.0,
            p: if diff == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(WelchResult {
        t,
        df,
        p: two_sided_p(t, df),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t: f64,
    /// Two-sided p-value for slope = 0.
    pub p: f64,
    pub n: usize,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<OlsFit, StatsError> {
    let n = x.len().min(y.len());
    if n < 3 {
        return Err(StatsError::Regression);
    }
    let (x, y) = (&x[..n], &y[..n]);
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(StatsError::Regression);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let df = (n - 2) as f64;
    let slope_se = (sse / df / sxx).sqrt();
    let t = if slope_se == 0.0 {
        slope.signum() * f64::INFINITY
    } else {
        slope / slope_se
    };
    Ok(OlsFit {
        slope,
        intercept,
        slope_se,
        t,
        p: if slope == 0.0 { 1.0 } else { two_sided_p(t, df) },
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_hand_example() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        // t = -1 / sqrt(2/3), df = (2/3)^2 / (2 * (1/3)^2 / 2) = 4
        assert!((r.t + 1.224744871391589).abs() < 1e-12);
        assert!((r.df - 4.0).abs() < 1e-12);
        assert!((r.p - 0.2878).abs() < 1e-4, "{}", r.p);
    }

    #[test]
    fn welch_identical_and_degenerate() {
        let a = [0.3, 0.5, 0.7];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        let d = welch_t_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(d.degenerate);
        assert_eq!((d.t, d.p), (0.0, 1.0));
        assert!(welch_t_test(&[1.0], &a).is_err());
    }

    #[test]
    fn ols_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = ols(&x, &y).unwrap();
        assert_eq!(f.slope, 2.0);
        assert_eq!(f.intercept, 1.0);
        assert_eq!(f.p, 0.0);
    }

    #[test]
    fn ols_matches_closed_form_se() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 0.0, 1.0, 4.0];
        let f = ols(&x, &y).unwrap();
        // deviations from the means (1.5, 1.5)
        let sxy: f64 = [(-1.5, -0.5), (-0.5, -1.5), (0.5, -0.5), (1.5, 2.5)].iter().map(|(a, b)| a * b).sum();
        assert!((f.slope - sxy / 5.0).abs() < 1e-12);
        assert!(f.p > 0.0 && f.p < 1.0);
    }
}
