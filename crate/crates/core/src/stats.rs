//! Student t-tests, the regularized incomplete beta function behind their
//! p-values, and Pearson / Kendall correlation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite sample")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TwoSampleEqualVar,
    OneSample,
}

/// Alternative hypothesis. `Greater` means the first sample's mean (or the
/// sample mean, for one-sample tests) exceeds the other side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Less,
    Greater,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub test_kind: TestKind,
    pub alternative: Alternative,
}

fn check(xs: &[f64], need: usize) -> Result<(), StatsError> {
    if xs.len() < need {
        return Err(StatsError::TooFewSamples {
            need,
            got: xs.len(),
        });
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sum of squared deviations from the mean.
fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Pooled-variance (Student) two-sample t-test, two-sided.
pub fn t_test_two_sample(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    t_test_two_sample_with(a, b, Alternative::TwoSided)
}

pub fn t_test_two_sample_with(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
) -> Result<TTestResult, StatsError> {
    check(a, 2)?;
    check(b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let dof = a.len() + b.len() - 2;
    let pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / dof as f64;
    let diff = ma - mb;
    let t = if diff == 0.0 {
        0.0
    } else if pooled == 0.0 {
        return Err(StatsError::ZeroVariance);
    } else {
        diff / (pooled * (1.0 / na + 1.0 / nb)).sqrt()
    };
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: dof,
        p_value: t_p_value(t, dof as f64, alternative),
        test_kind: TestKind::TwoSampleEqualVar,
        alternative,
    })
}

/// One-sample t-test of `mean(a) == mu0`, two-sided.
pub fn t_test_one_sample(a: &[f64], mu0: f64) -> Result<TTestResult, StatsError> {
    t_test_one_sample_with(a, mu0, Alternative::TwoSided)
}

pub fn t_test_one_sample_with(
    a: &[f64],
    mu0: f64,
    alternative: Alternative,
) -> Result<TTestResult, StatsError> {
    check(a, 2)?;
    let n = a.len() as f64;
    let m = mean(a);
    let dof = a.len() - 1;
    let var = sum_sq_dev(a, m) / dof as f64;
    let diff = m - mu0;
    let t = if diff == 0.0 {
        0.0
    } else if var == 0.0 {
        return Err(StatsError::ZeroVariance);
    } else {
        diff / (var / n).sqrt()
    };
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: dof,
        p_value: t_p_value(t, dof as f64, alternative),
        test_kind: TestKind::OneSample,
        alternative,
    })
}

/// p-value of a Student t statistic with `dof` degrees of freedom.
pub fn t_p_value(t: f64, dof: f64, alternative: Alternative) -> f64 {
    // P(|T| >= |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2)
    let two_sided = reg_inc_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    let p = match alternative {
        Alternative::TwoSided => two_sided,
        Alternative::Greater if t >= 0.0 => 0.5 * two_sided,
        Alternative::Greater => 1.0 - 0.5 * two_sided,
        Alternative::Less if t <= 0.0 => 0.5 * two_sided,
        Alternative::Less => 1.0 - 0.5 * two_sided,
    };
    p.clamp(0.0, 1.0)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    check(x, 2)?;
    check(y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Kendall's tau-b rank correlation.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    check(x, 2)?;
    check(y, 2)?;
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let dy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + tie_x) as f64;
    let n2 = (concordant + discordant + tie_y) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

/// Kendall tau between two orderings of the same ids (best first).
pub fn kendall_tau_orders(predicted: &[String], truth: &[String]) -> Result<f64, StatsError> {
    if predicted.len() != truth.len() {
        return Err(StatsError::LengthMismatch(predicted.len(), truth.len()));
    }
    let pos = |id: &String| predicted.iter().position(|p| p == id);
    let mut x = Vec::with_capacity(truth.len());
    for id in truth {
        x.push(pos(id).ok_or(StatsError::LengthMismatch(predicted.len(), truth.len()))? as f64);
    }
    let y: Vec<f64> = (0..truth.len()).map(|i| i as f64).collect();
    kendall_tau(&x, &y)
}
