//! One-way ANOVA, two-sample t-tests and Bonferroni correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

/// `ln Γ(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const TOL: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=100_000 {
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
        if (del - 1.0).abs() < TOL {
            return Ok(h);
        }
    }
    Err(Error::Stats(format!("incomplete beta did not converge (a={a}, b={b}, x={x})")))
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Stats(format!("incomplete beta needs a, b > 0 (got {a}, {b})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Stats(format!("incomplete beta argument {x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The fraction converges fast on the side where x < (a+1)/(a+b+2).
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f <= 0.0 {
        return Ok(1.0);
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Two-sided `P(|T| > |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub p: f64,
    pub df_between: f64,
    pub df_within: f64,
}

pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<Anova> {
    if groups.len() < 2 {
        return Err(Error::Stats(format!("ANOVA needs ≥ 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Stats(format!("ANOVA group with {} samples (need ≥ 2)", g.len())));
    }
    let k = groups.len() as f64;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let ssb: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        })
        .sum();
    let (d1, d2) = (k - 1.0, n - k);
    let f = if ssw == 0.0 {
        if ssb == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ssb / d1) / (ssw / d2)
    };
    Ok(Anova {
        f,
        p: f_sf(f, d1, d2)?,
        df_between: d1,
        df_within: d2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    /// Unequal-variance two-sample test.
    #[default]
    Welch,
    /// Paired by position (seed order).
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Stats("t-test groups need ≥ 2 samples".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (var(a) / na, var(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            TTest {
                t: 0.0,
                df: na + nb - 2.0,
                p: 1.0,
            }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                df: na + nb - 2.0,
                p: 0.0,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p: t_two_sided(t, df)?,
    })
}

pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Stats("paired t-test needs equal-length groups of ≥ 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let (m, v) = (mean(&d), var(&d));
    let df = n - 1.0;
    if v == 0.0 {
        let t = if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY };
        return Ok(TTest {
            t,
            df,
            p: if m == 0.0 { 1.0 } else { 0.0 },
        });
    }
    let t = m / (v / n).sqrt();
    Ok(TTest {
        t,
        df,
        p: t_two_sided(t, df)?,
    })
}

pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub anova: Option<Anova>,
    pub anova_significant: Option<bool>,
    pub pairs: Vec<PairTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub alpha: f64,
    pub test: TTestKind,
    pub comparisons: usize,
    pub metrics: Vec<MetricReport>,
}

/// t-tests over `pairs` of named groups with Bonferroni correction for
/// `comparisons` tests (defaults to the number of pairs; 1 disables it).
pub fn ttest_pairwise_bonferroni(
    groups: &[(String, Vec<f64>)],
    pairs: &[(usize, usize)],
    comparisons: Option<usize>,
    kind: TTestKind,
) -> Result<Vec<PairTest>> {
    let m = comparisons.unwrap_or(pairs.len()).max(1);
    pairs
        .iter()
        .map(|&(i, j)| {
            let (ga, gb) = (
                groups.get(i).ok_or_else(|| Error::Stats(format!("no group {i}")))?,
                groups.get(j).ok_or_else(|| Error::Stats(format!("no group {j}")))?,
            );
            let r = match kind {
                TTestKind::Welch => welch_t(&ga.1, &gb.1)?,
                TTestKind::Paired => paired_t(&ga.1, &gb.1)?,
            };
            let adj = bonferroni(r.p, m);
            Ok(PairTest {
                a: ga.0.clone(),
                b: gb.0.clone(),
                t: r.t,
                df: r.df,
                p_raw: r.p,
                p_adjusted: adj,
                significant: adj < ALPHA,
            })
        })
        .collect()
}
