use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

use super::rank_descending;

const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternative {
    /// a tends to exceed b
    Greater,
    Less,
    TwoSided,
}

impl Alternative {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greater" => Ok(Self::Greater),
            "less" => Ok(Self::Less),
            "two-sided" | "two_sided" => Ok(Self::TwoSided),
            other => Err(Error::invalid(format!("unknown alternative '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub exact: bool,
}

/// Paired signed-rank test of `a - b`. Zero differences are dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::invalid("paired samples differ in length"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|x| *x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::UndefinedTest("every paired difference is zero".into()));
    }
    let n = d.len();
    if n < 5 {
        return Err(Error::invalid(format!("need at least 5 non-zero differences, got {n}")));
    }
    // ascending ranks of |d|
    let neg_abs: Vec<f64> = d.iter().map(|x| -x.abs()).collect();
    let ranks = rank_descending(&neg_abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    if n <= EXACT_MAX_N {
        // ranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let patterns = 2f64.powi(n as i32);
        let w2 = (w_plus * 2.0).round() as usize;
        let upper = counts[w2..].iter().sum::<f64>() / patterns;
        let lower = counts[..=w2].iter().sum::<f64>() / patterns;
        let p = match alternative {
            Alternative::Greater => upper,
            Alternative::Less => lower,
            Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
        };
        return Ok(WilcoxonResult { statistic: w_plus, p_value: p, n, exact: true });
    }
    let mut sorted: Vec<f64> = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let nf = n as f64;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - total / 2.0) / var.sqrt();
    let norm = Normal::standard();
    let p = match alternative {
        Alternative::Greater => norm.sf(z),
        Alternative::Less => norm.cdf(z),
        Alternative::TwoSided => (2.0 * norm.sf(z.abs())).min(1.0),
    };
    Ok(WilcoxonResult { statistic: w_plus, p_value: p, n, exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_gives_minimum_p() {
        let b: Vec<f64> = (0..8).map(f64::from).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let r = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 1.0 / 256.0);
    }

    #[test]
    fn all_zero_is_undefined() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0; 6], &[1.0; 6], Alternative::TwoSided),
            Err(Error::UndefinedTest(_))
        ));
    }
}
