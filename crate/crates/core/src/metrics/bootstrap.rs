use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::component_rng;

const MAX_REDRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "metric,point,ci_low,ci_high,n,replicates,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.metric, self.point, self.ci_low, self.ci_high, self.n, self.replicates, self.seed
        )
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over `n` units. `statistic` receives resampled unit
/// indices; resamples on which it fails are redrawn up to ten times.
pub fn bootstrap_ci<F>(metric: &str, n: usize, statistic: F, replicates: usize, level: f64, seed: u64) -> Result<MetricReport>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n < 2 {
        return Err(Error::invalid("bootstrap needs at least two units"));
    }
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let all: Vec<usize> = (0..n).collect();
    let point = statistic(&all)?;
    if replicates == 0 {
        return Ok(MetricReport { metric: metric.into(), point, ci_low: point, ci_high: point, n, replicates, seed });
    }
    let stats: Vec<Result<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = component_rng(seed, &format!("bootstrap.{r}"));
            let mut last = None;
            for _ in 0..=MAX_REDRAWS {
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                match statistic(&idx) {
                    Ok(v) if v.is_finite() => return Ok(v),
                    Ok(_) => last = Some(Error::Numeric("statistic is not finite".into())),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.unwrap_or_else(|| Error::Numeric("bootstrap failed".into())))
        })
        .collect();
    let mut values = stats.into_iter().collect::<Result<Vec<f64>>>()?;
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let ci_low = percentile(&values, alpha).min(point);
    let ci_high = percentile(&values, 1.0 - alpha).max(point);
    Ok(MetricReport { metric: metric.into(), point, ci_low, ci_high, n, replicates, seed })
}
