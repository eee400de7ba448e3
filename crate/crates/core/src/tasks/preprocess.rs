//! Label preprocessing: expression normalisation, cohort filtering and
//! survival time binning.

use crate::error::{Error, Result};

/// Entry-wise `ln(1 + x)` over a spots x genes matrix.
pub fn log_normalize_expression(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    matrix
        .iter()
        .map(|row| {
            row.iter()
                .map(|&x| {
                    if x < 0.0 || !x.is_finite() {
                        Err(Error::invalid(format!("expression values must be finite and >= 0, got {x}")))
                    } else {
                        Ok(x.ln_1p())
                    }
                })
                .collect()
        })
        .collect()
}

/// Drops slides where at least half of the genes are all-zero across the
/// slide's spots, then drops genes that are all-zero in at least half of the
/// remaining slides. `slides[k]` is a spots x genes matrix.
///
/// Returns the kept slide indices and kept gene indices.
pub fn filter_cohort(slides: &[Vec<Vec<f64>>], n_genes: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_genes == 0 {
        return Err(Error::invalid("gene list is empty"));
    }
    let zero_genes = |slide: &Vec<Vec<f64>>| -> Result<Vec<bool>> {
        let mut zero = vec![true; n_genes];
        for spot in slide {
            if spot.len() != n_genes {
                return Err(Error::invalid(format!("spot has {} genes, expected {n_genes}", spot.len())));
            }
            for (z, &x) in zero.iter_mut().zip(spot) {
                if x != 0.0 {
                    *z = false;
                }
            }
        }
        Ok(zero)
    };
    let per_slide: Vec<Vec<bool>> = slides.iter().map(zero_genes).collect::<Result<_>>()?;
    let kept_slides: Vec<usize> = per_slide
        .iter()
        .enumerate()
        .filter(|(_, z)| 2 * z.iter().filter(|&&b| b).count() < n_genes)
        .map(|(i, _)| i)
        .collect();
    if kept_slides.is_empty() {
        return Err(Error::EmptyCohort("every slide was filtered out".into()));
    }
    let kept_genes = (0..n_genes)
        .filter(|&g| 2 * kept_slides.iter().filter(|&&s| per_slide[s][g]).count() < kept_slides.len())
        .collect();
    Ok((kept_slides, kept_genes))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalBins {
    /// `num_bins - 1` inner edges; bin `k` covers `(edge[k-1], edge[k]]`.
    pub edges: Vec<f64>,
    pub bins: Vec<usize>,
    pub degenerate: bool,
}

impl SurvivalBins {
    pub fn num_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn assign(&self, time: f64) -> usize {
        bin_of(&self.edges, time)
    }
}

fn bin_of(edges: &[f64], t: f64) -> usize {
    edges.iter().filter(|&&e| e < t).count()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-population bins with edges at quantiles of the uncensored times.
pub fn survival_bins(times: &[f64], events: &[bool], num_bins: usize) -> Result<SurvivalBins> {
    if times.len() != events.len() {
        return Err(Error::invalid("times and events differ in length"));
    }
    if num_bins == 0 || times.len() < num_bins {
        return Err(Error::invalid(format!("{} samples cannot fill {num_bins} bins", times.len())));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("survival times must be finite"));
    }
    let mut basis: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    if basis.is_empty() {
        log::warn!("no uncensored times; survival bin edges use all times");
        basis = times.to_vec();
    }
    basis.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..num_bins).map(|k| quantile_sorted(&basis, k as f64 / num_bins as f64)).collect();
    let degenerate = edges.windows(2).any(|w| w[0] >= w[1]) || basis.first() == basis.last();
    if degenerate {
        log::warn!("survival bin edges are degenerate (tied times)");
    }
    let bins = times.iter().map(|&t| bin_of(&edges, t)).collect();
    Ok(SurvivalBins { edges, bins, degenerate })
}
