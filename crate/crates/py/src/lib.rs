//! Python bindings for the statistics, losses and depth arithmetic.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use shazam_core::distill::{self, DistillConfig};
use shazam_core::metrics::{self, Alternative, RankPolicy};

fn to_py(e: shazam_core::Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn cfg(delta: f64) -> PyResult<DistillConfig> {
    let c = DistillConfig { delta, ..DistillConfig::default() };
    c.validate().map_err(to_py)?;
    Ok(c)
}

/// Block indices (low, mid, high) hooked in a transformer of the given depth.
#[pyfunction]
pub fn extraction_depths(depth: i64) -> PyResult<(usize, usize, usize)> {
    shazam_core::extraction_depths(depth).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (z, t, delta = 1.0))]
pub fn distill_pair(z: Vec<f64>, t: Vec<f64>, delta: f64) -> PyResult<f64> {
    distill::distill_pair(&z, &t, &cfg(delta)?).map_err(to_py)
}

/// `student[s]` is the student vector at scale s, `targets[s][i]` teacher i's.
#[pyfunction]
#[pyo3(signature = (student, targets, delta = 1.0))]
pub fn distill_total(student: Vec<Vec<f64>>, targets: Vec<Vec<Vec<f64>>>, delta: f64) -> PyResult<f64> {
    distill::distill_total(&student, &targets, &cfg(delta)?).map_err(to_py)
}

#[pyfunction]
pub fn pcc(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    metrics::pcc(&pred, &truth).map_err(to_py)
}

#[pyfunction]
pub fn concordance_index(risk: Vec<f64>, time: Vec<f64>, event: Vec<bool>) -> PyResult<f64> {
    metrics::concordance_index(&risk, &time, &event).map_err(to_py)
}

/// Returns (statistic, p_value, exact).
#[pyfunction]
#[pyo3(signature = (a, b, alternative = "two-sided"))]
pub fn wilcoxon(a: Vec<f64>, b: Vec<f64>, alternative: &str) -> PyResult<(f64, f64, bool)> {
    let alt = Alternative::parse(alternative).map_err(to_py)?;
    let r = metrics::wilcoxon_signed_rank(&a, &b, alt).map_err(to_py)?;
    Ok((r.statistic, r.p_value, r.exact))
}

/// Returns (event times, survival at those times).
#[pyfunction]
pub fn kaplan_meier(time: Vec<f64>, event: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = metrics::kaplan_meier(&time, &event).map_err(to_py)?;
    Ok((c.times, c.survival))
}

/// Median split on risk; returns (chi2, p_value).
#[pyfunction]
pub fn km_logrank(risk: Vec<f64>, time: Vec<f64>, event: Vec<bool>) -> PyResult<(f64, f64)> {
    let r = metrics::km_logrank(&risk, &time, &event).map_err(to_py)?;
    Ok((r.chi2, r.p_value))
}

/// Mean rank and number of first places per model over every table in `dir`.
#[pyfunction]
#[pyo3(signature = (dir, policy = "mean"))]
pub fn rank_benchmarks(dir: PathBuf, policy: &str) -> PyResult<BTreeMap<String, (f64, usize)>> {
    let tables = metrics::load_benchmark_dir(&dir).map_err(to_py)?;
    let s = metrics::rank_aggregate(&tables, RankPolicy::parse(policy).map_err(to_py)?).map_err(to_py)?;
    Ok(s.models.iter().enumerate().map(|(i, m)| (m.clone(), (s.mean_rank[i], s.firsts[i]))).collect())
}

#[pymodule]
fn shazam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(extraction_depths, m)?)?;
    m.add_function(wrap_pyfunction!(distill_pair, m)?)?;
    m.add_function(wrap_pyfunction!(distill_total, m)?)?;
    m.add_function(wrap_pyfunction!(pcc, m)?)?;
    m.add_function(wrap_pyfunction!(concordance_index, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(kaplan_meier, m)?)?;
    m.add_function(wrap_pyfunction!(km_logrank, m)?)?;
    m.add_function(wrap_pyfunction!(rank_benchmarks, m)?)?;
    Ok(())
}
