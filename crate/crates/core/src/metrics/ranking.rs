use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::rank_descending;

/// Metrics preferred as a task's single ranking metric, most preferred first.
const PRIMARY_ORDER: [&str; 5] = ["pcc", "c_index", "weighted_f1", "acc", "balanced_acc"];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub model: String,
    pub metric: String,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkTable {
    pub task_id: String,
    pub rows: Vec<BenchmarkRow>,
    pub primary_metric: String,
}

impl BenchmarkTable {
    pub fn models(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.model.as_str()) {
                out.push(&r.model);
            }
        }
        out
    }

    pub fn value(&self, model: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.model == model && r.metric == metric).map(|r| r.value)
    }

    fn score(&self, model: &str, policy: RankPolicy) -> Option<f64> {
        match policy {
            RankPolicy::PrimaryMetric => self.value(model, &self.primary_metric),
            RankPolicy::MeanOfMetrics => {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.model == model).map(|r| r.value).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            }
        }
    }
}

/// How a task with several reported metrics is reduced to one score per model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RankPolicy {
    /// Mean of every metric reported for the model on the task.
    #[default]
    MeanOfMetrics,
    /// The task's primary metric only (weighted F1 for tile tasks).
    PrimaryMetric,
}

impl RankPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" | "mean-of-metrics" => Ok(Self::MeanOfMetrics),
            "primary" => Ok(Self::PrimaryMetric),
            other => Err(Error::invalid(format!("unknown rank policy '{other}'"))),
        }
    }
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    s.trim().parse().map(Some).map_err(|_| Error::invalid(format!("bad number '{s}'")))
}

/// Reads tables from CSV files with columns task_id, model, metric, value, ci_low, ci_high.
pub fn load_benchmark_tables(paths: &[PathBuf]) -> Result<Vec<BenchmarkTable>> {
    let mut by_task: BTreeMap<String, Vec<BenchmarkRow>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for path in paths {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("{}: missing column '{name}'", path.display())))
        };
        let (ct, cm, cme, cv) = (col("task_id")?, col("model")?, col("metric")?, col("value")?);
        let (cl, ch) = (headers.iter().position(|h| h == "ci_low"), headers.iter().position(|h| h == "ci_high"));
        for rec in rdr.records() {
            let rec = rec?;
            let value: f64 = rec[cv]
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad value '{}'", path.display(), &rec[cv])))?;
            let task = rec[ct].to_string();
            if !by_task.contains_key(&task) {
                order.push(task.clone());
            }
            by_task.entry(task).or_default().push(BenchmarkRow {
                model: rec[cm].to_string(),
                metric: rec[cme].to_string(),
                value,
                ci_low: cl.map(|c| parse_opt(&rec[c])).transpose()?.flatten(),
                ci_high: ch.map(|c| parse_opt(&rec[c])).transpose()?.flatten(),
            });
        }
    }
    order
        .into_iter()
        .map(|task_id| {
            let rows = by_task.remove(&task_id).unwrap_or_default();
            let primary_metric = PRIMARY_ORDER
                .iter()
                .find(|m| rows.iter().any(|r| r.metric == **m))
                .map(|m| m.to_string())
                .unwrap_or_else(|| rows[0].metric.clone());
            let mut seen = std::collections::BTreeSet::new();
            for r in &rows {
                if !seen.insert((r.model.as_str(), r.metric.as_str())) {
                    return Err(Error::invalid(format!("task '{task_id}' lists {} / {} twice", r.model, r.metric)));
                }
            }
            Ok(BenchmarkTable { task_id, rows, primary_metric })
        })
        .collect()
}

/// Every `*.csv` in `dir`, in file-name order.
pub fn load_benchmark_dir(dir: &Path) -> Result<Vec<BenchmarkTable>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no CSV tables in {}", dir.display())));
    }
    load_benchmark_tables(&paths)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSummary {
    pub models: Vec<String>,
    pub tasks: Vec<String>,
    /// `ranks[task][model]`
    pub ranks: Vec<Vec<f64>>,
    pub mean_rank: Vec<f64>,
    pub firsts: Vec<usize>,
}

impl RankSummary {
    pub fn mean_rank_of(&self, model: &str) -> Option<f64> {
        self.models.iter().position(|m| m == model).map(|i| self.mean_rank[i])
    }

    pub fn firsts_of(&self, model: &str) -> Option<usize> {
        self.models.iter().position(|m| m == model).map(|i| self.firsts[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,mean_rank,firsts,tasks\n");
        for (i, m) in self.models.iter().enumerate() {
            s.push_str(&format!("{m},{:.6},{},{}\n", self.mean_rank[i], self.firsts[i], self.tasks.len()));
        }
        s
    }

    pub fn per_task_csv(&self) -> String {
        let mut s = String::from("task_id");
        for m in &self.models {
            s.push_str(&format!(",{m}"));
        }
        s.push('\n');
        for (t, r) in self.tasks.iter().zip(&self.ranks) {
            s.push_str(t);
            for v in r {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-task ranks (1 = best, ties share the mean rank) averaged over tasks.
pub fn rank_aggregate(tables: &[BenchmarkTable], policy: RankPolicy) -> Result<RankSummary> {
    let first = tables.first().ok_or_else(|| Error::invalid("no benchmark tables"))?;
    let models: Vec<String> = first.models().into_iter().map(str::to_string).collect();
    let mut ranks = Vec::with_capacity(tables.len());
    for t in tables {
        if t.models().len() != models.len() {
            return Err(Error::invalid(format!("task '{}' has a different model set", t.task_id)));
        }
        let scores = models
            .iter()
            .map(|m| {
                t.score(m, policy)
                    .ok_or_else(|| Error::invalid(format!("task '{}' has no value for model '{m}'", t.task_id)))
            })
            .collect::<Result<Vec<f64>>>()?;
        ranks.push(rank_descending(&scores));
    }
    let n = tables.len() as f64;
    let mean_rank = (0..models.len()).map(|m| ranks.iter().map(|r| r[m]).sum::<f64>() / n).collect();
    let firsts = (0..models.len()).map(|m| ranks.iter().filter(|r| r[m] == 1.0).count()).collect();
    Ok(RankSummary { models, tasks: tables.iter().map(|t| t.task_id.clone()).collect(), ranks, mean_rank, firsts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(task: &str, vals: &[(&str, f64)]) -> BenchmarkTable {
        BenchmarkTable {
            task_id: task.into(),
            rows: vals
                .iter()
                .map(|(m, v)| BenchmarkRow { model: m.to_string(), metric: "acc".into(), value: *v, ci_low: None, ci_high: None })
                .collect(),
            primary_metric: "acc".into(),
        }
    }

    #[test]
    fn ties_share_mean_rank() {
        let s = rank_aggregate(&[table("t", &[("a", 0.5), ("b", 0.5), ("c", 0.1)])], RankPolicy::default()).unwrap();
        assert_eq!(s.ranks[0], vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn missing_model_is_rejected() {
        let r = rank_aggregate(&[table("t", &[("a", 0.5), ("b", 0.4)]), table("u", &[("a", 0.5), ("c", 0.4)])], RankPolicy::default());
        assert!(r.is_err());
    }
}
