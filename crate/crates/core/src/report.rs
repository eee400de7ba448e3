//! Rank tables, paired tests and Kaplan-Meier plots from result tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{
    km_logrank, load_benchmark_tables, rank_aggregate, wilcoxon_signed_rank, Alternative, BenchmarkTable, KmLogRank,
    RankPolicy, RankSummary,
};

/// Benchmark family of a task id: the text before the first underscore.
pub fn task_group(task_id: &str) -> &str {
    task_id.split('_').next().unwrap_or(task_id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonRow {
    pub group: String,
    pub comparison: &'static str,
    pub reference: String,
    pub other: String,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

fn scores(t: &BenchmarkTable, model: &str) -> Option<f64> {
    t.value(model, &t.primary_metric)
}

/// One-sided tests that `reference` scores higher than each other model,
/// per task family, on primary-metric values.
pub fn pairwise_wilcoxon(tables: &[BenchmarkTable], reference: &str) -> Result<Vec<WilcoxonRow>> {
    let models: Vec<String> = tables.first().map(|t| t.models().into_iter().map(str::to_string).collect()).unwrap_or_default();
    let mut groups: Vec<&str> = Vec::new();
    for t in tables {
        let g = task_group(&t.task_id);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let mut rows = Vec::new();
    for g in groups {
        let sub: Vec<&BenchmarkTable> = tables.iter().filter(|t| task_group(&t.task_id) == g).collect();
        for other in models.iter().filter(|m| *m != reference) {
            let pairs: Option<(Vec<f64>, Vec<f64>)> =
                sub.iter().map(|t| Some((scores(t, reference)?, scores(t, other)?))).collect();
            let Some((a, b)) = pairs else { continue };
            match wilcoxon_signed_rank(&a, &b, Alternative::Greater) {
                Ok(w) => rows.push(WilcoxonRow {
                    group: g.to_string(),
                    comparison: "score",
                    reference: reference.to_string(),
                    other: other.clone(),
                    n: w.n,
                    statistic: w.statistic,
                    p_value: w.p_value,
                }),
                Err(e) => log::debug!("skipping {g} {reference} vs {other}: {e}"),
            }
        }
    }
    Ok(rows)
}

/// One-sided test that `reference` ranks better than the runner-up within a
/// task family, on per-task ranks.
pub fn rank_wilcoxon(tables: &[BenchmarkTable], group: &str, reference: &str, policy: RankPolicy) -> Result<WilcoxonRow> {
    let sub: Vec<BenchmarkTable> = tables.iter().filter(|t| task_group(&t.task_id) == group).cloned().collect();
    if sub.is_empty() {
        return Err(Error::invalid(format!("no tasks in family '{group}'")));
    }
    let s = rank_aggregate(&sub, policy)?;
    let r = s.models.iter().position(|m| m == reference).ok_or_else(|| Error::invalid(format!("unknown model '{reference}'")))?;
    let other = (0..s.models.len())
        .filter(|&i| i != r)
        .min_by(|&a, &b| s.mean_rank[a].total_cmp(&s.mean_rank[b]).then(a.cmp(&b)))
        .ok_or_else(|| Error::invalid("need at least two models"))?;
    let a: Vec<f64> = s.ranks.iter().map(|x| x[r]).collect();
    let b: Vec<f64> = s.ranks.iter().map(|x| x[other]).collect();
    let w = wilcoxon_signed_rank(&a, &b, Alternative::Less)?;
    Ok(WilcoxonRow {
        group: group.to_string(),
        comparison: "rank",
        reference: reference.to_string(),
        other: s.models[other].clone(),
        n: w.n,
        statistic: w.statistic,
        p_value: w.p_value,
    })
}

pub fn wilcoxon_csv(rows: &[WilcoxonRow]) -> String {
    let mut s = String::from("group,comparison,reference,other,n,statistic,p_value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.group, r.comparison, r.reference, r.other, r.n, r.statistic, r.p_value);
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bar chart of mean ranks, best first.
pub fn rank_svg(summary: &RankSummary) -> String {
    let mut order: Vec<usize> = (0..summary.models.len()).collect();
    order.sort_by(|&a, &b| summary.mean_rank[a].total_cmp(&summary.mean_rank[b]));
    let max_rank = summary.models.len() as f64;
    let (left, width, bar) = (140.0, 360.0, 24.0);
    let height = 40.0 + bar * order.len() as f64 * 1.25;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        left + width + 60.0
    );
    let _ = writeln!(s, "<text x=\"{left}\" y=\"16\">mean rank over {} tasks</text>", summary.tasks.len());
    for (row, &i) in order.iter().enumerate() {
        let y = 28.0 + row as f64 * bar * 1.25;
        let w = width * summary.mean_rank[i] / max_rank;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", left - 6.0, y + bar * 0.7, escape(&summary.models[i]));
        let _ = writeln!(s, "<rect x=\"{left}\" y=\"{y}\" width=\"{w:.2}\" height=\"{bar}\" fill=\"#4878a8\"/>");
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\">{:.3}</text>", left + w + 4.0, y + bar * 0.7, summary.mean_rank[i]);
    }
    s.push_str("</svg>\n");
    s
}

/// Step plot of the two risk groups.
pub fn km_svg(km: &KmLogRank) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let t_max = km.high.times.iter().chain(&km.low.times).fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    let x = |t: f64| pad + (w - 2.0 * pad) * t / t_max;
    let y = |s: f64| h - pad - (h - 2.0 * pad) * s;
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(out, "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - pad, w - pad, h - pad);
    let _ = writeln!(out, "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>", h - pad);
    for (curve, colour, label) in [(&km.high, "#c0392b", "high risk"), (&km.low, "#2471a3", "low risk")] {
        let mut d = format!("M{:.2},{:.2}", x(0.0), y(1.0));
        let mut s_prev = 1.0;
        for (t, s) in curve.times.iter().zip(&curve.survival) {
            let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", x(*t), y(s_prev), x(*t), y(*s));
            s_prev = *s;
        }
        let _ = write!(d, " L{:.2},{:.2}", x(t_max), y(s_prev));
        let _ = writeln!(out, "<path d=\"{d}\" fill=\"none\" stroke=\"{colour}\"/>");
        let ly = if label == "high risk" { pad } else { pad + 16.0 };
        let _ = writeln!(out, "<text x=\"{}\" y=\"{ly}\" fill=\"{colour}\">{label}</text>", w - pad - 80.0);
    }
    let _ = writeln!(out, "<text x=\"{pad}\" y=\"{}\">log-rank p = {:.4}</text>", pad - 10.0, km.p_value);
    out.push_str("</svg>\n");
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub summary: RankSummary,
    pub wilcoxon: Vec<WilcoxonRow>,
    pub km: Vec<(String, KmLogRank)>,
    pub files: Vec<PathBuf>,
}

enum InputKind {
    Benchmark,
    Risk,
    Other,
}

fn classify(path: &Path) -> Result<InputKind> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let h = rdr.headers()?;
    let has = |c: &str| h.iter().any(|x| x == c);
    Ok(if has("task_id") && has("model") && has("value") {
        InputKind::Benchmark
    } else if has("risk") && has("time") && has("event") {
        InputKind::Risk
    } else {
        InputKind::Other
    })
}

fn read_risk(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let h = rdr.headers()?.clone();
    let col = |c: &str| h.iter().position(|x| x == c).ok_or_else(|| Error::invalid(format!("missing column {c}")));
    let (cr, ct, ce) = (col("risk")?, col("time")?, col("event")?);
    let (mut r, mut t, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| Error::invalid(format!("{}: bad number '{}'", path.display(), &rec[i])));
        r.push(num(cr)?);
        t.push(num(ct)?);
        e.push(num(ce)? != 0.0);
    }
    Ok((r, t, e))
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::from)?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "csv") {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}

/// Reads every result table under `input`, writes rank, test and KM outputs
/// into `out`.
pub fn build_report(input: &Path, out: &Path, policy: RankPolicy) -> Result<ReportOutput> {
    let files = csv_files(input)?;
    let mut bench = Vec::new();
    let mut risk = Vec::new();
    for f in files {
        match classify(&f)? {
            InputKind::Benchmark => bench.push(f),
            InputKind::Risk => risk.push(f),
            InputKind::Other => log::info!("ignoring {}", f.display()),
        }
    }
    if bench.is_empty() {
        return Err(Error::invalid(format!("no benchmark tables under {}", input.display())));
    }
    let tables = load_benchmark_tables(&bench)?;
    let summary = rank_aggregate(&tables, policy)?;
    let best = (0..summary.models.len())
        .min_by(|&a, &b| summary.mean_rank[a].total_cmp(&summary.mean_rank[b]))
        .map(|i| summary.models[i].clone())
        .unwrap_or_default();
    let mut wilcoxon = pairwise_wilcoxon(&tables, &best)?;
    let mut groups: Vec<&str> = tables.iter().map(|t| task_group(&t.task_id)).collect();
    groups.dedup();
    for g in groups {
        if let Ok(r) = rank_wilcoxon(&tables, g, &best, policy) {
            wilcoxon.push(r);
        }
    }
    let mut km = Vec::new();
    for f in &risk {
        let (r, t, e) = read_risk(f)?;
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        km.push((stem, km_logrank(&r, &t, &e)?));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("ranks.csv".into(), summary.to_csv())?;
    put("ranks_per_task.csv".into(), summary.per_task_csv())?;
    put("ranks.svg".into(), rank_svg(&summary))?;
    put("wilcoxon.csv".into(), wilcoxon_csv(&wilcoxon))?;
    for (stem, k) in &km {
        put(format!("km_{stem}.csv"), k.curves_csv())?;
        put(format!("km_{stem}.svg"), km_svg(k))?;
    }
    Ok(ReportOutput { summary, wilcoxon, km, files: written })
}
