//! Tables and plot data.
//!
//! Text and LaTeX tables print three decimals as `mean ± sd` (sd omitted for
//! single-seed runs). CSV tables keep full precision in separate mean and sd
//! columns so they can be parsed back without loss. Plot series are written as
//! `x,y` CSV files with a `key=value` metadata sidecar; nothing is rendered
//! here.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    hr_key, ndcg_key, recall_key, AblationRow, AggregateResult, Analysis, MetricSummary, GINI,
    RERANK_SECONDS, UNIQUE_TOP1,
};
use crate::metrics::{cumulative_exposure, GtPositionStats};
use crate::stats::ScoreSeparationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Text,
    Latex,
}

/// `0.268 ± 0.018`, or `0.268` without an sd.
pub fn format_cell(m: &MetricSummary) -> String {
    match m.sd {
        Some(sd) => format!("{:.3} ± {:.3}", m.mean, sd),
        None => format!("{:.3}", m.mean),
    }
}

fn latex_cell(m: &MetricSummary) -> String {
    match m.sd {
        Some(sd) => format!("{:.3} $\\pm$ {:.3}", m.mean, sd),
        None => format!("{:.3}", m.mean),
    }
}

fn latex_escape(s: &str) -> String {
    s.replace('\\', "\\textbackslash{}")
        .replace('_', "\\_")
        .replace('&', "\\&")
        .replace('%', "\\%")
        .replace('#', "\\#")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn sd_text(sd: Option<f64>) -> String {
    sd.map(|v| v.to_string()).unwrap_or_default()
}

/// Aligned plain-text table; first column left-aligned, others right.
fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (i, cell) in cells.iter().enumerate() {
            let pad = width[i] - cell.chars().count();
            if i == 0 {
                out.push_str(cell);
                out.push_str(&" ".repeat(pad));
            } else {
                out.push_str("  ");
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    let total: usize = width.iter().sum::<usize>() + 2 * (cols - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn latex_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = format!("\\begin{{tabular}}{{l{}}}\n\\hline\n", "c".repeat(header.len() - 1));
    let join = |cells: &[String]| cells.join(" & ") + " \\\\\n";
    out.push_str(&join(&header.iter().map(|h| latex_escape(h)).collect::<Vec<_>>()));
    out.push_str("\\hline\n");
    for row in rows {
        out.push_str(&join(row));
    }
    out.push_str("\\hline\n\\end{tabular}\n");
    out
}

fn common_k(agg: &AggregateResult) -> Option<usize> {
    let mut ks = agg.meta.pipelines.iter().map(|p| p.k);
    let first = ks.next()?;
    ks.all(|k| k == first).then_some(first)
}

fn pipeline_k(agg: &AggregateResult, name: &str) -> usize {
    agg.meta.pipeline(name).map_or(crate::harness::DEFAULT_K, |p| p.k)
}

/// Main results: HR@K, nDCG@K and recall at each coverage cutoff.
pub fn emit_main_table(agg: &AggregateResult, format: TableFormat) -> String {
    let k_label = common_k(agg).map_or("K".to_string(), |k| k.to_string());
    let mut labels = vec![format!("HR@{k_label}"), format!("nDCG@{k_label}")];
    labels.extend(agg.meta.cutoffs.iter().map(|c| format!("Recall@{c}")));
    let order = pipeline_order(agg);
    let cells = |name: &str| -> Vec<MetricSummary> {
        let m = &agg.metrics[name];
        let k = pipeline_k(agg, name);
        let mut v = vec![m[&hr_key(k)], m[&ndcg_key(k)]];
        v.extend(agg.meta.cutoffs.iter().map(|&c| m[&recall_key(c)]));
        v
    };
    match format {
        TableFormat::Csv => {
            let mut out = String::from("model");
            for key in metric_keys(agg, k_label.as_str()) {
                let _ = write!(out, ",{key}_mean,{key}_sd");
            }
            out.push('\n');
            for name in &order {
                out.push_str(&csv_field(name));
                for m in cells(name) {
                    let _ = write!(out, ",{},{}", m.mean, sd_text(m.sd));
                }
                out.push('\n');
            }
            out
        }
        TableFormat::Text => {
            let mut header = vec!["Model".to_string()];
            header.extend(labels);
            let rows: Vec<Vec<String>> = order
                .iter()
                .map(|name| {
                    let mut row = vec![name.to_string()];
                    row.extend(cells(name).iter().map(format_cell));
                    row
                })
                .collect();
            text_table(&header, &rows)
        }
        TableFormat::Latex => {
            let mut header = vec!["Model".to_string()];
            header.extend(labels);
            let rows: Vec<Vec<String>> = order
                .iter()
                .map(|name| {
                    let mut row = vec![latex_escape(name)];
                    row.extend(cells(name).iter().map(latex_cell));
                    row
                })
                .collect();
            latex_table(&header, &rows)
        }
    }
}

fn metric_keys(agg: &AggregateResult, k_label: &str) -> Vec<String> {
    let mut keys = vec![format!("hr@{k_label}"), format!("ndcg@{k_label}")];
    keys.extend(agg.meta.cutoffs.iter().map(|&c| recall_key(c)));
    keys
}

/// Pipelines in configuration order.
fn pipeline_order(agg: &AggregateResult) -> Vec<String> {
    agg.meta
        .pipelines
        .iter()
        .map(|p| p.name.clone())
        .filter(|n| agg.metrics.contains_key(n))
        .collect()
}

/// One parsed row of the CSV main table.
#[derive(Debug, Clone, PartialEq)]
pub struct MainRow {
    pub model: String,
    pub cells: BTreeMap<String, MetricSummary>,
}

/// Parses the CSV form of [`emit_main_table`].
pub fn parse_main_csv(text: &str) -> Result<Vec<MainRow>> {
    let path = Path::new("<main table>");
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let mut cells = BTreeMap::new();
        for col in (1..header.len()).step_by(2) {
            let key = header[col].trim_end_matches("_mean").to_string();
            let mean = rec[col]
                .parse()
                .map_err(|_| Error::parse(path, line, format!("bad mean `{}`", &rec[col])))?;
            let sd = match rec.get(col + 1) {
                Some("") | None => None,
                Some(v) => Some(v.parse().map_err(|_| Error::parse(path, line, format!("bad sd `{v}`")))?),
            };
            cells.insert(key, MetricSummary { mean, sd });
        }
        rows.push(MainRow {
            model: rec[0].to_string(),
            cells,
        });
    }
    Ok(rows)
}

/// Pairwise significance tests (one row per pipeline pair and metric).
pub fn emit_stat_table(analysis: &Analysis, format: TableFormat) -> String {
    let header: Vec<String> = [
        "Comparison", "Metric", "Mean diff", "95% CI", "t", "p (t)", "W", "p (W)", "Cohen's d", "Effect", "n",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    let p = |v: f64| {
        if v < 0.001 {
            "<0.001".to_string()
        } else {
            format!("{v:.3}")
        }
    };
    match format {
        TableFormat::Csv => {
            let mut out = String::from("a,b,metric,mean_diff,ci_low,ci_high,t_stat,p_t,wilcoxon_w,p_w,cohens_d,effect,n\n");
            for t in &analysis.tests {
                let r = &t.report;
                let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    csv_field(&t.a),
                    csv_field(&t.b),
                    t.metric,
                    r.mean_diff,
                    r.ci_low,
                    r.ci_high,
                    o(r.t_stat),
                    r.p_t,
                    r.wilcoxon_w,
                    r.p_w,
                    o(r.cohens_d),
                    r.effect.clone().unwrap_or_default(),
                    r.n
                );
            }
            out
        }
        TableFormat::Text | TableFormat::Latex => {
            let latex = format == TableFormat::Latex;
            let rows: Vec<Vec<String>> = analysis
                .tests
                .iter()
                .map(|t| {
                    let r = &t.report;
                    let cmp = format!("{} vs {}", t.a, t.b);
                    vec![
                        if latex { latex_escape(&cmp) } else { cmp },
                        t.metric.clone(),
                        format!("{:.3}", r.mean_diff),
                        format!("[{:.3}, {:.3}]", r.ci_low, r.ci_high),
                        opt(r.t_stat),
                        p(r.p_t),
                        format!("{:.1}", r.wilcoxon_w),
                        p(r.p_w),
                        opt(r.cohens_d),
                        r.effect.clone().unwrap_or_else(|| "n/a".into()),
                        r.n.to_string(),
                    ]
                })
                .collect();
            if latex {
                latex_table(&header, &rows).replace("<0.001", "$<$0.001")
            } else {
                text_table(&header, &rows)
            }
        }
    }
}

pub const GINI_NOTE: &str =
    "Gini is computed over items with at least one top-1 exposure; a single item shown to every user scores 0.";

/// Unique top-1 items and Gini per pipeline.
pub fn emit_exposure_table(agg: &AggregateResult, format: TableFormat) -> String {
    let order = pipeline_order(agg);
    match format {
        TableFormat::Csv => {
            let mut out = String::from("model,unique_top1_mean,unique_top1_sd,gini_mean,gini_sd\n");
            for name in &order {
                let m = &agg.metrics[name];
                let (u, g) = (m[UNIQUE_TOP1], m[GINI]);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    csv_field(name),
                    u.mean,
                    sd_text(u.sd),
                    g.mean,
                    sd_text(g.sd)
                );
            }
            out
        }
        TableFormat::Text | TableFormat::Latex => {
            let latex = format == TableFormat::Latex;
            let header = vec!["Model".to_string(), "Unique top-1".to_string(), "Gini".to_string()];
            let rows: Vec<Vec<String>> = order
                .iter()
                .map(|name| {
                    let m = &agg.metrics[name];
                    let u = m[UNIQUE_TOP1];
                    let unique = match u.sd {
                        Some(sd) => format!("{:.1} {} {:.1}", u.mean, if latex { "$\\pm$" } else { "±" }, sd),
                        None => format!("{:.1}", u.mean),
                    };
                    let gini = if latex { latex_cell(&m[GINI]) } else { format_cell(&m[GINI]) };
                    vec![if latex { latex_escape(name) } else { name.clone() }, unique, gini]
                })
                .collect();
            if latex {
                latex_table(&header, &rows) + "% " + GINI_NOTE + "\n"
            } else {
                text_table(&header, &rows) + GINI_NOTE + "\n"
            }
        }
    }
}

/// Pool-size study: HR@K, nDCG@K and rerank time per user.
pub fn emit_ablation_table(rows: &[AblationRow], k: usize, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => {
            let mut out = String::from("pool_size,hr_mean,hr_sd,ndcg_mean,ndcg_sd,rerank_seconds_mean,rerank_seconds_sd\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.pool_size,
                    r.hr.mean,
                    sd_text(r.hr.sd),
                    r.ndcg.mean,
                    sd_text(r.ndcg.sd),
                    r.rerank_seconds.mean,
                    sd_text(r.rerank_seconds.sd)
                );
            }
            out
        }
        TableFormat::Text | TableFormat::Latex => {
            let header = vec![
                "Pool size".to_string(),
                format!("HR@{k}"),
                format!("nDCG@{k}"),
                "Time/user (s)".to_string(),
            ];
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.pool_size.to_string(),
                        format!("{:.3}", r.hr.mean),
                        format!("{:.3}", r.ndcg.mean),
                        format!("{:.6}", r.rerank_seconds.mean),
                    ]
                })
                .collect();
            if format == TableFormat::Latex {
                latex_table(&header, &rows)
            } else {
                text_table(&header, &rows)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    RecallCurve,
    Histogram,
    CumulativeExposure,
    Scatter,
    Bar,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::RecallCurve => "recall_curve",
            PlotKind::Histogram => "histogram",
            PlotKind::CumulativeExposure => "cumulative_exposure",
            PlotKind::Scatter => "scatter",
            PlotKind::Bar => "bar",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "recall_curve" => PlotKind::RecallCurve,
            "histogram" => PlotKind::Histogram,
            "cumulative_exposure" => PlotKind::CumulativeExposure,
            "scatter" => PlotKind::Scatter,
            "bar" => PlotKind::Bar,
            other => return Err(Error::InvalidParameter(format!("unknown plot kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub kind: PlotKind,
    pub points: Vec<(f64, f64)>,
    pub metadata: BTreeMap<String, String>,
}

impl PlotSeries {
    pub fn new(name: impl Into<String>, kind: PlotKind, points: Vec<(f64, f64)>) -> Self {
        PlotSeries {
            name: name.into(),
            kind,
            points,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// Recall curves and cumulative exposure must be non-decreasing in x.
    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidParameter(format!("series `{}` has non-finite points", self.name)));
        }
        if matches!(self.kind, PlotKind::RecallCurve | PlotKind::CumulativeExposure) {
            let mut sorted = self.points.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted.windows(2).any(|w| w[1].1 < w[0].1) {
                return Err(Error::InvalidParameter(format!(
                    "series `{}` must be non-decreasing in x",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    pub fn metadata_text(&self) -> String {
        let mut out = format!("kind={}\n", self.kind.as_str());
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

pub const PLOTS_DIR: &str = "plots";

/// Writes `plots/<name>.csv` and `plots/<name>.meta`; returns the CSV path.
pub fn write_plot(out_dir: &Path, series: &PlotSeries) -> Result<PathBuf> {
    series.validate()?;
    let dir = out_dir.join(PLOTS_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let csv = dir.join(format!("{}.csv", series.name));
    std::fs::write(&csv, series.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let meta = dir.join(format!("{}.meta", series.name));
    std::fs::write(&meta, series.metadata_text()).map_err(|e| Error::io(&meta, e))?;
    Ok(csv)
}

/// Mean recall at each cutoff for one pipeline.
pub fn recall_curve(agg: &AggregateResult, pipeline: &str) -> Result<PlotSeries> {
    let m = agg
        .metrics
        .get(pipeline)
        .ok_or_else(|| Error::UnknownId(pipeline.to_string()))?;
    let mut cutoffs = agg.meta.cutoffs.clone();
    cutoffs.sort_unstable();
    let points = cutoffs
        .iter()
        .map(|&c| (c as f64, m[&recall_key(c)].mean))
        .collect();
    Ok(PlotSeries::new(format!("recall_curve_{pipeline}"), PlotKind::RecallCurve, points))
}

/// Cumulative exposure share by item rank.
pub fn cumulative_exposure_series(name: &str, counts: &[u64]) -> PlotSeries {
    let points = cumulative_exposure(counts)
        .into_iter()
        .map(|(r, s)| (r as f64, s))
        .collect();
    PlotSeries::new(name, PlotKind::CumulativeExposure, points)
}

/// Top-1 exposure summed over seeds.
pub fn pooled_top1(agg: &AggregateResult, pipeline: &str) -> Vec<u64> {
    let mut pooled: BTreeMap<&str, u64> = BTreeMap::new();
    if let Some(by_seed) = agg.top1.get(pipeline) {
        for counts in by_seed.values() {
            for (id, c) in counts {
                *pooled.entry(id.as_str()).or_default() += c;
            }
        }
    }
    pooled.into_values().collect()
}

/// Histogram of GT positions (bin centers) with the median in the metadata.
pub fn gt_position_histogram(name: &str, stats: &GtPositionStats) -> PlotSeries {
    let points = stats
        .histogram
        .iter()
        .map(|&(lo, hi, count)| ((lo + hi) / 2.0, count as f64))
        .collect();
    let mut s = PlotSeries::new(name, PlotKind::Histogram, points)
        .with_meta("median", stats.median)
        .with_meta("q1", stats.q1)
        .with_meta("q3", stats.q3);
    for (c, f) in &stats.within {
        s = s.with_meta(&format!("within_{c}"), f);
    }
    s
}

/// Equal-width histogram (bin centers, counts) of `values` over `[lo, hi]`.
pub fn histogram_series(name: &str, values: &[f64], lo: f64, hi: f64, bins: usize) -> PlotSeries {
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width).max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let points = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64))
        .collect();
    PlotSeries::new(name, PlotKind::Histogram, points)
}

/// Relevant and irrelevant score histograms over a shared range.
pub fn score_histograms(rel: &[f64], irr: &[f64], report: &ScoreSeparationReport, bins: usize) -> [PlotSeries; 2] {
    let (lo, hi) = rel
        .iter()
        .chain(irr)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let tag = |s: PlotSeries| {
        s.with_meta("overlap_fraction", report.overlap_fraction)
            .with_meta("cohens_d", report.cohens_d)
            .with_meta("spearman_r", report.spearman_r)
    };
    [
        tag(histogram_series("scores_relevant", rel, lo, hi, bins)),
        tag(histogram_series("scores_irrelevant", irr, lo, hi, bins)),
    ]
}

/// Recall@cutoff against HR@K, one point per pipeline.
pub fn coverage_scatter(agg: &AggregateResult, cutoff: usize) -> PlotSeries {
    let names = pipeline_order(agg);
    let points = names
        .iter()
        .map(|name| {
            let m = &agg.metrics[name];
            (m[&recall_key(cutoff)].mean, m[&hr_key(pipeline_k(agg, name))].mean)
        })
        .collect();
    PlotSeries::new(format!("coverage_vs_hr_{cutoff}"), PlotKind::Scatter, points)
        .with_meta("pipelines", names.join(" "))
}

/// Mean rerank seconds per pipeline, in configuration order (x = index).
pub fn timing_bar(agg: &AggregateResult) -> PlotSeries {
    let names = pipeline_order(agg);
    let points = names
        .iter()
        .enumerate()
        .map(|(i, n)| (i as f64, agg.metrics[n][RERANK_SECONDS].mean))
        .collect();
    PlotSeries::new("rerank_seconds", PlotKind::Bar, points).with_meta("pipelines", names.join(" "))
}

/// Builds every series of one kind that the aggregate supports.
pub fn emit_plot_data(agg: &AggregateResult, kind: &str) -> Result<Vec<PlotSeries>> {
    let kind: PlotKind = kind.parse()?;
    let names = pipeline_order(agg);
    Ok(match kind {
        PlotKind::RecallCurve => names.iter().map(|n| recall_curve(agg, n)).collect::<Result<_>>()?,
        PlotKind::CumulativeExposure => names
            .iter()
            .map(|n| cumulative_exposure_series(&format!("cumulative_exposure_{n}"), &pooled_top1(agg, n)))
            .collect(),
        PlotKind::Scatter => agg.meta.cutoffs.iter().map(|&c| coverage_scatter(agg, c)).collect(),
        PlotKind::Bar => vec![timing_bar(agg)],
        PlotKind::Histogram => names
            .iter()
            .map(|n| {
                let counts: Vec<f64> = pooled_top1(agg, n).into_iter().map(|c| c as f64).collect();
                let hi = counts.iter().copied().fold(1.0, f64::max);
                histogram_series(&format!("top1_exposure_{n}"), &counts, 1.0, hi, 20)
            })
            .collect(),
    })
}

/// Files written by [`write_report`].
pub mod files {
    pub const MAIN_CSV: &str = "main_results.csv";
    pub const MAIN_TXT: &str = "main_results.txt";
    pub const MAIN_TEX: &str = "main_results.tex";
    pub const EXPOSURE_CSV: &str = "exposure.csv";
    pub const EXPOSURE_TXT: &str = "exposure.txt";
    pub const STATS_TXT: &str = "stat_tests.txt";
    pub const STATS_TEX: &str = "stat_tests.tex";
    pub const ABLATION_TXT: &str = "ablation.txt";
    pub const ABLATION_TEX: &str = "ablation.tex";
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes every table and plot series the inputs allow. Returns the paths.
pub fn write_report(
    out_dir: &Path,
    agg: &AggregateResult,
    analysis: Option<&Analysis>,
    ablation: Option<&BTreeMap<String, Vec<AblationRow>>>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        write_text(&path, &text)?;
        written.push(path);
        Ok(())
    };
    put(files::MAIN_CSV, emit_main_table(agg, TableFormat::Csv))?;
    put(files::MAIN_TXT, emit_main_table(agg, TableFormat::Text))?;
    put(files::MAIN_TEX, emit_main_table(agg, TableFormat::Latex))?;
    put(files::EXPOSURE_CSV, emit_exposure_table(agg, TableFormat::Csv))?;
    put(files::EXPOSURE_TXT, emit_exposure_table(agg, TableFormat::Text))?;
    if let Some(a) = analysis {
        put(files::STATS_TXT, emit_stat_table(a, TableFormat::Text))?;
        put(files::STATS_TEX, emit_stat_table(a, TableFormat::Latex))?;
    }
    if let Some(table) = ablation {
        let mut txt = String::new();
        let mut tex = String::new();
        for (name, rows) in table {
            let k = pipeline_k(agg, name);
            let _ = writeln!(txt, "{name}");
            txt.push_str(&emit_ablation_table(rows, k, TableFormat::Text));
            txt.push('\n');
            let _ = writeln!(tex, "% {name}");
            tex.push_str(&emit_ablation_table(rows, k, TableFormat::Latex));
        }
        put(files::ABLATION_TXT, txt)?;
        put(files::ABLATION_TEX, tex)?;
    }
    for kind in ["recall_curve", "cumulative_exposure", "scatter", "bar"] {
        for series in emit_plot_data(agg, kind)? {
            written.push(write_plot(out_dir, &series)?);
        }
    }
    if let Some(fit) = analysis.and_then(|a| a.coverage_regression.as_ref()) {
        let series = coverage_scatter(agg, analysis.expect("checked").coverage_cutoff)
            .with_meta("slope", fit.slope)
            .with_meta("intercept", fit.intercept)
            .with_meta("r", fit.pearson_r)
            .with_meta("r_squared", fit.r_squared)
            .with_meta("p_value", fit.p_value);
        written.push(write_plot(out_dir, &series)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{PipelineConfig, RerankerKind, RetrieverKind, RunMeta};

    fn summary(mean: f64, sd: Option<f64>) -> MetricSummary {
        MetricSummary { mean, sd }
    }

    fn crafted(sd: Option<f64>) -> AggregateResult {
        let mut m = BTreeMap::new();
        m.insert("hr@10".to_string(), summary(0.268, sd.map(|_| 0.018)));
        m.insert("ndcg@10".to_string(), summary(0.1234567, sd));
        for c in [50, 200, 1000] {
            m.insert(recall_key(c), summary(c as f64 / 2000.0, sd));
        }
        m.insert(UNIQUE_TOP1.to_string(), summary(3.0, sd.map(|_| 0.0)));
        m.insert(GINI.to_string(), summary(0.25, sd));
        m.insert(RERANK_SECONDS.to_string(), summary(0.001, sd));
        AggregateResult {
            metrics: [("popularity".to_string(), m)].into_iter().collect(),
            per_seed: BTreeMap::new(),
            top1: [(
                "popularity".to_string(),
                [(42u64, [("a".to_string(), 250u64), ("b".to_string(), 150), ("c".to_string(), 100)].into_iter().collect())]
                    .into_iter()
                    .collect(),
            )]
            .into_iter()
            .collect(),
            logs: vec![],
            meta: RunMeta {
                seeds: vec![42],
                n_users: 500,
                cutoffs: vec![50, 200, 1000],
                pipelines: vec![PipelineConfig::new("popularity", RetrieverKind::Popularity, RerankerKind::None, 10)],
            },
        }
    }

    #[test]
    fn cell_formatting() {
        assert_eq!(format_cell(&summary(0.268, Some(0.018))), "0.268 ± 0.018");
        assert_eq!(format_cell(&summary(0.268, None)), "0.268");
        let text = emit_main_table(&crafted(Some(0.01)), TableFormat::Text);
        assert!(text.contains("0.268 ± 0.018"), "{text}");
        let single = emit_main_table(&crafted(None), TableFormat::Text);
        assert!(!single.contains('±'));
        assert_eq!(single.lines().count(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let agg = crafted(Some(0.0123456789));
        let rows = parse_main_csv(&emit_main_table(&agg, TableFormat::Csv)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].model, "popularity");
        for (key, value) in &rows[0].cells {
            assert_eq!(*value, agg.metrics["popularity"][key], "{key}");
        }
        let single = parse_main_csv(&emit_main_table(&crafted(None), TableFormat::Csv)).unwrap();
        assert!(single[0].cells.values().all(|m| m.sd.is_none()));
    }

    #[test]
    fn latex_rows() {
        let tex = emit_main_table(&crafted(Some(0.01)), TableFormat::Latex);
        assert!(tex.contains("popularity & 0.268 $\\pm$ 0.018"));
        assert!(tex.trim_end().ends_with("\\end{tabular}"));
    }

    #[test]
    fn cumulative_exposure_by_hand() {
        let s = cumulative_exposure_series("c", &[250, 150, 100]);
        let y: Vec<f64> = s.points.iter().map(|p| p.1).collect();
        assert_eq!(y, vec![0.5, 0.8, 1.0]);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn recall_curve_shape() {
        let agg = crafted(None);
        let s = recall_curve(&agg, "popularity").unwrap();
        assert_eq!(s.points.len(), 3);
        assert!(s.validate().is_ok());
        let bad = PlotSeries::new("bad", PlotKind::RecallCurve, vec![(1.0, 0.5), (2.0, 0.4)]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_plot_kind() {
        assert!(emit_plot_data(&crafted(None), "violin").is_err());
    }

    #[test]
    fn report_is_reproducible() {
        let agg = crafted(Some(0.01));
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_report(a.path(), &agg, None, None).unwrap();
        let pb = write_report(b.path(), &agg, None, None).unwrap();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let exposure = std::fs::read_to_string(a.path().join(PLOTS_DIR).join("cumulative_exposure_popularity.csv")).unwrap();
        assert_eq!(exposure, "x,y\n1,0.5\n2,0.8\n3,1\n");
    }

    #[test]
    fn gt_histogram_carries_median() {
        let stats = GtPositionStats {
            positions: vec![1, 2, 3],
            median: 2.0,
            q1: 1.5,
            q3: 2.5,
            histogram: vec![(1.0, 2.0, 1), (2.0, 3.0, 2)],
            within: [(50, 1.0)].into_iter().collect(),
        };
        let s = gt_position_histogram("gt", &stats);
        assert_eq!(s.metadata["median"], "2");
        assert_eq!(s.points, vec![(1.5, 1.0), (2.5, 2.0)]);
    }
}
