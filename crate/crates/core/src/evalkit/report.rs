//! CSV, JSON and SVG artifacts for evaluation results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::ablation::AblationTable;
use super::offline::{ActionTrace, OfflineReport};
use super::rollout::RolloutReport;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "config,seed,success_rate,mse,steps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Offline(&'a OfflineReport),
    Rollout(&'a RolloutReport),
    Ablation(&'a AblationTable),
}

/// One line of the CSV contract; absent values are empty fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub config: String,
    pub seed: u64,
    pub success_rate: Option<f64>,
    pub mse: Option<f64>,
    pub steps: Option<u64>,
}

impl Report<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Report::Offline(_) => "offline",
            Report::Rollout(_) => "rollout",
            Report::Ablation(_) => "ablation",
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Report::Offline(r) => r.windows.is_empty(),
            Report::Rollout(r) => r.rollouts.is_empty(),
            Report::Ablation(t) => t.cells.is_empty(),
        }
    }

    /// Offline rows carry the episode seed and window start; rollout rows
    /// carry a 0/1 outcome; ablation rows carry training steps.
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        match self {
            Report::Offline(r) => r
                .windows
                .iter()
                .map(|w| CsvRow {
                    config: r.config_id.clone(),
                    seed: w.episode_seed,
                    success_rate: None,
                    mse: Some(w.mse),
                    steps: Some(w.t as u64),
                })
                .collect(),
            Report::Rollout(r) => r
                .rollouts
                .iter()
                .map(|x| CsvRow {
                    config: r.config_id.clone(),
                    seed: x.seed,
                    success_rate: Some(if x.success { 1.0 } else { 0.0 }),
                    mse: None,
                    steps: Some(x.steps as u64),
                })
                .collect(),
            Report::Ablation(t) => t
                .cells
                .iter()
                .map(|c| CsvRow {
                    config: c.row.name().to_string(),
                    seed: c.seed,
                    success_rate: Some(c.success_rate),
                    mse: Some(c.offline_mse),
                    steps: Some(c.train_steps as u64),
                })
                .collect(),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text with a fixed header; floats use shortest round-trip formatting.
pub fn to_csv(rows: &[CsvRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.config, r.seed, opt(r.success_rate), opt(r.mse), opt(r.steps));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Malformed("unexpected CSV header".into()));
    }
    fn field<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| Error::Malformed(format!("bad CSV field `{s}`")))
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Malformed(format!("CSV line has {} fields", f.len())));
            }
            Ok(CsvRow {
                config: f[0].to_string(),
                seed: field(f[1])?.ok_or_else(|| Error::Malformed("missing seed".into()))?,
                success_rate: field(f[2])?,
                mse: field(f[3])?,
                steps: field(f[4])?,
            })
        })
        .collect()
}

/// Versioned JSON document; `provenance` is embedded verbatim.
pub fn to_json(report: Report, provenance: &serde_json::Value) -> String {
    let body = match report {
        Report::Offline(r) => serde_json::to_value(r),
        Report::Rollout(r) => serde_json::to_value(r),
        Report::Ablation(t) => serde_json::to_value(t),
    }
    .expect("reports serialize");
    let doc = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": report.kind(),
        "provenance": provenance,
        "report": body,
    });
    serde_json::to_string_pretty(&doc).expect("valid JSON") + "\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948"];

fn svg_open(title: &str, note: &str) -> String {
    let mut s = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    if !note.is_empty() {
        let _ = writeln!(s, "<!-- {} -->", note.replace("--", "- -"));
    }
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{}</text>", W / 2.0, escape(title));
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MARGIN,
        W - MARGIN / 2.0,
        H - MARGIN
    );
    let _ = writeln!(s, "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>", H - MARGIN);
    s
}

fn y_of(v: f64, max: f64) -> f64 {
    let span = H - 2.0 * MARGIN;
    H - MARGIN - if max > 0.0 { (v / max).clamp(0.0, 1.0) * span } else { 0.0 }
}

/// Labeled bar chart; the axis runs from zero to the largest value.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)], note: &str) -> String {
    let max = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut s = svg_open(title, note);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{max:.4}</text>", MARGIN - 4.0, MARGIN + 4.0);
    let slot = (W - 1.5 * MARGIN) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let v = if v.is_finite() { *v } else { 0.0 };
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let y = y_of(v, max);
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{} = {v}</title></rect>",
            slot * 0.7,
            H - MARGIN - y,
            PALETTE[i % PALETTE.len()],
            escape(label)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" font-size=\"9\" text-anchor=\"middle\">{}</text>",
            x + slot * 0.35,
            H - MARGIN + 14.0,
            escape(label)
        );
    }
    s + "</svg>\n"
}

/// Predicted (dashed) against recorded (solid) actions, one color per dimension.
pub fn trace_chart_svg(title: &str, trace: &ActionTrace, note: &str) -> String {
    let values = trace.predicted.iter().chain(&trace.ground_truth).flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let n = trace.ground_truth.len().max(2);
    let px = |k: usize| MARGIN + k as f64 * (W - 1.5 * MARGIN) / (n - 1) as f64;
    let py = |v: f64| y_of(v - lo, hi - lo);
    let mut s = svg_open(title, note);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{hi:.3}</text>", MARGIN - 4.0, MARGIN + 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{lo:.3}</text>", MARGIN - 4.0, H - MARGIN);
    let dims = trace.ground_truth.first().map_or(0, Vec::len);
    for d in 0..dims {
        let color = PALETTE[d % PALETTE.len()];
        for (rows, dash) in [(&trace.ground_truth, ""), (&trace.predicted, " stroke-dasharray=\"5,3\"")] {
            let pts: Vec<String> = rows
                .iter()
                .enumerate()
                .filter_map(|(k, r)| r.get(d).filter(|v| v.is_finite()).map(|&v| format!("{:.2},{:.2}", px(k), py(v))))
                .collect();
            let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"{dash}/>", pts.join(" "));
        }
    }
    s + "</svg>\n"
}

fn svgs(report: Report, stem: &str, note: &str) -> Vec<(String, String)> {
    match report {
        Report::Offline(r) => {
            let bars: Vec<(String, f64)> = r.windows.iter().map(|w| (format!("{}@{}", w.episode_seed, w.t), w.mse)).collect();
            let mut out = vec![(format!("{stem}_mse.svg"), bar_chart_svg(&format!("{} offline MSE per window", r.config_id), &bars, note))];
            if let Some(t) = &r.trace {
                let title = format!("{} actions, episode {} from t={}", r.config_id, t.episode_seed, t.t);
                out.push((format!("{stem}_trace.svg"), trace_chart_svg(&title, t, note)));
            }
            out
        }
        Report::Rollout(r) => {
            let bars: Vec<(String, f64)> = r.rollouts.iter().map(|x| (x.seed.to_string(), x.steps as f64)).collect();
            let title = format!("{} steps per rollout, success {}/{}", r.config_id, r.successes, r.n_rollouts);
            vec![(format!("{stem}_steps.svg"), bar_chart_svg(&title, &bars, note))]
        }
        Report::Ablation(t) => {
            let success: Vec<(String, f64)> = t.rows.iter().map(|r| (r.row.name().to_string(), r.median_success)).collect();
            let mse: Vec<(String, f64)> = t.rows.iter().map(|r| (r.row.name().to_string(), r.mean_mse)).collect();
            vec![
                (format!("{stem}_success.svg"), bar_chart_svg("median success rate", &success, note)),
                (format!("{stem}_mse.svg"), bar_chart_svg("mean offline MSE", &mse, note)),
            ]
        }
    }
}

/// Writes the requested artifacts under `dir` and returns their paths. An
/// empty report is an error and writes nothing.
pub fn emit_report(
    report: Report,
    dir: &Path,
    stem: &str,
    formats: &[ReportFormat],
    provenance: &serde_json::Value,
) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::Contract(format!("refusing to write an empty {} report", report.kind())));
    }
    let note = provenance.get("config_hash").and_then(|v| v.as_str()).map(|h| format!("config_hash {h}")).unwrap_or_default();
    let mut files: Vec<(String, String)> = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Csv => {
                let rows = report.csv_rows();
                if let Some(r) = rows.iter().find(|r| r.config.contains([',', '\n', '\r'])) {
                    return Err(Error::Contract(format!("config id `{}` cannot be written as a CSV field", r.config)));
                }
                files.push((format!("{stem}.csv"), to_csv(&rows)));
            }
            ReportFormat::Json => files.push((format!("{stem}.json"), to_json(report, provenance))),
            ReportFormat::Svg => files.extend(svgs(report, stem, &note)),
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    files
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
