use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Column order of the CSV report and of every metric row.
pub const METRIC_NAMES: [&str; 8] = ["BLEU", "CLIP", "DYN", "Diversity", "SA", "Logic", "TA", "Scene"];

pub const CSV_HEADER: [&str; 12] = [
    "model",
    "scope",
    "task_id",
    "episode_id",
    "BLEU",
    "CLIP",
    "DYN",
    "Diversity",
    "SA",
    "Logic",
    "TA",
    "Scene",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}: non-finite value in report")]
    NonFinite(String),
    #[error("unknown report format {0:?}")]
    Format(String),
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// The eight headline scores; `None` where the input was not available.
/// `clip` is the key-step score on whatever scale it was produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub bleu: Option<f64>,
    pub clip: Option<f64>,
    #[serde(rename = "dyn")]
    pub dyn_: Option<f64>,
    pub diversity: Option<f64>,
    pub sa: Option<f64>,
    pub logic: Option<f64>,
    pub ta: Option<f64>,
    pub scene: Option<f64>,
}

impl MetricRow {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.bleu,
            self.clip,
            self.dyn_,
            self.diversity,
            self.sa,
            self.logic,
            self.ta,
            self.scene,
        ]
    }

    pub fn from_values(v: [Option<f64>; 8]) -> Self {
        MetricRow {
            bleu: v[0],
            clip: v[1],
            dyn_: v[2],
            diversity: v[3],
            sa: v[4],
            logic: v[5],
            ta: v[6],
            scene: v[7],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = METRIC_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name))?;
        self.values()[i]
    }

    /// Column-wise mean over the rows that have a value; `None` when no row does.
    pub fn mean_of<'a>(rows: impl IntoIterator<Item = &'a MetricRow>) -> MetricRow {
        let mut sum = [0.0f64; 8];
        let mut count = [0usize; 8];
        for r in rows {
            for (k, v) in r.values().iter().enumerate() {
                if let Some(v) = v {
                    sum[k] += v;
                    count[k] += 1;
                }
            }
        }
        let mut out = [None; 8];
        for k in 0..8 {
            if count[k] > 0 {
                out[k] = Some(sum[k] / count[k] as f64);
            }
        }
        MetricRow::from_values(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub task_id: String,
    pub status: EpisodeStatus,
    pub error: Option<String>,
    pub selected_sample: Option<usize>,
    pub symh: Option<f64>,
    pub metrics: MetricRow,
    pub keystep_mismatch: Option<f64>,
    pub semantics: Option<f64>,
}

impl EpisodeRecord {
    pub fn failed(episode_id: &str, task_id: &str, error: String) -> Self {
        EpisodeRecord {
            episode_id: episode_id.to_string(),
            task_id: task_id.to_string(),
            status: EpisodeStatus::Failed,
            error: Some(error),
            selected_sample: None,
            symh: None,
            metrics: MetricRow::default(),
            keystep_mismatch: None,
            semantics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub episodes: usize,
    pub failed: usize,
    pub means: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub config_hash: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metadata: ReportMetadata,
    pub episodes: Vec<EpisodeRecord>,
    pub tasks: Vec<TaskSummary>,
    pub overall: MetricRow,
}

impl MetricReport {
    /// Build the per-task and overall means from episode records. Episodes
    /// are sorted by id first, so the result does not depend on input order.
    pub fn from_episodes(metadata: ReportMetadata, mut episodes: Vec<EpisodeRecord>) -> Self {
        episodes.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
        let mut task_ids: Vec<&str> = episodes.iter().map(|e| e.task_id.as_str()).collect();
        task_ids.sort_unstable();
        task_ids.dedup();
        let tasks: Vec<TaskSummary> = task_ids
            .iter()
            .map(|&t| {
                let members: Vec<&EpisodeRecord> = episodes.iter().filter(|e| e.task_id == t).collect();
                TaskSummary {
                    task_id: t.to_string(),
                    episodes: members.len(),
                    failed: members.iter().filter(|e| e.status == EpisodeStatus::Failed).count(),
                    means: MetricRow::mean_of(
                        members
                            .iter()
                            .filter(|e| e.status == EpisodeStatus::Ok)
                            .map(|e| &e.metrics),
                    ),
                }
            })
            .collect();
        let overall = MetricRow::mean_of(tasks.iter().map(|t| &t.means));
        MetricReport {
            metadata,
            episodes,
            tasks,
            overall,
        }
    }

    pub fn failed_count(&self) -> usize {
        self.episodes
            .iter()
            .filter(|e| e.status == EpisodeStatus::Failed)
            .count()
    }

    pub fn check_finite(&self) -> Result<(), ReportError> {
        let finite = |r: &MetricRow| r.values().iter().flatten().all(|v| v.is_finite());
        for e in &self.episodes {
            let extra = [e.symh, e.keystep_mismatch, e.semantics];
            if !finite(&e.metrics) || extra.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ReportError::NonFinite(e.episode_id.clone()));
            }
        }
        for t in &self.tasks {
            if !finite(&t.means) {
                return Err(ReportError::NonFinite(t.task_id.clone()));
            }
        }
        if !finite(&self.overall) {
            return Err(ReportError::NonFinite("overall".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        self.check_finite()?;
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        Ok(s)
    }

    pub fn load_json(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Number formatting for CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Shortest text that round-trips to the same f64.
    #[default]
    Shortest,
    /// Fixed decimals as in published tables: 2 for CLIP, 4 otherwise.
    Table,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shortest" => Ok(Precision::Shortest),
            "table" => Ok(Precision::Table),
            other => Err(format!("unknown precision {other:?} (expected shortest or table)")),
        }
    }
}

fn fmt_value(v: Option<f64>, column: usize, precision: Precision) -> String {
    match (v, precision) {
        (None, _) => String::new(),
        (Some(x), Precision::Shortest) => format!("{x}"),
        (Some(x), Precision::Table) if column == 1 => format!("{x:.2}"),
        (Some(x), Precision::Table) => format!("{x:.4}"),
    }
}

/// Rows: one per episode, then one per task, then the overall means.
/// Failed episodes keep their row with empty metric cells.
pub fn write_csv<W: Write>(reports: &[&MetricReport], out: W, precision: Precision) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        r.check_finite()?;
        let model = r.metadata.model.as_str();
        let mut row = |scope: &str, task: &str, episode: &str, m: &MetricRow| -> Result<(), ReportError> {
            let mut rec = vec![
                model.to_string(),
                scope.to_string(),
                task.to_string(),
                episode.to_string(),
            ];
            rec.extend(m.values().iter().enumerate().map(|(k, v)| fmt_value(*v, k, precision)));
            w.write_record(&rec)?;
            Ok(())
        };
        for e in &r.episodes {
            row("episode", &e.task_id, &e.episode_id, &e.metrics)?;
        }
        for t in &r.tasks {
            row("task", &t.task_id, "", &t.means)?;
        }
        if !r.episodes.is_empty() {
            row("overall", "", "", &r.overall)?;
        }
    }
    w.flush().map_err(|source| ReportError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

pub fn to_csv(reports: &[&MetricReport], precision: Precision) -> Result<String, ReportError> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf, precision)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
];

/// One panel per metric, one bar per model (overall means). Bars are scaled
/// to the largest absolute value in their panel; missing values are marked
/// "n/a".
pub fn render_svg(reports: &[&MetricReport]) -> String {
    const PANEL_W: usize = 180;
    const PANEL_H: usize = 160;
    const PLOT_H: f64 = 100.0;
    const COLS: usize = 4;
    let rows = METRIC_NAMES.len().div_ceil(COLS);
    let legend_h = 20 * reports.len().max(1) + 10;
    let (width, height) = (PANEL_W * COLS, PANEL_H * rows + legend_h);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    let n = reports.len().max(1);
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let (px, py) = ((k % COLS) * PANEL_W, (k / COLS) * PANEL_H);
        let values: Vec<Option<f64>> = reports.iter().map(|r| r.overall.values()[k]).collect();
        let scale = values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        s.push_str(&format!("<g transform=\"translate({px},{py})\">\n"));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"16\" text-anchor=\"middle\" font-weight=\"bold\">{name}</text>\n",
            PANEL_W / 2
        ));
        let base = 20.0 + PLOT_H;
        s.push_str(&format!(
            "<line x1=\"10\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"#333\"/>\n",
            PANEL_W - 10
        ));
        let slot = (PANEL_W - 20) as f64 / n as f64;
        for (i, v) in values.iter().enumerate() {
            let x = 10.0 + slot * i as f64 + slot * 0.15;
            let w = slot * 0.7;
            let color = PALETTE[i % PALETTE.len()];
            match v {
                Some(v) => {
                    let h = if scale > 0.0 { PLOT_H * v.abs() / scale } else { 0.0 };
                    s.push_str(&format!(
                        "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{color}\"/>\n",
                        base - h
                    ));
                    s.push_str(&format!(
                        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.4}</text>\n",
                        x + w / 2.0,
                        base + 14.0
                    ));
                }
                None => s.push_str(&format!(
                    "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#888\">n/a</text>\n",
                    x + w / 2.0,
                    base + 14.0
                )),
            }
        }
        s.push_str("</g>\n");
    }
    for (i, r) in reports.iter().enumerate() {
        let y = PANEL_H * rows + 10 + 20 * i;
        let color = PALETTE[i % PALETTE.len()];
        s.push_str(&format!(
            "<rect x=\"10\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"28\" y=\"{}\">{}</text>\n",
            y + 10,
            xml_escape(&r.metadata.model)
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(ReportError::Format(other.to_string())),
        }
    }
}

/// Write `report.{csv,json,svg}` into `dir`, creating it if needed.
/// Returns the written paths in format order.
pub fn emit_report(
    report: &MetricReport,
    dir: &Path,
    formats: &[ReportFormat],
    precision: Precision,
) -> Result<Vec<std::path::PathBuf>, ReportError> {
    report.check_finite()?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => ("report.csv", to_csv(&[report], precision)?),
            ReportFormat::Json => ("report.json", report.to_json()?),
            ReportFormat::Svg => ("report.svg", render_svg(&[report])),
        };
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(model: &str) -> ReportMetadata {
        ReportMetadata {
            tool_version: TOOL_VERSION.into(),
            config_hash: "0".repeat(64),
            model: model.into(),
        }
    }

    fn ok(id: &str, task: &str, sa: f64) -> EpisodeRecord {
        EpisodeRecord {
            status: EpisodeStatus::Ok,
            error: None,
            selected_sample: Some(0),
            symh: Some(1.0 / sa),
            metrics: MetricRow {
                sa: Some(sa),
                ..MetricRow::default()
            },
            ..EpisodeRecord::failed(id, task, String::new())
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = MetricReport::from_episodes(meta("m"), vec![]);
        assert_eq!(
            to_csv(&[&r], Precision::Shortest).unwrap(),
            "model,scope,task_id,episode_id,BLEU,CLIP,DYN,Diversity,SA,Logic,TA,Scene\n"
        );
        assert_eq!(r.overall, MetricRow::default());
    }

    #[test]
    fn task_and_overall_means() {
        let eps = vec![ok("b", "t1", 0.4), ok("a", "t1", 0.2), ok("c", "t2", 1.0)];
        let r = MetricReport::from_episodes(meta("m"), eps);
        assert_eq!(r.episodes[0].episode_id, "a");
        assert!((r.tasks[0].means.sa.unwrap() - 0.3).abs() < 1e-15);
        // mean of task means, not of episodes
        assert!((r.overall.sa.unwrap() - 0.65).abs() < 1e-15);
        assert_eq!(r.overall.bleu, None);
    }

    #[test]
    fn failed_episodes_are_listed_not_averaged() {
        let eps = vec![ok("a", "t", 0.5), EpisodeRecord::failed("b", "t", "boom".into())];
        let r = MetricReport::from_episodes(meta("m"), eps);
        assert_eq!(r.failed_count(), 1);
        assert_eq!(r.tasks[0].failed, 1);
        assert_eq!(r.tasks[0].means.sa, Some(0.5));
        let csv = to_csv(&[&r], Precision::Shortest).unwrap();
        assert!(csv.contains("m,episode,t,b,,,,,,,,\n"), "{csv}");
    }

    #[test]
    fn emission_is_deterministic_and_permutation_free() {
        let a = MetricReport::from_episodes(meta("m"), vec![ok("a", "t", 0.2), ok("b", "u", 0.3)]);
        let b = MetricReport::from_episodes(meta("m"), vec![ok("b", "u", 0.3), ok("a", "t", 0.2)]);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(render_svg(&[&a]), render_svg(&[&b]));
        let back: MetricReport = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn table_precision() {
        assert_eq!(fmt_value(Some(0.975), 6, Precision::Table), "0.9750");
        assert_eq!(fmt_value(Some(90.79), 1, Precision::Table), "90.79");
        assert_eq!(fmt_value(Some(0.1), 4, Precision::Shortest), "0.1");
    }

    #[test]
    fn non_finite_rejected() {
        let mut r = MetricReport::from_episodes(meta("m"), vec![ok("a", "t", 0.2)]);
        r.episodes[0].metrics.ta = Some(f64::NAN);
        assert!(matches!(r.to_json(), Err(ReportError::NonFinite(_))));
    }
}
