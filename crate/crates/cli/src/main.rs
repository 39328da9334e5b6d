use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ewm_core::closed_loop::RecordedEpisode;
use ewm_core::curation::{bounding_box_min, greedy_select, similarity_matrix, voxelize, VoxelGrid};
use ewm_core::harness::{
    emit_report, evaluate_benchmark, human_consistency, load_manifests, EvalConfig, HumanAnnotations, Method,
    MetricReport, Precision, ReportFormat,
};
use ewm_core::pose::{render_pose_image, CameraModel};
use ewm_core::traj::{parse_trajectory, ArmSelector, Trajectory};

#[derive(Parser)]
#[command(name = "ewm", version, about = "World-model video benchmark evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmArg {
    Left,
    Right,
    Both,
}

impl From<ArmArg> for ArmSelector {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Left => ArmSelector::Left,
            ArmArg::Right => ArmSelector::Right,
            ArmArg::Both => ArmSelector::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a manifest (file or directory) and write reports.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of csv,json,svg.
        #[arg(long, default_value = "csv,json")]
        format: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Model label stored in the report metadata.
        #[arg(long, default_value = "model")]
        model: String,
        /// CSV number format: shortest or table.
        #[arg(long, default_value = "shortest")]
        precision: Precision,
    },
    /// Pick the N most mutually distinct trajectories.
    Curate {
        /// JSON array of trajectory paths, or a text file with one path per line.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        select: usize,
        #[arg(long, default_value_t = ewm_core::curation::DEFAULT_CELL)]
        cell: f64,
        #[arg(long, value_enum, default_value_t = ArmArg::Both)]
        arm: ArmArg,
        /// Write selection.csv and similarity.csv here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate metric rankings from model reports with human rankings.
    HumanCorr {
        /// One JSON report per model; repeat the flag.
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "spearman")]
        method: Method,
    },
    /// Replay a recorded rollout through the closed-loop driver.
    Rollout {
        #[arg(long)]
        recording: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 4)]
        memory_frames: usize,
        /// Save the replayed rollout here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one pose conditioning image per trajectory step.
    RenderPose {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to 2 * cx.
        #[arg(long)]
        width: Option<usize>,
        /// Defaults to 2 * cy.
        #[arg(long)]
        height: Option<usize>,
    },
}

/// Errors in what the user asked for (exit 2) versus failures while doing it (exit 1).
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

trait ConfigContext<T> {
    fn config_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ConfigContext<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_formats(s: &str) -> Result<Vec<ReportFormat>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let f: ReportFormat = part.parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        bail!("no output format given");
    }
    Ok(out)
}

fn run(cmd: Command) -> Result<ExitCode, Failure> {
    match cmd {
        Command::Eval {
            manifest,
            config,
            out,
            format,
            workers,
            model,
            precision,
        } => {
            let cfg = match &config {
                Some(p) => EvalConfig::load(p).config_err()?,
                None => EvalConfig::default(),
            };
            let formats = parse_formats(&format).config_err()?;
            if workers == 0 {
                return Err(Failure::Config(anyhow::anyhow!("--workers must be at least 1")));
            }
            let manifests = load_manifests(&manifest).config_err()?;
            let report = evaluate_benchmark(&manifests, &cfg, workers, &model).context("evaluation")?;
            let written = emit_report(&report, &out, &formats, precision).context("writing report")?;
            for p in written {
                println!("{}", p.display());
            }
            let failed = report.failed_count();
            if failed > 0 {
                for e in report.episodes.iter().filter(|e| e.error.is_some()) {
                    eprintln!("failed {}: {}", e.episode_id, e.error.as_deref().unwrap_or_default());
                }
                eprintln!("{failed} of {} episodes failed", report.episodes.len());
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Curate {
            candidates,
            select,
            cell,
            arm,
            out,
        } => {
            let paths = read_candidates(&candidates).config_err()?;
            let arms = ArmSelector::from(arm);
            let trajs: Vec<Trajectory> = paths
                .iter()
                .map(|p| parse_trajectory(p, arms))
                .collect::<Result<_, _>>()
                .context("reading candidates")?;
            let origin = bounding_box_min(&trajs, arms).context("bounding box")?;
            VoxelGrid::new(origin, cell).config_err()?;
            let grids: Vec<VoxelGrid> = trajs
                .iter()
                .map(|t| voxelize(t, arms, origin, cell))
                .collect::<Result<_, _>>()
                .context("voxelizing")?;
            let sim = similarity_matrix(&grids).context("similarity matrix")?;
            let picked = greedy_select(&sim, select).config_err()?;

            let mut selection = String::from("order,index,path\n");
            for (k, &i) in picked.iter().enumerate() {
                writeln!(selection, "{k},{i},{}", paths[i].display()).unwrap();
            }
            let mut matrix = String::new();
            for i in 0..sim.n() {
                let row: Vec<String> = sim.row(i).iter().map(|v| format!("{v}")).collect();
                writeln!(matrix, "{}", row.join(",")).unwrap();
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                    for (name, body) in [("selection.csv", &selection), ("similarity.csv", &matrix)] {
                        let p = dir.join(name);
                        std::fs::write(&p, body).with_context(|| p.display().to_string())?;
                        println!("{}", p.display());
                    }
                }
                None => print!("{selection}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::HumanCorr {
            reports,
            annotations,
            method,
        } => {
            let loaded: Vec<MetricReport> = reports
                .iter()
                .map(|p| MetricReport::load_json(p))
                .collect::<Result<_, _>>()
                .config_err()?;
            let ann = HumanAnnotations::load(&annotations).config_err()?;
            let refs: Vec<&MetricReport> = loaded.iter().collect();
            let corr = human_consistency(&refs, &ann, method).config_err()?;
            println!(
                "metric,{}",
                if method == Method::Spearman {
                    "spearman"
                } else {
                    "kendall"
                }
            );
            for c in corr {
                match c.value {
                    Some(v) => println!("{},{v}", c.metric),
                    None => println!("{},", c.metric),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Rollout {
            recording,
            budget,
            memory_frames,
            out,
        } => {
            if budget == 0 || memory_frames == 0 {
                return Err(Failure::Config(anyhow::anyhow!(
                    "--budget and --memory-frames must be at least 1"
                )));
            }
            let rec = RecordedEpisode::load(&recording).config_err()?;
            let rollout = rec.replay(budget, memory_frames).context("replay")?;
            println!(
                "chunks={} actions={} action_seconds={} termination={}",
                rollout.chunks.len(),
                rollout.actions.len(),
                rollout.action_seconds(),
                rollout.termination
            );
            if let Some(dir) = out {
                RecordedEpisode::from(rollout).save(&dir).context("saving rollout")?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::RenderPose {
            calib,
            traj,
            out,
            width,
            height,
        } => {
            let cam = CameraModel::load(&calib).config_err()?;
            let t = parse_trajectory(&traj, ArmSelector::Both).config_err()?;
            let w = width.unwrap_or((2.0 * cam.cx).round().max(1.0) as usize);
            let h = height.unwrap_or((2.0 * cam.cy).round().max(1.0) as usize);
            if w == 0 || h == 0 {
                return Err(Failure::Config(anyhow::anyhow!("image size must be positive")));
            }
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            for (i, step) in t.steps().iter().enumerate() {
                let img = render_pose_image(&cam, &step.left, &step.right, w, h);
                let p = out.join(format!("pose_{i:04}.ppm"));
                img.save_ppm(&p).with_context(|| p.display().to_string())?;
            }
            println!("{} images written to {}", t.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_candidates(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new("."));
    let raw: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json_list(&text).with_context(|| path.display().to_string())?
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    };
    if raw.is_empty() {
        bail!("{}: no candidate trajectories", path.display());
    }
    Ok(raw
        .into_iter()
        .map(|p| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        })
        .collect())
}

fn serde_json_list(text: &str) -> Result<Vec<String>> {
    Ok(serde_json::from_str(text)?)
}
