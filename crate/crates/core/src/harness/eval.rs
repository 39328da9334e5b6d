use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use super::config::{EvalConfig, SampleSelection};
use super::manifest::EpisodeManifest;
use super::report::{EpisodeRecord, EpisodeStatus, MetricReport, MetricRow, ReportMetadata};
use crate::geo::{dyn_score, sa_score, symmetric_hausdorff, ta_score, PointSeq};
use crate::semantic::{
    bleu, diversity_score, keystep_consistency, load_json, logic_score, scene_consistency, CaptionRecord,
    GlobalEmbedding, PatchEmbeddingSeq, ViolationRecord,
};
use crate::traj::{kinematic_profile, parse_trajectory, Arm, ArmSelector, KinematicProfile, Trajectory};

type Source = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Source,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("no episodes to evaluate")]
    NoEpisodes,
    #[error("worker pool: {0}")]
    Pool(String),
}

fn at<E: Into<Source>>(path: &Path) -> impl FnOnce(E) -> EvalError + '_ {
    move |e| EvalError::File {
        path: path.display().to_string(),
        source: e.into(),
    }
}

struct ArmData {
    points: PointSeq,
    profile: KinematicProfile,
}

fn arm_data(path: &Path) -> Result<Vec<ArmData>, EvalError> {
    let t: Trajectory = parse_trajectory(path, ArmSelector::Both).map_err(at(path))?;
    Arm::BOTH
        .iter()
        .map(|&arm| {
            let points = PointSeq::from_points(&t.positions(arm)).map_err(at(path))?;
            let profile = kinematic_profile(&t, arm).map_err(at(path))?;
            Ok(ArmData { points, profile })
        })
        .collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

struct TrajScores {
    sa: f64,
    ta: f64,
    dyn_: f64,
}

fn traj_scores(gt: &[ArmData], s: &[ArmData], cfg: &EvalConfig, path: &Path) -> Result<TrajScores, EvalError> {
    let mut sa = Vec::new();
    let mut ta = Vec::new();
    let mut dy = Vec::new();
    for (g, p) in gt.iter().zip(s) {
        sa.push(sa_score(&g.points, &p.points, cfg.epsilon).map_err(at(path))?);
        ta.push(ta_score(&g.points, &p.points, cfg.epsilon).map_err(at(path))?);
        dy.push(dyn_score(&g.profile, &p.profile, &cfg.dyn_weights).map_err(at(path))?);
    }
    Ok(TrajScores {
        sa: mean(sa),
        ta: mean(ta),
        dyn_: mean(dy),
    })
}

fn finite(name: &'static str, v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite(name))
    }
}

/// Score one episode.
///
/// Samples are ranked by symmetric Hausdorff distance to the ground truth
/// (mean over both arms) and SA/TA/DYN are taken from the closest one, or
/// averaged over all samples under [`SampleSelection::Mean`]. Scene score
/// uses the selected sample's patch embeddings. Absent optional inputs give
/// `None` for the scores that need them and leave every other score alone.
pub fn evaluate_episode(m: &EpisodeManifest, cfg: &EvalConfig) -> Result<EpisodeRecord, EvalError> {
    let gt = arm_data(&m.gt_trajectory)?;
    let samples: Vec<Vec<ArmData>> = m
        .samples
        .iter()
        .map(|s| arm_data(&s.trajectory))
        .collect::<Result<_, _>>()?;
    if samples.is_empty() {
        return Err(EvalError::File {
            path: m.episode_id.clone(),
            source: "no samples".into(),
        });
    }

    let mut best = (0usize, f64::INFINITY);
    for (i, (s, entry)) in samples.iter().zip(&m.samples).enumerate() {
        let mut d = Vec::new();
        for (g, p) in gt.iter().zip(s) {
            d.push(symmetric_hausdorff(&g.points, &p.points).map_err(at(&entry.trajectory))?);
        }
        let d = mean(d);
        if d < best.1 {
            best = (i, d);
        }
    }
    let (selected, symh) = best;

    let scores = match cfg.sample_selection {
        SampleSelection::Best => traj_scores(&gt, &samples[selected], cfg, &m.samples[selected].trajectory)?,
        SampleSelection::Mean => {
            let all: Vec<TrajScores> = samples
                .iter()
                .zip(&m.samples)
                .map(|(s, e)| traj_scores(&gt, s, cfg, &e.trajectory))
                .collect::<Result<_, _>>()?;
            TrajScores {
                sa: mean(all.iter().map(|s| s.sa)),
                ta: mean(all.iter().map(|s| s.ta)),
                dyn_: mean(all.iter().map(|s| s.dyn_)),
            }
        }
    };

    let scene = match &m.samples[selected].patch_embedding {
        Some(p) => {
            let e = PatchEmbeddingSeq::load(p).map_err(at(p))?;
            Some(scene_consistency(&e).map_err(at(p))?)
        }
        None => None,
    };

    let globals: Vec<GlobalEmbedding> = m
        .samples
        .iter()
        .filter_map(|s| s.global_embedding.as_deref())
        .map(|p| GlobalEmbedding::load(p).map_err(at(p)))
        .collect::<Result<_, _>>()?;
    let diversity = if globals.len() >= 2 {
        Some(diversity_score(&globals).map_err(|e| EvalError::File {
            path: m.episode_id.clone(),
            source: e.into(),
        })?)
    } else {
        None
    };

    let (mut bleu_v, mut clip, mut mismatch) = (None, None, None);
    if let Some(p) = &m.captions {
        let rec: CaptionRecord = load_json(p).map_err(at(p))?;
        let reference = if rec.instruction.trim().is_empty() {
            m.instruction.as_str()
        } else {
            rec.instruction.as_str()
        };
        bleu_v = Some(bleu(&rec.summary, reference, cfg.bleu.max_order).map_err(at(p))?);
        if !rec.steps_gt.is_empty() && !rec.steps_gen.is_empty() {
            let k = keystep_consistency(&rec.steps_gt, &rec.steps_gen).map_err(at(p))?;
            clip = Some(k.score);
            mismatch = Some(k.length_mismatch);
        }
    }

    let logic = match &m.violations {
        Some(p) => {
            let rec: ViolationRecord = load_json(p).map_err(at(p))?;
            Some(logic_score(&rec).map_err(at(p))?)
        }
        None => None,
    };

    let semantics = match (&cfg.semantics, bleu_v, clip, logic) {
        (Some(w), Some(b), Some(k), Some(l)) => {
            Some((w.bleu * b + w.keystep * k + w.logic * l) / (w.bleu + w.keystep + w.logic))
        }
        _ => None,
    };

    Ok(EpisodeRecord {
        episode_id: m.episode_id.clone(),
        task_id: m.task_id.clone(),
        status: EpisodeStatus::Ok,
        error: None,
        selected_sample: Some(selected),
        symh: Some(finite("symH", symh)?),
        metrics: MetricRow {
            bleu: bleu_v,
            clip,
            dyn_: Some(finite("DYN", scores.dyn_)?),
            diversity,
            sa: Some(finite("SA", scores.sa)?),
            logic,
            ta: Some(finite("TA", scores.ta)?),
            scene,
        },
        keystep_mismatch: mismatch,
        semantics,
    })
}

/// Evaluate every episode on a pool of `workers` threads and aggregate.
///
/// Failures are recorded in the report rather than aborting the batch. The
/// output depends only on the manifest set and the config, not on input
/// order or worker count.
pub fn evaluate_benchmark(
    manifests: &[EpisodeManifest],
    cfg: &EvalConfig,
    workers: usize,
    model: &str,
) -> Result<MetricReport, EvalError> {
    if manifests.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let mut order: Vec<&EpisodeManifest> = manifests.iter().collect();
    order.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let records: Vec<EpisodeRecord> = pool.install(|| {
        order
            .par_iter()
            .map(|m| {
                evaluate_episode(m, cfg)
                    .unwrap_or_else(|e| EpisodeRecord::failed(&m.episode_id, &m.task_id, e.to_string()))
            })
            .collect()
    });
    let metadata = ReportMetadata {
        tool_version: super::report::TOOL_VERSION.to_string(),
        config_hash: cfg.hash(),
        model: model.to_string(),
    };
    Ok(MetricReport::from_episodes(metadata, records))
}
