//! Rank correlation and the metric-vs-human consistency pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::report::{MetricReport, METRIC_NAMES};

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least 2 items are required, got {0}")]
    TooShort(usize),
    #[error("non-finite value")]
    NonFinite,
    #[error("correlation undefined: one ranking is constant")]
    Constant,
    #[error("annotator {annotator}, sample {sample}: {reason}")]
    BadRanking {
        annotator: String,
        sample: String,
        reason: String,
    },
    #[error("no rankings in annotation set")]
    NoRankings,
    #[error("model {0:?} has no report")]
    MissingModel(String),
    #[error("{0}")]
    Load(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spearman,
    Kendall,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spearman" => Ok(Method::Spearman),
            "kendall" => Ok(Method::Kendall),
            other => Err(format!("unknown method {other:?} (expected spearman or kendall)")),
        }
    }
}

/// 1-based ranks, ascending; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check(a: &[f64], b: &[f64]) -> Result<(), RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(RankError::TooShort(a.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(RankError::NonFinite);
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, RankError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(RankError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks, which is the
/// tie-corrected form.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    check(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Kendall's tau-b over all pairs.
pub fn kendall(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    check(a, b)?;
    let n = a.len();
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].total_cmp(&a[j]) as i64;
            let db = b[i].total_cmp(&b[j]) as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => tie_a += 1,
                (_, 0) => tie_b += 1,
                _ if da == db => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let both_ties = n0 - conc - disc - tie_a - tie_b;
    let na = (tie_a + both_ties) as f64;
    let nb = (tie_b + both_ties) as f64;
    let denom = ((n0 as f64 - na) * (n0 as f64 - nb)).sqrt();
    if denom == 0.0 {
        return Err(RankError::Constant);
    }
    Ok(((conc - disc) as f64 / denom).clamp(-1.0, 1.0))
}

pub fn rank_correlation(a: &[f64], b: &[f64], method: Method) -> Result<f64, RankError> {
    match method {
        Method::Spearman => spearman(a, b),
        Method::Kendall => kendall(a, b),
    }
}

/// One annotator's ordinal ranking of all models for one sample; `ranks[i]`
/// is the rank (1 = best) of `models[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorRanking {
    pub annotator: String,
    pub sample: String,
    pub ranks: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanAnnotations {
    pub models: Vec<String>,
    pub rankings: Vec<AnnotatorRanking>,
}

impl HumanAnnotations {
    pub fn load(path: &Path) -> Result<Self, RankError> {
        let text = std::fs::read_to_string(path).map_err(|e| RankError::Load(format!("{}: {e}", path.display())))?;
        let a: HumanAnnotations =
            serde_json::from_str(&text).map_err(|e| RankError::Load(format!("{}: {e}", path.display())))?;
        a.validate()?;
        Ok(a)
    }

    /// Every ranking must be a permutation of `1..=models.len()`.
    pub fn validate(&self) -> Result<(), RankError> {
        if self.rankings.is_empty() {
            return Err(RankError::NoRankings);
        }
        let m = self.models.len();
        if m < 2 {
            return Err(RankError::TooShort(m));
        }
        for r in &self.rankings {
            let bad = |reason: String| RankError::BadRanking {
                annotator: r.annotator.clone(),
                sample: r.sample.clone(),
                reason,
            };
            if r.ranks.len() != m {
                return Err(bad(format!("{} ranks for {m} models", r.ranks.len())));
            }
            let mut sorted = r.ranks.clone();
            sorted.sort_unstable();
            if sorted.iter().enumerate().any(|(i, &v)| v as usize != i + 1) {
                return Err(bad(format!("ranks {:?} are not a permutation of 1..={m}", r.ranks)));
            }
        }
        Ok(())
    }

    /// Mean rank per model across all annotators and samples.
    pub fn mean_ranks(&self) -> Vec<f64> {
        let m = self.models.len();
        let mut sum = vec![0.0; m];
        for r in &self.rankings {
            for (s, &v) in sum.iter_mut().zip(&r.ranks) {
                *s += f64::from(v);
            }
        }
        sum.iter().map(|s| s / self.rankings.len() as f64).collect()
    }
}

/// Ranks where the highest score gets rank 1.
pub fn descending_ranks(scores: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
    average_ranks(&neg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCorrelation {
    pub metric: String,
    /// `None` when a model lacks the metric or the ranking is constant.
    pub value: Option<f64>,
}

/// Correlate each metric's model ranking (overall means, higher is better)
/// with the mean human ranking.
pub fn human_consistency(
    reports: &[&MetricReport],
    annotations: &HumanAnnotations,
    method: Method,
) -> Result<Vec<MetricCorrelation>, RankError> {
    annotations.validate()?;
    let ordered: Vec<&MetricReport> = annotations
        .models
        .iter()
        .map(|name| {
            reports
                .iter()
                .find(|r| &r.metadata.model == name)
                .copied()
                .ok_or_else(|| RankError::MissingModel(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let human = annotations.mean_ranks();
    let mut out = Vec::new();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let scores: Option<Vec<f64>> = ordered.iter().map(|r| r.overall.values()[k]).collect();
        let value = match scores {
            Some(s) => match rank_correlation(&descending_ranks(&s), &human, method) {
                Ok(v) => Some(v),
                Err(RankError::Constant) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        out.push(MetricCorrelation {
            metric: name.to_string(),
            value,
        });
    }
    Ok(out)
}
