//! Scene consistency, diversity and motion-semantics scores over embeddings,
//! captions and violation annotations produced upstream.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, Tensor};

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("need at least {needed} frames, have {have}")]
    TooFewFrames { needed: usize, have: usize },
    #[error("zero-norm embedding at frame {frame}, patch {patch}")]
    ZeroNormPatch { frame: usize, patch: usize },
    #[error("zero-norm vector at index {0}")]
    ZeroNorm(usize),
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("shape {frames}x{patches}x{dim} does not match {len} values")]
    Shape {
        frames: usize,
        patches: usize,
        dim: usize,
        len: usize,
    },
    #[error("vector length mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least two embeddings, have {0}")]
    TooFewEmbeddings(usize),
    #[error("empty token stream")]
    EmptyTokens,
    #[error("empty step list")]
    EmptySteps,
    #[error("taxonomy size must be at least 1")]
    EmptyTaxonomy,
    #[error("category {category} outside taxonomy of size {size}")]
    InvalidCategory { category: usize, size: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two non-zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Per-frame patch embeddings, `frames x patches x dim`, normalized to unit
/// length on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingSeq {
    frames: usize,
    patches: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PatchEmbeddingSeq {
    pub fn new(frames: usize, patches: usize, dim: usize, raw: &[f32]) -> Result<Self, SemanticError> {
        if frames.checked_mul(patches).and_then(|n| n.checked_mul(dim)) != Some(raw.len()) || dim == 0 {
            return Err(SemanticError::Shape {
                frames,
                patches,
                dim,
                len: raw.len(),
            });
        }
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(SemanticError::NonFinite);
        }
        let mut data: Vec<f64> = raw.iter().map(|&v| f64::from(v)).collect();
        for (k, v) in data.chunks_exact_mut(dim).enumerate() {
            let n = norm(v);
            if n == 0.0 {
                return Err(SemanticError::ZeroNormPatch {
                    frame: k / patches,
                    patch: k % patches,
                });
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(PatchEmbeddingSeq {
            frames,
            patches,
            dim,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, SemanticError> {
        t.expect_rank(3)?;
        let d = |i: usize| t.dims[i] as usize;
        PatchEmbeddingSeq::new(d(0), d(1), d(2), &t.data)
    }

    pub fn load(path: &Path) -> Result<Self, SemanticError> {
        PatchEmbeddingSeq::from_tensor(&Tensor::load(path)?)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn patch(&self, frame: usize, patch: usize) -> &[f64] {
        let start = (frame * self.patches + patch) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// Mean over frames `t >= 1` of the average of patchwise cosine similarity
/// to the previous frame and to the first frame.
pub fn scene_consistency(e: &PatchEmbeddingSeq) -> Result<f64, SemanticError> {
    if e.frames < 2 {
        return Err(SemanticError::TooFewFrames {
            needed: 2,
            have: e.frames,
        });
    }
    if e.patches == 0 {
        return Err(SemanticError::Shape {
            frames: e.frames,
            patches: 0,
            dim: e.dim,
            len: 0,
        });
    }
    let per_patch = e.patches as f64;
    let total: f64 = (1..e.frames)
        .map(|t| {
            let (mut prev, mut first) = (0.0, 0.0);
            for p in 0..e.patches {
                let cur = e.patch(t, p);
                prev += dot(cur, e.patch(t - 1, p));
                first += dot(cur, e.patch(0, p));
            }
            0.5 * (prev / per_patch) + 0.5 * (first / per_patch)
        })
        .sum();
    Ok(total / (e.frames - 1) as f64)
}

/// One global embedding per generated video.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEmbedding(Vec<f64>);

impl GlobalEmbedding {
    pub fn new(v: Vec<f64>) -> Result<Self, SemanticError> {
        if !v.iter().all(|x| x.is_finite()) {
            return Err(SemanticError::NonFinite);
        }
        if norm(&v) == 0.0 {
            return Err(SemanticError::ZeroNorm(0));
        }
        Ok(GlobalEmbedding(v))
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, SemanticError> {
        t.expect_rank(1)?;
        GlobalEmbedding::new(t.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn load(path: &Path) -> Result<Self, SemanticError> {
        GlobalEmbedding::from_tensor(&Tensor::load(path)?)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `1 - mean pairwise cosine similarity` over all unordered pairs.
pub fn diversity_score(embs: &[GlobalEmbedding]) -> Result<f64, SemanticError> {
    if embs.len() < 2 {
        return Err(SemanticError::TooFewEmbeddings(embs.len()));
    }
    let dim = embs[0].0.len();
    if let Some(e) = embs.iter().find(|e| e.0.len() != dim) {
        return Err(SemanticError::DimensionMismatch(dim, e.0.len()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            sum += cosine(&embs[i].0, &embs[j].0);
            pairs += 1;
        }
    }
    Ok(1.0 - sum / pairs as f64)
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and the candidate n-gram total.
pub fn clipped_ngram_counts(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if n == 0 || candidate.len() < n {
        return (0, 0);
    }
    let refs = ngram_counts(reference, n);
    let matched = ngram_counts(candidate, n)
        .into_iter()
        .map(|(g, c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len() + 1 - n)
}

/// Modified (clipped) n-gram precision of a candidate against one reference.
pub fn modified_precision(candidate: &str, reference: &str, n: usize) -> Result<f64, SemanticError> {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    if c.is_empty() || r.is_empty() {
        return Err(SemanticError::EmptyTokens);
    }
    let (m, total) = clipped_ngram_counts(&c, &r, n);
    Ok(if total == 0 { 0.0 } else { m as f64 / total as f64 })
}

pub const BLEU_MAX_ORDER: usize = 4;

/// Sentence BLEU against a single reference: orders `1..=max_order` with
/// uniform weights, brevity penalty and no smoothing.
///
/// Orders longer than the candidate contribute no n-grams and are left out
/// of the geometric mean, so a one-word sentence scores 1 against itself.
pub fn bleu(candidate: &str, reference: &str, max_order: usize) -> Result<f64, SemanticError> {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    if c.is_empty() || r.is_empty() {
        return Err(SemanticError::EmptyTokens);
    }
    let orders = max_order.max(1).min(c.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (m, total) = clipped_ngram_counts(&c, &r, n);
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / total as f64).ln();
    }
    let (cl, rl) = (c.len() as f64, r.len() as f64);
    let bp = if cl > rl { 1.0 } else { (1.0 - rl / cl).exp() };
    Ok(bp * (log_sum / orders as f64).exp())
}

/// Global-level alignment: BLEU-4 of the generated summary caption against
/// the task instruction.
pub fn bleu_global(candidate: &str, reference: &str) -> Result<f64, SemanticError> {
    bleu(candidate, reference, BLEU_MAX_ORDER)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyStepScore {
    /// Mean cosine similarity over index-aligned step pairs.
    pub score: f64,
    /// `|len_gt - len_gen| / max(len_gt, len_gen)`
    pub length_mismatch: f64,
}

pub fn keystep_consistency(steps_gt: &[Vec<f64>], steps_gen: &[Vec<f64>]) -> Result<KeyStepScore, SemanticError> {
    if steps_gt.is_empty() || steps_gen.is_empty() {
        return Err(SemanticError::EmptySteps);
    }
    let n = steps_gt.len().min(steps_gen.len());
    let mut sum = 0.0;
    for i in 0..n {
        let (a, b) = (&steps_gt[i], &steps_gen[i]);
        if a.len() != b.len() {
            return Err(SemanticError::DimensionMismatch(a.len(), b.len()));
        }
        if norm(a) == 0.0 || norm(b) == 0.0 {
            return Err(SemanticError::ZeroNorm(i));
        }
        sum += cosine(a, b);
    }
    let longest = steps_gt.len().max(steps_gen.len());
    Ok(KeyStepScore {
        score: sum / n as f64,
        length_mismatch: (longest - n) as f64 / longest as f64,
    })
}

/// Captions and step embeddings for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub instruction: String,
    pub summary: String,
    #[serde(default)]
    pub steps_gt: Vec<Vec<f64>>,
    #[serde(default)]
    pub steps_gen: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub category: usize,
    pub count: u32,
}

/// Detected logical-error counts against a fixed taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub taxonomy_size: usize,
    #[serde(default)]
    pub violations: Vec<Violation>,
}

/// `max(0, 1 - total violations / taxonomy_size)`
pub fn logic_score(v: &ViolationRecord) -> Result<f64, SemanticError> {
    if v.taxonomy_size == 0 {
        return Err(SemanticError::EmptyTaxonomy);
    }
    let mut total = 0u64;
    for entry in &v.violations {
        if entry.category >= v.taxonomy_size {
            return Err(SemanticError::InvalidCategory {
                category: entry.category,
                size: v.taxonomy_size,
            });
        }
        total += u64::from(entry.count);
    }
    Ok((1.0 - total as f64 / v.taxonomy_size as f64).max(0.0))
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SemanticError> {
    let text = std::fs::read_to_string(path).map_err(|source| SemanticError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SemanticError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(frames: usize, patches: usize, dim: usize, raw: &[f32]) -> PatchEmbeddingSeq {
        PatchEmbeddingSeq::new(frames, patches, dim, raw).unwrap()
    }

    #[test]
    fn identical_frames_are_fully_consistent() {
        let frame = [0.3f32, -1.0, 2.0, 0.5, 0.5, 0.5];
        let raw: Vec<f32> = frame.iter().cycle().take(frame.len() * 4).copied().collect();
        let e = seq(4, 2, 3, &raw);
        assert!((scene_consistency(&e).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_frames_score_zero() {
        // frame 0 = e0, frame 1 = e1, frame 2 = e2: each orthogonal to its
        // predecessor and to frame 0.
        let raw = [1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(scene_consistency(&seq(3, 1, 3, &raw)).unwrap(), 0.0);
    }

    #[test]
    fn scene_consistency_hand_case() {
        // T=3, P=1, D=2: f0=(1,0), f1=(1,1), f2=(0,1)
        // t=1: cos(f1,f0)=1/sqrt2 twice -> 1/sqrt2
        // t=2: cos(f2,f1)=1/sqrt2, cos(f2,f0)=0 -> 1/(2 sqrt2)
        // mean = 3/(4 sqrt2)
        let e = seq(3, 1, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let expected = 3.0 / (4.0 * 2f64.sqrt());
        assert!((scene_consistency(&e).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn scene_consistency_errors() {
        let err = PatchEmbeddingSeq::new(2, 2, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap_err();
        assert!(
            matches!(err, SemanticError::ZeroNormPatch { frame: 1, patch: 1 }),
            "{err}"
        );
        let one = seq(1, 1, 2, &[1.0, 0.0]);
        assert!(matches!(
            scene_consistency(&one),
            Err(SemanticError::TooFewFrames { .. })
        ));
        assert!(PatchEmbeddingSeq::new(2, 1, 2, &[1.0; 3]).is_err());
        assert!(PatchEmbeddingSeq::new(1, 1, 1, &[f32::NAN]).is_err());
    }

    #[test]
    fn diversity_extremes() {
        let v = |x: &[f64]| GlobalEmbedding::new(x.to_vec()).unwrap();
        let same = [v(&[1.0, 2.0]), v(&[1.0, 2.0]), v(&[1.0, 2.0])];
        assert!(diversity_score(&same).unwrap().abs() < 1e-12);
        assert_eq!(diversity_score(&[v(&[1.0, 0.0]), v(&[0.0, 3.0])]).unwrap(), 1.0);
        assert_eq!(diversity_score(&[v(&[1.0, 0.0]), v(&[-2.0, 0.0])]).unwrap(), 2.0);
        assert!(matches!(
            diversity_score(&same[..1]),
            Err(SemanticError::TooFewEmbeddings(1))
        ));
        assert!(GlobalEmbedding::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn tokenizer() {
        assert_eq!(
            tokenize("Pick up the CUP, then place-it!"),
            ["pick", "up", "the", "cup", "then", "place", "it"]
        );
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let s = "Pick the red block and place it in the bowl";
        assert_eq!(bleu_global(s, s).unwrap(), 1.0);
        assert_eq!(bleu_global("grasp", "grasp").unwrap(), 1.0);
        assert_eq!(bleu_global("open the drawer", "wipe a table").unwrap(), 0.0);
        assert!(matches!(bleu_global("", "x"), Err(SemanticError::EmptyTokens)));
    }

    #[test]
    fn clipped_unigram_precision() {
        // Every "the" in the candidate is clipped to the reference's two.
        let p = modified_precision("the the the the the the the", "the cat is on the mat", 1).unwrap();
        assert!((p - 2.0 / 7.0).abs() < 1e-12);
        // no candidate bigram appears in the reference
        assert_eq!(
            bleu_global("the the the the the the the", "the cat is on the mat").unwrap(),
            0.0
        );
    }

    #[test]
    fn bleu_hand_cases() {
        // precisions 6/7, 5/6, 4/5, 3/4; candidate longer so BP = 1
        let b = bleu_global("the cat is on the mat today", "the cat is on the mat").unwrap();
        assert!((b - (3.0f64 / 7.0).powf(0.25)).abs() < 1e-12);
        // all precisions 1, BP = exp(1 - 6/4)
        let b = bleu_global("the cat is on", "the cat is on the mat").unwrap();
        assert!((b - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn keystep_cases() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]];
        let s = keystep_consistency(&a, &a).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);
        assert_eq!(s.length_mismatch, 0.0);
        let ortho = vec![vec![0.0, 1.0], vec![3.0, 0.0]];
        let s = keystep_consistency(&a, &ortho).unwrap();
        assert_eq!(s.score, 0.0);
        assert!((s.length_mismatch - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(keystep_consistency(&a, &[]), Err(SemanticError::EmptySteps)));
        assert!(matches!(
            keystep_consistency(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]),
            Err(SemanticError::ZeroNorm(0))
        ));
    }

    #[test]
    fn logic_cases() {
        let rec = |v: &[(usize, u32)]| ViolationRecord {
            taxonomy_size: 4,
            violations: v
                .iter()
                .map(|&(category, count)| Violation { category, count })
                .collect(),
        };
        assert_eq!(logic_score(&rec(&[])).unwrap(), 1.0);
        assert_eq!(logic_score(&rec(&[(0, 1), (1, 1), (2, 1), (3, 1)])).unwrap(), 0.0);
        assert_eq!(logic_score(&rec(&[(2, 1)])).unwrap(), 0.75);
        assert_eq!(logic_score(&rec(&[(2, 9)])).unwrap(), 0.0);
        assert!(matches!(
            logic_score(&rec(&[(4, 1)])),
            Err(SemanticError::InvalidCategory { .. })
        ));
        let empty = ViolationRecord {
            taxonomy_size: 0,
            violations: vec![],
        };
        assert!(matches!(logic_score(&empty), Err(SemanticError::EmptyTaxonomy)));
    }

    #[test]
    fn records_parse_from_json() {
        let c: CaptionRecord = serde_json::from_str(
            r#"{"instruction":"open drawer","summary":"the robot opens a drawer","steps_gt":[[1,0]],"steps_gen":[[0.5,0.5]]}"#,
        )
        .unwrap();
        assert_eq!(c.steps_gen, vec![vec![0.5, 0.5]]);
        let v: ViolationRecord =
            serde_json::from_str(r#"{"taxonomy_size":5,"violations":[{"category":1,"count":2}]}"#).unwrap();
        assert_eq!(logic_score(&v).unwrap(), 0.6);
    }

    // Rotation in the (0,1) coordinate plane, applied to every patch.
    fn rotate(raw: &[f32], dim: usize, theta: f64) -> Vec<f32> {
        let (s, c) = theta.sin_cos();
        raw.chunks_exact(dim)
            .flat_map(|v| {
                let mut out: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
                let (x, y) = (out[0], out[1]);
                out[0] = c * x - s * y;
                out[1] = s * x + c * y;
                out.into_iter().map(|x| x as f32)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn scene_is_rotation_invariant(raw in prop::collection::vec(0.1f32..1.0, 3 * 2 * 3), theta in -3.0f64..3.0) {
            let a = scene_consistency(&seq(3, 2, 3, &raw)).unwrap();
            let b = scene_consistency(&seq(3, 2, 3, &rotate(&raw, 3, theta))).unwrap();
            prop_assert!((a - b).abs() < 1e-5);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn diversity_ignores_scale(vs in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 4), 2..5), k in 0.01f64..100.0) {
            let base: Vec<_> = vs.iter().map(|v| GlobalEmbedding::new(v.clone()).unwrap()).collect();
            let scaled: Vec<_> = vs.iter().map(|v| GlobalEmbedding::new(v.iter().map(|x| x * k).collect()).unwrap()).collect();
            let (a, b) = (diversity_score(&base).unwrap(), diversity_score(&scaled).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1e-12..=2.0).contains(&a));
        }

        #[test]
        fn bleu_self_is_one(words in prop::collection::vec("[a-z]{1,6}", 1..12)) {
            let s = words.join(" ");
            prop_assert!((bleu_global(&s, &s).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn logic_non_increasing(counts in prop::collection::vec(0u32..4, 5), bump in 0usize..5) {
            let rec = |c: &[u32]| ViolationRecord {
                taxonomy_size: 5,
                violations: c.iter().enumerate().map(|(category, &count)| Violation { category, count }).collect(),
            };
            let mut more = counts.clone();
            more[bump] += 1;
            prop_assert!(logic_score(&rec(&more)).unwrap() <= logic_score(&rec(&counts)).unwrap());
        }
    }
}
