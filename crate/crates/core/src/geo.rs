//! Trajectory geometry metrics: symmetric Hausdorff (SA), normalized DTW
//! (TA), 1-D Wasserstein and the dynamic-consistency (DYN) score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traj::KinematicProfile;

/// Regularizer added to distances before inversion.
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("empty point sequence")]
    Empty,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("point dimension must be at least 1")]
    ZeroDimension,
    #[error("{len} coordinates do not divide into points of dimension {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("empty sample list")]
    NoSamples,
    #[error("empty series")]
    EmptySeries,
    #[error("invalid DYN weights: {0}")]
    BadWeights(String),
}

/// Ordered points of a common dimension, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSeq {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSeq {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self, GeoError> {
        if dim == 0 {
            return Err(GeoError::ZeroDimension);
        }
        if coords.is_empty() {
            return Err(GeoError::Empty);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(GeoError::Ragged { len: coords.len(), dim });
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(GeoError::NonFinite);
        }
        Ok(PointSeq { dim, coords })
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Result<Self, GeoError> {
        PointSeq::new(D, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn translated(&self, shift: &[f64]) -> PointSeq {
        assert_eq!(shift.len(), self.dim);
        let coords = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, c)| c + shift[i % self.dim])
            .collect();
        PointSeq { dim: self.dim, coords }
    }
}

fn check_pair(a: &PointSeq, b: &PointSeq) -> Result<(), GeoError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeoError::Empty);
    }
    if a.dim != b.dim {
        return Err(GeoError::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<(), GeoError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(GeoError::BadEpsilon(eps))
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Euclidean distance between two points of equal dimension.
#[inline]
pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    sq_dist(x, y).sqrt()
}

/// `max_{x in a} min_{y in b} |x - y|`.
pub fn directed_hausdorff(a: &PointSeq, b: &PointSeq) -> Result<f64, GeoError> {
    check_pair(a, b)?;
    // Squared distances throughout; sqrt is monotone so taking it once at the
    // end gives the same bits as a per-pair sqrt.
    let mut worst = 0.0f64;
    for x in a.points() {
        let mut nearest = f64::INFINITY;
        for y in b.points() {
            let d = sq_dist(x, y);
            if d < nearest {
                nearest = d;
                if nearest <= worst {
                    // this x can no longer raise the maximum
                    break;
                }
            }
        }
        if nearest > worst {
            worst = nearest;
        }
    }
    Ok(worst.sqrt())
}

pub fn symmetric_hausdorff(g: &PointSeq, p: &PointSeq) -> Result<f64, GeoError> {
    Ok(directed_hausdorff(g, p)?.max(directed_hausdorff(p, g)?))
}

/// Spatial-alignment score `1 / (symH + eps)`.
pub fn sa_score(g: &PointSeq, p: &PointSeq, eps: f64) -> Result<f64, GeoError> {
    check_eps(eps)?;
    Ok(1.0 / (symmetric_hausdorff(g, p)? + eps))
}

/// Result of a DTW alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwAlignment {
    /// Summed Euclidean distance along the optimal warping path.
    pub cost: f64,
    /// Number of matched pairs on the chosen optimal path.
    pub path_len: usize,
}

impl DtwAlignment {
    /// Cost per matched pair.
    pub fn normalized(&self) -> f64 {
        self.cost / self.path_len as f64
    }
}

/// Classic DTW with steps (1,1), (1,0), (0,1).
///
/// Among equal-cost predecessors the diagonal wins, then the step advancing
/// `g` only, then the step advancing `p` only; `path_len` is the length of the
/// path selected that way.
pub fn dtw_distance(g: &PointSeq, p: &PointSeq) -> Result<DtwAlignment, GeoError> {
    check_pair(g, p)?;
    let (n, m) = (g.len(), p.len());
    // Rolling rows over i (index into g), columns over j (index into p).
    let mut prev_cost = vec![f64::INFINITY; m];
    let mut prev_len = vec![0usize; m];
    let mut cur_cost = vec![0.0f64; m];
    let mut cur_len = vec![0usize; m];
    for i in 0..n {
        let gi = g.point(i);
        for j in 0..m {
            let d = euclidean(gi, p.point(j));
            let (best, len) = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = f64::INFINITY;
                let mut len = 0;
                if i > 0 && j > 0 {
                    best = prev_cost[j - 1];
                    len = prev_len[j - 1];
                }
                if i > 0 && prev_cost[j] < best {
                    best = prev_cost[j];
                    len = prev_len[j];
                }
                if j > 0 && cur_cost[j - 1] < best {
                    best = cur_cost[j - 1];
                    len = cur_len[j - 1];
                }
                (best, len)
            };
            cur_cost[j] = best + d;
            cur_len[j] = len + 1;
        }
        std::mem::swap(&mut prev_cost, &mut cur_cost);
        std::mem::swap(&mut prev_len, &mut cur_len);
    }
    Ok(DtwAlignment {
        cost: prev_cost[m - 1],
        path_len: prev_len[m - 1],
    })
}

/// Temporal-alignment score `1 / (NDTW + eps)`, NDTW being DTW cost over the
/// optimal path length.
pub fn ta_score(g: &PointSeq, p: &PointSeq, eps: f64) -> Result<f64, GeoError> {
    check_eps(eps)?;
    Ok(1.0 / (dtw_distance(g, p)?.normalized() + eps))
}

fn sorted(v: &[f64]) -> Result<Vec<f64>, GeoError> {
    if v.is_empty() {
        return Err(GeoError::EmptySeries);
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(GeoError::NonFinite);
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Order-1 Wasserstein distance between two empirical distributions with
/// uniform weights, as the exact integral of `|F_u^-1 - F_w^-1|` over the
/// quantile axis.
pub fn wasserstein_1d(u: &[f64], w: &[f64]) -> Result<f64, GeoError> {
    let (u, w) = (sorted(u)?, sorted(w)?);
    let (n, m) = (u.len(), w.len());
    // Breakpoints of the two quantile step functions are i/n and j/m; walk
    // them in integer units of 1/(n*m) so the merge is exact.
    let (mut i, mut j) = (0usize, 0usize);
    let (mut pos, mut total) = (0u64, 0.0);
    let (nm, step_u, step_w) = ((n * m) as u64, m as u64, n as u64);
    while pos < nm {
        let next_u = (i as u64 + 1) * step_u;
        let next_w = (j as u64 + 1) * step_w;
        let next = next_u.min(next_w);
        total += (next - pos) as f64 * (u[i] - w[j]).abs();
        pos = next;
        if next_u == next {
            i += 1;
        }
        if next_w == next {
            j += 1;
        }
    }
    Ok(total / nm as f64)
}

/// Weights of the DYN score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynWeights {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for DynWeights {
    fn default() -> Self {
        DynWeights {
            alpha: 0.007,
            beta: 0.003,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl DynWeights {
    pub fn validate(&self) -> Result<(), GeoError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GeoError::BadWeights(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn range(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(*x), hi.max(*x))
    });
    hi - lo
}

/// `(min(a, b) + eps) / (max(a, b) + eps)`
pub fn amplitude_ratio(a: f64, b: f64, eps: f64) -> f64 {
    (a.min(b) + eps) / (a.max(b) + eps)
}

/// The individual factors of a DYN evaluation, kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynBreakdown {
    pub speed_ratio: f64,
    pub accel_ratio: f64,
    pub speed_w1: f64,
    pub accel_w1: f64,
    /// Unclamped weighted sum.
    pub raw: f64,
    /// `raw` clamped to `[0, 1]`.
    pub score: f64,
}

pub fn dyn_breakdown(
    gt: &KinematicProfile,
    pred: &KinematicProfile,
    weights: &DynWeights,
) -> Result<DynBreakdown, GeoError> {
    weights.validate()?;
    for series in [&gt.speeds, &gt.accelerations, &pred.speeds, &pred.accelerations] {
        if series.is_empty() {
            return Err(GeoError::EmptySeries);
        }
    }
    let eps = weights.epsilon;
    let speed_ratio = amplitude_ratio(range(&gt.speeds), range(&pred.speeds), eps);
    let accel_ratio = amplitude_ratio(range(&gt.accelerations), range(&pred.accelerations), eps);
    let speed_w1 = wasserstein_1d(&gt.speeds, &pred.speeds)?;
    let accel_w1 = wasserstein_1d(&gt.accelerations, &pred.accelerations)?;
    let raw = weights.alpha * speed_ratio / (speed_w1 + eps) + weights.beta * accel_ratio / (accel_w1 + eps);
    Ok(DynBreakdown {
        speed_ratio,
        accel_ratio,
        speed_w1,
        accel_w1,
        raw,
        score: raw.clamp(0.0, 1.0),
    })
}

/// Dynamic-consistency score in `[0, 1]`.
pub fn dyn_score(gt: &KinematicProfile, pred: &KinematicProfile, weights: &DynWeights) -> Result<f64, GeoError> {
    Ok(dyn_breakdown(gt, pred, weights)?.score)
}

/// Index of the sample closest to `g` in symmetric Hausdorff distance, with
/// that distance. Ties go to the lowest index.
pub fn select_best_sample(g: &PointSeq, samples: &[PointSeq]) -> Result<(usize, f64), GeoError> {
    if samples.is_empty() {
        return Err(GeoError::NoSamples);
    }
    let mut best = (0, f64::INFINITY);
    for (i, s) in samples.iter().enumerate() {
        let d = symmetric_hausdorff(g, s)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq3(pts: &[[f64; 3]]) -> PointSeq {
        PointSeq::from_points(pts).unwrap()
    }

    fn brute_directed(a: &PointSeq, b: &PointSeq) -> f64 {
        let mut worst = 0.0f64;
        for x in a.points() {
            let mut nearest = f64::INFINITY;
            for y in b.points() {
                nearest = nearest.min(euclidean(x, y));
            }
            worst = worst.max(nearest);
        }
        worst
    }

    #[test]
    fn hausdorff_hand_cases() {
        let a = seq3(&[[0.0, 0.0, 0.0]]);
        let b = seq3(&[[3.0, 4.0, 0.0]]);
        assert_eq!(directed_hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(directed_hausdorff(&a, &a).unwrap(), 0.0);
        let p = seq3(&[[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(directed_hausdorff(&a, &p).unwrap(), 0.0);
        assert_eq!(directed_hausdorff(&p, &a).unwrap(), 5.0);
        assert_eq!(symmetric_hausdorff(&a, &p).unwrap(), 5.0);
        assert_eq!(symmetric_hausdorff(&p, &a).unwrap(), 5.0);
    }

    #[test]
    fn hausdorff_errors() {
        let a = seq3(&[[0.0; 3]]);
        let b = PointSeq::from_points(&[[0.0, 0.0]]).unwrap();
        assert_eq!(
            directed_hausdorff(&a, &b),
            Err(GeoError::DimensionMismatch { left: 3, right: 2 })
        );
        assert_eq!(PointSeq::new(3, vec![]), Err(GeoError::Empty));
        assert!(matches!(PointSeq::new(3, vec![1.0; 4]), Err(GeoError::Ragged { .. })));
        assert_eq!(PointSeq::new(1, vec![f64::NAN]), Err(GeoError::NonFinite));
    }

    #[test]
    fn sa_hand_cases() {
        let a = seq3(&[[0.0; 3]]);
        let p = seq3(&[[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(sa_score(&a, &a, 1e-8).unwrap(), 1e8);
        let sa = sa_score(&a, &p, 1e-8).unwrap();
        assert_eq!(sa, 1.0 / (5.0 + 1e-8));
        assert!((sa - 0.199_999_999_6).abs() < 1e-12);
        assert_eq!(sa_score(&a, &p, 0.0), Err(GeoError::BadEpsilon(0.0)));
    }

    #[test]
    fn dtw_hand_cases() {
        let g = PointSeq::from_points(&[[0.0]]).unwrap();
        let p = PointSeq::from_points(&[[3.0]]).unwrap();
        assert_eq!(dtw_distance(&g, &p).unwrap(), DtwAlignment { cost: 3.0, path_len: 1 });
        let ta = ta_score(&g, &p, 1e-8).unwrap();
        assert!((ta - 1.0 / 3.0).abs() < 1e-8);

        let s = seq3(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0], [1.0, 2.0, 3.0]]);
        assert_eq!(dtw_distance(&s, &s).unwrap(), DtwAlignment { cost: 0.0, path_len: 4 });
        assert_eq!(ta_score(&s, &s, 1e-8).unwrap(), 1e8);
    }

    #[test]
    fn dtw_tie_break_prefers_diagonal() {
        // g = (0, 0), p = (0): both cells on the only path; length 2.
        let g = PointSeq::from_points(&[[0.0], [0.0]]).unwrap();
        let p = PointSeq::from_points(&[[0.0]]).unwrap();
        assert_eq!(dtw_distance(&g, &p).unwrap().path_len, 2);
        // g = p = (0, 0): diagonal (len 2) and the L-shaped paths (len 3) all cost 0.
        let q = PointSeq::from_points(&[[0.0], [0.0]]).unwrap();
        assert_eq!(dtw_distance(&g, &q).unwrap(), DtwAlignment { cost: 0.0, path_len: 2 });
    }

    #[test]
    fn wasserstein_hand_cases() {
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap(), 0.0);
        // {0, 1} vs {0, 2}: quantiles [0,.5) match, [.5,1) differ by 1.
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 2.0]).unwrap(), 0.5);
        // {0} vs {0, 1}: half the mass moves by 1.
        assert_eq!(wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(wasserstein_1d(&[], &[1.0]), Err(GeoError::EmptySeries));
    }

    fn profile(speeds: &[f64], accelerations: &[f64]) -> KinematicProfile {
        KinematicProfile {
            speeds: speeds.to_vec(),
            accelerations: accelerations.to_vec(),
        }
    }

    #[test]
    fn dyn_identical_clamps_to_one() {
        let p = profile(&[0.0, 0.5, 1.0], &[0.5, 0.5]);
        let b = dyn_breakdown(&p, &p, &DynWeights::default()).unwrap();
        assert_eq!(b.speed_ratio, 1.0);
        assert_eq!(b.accel_ratio, 1.0);
        assert_eq!(b.speed_w1, 0.0);
        assert!(b.raw > 1e5);
        assert_eq!(b.score, 1.0);
    }

    #[test]
    fn dyn_speed_doubling_case() {
        let eps = 1e-8;
        let gt = profile(&[0.0, 1.0], &[0.0]);
        let pred = profile(&[0.0, 2.0], &[0.0]);
        let b = dyn_breakdown(&gt, &pred, &DynWeights::default()).unwrap();
        assert_eq!(b.speed_ratio, (1.0 + eps) / (2.0 + eps));
        assert_eq!(b.speed_w1, 0.5);
        assert_eq!(b.accel_ratio, 1.0);
        assert_eq!(b.accel_w1, 0.0);
        let expected = 0.007 * ((1.0 + eps) / (2.0 + eps)) / (0.5 + eps) + 0.003 * 1.0 / eps;
        assert!((b.raw - expected).abs() <= 1e-12 * expected);
        assert_eq!(b.score, 1.0);
    }

    #[test]
    fn dyn_rejects_empty_and_bad_weights() {
        let ok = profile(&[1.0], &[0.0]);
        let empty = profile(&[1.0], &[]);
        assert_eq!(
            dyn_score(&ok, &empty, &DynWeights::default()),
            Err(GeoError::EmptySeries)
        );
        let w = DynWeights {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(matches!(dyn_score(&ok, &ok, &w), Err(GeoError::BadWeights(_))));
    }

    #[test]
    fn best_sample_selection() {
        let g = seq3(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let shifted = g.translated(&[0.0, 1.0, 0.0]);
        assert_eq!(select_best_sample(&g, &[g.clone(), shifted.clone()]).unwrap(), (0, 0.0));
        assert_eq!(
            select_best_sample(&g, std::slice::from_ref(&shifted)).unwrap(),
            (0, 1.0)
        );
        // symH 5, 2, 7 against a single origin point
        let o = seq3(&[[0.0; 3]]);
        let samples = [
            seq3(&[[3.0, 4.0, 0.0]]),
            seq3(&[[0.0, 2.0, 0.0]]),
            seq3(&[[0.0, 0.0, 7.0]]),
        ];
        assert_eq!(select_best_sample(&o, &samples).unwrap(), (1, 2.0));
        assert_eq!(select_best_sample(&o, &[]), Err(GeoError::NoSamples));
        // equal distances keep the first
        let tie = [seq3(&[[1.0, 0.0, 0.0]]), seq3(&[[0.0, 1.0, 0.0]])];
        assert_eq!(select_best_sample(&o, &tie).unwrap().0, 0);
    }

    fn arb_seq(max: usize) -> impl Strategy<Value = PointSeq> {
        prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..max)
            .prop_map(|v| PointSeq::from_points(&v).unwrap())
    }

    proptest! {
        #[test]
        fn hausdorff_matches_double_loop(a in arb_seq(10), b in arb_seq(10)) {
            prop_assert_eq!(directed_hausdorff(&a, &b).unwrap(), brute_directed(&a, &b));
            prop_assert_eq!(symmetric_hausdorff(&a, &b).unwrap(), symmetric_hausdorff(&b, &a).unwrap());
        }

        #[test]
        fn translation_invariance(a in arb_seq(8), b in arb_seq(8), s in prop::array::uniform3(-3i32..3)) {
            // integer shifts keep coordinates exactly representable
            let shift = s.map(f64::from);
            let (ta, tb) = (a.translated(&shift), b.translated(&shift));
            let h0 = symmetric_hausdorff(&a, &b).unwrap();
            let h1 = symmetric_hausdorff(&ta, &tb).unwrap();
            prop_assert!((h0 - h1).abs() <= 1e-9 * (1.0 + h0));
            let d0 = dtw_distance(&a, &b).unwrap();
            let d1 = dtw_distance(&ta, &tb).unwrap();
            prop_assert!((d0.cost - d1.cost).abs() <= 1e-9 * (1.0 + d0.cost));
        }

        #[test]
        fn dtw_bounded_by_diagonal(pairs in prop::collection::vec((prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(-5.0f64..5.0)), 1..12)) {
            let a = PointSeq::from_points(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()).unwrap();
            let b = PointSeq::from_points(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
            let diag: f64 = a.points().zip(b.points()).map(|(x, y)| euclidean(x, y)).sum();
            let d = dtw_distance(&a, &b).unwrap();
            prop_assert!(d.cost <= diag + 1e-9);
            prop_assert!(d.path_len >= a.len() && d.path_len < a.len() + b.len());
        }

        #[test]
        fn wasserstein_symmetric_nonnegative(u in prop::collection::vec(-5.0f64..5.0, 1..20), w in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let a = wasserstein_1d(&u, &w).unwrap();
            let b = wasserstein_1d(&w, &u).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert_eq!(wasserstein_1d(&u, &u).unwrap(), 0.0);
        }

        #[test]
        fn scores_decrease_with_distance(d0 in 0.0f64..10.0, extra in 0.001f64..10.0) {
            let o = PointSeq::from_points(&[[0.0, 0.0]]).unwrap();
            let near = PointSeq::from_points(&[[d0, 0.0]]).unwrap();
            let far = PointSeq::from_points(&[[d0 + extra, 0.0]]).unwrap();
            prop_assert!(sa_score(&o, &near, 1e-8).unwrap() > sa_score(&o, &far, 1e-8).unwrap());
            prop_assert!(ta_score(&o, &near, 1e-8).unwrap() > ta_score(&o, &far, 1e-8).unwrap());
            prop_assert!(sa_score(&o, &far, 1e-8).unwrap() > 0.0);
        }
    }
}
