//! Benchmark-set curation: voxelized trajectory occupancy, pairwise 3-D IoU
//! and greedy least-overlap selection.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::traj::{ArmSelector, Trajectory};

pub const DEFAULT_CELL: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum CurationError {
    #[error("cell size must be positive and finite, got {0}")]
    BadCell(f64),
    #[error("non-finite position at step {0}")]
    NonFinite(usize),
    #[error("voxel grids have different origin or cell size")]
    GridMismatch,
    #[error("both voxel grids are empty")]
    BothEmpty,
    #[error("cannot select {requested} of {available} trajectories")]
    SelectionRange { requested: usize, available: usize },
    #[error("similarity matrix: {0}")]
    BadMatrix(String),
    #[error("no trajectories given")]
    NoTrajectories,
}

pub type Voxel = [i64; 3];

/// Occupied cells of a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: [f64; 3],
    pub cell: f64,
    pub occupied: BTreeSet<Voxel>,
}

impl VoxelGrid {
    pub fn new(origin: [f64; 3], cell: f64) -> Result<Self, CurationError> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(CurationError::BadCell(cell));
        }
        Ok(VoxelGrid {
            origin,
            cell,
            occupied: BTreeSet::new(),
        })
    }

    pub fn cell_of(&self, p: [f64; 3]) -> Voxel {
        std::array::from_fn(|k| ((p[k] - self.origin[k]) / self.cell).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    fn same_frame(&self, other: &VoxelGrid) -> bool {
        self.origin == other.origin && self.cell == other.cell
    }
}

/// Integer 3-D Bresenham walk from `a` to `b`, endpoints included. Each step
/// moves to one of the 26 neighbours, so the result is voxel-connected.
pub fn digital_line(a: Voxel, b: Voxel) -> Vec<Voxel> {
    let d: [i64; 3] = std::array::from_fn(|k| (b[k] - a[k]).abs());
    let s: [i64; 3] = std::array::from_fn(|k| (b[k] - a[k]).signum());
    let major = (0..3).max_by_key(|&k| (d[k], std::cmp::Reverse(k))).unwrap();
    let steps = d[major];
    let mut p = a;
    let mut err = [0i64; 3];
    for k in 0..3 {
        err[k] = 2 * d[k] - steps;
    }
    let mut out = Vec::with_capacity(steps as usize + 1);
    out.push(p);
    for _ in 0..steps {
        for k in 0..3 {
            if k == major {
                continue;
            }
            if err[k] > 0 {
                p[k] += s[k];
                err[k] -= 2 * steps;
            }
            err[k] += 2 * d[k];
        }
        p[major] += s[major];
        out.push(p);
    }
    out
}

/// Occupancy of the selected arms' end-effector paths. Consecutive positions
/// are joined by a digital line so sparse sampling does not fragment the
/// path.
pub fn voxelize(t: &Trajectory, arms: ArmSelector, origin: [f64; 3], cell: f64) -> Result<VoxelGrid, CurationError> {
    let mut grid = VoxelGrid::new(origin, cell)?;
    for &arm in arms.arms() {
        let mut prev: Option<Voxel> = None;
        for (i, step) in t.steps().iter().enumerate() {
            let p = step.pose(arm).position;
            if !p.iter().all(|c| c.is_finite()) {
                return Err(CurationError::NonFinite(i));
            }
            let v = grid.cell_of(p);
            match prev {
                Some(u) if u != v => grid.occupied.extend(digital_line(u, v)),
                _ => {
                    grid.occupied.insert(v);
                }
            }
            prev = Some(v);
        }
    }
    Ok(grid)
}

/// Componentwise minimum position over the selected arms of all
/// trajectories, the default voxel origin for a task.
pub fn bounding_box_min(trajs: &[Trajectory], arms: ArmSelector) -> Result<[f64; 3], CurationError> {
    let mut lo = [f64::INFINITY; 3];
    for t in trajs {
        for &arm in arms.arms() {
            for p in t.positions(arm) {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                }
            }
        }
    }
    if lo.iter().any(|v| !v.is_finite()) {
        return Err(CurationError::NoTrajectories);
    }
    Ok(lo)
}

/// `|a ∩ b| / |a ∪ b|` for grids sharing origin and cell size.
pub fn traj_iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, CurationError> {
    if !a.same_frame(b) {
        return Err(CurationError::GridMismatch);
    }
    let inter = a.occupied.intersection(&b.occupied).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Err(CurationError::BothEmpty);
    }
    Ok(inter as f64 / union as f64)
}

/// Symmetric `n x n` similarity matrix with unit diagonal, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self, CurationError> {
        if values.len() != n * n {
            return Err(CurationError::BadMatrix(format!("{} values for n = {n}", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 1.0 {
                return Err(CurationError::BadMatrix(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(CurationError::BadMatrix(format!(
                        "entry ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
                if v != values[j * n + i] {
                    return Err(CurationError::BadMatrix(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SimilarityMatrix { n, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CurationError> {
        SimilarityMatrix::new(rows.len(), rows.iter().flatten().copied().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Pairwise IoU of all grids, computed in parallel over the upper triangle.
pub fn similarity_matrix(grids: &[VoxelGrid]) -> Result<SimilarityMatrix, CurationError> {
    let n = grids.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let upper: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| traj_iou(&grids[i], &grids[j]))
        .collect::<Result<_, _>>()?;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    for (&(i, j), v) in pairs.iter().zip(upper) {
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    SimilarityMatrix::new(n, values)
}

/// Greedy least-overlap selection.
///
/// Seeds with the index of lowest mean similarity, then repeatedly adds the
/// unselected index whose maximum similarity to the selected set is lowest.
/// Ties go to the lowest index. Returns indices in selection order.
pub fn greedy_select(sim: &SimilarityMatrix, n_select: usize) -> Result<Vec<usize>, CurationError> {
    let n = sim.n();
    if n_select == 0 || n_select > n {
        return Err(CurationError::SelectionRange {
            requested: n_select,
            available: n,
        });
    }
    let row_mean = |i: usize| sim.row(i).iter().sum::<f64>() / n as f64;
    let mut seed = 0;
    let mut seed_mean = row_mean(0);
    for i in 1..n {
        let m = row_mean(i);
        if m < seed_mean {
            seed = i;
            seed_mean = m;
        }
    }

    let mut selected = vec![seed];
    let mut taken = vec![false; n];
    taken[seed] = true;
    // closest[i] = max similarity of i to anything selected so far
    let mut closest: Vec<f64> = (0..n).map(|i| sim.get(i, seed)).collect();
    while selected.len() < n_select {
        let next = (0..n)
            .filter(|&i| !taken[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if closest[b] <= closest[i] => Some(b),
                _ => Some(i),
            })
            .expect("an unselected index remains");
        taken[next] = true;
        selected.push(next);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.max(sim.get(i, next));
        }
    }
    Ok(selected)
}
