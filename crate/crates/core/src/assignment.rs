//! Optimal one-to-one prediction/target matching.
//!
//! The solver pads the `rows x cols` matrix (rows >= cols) with zero-cost
//! dummy columns and runs the O(n^3) shortest-augmenting-path Hungarian
//! method with row/column potentials. Among optimal matchings it returns the
//! one whose prediction indices, listed in target order, are
//! lexicographically smallest; the dual potentials rule out most candidate
//! pairs without re-solving.

use crate::error::{Error, Result};
use crate::losses::{focal_loss, point_l1_min_perm, LossConfig, PredictedElement, TargetElement};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        assert_eq!(data.len(), rows * cols, "cost matrix data length");
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// A matching: `pairs` holds `(prediction, target)` sorted by target index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

impl Assignment {
    /// Sum of matched costs, accumulated in target order.
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(p, t)| c.get(p, t)).sum()
    }

    pub fn target_of(&self, pred: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(p, _)| p == pred).map(|&(_, t)| t)
    }
}

/// Square assignment on an `n x n` row-major matrix. Returns the column of
/// each row plus the row and column potentials (`u[i] + v[j] <= c[i][j]`).
fn solve_square(n: usize, c: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based potentials with a virtual column 0, as in the classic formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of_row[row_of[j] - 1] = j - 1;
        }
    }
    (col_of_row, u[1..].to_vec(), v[1..].to_vec())
}

/// Solves the padded square problem with some `(row, col)` pairs forced.
/// Returns the full column-of-row map.
fn solve_with_forced(n: usize, c: &[f64], forced: &[(usize, usize)]) -> Vec<usize> {
    let mut row_free = vec![true; n];
    let mut col_free = vec![true; n];
    for &(r, col) in forced {
        row_free[r] = false;
        col_free[col] = false;
    }
    let rows: Vec<usize> = (0..n).filter(|&r| row_free[r]).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| col_free[j]).collect();
    let m = rows.len();
    let mut sub = Vec::with_capacity(m * m);
    for &r in &rows {
        for &j in &cols {
            sub.push(c[r * n + j]);
        }
    }
    let (sub_cols, _, _) = solve_square(m, &sub);
    let mut col_of_row = vec![0usize; n];
    for &(r, j) in forced {
        col_of_row[r] = j;
    }
    for (k, &r) in rows.iter().enumerate() {
        col_of_row[r] = cols[sub_cols[k]];
    }
    col_of_row
}

/// Minimum-cost matching of every column (target) to a distinct row
/// (prediction). Requires `rows >= cols`.
pub fn hungarian(c: &CostMatrix) -> Result<Assignment> {
    let (rows, cols) = (c.rows, c.cols);
    if rows < cols {
        return Err(Error::TooFewRows { rows, cols });
    }
    if let Some(i) = c.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCost {
            row: i / cols,
            col: i % cols,
        });
    }
    if cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched: (0..rows).collect(),
        });
    }

    let n = rows;
    let mut padded = vec![0.0; n * n];
    for r in 0..rows {
        padded[r * n..r * n + cols].copy_from_slice(&c.data[r * cols..(r + 1) * cols]);
    }
    let (mut col_of_row, u, v) = solve_square(n, &padded);
    let real_cost = |col_of_row: &[usize]| -> f64 {
        let mut row_of_col = vec![0usize; cols];
        for (r, &j) in col_of_row.iter().enumerate() {
            if j < cols {
                row_of_col[j] = r;
            }
        }
        row_of_col.iter().enumerate().map(|(j, &r)| c.get(r, j)).sum()
    };
    let best = real_cost(&col_of_row);
    let scale = c.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * scale * cols as f64;

    // Fix targets in order, each to the smallest row that still admits an
    // optimal completion. The current solution always qualifies.
    let mut forced: Vec<(usize, usize)> = Vec::with_capacity(cols);
    let mut row_taken = vec![false; n];
    for j in 0..cols {
        let current = col_of_row.iter().position(|&x| x == j).expect("perfect matching");
        for i in 0..n {
            if row_taken[i] {
                continue;
            }
            if i == current {
                break;
            }
            // reduced cost lower-bounds the regret of forcing (i, j)
            if padded[i * n + j] - u[i] - v[j] > tol {
                continue;
            }
            let mut trial = forced.clone();
            trial.push((i, j));
            let candidate = solve_with_forced(n, &padded, &trial);
            if real_cost(&candidate) <= best + tol {
                col_of_row = candidate;
                break;
            }
        }
        let chosen = col_of_row.iter().position(|&x| x == j).expect("perfect matching");
        row_taken[chosen] = true;
        forced.push((chosen, j));
    }

    let mut pairs: Vec<(usize, usize)> = col_of_row
        .iter()
        .enumerate()
        .filter(|&(_, &j)| j < cols)
        .map(|(r, &j)| (r, j))
        .collect();
    pairs.sort_by_key(|&(_, t)| t);
    let unmatched = col_of_row
        .iter()
        .enumerate()
        .filter(|&(_, &j)| j >= cols)
        .map(|(r, _)| r)
        .collect();
    Ok(Assignment { pairs, unmatched })
}

/// Matching cost of one prediction against one target:
/// `class_weight * focal(p[target class]) + distance_weight * min-over-group mean L1`.
pub fn matching_cost(
    pred: &PredictedElement,
    target: &TargetElement,
    cfg: &LossConfig,
) -> Result<f64> {
    let (dist, _) = point_l1_min_perm(&pred.points, &target.points, target.group())?;
    let p = pred.scores[target.label.index()];
    Ok(cfg.weights.class * focal_loss(p, true, cfg.focal) + cfg.weights.distance * dist)
}

pub fn cost_matrix(
    preds: &[PredictedElement],
    targets: &[TargetElement],
    cfg: &LossConfig,
) -> Result<CostMatrix> {
    let mut data = Vec::with_capacity(preds.len() * targets.len());
    for p in preds {
        for t in targets {
            data.push(matching_cost(p, t, cfg)?);
        }
    }
    CostMatrix::new(preds.len(), targets.len(), data)
}

/// Matches targets to predictions; leftover predictions are background.
pub fn assign(
    preds: &[PredictedElement],
    targets: &[TargetElement],
    cfg: &LossConfig,
) -> Result<Assignment> {
    if targets.len() > preds.len() {
        return Err(Error::QueryBudgetExceeded {
            predictions: preds.len(),
            targets: targets.len(),
        });
    }
    hungarian(&cost_matrix(preds, targets, cfg)?)
}
