//! Forward values of the set-prediction loss terms: focal classification,
//! permutation-minimized Manhattan point loss, and edge-direction loss.

use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::geometry::{
    apply_permutation, consecutive_diff, MapElementClass, Permutation, PermutationGroup, Point2,
    PointSet,
};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// Coefficients of one branch's loss: `class * focal + distance * L1 + direction * cos`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub class: f64,
    pub distance: f64,
    pub direction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 2.0,
            distance: 5.0,
            direction: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal: FocalParams,
    /// Unmatched predictions pay negative focal terms on every foreground class.
    pub background_term: bool,
    /// Pick the permutation minimizing distance and direction together
    /// instead of reusing the distance minimizer.
    pub joint_direction: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            background_term: true,
            joint_direction: false,
        }
    }
}

/// Class label of a target. Virtual edges occupy slot 0 of a two-way
/// (edge, background) score vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementLabel {
    Map(MapElementClass),
    VirtualEdge,
}

impl ElementLabel {
    pub fn index(self) -> usize {
        match self {
            ElementLabel::Map(c) => c.index(),
            ElementLabel::VirtualEdge => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementLabel::Map(c) => c.as_str(),
            ElementLabel::VirtualEdge => "virtual_edge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "virtual_edge" {
            Some(ElementLabel::VirtualEdge)
        } else {
            MapElementClass::parse(s).map(ElementLabel::Map)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetElement {
    pub label: ElementLabel,
    pub points: PointSet,
}

impl TargetElement {
    pub fn new(label: ElementLabel, points: PointSet) -> Self {
        Self { label, points }
    }

    pub fn group(&self) -> PermutationGroup {
        self.points.group()
    }
}

/// Scores run over the foreground classes followed by background.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedElement {
    pub scores: Vec<f64>,
    pub points: PointSet,
}

impl PredictedElement {
    pub fn new(scores: Vec<f64>, points: PointSet) -> Self {
        Self { scores, points }
    }

    pub fn background_index(&self) -> usize {
        self.scores.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.len() < 2 {
            return Err(Error::InvalidScores(
                "need at least one class plus background".into(),
            ));
        }
        if self.scores.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
            return Err(Error::InvalidScores("entries must lie in [0, 1]".into()));
        }
        let sum: f64 = self.scores.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidScores(format!("scores sum to {sum}")));
        }
        if self.points.points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidScores("non-finite point".into()));
        }
        Ok(())
    }
}

/// Focal loss of one probability.
///
/// Positive: `-a (1 - p)^g ln p`. Negative: `-(1 - a) p^g ln(1 - p)`.
pub fn focal_loss(p: f64, positive: bool, params: FocalParams) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if positive {
        -params.alpha * (1.0 - p).powf(params.gamma) * p.ln()
    } else {
        -(1.0 - params.alpha) * p.powf(params.gamma) * (1.0 - p).ln()
    }
}

fn check_same_len(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::CardinalityMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Mean per-point Manhattan distance between equally ordered point sets.
pub fn mean_manhattan(a: &[Point2], b: &[Point2]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(p, q)| p.manhattan(*q)).sum();
    sum / a.len() as f64
}

/// Smallest mean Manhattan distance over the target's group, with the
/// minimizing member (ties go to the lower member index).
pub fn point_l1_min_perm(
    pred: &PointSet,
    target: &PointSet,
    group: PermutationGroup,
) -> Result<(f64, Permutation)> {
    check_same_len(pred, target)?;
    if pred.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let n = target.len();
    let mut best = (f64::INFINITY, Permutation::IDENTITY);
    for g in group.members() {
        let sum: f64 = (0..n)
            .map(|i| pred.points[i].manhattan(target.points[g.source_index(i, n)]))
            .sum();
        let d = sum / n as f64;
        if d < best.0 {
            best = (d, g);
        }
    }
    Ok(best)
}

/// Cosine similarity of two edge vectors; zero-length edges give 0.
pub fn edge_cosine(a: Point2, b: Point2) -> f64 {
    let denom = a.norm() * b.norm();
    if denom > 0.0 {
        a.dot(b) / denom
    } else {
        0.0
    }
}

/// Mean of `1 - cos` between corresponding edges. Edges follow the target's
/// kind; a zero-length edge on either side counts as a full penalty of 1.
pub fn direction_loss(pred: &PointSet, target: &PointSet) -> Result<f64> {
    check_same_len(pred, target)?;
    let pred = PointSet::new(pred.points.clone(), target.kind);
    let dp = consecutive_diff(&pred)?;
    let dt = consecutive_diff(target)?;
    let sum: f64 = dp
        .iter()
        .zip(&dt)
        .map(|(&a, &b)| 1.0 - edge_cosine(a, b))
        .sum();
    Ok(sum / dp.len() as f64)
}

/// Per-term values of one branch loss; `total` is the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub class: f64,
    pub distance: f64,
    pub direction: f64,
}

/// How one matched pair is scored: the chosen member and the two
/// geometric terms under it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub member: Permutation,
    pub distance: f64,
    pub direction: f64,
}

pub fn pair_geometry(
    pred: &PointSet,
    target: &TargetElement,
    cfg: &LossConfig,
) -> Result<PairGeometry> {
    let group = target.group();
    if cfg.joint_direction {
        check_same_len(pred, &target.points)?;
        let mut best: Option<(f64, PairGeometry)> = None;
        for g in group.members() {
            let t = apply_permutation(&target.points, g)?;
            let distance = mean_manhattan(&pred.points, &t.points);
            let direction = direction_loss(pred, &t)?;
            let score = cfg.weights.distance * distance + cfg.weights.direction * direction;
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((
                    score,
                    PairGeometry {
                        member: g,
                        distance,
                        direction,
                    },
                ));
            }
        }
        return Ok(best.expect("group is non-empty").1);
    }
    let (distance, member) = point_l1_min_perm(pred, &target.points, group)?;
    let t = apply_permutation(&target.points, member)?;
    Ok(PairGeometry {
        member,
        distance,
        direction: direction_loss(pred, &t)?,
    })
}

/// Checks that `assignment` is a valid matching of these predictions and
/// targets: every target exactly once, predictions at most once, and the
/// unmatched list is the complement.
pub fn check_assignment(assignment: &Assignment, n_preds: usize, n_targets: usize) -> Result<()> {
    let mut pred_used = vec![false; n_preds];
    let mut target_used = vec![false; n_targets];
    for &(p, t) in &assignment.pairs {
        if p >= n_preds || t >= n_targets {
            return Err(Error::InconsistentAssignment(format!(
                "pair ({p}, {t}) out of range"
            )));
        }
        if std::mem::replace(&mut pred_used[p], true) {
            return Err(Error::InconsistentAssignment(format!(
                "prediction {p} matched twice"
            )));
        }
        if std::mem::replace(&mut target_used[t], true) {
            return Err(Error::InconsistentAssignment(format!(
                "target {t} matched twice"
            )));
        }
    }
    if let Some(t) = target_used.iter().position(|&u| !u) {
        return Err(Error::InconsistentAssignment(format!(
            "target {t} is unmatched"
        )));
    }
    let mut unmatched: Vec<usize> = (0..n_preds).filter(|&p| !pred_used[p]).collect();
    let mut listed = assignment.unmatched.clone();
    unmatched.sort_unstable();
    listed.sort_unstable();
    if unmatched != listed {
        return Err(Error::InconsistentAssignment(
            "unmatched list does not match the pairs".into(),
        ));
    }
    Ok(())
}

/// Classification cost of one prediction under a target label (or
/// background when `label` is `None`).
pub fn class_term(pred: &PredictedElement, label: Option<ElementLabel>, cfg: &LossConfig) -> f64 {
    match label {
        Some(l) => focal_loss(pred.scores[l.index()], true, cfg.focal),
        None if cfg.background_term => pred.scores[..pred.background_index()]
            .iter()
            .map(|&p| focal_loss(p, false, cfg.focal))
            .sum(),
        None => 0.0,
    }
}

/// One branch loss: the classification term averages over all predictions,
/// the geometric terms average over matched pairs.
pub fn branch_loss(
    preds: &[PredictedElement],
    targets: &[TargetElement],
    assignment: &Assignment,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    check_assignment(assignment, preds.len(), targets.len())?;
    let mut label_of: Vec<Option<ElementLabel>> = vec![None; preds.len()];
    for &(p, t) in &assignment.pairs {
        label_of[p] = Some(targets[t].label);
    }
    let class = if preds.is_empty() {
        0.0
    } else {
        preds
            .iter()
            .zip(&label_of)
            .map(|(p, &l)| class_term(p, l, cfg))
            .sum::<f64>()
            / preds.len() as f64
    };
    let (mut distance, mut direction) = (0.0, 0.0);
    for &(p, t) in &assignment.pairs {
        let g = pair_geometry(&preds[p].points, &targets[t], cfg)?;
        distance += g.distance;
        direction += g.direction;
    }
    if !assignment.pairs.is_empty() {
        let m = assignment.pairs.len() as f64;
        distance /= m;
        direction /= m;
    }
    let w = cfg.weights;
    Ok(LossBreakdown {
        total: w.class * class + w.distance * distance + w.direction * direction,
        class,
        distance,
        direction,
    })
}
