//! Differentiable branch losses. The matching and the chosen permutation
//! member of each matched pair are computed from forward values and held
//! fixed; the resulting value always agrees with the reference loss.

use trajmap_core::assignment::{assign, Assignment};
use trajmap_core::geometry::{apply_permutation, consecutive_diff, resample, CurveKind, Permutation};
use trajmap_core::losses::{branch_loss, pair_geometry, LossBreakdown, LossConfig, PredictedElement, TargetElement};
use trajmap_core::scene::Scene;
use trajmap_core::targets::{clip_to_bev, make_virtual_targets, VirtualTargetKind};

use crate::error::{Error, Result};
use crate::graph::{DirectionTerm, FocalTerm, Graph, L1Term, Var};
use crate::layers::{to_predictions, Decoded};
use crate::model::Forward;

/// Supervision of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTargets {
    pub map: Vec<TargetElement>,
    pub actor: Vec<TargetElement>,
}

/// Map targets are the ground-truth elements resampled to `n_p`; actor
/// targets are virtual elements clipped to the BEV box, keeping at most
/// `max_actor_targets` (the first ones, in trajectory order).
pub fn scene_targets(
    scene: &Scene,
    kind: VirtualTargetKind,
    lane_width: f64,
    n_p: usize,
    max_actor_targets: usize,
) -> Result<SceneTargets> {
    let map = scene
        .gt_elements
        .iter()
        .map(|e| {
            let pts = if e.points.len() == n_p {
                e.points.clone()
            } else {
                resample(&e.points.points, e.points.kind, n_p)?
            };
            Ok(TargetElement::new(trajmap_core::losses::ElementLabel::Map(e.class), pts))
        })
        .collect::<std::result::Result<Vec<_>, trajmap_core::Error>>()?;
    let (virt, _) = make_virtual_targets(&scene.trajectories, kind, lane_width, n_p);
    let mut actor = clip_to_bev(&virt, &scene.bev);
    actor.truncate(max_actor_targets);
    Ok(SceneTargets { map, actor })
}

/// Matching and permutation members fixed for one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPlan {
    pub assignment: Assignment,
    /// Member per entry of `assignment.pairs`.
    pub members: Vec<Permutation>,
}

pub fn plan_branch(preds: &[PredictedElement], targets: &[TargetElement], cfg: &LossConfig) -> Result<LossPlan> {
    let assignment = assign(preds, targets, cfg)?;
    let members = assignment
        .pairs
        .iter()
        .map(|&(p, t)| pair_geometry(&preds[p].points, &targets[t], cfg).map(|g| g.member))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(LossPlan { assignment, members })
}

fn flat(points: &[trajmap_core::geometry::Point2]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Tape loss of one branch under a fixed plan.
pub fn tape_branch_loss(
    g: &mut Graph,
    d: Decoded,
    targets: &[TargetElement],
    plan: &LossPlan,
    cfg: &LossConfig,
) -> Result<Var> {
    let (n, k1) = g.shape(d.probs);
    let n_fg = k1 - 1;
    let w = cfg.weights;
    let mut focal = Vec::new();
    let mut label = vec![None; n];
    for &(p, t) in &plan.assignment.pairs {
        label[p] = Some(targets[t].label.index());
    }
    let wc = w.class / n as f64;
    for (row, l) in label.iter().enumerate() {
        match l {
            Some(col) => focal.push(FocalTerm { row, col: *col, positive: true, weight: wc }),
            None if cfg.background_term => {
                focal.extend((0..n_fg).map(|col| FocalTerm { row, col, positive: false, weight: wc }))
            }
            None => {}
        }
    }
    let mut l1 = Vec::new();
    let mut dir = Vec::new();
    let m = plan.assignment.pairs.len() as f64;
    for (&(p, t), &member) in plan.assignment.pairs.iter().zip(&plan.members) {
        let tp = apply_permutation(&targets[t].points, member)?;
        let n_pts = tp.len() as f64;
        l1.push(L1Term { row: p, target: flat(&tp.points), weight: w.distance / (m * n_pts) });
        let edges = consecutive_diff(&tp)?;
        let ne = edges.len() as f64;
        dir.push(DirectionTerm {
            row: p,
            target_edges: edges,
            closed: tp.kind == CurveKind::Closed,
            weight: w.direction / (m * ne),
        });
    }
    let a = g.focal_terms(d.probs, focal, cfg.focal);
    let b = g.l1_terms(d.points, l1);
    let c = g.direction_terms(d.points, dir);
    let ab = g.add(a, b);
    Ok(g.add(ab, c))
}

/// Loss of one forward pass with its breakdown.
#[derive(Debug, Clone)]
pub struct PipelineLoss {
    pub total: Var,
    pub map_var: Var,
    pub actor_var: Option<Var>,
    pub map: LossBreakdown,
    pub actor: Option<LossBreakdown>,
    pub plans: (LossPlan, Option<LossPlan>),
}

fn breakdown_checked(
    g: &Graph,
    loss: Var,
    preds: &[PredictedElement],
    targets: &[TargetElement],
    plan: &LossPlan,
    cfg: &LossConfig,
    check: bool,
) -> Result<LossBreakdown> {
    let reference = branch_loss(preds, targets, &plan.assignment, cfg)?;
    let tape = g.value(loss).data[0];
    if check && (tape - reference.total).abs() > 1e-9 * reference.total.abs().max(1.0) {
        return Err(Error::Inconsistent(format!(
            "tape loss {tape} disagrees with reference {}",
            reference.total
        )));
    }
    Ok(reference)
}

fn decoded_preds(g: &Graph, d: Decoded) -> Vec<PredictedElement> {
    to_predictions(g.value(d.probs), g.value(d.points), &[CurveKind::Open])
}

/// Builds `L_map (+ L_actor)` on the graph. With `plans` given, the
/// matching is reused instead of recomputed; otherwise the tape value is
/// checked against the reference loss.
pub fn pipeline_loss(
    g: &mut Graph,
    f: Forward,
    targets: &SceneTargets,
    cfg: &LossConfig,
    plans: Option<&(LossPlan, Option<LossPlan>)>,
) -> Result<PipelineLoss> {
    let map_preds = decoded_preds(g, f.map);
    let map_plan = match plans {
        Some((p, _)) => p.clone(),
        None => plan_branch(&map_preds, &targets.map, cfg)?,
    };
    let map_var = tape_branch_loss(g, f.map, &targets.map, &map_plan, cfg)?;
    let map = breakdown_checked(g, map_var, &map_preds, &targets.map, &map_plan, cfg, plans.is_none())?;
    let (mut total, mut actor_var, mut actor, mut actor_plan) = (map_var, None, None, None);
    if let Some(a) = f.actor {
        let preds = decoded_preds(g, a);
        let plan = match plans.and_then(|p| p.1.as_ref()) {
            Some(p) => p.clone(),
            None => plan_branch(&preds, &targets.actor, cfg)?,
        };
        let v = tape_branch_loss(g, a, &targets.actor, &plan, cfg)?;
        actor = Some(breakdown_checked(g, v, &preds, &targets.actor, &plan, cfg, plans.is_none())?);
        total = g.add(map_var, v);
        actor_var = Some(v);
        actor_plan = Some(plan);
    }
    Ok(PipelineLoss {
        total,
        map_var,
        actor_var,
        map,
        actor,
        plans: (map_plan, actor_plan),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use trajmap_core::geometry::{Point2, PointSet};
    use trajmap_core::losses::ElementLabel;
    use trajmap_core::geometry::MapElementClass;

    fn decoded(g: &mut Graph, probs: Tensor, points: Tensor) -> Decoded {
        Decoded { probs: g.param(probs), points: g.param(points) }
    }

    #[test]
    fn tape_matches_reference_including_polygons() {
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let probs = Tensor::new(3, 4, vec![0.1, 0.2, 0.3, 0.4, 0.7, 0.1, 0.1, 0.1, 0.2, 0.2, 0.5, 0.1]);
        let points = Tensor::new(3, 8, (0..24).map(|i| ((i * 7) % 11) as f64 * 0.3).collect());
        let d = decoded(&mut g, probs, points);
        let targets = vec![
            TargetElement::new(
                ElementLabel::Map(MapElementClass::PedCrossing),
                PointSet::closed(vec![
                    Point2::new(0.0, 0.0),
                    Point2::new(2.0, 0.0),
                    Point2::new(2.0, 2.0),
                    Point2::new(0.0, 2.0),
                ]),
            ),
            TargetElement::new(
                ElementLabel::Map(MapElementClass::Divider),
                PointSet::open((0..4).map(|i| Point2::new(1.0, i as f64)).collect()),
            ),
        ];
        let preds = decoded_preds(&g, d);
        let plan = plan_branch(&preds, &targets, &cfg).unwrap();
        let v = tape_branch_loss(&mut g, d, &targets, &plan, &cfg).unwrap();
        breakdown_checked(&g, v, &preds, &targets, &plan, &cfg, true).unwrap();
    }

    #[test]
    fn no_targets_is_class_only() {
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let d = decoded(&mut g, Tensor::new(1, 2, vec![0.3, 0.7]), Tensor::zeros(1, 4));
        let preds = decoded_preds(&g, d);
        let plan = plan_branch(&preds, &[], &cfg).unwrap();
        let v = tape_branch_loss(&mut g, d, &[], &plan, &cfg).unwrap();
        let want = cfg.weights.class * trajmap_core::losses::focal_loss(0.3, false, cfg.focal);
        assert!((g.value(v).data[0] - want).abs() < 1e-15);
    }
}
