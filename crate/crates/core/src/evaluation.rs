//! Chamfer-threshold average precision, occlusion rates, complex-scene
//! selection and the occlusion-binned distance report.
//!
//! Matching inside AP is greedy: kept predictions are visited by descending
//! score (ties keep input order, scenes in corpus order) and each takes the
//! nearest still-unmatched ground truth of its own scene whose Chamfer
//! distance is strictly below the threshold. AP is the all-point
//! interpolated area: `sum over true positives of max precision at or after
//! that rank, divided by the ground-truth count`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance, polyline_length, resample, MapElementClass, PointSet};

/// A classified map element (ground truth or prediction geometry).
#[derive(Debug, Clone, PartialEq)]
pub struct MapElement {
    pub class: MapElementClass,
    pub points: PointSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredElement {
    pub class: MapElementClass,
    pub score: f64,
    pub points: PointSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub score_threshold: f64,
    pub classes: Vec<MapElementClass>,
    pub n_p: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.5, 1.0, 1.5],
            score_threshold: 0.7,
            classes: MapElementClass::ALL.to_vec(),
            n_p: crate::geometry::DEFAULT_NUM_POINTS,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty()
            || self.thresholds.iter().any(|&t| !(t > 0.0))
            || self.thresholds.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidConfig(
                "thresholds must be positive and strictly ascending".into(),
            ));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(Error::InvalidConfig(
                "score threshold must lie in (0, 1)".into(),
            ));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("no classes to evaluate".into()));
        }
        if self.n_p < 2 {
            return Err(Error::InvalidConfig("n_p must be at least 2".into()));
        }
        Ok(())
    }
}

/// Outcome for one kept prediction, in ranked order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub scene: usize,
    pub pred_index: usize,
    pub score: f64,
    pub gt_index: Option<usize>,
    pub chamfer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
    pub matches: Vec<MatchRecord>,
}

impl ApResult {
    pub fn fn_count(&self) -> usize {
        self.num_gt - self.tp
    }
}

/// One scene's worth of a single class: prediction scores/geometry and GT geometry.
#[derive(Debug, Clone, Copy)]
pub struct ClassScene<'a> {
    pub preds: &'a [(f64, &'a PointSet)],
    pub gts: &'a [&'a PointSet],
}

fn check_resampled(sets: impl Iterator<Item = usize>, n_p: usize) -> Result<()> {
    for (index, got) in sets.enumerate() {
        if got != n_p {
            return Err(Error::NotResampled {
                index,
                got,
                expected: n_p,
            });
        }
    }
    Ok(())
}

/// Chamfer distance from every prediction to every GT of one scene.
fn distance_table(scene: &ClassScene<'_>) -> Result<Vec<Vec<f64>>> {
    scene
        .preds
        .iter()
        .map(|(_, p)| {
            scene
                .gts
                .iter()
                .map(|g| chamfer_distance(&p.points, &g.points))
                .collect()
        })
        .collect()
}

/// Greedy matching and all-point AP from precomputed distances.
fn ap_from_tables(
    scenes: &[ClassScene<'_>],
    tables: &[Vec<Vec<f64>>],
    tau: f64,
    score_threshold: f64,
) -> ApResult {
    let num_gt: usize = scenes.iter().map(|s| s.gts.len()).sum();
    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (pi, &(score, _)) in s.preds.iter().enumerate() {
            if score > score_threshold {
                ranked.push((si, pi, score));
            }
        }
    }
    // stable: equal scores keep scene then input order
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2));

    let mut taken: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.gts.len()]).collect();
    let mut matches = Vec::with_capacity(ranked.len());
    for &(si, pi, score) in &ranked {
        let mut best: Option<(usize, f64)> = None;
        for (gi, &d) in tables[si][pi].iter().enumerate() {
            if !taken[si][gi] && d < tau && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((gi, d));
            }
        }
        if let Some((gi, _)) = best {
            taken[si][gi] = true;
        }
        matches.push(MatchRecord {
            scene: si,
            pred_index: pi,
            score,
            gt_index: best.map(|b| b.0),
            chamfer: best.map(|b| b.1),
        });
    }

    let tp = matches.iter().filter(|m| m.gt_index.is_some()).count();
    let fp = matches.len() - tp;
    let ap = if num_gt == 0 {
        if matches.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        let mut precision = Vec::with_capacity(matches.len());
        let mut hits = 0usize;
        for (k, m) in matches.iter().enumerate() {
            hits += m.gt_index.is_some() as usize;
            precision.push(hits as f64 / (k + 1) as f64);
        }
        for k in (0..precision.len().saturating_sub(1)).rev() {
            precision[k] = precision[k].max(precision[k + 1]);
        }
        let area: f64 = matches
            .iter()
            .zip(&precision)
            .filter(|(m, _)| m.gt_index.is_some())
            .map(|(_, &p)| p)
            .sum();
        area / num_gt as f64
    };
    ApResult {
        ap,
        tp,
        fp,
        num_gt,
        matches,
    }
}

/// AP of one class pooled over scenes: one ranked list, matches restricted
/// to the prediction's own scene.
pub fn ap_pooled(
    scenes: &[ClassScene<'_>],
    tau: f64,
    score_threshold: f64,
    n_p: usize,
) -> Result<ApResult> {
    for s in scenes {
        check_resampled(s.preds.iter().map(|(_, p)| p.len()), n_p)?;
        check_resampled(s.gts.iter().map(|g| g.len()), n_p)?;
    }
    let tables = scenes.iter().map(distance_table).collect::<Result<Vec<_>>>()?;
    Ok(ap_from_tables(scenes, &tables, tau, score_threshold))
}

/// AP for one class in one scene.
pub fn ap_single_class(
    preds: &[(f64, &PointSet)],
    gts: &[&PointSet],
    tau: f64,
    score_threshold: f64,
    n_p: usize,
) -> Result<ApResult> {
    ap_pooled(&[ClassScene { preds, gts }], tau, score_threshold, n_p)
}

/// Occluded arc-length intervals along one ground-truth element.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OcclusionMask {
    pub intervals: Vec<[f64; 2]>,
}

impl OcclusionMask {
    /// Intervals must be sorted, non-overlapping and inside `[0, length]`.
    pub fn validate(&self, length: f64) -> Result<()> {
        let slack = 1e-9 * (1.0 + length);
        let mut prev_end = 0.0f64;
        for &[s0, s1] in &self.intervals {
            let ok = s0.is_finite()
                && s1.is_finite()
                && s0 >= prev_end - slack
                && s0 <= s1
                && s0 >= -slack
                && s1 <= length + slack;
            if !ok {
                return Err(Error::IntervalOutOfRange {
                    start: s0,
                    end: s1,
                    length,
                });
            }
            prev_end = s1;
        }
        Ok(())
    }

    pub fn covered(&self) -> f64 {
        self.intervals.iter().map(|[a, b]| b - a).sum()
    }
}

/// Occluded length divided by the element's arc length.
pub fn occlusion_rate(gt: &PointSet, m: &OcclusionMask) -> Result<f64> {
    let length = polyline_length(&gt.points, gt.kind);
    m.validate(length)?;
    if !(length > 0.0) {
        return Ok(0.0);
    }
    Ok((m.covered() / length).clamp(0.0, 1.0))
}

/// Scene view used by evaluation: ground truth, per-element masks, actor count.
#[derive(Debug, Clone, Copy)]
pub struct EvalScene<'a> {
    pub scene_id: &'a str,
    pub gts: &'a [MapElement],
    pub masks: &'a [OcclusionMask],
    pub num_actors: usize,
}

fn element_rates(s: &EvalScene<'_>) -> Result<Vec<f64>> {
    s.gts
        .iter()
        .enumerate()
        .map(|(i, g)| match s.masks.get(i) {
            Some(m) => occlusion_rate(&g.points, m),
            None => Ok(0.0),
        })
        .collect()
}

pub fn mean_occlusion_rate(s: &EvalScene<'_>) -> Result<f64> {
    let rates = element_rates(s)?;
    if rates.is_empty() {
        return Ok(0.0);
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Indices of scenes whose mean GT occlusion rate and actor count both reach
/// the minimums.
pub fn select_complex(
    scenes: &[EvalScene<'_>],
    min_occlusion: f64,
    min_actors: usize,
) -> Result<Vec<usize>> {
    let mut keep = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        if mean_occlusion_rate(s)? >= min_occlusion && s.num_actors >= min_actors {
            keep.push(i);
        }
    }
    Ok(keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub class: MapElementClass,
    pub threshold: f64,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: MapElementClass,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBin {
    pub lo: f64,
    pub hi: f64,
    pub pairs: usize,
    pub mean_chamfer: Option<f64>,
    pub misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionClassReport {
    pub class: MapElementClass,
    pub bins: Vec<OcclusionBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub match_threshold: f64,
    pub score_threshold: f64,
    pub classes: Vec<OcclusionClassReport>,
}

impl OcclusionReport {
    /// Pair-weighted mean Chamfer of one class over bins whose lower edge is
    /// positive (elements with some occlusion).
    pub fn occluded_mean(&self, class: MapElementClass) -> Option<f64> {
        let c = self.classes.iter().find(|c| c.class == class)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for b in c.bins.iter().filter(|b| b.lo > 0.0) {
            if let Some(m) = b.mean_chamfer {
                sum += m * b.pairs as f64;
                n += b.pairs;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "occlusion-binned Chamfer (match < {} m, score > {})",
            self.match_threshold, self.score_threshold
        );
        let _ = writeln!(
            s,
            "{:<14}{:>14}{:>8}{:>14}{:>8}",
            "class", "bin", "pairs", "mean_chamfer", "misses"
        );
        for c in &self.classes {
            for b in &c.bins {
                let mean = b
                    .mean_chamfer
                    .map_or_else(|| "-".to_string(), |m| format!("{m:.4}"));
                let _ = writeln!(
                    s,
                    "{:<14}{:>14}{:>8}{:>14}{:>8}",
                    c.class.as_str(),
                    format!("[{:.2},{:.2}]", b.lo, b.hi),
                    b.pairs,
                    mean,
                    b.misses
                );
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub score_threshold: f64,
    pub per_threshold: Vec<ThresholdResult>,
    pub per_class: Vec<ClassAp>,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub occlusion: Option<OcclusionReport>,
}

impl EvalReport {
    fn class_ap_at(&self, class: MapElementClass, threshold: f64) -> Option<f64> {
        self.per_threshold
            .iter()
            .find(|r| r.class == class && r.threshold == threshold)
            .map(|r| r.ap)
    }

    /// Fixed-width table: one row per threshold plus the averaged row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10}{:>10}{:>12}{:>13}{:>8}",
            "threshold", "AP_ped", "AP_divider", "AP_boundary", "mAP"
        );
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v + 0.0));
        for &t in &self.thresholds {
            let vals: Vec<Option<f64>> = MapElementClass::ALL
                .iter()
                .map(|&c| self.class_ap_at(c, t))
                .collect();
            let present: Vec<f64> = vals.iter().flatten().copied().collect();
            let mean = (!present.is_empty())
                .then(|| present.iter().sum::<f64>() / present.len() as f64);
            let _ = writeln!(
                s,
                "{:<10}{:>10}{:>12}{:>13}{:>8}",
                format!("{t}m"),
                fmt(vals[0]),
                fmt(vals[1]),
                fmt(vals[2]),
                fmt(mean)
            );
        }
        let avg = |c: MapElementClass| self.per_class.iter().find(|a| a.class == c).map(|a| a.ap);
        let _ = writeln!(
            s,
            "{:<10}{:>10}{:>12}{:>13}{:>8}",
            "mean",
            fmt(avg(MapElementClass::PedCrossing)),
            fmt(avg(MapElementClass::Divider)),
            fmt(avg(MapElementClass::Boundary)),
            fmt(Some(self.map))
        );
        s
    }
}

/// Predictions for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub scene_id: String,
    pub elements: Vec<ScoredElement>,
}

/// Pairs every scene with its prediction set; the ID sets must agree.
fn pair_predictions<'a>(
    scenes: &[EvalScene<'_>],
    preds: &'a [PredictionSet],
) -> Result<Vec<&'a PredictionSet>> {
    let by_id: HashMap<&str, &PredictionSet> =
        preds.iter().map(|p| (p.scene_id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::SceneMismatch("duplicate prediction scene_id".into()));
    }
    if preds.len() != scenes.len() {
        return Err(Error::SceneMismatch(format!(
            "{} scenes but {} prediction sets",
            scenes.len(),
            preds.len()
        )));
    }
    scenes
        .iter()
        .map(|s| {
            by_id
                .get(s.scene_id)
                .copied()
                .ok_or_else(|| Error::SceneMismatch(format!("no predictions for {}", s.scene_id)))
        })
        .collect()
}

/// GT resampled to `n_p` where needed.
fn resampled_gts(s: &EvalScene<'_>, n_p: usize) -> Result<Vec<MapElement>> {
    s.gts
        .iter()
        .map(|g| {
            if g.points.len() == n_p {
                Ok(g.clone())
            } else {
                Ok(MapElement {
                    class: g.class,
                    points: resample(&g.points.points, g.points.kind, n_p)?,
                })
            }
        })
        .collect()
}

struct ClassData<'a> {
    preds: Vec<Vec<(f64, &'a PointSet)>>,
    gts: Vec<Vec<&'a PointSet>>,
    /// Scene-local GT element index of each per-class GT.
    gt_ids: Vec<Vec<usize>>,
}

fn class_data<'a>(
    class: MapElementClass,
    gts: &'a [Vec<MapElement>],
    preds: &[&'a PredictionSet],
) -> ClassData<'a> {
    let mut d = ClassData {
        preds: Vec::new(),
        gts: Vec::new(),
        gt_ids: Vec::new(),
    };
    for (g, p) in gts.iter().zip(preds) {
        d.preds.push(
            p.elements
                .iter()
                .filter(|e| e.class == class)
                .map(|e| (e.score, &e.points))
                .collect(),
        );
        let ids: Vec<usize> = (0..g.len()).filter(|&i| g[i].class == class).collect();
        d.gts.push(ids.iter().map(|&i| &g[i].points).collect());
        d.gt_ids.push(ids);
    }
    d
}

impl ClassData<'_> {
    fn scenes(&self) -> Vec<ClassScene<'_>> {
        self.preds
            .iter()
            .zip(&self.gts)
            .map(|(p, g)| ClassScene { preds: p, gts: g })
            .collect()
    }
}

/// Pooled per-class AP at each threshold, threshold-averaged class AP and mAP.
pub fn evaluate(
    scenes: &[EvalScene<'_>],
    preds: &[PredictionSet],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let paired = pair_predictions(scenes, preds)?;
    let gts = scenes
        .iter()
        .map(|s| resampled_gts(s, cfg.n_p))
        .collect::<Result<Vec<_>>>()?;
    let mut per_threshold = Vec::new();
    let mut per_class = Vec::new();
    for &class in &cfg.classes {
        let data = class_data(class, &gts, &paired);
        let cs = data.scenes();
        for s in &cs {
            check_resampled(s.preds.iter().map(|(_, p)| p.len()), cfg.n_p)?;
        }
        let tables = cs.iter().map(distance_table).collect::<Result<Vec<_>>>()?;
        let mut sum = 0.0;
        for &t in &cfg.thresholds {
            let r = ap_from_tables(&cs, &tables, t, cfg.score_threshold);
            sum += r.ap;
            per_threshold.push(ThresholdResult {
                class,
                threshold: t,
                ap: r.ap,
                tp: r.tp,
                fp: r.fp,
                fn_: r.fn_count(),
            });
        }
        per_class.push(ClassAp {
            class,
            ap: sum / cfg.thresholds.len() as f64,
        });
    }
    let map = per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        thresholds: cfg.thresholds.clone(),
        score_threshold: cfg.score_threshold,
        per_threshold,
        per_class,
        map,
        occlusion: None,
    })
}

fn validate_bins(bins: &[f64]) -> Result<()> {
    let ok = bins.len() >= 2
        && bins[0] == 0.0
        && bins[bins.len() - 1] == 1.0
        && bins.windows(2).all(|w| w[1] > w[0]);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(
            "bin edges must ascend strictly from 0 to 1".into(),
        ))
    }
}

/// Bin `i` is `[e_i, e_{i+1})`; the last bin also takes 1.0.
fn bin_of(bins: &[f64], r: f64) -> usize {
    let last = bins.len() - 2;
    (0..=last).find(|&i| r < bins[i + 1]).unwrap_or(last)
}

/// Mean Chamfer of matched pairs grouped by the GT's occlusion rate, plus
/// per-bin counts of missed GTs. Matching is the greedy AP matching at
/// `match_threshold`.
pub fn occlusion_binned_chamfer(
    scenes: &[EvalScene<'_>],
    preds: &[PredictionSet],
    cfg: &EvalConfig,
    match_threshold: f64,
    bins: &[f64],
) -> Result<OcclusionReport> {
    validate_bins(bins)?;
    let paired = pair_predictions(scenes, preds)?;
    let gts = scenes
        .iter()
        .map(|s| resampled_gts(s, cfg.n_p))
        .collect::<Result<Vec<_>>>()?;
    let rates = scenes.iter().map(element_rates).collect::<Result<Vec<_>>>()?;
    let nb = bins.len() - 1;
    let mut classes = Vec::new();
    for &class in &cfg.classes {
        let data = class_data(class, &gts, &paired);
        let cs = data.scenes();
        let r = ap_pooled(&cs, match_threshold, cfg.score_threshold, cfg.n_p)?;
        let mut sums = vec![0.0; nb];
        let mut pairs = vec![0usize; nb];
        let mut misses = vec![0usize; nb];
        let mut matched: Vec<Vec<bool>> = data.gts.iter().map(|g| vec![false; g.len()]).collect();
        for m in &r.matches {
            if let (Some(gi), Some(d)) = (m.gt_index, m.chamfer) {
                matched[m.scene][gi] = true;
                let b = bin_of(bins, rates[m.scene][data.gt_ids[m.scene][gi]]);
                sums[b] += d;
                pairs[b] += 1;
            }
        }
        for (si, ids) in data.gt_ids.iter().enumerate() {
            for (gi, &id) in ids.iter().enumerate() {
                if !matched[si][gi] {
                    misses[bin_of(bins, rates[si][id])] += 1;
                }
            }
        }
        classes.push(OcclusionClassReport {
            class,
            bins: (0..nb)
                .map(|b| OcclusionBin {
                    lo: bins[b],
                    hi: bins[b + 1],
                    pairs: pairs[b],
                    mean_chamfer: (pairs[b] > 0).then(|| sums[b] / pairs[b] as f64),
                    misses: misses[b],
                })
                .collect(),
        });
    }
    Ok(OcclusionReport {
        match_threshold,
        score_threshold: cfg.score_threshold,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    fn line(x: f64) -> PointSet {
        PointSet::open((0..4).map(|i| Point2::new(x, i as f64)).collect())
    }

    #[test]
    fn hand_computed_ap() {
        let gt = line(0.0);
        let far = line(10.0);
        let r = ap_single_class(&[(0.9, &gt)], &[&gt], 0.5, 0.7, 4).unwrap();
        assert_eq!(r.ap, 1.0);
        let r = ap_single_class(&[(0.9, &far), (0.8, &gt)], &[&gt], 0.5, 0.7, 4).unwrap();
        assert_eq!(r.ap, 0.5);
        let r = ap_single_class(&[(0.9, &gt), (0.8, &far)], &[&gt], 0.5, 0.7, 4).unwrap();
        assert_eq!(r.ap, 1.0);
        assert_eq!((r.tp, r.fp, r.fn_count()), (1, 1, 0));
    }

    #[test]
    fn empty_gt_conventions() {
        let p = line(0.0);
        assert_eq!(ap_single_class(&[], &[], 1.0, 0.7, 4).unwrap().ap, 1.0);
        assert_eq!(ap_single_class(&[(0.9, &p)], &[], 1.0, 0.7, 4).unwrap().ap, 0.0);
        // a prediction at the score threshold is discarded
        assert_eq!(ap_single_class(&[(0.7, &p)], &[], 1.0, 0.7, 4).unwrap().ap, 1.0);
    }

    #[test]
    fn threshold_is_strict_and_unresampled_rejected() {
        let gt = line(0.0);
        let off = line(1.0);
        assert_eq!(ap_single_class(&[(0.9, &off)], &[&gt], 1.0, 0.7, 4).unwrap().tp, 0);
        assert_eq!(ap_single_class(&[(0.9, &off)], &[&gt], 1.01, 0.7, 4).unwrap().tp, 1);
        assert!(matches!(
            ap_single_class(&[(0.9, &off)], &[&gt], 1.0, 0.7, 5),
            Err(Error::NotResampled { .. })
        ));
    }

    #[test]
    fn occlusion_rates() {
        let g = PointSet::open(vec![Point2::new(0.0, 0.0), Point2::new(0.0, 10.0)]);
        let rate = |iv: Vec<[f64; 2]>| occlusion_rate(&g, &OcclusionMask { intervals: iv });
        assert_eq!(rate(vec![]).unwrap(), 0.0);
        assert_eq!(rate(vec![[2.0, 7.0]]).unwrap(), 0.5);
        assert_eq!(rate(vec![[0.0, 10.0]]).unwrap(), 1.0);
        assert!(rate(vec![[5.0, 11.0]]).is_err());
        assert!(rate(vec![[5.0, 6.0], [1.0, 2.0]]).is_err());
    }

    #[test]
    fn bins() {
        let b = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(bin_of(&b, 0.0), 0);
        assert_eq!(bin_of(&b, 0.25), 1);
        assert_eq!(bin_of(&b, 1.0), 3);
        assert!(validate_bins(&[0.0, 0.5]).is_err());
        assert!(validate_bins(&[0.0, 0.6, 0.5, 1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        let bad = EvalConfig {
            thresholds: vec![1.0, 0.5],
            ..EvalConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
