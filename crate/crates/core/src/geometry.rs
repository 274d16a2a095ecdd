//! Ego-frame 2-D primitives: points, trajectories, fixed-cardinality point
//! sets, their equivalence groups, and the curve operations built on them.
//!
//! Coordinates are meters in the ego frame of the final timestep: `x` is
//! lateral (right positive), `y` is longitudinal (forward positive).

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of points per map element.
pub const DEFAULT_NUM_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn manhattan(self, o: Point2) -> f64 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }

    /// Rotation by +90 degrees counter-clockwise.
    pub fn perp_left(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    /// `None` for the zero vector.
    pub fn normalized(self) -> Option<Point2> {
        let n = self.norm();
        (n > 0.0).then(|| Point2::new(self.x / n, self.y / n))
    }

    /// Interpolates with `a * (1 - t) + b * t`, which returns the endpoints
    /// exactly at `t = 0` and `t = 1`.
    pub fn lerp(a: Point2, b: Point2, t: f64) -> Point2 {
        Point2::new(a.x * (1.0 - t) + b.x * t, a.y * (1.0 - t) + b.y * t)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2::new(x, y)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point2 {
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// One actor's recent path, oldest sample first.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actor_id: String,
    pub points: Vec<Point2>,
}

impl Trajectory {
    pub fn new(actor_id: impl Into<String>, points: Vec<Point2>) -> Self {
        Self {
            actor_id: actor_id.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Open,
    Closed,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Open => "open",
            CurveKind::Closed => "closed",
        }
    }

    pub fn min_points(self) -> usize {
        match self {
            CurveKind::Open => 2,
            CurveKind::Closed => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapElementClass {
    PedCrossing,
    Divider,
    Boundary,
}

impl MapElementClass {
    pub const ALL: [MapElementClass; 3] = [
        MapElementClass::PedCrossing,
        MapElementClass::Divider,
        MapElementClass::Boundary,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MapElementClass::PedCrossing => "ped_crossing",
            MapElementClass::Divider => "divider",
            MapElementClass::Boundary => "boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Pedestrian crossings are polygons; the line classes are polylines.
    pub fn kind(self) -> CurveKind {
        match self {
            MapElementClass::PedCrossing => CurveKind::Closed,
            _ => CurveKind::Open,
        }
    }
}

impl fmt::Display for MapElementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered point set standing for a polyline (`Open`) or a polygon
/// without a repeated closing vertex (`Closed`).
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point2>,
    pub kind: CurveKind,
}

impl PointSet {
    pub fn new(points: Vec<Point2>, kind: CurveKind) -> Self {
        Self { points, kind }
    }

    pub fn open(points: Vec<Point2>) -> Self {
        Self::new(points, CurveKind::Open)
    }

    pub fn closed(points: Vec<Point2>) -> Self {
        Self::new(points, CurveKind::Closed)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.points, self.kind)
    }

    pub fn group(&self) -> PermutationGroup {
        PermutationGroup::new(self.kind, self.points.len())
    }

    pub fn translated(&self, t: Point2) -> PointSet {
        PointSet::new(self.points.iter().map(|&p| p + t).collect(), self.kind)
    }
}

/// One member of a point-set equivalence group.
///
/// Maps output index `i` to input index `(shift + i) mod n` when forward and
/// `(shift - i) mod n` when reversed. The open-curve reversal is
/// `{ shift: n - 1, reversed: true }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Permutation {
    pub shift: usize,
    pub reversed: bool,
}

impl Permutation {
    pub const IDENTITY: Permutation = Permutation {
        shift: 0,
        reversed: false,
    };

    pub fn source_index(self, i: usize, n: usize) -> usize {
        if self.reversed {
            (self.shift + n - i % n) % n
        } else {
            (self.shift + i) % n
        }
    }

    pub fn inverse(self, n: usize) -> Permutation {
        if self.reversed {
            self
        } else {
            Permutation {
                shift: (n - self.shift % n) % n,
                reversed: false,
            }
        }
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = if self.reversed { "reversed" } else { "forward" };
        write!(f, "{dir}+{}", self.shift)
    }
}

/// Orderings treated as the same element: identity and reversal for open
/// curves, every cyclic shift in both orientations for closed curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PermutationGroup {
    pub kind: CurveKind,
    pub size: usize,
}

impl PermutationGroup {
    pub fn new(kind: CurveKind, size: usize) -> Self {
        Self { kind, size }
    }

    pub fn order(&self) -> usize {
        match self.kind {
            CurveKind::Open => 2,
            CurveKind::Closed => 2 * self.size,
        }
    }

    /// Members in canonical order; the identity is always index 0.
    pub fn members(&self) -> Vec<Permutation> {
        let n = self.size;
        match self.kind {
            CurveKind::Open => vec![
                Permutation::IDENTITY,
                Permutation {
                    shift: n.saturating_sub(1),
                    reversed: true,
                },
            ],
            CurveKind::Closed => (0..n)
                .map(|shift| Permutation {
                    shift,
                    reversed: false,
                })
                .chain((0..n).map(|shift| Permutation {
                    shift,
                    reversed: true,
                }))
                .collect(),
        }
    }

    pub fn contains(&self, g: Permutation) -> bool {
        let n = self.size;
        match self.kind {
            CurveKind::Open => g == Permutation::IDENTITY || (g.reversed && g.shift + 1 == n),
            CurveKind::Closed => g.shift < n.max(1),
        }
    }
}

/// Merges consecutive duplicate points, preserving order.
pub fn normalize_trajectory(t: &Trajectory) -> Trajectory {
    let mut points: Vec<Point2> = Vec::with_capacity(t.points.len());
    for &p in &t.points {
        if points.last() != Some(&p) {
            points.push(p);
        }
    }
    Trajectory {
        actor_id: t.actor_id.clone(),
        points,
    }
}

/// Cumulative arc length at every vertex; for closed curves the final entry
/// is the perimeter (the wrap segment back to the first vertex).
pub fn cumulative_lengths(points: &[Point2], kind: CurveKind) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len() + 1);
    let mut s = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        s += w[0].distance(w[1]);
        cum.push(s);
    }
    if kind == CurveKind::Closed && points.len() > 1 {
        s += points[points.len() - 1].distance(points[0]);
        cum.push(s);
    }
    cum
}

pub fn polyline_length(points: &[Point2], kind: CurveKind) -> f64 {
    cumulative_lengths(points, kind).last().copied().unwrap_or(0.0)
}

fn strip_closing_vertex(points: &[Point2], kind: CurveKind) -> &[Point2] {
    if kind == CurveKind::Closed && points.len() > 1 && points.first() == points.last() {
        &points[..points.len() - 1]
    } else {
        points
    }
}

/// Point at arc length `s` along the curve (clamped to its extent).
pub fn point_at_arc_length(points: &[Point2], kind: CurveKind, s: f64) -> Option<Point2> {
    let cum = cumulative_lengths(points, kind);
    sample_at(points, &cum, s)
}

fn sample_at(points: &[Point2], cum: &[f64], s: f64) -> Option<Point2> {
    let segments = cum.len().checked_sub(1)?;
    if segments == 0 {
        return points.first().copied();
    }
    let total = cum[segments];
    let s = s.clamp(0.0, total);
    // first segment whose end reaches s: ties go to the lower arc length
    let i = cum[1..].partition_point(|&c| c < s).min(segments - 1);
    let a = points[i];
    let b = points[(i + 1) % points.len()];
    let len = cum[i + 1] - cum[i];
    if len <= 0.0 {
        return Some(a);
    }
    Some(Point2::lerp(a, b, ((s - cum[i]) / len).clamp(0.0, 1.0)))
}

/// Resamples a polyline or polygon to `n_p` points at uniform arc-length
/// spacing. Open curves keep both endpoints; closed curves start at the first
/// vertex and divide the perimeter (wrap segment included) evenly.
pub fn resample(points: &[Point2], kind: CurveKind, n_p: usize) -> Result<PointSet> {
    if n_p < 2 {
        return Err(Error::TooFewPoints { need: 2, got: n_p });
    }
    let points = strip_closing_vertex(points, kind);
    if points.len() < kind.min_points() {
        return Err(Error::TooFewPoints {
            need: kind.min_points(),
            got: points.len(),
        });
    }
    let cum = cumulative_lengths(points, kind);
    let total = *cum.last().expect("non-empty");
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegeneratePolyline);
    }
    let out = match kind {
        CurveKind::Open => {
            let mut out: Vec<Point2> = (0..n_p - 1)
                .map(|k| {
                    let s = total * k as f64 / (n_p - 1) as f64;
                    sample_at(points, &cum, s).expect("non-empty")
                })
                .collect();
            out[0] = points[0];
            out.push(points[points.len() - 1]);
            out
        }
        CurveKind::Closed => (0..n_p)
            .map(|k| {
                let s = total * k as f64 / n_p as f64;
                sample_at(points, &cum, s).expect("non-empty")
            })
            .collect(),
    };
    Ok(PointSet::new(out, kind))
}

/// Edge vectors `v[k+1] - v[k]`; closed sets include the wrap edge.
pub fn consecutive_diff(v: &PointSet) -> Result<Vec<Point2>> {
    if v.points.len() < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: v.points.len(),
        });
    }
    let mut d: Vec<Point2> = v.points.windows(2).map(|w| w[1] - w[0]).collect();
    if v.kind == CurveKind::Closed {
        d.push(v.points[0] - v.points[v.points.len() - 1]);
    }
    Ok(d)
}

/// Offsets a trajectory perpendicular to its heading by `d` meters; positive
/// `d` moves to the left (heading rotated +90 degrees).
///
/// Endpoints move along their segment normal. Interior vertices move along
/// the normalized sum of the adjacent unit normals, scaled to the miter
/// length `d / cos(half-turn)` and clamped to `2|d|`. The input is normalized
/// first, so the output has one vertex per distinct consecutive position.
pub fn offset_curve(t: &Trajectory, d: f64) -> Result<Vec<Point2>> {
    let t = normalize_trajectory(t);
    let pts = &t.points;
    if pts.len() < 2 {
        return Err(Error::CannotOffset);
    }
    let normals: Vec<Point2> = pts
        .windows(2)
        .map(|w| {
            (w[1] - w[0])
                .normalized()
                .expect("normalized trajectory has no zero-length segments")
                .perp_left()
        })
        .collect();
    let last = pts.len() - 1;
    let out = pts
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if i == 0 {
                return p + normals[0] * d;
            }
            if i == last {
                return p + normals[last - 1] * d;
            }
            let (n1, n2) = (normals[i - 1], normals[i]);
            match (n1 + n2).normalized() {
                Some(m) => {
                    let cos_half = m.dot(n1);
                    let miter = (d / cos_half).clamp(-2.0 * d.abs(), 2.0 * d.abs());
                    p + m * miter
                }
                // full reversal: push the vertex past the tip
                None => p + n1.perp_left().neg() * (2.0 * d.abs()),
            }
        })
        .collect();
    Ok(out)
}

fn directed_mean_min(p: &[Point2], q: &[Point2]) -> f64 {
    let sum: f64 = p
        .iter()
        .map(|&a| {
            q.iter()
                .map(|&b| a.distance(b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    sum / p.len() as f64
}

/// Symmetric Chamfer distance between two point sets:
/// half the sum of the two directed mean nearest-neighbour distances.
pub fn chamfer_distance(p: &[Point2], q: &[Point2]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    Ok(0.5 * (directed_mean_min(p, q) + directed_mean_min(q, p)))
}

pub fn apply_permutation(v: &PointSet, g: Permutation) -> Result<PointSet> {
    let n = v.points.len();
    let group = v.group();
    if !group.contains(g) {
        return Err(Error::PermutationMismatch {
            member: g.to_string(),
            kind: v.kind.as_str(),
            size: n,
        });
    }
    let points = (0..n).map(|i| v.points[g.source_index(i, n)]).collect();
    Ok(PointSet::new(points, v.kind))
}

/// Closest point on a polyline: returns `(arc length, distance)`.
pub fn project_onto_polyline(points: &[Point2], p: Point2) -> Option<(f64, f64)> {
    if points.len() == 1 {
        return Some((0.0, p.distance(points[0])));
    }
    let cum = cumulative_lengths(points, CurveKind::Open);
    let mut best: Option<(f64, f64)> = None;
    for (i, w) in points.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 {
            ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = Point2::lerp(a, b, t);
        let dist = p.distance(q);
        if best.is_none_or(|(_, bd)| dist < bd) {
            best = Some((cum[i] + t * (cum[i + 1] - cum[i]), dist));
        }
    }
    best
}

/// The piece of an open polyline between arc lengths `s0 <= s1`.
pub fn sub_polyline(points: &[Point2], s0: f64, s1: f64) -> Vec<Point2> {
    let cum = cumulative_lengths(points, CurveKind::Open);
    let total = *cum.last().unwrap_or(&0.0);
    let (s0, s1) = (s0.clamp(0.0, total), s1.clamp(0.0, total));
    let mut out = Vec::new();
    if let Some(p) = sample_at(points, &cum, s0) {
        out.push(p);
    }
    for (i, &c) in cum.iter().enumerate() {
        if c > s0 && c < s1 {
            out.push(points[i]);
        }
    }
    if let Some(p) = sample_at(points, &cum, s1) {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}
