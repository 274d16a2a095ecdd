//! Actor-branch supervision built from trajectories: virtual lane edges
//! (offset left and right by half a lane) or the path itself as a virtual
//! centerline.

use serde::{Deserialize, Serialize};

use crate::geometry::{
    normalize_trajectory, offset_curve, polyline_length, resample, CurveKind, Point2, Trajectory,
};
use crate::losses::{ElementLabel, TargetElement};
use crate::raster::BevSpec;

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
/// Clipped fragments shorter than this (meters) are dropped.
pub const MIN_FRAGMENT_LENGTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VirtualTargetKind {
    #[default]
    LaneEdge,
    Centerline,
}

impl VirtualTargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VirtualTargetKind::LaneEdge => "lane_edge",
            VirtualTargetKind::Centerline => "centerline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lane_edge" => Some(VirtualTargetKind::LaneEdge),
            "centerline" => Some(VirtualTargetKind::Centerline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TargetDiagnostics {
    pub used: usize,
    /// Trajectories with fewer than two distinct points.
    pub skipped: usize,
}

/// Lane edges give two targets per usable trajectory (left edge first),
/// centerlines one. All targets carry the virtual-edge label and are open.
pub fn make_virtual_targets(
    ts: &[Trajectory],
    kind: VirtualTargetKind,
    lane_width: f64,
    n_p: usize,
) -> (Vec<TargetElement>, TargetDiagnostics) {
    let mut out = Vec::new();
    let mut diag = TargetDiagnostics::default();
    for t in ts {
        let t = normalize_trajectory(t);
        if t.points.len() < 2 {
            diag.skipped += 1;
            continue;
        }
        let curves: Vec<Vec<Point2>> = match kind {
            VirtualTargetKind::LaneEdge => [lane_width / 2.0, -lane_width / 2.0]
                .iter()
                .map(|&d| offset_curve(&t, d).expect("two distinct points"))
                .collect(),
            VirtualTargetKind::Centerline => vec![t.points.clone()],
        };
        for c in curves {
            let pts = resample(&c, CurveKind::Open, n_p).expect("distinct points have length");
            out.push(TargetElement::new(ElementLabel::VirtualEdge, pts));
        }
        diag.used += 1;
    }
    (out, diag)
}

/// Parameter interval `[t0, t1]` of segment `a -> b` inside the closed box.
fn clip_segment(a: Point2, b: Point2, spec: &BevSpec) -> Option<(f64, f64)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let checks = [
        (-d.x, a.x - spec.x_range[0]),
        (d.x, spec.x_range[1] - a.x),
        (-d.y, a.y - spec.y_range[0]),
        (d.y, spec.y_range[1] - a.y),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Pieces of an open polyline inside the closed BEV box.
pub fn clip_polyline(points: &[Point2], spec: &BevSpec) -> Vec<Vec<Point2>> {
    let mut pieces = Vec::new();
    let mut current: Vec<Point2> = Vec::new();
    let mut continues = false;
    for w in points.windows(2) {
        match clip_segment(w[0], w[1], spec) {
            Some((t0, t1)) => {
                let p0 = if t0 == 0.0 { w[0] } else { Point2::lerp(w[0], w[1], t0) };
                let p1 = if t1 == 1.0 { w[1] } else { Point2::lerp(w[0], w[1], t1) };
                if !(continues && t0 == 0.0) {
                    if !current.is_empty() {
                        pieces.push(std::mem::take(&mut current));
                    }
                    current.push(p0);
                }
                if current.last() != Some(&p1) {
                    current.push(p1);
                }
                continues = t1 == 1.0;
            }
            None => {
                if !current.is_empty() {
                    pieces.push(std::mem::take(&mut current));
                }
                continues = false;
            }
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

/// Sutherland-Hodgman against the four box edges.
pub fn clip_polygon(points: &[Point2], spec: &BevSpec) -> Vec<Point2> {
    type Edge = (fn(Point2, f64) -> f64, f64);
    let edges: [Edge; 4] = [
        (|p, x| p.x - x, spec.x_range[0]),
        (|p, x| x - p.x, spec.x_range[1]),
        (|p, y| p.y - y, spec.y_range[0]),
        (|p, y| y - p.y, spec.y_range[1]),
    ];
    let mut poly = points.to_vec();
    for (inside, c) in edges {
        if poly.is_empty() {
            break;
        }
        let input = std::mem::take(&mut poly);
        for i in 0..input.len() {
            let (a, b) = (input[i], input[(i + 1) % input.len()]);
            let (fa, fb) = (inside(a, c), inside(b, c));
            if fa >= 0.0 {
                poly.push(a);
            }
            if (fa >= 0.0) != (fb >= 0.0) {
                poly.push(Point2::lerp(a, b, fa / (fa - fb)));
            }
        }
    }
    poly.dedup();
    poly
}

/// Restricts elements to the BEV box. Elements already inside are returned
/// unchanged; clipped pieces shorter than 1 m are dropped and survivors are
/// resampled to the element's point count.
pub fn clip_to_bev(elems: &[TargetElement], spec: &BevSpec) -> Vec<TargetElement> {
    let mut out = Vec::new();
    for e in elems {
        let n = e.points.len();
        if e.points.points.iter().all(|&p| spec.contains_closed(p)) {
            out.push(e.clone());
            continue;
        }
        let kind = e.points.kind;
        let pieces = match kind {
            CurveKind::Open => clip_polyline(&e.points.points, spec),
            CurveKind::Closed => vec![clip_polygon(&e.points.points, spec)],
        };
        for piece in pieces {
            if piece.len() < kind.min_points() || polyline_length(&piece, kind) < MIN_FRAGMENT_LENGTH
            {
                continue;
            }
            if let Ok(points) = resample(&piece, kind, n) {
                out.push(TargetElement::new(e.label, points));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{chamfer_distance, PointSet};

    fn straight() -> Trajectory {
        Trajectory::new("a", vec![Point2::new(0.0, 0.0), Point2::new(0.0, 10.0)])
    }

    #[test]
    fn straight_edges() {
        let (t, d) = make_virtual_targets(&[straight()], VirtualTargetKind::LaneEdge, 3.5, 20);
        assert_eq!(t.len(), 2);
        assert_eq!(d, TargetDiagnostics { used: 1, skipped: 0 });
        assert!(t[0].points.points.iter().all(|p| p.x == -1.75));
        assert!(t[1].points.points.iter().all(|p| p.x == 1.75));
        assert_eq!(t[0].points.len(), 20);
        assert_eq!(t[0].label, ElementLabel::VirtualEdge);
        assert_eq!(t[0].points.kind, CurveKind::Open);
    }

    #[test]
    fn centerline_and_skips() {
        let stopped = Trajectory::new("s", vec![Point2::new(1.0, 1.0); 4]);
        let (t, d) = make_virtual_targets(
            &[straight(), stopped],
            VirtualTargetKind::Centerline,
            3.5,
            20,
        );
        assert_eq!(t.len(), 1);
        assert_eq!(d.skipped, 1);
        assert!(t[0].points.points.iter().all(|p| p.x == 0.0));
    }

    /// Dense oracle: sample the arc finely, push each sample along its exact
    /// circle normal, then resample like the implementation does.
    #[test]
    fn arc_edges_match_dense_normal_offset() {
        let (r, span) = (20.0, 0.8);
        let arc = |radius: f64, k: usize, m: usize| {
            let a = span * k as f64 / (m - 1) as f64;
            // counter-clockwise around the origin starting at (radius, 0)
            Point2::new(radius * a.cos(), radius * a.sin())
        };
        let traj = Trajectory::new("a", (0..12).map(|k| arc(r, k, 12)).collect());
        let (t, _) = make_virtual_targets(&[traj], VirtualTargetKind::LaneEdge, 3.5, 20);
        // heading is counter-clockwise, so left points to the center
        let inner: Vec<Point2> = (0..2000).map(|k| arc(r - 1.75, k, 2000)).collect();
        let outer: Vec<Point2> = (0..2000).map(|k| arc(r + 1.75, k, 2000)).collect();
        let inner = resample(&inner, CurveKind::Open, 20).unwrap();
        let outer = resample(&outer, CurveKind::Open, 20).unwrap();
        assert!(chamfer_distance(&t[0].points.points, &inner.points).unwrap() < 0.05);
        assert!(chamfer_distance(&t[1].points.points, &outer.points).unwrap() < 0.05);
        assert!(t[0].points.length() < t[1].points.length());
    }

    fn vertical(x: f64, y0: f64, y1: f64) -> TargetElement {
        let pts = resample(
            &[Point2::new(x, y0), Point2::new(x, y1)],
            CurveKind::Open,
            20,
        )
        .unwrap();
        TargetElement::new(ElementLabel::VirtualEdge, pts)
    }

    #[test]
    fn clipping() {
        let spec = BevSpec::default();
        let inside = vertical(0.0, -5.0, 5.0);
        assert_eq!(clip_to_bev(std::slice::from_ref(&inside), &spec), vec![inside]);
        assert!(clip_to_bev(&[vertical(20.0, -5.0, 5.0)], &spec).is_empty());

        let crossing = vertical(1.0, 20.0, 40.0);
        let out = clip_to_bev(&[crossing], &spec);
        assert_eq!(out.len(), 1);
        let last = *out[0].points.points.last().unwrap();
        assert!((last.y - 30.0).abs() < 1e-12 && last.x == 1.0);
        assert_eq!(out[0].points.len(), 20);

        // leaves the box by only half a meter: fragment dropped
        assert!(clip_to_bev(&[vertical(1.0, 29.5, 40.0)], &spec).is_empty());
    }

    #[test]
    fn clip_segment_oracle() {
        let spec = BevSpec::default();
        // diagonal exit through the right edge at x = 15
        let (a, b) = (Point2::new(10.0, 0.0), Point2::new(20.0, 10.0));
        let (t0, t1) = clip_segment(a, b, &spec).unwrap();
        assert_eq!(t0, 0.0);
        let p = Point2::lerp(a, b, t1);
        assert!((p.x - 15.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12);
    }

    #[test]
    fn polygon_clipping() {
        let spec = BevSpec::default();
        let sq = PointSet::closed(vec![
            Point2::new(13.0, 0.0),
            Point2::new(17.0, 0.0),
            Point2::new(17.0, 4.0),
            Point2::new(13.0, 4.0),
        ]);
        let e = TargetElement::new(ElementLabel::VirtualEdge, sq);
        let out = clip_to_bev(&[e], &spec);
        assert_eq!(out.len(), 1);
        assert!(out[0].points.points.iter().all(|p| p.x <= 15.0 + 1e-12));
        assert_eq!(out[0].points.len(), 4);
    }
}
