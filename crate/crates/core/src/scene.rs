//! Scene and prediction documents, the text raster format, corpus layout on
//! disk, and the deterministic synthetic road generator.
//!
//! Documents are written canonically: object keys sorted, two-space
//! indentation, numeric arrays on one line, floats in shortest round-trip
//! form. Loading validates every invariant and names the offending path.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::evaluation::{EvalScene, MapElement, OcclusionMask, PredictionSet, ScoredElement};
use crate::geometry::{
    polyline_length, resample, sub_polyline, CurveKind, MapElementClass, Point2, PointSet,
    Trajectory,
};
use crate::losses::TargetElement;
use crate::raster::{rasterize_one, BevSpec, RasterMode, TrajectoryImage};
use crate::rng::CounterRng;
use crate::targets::{clip_polygon, clip_polyline, TargetDiagnostics, MIN_FRAGMENT_LENGTH};

pub const FORMAT_VERSION: u64 = 1;
pub const RASTER_MAGIC: &str = "MATM-RASTER v1";

/// Dense feature grid `[channels, height, width]`, row-major, covering the
/// scene's BEV extent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn at(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f64) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRng {
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub bev: BevSpec,
    pub trajectories: Vec<Trajectory>,
    pub gt_elements: Vec<MapElement>,
    /// One mask per GT element.
    pub occlusion: Vec<OcclusionMask>,
    pub visual_bev: Option<FeatureGrid>,
    pub rng: Option<SceneRng>,
}

impl Scene {
    pub fn eval_view(&self) -> EvalScene<'_> {
        EvalScene {
            scene_id: &self.scene_id,
            gts: &self.gt_elements,
            masks: &self.occlusion,
            num_actors: self.trajectories.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inv = |path: String, message: &str| Error::Invariant {
            path,
            message: message.to_string(),
        };
        if self.scene_id.is_empty() {
            return Err(inv("scene_id".into(), "empty scene id"));
        }
        self.bev.validate()?;
        let mut ids = std::collections::HashSet::new();
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.points.is_empty() {
                return Err(inv(format!("trajectories[{i}].points"), "empty trajectory"));
            }
            if let Some(j) = t.points.iter().position(|p| !p.is_finite()) {
                return Err(inv(
                    format!("trajectories[{i}].points[{j}]"),
                    "non-finite coordinate",
                ));
            }
            if !ids.insert(t.actor_id.as_str()) {
                return Err(inv(format!("trajectories[{i}].actor_id"), "duplicate actor id"));
            }
        }
        for (i, e) in self.gt_elements.iter().enumerate() {
            if e.points.kind != e.class.kind() {
                return Err(inv(
                    format!("gt_elements[{i}].kind"),
                    "kind does not match class",
                ));
            }
            if e.points.len() < e.points.kind.min_points() {
                return Err(inv(format!("gt_elements[{i}].points"), "too few points"));
            }
            if let Some(j) = e.points.points.iter().position(|p| !p.is_finite()) {
                return Err(inv(
                    format!("gt_elements[{i}].points[{j}]"),
                    "non-finite coordinate",
                ));
            }
        }
        if self.occlusion.len() != self.gt_elements.len() {
            return Err(inv("occlusion".into(), "one mask per element required"));
        }
        for (i, (m, e)) in self.occlusion.iter().zip(&self.gt_elements).enumerate() {
            m.validate(polyline_length(&e.points.points, e.points.kind))
                .map_err(|err| inv(format!("occlusion[{i}]"), &err.to_string()))?;
        }
        if let Some(g) = &self.visual_bev {
            if g.data.len() != g.channels * g.height * g.width {
                return Err(inv("visual_bev".into(), "data length does not match shape"));
            }
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(inv("visual_bev".into(), "non-finite value"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// canonical JSON writing

fn num(v: f64) -> Value {
    Value::Number(Number::from_f64(v).expect("finite value"))
}

fn point_value(p: Point2) -> Value {
    Value::Array(vec![num(p.x), num(p.y)])
}

fn points_value(ps: &[Point2]) -> Value {
    Value::Array(ps.iter().map(|&p| point_value(p)).collect())
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            out.push_str("{\n");
            for (i, (k, val)) in m.iter().enumerate() {
                out.push_str(&" ".repeat(indent + 2));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(val, indent + 2, out);
                if i + 1 < m.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&" ".repeat(indent));
            out.push('}');
        }
        Value::Array(a) if a.iter().any(|x| x.is_array() || x.is_object()) => {
            out.push_str("[\n");
            for (i, val) in a.iter().enumerate() {
                out.push_str(&" ".repeat(indent + 2));
                write_value(val, indent + 2, out);
                if i + 1 < a.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&" ".repeat(indent));
            out.push(']');
        }
        Value::Array(a) => {
            out.push('[');
            for (i, val) in a.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&val.to_string());
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Canonical text of a JSON value, newline-terminated.
pub fn to_canonical_json(v: &Value) -> String {
    let mut s = String::new();
    write_value(v, 0, &mut s);
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// JSON reading helpers

type Obj = Map<String, Value>;

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: if path.is_empty() { "$".into() } else { path.into() },
        message: message.into(),
    }
}

fn as_obj<'a>(v: &'a Value, path: &str) -> Result<&'a Obj> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn as_arr<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| schema(path, "expected a number"))
}

fn as_u64(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| schema(path, "expected a non-negative integer"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| schema(path, "expected a string"))
}

fn field<'a>(o: &'a Obj, key: &str, path: &str) -> Result<&'a Value> {
    o.get(key).ok_or_else(|| Error::MissingField(join(path, key)))
}

fn reject_unknown(o: &Obj, allowed: &[&str], path: &str) -> Result<()> {
    match o.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(&join(path, k), "unknown field")),
        None => Ok(()),
    }
}

fn read_pair(v: &Value, path: &str) -> Result<[f64; 2]> {
    let a = as_arr(v, path)?;
    if a.len() != 2 {
        return Err(schema(path, "expected a pair of numbers"));
    }
    Ok([
        as_f64(&a[0], &format!("{path}[0]"))?,
        as_f64(&a[1], &format!("{path}[1]"))?,
    ])
}

fn read_points(v: &Value, path: &str) -> Result<Vec<Point2>> {
    as_arr(v, path)?
        .iter()
        .enumerate()
        .map(|(i, p)| read_pair(p, &format!("{path}[{i}]")).map(Point2::from))
        .collect()
}

fn read_version(o: &Obj, path: &str) -> Result<()> {
    let p = join(path, "format_version");
    let v = as_u64(field(o, "format_version", path)?, &p)?;
    if v != FORMAT_VERSION {
        return Err(schema(&p, format!("unsupported version {v}")));
    }
    Ok(())
}

fn parse_class(v: &Value, path: &str) -> Result<MapElementClass> {
    let s = as_str(v, path)?;
    MapElementClass::parse(s).ok_or_else(|| schema(path, format!("unknown class {s:?}")))
}

fn parse_json(bytes: &[u8]) -> Result<Value> {
    serde_json::from_slice(bytes).map_err(|e| schema("", format!("invalid JSON: {e}")))
}

// ---------------------------------------------------------------------------
// bev spec and feature grid

fn bev_value(b: &BevSpec) -> Value {
    let mut m = Obj::new();
    m.insert("resolution".into(), num(b.resolution));
    m.insert("x_range".into(), Value::Array(vec![num(b.x_range[0]), num(b.x_range[1])]));
    m.insert("y_range".into(), Value::Array(vec![num(b.y_range[0]), num(b.y_range[1])]));
    Value::Object(m)
}

fn read_bev(v: &Value, path: &str) -> Result<BevSpec> {
    let o = as_obj(v, path)?;
    reject_unknown(o, &["resolution", "x_range", "y_range"], path)?;
    let spec = BevSpec {
        x_range: read_pair(field(o, "x_range", path)?, &join(path, "x_range"))?,
        y_range: read_pair(field(o, "y_range", path)?, &join(path, "y_range"))?,
        resolution: as_f64(field(o, "resolution", path)?, &join(path, "resolution"))?,
    };
    spec.validate().map_err(|e| Error::Invariant {
        path: path.into(),
        message: e.to_string(),
    })?;
    Ok(spec)
}

fn grid_value(g: &FeatureGrid) -> Value {
    let mut bytes = Vec::with_capacity(g.data.len() * 8);
    for v in &g.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut m = Obj::new();
    m.insert("data".into(), Value::String(B64.encode(bytes)));
    m.insert(
        "shape".into(),
        Value::Array(vec![g.channels.into(), g.height.into(), g.width.into()]),
    );
    Value::Object(m)
}

fn read_grid(v: &Value, path: &str) -> Result<FeatureGrid> {
    let o = as_obj(v, path)?;
    reject_unknown(o, &["data", "shape"], path)?;
    let sp = join(path, "shape");
    let shape = as_arr(field(o, "shape", path)?, &sp)?;
    if shape.len() != 3 {
        return Err(schema(&sp, "expected [channels, height, width]"));
    }
    let dims = shape
        .iter()
        .enumerate()
        .map(|(i, d)| as_u64(d, &format!("{sp}[{i}]")).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let dp = join(path, "data");
    let bytes = B64
        .decode(as_str(field(o, "data", path)?, &dp)?)
        .map_err(|e| schema(&dp, format!("invalid base64: {e}")))?;
    let n = dims[0] * dims[1] * dims[2];
    if bytes.len() != n * 8 {
        return Err(Error::Invariant {
            path: dp,
            message: format!("{} bytes for {n} values", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(FeatureGrid {
        channels: dims[0],
        height: dims[1],
        width: dims[2],
        data,
    })
}

// ---------------------------------------------------------------------------
// scenes

pub fn scene_to_value(s: &Scene) -> Value {
    let mut m = Obj::new();
    m.insert("format_version".into(), FORMAT_VERSION.into());
    m.insert("scene_id".into(), Value::String(s.scene_id.clone()));
    m.insert("bev".into(), bev_value(&s.bev));
    m.insert(
        "trajectories".into(),
        Value::Array(
            s.trajectories
                .iter()
                .map(|t| {
                    let mut o = Obj::new();
                    o.insert("actor_id".into(), Value::String(t.actor_id.clone()));
                    o.insert("points".into(), points_value(&t.points));
                    Value::Object(o)
                })
                .collect(),
        ),
    );
    m.insert(
        "gt_elements".into(),
        Value::Array(
            s.gt_elements
                .iter()
                .map(|e| {
                    let mut o = Obj::new();
                    o.insert("class".into(), Value::String(e.class.as_str().into()));
                    o.insert("kind".into(), Value::String(e.points.kind.as_str().into()));
                    o.insert("points".into(), points_value(&e.points.points));
                    Value::Object(o)
                })
                .collect(),
        ),
    );
    m.insert(
        "occlusion".into(),
        Value::Array(
            s.occlusion
                .iter()
                .enumerate()
                .filter(|(_, mask)| !mask.intervals.is_empty())
                .map(|(i, mask)| {
                    let mut o = Obj::new();
                    o.insert("element_index".into(), i.into());
                    o.insert(
                        "intervals".into(),
                        Value::Array(
                            mask.intervals
                                .iter()
                                .map(|&[a, b]| Value::Array(vec![num(a), num(b)]))
                                .collect(),
                        ),
                    );
                    Value::Object(o)
                })
                .collect(),
        ),
    );
    if let Some(g) = &s.visual_bev {
        m.insert("visual_bev".into(), grid_value(g));
    }
    if let Some(r) = s.rng {
        let mut o = Obj::new();
        o.insert("seed".into(), r.seed.into());
        o.insert("stream".into(), r.stream.into());
        m.insert("rng".into(), Value::Object(o));
    }
    Value::Object(m)
}

pub fn save_scene(s: &Scene) -> Result<Vec<u8>> {
    s.validate()?;
    Ok(to_canonical_json(&scene_to_value(s)).into_bytes())
}

fn read_kind(v: &Value, path: &str) -> Result<CurveKind> {
    match as_str(v, path)? {
        "open" => Ok(CurveKind::Open),
        "closed" => Ok(CurveKind::Closed),
        other => Err(schema(path, format!("unknown kind {other:?}"))),
    }
}

pub fn scene_from_value(v: &Value) -> Result<Scene> {
    let o = as_obj(v, "")?;
    reject_unknown(
        o,
        &[
            "format_version",
            "scene_id",
            "bev",
            "trajectories",
            "gt_elements",
            "occlusion",
            "visual_bev",
            "rng",
        ],
        "",
    )?;
    read_version(o, "")?;
    let scene_id = as_str(field(o, "scene_id", "")?, "scene_id")?.to_string();
    let bev = read_bev(field(o, "bev", "")?, "bev")?;

    let mut trajectories = Vec::new();
    for (i, t) in as_arr(field(o, "trajectories", "")?, "trajectories")?.iter().enumerate() {
        let p = format!("trajectories[{i}]");
        let to = as_obj(t, &p)?;
        reject_unknown(to, &["actor_id", "points"], &p)?;
        trajectories.push(Trajectory {
            actor_id: as_str(field(to, "actor_id", &p)?, &join(&p, "actor_id"))?.to_string(),
            points: read_points(field(to, "points", &p)?, &join(&p, "points"))?,
        });
    }

    let mut gt_elements = Vec::new();
    for (i, e) in as_arr(field(o, "gt_elements", "")?, "gt_elements")?.iter().enumerate() {
        let p = format!("gt_elements[{i}]");
        let eo = as_obj(e, &p)?;
        reject_unknown(eo, &["class", "kind", "points"], &p)?;
        let class = parse_class(field(eo, "class", &p)?, &join(&p, "class"))?;
        let kind = read_kind(field(eo, "kind", &p)?, &join(&p, "kind"))?;
        let points = read_points(field(eo, "points", &p)?, &join(&p, "points"))?;
        gt_elements.push(MapElement {
            class,
            points: PointSet::new(points, kind),
        });
    }

    let mut occlusion = vec![OcclusionMask::default(); gt_elements.len()];
    let mut seen = vec![false; gt_elements.len()];
    for (i, m) in as_arr(field(o, "occlusion", "")?, "occlusion")?.iter().enumerate() {
        let p = format!("occlusion[{i}]");
        let mo = as_obj(m, &p)?;
        reject_unknown(mo, &["element_index", "intervals"], &p)?;
        let ip = join(&p, "element_index");
        let idx = as_u64(field(mo, "element_index", &p)?, &ip)? as usize;
        if idx >= gt_elements.len() || std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Invariant {
                path: ip,
                message: format!("invalid or repeated element index {idx}"),
            });
        }
        let vp = join(&p, "intervals");
        occlusion[idx].intervals = as_arr(field(mo, "intervals", &p)?, &vp)?
            .iter()
            .enumerate()
            .map(|(k, iv)| read_pair(iv, &format!("{vp}[{k}]")))
            .collect::<Result<_>>()?;
    }

    let visual_bev = o.get("visual_bev").map(|g| read_grid(g, "visual_bev")).transpose()?;
    let rng = match o.get("rng") {
        Some(r) => {
            let ro = as_obj(r, "rng")?;
            reject_unknown(ro, &["seed", "stream"], "rng")?;
            Some(SceneRng {
                seed: as_u64(field(ro, "seed", "rng")?, "rng.seed")?,
                stream: as_u64(field(ro, "stream", "rng")?, "rng.stream")?,
            })
        }
        None => None,
    };
    let scene = Scene {
        scene_id,
        bev,
        trajectories,
        gt_elements,
        occlusion,
        visual_bev,
        rng,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(bytes: &[u8]) -> Result<Scene> {
    scene_from_value(&parse_json(bytes)?)
}

// ---------------------------------------------------------------------------
// predictions and targets

pub fn save_predictions(p: &PredictionSet) -> Result<Vec<u8>> {
    let mut elements = Vec::new();
    for (i, e) in p.elements.iter().enumerate() {
        if !(0.0..=1.0).contains(&e.score) || e.points.points.iter().any(|q| !q.is_finite()) {
            return Err(Error::Invariant {
                path: format!("elements[{i}]"),
                message: "score outside [0, 1] or non-finite point".into(),
            });
        }
        let mut o = Obj::new();
        o.insert("class".into(), Value::String(e.class.as_str().into()));
        o.insert("score".into(), num(e.score));
        o.insert("points".into(), points_value(&e.points.points));
        elements.push(Value::Object(o));
    }
    let mut m = Obj::new();
    m.insert("format_version".into(), FORMAT_VERSION.into());
    m.insert("scene_id".into(), Value::String(p.scene_id.clone()));
    m.insert("elements".into(), Value::Array(elements));
    Ok(to_canonical_json(&Value::Object(m)).into_bytes())
}

pub fn load_predictions(bytes: &[u8]) -> Result<PredictionSet> {
    let v = parse_json(bytes)?;
    let o = as_obj(&v, "")?;
    reject_unknown(o, &["format_version", "scene_id", "elements"], "")?;
    read_version(o, "")?;
    let scene_id = as_str(field(o, "scene_id", "")?, "scene_id")?.to_string();
    let mut elements = Vec::new();
    for (i, e) in as_arr(field(o, "elements", "")?, "elements")?.iter().enumerate() {
        let p = format!("elements[{i}]");
        let eo = as_obj(e, &p)?;
        reject_unknown(eo, &["class", "score", "points"], &p)?;
        let class = parse_class(field(eo, "class", &p)?, &join(&p, "class"))?;
        let score = as_f64(field(eo, "score", &p)?, &join(&p, "score"))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Invariant {
                path: join(&p, "score"),
                message: "score outside [0, 1]".into(),
            });
        }
        let points = read_points(field(eo, "points", &p)?, &join(&p, "points"))?;
        elements.push(ScoredElement {
            class,
            score,
            points: PointSet::new(points, class.kind()),
        });
    }
    Ok(PredictionSet { scene_id, elements })
}

/// Virtual-target document for one scene.
pub fn save_targets(
    scene_id: &str,
    kind: &str,
    lane_width: f64,
    targets: &[TargetElement],
    diag: TargetDiagnostics,
) -> Vec<u8> {
    let mut m = Obj::new();
    m.insert("format_version".into(), FORMAT_VERSION.into());
    m.insert("scene_id".into(), Value::String(scene_id.into()));
    m.insert("kind".into(), Value::String(kind.into()));
    m.insert("lane_width".into(), num(lane_width));
    let mut d = Obj::new();
    d.insert("skipped".into(), diag.skipped.into());
    d.insert("used".into(), diag.used.into());
    m.insert("diagnostics".into(), Value::Object(d));
    m.insert(
        "elements".into(),
        Value::Array(
            targets
                .iter()
                .map(|t| {
                    let mut o = Obj::new();
                    o.insert("class".into(), Value::String(t.label.as_str().into()));
                    o.insert("kind".into(), Value::String(t.points.kind.as_str().into()));
                    o.insert("points".into(), points_value(&t.points.points));
                    Value::Object(o)
                })
                .collect(),
        ),
    );
    to_canonical_json(&Value::Object(m)).into_bytes()
}

// ---------------------------------------------------------------------------
// raster text format

/// Header line, `h w`, resolution, `x_min x_max`, `y_min y_max`, then `h`
/// rows of `w` space-separated 0/1 digits.
pub fn save_raster(img: &TrajectoryImage) -> String {
    let s = &img.spec;
    let mut out = format!(
        "{RASTER_MAGIC}\n{} {}\n{}\n{} {}\n{} {}\n",
        img.height, img.width, s.resolution, s.x_range[0], s.x_range[1], s.y_range[0], s.y_range[1]
    );
    for r in 0..img.height {
        let row: Vec<&str> = (0..img.width)
            .map(|c| if img.get(r, c) == 1 { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn load_raster(text: &str) -> Result<TrajectoryImage> {
    let bad = |m: &str| Error::MalformedRaster(m.to_string());
    let mut lines = text.lines();
    if lines.next() != Some(RASTER_MAGIC) {
        return Err(bad("missing MATM-RASTER v1 header"));
    }
    let mut header = |what: &str| lines.next().ok_or_else(|| bad(&format!("missing {what}")));
    let nums = |line: &str, n: usize, what: &str| -> Result<Vec<f64>> {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(&format!("unparsable {what}")))?;
        if v.len() != n {
            return Err(bad(&format!("{what} needs {n} values")));
        }
        Ok(v)
    };
    let dims_line = header("dimensions")?;
    let dims: Vec<usize> = dims_line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("unparsable dimensions"))?;
    if dims.len() != 2 {
        return Err(bad("dimensions need h and w"));
    }
    let (h, w) = (dims[0], dims[1]);
    let res = nums(header("resolution")?, 1, "resolution")?[0];
    let xr = nums(header("x range")?, 2, "x range")?;
    let yr = nums(header("y range")?, 2, "y range")?;
    let spec = BevSpec::new([xr[0], xr[1]], [yr[0], yr[1]], res)
        .map_err(|e| bad(&e.to_string()))?;
    if spec.height() != h || spec.width() != w {
        return Err(bad(&format!(
            "dimensions {h}x{w} disagree with ranges ({}x{})",
            spec.height(),
            spec.width()
        )));
    }
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != h {
        return Err(Error::RowCountMismatch {
            expected: h,
            found: rows.len(),
        });
    }
    let mut cells = Vec::with_capacity(h * w);
    for (r, line) in rows.iter().enumerate() {
        let before = cells.len();
        for tok in line.split_whitespace() {
            match tok {
                "0" => cells.push(0),
                "1" => cells.push(1),
                _ => return Err(bad(&format!("row {r}: invalid cell {tok:?}"))),
            }
        }
        if cells.len() - before != w {
            return Err(bad(&format!("row {r} has {} cells, expected {w}", cells.len() - before)));
        }
    }
    TrajectoryImage::from_cells(spec, cells)
}

// ---------------------------------------------------------------------------
// synthetic generation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadShape {
    Straight,
    Arc,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionConfig {
    /// Chance that an element carries any occlusion.
    pub probability: f64,
    /// Inclusive range of interval counts for an occluded element.
    pub intervals: [usize; 2],
    /// Range of the occluded fraction of an occluded element.
    pub fraction: [f64; 2],
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            intervals: [1, 2],
            fraction: [0.1, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub bev: BevSpec,
    /// Cell size of `visual_bev`; the BEV resolution when absent.
    pub visual_resolution: Option<f64>,
    pub n_p: usize,
    pub road_shapes: Vec<RoadShape>,
    pub lanes: [usize; 2],
    pub lane_width: f64,
    pub actors: [usize; 2],
    /// Speed range in m/s.
    pub speed: [f64; 2],
    pub steps: usize,
    pub hz: f64,
    /// Lateral Gaussian noise per sample (meters).
    pub sigma: f64,
    pub weave_probability: f64,
    pub weave_amplitude: f64,
    /// Weaving period in seconds.
    pub weave_period: f64,
    pub ped_crossing_probability: f64,
    pub occlusion: OcclusionConfig,
    /// Occlusion for the test split; `occlusion` when absent.
    pub test_occlusion: Option<OcclusionConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_scenes: 8,
            test_scenes: 2,
            bev: BevSpec::default(),
            visual_resolution: None,
            n_p: crate::geometry::DEFAULT_NUM_POINTS,
            road_shapes: vec![RoadShape::Straight, RoadShape::Arc, RoadShape::Merge],
            lanes: [2, 3],
            lane_width: crate::targets::DEFAULT_LANE_WIDTH,
            actors: [2, 6],
            speed: [2.5, 6.0],
            steps: 20,
            hz: 2.0,
            sigma: 0.15,
            weave_probability: 0.3,
            weave_amplitude: 0.5,
            weave_period: 6.0,
            ped_crossing_probability: 0.5,
            occlusion: OcclusionConfig::default(),
            test_occlusion: None,
        }
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(what.to_string()))
    }
}

fn check_occlusion(o: &OcclusionConfig) -> Result<()> {
    check((0.0..=1.0).contains(&o.probability), "occlusion probability outside [0, 1]")?;
    check(o.intervals[0] >= 1 && o.intervals[0] <= o.intervals[1], "occlusion interval counts")?;
    check(
        0.0 <= o.fraction[0] && o.fraction[0] <= o.fraction[1] && o.fraction[1] <= 1.0,
        "occlusion fraction range",
    )
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.bev.validate()?;
        if let Some(r) = self.visual_resolution {
            BevSpec { resolution: r, ..self.bev }.validate()?;
        }
        check(self.n_p >= 2, "n_p must be at least 2")?;
        check(!self.road_shapes.is_empty(), "no road shapes")?;
        check(self.lanes[0] >= 1 && self.lanes[0] <= self.lanes[1], "lane count range")?;
        check(self.lane_width > 0.0, "lane width must be positive")?;
        check(self.actors[0] <= self.actors[1], "actor count range")?;
        check(self.speed[0] > 0.0 && self.speed[0] <= self.speed[1], "speed range")?;
        check(self.steps >= 1 && self.hz > 0.0, "steps and hz must be positive")?;
        check(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma must be non-negative")?;
        check((0.0..=1.0).contains(&self.weave_probability), "weave probability")?;
        check(self.weave_amplitude >= 0.0 && self.weave_period > 0.0, "weaving parameters")?;
        check(
            (0.0..=1.0).contains(&self.ped_crossing_probability),
            "ped crossing probability",
        )?;
        check_occlusion(&self.occlusion)?;
        if let Some(o) = &self.test_occlusion {
            check_occlusion(o)?;
        }
        Ok(())
    }

    pub fn visual_spec(&self) -> BevSpec {
        BevSpec {
            resolution: self.visual_resolution.unwrap_or(self.bev.resolution),
            ..self.bev
        }
    }
}

/// Road layout in a spine frame: arc length `s` along the spine (which passes
/// through the origin heading +y) and lateral offset `l`, positive to the
/// right. Lanes are numbered left to right.
#[derive(Debug, Clone, Copy)]
struct Road {
    shape: RoadShape,
    lanes: usize,
    width: f64,
    /// Lateral offset of the left boundary.
    left: f64,
    /// Signed radius for arcs: positive turns left.
    radius: f64,
    merge_start: f64,
    merge_length: f64,
}

/// Half-length of the sampled road; covers the BEV diagonal.
const ROAD_EXTENT: f64 = 60.0;
const ROAD_STEP: f64 = 1.0;

impl Road {
    fn point(&self, s: f64, l: f64) -> Point2 {
        match self.shape {
            RoadShape::Arc => {
                let r = self.radius.abs();
                let th = s / r;
                if self.radius > 0.0 {
                    Point2::new(-r + (r + l) * th.cos(), (r + l) * th.sin())
                } else {
                    Point2::new(r - (r - l) * th.cos(), (r - l) * th.sin())
                }
            }
            _ => Point2::new(l, s),
        }
    }

    fn merges(&self) -> bool {
        self.shape == RoadShape::Merge && self.lanes >= 2
    }

    /// 0 before the taper, 1 after it.
    fn taper(&self, s: f64) -> f64 {
        if !self.merges() {
            return 0.0;
        }
        ((s - self.merge_start) / self.merge_length).clamp(0.0, 1.0)
    }

    fn right_boundary(&self, s: f64) -> f64 {
        self.left + self.width * (self.lanes as f64 - self.taper(s))
    }

    fn lane_center(&self, lane: usize, s: f64) -> f64 {
        let base = self.left + self.width * (lane as f64 + 0.5);
        if self.merges() && lane == self.lanes - 1 {
            base - self.width * self.taper(s)
        } else {
            base
        }
    }

    fn sample(&self, s0: f64, s1: f64, lateral: impl Fn(f64) -> f64) -> Vec<Point2> {
        let n = ((s1 - s0) / ROAD_STEP).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| {
                let s = s0 + (s1 - s0) * k as f64 / n as f64;
                self.point(s, lateral(s))
            })
            .collect()
    }

    /// Raw dense polylines of every lane line, before clipping.
    fn lines(&self) -> Vec<(MapElementClass, Vec<Point2>)> {
        let (a, b) = (-ROAD_EXTENT, ROAD_EXTENT);
        let mut out = vec![(MapElementClass::Boundary, self.sample(a, b, |_| self.left))];
        for k in 1..self.lanes {
            let l = self.left + self.width * k as f64;
            let end = if self.merges() && k == self.lanes - 1 {
                self.merge_start
            } else {
                b
            };
            out.push((MapElementClass::Divider, self.sample(a, end, |_| l)));
        }
        out.push((
            MapElementClass::Boundary,
            self.sample(a, b, |s| self.right_boundary(s)),
        ));
        out
    }
}

fn pick_f64(rng: &mut CounterRng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.uniform(lo, hi)
    } else {
        lo
    }
}

/// Sorted, disjoint intervals covering `fraction * length` in total.
fn occlusion_intervals(rng: &mut CounterRng, length: f64, cfg: &OcclusionConfig) -> OcclusionMask {
    if !rng.bernoulli(cfg.probability) {
        return OcclusionMask::default();
    }
    let k = rng.range_inclusive(cfg.intervals[0], cfg.intervals[1]);
    let occluded = pick_f64(rng, cfg.fraction) * length;
    let free = length - occluded;
    let weights = |rng: &mut CounterRng, n: usize| {
        let w: Vec<f64> = (0..n).map(|_| 0.1 + rng.next_f64()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect::<Vec<_>>()
    };
    let occ = weights(rng, k);
    let gaps = weights(rng, k + 1);
    let mut s = 0.0;
    let mut intervals = Vec::with_capacity(k);
    for i in 0..k {
        s += gaps[i] * free;
        let end = (s + occ[i] * occluded).min(length);
        if end > s {
            intervals.push([s, end]);
        }
        s = end;
    }
    OcclusionMask { intervals }
}

/// Clips to the BEV and resamples; fragments under 1 m are dropped.
fn finish_element(
    class: MapElementClass,
    raw: &[Point2],
    spec: &BevSpec,
    n_p: usize,
) -> Vec<MapElement> {
    let kind = class.kind();
    let pieces = match kind {
        CurveKind::Open => clip_polyline(raw, spec),
        CurveKind::Closed => vec![clip_polygon(raw, spec)],
    };
    pieces
        .into_iter()
        .filter(|p| p.len() >= kind.min_points() && polyline_length(p, kind) >= MIN_FRAGMENT_LENGTH)
        .filter_map(|p| resample(&p, kind, n_p).ok())
        .map(|points| MapElement { class, points })
        .collect()
}

/// Per-class channels of GT geometry with occluded stretches left blank.
pub fn render_visual_bev(
    elements: &[MapElement],
    masks: &[OcclusionMask],
    spec: &BevSpec,
) -> FeatureGrid {
    let mut g = FeatureGrid::zeros(MapElementClass::ALL.len(), spec.height(), spec.width());
    for (e, m) in elements.iter().zip(masks) {
        let mut pts = e.points.points.clone();
        if e.points.kind == CurveKind::Closed {
            pts.push(pts[0]);
        }
        let length = polyline_length(&pts, CurveKind::Open);
        let mut visible = Vec::new();
        let mut s = 0.0;
        for &[a, b] in &m.intervals {
            if a > s {
                visible.push((s, a));
            }
            s = s.max(b);
        }
        if length > s {
            visible.push((s, length));
        }
        for (a, b) in visible {
            let piece = sub_polyline(&pts, a, b);
            let img = rasterize_one(&Trajectory::new("", piece), spec, RasterMode::Connected);
            for (r, c) in img.set_cells() {
                g.set(e.class.index(), r, c, 1.0);
            }
        }
    }
    g
}

fn generate_scene(cfg: &SynthConfig, index: usize, occ: &OcclusionConfig) -> Scene {
    let mut rng = CounterRng::new(cfg.seed, index as u64);
    let shape = cfg.road_shapes[rng.below(cfg.road_shapes.len() as u64) as usize];
    let mut lanes = rng.range_inclusive(cfg.lanes[0], cfg.lanes[1]);
    if shape == RoadShape::Merge {
        lanes = lanes.max(2);
    }
    let ego_lane = rng.below(lanes as u64) as f64;
    let radius = {
        let r = rng.uniform(60.0, 150.0);
        if rng.bernoulli(0.5) {
            r
        } else {
            -r
        }
    };
    let road = Road {
        shape,
        lanes,
        width: cfg.lane_width,
        left: -(ego_lane + 0.5) * cfg.lane_width,
        radius,
        merge_start: rng.uniform(-15.0, 5.0),
        merge_length: rng.uniform(15.0, 25.0),
    };

    let mut gt_elements = Vec::new();
    for (class, raw) in road.lines() {
        gt_elements.extend(finish_element(class, &raw, &cfg.bev, cfg.n_p));
    }
    if rng.bernoulli(cfg.ped_crossing_probability) {
        let s = rng.uniform(-15.0, 15.0);
        let depth = rng.uniform(3.0, 5.0);
        let corners = vec![
            road.point(s, road.left),
            road.point(s, road.right_boundary(s)),
            road.point(s + depth, road.right_boundary(s + depth)),
            road.point(s + depth, road.left),
        ];
        gt_elements.extend(finish_element(
            MapElementClass::PedCrossing,
            &corners,
            &cfg.bev,
            cfg.n_p,
        ));
    }
    let occlusion: Vec<OcclusionMask> = gt_elements
        .iter()
        .map(|e| {
            let length = polyline_length(&e.points.points, e.points.kind);
            occlusion_intervals(&mut rng, length, occ)
        })
        .collect();

    let n_actors = rng.range_inclusive(cfg.actors[0], cfg.actors[1]);
    let dt = 1.0 / cfg.hz;
    let mut trajectories = Vec::with_capacity(n_actors);
    for a in 0..n_actors {
        let lane = rng.below(lanes as u64) as usize;
        let speed = pick_f64(&mut rng, cfg.speed);
        let s_end = rng.uniform(-20.0, 25.0);
        let weaves = rng.bernoulli(cfg.weave_probability);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let points = (0..cfg.steps)
            .map(|t| {
                let back = (cfg.steps - 1 - t) as f64 * dt;
                let s = s_end - speed * back;
                let mut l = road.lane_center(lane, s);
                if weaves {
                    let time = t as f64 * dt;
                    l += cfg.weave_amplitude
                        * (std::f64::consts::TAU * time / cfg.weave_period + phase).sin();
                }
                if cfg.sigma > 0.0 {
                    l += cfg.sigma * rng.normal();
                }
                road.point(s, l)
            })
            .collect();
        trajectories.push(Trajectory::new(format!("actor_{a}"), points));
    }

    let visual_bev = Some(render_visual_bev(&gt_elements, &occlusion, &cfg.visual_spec()));
    Scene {
        scene_id: format!("scene_{index:04}"),
        bev: cfg.bev,
        trajectories,
        gt_elements,
        occlusion,
        visual_bev,
        rng: Some(SceneRng {
            seed: cfg.seed,
            stream: index as u64,
        }),
    }
}

/// Generated scenes with their split; scene `i` draws from stream `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: Option<SynthConfig>,
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl Corpus {
    pub fn all(&self) -> impl Iterator<Item = &Scene> {
        self.train.iter().chain(&self.test)
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let test_occ = cfg.test_occlusion.unwrap_or(cfg.occlusion);
    let train = (0..cfg.train_scenes)
        .map(|i| generate_scene(cfg, i, &cfg.occlusion))
        .collect();
    let test = (cfg.train_scenes..cfg.train_scenes + cfg.test_scenes)
        .map(|i| generate_scene(cfg, i, &test_occ))
        .collect();
    Ok(Corpus {
        config: Some(cfg.clone()),
        train,
        test,
    })
}

// ---------------------------------------------------------------------------
// corpus directories: manifest.json plus scenes/<scene_id>.json

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn manifest_bytes(c: &Corpus) -> Result<Vec<u8>> {
    let ids = |v: &[Scene]| Value::Array(v.iter().map(|s| Value::String(s.scene_id.clone())).collect());
    let mut m = Obj::new();
    m.insert("format_version".into(), FORMAT_VERSION.into());
    m.insert("train".into(), ids(&c.train));
    m.insert("test".into(), ids(&c.test));
    if let Some(cfg) = &c.config {
        m.insert("synth_config".into(), serde_json::to_value(cfg)?);
    }
    Ok(to_canonical_json(&Value::Object(m)).into_bytes())
}

pub fn write_corpus(dir: &Path, c: &Corpus) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in c.all() {
        if !seen.insert(s.scene_id.as_str()) {
            return Err(Error::Invariant {
                path: s.scene_id.clone(),
                message: "duplicate scene id in corpus".into(),
            });
        }
        write_file(&dir.join("scenes").join(format!("{}.json", s.scene_id)), &save_scene(s)?)?;
    }
    write_file(&dir.join("manifest.json"), &manifest_bytes(c)?)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join("manifest.json");
    let v = parse_json(&read_file(&mpath)?)?;
    let o = as_obj(&v, "")?;
    reject_unknown(o, &["format_version", "train", "test", "synth_config"], "")?;
    read_version(o, "")?;
    let config = match o.get("synth_config") {
        Some(c) => Some(
            serde_json::from_value(c.clone()).map_err(|e| schema("synth_config", e.to_string()))?,
        ),
        None => None,
    };
    let load = |key: &str| -> Result<Vec<Scene>> {
        as_arr(field(o, key, "")?, key)?
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let id = as_str(id, &format!("{key}[{i}]"))?;
                let p = dir.join("scenes").join(format!("{id}.json"));
                let s = load_scene(&read_file(&p)?).map_err(|e| io_err(&p, e))?;
                if s.scene_id != id {
                    return Err(io_err(&p, "scene_id differs from manifest entry"));
                }
                Ok(s)
            })
            .collect()
    };
    Ok(Corpus {
        config,
        train: load("train")?,
        test: load("test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::chamfer_distance;

    fn tiny_scene() -> Scene {
        let line = PointSet::open(vec![Point2::new(0.0, -5.0), Point2::new(0.0, 5.0)]);
        Scene {
            scene_id: "s0".into(),
            bev: BevSpec::default(),
            trajectories: vec![Trajectory::new(
                "a",
                vec![Point2::new(1.0, 0.0), Point2::new(1.0, 0.1)],
            )],
            gt_elements: vec![MapElement {
                class: MapElementClass::Divider,
                points: line,
            }],
            occlusion: vec![OcclusionMask {
                intervals: vec![[1.0, 2.5]],
            }],
            visual_bev: Some(FeatureGrid {
                channels: 1,
                height: 1,
                width: 2,
                data: vec![0.1, -3.0],
            }),
            rng: Some(SceneRng { seed: 3, stream: 4 }),
        }
    }

    #[test]
    fn scene_round_trip() {
        let s = tiny_scene();
        let bytes = save_scene(&s).unwrap();
        let back = load_scene(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(save_scene(&back).unwrap(), bytes);
    }

    #[test]
    fn scene_errors() {
        let mut v = scene_to_value(&tiny_scene());
        v.as_object_mut().unwrap().remove("trajectories");
        let err = scene_from_value(&v).unwrap_err();
        assert_eq!(err.to_string(), "missing field: trajectories");

        let mut s = tiny_scene();
        s.trajectories[0].points[1].x = f64::NAN;
        assert!(matches!(save_scene(&s), Err(Error::Invariant { .. })));

        let mut v = scene_to_value(&tiny_scene());
        v["gt_elements"][0]["class"] = Value::String("lane".into());
        let err = scene_from_value(&v).unwrap_err();
        assert!(err.to_string().starts_with("gt_elements[0].class"), "{err}");

        let mut v = scene_to_value(&tiny_scene());
        v["occlusion"][0]["intervals"][0][1] = num(20.0);
        assert!(matches!(scene_from_value(&v), Err(Error::Invariant { .. })));
    }

    #[test]
    fn raster_format() {
        let spec = BevSpec::new([0.0, 2.0], [0.0, 2.0], 1.0).unwrap();
        let img = TrajectoryImage::zeros(spec);
        let text = save_raster(&img);
        assert_eq!(text, "MATM-RASTER v1\n2 2\n1\n0 2\n0 2\n0 0\n0 0\n");
        assert_eq!(load_raster(&text).unwrap(), img);
        let truncated = "MATM-RASTER v1\n2 2\n1\n0 2\n0 2\n0 0\n";
        let err = load_raster(truncated).unwrap_err();
        assert!(err.to_string().starts_with("row count mismatch"));
        assert!(load_raster("P1\n").is_err());
    }

    #[test]
    fn predictions_round_trip() {
        let p = PredictionSet {
            scene_id: "s".into(),
            elements: vec![ScoredElement {
                class: MapElementClass::PedCrossing,
                score: 0.75,
                points: PointSet::closed(vec![
                    Point2::new(0.0, 0.0),
                    Point2::new(1.0, 0.0),
                    Point2::new(0.0, 1.0),
                ]),
            }],
        };
        let b = save_predictions(&p).unwrap();
        assert_eq!(load_predictions(&b).unwrap(), p);
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let cfg = SynthConfig {
            train_scenes: 3,
            test_scenes: 2,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        for s in a.all() {
            let bytes = save_scene(s).unwrap();
            assert_eq!(&load_scene(&bytes).unwrap(), s);
            assert!(s.gt_elements.iter().all(|e| e.points.len() == cfg.n_p));
        }
    }

    #[test]
    fn noiseless_trajectories_lie_on_centerlines() {
        let cfg = SynthConfig {
            seed: 5,
            train_scenes: 4,
            test_scenes: 0,
            sigma: 0.0,
            weave_probability: 0.0,
            road_shapes: vec![RoadShape::Straight],
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        for s in &c.train {
            // lane centers sit midway between consecutive lane lines
            let mut xs: Vec<f64> = s
                .gt_elements
                .iter()
                .filter(|e| e.class != MapElementClass::PedCrossing)
                .map(|e| e.points.points[0].x)
                .collect();
            xs.sort_by(f64::total_cmp);
            for t in &s.trajectories {
                let x = t.points[0].x;
                assert!(t.points.iter().all(|p| p.x == x));
                let on_center = xs
                    .windows(2)
                    .any(|w| (x - 0.5 * (w[0] + w[1])).abs() < 1e-12);
                assert!(on_center, "actor at x={x} with lines {xs:?}");
                let center: Vec<Point2> = t.points.iter().map(|p| Point2::new(x, p.y)).collect();
                assert_eq!(chamfer_distance(&t.points, &center).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn occlusion_intervals_are_valid() {
        let mut rng = CounterRng::new(1, 1);
        let cfg = OcclusionConfig {
            probability: 1.0,
            intervals: [1, 3],
            fraction: [0.3, 0.7],
        };
        for _ in 0..200 {
            let m = occlusion_intervals(&mut rng, 40.0, &cfg);
            m.validate(40.0).unwrap();
            let f = m.covered() / 40.0;
            assert!((0.3 - 1e-9..=0.7 + 1e-9).contains(&f));
        }
    }
}
