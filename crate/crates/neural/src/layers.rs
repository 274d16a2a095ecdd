//! Attention blocks, query composition, convolution and decoding heads.
//!
//! Every layer has a graph form (building differentiable nodes on a
//! [`Graph`]) and, where useful on its own, an eager form over plain
//! tensors that builds and discards a throwaway graph.

use std::collections::BTreeMap;

use trajmap_core::geometry::{CurveKind, PointSet, Point2};
use trajmap_core::losses::PredictedElement;
use trajmap_core::raster::{BevSpec, TrajectoryImage};
use trajmap_core::scene::FeatureGrid;

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::params::is_frozen;
use crate::tensor::Tensor;

/// Grid of feature vectors; `values` rows are cells `r * width + c`,
/// row 0 at the top (largest y) of the BEV.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Tensor,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Tensor) -> Result<Self> {
        if height == 0 || width == 0 || values.rows != height * width || values.cols == 0 {
            return Err(shape_err(format!(
                "grid {height}x{width} with values {:?}",
                values.shape()
            )));
        }
        if !values.is_finite() {
            return Err(shape_err("grid values must be finite"));
        }
        Ok(Self { height, width, values })
    }

    pub fn channels(&self) -> usize {
        self.values.cols
    }

    /// Converts a `[C, H, W]` grid to cell-major layout.
    pub fn from_feature_grid(f: &FeatureGrid) -> Result<Self> {
        let (c, h, w) = (f.channels, f.height, f.width);
        let mut t = Tensor::zeros(h * w, c);
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    t.set(r * w + col, ch, f.at(ch, r, col));
                }
            }
        }
        Self::new(h, w, t)
    }

    pub fn from_image(img: &TrajectoryImage) -> Result<Self> {
        let (h, w) = (img.spec.height(), img.spec.width());
        Self::new(h, w, Tensor::new(h * w, 1, img.to_f64()))
    }
}

/// Query embeddings with their normalized reference points.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub embeddings: Tensor,
    /// `n x 2`, columns `(u, v)` in `[0, 1]`.
    pub reference_points: Tensor,
}

impl QuerySet {
    pub fn new(embeddings: Tensor, reference_points: Tensor) -> Result<Self> {
        if reference_points.shape() != (embeddings.rows, 2) {
            return Err(shape_err("one 2-D reference point per query"));
        }
        if !reference_points.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(shape_err("reference points must lie in the unit square"));
        }
        Ok(Self { embeddings, reference_points })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows == 0
    }
}

/// Lazily turns named tensors into graph leaves, each at most once.
pub struct Binder<'a> {
    tensors: &'a BTreeMap<String, Tensor>,
    vars: BTreeMap<String, Var>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    /// Non-frozen tensors become trainable leaves.
    pub fn trainable(tensors: &'a BTreeMap<String, Tensor>) -> Self {
        Self { tensors, vars: BTreeMap::new(), trainable: true }
    }

    /// Every tensor becomes a constant.
    pub fn frozen(tensors: &'a BTreeMap<String, Tensor>) -> Self {
        Self { tensors, vars: BTreeMap::new(), trainable: false }
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?
            .clone();
        let v = if self.trainable && !is_frozen(name) { g.param(t) } else { g.constant(t) };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn shape(&self, name: &str) -> Result<(usize, usize)> {
        self.tensors
            .get(name)
            .map(Tensor::shape)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Bound leaves by name.
    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }
}

fn expect_shape(b: &Binder<'_>, name: &str, want: (usize, usize)) -> Result<()> {
    let got = b.shape(name)?;
    if got != want {
        return Err(shape_err(format!("{name}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

/// `x * W (+ b)`.
pub fn linear(g: &mut Graph, b: &mut Binder<'_>, prefix: &str, x: Var, bias: bool) -> Result<Var> {
    let wn = format!("{prefix}.weight");
    let (fan_in, fan_out) = b.shape(&wn)?;
    if g.shape(x).1 != fan_in {
        return Err(shape_err(format!("{wn}: input width {} vs {fan_in}", g.shape(x).1)));
    }
    let w = b.var(g, &wn)?;
    let y = g.matmul(x, w);
    if !bias {
        return Ok(y);
    }
    let bn = format!("{prefix}.bias");
    expect_shape(b, &bn, (1, fan_out))?;
    let bv = b.var(g, &bn)?;
    Ok(g.add_row(y, bv))
}

/// Embedding `(i, j)` (row `i * n_p + j`) is `instance_i + point_j`.
pub fn compose_hierarchical_queries(g: &mut Graph, instance: Var, point: Var) -> Result<Var> {
    let ((n, c), (np, c2)) = (g.shape(instance), g.shape(point));
    if c != c2 {
        return Err(shape_err(format!("instance channels {c} vs point channels {c2}")));
    }
    let rep_i = Tensor::new(
        n * np,
        n,
        (0..n * np).flat_map(|r| (0..n).map(move |i| f64::from(u8::from(r / np == i)))).collect(),
    );
    let rep_j = Tensor::new(
        n * np,
        np,
        (0..n * np).flat_map(|r| (0..np).map(move |j| f64::from(u8::from(r % np == j)))).collect(),
    );
    let (ri, rj) = (g.constant(rep_i), g.constant(rep_j));
    let a = g.matmul(ri, instance);
    let b = g.matmul(rj, point);
    Ok(g.add(a, b))
}

/// Eager form of [`compose_hierarchical_queries`].
pub fn compose_queries(instance: &Tensor, point: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (i, p) = (g.constant(instance.clone()), g.constant(point.clone()));
    let q = compose_hierarchical_queries(&mut g, i, p)?;
    Ok(g.value(q).clone())
}

/// Grid deformable attention.
///
/// Per query and head, `samples` offsets (in grid cells) and attention
/// logits are linear in the query; values (`grid * W_v + b_v`, split by
/// head) are bilinearly sampled at `reference + offset`, combined with
/// per-head softmax weights, concatenated over heads, projected by
/// `W_out` and added to the query.
#[allow(clippy::too_many_arguments)]
pub fn deform_attn_grid(
    g: &mut Graph,
    b: &mut Binder<'_>,
    prefix: &str,
    q: Var,
    refs: Var,
    grid: Var,
    (gh, gw): (usize, usize),
    heads: usize,
    samples: usize,
) -> Result<Var> {
    let (n, c) = g.shape(q);
    let (cells, c_in) = g.shape(grid);
    if samples == 0 || heads == 0 || c % heads != 0 {
        return Err(shape_err("heads must divide channels and samples must be positive"));
    }
    if cells != gh * gw || g.shape(refs) != (n, 2) {
        return Err(shape_err("grid cells or reference points inconsistent"));
    }
    let (hk, dh) = (heads * samples, c / heads);
    expect_shape(b, &format!("{prefix}.offset.weight"), (c, 2 * hk))?;
    expect_shape(b, &format!("{prefix}.attn.weight"), (c, hk))?;
    expect_shape(b, &format!("{prefix}.value.weight"), (c_in, c))?;
    expect_shape(b, &format!("{prefix}.output.weight"), (c, c))?;

    let value = linear(g, b, &format!("{prefix}.value"), grid, true)?;
    let off = linear(g, b, &format!("{prefix}.offset"), q, true)?;
    let scale: Vec<f64> = (0..2 * hk).map(|i| if i % 2 == 0 { 1.0 / gw as f64 } else { 1.0 / gh as f64 }).collect();
    let off = g.scale_cols(off, scale);
    let logits = linear(g, b, &format!("{prefix}.attn"), q, true)?;

    let mut head_out = Vec::with_capacity(heads);
    for h in 0..heads {
        let vh = g.slice_cols(value, h * dh, dh);
        let lh = g.slice_cols(logits, h * samples, samples);
        let wts = g.softmax_rows(lh);
        let mut acc: Option<Var> = None;
        for k in 0..samples {
            let o = g.slice_cols(off, 2 * (h * samples + k), 2);
            let loc = g.add(refs, o);
            let s = g.bilinear_sample(vh, gh, gw, loc);
            let wk = g.slice_cols(wts, k, 1);
            let term = g.mul_col(s, wk);
            acc = Some(match acc {
                Some(a) => g.add(a, term),
                None => term,
            });
        }
        head_out.push(acc.expect("samples >= 1"));
    }
    let cat = if heads == 1 { head_out[0] } else { g.concat_cols(&head_out) };
    let out = linear(g, b, &format!("{prefix}.output"), cat, false)?;
    Ok(g.add(q, out))
}

/// Multi-head scaled dot-product cross-attention with a residual:
/// `q + concat_h(softmax(Q_h K_h^T / sqrt(d)) V_h) W_out`.
pub fn cross_attn_set(
    g: &mut Graph,
    b: &mut Binder<'_>,
    prefix: &str,
    q: Var,
    kv: Var,
    heads: usize,
) -> Result<Var> {
    let ((_, c), (m, c_kv)) = (g.shape(q), g.shape(kv));
    if heads == 0 || c % heads != 0 || m == 0 {
        return Err(shape_err("heads must divide channels and kv must be non-empty"));
    }
    expect_shape(b, &format!("{prefix}.query.weight"), (c, c))?;
    expect_shape(b, &format!("{prefix}.key.weight"), (c_kv, c))?;
    expect_shape(b, &format!("{prefix}.value.weight"), (c_kv, c))?;
    expect_shape(b, &format!("{prefix}.output.weight"), (c, c))?;
    let dh = c / heads;
    let qp = linear(g, b, &format!("{prefix}.query"), q, false)?;
    let kp = linear(g, b, &format!("{prefix}.key"), kv, false)?;
    let vp = linear(g, b, &format!("{prefix}.value"), kv, true)?;
    let mut head_out = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            g.slice_cols(qp, h * dh, dh),
            g.slice_cols(kp, h * dh, dh),
            g.slice_cols(vp, h * dh, dh),
        );
        let s = g.matmul_nt(qh, kh);
        let s = g.scale(s, 1.0 / (dh as f64).sqrt());
        let a = g.softmax_rows(s);
        head_out.push(g.matmul(a, vh));
    }
    let cat = if heads == 1 { head_out[0] } else { g.concat_cols(&head_out) };
    let out = linear(g, b, &format!("{prefix}.output"), cat, false)?;
    Ok(g.add(q, out))
}

/// Decoded head outputs: class probabilities (`n x (classes + 1)`,
/// background last) and point coordinates in meters (`n x 2 n_p`,
/// interleaved x, y).
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub probs: Var,
    pub points: Var,
}

/// Two-head FFN on a shared ReLU hidden layer. Points pass through a
/// sigmoid and map to the BEV box: `x = x_min + s (x_max - x_min)`, same for
/// y. `point_prior` (constant logits, `n x 2 n_p`) is added before the
/// sigmoid when given.
#[allow(clippy::too_many_arguments)]
pub fn ffn_decode(
    g: &mut Graph,
    b: &mut Binder<'_>,
    prefix: &str,
    z: Var,
    n_classes: usize,
    n_p: usize,
    bev: &BevSpec,
    point_prior: Option<Var>,
) -> Result<Decoded> {
    let (n, c) = g.shape(z);
    expect_shape(b, &format!("{prefix}.hidden.weight"), (c, c))?;
    expect_shape(b, &format!("{prefix}.class.weight"), (c, n_classes + 1))?;
    expect_shape(b, &format!("{prefix}.point.weight"), (c, 2 * n_p))?;
    let h = linear(g, b, &format!("{prefix}.hidden"), z, true)?;
    let h = g.relu(h);
    let logits = linear(g, b, &format!("{prefix}.class"), h, true)?;
    let probs = g.softmax_rows(logits);
    let mut raw = linear(g, b, &format!("{prefix}.point"), h, true)?;
    if let Some(p) = point_prior {
        if g.shape(p) != (n, 2 * n_p) {
            return Err(shape_err("point prior shape"));
        }
        raw = g.add(raw, p);
    }
    let s = g.sigmoid(raw);
    let spans = (0..2 * n_p).map(|i| if i % 2 == 0 { bev.x_span() } else { bev.y_span() }).collect();
    let scaled = g.scale_cols(s, spans);
    let mins = Tensor::new(
        1,
        2 * n_p,
        (0..2 * n_p).map(|i| if i % 2 == 0 { bev.x_range[0] } else { bev.y_range[0] }).collect(),
    );
    let mins = g.constant(mins);
    let points = g.add_row(scaled, mins);
    Ok(Decoded { probs, points })
}

/// Point-head logits placing every point of row `i` at `refs[i]` (unit
/// coordinates) before training; `refs` has one row per output row and
/// either one point or `n_p` points per row.
pub fn point_prior(refs: &Tensor, n_p: usize) -> Tensor {
    let logit = |p: f64| {
        let p = p.clamp(1e-3, 1.0 - 1e-3);
        (p / (1.0 - p)).ln()
    };
    let per_row = refs.cols / 2;
    let mut out = Tensor::zeros(refs.rows, 2 * n_p);
    for r in 0..refs.rows {
        for k in 0..n_p {
            let src = if per_row == 1 { 0 } else { k };
            // unit v runs down from y_max; decoded y runs up from y_min
            out.set(r, 2 * k, logit(refs.at(r, 2 * src)));
            out.set(r, 2 * k + 1, logit(1.0 - refs.at(r, 2 * src + 1)));
        }
    }
    out
}

/// Converts decoded head outputs into predicted elements.
pub fn to_predictions(probs: &Tensor, points: &Tensor, kinds: &[CurveKind]) -> Vec<PredictedElement> {
    (0..probs.rows)
        .map(|i| {
            let row = points.row(i);
            let pts = row.chunks(2).map(|c| Point2::new(c[0], c[1])).collect();
            PredictedElement::new(probs.row(i).to_vec(), PointSet::new(pts, kinds[i % kinds.len()]))
        })
        .collect()
}

/// 3x3, stride 2, padding 1 convolution with ReLU.
pub fn conv_relu(
    g: &mut Graph,
    b: &mut Binder<'_>,
    prefix: &str,
    x: Var,
    (h, w): (usize, usize),
) -> Result<(Var, (usize, usize))> {
    let (cols, ho, wo) = g.im2col(x, h, w, 3, 2, 1);
    let y = linear(g, b, prefix, cols, true)?;
    Ok((g.relu(y), (ho, wo)))
}
