//! Reverse-mode automatic differentiation on a tape of dense matrices.
//!
//! Nodes are appended in evaluation order; `backward` walks the tape from
//! the loss to the leaves. Nodes that depend on no trainable leaf record no
//! backward closure and receive no gradient.

use trajmap_core::geometry::Point2;
use trajmap_core::losses::{FocalParams, PROB_EPS};

use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient slots handed to backward closures.
pub struct Grads<'a> {
    needs: &'a [bool],
    shapes: &'a [(usize, usize)],
    slots: &'a mut [Option<Tensor>],
}

impl Grads<'_> {
    /// Mutable gradient of `v`, or `None` when `v` needs no gradient.
    pub fn get(&mut self, v: Var) -> Option<&mut Tensor> {
        if !self.needs[v.0] {
            return None;
        }
        let (r, c) = self.shapes[v.0];
        Some(self.slots[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }
}

type BackFn = Box<dyn Fn(&Tensor, &[Tensor], &mut Grads<'_>)>;

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    shapes: Vec<(usize, usize)>,
    needs: Vec<bool>,
    backs: Vec<Option<BackFn>>,
    signature: u64,
}

/// Gradients of a scalar with respect to every node that needs one.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots[v.0].as_ref()
    }
}

/// Bilinear corner weights for one normalized location on an `h x w` grid
/// sampled at cell centers. Yields `(cell, weight, dweight/dpx, dweight/dpy)`
/// for in-range corners only (zero padding).
fn bilinear_corners(u: f64, v: f64, h: usize, w: usize) -> impl Iterator<Item = (usize, f64, f64, f64)> {
    let px = u * w as f64 - 0.5;
    let py = v * h as f64 - 0.5;
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    (0..4).filter_map(move |k| {
        let (dx, dy) = (k & 1, k >> 1);
        let x = x0 + dx as f64;
        let y = y0 + dy as f64;
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            return None;
        }
        let (wx, dwx) = if dx == 0 { (1.0 - fx, -1.0) } else { (fx, 1.0) };
        let (wy, dwy) = if dy == 0 { (1.0 - fy, -1.0) } else { (fy, 1.0) };
        let cell = y as usize * w + x as usize;
        Some((cell, wx * wy, dwx * wy, wx * dwy))
    })
}

/// One differentiable focal-loss term: `weight * focal(probs[row, col])`.
#[derive(Debug, Clone, Copy)]
pub struct FocalTerm {
    pub row: usize,
    pub col: usize,
    pub positive: bool,
    pub weight: f64,
}

/// `weight * sum_k |points[row, k] - target[k]|`.
#[derive(Debug, Clone)]
pub struct L1Term {
    pub row: usize,
    pub target: Vec<f64>,
    pub weight: f64,
}

/// `weight * sum over edges of (1 - cos(pred edge, target edge))`.
#[derive(Debug, Clone)]
pub struct DirectionTerm {
    pub row: usize,
    pub target_edges: Vec<Point2>,
    pub closed: bool,
    pub weight: f64,
}

fn focal_value_and_slope(p: f64, positive: bool, f: FocalParams) -> (f64, f64) {
    let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let inside = clamped == p;
    let (a, g) = (f.alpha, f.gamma);
    let (value, slope) = if positive {
        let q = 1.0 - clamped;
        let v = -a * q.powf(g) * clamped.ln();
        let d = a * g * q.powf(g - 1.0) * clamped.ln() - a * q.powf(g) / clamped;
        (v, d)
    } else {
        let q = 1.0 - clamped;
        let v = -(1.0 - a) * clamped.powf(g) * q.ln();
        let d = -(1.0 - a) * (g * clamped.powf(g - 1.0) * q.ln() - clamped.powf(g) / q);
        (v, d)
    };
    (value, if inside { slope } else { 0.0 })
}

fn edge_vectors(points: &[f64], closed: bool) -> Vec<Point2> {
    let n = points.len() / 2;
    let p = |i: usize| Point2::new(points[2 * i], points[2 * i + 1]);
    let mut e: Vec<Point2> = (0..n.saturating_sub(1)).map(|i| p(i + 1) - p(i)).collect();
    if closed && n > 1 {
        e.push(p(0) - p(n - 1));
    }
    e
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Hash of every discrete branch taken so far (ReLU signs, bilinear
    /// cells, absolute-value signs, probability clamps). Two evaluations
    /// with equal signatures lie in the same smooth piece.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    fn note(&mut self, v: u64) {
        self.signature = trajmap_core::rng::mix(self.signature ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, parents: &[Var], back: BackFn) -> Var {
        let needs = parents.iter().any(|p| self.needs[p.0]);
        self.shapes.push(value.shape());
        self.values.push(value);
        self.needs.push(needs);
        self.backs.push(needs.then_some(back));
        Var(self.values.len() - 1)
    }

    fn leaf(&mut self, t: Tensor, needs: bool) -> Var {
        self.shapes.push(t.shape());
        self.values.push(t);
        self.needs.push(needs);
        self.backs.push(None);
        Var(self.values.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.shapes[v.0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    /// Gradients of the scalar `loss` with respect to every trainable leaf
    /// (and intermediate node) it depends on.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shapes[loss.0], (1, 1), "backward needs a scalar");
        let mut slots: Vec<Option<Tensor>> = vec![None; self.values.len()];
        if !self.needs[loss.0] {
            return Gradients { slots };
        }
        slots[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(back) = &self.backs[i] else { continue };
            let Some(g) = slots[i].take() else { continue };
            let mut grads = Grads {
                needs: &self.needs,
                shapes: &self.shapes,
                slots: &mut slots,
            };
            back(&g, &self.values, &mut grads);
        }
        Gradients { slots }
    }

    // -- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = Tensor::zeros(n, m);
        gemm_acc(&self.values[a.0].data, &self.values[b.0].data, &mut out.data, n, k, m);
        self.push(
            out,
            &[a, b],
            Box::new(move |g, vals, gr| {
                if let Some(ga) = gr.get(a) {
                    gemm_nt_acc(&g.data, &vals[b.0].data, &mut ga.data, n, m, k);
                }
                if let Some(gb) = gr.get(b) {
                    gemm_tn_acc(&vals[a.0].data, &g.data, &mut gb.data, n, k, m);
                }
            }),
        )
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let ((n, k), (m, k2)) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul_nt inner dims");
        let mut out = Tensor::zeros(n, m);
        gemm_nt_acc(&self.values[a.0].data, &self.values[b.0].data, &mut out.data, n, k, m);
        self.push(
            out,
            &[a, b],
            Box::new(move |g, vals, gr| {
                if let Some(ga) = gr.get(a) {
                    gemm_acc(&g.data, &vals[b.0].data, &mut ga.data, n, m, k);
                }
                if let Some(gb) = gr.get(b) {
                    gemm_tn_acc(&g.data, &vals[a.0].data, &mut gb.data, n, m, k);
                }
            }),
        )
    }

    // -- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let mut out = self.values[a.0].clone();
        out.add_assign(&self.values[b.0]);
        self.push(
            out,
            &[a, b],
            Box::new(move |g, _, gr| {
                for v in [a, b] {
                    if let Some(gv) = gr.get(v) {
                        gv.add_assign(g);
                    }
                }
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.rows, va.cols, data);
        self.push(
            out,
            &[a, b],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = gr.get(b) {
                    for (x, y) in gb.data.iter_mut().zip(&g.data) {
                        *x -= y;
                    }
                }
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.rows, va.cols, data);
        self.push(
            out,
            &[a, b],
            Box::new(move |g, vals, gr| {
                if let Some(ga) = gr.get(a) {
                    for ((x, gg), y) in ga.data.iter_mut().zip(&g.data).zip(&vals[b.0].data) {
                        *x += gg * y;
                    }
                }
                if let Some(gb) = gr.get(b) {
                    for ((x, gg), y) in gb.data.iter_mut().zip(&g.data).zip(&vals[a.0].data) {
                        *x += gg * y;
                    }
                }
            }),
        )
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let ((n, m), bs) = (self.shape(a), self.shape(b));
        assert_eq!(bs, (1, m), "add_row bias shape");
        let mut out = self.values[a.0].clone();
        let bias = &self.values[b.0].data;
        for i in 0..n {
            for (o, x) in out.data[i * m..(i + 1) * m].iter_mut().zip(bias) {
                *o += x;
            }
        }
        self.push(
            out,
            &[a, b],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = gr.get(b) {
                    for i in 0..n {
                        for (x, y) in gb.data.iter_mut().zip(&g.data[i * m..(i + 1) * m]) {
                            *x += y;
                        }
                    }
                }
            }),
        )
    }

    /// Scales row `i` of `a` by `c[i]` (`c` is `n x 1`).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let ((n, m), cs) = (self.shape(a), self.shape(c));
        assert_eq!(cs, (n, 1), "mul_col shape");
        let mut out = self.values[a.0].clone();
        let cv = &self.values[c.0].data;
        for i in 0..n {
            for o in &mut out.data[i * m..(i + 1) * m] {
                *o *= cv[i];
            }
        }
        self.push(
            out,
            &[a, c],
            Box::new(move |g, vals, gr| {
                let (va, vc) = (&vals[a.0].data, &vals[c.0].data);
                if let Some(ga) = gr.get(a) {
                    for i in 0..n {
                        for j in 0..m {
                            ga.data[i * m + j] += g.data[i * m + j] * vc[i];
                        }
                    }
                }
                if let Some(gc) = gr.get(c) {
                    for i in 0..n {
                        gc.data[i] += (0..m).map(|j| g.data[i * m + j] * va[i * m + j]).sum::<f64>();
                    }
                }
            }),
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let va = &self.values[a.0];
        let out = Tensor::new(va.rows, va.cols, va.data.iter().map(|x| x * k).collect());
        self.push(
            out,
            &[a],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    for (x, y) in ga.data.iter_mut().zip(&g.data) {
                        *x += k * y;
                    }
                }
            }),
        )
    }

    /// Multiplies column `j` by `factors[j]`.
    pub fn scale_cols(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let (n, m) = self.shape(a);
        assert_eq!(factors.len(), m, "scale_cols length");
        let mut out = self.values[a.0].clone();
        for i in 0..n {
            for j in 0..m {
                out.data[i * m + j] *= factors[j];
            }
        }
        self.push(
            out,
            &[a],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    for i in 0..n {
                        for j in 0..m {
                            ga.data[i * m + j] += g.data[i * m + j] * factors[j];
                        }
                    }
                }
            }),
        )
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let va = &self.values[a.0];
        let out = Tensor::new(va.rows, va.cols, va.data.iter().map(|&x| f(x)).collect());
        let me = Var(self.values.len());
        self.push(
            out,
            &[a],
            Box::new(move |g, vals, gr| {
                let (x, y) = (&vals[a.0].data, &vals[me.0].data);
                if let Some(ga) = gr.get(a) {
                    for i in 0..ga.data.len() {
                        ga.data[i] += g.data[i] * df(x[i], y[i]);
                    }
                }
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let signs: Vec<u64> = self.values[a.0].data.iter().map(|&x| u64::from(x > 0.0)).collect();
        for chunk in signs.chunks(64) {
            self.note(chunk.iter().fold(1, |acc, &b| (acc << 1) | b));
        }
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let va = &self.values[a.0];
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let row = va.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..m {
                out.data[i * m + j] = e[j] / s;
            }
        }
        let me = Var(self.values.len());
        self.push(
            out,
            &[a],
            Box::new(move |g, vals, gr| {
                let y = &vals[me.0].data;
                if let Some(ga) = gr.get(a) {
                    for i in 0..n {
                        let r = i * m..(i + 1) * m;
                        let dot: f64 = g.data[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| a * b).sum();
                        for j in r {
                            ga.data[j] += y[j] * (g.data[j] - dot);
                        }
                    }
                }
            }),
        )
    }

    // -- reductions and reshaping -------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.values[a.0].data.iter().sum();
        self.push(
            Tensor::scalar(s),
            &[a],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    for x in &mut ga.data {
                        *x += g.data[0];
                    }
                }
            }),
        )
    }

    /// Sums consecutive groups of `k` rows: `n x m -> (n / k) x m`.
    pub fn sum_row_groups(&mut self, a: Var, k: usize) -> Var {
        self.pool_rows(a, k, 1.0)
    }

    /// Averages consecutive groups of `k` rows.
    pub fn mean_row_groups(&mut self, a: Var, k: usize) -> Var {
        self.pool_rows(a, k, 1.0 / k as f64)
    }

    fn pool_rows(&mut self, a: Var, k: usize, factor: f64) -> Var {
        let (n, m) = self.shape(a);
        assert!(k > 0 && n % k == 0, "row groups must divide the row count");
        let groups = n / k;
        let va = &self.values[a.0];
        let mut out = Tensor::zeros(groups, m);
        for i in 0..n {
            for j in 0..m {
                out.data[(i / k) * m + j] += va.data[i * m + j];
            }
        }
        for x in &mut out.data {
            *x *= factor;
        }
        self.push(
            out,
            &[a],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    for i in 0..n {
                        for j in 0..m {
                            ga.data[i * m + j] += factor * g.data[(i / k) * m + j];
                        }
                    }
                }
            }),
        )
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let va = &self.values[a.0];
        assert_eq!(va.len(), rows * cols, "reshape size");
        let out = Tensor::new(rows, cols, va.data.clone());
        self.push(
            out,
            &[a],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    for (x, y) in ga.data.iter_mut().zip(&g.data) {
                        *x += y;
                    }
                }
            }),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.shape(a);
        assert!(start + len <= m, "slice_cols range");
        let va = &self.values[a.0];
        let mut out = Tensor::zeros(n, len);
        for i in 0..n {
            out.data[i * len..(i + 1) * len].copy_from_slice(&va.data[i * m + start..i * m + start + len]);
        }
        self.push(
            out,
            &[a],
            Box::new(move |g, _, gr| {
                if let Some(ga) = gr.get(a) {
                    for i in 0..n {
                        for j in 0..len {
                            ga.data[i * m + start + j] += g.data[i * len + j];
                        }
                    }
                }
            }),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, n, "concat_cols rows");
                self.shape(p).1
            })
            .collect();
        let m: usize = widths.iter().sum();
        let mut out = Tensor::zeros(n, m);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let vp = &self.values[p.0];
            for i in 0..n {
                out.data[i * m + off..i * m + off + w].copy_from_slice(vp.row(i));
            }
            off += w;
        }
        let parts = parts.to_vec();
        self.push(
            out,
            &parts.clone(),
            Box::new(move |g, _, gr| {
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if let Some(gp) = gr.get(p) {
                        for i in 0..n {
                            for j in 0..w {
                                gp.data[i * w + j] += g.data[i * m + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }),
        )
    }

    // -- spatial -----------------------------------------------------------

    /// Samples an `h x w` grid (rows = cells, cols = channels) at normalized
    /// locations `locs` (`n x 2`, columns u then v). Cell `(r, c)` has its
    /// center at `((c + 0.5) / w, (r + 0.5) / h)`; corners outside the grid
    /// contribute zero. Differentiable in the grid and the locations.
    pub fn bilinear_sample(&mut self, grid: Var, h: usize, w: usize, locs: Var) -> Var {
        let ((cells, ch), (n, two)) = (self.shape(grid), self.shape(locs));
        assert_eq!(cells, h * w, "grid cells");
        assert_eq!(two, 2, "locations are n x 2");
        let (vg, vl) = (&self.values[grid.0], &self.values[locs.0]);
        let mut out = Tensor::zeros(n, ch);
        let floors: Vec<f64> = (0..n)
            .flat_map(|i| [(vl.data[2 * i] * w as f64 - 0.5).floor(), (vl.data[2 * i + 1] * h as f64 - 0.5).floor()])
            .collect();
        for i in 0..n {
            for (cell, wt, _, _) in bilinear_corners(vl.data[2 * i], vl.data[2 * i + 1], h, w) {
                let src = vg.row(cell);
                for (o, x) in out.data[i * ch..(i + 1) * ch].iter_mut().zip(src) {
                    *o += wt * x;
                }
            }
        }
        for f in floors {
            self.note(f as i64 as u64);
        }
        self.push(
            out,
            &[grid, locs],
            Box::new(move |g, vals, gr| {
                let (vg, vl) = (&vals[grid.0], &vals[locs.0]);
                if let Some(gg) = gr.get(grid) {
                    for i in 0..n {
                        for (cell, wt, _, _) in bilinear_corners(vl.data[2 * i], vl.data[2 * i + 1], h, w) {
                            for c in 0..ch {
                                gg.data[cell * ch + c] += wt * g.data[i * ch + c];
                            }
                        }
                    }
                }
                if let Some(gl) = gr.get(locs) {
                    for i in 0..n {
                        let (mut du, mut dv) = (0.0, 0.0);
                        for (cell, _, dx, dy) in bilinear_corners(vl.data[2 * i], vl.data[2 * i + 1], h, w) {
                            let s: f64 = (0..ch).map(|c| g.data[i * ch + c] * vg.data[cell * ch + c]).sum();
                            du += dx * s;
                            dv += dy * s;
                        }
                        gl.data[2 * i] += du * w as f64;
                        gl.data[2 * i + 1] += dv * h as f64;
                    }
                }
            }),
        )
    }

    /// Adjoint of bilinear sampling at fixed locations: deposits each row of
    /// `values` onto an `h x w` grid with the same corner weights.
    pub fn splat(&mut self, values: Var, locs: &[[f64; 2]], h: usize, w: usize) -> Var {
        let (n, ch) = self.shape(values);
        assert_eq!(locs.len(), n, "one location per row");
        let vv = &self.values[values.0];
        let mut out = Tensor::zeros(h * w, ch);
        let weights: Vec<Vec<(usize, f64)>> = locs
            .iter()
            .map(|&[u, v]| bilinear_corners(u, v, h, w).map(|(c, wt, _, _)| (c, wt)).collect())
            .collect();
        for (i, ws) in weights.iter().enumerate() {
            for &(cell, wt) in ws {
                for c in 0..ch {
                    out.data[cell * ch + c] += wt * vv.data[i * ch + c];
                }
            }
        }
        self.push(
            out,
            &[values],
            Box::new(move |g, _, gr| {
                if let Some(gv) = gr.get(values) {
                    for (i, ws) in weights.iter().enumerate() {
                        for &(cell, wt) in ws {
                            for c in 0..ch {
                                gv.data[i * ch + c] += wt * g.data[cell * ch + c];
                            }
                        }
                    }
                }
            }),
        )
    }

    /// Patch extraction for a `k x k` convolution with zero padding.
    /// Output rows are output cells; columns run `(ky, kx, channel)`.
    pub fn im2col(
        &mut self,
        x: Var,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> (Var, usize, usize) {
        let (cells, ch) = self.shape(x);
        assert_eq!(cells, h * w, "im2col grid cells");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let cols = k * k * ch;
        // source cell per (output cell, tap); None where the tap hits padding
        let mut taps: Vec<Option<usize>> = Vec::with_capacity(ho * wo * k * k);
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        let inside = y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w;
                        taps.push(inside.then(|| y as usize * w + xx as usize));
                    }
                }
            }
        }
        let vx = &self.values[x.0];
        let mut out = Tensor::zeros(ho * wo, cols);
        for (t, src) in taps.iter().enumerate() {
            if let Some(s) = src {
                out.data[t * ch..(t + 1) * ch].copy_from_slice(vx.row(*s));
            }
        }
        let v = self.push(
            out,
            &[x],
            Box::new(move |g, _, gr| {
                if let Some(gx) = gr.get(x) {
                    for (t, src) in taps.iter().enumerate() {
                        if let Some(s) = src {
                            for c in 0..ch {
                                gx.data[s * ch + c] += g.data[t * ch + c];
                            }
                        }
                    }
                }
            }),
        );
        (v, ho, wo)
    }

    // -- loss terms ----------------------------------------------------------

    /// Sum of weighted focal terms over entries of a probability matrix.
    pub fn focal_terms(&mut self, probs: Var, terms: Vec<FocalTerm>, params: FocalParams) -> Var {
        let m = self.shape(probs).1;
        let vp = &self.values[probs.0];
        let total: f64 = terms
            .iter()
            .map(|t| t.weight * focal_value_and_slope(vp.data[t.row * m + t.col], t.positive, params).0)
            .sum();
        let clamped: Vec<u64> = terms
            .iter()
            .map(|t| {
                let p = vp.data[t.row * m + t.col];
                u64::from(p.clamp(PROB_EPS, 1.0 - PROB_EPS) == p)
            })
            .collect();
        for c in clamped {
            self.note(c);
        }
        self.push(
            Tensor::scalar(total),
            &[probs],
            Box::new(move |g, vals, gr| {
                let vp = &vals[probs.0];
                if let Some(gp) = gr.get(probs) {
                    for t in &terms {
                        let idx = t.row * m + t.col;
                        let (_, d) = focal_value_and_slope(vp.data[idx], t.positive, params);
                        gp.data[idx] += g.data[0] * t.weight * d;
                    }
                }
            }),
        )
    }

    /// Weighted Manhattan distance of selected rows to constant targets.
    pub fn l1_terms(&mut self, points: Var, terms: Vec<L1Term>) -> Var {
        let m = self.shape(points).1;
        let vp = &self.values[points.0];
        let total: f64 = terms
            .iter()
            .map(|t| {
                assert_eq!(t.target.len(), m, "l1 target width");
                t.weight * vp.row(t.row).iter().zip(&t.target).map(|(a, b)| (a - b).abs()).sum::<f64>()
            })
            .sum();
        let signs: Vec<u64> = terms
            .iter()
            .flat_map(|t| vp.row(t.row).iter().zip(&t.target).map(|(a, b)| u64::from(a > b) + 2 * u64::from(a < b)))
            .collect();
        for s in signs {
            self.note(s);
        }
        self.push(
            Tensor::scalar(total),
            &[points],
            Box::new(move |g, vals, gr| {
                let vp = &vals[points.0];
                if let Some(gp) = gr.get(points) {
                    for t in &terms {
                        for k in 0..m {
                            let d = vp.data[t.row * m + k] - t.target[k];
                            let s = if d > 0.0 {
                                1.0
                            } else if d < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            gp.data[t.row * m + k] += g.data[0] * t.weight * s;
                        }
                    }
                }
            }),
        )
    }

    /// Weighted sum of `1 - cos` between predicted and constant target edges.
    /// A zero-length edge on either side contributes 1 with zero gradient.
    pub fn direction_terms(&mut self, points: Var, terms: Vec<DirectionTerm>) -> Var {
        let m = self.shape(points).1;
        let vp = &self.values[points.0];
        let mut total = 0.0;
        for t in &terms {
            let pe = edge_vectors(vp.row(t.row), t.closed);
            assert_eq!(pe.len(), t.target_edges.len(), "edge count");
            let s: f64 = pe
                .iter()
                .zip(&t.target_edges)
                .map(|(&a, &b)| 1.0 - trajmap_core::losses::edge_cosine(a, b))
                .sum();
            total += t.weight * s;
        }
        self.push(
            Tensor::scalar(total),
            &[points],
            Box::new(move |g, vals, gr| {
                let vp = &vals[points.0];
                let Some(gp) = gr.get(points) else { return };
                for t in &terms {
                    let row = vp.row(t.row);
                    let pe = edge_vectors(row, t.closed);
                    let n = m / 2;
                    for (e, (&a, &b)) in pe.iter().zip(&t.target_edges).enumerate() {
                        let (na, nb) = (a.norm(), b.norm());
                        if na == 0.0 || nb == 0.0 {
                            continue;
                        }
                        let dot = a.dot(b);
                        // d cos / d a
                        let dc = b * (1.0 / (na * nb)) - a * (dot / (na * na * na * nb));
                        let k = -g.data[0] * t.weight;
                        let (i0, i1) = (e, (e + 1) % n);
                        let base = t.row * m;
                        gp.data[base + 2 * i1] += k * dc.x;
                        gp.data[base + 2 * i1 + 1] += k * dc.y;
                        gp.data[base + 2 * i0] -= k * dc.x;
                        gp.data[base + 2 * i0 + 1] -= k * dc.y;
                    }
                }
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_2x2(vals: [f64; 4]) -> Tensor {
        Tensor::new(4, 1, vals.to_vec())
    }

    #[test]
    fn bilinear_examples() {
        let mut g = Graph::new();
        let grid = g.constant(grid_2x2([1.0, 2.0, 3.0, 4.0]));
        let at_center = g.constant(Tensor::new(1, 2, vec![0.75, 0.25]));
        let s = g.bilinear_sample(grid, 2, 2, at_center);
        assert_eq!(g.value(s).data, vec![2.0]);

        let grid = g.constant(grid_2x2([0.0, 0.0, 1.0, 1.0]));
        let mid = g.constant(Tensor::new(1, 2, vec![0.5, 0.5]));
        let s = g.bilinear_sample(grid, 2, 2, mid);
        assert_eq!(g.value(s).data, vec![0.5]);

        let outside = g.constant(Tensor::new(1, 2, vec![-0.5, 0.5]));
        let s = g.bilinear_sample(grid, 2, 2, outside);
        assert_eq!(g.value(s).data, vec![0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 700.0]));
        let s = g.softmax_rows(a);
        for i in 0..2 {
            assert!((g.value(s).row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_gradient_by_hand() {
        let mut g = Graph::new();
        let a = g.param(Tensor::new(1, 2, vec![1.0, 2.0]));
        let b = g.param(Tensor::new(2, 1, vec![3.0, 4.0]));
        let c = g.matmul(a, b);
        let s = g.sum_all(c);
        let gr = g.backward(s);
        assert_eq!(gr.get(a).unwrap().data, vec![3.0, 4.0]);
        assert_eq!(gr.get(b).unwrap().data, vec![1.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(2.0));
        let k = g.constant(Tensor::scalar(3.0));
        let p = g.mul(a, k);
        let gr = g.backward(p);
        assert_eq!(gr.get(a).unwrap().data, vec![3.0]);
        assert!(gr.get(k).is_none());
    }

    #[test]
    fn splat_is_adjoint_of_sampling() {
        // <sample(G, x), y> == <G, splat(y, x)>
        let locs = [[0.3, 0.6], [0.9, 0.1], [-0.1, 0.5]];
        let mut g = Graph::new();
        let grid_vals = Tensor::new(6, 2, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let y_vals = Tensor::new(3, 2, (0..6).map(|i| (i as f64 * 0.91).cos()).collect());
        let grid = g.constant(grid_vals.clone());
        let l = g.constant(Tensor::new(3, 2, locs.iter().flatten().copied().collect()));
        let s = g.bilinear_sample(grid, 2, 3, l);
        let y = g.constant(y_vals.clone());
        let sp = g.splat(y, &locs, 2, 3);
        let lhs = g.value(s).dot(&y_vals);
        let rhs = grid_vals.dot(g.value(sp));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn im2col_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]));
        let (cols, ho, wo) = g.im2col(x, 2, 2, 3, 1, 1);
        assert_eq!((ho, wo), (2, 2));
        // centre tap (ky = kx = 1) reproduces the input
        let v = g.value(cols);
        assert_eq!((0..4).map(|r| v.at(r, 4)).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(v.at(0, 0), 0.0);
    }
}
