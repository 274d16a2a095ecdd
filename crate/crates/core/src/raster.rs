//! Bird's-eye-view grid geometry and the binary trajectory image.
//!
//! Row 0 is the forward edge (`y_max`) and column 0 the left edge (`x_min`).
//! In continuous grid coordinates `u = (x - x_min) / res`,
//! `v = (y_max - y) / res`, cell `(r, c)` is the half-open square
//! `[c, c + 1) x [r, r + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_trajectory, Point2, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub resolution: f64,
}

impl Default for BevSpec {
    /// 30 m x 60 m perception range at 0.3 m per pixel (200 x 100 cells).
    fn default() -> Self {
        Self {
            x_range: [-15.0, 15.0],
            y_range: [-30.0, 30.0],
            resolution: 0.3,
        }
    }
}

fn cells_along(span: f64, res: f64) -> Option<usize> {
    let n = span / res;
    let r = n.round();
    ((n - r).abs() <= 1e-9 * r.max(1.0) && r >= 1.0).then_some(r as usize)
}

impl BevSpec {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], resolution: f64) -> Result<Self> {
        let spec = Self {
            x_range,
            y_range,
            resolution,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, x1] = self.x_range;
        let [y0, y1] = self.y_range;
        if ![x0, x1, y0, y1, self.resolution].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBevSpec("non-finite value".into()));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidBevSpec("range min must be below max".into()));
        }
        if self.resolution <= 0.0 {
            return Err(Error::InvalidBevSpec("resolution must be positive".into()));
        }
        if cells_along(x1 - x0, self.resolution).is_none()
            || cells_along(y1 - y0, self.resolution).is_none()
        {
            return Err(Error::InvalidBevSpec(format!(
                "ranges must divide evenly by resolution {}",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Number of rows (along y).
    pub fn height(&self) -> usize {
        cells_along(self.y_range[1] - self.y_range[0], self.resolution).unwrap_or(0)
    }

    /// Number of columns (along x).
    pub fn width(&self) -> usize {
        cells_along(self.x_range[1] - self.x_range[0], self.resolution).unwrap_or(0)
    }

    pub fn x_span(&self) -> f64 {
        self.x_range[1] - self.x_range[0]
    }

    pub fn y_span(&self) -> f64 {
        self.y_range[1] - self.y_range[0]
    }

    /// Continuous grid coordinates `(u, v)` of a world point.
    pub fn to_grid(&self, p: Point2) -> (f64, f64) {
        (
            (p.x - self.x_range[0]) / self.resolution,
            (self.y_range[1] - p.y) / self.resolution,
        )
    }

    pub fn from_grid(&self, u: f64, v: f64) -> Point2 {
        Point2::new(
            self.x_range[0] + u * self.resolution,
            self.y_range[1] - v * self.resolution,
        )
    }

    /// World point to `[0, 1]^2` coordinates: `(0, 0)` is the
    /// `(x_min, y_max)` corner, first coordinate runs along x.
    pub fn to_unit(&self, p: Point2) -> [f64; 2] {
        [
            (p.x - self.x_range[0]) / self.x_span(),
            (self.y_range[1] - p.y) / self.y_span(),
        ]
    }

    pub fn from_unit(&self, [a, b]: [f64; 2]) -> Point2 {
        Point2::new(
            self.x_range[0] + a * self.x_span(),
            self.y_range[1] - b * self.y_span(),
        )
    }

    /// Whether a point lies in the closed perception box.
    pub fn contains_closed(&self, p: Point2) -> bool {
        p.x >= self.x_range[0]
            && p.x <= self.x_range[1]
            && p.y >= self.y_range[0]
            && p.y <= self.y_range[1]
    }
}

/// Binary BEV raster: a cell is 1 when some actor path passes through it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryImage {
    pub spec: BevSpec,
    pub height: usize,
    pub width: usize,
    cells: Vec<u8>,
}

impl TrajectoryImage {
    pub fn zeros(spec: BevSpec) -> Self {
        let (height, width) = (spec.height(), spec.width());
        Self {
            spec,
            height,
            width,
            cells: vec![0; height * width],
        }
    }

    /// Builds an image from row-major 0/1 cells.
    pub fn from_cells(spec: BevSpec, cells: Vec<u8>) -> Result<Self> {
        spec.validate()?;
        let (height, width) = (spec.height(), spec.width());
        if cells.len() != height * width {
            return Err(Error::MalformedRaster(format!(
                "expected {} cells, got {}",
                height * width,
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::MalformedRaster("cells must be 0 or 1".into()));
        }
        Ok(Self {
            spec,
            height,
            width,
            cells,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.cells[row * self.width + col] = 1;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn count_set(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    pub fn set_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 1)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    /// Cellwise OR with an image of the same spec.
    pub fn merge(&mut self, other: &TrajectoryImage) {
        debug_assert_eq!(self.cells.len(), other.cells.len());
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
    }

    /// Cells as `f64` row-major, for feeding a network.
    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| c as f64).collect()
    }
}

fn cell_of(u: f64, v: f64, h: usize, w: usize) -> Option<(usize, usize)> {
    let (c, r) = (u.floor(), v.floor());
    (c >= 0.0 && r >= 0.0 && c < w as f64 && r < h as f64).then_some((r as usize, c as usize))
}

/// `(row, col)` of the cell containing `p`, or `None` outside the range.
pub fn world_to_pixel(p: Point2, spec: &BevSpec) -> Option<(usize, usize)> {
    if !p.is_finite() {
        return None;
    }
    let (u, v) = spec.to_grid(p);
    cell_of(u, v, spec.height(), spec.width())
}

/// Center of cell `(row, col)`.
pub fn pixel_to_world((row, col): (usize, usize), spec: &BevSpec) -> Result<Point2> {
    let (height, width) = (spec.height(), spec.width());
    if row >= height || col >= width {
        return Err(Error::PixelOutOfGrid {
            row,
            col,
            height,
            width,
        });
    }
    Ok(spec.from_grid(col as f64 + 0.5, row as f64 + 0.5))
}

/// Clips the parameter range of `a + t (b - a)`, `t in [0, 1]`, to the
/// closed box `[0, w] x [0, h]`.
fn clip_to_box(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let d = (b.0 - a.0, b.1 - a.1);
    for (p, q) in [
        (-d.0, a.0),
        (d.0, w - a.0),
        (-d.1, a.1),
        (d.1, h - a.1),
    ] {
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

/// Every cell whose half-open square the segment `a`-`b` touches, in order
/// of first contact, without duplicates.
///
/// Collects the parameters where the segment crosses a grid line, evaluates
/// the cell at each crossing (using the exact integer coordinate) and at the
/// midpoint of every gap between crossings.
pub fn supercover_cells(a: Point2, b: Point2, spec: &BevSpec) -> Vec<(usize, usize)> {
    let (h, w) = (spec.height(), spec.width());
    let ga = spec.to_grid(a);
    let gb = spec.to_grid(b);
    let Some((t0, t1)) = clip_to_box(ga, gb, w as f64, h as f64) else {
        return Vec::new();
    };
    let du = gb.0 - ga.0;
    let dv = gb.1 - ga.1;
    let at = |t: f64| {
        if t == 0.0 {
            ga
        } else if t == 1.0 {
            gb
        } else {
            (ga.0 + t * du, ga.1 + t * dv)
        }
    };

    // (t, u, v) with the crossing coordinate set exactly
    let mut events: Vec<(f64, f64, f64)> = Vec::new();
    let (ua, va) = at(t0);
    let (ub, vb) = at(t1);
    events.push((t0, ua, va));
    events.push((t1, ub, vb));
    if du != 0.0 {
        let (lo, hi) = (ua.min(ub), ua.max(ub));
        let mut k = lo.ceil();
        while k <= hi {
            let t = (k - ga.0) / du;
            if t >= t0 && t <= t1 {
                events.push((t, k, ga.1 + t * dv));
            }
            k += 1.0;
        }
    }
    if dv != 0.0 {
        let (lo, hi) = (va.min(vb), va.max(vb));
        let mut k = lo.ceil();
        while k <= hi {
            let t = (k - ga.1) / dv;
            if t >= t0 && t <= t1 {
                events.push((t, ga.0 + t * du, k));
            }
            k += 1.0;
        }
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut push = |cell: Option<(usize, usize)>| {
        if let Some(c) = cell {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    };
    for (i, &(t, u, v)) in events.iter().enumerate() {
        push(cell_of(u, v, h, w));
        if let Some(&(tn, _, _)) = events.get(i + 1) {
            if tn > t {
                let (mu, mv) = at(0.5 * (t + tn));
                push(cell_of(mu, mv, h, w));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RasterMode {
    /// Consecutive samples are joined by supercover segments.
    #[default]
    Connected,
    /// Only the cells holding a sample are marked.
    PointsOnly,
}

/// Rasterizes one trajectory; segments leaving the range are clipped.
pub fn rasterize_one(t: &Trajectory, spec: &BevSpec, mode: RasterMode) -> TrajectoryImage {
    let mut img = TrajectoryImage::zeros(*spec);
    let t = normalize_trajectory(t);
    let pts = &t.points;
    if mode == RasterMode::PointsOnly || pts.len() == 1 {
        for &p in pts {
            if let Some((r, c)) = world_to_pixel(p, spec) {
                img.set(r, c);
            }
        }
        return img;
    }
    for w in pts.windows(2) {
        for (r, c) in supercover_cells(w[0], w[1], spec) {
            img.set(r, c);
        }
    }
    img
}

pub fn rasterize_with(ts: &[Trajectory], spec: &BevSpec, mode: RasterMode) -> TrajectoryImage {
    let mut img = TrajectoryImage::zeros(*spec);
    for t in ts {
        img.merge(&rasterize_one(t, spec, mode));
    }
    img
}

/// Union of all actor paths as a binary image.
pub fn rasterize(ts: &[Trajectory], spec: &BevSpec) -> TrajectoryImage {
    rasterize_with(ts, spec, RasterMode::Connected)
}
