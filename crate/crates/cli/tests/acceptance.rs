//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails. Tolerances and budgets are pinned below.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use trajmap_core::assignment::{cost_matrix, hungarian, matching_cost, CostMatrix};
use trajmap_core::evaluation::{ap_single_class, occlusion_rate};
use trajmap_core::geometry::{
    apply_permutation, chamfer_distance, CurveKind, MapElementClass, Point2, PointSet, Trajectory,
};
use trajmap_core::losses::{point_l1_min_perm, ElementLabel, LossConfig, PredictedElement, TargetElement};
use trajmap_core::raster::{rasterize, BevSpec};
use trajmap_core::rng::CounterRng;
use trajmap_core::scene::{
    generate_synthetic, load_raster, load_scene, read_corpus, save_raster, save_scene, RoadShape, SynthConfig,
};
use trajmap_core::targets::{make_virtual_targets, VirtualTargetKind};
use trajmap_neural::gradcheck::{run_suite, GradcheckConfig};
use trajmap_neural::params::ModelParams;

const HUNGARIAN_BUDGET: Duration = Duration::from_secs(10);
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const FUSION_BUDGET: Duration = Duration::from_secs(15 * 60);
const GRADCHECK_STEP: f64 = 1e-4;
const GRADCHECK_TOLERANCE: f64 = 1e-3;
const GRADCHECK_MIN_DIRECTIONS: usize = 20;
const CHAMFER_EXAMPLE: f64 = 1.10355;
const CHAMFER_EXAMPLE_TOLERANCE: f64 = 1e-5;
const VIRTUAL_EDGE_TOLERANCE: f64 = 1e-6;
const MIN_TEST_OCCLUSION: f64 = 0.3;

/// Training budget shared by both arms of the fusion comparison.
const FUSION_STEPS: &str = "5000";
const FUSION_LR: &str = "0.01";
const FUSION_SEED: &str = "7";
const FUSION_SCORE_THRESHOLD: &str = "0.1";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> PathBuf {
    root().join("fixtures")
}

fn trajmap(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_trajmap"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "trajmap {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Relative path -> bytes of every file below `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn same_tree(a: &Path, b: &Path) -> bool {
    tree(a) == tree(b)
}

fn same_file(a: &Path, b: &Path) -> bool {
    std::fs::read(a).ok().is_some() && std::fs::read(a).ok() == std::fs::read(b).ok()
}

// ---------------------------------------------------------------- 1

fn brute_force_min(c: &CostMatrix) -> f64 {
    fn go(c: &CostMatrix, t: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if t == c.cols() {
            *best = best.min(acc);
            return;
        }
        for p in 0..c.rows() {
            if !used[p] {
                used[p] = true;
                go(c, t + 1, used, acc + c.get(p, t), best);
                used[p] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.rows()], 0.0, &mut best);
    best
}

fn criterion_hungarian() -> Outcome {
    let start = Instant::now();
    let mut rng = CounterRng::new(1, 1);
    let mut mismatches = 0;
    for i in 0..100 {
        let rows = 1 + (rng.next_u64() % 7) as usize;
        let cols = 1 + (rng.next_u64() % rows as u64) as usize;
        // even instances use small integers (many ties), odd ones reals
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| if i % 2 == 0 { (rng.next_u64() % 5) as f64 } else { rng.uniform(-3.0, 10.0) })
            .collect();
        let c = CostMatrix::new(rows, cols, data).unwrap();
        let a = hungarian(&c).unwrap();
        if a.total_cost(&c) != brute_force_min(&c) {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && t < HUNGARIAN_BUDGET,
        format!("100 instances up to 7x7, {mismatches} mismatches, {:.2}s (< 10s)", t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_gradcheck() -> Outcome {
    let start = Instant::now();
    let cfg = GradcheckConfig {
        step: GRADCHECK_STEP,
        tolerance: GRADCHECK_TOLERANCE,
        directions: GRADCHECK_MIN_DIRECTIONS,
    };
    let report = match run_suite(1, cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let t = start.elapsed();
    let required = ["bilinear_sample", "deform_attn_grid", "cross_attn_set", "ffn_decode", "pipeline"];
    let covered = required
        .iter()
        .all(|name| report.results.iter().any(|r| r.name.starts_with(name)));
    let enough = report.results.iter().all(|r| r.directions >= GRADCHECK_MIN_DIRECTIONS);
    let worst = report.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    outcome(
        report.all_passed() && covered && enough && t < GRADCHECK_BUDGET,
        format!(
            "{} checks, worst relative error {worst:.2e} (< 1e-3), {:.1}s (< 60s)",
            report.results.len(),
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn random_set(rng: &mut CounterRng, kind: CurveKind, n: usize) -> PointSet {
    PointSet::new(
        (0..n).map(|_| Point2::new(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0))).collect(),
        kind,
    )
}

fn criterion_permutation() -> Outcome {
    let mut rng = CounterRng::new(3, 3);
    let cfg = LossConfig::default();
    let mut failures = 0;
    let mut checked = 0;
    for kind in [CurveKind::Open, CurveKind::Closed] {
        for _ in 0..5 {
            let target = random_set(&mut rng, kind, 20);
            let group = target.group();
            let t_elem = TargetElement::new(ElementLabel::Map(MapElementClass::Divider), target.clone());
            let pred = PredictedElement::new(vec![0.2, 0.5, 0.2, 0.1], random_set(&mut rng, kind, 20));
            let base = matching_cost(&pred, &t_elem, &cfg).unwrap();
            for g in group.members() {
                let moved = apply_permutation(&target, g).unwrap();
                let (d, _) = point_l1_min_perm(&moved, &target, group).unwrap();
                let reordered = TargetElement::new(t_elem.label, moved);
                let c = matching_cost(&pred, &reordered, &cfg).unwrap();
                failures += (d != 0.0 || c != base) as usize;
                checked += 1;
            }
        }
    }
    // reordering the target list permutes cost-matrix columns
    let preds: Vec<_> = (0..4)
        .map(|_| PredictedElement::new(vec![0.3, 0.3, 0.3, 0.1], random_set(&mut rng, CurveKind::Open, 20)))
        .collect();
    let targets: Vec<_> = (0..3)
        .map(|i| {
            TargetElement::new(
                ElementLabel::Map(MapElementClass::from_index(i).unwrap()),
                random_set(&mut rng, CurveKind::Open, 20),
            )
        })
        .collect();
    let order = [2usize, 0, 1];
    let shuffled: Vec<_> = order.iter().map(|&i| targets[i].clone()).collect();
    let a = cost_matrix(&preds, &targets, &cfg).unwrap();
    let b = cost_matrix(&preds, &shuffled, &cfg).unwrap();
    for p in 0..4 {
        for (j, &i) in order.iter().enumerate() {
            failures += (a.get(p, i) != b.get(p, j)) as usize;
            checked += 1;
        }
    }
    outcome(failures == 0, format!("{checked} reorderings (N_p=20, open and closed), {failures} inexact"))
}

// ---------------------------------------------------------------- 4

/// Greedy evaluator written from the definition: rank by score (stable),
/// match each to its nearest free GT under tau, then interpolate precision
/// from the right by explicit maxima.
fn brute_ap(preds: &[(f64, &PointSet)], gts: &[&PointSet], tau: f64, score_threshold: f64) -> f64 {
    let mut kept: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].0 > score_threshold).collect();
    kept.sort_by(|&a, &b| preds[b].0.partial_cmp(&preds[a].0).unwrap().then(a.cmp(&b)));
    if gts.is_empty() {
        return if kept.is_empty() { 1.0 } else { 0.0 };
    }
    let mut free = vec![true; gts.len()];
    let mut tp = Vec::new();
    for &i in &kept {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let d = chamfer_distance(&preds[i].1.points, &gt.points).unwrap();
            if free[g] && d < tau && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((g, d));
            }
        }
        if let Some((g, _)) = best {
            free[g] = false;
        }
        tp.push(best.is_some());
    }
    let precision_at = |k: usize| tp[..=k].iter().filter(|&&x| x).count() as f64 / (k + 1) as f64;
    let mut area = 0.0;
    for k in 0..tp.len() {
        if tp[k] {
            area += (k..tp.len()).map(precision_at).fold(f64::MIN, f64::max);
        }
    }
    area / gts.len() as f64
}

fn criterion_ap() -> Outcome {
    let n_p = 5;
    let mut rng = CounterRng::new(4, 4);
    let mut mismatches = 0;
    for _ in 0..50 {
        let n_gt = (rng.next_u64() % 5) as usize;
        let n_pred = (rng.next_u64() % 7) as usize;
        let gts: Vec<PointSet> = (0..n_gt).map(|_| random_set(&mut rng, CurveKind::Open, n_p)).collect();
        let preds: Vec<(f64, PointSet)> = (0..n_pred)
            .map(|_| {
                // half the predictions sit near a ground truth
                let score = (rng.next_u64() % 10) as f64 / 10.0 + 0.05;
                let set = if !gts.is_empty() && rng.next_f64() < 0.5 {
                    let g = &gts[(rng.next_u64() % gts.len() as u64) as usize];
                    let (dx, dy) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
                    PointSet::new(g.points.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect(), g.kind)
                } else {
                    random_set(&mut rng, CurveKind::Open, n_p)
                };
                (score, set)
            })
            .collect();
        let p: Vec<(f64, &PointSet)> = preds.iter().map(|(s, q)| (*s, q)).collect();
        let g: Vec<&PointSet> = gts.iter().collect();
        for tau in [0.5, 1.0, 1.5] {
            let got = ap_single_class(&p, &g, tau, 0.3, n_p).unwrap().ap;
            mismatches += (got != brute_ap(&p, &g, tau, 0.3)) as usize;
        }
    }
    let line = PointSet::open((0..n_p).map(|i| Point2::new(i as f64, 0.0)).collect());
    let far = PointSet::open((0..n_p).map(|i| Point2::new(i as f64, 50.0)).collect());
    let examples = [
        (vec![(0.9, &line)], 1.0),
        (vec![(0.9, &far), (0.8, &line)], 0.5),
        (vec![(0.9, &line), (0.8, &far)], 1.0),
    ];
    let mut example_fail = 0;
    for (preds, want) in &examples {
        for tau in [0.5, 1.0, 1.5] {
            example_fail += (ap_single_class(preds, &[&line], tau, 0.7, n_p).unwrap().ap != *want) as usize;
        }
    }
    outcome(
        mismatches == 0 && example_fail == 0,
        format!("50 micro-scenes x 3 thresholds: {mismatches} mismatches; 1.0/0.5/1.0 examples: {example_fail} off"),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_chamfer() -> Outcome {
    let p = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
    let q = [Point2::new(0.0, 1.0)];
    let example = chamfer_distance(&p, &q).unwrap();
    let self_zero = chamfer_distance(&p, &p).unwrap() == 0.0;
    let mut rng = CounterRng::new(5, 5);
    // dyadic coordinates keep every translated coordinate exactly representable
    let dyadic = |rng: &mut CounterRng| (rng.next_u64() % 8192) as f64 / 256.0 - 16.0;
    let mut failures = 0;
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 12) as usize;
        let m = 1 + (rng.next_u64() % 12) as usize;
        let a: Vec<Point2> = (0..n).map(|_| Point2::new(dyadic(&mut rng), dyadic(&mut rng))).collect();
        let b: Vec<Point2> = (0..m).map(|_| Point2::new(dyadic(&mut rng), dyadic(&mut rng))).collect();
        let t = Point2::new(dyadic(&mut rng), dyadic(&mut rng));
        let shift = |v: &[Point2]| v.iter().map(|p| Point2::new(p.x + t.x, p.y + t.y)).collect::<Vec<_>>();
        let ab = chamfer_distance(&a, &b).unwrap();
        let symmetric = ab == chamfer_distance(&b, &a).unwrap();
        let translated = ab == chamfer_distance(&shift(&a), &shift(&b)).unwrap();
        failures += (!symmetric || !translated) as usize;
    }
    let pass = self_zero && (example - CHAMFER_EXAMPLE).abs() < CHAMFER_EXAMPLE_TOLERANCE && failures == 0;
    outcome(
        pass,
        format!("CD(P,P)=0: {self_zero}; example {example:.6} (target 1.10355 +/- 1e-5); 1000 pairs, {failures} asymmetric or translation-variant"),
    )
}

// ---------------------------------------------------------------- 6

/// Chamfer from `edge` to the stretch of the infinite line through the
/// ground truth's end points that lies between the projections of the
/// edge's end points, sampled with the edge's point count.
fn span_chamfer(edge: &PointSet, gt: &PointSet) -> f64 {
    let a = gt.points[0];
    let b = *gt.points.last().unwrap();
    let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
    let (dx, dy) = ((b.x - a.x) / len, (b.y - a.y) / len);
    let proj = |p: Point2| (p.x - a.x) * dx + (p.y - a.y) * dy;
    let s0 = proj(edge.points[0]);
    let s1 = proj(*edge.points.last().unwrap());
    let n = edge.points.len();
    let reference: Vec<Point2> = (0..n)
        .map(|k| {
            let s = s0 + (s1 - s0) * k as f64 / (n - 1) as f64;
            Point2::new(a.x + s * dx, a.y + s * dy)
        })
        .collect();
    chamfer_distance(&edge.points, &reference).unwrap()
}

fn criterion_virtual_edges() -> Outcome {
    let cfg = SynthConfig {
        seed: 6,
        train_scenes: 10,
        test_scenes: 0,
        road_shapes: vec![RoadShape::Straight],
        sigma: 0.0,
        weave_probability: 0.0,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&cfg).unwrap();
    let (mut worst, mut edges, mut count_fail) = (0.0f64, 0usize, 0usize);
    for scene in &corpus.train {
        let (targets, diag) =
            make_virtual_targets(&scene.trajectories, VirtualTargetKind::LaneEdge, cfg.lane_width, cfg.n_p);
        count_fail += (targets.len() != 2 * scene.trajectories.len() || diag.used != scene.trajectories.len()) as usize;
        let lines: Vec<&PointSet> = scene
            .gt_elements
            .iter()
            .filter(|e| matches!(e.class, MapElementClass::Divider | MapElementClass::Boundary))
            .map(|e| &e.points)
            .collect();
        for t in &targets {
            let best = lines.iter().map(|g| span_chamfer(&t.points, g)).fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
            edges += 1;
        }
    }
    outcome(
        worst <= VIRTUAL_EDGE_TOLERANCE && count_fail == 0 && edges > 0,
        format!("{edges} edges over 10 straight sigma=0 roads, worst Chamfer {worst:.2e} m (<= 1e-6), {count_fail} scenes with count != 2*N_A"),
    )
}

// ---------------------------------------------------------------- 7

type Frac = (i128, i128);

fn less(a: Frac, b: Frac) -> bool {
    a.0 * b.1 < b.0 * a.1
}

/// Exact test of whether the segment `u0 + t du`, `t in [0, 1]` (integer
/// units of `1/scale` cell) touches the half-open cell `[c, c+1) x [r, r+1)`.
fn touches(u0: i128, du: i128, v0: i128, dv: i128, c: i128, r: i128, scale: i128) -> bool {
    // (value, open) bounds on t
    let mut lo: (Frac, bool) = ((0, 1), false);
    let mut hi: (Frac, bool) = ((1, 1), false);
    let tighten_lo = |lo: &mut (Frac, bool), f: Frac, open: bool| {
        if less(lo.0, f) || (!less(f, lo.0) && open) {
            *lo = (f, open || (!less(lo.0, f) && lo.1));
        }
    };
    let tighten_hi = |hi: &mut (Frac, bool), f: Frac, open: bool| {
        if less(f, hi.0) || (!less(hi.0, f) && open) {
            *hi = (f, open || (!less(f, hi.0) && hi.1));
        }
    };
    for (x0, dx, k) in [(u0, du, c), (v0, dv, r)] {
        let (a, b) = (k * scale, (k + 1) * scale);
        if dx == 0 {
            if !(a <= x0 && x0 < b) {
                return false;
            }
        } else if dx > 0 {
            tighten_lo(&mut lo, (a - x0, dx), false);
            tighten_hi(&mut hi, (b - x0, dx), true);
        } else {
            tighten_hi(&mut hi, (x0 - a, -dx), false);
            tighten_lo(&mut lo, (x0 - b, -dx), true);
        }
    }
    less(lo.0, hi.0) || (!less(hi.0, lo.0) && !lo.1 && !hi.1)
}

fn criterion_raster() -> Outcome {
    // 0.25 m cells: grid coordinates of 1/64 m points are exact multiples of 1/16
    let spec = BevSpec::new([-12.5, 12.5], [-25.0, 25.0], 0.25).unwrap();
    let (h, w) = (spec.height() as i128, spec.width() as i128);
    let scale = 16i128;
    let mut rng = CounterRng::new(7, 7);
    let mut draw = |lo: f64, hi: f64| (rng.uniform(lo, hi) * 64.0).round() / 64.0;
    let mut mismatches = 0;
    for i in 0..100 {
        // every fifth segment is axis-aligned through grid lines
        let a = Point2::new(draw(-14.0, 14.0), draw(-27.0, 27.0));
        let b = if i % 5 == 0 {
            Point2::new(a.x, draw(-27.0, 27.0))
        } else {
            Point2::new(draw(-14.0, 14.0), draw(-27.0, 27.0))
        };
        let img = rasterize(&[Trajectory::new("s", vec![a, b])], &spec);
        let got: BTreeSet<(usize, usize)> = img.set_cells().collect();
        let grid = |p: Point2| (((p.x + 12.5) * 4.0 * 16.0) as i128, ((25.0 - p.y) * 4.0 * 16.0) as i128);
        let (ua, va) = grid(a);
        let (ub, vb) = grid(b);
        let mut want = BTreeSet::new();
        for r in 0..h {
            for c in 0..w {
                if touches(ua, ub - ua, va, vb - va, c, r, scale) {
                    want.insert((r as usize, c as usize));
                }
            }
        }
        mismatches += (got != want) as usize;
    }
    outcome(mismatches == 0, format!("100 segments on a {h}x{w} grid, {mismatches} differ from the supercover oracle"))
}

// ---------------------------------------------------------------- 8

fn divider_occluded_mean(report: &Path) -> Option<(f64, u64)> {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report).ok()?).ok()?;
    let class = v["classes"].as_array()?.iter().find(|c| c["class"] == "divider")?;
    let (mut sum, mut n) = (0.0, 0u64);
    for b in class["bins"].as_array()? {
        if b["lo"].as_f64()? > 0.0 {
            if let Some(m) = b["mean_chamfer"].as_f64() {
                let k = b["pairs"].as_u64()?;
                sum += m * k as f64;
                n += k;
            }
        }
    }
    (n > 0).then(|| (sum / n as f64, n))
}

fn min_test_occlusion(corpus: &Path) -> f64 {
    let c = read_corpus(corpus).unwrap();
    let mut min = f64::INFINITY;
    for scene in &c.test {
        for (e, m) in scene.gt_elements.iter().zip(&scene.occlusion) {
            min = min.min(occlusion_rate(&e.points, m).unwrap());
        }
    }
    min
}

fn criterion_fusion() -> Result<Outcome, String> {
    let start = Instant::now();
    let fx = fixtures();
    let committed = fx.join("fusion60");
    let report_fx = fx.join("fusion60_report");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("fusion60");
    trajmap(&["synth", "--config", s(&fx.join("fusion60.json")), "--out", s(&corpus)])?;
    let corpus_ok = same_tree(&corpus, &committed);
    let c = read_corpus(&committed).map_err(|e| e.to_string())?;
    let split_ok = c.train.len() == 40 && c.test.len() == 20;
    let occ = min_test_occlusion(&committed);

    let mut means = BTreeMap::new();
    let mut fixtures_ok = true;
    for arm in ["in", "none"] {
        let params = tmp.path().join(format!("{arm}.params"));
        let preds = tmp.path().join(format!("preds_{arm}"));
        let table = tmp.path().join(format!("{arm}.occlusion.txt"));
        #[rustfmt::skip]
        trajmap(&["train", "--corpus", s(&committed), "--fusion", arm, "--steps", FUSION_STEPS,
            "--lr", FUSION_LR, "--seed", FUSION_SEED, "--out", s(&params)])?;
        trajmap(&["predict", "--corpus", s(&committed), "--params", s(&params), "--out", s(&preds)])?;
        #[rustfmt::skip]
        trajmap(&["report-occlusion", "--corpus", s(&committed), "--preds", s(&preds),
            "--score-threshold", FUSION_SCORE_THRESHOLD, "--out", s(&table)])?;
        fixtures_ok &= same_file(&params, &report_fx.join(format!("{arm}.params")))
            && same_file(&table, &report_fx.join(format!("{arm}.occlusion.txt")))
            && same_file(&table.with_extension("json"), &report_fx.join(format!("{arm}.occlusion.json")));
        means.insert(arm, divider_occluded_mean(&table.with_extension("json")));
    }
    let t = start.elapsed();
    let (fused, base) = (means["in"], means["none"]);
    let direction = matches!((fused, base), (Some((f, _)), Some((b, _))) if f <= b);
    let fmt = |m: Option<(f64, u64)>| m.map_or("none".to_string(), |(v, n)| format!("{v:.4} m over {n} pairs"));
    Ok(outcome(
        direction && corpus_ok && split_ok && occ >= MIN_TEST_OCCLUSION && fixtures_ok && t < FUSION_BUDGET,
        format!(
            "occluded divider Chamfer: in-fusion {} <= baseline {}; min test occlusion {occ:.3} (>= 0.3); corpus reproduced: {corpus_ok}; report fixtures reproduced: {fixtures_ok}; {:.0}s (< 900s)",
            fmt(fused),
            fmt(base),
            t.as_secs_f64()
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_determinism() -> Result<Outcome, String> {
    let fx = fixtures();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |k: usize| -> Result<PathBuf, String> {
        let d = tmp.path().join(format!("run{k}"));
        let corpus = d.join("corpus");
        trajmap(&["synth", "--config", s(&fx.join("ten_scenes.json")), "--out", s(&corpus)])?;
        let params = d.join("trained.params");
        trajmap(&["train", "--corpus", s(&corpus), "--steps", "200", "--seed", "7", "--out", s(&params)])?;
        let preds = d.join("preds");
        trajmap(&["predict", "--corpus", s(&corpus), "--params", s(&params), "--split", "train", "--out", s(&preds)])?;
        #[rustfmt::skip]
        trajmap(&["eval", "--corpus", s(&corpus), "--preds", s(&preds), "--split", "train",
            "--score-threshold", "0.1", "--out", s(&d.join("report.json"))])?;
        Ok(d)
    };
    let (a, b) = (run(0)?, run(1)?);
    let identical = same_tree(&a, &b);
    let committed = fx.join("ten_scenes");
    let matches_fixture = same_file(&a.join("corpus/manifest.json"), &committed.join("manifest.json"))
        && same_tree(&a.join("corpus/scenes"), &committed.join("scenes"))
        && same_file(&a.join("trained.params"), &committed.join("trained.params"))
        && same_file(&a.join("trained.params.loss.tsv"), &committed.join("trained.params.loss.tsv"));
    Ok(outcome(
        identical && matches_fixture,
        format!(
            "synth/train/predict/eval twice: {} files identical: {identical}; matches committed run: {matches_fixture}",
            tree(&a).len()
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn criterion_round_trips() -> Outcome {
    let all = tree(&fixtures());
    let (mut scenes, mut rasters, mut params, mut failures) = (0, 0, 0, Vec::new());
    for (path, bytes) in &all {
        let name = path.to_string_lossy();
        let ok = if name.contains("/scenes/") && name.ends_with(".json") {
            scenes += 1;
            load_scene(bytes).and_then(|sc| save_scene(&sc)).is_ok_and(|b| &b == bytes)
        } else if name.ends_with(".raster") {
            rasters += 1;
            let text = String::from_utf8_lossy(bytes);
            load_raster(&text).is_ok_and(|img| save_raster(&img) == text)
        } else if name.ends_with(".params") {
            params += 1;
            ModelParams::from_bytes(bytes).is_ok_and(|p| &p.to_bytes() == bytes)
        } else {
            continue;
        };
        if !ok {
            failures.push(name.into_owned());
        }
    }
    outcome(
        failures.is_empty() && scenes > 0 && rasters > 0 && params > 0,
        format!("{scenes} scenes, {rasters} rasters, {params} parameter files; failures: {failures:?}"),
    )
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("hungarian equals brute force", Box::new(criterion_hungarian)),
        ("finite-difference gradient checks", Box::new(criterion_gradcheck)),
        ("permutation invariance", Box::new(criterion_permutation)),
        ("AP equals brute force", Box::new(criterion_ap)),
        ("Chamfer examples and invariances", Box::new(criterion_chamfer)),
        ("virtual lane edges on straight roads", Box::new(criterion_virtual_edges)),
        ("rasterization equals supercover oracle", Box::new(criterion_raster)),
        (
            "in-fusion vs no-actor baseline on occluded dividers",
            Box::new(|| criterion_fusion().unwrap_or_else(|e| outcome(false, e))),
        ),
        (
            "determinism of synth, train, predict, eval",
            Box::new(|| criterion_determinism().unwrap_or_else(|e| outcome(false, e))),
        ),
        ("format round-trips on fixtures", Box::new(criterion_round_trips)),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let line = format!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        // written past the test harness's output capture so the lines always show
        let _ = writeln!(std::io::stderr(), "{line}");
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
