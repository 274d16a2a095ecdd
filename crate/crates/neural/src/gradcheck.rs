//! Central finite-difference checks of analytic gradients.
//!
//! Each check reduces an op's output to a scalar with a fixed random weight
//! tensor and compares directional derivatives along random unit
//! directions. A direction whose `+h` or `-h` evaluation takes a different
//! discrete branch than the base point (see [`Graph::signature`]) is
//! redrawn: a difference quotient across a kink measures no derivative.

use std::collections::BTreeMap;

use trajmap_core::losses::LossConfig;
use trajmap_core::raster::BevSpec;
use trajmap_core::rng::CounterRng;
use trajmap_core::scene::{generate_synthetic, SynthConfig};
use trajmap_core::targets::VirtualTargetKind;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{cross_attn_set, deform_attn_grid, ffn_decode, Binder};
use crate::loss::{pipeline_loss, scene_targets};
use crate::model::{build_forward, SceneInput};
use crate::params::{
    is_frozen, AttentionKind, FusionConfig, FusionMode, ModelConfig, ModelParams, TrajectoryModeling,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub directions: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-3,
            directions: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub directions: usize,
    /// Directions redrawn because they crossed a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            s.push_str(&format!(
                "{} {:<40} directions={:<3} redrawn={:<3} max_rel_err={:.3e}\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.directions,
                r.redrawn,
                r.max_rel_error
            ));
        }
        let passed = self.results.iter().filter(|r| r.passed).count();
        s.push_str(&format!("{passed}/{} gradient checks passed\n", self.results.len()));
        s
    }
}

/// Relative error with a tiny absolute floor so that two vanishing
/// derivatives compare equal.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-10)
}

type Build<'f> = dyn Fn(&mut Graph, &mut Binder<'_>) -> Result<Var> + 'f;

fn evaluate(tensors: &BTreeMap<String, Tensor>, build: &Build<'_>) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let mut b = Binder::frozen(tensors);
    let v = build(&mut g, &mut b)?;
    Ok((g.value(v).data[0], g.signature()))
}

fn shifted(
    tensors: &BTreeMap<String, Tensor>,
    dir: &BTreeMap<String, Vec<f64>>,
    h: f64,
) -> BTreeMap<String, Tensor> {
    let mut out = tensors.clone();
    for (n, d) in dir {
        let t = out.get_mut(n).expect("direction names come from the tensors");
        for (x, dx) in t.data.iter_mut().zip(d) {
            *x += h * dx;
        }
    }
    out
}

/// Which directions a check draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directions {
    /// Random unit vectors over all trainable entries.
    Random,
    /// Single randomly chosen trainable scalars.
    Coordinates,
}

/// Checks the gradient of `build`'s scalar output with respect to every
/// non-frozen tensor in `tensors`.
pub fn check_named(
    name: &str,
    tensors: &BTreeMap<String, Tensor>,
    build: &Build<'_>,
    kind: Directions,
    rng: &mut CounterRng,
    cfg: GradcheckConfig,
) -> Result<CheckResult> {
    let mut g = Graph::new();
    let mut b = Binder::trainable(tensors);
    let loss = build(&mut g, &mut b)?;
    let base_sig = g.signature();
    let grads = g.backward(loss);
    let names: Vec<&String> = tensors.keys().filter(|n| !is_frozen(n)).collect();
    let grad_of = |n: &str| -> Vec<f64> {
        b.bound()
            .get(n)
            .and_then(|&v| grads.get(v))
            .map(|t| t.data.clone())
            .unwrap_or_else(|| vec![0.0; tensors[n].len()])
    };
    let flat_grads: BTreeMap<&String, Vec<f64>> = names.iter().map(|&n| (n, grad_of(n))).collect();
    let total: usize = names.iter().map(|n| tensors[*n].len()).sum();
    if total == 0 {
        return Err(Error::Config(format!("{name}: nothing to check")));
    }

    let (mut accepted, mut redrawn, mut worst) = (0, 0, 0.0f64);
    let max_attempts = cfg.directions * 10;
    for _ in 0..max_attempts {
        if accepted == cfg.directions {
            break;
        }
        let mut dir: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        match kind {
            Directions::Random => {
                let mut norm = 0.0;
                for &n in &names {
                    let d: Vec<f64> = (0..tensors[n].len()).map(|_| rng.normal()).collect();
                    norm += d.iter().map(|x| x * x).sum::<f64>();
                    dir.insert(n.clone(), d);
                }
                let s = 1.0 / norm.sqrt();
                dir.values_mut().flatten().for_each(|x| *x *= s);
            }
            Directions::Coordinates => {
                let mut k = rng.below(total as u64) as usize;
                for &n in &names {
                    let len = tensors[n].len();
                    let mut d = vec![0.0; len];
                    if k < len {
                        d[k] = 1.0;
                        k = usize::MAX;
                    } else if k != usize::MAX {
                        k -= len;
                    }
                    dir.insert(n.clone(), d);
                }
            }
        }
        let analytic: f64 = names
            .iter()
            .map(|&n| flat_grads[n].iter().zip(&dir[n]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let (fp, sp) = evaluate(&shifted(tensors, &dir, cfg.step), build)?;
        let (fm, sm) = evaluate(&shifted(tensors, &dir, -cfg.step), build)?;
        if sp != base_sig || sm != base_sig {
            redrawn += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * cfg.step);
        worst = worst.max(relative_error(analytic, numeric));
        accepted += 1;
    }
    Ok(CheckResult {
        name: name.to_string(),
        directions: accepted,
        redrawn,
        max_rel_error: worst,
        passed: accepted == cfg.directions && worst < cfg.tolerance,
    })
}

fn random_tensor(rng: &mut CounterRng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| scale * rng.uniform(-1.0, 1.0)).collect())
}

/// `sum(weights * x)` with fixed random weights, turning any output into a
/// scalar whose gradient exercises every output entry.
fn weighted_sum(g: &mut Graph, x: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(x, w);
    g.sum_all(p)
}

fn insert(m: &mut BTreeMap<String, Tensor>, n: &str, t: Tensor) {
    m.insert(n.to_string(), t);
}

fn deform_tensors(rng: &mut CounterRng, p: &str, c: usize, c_in: usize, hk: usize, m: &mut BTreeMap<String, Tensor>) {
    let s = 1.0 / (c as f64).sqrt();
    insert(m, &format!("{p}.offset.weight"), random_tensor(rng, c, 2 * hk, 0.5));
    insert(m, &format!("{p}.offset.bias"), random_tensor(rng, 1, 2 * hk, 1.5));
    insert(m, &format!("{p}.attn.weight"), random_tensor(rng, c, hk, 1.0));
    insert(m, &format!("{p}.attn.bias"), random_tensor(rng, 1, hk, 0.5));
    insert(m, &format!("{p}.value.weight"), random_tensor(rng, c_in, c, s));
    insert(m, &format!("{p}.value.bias"), random_tensor(rng, 1, c, s));
    insert(m, &format!("{p}.output.weight"), random_tensor(rng, c, c, s));
}

fn check_bilinear(rng: &mut CounterRng, cfg: GradcheckConfig) -> Result<CheckResult> {
    let (h, w, c, n) = (5, 6, 3, 7);
    let mut m = BTreeMap::new();
    insert(&mut m, "grid", random_tensor(rng, h * w, c, 1.0));
    let locs = Tensor::new(n, 2, (0..2 * n).map(|_| rng.uniform(-0.1, 1.1)).collect());
    insert(&mut m, "locs", locs);
    let r = random_tensor(rng, n, c, 1.0);
    let build = move |g: &mut Graph, b: &mut Binder<'_>| -> Result<Var> {
        let grid = b.var(g, "grid")?;
        let locs = b.var(g, "locs")?;
        let s = g.bilinear_sample(grid, h, w, locs);
        Ok(weighted_sum(g, s, &r))
    };
    check_named("bilinear_sample", &m, &build, Directions::Random, rng, cfg)
}

fn check_deform(rng: &mut CounterRng, cfg: GradcheckConfig) -> Result<CheckResult> {
    let (nq, h, w, c, heads, samples) = (3, 8, 8, 4, 2, 2);
    let mut m = BTreeMap::new();
    deform_tensors(rng, "d", c, c, heads * samples, &mut m);
    insert(&mut m, "query", random_tensor(rng, nq, c, 1.0));
    insert(&mut m, "grid", random_tensor(rng, h * w, c, 1.0));
    let refs = Tensor::new(nq, 2, (0..2 * nq).map(|_| rng.uniform(0.15, 0.85)).collect());
    insert(&mut m, "refs", refs);
    let r = random_tensor(rng, nq, c, 1.0);
    let build = move |g: &mut Graph, b: &mut Binder<'_>| -> Result<Var> {
        let (q, refs, grid) = (b.var(g, "query")?, b.var(g, "refs")?, b.var(g, "grid")?);
        let out = deform_attn_grid(g, b, "d", q, refs, grid, (h, w), heads, samples)?;
        Ok(weighted_sum(g, out, &r))
    };
    check_named("deform_attn_grid", &m, &build, Directions::Random, rng, cfg)
}

fn check_cross(rng: &mut CounterRng, cfg: GradcheckConfig) -> Result<CheckResult> {
    let (nq, nk, c, c_kv, heads) = (3, 5, 4, 6, 2);
    let mut m = BTreeMap::new();
    insert(&mut m, "x.query.weight", random_tensor(rng, c, c, 0.8));
    insert(&mut m, "x.key.weight", random_tensor(rng, c_kv, c, 0.8));
    insert(&mut m, "x.value.weight", random_tensor(rng, c_kv, c, 0.5));
    insert(&mut m, "x.value.bias", random_tensor(rng, 1, c, 0.5));
    insert(&mut m, "x.output.weight", random_tensor(rng, c, c, 0.5));
    insert(&mut m, "query", random_tensor(rng, nq, c, 1.0));
    insert(&mut m, "kv", random_tensor(rng, nk, c_kv, 1.0));
    let r = random_tensor(rng, nq, c, 1.0);
    let build = move |g: &mut Graph, b: &mut Binder<'_>| -> Result<Var> {
        let (q, kv) = (b.var(g, "query")?, b.var(g, "kv")?);
        let out = cross_attn_set(g, b, "x", q, kv, heads)?;
        Ok(weighted_sum(g, out, &r))
    };
    check_named("cross_attn_set", &m, &build, Directions::Random, rng, cfg)
}

fn check_ffn(rng: &mut CounterRng, cfg: GradcheckConfig) -> Result<CheckResult> {
    let (n, c, classes, n_p) = (3, 4, 3, 4);
    let mut m = BTreeMap::new();
    insert(&mut m, "f.hidden.weight", random_tensor(rng, c, c, 0.8));
    insert(&mut m, "f.hidden.bias", random_tensor(rng, 1, c, 0.5));
    insert(&mut m, "f.class.weight", random_tensor(rng, c, classes + 1, 0.8));
    insert(&mut m, "f.class.bias", random_tensor(rng, 1, classes + 1, 0.5));
    insert(&mut m, "f.point.weight", random_tensor(rng, c, 2 * n_p, 0.8));
    insert(&mut m, "f.point.bias", random_tensor(rng, 1, 2 * n_p, 0.5));
    insert(&mut m, "z", random_tensor(rng, n, c, 1.0));
    let rp = random_tensor(rng, n, classes + 1, 1.0);
    let rx = random_tensor(rng, n, 2 * n_p, 0.1);
    let bev = BevSpec::default();
    let build = move |g: &mut Graph, b: &mut Binder<'_>| -> Result<Var> {
        let z = b.var(g, "z")?;
        let d = ffn_decode(g, b, "f", z, classes, n_p, &bev, None)?;
        let a = weighted_sum(g, d.probs, &rp);
        let p = weighted_sum(g, d.points, &rx);
        Ok(g.add(a, p))
    };
    check_named("ffn_decode", &m, &build, Directions::Random, rng, cfg)
}

/// Small pipeline configuration used by the end-to-end checks.
pub fn tiny_config(fusion: FusionConfig) -> ModelConfig {
    ModelConfig {
        channels: 8,
        heads: 2,
        samples: 2,
        actor_queries: 12,
        map_instances: 6,
        n_p: 6,
        n_classes: 3,
        visual_channels: 3,
        bev: BevSpec::new([-6.0, 6.0], [-10.0, 10.0], 1.0).expect("valid spec"),
        fusion,
    }
}

fn check_pipeline(
    fusion: FusionConfig,
    kind: Directions,
    seed: u64,
    rng: &mut CounterRng,
    cfg: GradcheckConfig,
) -> Result<CheckResult> {
    let mc = tiny_config(fusion);
    let synth = SynthConfig {
        seed,
        bev: mc.bev,
        visual_resolution: Some(2.0),
        n_p: mc.n_p,
        train_scenes: 1,
        test_scenes: 0,
        actors: [2, 4],
        ..SynthConfig::default()
    };
    let scene = generate_synthetic(&synth)?.train.remove(0);
    let input = SceneInput::from_scene(&scene, &mc)?;
    let targets = scene_targets(&scene, VirtualTargetKind::LaneEdge, 3.5, mc.n_p, mc.actor_queries)?;
    let mut params = ModelParams::init(mc, seed)?;
    // give the zero-initialized offset and logit heads some spread
    for (n, t) in params.tensors.iter_mut() {
        if n.contains(".offset.") || n.contains(".attn.weight") || n.contains(".attn.bias") {
            for v in &mut t.data {
                *v = 0.3 * rng.uniform(-1.0, 1.0);
            }
        }
    }
    let loss_cfg = LossConfig::default();
    let plans = {
        let mut g = Graph::new();
        let mut b = Binder::frozen(&params.tensors);
        let f = build_forward(&mut g, &mut b, &mc, &input)?;
        pipeline_loss(&mut g, f, &targets, &loss_cfg, None)?.plans
    };
    let build = |g: &mut Graph, b: &mut Binder<'_>| -> Result<Var> {
        let f = build_forward(g, b, &mc, &input)?;
        Ok(pipeline_loss(g, f, &targets, &loss_cfg, Some(&plans))?.total)
    };
    let label = format!(
        "pipeline[{}/{}/{}]{}",
        fusion.mode.as_str(),
        fusion.attention.as_str(),
        fusion.modeling.as_str(),
        if kind == Directions::Coordinates { " single params" } else { "" }
    );
    check_named(&label, &params.tensors, &build, kind, rng, cfg)
}

/// Runs every check: the four layer ops and the end-to-end loss under
/// several fusion configurations.
pub fn run_suite(seed: u64, cfg: GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = CounterRng::new(seed, 0x6c_6563_6b);
    let mut results = vec![
        check_bilinear(&mut rng, cfg)?,
        check_deform(&mut rng, cfg)?,
        check_cross(&mut rng, cfg)?,
        check_ffn(&mut rng, cfg)?,
    ];
    let default = FusionConfig::default();
    results.push(check_pipeline(default, Directions::Random, seed, &mut rng, cfg)?);
    results.push(check_pipeline(default, Directions::Coordinates, seed, &mut rng, cfg)?);
    let variants = [
        (FusionMode::In, AttentionKind::Layerwise, TrajectoryModeling::BackboneEncoder),
        (FusionMode::Pre, AttentionKind::Deformable, TrajectoryModeling::BackboneOnly),
        (FusionMode::PreProjection, AttentionKind::Deformable, TrajectoryModeling::BackboneActorQuery),
        (FusionMode::None, AttentionKind::Deformable, TrajectoryModeling::BackboneActorQuery),
    ];
    for (mode, attention, modeling) in variants {
        let f = FusionConfig { mode, attention, modeling };
        results.push(check_pipeline(f, Directions::Random, seed, &mut rng, cfg)?);
    }
    Ok(GradcheckReport { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = run_suite(1, GradcheckConfig::default()).unwrap();
        assert!(report.all_passed(), "{}", report.summary());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a deliberately inconsistent op: value x^2, graph gradient of x
        let mut m = BTreeMap::new();
        insert(&mut m, "x", Tensor::new(1, 3, vec![0.5, -1.0, 2.0]));
        let build = |g: &mut Graph, b: &mut Binder<'_>| -> Result<Var> {
            let x = b.var(g, "x")?;
            let sq = g.mul(x, x);
            let half = g.scale(sq, 0.5);
            let s = g.sum_all(half);
            // value: sum(x^2)/2 + sum(x^2)/2 via a constant copy, gradient only from one half
            let c = g.constant(g.value(sq).clone());
            let ch = g.scale(c, 0.5);
            let cs = g.sum_all(ch);
            Ok(g.add(s, cs))
        };
        let mut rng = CounterRng::new(0, 0);
        let r = check_named("wrong", &m, &build, Directions::Random, &mut rng, GradcheckConfig::default()).unwrap();
        assert!(!r.passed);
    }
}
