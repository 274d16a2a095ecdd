//! Toy training: mini-batch gradient descent with optional momentum and
//! global-norm clipping, bitwise reproducible for a fixed seed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use trajmap_core::losses::LossConfig;
use trajmap_core::rng::CounterRng;
use trajmap_core::scene::Scene;
use trajmap_core::targets::VirtualTargetKind;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::Binder;
use crate::loss::{pipeline_loss, scene_targets, SceneTargets};
use crate::model::{build_forward, SceneInput};
use crate::params::{is_frozen, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Whether the actor branch trains alongside the map branch or first on
/// its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every step minimizes `L_map + L_actor`.
    Joint,
    /// The first `pretrain_steps` minimize `L_actor` alone; the remaining
    /// steps minimize `L_map` with the actor branch frozen.
    PretrainThenFinetune { pretrain_steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Rescale the batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
    pub target_kind: VirtualTargetKind,
    pub lane_width: f64,
    pub loss: LossConfig,
    /// Run per-scene forward/backward on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 4,
            clip_norm: Some(5.0),
            schedule: Schedule::Joint,
            target_kind: VirtualTargetKind::LaneEdge,
            lane_width: trajmap_core::targets::DEFAULT_LANE_WIDTH,
            loss: LossConfig::default(),
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        if let Schedule::PretrainThenFinetune { pretrain_steps } = self.schedule {
            if pretrain_steps > self.steps {
                return bad("pretraining steps exceed total steps");
            }
        }
        Ok(())
    }
}

/// Mean batch losses at one step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    /// The optimized objective.
    pub objective: f64,
    pub map: f64,
    pub actor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: Vec<StepLog>,
    /// Mean `L_map + L_actor` over the whole dataset before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// A scene prepared for training.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: SceneInput,
    pub targets: SceneTargets,
}

pub fn prepare(scenes: &[Scene], model: &ModelConfig, cfg: &TrainConfig) -> Result<Vec<Example>> {
    scenes
        .iter()
        .map(|s| {
            Ok(Example {
                input: SceneInput::from_scene(s, model)?,
                targets: scene_targets(s, cfg.target_kind, cfg.lane_width, model.n_p, model.actor_queries)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Joint,
    ActorOnly,
    MapOnly,
}

struct SceneGrad {
    map: f64,
    actor: f64,
    objective: f64,
    grads: BTreeMap<String, Tensor>,
}

fn scene_grad(params: &ModelParams, ex: &Example, loss_cfg: &LossConfig, phase: Phase) -> Result<SceneGrad> {
    let mut g = Graph::new();
    let mut b = Binder::trainable(&params.tensors);
    let f = build_forward(&mut g, &mut b, &params.config, &ex.input)?;
    let l = pipeline_loss(&mut g, f, &ex.targets, loss_cfg, None)?;
    let actor = l.actor.map_or(0.0, |a| a.total);
    let (objective_var, objective) = match (phase, l.actor_var) {
        (Phase::ActorOnly, Some(v)) => (v, actor),
        (Phase::MapOnly, _) | (Phase::ActorOnly, None) => (l.map_var, l.map.total),
        (Phase::Joint, _) => (l.total, g.value(l.total).data[0]),
    };
    let gr = g.backward(objective_var);
    let grads = b
        .bound()
        .iter()
        .filter_map(|(n, &v)| gr.get(v).map(|t| (n.clone(), t.clone())))
        .filter(|(n, _)| !(phase == Phase::MapOnly && n.starts_with("actor.")))
        .collect();
    Ok(SceneGrad { map: l.map.total, actor, objective, grads })
}

/// Mean `L_map + L_actor` over `examples`.
pub fn dataset_loss(params: &ModelParams, examples: &[Example], loss_cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let mut g = Graph::new();
        let mut b = Binder::frozen(&params.tensors);
        let f = build_forward(&mut g, &mut b, &params.config, &ex.input)?;
        let l = pipeline_loss(&mut g, f, &ex.targets, loss_cfg, None)?;
        total += g.value(l.total).data[0];
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Scene indices of every step: consecutive batches of a seeded shuffle,
/// reshuffled per epoch.
fn batches(n: usize, batch: usize, steps: usize, seed: u64) -> Vec<Vec<usize>> {
    let batch = batch.min(n);
    let mut out = Vec::with_capacity(steps);
    let mut epoch = 0u64;
    let mut order: Vec<usize> = Vec::new();
    let mut pos = 0;
    while out.len() < steps {
        if pos + batch > order.len() {
            order = (0..n).collect();
            CounterRng::new(seed, 0xba7c_0000 + epoch).shuffle(&mut order);
            epoch += 1;
            pos = 0;
        }
        out.push(order[pos..pos + batch].to_vec());
        pos += batch;
    }
    out
}

/// Trains from `ModelParams::init(model, seed)`.
pub fn train_toy(scenes: &[Scene], model: ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let params = ModelParams::init(model, seed)?;
    train_from(scenes, params, cfg, seed)
}

pub fn train_from(scenes: &[Scene], mut params: ModelParams, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let examples = prepare(scenes, &params.config, cfg)?;
    let initial_loss = dataset_loss(&params, &examples, &cfg.loss)?;
    let mut velocity: BTreeMap<String, Tensor> = params
        .tensors
        .iter()
        .filter(|(n, _)| !is_frozen(n))
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.rows, t.cols)))
        .collect();
    let mut curve = Vec::with_capacity(cfg.steps);
    for (step, batch) in batches(examples.len(), cfg.batch_size, cfg.steps, seed).into_iter().enumerate() {
        let phase = match cfg.schedule {
            Schedule::Joint => Phase::Joint,
            Schedule::PretrainThenFinetune { pretrain_steps } if step < pretrain_steps => Phase::ActorOnly,
            Schedule::PretrainThenFinetune { .. } => Phase::MapOnly,
        };
        let run = |&i: &usize| scene_grad(&params, &examples[i], &cfg.loss, phase);
        let per_scene: Vec<SceneGrad> = if cfg.parallel {
            batch.par_iter().map(run).collect::<Result<_>>()?
        } else {
            batch.iter().map(run).collect::<Result<_>>()?
        };
        let k = per_scene.len() as f64;
        let mut log = StepLog { step, objective: 0.0, map: 0.0, actor: 0.0 };
        let mut grad: BTreeMap<String, Tensor> = BTreeMap::new();
        // fixed summation order: batch order, then parameter name order
        for s in &per_scene {
            log.objective += s.objective / k;
            log.map += s.map / k;
            log.actor += s.actor / k;
            for (n, t) in &s.grads {
                match grad.get_mut(n) {
                    Some(acc) => acc.add_assign(t),
                    None => {
                        grad.insert(n.clone(), t.clone());
                    }
                }
            }
        }
        if !log.objective.is_finite() {
            return Err(Error::Diverged { step, value: log.objective });
        }
        let mut scale = 1.0 / k;
        if let Some(c) = cfg.clip_norm {
            let norm = grad.values().flat_map(|t| &t.data).map(|x| x * x).sum::<f64>().sqrt() * scale;
            if norm > c {
                scale *= c / norm;
            }
        }
        for (n, v) in velocity.iter_mut() {
            if phase == Phase::MapOnly && n.starts_with("actor.") {
                continue;
            }
            let g = grad.get(n);
            let p = params.get_mut(n)?;
            for i in 0..v.data.len() {
                let gi = g.map_or(0.0, |t| t.data[i] * scale);
                v.data[i] = cfg.momentum * v.data[i] + gi;
                p.data[i] -= cfg.lr * v.data[i];
            }
        }
        if params.tensors.values().any(|t| !t.is_finite()) {
            return Err(Error::Diverged { step, value: f64::NAN });
        }
        curve.push(log);
    }
    let final_loss = dataset_loss(&params, &examples, &cfg.loss)?;
    Ok(TrainOutcome { params, curve, initial_loss, final_loss })
}

/// Loss curve as tab-separated text, one line per step.
pub fn curve_to_tsv(curve: &[StepLog]) -> String {
    let mut s = String::from("step\tobjective\tmap\tactor\n");
    for l in curve {
        s.push_str(&format!("{}\t{:?}\t{:?}\t{:?}\n", l.step, l.objective, l.map, l.actor));
    }
    s
}
