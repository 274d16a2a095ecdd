//! The two-branch pipeline: actor branch (trajectory image backbone, actor
//! queries, virtual-element decoding) and map branch (hierarchical queries
//! over the visual BEV, actor fusion, map-element decoding).

use trajmap_core::evaluation::{PredictionSet, ScoredElement};
use trajmap_core::geometry::{MapElementClass, Point2, PointSet};
use trajmap_core::raster::rasterize;
use trajmap_core::scene::Scene;

use crate::error::{shape_err, Error, Result};
use crate::graph::Graph;
use crate::layers::{
    compose_hierarchical_queries, conv_relu, cross_attn_set, deform_attn_grid, ffn_decode, linear,
    point_prior, Binder, Decoded, Grid,
};
use crate::params::{AttentionKind, FusionMode, ModelConfig, ModelParams, TrajectoryModeling};
use crate::tensor::Tensor;

/// Network inputs of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    /// Single-channel trajectory image on the model's BEV grid.
    pub image: Grid,
    pub visual: Grid,
}

impl SceneInput {
    pub fn from_scene(scene: &Scene, cfg: &ModelConfig) -> Result<Self> {
        if scene.bev != cfg.bev {
            return Err(Error::Config(format!(
                "scene {} BEV {:?} differs from the model's {:?}",
                scene.scene_id, scene.bev, cfg.bev
            )));
        }
        let visual = scene
            .visual_bev
            .as_ref()
            .ok_or_else(|| Error::Config(format!("scene {} has no visual_bev", scene.scene_id)))?;
        let visual = Grid::from_feature_grid(visual)?;
        if visual.channels() != cfg.visual_channels {
            return Err(shape_err(format!(
                "visual_bev has {} channels, model expects {}",
                visual.channels(),
                cfg.visual_channels
            )));
        }
        let image = Grid::from_image(&rasterize(&scene.trajectories, &scene.bev))?;
        Ok(Self { image, visual })
    }
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub map: Decoded,
    pub actor: Option<Decoded>,
}

/// Unit-square centers of the cells of an `h x w` grid, cell-major.
fn cell_centers(h: usize, w: usize) -> Tensor {
    let data = (0..h * w)
        .flat_map(|i| [((i % w) as f64 + 0.5) / w as f64, ((i / w) as f64 + 0.5) / h as f64])
        .collect();
    Tensor::new(h * w, 2, data)
}

fn locations(t: &Tensor) -> Vec<[f64; 2]> {
    (0..t.rows).map(|r| [t.at(r, 0), t.at(r, 1)]).collect()
}

/// Builds the full forward pass on `g`.
pub fn build_forward(
    g: &mut Graph,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    input: &SceneInput,
) -> Result<Forward> {
    cfg.validate()?;
    if (input.image.height, input.image.width) != (cfg.bev.height(), cfg.bev.width()) {
        return Err(shape_err("trajectory image does not match the model BEV"));
    }
    let (heads, samples, n_p) = (cfg.heads, cfg.samples, cfg.n_p);

    // actor branch
    let mut actor = None;
    let mut actor_grid = None;
    let mut z_a = None;
    if cfg.has_actor_branch() {
        let x = g.constant(input.image.values.clone());
        let (f1, hw1) = conv_relu(g, b, "actor.conv1", x, (input.image.height, input.image.width))?;
        let (f_a, (ha, wa)) = conv_relu(g, b, "actor.conv2", f1, hw1)?;
        debug_assert_eq!((ha, wa), cfg.actor_grid());
        let refs = b.var(g, "actor.reference_points")?;
        let q_a = b.var(g, "actor.query")?;
        let z = match cfg.fusion.modeling {
            TrajectoryModeling::BackboneOnly => {
                let s = g.bilinear_sample(f_a, ha, wa, refs);
                g.add(q_a, s)
            }
            TrajectoryModeling::BackboneEncoder => {
                let pos = b.var(g, "actor.encoder.position")?;
                let tokens = g.add(f_a, pos);
                let enc = cross_attn_set(g, b, "actor.encoder", tokens, tokens, heads)?;
                let s = g.bilinear_sample(enc, ha, wa, refs);
                g.add(q_a, s)
            }
            TrajectoryModeling::BackboneActorQuery => {
                deform_attn_grid(g, b, "actor.attn", q_a, refs, f_a, (ha, wa), heads, samples)?
            }
        };
        let prior = g.constant(point_prior(g.value(refs), n_p));
        actor = Some(ffn_decode(g, b, "actor.ffn", z, 1, n_p, &cfg.bev, Some(prior))?);
        actor_grid = Some((f_a, ha, wa));
        z_a = Some((z, refs));
    }

    // map branch
    let inst = b.var(g, "map.instance")?;
    let pt = b.var(g, "map.point")?;
    let q_c = compose_hierarchical_queries(g, inst, pt)?;
    let refs_c = b.var(g, "map.reference_points")?;
    let (hv, wv) = (input.visual.height, input.visual.width);
    let mut grid = g.constant(input.visual.values.clone());
    if matches!(cfg.fusion.mode, FusionMode::Pre | FusionMode::PreProjection) {
        let (f_a, ha, wa) = actor_grid.expect("actor branch present");
        let centers = g.constant(cell_centers(hv, wv));
        let up = g.bilinear_sample(f_a, ha, wa, centers);
        grid = g.concat_cols(&[grid, up]);
        if cfg.fusion.mode == FusionMode::PreProjection {
            grid = linear(g, b, "prefusion.projection", grid, true)?;
        }
    }
    let z_c = deform_attn_grid(g, b, "map.attn", q_c, refs_c, grid, (hv, wv), heads, samples)?;
    let fused = match (cfg.fusion.mode, z_a) {
        (FusionMode::In, Some((z, refs_a))) => match cfg.fusion.attention {
            AttentionKind::Layerwise => cross_attn_set(g, b, "fusion", z_c, z, heads)?,
            AttentionKind::Deformable => {
                let (_, ha, wa) = actor_grid.expect("actor branch present");
                let locs = locations(g.value(refs_a));
                let splat = g.splat(z, &locs, ha, wa);
                deform_attn_grid(g, b, "fusion", z_c, refs_c, splat, (ha, wa), heads, samples)?
            }
        },
        _ => z_c,
    };
    let pooled = g.mean_row_groups(fused, n_p);
    let refs_t = g.value(refs_c).clone();
    let per_instance = Tensor::new(cfg.map_instances, 2 * n_p, refs_t.data);
    let prior = g.constant(point_prior(&per_instance, n_p));
    let map = ffn_decode(g, b, "map.ffn", pooled, cfg.n_classes, n_p, &cfg.bev, Some(prior))?;
    debug_assert_eq!(g.shape(map.probs), (cfg.map_instances, cfg.n_classes + 1));
    Ok(Forward { map, actor })
}

/// Head outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub map_probs: Tensor,
    pub map_points: Tensor,
    pub actor_probs: Option<Tensor>,
    pub actor_points: Option<Tensor>,
}

/// Inference-only forward pass.
pub fn forward_pipeline(params: &ModelParams, input: &SceneInput) -> Result<Outputs> {
    let mut g = Graph::new();
    let mut b = Binder::frozen(&params.tensors);
    let f = build_forward(&mut g, &mut b, &params.config, input)?;
    Ok(Outputs {
        map_probs: g.value(f.map.probs).clone(),
        map_points: g.value(f.map.points).clone(),
        actor_probs: f.actor.map(|a| g.value(a.probs).clone()),
        actor_points: f.actor.map(|a| g.value(a.points).clone()),
    })
}

/// Map predictions as scored elements: the class is the most probable
/// foreground class and the score its probability.
pub fn map_predictions(scene_id: &str, out: &Outputs) -> Result<PredictionSet> {
    let k = out.map_probs.cols - 1;
    let mut elements = Vec::with_capacity(out.map_probs.rows);
    for i in 0..out.map_probs.rows {
        let row = &out.map_probs.row(i)[..k];
        let (best, &score) = row
            .iter()
            .enumerate()
            .fold((0, &row[0]), |acc, (j, p)| if *p > *acc.1 { (j, p) } else { acc });
        let class = MapElementClass::from_index(best)
            .ok_or_else(|| Error::Inconsistent(format!("class index {best}")))?;
        let pts = out.map_points.row(i).chunks(2).map(|c| Point2::new(c[0], c[1])).collect();
        elements.push(ScoredElement {
            class,
            score,
            points: PointSet::new(pts, class.kind()),
        });
    }
    Ok(PredictionSet {
        scene_id: scene_id.to_string(),
        elements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::FusionConfig;
    use trajmap_core::raster::BevSpec;
    use trajmap_core::scene::{generate_synthetic, SynthConfig};

    fn tiny(mode: FusionMode, attention: AttentionKind, modeling: TrajectoryModeling) -> ModelConfig {
        ModelConfig {
            channels: 8,
            samples: 2,
            actor_queries: 6,
            map_instances: 4,
            n_p: 6,
            bev: BevSpec::new([-6.0, 6.0], [-10.0, 10.0], 1.0).unwrap(),
            fusion: FusionConfig { mode, attention, modeling },
            ..ModelConfig::default()
        }
    }

    fn scene(cfg: &ModelConfig) -> Scene {
        let s = SynthConfig {
            bev: cfg.bev,
            visual_resolution: Some(2.0),
            n_p: cfg.n_p,
            train_scenes: 1,
            test_scenes: 0,
            ..SynthConfig::default()
        };
        generate_synthetic(&s).unwrap().train.remove(0)
    }

    #[test]
    fn every_config_runs_and_respects_box() {
        for &mode in FusionMode::ALL {
            for &att in AttentionKind::ALL {
                for &m in TrajectoryModeling::ALL {
                    let cfg = tiny(mode, att, m);
                    let p = ModelParams::init(cfg, 1).unwrap();
                    let input = SceneInput::from_scene(&scene(&cfg), &cfg).unwrap();
                    let out = forward_pipeline(&p, &input).unwrap();
                    for i in 0..out.map_probs.rows {
                        assert!((out.map_probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                    for (k, v) in out.map_points.data.iter().enumerate() {
                        let r = if k % 2 == 0 { cfg.bev.x_range } else { cfg.bev.y_range };
                        assert!(*v >= r[0] && *v <= r[1]);
                    }
                    assert_eq!(out.actor_probs.is_some(), mode != FusionMode::None);
                    assert_eq!(out, forward_pipeline(&p, &input).unwrap());
                }
            }
        }
    }

    fn with_map_params_from(mut p: ModelParams, base: &ModelParams) -> ModelParams {
        for (n, t) in &base.tensors {
            if n.starts_with("map.") {
                p.tensors.insert(n.clone(), t.clone());
            }
        }
        p
    }

    #[test]
    fn zero_fusion_value_matches_no_fusion() {
        for &att in AttentionKind::ALL {
            let base_cfg = tiny(FusionMode::None, att, TrajectoryModeling::BackboneActorQuery);
            let base = ModelParams::init(base_cfg, 5).unwrap();
            let cfg = tiny(FusionMode::In, att, TrajectoryModeling::BackboneActorQuery);
            let mut p = with_map_params_from(ModelParams::init(cfg, 9).unwrap(), &base);
            for n in ["fusion.value.weight", "fusion.value.bias"] {
                p.get_mut(n).unwrap().data.fill(0.0);
            }
            let input = SceneInput::from_scene(&scene(&cfg), &cfg).unwrap();
            let a = forward_pipeline(&base, &input).unwrap();
            let b = forward_pipeline(&p, &input).unwrap();
            assert_eq!(a.map_probs, b.map_probs);
            assert_eq!(a.map_points, b.map_points);
        }
    }

    #[test]
    fn zero_actor_projection_matches_no_fusion() {
        let base_cfg = tiny(FusionMode::None, AttentionKind::Deformable, TrajectoryModeling::BackboneOnly);
        let base = ModelParams::init(base_cfg, 5).unwrap();
        let cfg = tiny(FusionMode::PreProjection, AttentionKind::Deformable, TrajectoryModeling::BackboneOnly);
        let mut p = with_map_params_from(ModelParams::init(cfg, 9).unwrap(), &base);
        let w = p.get_mut("prefusion.projection.weight").unwrap();
        for r in cfg.visual_channels..w.rows {
            for c in 0..w.cols {
                w.set(r, c, 0.0);
            }
        }
        let input = SceneInput::from_scene(&scene(&cfg), &cfg).unwrap();
        let a = forward_pipeline(&base, &input).unwrap();
        let b = forward_pipeline(&p, &input).unwrap();
        assert_eq!(a.map_probs, b.map_probs);
        assert_eq!(a.map_points, b.map_points);
    }

    #[test]
    fn bev_mismatch_is_an_error() {
        let cfg = tiny(FusionMode::In, AttentionKind::Layerwise, TrajectoryModeling::BackboneOnly);
        let mut s = scene(&cfg);
        s.bev.resolution = 0.5;
        assert!(SceneInput::from_scene(&s, &cfg).is_err());
    }
}
