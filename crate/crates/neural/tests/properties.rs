use std::collections::BTreeMap;

use proptest::prelude::*;

use trajmap_core::scene::{generate_synthetic, SynthConfig};
use trajmap_neural::graph::Graph;
use trajmap_neural::gradcheck::tiny_config;
use trajmap_neural::layers::{cross_attn_set, deform_attn_grid, Binder};
use trajmap_neural::model::{forward_pipeline, SceneInput};
use trajmap_neural::params::{AttentionKind, FusionConfig, FusionMode, ModelParams, TrajectoryModeling};
use trajmap_neural::tensor::Tensor;

fn tensor(rows: usize, cols: usize, v: &[f64]) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|i| v[i % v.len()] * (1.0 + (i / v.len()) as f64 * 0.1)).collect())
}

fn reversed_rows(t: &Tensor) -> Tensor {
    let data = (0..t.rows).rev().flat_map(|r| t.data[r * t.cols..(r + 1) * t.cols].to_vec()).collect();
    Tensor::new(t.rows, t.cols, data)
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 7..23)
}

fn deform_params(c: usize, c_in: usize, heads: usize, samples: usize, v: &[f64]) -> BTreeMap<String, Tensor> {
    let hk = heads * samples;
    BTreeMap::from([
        ("d.offset.weight".to_string(), tensor(c, 2 * hk, v)),
        ("d.offset.bias".to_string(), tensor(1, 2 * hk, &v[1..])),
        ("d.attn.weight".to_string(), tensor(c, hk, &v[2..])),
        ("d.attn.bias".to_string(), tensor(1, hk, &v[3..])),
        ("d.value.weight".to_string(), tensor(c_in, c, &v[4..])),
        ("d.value.bias".to_string(), tensor(1, c, &v[5..])),
        ("d.output.weight".to_string(), tensor(c, c, &v[6..])),
    ])
}

fn run_deform(params: &BTreeMap<String, Tensor>, q: Tensor, refs: Tensor, grid: Tensor) -> Tensor {
    let mut g = Graph::new();
    let mut b = Binder::frozen(params);
    let (q, refs, grid) = (g.constant(q), g.constant(refs), g.constant(grid));
    let out = deform_attn_grid(&mut g, &mut b, "d", q, refs, grid, (5, 6), 2, 3).unwrap();
    g.value(out).clone()
}

fn run_cross(params: &BTreeMap<String, Tensor>, q: Tensor, kv: Tensor) -> Tensor {
    let mut g = Graph::new();
    let mut b = Binder::frozen(params);
    let (q, kv) = (g.constant(q), g.constant(kv));
    let out = cross_attn_set(&mut g, &mut b, "x", q, kv, 2).unwrap();
    g.value(out).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deform_attention_is_row_equivariant(v in values(), w in values(), r in prop::collection::vec(0.0..1.0f64, 8)) {
        let params = deform_params(4, 3, 2, 3, &v);
        let q = tensor(4, 4, &w);
        let refs = Tensor::new(4, 2, r);
        let grid = tensor(30, 3, &w[2..]);
        let out = run_deform(&params, q.clone(), refs.clone(), grid.clone());
        let rev = run_deform(&params, reversed_rows(&q), reversed_rows(&refs), grid);
        prop_assert_eq!(reversed_rows(&out), rev);
    }

    #[test]
    fn cross_attention_ignores_key_order(v in values(), w in values()) {
        let params = BTreeMap::from([
            ("x.query.weight".to_string(), tensor(4, 4, &v)),
            ("x.key.weight".to_string(), tensor(5, 4, &v[1..])),
            ("x.value.weight".to_string(), tensor(5, 4, &v[2..])),
            ("x.value.bias".to_string(), tensor(1, 4, &v[3..])),
            ("x.output.weight".to_string(), tensor(4, 4, &v[4..])),
        ]);
        let q = tensor(3, 4, &w);
        let kv = tensor(6, 5, &w[1..]);
        let a = run_cross(&params, q.clone(), kv.clone());
        let b = run_cross(&params, q, reversed_rows(&kv));
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn pipeline_outputs_are_distributions_inside_the_box(seed in any::<u64>(), mode in 0usize..4, deformable in any::<bool>()) {
        let fusion = FusionConfig {
            mode: [FusionMode::None, FusionMode::Pre, FusionMode::PreProjection, FusionMode::In][mode],
            attention: if deformable { AttentionKind::Deformable } else { AttentionKind::Layerwise },
            modeling: TrajectoryModeling::BackboneActorQuery,
        };
        let cfg = tiny_config(fusion);
        let corpus = generate_synthetic(&SynthConfig {
            seed,
            train_scenes: 1,
            test_scenes: 0,
            bev: cfg.bev,
            ..SynthConfig::default()
        }).unwrap();
        let params = ModelParams::init(cfg, seed).unwrap();
        let input = SceneInput::from_scene(&corpus.train[0], &cfg).unwrap();
        let out = forward_pipeline(&params, &input).unwrap();
        for row in out.map_probs.data.chunks(out.map_probs.cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
        for xy in out.map_points.data.chunks(2) {
            prop_assert!(cfg.bev.x_range[0] <= xy[0] && xy[0] <= cfg.bev.x_range[1]);
            prop_assert!(cfg.bev.y_range[0] <= xy[1] && xy[1] <= cfg.bev.y_range[1]);
        }
    }
}
