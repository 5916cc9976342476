use super::*;
use crate::dataset::SpotDataset;
use crate::hexgeom::{HexCoord, SQRT_3};
use crate::losses::LossWeights;
use crate::numerics::{finite_diff_grad, Mask};
use crate::objective::objective;
use crate::rope::{HexRope, NoRope};
use crate::synth::{generate, SynthConfig};

fn toy_data(seed: u64) -> SpotDataset {
    let cfg = SynthConfig {
        radius: 3,
        genes: vec![
            crate::synth::GenePattern::Boundary,
            crate::synth::GenePattern::Gradient,
            crate::synth::GenePattern::Sparse,
            crate::synth::GenePattern::Noise,
        ],
        token_dim: 6,
        transcriptomic_dim: 5,
        seed,
        ..SynthConfig::default()
    };
    generate(&cfg).unwrap().truncated(20)
}

fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        stages: 2,
        blocks: 1,
        dim: 12,
        heads: 2,
        radii: vec![1],
        d_in: 6,
        d_out: 8,
        genes: 4,
        d_t: 5,
        init_seed: seed,
        ..ModelConfig::default()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn layout_names_are_unique_and_contiguous() {
    let l = build_layout(&ModelConfig::default());
    let mut end = 0;
    for e in l.entries() {
        assert_eq!(e.offset, end);
        end += e.len();
    }
    assert_eq!(end, l.total());
    assert!(l.entry("s3.b2.ffn.w2").is_ok());
    assert!(l.entry("s4.b0.ln1.g").is_err());
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    for bad in [
        ModelConfig { radii: vec![1, 2], ..Default::default() },
        ModelConfig { heads: 5, ..Default::default() },
        ModelConfig { radii: vec![1, 0, 2], ..Default::default() },
        ModelConfig { mlp_depth: 0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(HexstError::Structural(_))));
    }
    assert!(Model::new(ModelConfig { pe: "sine".into(), ..Default::default() }).is_err());
}

#[test]
fn full_gradient_matches_finite_differences() {
    let data = toy_data(1);
    let model = Model::new(toy_config(2)).unwrap();
    let params = model.init_params();
    let geom = model.geometry(&data.coords).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let weights = LossWeights::default();
    let out = model.forward(&params, &data.tokens, &geom).unwrap();
    let (_, og) = objective(&out, &data, &rows, &weights, 1e-8).unwrap();
    let analytic = model.backward(&params, &out, &geom, &og).unwrap();
    let f = |x: &Tensor| -> Result<f64> {
        let p = ModelParams {
            layout: params.layout.clone(),
            values: x.data().to_vec(),
        };
        let o = model.forward(&p, &data.tokens, &geom)?;
        Ok(objective(&o, &data, &rows, &weights, 1e-8)?.0.total)
    };
    let numeric = finite_diff_grad(f, &Tensor::vector(params.values.clone()), 1e-5).unwrap();
    let worst = analytic
        .values
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn zero_and_doubled_upstream_gradients() {
    let data = toy_data(3);
    let model = Model::new(toy_config(4)).unwrap();
    let params = model.init_params();
    let geom = model.geometry(&data.coords).unwrap();
    let out = model.forward(&params, &data.tokens, &geom).unwrap();
    let zero = model.backward(&params, &out, &geom, &OutputGrads::default()).unwrap();
    assert!(zero.values.iter().all(|&v| v == 0.0));

    let rows: Vec<usize> = (0..data.len()).collect();
    let (_, og) = objective(&out, &data, &rows, &LossWeights::default(), 1e-8).unwrap();
    let g1 = model.backward(&params, &out, &geom, &og).unwrap();
    let doubled = OutputGrads {
        y_hat: og.y_hat.as_ref().map(|t| t.scale(2.0)),
        y_dev_hat: og.y_dev_hat.as_ref().map(|t| t.scale(2.0)),
        projected: og.projected.as_ref().map(|t| t.scale(2.0)),
    };
    let g2 = model.backward(&params, &out, &geom, &doubled).unwrap();
    for (a, b) in g1.values.iter().zip(&g2.values) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn single_spot_is_finite() {
    let data = toy_data(5).truncated(1);
    let model = Model::new(toy_config(6)).unwrap();
    let geom = model.geometry(&data.coords).unwrap();
    let out = model.forward(&model.init_params(), &data.tokens, &geom).unwrap();
    assert_eq!(out.y_hat.shape(), &[1, 4]);
    assert!(out.y_hat.all_finite());
}

#[test]
fn zero_gene_head_predicts_zero() {
    let data = toy_data(7);
    let model = Model::new(toy_config(8)).unwrap();
    let mut params = model.init_params();
    params.get_mut("gene.w").fill(0.0);
    params.get_mut("gene.b").fill(0.0);
    let geom = model.geometry(&data.coords).unwrap();
    let out = model.forward(&params, &data.tokens, &geom).unwrap();
    assert!(out.y_hat.data().iter().all(|&v| v == 0.0));
}

#[test]
fn lattice_translation_leaves_predictions_unchanged() {
    let data = generate(&SynthConfig { radius: 5, token_dim: 6, seed: 9, ..Default::default() }).unwrap();
    let cfg = ModelConfig {
        stages: 3,
        blocks: 3,
        radii: vec![1, 2],
        genes: data.gene_count(),
        ..toy_config(10)
    };
    for pe in ["hexrope", "rope2d"] {
        let model = Model::new(ModelConfig { pe: pe.into(), ..cfg.clone() }).unwrap();
        let params = model.init_params();
        let run = |d: &SpotDataset| {
            let geom = model.geometry(&d.coords).unwrap();
            model.forward(&params, &d.tokens, &geom).unwrap().y_hat
        };
        let base = run(&data);
        for (dx, dy) in [(1.0, 0.0), (0.0, SQRT_3), (3.7, -12.1)] {
            let moved = run(&data.translated(dx, dy));
            let diff = base.data().iter().zip(moved.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-9, "{pe} ({dx}, {dy}): {diff}");
        }
    }
}

#[test]
fn permuting_spots_permutes_outputs() {
    let data = generate(&SynthConfig { radius: 4, token_dim: 6, seed: 11, ..Default::default() }).unwrap();
    let cfg = ModelConfig { genes: data.gene_count(), stages: 3, blocks: 2, radii: vec![1, 2], ..toy_config(12) };
    let model = Model::new(cfg).unwrap();
    let params = model.init_params();
    let n = data.len();
    // anchor stays first; the rest is reversed
    let perm: Vec<usize> = std::iter::once(0).chain((1..n).rev()).collect();
    let permuted = SpotDataset::new(
        perm.iter().map(|&i| data.spot_ids[i].clone()).collect(),
        perm.iter().map(|&i| data.coords[i]).collect(),
        data.genes.clone(),
        data.tokens.select_rows(&perm),
        data.expression.select_rows(&perm),
        None,
    )
    .unwrap();
    let a = model.forward(&params, &data.tokens, &model.geometry(&data.coords).unwrap()).unwrap();
    let b = model.forward(&params, &permuted.tokens, &model.geometry(&permuted.coords).unwrap()).unwrap();
    for (r, &i) in perm.iter().enumerate() {
        for (x, y) in a.y_hat.row(i).iter().zip(b.y_hat.row(r)) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

fn block_weights(dim: usize, seed: u64) -> BlockWeights {
    let mut layout = ParamLayout::default();
    push_block_params(&mut layout, "", dim, 4 * dim);
    BlockWeights::from_params(&ModelParams::init(&layout, seed), "")
}

fn pos(q: i64, r: i64) -> SlotPosition {
    SlotPosition {
        cell_offset: HexCoord::new(q, r),
        planar: (0.0, 0.0),
    }
}

#[test]
fn single_token_attention_returns_its_value() {
    let v = Tensor::from_rows(&[vec![0.3, -1.0, 2.0, 0.5]]).unwrap();
    let q = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
    let groups = AttentionGroups::global(vec![pos(0, 0)]);
    let (o, p) = window_attention(&q, &q, &v, &groups, 2);
    assert_eq!(o, v);
    assert_eq!(p[0], vec![1.0, 1.0]);
}

#[test]
fn identical_keys_average_values() {
    let q = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.7]]).unwrap();
    let k = Tensor::from_rows(&[vec![0.4, 0.1], vec![0.4, 0.1]]).unwrap();
    let v = Tensor::from_rows(&[vec![1.0, 3.0], vec![5.0, -1.0]]).unwrap();
    let groups = AttentionGroups::global(vec![pos(0, 0), pos(0, 0)]);
    let (o, _) = window_attention(&q, &k, &v, &groups, 1);
    for i in 0..2 {
        assert!((o.get(i, 0) - 3.0).abs() < 1e-15);
        assert!((o.get(i, 1) - 1.0).abs() < 1e-15);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let data = toy_data(13);
    let model = Model::new(toy_config(14)).unwrap();
    let geom = model.geometry(&data.coords).unwrap();
    let out = model.forward(&model.init_params(), &data.tokens, &geom).unwrap();
    for cache in &out.cache.blocks {
        for p in cache.attention_weights() {
            let n = (p.len() as f64 / 2.0).sqrt() as usize;
            for row in p.chunks(n) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn empty_slots_are_never_read() {
    let dim = 12;
    let w = block_weights(dim, 15);
    let pe = HexRope::new(6, 10_000.0).unwrap();
    let slots = crate::windowing::SlotSet::new(1);
    let offsets: Vec<SlotPosition> = slots.offsets().iter().map(|c| pos(c.q, c.r)).collect();
    let occ = Mask::from_flags(vec![true, false, true, true, false, false, true]);
    let mut h = Tensor::new(vec![7, dim], (0..7 * dim).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect()).unwrap();
    let a = hexmsa_block(&h, &occ, &offsets, &w, &pe, 2, 1e-5).unwrap();
    for s in [1, 4, 5] {
        h.row_mut(s).fill(1e9);
    }
    let b = hexmsa_block(&h, &occ, &offsets, &w, &pe, 2, 1e-5).unwrap();
    assert_eq!(a, b);
    for s in [1, 4, 5] {
        assert!(a.row(s).iter().all(|&v| v == 0.0));
    }
    let none = Mask::from_flags(vec![false; 7]);
    assert!(hexmsa_block(&h, &none, &offsets, &w, &pe, 2, 1e-5).is_err());
}

#[test]
fn slot_order_does_not_matter() {
    let dim = 12;
    let w = block_weights(dim, 16);
    let pe = HexRope::new(6, 10_000.0).unwrap();
    let x = Tensor::new(vec![3, dim], (0..3 * dim).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let positions = vec![pos(0, 0), pos(1, -1), pos(-1, 0)];
    let (a, _) = block_forward(&x, &AttentionGroups::global(positions.clone()), &w, &pe, 2, 1e-5).unwrap();
    let order = [2, 0, 1];
    let xp = x.select_rows(&order);
    let pp: Vec<SlotPosition> = order.iter().map(|&i| positions[i]).collect();
    let (b, _) = block_forward(&xp, &AttentionGroups::global(pp), &w, &pe, 2, 1e-5).unwrap();
    for (r, &i) in order.iter().enumerate() {
        for (u, v) in a.row(i).iter().zip(b.row(r)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
    // without positions two tokens with equal content must agree
    let same = Tensor::new(vec![2, dim], [x.row(0), x.row(0)].concat()).unwrap();
    let (c, _) = block_forward(&same, &AttentionGroups::global(vec![pos(0, 0), pos(1, 0)]), &w, &NoRope, 2, 1e-5).unwrap();
    assert_eq!(c.row(0), c.row(1));
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let cfg = toy_config(17);
    let model = Model::new(cfg.clone()).unwrap();
    let params = model.init_params();
    let bytes = write_checkpoint(&cfg, &params).unwrap();
    let (cfg2, params2) = read_checkpoint(&bytes).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(params2, params);
    assert_eq!(write_checkpoint(&cfg2, &params2).unwrap(), bytes);
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(read_checkpoint(&wrong).unwrap_err().contains("magic"));
}

#[test]
fn square_windows_and_planar_rope_run() {
    let data = toy_data(18);
    for (window, pe) in [("square", "rope2d"), ("hex", "rope2d"), ("square", "hexrope"), ("hex", "none")] {
        let model = Model::new(ModelConfig {
            window: window.into(),
            pe: pe.into(),
            ..toy_config(19)
        })
        .unwrap();
        let geom = model.geometry(&data.coords).unwrap();
        let out = model.forward(&model.init_params(), &data.tokens, &geom).unwrap();
        assert!(out.y_hat.all_finite(), "{window}/{pe}");
    }
}
