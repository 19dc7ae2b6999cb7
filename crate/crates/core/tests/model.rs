use std::sync::Arc;

use fan_core::autodiff::{Eager, Tape};
use fan_core::model::{ChannelAttention, FanConfig, FanModel, NonLocal, ParamBuilder, Rdb};
use fan_core::tensor::{attention, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv_count(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

fn rdb_count(c0: usize, layers: usize, g: usize) -> usize {
    (1..=layers).map(|i| (c0 + (i - 1) * g) * g * 9 + g).sum::<usize>() + (c0 + layers * g) * c0 + c0
}

fn ca_count(c: usize, r: usize) -> usize {
    conv_count(c, c / r, 1) + conv_count(c / r, c, 1)
}

fn nl_count(c: usize) -> usize {
    let i = c / 2;
    // theta, g and out carry biases; phi does not
    conv_count(c, i, 1) * 2 + c * i + conv_count(i, c, 1)
}

/// Independent tally of the whole network from its layer list.
fn fan_count(cfg: &FanConfig) -> usize {
    let ks = [7, 5, 3, 3];
    let mut total = 0;
    let mut cin = 3;
    for (i, &c) in cfg.branch_channels.iter().enumerate() {
        total += conv_count(cin, c, ks[i]);
        cin = c;
    }
    for (i, &c) in cfg.branch_channels.iter().enumerate() {
        let mut per_rdb = rdb_count(c, cfg.rdb_layers, cfg.rdb_growth);
        if cfg.ca_enabled {
            per_rdb += ca_count(c, cfg.ca_reduction);
        }
        let block = cfg.rdbs_per_cagrdb * per_rdb + conv_count(cfg.rdbs_per_cagrdb * c, c, 1);
        total += cfg.cagrdbs_per_branch * block;
        total += i * conv_count(c, 4 * c, 3);
    }
    let cat: usize = cfg.branch_channels.iter().sum();
    if cfg.nl_enabled {
        total += nl_count(cat);
    }
    let f = cfg.fusion_channels;
    total + conv_count(cat, f, 3) + 2 * conv_count(f, 4 * f, 3) + conv_count(f, 3, 3)
}

fn small(branches: usize) -> FanConfig {
    FanConfig {
        cagrdbs_per_branch: 1,
        rdbs_per_cagrdb: 2,
        rdb_layers: 3,
        rdb_growth: 8,
        branch_channels: vec![16; branches],
        ca_reduction: 2,
        fusion_channels: 8,
        ..FanConfig::fan(branches)
    }
}

#[test]
fn single_conv_has_84_parameters() {
    let mut b = ParamBuilder::<f64>::new(0, 0.2);
    b.conv("c", 3, 3, 3, 1, 1.0);
    assert_eq!(b.finish().numel(), 84);
}

#[test]
fn rdb_count_matches_closed_form() {
    for (c0, layers, g) in [(64, 8, 32), (128, 8, 32), (16, 3, 8), (5, 1, 2)] {
        let mut b = ParamBuilder::<f64>::new(0, 0.2);
        Rdb::build(&mut b, "rdb", c0, layers, g);
        assert_eq!(b.finish().numel(), rdb_count(c0, layers, g), "c0 {c0} layers {layers} g {g}");
    }
}

#[test]
fn network_counts_match_layer_tally() {
    let mut configs: Vec<FanConfig> = (1..=4).map(FanConfig::fan).collect();
    configs.push(FanConfig::reduced());
    for ca in [false, true] {
        for nl in [false, true] {
            configs.push(FanConfig { ca_enabled: ca, nl_enabled: nl, ..FanConfig::fan(3) });
        }
    }
    for cfg in configs {
        let m = FanModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.count_params(), fan_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn ablation_differences_are_the_module_sizes() {
    let with = |ca, nl| FanModel::<f32>::new(FanConfig { ca_enabled: ca, nl_enabled: nl, ..FanConfig::fan(3) }, 0)
        .unwrap()
        .count_params();
    let base = with(false, false);
    let ca: usize = [64, 128, 128].iter().map(|&c| 4 * 3 * ca_count(c, 16)).sum();
    assert_eq!(with(true, false) - base, ca);
    assert_eq!(with(false, true) - base, nl_count(320));
    assert_eq!(with(true, true) - base, ca + nl_count(320));
    assert!(base < with(true, false));
    assert!(with(true, false) < with(false, true));
    assert!(with(false, true) < with(true, true));
}

#[test]
fn branch_increments_with_fixed_growth() {
    let counts: Vec<usize> = (1..=4).map(|b| fan_count(&FanConfig::fan(b))).collect();
    let m = FanModel::<f32>::new(FanConfig::fan(2), 0).unwrap();
    let under = |p: &str| -> usize { m.params().ids_under(p).iter().map(|&id| m.params().get(id).numel()).sum() };
    let (b0, b1) = (under("branch0"), under("branch1"));
    assert!(b1 > b0);
    // with the growth rate held at 32 the dense layers scale linearly in the
    // branch width, so a 128-channel branch costs about 1.4x a 64-channel one
    let ratio = b1 as f64 / b0 as f64;
    assert!(ratio > 1.3 && ratio < 1.6, "branch1 / branch0 = {ratio}");
    for w in counts.windows(3) {
        assert!(w[2] - w[1] > w[1] - w[0]);
    }
}

#[test]
fn channel_gate_matches_scalar_oracle() {
    let (c, r) = (8, 2);
    let mut b = ParamBuilder::<f64>::new(11, 0.2);
    let ca = ChannelAttention::build(&mut b, "ca", c, r).unwrap();
    let mut store = b.finish();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for id in [ca.down.bias.unwrap(), ca.up.bias.unwrap()] {
        let s = store.get(id).shape();
        store.set(id, Tensor::rand_uniform(s, -0.5, 0.5, &mut rng)).unwrap();
    }
    let x = Tensor::<f64>::rand_uniform(Shape::new(2, c, 5, 3), -2.0, 2.0, &mut rng);
    let mut ex = Eager::new(store.tensors());
    let y = ca.forward(&mut ex, &Arc::new(x.clone())).unwrap();

    let (wd, bd) = (store.get(ca.down.weight).data(), store.get(ca.down.bias.unwrap()).data());
    let (wu, bu) = (store.get(ca.up.weight).data(), store.get(ca.up.bias.unwrap()).data());
    let m = c / r;
    let mut worst = 0.0f64;
    for n in 0..2 {
        let pooled: Vec<f64> = (0..c).map(|ch| x.plane(n, ch).iter().sum::<f64>() / 15.0).collect();
        let hidden: Vec<f64> =
            (0..m).map(|j| (bd[j] + (0..c).map(|k| wd[j * c + k] * pooled[k]).sum::<f64>()).max(0.0)).collect();
        for ch in 0..c {
            let u = bu[ch] + (0..m).map(|j| wu[ch * m + j] * hidden[j]).sum::<f64>();
            let gate = 1.0 / (1.0 + (-u).exp());
            for (a, b) in x.plane(n, ch).iter().zip(y.plane(n, ch)) {
                worst = worst.max((a * gate - b).abs());
                assert!(b.abs() <= a.abs());
            }
        }
    }
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn channel_gate_with_zero_expansion_halves_input() {
    let mut b = ParamBuilder::<f64>::new(3, 0.2);
    let ca = ChannelAttention::build(&mut b, "ca", 8, 4).unwrap();
    let mut store = b.finish();
    for id in ca.up.ids() {
        store.zero(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::rand_uniform(Shape::new(1, 8, 4, 4), -3.0, 3.0, &mut rng);
    let mut ex = Eager::new(store.tensors());
    let y = ca.forward(&mut ex, &Arc::new(x.clone())).unwrap();
    for (a, b) in x.data().iter().zip(y.data()) {
        assert_eq!(a * 0.5, *b);
    }
}

#[test]
fn non_local_matches_dense_oracle() {
    let c = 4;
    let mut b = ParamBuilder::<f64>::new(9, 0.2);
    let nl = NonLocal::build(&mut b, "nl", c);
    let mut store = b.finish();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for id in [nl.theta.bias.unwrap(), nl.g.bias.unwrap(), nl.out.bias.unwrap()] {
        let s = store.get(id).shape();
        store.set(id, Tensor::rand_uniform(s, -0.5, 0.5, &mut rng)).unwrap();
    }
    let x = Tensor::<f64>::rand_uniform(Shape::new(1, c, 2, 2), -1.0, 1.0, &mut rng);
    let mut ex = Eager::new(store.tensors());
    let y = nl.forward(&mut ex, &Arc::new(x.clone())).unwrap();

    let inner = c / 2;
    let px = |i: usize| -> Vec<f64> { (0..c).map(|ch| x.at(0, ch, i / 2, i % 2)).collect() };
    let proj = |conv: &fan_core::model::Conv, v: &[f64], rows: usize| -> Vec<f64> {
        let w = store.get(conv.weight).data();
        (0..rows)
            .map(|o| {
                let bias = conv.bias.map_or(0.0, |id| store.get(id).data()[o]);
                bias + v.iter().enumerate().map(|(k, a)| w[o * v.len() + k] * a).sum::<f64>()
            })
            .collect()
    };
    let th: Vec<Vec<f64>> = (0..4).map(|i| proj(&nl.theta, &px(i), inner)).collect();
    let ph: Vec<Vec<f64>> = (0..4).map(|i| proj(&nl.phi, &px(i), inner)).collect();
    let gv: Vec<Vec<f64>> = (0..4).map(|i| proj(&nl.g, &px(i), inner)).collect();
    let mut worst = 0.0f64;
    for i in 0..4 {
        let logits: Vec<f64> = (0..4).map(|j| th[i].iter().zip(&ph[j]).map(|(a, b)| a * b).sum()).collect();
        let top = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        let att: Vec<f64> = (0..inner).map(|k| (0..4).map(|j| e[j] / z * gv[j][k]).sum()).collect();
        let out = proj(&nl.out, &att, c);
        for ch in 0..c {
            worst = worst.max((x.at(0, ch, i / 2, i % 2) + out[ch] - y.at(0, ch, i / 2, i % 2)).abs());
        }
    }
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4, 5), -4.0, 4.0, &mut rng);
    let p = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4, 5), -4.0, 4.0, &mut rng);
    let g = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4, 5), -1.0, 1.0, &mut rng);
    let (_, a) = attention(&t, &p, &g, true).unwrap();
    let a = a.unwrap();
    assert_eq!(a.shape(), Shape::new(2, 1, 20, 20));
    for n in 0..2 {
        for row in a.plane(n, 0).chunks(20) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn extractor_shapes() {
    let m = FanModel::<f32>::new(FanConfig::fan(3), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::rand_uniform(Shape::new(2, 3, 196, 196), 0.0, 1.0, &mut rng);
    let maps = m.hfe_forward(&x).unwrap();
    let shapes: Vec<Shape> = maps.iter().map(|t| t.shape()).collect();
    assert_eq!(
        shapes,
        [Shape::new(2, 64, 196, 196), Shape::new(2, 128, 98, 98), Shape::new(2, 128, 49, 49)]
    );
    let bad = Tensor::<f32>::zeros(Shape::new(1, 3, 22, 22));
    assert!(m.forward(&bad).is_err());
}

#[test]
fn forward_upscales_by_four() {
    for branches in 1..=4 {
        let m = FanModel::<f32>::new(small(branches), 1).unwrap();
        let side = 8 * m.config().input_multiple();
        let x = Tensor::<f32>::full(Shape::new(1, 3, side, side), 0.5);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 4 * side, 4 * side));
        assert!(y.is_finite());
    }
    let m = FanModel::<f32>::new(FanConfig::reduced(), 1).unwrap();
    let y = m.forward(&Tensor::zeros(Shape::new(1, 3, 48, 48))).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 3, 192, 192));
}

#[test]
fn batch_items_are_independent() {
    let m = FanModel::<f64>::new(small(3), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 12, 16), 0.0, 1.0, &mut rng);
    let b = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 12, 16), 0.0, 1.0, &mut rng);
    let both = m.forward(&Tensor::stack(&[a.clone(), b.clone()]).unwrap()).unwrap();
    let ya = m.forward(&a).unwrap();
    let yb = m.forward(&b).unwrap();
    assert!(both.batch_item(0).max_abs_diff(&ya) < 1e-12);
    assert!(both.batch_item(1).max_abs_diff(&yb) < 1e-12);
    assert_eq!(m.forward(&a).unwrap().data(), ya.data());
}

#[test]
fn every_parameter_receives_gradient() {
    for seed in [0, 1, 2] {
        for cfg in [small(3), FanConfig { global_bicubic_skip: true, ..small(4) }] {
            let m = FanModel::<f64>::new(cfg, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let side = 2 * m.config().input_multiple();
            let x = Tensor::<f64>::rand_uniform(Shape::new(2, 3, side, side), 0.0, 1.0, &mut rng);
            let r = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 4 * side, 4 * side), -1.0, 1.0, &mut rng);
            let mut tape = Tape::new();
            let rec = m.record(&mut tape, &x).unwrap();
            let rc = tape.constant(r);
            let prod = tape.mul(rec.output, rc).unwrap();
            let loss = tape.sum(prod);
            let grads = tape.backward(loss).unwrap();
            for (id, v) in m.params().ids().zip(&rec.params) {
                let g = grads.of(*v).unwrap();
                assert!(g.is_finite());
                assert!(
                    g.data().iter().any(|&v| v != 0.0),
                    "seed {seed}: {} has no gradient",
                    m.params().name(id)
                );
            }
        }
    }
}
