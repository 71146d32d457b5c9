mod common;

use common::{rand_tensor, rng};
use dyngcn_core::graph::{normalize_adjacency, partition_spatial_configs, SkeletonLayout, TopologySet};
use dyngcn_core::learners::LearnerKind;
use dyngcn_core::model::{
    aggregated_joints, derive_bone, derive_motion, ensemble_logits, fuse, joint_aggregate, DynamicGConvLayer, DynamicGcn,
    LayerShape, Modality, ModelConfig, ProjectionP,
};
use dyngcn_core::{gradcheck, Ctx, ParamStore, Tensor};

fn chain(n: usize) -> SkeletonLayout {
    SkeletonLayout::new("chain", n, n / 2, (1..n).map(|i| (i - 1, i)).collect(), None).unwrap()
}

fn layer_cfg(learner: LearnerKind, lambda: f64) -> ModelConfig {
    ModelConfig { learner, lambda_static: lambda, ..ModelConfig::smoke() }
}

fn build_layer(
    shape: LayerShape,
    cfg: &ModelConfig,
    layout: &SkeletonLayout,
    seed: u64,
) -> (ParamStore<f64>, DynamicGConvLayer<f64>) {
    let mut store = ParamStore::new();
    let topo = TopologySet::new(layout, cfg.alpha_degree, &mut store, "l").unwrap();
    let layer = DynamicGConvLayer::new(&mut store, "l", cfg, shape, topo, &mut rng(seed)).unwrap();
    (store, layer)
}

fn shape(c_in: usize, c_out: usize, t: usize, n: usize, stride: usize) -> LayerShape {
    LayerShape { c_in, c_out, t_in: t, t_out: t.div_ceil(stride), n_in: n, n_out: n, stride }
}

fn eye_kernel(c: usize, k: usize) -> Tensor<f64> {
    Tensor::from_fn(&[c, k * c, 1, 1], |ix| if ix[1] == ix[0] { 1.0 } else { 0.0 })
}

fn set(store: &mut ParamStore<f64>, name: &str, v: Tensor<f64>) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.get_mut(id).value = v;
}

fn eval<R>(store: &mut ParamStore<f64>, f: impl FnOnce(&mut Ctx<'_, f64>) -> R) -> R {
    let mut ctx = Ctx::new(store, false);
    f(&mut ctx)
}

/// `Σ_k Σ_c W[o, kC+c] Σ_j G_k[i,j] X[b,c,t,j]` by explicit loops.
fn static_oracle(x: &Tensor<f64>, g: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let [b, c, t, n] = x.shape().try_into().unwrap();
    let (k, co) = (g.shape()[0], w.shape()[0]);
    let mut out = Tensor::zeros(&[b, co, t, n]);
    for bi in 0..b {
        for o in 0..co {
            for ti in 0..t {
                for i in 0..n {
                    let mut acc = 0.0;
                    for kk in 0..k {
                        for ci in 0..c {
                            for j in 0..n {
                                acc += w.get(&[o, kk * c + ci, 0, 0]) * g.get(&[kk, i, j]) * x.get(&[bi, ci, ti, j]);
                            }
                        }
                    }
                    out.set(&[bi, o, ti, i], acc);
                }
            }
        }
    }
    out
}

#[test]
fn static_branch_identity_topology() {
    let cfg = layer_cfg(LearnerKind::None, 1.0);
    let mut store = ParamStore::new();
    let raw = Tensor::from_fn(&[1, 5, 5], |ix| if ix[1] == ix[2] { 1.0 } else { 0.0 });
    let topo = TopologySet::from_raw_configs(&raw, cfg.alpha_degree, &mut store, "l").unwrap();
    // Mask cancels the degree scaling so the combined graph is exactly I.
    let mask = Tensor::from_fn(&[1, 5, 5], |ix| if ix[1] == ix[2] { 1.0 - topo.configs().get(ix) } else { 0.0 });
    store.get_mut(topo.mask()).value = mask;
    let layer = DynamicGConvLayer::new(&mut store, "l", &cfg, shape(3, 3, 4, 5, 1), topo, &mut rng(1)).unwrap();
    set(&mut store, "l.static.weight", eye_kernel(3, 1));
    let x = rand_tensor(&[2, 3, 4, 5], &mut rng(2));
    let y = eval(&mut store, |ctx| {
        let xv = ctx.tape.constant(x.clone());
        let y = layer.static_branch(ctx, xv).unwrap();
        ctx.tape.value(y).clone()
    });
    assert!(y.max_abs_diff(&x).unwrap() < 1e-15);
}

#[test]
fn static_branch_matches_loop_oracle() {
    for (seed, n) in [(1u64, 3usize), (2, 5), (3, 8)] {
        let layout = chain(n);
        let cfg = layer_cfg(LearnerKind::None, 1.0);
        let (mut store, layer) = build_layer(shape(3, 4, 5, n, 1), &cfg, &layout, seed);
        let raw = partition_spatial_configs(&layout);
        let mut g = Tensor::zeros(&[3, n, n]);
        for k in 0..3 {
            let slice = Tensor::new(&[n, n], raw.data()[k * n * n..(k + 1) * n * n].to_vec()).unwrap();
            let a = normalize_adjacency(&slice, cfg.alpha_degree).unwrap();
            g.data_mut()[k * n * n..(k + 1) * n * n].copy_from_slice(a.data());
        }
        let x = rand_tensor(&[2, 3, 5, n], &mut rng(seed + 10));
        let w = store.get(layer.static_kernel).value.clone();
        let y = eval(&mut store, |ctx| {
            let xv = ctx.tape.constant(x.clone());
            let y = layer.static_branch(ctx, xv).unwrap();
            ctx.tape.value(y).clone()
        });
        assert!(y.max_abs_diff(&static_oracle(&x, &g, &w)).unwrap() < 1e-5);
    }
}

#[test]
fn static_branch_is_linear_in_mask() {
    let layout = chain(4);
    let cfg = layer_cfg(LearnerKind::None, 1.0);
    let (mut store, layer) = build_layer(shape(2, 3, 3, 4, 1), &cfg, &layout, 3);
    let x = rand_tensor(&[1, 2, 3, 4], &mut rng(4));
    let m = rand_tensor(&[4, 4], &mut rng(5));
    let mut run = |scale: f64| {
        let mask = Tensor::from_fn(&[3, 4, 4], |ix| if ix[0] == 1 { scale * m.get(&ix[1..]) } else { 0.0 });
        store.get_mut(layer.topo.mask()).value = mask;
        eval(&mut store, |ctx| {
            let xv = ctx.tape.constant(x.clone());
            let y = layer.static_branch(ctx, xv).unwrap();
            ctx.tape.value(y).clone()
        })
    };
    let (base, one, two) = (run(0.0), run(1.0), run(2.0));
    for i in 0..base.numel() {
        let (c1, c2) = (one.data()[i] - base.data()[i], two.data()[i] - base.data()[i]);
        assert!((c2 - 2.0 * c1).abs() < 1e-12);
    }
}

fn dynamic(layer: &DynamicGConvLayer<f64>, store: &mut ParamStore<f64>, x: &Tensor<f64>, g: &Tensor<f64>) -> Result<Tensor<f64>, dyngcn_core::Error> {
    eval(store, |ctx| {
        let xv = ctx.tape.constant(x.clone());
        let gv = ctx.tape.constant(g.clone());
        let y = layer.dynamic_branch(ctx, xv, gv)?;
        Ok(ctx.tape.value(y).clone())
    })
}

#[test]
fn dynamic_branch_identity_and_oracle() {
    let n = 6;
    let cfg = layer_cfg(LearnerKind::Cen, 1.0);
    let (mut store, layer) = build_layer(shape(3, 3, 4, n, 1), &cfg, &chain(n), 7);
    let x = rand_tensor(&[2, 3, 4, n], &mut rng(8));
    let eye = Tensor::from_fn(&[2, n, n], |ix| if ix[1] == ix[2] { 1.0 } else { 0.0 });
    set(&mut store, "l.dynamic.weight", eye_kernel(3, 1));
    assert!(dynamic(&layer, &mut store, &x, &eye).unwrap().max_abs_diff(&x).unwrap() < 1e-15);

    // Per-sample loop oracle with a random kernel.
    let w = rand_tensor(&[5, 3, 1, 1], &mut rng(9));
    let cfg5 = layer_cfg(LearnerKind::Cen, 1.0);
    let (mut store, layer) = build_layer(shape(3, 5, 4, n, 1), &cfg5, &chain(n), 7);
    set(&mut store, "l.dynamic.weight", w.clone());
    let g = rand_tensor(&[2, n, n], &mut rng(10));
    let y = dynamic(&layer, &mut store, &x, &g).unwrap();
    for b in 0..2 {
        for o in 0..5 {
            for t in 0..4 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for c in 0..3 {
                        for j in 0..n {
                            acc += w.get(&[o, c, 0, 0]) * g.get(&[b, i, j]) * x.get(&[b, c, t, j]);
                        }
                    }
                    assert!((y.get(&[b, o, t, i]) - acc).abs() < 1e-5);
                }
            }
        }
    }

    // Swapping samples swaps outputs.
    let half = 3 * 4 * n;
    let xs = Tensor::new(x.shape(), [&x.data()[half..], &x.data()[..half]].concat()).unwrap();
    let gs = Tensor::new(g.shape(), [&g.data()[n * n..], &g.data()[..n * n]].concat()).unwrap();
    let ys = dynamic(&layer, &mut store, &xs, &gs).unwrap();
    let out_half = 5 * 4 * n;
    assert_eq!(&ys.data()[..out_half], &y.data()[out_half..]);
    assert_eq!(&ys.data()[out_half..], &y.data()[..out_half]);

    let g3 = rand_tensor(&[3, n, n], &mut rng(11));
    assert_eq!(dynamic(&layer, &mut store, &x, &g3).unwrap_err().kind(), "dimension");
}

#[test]
fn fuse_weighting() {
    let mut store = ParamStore::<f64>::new();
    let a = rand_tensor(&[2, 3], &mut rng(1));
    let b = rand_tensor(&[2, 3], &mut rng(2));
    eval(&mut store, |ctx| {
        let (av, bv) = (ctx.tape.constant(a.clone()), ctx.tape.constant(b.clone()));
        let zero = ctx.tape.constant(Tensor::zeros(&[2, 3]));
        let s1 = fuse(ctx, av, bv, 1.0).unwrap();
        let s0 = fuse(ctx, av, bv, 0.0).unwrap();
        let sl = fuse(ctx, av, bv, 0.3).unwrap();
        let sz = fuse(ctx, av, zero, 0.3).unwrap();
        for i in 0..6 {
            assert_eq!(ctx.tape.value(s1).data()[i], a.data()[i] + b.data()[i]);
            assert_eq!(ctx.tape.value(s0).data()[i], a.data()[i]);
            let d = ctx.tape.value(sl).data()[i] - ctx.tape.value(sz).data()[i];
            assert!((d - 0.3 * b.data()[i]).abs() < 1e-15);
        }
        let c = ctx.tape.constant(Tensor::zeros(&[3, 2]));
        assert!(fuse(ctx, av, c, 1.0).is_err());
    });
}

#[test]
fn layer_output_shapes() {
    let layout = chain(5);
    for (c_in, c_out, t, stride) in [(3, 8, 7, 1), (8, 8, 7, 2), (8, 16, 8, 2)] {
        let cfg = layer_cfg(LearnerKind::Cen, 1.0);
        let (mut store, layer) = build_layer(shape(c_in, c_out, t, 5, stride), &cfg, &layout, 1);
        let x = rand_tensor(&[2, c_in, t, 5], &mut rng(2));
        let y = eval(&mut store, |ctx| {
            let xv = ctx.tape.constant(x);
            let o = layer.forward(ctx, xv).unwrap();
            ctx.tape.shape(o.out).to_vec()
        });
        assert_eq!(y, vec![2, c_out, t.div_ceil(stride), 5]);
    }
    let cfg = layer_cfg(LearnerKind::Cen, 1.0);
    let mut s = shape(4, 4, 6, 5, 1);
    s.n_out = 3;
    let (mut store, layer) = build_layer(s, &cfg, &layout, 1);
    let x = rand_tensor(&[2, 4, 6, 5], &mut rng(3));
    let out = eval(&mut store, |ctx| {
        let xv = ctx.tape.constant(x);
        let o = layer.forward(ctx, xv).unwrap();
        ctx.tape.shape(o.out).to_vec()
    });
    assert_eq!(out, vec![2, 4, 6, 3]);
}

#[test]
fn zero_weights_leave_relu_of_input() {
    let cfg = layer_cfg(LearnerKind::Cen, 1.0);
    let (mut store, layer) = build_layer(shape(4, 4, 6, 5, 1), &cfg, &chain(5), 1);
    assert!(layer.shortcut.is_none());
    for p in store.params_mut() {
        if p.name.ends_with("weight") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let x = rand_tensor(&[2, 4, 6, 5], &mut rng(2));
    for training in [false, true] {
        let mut ctx = Ctx::new(&mut store, training);
        let xv = ctx.tape.constant(x.clone());
        let o = layer.forward(&mut ctx, xv).unwrap();
        let want = x.map(|v| v.max(0.0));
        assert_eq!(ctx.tape.value(o.out), &want);
    }
}

fn layer_input_grad_error(kind: LearnerKind, stride: usize, n_out: usize, seed: u64) -> f64 {
    let cfg = layer_cfg(kind, 1.0);
    let mut s = shape(3, 4, 6, 5, stride);
    s.n_out = n_out;
    let (mut store, layer) = build_layer(s, &cfg, &chain(5), seed);
    for p in store.params_mut() {
        if p.name.ends_with("bn.beta") {
            p.value = Tensor::full(p.value.shape(), 0.3);
        }
    }
    let x = rand_tensor(&[2, 3, 6, 5], &mut rng(seed + 100));
    common::grad_check(&x, seed, |t, v| {
        let mut local = store.clone();
        let mut ctx = Ctx::new(&mut local, false);
        std::mem::swap(&mut ctx.tape, t);
        let y = layer.forward(&mut ctx, v).map(|o| o.out);
        std::mem::swap(&mut ctx.tape, t);
        y
    })
}

#[test]
fn layer_gradient_matches_finite_differences() {
    for (i, kind) in [LearnerKind::Cen, LearnerKind::None, LearnerKind::NonLocal].into_iter().enumerate() {
        let err = layer_input_grad_error(kind, 1 + i % 2, if i == 0 { 3 } else { 5 }, 20 + i as u64);
        assert!(err < 1e-3, "{kind:?}: {err}");
    }
}

#[test]
fn joint_aggregation_counts_and_selection() {
    assert_eq!(aggregated_joints(25, 0.6), 15);
    assert_eq!(aggregated_joints(15, 0.6), 9);
    assert_eq!(aggregated_joints(18, 0.6), 11);
    assert_eq!(aggregated_joints(11, 0.6), 7);
    assert_eq!(aggregated_joints(1, 0.1), 1);
    let mut store = ParamStore::<f64>::new();
    let p = ProjectionP::new(&mut store, "p", 25, 15, true, &mut rng(1));
    for &v in store.get(p.matrix).value.data() {
        assert!(v.abs() <= 0.2);
    }
    store.get_mut(p.matrix).value = Tensor::from_fn(&[25, 15], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 });
    let x = rand_tensor(&[2, 3, 4, 25], &mut rng(2));
    eval(&mut store, |ctx| {
        let xv = ctx.tape.constant(x.clone());
        let y = joint_aggregate(ctx, xv, &p).unwrap();
        let y = ctx.tape.value(y);
        assert_eq!(y.shape(), &[2, 3, 4, 15]);
        for b in 0..2 {
            for c in 0..3 {
                for t in 0..4 {
                    for j in 0..15 {
                        assert_eq!(y.get(&[b, c, t, j]), x.get(&[b, c, t, j]));
                    }
                }
            }
        }
        let bad = ctx.tape.constant(Tensor::zeros(&[1, 1, 1, 24]));
        assert_eq!(joint_aggregate(ctx, bad, &p).unwrap_err().kind(), "dimension");
    });
}

fn traced(cfg: &ModelConfig, batch: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut store = ParamStore::<f32>::new();
    let model = DynamicGcn::from_config(cfg, &mut store, &mut rng(1)).unwrap();
    let shape = model.input_shape(batch);
    let x = Tensor::from_fn(&shape, |ix| ((ix[2] * 7 + ix[3] * 3 + ix[1]) % 11) as f32 * 0.1);
    let mut ctx = Ctx::new(&mut store, false);
    let xv = ctx.tape.constant(x);
    let tr = model.forward_traced(&mut ctx, xv).unwrap();
    (ctx.tape.shape(tr.logits).to_vec(), tr.layer_shapes)
}

#[test]
fn ntu_like_shape_contract() {
    let cfg = ModelConfig::ntu_like();
    let (logits, layers) = traced(&cfg, 2);
    assert_eq!(logits, vec![2, 60]);
    let joints: Vec<usize> = layers.iter().map(|s| s[3]).collect();
    assert_eq!(joints, vec![25, 25, 25, 25, 15, 15, 15, 9, 9, 9]);
    let frames: Vec<usize> = layers.iter().map(|s| s[2]).collect();
    assert_eq!(frames, vec![64, 64, 64, 64, 32, 32, 32, 16, 16, 16]);
    assert_eq!(layers.last().unwrap()[1], 256);
}

#[test]
fn kinetics_like_shape_contract() {
    let cfg = ModelConfig::kinetics_like();
    let (logits, layers) = traced(&cfg, 1);
    assert_eq!(logits, vec![1, 400]);
    let joints: Vec<usize> = layers.iter().map(|s| s[3]).collect();
    assert_eq!(joints, vec![18, 18, 18, 18, 11, 11, 11, 7, 7, 7]);
    assert_eq!(layers[9][2], 38);
}

#[test]
fn model_rejects_mismatched_input() {
    let cfg = ModelConfig::smoke();
    let mut store = ParamStore::<f32>::new();
    let model = DynamicGcn::from_config(&cfg, &mut store, &mut rng(1)).unwrap();
    let mut ctx = Ctx::new(&mut store, false);
    let xv = ctx.tape.constant(Tensor::zeros(&[1, 3, 15, 25]));
    assert_eq!(model.forward(&mut ctx, xv).unwrap_err().kind(), "config");
}

#[test]
fn config_validation() {
    let ok = ModelConfig::ntu_like();
    ok.validate().unwrap();
    let bad = [
        ModelConfig { aggregate_after: vec![11], ..ok.clone() },
        ModelConfig { alpha_agg: 0.0, ..ok.clone() },
        ModelConfig { alpha_agg: 1.5, ..ok.clone() },
        ModelConfig { tc_kernel: 4, ..ok.clone() },
        ModelConfig { strides: vec![1], ..ok.clone() },
        ModelConfig { lambda_static: -1.0, ..ok.clone() },
        ModelConfig { learner: LearnerKind::None, lambda_static: 0.0, ..ok.clone() },
    ];
    for c in bad {
        assert_eq!(c.validate().unwrap_err().kind(), "config", "{c:?}");
    }
    assert!(ModelConfig::preset("nope").is_err());
    assert_eq!(ModelConfig::preset("smoke").unwrap(), ModelConfig::smoke());
}

fn small_model_cfg(learner: LearnerKind, lambda: f64, aggregate: Vec<usize>) -> ModelConfig {
    ModelConfig {
        layout: "chain".into(),
        frames: 6,
        channels: vec![4, 6],
        strides: vec![1, 2],
        aggregate_after: aggregate,
        n_classes: 3,
        learner,
        lambda_static: lambda,
        ..ModelConfig::smoke()
    }
}

#[test]
fn identical_samples_give_identical_logits() {
    let cfg = small_model_cfg(LearnerKind::Cen, 1.0, vec![1]);
    let mut store = ParamStore::<f64>::new();
    let model = DynamicGcn::new(&cfg, chain(5), &mut store, &mut rng(3)).unwrap();
    let one = rand_tensor(&[1, 3, 6, 5], &mut rng(4));
    let x = Tensor::new(&[2, 3, 6, 5], [one.data(), one.data()].concat()).unwrap();
    for training in [false, true] {
        let mut ctx = Ctx::new(&mut store, training);
        let xv = ctx.tape.constant(x.clone());
        let y = model.forward(&mut ctx, xv).unwrap();
        let d = ctx.tape.value(y).data();
        assert_eq!(d[..3], d[3..]);
    }
}

#[test]
fn lambda_zero_ignores_static_parameters() {
    let cfg = small_model_cfg(LearnerKind::Cen, 0.0, vec![]);
    let mut store = ParamStore::<f64>::new();
    let model = DynamicGcn::new(&cfg, chain(5), &mut store, &mut rng(5)).unwrap();
    let x = rand_tensor(&[3, 3, 6, 5], &mut rng(6));
    let logits = |store: &mut ParamStore<f64>| {
        let mut ctx = Ctx::new(store, false);
        let xv = ctx.tape.constant(x.clone());
        let y = model.forward(&mut ctx, xv).unwrap();
        ctx.tape.value(y).clone()
    };
    let base = logits(&mut store);
    let mut r = rng(7);
    for p in store.params_mut() {
        if p.name.contains(".static.") || p.name.ends_with(".mask") {
            p.value = rand_tensor(p.value.shape(), &mut r);
        }
    }
    assert_eq!(logits(&mut store), base);
}

#[test]
fn model_is_batch_invariant_in_eval() {
    let cfg = small_model_cfg(LearnerKind::Cen, 1.0, vec![1]);
    let mut store = ParamStore::<f64>::new();
    let model = DynamicGcn::new(&cfg, chain(5), &mut store, &mut rng(8)).unwrap();
    let x = rand_tensor(&[3, 3, 6, 5], &mut rng(9));
    let mut ctx = Ctx::new(&mut store, false);
    let xv = ctx.tape.constant(x.clone());
    let all = model.forward(&mut ctx, xv).unwrap();
    let all = ctx.tape.value(all).clone();
    for b in 0..3 {
        let xb = Tensor::new(&[1, 3, 6, 5], x.data()[b * 90..(b + 1) * 90].to_vec()).unwrap();
        let v = ctx.tape.constant(xb);
        let y = model.forward(&mut ctx, v).unwrap();
        assert_eq!(ctx.tape.value(y).data(), &all.data()[b * 3..(b + 1) * 3]);
    }
}

#[test]
fn persons_are_averaged_after_pooling() {
    let cfg = ModelConfig { persons: 2, ..small_model_cfg(LearnerKind::Cen, 1.0, vec![]) };
    let mut store = ParamStore::<f64>::new();
    let model = DynamicGcn::new(&cfg, chain(5), &mut store, &mut rng(10)).unwrap();
    let x = rand_tensor(&[4, 3, 6, 5], &mut rng(11));
    let mut ctx = Ctx::new(&mut store, false);
    let xv = ctx.tape.constant(x.clone());
    let y = model.forward(&mut ctx, xv).unwrap();
    assert_eq!(ctx.tape.shape(y), &[2, 3]);
    let odd = ctx.tape.constant(Tensor::zeros(&[3, 3, 6, 5]));
    assert!(model.forward(&mut ctx, odd).is_err());
}

#[test]
fn model_input_gradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let cfg = small_model_cfg(LearnerKind::Cen, 1.0, vec![1]);
        let mut store = ParamStore::<f64>::new();
        let model = DynamicGcn::new(&cfg, chain(5), &mut store, &mut rng(seed)).unwrap();
        for p in store.params_mut() {
            if p.name.ends_with("bn.beta") {
                p.value = Tensor::full(p.value.shape(), 0.3);
            }
        }
        let x = rand_tensor(&[2, 3, 6, 5], &mut rng(seed + 50));
        let labels = [0usize, 2];
        let loss_of = |store: &mut ParamStore<f64>, xx: &Tensor<f64>, grad: bool| {
            let mut ctx = Ctx::new(store, false);
            let xv = ctx.tape.leaf(xx.clone(), grad);
            let y = model.forward(&mut ctx, xv).unwrap();
            let l = ctx.tape.softmax_cross_entropy(y, &labels).unwrap();
            let value = ctx.tape.value(l).data()[0];
            let g = grad.then(|| ctx.tape.backward(l).unwrap().get(xv).unwrap().to_vec());
            (value, g)
        };
        let auto = loss_of(&mut store.clone(), &x, true).1.unwrap();
        let fd = gradcheck::finite_difference_grad(|xx| Ok(loss_of(&mut store.clone(), xx, false).0), &x, 1e-5).unwrap();
        let err = gradcheck::max_relative_error(&auto, fd.data(), 1e-6);
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn bone_derivation() {
    let two = SkeletonLayout::new("pair", 2, 0, vec![(0, 1)], Some(vec![(0, 1)])).unwrap();
    let j = Tensor::new(&[1, 3, 1, 2], vec![0.0, 1.0, 0.0, 2.0, 0.0, 3.0]).unwrap();
    let b = derive_bone(&j, &two).unwrap();
    assert_eq!(b.data(), &[0.0, 1.0, 0.0, 2.0, 0.0, 3.0]);

    let layout = SkeletonLayout::builtin("ntu25").unwrap();
    let same = Tensor::full(&[2, 3, 4, 25], 0.7);
    assert!(derive_bone(&same, &layout).unwrap().data().iter().all(|&v| v == 0.0));

    let j = rand_tensor(&[2, 3, 4, 25], &mut rng(1));
    let shifted = Tensor::from_fn(j.shape(), |ix| j.get(ix) + [0.5, -2.0, 3.25][ix[1]]);
    let (a, b) = (derive_bone(&j, &layout).unwrap(), derive_bone(&shifted, &layout).unwrap());
    assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    for b in 0..2 {
        for c in 0..3 {
            for t in 0..4 {
                assert_eq!(a.get(&[b, c, t, layout.center()]), 0.0);
            }
        }
    }
    assert_eq!(derive_bone(&rand_tensor(&[1, 3, 2, 5], &mut rng(2)), &layout).unwrap_err().kind(), "dimension");
}

#[test]
fn motion_derivation() {
    let constant = Tensor::full(&[1, 3, 5, 4], 2.5);
    assert!(derive_motion(&constant).unwrap().data().iter().all(|&v| v == 0.0));

    let v = [0.5, -1.0, 2.0];
    let lin = Tensor::from_fn(&[1, 3, 5, 2], |ix| v[ix[1]] * ix[2] as f64);
    let m = derive_motion(&lin).unwrap();
    for c in 0..3 {
        for t in 0..5 {
            for j in 0..2 {
                let want = if t < 4 { v[c] } else { 0.0 };
                assert_eq!(m.get(&[0, c, t, j]), want);
            }
        }
    }

    let x = rand_tensor(&[2, 3, 6, 4], &mut rng(3));
    let m = derive_motion(&x).unwrap();
    for b in 0..2 {
        for c in 0..3 {
            for j in 0..4 {
                let s: f64 = (0..5).map(|t| m.get(&[b, c, t, j])).sum();
                let want = x.get(&[b, c, 5, j]) - x.get(&[b, c, 0, j]);
                assert!((s - want).abs() < 1e-12);
            }
        }
    }
    let single = rand_tensor(&[1, 3, 1, 4], &mut rng(4));
    assert!(derive_motion(&single).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn modality_streams() {
    let layout = chain(4);
    let x = rand_tensor(&[1, 3, 5, 4], &mut rng(5));
    assert_eq!(Modality::Joint.apply(&x, &layout).unwrap(), x);
    let bm = Modality::BoneMotion.apply(&x, &layout).unwrap();
    assert_eq!(bm, derive_motion(&derive_bone(&x, &layout).unwrap()).unwrap());
    for m in Modality::ALL {
        assert_eq!(Modality::parse(m.name()).unwrap(), m);
    }
    assert!(Modality::parse("velocity").is_err());
}

#[test]
fn ensembling() {
    let a = rand_tensor(&[3, 4], &mut rng(1));
    assert_eq!(ensemble_logits(std::slice::from_ref(&a)).unwrap(), a);
    let neg = a.map(|v| -v);
    assert!(ensemble_logits(&[a.clone(), neg]).unwrap().data().iter().all(|&v| v == 0.0));
    let s = ensemble_logits(&[Tensor::new(&[1, 2], vec![2.0, 0.0]).unwrap(), Tensor::new(&[1, 2], vec![0.0, 1.0]).unwrap()]).unwrap();
    assert_eq!(s.data(), &[2.0, 1.0]);
    assert!(ensemble_logits::<f64>(&[]).is_err());
    assert!(ensemble_logits(&[a, Tensor::zeros(&[3, 5])]).is_err());
}
