use maisenet_core::mai::{aspp_forward, cbam_forward, channel_shuffle, csab_forward, mai_chain_forward, nlb_forward};
use maisenet_core::mai::{AsppConfig, CbamConfig, CsabConfig, MaiChainConfig, NlbConfig};
use maisenet_core::ops::{self, Activation, ConvGeometry, ConvParams, UpsampleMode};
use maisenet_core::params::jitter_params;
use maisenet_core::se::{self, carafe_forward, fbo_forward, gcb_forward, reconstruct_pyramid, se_forward};
use maisenet_core::se::{CarafeConfig, GcbConfig, Pyramid, SeConfig, CARAFE_PREFIX, GCB_PREFIX};
use maisenet_core::{init_params, Axis, Error, ParamSet, ParamSpec, Shape, Tensor};
use proptest::prelude::*;

fn params(specs: &[ParamSpec], seed: u64) -> ParamSet {
    jitter_params(&init_params(specs, seed), 0.2, seed)
}

fn input(shape: Shape, seed: u64) -> Tensor {
    Tensor::uniform(shape, -2.0, 2.0, seed ^ 0xbeef)
}

fn conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, geometry: ConvGeometry) -> Tensor {
    ops::conv2d(x, &ConvParams { weight: w.clone(), bias: b.cloned(), geometry }).unwrap()
}

fn constant_inside(t: &Tensor, margin: usize, value: f64, tol: f64) {
    let s = t.shape();
    for n in 0..s.n() {
        for c in 0..s.c() {
            for h in margin..s.h() - margin {
                for w in margin..s.w() - margin {
                    let v = t.at(n, c, h, w);
                    assert!((v - value).abs() <= tol, "({n},{c},{h},{w}) = {v}, want {value}");
                }
            }
        }
    }
}

fn shape_err_axis<T: std::fmt::Debug>(r: maisenet_core::Result<T>) -> Axis {
    match r {
        Err(Error::Shape { axis, .. }) => axis,
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn conv_zero_weights_and_identity_kernel() {
    let x = input(Shape::new(2, 3, 5, 6), 1);
    let zero = conv(&x, &Tensor::zeros(Shape::new(4, 3, 3, 3)), None, ConvGeometry::same(3, 1));
    assert!(zero.bit_eq(&Tensor::zeros(Shape::new(2, 4, 5, 6))));
    let mut eye = vec![0.0; 9];
    for c in 0..3 {
        eye[c * 3 + c] = 1.0;
    }
    let eye = Tensor::from_vec(Shape::new(3, 3, 1, 1), eye).unwrap();
    assert!(conv(&x, &eye, None, ConvGeometry::default()).bit_eq(&x));
}

#[test]
fn grouped_conv_equals_sliced_convs() {
    for seed in 0..5 {
        let groups = 2 + seed as usize % 2;
        let x = input(Shape::new(2, 2 * groups, 7, 6), seed);
        let w = Tensor::uniform(Shape::new(3 * groups, 2, 3, 3), -1.0, 1.0, seed + 10);
        let g = ConvGeometry::same(3, 1).with_groups(groups);
        let whole = conv(&x, &w, None, g);
        for k in 0..groups {
            let xs = x.narrow_channels(2 * k, 2).unwrap();
            let ws = Tensor::from_vec(Shape::new(3, 2, 3, 3), w.data()[k * 3 * 18..(k + 1) * 3 * 18].to_vec()).unwrap();
            let part = conv(&xs, &ws, None, ConvGeometry::same(3, 1));
            assert!(whole.narrow_channels(3 * k, 3).unwrap().max_abs_diff(&part) <= 1e-12);
        }
    }
}

#[test]
fn dilation_equals_zero_inflated_kernel() {
    for rate in 1..=4 {
        let x = input(Shape::new(1, 2, 13, 12), rate as u64);
        let w = Tensor::uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, rate as u64 + 7);
        let reach = 2 * rate + 1;
        let mut inflated = Tensor::zeros(Shape::new(3, 2, reach, reach));
        for o in 0..3 {
            for i in 0..2 {
                for a in 0..3 {
                    for b in 0..3 {
                        let idx = inflated.index(o, i, a * rate, b * rate);
                        inflated = inflated.with_element(idx, w.at(o, i, a, b));
                    }
                }
            }
        }
        let dilated = conv(&x, &w, None, ConvGeometry::same(3, rate));
        let plain = conv(&x, &inflated, None, ConvGeometry { padding: rate, ..ConvGeometry::default() });
        assert!(dilated.max_abs_diff(&plain) <= 1e-12, "rate {rate}");
    }
}

#[test]
fn small_primitive_examples() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(ops::maxpool2d(&x, 2, 2).unwrap().data(), &[4.0]);

    let v = Tensor::full(Shape::new(1, 1, 1, 1), 2.5);
    assert_eq!(ops::upsample(&v, 2, UpsampleMode::Nearest).unwrap().data(), &[2.5; 4]);

    let s = ops::softmax_axis(&Tensor::zeros(Shape::new(1, 4, 1, 1)), Axis::C);
    assert!(s.data().iter().all(|&p| p == 0.25));
    let s = ops::softmax_axis(&Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1000.0, 0.0]).unwrap(), Axis::C);
    assert_eq!(s.data()[0], 1.0);
    assert!(s.data()[1] < 1e-300);

    assert_eq!(ops::elementwise(&Tensor::zeros(Shape::new(1, 1, 1, 1)), Activation::Sigmoid).data(), &[0.5]);

    let a = input(Shape::new(2, 1, 3, 4), 3);
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 5] = 1.0;
    }
    let eye = Tensor::from_vec(Shape::new(1, 1, 4, 4), eye).unwrap();
    assert!(ops::matmul_batched(
        &a,
        &Tensor::from_vec(Shape::new(2, 1, 4, 4), [eye.data(), eye.data()].concat()).unwrap()
    )
    .unwrap()
    .bit_eq(&a));

    let y = input(Shape::new(2, 8, 3, 5), 4);
    let back = ops::pixel_unshuffle(&ops::pixel_shuffle(&y, 2).unwrap(), 2).unwrap();
    assert!(back.bit_eq(&y));
}

#[test]
fn constant_tensors_stay_constant() {
    let c = Tensor::full(Shape::new(2, 3, 6, 4), -1.75);
    for f in [2, 3, 4] {
        for mode in [UpsampleMode::Bilinear, UpsampleMode::Nearest] {
            let up = ops::upsample(&c, f, mode).unwrap();
            assert!(up.data().iter().all(|&v| v == -1.75));
        }
    }
    assert!(ops::maxpool2d(&c, 2, 2).unwrap().data().iter().all(|&v| v == -1.75));
}

#[test]
fn shuffle_examples() {
    let x = input(Shape::new(1, 6, 2, 2), 5);
    assert!(channel_shuffle(&x, 1).unwrap().bit_eq(&x));

    // [a1, a2, b1, b2] -> [a1, b1, a2, b2]
    let x = Tensor::from_vec(Shape::new(1, 4, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let once = channel_shuffle(&x, 2).unwrap();
    assert_eq!(once.data(), &[1.0, 3.0, 2.0, 4.0]);
    assert!(channel_shuffle(&once, 2).unwrap().bit_eq(&x));

    assert!(channel_shuffle(&input(Shape::new(1, 6, 1, 1), 0), 4).is_err());
}

#[test]
fn error_paths_name_the_axis() {
    let a = Tensor::zeros(Shape::new(1, 2, 3, 4));
    assert_eq!(shape_err_axis(ops::add(&a, &Tensor::zeros(Shape::new(1, 2, 5, 4)))), Axis::H);
    assert_eq!(shape_err_axis(ops::add(&a, &Tensor::zeros(Shape::new(1, 2, 3, 5)))), Axis::W);
    let w = Tensor::zeros(Shape::new(2, 3, 1, 1));
    let r = ops::conv2d(&a, &ConvParams { weight: w, bias: None, geometry: ConvGeometry::default() });
    assert_eq!(shape_err_axis(r), Axis::C);
    let msg = ops::concat_channels(&[&a, &Tensor::zeros(Shape::new(1, 2, 3, 7))]).unwrap_err().to_string();
    assert!(msg.contains("width"), "{msg}");

    let cfg = CsabConfig { reduction: 2, ..CsabConfig::new(4) };
    let p = params(&cfg.param_specs("s"), 0);
    let r = csab_forward(&Tensor::zeros(Shape::new(1, 4, 6, 6)), &Tensor::zeros(Shape::new(1, 4, 6, 5)), &cfg, &p, "s");
    assert_eq!(shape_err_axis(r), Axis::W);
}

#[test]
fn aspp_zero_weights_and_translation() {
    let cfg = AsppConfig::new(4);
    let mut p = params(&cfg.param_specs("a"), 2);
    let x = input(Shape::new(1, 4, 20, 20), 2);

    // Shifting the input shifts the output away from the zero-padded border.
    let out = aspp_forward(&x, &cfg, &p, "a").unwrap();
    let shifted: Vec<f64> = (0..x.numel())
        .map(|i| {
            let (c, h, w) = (i / 400, i / 20 % 20, i % 20);
            if w == 0 {
                0.0
            } else {
                x.at(0, c, h, w - 1)
            }
        })
        .collect();
    let shifted = Tensor::from_vec(x.shape(), shifted).unwrap();
    let out_s = aspp_forward(&shifted, &cfg, &p, "a").unwrap();
    let reach = 6;
    for c in 0..4 {
        for h in reach..20 - reach {
            for w in reach..20 - reach {
                assert!((out.at(0, c, h, w) - out_s.at(0, c, h, w + 1)).abs() <= 1e-12);
            }
        }
    }

    p.zero_prefix("a");
    let zero = aspp_forward(&x, &cfg, &p, "a").unwrap();
    assert!(zero.bit_eq(&Tensor::zeros(x.shape())));
}

#[test]
fn nlb_attention_rows_are_distributions() {
    let cfg = NlbConfig::new(8);
    for seed in 0..100 {
        let p = params(&cfg.param_specs("n"), seed);
        let x = input(Shape::new(1, 8, 3, 4), seed);
        let (_, att) = nlb_forward(&x, &cfg, &p, "n").unwrap();
        let hw = 12;
        for i in 0..hw {
            let row = &att.data()[i * hw..(i + 1) * hw];
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn nlb_residual_identity_and_constant_input() {
    let cfg = NlbConfig::new(8);
    let mut p = params(&cfg.param_specs("n"), 7);
    let x = input(Shape::new(2, 8, 4, 4), 7);
    let c = Tensor::full(Shape::new(1, 8, 4, 4), 0.6);
    let (out, att) = nlb_forward(&c, &cfg, &p, "n").unwrap();
    assert!(att.data().iter().all(|&a| (a - 1.0 / 16.0).abs() <= 1e-15));
    assert!(
        out.variance() < 1e-24
            || (0..8).all(|ch| {
                let plane = out.plane(0, ch);
                plane.iter().all(|&v| (v - plane[0]).abs() <= 1e-12)
            })
    );

    p.zero("n.z.weight").unwrap();
    p.zero("n.z.bias").unwrap();
    assert!(nlb_forward(&x, &cfg, &p, "n").unwrap().0.bit_eq(&x));
}

#[test]
fn cbam_zero_weights_halve_twice() {
    let cfg = CbamConfig { reduction: 2, ..CbamConfig::new(8) };
    let mut p = params(&cfg.param_specs("c"), 3);
    let x = input(Shape::new(2, 8, 5, 5), 3);
    let (ca, sa, out) = cbam_forward(&x, &cfg, &p, "c").unwrap();
    assert!(ca.data().iter().chain(sa.data()).all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(out.shape(), x.shape());

    p.zero_prefix("c");
    let (ca, sa, out) = cbam_forward(&x, &cfg, &p, "c").unwrap();
    assert!(ca.data().iter().chain(sa.data()).all(|&v| v == 0.5));
    assert!(out.bit_eq(&x.map(|v| v / 4.0)));
}

#[test]
fn csab_group_independence_and_shape() {
    let cfg = CsabConfig { reduction: 2, ..CsabConfig::new(4) };
    let p = params(&cfg.param_specs("s"), 4);
    let a = input(Shape::new(1, 4, 14, 14), 4);
    let b = input(Shape::new(1, 4, 14, 14), 5);
    assert_eq!(csab_forward(&a, &b, &cfg, &p, "s").unwrap().shape(), Shape::new(1, 8, 14, 14));

    // The second conv group reads only the previous-stage features.
    let g = ConvGeometry::same(3, 1).with_groups(2);
    let cat = ops::concat_channels(&[&a, &b]).unwrap();
    let w = p.get("s.group_conv.weight").unwrap();
    let mut zeroed = w.data().to_vec();
    let half = zeroed.len() / 2;
    zeroed[half..].iter_mut().for_each(|v| *v = 0.0);
    let zeroed = Tensor::from_vec(w.shape(), zeroed).unwrap();
    let y = conv(&cat, &zeroed, None, g);
    assert!(y.narrow_channels(4, 4).unwrap().bit_eq(&Tensor::zeros(Shape::new(1, 4, 14, 14))));
    assert!(y.narrow_channels(0, 4).unwrap().bit_eq(&conv(&cat, w, None, g).narrow_channels(0, 4).unwrap()));
    let b2 = input(Shape::new(1, 4, 14, 14), 6);
    let y2 = conv(&ops::concat_channels(&[&a, &b2]).unwrap(), w, None, g);
    assert!(y2.narrow_channels(0, 4).unwrap().bit_eq(&conv(&cat, w, None, g).narrow_channels(0, 4).unwrap()));
}

#[test]
fn mai_chain_shapes_and_stage_one_isolation() {
    let cfg = MaiChainConfig::new(16);
    let p = params(&cfg.param_specs(), 9);
    let roi = input(Shape::new(2, 16, 14, 14), 9);
    let logits = mai_chain_forward(&roi, &cfg, &p).unwrap();
    assert_eq!(logits.len(), 3);
    for l in &logits {
        assert_eq!(l.shape(), Shape::new(2, 1, 28, 28));
    }

    let mut later = p.clone();
    let names: Vec<String> = p.iter().map(|(n, _)| n.to_string()).collect();
    for name in names.iter().filter(|n| !n.starts_with("mai.stage1.")) {
        let t = later.get(name).unwrap().map(|v| v * -3.0 + 0.5);
        later.insert(name.clone(), t);
    }
    let changed = mai_chain_forward(&roi, &cfg, &later).unwrap();
    assert!(changed[0].bit_eq(&logits[0]));
    assert!(!changed[2].bit_eq(&logits[2]));

    let bad = input(Shape::new(2, 16, 12, 14), 9);
    assert!(mai_chain_forward(&bad, &cfg, &p).is_err());
}

#[test]
fn carafe_kernels_are_distributions() {
    let cfg = CarafeConfig::new(4);
    for seed in 0..100 {
        let p = params(&cfg.param_specs("u"), seed);
        let x = input(Shape::new(1, 4, 3, 4), seed);
        let (out, k) = carafe_forward(&x, &cfg, &p, "u").unwrap();
        assert_eq!(out.shape(), Shape::new(1, 4, 6, 8));
        let s = k.shape();
        assert_eq!(s.c(), 25);
        for h in 0..s.h() {
            for w in 0..s.w() {
                let col: Vec<f64> = (0..25).map(|c| k.at(0, c, h, w)).collect();
                assert!(col.iter().all(|&v| v >= 0.0));
                assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn carafe_shapes_and_constant_interior() {
    let cfg = CarafeConfig::new(8);
    let p = params(&cfg.param_specs("u"), 1);
    let (out, _) = carafe_forward(&input(Shape::new(1, 8, 4, 4), 1), &cfg, &p, "u").unwrap();
    assert_eq!(out.shape(), Shape::new(1, 8, 8, 8));
    let x = Tensor::full(Shape::new(1, 8, 9, 9), 1.25);
    let (out, _) = carafe_forward(&x, &cfg, &p, "u").unwrap();
    constant_inside(&out, 4, 1.25, 1e-12);

    let cfg4 = CarafeConfig::new(4);
    let p2 = input(Shape::new(1, 4, 64, 64), 2);
    let p1 = se::build_p1(&p2, &cfg4, &params(&cfg4.param_specs(CARAFE_PREFIX), 2)).unwrap();
    assert_eq!(p1.shape(), Shape::new(1, 4, 128, 128));
}

fn constant_pyramid(values: [f64; 5], channels: usize, base: usize) -> Pyramid {
    Pyramid::new((0..5).map(|l| Tensor::full(Shape::new(1, channels, base >> l, base >> l), values[l])).collect())
        .unwrap()
}

#[test]
fn fbo_averages_constant_levels() {
    let out = fbo_forward(&constant_pyramid([1.0, 2.0, 3.0, 4.0, 5.0], 2, 32)).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 2, 8, 8));
    assert!(out.data().iter().all(|&v| v == 3.0));
    let out = fbo_forward(&constant_pyramid([-0.7; 5], 2, 32)).unwrap();
    assert!(out.data().iter().all(|&v| (v + 0.7).abs() <= 1e-15));
}

#[test]
fn reconstruct_with_zero_refinement_is_identity() {
    let pyr = Pyramid::new((0..5).map(|l| input(Shape::new(2, 3, 32 >> l, 32 >> l), l)).collect()).unwrap();
    let out = reconstruct_pyramid(&pyr, &Tensor::zeros(Shape::new(2, 3, 8, 8))).unwrap();
    for (a, b) in out.levels().iter().zip(pyr.levels()) {
        assert!(a.bit_eq(b));
    }
    assert_eq!(out.strides(), [2, 4, 8, 16, 32]);
    assert!(reconstruct_pyramid(&pyr, &Tensor::zeros(Shape::new(2, 3, 4, 4))).is_err());
}

#[test]
fn gcb_residual_is_spatially_constant() {
    let cfg = GcbConfig::new(8);
    for seed in 0..20 {
        let mut p = params(&cfg.param_specs("g"), seed);
        let x = input(Shape::new(2, 8, 4, 5), seed);
        let (out, w) = gcb_forward(&x, &cfg, &p, "g").unwrap();
        for n in 0..2 {
            let row = &w.data()[n * 20..(n + 1) * 20];
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for c in 0..8 {
                let d: Vec<f64> = out.plane(n, c).iter().zip(x.plane(n, c)).map(|(o, i)| o - i).collect();
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
                assert!(var <= 1e-24, "seed {seed}: variance {var}");
            }
        }
        p.zero("g.transform2.weight").unwrap();
        p.zero("g.transform2.bias").unwrap();
        assert!(gcb_forward(&x, &cfg, &p, "g").unwrap().0.bit_eq(&x));
    }
}

#[test]
fn se_shape_contract() {
    let cfg = SeConfig::new(4);
    let p = params(&cfg.param_specs(), 3);
    let backbone: Vec<Tensor> = (0..4).map(|i| input(Shape::new(1, 4, 64 >> i, 64 >> i), i)).collect();
    let out = se_forward(&backbone, &cfg, &p).unwrap();
    for (l, t) in out.levels().iter().enumerate() {
        let side = 128 >> l;
        assert_eq!(t.shape(), Shape::new(1, 4, side, side));
    }
    assert_eq!(out.strides(), [2, 4, 8, 16, 32]);
    assert!(se_forward(&backbone[..3], &cfg, &p).is_err());
}

#[test]
fn se_propagates_constants() {
    let cfg = SeConfig::new(4);
    let mut p = params(&cfg.param_specs(), 5);
    p.zero_prefix(&format!("{CARAFE_PREFIX}.encoder"));
    p.zero(&format!("{GCB_PREFIX}.transform2.weight")).unwrap();
    p.zero(&format!("{GCB_PREFIX}.transform2.bias")).unwrap();
    for c in [0.5, 2.0, 7.25] {
        let backbone: Vec<Tensor> = (0..4).map(|i| Tensor::full(Shape::new(1, 4, 64 >> i, 64 >> i), c)).collect();
        let out = se_forward(&backbone, &cfg, &p).unwrap();
        // The zero-padded CARAFE border reaches one P3 pixel in.
        constant_inside(out.level(3), 1, 2.0 * c, 1e-12);
    }
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let cfg = SeConfig::new(4);
    let p = params(&cfg.param_specs(), 11);
    let backbone: Vec<Tensor> = (0..4).map(|i| input(Shape::new(2, 4, 32 >> i, 32 >> i), i + 40)).collect();
    let chain = MaiChainConfig::new(8);
    let cp = params(&chain.param_specs(), 11);
    let roi = input(Shape::new(3, 8, 14, 14), 12);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut out = se_forward(&backbone, &cfg, &p).unwrap().into_levels();
            out.extend(mai_chain_forward(&roi, &chain, &cp).unwrap());
            out
        })
    };
    let one = run(1);
    for threads in [2, 4] {
        for (a, b) in one.iter().zip(run(threads)) {
            assert!(a.bit_eq(&b), "{threads} threads");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one(values in proptest::collection::vec(-1e3..1e3f64, 1..12)) {
        let x = Tensor::from_vec(Shape::new(1, values.len(), 1, 1), values).unwrap();
        let s = ops::softmax_axis(&x, Axis::C);
        prop_assert!(s.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn shuffle_is_a_permutation(groups in 1usize..5, per in 1usize..5, seed in 0u64..1000) {
        let x = input(Shape::new(1, groups * per, 2, 1), seed);
        let y = channel_shuffle(&x, groups).unwrap();
        for i in 0..groups {
            for j in 0..per {
                prop_assert_eq!(y.plane(0, j * groups + i), x.plane(0, i * per + j));
            }
        }
        let back = channel_shuffle(&y, per).unwrap();
        prop_assert!(back.bit_eq(&x));
    }

    #[test]
    fn bilinear_preserves_constants(c in -1e6..1e6f64, h in 1usize..6, w in 1usize..6, f in 1usize..5) {
        let up = ops::upsample(&Tensor::full(Shape::new(1, 1, h, w), c), f, UpsampleMode::Bilinear).unwrap();
        prop_assert!(up.data().iter().all(|&v| v == c));
    }
}
