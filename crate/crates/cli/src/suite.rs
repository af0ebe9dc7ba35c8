//! The invariant suite behind `maisenet check`. Every check has a stable
//! identifier `<module>.<subject>.<property>`; the report lists them in
//! registration order and contains nothing that depends on timing or the
//! thread count.

use maisenet_core::blockcheck::{check_block_with, LINEAR_TOLERANCE};
use maisenet_core::mai::{aspp_forward, cbam_forward, channel_shuffle, mai_chain_forward, nlb_forward};
use maisenet_core::mai::{AsppConfig, CbamConfig, MaiChainConfig, NlbConfig};
use maisenet_core::ops::{self, ConvGeometry, ConvParams, UpsampleMode};
use maisenet_core::params::jitter_params;
use maisenet_core::se::{carafe_forward, fbo_forward, gcb_forward, reconstruct_pyramid, se_forward};
use maisenet_core::se::{CarafeConfig, GcbConfig, Pyramid, SeConfig};
use maisenet_core::{archive, init_params, Axis, BlockKind, ParamSet, ParamSpec, Shape, Tensor};
use maisenet_eval::{box_iou, compute_ap, compute_coco_metrics, mask_iou, nms, BBox, BinaryMask};
use maisenet_eval::{Detection, GroundTruth, Task, TaskMetrics};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{init_weights, parse_config, RunConfig};
use crate::synth::{synth_scene, BucketMix};

type Outcome = Result<String, String>;

pub struct Context {
    pub seed: u64,
    /// Gradient-check tolerance for nonlinear blocks.
    pub tolerance: f64,
}

impl Context {
    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt))
    }

    fn params(&self, specs: &[ParamSpec], salt: u64) -> ParamSet {
        let s = self.seed.wrapping_add(salt);
        jitter_params(&init_params(specs, s), 0.2, s)
    }

    fn input(&self, shape: Shape, salt: u64) -> Tensor {
        Tensor::uniform(shape, -2.0, 2.0, self.seed.wrapping_mul(1000).wrapping_add(salt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

type CheckFn = fn(&Context) -> Outcome;

const CHECKS: &[(&str, CheckFn)] = &[
    ("core.conv.groups_equal_slices", conv_groups),
    ("core.conv.dilation_equals_inflated_kernel", conv_dilation),
    ("core.softmax.sums_to_one", softmax_sums),
    ("core.resample.constant_preserved", resample_constant),
    ("core.determinism.thread_counts", thread_determinism),
    ("mai.nlb.attention_rows_sum_to_one", nlb_rows),
    ("mai.nlb.zero_wz_identity", nlb_identity),
    ("mai.shuffle.permutation_inverse", shuffle_inverse),
    ("mai.cbam.attention_in_open_unit", cbam_range),
    ("mai.aspp.translation_equivariance", aspp_translation),
    ("mai.chain.logit_shapes", chain_shapes),
    ("mai.chain.stage1_independent", chain_stage1),
    ("se.carafe.kernels_normalized", carafe_kernels),
    ("se.carafe.constant_interior", carafe_constant),
    ("se.fbo.constant_mean", fbo_constant),
    ("se.fbo.level_symmetry", fbo_symmetry),
    ("se.reconstruct.zero_identity", reconstruct_identity),
    ("se.gcb.weights_normalized", gcb_weights),
    ("se.gcb.residual_spatially_constant", gcb_residual),
    ("se.gcb.zero_transform_identity", gcb_identity),
    ("se.pyramid.strides", pyramid_strides),
    ("eval.iou.symmetric_bounded", iou_symmetric),
    ("eval.nms.postcondition", nms_postcondition),
    ("eval.ap.score_rescaling_invariant", ap_rescaling),
    ("eval.ap.threshold_monotone", ap_threshold_monotone),
    ("eval.ap.duplicates_never_help", ap_duplicates),
    ("eval.ap.hand_cases", ap_hand_cases),
    ("eval.buckets.boundaries", bucket_boundaries),
    ("eval.rle.round_trip", rle_round_trip),
    ("cli.archive.round_trip", archive_round_trip),
    ("cli.config.round_trip", config_round_trip),
    ("cli.weights.init_deterministic", weights_deterministic),
    ("cli.synth.deterministic_buckets", synth_deterministic),
    ("cli.synth.perfect_eval", synth_perfect),
];

/// Identifiers of every check, gradient checks first.
pub fn check_ids() -> Vec<String> {
    let mut ids: Vec<String> = BlockKind::ALL.iter().map(|k| format!("core.grad.{}", k.name())).collect();
    ids.extend(CHECKS.iter().map(|(id, _)| id.to_string()));
    ids
}

pub fn run_suite(ctx: &Context, mut progress: impl FnMut(&CheckResult)) -> CheckReport {
    let mut checks = Vec::new();
    let mut record = |id: String, outcome: Outcome| {
        let r = match outcome {
            Ok(detail) => CheckResult { id, pass: true, detail },
            Err(detail) => CheckResult { id, pass: false, detail },
        };
        progress(&r);
        checks.push(r);
    };
    for kind in BlockKind::ALL {
        let tol = if kind.is_linear() { LINEAR_TOLERANCE.min(ctx.tolerance) } else { ctx.tolerance };
        let outcome = match check_block_with(kind, ctx.seed, tol) {
            Ok(r) if r.pass => Ok(format!("max relative error {:.3e} over {} probes", r.max_relative_error, r.probes)),
            Ok(r) => Err(format!("max relative error {:.3e} at {} exceeds {tol:e}", r.max_relative_error, r.worst)),
            Err(e) => Err(e.to_string()),
        };
        record(format!("core.grad.{}", kind.name()), outcome);
    }
    for (id, f) in CHECKS {
        record(id.to_string(), f(ctx));
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    CheckReport { seed: ctx.seed, tolerance: ctx.tolerance, passed: checks.len() - failed, failed, checks }
}

fn conv(x: &Tensor, w: &Tensor, g: ConvGeometry) -> Result<Tensor, String> {
    ops::conv2d(x, &ConvParams { weight: w.clone(), bias: None, geometry: g }).map_err(err)
}

fn conv_groups(ctx: &Context) -> Outcome {
    let groups = 2 + (ctx.seed % 2) as usize;
    let x = ctx.input(Shape::new(2, 2 * groups, 7, 6), 1);
    let w = ctx.input(Shape::new(3 * groups, 2, 3, 3), 2);
    let whole = conv(&x, &w, ConvGeometry::same(3, 1).with_groups(groups))?;
    let mut worst = 0.0f64;
    for k in 0..groups {
        let ws = Tensor::from_vec(Shape::new(3, 2, 3, 3), w.data()[k * 54..(k + 1) * 54].to_vec()).map_err(err)?;
        let part = conv(&x.narrow_channels(2 * k, 2).map_err(err)?, &ws, ConvGeometry::same(3, 1))?;
        worst = worst.max(whole.narrow_channels(3 * k, 3).map_err(err)?.max_abs_diff(&part));
    }
    ensure(worst <= 1e-12, || format!("max difference {worst:e}"))?;
    Ok(format!("{groups} groups, max difference {worst:.1e}"))
}

fn conv_dilation(ctx: &Context) -> Outcome {
    let mut worst = 0.0f64;
    for rate in 1..=3 {
        let x = ctx.input(Shape::new(1, 2, 11, 10), rate as u64);
        let w = ctx.input(Shape::new(2, 2, 3, 3), 10 + rate as u64);
        let reach = 2 * rate + 1;
        let mut inflated = vec![0.0; 4 * reach * reach];
        for o in 0..2 {
            for i in 0..2 {
                for a in 0..3 {
                    for b in 0..3 {
                        inflated[((o * 2 + i) * reach + a * rate) * reach + b * rate] = w.at(o, i, a, b);
                    }
                }
            }
        }
        let inflated = Tensor::from_vec(Shape::new(2, 2, reach, reach), inflated).map_err(err)?;
        let plain = ConvGeometry { padding: rate, ..ConvGeometry::default() };
        let d = conv(&x, &w, ConvGeometry::same(3, rate))?.max_abs_diff(&conv(&x, &inflated, plain)?);
        worst = worst.max(d);
    }
    ensure(worst <= 1e-12, || format!("max difference {worst:e}"))?;
    Ok(format!("rates 1..3, max difference {worst:.1e}"))
}

fn softmax_sums(ctx: &Context) -> Outcome {
    let mut rng = ctx.rng(3);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let scale = if trial % 2 == 0 { 1e3 } else { 10.0 };
        let data: Vec<f64> = (0..2 * 7 * 3).map(|_| rng.gen_range(-scale..scale)).collect();
        let x = Tensor::from_vec(Shape::new(2, 7, 3, 1), data).map_err(err)?;
        let s = ops::softmax_axis(&x, Axis::C);
        for n in 0..2 {
            for h in 0..3 {
                let sum: f64 = (0..7).map(|c| s.at(n, c, h, 0)).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 trials up to magnitude 1e3, max deviation {worst:.1e}"))
}

fn resample_constant(ctx: &Context) -> Outcome {
    let v = ctx.rng(4).gen_range(-5.0..5.0);
    let c = Tensor::full(Shape::new(1, 2, 6, 4), v);
    for f in [2, 3, 4] {
        for mode in [UpsampleMode::Bilinear, UpsampleMode::Nearest] {
            let up = ops::upsample(&c, f, mode).map_err(err)?;
            ensure(up.data().iter().all(|&u| u == v), || format!("{mode:?} x{f} changed a constant"))?;
        }
    }
    let p = ops::maxpool2d(&c, 2, 2).map_err(err)?;
    ensure(p.data().iter().all(|&u| u == v), || "maxpool changed a constant".into())?;
    Ok("exact".into())
}

fn thread_determinism(ctx: &Context) -> Outcome {
    let se_cfg = SeConfig::new(4);
    let sp = ctx.params(&se_cfg.param_specs(), 5);
    let backbone: Vec<Tensor> = (0..4).map(|i| ctx.input(Shape::new(2, 4, 32 >> i, 32 >> i), 50 + i)).collect();
    let chain = MaiChainConfig::new(8);
    let cp = ctx.params(&chain.param_specs(), 6);
    let roi = ctx.input(Shape::new(3, 8, 14, 14), 60);
    let run = |threads: usize| -> Result<Vec<Tensor>, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(err)?;
        pool.install(|| {
            let mut out = se_forward(&backbone, &se_cfg, &sp).map_err(err)?.into_levels();
            out.extend(mai_chain_forward(&roi, &chain, &cp).map_err(err)?);
            Ok(out)
        })
    };
    let one = run(1)?;
    for threads in [2, 4] {
        let other = run(threads)?;
        ensure(one.iter().zip(&other).all(|(a, b)| a.bit_eq(b)), || format!("{threads} threads differ from 1"))?;
    }
    Ok("SE and MAI outputs bit-identical on 1, 2 and 4 threads".into())
}

fn nlb_rows(ctx: &Context) -> Outcome {
    let cfg = NlbConfig::new(8);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let p = ctx.params(&cfg.param_specs("n"), t);
        let (_, att) = nlb_forward(&ctx.input(Shape::new(1, 8, 3, 4), t), &cfg, &p, "n").map_err(err)?;
        for row in att.data().chunks(12) {
            ensure(row.iter().all(|&a| a >= 0.0), || "negative attention".into())?;
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 trials, max deviation {worst:.1e}"))
}

fn nlb_identity(ctx: &Context) -> Outcome {
    let cfg = NlbConfig::new(8);
    let mut p = ctx.params(&cfg.param_specs("n"), 7);
    p.zero("n.z.weight").map_err(err)?;
    p.zero("n.z.bias").map_err(err)?;
    let x = ctx.input(Shape::new(2, 8, 4, 5), 7);
    let (out, _) = nlb_forward(&x, &cfg, &p, "n").map_err(err)?;
    ensure(out.bit_eq(&x), || "output differs from input".into())?;
    Ok("bit-exact".into())
}

fn shuffle_inverse(ctx: &Context) -> Outcome {
    let x = Tensor::from_vec(Shape::new(1, 4, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).map_err(err)?;
    let once = channel_shuffle(&x, 2).map_err(err)?;
    ensure(once.data() == [1.0, 3.0, 2.0, 4.0], || format!("shuffle gave {:?}", once.data()))?;
    ensure(channel_shuffle(&once, 2).map_err(err)?.bit_eq(&x), || "groups=2 is not an involution".into())?;
    for (c, g) in [(6, 2), (6, 3), (12, 4), (8, 8), (5, 1)] {
        let y = ctx.input(Shape::new(2, c, 2, 3), c as u64 * 10 + g as u64);
        let s = channel_shuffle(&y, g).map_err(err)?;
        let back = channel_shuffle(&s, c / g).map_err(err)?;
        ensure(back.bit_eq(&y), || format!("C={c} g={g} not undone by g'={}", c / g))?;
    }
    Ok("involution at g=2, inverse g'=C/g on 5 shapes".into())
}

fn cbam_range(ctx: &Context) -> Outcome {
    let cfg = CbamConfig { reduction: 2, ..CbamConfig::new(8) };
    for t in 0..20 {
        let p = ctx.params(&cfg.param_specs("c"), t);
        let x = ctx.input(Shape::new(2, 8, 5, 5), 100 + t);
        let (ca, sa, out) = cbam_forward(&x, &cfg, &p, "c").map_err(err)?;
        ensure(ca.data().iter().chain(sa.data()).all(|&a| a > 0.0 && a < 1.0), || "attention outside (0,1)".into())?;
        ensure(out.data().iter().zip(x.data()).all(|(o, i)| o.abs() <= i.abs()), || "output exceeds input".into())?;
    }
    let mut p = ctx.params(&cfg.param_specs("c"), 0);
    p.zero_prefix("c");
    let x = ctx.input(Shape::new(1, 8, 4, 4), 120);
    let (_, _, out) = cbam_forward(&x, &cfg, &p, "c").map_err(err)?;
    ensure(out.bit_eq(&x.map(|v| v / 4.0)), || "zero weights do not quarter the input".into())?;
    Ok("20 trials in (0,1) and contracting; zero weights give input/4".into())
}

fn aspp_translation(ctx: &Context) -> Outcome {
    let cfg = AsppConfig::new(4);
    let p = ctx.params(&cfg.param_specs("a"), 8);
    let x = ctx.input(Shape::new(1, 4, 20, 20), 8);
    let shifted: Vec<f64> = (0..x.numel())
        .map(|i| {
            let (c, h, w) = (i / 400, i / 20 % 20, i % 20);
            if h == 0 {
                0.0
            } else {
                x.at(0, c, h - 1, w)
            }
        })
        .collect();
    let shifted = Tensor::from_vec(x.shape(), shifted).map_err(err)?;
    let a = aspp_forward(&x, &cfg, &p, "a").map_err(err)?;
    let b = aspp_forward(&shifted, &cfg, &p, "a").map_err(err)?;
    let margin = cfg.dilation_rates.iter().max().copied().unwrap_or(1) + 1;
    let mut worst = 0.0f64;
    for c in 0..4 {
        for h in margin..20 - margin {
            for w in margin..20 - margin {
                worst = worst.max((a.at(0, c, h, w) - b.at(0, c, h + 1, w)).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("interior differs by {worst:e}"))?;
    Ok(format!("interior shift error {worst:.1e}"))
}

fn chain_shapes(ctx: &Context) -> Outcome {
    let cfg = MaiChainConfig::new(8);
    let p = ctx.params(&cfg.param_specs(), 9);
    let logits = mai_chain_forward(&ctx.input(Shape::new(2, 8, 14, 14), 9), &cfg, &p).map_err(err)?;
    ensure(logits.len() == 3, || format!("{} stages", logits.len()))?;
    for l in &logits {
        ensure(l.shape() == Shape::new(2, 1, 28, 28), || format!("logits {}", l.shape()))?;
    }
    Ok("3 stages of (2, 1, 28, 28) from 14x14 ROIs".into())
}

fn chain_stage1(ctx: &Context) -> Outcome {
    let cfg = MaiChainConfig::new(8);
    let p = ctx.params(&cfg.param_specs(), 10);
    let roi = ctx.input(Shape::new(1, 8, 14, 14), 10);
    let base = mai_chain_forward(&roi, &cfg, &p).map_err(err)?;
    let mut q = p.clone();
    let later: Vec<String> = p.iter().map(|(n, _)| n.to_string()).filter(|n| !n.starts_with("mai.stage1.")).collect();
    for name in later {
        let t = q.get(&name).map_err(err)?.map(|v| 0.5 - 2.0 * v);
        q.insert(name, t);
    }
    let moved = mai_chain_forward(&roi, &cfg, &q).map_err(err)?;
    ensure(moved[0].bit_eq(&base[0]), || "stage 1 depends on later stages".into())?;
    ensure(!moved[2].bit_eq(&base[2]), || "stage 3 ignores its own parameters".into())?;
    Ok("stage-1 logits bit-identical".into())
}

fn carafe_kernels(ctx: &Context) -> Outcome {
    let cfg = CarafeConfig::new(4);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let p = ctx.params(&cfg.param_specs("u"), t);
        let (_, k) = carafe_forward(&ctx.input(Shape::new(1, 4, 3, 3), 200 + t), &cfg, &p, "u").map_err(err)?;
        let s = k.shape();
        for h in 0..s.h() {
            for w in 0..s.w() {
                let col: Vec<f64> = (0..s.c()).map(|c| k.at(0, c, h, w)).collect();
                ensure(col.iter().all(|&v| v >= 0.0), || "negative kernel weight".into())?;
                worst = worst.max((col.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 trials, max deviation {worst:.1e}"))
}

fn carafe_constant(ctx: &Context) -> Outcome {
    let cfg = CarafeConfig::new(4);
    let p = ctx.params(&cfg.param_specs("u"), 11);
    let v = ctx.rng(11).gen_range(-3.0..3.0);
    let (out, _) = carafe_forward(&Tensor::full(Shape::new(1, 4, 9, 9), v), &cfg, &p, "u").map_err(err)?;
    let reach = cfg.factor * (cfg.kernel_up / 2);
    let mut worst = 0.0f64;
    for c in 0..4 {
        for h in reach..18 - reach {
            for w in reach..18 - reach {
                worst = worst.max((out.at(0, c, h, w) - v).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("interior deviates by {worst:e}"))?;
    Ok(format!("interior deviation {worst:.1e}"))
}

fn constant_pyramid(values: [f64; 5], channels: usize, base: usize) -> Result<Pyramid, String> {
    Pyramid::new((0..5).map(|l| Tensor::full(Shape::new(1, channels, base >> l, base >> l), values[l])).collect())
        .map_err(err)
}

fn fbo_constant(_: &Context) -> Outcome {
    let out = fbo_forward(&constant_pyramid([1.0, 2.0, 3.0, 4.0, 5.0], 2, 32)?).map_err(err)?;
    ensure(out.data().iter().all(|&v| v == 3.0), || "levels 1..5 do not balance to 3".into())?;
    Ok("levels 1..5 balance to exactly 3".into())
}

fn fbo_symmetry(ctx: &Context) -> Outcome {
    // Nearest-upsampled copies max-pool back to themselves, so levels 1 and
    // 2 carry `a` and `b` at the balance resolution and can be exchanged.
    let a = ctx.input(Shape::new(1, 3, 4, 4), 12);
    let b = ctx.input(Shape::new(1, 3, 4, 4), 13);
    let rest: Vec<Tensor> = (2..5).map(|l| ctx.input(Shape::new(1, 3, 16 >> l, 16 >> l), 14 + l as u64)).collect();
    let build = |first: &Tensor, second: &Tensor| -> Result<Tensor, String> {
        let mut levels = vec![
            ops::upsample(first, 4, UpsampleMode::Nearest).map_err(err)?,
            ops::upsample(second, 2, UpsampleMode::Nearest).map_err(err)?,
        ];
        levels.extend(rest.iter().cloned());
        fbo_forward(&Pyramid::new(levels).map_err(err)?).map_err(err)
    };
    let d = build(&a, &b)?.max_abs_diff(&build(&b, &a)?);
    ensure(d <= 1e-15, || format!("exchange changes the balance by {d:e}"))?;
    Ok(format!("exchange difference {d:.1e}"))
}

fn random_pyramid(ctx: &Context, salt: u64) -> Result<Pyramid, String> {
    Pyramid::new((0..5).map(|l| ctx.input(Shape::new(2, 3, 32 >> l, 32 >> l), salt + l as u64)).collect()).map_err(err)
}

fn reconstruct_identity(ctx: &Context) -> Outcome {
    let pyr = random_pyramid(ctx, 20)?;
    let out = reconstruct_pyramid(&pyr, &Tensor::zeros(Shape::new(2, 3, 8, 8))).map_err(err)?;
    ensure(out.levels().iter().zip(pyr.levels()).all(|(a, b)| a.bit_eq(b)), || "a level changed".into())?;
    Ok("all five levels bit-exact".into())
}

fn gcb_weights(ctx: &Context) -> Outcome {
    let cfg = GcbConfig::new(8);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let p = ctx.params(&cfg.param_specs("g"), t);
        let (_, w) = gcb_forward(&ctx.input(Shape::new(2, 8, 3, 4), 300 + t), &cfg, &p, "g").map_err(err)?;
        for row in w.data().chunks(12) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 trials, max deviation {worst:.1e}"))
}

fn gcb_residual(ctx: &Context) -> Outcome {
    let cfg = GcbConfig::new(8);
    let p = ctx.params(&cfg.param_specs("g"), 21);
    let x = ctx.input(Shape::new(2, 8, 4, 5), 21);
    let (out, _) = gcb_forward(&x, &cfg, &p, "g").map_err(err)?;
    let mut worst = 0.0f64;
    for n in 0..2 {
        for c in 0..8 {
            let d: Vec<f64> = out.plane(n, c).iter().zip(x.plane(n, c)).map(|(o, i)| o - i).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            worst = worst.max(d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64);
        }
    }
    ensure(worst <= 1e-24, || format!("residual spatial variance {worst:e}"))?;
    Ok(format!("max residual spatial variance {worst:.1e}"))
}

fn gcb_identity(ctx: &Context) -> Outcome {
    let cfg = GcbConfig::new(8);
    let mut p = ctx.params(&cfg.param_specs("g"), 22);
    p.zero("g.transform2.weight").map_err(err)?;
    p.zero("g.transform2.bias").map_err(err)?;
    let x = ctx.input(Shape::new(2, 8, 4, 4), 22);
    ensure(gcb_forward(&x, &cfg, &p, "g").map_err(err)?.0.bit_eq(&x), || "output differs from input".into())?;
    Ok("bit-exact".into())
}

fn pyramid_strides(ctx: &Context) -> Outcome {
    let cfg = SeConfig::new(4);
    let p = ctx.params(&cfg.param_specs(), 23);
    let backbone: Vec<Tensor> = (0..4).map(|i| ctx.input(Shape::new(1, 4, 64 >> i, 64 >> i), 23 + i)).collect();
    let out = se_forward(&backbone, &cfg, &p).map_err(err)?;
    ensure(out.strides() == [2, 4, 8, 16, 32], || format!("strides {:?}", out.strides()))?;
    for (l, t) in out.levels().iter().enumerate() {
        ensure(t.shape() == Shape::new(1, 4, 128 >> l, 128 >> l), || format!("B{} is {}", l + 1, t.shape()))?;
    }
    Ok("P2 64x64 .. P5 8x8 -> B1 128x128 .. B5 8x8".into())
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let side = |rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
        0 => rng.gen_range(4..32) as f64,
        1 => rng.gen_range(32..80) as f64,
        _ => rng.gen_range(96..120) as f64,
    };
    let (w, h) = (side(rng), side(rng));
    BBox::new(rng.gen_range(0..=(128 - w as usize)) as f64, rng.gen_range(0..=(128 - h as usize)) as f64, w, h)
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let images = rng.gen_range(1..=3u64);
    let gts: Vec<GroundTruth> = (0..rng.gen_range(0..=4u64))
        .map(|id| {
            let bbox = random_box(rng);
            GroundTruth { id, image_id: rng.gen_range(1..=images), bbox, mask: None, area: bbox.area() }
        })
        .collect();
    let dets = (0..rng.gen_range(0..=6))
        .map(|_| {
            let (image_id, bbox) = if !gts.is_empty() && rng.gen_bool(0.7) {
                let g = &gts[rng.gen_range(0..gts.len())];
                let b = g.bbox;
                let dx = rng.gen_range(-0.2..0.2) * b.w;
                let dy = rng.gen_range(-0.2..0.2) * b.h;
                (g.image_id, BBox::new((b.x + dx).max(0.0), (b.y + dy).max(0.0), b.w, b.h))
            } else {
                (rng.gen_range(1..=images), random_box(rng))
            };
            let score = if rng.gen_bool(0.3) { rng.gen_range(1..=4) as f64 / 4.0 } else { rng.gen_range(0.0..1.0) };
            Detection::new(image_id, bbox, score)
        })
        .collect();
    (dets, gts)
}

fn metrics(dets: &[Detection], gts: &[GroundTruth]) -> Result<TaskMetrics, String> {
    compute_coco_metrics(dets, gts, Task::Bbox).map_err(err)
}

fn iou_symmetric(ctx: &Context) -> Outcome {
    let mut rng = ctx.rng(30);
    for _ in 0..500 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let ab = box_iou(&a, &b);
        ensure(ab == box_iou(&b, &a) && (0.0..=1.0).contains(&ab), || format!("{a:?} vs {b:?}: {ab}"))?;
        ensure((box_iou(&a, &a) - 1.0).abs() < 1e-12, || "self IoU is not 1".into())?;
    }
    for _ in 0..100 {
        let bits: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.4)).collect();
        let other: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.4)).collect();
        let a = BinaryMask::from_fn(6, 10, |y, x| bits[y * 10 + x]);
        let b = BinaryMask::from_fn(6, 10, |y, x| other[y * 10 + x]);
        if a.is_empty() && b.is_empty() {
            continue;
        }
        let ab = mask_iou(&a, &b).map_err(err)?;
        ensure(ab == mask_iou(&b, &a).map_err(err)? && (0.0..=1.0).contains(&ab), || "mask IoU asymmetric".into())?;
        ensure((ab == 1.0) == (a == b), || "mask IoU is 1 for different masks".into())?;
    }
    let iou = box_iou(&BBox::new(0.0, 0.0, 2.0, 2.0), &BBox::new(1.0, 1.0, 2.0, 2.0));
    ensure((iou - 1.0 / 7.0).abs() < 1e-15, || format!("(0,0,2,2) vs (1,1,2,2) gave {iou}"))?;
    Ok("500 box pairs, 100 mask pairs".into())
}

fn nms_postcondition(ctx: &Context) -> Outcome {
    let mut rng = ctx.rng(31);
    for set in 0..1000 {
        let dets: Vec<Detection> = (0..rng.gen_range(0..25))
            .map(|_| {
                let b = BBox::new(
                    rng.gen_range(0.0..60.0),
                    rng.gen_range(0.0..60.0),
                    rng.gen_range(1.0..30.0),
                    rng.gen_range(1.0..30.0),
                );
                Detection::new(1, b, rng.gen_range(0.0..1.0))
            })
            .collect();
        let thr = rng.gen_range(0.05..=1.0);
        let kept = nms(&dets, thr).map_err(err)?;
        for (i, k) in kept.iter().enumerate() {
            ensure(dets.contains(k), || format!("set {set}: kept a detection not in the input"))?;
            for other in &kept[i + 1..] {
                let iou = box_iou(&k.bbox, &other.bbox);
                ensure(iou <= thr, || format!("set {set}: kept pair overlaps {iou} > {thr}"))?;
            }
        }
    }
    Ok("1000 random sets".into())
}

fn ap_rescaling(ctx: &Context) -> Outcome {
    let mut rng = ctx.rng(32);
    for trial in 0..200 {
        let (dets, gts) = random_instance(&mut rng);
        let base = metrics(&dets, &gts)?;
        let squashed: Vec<Detection> =
            dets.iter().map(|d| Detection { score: d.score.powi(3) * 0.5 + 0.1, ..d.clone() }).collect();
        ensure(metrics(&squashed, &gts)? == base, || format!("trial {trial}: metrics moved"))?;
    }
    Ok("200 random instances".into())
}

fn ap_threshold_monotone(ctx: &Context) -> Outcome {
    let mut rng = ctx.rng(33);
    for trial in 0..200 {
        let (dets, gts) = random_instance(&mut rng);
        let m = metrics(&dets, &gts)?;
        if let (Some(ap), Some(a50), Some(a75)) = (m.ap, m.ap50, m.ap75) {
            ensure(a50 >= a75 && ap <= a50 + 1e-12, || format!("trial {trial}: {m:?}"))?;
        }
        ensure(m.values().into_iter().flatten().all(|v| (0.0..=1.0).contains(&v)), || {
            format!("trial {trial}: out of range")
        })?;
    }
    Ok("AP50 >= AP75 and AP <= AP50 on 200 random instances".into())
}

fn ap_duplicates(ctx: &Context) -> Outcome {
    let mut rng = ctx.rng(34);
    let mut checked = 0;
    for trial in 0..200 {
        let (dets, gts) = random_instance(&mut rng);
        // A copy may legitimately claim a second ground truth that its twin
        // also overlaps; such instances are excluded.
        let ambiguous = dets
            .iter()
            .any(|d| gts.iter().filter(|g| g.image_id == d.image_id && box_iou(&d.bbox, &g.bbox) >= 0.5).count() > 1);
        if ambiguous {
            continue;
        }
        checked += 1;
        let base = metrics(&dets, &gts)?;
        let doubled: Vec<Detection> = dets.iter().chain(&dets).cloned().collect();
        let dup = metrics(&doubled, &gts)?;
        for (b, d) in base.values().iter().zip(dup.values()) {
            if let (Some(b), Some(d)) = (b, d) {
                ensure(d <= *b + 1e-12, || format!("trial {trial}: {d} > {b}"))?;
            }
        }
    }
    Ok(format!("{checked} unambiguous instances"))
}

fn gt(bbox: BBox, area: f64) -> GroundTruth {
    GroundTruth { id: 1, image_id: 1, bbox, mask: None, area }
}

fn ap_hand_cases(_: &Context) -> Outcome {
    let b = BBox::new(10.0, 10.0, 20.0, 20.0);
    let far = BBox::new(60.0, 60.0, 20.0, 20.0);
    let iou = |d: &Detection, g: &GroundTruth| box_iou(&d.bbox, &g.bbox);
    let g = [gt(b, b.area())];
    let cases = [
        ("perfect match", vec![Detection::new(1, b, 0.9)], Some(1.0)),
        ("miss", vec![], Some(0.0)),
        ("TP@0.9 then FP@0.8", vec![Detection::new(1, b, 0.9), Detection::new(1, far, 0.8)], Some(1.0)),
    ];
    for (name, dets, want) in cases {
        let got = compute_ap(&dets, &g, iou, 0.5);
        ensure(got == want, || format!("{name}: {got:?}, expected {want:?}"))?;
    }
    ensure(compute_ap(&[Detection::new(1, b, 0.9)], &[], iou, 0.5).is_none(), || {
        "no ground truth must be absent".into()
    })?;

    let a = BinaryMask::from_fn(4, 4, |y, x| y < 2 && x < 2);
    let m = BinaryMask::from_fn(4, 4, |y, x| y < 2 && (1..3).contains(&x));
    let miou = mask_iou(&a, &m).map_err(err)?;
    ensure(miou == 2.0 / 6.0, || format!("mask IoU {miou}"))?;
    Ok("perfect 1.0, miss 0.0, TP/FP 1.0, mask IoU 2/6".into())
}

fn bucket_boundaries(_: &Context) -> Outcome {
    let b = BBox::new(0.0, 0.0, 10.0, 10.0);
    for (area, want) in [
        (500.0, [true, false, false]),
        (1023.0, [true, false, false]),
        (1024.0, [false, true, false]),
        (9215.0, [false, true, false]),
        (9216.0, [false, false, true]),
    ] {
        let m = metrics(&[Detection::new(1, b, 0.9)], &[gt(b, area)])?;
        let got = [m.ap_s.is_some(), m.ap_m.is_some(), m.ap_l.is_some()];
        ensure(got == want, || format!("area {area}: buckets {got:?}"))?;
    }
    Ok("[0,1024), [1024,9216), [9216,inf)".into())
}

fn rle_round_trip(ctx: &Context) -> Outcome {
    let mut rng = ctx.rng(35);
    let (h, w) = (7, 5);
    let mut masks = vec![BinaryMask::empty(h, w), BinaryMask::from_fn(h, w, |_, _| true)];
    for _ in 0..100 {
        let bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.5)).collect();
        masks.push(BinaryMask::from_fn(h, w, |y, x| bits[y * w + x]));
    }
    for m in &masks {
        let counts = m.to_rle();
        ensure(counts.iter().sum::<u64>() as usize == h * w, || "counts do not cover the mask".into())?;
        ensure(BinaryMask::from_rle(h, w, &counts).map_err(err)? == *m, || "round trip changed the mask".into())?;
    }
    ensure(BinaryMask::from_rle(h, w, &[3, 4]).is_err(), || "short counts accepted".into())?;
    Ok("all-zero, all-one and 100 random masks".into())
}

fn archive_round_trip(ctx: &Context) -> Outcome {
    let mut params = ParamSet::new();
    params.insert("t", Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).map_err(err)?);
    params.insert("odd", Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-0.0, f64::MIN_POSITIVE, 1e300]).map_err(err)?);
    params.insert("r", ctx.input(Shape::new(2, 3, 4, 5), 36));
    let bytes = archive::encode(&archive::params_to_entries(&params)).map_err(err)?;
    let back = archive::entries_to_params(archive::decode(&bytes).map_err(err)?).map_err(err)?;
    for (name, t) in params.iter() {
        ensure(back.get(name).map_err(err)?.bit_eq(t), || format!("{name} changed"))?;
    }
    let truncated = archive::decode(&bytes[..bytes.len() - 3]);
    ensure(matches!(truncated, Err(maisenet_core::Error::Archive { .. })), || "truncated archive accepted".into())?;
    Ok(format!("{} bytes, bit-exact; truncation rejected", bytes.len()))
}

fn config_round_trip(_: &Context) -> Outcome {
    let cfg = RunConfig::default();
    let text = serde_json::to_string(&cfg).map_err(err)?;
    ensure(parse_config(&text).map_err(err)? == cfg, || "default config changed".into())?;
    ensure(cfg.aspp_rates == [2, 3, 4, 5] && cfg.roi_size == 14 && cfg.stages == 3, || "defaults drifted".into())?;
    ensure(parse_config(r#"{"channels": 8, "colour": 1}"#).is_err(), || "unknown field accepted".into())?;
    Ok("default round trips; unknown fields rejected".into())
}

fn weights_deterministic(ctx: &Context) -> Outcome {
    let cfg = RunConfig { channels: 4, ..RunConfig::default() };
    let a = init_weights(&cfg, ctx.seed);
    let b = init_weights(&cfg, ctx.seed);
    let ea = archive::encode(&archive::params_to_entries(&a)).map_err(err)?;
    let eb = archive::encode(&archive::params_to_entries(&b)).map_err(err)?;
    ensure(ea == eb, || "same seed gave different archives".into())?;
    ensure(a.iter().filter(|(n, _)| n.ends_with(".bias")).all(|(_, t)| t.data().iter().all(|&v| v == 0.0)), || {
        "nonzero bias".into()
    })?;
    for spec in cfg.param_specs() {
        if let maisenet_core::ParamKind::ConvWeight { fan_in } = spec.kind {
            let bound = (1.0 / fan_in as f64).sqrt();
            let t = a.get(&spec.name).map_err(err)?;
            ensure(t.data().iter().all(|v| v.abs() <= bound), || format!("{} exceeds {bound}", spec.name))?;
        }
    }
    Ok(format!("{} tensors, identical archives, zero biases", a.len()))
}

fn synth_deterministic(ctx: &Context) -> Outcome {
    let mix = BucketMix::default();
    let a = synth_scene(ctx.seed, 128, 128, mix).map_err(err)?;
    let b = synth_scene(ctx.seed, 128, 128, mix).map_err(err)?;
    ensure(a == b, || "same seed gave different scenes".into())?;
    let areas: Vec<f64> = a.ships.iter().map(|s| s.area()).collect();
    ensure(areas[..2].iter().all(|&x| x < 1024.0), || format!("small areas {areas:?}"))?;
    ensure(areas[2..4].iter().all(|&x| (1024.0..9216.0).contains(&x)), || format!("medium areas {areas:?}"))?;
    ensure(areas[4] >= 9216.0, || format!("large area {}", areas[4]))?;
    let empty = synth_scene(ctx.seed, 128, 128, BucketMix { small: 0, medium: 0, large: 0 }).map_err(err)?;
    ensure(empty.ships.is_empty(), || "empty mix produced ships".into())?;
    Ok("2 S, 2 M, 1 L in bucket; reproducible".into())
}

fn synth_perfect(ctx: &Context) -> Outcome {
    let scene = synth_scene(ctx.seed, 160, 160, BucketMix::default()).map_err(err)?;
    let gts = scene.dataset().ground_truths;
    let dets = scene.perfect_detections();
    for task in [Task::Bbox, Task::Segm] {
        let m = compute_coco_metrics(&dets, &gts, task).map_err(err)?;
        ensure(m.values().iter().all(|v| *v == Some(1.0)), || format!("{task}: {m:?}"))?;
    }
    Ok("every metric 1.0 for both tasks".into())
}
