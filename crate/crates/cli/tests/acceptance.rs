//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use maisenet_cli::{parse_config, RunConfig};
use maisenet_core::blockcheck::check_block_with;
use maisenet_core::mai::{aspp_forward, csab_forward, mai_chain_forward, nlb_forward};
use maisenet_core::mai::{AsppConfig, CsabConfig, MaiChainConfig, NlbConfig};
use maisenet_core::params::jitter_params;
use maisenet_core::se::{carafe_forward, fbo_forward, gcb_forward, reconstruct_pyramid, se_forward};
use maisenet_core::se::{CarafeConfig, GcbConfig, Pyramid, SeConfig};
use maisenet_core::{archive, init_params, BlockKind, Error, ParamSet, ParamSpec, Shape, Tensor};
use maisenet_eval::format::{parse_detections, parse_ground_truth};
use maisenet_eval::{
    box_iou, compute_coco_metrics, nms, BBox, BinaryMask, Detection, EvalError, GroundTruth, Task, TaskMetrics,
};
use maisenet_oracle::coco::reference_metrics;
use maisenet_oracle::instances::random_instance;
use maisenet_oracle::{blocks, Nd};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

const GRADIENT_SEEDS: [u64; 3] = [0, 1, 2];
const GRADIENT_BUDGET: Duration = Duration::from_secs(300);
const ORACLE_TOL: f64 = 1e-12;

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

fn params(specs: &[ParamSpec], seed: u64) -> ParamSet {
    jitter_params(&init_params(specs, seed), 0.2, seed)
}

fn input(shape: Shape, seed: u64) -> Tensor {
    Tensor::uniform(shape, -2.0, 2.0, seed.wrapping_mul(7919).wrapping_add(3))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: Option<(f64, String)> = None;
    for kind in BlockKind::ALL {
        for seed in GRADIENT_SEEDS {
            let r = check_block_with(kind, seed, kind.tolerance()).map_err(|e| format!("{kind} seed {seed}: {e}"))?;
            ensure(r.pass, || {
                format!("{kind} seed {seed}: relative error {:e} > {:e}", r.max_relative_error, kind.tolerance())
            })?;
            let ratio = r.max_relative_error / kind.tolerance();
            if worst.as_ref().is_none_or(|(w, _)| ratio > *w) {
                worst = Some((ratio, format!("{kind} seed {seed}")));
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed <= GRADIENT_BUDGET, || format!("took {elapsed:?}"))?;
    let (ratio, at) = worst.unwrap_or_default();
    Ok(format!(
        "{} blocks x {} seeds in {:.1}s; worst error/tolerance {:.1e} ({at})",
        BlockKind::ALL.len(),
        GRADIENT_SEEDS.len(),
        elapsed.as_secs_f64(),
        ratio
    ))
}

fn residual_identities() -> Outcome {
    for seed in 0..10 {
        let cfg = NlbConfig::new(8);
        let mut p = params(&cfg.param_specs("n"), seed);
        p.zero("n.z.weight").map_err(err)?;
        p.zero("n.z.bias").map_err(err)?;
        let x = input(Shape::new(2, 8, 5, 6), seed);
        ensure(nlb_forward(&x, &cfg, &p, "n").map_err(err)?.0.bit_eq(&x), || format!("NLB seed {seed}"))?;

        let cfg = GcbConfig::new(8);
        let mut p = params(&cfg.param_specs("g"), seed);
        p.zero("g.transform2.weight").map_err(err)?;
        p.zero("g.transform2.bias").map_err(err)?;
        ensure(gcb_forward(&x, &cfg, &p, "g").map_err(err)?.0.bit_eq(&x), || format!("GCB seed {seed}"))?;

        let levels: Vec<Tensor> = (0..5).map(|l| input(Shape::new(2, 3, 32 >> l, 32 >> l), seed * 10 + l)).collect();
        let pyr = Pyramid::new(levels).map_err(err)?;
        let out = reconstruct_pyramid(&pyr, &Tensor::zeros(Shape::new(2, 3, 8, 8))).map_err(err)?;
        ensure(out.levels().iter().zip(pyr.levels()).all(|(a, b)| a.bit_eq(b)), || format!("reconstruct seed {seed}"))?;
    }
    Ok("NLB, GCB and reconstruct bit-exact on 10 seeds".into())
}

/// Largest |sum - 1| over the groups; a negative entry fails.
fn simplex_deviation(values: impl Iterator<Item = Vec<f64>>) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for group in values {
        ensure(group.iter().all(|&v| v >= 0.0), || "negative weight".into())?;
        worst = worst.max((group.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(worst)
}

fn normalizations() -> Outcome {
    let (mut nlb, mut carafe, mut gcb) = (0.0f64, 0.0f64, 0.0f64);
    let nlb_cfg = NlbConfig::new(8);
    let carafe_cfg = CarafeConfig::new(8);
    let gcb_cfg = GcbConfig::new(8);
    for t in 0..100 {
        let x = input(Shape::new(2, 8, 4, 5), 500 + t);
        let (_, att) = nlb_forward(&x, &nlb_cfg, &params(&nlb_cfg.param_specs("n"), t), "n").map_err(err)?;
        nlb = nlb.max(simplex_deviation(att.data().chunks(20).map(<[f64]>::to_vec))?);

        let (_, k) = carafe_forward(&x, &carafe_cfg, &params(&carafe_cfg.param_specs("u"), t), "u").map_err(err)?;
        let s = k.shape();
        let columns = (0..s.n()).flat_map(|n| (0..s.h()).flat_map(move |h| (0..s.w()).map(move |w| (n, h, w))));
        carafe =
            carafe.max(simplex_deviation(columns.map(|(n, h, w)| (0..s.c()).map(|c| k.at(n, c, h, w)).collect()))?);

        let (_, w) = gcb_forward(&x, &gcb_cfg, &params(&gcb_cfg.param_specs("g"), t), "g").map_err(err)?;
        gcb = gcb.max(simplex_deviation(w.data().chunks(20).map(<[f64]>::to_vec))?);
    }
    let worst = nlb.max(carafe).max(gcb);
    ensure(worst <= 1e-12, || format!("deviations NLB {nlb:e}, CARAFE {carafe:e}, GCB {gcb:e}"))?;
    Ok(format!("100 trials; max |sum - 1|: NLB {nlb:.1e}, CARAFE {carafe:.1e}, GCB {gcb:.1e}"))
}

fn constant_propagation() -> Outcome {
    for (channels, base) in [(1, 16), (2, 32), (5, 64)] {
        let levels: Vec<Tensor> =
            (0..5).map(|l| Tensor::full(Shape::new(2, channels, base >> l, base >> l), (l + 1) as f64)).collect();
        let out = fbo_forward(&Pyramid::new(levels).map_err(err)?).map_err(err)?;
        ensure(out.data().iter().all(|&v| v == 3.0), || format!("FBO C={channels} base={base}: not exactly 3"))?;
    }
    let cfg = CarafeConfig::new(8);
    let reach = cfg.factor * (cfg.kernel_up / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut interior = 0;
    for seed in 0..10 {
        let p = params(&cfg.param_specs("u"), seed);
        let v: f64 = rng.gen_range(-5.0..5.0);
        let (out, _) = carafe_forward(&Tensor::full(Shape::new(1, 8, 10, 9), v), &cfg, &p, "u").map_err(err)?;
        let s = out.shape();
        for c in 0..s.c() {
            for h in reach..s.h() - reach {
                for w in reach..s.w() - reach {
                    ensure(out.at(0, c, h, w) == v, || format!("CARAFE seed {seed}: {} != {v}", out.at(0, c, h, w)))?;
                    interior += 1;
                }
            }
        }
    }
    Ok(format!("FBO levels 1..5 give exactly 3; {interior} CARAFE interior values exact"))
}

fn close(got: &Tensor, want: &Nd, what: &str) -> Result<f64, String> {
    ensure(got.shape().0 == want.dims, || format!("{what}: shape {} vs {:?}", got.shape(), want.dims))?;
    let d = got.max_abs_diff(&want.to_tensor());
    ensure(d <= ORACLE_TOL, || format!("{what}: max abs diff {d:e}"))?;
    Ok(d)
}

fn oracle_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let aspp = AsppConfig::new(8);
    let nlb = NlbConfig::new(8);
    let csab = CsabConfig { reduction: 2, ..CsabConfig::new(8) };
    let carafe = CarafeConfig::new(8);
    let gcb = GcbConfig::new(8);
    for seed in 100..112 {
        let x = input(Shape::new(2, 8, 9, 7), seed);
        let nx = Nd::from_tensor(&x);

        let p = params(&aspp.param_specs("a"), seed);
        let got = aspp_forward(&x, &aspp, &p, "a").map_err(err)?;
        worst = worst.max(close(&got, &blocks::aspp(&nx, &aspp.dilation_rates, &p, "a"), "ASPP")?);

        let p = params(&nlb.param_specs("n"), seed);
        let (out, att) = nlb_forward(&x, &nlb, &p, "n").map_err(err)?;
        let (want_out, want_att) = blocks::nlb(&nx, &p, "n");
        worst = worst.max(close(&out, &want_out, "NLB")?).max(close(&att, &want_att, "NLB attention")?);

        let p = params(&csab.param_specs("s"), seed);
        let prev = input(x.shape(), seed + 1000);
        let got = csab_forward(&x, &prev, &csab, &p, "s").map_err(err)?;
        worst = worst.max(close(&got, &blocks::csab(&nx, &Nd::from_tensor(&prev), &p, "s"), "CSAB")?);

        let p = params(&carafe.param_specs("u"), seed);
        let (out, k) = carafe_forward(&x, &carafe, &p, "u").map_err(err)?;
        let (want_out, want_k) = blocks::carafe(&nx, &p, "u", carafe.factor, carafe.kernel_up);
        worst = worst.max(close(&out, &want_out, "CARAFE")?).max(close(&k, &want_k, "CARAFE kernels")?);

        let levels: Vec<Tensor> = (0..5).map(|l| input(Shape::new(2, 3, 32 >> l, 32 >> l), seed * 10 + l)).collect();
        let nd: Vec<Nd> = levels.iter().map(Nd::from_tensor).collect();
        let got = fbo_forward(&Pyramid::new(levels).map_err(err)?).map_err(err)?;
        worst = worst.max(close(&got, &blocks::fbo(&nd), "FBO")?);

        let p = params(&gcb.param_specs("g"), seed);
        let (out, w) = gcb_forward(&x, &gcb, &p, "g").map_err(err)?;
        let (want_out, want_w) = blocks::gcb(&nx, &p, "g");
        worst = worst.max(close(&out, &want_out, "GCB")?);
        for (n, row) in want_w.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let d = (w.at(n, 0, 0, j) - v).abs();
                ensure(d <= ORACLE_TOL, || format!("GCB context weights: {d:e}"))?;
            }
        }
    }
    Ok(format!("6 blocks on 12 seeds; max abs diff {worst:.1e}"))
}

fn shape_contracts() -> Outcome {
    let chain = MaiChainConfig::new(8);
    let p = params(&chain.param_specs(), 0);
    let logits = mai_chain_forward(&input(Shape::new(3, 8, 14, 14), 0), &chain, &p).map_err(err)?;
    ensure(logits.len() == 3, || format!("{} stages", logits.len()))?;
    for l in &logits {
        ensure(l.shape() == Shape::new(3, 1, 28, 28), || format!("logits {}", l.shape()))?;
    }
    let se = SeConfig::new(8);
    let p = params(&se.param_specs(), 0);
    let backbone: Vec<Tensor> = (0..4).map(|i| input(Shape::new(1, 8, 32 >> i, 32 >> i), i)).collect();
    let out = se_forward(&backbone, &se, &p).map_err(err)?;
    ensure(out.strides() == [2, 4, 8, 16, 32], || format!("strides {:?}", out.strides()))?;
    for (l, t) in out.levels().iter().enumerate() {
        ensure(t.shape() == Shape::new(1, 8, 64 >> l, 64 >> l), || format!("B{} is {}", l + 1, t.shape()))?;
    }
    Ok("14x14 ROIs -> 3 x 28x28 logits; P2 32x32 -> B1 64x64 .. B5 4x4, strides 2..32".into())
}

fn metrics_close(a: &TaskMetrics, b: &TaskMetrics) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        match (x, y) {
            (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
            (None, None) => {}
            _ => return Err(format!("{} present in only one evaluator", TaskMetrics::NAMES[i])),
        }
    }
    ensure(worst <= 1e-9, || format!("differs by {worst:e}"))?;
    Ok(worst)
}

fn gt(bbox: BBox, area: f64) -> GroundTruth {
    GroundTruth { id: 1, image_id: 1, bbox, mask: None, area }
}

fn metric_engine() -> Outcome {
    let mut worst = 0.0f64;
    for (task, seeds) in [(Task::Bbox, 0..200), (Task::Segm, 5000..5200)] {
        for seed in seeds {
            let (dets, gts) = random_instance(seed, task);
            let got = compute_coco_metrics(&dets, &gts, task).map_err(err)?;
            worst = worst.max(
                metrics_close(&got, &reference_metrics(&dets, &gts, task))
                    .map_err(|e| format!("{task} seed {seed}: {e}"))?,
            );
        }
    }

    let b = BBox::new(10.0, 10.0, 20.0, 20.0);
    let far = BBox::new(60.0, 60.0, 20.0, 20.0);
    let g = [gt(b, b.area())];
    for (name, dets, want) in [
        ("perfect match", vec![Detection::new(1, b, 0.9)], 1.0),
        ("miss", vec![Detection::new(1, far, 0.9)], 0.0),
        ("TP@0.9 then FP@0.8", vec![Detection::new(1, b, 0.9), Detection::new(1, far, 0.8)], 1.0),
    ] {
        let m = compute_coco_metrics(&dets, &g, Task::Bbox).map_err(err)?;
        ensure(m.ap == Some(want), || format!("{name}: AP {:?}, expected {want}", m.ap))?;
    }

    for (area, want) in [
        (1023.0, [true, false, false]),
        (32.0 * 32.0, [false, true, false]),
        (9215.0, [false, true, false]),
        (96.0 * 96.0, [false, false, true]),
    ] {
        let m = compute_coco_metrics(&[Detection::new(1, b, 0.9)], &[gt(b, area)], Task::Bbox).map_err(err)?;
        let got = [m.ap_s.is_some(), m.ap_m.is_some(), m.ap_l.is_some()];
        ensure(got == want, || format!("area {area}: buckets {got:?}"))?;
    }
    Ok(format!("400 random instances within {worst:.1e} of the reference; hand cases and 32^2/96^2 boundaries hold"))
}

fn nms_postcondition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut kept_total = 0;
    for set in 0..1000 {
        let dets: Vec<Detection> = (0..rng.gen_range(0..30))
            .map(|_| {
                let b = BBox::new(
                    rng.gen_range(0.0..50.0),
                    rng.gen_range(0.0..50.0),
                    rng.gen_range(1.0..30.0),
                    rng.gen_range(1.0..30.0),
                );
                Detection::new(1, b, rng.gen_range(0.0..1.0))
            })
            .collect();
        let thr = rng.gen_range(0.05..=1.0);
        let kept = nms(&dets, thr).map_err(err)?;
        kept_total += kept.len();
        for (i, k) in kept.iter().enumerate() {
            ensure(dets.contains(k), || format!("set {set}: kept a detection not in the input"))?;
            for other in &kept[i + 1..] {
                let iou = box_iou(&k.bbox, &other.bbox);
                ensure(iou <= thr, || format!("set {set}: kept pair has IoU {iou} > {thr}"))?;
            }
        }
        // Everything dropped overlaps a kept detection that outscores it.
        for d in dets.iter().filter(|d| !kept.contains(d)) {
            ensure(kept.iter().any(|k| k.score >= d.score && box_iou(&k.bbox, &d.bbox) > thr), || {
                format!("set {set}: a detection was dropped without cause")
            })?;
        }
    }
    Ok(format!("1000 sets, {kept_total} kept detections pairwise below threshold"))
}

fn run_check(threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_maisenet"));
    cmd.args(["check", "--seed", "0"]).env_remove("MAISENET_THREADS");
    if let Some(t) = threads {
        cmd.env("MAISENET_THREADS", t);
    }
    let out = cmd.output().map_err(err)?;
    ensure(out.status.success(), || {
        format!("check exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let first = run_check(None)?;
    ensure(run_check(None)? == first, || "two runs differ".into())?;
    for t in ["1", "4"] {
        ensure(run_check(Some(t))? == first, || format!("MAISENET_THREADS={t} differs"))?;
    }
    serde_json::from_slice::<serde_json::Value>(&first).map_err(|e| format!("report is not JSON: {e}"))?;
    Ok(format!("{} report bytes identical across 2 runs and 1/4 threads", first.len()))
}

fn file_formats() -> Outcome {
    let mut p = ParamSet::new();
    let special = vec![0.0, -0.0, f64::MIN_POSITIVE, 5e-324, f64::MAX, -1e300, 1.0 / 3.0, std::f64::consts::PI];
    p.insert("special", Tensor::from_vec(Shape::new(1, 2, 2, 2), special).map_err(err)?);
    p.insert("random", input(Shape::new(3, 2, 4, 5), 9));
    let bytes = archive::encode(&archive::params_to_entries(&p)).map_err(err)?;
    let back = archive::entries_to_params(archive::decode(&bytes).map_err(err)?).map_err(err)?;
    for (name, t) in p.iter() {
        let b = back.get(name).map_err(err)?;
        let same = t.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same && t.shape() == b.shape(), || format!("archive changed {name}"))?;
    }
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut offsets = Vec::new();
    for (what, data) in [("bad magic", &bad_magic[..]), ("truncation", &bytes[..bytes.len() - 5])] {
        match archive::decode(data) {
            Err(Error::Archive { offset, .. }) => {
                ensure(offset <= data.len(), || format!("{what}: offset {offset} past the end"))?;
                offsets.push(offset);
            }
            other => return Err(format!("{what}: expected a located archive error, got {other:?}")),
        }
    }
    ensure(offsets[0] == 0, || format!("bad magic reported at byte {}", offsets[0]))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let bits: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.4)).collect();
        let m = BinaryMask::from_fn(h, w, |y, x| bits[y * w + x]);
        ensure(BinaryMask::from_rle(h, w, &m.to_rle()).map_err(err)? == m, || "RLE round trip changed a mask".into())?;
    }

    let located = |text: &str, want: &str| -> Result<(), String> {
        match parse_ground_truth(text) {
            Err(e @ (EvalError::Json { .. } | EvalError::Invalid { .. })) => {
                ensure(e.to_string().contains(want), || format!("diagnostic `{e}` lacks `{want}`"))
            }
            other => Err(format!("expected a located error for `{want}`, got {other:?}")),
        }
    };
    located(
        r#"{"images": [{"id": 1, "width": 4, "height": 4}], "annotations": [{"id": 1, "image_id": 1, "bbox": [0, 0, -1, 2], "area": 2}]}"#,
        "annotations[0].bbox",
    )?;
    located(r#"{"images": [{"id": 1, "width": "4", "height": 4}], "annotations": []}"#, "images[0].width")?;
    let dataset =
        parse_ground_truth(r#"{"images": [{"id": 1, "width": 4, "height": 4}], "annotations": []}"#).map_err(err)?;
    let e = parse_detections(r#"[{"image_id": 1, "bbox": [0, 0, 1, 1], "score": "high"}]"#, &dataset)
        .err()
        .ok_or("string score accepted")?;
    ensure(e.to_string().contains("[0].score"), || format!("detection diagnostic `{e}`"))?;
    let e = parse_config(r#"{"channels": 8, "aspp_rates": [2, "three"]}"#).err().ok_or("bad config accepted")?;
    ensure(e.message.contains("aspp_rates[1]"), || format!("config diagnostic `{}`", e.message))?;
    ensure(parse_config(&serde_json::to_string(&RunConfig::default()).map_err(err)?).is_ok(), || {
        "default config rejected".into()
    })?;
    Ok(format!("archive and RLE bit-exact; archive errors at bytes {offsets:?}; ground truth, detection and config errors located"))
}

const CRITERIA: &[(&str, Criterion)] = &[
    ("gradient suite", gradient_suite),
    ("residual identities", residual_identities),
    ("normalizations", normalizations),
    ("constant propagation", constant_propagation),
    ("oracle equivalence", oracle_equivalence),
    ("shape contracts", shape_contracts),
    ("metric engine", metric_engine),
    ("NMS post-condition", nms_postcondition),
    ("determinism", determinism),
    ("file formats", file_formats),
];

fn main() -> ExitCode {
    let mut failed = 0;
    for (name, criterion) in CRITERIA {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
