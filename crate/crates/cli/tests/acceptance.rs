//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fail.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mfpt_core::autograd::{Matrix, Tape};
use mfpt_core::data::{check_split_leakage, DatasetManifest, ImageSample, PixelMask, RgbImage, Role, Split};
use mfpt_core::eval::{
    confusion, degrade, metrics, robustness_csv, robustness_sweep, DegradationKind, DegradationSpec,
};
use mfpt_core::frequency::{highpass_prompt, to_grayscale, DEFAULT_CUTOFF};
use mfpt_core::model::{
    ffrp_gate, parameter_group, split_heads_channels, Mfpt, MfptConfig, BACKBONE_PREFIX, TRAINABLE_GROUPS,
};
use mfpt_core::synth::{generate, synthesize, SynthConfig};
use mfpt_core::train::{batch_gradients, bce_loss, dice_loss, mean_pf1, total_loss, train_examples, Example, LossWeights, TrainConfig};
use mfpt_core::triage::{area_gate_ratio, triage_decide, Decision, FailureClass, TriagePolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).mapv(f64::abs).fold(0.0, |x: f64, &y| x.max(y))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut identity: f64 = 0.0;
    for _ in 0..500 {
        let dp = rng.random_range(0.0..1.0);
        let dg = rng.random_range(0.0..1.0);
        let pred = common::random_mask(&mut rng, 32, 32, dp);
        let gt = common::random_mask(&mut rng, 32, 32, dg);
        let (tp, fp, fn_, tn) = common::brute_confusion(&pred, &gt);
        let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let (f1, iou) = if tp + fp + fn_ == 0.0 { (1.0, 1.0) } else { (2.0 * tp / (2.0 * tp + fp + fn_), tp / (tp + fp + fn_)) };
        let acc = (tp + tn) / (tp + fp + fn_ + tn);
        let m = metrics(&confusion(&pred, &gt).map_err(|e| e.to_string())?);
        worst = worst.max((m.pf1 - f1).abs()).max((m.iou - iou).abs()).max((m.pacc - acc).abs());
        identity = identity.max((m.pf1 - 2.0 * m.iou / (1.0 + m.iou)).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    ensure(identity <= 1e-12, || format!("F1/IoU identity off by {identity:e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("500 pairs, max dev {worst:.1e}, identity {identity:.1e}, {:.2}s", elapsed.as_secs_f64()))
}

fn metric_fixture() -> Outcome {
    let gt = PixelMask::from_fn(4, 4, |x, y| matches!((y, x), (0, 0) | (0, 1) | (1, 1)));
    let pred = PixelMask::from_fn(4, 4, |x, y| matches!((y, x), (0, 0) | (0, 1) | (1, 0)));
    let c = confusion(&pred, &gt).map_err(|e| e.to_string())?;
    ensure((c.tp, c.fp, c.fn_, c.tn) == (2, 1, 1, 12), || format!("counts {c:?}"))?;
    let m = metrics(&c);
    ensure((m.pf1 - 0.6667).abs() < 1e-4 && m.iou == 0.5 && m.pacc == 0.875, || format!("{m:?}"))?;
    Ok(format!("pF1 {:.4}, IoU {}, pACC {}", m.pf1, m.iou, m.pacc))
}

fn highpass_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(8..25), rng.random_range(8..25));
        let img = RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..256.0f64).floor()).collect()).unwrap();
        let prompt = highpass_prompt(&to_grayscale(&img), DEFAULT_CUTOFF).map_err(|e| e.to_string())?;
        let (inside, outside) = common::naive_band_energy(&prompt, DEFAULT_CUTOFF);
        worst = worst.max(inside / (inside + outside));
    }
    ensure(worst < 1e-9, || format!("relative in-disk energy {worst:e}"))?;
    let flat = RgbImage::filled(32, 32, [120.0, 64.0, 200.0]);
    let p = highpass_prompt(&to_grayscale(&flat), DEFAULT_CUTOFF).map_err(|e| e.to_string())?;
    let peak = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    ensure(peak < 1e-6, || format!("constant image prompt peak {peak:e}"))?;
    Ok(format!("100 images, max relative in-disk energy {worst:.1e}; constant peak {peak:.1e}"))
}

fn frozen_gradient_contract() -> Outcome {
    let mut model = Mfpt::new(MfptConfig::default(), 0).map_err(|e| e.to_string())?;
    let before = model.params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch: Vec<Example> = (0..2)
        .map(|i| Example {
            id: format!("b{i}"),
            image: RgbImage::new(64, 64, (0..64 * 64 * 3).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap(),
            mask: common::random_mask(&mut rng, 64, 64, 0.2),
        })
        .collect();
    let refs: Vec<&Example> = batch.iter().collect();
    let (_, grads) = batch_gradients(&model, &refs, LossWeights::default()).map_err(|e| e.to_string())?;
    for group in TRAINABLE_GROUPS {
        let moved = model.params().iter().any(|(id, p)| {
            parameter_group(&p.name) == Some(group) && grads[id.0].as_ref().is_some_and(|g| g.iter().any(|&v| v != 0.0))
        });
        ensure(moved, || format!("group {group} has no nonzero gradient"))?;
    }
    TrainConfig::default().optimizer().step(model.params_mut(), &grads);
    let mut frozen = 0;
    for ((_, p), (_, q)) in model.params().iter().zip(before.iter()) {
        if p.name.starts_with(BACKBONE_PREFIX) {
            ensure(p.value == q.value, || format!("{} changed", p.name))?;
            frozen += 1;
        }
    }
    Ok(format!("{frozen} backbone tensors bit-identical; groups {TRAINABLE_GROUPS:?} all receive gradient"))
}

fn gradient_check() -> Outcome {
    let worst = (0..3).map(common::ffrp_gradient_check).fold(0.0f64, f64::max);
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("3 seeds, max relative error {worst:.1e}"))
}

fn head_split() -> Outcome {
    let s = split_heads_channels(8, 64, 0.75).map_err(|e| e.to_string())?;
    ensure((s.heads_high, s.heads_low) == (6, 2), || format!("r=0.75: {s:?}"))?;
    let s1 = split_heads_channels(8, 64, 1.0).map_err(|e| e.to_string())?;
    ensure((s1.heads_high, s1.heads_low, s1.channels_low) == (8, 0, 0), || format!("r=1: {s1:?}"))?;
    for (h, c, r) in [(8, 61, 0.75), (8, 64, 0.5), (8, 0, 0.75)] {
        ensure(split_heads_channels(h, c, r).is_err(), || format!("({h}, {c}, {r}) accepted"))?;
    }
    ensure(Mfpt::new(MfptConfig { head_count: 6, freq_ratio: 1.0, ..MfptConfig::default() }, 0).is_err(), || {
        "model with 64 channels over 6 heads accepted".into()
    })?;
    Ok(format!("(8, 0.75) -> (6, 2) with channels ({}, {}); (8, 1.0) -> (8, 0); invalid splits rejected", s.channels_high, s.channels_low))
}

fn overfit() -> Outcome {
    let examples = common::overfit_examples(0);
    let mut model = Mfpt::new(MfptConfig::default(), 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let start = Instant::now();
    train_examples(&mut model, &examples, &examples, &cfg, |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pf1 = mean_pf1(&model, &examples, 0.5).map_err(|e| e.to_string())?;
    ensure(pf1 >= 0.95, || format!("train pF1 {pf1:.4} after {} iterations", cfg.max_iterations))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!("train pF1 {pf1:.4} after {} iterations in {:.1}s", cfg.max_iterations, elapsed.as_secs_f64()))
}

fn gate_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (c, l) = (16, 12);
    let filter = Matrix::from_shape_fn((c, 1), |_| rng.random_range(-1.0..1.0));
    let x = Matrix::from_shape_fn((c, l), |_| rng.random_range(-5.0..5.0));
    let scale: Vec<f64> = (0..l).map(|_| rng.random_range(0.1..3.0)).collect();
    let mixed = Matrix::from_shape_fn((c, l), |(r, col)| filter[[r, 0]] * scale[col]);
    let mut t = Tape::inference();
    let (m, xv, f, id) = (t.constant(mixed), t.constant(x.clone()), t.constant(filter), t.constant(Matrix::eye(c)));
    let out = ffrp_gate(&mut t, m, xv, f, id).map_err(|e| e.to_string())?;
    let err = max_abs(t.value(out), &x);
    ensure(err < 1e-9, || format!("max deviation {err:e}"))?;
    Ok(format!("max deviation {err:.1e}"))
}

fn triage_conformance() -> Outcome {
    let p = TriagePolicy::default();
    let got: Vec<Decision> = [0.6, 0.5, 0.4, 0.3, 0.2].iter().map(|&m| triage_decide(m, &p).unwrap()).collect();
    use Decision::*;
    ensure(got == [Accept, Review, Review, Review, Discard], || format!("{got:?}"))?;
    let gates: Vec<(bool, FailureClass)> = [0.995, 0.005, 0.12].iter().map(|&r| area_gate_ratio(r, &p)).collect();
    let want = [(false, FailureClass::UncontrolledGeneration), (false, FailureClass::NoChange), (true, FailureClass::None)];
    ensure(gates == want, || format!("{gates:?}"))?;
    Ok("means and area ratios routed as specified".into())
}

fn leakage_gate() -> Outcome {
    let rec = |id: &str, source: &str, split| ImageSample {
        id: id.into(),
        source_id: source.into(),
        role: Role::Authentic,
        width: 8,
        height: 8,
        image_path: format!("{id}.png"),
        mask_path: None,
        instruction: None,
        split,
        subset: None,
    };
    let m = DatasetManifest::new(
        "/",
        vec![rec("a", "s0", Split::Train), rec("b", "s0", Split::Val), rec("c", "s1", Split::Test), rec("d", "s1", Split::Test)],
    )
    .map_err(|e| e.to_string())?;
    let v = check_split_leakage(&m);
    ensure(v.len() == 1 && v[0].source_id == "s0", || format!("{v:?}"))?;
    let mut manifests = 0;
    for seed in 0..20 {
        for count in [1, 2, 5, 17, 40] {
            let samples = generate(&SynthConfig { count, seed, width: 8, height: 8, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
            let m = DatasetManifest::new("/", samples.into_iter().map(|s| s.record).collect()).map_err(|e| e.to_string())?;
            ensure(check_split_leakage(&m).is_empty(), || format!("seed {seed} count {count} leaks"))?;
            manifests += 1;
        }
    }
    Ok(format!("cross-split pair -> 1 violation; {manifests} synthetic manifests -> 0"))
}

fn degradation_harness() -> Outcome {
    let samples = generate(&SynthConfig { count: 6, width: 24, height: 24, seed: 3, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    for s in &samples {
        let same = degrade(&s.image, DegradationKind::GaussianBlur, 0).map_err(|e| e.to_string())?;
        let bits = |i: &RgbImage| i.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&same) == bits(&s.image), || format!("{}: blur 0 not bit-identical", s.record.id))?;
        let plane = |img: &RgbImage| Matrix::from_shape_fn((24, 24), |(y, x)| img.pixel(x, y)[0]);
        let mut prev = common::naive_band_energy(&plane(&s.image), 0.25).1;
        for k in [3, 7, 11, 15, 19] {
            let blurred = degrade(&s.image, DegradationKind::GaussianBlur, k).map_err(|e| e.to_string())?;
            let e = common::naive_band_energy(&plane(&blurred), 0.25).1;
            ensure(e < prev, || format!("{}: energy not decreasing at kernel {k} ({e} >= {prev})", s.record.id))?;
            prev = e;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = synthesize(dir.path(), &SynthConfig { count: 4, width: 24, height: 20, seed: 1, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    let model = Mfpt::new(common::tiny_config(), 0).map_err(|e| e.to_string())?;
    let spec = DegradationSpec::parse(DegradationKind::Jpeg, "100,90,80,70,60,50").map_err(|e| e.to_string())?;
    let rows = robustness_sweep(&model, &manifest, &spec, "DEAL-Full", 0.5).map_err(|e| e.to_string())?;
    let csv = robustness_csv(&rows);
    let levels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    ensure(csv.starts_with("level,IoU,pF1\n") && levels == ["100", "90", "80", "70", "60", "50"], || csv.clone())?;
    Ok("blur 0 bit-identical; high-band energy strictly decreasing over 3..19 on 6 images; 6 ordered JPEG rows".into())
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let logits = Matrix::from_shape_fn((2, 256), |_| rng.random_range(-4.0..4.0));
    let mask = common::random_mask(&mut rng, 16, 16, 0.3);
    let err = |e: mfpt_core::Error| e.to_string();
    let w = |lambda_dice, lambda_ce| LossWeights { lambda_dice, lambda_ce };
    let (d, b) = (dice_loss(&logits, &mask).map_err(err)?, bce_loss(&logits, &mask).map_err(err)?);
    ensure(total_loss(&logits, &mask, w(1.0, 0.0)).map_err(err)? == d, || "(1,0) != Dice".into())?;
    ensure(total_loss(&logits, &mask, w(0.0, 1.0)).map_err(err)? == b, || "(0,1) != BCE".into())?;

    let half = bce_loss(&Matrix::zeros((2, 256)), &mask).map_err(err)?;
    ensure((half - std::f64::consts::LN_2).abs() <= 1e-9, || format!("uniform 0.5 BCE {half}"))?;

    let perfect = Matrix::from_shape_fn((2, 256), |(r, i)| if r == 1 { 1000.0 * (2.0 * f64::from(mask.values()[i]) - 1.0) } else { 0.0 });
    let (pd, pb) = (dice_loss(&perfect, &mask).map_err(err)?, bce_loss(&perfect, &mask).map_err(err)?);
    ensure(pd < 1e-3 && pb < 1e-6, || format!("perfect: Dice {pd:e}, BCE {pb:e}"))?;
    Ok(format!("component weights exact; |BCE(0.5) - ln 2| = {:.1e}; perfect Dice {pd:.1e}, BCE {pb:.1e}", (half - std::f64::consts::LN_2).abs()))
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn mfpt(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mfpt")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("mfpt {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    for d in ["data_a", "data_b"] {
        mfpt(&["synth", "--out", &p(d), "--count", "6", "--size", "24x20", "--seed", "7"])?;
    }
    ensure(tree_bytes(&dir.path().join("data_a")) == tree_bytes(&dir.path().join("data_b")), || "synth outputs differ".into())?;

    let cfg = serde_json::json!({"model": common::tiny_config(), "train": {"batch_size": 4, "eval_interval": 5}});
    fs::write(dir.path().join("tiny.json"), cfg.to_string()).map_err(|e| e.to_string())?;
    let manifest = p("data_a/manifest.jsonl");
    for run in ["run_a", "run_b"] {
        mfpt(&["train", "--config", &p("tiny.json"), "--manifest", &manifest, "--out", &p(run), "--iterations", "15", "--seed", "3"])?;
    }
    ensure(tree_bytes(&dir.path().join("run_a")) == tree_bytes(&dir.path().join("run_b")), || "train outputs differ".into())?;

    let ckpt = p("run_a/best.safetensors");
    let a = mfpt(&["eval", "--checkpoint", &ckpt, "--manifest", &manifest, "--out", &p("eval_a.json")])?;
    let b = mfpt(&["--workers", "1", "eval", "--checkpoint", &ckpt, "--manifest", &manifest, "--out", &p("eval_b.json")])?;
    let (fa, fb) = (fs::read(p("eval_a.json")).unwrap(), fs::read(p("eval_b.json")).unwrap());
    ensure(a == b && fa == fb && a == fa, || "eval outputs differ".into())?;
    Ok("synth, train (checkpoint, trace, config) and eval reruns byte-identical".into())
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("metric oracle equivalence", metric_oracle),
        ("hand-derived metric fixture", metric_fixture),
        ("high-pass invariant", highpass_invariant),
        ("frozen-gradient contract", frozen_gradient_contract),
        ("FFrP gradient check", gradient_check),
        ("head/channel split", head_split),
        ("overfit sanity", overfit),
        ("gate identity", gate_identity),
        ("triage conformance", triage_conformance),
        ("leakage gate", leakage_gate),
        ("degradation harness", degradation_harness),
        ("loss identities", loss_identities),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
