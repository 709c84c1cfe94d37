//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use mfpt_core::autograd::Matrix;
use mfpt_core::data::{PixelMask, Split};
use mfpt_core::model::{FfrpStage, Graph, MfptConfig, ParamStore};
use mfpt_core::synth::{generate, SynthConfig};
use mfpt_core::train::Example;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> PixelMask {
    PixelMask::from_fn(w, h, |_, _| rng.random_bool(density))
}

/// `(tp, fp, fn, tn)` by visiting pixels through coordinates.
pub fn brute_confusion(pred: &PixelMask, gt: &PixelMask) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => c.3 += 1,
            }
        }
    }
    c
}

/// Signed frequency index of DFT bin `k` out of `n`.
fn signed(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n = n as f64;
    if k < n / 2.0 {
        k
    } else {
        k - n
    }
}

/// O(N⁴) DFT high-pass: zero every bin strictly inside the disk of radius
/// `cutoff · min(W, H) / 2` around DC, then invert.
pub fn naive_highpass(gray: &Matrix, cutoff: f64) -> Matrix {
    let (h, w) = gray.dim();
    let radius = cutoff * w.min(h) as f64 / 2.0;
    let mut re = vec![0.0; w * h];
    let mut im = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let (fu, fv) = (signed(u, w), signed(v, h));
            if (fu * fu + fv * fv).sqrt() < radius {
                continue;
            }
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let a = -TAU * (u as f64 * x as f64 / w as f64 + v as f64 * y as f64 / h as f64);
                    sr += gray[[y, x]] * a.cos();
                    si += gray[[y, x]] * a.sin();
                }
            }
            re[v * w + u] = sr;
            im[v * w + u] = si;
        }
    }
    Matrix::from_shape_fn((h, w), |(y, x)| {
        let mut s = 0.0;
        for v in 0..h {
            for u in 0..w {
                let a = TAU * (u as f64 * x as f64 / w as f64 + v as f64 * y as f64 / h as f64);
                s += re[v * w + u] * a.cos() - im[v * w + u] * a.sin();
            }
        }
        s / (w * h) as f64
    })
}

/// Energy of the naive DFT bins inside and outside the cutoff disk.
pub fn naive_band_energy(plane: &Matrix, cutoff: f64) -> (f64, f64) {
    let (h, w) = plane.dim();
    let radius = cutoff * w.min(h) as f64 / 2.0;
    let (mut inside, mut outside) = (0.0, 0.0);
    for v in 0..h {
        for u in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let a = -TAU * (u as f64 * x as f64 / w as f64 + v as f64 * y as f64 / h as f64);
                    sr += plane[[y, x]] * a.cos();
                    si += plane[[y, x]] * a.sin();
                }
            }
            let (fu, fv) = (signed(u, w), signed(v, h));
            if (fu * fu + fv * fv).sqrt() < radius {
                inside += sr * sr + si * si;
            } else {
                outside += sr * sr + si * si;
            }
        }
    }
    (inside, outside)
}

/// Loop-based multi-head attention: query token `i` attends to key tokens
/// `keys`; heads own consecutive channel blocks.
pub fn attention_oracle(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> Matrix {
    let d = q.nrows();
    let dh = d / heads;
    let mut out = Matrix::zeros((d, q.ncols()));
    for h in 0..heads {
        let rows = h * dh..(h + 1) * dh;
        for i in 0..q.ncols() {
            let scores: Vec<f64> = (0..k.ncols())
                .map(|j| rows.clone().map(|r| q[[r, i]] * k[[r, j]]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for r in rows.clone() {
                out[[r, i]] = (0..k.ncols()).map(|j| e[j] / z * v[[r, j]]).sum();
            }
        }
    }
    out
}

pub fn affine(store: &ParamStore, name: &str, x: &Matrix) -> Matrix {
    let w = &store.by_name(&format!("{name}.w")).unwrap().value;
    let b = &store.by_name(&format!("{name}.b")).unwrap().value;
    let mut y = w.dot(x);
    for mut col in y.columns_mut() {
        col += &b.column(0);
    }
    y
}

/// FFrP stage with Ĉ = 4 channels over L̂ = 6 tokens (a 3×2 patch grid),
/// four heads at ratio 0.75 and windows of four tokens.
pub fn small_ffrp_config() -> MfptConfig {
    MfptConfig {
        n_blocks: 1,
        tap_stages: vec![1],
        patch_size: 8,
        input_size: [24, 16],
        backbone_channels: 4,
        embed_channels: 4,
        backbone_heads: 2,
        head_count: 4,
        freq_ratio: 0.75,
        group_length: 4,
        adapter_rank: 2,
        decoder_channels: 4,
        ..MfptConfig::default()
    }
}

pub fn small_ffrp(rng: &mut ChaCha8Rng) -> (ParamStore, FfrpStage) {
    let cfg = small_ffrp_config();
    let mut store = ParamStore::new();
    let stage = FfrpStage::register(&mut store, &cfg, 1, rng).unwrap();
    // Move the tokens away from their symmetric initial values.
    for (_, p) in store.iter_mut() {
        if p.name.ends_with("_token") {
            p.value.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
        }
    }
    (store, stage)
}

pub fn ffrp_output(store: &ParamStore, stage: &FfrpStage, x: &Matrix) -> Matrix {
    let mut g = Graph::new(store, false);
    let xv = g.tape.constant(x.clone());
    let out = stage.forward(&mut g, xv).unwrap();
    g.tape.value(out).clone()
}

/// Largest relative deviation between analytic and central-difference
/// gradients of `Σ W ⊙ FFrP(X)` over the input and every stage parameter.
pub fn ffrp_gradient_check(seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (store, stage) = small_ffrp(&mut rng);
    let x = Matrix::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
    let weights = Matrix::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
    let objective = |s: &ParamStore, x: &Matrix| (ffrp_output(s, &stage, x) * &weights).sum();

    let mut g = Graph::new(&store, true);
    let xv = g.tape.variable(x.clone());
    let out = stage.forward(&mut g, xv).unwrap();
    let grads = g.tape.backward(out, weights.clone());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    let gx = grads.wrt(xv).unwrap();
    for idx in ndarray::indices(x.dim()) {
        let mut a = x.clone();
        a[idx] += h;
        let mut b = x.clone();
        b[idx] -= h;
        compare(gx[idx], (objective(&store, &a) - objective(&store, &b)) / (2.0 * h));
    }
    let analytic: std::collections::HashMap<usize, Matrix> =
        grads.params().map(|(i, m)| (i, m.clone())).collect();
    for (id, p) in store.iter() {
        let ga = analytic.get(&id.0).unwrap_or_else(|| panic!("no gradient for {}", p.name));
        for idx in ndarray::indices(p.value.dim()) {
            let mut plus = store.clone();
            plus.value_mut(id)[idx] += h;
            let mut minus = store.clone();
            minus.value_mut(id)[idx] -= h;
            compare(ga[idx], (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * h));
        }
    }
    worst
}

/// Eight synthetic samples (four authentic, four edited) at 64×64.
pub fn overfit_examples(seed: u64) -> Vec<Example> {
    generate(&SynthConfig {
        count: 8,
        seed,
        split_cycle: vec![Split::Train],
        ..SynthConfig::default()
    })
    .unwrap()
    .into_iter()
    .map(|s| Example {
        id: s.record.id.clone(),
        mask: s.mask.unwrap_or_else(|| PixelMask::zeros(64, 64)),
        image: s.image,
    })
    .collect()
}

/// A fast two-block model on 16×16 inputs.
pub fn tiny_config() -> MfptConfig {
    MfptConfig {
        n_blocks: 2,
        tap_stages: vec![1, 2],
        patch_size: 4,
        input_size: [16, 16],
        backbone_channels: 16,
        embed_channels: 16,
        backbone_heads: 2,
        head_count: 4,
        group_length: 4,
        adapter_rank: 4,
        decoder_channels: 8,
        ..MfptConfig::default()
    }
}

/// Synthetic examples at `size × size`, all in one split.
pub fn synth_examples(count: usize, size: usize, seed: u64) -> Vec<Example> {
    generate(&SynthConfig {
        count,
        width: size,
        height: size,
        seed,
        split_cycle: vec![Split::Train],
        ..SynthConfig::default()
    })
    .unwrap()
    .into_iter()
    .map(|s| Example {
        id: s.record.id.clone(),
        mask: s.mask.unwrap_or_else(|| PixelMask::zeros(size, size)),
        image: s.image,
    })
    .collect()
}

/// Manifest over masks written to `dir`; `None` marks an authentic record.
pub fn mask_manifest(
    dir: &std::path::Path,
    masks: &[(String, Option<PixelMask>, usize, usize)],
) -> mfpt_core::data::DatasetManifest {
    use mfpt_core::data::{DatasetManifest, ImageSample, Role};
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    let records = masks
        .iter()
        .map(|(id, mask, w, h)| {
            let mask_path = mask.as_ref().map(|m| {
                let rel = format!("masks/{id}.png");
                m.save_png(&dir.join(&rel)).unwrap();
                rel
            });
            ImageSample {
                id: id.clone(),
                source_id: id.clone(),
                role: if mask.is_some() { Role::Edited } else { Role::Authentic },
                width: *w as u32,
                height: *h as u32,
                image_path: format!("images/{id}.png"),
                mask_path,
                instruction: None,
                split: Split::Test,
                subset: None,
            }
        })
        .collect();
    DatasetManifest::new(dir, records).unwrap()
}
