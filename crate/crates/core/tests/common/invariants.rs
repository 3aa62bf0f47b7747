//! Structural invariants: kernel norms, activation sums, argmax equivalence
//! with the unshifted likelihoods, metric oracles and target-label isolation.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use compseg::data::{synthesize_toy_dataset, write_toy_dataset, Mask, Sample, Spacing};
use compseg::grid::Grid;
use compseg::metrics::{assd, dsc, Connectivity};
use compseg::nn::scalar;
use compseg::train::{fold_data, train_epoch, train_step, validate, Dataset, Mode, Model, TrainConfig, TrainState};
use compseg::vmf::{activations, normalize_features, KernelBank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{e, ensure, Check};

pub fn checks() -> Vec<Check> {
    vec![
        ("kernel rows unit norm after every step", kernel_norms),
        ("composition maps sum to 1 per position", composition_sums),
        ("argmax of likelihoods equals argmax of shifted and normalized forms", argmax_equivalence),
        ("dsc and assd match brute force on 1000 random mask pairs", metric_oracles),
        ("poisoned target masks leave training losses bit-identical", poisoned_target_masks),
    ]
}

/// Small networks for fast end-to-end runs on 32x32 toy images.
pub fn tiny_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        seed: 3,
        epochs: 1,
        num_folds: 2,
        base_width: 4,
        feature_channels: 8,
        encoder_res_blocks: 1,
        generator_res_blocks: 1,
        disc_width: 4,
        head_width: 4,
        unet_width: 4,
        num_kernels: 4,
        ..TrainConfig::default()
    }
}

pub fn tiny_dataset(dir: &Path, n: usize) -> Dataset {
    let data = synthesize_toy_dataset(n, 32, 5).unwrap();
    write_toy_dataset(dir, &data).unwrap();
    Dataset::load(dir).unwrap()
}

fn kernel_norms() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(e)?;
    let ds = tiny_dataset(dir.path(), 8);
    let mut cfg = tiny_config(Mode::Proposed);
    cfg.lr = 1e-2;
    let mut state = TrainState::new(cfg, ds.image_size, ds.class_names(), 0).map_err(e)?;
    for step in 0..6 {
        let lab: Vec<&Sample> = ds.source[step..step + 2].iter().collect();
        let unl: Vec<_> = ds.target[step..step + 2].iter().map(|s| &s.image).collect();
        train_step(&mut state, &lab, &unl).map_err(e)?;
        let Model::Proposed(m) = &state.model else {
            return Err("expected the proposed model".into());
        };
        let dev = m.bank.max_norm_deviation().map_err(e)?;
        ensure(dev <= 1e-6, || format!("step {step}: max row-norm deviation {dev}"))?;
    }
    Ok(())
}

fn composition_sums() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for dtype in [DType::F64, DType::F32] {
        let bank = KernelBank::new(10, 16, 30.0, &mut rng, dtype).map_err(e)?;
        let z: Vec<f64> = (0..2 * 16 * 8 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = Tensor::from_vec(z, (2, 16, 8, 8), &Device::Cpu).map_err(e)?.to_dtype(dtype).map_err(e)?;
        let z = normalize_features(&z).map_err(e)?.values;
        let comp = activations(&bank, &z, true).map_err(e)?;
        let sums = comp
            .activations
            .to_dtype(DType::F64)
            .map_err(e)?
            .sum(1)
            .map_err(e)?
            .flatten_all()
            .map_err(e)?
            .to_vec1::<f64>()
            .map_err(e)?;
        let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        ensure(worst <= 1e-6, || format!("{dtype:?}: sums off by {worst}"))?;
        let min = scalar(&comp.activations.min_all().map_err(e)?).map_err(e)?;
        ensure(min >= 0.0, || format!("negative activation {min}"))?;
    }
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_equivalence() -> Result<(), String> {
    const N: usize = 1000;
    const C: usize = 16;
    const J: usize = 10;
    const SIGMA: f64 = 30.0;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let bank = KernelBank::new(J, C, SIGMA, &mut rng, DType::F64).map_err(e)?;
    let mu = bank.mu().as_tensor().to_vec2::<f64>().map_err(e)?;
    let mut zs = Vec::with_capacity(N * C);
    for _ in 0..N {
        let v: Vec<f64> = (0..C).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        zs.extend(v.iter().map(|x| x / n));
    }
    // (N, C) -> (1, C, 1, N)
    let z = Tensor::from_vec(zs.clone(), (N, C), &Device::Cpu)
        .map_err(e)?
        .t()
        .map_err(e)?
        .reshape((1, C, 1, N))
        .map_err(e)?;
    let flat = |t: Tensor| -> Result<Vec<Vec<f64>>, String> {
        t.reshape((J, N)).map_err(e)?.t().map_err(e)?.to_vec2::<f64>().map_err(e)
    };
    let raw = flat(activations(&bank, &z, false).map_err(e)?.activations)?;
    let norm = flat(activations(&bank, &z, true).map_err(e)?.activations)?;
    for i in 0..N {
        let zi = &zs[i * C..(i + 1) * C];
        // unshifted likelihood up to the common normalizing constant
        let lik: Vec<f64> = mu
            .iter()
            .map(|m| (SIGMA * m.iter().zip(zi).map(|(a, b)| a * b).sum::<f64>()).exp())
            .collect();
        let want = argmax(&lik);
        ensure(argmax(&raw[i]) == want, || format!("vector {i}: raw argmax {} vs {want}", argmax(&raw[i])))?;
        ensure(argmax(&norm[i]) == want, || format!("vector {i}: normalized argmax {} vs {want}", argmax(&norm[i])))?;
    }
    Ok(())
}

/// Foreground pixels with a 4-neighbour outside the class or the image.
fn brute_boundary(m: &Grid<u8>, class: u8) -> Vec<(i64, i64)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && m.get(r as usize, c as usize) == class;
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if inside(r, c) && [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)].iter().any(|&(a, b)| !inside(a, b)) {
                out.push((r, c));
            }
        }
    }
    out
}

fn brute_assd(a: &Grid<u8>, b: &Grid<u8>, class: u8, sp: Spacing) -> Option<f64> {
    let ba = brute_boundary(a, class);
    let bb = brute_boundary(b, class);
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let directed = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        from.iter()
            .map(|&(r, c)| {
                to.iter()
                    .map(|&(r2, c2)| {
                        let dr = (r - r2) as f64 * sp.row_mm;
                        let dc = (c - c2) as f64 * sp.col_mm;
                        (dr * dr + dc * dc).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    Some(0.5 * (directed(&ba, &bb) + directed(&bb, &ba)))
}

fn brute_dsc(a: &Grid<u8>, b: &Grid<u8>, class: u8) -> f64 {
    let ca = a.as_slice().iter().filter(|&&v| v == class).count();
    let cb = b.as_slice().iter().filter(|&&v| v == class).count();
    let both = a.as_slice().iter().zip(b.as_slice()).filter(|(&x, &y)| x == class && y == class).count();
    if ca + cb == 0 {
        100.0
    } else {
        200.0 * both as f64 / (ca + cb) as f64
    }
}

/// Random 16x16 labels mixing sparse noise and filled rectangles.
pub fn random_mask(rng: &mut ChaCha8Rng, k: u8) -> Mask {
    let density = rng.random_range(0.0..0.6);
    let mut g = Grid::from_fn(16, 16, |_, _| {
        if rng.random_bool(density) {
            rng.random_range(1..=k)
        } else {
            0
        }
    });
    for _ in 0..rng.random_range(0..3) {
        let (r0, c0) = (rng.random_range(0..16), rng.random_range(0..16));
        let (r1, c1) = (rng.random_range(r0..16), rng.random_range(c0..16));
        let l = rng.random_range(0..=k);
        for r in r0..=r1 {
            for c in c0..=c1 {
                g.set(r, c, l);
            }
        }
    }
    Mask::new(g, k).unwrap()
}

fn metric_oracles() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for case in 0..1000 {
        let a = random_mask(&mut rng, 3);
        let b = random_mask(&mut rng, 3);
        let sp = Spacing::new(rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)).map_err(e)?;
        for class in 1..=3 {
            let d = dsc(&a, &b, class).map_err(e)?;
            let want = brute_dsc(&a.labels, &b.labels, class);
            ensure((d - want).abs() <= 1e-9, || format!("case {case} class {class}: dsc {d} vs {want}"))?;
            let s = assd(&a, &b, class, sp, Connectivity::Four).map_err(e)?;
            let want = brute_assd(&a.labels, &b.labels, class, sp);
            let ok = match (s, want) {
                (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
                (None, None) => true,
                _ => false,
            };
            ensure(ok, || format!("case {case} class {class}: assd {s:?} vs {want:?}"))?;
        }
    }
    Ok(())
}

/// Loss logs of one epoch plus validation, as exact bit patterns.
fn epoch_bits(ds: &Dataset) -> Result<Vec<u64>, String> {
    let cfg = tiny_config(Mode::Proposed);
    let (src, tgt) = ds.folds(&cfg).map_err(e)?;
    let data = fold_data(cfg.mode, ds, &src[0], &tgt[0]).map_err(e)?;
    let mut state = TrainState::new(cfg, ds.image_size, ds.class_names(), 0).map_err(e)?;
    let l = train_epoch(&mut state, &data).map_err(e)?;
    let v = validate(&state, &data).map_err(e)?;
    Ok([l.cycle, l.gen_x, l.gen_y, l.disc_x, l.disc_y, l.vmf, l.seg, l.total, v.dsc, v.cycle_error, v.score]
        .iter()
        .map(|x| x.to_bits())
        .collect())
}

fn poisoned_target_masks() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(e)?;
    let clean = tiny_dataset(dir.path(), 12);
    let mut poisoned = clean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for s in &mut poisoned.target {
        let k = s.mask.as_ref().map_or(3, |m| m.num_classes);
        s.mask = Some(random_mask_sized(&mut rng, s.image.dims(), k));
    }
    let mut absent = clean.clone();
    let (_, tgt) = clean.folds(&tiny_config(Mode::Proposed)).map_err(e)?;
    for s in &mut absent.target {
        if !tgt[0].test_ids.iter().any(|id| id == s.id()) {
            s.mask = None;
        }
    }
    let a = epoch_bits(&clean)?;
    ensure(a == epoch_bits(&poisoned)?, || "poisoned target masks changed the losses".into())?;
    ensure(a == epoch_bits(&absent)?, || "removing target masks changed the losses".into())
}

fn random_mask_sized(rng: &mut ChaCha8Rng, (h, w): (usize, usize), k: u8) -> Mask {
    Mask::new(Grid::from_fn(h, w, |_, _| rng.random_range(0..=k)), k).unwrap()
}
