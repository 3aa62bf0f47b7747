//! Closed-form and brute-force examples for the translation losses, kernel
//! activations, segmentation objective and evaluation metrics, at f64.

use candle_core::{DType, Device, Tensor};
use compseg::data::{Domain, Image, Mask, Spacing};
use compseg::grid::Grid;
use compseg::metrics::{aggregate, assd, dsc, largest_component, Connectivity, ImageMetrics};
use compseg::nn::{images_to_tensor, masks_to_one_hot, scalar};
use compseg::seg::{dice_loss, seg_training_loss, segment, segment_features, SegHead, SegPath, SegPathOptions, DICE_EPS};
use compseg::translation::{
    cycle_loss, disc_loss, gen_loss, CrossDomain, Encoder, TranslationArch, TranslationNets,
};
use compseg::vmf::{activations, cluster_loss, normalize_features, KernelBank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::tiny_arch;
use super::{close, e, ensure, Check};

const TOL: f64 = 1e-9;

pub fn checks() -> Vec<Check> {
    vec![
        ("encode: 64x64 input gives 64x16x16 features", encode_shape),
        ("encode: deterministic and batch order preserving", encode_batch),
        ("generate: bounded, shape round trip, deterministic", generate_contract),
        ("cycle loss: identity maps give 0", cycle_identity),
        ("cycle loss: constant offset c gives |c| per direction", cycle_offset),
        ("cycle loss: swapping domains swaps the terms", cycle_symmetry),
        ("generator loss: scores 1, 0, 0.5", gen_examples),
        ("discriminator loss: (1,0), (0.5,0.5), (0,1)", disc_examples),
        ("normalize features: 3-4-5, unit, zero", normalize_examples),
        ("activations: e/(e+1) two-kernel case", activation_softmax),
        ("activations: identical kernels are uniform", activation_uniform),
        ("activations: aligned raw activation is 1", activation_aligned),
        ("activations: non-unit input rejected", activation_guard),
        ("cluster loss: -1 aligned, 0 orthogonal", cluster_extremes),
        ("cluster loss: brute-force max oracle", cluster_oracle),
        ("renormalize: (2,0,0) and unit rows", renormalize_examples),
        ("segment: 4x64x64 probabilities summing to 1, deterministic", segment_contract),
        ("segment: channel mismatch rejected", segment_guard),
        ("dice loss: perfect, disjoint, half overlap", dice_examples),
        ("segmentation path equals the direct path under identity stages", seg_path_consistency),
        ("segmentation path reaches every stage, loss in [0, 1]", seg_path_gradients),
        ("dsc: identical, disjoint, half overlap, empty, unknown class", dsc_examples),
        ("assd: identical, singletons 3 apart, empty", assd_examples),
        ("largest component: artifact removed, idempotent", component_examples),
        ("aggregate: two folds, single fold, undefined counted", aggregate_examples),
    ]
}

fn t(values: Vec<f64>, shape: &[usize]) -> Result<Tensor, String> {
    Tensor::from_vec(values, shape, &Device::Cpu).map_err(e)
}

fn image(seed: u64, size: usize, domain: Domain) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image {
        id: format!("img{seed}"),
        domain,
        spacing: Spacing::isotropic(),
        pixels: Grid::from_fn(size, size, |_, _| rng.random_range(-1.0f32..1.0)),
    }
}

fn max_abs(a: &Tensor, b: &Tensor) -> Result<f64, String> {
    scalar(&(a - b).map_err(e)?.abs().map_err(e)?.max_all().map_err(e)?).map_err(e)
}

fn default_nets() -> Result<TranslationNets, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    TranslationNets::new(TranslationArch::default(), (64, 64), &mut rng, DType::F64).map_err(e)
}

fn encode_shape() -> Result<(), String> {
    let nets = default_nets()?;
    let z = nets.encode(&image(2, 64, Domain::Source)).map_err(e)?;
    ensure(z.values.dims() == [64, 16, 16], || format!("got {:?}", z.values.dims()))?;
    let wrong = image(3, 32, Domain::Source);
    ensure(nets.encode(&wrong).is_err(), || "32x32 input accepted".into())
}

fn encode_batch() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nets = TranslationNets::new(tiny_arch(), (16, 16), &mut rng, DType::F64).map_err(e)?;
    let imgs: Vec<Image> = (0..4).map(|i| image(10 + i, 16, Domain::Target)).collect();
    let a = nets.encode(&imgs[0]).map_err(e)?;
    let b = nets.encode(&imgs[0]).map_err(e)?;
    ensure(max_abs(&a.values, &b.values)? == 0.0, || "encode not deterministic".into())?;
    let refs: Vec<&Image> = imgs.iter().collect();
    let batch = nets.enc_y.forward(&images_to_tensor(&refs, DType::F64).map_err(e)?).map_err(e)?;
    ensure(batch.dims()[0] == 4, || format!("batch gave {:?}", batch.dims()))?;
    for (i, img) in imgs.iter().enumerate() {
        let single = nets.encode(img).map_err(e)?.values;
        let d = max_abs(&batch.get(i).map_err(e)?, &single)?;
        ensure(d <= TOL, || format!("batch element {i} differs by {d}"))?;
    }
    Ok(())
}

fn generate_contract() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nets = TranslationNets::new(tiny_arch(), (16, 16), &mut rng, DType::F64).map_err(e)?;
    let x = image(6, 16, Domain::Source);
    let z = nets.encode(&x).map_err(e)?;
    let a = nets.generate(&z, "a").map_err(e)?;
    let b = nets.generate(&z, "a").map_err(e)?;
    ensure(a.dims() == x.dims(), || format!("generated {:?}", a.dims()))?;
    ensure(a.domain == Domain::Target, || "generated in wrong domain".into())?;
    ensure(a.pixels == b.pixels, || "generate not deterministic".into())?;
    // large features push the output nonlinearity to saturation
    let big = compseg::translation::FeatureGrid {
        values: (z.values.clone() * 1e3).map_err(e)?,
        ..z
    };
    let c = nets.generate(&big, "c").map_err(e)?;
    ensure(
        a.pixels.as_slice().iter().chain(c.pixels.as_slice()).all(|v| (-1.0..=1.0).contains(v)),
        || "generated values outside [-1, 1]".into(),
    )
}

struct Identity;
impl CrossDomain for Identity {
    fn source_to_target(&self, x: &Tensor) -> compseg::Result<Tensor> {
        Ok(x.clone())
    }
    fn target_to_source(&self, y: &Tensor) -> compseg::Result<Tensor> {
        Ok(y.clone())
    }
}

struct Offset(f64);
impl CrossDomain for Offset {
    fn source_to_target(&self, x: &Tensor) -> compseg::Result<Tensor> {
        Ok(x.clone())
    }
    fn target_to_source(&self, y: &Tensor) -> compseg::Result<Tensor> {
        Ok((y + self.0)?)
    }
}

struct Swapped<'a, M>(&'a M);
impl<M: CrossDomain> CrossDomain for Swapped<'_, M> {
    fn source_to_target(&self, x: &Tensor) -> compseg::Result<Tensor> {
        self.0.target_to_source(x)
    }
    fn target_to_source(&self, y: &Tensor) -> compseg::Result<Tensor> {
        self.0.source_to_target(y)
    }
}

fn xy() -> Result<(Tensor, Tensor), String> {
    let x = image(7, 8, Domain::Source);
    let y = image(8, 8, Domain::Target);
    Ok((
        images_to_tensor(&[&x], DType::F64).map_err(e)?,
        images_to_tensor(&[&y], DType::F64).map_err(e)?,
    ))
}

fn cycle_identity() -> Result<(), String> {
    let (x, y) = xy()?;
    let l = cycle_loss(&x, &y, &Identity).map_err(e)?;
    close("identity cycle", scalar(&l.total().map_err(e)?).map_err(e)?, 0.0, 0.0)
}

fn cycle_offset() -> Result<(), String> {
    let (x, y) = xy()?;
    for c in [0.25, -0.7] {
        let l = cycle_loss(&x, &y, &Offset(c)).map_err(e)?;
        close("source term", scalar(&l.source).map_err(e)?, c.abs(), TOL)?;
        close("target term", scalar(&l.target).map_err(e)?, c.abs(), TOL)?;
    }
    Ok(())
}

fn cycle_symmetry() -> Result<(), String> {
    let (x, y) = xy()?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let nets = TranslationNets::new(tiny_arch(), (8, 8), &mut rng, DType::F64).map_err(e)?;
    let a = cycle_loss(&x, &y, &nets).map_err(e)?;
    let b = cycle_loss(&y, &x, &Swapped(&nets)).map_err(e)?;
    close("swapped source", scalar(&a.source).map_err(e)?, scalar(&b.target).map_err(e)?, 0.0)?;
    close("swapped target", scalar(&a.target).map_err(e)?, scalar(&b.source).map_err(e)?, 0.0)?;
    close(
        "total",
        scalar(&a.total().map_err(e)?).map_err(e)?,
        scalar(&b.total().map_err(e)?).map_err(e)?,
        TOL,
    )
}

fn filled(v: f64) -> Result<Tensor, String> {
    Tensor::full(v, (2, 1, 3, 3), &Device::Cpu).map_err(e)
}

fn gen_examples() -> Result<(), String> {
    for (s, want) in [(1.0, 0.0), (0.0, 0.5), (0.5, 0.125)] {
        close(&format!("gen({s})"), scalar(&gen_loss(&filled(s)?).map_err(e)?).map_err(e)?, want, TOL)?;
    }
    Ok(())
}

fn disc_examples() -> Result<(), String> {
    for (r, f, want) in [(1.0, 0.0, 0.0), (0.5, 0.5, 0.25), (0.0, 1.0, 1.0)] {
        let v = scalar(&disc_loss(&filled(r)?, &filled(f)?).map_err(e)?).map_err(e)?;
        close(&format!("disc({r}, {f})"), v, want, TOL)?;
    }
    Ok(())
}

fn normalize_examples() -> Result<(), String> {
    let z = t(vec![3.0, 0.6, 0.0, 4.0, 0.8, 0.0], &[1, 2, 1, 3])?;
    let n = normalize_features(&z).map_err(e)?;
    let v = n.values.flatten_all().map_err(e)?.to_vec1::<f64>().map_err(e)?;
    let want = [0.6, 0.6, 0.0, 0.8, 0.8, 0.0];
    for (g, w) in v.iter().zip(want) {
        close("normalized", *g, w, TOL)?;
    }
    ensure(n.zero_vectors == 1, || format!("{} zero vectors flagged", n.zero_vectors))
}

fn bank(rows: Vec<f64>, j: usize, c: usize, sigma: f64) -> Result<KernelBank, String> {
    KernelBank::from_directions(&t(rows, &[j, c])?, sigma).map_err(e)
}

fn channels(comp: &compseg::vmf::CompositionMap) -> Result<Vec<f64>, String> {
    comp.activations.flatten_all().map_err(e)?.to_vec1::<f64>().map_err(e)
}

fn activation_softmax() -> Result<(), String> {
    let b = bank(vec![1.0, 0.0, 0.0, 1.0], 2, 2, 1.0)?;
    let z = t(vec![1.0, 0.0], &[1, 2, 1, 1])?;
    let a = channels(&activations(&b, &z, true).map_err(e)?)?;
    let ee = std::f64::consts::E;
    close("kernel 1", a[0], ee / (ee + 1.0), TOL)?;
    close("kernel 2", a[1], 1.0 / (ee + 1.0), TOL)?;
    close("kernel 1 approx", a[0], 0.7311, 1e-4)
}

fn activation_uniform() -> Result<(), String> {
    let b = bank(vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8], 4, 2, 30.0)?;
    let z = normalize_features(&t(vec![1.0, -2.0, 0.5, 3.0, 1.0, 1.0], &[1, 2, 1, 3])?).map_err(e)?.values;
    for v in channels(&activations(&b, &z, true).map_err(e)?)? {
        close("uniform", v, 0.25, TOL)?;
    }
    Ok(())
}

fn activation_aligned() -> Result<(), String> {
    let b = bank(vec![0.6, 0.8, 0.8, -0.6], 2, 2, 30.0)?;
    let z = t(vec![0.6, 0.8], &[1, 2, 1, 1])?;
    let a = channels(&activations(&b, &z, false).map_err(e)?)?;
    close("aligned", a[0], 1.0, TOL)?;
    close("orthogonal", a[1], (-30.0f64).exp(), TOL)
}

fn activation_guard() -> Result<(), String> {
    let b = bank(vec![1.0, 0.0], 1, 2, 30.0)?;
    let z = t(vec![2.0, 0.0], &[1, 2, 1, 1])?;
    ensure(activations(&b, &z, true).is_err(), || "non-unit features accepted".into())
}

fn cluster_extremes() -> Result<(), String> {
    let b = bank(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 2, 3, 30.0)?;
    let aligned = t(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[1, 3, 1, 2])?;
    close("aligned", scalar(&cluster_loss(&b, &aligned).map_err(e)?).map_err(e)?, -1.0, TOL)?;
    let orth = t(vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0], &[1, 3, 1, 2])?;
    close("orthogonal", scalar(&cluster_loss(&b, &orth).map_err(e)?).map_err(e)?, 0.0, TOL)
}

fn cluster_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mu: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zr: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = bank(mu, 3, 4, 30.0)?;
        let z = normalize_features(&t(zr, &[1, 4, 2, 2])?).map_err(e)?.values;
        let m = b.mu().as_tensor().to_vec2::<f64>().map_err(e)?;
        let zv = z.flatten_all().map_err(e)?.to_vec1::<f64>().map_err(e)?;
        let mut total = 0.0;
        for i in 0..4 {
            let best = m
                .iter()
                .map(|row| (0..4).map(|c| row[c] * zv[c * 4 + i]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            total += best;
        }
        let got = scalar(&cluster_loss(&b, &z).map_err(e)?).map_err(e)?;
        close("oracle", got, -total / 4.0, TOL)?;
    }
    Ok(())
}

fn renormalize_examples() -> Result<(), String> {
    let b = bank(vec![2.0, 0.0, 0.0, 0.0, 0.6, 0.8], 2, 3, 30.0)?;
    let m = b.mu().as_tensor().to_vec2::<f64>().map_err(e)?;
    ensure(m[0] == vec![1.0, 0.0, 0.0], || format!("row 0 {:?}", m[0]))?;
    for (g, w) in m[1].iter().zip([0.0, 0.6, 0.8]) {
        close("unit row", *g, w, TOL)?;
    }
    b.renormalize().map_err(e)?;
    close("deviation", b.max_norm_deviation().map_err(e)?, 0.0, TOL)
}

fn head(seed: u64, j: usize) -> Result<SegHead, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SegHead::new(j, 8, 3, 2, &mut rng, DType::F64).map_err(e)
}

fn random_comp(seed: u64, j: usize, hw: usize) -> Result<compseg::vmf::CompositionMap, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<f64> = (0..j * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z: Vec<f64> = (0..6 * hw * hw).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = bank(mu, j, 6, 30.0)?;
    let z = normalize_features(&t(z, &[1, 6, hw, hw])?).map_err(e)?.values;
    activations(&b, &z, true).map_err(e)
}

fn segment_contract() -> Result<(), String> {
    let h = head(12, 10)?;
    let comp = random_comp(13, 10, 16)?;
    let a = segment(&h, &comp).map_err(e)?;
    ensure(a.probs.dims() == [1, 4, 64, 64], || format!("probs {:?}", a.probs.dims()))?;
    let sums = a.probs.sum(1).map_err(e)?.flatten_all().map_err(e)?.to_vec1::<f64>().map_err(e)?;
    let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("probabilities sum off by {worst}"))?;
    let b = segment(&h, &comp).map_err(e)?;
    ensure(max_abs(&a.probs, &b.probs)? == 0.0, || "segment not deterministic".into())?;
    ensure(a.masks == b.masks, || "masks differ".into())
}

fn segment_guard() -> Result<(), String> {
    let h = head(14, 10)?;
    let comp = random_comp(15, 3, 4)?;
    ensure(segment(&h, &comp).is_err(), || "3-channel map accepted by 10-channel head".into())
}

fn onehot(rows: &[u8], k: u8) -> Result<Tensor, String> {
    let m = Mask::new(Grid::from_vec(1, rows.len(), rows.to_vec()).map_err(e)?, k).map_err(e)?;
    masks_to_one_hot(&[&m], k, DType::F64).map_err(e)
}

fn dice_examples() -> Result<(), String> {
    let target = onehot(&[0, 1, 1, 2, 2, 0], 2)?;
    close("perfect", scalar(&dice_loss(&target, &target).map_err(e)?).map_err(e)?, 0.0, 1e-6)?;
    let a = onehot(&[1, 1, 1, 1, 0, 0, 0, 0], 1)?;
    let b = onehot(&[0, 0, 0, 0, 1, 1, 1, 1], 1)?;
    let disjoint = scalar(&dice_loss(&a, &b).map_err(e)?).map_err(e)?;
    close("disjoint", disjoint, 1.0 - DICE_EPS / (8.0 + DICE_EPS), TOL)?;
    let c = onehot(&[0, 0, 1, 1, 1, 1, 0, 0], 1)?;
    let half = scalar(&dice_loss(&a, &c).map_err(e)?).map_err(e)?;
    close("half overlap (with smoothing)", half, 1.0 - (4.0 + DICE_EPS) / (8.0 + DICE_EPS), TOL)?;
    close("half overlap", half, 0.5, 1e-6)
}

/// Source encoder from real networks, identity translation and re-encoding.
struct DirectPath(Encoder);
impl SegPath for DirectPath {
    fn encode_source(&self, x: &Tensor) -> compseg::Result<Tensor> {
        self.0.forward(x)
    }
    fn generate_target(&self, z: &Tensor) -> compseg::Result<Tensor> {
        Ok(z.clone())
    }
    fn encode_target(&self, y: &Tensor) -> compseg::Result<Tensor> {
        Ok(y.clone())
    }
}

fn seg_fixture() -> Result<(TranslationNets, KernelBank, SegHead, Tensor, Tensor), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let nets = TranslationNets::new(tiny_arch(), (8, 8), &mut rng, DType::F64).map_err(e)?;
    let bank = KernelBank::new(3, 4, 30.0, &mut rng, DType::F64).map_err(e)?;
    let head = SegHead::new(3, 4, 2, 2, &mut rng, DType::F64).map_err(e)?;
    let x = images_to_tensor(&[&image(17, 8, Domain::Source), &image(18, 8, Domain::Source)], DType::F64)
        .map_err(e)?;
    let masks: Vec<Mask> = (0..2)
        .map(|_| Mask::new(Grid::from_fn(8, 8, |_, _| rng.random_range(0..3u8)), 2).unwrap())
        .collect();
    let target = masks_to_one_hot(&masks.iter().collect::<Vec<_>>(), 2, DType::F64).map_err(e)?;
    Ok((nets, bank, head, x, target))
}

fn seg_path_consistency() -> Result<(), String> {
    let (nets, bank, head, x, target) = seg_fixture()?;
    let opts = SegPathOptions::default();
    let path = DirectPath(nets.enc_x.clone());
    let via_path = scalar(&seg_training_loss(&x, &target, &path, &bank, &head, opts).map_err(e)?).map_err(e)?;
    let probs = segment_features(&nets.enc_x.forward(&x).map_err(e)?, &bank, &head, opts).map_err(e)?;
    let direct = scalar(&dice_loss(&probs, &target).map_err(e)?).map_err(e)?;
    close("path vs direct", via_path, direct, 0.0)
}

fn seg_path_gradients() -> Result<(), String> {
    let (nets, bank, head, x, target) = seg_fixture()?;
    let loss = seg_training_loss(&x, &target, &nets, &bank, &head, SegPathOptions::default()).map_err(e)?;
    let v = scalar(&loss).map_err(e)?;
    ensure((0.0..=1.0).contains(&v), || format!("loss {v} outside [0, 1]"))?;
    let grads = loss.backward().map_err(e)?;
    for (name, store) in [
        ("enc_x", nets.enc_x.params()),
        ("gen_y", nets.gen_y.params()),
        ("enc_y", nets.enc_y.params()),
        ("kernels", bank.params()),
        ("head", head.params()),
    ] {
        let g = store.grad_norm_sq(&grads).map_err(e)?;
        ensure(g > 0.0, || format!("no gradient reaches {name}"))?;
    }
    for (name, store) in [("gen_x", nets.gen_x.params()), ("disc_y", nets.disc_y.params())] {
        let g = store.grad_norm_sq(&grads).map_err(e)?;
        ensure(g == 0.0, || format!("{name} receives gradient {g} from the segmentation path"))?;
    }
    let frozen = SegPathOptions {
        kernel_gradients: false,
        ..Default::default()
    };
    let grads = seg_training_loss(&x, &target, &nets, &bank, &head, frozen)
        .map_err(e)?
        .backward()
        .map_err(e)?;
    let g = bank.params().grad_norm_sq(&grads).map_err(e)?;
    ensure(g == 0.0, || format!("stopped kernels still receive gradient {g}"))
}

fn row(bits: &[u8], k: u8) -> Mask {
    Mask::new(Grid::from_vec(1, bits.len(), bits.to_vec()).unwrap(), k).unwrap()
}

fn dsc_examples() -> Result<(), String> {
    let a = row(&[1, 1, 1, 1, 0, 0, 0, 0], 1);
    let b = row(&[0, 0, 1, 1, 1, 1, 0, 0], 1);
    let c = row(&[0, 0, 0, 0, 1, 1, 1, 1], 1);
    let empty = row(&[0; 8], 1);
    close("identical", dsc(&a, &a, 1).map_err(e)?, 100.0, TOL)?;
    close("disjoint", dsc(&a, &c, 1).map_err(e)?, 0.0, TOL)?;
    close("half", dsc(&a, &b, 1).map_err(e)?, 50.0, TOL)?;
    close("both empty", dsc(&empty, &empty, 1).map_err(e)?, 100.0, TOL)?;
    ensure(dsc(&a, &b, 2).is_err(), || "unknown class accepted".into())
}

fn point_mask(h: usize, w: usize, pts: &[(usize, usize)]) -> Mask {
    let mut g = Grid::filled(h, w, 0u8);
    for &(r, c) in pts {
        g.set(r, c, 1);
    }
    Mask::new(g, 1).unwrap()
}

fn assd_examples() -> Result<(), String> {
    let iso = Spacing::isotropic();
    let blob = point_mask(6, 6, &[(1, 1), (1, 2), (2, 1), (2, 2), (3, 2)]);
    let same = assd(&blob, &blob, 1, iso, Connectivity::Four).map_err(e)?;
    ensure(same == Some(0.0), || format!("identical masks gave {same:?}"))?;
    let a = point_mask(6, 6, &[(2, 1)]);
    let b = point_mask(6, 6, &[(2, 4)]);
    let d = assd(&a, &b, 1, iso, Connectivity::Four).map_err(e)?;
    ensure(d == Some(3.0), || format!("singletons gave {d:?}"))?;
    let empty = point_mask(6, 6, &[]);
    let u = assd(&a, &empty, 1, iso, Connectivity::Four).map_err(e)?;
    ensure(u.is_none(), || format!("empty mask gave {u:?}"))
}

fn component_examples() -> Result<(), String> {
    let mut pts: Vec<(usize, usize)> = (0..4).flat_map(|r| (0..5).map(move |c| (r, c))).collect();
    pts.extend([(8, 8), (8, 9), (9, 9)]);
    let m = point_mask(10, 10, &pts);
    let out = largest_component(&m, 1, Connectivity::Four);
    ensure(out.count(1) == 20, || format!("{} pixels kept", out.count(1)))?;
    ensure(out.labels.get(8, 8) == 0 && out.labels.get(9, 9) == 0, || "artifact kept".into())?;
    ensure(largest_component(&out, 1, Connectivity::Four) == out, || "not idempotent".into())?;
    let single = point_mask(10, 10, &pts[..20]);
    ensure(largest_component(&single, 1, Connectivity::Four) == single, || "single component changed".into())
}

fn record(fold: usize, d: f64, a: Option<f64>) -> ImageMetrics {
    ImageMetrics {
        fold,
        image_id: format!("f{fold}"),
        dsc: vec![d],
        assd: vec![a],
    }
}

fn aggregate_examples() -> Result<(), String> {
    let names = vec!["LV".to_string()];
    let r = aggregate(&[record(0, 60.0, Some(1.0)), record(1, 70.0, None)], &names, false).map_err(e)?;
    close("mean", r.classes[0].dsc_mean, 65.0, TOL)?;
    close("std", r.classes[0].dsc_std, 5.0, TOL)?;
    ensure(r.classes[0].assd_undefined == 1, || "undefined ASSD not counted".into())?;
    ensure(r.classes[0].assd_mean == Some(1.0), || "undefined ASSD not excluded".into())?;
    let s = aggregate(&[record(0, 60.0, Some(1.0)), record(0, 80.0, Some(2.0))], &names, false).map_err(e)?;
    close("single fold std", s.classes[0].dsc_std, 0.0, 0.0)?;
    close("single fold mean", s.classes[0].dsc_mean, 70.0, TOL)
}
