//! Epoch loop, validation, per-fold training and cross-validation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use log::info;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{save_checkpoint, train_step, LossReport, Mode, Model, TrainConfig, TrainState};
use crate::data::{load_domain, make_folds, Domain, FoldSplit, Image, Manifest, Mask, Sample};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, format_table, image_metrics, per_image_csv, postprocess, Connectivity, ImageMetrics, MetricsReport};
use crate::nn::{images_to_tensor, l1_loss, scalar};
use crate::seg::{probs_to_masks, segment_features, SegPathOptions};

const EVAL_BATCH: usize = 16;

pub const LOG_HEADER: &str = "epoch,cycle,gen_x,gen_y,disc_x,disc_y,vmf,seg,total,val_dsc,val_cycle,val_score";

/// Both domains of a dataset with its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub source: Vec<Sample>,
    pub target: Vec<Sample>,
    pub image_size: (usize, usize),
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = Manifest::read(root)?;
        let source = load_domain(root, &manifest, Domain::Source)?;
        let target = load_domain(root, &manifest, Domain::Target)?;
        Self::from_samples(manifest, source, target)
    }

    pub fn from_samples(manifest: Manifest, source: Vec<Sample>, target: Vec<Sample>) -> Result<Self> {
        let first = source
            .first()
            .or(target.first())
            .ok_or_else(|| Error::EmptySplit("dataset has no images".into()))?;
        let image_size = first.image.dims();
        if let Some(s) = source.iter().chain(&target).find(|s| s.image.dims() != image_size) {
            return Err(Error::Shape(format!(
                "image {} is {:?}, dataset images are {:?}",
                s.id(),
                s.image.dims(),
                image_size
            )));
        }
        Ok(Self {
            manifest,
            source,
            target,
            image_size,
        })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.manifest.class_names.clone()
    }

    /// Fold splits of the source and target domains.
    pub fn folds(&self, cfg: &TrainConfig) -> Result<(Vec<FoldSplit>, Vec<FoldSplit>)> {
        let ids = |s: &[Sample]| s.iter().map(|s| s.id().to_string()).collect::<Vec<_>>();
        Ok((
            make_folds(&ids(&self.source), cfg.num_folds, cfg.seed, cfg.val_fraction)?,
            make_folds(&ids(&self.target), cfg.num_folds, cfg.seed, cfg.val_fraction)?,
        ))
    }
}

/// The samples one fold trains, validates and tests on.
#[derive(Clone, Debug, Default)]
pub struct FoldData {
    pub labelled_train: Vec<Sample>,
    /// Target images without masks; empty for the baselines.
    pub unlabelled_train: Vec<Sample>,
    pub labelled_val: Vec<Sample>,
    pub unlabelled_val: Vec<Sample>,
    /// Target-domain test images with masks.
    pub test: Vec<Sample>,
}

fn pick(samples: &[Sample], ids: &[String]) -> Vec<Sample> {
    ids.iter()
        .filter_map(|id| samples.iter().find(|s| s.id() == id))
        .cloned()
        .collect()
}

fn require_masks(samples: &[Sample], what: &str) -> Result<()> {
    match samples.iter().find(|s| s.mask.is_none()) {
        Some(s) => Err(Error::MissingMask {
            id: s.id().to_string(),
            path: PathBuf::from(what),
        }),
        None => Ok(()),
    }
}

/// Assembles a fold. Target masks are stripped from everything but the test
/// split unless the mode is [`Mode::BaselineFs`].
pub fn fold_data(mode: Mode, ds: &Dataset, src: &FoldSplit, tgt: &FoldSplit) -> Result<FoldData> {
    let strip = |v: Vec<Sample>| v.iter().map(Sample::without_mask).collect::<Vec<_>>();
    let data = match mode {
        Mode::Proposed => FoldData {
            labelled_train: pick(&ds.source, &src.train_ids),
            unlabelled_train: strip(pick(&ds.target, &tgt.train_ids)),
            labelled_val: pick(&ds.source, &src.val_ids),
            unlabelled_val: strip(pick(&ds.target, &tgt.val_ids)),
            test: pick(&ds.target, &tgt.test_ids),
        },
        Mode::BaselineNa => FoldData {
            labelled_train: pick(&ds.source, &src.train_ids),
            labelled_val: pick(&ds.source, &src.val_ids),
            test: pick(&ds.target, &tgt.test_ids),
            ..Default::default()
        },
        Mode::BaselineFs => FoldData {
            labelled_train: pick(&ds.target, &tgt.train_ids),
            labelled_val: pick(&ds.target, &tgt.val_ids),
            test: pick(&ds.target, &tgt.test_ids),
            ..Default::default()
        },
    };
    require_masks(&data.labelled_train, "training split")?;
    require_masks(&data.labelled_val, "validation split")?;
    require_masks(&data.test, "test split")?;
    Ok(data)
}

fn augment(sample: &Sample, flip: bool) -> Sample {
    if !flip {
        return sample.clone();
    }
    let mut s = sample.clone();
    s.image.pixels = s.image.pixels.flip_horizontal();
    if let Some(m) = &mut s.mask {
        m.labels = m.labels.flip_horizontal();
    }
    s
}

/// One pass over the labelled training split; returns mean loss terms.
pub fn train_epoch(state: &mut TrainState, data: &FoldData) -> Result<LossReport> {
    let n = data.labelled_train.len();
    if n == 0 {
        return Err(Error::EmptySplit("no labelled training images".into()));
    }
    let proposed = state.cfg.mode == Mode::Proposed;
    let n_t = data.unlabelled_train.len();
    if proposed && n_t == 0 {
        return Err(Error::EmptySplit("no target-domain training images".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut state.rng);
    let mut t_order: Vec<usize> = (0..n_t).collect();
    t_order.shuffle(&mut state.rng);

    let bs = state.cfg.batch_size;
    let mut sum = LossReport::default();
    let mut steps = 0usize;
    for (b, chunk) in order.chunks(bs).enumerate() {
        let mut labelled = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let flip = state.cfg.augment_flip && state.rng.random_bool(0.5);
            labelled.push(augment(&data.labelled_train[i], flip));
        }
        let mut unlabelled: Vec<Image> = Vec::new();
        if proposed {
            for j in 0..chunk.len() {
                let s = &data.unlabelled_train[t_order[(b * bs + j) % n_t]];
                let flip = state.cfg.augment_flip && state.rng.random_bool(0.5);
                unlabelled.push(augment(s, flip).image);
            }
        }
        let lab: Vec<&Sample> = labelled.iter().collect();
        let unl: Vec<&Image> = unlabelled.iter().collect();
        sum.accumulate(&train_step(state, &lab, &unl)?);
        steps += 1;
    }
    state.epoch += 1;
    Ok(sum.scaled(1.0 / steps as f64))
}

/// Model-selection score: `dsc − omega·cycle_error`, where `dsc` is the
/// mean foreground Dice as a fraction.
pub fn validation_score(dsc: f64, cycle_error: f64, omega: f64) -> f64 {
    dsc - omega * cycle_error
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Validation {
    /// Mean foreground Dice in [0, 1].
    pub dsc: f64,
    /// Mean L1 cycle error (0 for the baselines).
    pub cycle_error: f64,
    pub score: f64,
}

fn mean_fg_dsc(pred: &Mask, target: &Mask) -> Result<f64> {
    let k = target.num_classes;
    let mut total = 0.0;
    for c in 1..=k {
        total += crate::metrics::dsc(pred, target, c)?;
    }
    Ok(total / (100.0 * k as f64))
}

/// Scores the model on the validation split. In [`Mode::Proposed`] the
/// segmentation runs on translated source images and is compared against
/// source masks; target images enter only through the cycle error.
pub fn validate(state: &TrainState, data: &FoldData) -> Result<Validation> {
    if data.labelled_val.is_empty() {
        return Err(Error::EmptySplit("validation split is empty".into()));
    }
    let dtype = state.cfg.dtype();
    let k = state.num_classes();
    let mut dsc_sum = 0.0;
    let mut rec_x = 0.0;
    for chunk in data.labelled_val.chunks(EVAL_BATCH) {
        let imgs: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let x = images_to_tensor(&imgs, dtype)?;
        let probs = match &state.model {
            Model::Proposed(m) => {
                let fake_y = m.nets.gen_y.forward(&m.nets.enc_x.forward(&x)?)?;
                let z = m.nets.enc_y.forward(&fake_y)?;
                let rec = m.nets.gen_x.forward(&z)?;
                rec_x += per_image_l1(&rec, &x)?;
                let opts = SegPathOptions {
                    normalize_over_kernels: m.normalize_over_kernels,
                    kernel_gradients: false,
                };
                segment_features(&z, &m.bank, &m.head, opts)?
            }
            Model::Baseline(u) => u.forward(&x)?,
        };
        for (pred, s) in probs_to_masks(&probs, k)?.iter().zip(chunk) {
            let target = s.mask.as_ref().expect("validation masks checked in fold_data");
            dsc_sum += mean_fg_dsc(pred, target)?;
        }
    }
    let n = data.labelled_val.len() as f64;
    let dsc = dsc_sum / n;
    let cycle_error = match &state.model {
        Model::Proposed(m) => {
            let mut rec_y = 0.0;
            for chunk in data.unlabelled_val.chunks(EVAL_BATCH) {
                let imgs: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
                let y = images_to_tensor(&imgs, dtype)?;
                let rec = m.nets.gen_y.forward(&m.nets.enc_x.forward(&m.nets.gen_x.forward(&m.nets.enc_y.forward(&y)?)?)?)?;
                rec_y += per_image_l1(&rec, &y)?;
            }
            if data.unlabelled_val.is_empty() {
                rec_x / n
            } else {
                0.5 * (rec_x / n + rec_y / data.unlabelled_val.len() as f64)
            }
        }
        Model::Baseline(_) => 0.0,
    };
    Ok(Validation {
        dsc,
        cycle_error,
        score: validation_score(dsc, cycle_error, state.cfg.omega),
    })
}

/// Sum over the batch of per-image mean absolute errors.
fn per_image_l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(scalar(&l1_loss(a, b)?)? * a.dims()[0] as f64)
}

/// Per-image metrics of target-domain predictions; also returns the
/// (optionally post-processed) masks.
pub fn evaluate(
    model: &Model,
    samples: &[Sample],
    fold: usize,
    postprocessed: bool,
    conn: Connectivity,
    dtype: DType,
    num_classes: u8,
) -> Result<(Vec<ImageMetrics>, Vec<Mask>)> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("evaluation split is empty".into()));
    }
    require_masks(samples, "evaluation split")?;
    let mut records = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let imgs: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let probs = model.predict(&images_to_tensor(&imgs, dtype)?)?;
        for (pred, s) in probs_to_masks(&probs, num_classes)?.into_iter().zip(chunk) {
            let pred = if postprocessed { postprocess(&pred, conn) } else { pred };
            let target = s.mask.as_ref().expect("checked above");
            records.push(image_metrics(fold, s.id(), &pred, target, s.image.spacing, conn)?);
            preds.push(pred);
        }
    }
    Ok((records, preds))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: LossReport,
    pub val: Validation,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.epoch,
            l.cycle,
            l.gen_x,
            l.gen_y,
            l.disc_x,
            l.disc_y,
            l.vmf,
            l.seg,
            l.total,
            self.val.dsc,
            self.val.cycle_error,
            self.val.score
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(out, "{}", e.csv_row());
    }
    out
}

pub struct FoldOutcome {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_score: f64,
    pub log: Vec<EpochLog>,
    /// Test-split metrics without and with post-processing.
    pub records: Vec<ImageMetrics>,
    pub records_postprocessed: Vec<ImageMetrics>,
    /// State with the best-validation parameters restored.
    pub state: TrainState,
    pub data: FoldData,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Trains one fold for `cfg.epochs` epochs, keeps the best-validation
/// parameters and evaluates them on the fold's target test split.
///
/// With `out`, writes `fold_<k>/log.csv`, `fold_<k>/best.ckpt` and the
/// per-image metric CSVs.
pub fn run_fold(cfg: &TrainConfig, ds: &Dataset, fold: usize, out: Option<&Path>) -> Result<FoldOutcome> {
    cfg.validate()?;
    if fold >= cfg.num_folds {
        return Err(Error::Config(format!("fold {fold} out of range 0..{}", cfg.num_folds)));
    }
    let (src, tgt) = ds.folds(cfg)?;
    let data = fold_data(cfg.mode, ds, &src[fold], &tgt[fold])?;
    let mut state = TrainState::new(cfg.clone(), ds.image_size, ds.class_names(), fold as u64)?;
    let dir = out.map(|o| o.join(format!("fold_{fold}")));
    if let Some(d) = &dir {
        create_dir(d)?;
    }

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    for _ in 0..cfg.epochs {
        let losses = train_epoch(&mut state, &data)?;
        let val = validate(&state, &data)?;
        let entry = EpochLog {
            epoch: state.epoch,
            losses,
            val,
        };
        info!(
            "{} fold {fold} epoch {}: total {:.4} seg {:.4} val dsc {:.4} score {:.4}",
            cfg.mode, entry.epoch, losses.total, losses.seg, val.dsc, val.score
        );
        if best.as_ref().is_none_or(|(s, _, _)| val.score > *s) {
            best = Some((val.score, state.epoch, state.model.snapshot()?));
            if let Some(d) = &dir {
                save_checkpoint(&state, Some(fold), Some(val.score), &d.join("best.ckpt"))?;
            }
        }
        log.push(entry);
        if let Some(d) = &dir {
            write_file(&d.join("log.csv"), &log_csv(&log))?;
        }
    }
    let (best_score, best_epoch, snapshot) = best.expect("at least one epoch");
    state.model.restore(&snapshot)?;

    let (conn, dtype, k) = (cfg.connectivity(), cfg.dtype(), state.num_classes());
    let (records, _) = evaluate(&state.model, &data.test, fold, false, conn, dtype, k)?;
    let (records_postprocessed, _) = evaluate(&state.model, &data.test, fold, true, conn, dtype, k)?;
    if let Some(d) = &dir {
        let names = ds.class_names();
        write_file(&d.join("metrics.csv"), &per_image_csv(&aggregate(&records, &names, false)?))?;
        write_file(
            &d.join("metrics_postprocessed.csv"),
            &per_image_csv(&aggregate(&records_postprocessed, &names, true)?),
        )?;
    }
    Ok(FoldOutcome {
        fold,
        best_epoch,
        best_score,
        log,
        records,
        records_postprocessed,
        state,
        data,
    })
}

pub struct CvOutcome {
    pub folds: Vec<FoldOutcome>,
    pub report: MetricsReport,
    pub report_postprocessed: MetricsReport,
}

impl CvOutcome {
    pub fn table(&self) -> String {
        let mode = self.folds.first().map_or("model", |f| f.state.cfg.mode.as_str());
        let pp = format!("{mode} + largest component");
        format_table("Method", &[(mode, &self.report), (pp.as_str(), &self.report_postprocessed)])
    }
}

/// Runs the given folds and aggregates their test metrics. With `out`, also
/// writes `report.txt`, `metrics.csv` and `metrics_postprocessed.csv`.
pub fn run_cross_validation(cfg: &TrainConfig, ds: &Dataset, folds: &[usize], out: Option<&Path>) -> Result<CvOutcome> {
    if folds.is_empty() {
        return Err(Error::Config("no folds selected".into()));
    }
    let mut outcomes = Vec::with_capacity(folds.len());
    for &f in folds {
        outcomes.push(run_fold(cfg, ds, f, out)?);
    }
    let names = ds.class_names();
    let all: Vec<ImageMetrics> = outcomes.iter().flat_map(|o| o.records.clone()).collect();
    let all_pp: Vec<ImageMetrics> = outcomes.iter().flat_map(|o| o.records_postprocessed.clone()).collect();
    let cv = CvOutcome {
        report: aggregate(&all, &names, false)?,
        report_postprocessed: aggregate(&all_pp, &names, true)?,
        folds: outcomes,
    };
    if let Some(o) = out {
        create_dir(o)?;
        write_file(&o.join("report.txt"), &cv.table())?;
        write_file(&o.join("metrics.csv"), &per_image_csv(&cv.report))?;
        write_file(&o.join("metrics_postprocessed.csv"), &per_image_csv(&cv.report_postprocessed))?;
    }
    Ok(cv)
}
