//! Command-line surface: `synth-data`, `train`, `evaluate`, `visualize`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::data::io::{read_intensities, write_png_u8};
use crate::data::{normalize_intensities, synthesize_toy_dataset, write_toy_dataset, Domain, Image, Spacing};
use crate::grid::Grid;
use crate::metrics::{aggregate, format_table, per_image_csv};
use crate::nn::images_to_tensor;
use crate::seg::probs_to_masks;
use crate::train::{evaluate, load_checkpoint, run_cross_validation, Dataset, Mode, TrainConfig};
use crate::viz::{render, write_visualization};

#[derive(Debug, Parser)]
#[command(name = "compseg", version, about = "Cross-modal segmentation with compositional kernel representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Proposed,
    BaselineFs,
    BaselineNa,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Proposed => Mode::Proposed,
            ModeArg::BaselineFs => Mode::BaselineFs,
            ModeArg::BaselineNa => Mode::BaselineNa,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic two-domain toy dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Images per domain.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train one fold or all folds and report test metrics.
    Train {
        /// Flat `key = value` config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_root: PathBuf,
        /// Fold index, or `all`.
        #[arg(long, default_value = "0")]
        fold: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the target domain of its fold.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Keep only the largest connected component of each class.
        #[arg(long)]
        postprocess: bool,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the fold stored in the checkpoint.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Render kernel activation channels and the predicted mask of one image.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target-domain image (PNG or raw).
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Show raw kernel activations instead of kernel-normalized ones.
        #[arg(long)]
        raw: bool,
    },
}

/// Parses `args` and runs the command; errors are printed to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SynthData { out, n, size, seed } => synth_data(&out, n, size, seed),
        Command::Train {
            config,
            data_root,
            fold,
            out,
            mode,
            seed,
            epochs,
        } => {
            let mut cfg = match &config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            train(&cfg, &data_root, &fold, &out)
        }
        Command::Evaluate {
            checkpoint,
            data_root,
            split,
            postprocess,
            out,
            fold,
        } => evaluate_cmd(&checkpoint, &data_root, split, postprocess, &out, fold),
        Command::Visualize {
            checkpoint,
            image,
            out,
            raw,
        } => visualize(&checkpoint, &image, &out, raw),
    }
}

fn synth_data(out: &Path, n: usize, size: usize, seed: u64) -> anyhow::Result<()> {
    let data = synthesize_toy_dataset(n, size, seed)?;
    write_toy_dataset(out, &data)?;
    info!("wrote {n} images per domain ({size}x{size}) to {}", out.display());
    Ok(())
}

fn parse_folds(arg: &str, num_folds: usize) -> anyhow::Result<Vec<usize>> {
    if arg == "all" {
        return Ok((0..num_folds).collect());
    }
    let f: usize = arg
        .parse()
        .with_context(|| format!("--fold must be an index or `all`, got `{arg}`"))?;
    if f >= num_folds {
        bail!("--fold {f} out of range 0..{num_folds}");
    }
    Ok(vec![f])
}

fn train(cfg: &TrainConfig, data_root: &Path, fold: &str, out: &Path) -> anyhow::Result<()> {
    let folds = parse_folds(fold, cfg.num_folds)?;
    let ds = Dataset::load(data_root)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.cfg"), cfg.to_text()).with_context(|| format!("writing config to {}", out.display()))?;
    let cv = run_cross_validation(cfg, &ds, &folds, Some(out))?;
    println!("{}", cv.table());
    Ok(())
}

fn evaluate_cmd(
    checkpoint: &Path,
    data_root: &Path,
    split: SplitArg,
    postprocess: bool,
    out: &Path,
    fold: Option<usize>,
) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let fold = fold.or(ckpt.manifest.fold).unwrap_or(0);
    let ds = Dataset::load(data_root)?;
    if ds.image_size != ckpt.manifest.image_size {
        bail!(
            "checkpoint expects {:?} images, dataset has {:?}",
            ckpt.manifest.image_size,
            ds.image_size
        );
    }
    if ds.class_names().len() != ckpt.manifest.class_names.len() {
        bail!(
            "checkpoint has {} classes, dataset has {}",
            ckpt.manifest.class_names.len(),
            ds.class_names().len()
        );
    }
    let state = ckpt.into_state()?;
    let cfg = &state.cfg;
    let (_, tgt) = ds.folds(cfg)?;
    let split_ids = tgt
        .get(fold)
        .with_context(|| format!("fold {fold} out of range 0..{}", tgt.len()))?;
    let ids = match split {
        SplitArg::Val => &split_ids.val_ids,
        SplitArg::Test => &split_ids.test_ids,
    };
    let samples: Vec<_> = ids
        .iter()
        .filter_map(|id| ds.target.iter().find(|s| s.id() == id))
        .cloned()
        .collect();
    let (records, preds) = evaluate(
        &state.model,
        &samples,
        fold,
        postprocess,
        cfg.connectivity(),
        cfg.dtype(),
        state.num_classes(),
    )?;
    let report = aggregate(&records, &ds.class_names(), postprocess)?;
    let pred_dir = out.join("predictions");
    std::fs::create_dir_all(&pred_dir).with_context(|| format!("creating {}", pred_dir.display()))?;
    for (s, p) in samples.iter().zip(&preds) {
        write_png_u8(&pred_dir.join(format!("{}.png", s.id())), &p.labels)?;
    }
    let label = if postprocess {
        format!("{} + largest component", cfg.mode)
    } else {
        cfg.mode.to_string()
    };
    let table = format_table("Method", &[(label.as_str(), &report)]);
    std::fs::write(out.join("metrics.csv"), per_image_csv(&report))?;
    std::fs::write(out.join("report.txt"), &table)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{table}");
    Ok(())
}

/// Loads a single image as a target-domain sample.
pub fn load_image(path: &Path) -> anyhow::Result<Image> {
    let raw = read_intensities(path)?;
    let (h, w) = raw.dims();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Image {
        id,
        domain: Domain::Target,
        spacing: Spacing::isotropic(),
        pixels: Grid::from_vec(h, w, normalize_intensities(raw.as_slice()))?,
    })
}

fn visualize(checkpoint: &Path, image: &Path, out: &Path, raw: bool) -> anyhow::Result<()> {
    let state = load_checkpoint(checkpoint)?.into_state()?;
    let img = load_image(image)?;
    if img.dims() != state.image_size {
        bail!("image is {:?}, checkpoint expects {:?}", img.dims(), state.image_size);
    }
    let y = images_to_tensor(&[&img], state.cfg.dtype())?;
    let comp = state
        .model
        .composition(&y, !raw)?
        .context("checkpoint has no kernel bank (baseline mode)")?;
    let mask = probs_to_masks(&state.model.predict(&y)?, state.num_classes())?.remove(0);
    let vis = render(&img, &comp.channel_grids(0)?, &mask)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let written = write_visualization(out, &vis)?;
    info!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}
