//! Single-file checkpoints: `CMSEGCKP`, a u32 format version, a u64
//! manifest length, a JSON manifest, then raw little-endian arrays at the
//! offsets the manifest lists (relative to the end of the manifest).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig, TrainState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CMSEGCKP";
const VERSION: u32 = 1;
const MAIN_OPT: &str = "adam_main.";
const DISC_OPT: &str = "adam_disc.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position, as decimal text.
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub image_size: (usize, usize),
    pub class_names: Vec<String>,
    pub epoch: usize,
    pub fold: Option<usize>,
    pub validation_score: Option<f64>,
    pub rng: RngState,
    pub main_optimizer_steps: u64,
    pub disc_optimizer_steps: u64,
    pub tensors: Vec<TensorEntry>,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::InvalidArgument(format!("cannot store {other:?} tensors"))),
    }
}

fn all_tensors(state: &TrainState) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = state
        .model
        .named_params()
        .into_iter()
        .map(|(n, v)| (n, v.as_tensor().clone()))
        .collect();
    out.extend(state.opt_main.state().into_iter().map(|(n, t)| (format!("{MAIN_OPT}{n}"), t)));
    out.extend(state.opt_disc.state().into_iter().map(|(n, t)| (format!("{DISC_OPT}{n}"), t)));
    out
}

pub fn save_checkpoint(state: &TrainState, fold: Option<usize>, validation_score: Option<f64>, path: &Path) -> Result<()> {
    let mut data = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in all_tensors(state) {
        let dtype = dtype_name(t.dtype())?;
        entries.push(TensorEntry {
            name,
            shape: t.dims().to_vec(),
            dtype: dtype.to_string(),
            offset: data.len() as u64,
        });
        let flat = t.flatten_all()?;
        match t.dtype() {
            DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| data.extend(v.to_le_bytes())),
            _ => flat.to_vec1::<f32>()?.iter().for_each(|v| data.extend(v.to_le_bytes())),
        }
    }
    let (main_steps, disc_steps) = state.optimizer_steps();
    let manifest = CheckpointManifest {
        format_version: VERSION,
        config: state.cfg.clone(),
        image_size: state.image_size,
        class_names: state.class_names.clone(),
        epoch: state.epoch,
        fold,
        validation_score,
        rng: RngState {
            seed: state.rng.get_seed(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        main_optimizer_steps: main_steps,
        disc_optimizer_steps: disc_steps,
        tensors: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| ckpt_err(path, e.to_string()))?;
    let mut bytes = Vec::with_capacity(20 + json.len() + data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend(VERSION.to_le_bytes());
    bytes.extend((json.len() as u64).to_le_bytes());
    bytes.extend(json);
    bytes.extend(data);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A parsed checkpoint file.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub path: PathBuf,
    pub manifest: CheckpointManifest,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ckpt_err(path, format!("format version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(20..20usize.saturating_add(len))
        .ok_or_else(|| ckpt_err(path, "truncated manifest"))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(json).map_err(|e| ckpt_err(path, format!("corrupt manifest: {e}")))?;
    let data = &bytes[20 + len..];
    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let count: usize = e.shape.iter().product();
        let (width, dtype) = match e.dtype.as_str() {
            "f32" => (4, DType::F32),
            "f64" => (8, DType::F64),
            other => return Err(ckpt_err(path, format!("tensor `{}` has unknown dtype `{other}`", e.name))),
        };
        let start = e.offset as usize;
        let raw = data
            .get(start..start + count * width)
            .ok_or_else(|| ckpt_err(path, format!("tensor `{}` extends past end of file", e.name)))?;
        let t = if dtype == DType::F32 {
            let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
            Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
        } else {
            let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
            Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
        };
        tensors.insert(e.name.clone(), t);
    }
    Ok(LoadedCheckpoint {
        path: path.to_path_buf(),
        manifest,
        tensors,
    })
}

impl LoadedCheckpoint {
    /// Rebuilds the full training state the checkpoint was taken from.
    pub fn into_state(self) -> Result<TrainState> {
        let m = &self.manifest;
        let mut state = TrainState::new(m.config.clone(), m.image_size, m.class_names.clone(), m.rng.stream)?;
        self.restore_into(&mut state)?;
        Ok(state)
    }

    /// Copies parameters, optimizer moments, RNG position and epoch into
    /// `state`, which must have the same architecture.
    pub fn restore_into(&self, state: &mut TrainState) -> Result<()> {
        let expected: BTreeMap<String, Vec<usize>> = all_tensors(state)
            .into_iter()
            .map(|(n, t)| (n, t.dims().to_vec()))
            .collect();
        let diff = self.diff(&expected);
        if !diff.is_empty() {
            return Err(ckpt_err(
                &self.path,
                format!(
                    "architecture mismatch (checkpoint: {}; expected: {}):\n{}",
                    self.manifest.config.architecture_summary(),
                    state.cfg.architecture_summary(),
                    diff.join("\n")
                ),
            ));
        }
        let dtype = state.cfg.dtype();
        for (name, var) in state.model.named_params() {
            var.set(&self.tensors[&name].to_dtype(dtype)?)?;
        }
        let lookup = |prefix: &'static str| {
            move |key: &str| self.tensors.get(&format!("{prefix}{key}")).cloned()
        };
        state.opt_main.load_state(self.manifest.main_optimizer_steps, lookup(MAIN_OPT))?;
        state.opt_disc.load_state(self.manifest.disc_optimizer_steps, lookup(DISC_OPT))?;
        let word_pos: u128 = self
            .manifest
            .rng
            .word_pos
            .parse()
            .map_err(|_| ckpt_err(&self.path, "corrupt RNG word position"))?;
        let mut rng = ChaCha8Rng::from_seed(self.manifest.rng.seed);
        rng.set_stream(self.manifest.rng.stream);
        rng.set_word_pos(word_pos);
        state.rng = rng;
        state.epoch = self.manifest.epoch;
        Ok(())
    }

    /// Human-readable differences between stored and expected tensors.
    pub fn diff(&self, expected: &BTreeMap<String, Vec<usize>>) -> Vec<String> {
        let stored: BTreeSet<&String> = self.tensors.keys().collect();
        let wanted: BTreeSet<&String> = expected.keys().collect();
        let mut out = Vec::new();
        for n in wanted.difference(&stored) {
            out.push(format!("  missing  {n} {:?}", expected[*n]));
        }
        for n in stored.difference(&wanted) {
            out.push(format!("  extra    {n} {:?}", self.tensors[*n].dims()));
        }
        for n in stored.intersection(&wanted) {
            let have = self.tensors[*n].dims();
            if have != expected[*n].as_slice() {
                out.push(format!("  shape    {n}: stored {have:?}, expected {:?}", expected[*n]));
            }
        }
        out
    }

    /// Model only, e.g. for evaluation.
    pub fn into_model(self) -> Result<Model> {
        Ok(self.into_state()?.model)
    }
}
