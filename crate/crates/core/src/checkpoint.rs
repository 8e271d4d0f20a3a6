//! Checkpoint directories: `manifest.json` plus `tensors.bin`, a
//! concatenation of little-endian `f32` blobs addressed by name, offset and
//! shape in the manifest. Training checkpoints also carry both optimizer
//! states, the RNG position and the step history (`history.jsonl`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use autograd::{ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::mi::ApproxSet;
use crate::model::VcModel;
use crate::trainer::{StepRecord, TrainState};
use crate::{Error, Result};

pub const FORMAT: &str = "vqmivc-checkpoint";
pub const VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const TENSORS: &str = "tensors.bin";
const HISTORY: &str = "history.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint("malformed RNG state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: Config,
    pub n_mels: usize,
    pub epoch: usize,
    pub step: u64,
    pub rng: Option<RngState>,
    pub vc_optimizer_steps: Option<u64>,
    pub mi_optimizer_steps: Option<u64>,
    pub codebook_usage: Vec<u64>,
    pub tensors: Vec<TensorEntry>,
}

struct Writer {
    entries: Vec<TensorEntry>,
    bytes: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: String, t: &Tensor) {
        let data = t.to_le_bytes();
        self.entries.push(TensorEntry {
            name,
            shape: [t.rows(), t.cols()],
            dtype: "float32-le".into(),
            offset: self.bytes.len() as u64,
            nbytes: data.len() as u64,
        });
        self.bytes.extend_from_slice(&data);
    }

    fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, t) in store.iter() {
            self.push(format!("{prefix}{name}"), t);
        }
    }
}

fn model_tensors(w: &mut Writer, model: &VcModel) {
    w.push_store("", &model.params);
    w.push("codebook.vectors".into(), &model.codebook.vectors);
    w.push("codebook.ema_count".into(), &Tensor::row_vector(model.codebook.ema_count.clone()));
    w.push("codebook.ema_sum".into(), &model.codebook.ema_sum);
    w.push("norm.mel_mean".into(), &model.norm.mean);
    w.push("norm.mel_std".into(), &model.norm.std);
}

fn write_dir(dir: &Path, manifest: &Manifest, bytes: &[u8], history: Option<&[StepRecord]>) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(".{}.tmp{}", dir.file_name().and_then(|s| s.to_str()).unwrap_or("ckpt"), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    fs::write(tmp.join(TENSORS), bytes)?;
    if let Some(h) = history {
        let mut text = String::new();
        for r in h {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(tmp.join(HISTORY), text)?;
    }
    fs::write(tmp.join(MANIFEST), serde_json::to_string_pretty(manifest)?)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

fn manifest_for(config: &Config, model: &VcModel, entries: Vec<TensorEntry>) -> Manifest {
    Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config_hash: config.hash(),
        config: config.clone(),
        n_mels: model.n_mels,
        epoch: 0,
        step: 0,
        rng: None,
        vc_optimizer_steps: None,
        mi_optimizer_steps: None,
        codebook_usage: model.codebook.usage.clone(),
        tensors: entries,
    }
}

/// Model-only checkpoint (enough for conversion and evaluation).
pub fn save_model(model: &VcModel, config: &Config, dir: &Path) -> Result<()> {
    let mut w = Writer { entries: Vec::new(), bytes: Vec::new() };
    model_tensors(&mut w, model);
    let manifest = manifest_for(config, model, w.entries);
    write_dir(dir, &manifest, &w.bytes, None)
}

pub fn checkpoint_dir(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch:05}"))
}

/// Full training state, written under `out_dir/checkpoints/epoch_NNNNN`.
pub fn save_state(state: &TrainState, out_dir: &Path) -> Result<PathBuf> {
    let mut w = Writer { entries: Vec::new(), bytes: Vec::new() };
    model_tensors(&mut w, &state.model);
    w.push_store("approx/", &state.approx.params);
    for (prefix, opt, store) in [("optim.vc", &state.vc_opt, &state.model.params), ("optim.mi", &state.mi_opt, &state.approx.params)] {
        let (_, m, v) = opt.state();
        for ((_, name, _), (m, v)) in store.iter().zip(m.iter().zip(v)) {
            w.push(format!("{prefix}.m/{name}"), m);
            w.push(format!("{prefix}.v/{name}"), v);
        }
    }
    let mut manifest = manifest_for(&state.config, &state.model, w.entries);
    manifest.epoch = state.epoch;
    manifest.step = state.step;
    manifest.rng = Some(RngState::capture(&state.rng));
    manifest.vc_optimizer_steps = Some(state.vc_opt.steps_taken());
    manifest.mi_optimizer_steps = Some(state.mi_opt.steps_taken());
    let dir = checkpoint_dir(out_dir, state.epoch);
    write_dir(&dir, &manifest, &w.bytes, Some(&state.history))?;
    Ok(dir)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("bad manifest {}: {e}", path.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint format {} v{}", m.format, m.version)));
    }
    Ok(m)
}

fn read_tensors(dir: &Path, manifest: &Manifest) -> Result<BTreeMap<String, Tensor>> {
    let bytes = fs::read(dir.join(TENSORS)).map_err(|e| Error::Checkpoint(format!("cannot read tensors: {e}")))?;
    let mut out = BTreeMap::new();
    for e in &manifest.tensors {
        let start = e.offset as usize;
        let end = start + e.nbytes as usize;
        let t = bytes
            .get(start..end)
            .and_then(|b| Tensor::from_le_bytes(e.shape[0], e.shape[1], b))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} is truncated or misshapen", e.name)))?;
        out.insert(e.name.clone(), t);
    }
    Ok(out)
}

fn take(map: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
    map.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

fn fill_store(map: &mut BTreeMap<String, Tensor>, prefix: &str, store: &mut ParamStore) -> Result<()> {
    let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
    for name in names {
        let t = take(map, &format!("{prefix}{name}"))?;
        store.set(&name, t).map_err(Error::Checkpoint)?;
    }
    Ok(())
}

fn build_model(manifest: &Manifest, map: &mut BTreeMap<String, Tensor>) -> Result<VcModel> {
    let mut model = VcModel::new(&manifest.config.model, manifest.n_mels, 0);
    fill_store(map, "", &mut model.params)?;
    let vectors = take(map, "codebook.vectors")?;
    let count = take(map, "codebook.ema_count")?;
    let sum = take(map, "codebook.ema_sum")?;
    if vectors.shape() != model.codebook.vectors.shape() || sum.shape() != vectors.shape() || count.len() != vectors.rows() {
        return Err(Error::Checkpoint("codebook shape does not match the configuration".into()));
    }
    model.codebook.vectors = vectors;
    model.codebook.ema_sum = sum;
    model.codebook.ema_count = count.into_data();
    if manifest.codebook_usage.len() == model.codebook.size() {
        model.codebook.usage = manifest.codebook_usage.clone();
    }
    model.norm.mean = take(map, "norm.mel_mean")?;
    model.norm.std = take(map, "norm.mel_std")?;
    Ok(model)
}

/// Loads the model part of any checkpoint.
pub fn load_model(dir: &Path) -> Result<(VcModel, Config)> {
    let manifest = read_manifest(dir)?;
    let mut map = read_tensors(dir, &manifest)?;
    let model = build_model(&manifest, &mut map)?;
    Ok((model, manifest.config))
}

/// Loads a full training checkpoint.
pub fn load_state(dir: &Path) -> Result<TrainState> {
    let manifest = read_manifest(dir)?;
    let mut map = read_tensors(dir, &manifest)?;
    let model = build_model(&manifest, &mut map)?;
    let mut state = TrainState::new(&manifest.config, manifest.n_mels);
    state.model = model;
    fill_store(&mut map, "approx/", &mut state.approx.params)?;
    let rng = manifest.rng.as_ref().ok_or_else(|| Error::Checkpoint("not a training checkpoint (no RNG state)".into()))?;
    state.rng = rng.restore()?;
    for (prefix, steps, which) in [("optim.vc", manifest.vc_optimizer_steps, 0), ("optim.mi", manifest.mi_optimizer_steps, 1)] {
        let store = if which == 0 { &state.model.params } else { &state.approx.params };
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (_, name, _) in store.iter() {
            m.push(take(&mut map, &format!("{prefix}.m/{name}"))?);
            v.push(take(&mut map, &format!("{prefix}.v/{name}"))?);
        }
        let steps = steps.ok_or_else(|| Error::Checkpoint(format!("{prefix}: missing step count")))?;
        let opt = if which == 0 { &mut state.vc_opt } else { &mut state.mi_opt };
        opt.restore(steps, m, v).map_err(Error::Checkpoint)?;
    }
    state.epoch = manifest.epoch;
    state.step = manifest.step;
    let hist = dir.join(HISTORY);
    state.history = if hist.exists() { crate::trainer::read_log(&hist)? } else { Vec::new() };
    if !map.is_empty() {
        log::warn!("checkpoint has {} unused tensors", map.len());
    }
    Ok(state)
}

/// Most recent epoch checkpoint under `out_dir/checkpoints`.
pub fn latest(out_dir: &Path) -> Result<Option<PathBuf>> {
    let root = out_dir.join("checkpoints");
    if !root.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for e in fs::read_dir(&root)? {
        let p = e?.path();
        let epoch = p.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_prefix("epoch_")).and_then(|n| n.parse::<usize>().ok());
        if let Some(ep) = epoch {
            if p.join(MANIFEST).is_file() && best.as_ref().is_none_or(|(b, _)| ep > *b) {
                best = Some((ep, p));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Content hash of a checkpoint's tensors, for provenance records.
pub fn digest(dir: &Path) -> Result<String> {
    let bytes = fs::read(dir.join(TENSORS)).map_err(|e| Error::Checkpoint(format!("cannot read tensors: {e}")))?;
    let d = Sha256::digest(&bytes);
    Ok(d.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// Hash of all parameter bytes of a store, for isolation checks.
pub fn store_digest(store: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (_, name, t) in store.iter() {
        h.update(name.as_bytes());
        h.update(t.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Approximator parameters only.
pub fn approx_digest(a: &ApproxSet) -> String {
    store_digest(&a.params)
}
