//! On-disk feature cache: per utterance a JSON sidecar plus raw
//! little-endian `f32` blobs for the mel matrix, pitch values and voicing mask.

use std::fs;
use std::path::{Path, PathBuf};

use autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::mel::MelSpectrogram;
use super::pitch::PitchContour;
use crate::{Error, Result};

pub const DTYPE: &str = "float32-le";

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub speaker_id: String,
    pub mel: MelSpectrogram,
    pub pitch: PitchContour,
    pub transcript: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub utterance_id: String,
    pub speaker_id: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub dims: usize,
    pub dtype: String,
    pub mel_file: String,
    pub pitch_file: String,
    pub voiced_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    pub config_hash: String,
}

pub struct FeatureCache {
    root: PathBuf,
}

fn safe_key(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn f32_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(path: &Path, expect: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expect * 4 {
        return Err(Error::Feature(format!("{}: expected {} floats, found {} bytes", path.display(), expect, bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Write-then-rename so concurrent writers of one key never expose a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl FeatureCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(FeatureCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn sidecar_path(&self, utterance_id: &str) -> PathBuf {
        self.root.join(format!("{}.json", safe_key(utterance_id)))
    }

    pub fn contains(&self, utterance_id: &str) -> bool {
        self.sidecar_path(utterance_id).is_file()
    }

    pub fn write(&self, f: &UtteranceFeatures, config_hash: &str) -> Result<()> {
        let key = safe_key(&f.utterance_id);
        let t = f.mel.n_frames();
        if f.pitch.len() != t {
            return Err(Error::Contract(format!("{}: pitch length {} != mel length {t}", f.utterance_id, f.pitch.len())));
        }
        let sidecar = Sidecar {
            utterance_id: f.utterance_id.clone(),
            speaker_id: f.speaker_id.clone(),
            frames: t,
            dims: f.mel.n_mels(),
            dtype: DTYPE.into(),
            mel_file: format!("{key}.mel.f32"),
            pitch_file: format!("{key}.pitch.f32"),
            voiced_file: format!("{key}.vuv.f32"),
            transcript: f.transcript.clone(),
            config_hash: config_hash.into(),
        };
        write_atomic(&self.root.join(&sidecar.mel_file), &f.mel.frames.to_le_bytes())?;
        write_atomic(&self.root.join(&sidecar.pitch_file), &f32_bytes(f.pitch.values.iter().copied()))?;
        write_atomic(&self.root.join(&sidecar.voiced_file), &f32_bytes(f.pitch.voiced.iter().map(|&v| if v { 1.0 } else { 0.0 })))?;
        // sidecar last: its presence marks a complete record
        write_atomic(&self.sidecar_path(&f.utterance_id), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        Ok(())
    }

    pub fn read_sidecar(&self, path: &Path) -> Result<Sidecar> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn read(&self, utterance_id: &str) -> Result<UtteranceFeatures> {
        self.read_path(&self.sidecar_path(utterance_id))
    }

    fn read_path(&self, sidecar_path: &Path) -> Result<UtteranceFeatures> {
        let s = self.read_sidecar(sidecar_path)?;
        if s.dtype != DTYPE {
            return Err(Error::Feature(format!("{}: unsupported dtype {}", s.utterance_id, s.dtype)));
        }
        let mel = read_f32(&self.root.join(&s.mel_file), s.frames * s.dims)?;
        let pitch = read_f32(&self.root.join(&s.pitch_file), s.frames)?;
        let voiced = read_f32(&self.root.join(&s.voiced_file), s.frames)?;
        Ok(UtteranceFeatures {
            utterance_id: s.utterance_id,
            speaker_id: s.speaker_id,
            mel: MelSpectrogram::new(Tensor::from_vec(s.frames, s.dims, mel)),
            pitch: PitchContour { values: pitch, voiced: voiced.iter().map(|&v| v > 0.5).collect() },
            transcript: s.transcript,
        })
    }

    /// Every complete record, sorted by utterance id.
    pub fn load_all(&self) -> Result<Vec<UtteranceFeatures>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut out = Vec::with_capacity(paths.len());
        for p in paths {
            match self.read_path(&p) {
                Ok(f) => out.push(f),
                Err(Error::Json(_)) => continue, // not a sidecar
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
        Ok(out)
    }
}
