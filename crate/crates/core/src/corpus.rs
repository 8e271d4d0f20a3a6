//! Corpus manifests: one JSON object per line naming an utterance, its
//! speaker, the audio file and an optional transcript file. Relative paths
//! are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::frontend::write_wav;
use crate::synth::SynthUtterance;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    pub wav: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "train".into()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    /// Parses and validates: ids must be unique and every file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::ingest(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut e: CorpusEntry =
                serde_json::from_str(line).map_err(|err| Error::Config(format!("{}:{}: {err}", path.display(), i + 1)))?;
            if !seen.insert(e.utterance_id.clone()) {
                return Err(Error::Config(format!("duplicate utterance id {}", e.utterance_id)));
            }
            e.wav = base.join(&e.wav);
            e.transcript = e.transcript.map(|t| base.join(t));
            for p in std::iter::once(&e.wav).chain(e.transcript.as_ref()) {
                if !p.is_file() {
                    return Err(Error::ingest(p, "file not found"));
                }
            }
            entries.push(e);
        }
        Ok(CorpusManifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for e in &self.entries {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        Ok(())
    }

    pub fn splits(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(|e| e.split.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

/// Writes synthetic utterances as WAV and transcript files under `dir` and
/// returns their manifest with paths relative to `dir`.
pub fn write_synthetic(dir: &Path, utts: &[SynthUtterance], split: &str) -> Result<CorpusManifest> {
    fs::create_dir_all(dir.join("wav"))?;
    fs::create_dir_all(dir.join("txt"))?;
    let mut entries = Vec::with_capacity(utts.len());
    for u in utts {
        let wav = PathBuf::from("wav").join(format!("{}.wav", u.utterance_id));
        let txt = PathBuf::from("txt").join(format!("{}.txt", u.utterance_id));
        write_wav(&dir.join(&wav), &u.wav)?;
        fs::write(dir.join(&txt), &u.transcript)?;
        entries.push(CorpusEntry {
            utterance_id: u.utterance_id.clone(),
            speaker_id: u.speaker_id.clone(),
            wav,
            transcript: Some(txt),
            split: split.into(),
        });
    }
    Ok(CorpusManifest { entries })
}
