use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::converter::Vocoder;
use crate::frontend::{write_wav, UtteranceFeatures};
use crate::model::VcModel;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Same,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub condition: Condition,
    pub speaker: String,
    pub content_utt: String,
    pub speaker_utt: String,
    pub audio: String,
    pub reference: String,
}

/// Generates Same (all factors from utterance `a`) and Mixed (speaker
/// embedding from the next utterance of the same speaker, cyclically)
/// audio for every utterance, and writes `manifest.jsonl` into `out_dir`.
/// When `vocoder` is `None` only the manifest is produced.
pub fn same_mixed_generate(
    model: &VcModel,
    utts: &[UtteranceFeatures],
    vocoder: Option<&dyn Vocoder>,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    let mut by_speaker: BTreeMap<&str, Vec<&UtteranceFeatures>> = BTreeMap::new();
    for u in utts {
        by_speaker.entry(u.speaker_id.as_str()).or_default().push(u);
    }
    std::fs::create_dir_all(out_dir.join("audio"))?;
    std::fs::create_dir_all(out_dir.join("text"))?;
    let mut entries = Vec::new();
    for (speaker, list) in by_speaker {
        if list.len() < 2 {
            log::warn!("speaker {speaker} has fewer than 2 utterances; skipped");
            continue;
        }
        for (i, a) in list.iter().enumerate() {
            let b = list[(i + 1) % list.len()];
            let reference = out_dir.join("text").join(format!("{}.txt", a.utterance_id));
            std::fs::write(&reference, a.transcript.as_deref().unwrap_or(""))?;
            for (condition, s) in [(Condition::Same, *a), (Condition::Mixed, b)] {
                let tag = match condition {
                    Condition::Same => "same",
                    Condition::Mixed => "mixed",
                };
                let audio = out_dir.join("audio").join(format!("{tag}_{}.wav", a.utterance_id));
                if let Some(v) = vocoder {
                    let mel = model.convert(&a.mel, &a.pitch, &s.mel)?;
                    write_wav(&audio, &v.vocode(&mel)?)?;
                }
                entries.push(ManifestEntry {
                    condition,
                    speaker: speaker.to_string(),
                    content_utt: a.utterance_id.clone(),
                    speaker_utt: s.utterance_id.clone(),
                    audio: audio.display().to_string(),
                    reference: reference.display().to_string(),
                });
            }
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("manifest.jsonl"))?);
    for e in &entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(entries)
}
