use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::same_mixed::{Condition, ManifestEntry};
use crate::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character edit distance over reference length.
pub fn char_error_rate(hyp: &str, reference: &str) -> f64 {
    let h: Vec<char> = hyp.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    edit_distance(&h, &r) as f64 / r.len().max(1) as f64
}

/// Word edit distance over reference word count.
pub fn word_error_rate(hyp: &str, reference: &str) -> f64 {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    edit_distance(&h, &r) as f64 / r.len().max(1) as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub cer: f64,
    pub wer: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    /// Reason the scoring did not run.
    pub skipped: Option<String>,
    pub same: Option<ErrorRates>,
    pub mixed: Option<ErrorRates>,
    pub delta_c: Option<f64>,
    pub delta_w: Option<f64>,
}

/// Corpus-level rates: total edits over total reference length.
fn aggregate(pairs: &[(String, String)]) -> ErrorRates {
    let (mut ce, mut cn, mut we, mut wn) = (0usize, 0usize, 0usize, 0usize);
    for (hyp, reference) in pairs {
        let h: Vec<char> = hyp.chars().collect();
        let r: Vec<char> = reference.chars().collect();
        ce += edit_distance(&h, &r);
        cn += r.len();
        let hw: Vec<&str> = hyp.split_whitespace().collect();
        let rw: Vec<&str> = reference.split_whitespace().collect();
        we += edit_distance(&hw, &rw);
        wn += rw.len();
    }
    ErrorRates { cer: ce as f64 / cn.max(1) as f64, wer: we as f64 / wn.max(1) as f64, n: pairs.len() }
}

/// Scores transcripts from an external recognizer. `command` is split on
/// whitespace; the audio paths are appended as arguments and the program
/// must print one transcript line per audio file, in order.
pub fn run_asr(entries: &[ManifestEntry], command: Option<&str>) -> Result<AsrReport> {
    let Some(command) = command.filter(|c| !c.trim().is_empty()) else {
        return Ok(AsrReport { skipped: Some("no ASR command configured".into()), same: None, mixed: None, delta_c: None, delta_w: None });
    };
    let mut parts = command.split_whitespace();
    let program = parts.next().expect("non-empty command");
    let output = Command::new(program)
        .args(parts)
        .args(entries.iter().map(|e| &e.audio))
        .output()
        .map_err(|e| Error::External(format!("cannot run `{program}`: {e}")))?;
    if !output.status.success() {
        return Err(Error::External(format!(
            "`{program}` exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    if lines.len() != entries.len() {
        return Err(Error::External(format!("expected {} transcripts, got {}", entries.len(), lines.len())));
    }
    let mut by_cond: [Vec<(String, String)>; 2] = [Vec::new(), Vec::new()];
    for (e, hyp) in entries.iter().zip(lines) {
        let reference = std::fs::read_to_string(Path::new(&e.reference))?;
        let slot = if e.condition == Condition::Same { 0 } else { 1 };
        by_cond[slot].push((hyp.trim().to_string(), reference.trim().to_string()));
    }
    let same = aggregate(&by_cond[0]);
    let mixed = aggregate(&by_cond[1]);
    Ok(AsrReport {
        skipped: None,
        delta_c: Some(mixed.cer - same.cer),
        delta_w: Some(mixed.wer - same.wer),
        same: Some(same),
        mixed: Some(mixed),
    })
}
