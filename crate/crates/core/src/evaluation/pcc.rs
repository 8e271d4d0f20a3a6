use crate::config::FeatureConfig;
use crate::frontend::{extract_f0, Waveform};
use crate::{Error, Result};

/// Pearson correlation; undefined for fewer than two points or zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Undefined(format!("correlation needs two equal-length sequences of ≥2 points ({} vs {})", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Undefined("correlation of a constant sequence".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation of the two F0 tracks over frames voiced in both, after
/// truncating to the shorter track.
pub fn f0_pcc(source: &Waveform, converted: &Waveform, cfg: &FeatureConfig) -> Result<f64> {
    let a = extract_f0(source, cfg)?;
    let b = extract_f0(converted, cfg)?;
    let n = a.hz.len().min(b.hz.len());
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for i in 0..n {
        if a.voiced[i] && b.voiced[i] {
            xa.push(a.hz[i] as f64);
            xb.push(b.hz[i] as f64);
        }
    }
    if xa.len() < 2 {
        return Err(Error::Undefined(format!("only {} jointly voiced frames", xa.len())));
    }
    pearson(&xa, &xb)
}
