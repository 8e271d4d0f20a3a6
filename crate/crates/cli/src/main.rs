//! `vqmivc` command-line entry point: synth, extract, train, convert, eval.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use vqmivc::checkpoint;
use vqmivc::converter::{convert_files, one_shot_convert, vocoder_by_name, ConversionRequest};
use vqmivc::corpus::{self, CorpusManifest};
use vqmivc::evaluation::{self, ProbeSample};
use vqmivc::frontend::{analyze, load_waveform, write_wav, FeatureCache, UtteranceFeatures};
use vqmivc::synth::{self, SynthSpec};
use vqmivc::trainer::{train, TrainOptions};
use vqmivc::{Config, Error, Preset, Result};

#[derive(Parser, Debug)]
#[command(name = "vqmivc", version, about = "One-shot voice conversion with disentangled content, speaker and pitch")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML file overlaid on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `train.lambda_mi`.
    #[arg(long = "lambda-mi", global = true)]
    lambda_mi: Option<f32>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Recognizer command for the Same/Mixed protocol; audio paths are appended.
    #[arg(long = "asr-cmd", global = true)]
    asr_cmd: Option<String>,
    /// Feature cache root.
    #[arg(long, global = true, env = "VQMIVC_CACHE_ROOT", default_value = "cache")]
    cache: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multi-speaker corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 30)]
        per_speaker: usize,
        /// Additional held-out utterances per speaker, tagged `test`.
        #[arg(long, default_value_t = 10)]
        test_per_speaker: usize,
        #[arg(long, default_value_t = 1.6)]
        seconds: f32,
    },
    /// Compute mel and pitch features for every manifest entry.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on the cached `train` split.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert one pair, or every `source target output` line of a pair list.
    Convert {
        /// Checkpoint directory, or a training output directory (latest checkpoint).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "pairs")]
        source: Option<PathBuf>,
        #[arg(long, required_unless_present = "pairs")]
        target: Option<PathBuf>,
        #[arg(long, required_unless_present = "pairs")]
        output: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["source", "target", "output"])]
        pairs: Option<PathBuf>,
    },
    /// Run one of the measurement protocols on the cached `test` split.
    Eval {
        kind: EvalKind,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus manifest; needed by `pcc`, which works on audio.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalKind {
    Mi,
    Probe,
    Pcc,
    SameMixed,
}

fn load_config(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(path) => Config::from_file(g.preset, path)?,
        None => Config::preset(g.preset),
    };
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    if let Some(l) = g.lambda_mi {
        cfg.train.lambda_mi = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_dir(cache: &Path, split: &str) -> PathBuf {
    let d = cache.join(split);
    if d.is_dir() {
        d
    } else {
        cache.to_path_buf()
    }
}

fn load_split(cache: &Path, split: &str) -> Result<Vec<UtteranceFeatures>> {
    let dir = split_dir(cache, split);
    if !dir.is_dir() {
        return Err(Error::Config(format!("feature cache {} does not exist", dir.display())));
    }
    let data = FeatureCache::open(&dir)?.load_all()?;
    if data.is_empty() {
        return Err(Error::Config(format!("feature cache {} is empty", dir.display())));
    }
    Ok(data)
}

fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join("manifest.json").is_file() {
        return Ok(path.to_path_buf());
    }
    checkpoint::latest(path)?.ok_or_else(|| Error::Checkpoint(format!("no checkpoint at {}", path.display())))
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn cmd_synth(out: &Path, speakers: usize, per_speaker: usize, test_per_speaker: usize, seconds: f32, seed: u64) -> Result<i32> {
    let train = synth::generate(&SynthSpec { n_speakers: speakers, utterances_per_speaker: per_speaker, seconds, seed });
    let mut manifest = corpus::write_synthetic(out, &train, "train")?;
    if test_per_speaker > 0 {
        let mut test = synth::generate(&SynthSpec {
            n_speakers: speakers,
            utterances_per_speaker: test_per_speaker,
            seconds,
            seed: seed.wrapping_add(1000),
        });
        for u in &mut test {
            u.utterance_id = format!("test_{}", u.utterance_id);
        }
        manifest.entries.extend(corpus::write_synthetic(out, &test, "test")?.entries);
    }
    let path = out.join("manifest.jsonl");
    manifest.save(&path)?;
    print(&json!({ "manifest": path, "utterances": manifest.entries.len() }));
    Ok(0)
}

fn cmd_extract(g: &Global, cfg: &Config, manifest: &Path) -> Result<i32> {
    let corpus = CorpusManifest::load(manifest)?;
    let hash = cfg.hash();
    let mut caches = BTreeMap::new();
    for split in corpus.splits() {
        caches.insert(split.clone(), FeatureCache::open(g.cache.join(&split))?);
    }
    let (mut written, mut skipped) = (0usize, 0usize);
    let mut failed = Vec::new();
    for e in &corpus.entries {
        let cache = &caches[&e.split];
        if cache.contains(&e.utterance_id) && !g.force {
            skipped += 1;
            continue;
        }
        let result = (|| -> Result<()> {
            let wav = load_waveform(&e.wav)?;
            let (mel, pitch) = analyze(&wav, &cfg.features)?;
            let transcript = match &e.transcript {
                Some(p) => Some(std::fs::read_to_string(p).map_err(|err| Error::ingest(p, err))?.trim().to_string()),
                None => None,
            };
            let f = UtteranceFeatures { utterance_id: e.utterance_id.clone(), speaker_id: e.speaker_id.clone(), mel, pitch, transcript };
            cache.write(&f, &hash)
        })();
        match result {
            Ok(()) => written += 1,
            Err(err) => {
                log::error!("{}: {err}", e.utterance_id);
                failed.push(json!({ "utterance_id": e.utterance_id, "kind": err.kind(), "message": err.to_string() }));
            }
        }
    }
    let summary = json!({ "written": written, "skipped": skipped, "failed": failed, "cache": g.cache, "config_hash": hash });
    print(&summary);
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!(
            "{}",
            json!({ "error": { "kind": "partial", "message": format!("{} of {} files failed", failed.len(), corpus.entries.len()), "exit_code": 2 } })
        );
        Ok(2)
    }
}

fn cmd_train(g: &Global, cfg: &Config, out: &Path) -> Result<i32> {
    let data = load_split(&g.cache, "train")?;
    log::info!(
        "training on {} utterances, {} parameters",
        data.len(),
        vqmivc::model::VcModel::new(&cfg.model, data[0].mel.n_mels(), 0).num_parameters()
    );
    let outcome = train(cfg, &data, &TrainOptions { out_dir: Some(out.to_path_buf()), resume: g.resume, stop_after: None })?;
    let last = outcome.state.history.last();
    print(&json!({
        "out": out,
        "epochs": outcome.state.epoch,
        "steps": outcome.state.step,
        "checkpoints": outcome.checkpoints,
        "final_L_REC": last.map(|r| r.l_rec),
        "config_hash": cfg.hash(),
    }));
    Ok(0)
}

fn cmd_convert(checkpoint: &Path, pairs: Vec<(PathBuf, PathBuf, PathBuf)>) -> Result<i32> {
    let ckpt = resolve_checkpoint(checkpoint)?;
    let mut results = Vec::new();
    for (source, target, output) in pairs {
        let req = ConversionRequest { source_wav: source, target_wav: target, checkpoint: ckpt.clone(), output: output.clone() };
        let sidecar = convert_files(&req, None)?;
        results.push(json!({ "output": output, "sidecar": sidecar }));
    }
    print(&json!({ "converted": results }));
    Ok(0)
}

fn read_pairs(path: &Path) -> Result<Vec<(PathBuf, PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                [s, t, o] => Ok((PathBuf::from(s), PathBuf::from(t), PathBuf::from(o))),
                _ => Err(Error::Config(format!("{}:{}: expected `source target output`", path.display(), i + 1))),
            }
        })
        .collect()
}

fn cmd_eval(g: &Global, kind: EvalKind, checkpoint: &Path, out: &Path, manifest: Option<&Path>) -> Result<i32> {
    let ckpt = resolve_checkpoint(checkpoint)?;
    let (model, cfg) = checkpoint::load_model(&ckpt)?;
    let hash = cfg.hash();
    let seed = g.seed.unwrap_or(cfg.train.seed);
    std::fs::create_dir_all(out)?;
    match kind {
        EvalKind::Mi => {
            let reps = evaluation::extract_reps(&model, &load_split(&g.cache, "test")?)?;
            let report = evaluation::measure_mi(&reps, &cfg.model, &cfg.eval, cfg.train.lambda_mi, &hash, cfg.eval.mi_rounds, seed)?;
            std::fs::write(out.join("mi_report.csv"), report.to_csv())?;
            let v = serde_json::to_value(&report)?;
            write_json(&out.join("mi_report.json"), &v)?;
            print(&v);
        }
        EvalKind::Probe => {
            let reps = evaluation::extract_reps(&model, &load_split(&g.cache, "test")?)?;
            let frames = ProbeSample::content_frames(&reps);
            let v = json!({
                "config_hash": hash,
                "lambda_mi": cfg.train.lambda_mi,
                "speaker_accuracy_content": evaluation::probe_speaker_accuracy(&frames, &cfg.eval, seed)?,
                "speaker_accuracy_speaker": evaluation::probe_speaker_accuracy(&ProbeSample::speaker_vectors(&reps), &cfg.eval, seed)?,
                "pitch_loss_content": evaluation::pitch_prediction_loss(&frames, &cfg.eval, seed)?,
            });
            write_json(&out.join("probe_report.json"), &v)?;
            print(&v);
        }
        EvalKind::Pcc => {
            let manifest = manifest.ok_or_else(|| Error::Config("eval pcc needs --manifest".into()))?;
            let v = pcc_report(&model, &cfg, &CorpusManifest::load(manifest)?, out)?;
            write_json(&out.join("pcc_report.json"), &v)?;
            print(&v);
        }
        EvalKind::SameMixed => {
            let data = load_split(&g.cache, "test")?;
            let vocoder = vocoder_by_name(&cfg.eval.vocoder, &cfg.features, cfg.eval.vocoder_iters)?;
            let entries = evaluation::same_mixed_generate(&model, &data, Some(vocoder.as_ref()), out)?;
            let asr = evaluation::run_asr(&entries, g.asr_cmd.as_deref())?;
            let v = json!({ "config_hash": hash, "lambda_mi": cfg.train.lambda_mi, "pairs": entries.len() / 2, "asr": asr });
            write_json(&out.join("asr_report.json"), &v)?;
            print(&v);
        }
    }
    Ok(0)
}

/// Every test utterance is converted to a speaker from another utterance
/// of a different speaker; the oracle row correlates the source with itself.
fn pcc_report(model: &vqmivc::model::VcModel, cfg: &Config, corpus: &CorpusManifest, out: &Path) -> Result<Value> {
    let mut utts: Vec<_> = corpus.entries.iter().filter(|e| e.split == "test").collect();
    if utts.is_empty() {
        utts = corpus.entries.iter().collect();
    }
    let vocoder = vocoder_by_name(&cfg.eval.vocoder, &cfg.features, cfg.eval.vocoder_iters)?;
    std::fs::create_dir_all(out.join("audio"))?;
    let value = |r: Result<f64>| r.ok();
    let n = utts.len();
    let mut rows = Vec::new();
    for (i, src) in utts.iter().enumerate() {
        let others: Vec<_> = (1..n).map(|k| utts[(i + k) % n]).filter(|u| u.speaker_id != src.speaker_id).collect();
        let (Some(tgt), Some(unrelated)) = (others.first(), others.get(others.len() / 2)) else {
            return Err(Error::Config("eval pcc needs test utterances from at least two speakers".into()));
        };
        let src_wav = load_waveform(&src.wav)?;
        let conv = vocoder.vocode(&one_shot_convert(model, cfg, &src_wav, &load_waveform(&tgt.wav)?)?)?;
        write_wav(&out.join("audio").join(format!("{}_to_{}.wav", src.utterance_id, tgt.speaker_id)), &conv)?;
        rows.push(json!({
            "source": src.utterance_id,
            "target": tgt.utterance_id,
            "unrelated": unrelated.utterance_id,
            "oracle": value(evaluation::f0_pcc(&src_wav, &src_wav, &cfg.features)),
            "converted": value(evaluation::f0_pcc(&src_wav, &conv, &cfg.features)),
            "unrelated_pcc": value(evaluation::f0_pcc(&src_wav, &load_waveform(&unrelated.wav)?, &cfg.features)),
        }));
    }
    let mean = |key: &str| {
        let v: Vec<f64> = rows.iter().filter_map(|r| r[key].as_f64()).collect();
        json!({ "mean": (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64), "defined": v.len() })
    };
    Ok(json!({
        "config_hash": cfg.hash(),
        "oracle": mean("oracle"),
        "converted": mean("converted"),
        "unrelated": mean("unrelated_pcc"),
        "pairs": rows,
    }))
}

fn run(cli: Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth { out, speakers, per_speaker, test_per_speaker, seconds } => {
            cmd_synth(out, *speakers, *per_speaker, *test_per_speaker, *seconds, g.seed.unwrap_or(0))
        }
        Command::Extract { manifest } => cmd_extract(g, &load_config(g)?, manifest),
        Command::Train { out } => cmd_train(g, &load_config(g)?, out),
        Command::Convert { checkpoint, source, target, output, pairs } => {
            let list = match pairs {
                Some(p) => read_pairs(p)?,
                None => vec![(source.clone().unwrap(), target.clone().unwrap(), output.clone().unwrap())],
            };
            cmd_convert(checkpoint, list)
        }
        Command::Eval { kind, checkpoint, out, manifest } => cmd_eval(g, *kind, checkpoint, out, manifest.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": e.kind().to_string(), "exit_code": 1 } }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() } }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
