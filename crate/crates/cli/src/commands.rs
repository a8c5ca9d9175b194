use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use s2a_core::animation::utterance_stem;
use s2a_core::container::Container;
use s2a_core::corpus::{gen_corpus as write_corpus, Corpus, Split};
use s2a_core::evalbench::{
    bench_rtf, format_table, load_animation_dir, match_pairs, matched_blstm, BenchModel, RmseReport,
    REPORT_SCHEMA_VERSION,
};
use s2a_core::features::{
    frame_energy, frame_pitch, read_wav, resample_linear, vad_trim, FeatureKind, FeatureSequence, FrameSpec,
    NormStats, FEATURE_RATE_HZ,
};
use s2a_core::model::{Checkpoint, S2aModel, Variant};
use s2a_core::numerics::RngState;
use s2a_core::trainer::train as run_training;
use serde::Serialize;
use serde_json::json;

use crate::config::{print_effective, resolve_seed, CliConfig, Preset};
use crate::CliError;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn gen_corpus(
    out: &Path,
    utterances: Option<usize>,
    seed: Option<u64>,
    coupled_energy: Option<bool>,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let file = CliConfig::load(config)?;
    let mut spec = file.corpus;
    if let Some(n) = utterances {
        spec.n_utterances = n;
    }
    if let Some(c) = coupled_energy {
        spec.coupled_energy = c;
    }
    spec.seed = resolve_seed(seed, spec.seed)?;
    if spec.n_utterances < 3 {
        return Err(CliError::usage(format!(
            "--utterances must be at least 3 (one per split), got {}",
            spec.n_utterances
        )));
    }
    print_effective("gen-corpus", &json!({ "out": out, "corpus": spec }));
    let manifest = write_corpus(out, &spec)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{:<5} {}", split.name(), manifest.count(split));
    }
    Ok(())
}

pub fn features(wav: &Path, ppg: &Path, out: &Path, vad: bool) -> Result<(), CliError> {
    let spec = FrameSpec::default();
    let samples = read_wav(wav, spec.sample_rate)?;
    let energy = frame_energy(&samples, &spec);
    let pitch = frame_pitch(&samples, &spec);
    if energy.is_empty() {
        return Err(CliError::usage(format!("{}: audio shorter than one frame", wav.display())));
    }
    let container = Container::read(ppg)?;
    let mut posteriors = container.require("ppg")?.clone();
    if posteriors.shape().len() != 2 {
        return Err(CliError::usage(format!("{}: ppg tensor must be rank 2", ppg.display())));
    }
    if posteriors.rows() != energy.len() {
        log::warn!(
            "ppg has {} frames, audio has {}; resampling the ppg",
            posteriors.rows(),
            energy.len()
        );
        posteriors = resample_linear(&posteriors, energy.len(), true)?;
    }
    let id = utterance_stem(wav).trim_end_matches(".wav").to_string();
    let mut fs = FeatureSequence::new(id, FeatureKind::Ppg, posteriors, pitch, energy, FEATURE_RATE_HZ)?;
    let before = fs.len();
    if vad {
        fs = vad_trim(&fs)?;
    }
    write_file(out, &fs.to_container()?.to_bytes()?)?;
    println!("{}: {} frames ({} trimmed)", fs.utterance_id, fs.len(), before - fs.len());
    Ok(())
}

pub struct TrainArgs {
    pub corpus: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub variant: Option<String>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = CliConfig::load(args.config.as_deref())?;
    let mut model_cfg = file.model_config(args.preset)?;
    if let Some(v) = &args.variant {
        model_cfg = model_cfg.for_variant(Variant::parse(v)?);
    }
    model_cfg.validate()?;
    let mut train_cfg = file.train.clone();
    train_cfg.seed = resolve_seed(args.seed, train_cfg.seed)?;
    if let Some(e) = args.epochs {
        train_cfg.max_epochs = e;
        train_cfg.early_stop_patience = train_cfg.early_stop_patience.min(e);
    }
    if let Some(b) = args.batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        train_cfg.learning_rate = lr;
    }
    train_cfg.validate()?;
    let corpus_dir = args
        .corpus
        .or(file.paths.corpus)
        .ok_or_else(|| CliError::usage("--corpus is required".into()))?;
    let out = args
        .out
        .or(file.paths.out)
        .ok_or_else(|| CliError::usage("--out is required".into()))?;
    let log_path = args.log.or(file.paths.log).unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".log.jsonl");
        out.with_file_name(name)
    });
    if !corpus_dir.join("manifest.json").is_file() {
        return Err(CliError::usage(format!("no corpus manifest in {}", corpus_dir.display())));
    }
    print_effective(
        "train",
        &json!({
            "model": model_cfg,
            "train": train_cfg,
            "paths": { "corpus": corpus_dir, "out": out, "log": log_path },
        }),
    );
    let corpus = Corpus::open(&corpus_dir)?;
    let log_file =
        File::create(&log_path).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", log_path.display())))?;
    let mut log_writer = BufWriter::new(log_file);
    let outcome = run_training(&corpus, &model_cfg, &train_cfg, Some(&mut log_writer))?;
    log_writer
        .flush()
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", log_path.display())))?;
    outcome.checkpoint.save(&out)?;
    let meta = &outcome.checkpoint.meta;
    println!(
        "{}: best epoch {} of {}, val RMSE {:.6}{}",
        model_cfg.variant.name(),
        meta.epoch,
        outcome.history.len(),
        meta.val_rmse.unwrap_or(f64::NAN),
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

/// Feature file suffix matching the checkpoint's input kind.
fn feature_suffix(ckpt: &Checkpoint) -> &'static str {
    if ckpt.config.variant == Variant::DenseFeatures {
        ".dense.s2a1"
    } else {
        ".feat.s2a1"
    }
}

pub fn infer(ckpt: &Path, features: &Path, out: &Path) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(ckpt)?;
    if features.is_dir() {
        let mut inputs: Vec<PathBuf> = fs::read_dir(features)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", features.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                name.ends_with(feature_suffix(&ckpt))
            })
            .collect();
        inputs.sort();
        if inputs.is_empty() {
            return Err(CliError::usage(format!(
                "no {} files in {}",
                feature_suffix(&ckpt),
                features.display()
            )));
        }
        fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
        for path in &inputs {
            let anim = ckpt.animate(&FeatureSequence::load(path)?)?;
            write_file(&out.join(format!("{}.csv", utterance_stem(path))), anim.to_csv().as_bytes())?;
        }
        println!("wrote {} animations to {}", inputs.len(), out.display());
    } else {
        let anim = ckpt.animate(&FeatureSequence::load(features)?)?;
        write_file(out, anim.to_csv().as_bytes())?;
        println!("{}: {} frames", anim.utterance_id, anim.len());
    }
    Ok(())
}

pub fn eval(pred: &Path, reference: &Path, name: &str, out: Option<&Path>) -> Result<(), CliError> {
    let preds = load_animation_dir(pred)?;
    let refs = load_animation_dir(reference)?;
    let pairs = match_pairs(&preds, &refs)?;
    let report = RmseReport::from_pairs(name, &pairs)?;
    print!("{}", format_table(std::slice::from_ref(&report)));
    if let Some(path) = out {
        write_json(path, &json!({ "schema_version": REPORT_SCHEMA_VERSION, "rows": [report] }))?;
    }
    Ok(())
}

pub struct BenchArgs {
    pub ckpt: Vec<PathBuf>,
    pub frames: Option<usize>,
    pub runs: Option<usize>,
    pub warmup: Option<usize>,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn identity_stats(channels: usize) -> NormStats {
    NormStats {
        anim_mean: vec![0.0; channels],
        anim_std: vec![1.0; channels],
        pitch_mean: 0.0,
        pitch_std: 1.0,
        energy_mean: 0.0,
        energy_std: 1.0,
    }
}

pub fn bench(args: BenchArgs) -> Result<(), CliError> {
    let file = CliConfig::load(args.config.as_deref())?;
    let mut cfg = file.bench.clone();
    if let Some(f) = args.frames {
        cfg.frames = f;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(w) = args.warmup {
        cfg.warmup = w;
    }
    cfg.seed = resolve_seed(args.seed, cfg.seed)?;
    cfg.validate()?;

    let checkpoints: Vec<Checkpoint> = args.ckpt.iter().map(Checkpoint::load).collect::<Result<_, _>>()?;
    let (fresh_model, fresh_params, fresh_stats);
    let mut named: Vec<(String, S2aModel, &_, &NormStats)> = Vec::new();
    if checkpoints.is_empty() {
        let model_cfg = file.model_config(args.preset)?;
        fresh_model = S2aModel::new(model_cfg.clone())?;
        fresh_params = fresh_model.init_params::<f32>(&mut RngState::new(cfg.seed));
        fresh_stats = identity_stats(model_cfg.out_dim);
        named.push((model_cfg.variant.name().to_string(), fresh_model, &fresh_params, &fresh_stats));
        print_effective("bench", &json!({ "bench": cfg, "model": model_cfg }));
    } else {
        for (path, c) in args.ckpt.iter().zip(&checkpoints) {
            let name = path.file_stem().and_then(|n| n.to_str()).unwrap_or("model").to_string();
            named.push((name, c.model()?, &c.params, &c.stats));
        }
        print_effective("bench", &json!({ "bench": cfg, "checkpoints": args.ckpt }));
    }
    let (_, first_model, first_params, first_stats) = &named[0];
    let blstm = matched_blstm(first_model, first_params, cfg.seed)?;
    let mut models = vec![BenchModel::Blstm {
        name: "blstm".into(),
        blstm: &blstm,
        stats: first_stats,
    }];
    for (name, model, params, stats) in &named {
        models.push(BenchModel::Transformer {
            name: name.clone(),
            model: model.clone(),
            params,
            stats,
        });
    }
    let report = bench_rtf(&models, &cfg)?;
    print!("{}", report.table());
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    Ok(())
}
