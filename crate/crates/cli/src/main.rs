//! `nava`: extract, synth, train, evaluate, classify and gradcheck.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nava::audio_io::{read_wav, resample, PIPELINE_RATE};
use nava::dataset::{
    extract_features, load_manifest, segmentize, split, synth_dataset, Dastgah, FeatureCache,
    Splits, SynthSpec, SEGMENT_SAMPLES, SEGMENT_SECONDS,
};
use nava::dsp::{FeatureExtractor, FeatureKind, StftConfig, WindowKind};
use nava::eval::{confusion, majority_vote, render, report, ReportFormat};
use nava::nn::{gradcheck, Tensor};
use nava::training::{argmax, load_checkpoint, save_checkpoint, FeatureSpec, Samples, Trainer};

use config::{parse_override, RunConfig};

#[derive(Parser)]
#[command(name = "nava", version, about = "Dastgah classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment the manifest's recordings and write a feature cache.
    Extract(ExtractArgs),
    /// Write a synthetic quartertone-scale dataset and its manifest.
    Synth(SynthArgs),
    /// Split a feature cache, train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report accuracy, per-class metrics and the confusion matrix on a split.
    Evaluate(EvaluateArgs),
    /// Classify one WAV file segment by segment and vote.
    Classify(ClassifyArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Mfcc,
    ChromaCens,
    Mel,
}

impl From<FeatureArg> for FeatureKind {
    fn from(f: FeatureArg) -> Self {
        match f {
            FeatureArg::Mfcc => FeatureKind::Mfcc,
            FeatureArg::ChromaCens => FeatureKind::ChromaCens,
            FeatureArg::Mel => FeatureKind::Mel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Text,
    Json,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "mfcc")]
    feature: FeatureArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1536)]
    hop: usize,
    #[arg(long, default_value_t = 2048)]
    frame: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    per_class: usize,
    #[arg(long, default_value_t = 20.0)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transpose each clip by a random number of quartertones.
    #[arg(long)]
    random_tonic: bool,
    #[arg(long, default_value_t = 220.0)]
    tonic_hz: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature cache directory written by `extract`.
    #[arg(long)]
    features: PathBuf,
    /// key = value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines epoch log [default: <out>.jsonl]
    #[arg(long)]
    log: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "text")]
    report: ReportArg,
    /// Split file written by `train` [default: <model>.splits.json]
    #[arg(long)]
    splits: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    wav: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<nava::Error> for Failure {
    fn from(e: nava::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Extract(a) => extract(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Classify(a) => classify(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Outcome {
    let Ok(v) = std::env::var("NAVA_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Usage(format!(
            "NAVA_THREADS must be a positive integer, got `{v}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn extract(a: ExtractArgs) -> Outcome {
    if !a.manifest.is_file() {
        return Err(Failure::Usage(format!(
            "manifest {} does not exist",
            a.manifest.display()
        )));
    }
    let stft = StftConfig {
        frame_length: a.frame,
        hop_length: a.hop,
        window: WindowKind::Hann,
    };
    stft.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let records = load_manifest(&a.manifest)?;
    let summary = extract_features(&records, a.feature.into(), &stft, &a.out)?;
    let counts = summary.cache.class_counts();
    let mut out = std::io::stdout().lock();
    for d in Dastgah::REPORT_ORDER {
        writeln!(out, "{:<14}{:>6}", d.name(), counts[d.code()])?;
    }
    writeln!(out, "{:<14}{:>6}", "total", summary.cache.len())?;
    if !summary.errors.is_empty() {
        log::warn!(
            "{} of {} records failed; see errors.json",
            summary.errors.len(),
            records.len()
        );
    }
    if summary.reused > 0 {
        log::info!("reused {} existing segment files", summary.reused);
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let spec = SynthSpec {
        clips_per_class: a.per_class,
        clip_seconds: a.seconds,
        seed: a.seed,
        tonic_hz: a.tonic_hz,
        random_tonic: a.random_tonic,
        ..Default::default()
    };
    let records = synth_dataset(&spec, &a.out).map_err(|e| match e {
        nava::Error::InvalidArgument(m) => Failure::Usage(m),
        e => e.into(),
    })?;
    println!(
        "wrote {} clips and {}",
        records.len(),
        a.out.join("manifest.csv").display()
    );
    Ok(())
}

fn splits_path(model: &Path) -> PathBuf {
    model.with_extension("splits.json")
}

fn train(a: TrainArgs) -> Outcome {
    let overrides = a
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Usage)?;
    let cfg = RunConfig::load(a.config.as_deref(), &overrides).map_err(Failure::Usage)?;

    let cache = FeatureCache::load(&a.features).map_err(|e| {
        Failure::Runtime(format!(
            "cannot load feature cache {}: {e}",
            a.features.display()
        ))
    })?;
    let kind = cache
        .kind()
        .ok_or_else(|| Failure::Runtime("feature cache is empty".into()))?;
    let rows = cfg.stft.frame_count(SEGMENT_SAMPLES)?;
    if let Some(e) = cache.entries().iter().find(|e| e.rows != rows) {
        return Err(Failure::Runtime(format!(
            "segment {} has {} frames but frame_length {} / hop_length {} give {rows}",
            e.segment_id, e.rows, cfg.stft.frame_length, cfg.stft.hop_length
        )));
    }
    let splits = split(cache.entries(), &cfg.split)?;
    log::info!(
        "split {} / {} / {} segments ({:?} level)",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        cfg.split.mode
    );
    let train = Samples::load(&cache, &splits.train)?;
    let val = Samples::load(&cache, &splits.val)?;
    let features = FeatureSpec {
        kind,
        stft: cfg.stft,
    };
    let mut trainer = Trainer::new(&cfg.model, &cfg.train, features, &train)?;
    log::info!("{}", trainer.model.summary());

    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("jsonl"));
    let mut log_file = BufWriter::new(File::create(&log_path)?);
    trainer.fit(&train, &val, Some(&mut log_file))?;
    log_file.flush()?;
    if trainer.stopped_early() {
        log::info!("early stop after epoch {}", trainer.epoch);
    }
    save_checkpoint(&trainer, &a.out)?;
    std::fs::write(
        splits_path(&a.out),
        serde_json::to_string_pretty(&splits).map_err(|e| Failure::Runtime(e.to_string()))?,
    )?;
    let last = trainer.history.last().map_or(0.0, |s| s.val_accuracy);
    println!("validation accuracy {last:.4}");
    log::info!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let trainer = load_checkpoint(&a.model)?;
    let cache = FeatureCache::load(&a.features)?;
    if let Some(kind) = cache.kind() {
        if kind != trainer.features.kind {
            return Err(Failure::Runtime(format!(
                "feature cache holds {kind} features but the model was trained on {}",
                trainer.features.kind
            )));
        }
    }
    let split_file = a.splits.unwrap_or_else(|| splits_path(&a.model));
    let text = std::fs::read_to_string(&split_file).map_err(|e| {
        Failure::Runtime(format!(
            "cannot read split file {}: {e}",
            split_file.display()
        ))
    })?;
    let splits: Splits =
        serde_json::from_str(&text).map_err(|e| Failure::Runtime(e.to_string()))?;
    let name = match a.split {
        SplitArg::Train => "train",
        SplitArg::Val => "val",
        SplitArg::Test => "test",
    };
    let ids = splits.get(name).unwrap_or_default();
    if ids.is_empty() {
        return Err(Failure::Runtime(format!("the {name} split is empty")));
    }
    let samples = Samples::load(&cache, ids)?;
    let probs = trainer.predict(&samples)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let r = report(&confusion(&preds, &samples.labels)?)?;
    let format = match a.report {
        ReportArg::Text => ReportFormat::Text,
        ReportArg::Json => ReportFormat::Json,
    };
    print!("{}", render(&r, format));
    Ok(())
}

fn classify(a: ClassifyArgs) -> Outcome {
    let trainer = load_checkpoint(&a.model)?;
    let clip = resample(&read_wav(&a.wav)?, PIPELINE_RATE)?;
    let segments = segmentize(&clip, "clip", Dastgah::Shur)?;
    if segments.is_empty() {
        return Err(Failure::Runtime(format!(
            "no full segment: {} lasts {:.1} s, need {SEGMENT_SECONDS} s",
            a.wav.display(),
            clip.duration_seconds()
        )));
    }
    let FeatureSpec { kind, stft } = trainer.features;
    let extractor = FeatureExtractor::new(kind, stft, PIPELINE_RATE)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for seg in &segments {
        let m = extractor.extract(&seg.samples)?;
        rows = m.rows();
        let mut v: Vec<f32> = m.values().iter().map(|&x| x as f32).collect();
        if let Some(s) = &trainer.standardizer {
            v.chunks_exact_mut(m.cols()).for_each(|r| s.apply(r));
        }
        data.extend(v);
    }
    let x = Tensor::new(vec![segments.len(), rows, kind.dims()], data)?;
    let p = trainer.model.predict(&x)?;
    let probs: Vec<Vec<f32>> = p
        .data()
        .chunks_exact(p.features())
        .map(<[f32]>::to_vec)
        .collect();

    let mut out = std::io::stdout().lock();
    write!(out, "# segment  offset_s")?;
    for d in Dastgah::ALL {
        write!(out, " {:>11}", d.name())?;
    }
    writeln!(out, "  predicted")?;
    for (seg, row) in segments.iter().zip(&probs) {
        write!(out, "{:>9}  {:>8.1}", seg.index, seg.offset_seconds)?;
        for v in row {
            write!(out, " {v:>11.4}")?;
        }
        writeln!(out, "  {}", Dastgah::ALL[argmax(row)].name())?;
    }
    let v = majority_vote(&probs)?;
    writeln!(
        out,
        "verdict {} ({} of {} segments, mean probability {:.4})",
        Dastgah::ALL[v.class].name(),
        v.votes,
        probs.len(),
        v.mean_probability
    )?;
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Outcome {
    let results = gradcheck::run_suite(a.seed)?;
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        writeln!(
            out,
            "{:<34} max rel error {:.3e}  ({} entries)  {status}",
            r.name, r.max_rel_error, r.checked
        )?;
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} gradient checks exceeded tolerance {:e}",
            gradcheck::TOLERANCE
        )));
    }
    Ok(())
}
