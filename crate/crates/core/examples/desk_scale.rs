//! Synthetic end-to-end run: synth, MFCC extraction, record-level split,
//! reduced BiLGNet training and a test-split report.
//!
//! `cargo run --release -p nava --example desk_scale -- [workdir] [seed] [clips] [epochs]`

use std::time::Instant;

use nava::dataset::{extract_features, split, synth_dataset, SplitSpec, SynthSpec};
use nava::dsp::{FeatureKind, StftConfig};
use nava::eval::{confusion, render, report, ReportFormat};
use nava::nn::BiLGNetConfig;
use nava::training::{argmax, FeatureSpec, Samples, TrainConfig, Trainer};

fn main() -> nava::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = std::path::PathBuf::from(args.first().map_or("desk_scale_run", String::as_str));
    let seed: u64 = args.get(1).map_or(7, |s| s.parse().unwrap());
    let clips: usize = args.get(2).map_or(30, |s| s.parse().unwrap());
    let epochs: usize = args.get(3).map_or(60, |s| s.parse().unwrap());

    let t0 = Instant::now();
    let synth = SynthSpec {
        clips_per_class: clips,
        clip_seconds: 60.0,
        seed,
        ..Default::default()
    };
    let records = synth_dataset(&synth, dir.join("audio"))?;
    eprintln!("synth {} clips in {:.1?}", records.len(), t0.elapsed());

    let t0 = Instant::now();
    let stft = StftConfig::default();
    let summary = extract_features(&records, FeatureKind::Mfcc, &stft, dir.join("features"))?;
    let cache = summary.cache;
    eprintln!("extract {} segments in {:.1?}", cache.len(), t0.elapsed());

    let splits = split(
        cache.entries(),
        &SplitSpec {
            seed,
            ..Default::default()
        },
    )?;
    let train = Samples::load(&cache, &splits.train)?;
    let val = Samples::load(&cache, &splits.val)?;
    let test = Samples::load(&cache, &splits.test)?;
    eprintln!("split {}/{}/{}", train.len(), val.len(), test.len());

    let env = |k: &str| std::env::var(k).ok().map(|v| v.parse::<f64>().unwrap());
    let tc = TrainConfig {
        max_epochs: epochs,
        seed,
        learning_rate: env("LR").unwrap_or(1e-3),
        batch_size: env("BATCH").map_or(32, |b| b as usize),
        ..Default::default()
    };
    let mut model = BiLGNetConfig::reduced(train.cols);
    model.dropout = env("DROPOUT").unwrap_or(model.dropout);
    let features = FeatureSpec {
        kind: FeatureKind::Mfcc,
        stft,
    };
    let mut trainer = Trainer::new(&model, &tc, features, &train)?;
    while trainer.epoch < tc.max_epochs {
        let t0 = Instant::now();
        let s = trainer.run_epoch(&train, &val)?;
        eprintln!(
            "epoch {:>3} loss {:.4} train {:.3} val {:.3} lr {:.2e} ({:.1?})",
            s.epoch,
            s.train_loss,
            s.train_accuracy,
            s.val_accuracy,
            s.learning_rate,
            t0.elapsed()
        );
    }
    let probs = trainer.predict(&test)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let r = report(&confusion(&preds, &test.labels)?)?;
    print!("{}", render(&r, ReportFormat::Text));
    Ok(())
}
