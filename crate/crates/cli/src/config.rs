//! Flat `key = value` run configuration with `#` comments.

use std::path::Path;

use nava::dataset::{SplitMode, SplitSpec};
use nava::dsp::{FeatureKind, StftConfig};
use nava::nn::BiLGNetConfig;
use nava::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "feature",
    "frame_length",
    "hop_length",
    "model",
    "input_dim",
    "encoder",
    "latent",
    "decoder",
    "bottleneck",
    "dropout",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "batch_size",
    "max_epochs",
    "plateau_factor",
    "plateau_patience",
    "plateau_min_delta",
    "seed",
    "standardize",
    "early_stop_patience",
    "split_mode",
    "split_train",
    "split_val",
    "split_test",
    "split_seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub feature: FeatureKind,
    pub stft: StftConfig,
    pub model: BiLGNetConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            feature: FeatureKind::Mfcc,
            stft: StftConfig::default(),
            model: BiLGNetConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!(
                "line {}: expected key = value, got `{line}`",
                n + 1
            ));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{key}`: cannot parse `{v}`"))
}

fn widths(key: &str, v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|w| num(key, w.trim())).collect()
}

impl RunConfig {
    /// Defaults, then `file_pairs`, then `overrides`, then validation.
    pub fn resolve(
        file_pairs: &[(String, String)],
        overrides: &[(String, String)],
    ) -> Result<Self, String> {
        let all: Vec<&(String, String)> = file_pairs.iter().chain(overrides).collect();
        for (k, _) in &all {
            if !KEYS.contains(&k.as_str()) {
                return Err(format!("unknown config key `{k}`"));
            }
        }
        let mut cfg = RunConfig::default();
        // The preset only fills widths; explicit width keys win regardless of order.
        if let Some((_, v)) = all.iter().rev().find(|(k, _)| k == "model") {
            cfg.model = match v.as_str() {
                "full" | "default" => BiLGNetConfig::default(),
                "reduced" => BiLGNetConfig::reduced(0),
                "small" => BiLGNetConfig::small(0),
                other => {
                    return Err(format!(
                        "`model`: unknown preset `{other}` (expected full, reduced or small)"
                    ))
                }
            };
        }
        let mut input_dim = None;
        let mut split_seed = None;
        for (k, v) in all {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "model" => {}
                "feature" => cfg.feature = v.parse().map_err(|e| format!("`feature`: {e}"))?,
                "frame_length" => cfg.stft.frame_length = num(k, v)?,
                "hop_length" => cfg.stft.hop_length = num(k, v)?,
                "input_dim" => input_dim = Some(num(k, v)?),
                "encoder" => cfg.model.encoder = widths(k, v)?,
                "latent" => cfg.model.latent = num(k, v)?,
                "decoder" => cfg.model.decoder = widths(k, v)?,
                "bottleneck" => cfg.model.bottleneck = num(k, v)?,
                "dropout" => cfg.model.dropout = num(k, v)?,
                "learning_rate" => cfg.train.learning_rate = num(k, v)?,
                "beta1" => cfg.train.beta1 = num(k, v)?,
                "beta2" => cfg.train.beta2 = num(k, v)?,
                "epsilon" => cfg.train.epsilon = num(k, v)?,
                "batch_size" => cfg.train.batch_size = num(k, v)?,
                "max_epochs" => cfg.train.max_epochs = num(k, v)?,
                "plateau_factor" => cfg.train.plateau_factor = num(k, v)?,
                "plateau_patience" => cfg.train.plateau_patience = num(k, v)?,
                "plateau_min_delta" => cfg.train.plateau_min_delta = num(k, v)?,
                "seed" => {
                    cfg.train.seed = num(k, v)?;
                    cfg.split.seed = cfg.train.seed;
                }
                "standardize" => cfg.train.standardize = num(k, v)?,
                "early_stop_patience" => {
                    cfg.train.early_stop_patience = match v {
                        "none" | "off" => None,
                        _ => Some(num(k, v)?),
                    }
                }
                "split_mode" => {
                    cfg.split.mode = v
                        .parse::<SplitMode>()
                        .map_err(|e| format!("`split_mode`: {e}"))?
                }
                "split_train" => cfg.split.train = num(k, v)?,
                "split_val" => cfg.split.val = num(k, v)?,
                "split_test" => cfg.split.test = num(k, v)?,
                "split_seed" => split_seed = Some(num(k, v)?),
                _ => unreachable!(),
            }
        }
        if let Some(s) = split_seed {
            cfg.split.seed = s;
        }
        cfg.model.input_dim = input_dim.unwrap_or(cfg.feature.dims());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, String> {
        let pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        Self::resolve(&pairs, overrides)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.stft.validate().map_err(|e| e.to_string())?;
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.split.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<RunConfig, String> {
        RunConfig::resolve(&parse_pairs(text)?, &[])
    }

    #[test]
    fn defaults_match_library() {
        let c = resolve("").unwrap();
        assert_eq!(c.model, BiLGNetConfig::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.stft.hop_length, 1536);
    }

    #[test]
    fn comments_presets_and_overrides() {
        let text = "# reduced run\nencoder = 64,32,16 # wider\nmodel = reduced\n\nseed = 9\nsplit_seed=3\n";
        let c = resolve(text).unwrap();
        assert_eq!(c.model.encoder, vec![64, 32, 16]);
        assert_eq!(c.model.decoder, vec![8, 16, 32]);
        assert_eq!(c.model.input_dim, 24);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.split.seed, 3);

        let o = vec![parse_override("learning_rate=0.01").unwrap()];
        let c = RunConfig::resolve(&parse_pairs("learning_rate = 0.5").unwrap(), &o).unwrap();
        assert_eq!(c.train.learning_rate, 0.01);

        let c = resolve("feature = mel\nearly_stop_patience = 4").unwrap();
        assert_eq!(c.model.input_dim, 128);
        assert_eq!(c.train.early_stop_patience, Some(4));
    }

    #[test]
    fn errors_name_the_key() {
        assert!(resolve("colour = blue").unwrap_err().contains("colour"));
        assert!(resolve("latent = many").unwrap_err().contains("latent"));
        assert!(resolve("just words").is_err());
        assert!(resolve("plateau_factor = 1.5")
            .unwrap_err()
            .contains("plateau"));
        assert!(resolve("decoder = 8,8,8").is_err());
        assert!(resolve("hop_length = 0").is_err());
        assert!(resolve("split_train = 0.5").is_err());
    }
}
