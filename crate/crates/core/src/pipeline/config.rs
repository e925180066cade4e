use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::episodes::FOLDS;
use crate::prompt::PromptMode;
use crate::prs::Threshold;
use crate::segmenter::BackendSpec;

pub const DEFAULT_EPISODES: usize = 1000;
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("config file {}: {message}", .path.display())]
    File { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpisodeSource {
    Sample { seed: u64, count: usize },
    /// JSON-lines episode list produced elsewhere.
    Import(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub folds: Vec<u8>,
    pub shots: u32,
    pub episodes: EpisodeSource,
    pub fss_dir: PathBuf,
    pub backend: BackendSpec,
    pub prompt_mode: PromptMode,
    pub threshold: Threshold,
    pub parallelism: NonZeroUsize,
    pub out_dir: PathBuf,
}

/// Fold selection as written in a config file: one fold, a list, or text
/// accepted by [`parse_folds`].
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
enum FoldField {
    One(u8),
    Many(Vec<u8>),
    Text(String),
}

/// Settings from one layer (config file or flags); unset fields fall through.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub manifest: Option<PathBuf>,
    #[serde(default, deserialize_with = "de_folds")]
    pub fold: Option<Vec<u8>>,
    pub shots: Option<u32>,
    pub seed: Option<u64>,
    pub num_episodes: Option<usize>,
    pub episodes: Option<PathBuf>,
    pub fss_dir: Option<PathBuf>,
    pub backend: Option<String>,
    pub prompt_mode: Option<PromptMode>,
    pub threshold: Option<f64>,
    pub parallelism: Option<usize>,
    pub out: Option<PathBuf>,
}

fn de_folds<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
    Option::<FoldField>::deserialize(d)?
        .map(|f| match f {
            FoldField::One(x) => Ok(vec![x]),
            FoldField::Many(v) => Ok(v),
            FoldField::Text(t) => parse_folds(&t).map_err(serde::de::Error::custom),
        })
        .transpose()
}

/// Parses `"2"`, `"0,1,3"` or `"all"`.
pub fn parse_folds(text: &str) -> Result<Vec<u8>, String> {
    if text == "all" {
        return Ok((0..FOLDS).collect());
    }
    text.split(',')
        .map(|p| p.trim().parse::<u8>().map_err(|e| format!("fold {p:?}: {e}")))
        .collect()
}

impl PartialConfig {
    /// Loads a JSON config; relative paths are taken relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut cfg: PartialConfig = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.manifest,
            &mut cfg.episodes,
            &mut cfg.fss_dir,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(b) = cfg.backend.as_mut() {
            if let Some(dir) = b.strip_prefix("precomputed:") {
                if Path::new(dir).is_relative() {
                    *b = format!("precomputed:{}", base.join(dir).display());
                }
            }
        }
        Ok(cfg)
    }

    /// `other` wins wherever it sets a value.
    pub fn overlay(self, other: PartialConfig) -> PartialConfig {
        PartialConfig {
            manifest: other.manifest.or(self.manifest),
            fold: other.fold.or(self.fold),
            shots: other.shots.or(self.shots),
            seed: other.seed.or(self.seed),
            num_episodes: other.num_episodes.or(self.num_episodes),
            episodes: other.episodes.or(self.episodes),
            fss_dir: other.fss_dir.or(self.fss_dir),
            backend: other.backend.or(self.backend),
            prompt_mode: other.prompt_mode.or(self.prompt_mode),
            threshold: other.threshold.or(self.threshold),
            parallelism: other.parallelism.or(self.parallelism),
            out: other.out.or(self.out),
        }
    }

    pub fn resolve(self) -> Result<RunConfig, ConfigError> {
        let folds = self.fold.unwrap_or_else(|| vec![0]);
        if folds.is_empty() {
            return Err(ConfigError::Invalid {
                field: "fold",
                message: "no folds selected".into(),
            });
        }
        if let Some(&bad) = folds.iter().find(|&&f| f >= FOLDS) {
            return Err(ConfigError::Invalid {
                field: "fold",
                message: format!("{bad} is not in 0..{FOLDS}"),
            });
        }
        let mut folds_sorted = folds.clone();
        folds_sorted.sort_unstable();
        folds_sorted.dedup();

        let threshold = Threshold::new(self.threshold.unwrap_or(Threshold::DEFAULT.value()))
            .map_err(|e| ConfigError::Invalid {
                field: "threshold",
                message: e.to_string(),
            })?;
        let parallelism = NonZeroUsize::new(self.parallelism.unwrap_or(DEFAULT_PARALLELISM))
            .ok_or(ConfigError::Invalid {
                field: "parallelism",
                message: "must be at least 1".into(),
            })?;
        let backend = self
            .backend
            .ok_or(ConfigError::Missing("backend"))?
            .parse::<BackendSpec>()
            .map_err(|message| ConfigError::Invalid {
                field: "backend",
                message,
            })?;
        let shots = self.shots.unwrap_or(1);
        if shots == 0 {
            return Err(ConfigError::Invalid {
                field: "shots",
                message: "must be at least 1".into(),
            });
        }
        let episodes = match self.episodes {
            Some(path) => EpisodeSource::Import(path),
            None => EpisodeSource::Sample {
                seed: self.seed.unwrap_or(0),
                count: self.num_episodes.unwrap_or(DEFAULT_EPISODES),
            },
        };
        Ok(RunConfig {
            manifest: self.manifest.ok_or(ConfigError::Missing("manifest"))?,
            folds: folds_sorted,
            shots,
            episodes,
            fss_dir: self.fss_dir.ok_or(ConfigError::Missing("fss_dir"))?,
            backend,
            prompt_mode: self.prompt_mode.unwrap_or(PromptMode::Box),
            threshold,
            parallelism,
            out_dir: self.out.unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}
