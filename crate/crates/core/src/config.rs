//! Audit configuration, read from TOML.

use crate::corpus::{CorpusPaths, SchemaConfig};
use crate::forecast::R2Form;
use crate::prompting::{sha256_hex, TaskKind};
use crate::regression::ClusterDim;
use crate::scoring::ProviderConfig;
use crate::synthetic::SimConfig;
use crate::transforms::CohortKind;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Live,
    CacheOnly,
    #[default]
    Synthetic,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "cache-only" | "cache_only" => Ok(Self::CacheOnly),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!("unknown provider `{other}` (live, cache-only, synthetic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub transcripts: Option<PathBuf>,
    pub returns: Option<PathBuf>,
    pub earnings: Option<PathBuf>,
    /// Returns-file column holding the market excess return; the
    /// equal-weighted cross-section is used when absent.
    pub market_column: Option<String>,
    pub schema: SchemaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// Append-only score cache; required for `live` and `cache-only`.
    pub cache_path: Option<PathBuf>,
    #[serde(flatten)]
    pub http: ProviderConfig,
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    #[default]
    Raw,
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub sorts: bool,
    pub fmb: bool,
    pub oos: bool,
    pub panel: bool,
    /// Scores used for quintile sorts.
    pub sort_on: ScoreScale,
    /// Scores used as the forecasting regressor.
    pub forecast_on: ScoreScale,
    /// Defaults to 6 for monthly and 4 for quarterly data.
    pub min_train_periods: Option<usize>,
    pub r2_form: R2Form,
    pub r2_floor: Option<f64>,
    pub exclude_singletons: bool,
    pub fmb_newey_west_lags: Option<usize>,
    pub cluster: ClusterDim,
    /// Adds a `beta` control from rolling market regressions (return task).
    pub rolling_beta: bool,
    pub beta_window: usize,
    pub beta_min_obs: usize,
    /// Directory of replacement prompt templates.
    pub templates_dir: Option<PathBuf>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            sorts: true,
            fmb: true,
            oos: true,
            panel: true,
            sort_on: ScoreScale::Raw,
            forecast_on: ScoreScale::Percentile,
            min_train_periods: None,
            r2_form: R2Form::Squared,
            r2_floor: None,
            exclude_singletons: false,
            fmb_newey_west_lags: None,
            cluster: ClusterDim::Firm,
            rolling_beta: false,
            beta_window: 60,
            beta_min_obs: 36,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub task: TaskKind,
    pub cutoff_date: NaiveDate,
    pub out_dir: PathBuf,
    /// Defaults to year-month for returns and SIC4 x year for earnings.
    pub cohort: Option<CohortKind>,
    /// One Fama-MacBeth column per control set.
    pub control_sets: Vec<Vec<String>>,
    /// Controls for the R²_OOS panel regressions.
    pub panel_controls: Vec<String>,
    /// Also write `score_pairs.csv`.
    pub dump_scores: bool,
    pub data: DataConfig,
    pub provider: ProviderSection,
    pub synthetic: SimConfig,
    pub analysis: AnalysisConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::SentimentReturn,
            cutoff_date: NaiveDate::from_ymd_opt(2023, 10, 1).expect("valid date"),
            out_dir: PathBuf::from("audit-out"),
            cohort: None,
            control_sets: vec![Vec::new()],
            panel_controls: Vec::new(),
            dump_scores: false,
            data: DataConfig::default(),
            provider: ProviderSection::default(),
            synthetic: SimConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl AuditConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(cfg.resolve_relative_to(path.parent().unwrap_or(Path::new("."))))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Relative data, cache and template paths are taken relative to the
    /// config file's directory.
    fn resolve_relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.transcripts);
        fix(&mut self.data.returns);
        fix(&mut self.data.earnings);
        fix(&mut self.provider.cache_path);
        fix(&mut self.analysis.templates_dir);
        self
    }

    pub fn cohort_kind(&self) -> CohortKind {
        self.cohort.unwrap_or(match self.task {
            TaskKind::SentimentReturn => CohortKind::YearMonth,
            TaskKind::CompetitionEarnings => CohortKind::Sic4ByYear,
        })
    }

    pub fn min_train_periods(&self) -> usize {
        self.analysis.min_train_periods.unwrap_or(match self.task {
            TaskKind::SentimentReturn => 6,
            TaskKind::CompetitionEarnings => 4,
        })
    }

    pub fn corpus_paths(&self) -> Result<CorpusPaths, ConfigError> {
        let transcripts = self
            .data
            .transcripts
            .clone()
            .ok_or_else(|| ConfigError::Invalid("data.transcripts is required".into()))?;
        Ok(CorpusPaths {
            transcripts,
            returns: self.data.returns.clone(),
            earnings: self.data.earnings.clone(),
        })
    }

    /// Checks that do not need the input files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        match self.provider.kind {
            ProviderKind::Synthetic => {
                if self.task != TaskKind::SentimentReturn {
                    return invalid("the synthetic provider supports the sentiment_return task only".into());
                }
                self.synthetic.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            ProviderKind::Live | ProviderKind::CacheOnly => {
                if self.data.transcripts.is_none() {
                    return invalid("data.transcripts is required".into());
                }
                let needed = match self.task {
                    TaskKind::SentimentReturn => ("data.returns", self.data.returns.is_some()),
                    TaskKind::CompetitionEarnings => ("data.earnings", self.data.earnings.is_some()),
                };
                if !needed.1 {
                    return invalid(format!("{} is required for task {}", needed.0, self.task));
                }
                if self.provider.cache_path.is_none() {
                    return invalid("provider.cache_path is required for live and cache-only providers".into());
                }
                self.provider.http.validate().map_err(ConfigError::Invalid)?;
            }
        }
        if self.analysis.rolling_beta {
            if self.task != TaskKind::SentimentReturn {
                return invalid("rolling_beta applies to the sentiment_return task only".into());
            }
            if self.analysis.beta_min_obs < 2 || self.analysis.beta_min_obs > self.analysis.beta_window {
                return invalid("beta_min_obs must lie in [2, beta_window]".into());
            }
        }
        if let Some(f) = self.analysis.r2_floor {
            if !f.is_finite() {
                return invalid("analysis.r2_floor must be finite".into());
            }
        }
        if self.min_train_periods() == 0 {
            return invalid("analysis.min_train_periods must be positive".into());
        }
        if self.control_sets.is_empty() {
            return invalid("control_sets needs at least one (possibly empty) set".into());
        }
        for set in self.control_sets.iter().chain(std::iter::once(&self.panel_controls)) {
            let mut seen = std::collections::HashSet::new();
            for c in set {
                if !seen.insert(c) {
                    return invalid(format!("control `{c}` listed twice in one set"));
                }
            }
        }
        Ok(())
    }

    /// Every control name referenced anywhere, sorted and deduplicated.
    pub fn referenced_controls(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .control_sets
            .iter()
            .flatten()
            .chain(&self.panel_controls)
            .cloned()
            .collect();
        all.sort();
        all.dedup();
        all
    }

    /// Digest of the canonical JSON rendering of the configuration. Where
    /// outputs go (`out_dir`, `dump_scores`) does not enter it.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        canon.dump_scores = false;
        sha256_hex(serde_json::to_string(&canon).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_defaults() {
        let cfg = AuditConfig::from_toml_str(
            r#"
task = "sentiment_return"
cutoff_date = "2023-10-01"

[synthetic]
seed = 5
"#,
            Path::new("/tmp/x/audit.toml"),
        )
        .unwrap();
        assert_eq!(cfg.synthetic.seed, 5);
        assert_eq!(cfg.synthetic.n_firms, 200);
        assert_eq!(cfg.cohort_kind(), CohortKind::YearMonth);
        assert_eq!(cfg.min_train_periods(), 6);
        cfg.validate().unwrap();
    }

    #[test]
    fn relative_paths_and_live_requirements() {
        let cfg = AuditConfig::from_toml_str(
            r#"
task = "competition_earnings"
cutoff_date = "2023-10-01"
[data]
transcripts = "t.jsonl"
earnings = "/abs/e.csv"
[provider]
kind = "live"
model_name = "m"
"#,
            Path::new("/cfg/audit.toml"),
        )
        .unwrap();
        assert_eq!(cfg.data.transcripts.as_deref(), Some(Path::new("/cfg/t.jsonl")));
        assert_eq!(cfg.data.earnings.as_deref(), Some(Path::new("/abs/e.csv")));
        assert_eq!(cfg.min_train_periods(), 4);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("cache_path"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(AuditConfig::from_toml_str("cutof_date = \"2023-10-01\"", Path::new("a.toml")).is_err());
    }

    #[test]
    fn digest_tracks_fields() {
        let a = AuditConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.synthetic.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
