//! Run configuration. Everything except `query` has a default, so the
//! smallest valid file is a single `query = "..."` line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{SyntheticClassifier, SyntheticDetector};
use crate::edge::BatchingConfig;
use crate::filtering::UtilityMode;
use crate::ingest::ScenarioConfig;
use crate::par::Parallelism;
use crate::query::{parse_query, validate_query, Vocabulary};
use crate::resizer::{CandidateResolutions, GUARD_THRESHOLD};
use crate::transport::{EncodeOptions, LinkConfig};
use crate::types::Query;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), message: message.into() }
    }

    /// Dotted path of the offending field.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            ConfigError::Io { .. } => None,
        }
    }
}

/// Where detection, batching and resizing run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Raw frames to the cloud, one cloud window after the detector.
    Vanilla,
    /// Raw frames to the cloud; batching and resizing happen there.
    Content,
    /// Batching and resizing at the edge, sent raw and unfiltered.
    Edge,
    /// The full two-stage engine with filters and packed encoding.
    #[default]
    Vidwin,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Content => "content",
            Mode::Edge => "edge",
            Mode::Vidwin => "vidwin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "vanilla" => Mode::Vanilla,
            "content" => Mode::Content,
            "edge" => Mode::Edge,
            "vidwin" => Mode::Vidwin,
            _ => return None,
        })
    }
}

/// Whether a forwarded batch travels as one message or one per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportUnit {
    #[default]
    Batch,
    PerFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterToggles {
    pub eager: bool,
    pub cache: bool,
    pub utility: bool,
}

impl Default for FilterToggles {
    fn default() -> Self {
        Self::ALL
    }
}

impl FilterToggles {
    pub const ALL: Self = Self { eager: true, cache: true, utility: true };
    pub const NONE: Self = Self { eager: false, cache: false, utility: false };

    /// Parses a comma list such as `eager,cache`, or `all` / `none`.
    pub fn parse_list(s: &str) -> Result<Self, ConfigError> {
        let mut t = Self::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "all" => t = Self::ALL,
                "none" => t = Self::NONE,
                "eager" => t.eager = true,
                "cache" => t.cache = true,
                "utility" => t.utility = true,
                other => return Err(ConfigError::invalid("filters", format!("unknown filter `{other}`"))),
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub scenario: Option<ScenarioConfig>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResizerConfig {
    pub candidates: CandidateResolutions,
    pub guard_threshold: f64,
}

impl Default for ResizerConfig {
    fn default() -> Self {
        Self { candidates: CandidateResolutions::default(), guard_threshold: GUARD_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceConfig {
    pub mem_capacity_bytes: u64,
    pub cores: u32,
}

impl Default for ResourceConfig {
    fn default() -> Self {
        Self { mem_capacity_bytes: 2_000_000_000, cores: 4 }
    }
}

/// Simulated CPU cost of each stage, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageCosts {
    pub histogram_per_frame: f64,
    pub classify_per_probe: f64,
    pub resize_per_frame: f64,
    pub encode_per_frame: f64,
    pub decode_per_frame: f64,
    pub detect_base: f64,
    pub detect_per_megapixel: f64,
}

impl Default for StageCosts {
    fn default() -> Self {
        Self {
            histogram_per_frame: 1.0,
            classify_per_probe: 4.0,
            resize_per_frame: 0.5,
            encode_per_frame: 0.5,
            decode_per_frame: 0.2,
            detect_base: 8.0,
            detect_per_megapixel: 12.0,
        }
    }
}

impl StageCosts {
    pub fn detect(&self, pixels: u64) -> f64 {
        self.detect_base + self.detect_per_megapixel * pixels as f64 / 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub enabled: bool,
    /// Query-object boxes to observe before feedback starts.
    pub warmup: u64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { enabled: false, warmup: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub mode: Mode,
    pub query: Option<String>,
    pub query_id: String,
    pub input: InputConfig,
    pub filters: FilterToggles,
    pub encoding: EncodeOptions,
    pub transport_unit: TransportUnit,
    pub batching: BatchingConfig,
    pub resizer: ResizerConfig,
    pub classifier: SyntheticClassifier,
    pub detector: SyntheticDetector,
    pub link: LinkConfig,
    pub resources: ResourceConfig,
    pub costs: StageCosts,
    pub utility_mode: UtilityMode,
    pub roi: RoiConfig,
    pub parallelism: Parallelism,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Vidwin,
            query: None,
            query_id: "q0".into(),
            input: InputConfig::default(),
            filters: FilterToggles::ALL,
            encoding: EncodeOptions::PACKED,
            transport_unit: TransportUnit::Batch,
            batching: BatchingConfig::default(),
            resizer: ResizerConfig::default(),
            classifier: SyntheticClassifier::default(),
            detector: SyntheticDetector::default(),
            link: LinkConfig::default(),
            resources: ResourceConfig::default(),
            costs: StageCosts::default(),
            utility_mode: UtilityMode::Entropy,
            roi: RoiConfig::default(),
            parallelism: Parallelism::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| ConfigError::invalid("", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::invalid(if field == "." { String::new() } else { field }, e.into_inner().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative manifest paths are relative to the config file.
        if let (Some(m), Some(dir)) = (&cfg.input.manifest, path.parent()) {
            if m.is_relative() {
                cfg.input.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Parses and validates the query text.
    pub fn parsed_query(&self) -> Result<Query, ConfigError> {
        let text = self.query.as_deref().ok_or_else(|| ConfigError::invalid("query", "missing query"))?;
        let q = parse_query(text).map_err(|e| ConfigError::invalid("query", e.to_string()))?;
        validate_query(&q, &Vocabulary::default()).map_err(|e| ConfigError::invalid("query", e.to_string()))?;
        Ok(q)
    }

    /// Checks cross-field constraints that serde cannot express.
    pub fn validate(&self) -> Result<Query, ConfigError> {
        let q = self.parsed_query()?;
        if self.input.scenario.is_some() && self.input.manifest.is_some() {
            return Err(ConfigError::invalid("input", "set either scenario or manifest, not both"));
        }
        if let Some(s) = &self.input.scenario {
            s.validate().map_err(|e| ConfigError::invalid("input.scenario", e.to_string()))?;
            if s.fps != self.batching.fps {
                return Err(ConfigError::invalid(
                    "batching.fps",
                    format!("{} does not match input.scenario.fps {}", self.batching.fps, s.fps),
                ));
            }
        }
        if self.batching.mb_max == 0 {
            return Err(ConfigError::invalid("batching.mb_max", "must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.batching.similarity_threshold) {
            return Err(ConfigError::invalid("batching.similarity_threshold", "must lie in [-1, 1]"));
        }
        if self.batching.fps == 0 {
            return Err(ConfigError::invalid("batching.fps", "must be positive"));
        }
        if self.link.bandwidth_bytes_per_s.is_nan() || self.link.bandwidth_bytes_per_s <= 0.0 {
            return Err(ConfigError::invalid("link.bandwidth_bytes_per_s", "must be positive"));
        }
        if self.link.propagation_ms.is_nan() || self.link.propagation_ms < 0.0 {
            return Err(ConfigError::invalid("link.propagation_ms", "must be non-negative"));
        }
        let att = &self.classifier.attenuation;
        if att.gamma.is_nan() || att.gamma < 0.0 || !(0.0..=1.0).contains(&att.floor) {
            return Err(ConfigError::invalid("classifier.attenuation", "need gamma >= 0 and floor in [0, 1]"));
        }
        let att = &self.detector.attenuation;
        if att.gamma.is_nan() || att.gamma < 0.0 || !(0.0..=1.0).contains(&att.floor) {
            return Err(ConfigError::invalid("detector.attenuation", "need gamma >= 0 and floor in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.classifier.miss_rate) {
            return Err(ConfigError::invalid("classifier.miss_rate", "must lie in [0, 1]"));
        }
        if self.resources.cores == 0 {
            return Err(ConfigError::invalid("resources.cores", "must be positive"));
        }
        Ok(q)
    }

    /// The scenario a run will generate when no manifest is set.
    pub fn scenario(&self) -> ScenarioConfig {
        self.input.scenario.clone().unwrap_or_default()
    }

    /// Convenience for tests and the CLI: applies the given attenuation gamma
    /// to both the edge classifier and the cloud detector.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.classifier.attenuation.gamma = gamma;
        self.detector.attenuation.gamma = gamma;
        self
    }
}
