use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clean::ParserRules;
use crate::dedup::DedupConfig;
use crate::error::{Error, Result};
use crate::heuristics::HeuristicRuleSet;

/// Environment variables that may override configured paths.
pub const ENV_INPUTS: &str = "WEBCURATE_INPUTS";
pub const ENV_OUTPUT_DIR: &str = "WEBCURATE_OUTPUT_DIR";
pub const ENV_BLOCKLIST: &str = "WEBCURATE_BLOCKLIST";
pub const ENV_BASIC_MODEL: &str = "WEBCURATE_BASIC_MODEL";
pub const ENV_HQ_MODEL: &str = "WEBCURATE_HQ_MODEL";
pub const ENV_SIGNATURE_CACHE: &str = "WEBCURATE_SIGNATURE_CACHE";
pub const ENV_EMBEDDINGS: &str = "WEBCURATE_EMBEDDINGS";

/// Which stages run. The order is fixed: safety, clean, heuristics,
/// basic_quality, dedup, hq_score, hq_threshold. Ingest and emit always run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFlags {
    pub safety: bool,
    pub clean: bool,
    pub heuristics: bool,
    pub basic_quality: bool,
    pub dedup: bool,
    pub hq_score: bool,
    pub hq_threshold: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        StageFlags {
            safety: true,
            clean: true,
            heuristics: true,
            basic_quality: false,
            dedup: true,
            hq_score: false,
            hq_threshold: false,
        }
    }
}

impl StageFlags {
    pub fn none() -> Self {
        StageFlags {
            safety: false,
            clean: false,
            heuristics: false,
            basic_quality: false,
            dedup: false,
            hq_score: false,
            hq_threshold: false,
        }
    }

    pub fn all() -> Self {
        StageFlags {
            safety: true,
            clean: true,
            heuristics: true,
            basic_quality: true,
            dedup: true,
            hq_score: true,
            hq_threshold: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Glob patterns; matches are read in sorted order.
    pub inputs: Vec<String>,
    pub output_dir: PathBuf,
    pub blocklist: Option<PathBuf>,
    pub basic_quality_model: Option<PathBuf>,
    pub hq_model: Option<PathBuf>,
    /// Reused when its header matches the dedup settings, rewritten after.
    pub signature_cache: Option<PathBuf>,
    /// Sidecar embeddings for models with a precomputed-embedding backbone.
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityThresholds {
    pub basic_pass_threshold: f64,
    /// Overrides the threshold stored in the high-quality model when set.
    pub hq_threshold: Option<f64>,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        QualityThresholds {
            basic_pass_threshold: 2.5,
            hq_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides `dedup.seed` when set.
    pub seed: Option<u64>,
    /// Worker threads; 0 means one per CPU. Never affects results.
    pub workers: usize,
    pub stages: StageFlags,
    pub paths: PathsConfig,
    pub dedup: DedupConfig,
    pub heuristics: HeuristicRuleSet,
    pub parsers: ParserRules,
    pub quality: QualityThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: None,
            workers: 0,
            stages: StageFlags::default(),
            paths: PathsConfig {
                output_dir: PathBuf::from("out"),
                ..Default::default()
            },
            dedup: DedupConfig::default(),
            heuristics: HeuristicRuleSet::default(),
            parsers: ParserRules::default(),
            quality: QualityThresholds::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses TOML. Relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.rebase_paths(base);
        Ok(cfg)
    }

    /// Reads a TOML config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn rebase_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for g in &mut p.inputs {
            if Path::new(g.as_str()).is_relative() {
                *g = base.join(g.as_str()).to_string_lossy().into_owned();
            }
        }
        rebase(base, &mut p.output_dir);
        for opt in [
            &mut p.blocklist,
            &mut p.basic_quality_model,
            &mut p.hq_model,
            &mut p.signature_cache,
            &mut p.embeddings,
        ] {
            if let Some(x) = opt {
                rebase(base, x);
            }
        }
    }

    /// Applies path overrides from `lookup` (normally the process
    /// environment). `WEBCURATE_INPUTS` is a comma-separated glob list.
    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let p = &mut self.paths;
        if let Some(v) = lookup(ENV_INPUTS) {
            p.inputs = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        }
        if let Some(v) = lookup(ENV_OUTPUT_DIR) {
            p.output_dir = v.into();
        }
        for (key, slot) in [
            (ENV_BLOCKLIST, &mut p.blocklist),
            (ENV_BASIC_MODEL, &mut p.basic_quality_model),
            (ENV_HQ_MODEL, &mut p.hq_model),
            (ENV_SIGNATURE_CACHE, &mut p.signature_cache),
            (ENV_EMBEDDINGS, &mut p.embeddings),
        ] {
            if let Some(v) = lookup(key) {
                *slot = Some(v.into());
            }
        }
    }

    /// Effective dedup settings after the global seed override.
    pub fn effective_dedup(&self) -> DedupConfig {
        let mut d = self.dedup.clone();
        if let Some(s) = self.seed {
            d.seed = s;
        }
        d
    }

    /// Checks values and every path an enabled stage needs, before any work.
    pub fn validate(&self) -> Result<()> {
        self.effective_dedup().validate()?;
        self.heuristics.validate()?;
        let s = &self.stages;
        let p = &self.paths;
        if p.inputs.is_empty() {
            return Err(Error::Config("paths.inputs is empty".into()));
        }
        if p.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("paths.output_dir is empty".into()));
        }
        if s.hq_threshold && !s.hq_score {
            return Err(Error::Config("stage hq_threshold requires hq_score".into()));
        }
        if !(0.0..=5.0).contains(&self.quality.basic_pass_threshold) {
            return Err(Error::Config("quality.basic_pass_threshold outside [0, 5]".into()));
        }
        if let Some(t) = self.quality.hq_threshold {
            if !(0.0..=5.0).contains(&t) {
                return Err(Error::Config("quality.hq_threshold outside [0, 5]".into()));
            }
        }
        let need = |enabled: bool, what: &str, path: &Option<PathBuf>| -> Result<()> {
            if !enabled {
                return Ok(());
            }
            match path {
                None => Err(Error::Config(format!("stage needs paths.{what}"))),
                Some(p) if !p.is_file() => Err(Error::Config(format!(
                    "paths.{what} {} does not exist",
                    p.display()
                ))),
                Some(_) => Ok(()),
            }
        };
        need(s.safety, "blocklist", &p.blocklist)?;
        need(s.basic_quality, "basic_quality_model", &p.basic_quality_model)?;
        need(s.hq_score, "hq_model", &p.hq_model)?;
        if let Some(e) = &p.embeddings {
            if !e.is_file() {
                return Err(Error::Config(format!("paths.embeddings {} does not exist", e.display())));
            }
        }
        self.input_files().map(|_| ())
    }

    /// Input files: every glob's matches, sorted and deduplicated. A pattern
    /// that matches nothing is an error.
    pub fn input_files(&self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for pattern in &self.paths.inputs {
            let matches = glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob {pattern:?}: {e}")))?;
            let before = files.len();
            for m in matches {
                let m = m.map_err(|e| { let p = e.path().to_path_buf(); Error::io(p, e.into()) })?;
                if m.is_file() {
                    files.push(m);
                }
            }
            if files.len() == before {
                return Err(Error::Config(format!("input pattern {pattern:?} matches no files")));
            }
        }
        files.sort();
        files.dedup();
        Ok(files)
    }
}
