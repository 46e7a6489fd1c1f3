//! Run configuration: flags override the `--config` file, which overrides
//! the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lasp_core::api::SourceKind;

use crate::CliError;

/// Every field is optional so a config file may set any subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub scene_dir: Option<PathBuf>,
    pub expression_source: Option<ExpressionSource>,
    pub registry: Option<PathBuf>,
    pub n_iter: Option<usize>,
    pub n_sample: Option<usize>,
    pub top_k: Option<usize>,
    pub optimizer_top_k: Option<usize>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub source: Option<SourceKind>,
    pub workers: Option<usize>,
    pub timing: Option<bool>,
    pub llm_endpoint: Option<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionSource {
    File,
    Llm,
}

/// Resolved configuration; a bench report embeds it verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scene_dir: Option<PathBuf>,
    pub expression_source: ExpressionSource,
    pub registry: Option<PathBuf>,
    pub n_iter: usize,
    pub n_sample: usize,
    /// Grounding candidates kept.
    pub top_k: usize,
    /// Candidates kept per optimizer iteration.
    pub optimizer_top_k: usize,
    pub threshold: f64,
    pub seed: u64,
    pub source: SourceKind,
    pub workers: usize,
    pub timing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_endpoint: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene_dir: None,
            expression_source: ExpressionSource::File,
            registry: None,
            n_iter: 5,
            n_sample: 5,
            top_k: 5,
            optimizer_top_k: 3,
            threshold: 0.9,
            seed: 0,
            source: SourceKind::Mutate,
            workers: 4,
            timing: true,
            llm_endpoint: None,
        }
    }
}

impl RunConfig {
    /// Applies `layer` on top of `self`; set fields win.
    pub fn overlay(mut self, layer: &ConfigFile) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = layer.$f.clone() {
                    self.$f = v;
                }
            )*};
        }
        take!(
            expression_source,
            n_iter,
            n_sample,
            top_k,
            optimizer_top_k,
            threshold,
            seed,
            source,
            workers,
            timing
        );
        if layer.scene_dir.is_some() {
            self.scene_dir = layer.scene_dir.clone();
        }
        if layer.registry.is_some() {
            self.registry = layer.registry.clone();
        }
        if layer.llm_endpoint.is_some() {
            self.llm_endpoint = layer.llm_endpoint.clone();
        }
        self
    }

    /// Defaults, then the config file, then `flags`.
    pub fn resolve(config: Option<&Path>, flags: &ConfigFile) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = config {
            cfg = cfg.overlay(&ConfigFile::load(path)?);
        }
        Ok(cfg.overlay(flags))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = ConfigFile {
            n_iter: Some(3),
            seed: Some(7),
            ..Default::default()
        };
        let flags = ConfigFile {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = RunConfig::default().overlay(&file).overlay(&flags);
        assert_eq!(cfg.n_iter, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n_sample, 5);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"n_iters": 3}"#).is_err());
    }
}
