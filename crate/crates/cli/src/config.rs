//! TOML configuration and its merge with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Deserialize;

use scenediff::backends::{
    Answerer, AnswererDescriptor, Embedder, EmbedderDescriptor, HttpAnswerer, HttpEmbedder,
    HttpOptions, MockEmbedder, Scenario, ScriptedAnswerer, TaskMode, DEFAULT_DIMENSION,
};
use scenediff::pipeline::DEFAULT_PARALLELISM;
use scenediff::Weighting;

use crate::args::{Backend, BackendArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store_dir: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub weighting: Option<Weighting>,
    pub threshold: Option<f64>,
    /// Per-spot overrides of `threshold`.
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
    pub parallelism: Option<usize>,
    pub batch_size: Option<usize>,
    pub backend: Option<Backend>,
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub embedder: EmbedderSection,
    #[serde(default)]
    pub answerer: AnswererSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSection {
    pub name: Option<String>,
    pub dimension: Option<usize>,
    pub endpoint: Option<String>,
    /// Mock backend only.
    pub seed: Option<u64>,
    pub token: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswererSection {
    pub name: Option<String>,
    pub endpoint: Option<String>,
    pub task_mode: Option<TaskMode>,
    /// Mock backend only: JSON file of scripted answers.
    pub scenario: Option<PathBuf>,
    pub token: Option<String>,
}

impl FileConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: FileConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            config.store_dir.as_mut(),
            config.questions.as_mut(),
            config.answerer.scenario.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

/// Flags layered over the config file.
#[derive(Debug)]
pub struct Settings {
    pub store_dir: PathBuf,
    pub questions: Option<PathBuf>,
    pub weighting: Weighting,
    pub thresholds: BTreeMap<String, f64>,
    pub threshold: Option<f64>,
    pub parallelism: usize,
    pub batch_size: Option<usize>,
    pub backend: Backend,
    pub timeout: Duration,
    pub embedder: EmbedderSection,
    pub answerer: AnswererSection,
}

impl Settings {
    pub fn resolve(flags: &BackendArgs) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let timeout_secs = flags.timeout_secs.or(file.timeout_secs).unwrap_or(30.0);
        if !(timeout_secs > 0.0 && timeout_secs.is_finite()) {
            bail!("timeout must be a positive number of seconds, got {timeout_secs}");
        }
        let mut embedder = file.embedder;
        let mut answerer = file.answerer;
        override_with(&mut embedder.endpoint, &flags.embedder_endpoint);
        override_with(&mut embedder.dimension, &flags.dimension);
        override_with(&mut embedder.seed, &flags.embed_seed);
        override_with(&mut embedder.token, &flags.token);
        override_with(&mut answerer.endpoint, &flags.answerer_endpoint);
        override_with(&mut answerer.task_mode, &flags.task_mode);
        override_with(&mut answerer.scenario, &flags.scenario);
        override_with(&mut answerer.token, &flags.token);
        Ok(Self {
            store_dir: flags
                .store_dir
                .clone()
                .or(file.store_dir)
                .unwrap_or_else(|| PathBuf::from("references")),
            questions: file.questions,
            weighting: flags.weighting.or(file.weighting).unwrap_or_default(),
            thresholds: file.thresholds,
            threshold: file.threshold,
            parallelism: flags
                .parallelism
                .map(|v| v as usize)
                .or(file.parallelism)
                .unwrap_or(DEFAULT_PARALLELISM),
            batch_size: flags.batch_size.map(|v| v as usize).or(file.batch_size),
            backend: flags.backend.or(file.backend).unwrap_or(Backend::Mock),
            timeout: Duration::from_secs_f64(timeout_secs),
            embedder,
            answerer,
        })
    }

    /// Threshold for a spot: the flag, then the spot's own entry, then the
    /// global one.
    pub fn threshold_for(&self, spot_id: &str, flag: Option<f64>) -> Option<f64> {
        flag.or_else(|| self.thresholds.get(spot_id).copied())
            .or(self.threshold)
    }

    fn http_options(&self, token: &Option<String>) -> HttpOptions {
        HttpOptions {
            timeout: self.timeout,
            bearer_token: token.clone(),
            ..HttpOptions::default()
        }
    }

    pub fn embedder(&self) -> anyhow::Result<Arc<dyn Embedder>> {
        let dimension = self.embedder.dimension.unwrap_or(DEFAULT_DIMENSION);
        if dimension == 0 {
            bail!("embedder dimension must be positive");
        }
        Ok(match self.backend {
            Backend::Mock => {
                let mut mock = MockEmbedder::new(dimension, self.embedder.seed.unwrap_or(0));
                if let Some(name) = &self.embedder.name {
                    mock = mock.with_name(name);
                }
                Arc::new(mock)
            }
            Backend::Http => {
                let Some(endpoint) = &self.embedder.endpoint else {
                    bail!("http backend needs an embedder endpoint ([embedder] endpoint or --embedder-endpoint)");
                };
                let name = self
                    .embedder
                    .name
                    .clone()
                    .unwrap_or_else(|| "http-embedder".into());
                let descriptor = EmbedderDescriptor::new(name, dimension)?.with_endpoint(endpoint);
                Arc::new(HttpEmbedder::new(
                    descriptor,
                    self.http_options(&self.embedder.token),
                )?)
            }
        })
    }

    pub fn answerer(&self) -> anyhow::Result<Arc<dyn Answerer>> {
        let task_mode = self.answerer.task_mode.unwrap_or_default();
        Ok(match self.backend {
            Backend::Mock => {
                let Some(path) = &self.answerer.scenario else {
                    bail!("mock backend needs a scenario file ([answerer] scenario or --scenario)");
                };
                let mut descriptor = AnswererDescriptor::new("scripted-answerer", task_mode)?;
                if let Some(name) = &self.answerer.name {
                    descriptor.name = name.clone();
                }
                Arc::new(
                    ScriptedAnswerer::from_scenario(Scenario::from_json_file(path)?)
                        .with_descriptor(descriptor),
                )
            }
            Backend::Http => {
                let Some(endpoint) = &self.answerer.endpoint else {
                    bail!("http backend needs an answerer endpoint ([answerer] endpoint or --answerer-endpoint)");
                };
                let name = self
                    .answerer
                    .name
                    .clone()
                    .unwrap_or_else(|| "http-answerer".into());
                let descriptor = AnswererDescriptor::new(name, task_mode)?.with_endpoint(endpoint);
                Arc::new(HttpAnswerer::new(
                    descriptor,
                    self.http_options(&self.answerer.token),
                )?)
            }
        })
    }
}

fn override_with<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = Some(v.clone());
    }
}
