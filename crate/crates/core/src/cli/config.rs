//! Run configuration: backends, role assignment, seeds, and policies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::engine::{DirectStrategy, EngineConfig, Mode};
use crate::gateway::{
    Capabilities, Capability, Gateway, HttpBackend, HttpBackendConfig, MockBackend, ResponseCache, RetryPolicy,
    DEFAULT_MAX_IN_FLIGHT,
};
use crate::prefs::PrefConfig;
use crate::sft::FeasibleModelConfig;
use crate::user_sim::SimSettings;

/// Where a backend lives: a scripted mock file or a live endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    /// Mock script, relative to the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<HttpBackendConfig>,
    /// Defaults to all three for mocks and `complete` for endpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Vec<Capability>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
}

/// Which backend plays which part.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant: Option<String>,
    /// Turn-4 model; defaults to the assistant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answerer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<String>,
    /// Greedy direct answers for decision labels; defaults to the assistant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy: Option<String>,
    /// Clarifying-question candidates; defaults to the assistant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clarifier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_model: Option<String>,
    /// SFT-generation oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
    /// Few-shot base model for model-derived feasible sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    /// Proactive decider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decider: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefSettings {
    #[serde(default = "five")]
    pub n_sampled: u32,
    #[serde(default = "one")]
    pub sample_temperature: f64,
    #[serde(default)]
    pub direct_for_all_rankers: bool,
    #[serde(default)]
    pub length_normalize: bool,
}

fn five() -> u32 {
    5
}

fn one() -> f64 {
    1.0
}

impl Default for PrefSettings {
    fn default() -> Self {
        Self {
            n_sampled: 5,
            sample_temperature: 1.0,
            direct_for_all_rankers: false,
            length_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySettings {
    #[serde(default = "three")]
    pub max_retries: u32,
    #[serde(default = "thousand")]
    pub backoff_base_ms: u64,
}

fn three() -> u32 {
    3
}

fn thousand() -> u64 {
    1000
}

impl Default for RetrySettings {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backends: BTreeMap<String, BackendSpec>,
    #[serde(default)]
    pub roles: Roles,
    /// Explicit seed for every stochastic choice made locally.
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub retry: RetrySettings,
    #[serde(default)]
    pub simulator: SimSettings,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub final_temperature: f64,
    /// Seed forwarded to backends that accept one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_seed: Option<u64>,
    #[serde(default)]
    pub prefs: PrefSettings,
    #[serde(default)]
    pub feasible: FeasibleModelConfig,
}

fn default_workers() -> usize {
    4
}

fn default_max_tokens() -> u32 {
    256
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub dir: PathBuf,
    /// SHA-256 of the canonical JSON of the config.
    pub digest: String,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let config: RunConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::config(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner())))?;
    let canonical = serde_json::to_value(&config).expect("config serializes");
    let digest = hex::encode(Sha256::digest(serde_json::to_vec(&canonical).expect("json")));
    Ok(LoadedConfig {
        config,
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        digest,
    })
}

impl LoadedConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.dir.join(p)
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway, CliError> {
        let c = &self.config;
        let cache = match &c.cache_dir {
            Some(dir) => Some(
                ResponseCache::on_disk(self.resolve(dir))
                    .map_err(|e| CliError::config(format!("cache_dir {}: {e}", dir.display())))?,
            ),
            None => Some(ResponseCache::in_memory()),
        };
        let mut gw = Gateway::new().with_cache(cache).with_retry(RetryPolicy {
            max_retries: c.retry.max_retries,
            backoff_base: Duration::from_millis(c.retry.backoff_base_ms),
        });
        for (id, spec) in &c.backends {
            let limit = spec.max_in_flight.unwrap_or(DEFAULT_MAX_IN_FLIGHT);
            match (&spec.mock, &spec.endpoint) {
                (Some(path), None) => {
                    let path = self.resolve(path);
                    let mut mock = MockBackend::from_file(&path)
                        .map_err(|e| CliError::config(format!("backend `{id}`: {e}")))?;
                    if let Some(caps) = &spec.capabilities {
                        mock = mock.with_capabilities(Capabilities::from_list(caps));
                    }
                    gw.register_bounded(id.clone(), Arc::new(mock), limit);
                }
                (None, Some(endpoint)) => {
                    let caps = spec
                        .capabilities
                        .as_deref()
                        .map_or(Capabilities::COMPLETE_ONLY, Capabilities::from_list);
                    let backend = HttpBackend::new(id, endpoint.clone(), caps)
                        .map_err(|e| CliError::config(format!("backend `{id}`: {e}")))?;
                    gw.register_bounded(id.clone(), Arc::new(backend), limit);
                }
                _ => {
                    return Err(CliError::config(format!(
                        "backend `{id}` must set exactly one of `mock` or `endpoint`"
                    )))
                }
            }
        }
        Ok(gw)
    }

    /// Backend id assigned to `role`, checked against the registry.
    pub fn role(&self, role: &str, assigned: Option<&String>) -> Result<String, CliError> {
        let id = assigned.ok_or_else(|| CliError::config(format!("config assigns no backend to role `{role}`")))?;
        if !self.config.backends.contains_key(id) {
            return Err(CliError::config(format!("role `{role}` refers to unknown backend id `{id}`")));
        }
        Ok(id.clone())
    }

    fn optional_role(&self, role: &str, assigned: Option<&String>) -> Result<Option<String>, CliError> {
        assigned.map(|_| self.role(role, assigned)).transpose()
    }

    pub fn engine_config(&self, mode: Mode, direct: DirectStrategy) -> Result<EngineConfig, CliError> {
        let r = &self.config.roles;
        let assistant = self.role("assistant", r.assistant.as_ref())?;
        let answerer = self.role("answerer", r.answerer.as_ref().or(r.assistant.as_ref()))?;
        let simulator = self.role("simulator", r.simulator.as_ref())?;
        Ok(EngineConfig {
            mode,
            direct,
            max_tokens: self.config.max_tokens,
            final_temperature: self.config.final_temperature,
            sim: self.config.simulator,
            seed: self.config.backend_seed,
            ..EngineConfig::new(assistant, answerer, simulator)
        })
    }

    pub fn pref_config(&self) -> Result<PrefConfig, CliError> {
        let r = &self.config.roles;
        let engine = self.engine_config(Mode::Auto, DirectStrategy::Greedy)?;
        let p = &self.config.prefs;
        Ok(PrefConfig {
            clarifier: self.role("clarifier", r.clarifier.as_ref().or(r.assistant.as_ref()))?,
            direct: self.optional_role("direct", r.direct.as_ref())?,
            direct_for_all_rankers: p.direct_for_all_rankers,
            n_sampled: p.n_sampled,
            sample_temperature: p.sample_temperature,
            scorer: self.optional_role("scorer", r.scorer.as_ref())?,
            reward_model: self.optional_role("reward_model", r.reward_model.as_ref())?,
            length_normalize: p.length_normalize,
            engine,
        })
    }
}
