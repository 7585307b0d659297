//! Service configuration.
//!
//! The file is a flat list of `key = value` lines. Blank lines and lines
//! starting with `#` are ignored, and every key is optional. Any key can be
//! overridden from the environment as `GENCACHE_` followed by the key in upper
//! case with dots replaced by underscores, e.g. `GENCACHE_CODEGEN_NU=6`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use gencache_core::clustering::ClusterThresholds;
use gencache_core::codegen::{CodegenConfig, CodegenMode};
use gencache_core::embeddings::{EmbedderConfig, EmbedderKind};
use gencache_core::program::ExecLimits;
use gencache_core::runtime::RuntimeConfig;
use gencache_core::store::CacheStoreConfig;

pub const ENV_PREFIX: &str = "GENCACHE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutorMode {
    Declarative,
    Script,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub embedder: EmbedderConfig,
    pub backend_endpoint: String,
    pub backend_model: Option<String>,
    pub backend_timeout_ms: u64,
    /// Model names for the synthesis and validation roles; the backend model when unset.
    pub codegen_model: Option<String>,
    pub validator_model: Option<String>,
    pub thresholds: ClusterThresholds,
    pub nu: usize,
    pub gamma_percent: f64,
    pub rho: u32,
    pub exact_match_shortcut: bool,
    pub codegen_workers: usize,
    pub executor: ExecutorMode,
    /// Used in script mode; must contain `{script}`.
    pub script_command: String,
    pub exec_timeout_ms: u64,
    pub exec_max_output_bytes: usize,
    pub exec_max_processes: usize,
    pub max_program_bytes: usize,
    pub cache: CacheStoreConfig,
    pub request_log_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let rt = RuntimeConfig::default();
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("gencache-data"),
            embedder: EmbedderConfig::default(),
            backend_endpoint: "http://127.0.0.1:9000".into(),
            backend_model: None,
            backend_timeout_ms: 120_000,
            codegen_model: None,
            validator_model: None,
            thresholds: rt.thresholds,
            nu: rt.codegen.nu,
            gamma_percent: rt.codegen.gamma_percent,
            rho: rt.codegen.rho,
            exact_match_shortcut: rt.codegen.exact_match_shortcut,
            codegen_workers: rt.codegen_workers,
            executor: ExecutorMode::Declarative,
            script_command: "python3 {script}".into(),
            exec_timeout_ms: rt.exec_limits.timeout.as_millis() as u64,
            exec_max_output_bytes: rt.exec_limits.max_output_bytes,
            exec_max_processes: rt.max_script_processes,
            max_program_bytes: rt.max_program_bytes,
            cache: rt.cache,
            request_log_capacity: rt.request_log_capacity,
        }
    }
}

/// Every recognised key, in the order they are written out.
pub const KEYS: &[&str] = &[
    "listen",
    "data_dir",
    "embedder.kind",
    "embedder.dims",
    "embedder.endpoint",
    "backend.endpoint",
    "backend.model",
    "backend.timeout_ms",
    "codegen.model",
    "validator.model",
    "thresholds.prompt",
    "thresholds.response",
    "codegen.nu",
    "codegen.gamma",
    "codegen.rho",
    "codegen.exact_match_shortcut",
    "codegen.workers",
    "executor.mode",
    "executor.script_command",
    "executor.timeout_ms",
    "executor.max_output_bytes",
    "executor.max_processes",
    "executor.max_program_bytes",
    "cache.max_entries",
    "cache.max_bytes",
    "requests.log_capacity",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_string())
}

impl ServiceConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "listen" => self.listen = v.to_string(),
            "data_dir" => self.data_dir = PathBuf::from(v),
            "embedder.kind" => {
                self.embedder.kind = match v {
                    "hashed-local" => EmbedderKind::HashedLocal,
                    "remote" => EmbedderKind::Remote,
                    other => bail!("embedder.kind: expected hashed-local or remote, got {other:?}"),
                }
            }
            "embedder.dims" => self.embedder.dims = parse(key, v)?,
            "embedder.endpoint" => self.embedder.endpoint = optional(v),
            "backend.endpoint" => self.backend_endpoint = v.to_string(),
            "backend.model" => self.backend_model = optional(v),
            "backend.timeout_ms" => self.backend_timeout_ms = parse(key, v)?,
            "codegen.model" => self.codegen_model = optional(v),
            "validator.model" => self.validator_model = optional(v),
            "thresholds.prompt" => self.thresholds.t_prompt = parse(key, v)?,
            "thresholds.response" => self.thresholds.t_response = parse(key, v)?,
            "codegen.nu" => self.nu = parse(key, v)?,
            "codegen.gamma" => self.gamma_percent = parse(key, v)?,
            "codegen.rho" => self.rho = parse(key, v)?,
            "codegen.exact_match_shortcut" => self.exact_match_shortcut = parse(key, v)?,
            "codegen.workers" => self.codegen_workers = parse(key, v)?,
            "executor.mode" => {
                self.executor = match v {
                    "declarative" => ExecutorMode::Declarative,
                    "script" => ExecutorMode::Script,
                    other => bail!("executor.mode: expected declarative or script, got {other:?}"),
                }
            }
            "executor.script_command" => self.script_command = v.to_string(),
            "executor.timeout_ms" => self.exec_timeout_ms = parse(key, v)?,
            "executor.max_output_bytes" => self.exec_max_output_bytes = parse(key, v)?,
            "executor.max_processes" => self.exec_max_processes = parse(key, v)?,
            "executor.max_program_bytes" => self.max_program_bytes = parse(key, v)?,
            "cache.max_entries" => self.cache.max_entries = parse(key, v)?,
            "cache.max_bytes" => self.cache.max_total_bytes = parse(key, v)?,
            "requests.log_capacity" => self.request_log_capacity = parse(key, v)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let opt = |o: &Option<String>| o.clone().unwrap_or_default();
        Some(match key {
            "listen" => self.listen.clone(),
            "data_dir" => self.data_dir.display().to_string(),
            "embedder.kind" => match self.embedder.kind {
                EmbedderKind::HashedLocal => "hashed-local".into(),
                EmbedderKind::Remote => "remote".into(),
            },
            "embedder.dims" => self.embedder.dims.to_string(),
            "embedder.endpoint" => opt(&self.embedder.endpoint),
            "backend.endpoint" => self.backend_endpoint.clone(),
            "backend.model" => opt(&self.backend_model),
            "backend.timeout_ms" => self.backend_timeout_ms.to_string(),
            "codegen.model" => opt(&self.codegen_model),
            "validator.model" => opt(&self.validator_model),
            "thresholds.prompt" => self.thresholds.t_prompt.to_string(),
            "thresholds.response" => self.thresholds.t_response.to_string(),
            "codegen.nu" => self.nu.to_string(),
            "codegen.gamma" => self.gamma_percent.to_string(),
            "codegen.rho" => self.rho.to_string(),
            "codegen.exact_match_shortcut" => self.exact_match_shortcut.to_string(),
            "codegen.workers" => self.codegen_workers.to_string(),
            "executor.mode" => match self.executor {
                ExecutorMode::Declarative => "declarative".into(),
                ExecutorMode::Script => "script".into(),
            },
            "executor.script_command" => self.script_command.clone(),
            "executor.timeout_ms" => self.exec_timeout_ms.to_string(),
            "executor.max_output_bytes" => self.exec_max_output_bytes.to_string(),
            "executor.max_processes" => self.exec_max_processes.to_string(),
            "executor.max_program_bytes" => self.max_program_bytes.to_string(),
            "cache.max_entries" => self.cache.max_entries.to_string(),
            "cache.max_bytes" => self.cache.max_total_bytes.to_string(),
            "requests.log_capacity" => self.request_log_capacity.to_string(),
            _ => return None,
        })
    }

    /// Parses file contents on top of the defaults. Does not consult the environment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", n + 1))?;
            cfg.set(key.trim(), value)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    /// Applies `GENCACHE_*` overrides; variables that name no key are ignored.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            if let Some(key) = KEYS.iter().find(|k| env_name(k) == rest) {
                self.set(key, &value)
                    .with_context(|| format!("environment variable {name}"))?;
            }
        }
        Ok(())
    }

    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_text(&text)?;
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.thresholds.validate()?;
        self.runtime_config().codegen.validate()?;
        if self.codegen_workers == 0 {
            bail!("codegen.workers must be at least 1");
        }
        if self.executor == ExecutorMode::Script && !self.script_command.contains("{script}") {
            bail!("executor.script_command must contain {{script}}");
        }
        Ok(())
    }

    pub fn runtime_config(&self) -> RuntimeConfig {
        let mode = match self.executor {
            ExecutorMode::Declarative => CodegenMode::Declarative,
            ExecutorMode::Script => CodegenMode::ExternalScript {
                runtime_command: self.script_command.clone(),
            },
        };
        RuntimeConfig {
            thresholds: self.thresholds,
            codegen: CodegenConfig {
                nu: self.nu,
                gamma_percent: self.gamma_percent,
                rho: self.rho,
                mode,
                exact_match_shortcut: self.exact_match_shortcut,
            },
            cache: self.cache,
            exec_limits: ExecLimits {
                timeout: Duration::from_millis(self.exec_timeout_ms),
                max_output_bytes: self.exec_max_output_bytes,
            },
            max_script_processes: self.exec_max_processes,
            max_program_bytes: self.max_program_bytes,
            codegen_workers: self.codegen_workers,
            metrics_window: RuntimeConfig::default().metrics_window,
            request_log_capacity: self.request_log_capacity,
        }
    }
}

pub fn env_name(key: &str) -> String {
    key.to_ascii_uppercase().replace('.', "_")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_standard_parameters() {
        let rt = ServiceConfig::default().runtime_config();
        assert_eq!(rt.codegen.nu, 4);
        assert_eq!(rt.codegen.gamma_percent, 50.0);
        assert_eq!(rt.codegen.rho, 30);
        assert_eq!(rt.thresholds.t_prompt, 0.8);
        assert_eq!(rt.thresholds.t_response, 0.75);
        ServiceConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = ServiceConfig::from_text(
            "# local dev\n\nlisten = 0.0.0.0:9999\ncodegen.nu = 6\nbackend.model = small\n",
        )
        .unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9999");
        assert_eq!(cfg.nu, 6);
        assert_eq!(cfg.backend_model.as_deref(), Some("small"));
        assert_eq!(cfg.rho, 30);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = ServiceConfig::from_text("codegen.nu = four").unwrap_err();
        assert!(format!("{err:#}").contains("line 1"));
        assert!(ServiceConfig::from_text("colour = blue").is_err());
        assert!(ServiceConfig::from_text("just words").is_err());
    }

    #[test]
    fn environment_wins_over_file() {
        let mut cfg = ServiceConfig::from_text("codegen.rho = 5").unwrap();
        cfg.apply_env([
            ("GENCACHE_CODEGEN_RHO".to_string(), "7".to_string()),
            ("GENCACHE_THRESHOLDS_PROMPT".to_string(), "0.9".to_string()),
            ("GENCACHE_UNRELATED".to_string(), "x".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.rho, 7);
        assert_eq!(cfg.thresholds.t_prompt, 0.9);
        assert!(cfg
            .apply_env([("GENCACHE_CODEGEN_NU".to_string(), "x".to_string())])
            .is_err());
    }

    #[test]
    fn every_key_reads_back() {
        let cfg = ServiceConfig::default();
        for key in KEYS {
            let v = cfg.get(key).unwrap();
            let mut copy = cfg.clone();
            copy.set(key, &v).unwrap();
            assert_eq!(copy, cfg, "{key}");
        }
        assert_eq!(env_name("executor.max_output_bytes"), "EXECUTOR_MAX_OUTPUT_BYTES");
    }

    #[test]
    fn validation() {
        let cfg = ServiceConfig {
            executor: ExecutorMode::Script,
            script_command: "python3".into(),
            ..ServiceConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ServiceConfig::default();
        cfg.embedder.kind = EmbedderKind::Remote;
        assert!(cfg.validate().is_err());
        let mut cfg = ServiceConfig::default();
        cfg.thresholds.t_prompt = 1.5;
        assert!(cfg.validate().is_err());
    }
}
