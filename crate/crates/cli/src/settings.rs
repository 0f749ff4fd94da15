//! Run settings: command-line flags over a `key = value` config file over built-in
//! defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use convrepair_core::engine::default_max_tries;
use convrepair_core::{
    BackendConfig, BackendKind, EngineConfig, FeedbackLevel, FeedbackVariant, PromptLevel,
    PromptVariant, RepairScenario, SystemMessage,
};
use serde::Deserialize;

/// Settings shared by `repair` and `ablate`. Every field may also be given in the
/// `--config` file under its snake_case name.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Knobs {
    /// Corpus manifest (JSON).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `http` or `scripted`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Rule file for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_context_tokens: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Query budget per bug (default: 200 for sl/sh, 100 for sf).
    #[arg(long)]
    pub max_tries: Option<usize>,
    #[arg(long = "max-conv-len")]
    pub max_conv_len: Option<usize>,
    #[arg(long)]
    pub shots: Option<usize>,
    /// base-prompt | name-err | name-err-fail-line | name-err-test-body
    #[arg(long)]
    pub prompt_variant: Option<String>,
    /// base-feedback | name-err | name-err-fail-line | dynamic
    #[arg(long)]
    pub feedback_variant: Option<String>,
    /// apr-tool | assistant
    #[arg(long)]
    pub system_message: Option<String>,
    /// End-to-end wall-clock limit per bug, in seconds.
    #[arg(long)]
    pub timeout_s: Option<u64>,
    /// Directory for temporary workspaces.
    #[arg(long)]
    pub workspace_root: Option<PathBuf>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($field:ident),* $(,)?) => {
        Knobs { $($field: $hi.$field.or($lo.$field)),* }
    };
}

impl Knobs {
    /// `self` wins over `lower` field by field.
    pub fn over(self, lower: Knobs) -> Knobs {
        overlay!(self, lower;
            corpus, backend, script, model, endpoint, api_key_env, temperature,
            max_context_tokens, seed, max_tries, max_conv_len, shots, prompt_variant,
            feedback_variant, system_message, timeout_s, workspace_root,
        )
    }

    pub fn load(path: &Path) -> Result<Knobs> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Flags over the optional config file.
    pub fn with_config(self, config: Option<&Path>) -> Result<Knobs> {
        Ok(match config {
            Some(path) => self.over(Knobs::load(path)?),
            None => self,
        })
    }

    pub fn corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| anyhow!("no corpus given (use --corpus or `corpus` in the config file)"))
    }

    pub fn backend_config(&self) -> Result<BackendConfig> {
        let mut c = BackendConfig::default();
        if let Some(kind) = &self.backend {
            c.kind = match kind.as_str() {
                "http" => BackendKind::Http,
                "scripted" => BackendKind::Scripted,
                other => bail!("unknown backend `{other}` (expected http or scripted)"),
            };
        }
        c.script_path = self.script.clone();
        if let Some(v) = &self.model {
            c.model_name = v.clone();
        }
        if let Some(v) = &self.endpoint {
            c.endpoint = v.clone();
        }
        if let Some(v) = &self.api_key_env {
            c.api_key_env = v.clone();
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.max_context_tokens {
            c.max_context_tokens = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c.check()?;
        Ok(c)
    }

    /// Engine settings for a bug of `scenario`.
    pub fn engine_config(&self, scenario: RepairScenario) -> Result<EngineConfig> {
        let defaults = EngineConfig::for_scenario(scenario);
        let prompt = PromptVariant {
            level: parse_or(&self.prompt_variant, PromptLevel::parse, "prompt variant")?
                .unwrap_or(defaults.prompt_variant.level),
            shots: self.shots.unwrap_or(defaults.prompt_variant.shots),
            system_msg: parse_or(&self.system_message, SystemMessage::parse, "system message")?
                .unwrap_or(defaults.prompt_variant.system_msg),
        };
        let feedback = FeedbackVariant {
            level: parse_or(
                &self.feedback_variant,
                FeedbackLevel::parse,
                "feedback variant",
            )?
            .unwrap_or(defaults.feedback_variant.level),
        };
        let config = EngineConfig {
            max_tries: self.max_tries.unwrap_or(default_max_tries(scenario)),
            max_conv_length: self.max_conv_len.unwrap_or(defaults.max_conv_length),
            prompt_variant: prompt,
            feedback_variant: feedback,
            end_to_end_timeout_s: self.timeout_s.unwrap_or(defaults.end_to_end_timeout_s),
            ..defaults
        };
        config.check()?;
        Ok(config)
    }
}

fn parse_or<T>(
    value: &Option<String>,
    parse: fn(&str) -> Option<T>,
    what: &str,
) -> Result<Option<T>> {
    match value {
        None => Ok(None),
        Some(s) => parse(s)
            .map(Some)
            .ok_or_else(|| anyhow!("unknown {what} `{s}`")),
    }
}
