//! Settings resolution: flags, then `MMVU_*` environment variables, then the
//! `--config` JSON file.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::Context;
use mmvu_core::adapter::{ChatConfig, Endpoint, LiveConfig};
use serde::Deserialize;

pub const ENV_PREFIX: &str = "MMVU_";
pub const TOKEN_VAR: &str = "MMVU_API_TOKEN";

/// Bad invocation; maps to exit code 3.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub replay: Option<PathBuf>,
    pub base_url: Option<String>,
    pub chat_url: Option<String>,
    pub model: Option<String>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    pub prompts_dir: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub max_failure_rate: Option<f64>,
}

pub struct Settings {
    file: FileConfig,
    env: HashMap<String, String>,
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    Env,
    File,
}

impl Settings {
    pub fn load(config: Option<&Path>) -> anyhow::Result<Self> {
        let file = match config {
            None => FileConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| usage(format!("config {}: {e}", p.display())))?
            }
        };
        let env = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        Ok(Settings { file, env })
    }

    fn env_value<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        let var = format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
        match self.env.get(&var) {
            None => Ok(None),
            Some(raw) if raw.is_empty() => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("{var}: {e}"))),
        }
    }

    /// Flag if given, else `MMVU_<KEY>`, else the config file value.
    pub fn pick<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        file: impl FnOnce(&FileConfig) -> Option<T>,
    ) -> anyhow::Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        Ok(self.pick_with_source(flag, key, file)?.map(|(v, _)| v))
    }

    pub fn pick_with_source<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &str,
        file: impl FnOnce(&FileConfig) -> Option<T>,
    ) -> anyhow::Result<Option<(T, Source)>>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(Some((v, Source::Flag)));
        }
        if let Some(v) = self.env_value(key)? {
            return Ok(Some((v, Source::Env)));
        }
        Ok(file(&self.file).map(|v| (v, Source::File)))
    }

    pub fn token(&self) -> Option<String> {
        self.env.get(TOKEN_VAR).filter(|t| !t.is_empty()).cloned()
    }

    pub fn workers(&self, flag: Option<usize>) -> anyhow::Result<usize> {
        let w = self.pick(flag, "workers", |f| f.workers)?.unwrap_or(4);
        if w == 0 {
            return Err(usage("workers must be at least 1"));
        }
        Ok(w)
    }

    pub fn timeout(&self) -> anyhow::Result<Duration> {
        let secs = self
            .pick(None, "timeout_secs", |f| f.timeout_secs)?
            .unwrap_or(120);
        Ok(Duration::from_secs(secs))
    }

    /// Resolves the transport. Exactly one of replay, live URL or chat URL
    /// must be set in the highest layer that sets any.
    pub fn endpoint(&self, t: &TransportFlags) -> anyhow::Result<Endpoint> {
        let layers: [(Option<PathBuf>, Option<String>, Option<String>); 3] = [
            (t.replay.clone(), t.base_url.clone(), t.chat_url.clone()),
            (
                self.env_value("replay")?,
                self.env_value("base_url")?,
                self.env_value("chat_url")?,
            ),
            (
                self.file.replay.clone(),
                self.file.base_url.clone(),
                self.file.chat_url.clone(),
            ),
        ];
        let (replay, base, chat) = layers
            .into_iter()
            .find(|(r, b, c)| r.is_some() || b.is_some() || c.is_some())
            .ok_or_else(|| {
                usage("no endpoint configured: pass --replay, --base-url or --chat-url")
            })?;
        let timeout = self.timeout()?;
        let token = self.token();
        match (replay, base, chat) {
            (Some(p), None, None) => Ok(Endpoint::Replay(p)),
            (None, Some(url), None) => Ok(Endpoint::Live(LiveConfig {
                token,
                timeout,
                ..LiveConfig::new(url)
            })),
            (None, None, Some(url)) => {
                let model = self
                    .pick(t.model.clone(), "model", |f| f.model.clone())?
                    .ok_or_else(|| usage("--chat-url needs --model"))?;
                Ok(Endpoint::Chat(ChatConfig {
                    token,
                    timeout,
                    ..ChatConfig::new(url, model)
                }))
            }
            _ => Err(usage(
                "--replay, --base-url and --chat-url are mutually exclusive",
            )),
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct TransportFlags {
    /// Replay JSONL log to answer requests from.
    #[arg(long, group = "transport")]
    pub replay: Option<PathBuf>,
    /// Live endpoint base URL (POST {base}/v1/respond).
    #[arg(long, group = "transport")]
    pub base_url: Option<String>,
    /// OpenAI-compatible chat completions base URL.
    #[arg(long, group = "transport")]
    pub chat_url: Option<String>,
    /// Model name for --chat-url.
    #[arg(long)]
    pub model: Option<String>,
}
