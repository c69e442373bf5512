use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Network configuration file (TOML).
///
/// ```toml
/// gateways = ["http://127.0.0.1:8080"]
/// request_timeout_s = 30
/// max_retries_per_gateway = 2
///
/// [[pinning_services]]
/// name = "local"
/// url = "http://127.0.0.1:9000"
/// token_env_var = "CAD_PIN_TOKEN"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default)]
    pub gateways: Vec<String>,
    #[serde(default = "default_timeout")]
    pub request_timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries_per_gateway: u32,
    #[serde(default)]
    pub pinning_services: Vec<PinningServiceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinningServiceConfig {
    pub name: String,
    pub url: String,
    /// Environment variable holding the bearer token. The token itself
    /// never appears in the config file.
    pub token_env_var: String,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            gateways: Vec::new(),
            request_timeout_s: default_timeout(),
            max_retries_per_gateway: default_retries(),
            pinning_services: Vec::new(),
        }
    }
}

impl NetConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: NetConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !(config.request_timeout_s > 0.0) {
            return Err(Error::Config("request_timeout_s must be positive".into()));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn pinning_service(&self, name: &str) -> Result<&PinningServiceConfig> {
        self.pinning_services
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("no pinning service named {name:?}")))
    }
}

impl PinningServiceConfig {
    pub fn token(&self) -> Result<String> {
        std::env::var(&self.token_env_var)
            .map_err(|_| Error::Config(format!("environment variable {} is not set", self.token_env_var)))
    }
}
