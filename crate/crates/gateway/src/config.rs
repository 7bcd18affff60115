//! Endpoint configuration for the three agent roles.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::envelope::AgentRole;
use crate::GatewayError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    HttpChat,
    HttpVision,
    File,
    Mock,
}

impl Transport {
    pub fn is_http(&self) -> bool {
        matches!(self, Transport::HttpChat | Transport::HttpVision)
    }

    fn as_str(&self) -> &'static str {
        match self {
            Transport::HttpChat => "http-chat",
            Transport::HttpVision => "http-vision",
            Transport::File => "file",
            Transport::Mock => "mock",
        }
    }
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

fn default_concurrency() -> usize {
    4
}

fn default_auth_header() -> String {
    "Authorization".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEndpointConfig {
    pub transport: Transport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Environment variable holding the API key. Defaults to `VLA_<ROLE>_API_KEY`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Send no credential at all (local servers).
    #[serde(default)]
    pub anonymous: bool,
    /// `Authorization` gets a `Bearer` prefix; any other header carries the raw key.
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Linguistic only: captions send `<image_base><file_name>` as an image URL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_base: Option<String>,
    /// Linguistic mock only: replies returned in order instead of the oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<String>>,
}

impl AgentEndpointConfig {
    pub fn new(transport: Transport) -> Self {
        Self {
            transport,
            url: None,
            path: None,
            model: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff_ms(),
            max_concurrency: default_concurrency(),
            api_key_env: None,
            anonymous: false,
            auth_header: default_auth_header(),
            image_base: None,
            script: None,
        }
    }

    pub fn mock() -> Self {
        Self::new(Transport::Mock)
    }

    pub fn http(transport: Transport, url: &str) -> Self {
        Self {
            url: Some(url.to_string()),
            ..Self::new(transport)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn key_env(&self, role: AgentRole) -> String {
        self.api_key_env.clone().unwrap_or_else(|| role.default_key_env())
    }

    /// Checks the transport against the role and the fields it needs.
    /// `prefix` is the config path used in messages, e.g. `agents.detector`.
    pub fn validate(&self, role: AgentRole, prefix: &str) -> Result<(), GatewayError> {
        let allowed: &[Transport] = match role {
            AgentRole::Detector => &[Transport::HttpVision, Transport::File, Transport::Mock],
            AgentRole::Linguistic => &[Transport::HttpChat, Transport::Mock],
            AgentRole::Classifier => &[Transport::HttpVision, Transport::Mock],
        };
        let bad = |field: &str, msg: String| GatewayError::Config {
            field: format!("{prefix}.{field}"),
            message: msg,
        };
        if !allowed.contains(&self.transport) {
            return Err(bad(
                "transport",
                format!("{} cannot use transport {}", role, self.transport.as_str()),
            ));
        }
        if self.transport.is_http() && self.url.as_deref().is_none_or(str::is_empty) {
            return Err(bad("url", "http transports require a url".into()));
        }
        if self.transport == Transport::File && self.path.is_none() {
            return Err(bad("path", "file transport requires a path".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(bad(
                "timeout_secs",
                format!("must be positive, got {}", self.timeout_secs),
            ));
        }
        if self.max_concurrency == 0 {
            return Err(bad("max_concurrency", "must be at least 1".into()));
        }
        if self.script.is_some() && !(role == AgentRole::Linguistic && self.transport == Transport::Mock) {
            return Err(bad("script", "scripts only apply to the linguistic mock".into()));
        }
        Ok(())
    }

    /// Reads the credential from the environment. `Ok(None)` for mock, file
    /// and anonymous endpoints.
    pub fn credential(&self, role: AgentRole) -> Result<Option<String>, GatewayError> {
        if !self.transport.is_http() || self.anonymous {
            return Ok(None);
        }
        let var = self.key_env(role);
        match std::env::var(&var) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(GatewayError::MissingCredential { role, var }),
        }
    }

    /// Header carrying the credential.
    pub fn auth_pair(&self, key: &str) -> (String, String) {
        if self.auth_header.eq_ignore_ascii_case("authorization") {
            (self.auth_header.clone(), format!("Bearer {key}"))
        } else {
            (self.auth_header.clone(), key.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_transport_compatibility() {
        assert!(AgentEndpointConfig::mock().validate(AgentRole::Linguistic, "a").is_ok());
        let e = AgentEndpointConfig::new(Transport::File)
            .validate(AgentRole::Linguistic, "agents.linguistic")
            .unwrap_err();
        assert!(e.to_string().contains("agents.linguistic.transport"));
        let e = AgentEndpointConfig::new(Transport::HttpChat)
            .validate(AgentRole::Linguistic, "agents.linguistic")
            .unwrap_err();
        assert!(e.to_string().contains("agents.linguistic.url"));
        let e = AgentEndpointConfig::new(Transport::File)
            .validate(AgentRole::Detector, "agents.detector")
            .unwrap_err();
        assert!(e.to_string().contains("agents.detector.path"));
    }

    #[test]
    fn missing_credential_names_the_variable() {
        let mut cfg = AgentEndpointConfig::http(Transport::HttpVision, "http://127.0.0.1:1");
        cfg.api_key_env = Some("VLA_TEST_SURELY_UNSET_KEY".into());
        let err = cfg.credential(AgentRole::Classifier).unwrap_err();
        assert!(err.to_string().contains("VLA_TEST_SURELY_UNSET_KEY"));
        cfg.anonymous = true;
        assert_eq!(cfg.credential(AgentRole::Classifier).unwrap(), None);
        assert_eq!(
            AgentEndpointConfig::mock().credential(AgentRole::Detector).unwrap(),
            None
        );
    }

    #[test]
    fn auth_header_forms() {
        let mut cfg = AgentEndpointConfig::mock();
        assert_eq!(cfg.auth_pair("k").1, "Bearer k");
        cfg.auth_header = "x-api-key".into();
        assert_eq!(cfg.auth_pair("k"), ("x-api-key".into(), "k".into()));
    }

    #[test]
    fn toml_like_defaults() {
        let cfg: AgentEndpointConfig = serde_json::from_str(r#"{"transport":"http-chat","url":"http://x"}"#).unwrap();
        assert_eq!(cfg.max_retries, 3);
        assert_eq!(cfg.backoff_base_ms, 1000);
        assert_eq!(cfg.max_concurrency, 4);
        assert!(serde_json::from_str::<AgentEndpointConfig>(r#"{"transport":"mock","bogus":1}"#).is_err());
    }
}
