//! Run configuration: one TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use vla_core::coco::ParseMode;
use vla_core::oracle::OracleConfig;
use vla_core::pipeline::{PipelineOptions, ProtocolFallback, UncorrectablePolicy};
use vla_core::prompt::{PromptTemplates, ResponseFormat};
use vla_gateway::{AgentConfigs, AgentEndpointConfig, AgentRole, ClockMode, Transport};

fn default_parallelism() -> usize {
    1
}

fn default_match_iou() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for OracleRates {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub annotations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    /// JSON object mapping image ids to pre-supplied captions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<AgentEndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linguistic: Option<AgentEndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<AgentEndpointConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub response_format: ResponseFormat,
    #[serde(default)]
    pub uncorrectable: UncorrectablePolicy,
    #[serde(default)]
    pub protocol_fallback: ProtocolFallback,
    #[serde(default)]
    pub include_scores: bool,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Abort on the first failed image instead of recording it.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub parse_mode: ParseMode,
    #[serde(default = "default_match_iou")]
    pub match_iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_clock: Option<ClockMode>,
    #[serde(default)]
    pub oracle: OracleRates,
    pub paths: PathsConfig,
    #[serde(default)]
    pub agents: AgentsSection,
    #[serde(default)]
    pub prompts: PromptTemplates,
}

/// Flags that win over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mock_agents: bool,
    pub parallelism: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub response_format: Option<ResponseFormat>,
    pub strict: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if o.mock_agents {
            self.agents = AgentsSection {
                detector: Some(AgentEndpointConfig::mock()),
                linguistic: Some(AgentEndpointConfig::mock()),
                classifier: Some(AgentEndpointConfig::mock()),
            };
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(dir) = &o.out_dir {
            self.paths.out_dir = dir.clone();
        }
        if let Some(f) = o.response_format {
            self.response_format = f;
        }
        self.strict |= o.strict;
    }

    /// Endpoint configs for all three roles; a missing one is reported by
    /// its field path.
    pub fn agent_configs(&self) -> Result<AgentConfigs> {
        let get = |c: &Option<AgentEndpointConfig>, role: AgentRole| {
            c.clone()
                .ok_or_else(|| anyhow!("agents.{role}: missing endpoint configuration"))
        };
        let configs = AgentConfigs {
            detector: get(&self.agents.detector, AgentRole::Detector)?,
            linguistic: get(&self.agents.linguistic, AgentRole::Linguistic)?,
            classifier: get(&self.agents.classifier, AgentRole::Classifier)?,
        };
        for role in AgentRole::ALL {
            configs.get(role).validate(role, &format!("agents.{role}"))?;
        }
        Ok(configs)
    }

    pub fn uses_mock(&self) -> bool {
        [&self.agents.detector, &self.agents.linguistic, &self.agents.classifier]
            .iter()
            .any(|c| c.as_ref().is_some_and(|c| c.transport == Transport::Mock))
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            seed: self.seed.unwrap_or(0),
            match_iou: self.match_iou,
            alpha: self.oracle.alpha,
            beta: self.oracle.beta,
            gamma: self.oracle.gamma,
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            format: self.response_format,
            uncorrectable: self.uncorrectable,
            protocol_fallback: self.protocol_fallback,
            include_scores: self.include_scores,
            templates: self.prompts.clone(),
        }
    }

    /// Checks everything that can be checked without touching the inputs.
    pub fn validate(&self) -> Result<AgentConfigs> {
        let configs = self.agent_configs()?;
        if self.parallelism < 1 {
            bail!("parallelism: must be at least 1");
        }
        if self.uses_mock() && self.seed.is_none() {
            bail!("seed: required when any agent is a mock (set `seed` or pass --seed)");
        }
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) {
            bail!("match_iou: must be in (0, 1], got {}", self.match_iou);
        }
        self.oracle().validate().context("oracle")?;
        let needs_dets = configs.detector.transport == Transport::Mock;
        if needs_dets && self.paths.detections.is_none() {
            bail!("paths.detections: required by the mock detector");
        }
        Ok(configs)
    }

    pub fn clock(&self, configs: &AgentConfigs) -> ClockMode {
        self.transcript_clock.unwrap_or(if configs.all_offline() {
            ClockMode::Logical
        } else {
            ClockMode::Wall
        })
    }

    /// The config as canonical JSON, without settings that cannot change
    /// output contents (worker count, output location).
    pub fn canonical(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("parallelism");
            if let Some(Value::Object(paths)) = map.get_mut("paths") {
                paths.remove("out_dir");
            }
        }
        v
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Flattens nested JSON into `a.b.c -> value` for field-level diffs.
pub fn flatten(value: &Value) -> BTreeMap<String, String> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, x) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, x, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

/// Human-readable list of fields that differ, e.g. `seed: 7 -> 8`.
pub fn diff_fields(old: &Value, new: &Value) -> Vec<String> {
    let (a, b) = (flatten(old), flatten(new));
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let missing = "(unset)".to_string();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| {
            format!(
                "{k}: {} -> {}",
                a.get(k).unwrap_or(&missing),
                b.get(k).unwrap_or(&missing)
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
[paths]
annotations = "ann.json"
detections = "dets.json"
out_dir = "out"
[agents.detector]
transport = "mock"
[agents.linguistic]
transport = "mock"
[agents.classifier]
transport = "mock"
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.parallelism, 1);
        assert_eq!(cfg.response_format, ResponseFormat::StructuredJson);
        assert_eq!(cfg.oracle, OracleRates::default());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn missing_detector_names_field() {
        let text = BASE.replace("[agents.detector]\ntransport = \"mock\"\n", "");
        let err = RunConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("agents.detector"), "{err}");
    }

    #[test]
    fn mock_runs_need_a_seed() {
        let text = BASE.replace("seed = 7\n", "");
        let mut cfg = RunConfig::from_toml(&text).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("seed"));
        cfg.apply(&Overrides {
            seed: Some(3),
            ..Default::default()
        });
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml(&format!("{BASE}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn canonical_form_ignores_parallelism() {
        let a = RunConfig::from_toml(BASE).unwrap();
        let mut b = a.clone();
        b.parallelism = 8;
        b.paths.out_dir = "elsewhere".into();
        assert_eq!(a.canonical(), b.canonical());
        b.seed = Some(8);
        assert_eq!(
            diff_fields(&a.canonical(), &b.canonical()),
            vec!["seed: 7 -> 8".to_string()]
        );
    }

    #[test]
    fn mock_override_replaces_agents() {
        let text = BASE.replace(
            "[agents.linguistic]\ntransport = \"mock\"",
            "[agents.linguistic]\ntransport = \"http-chat\"\nurl = \"http://x\"",
        );
        let mut cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.agents.linguistic.as_ref().unwrap().transport, Transport::HttpChat);
        cfg.apply(&Overrides {
            mock_agents: true,
            ..Default::default()
        });
        assert_eq!(cfg.agents.linguistic.unwrap().transport, Transport::Mock);
    }

    #[test]
    fn hashing_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
