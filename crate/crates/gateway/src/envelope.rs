//! Wire-level records of every agent call, and the run transcript.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vla_core::ImageId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Detector,
    Linguistic,
    Classifier,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [AgentRole::Detector, AgentRole::Linguistic, AgentRole::Classifier];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentRole::Detector => "detector",
            AgentRole::Linguistic => "linguistic",
            AgentRole::Classifier => "classifier",
        }
    }

    /// `VLA_DETECTOR_API_KEY` and friends.
    pub fn default_key_env(&self) -> String {
        format!("VLA_{}_API_KEY", self.as_str().to_ascii_uppercase())
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown agent role {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Per-image tick counter; transcripts are reproducible.
    Logical,
    /// Unix milliseconds.
    Wall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub clock: ClockMode,
    pub sent: u64,
    pub received: u64,
}

/// One attempt of one agent call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentEnvelope {
    pub request_id: String,
    pub call: u32,
    pub image_id: ImageId,
    pub role: AgentRole,
    /// `caption`, `caption:image-url`, `review:structured-json`, `review:free-text`,
    /// `detect` or `classify`.
    pub purpose: String,
    pub endpoint: String,
    pub attempt: u32,
    pub request: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timing: Timing,
}

/// Outcome of one attempt, before it is stamped into an envelope.
#[derive(Clone, Debug, Default)]
pub struct AttemptRecord {
    pub status: Option<u16>,
    pub response: Option<Value>,
    pub error: Option<String>,
}

#[derive(Default)]
struct State {
    envelopes: Vec<AgentEnvelope>,
    calls: HashMap<(ImageId, AgentRole), u32>,
    ticks: HashMap<ImageId, u64>,
}

/// Thread-safe collector of envelopes.
///
/// Call numbers and logical ticks are counted per image, so the envelopes of
/// an image do not depend on what other workers are doing.
pub struct Transcript {
    clock: ClockMode,
    state: Mutex<State>,
}

/// A reserved call number for one logical request.
#[derive(Clone, Debug)]
pub struct CallTicket {
    pub image_id: ImageId,
    pub role: AgentRole,
    pub call: u32,
    pub purpose: String,
    pub endpoint: String,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Transcript {
    pub fn new(clock: ClockMode) -> Self {
        Self {
            clock,
            state: Mutex::new(State::default()),
        }
    }

    pub fn clock(&self) -> ClockMode {
        self.clock
    }

    pub fn open_call(&self, image_id: ImageId, role: AgentRole, purpose: &str, endpoint: &str) -> CallTicket {
        let mut st = self.state.lock().expect("transcript lock");
        let n = st.calls.entry((image_id, role)).or_insert(0);
        *n += 1;
        CallTicket {
            image_id,
            role,
            call: *n,
            purpose: purpose.to_string(),
            endpoint: endpoint.to_string(),
        }
    }

    /// Start time for an attempt. Logical time advances by one per event.
    pub fn now(&self, image_id: ImageId) -> u64 {
        match self.clock {
            ClockMode::Wall => unix_ms(),
            ClockMode::Logical => {
                let mut st = self.state.lock().expect("transcript lock");
                let t = st.ticks.entry(image_id).or_insert(0);
                let v = *t;
                *t += 1;
                v
            }
        }
    }

    pub fn record(&self, ticket: &CallTicket, attempt: u32, request: &Value, sent: u64, outcome: AttemptRecord) {
        let received = self.now(ticket.image_id);
        let env = AgentEnvelope {
            request_id: format!("img{}:{}:{}:a{}", ticket.image_id, ticket.role, ticket.call, attempt),
            call: ticket.call,
            image_id: ticket.image_id,
            role: ticket.role,
            purpose: ticket.purpose.clone(),
            endpoint: ticket.endpoint.clone(),
            attempt,
            request: request.clone(),
            status: outcome.status,
            response: outcome.response,
            error: outcome.error,
            timing: Timing {
                clock: self.clock,
                sent,
                received,
            },
        };
        self.state.lock().expect("transcript lock").envelopes.push(env);
    }

    /// Removes and returns the envelopes of one image, resetting its counters.
    pub fn take_image(&self, image_id: ImageId) -> Vec<AgentEnvelope> {
        let mut st = self.state.lock().expect("transcript lock");
        st.calls.retain(|(img, _), _| *img != image_id);
        st.ticks.remove(&image_id);
        let (mine, rest) = std::mem::take(&mut st.envelopes)
            .into_iter()
            .partition(|e| e.image_id == image_id);
        st.envelopes = rest;
        mine
    }

    pub fn take_all(&self) -> Vec<AgentEnvelope> {
        let mut st = self.state.lock().expect("transcript lock");
        st.calls.clear();
        st.ticks.clear();
        std::mem::take(&mut st.envelopes)
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("transcript lock").envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stable order for output: by image, then insertion order within an image.
pub fn sort_envelopes(envelopes: &mut [AgentEnvelope]) {
    envelopes.sort_by_key(|e| e.image_id);
}

pub fn write_jsonl<T: Serialize>(mut out: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_transcript(path: &Path, envelopes: &[AgentEnvelope]) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_jsonl(std::io::BufWriter::new(file), envelopes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn call_numbers_are_per_image_and_role() {
        let t = Transcript::new(ClockMode::Logical);
        let a = t.open_call(1, AgentRole::Linguistic, "caption", "mock");
        let b = t.open_call(2, AgentRole::Linguistic, "caption", "mock");
        let c = t.open_call(1, AgentRole::Linguistic, "review", "mock");
        assert_eq!((a.call, b.call, c.call), (1, 1, 2));
    }

    #[test]
    fn take_image_resets_counters() {
        let t = Transcript::new(ClockMode::Logical);
        let a = t.open_call(1, AgentRole::Classifier, "classify", "mock");
        let s = t.now(1);
        t.record(&a, 1, &Value::Null, s, AttemptRecord::default());
        let got = t.take_image(1);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].request_id, "img1:classifier:1:a1");
        assert_eq!(
            got[0].timing,
            Timing {
                clock: ClockMode::Logical,
                sent: 0,
                received: 1
            }
        );
        assert_eq!(t.open_call(1, AgentRole::Classifier, "classify", "mock").call, 1);
        assert_eq!(t.now(1), 0);
    }

    #[test]
    fn role_names_and_key_env() {
        for r in AgentRole::ALL {
            assert_eq!(r.as_str().parse::<AgentRole>().unwrap(), r);
        }
        assert_eq!(AgentRole::Linguistic.default_key_env(), "VLA_LINGUISTIC_API_KEY");
    }
}
