//! Schema checks for transcripts, one envelope per line.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use serde_json::Value;

use crate::envelope::AgentRole;
use crate::wire;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// 1-based line number in the transcript.
    pub record: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.record, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

type Check = Result<(), String>;

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a Value, String> {
    v.get(name).ok_or_else(|| format!("missing field {name:?}"))
}

fn uint(v: &Value, name: &str) -> Result<u64, String> {
    field(v, name)?
        .as_u64()
        .ok_or_else(|| format!("{name:?} must be a non-negative integer"))
}

fn text<'a>(v: &'a Value, name: &str) -> Result<&'a str, String> {
    field(v, name)?
        .as_str()
        .ok_or_else(|| format!("{name:?} must be a string"))
}

fn numbers4(v: &Value, name: &str) -> Result<[f64; 4], String> {
    let arr = field(v, name)?
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| format!("{name:?} must be an array of 4 numbers"))?;
    let mut out = [0.0; 4];
    for (k, x) in arr.iter().enumerate() {
        out[k] = x
            .as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| format!("{name:?} must be an array of 4 numbers"))?;
    }
    Ok(out)
}

fn unit_interval(x: &Value, name: &str) -> Check {
    match x.as_f64() {
        Some(f) if (0.0..=1.0).contains(&f) => Ok(()),
        _ => Err(format!("{name:?} must be a number in [0, 1], got {x}")),
    }
}

fn chat_request(req: &Value) -> Check {
    text(req, "model")?;
    let msgs = field(req, "messages")?
        .as_array()
        .filter(|m| !m.is_empty())
        .ok_or("\"messages\" must be a non-empty array")?;
    for m in msgs {
        text(m, "role")?;
        match field(m, "content")? {
            Value::String(_) => {}
            Value::Array(parts) if parts.iter().all(|p| p.get("type").is_some_and(Value::is_string)) => {}
            _ => return Err("message content must be a string or an array of typed parts".into()),
        }
    }
    if field(req, "temperature")?.as_f64() != Some(0.0) {
        return Err("\"temperature\" must be 0".into());
    }
    Ok(())
}

fn structured_verdicts(content: &str) -> Check {
    let (Some(a), Some(b)) = (content.find('['), content.rfind(']')) else {
        return Err("structured review reply contains no JSON array".into());
    };
    if b < a {
        return Err("structured review reply contains no JSON array".into());
    }
    let items: Vec<Value> = serde_json::from_str(&content[a..=b])
        .map_err(|e| format!("structured review reply is not a JSON array: {e}"))?;
    let mut ids = HashSet::new();
    for (k, item) in items.iter().enumerate() {
        let id = uint(item, "det_id").map_err(|m| format!("verdict {k}: {m}"))?;
        if !ids.insert(id) {
            return Err(format!("verdict {k}: duplicate det_id {id}"));
        }
        match field(item, "judgment").map_err(|m| format!("verdict {k}: {m}"))? {
            Value::String(j) if j == "reasonable" || j == "unreasonable" => {}
            other => {
                return Err(format!(
                    "verdict {k} (det {id}): judgment {other} is not \"reasonable\" or \"unreasonable\""
                ))
            }
        }
        if let Some(s) = item.get("suspected_label") {
            if !(s.is_null() || s.is_string()) {
                return Err(format!("verdict {k}: suspected_label must be a string or null"));
            }
        }
    }
    Ok(())
}

fn chat_response(resp: &Value, purpose: &str) -> Check {
    let content = wire::chat_reply_content(resp)?;
    if purpose == "review:structured-json" {
        structured_verdicts(&content)?;
    }
    Ok(())
}

fn detect_request(req: &Value) -> Check {
    uint(req, "image_id").map(|_| ())
}

fn detect_response(resp: &Value, image_id: u64) -> Check {
    let entries = resp.as_array().ok_or("detection response must be an array")?;
    for (k, e) in entries.iter().enumerate() {
        let at = |m: String| format!("detection {k}: {m}");
        if uint(e, "image_id").map_err(at)? != image_id {
            return Err(at(format!("image_id differs from request ({image_id})")));
        }
        let b = numbers4(e, "bbox").map_err(at)?;
        if b[2] < 0.0 || b[3] < 0.0 {
            return Err(at("bbox width and height must be non-negative".into()));
        }
        unit_interval(field(e, "score").map_err(at)?, "score").map_err(at)?;
        let has_cat = e.get("category_id").is_some_and(Value::is_u64);
        let has_label = e.get("label").is_some_and(Value::is_string);
        if !has_cat && !has_label {
            return Err(at("needs an integer category_id or a string label".into()));
        }
    }
    Ok(())
}

fn classify_request(req: &Value) -> Result<Vec<String>, String> {
    uint(req, "image_id")?;
    uint(req, "det_id")?;
    let r = numbers4(req, "region")?;
    if r[2] < r[0] || r[3] < r[1] {
        return Err("\"region\" corners are not ordered".into());
    }
    let cands: Vec<String> = field(req, "candidates")?
        .as_array()
        .filter(|c| !c.is_empty())
        .and_then(|c| c.iter().map(|x| x.as_str().map(str::to_string)).collect())
        .ok_or("\"candidates\" must be a non-empty array of strings")?;
    Ok(cands)
}

fn classify_response(resp: &Value, candidates: &[String]) -> Check {
    let label = text(resp, "label")?;
    if !candidates.iter().any(|c| vla_core::model::same_label(c, label)) {
        return Err(format!("label {label:?} is not one of the candidates"));
    }
    match resp.get("confidence") {
        None | Some(Value::Null) => Ok(()),
        Some(c) => unit_interval(c, "confidence"),
    }
}

/// Checks one parsed envelope; `seen` collects request ids for uniqueness.
pub fn check_envelope(env: &Value, seen: &mut HashSet<String>) -> Check {
    let id = text(env, "request_id")?;
    if id.is_empty() || !seen.insert(id.to_string()) {
        return Err(format!("request_id {id:?} is empty or repeated"));
    }
    let attempt = uint(env, "attempt")?;
    if attempt < 1 {
        return Err("attempt must be at least 1".into());
    }
    let image_id = uint(env, "image_id")?;
    let role: AgentRole = text(env, "role")?.parse()?;
    let purpose = text(env, "purpose")?;
    let timing = field(env, "timing")?;
    let (sent, received) = (uint(timing, "sent")?, uint(timing, "received")?);
    if received < sent {
        return Err("timing.received precedes timing.sent".into());
    }
    let req = field(env, "request")?;
    let status = env.get("status").and_then(Value::as_u64);
    let failed = env.get("error").is_some_and(|e| !e.is_null());
    let resp = env.get("response").filter(|r| !r.is_null());
    if resp.is_none() && !failed {
        return Err("envelope has neither response nor error".into());
    }
    let check_resp = !failed && status.is_none_or(|s| (200..300).contains(&s));
    match role {
        AgentRole::Linguistic => {
            chat_request(req).map_err(|m| format!("request: {m}"))?;
            if let (true, Some(r)) = (check_resp, resp) {
                chat_response(r, purpose).map_err(|m| format!("response: {m}"))?;
            }
        }
        AgentRole::Detector => {
            detect_request(req).map_err(|m| format!("request: {m}"))?;
            if let (true, Some(r)) = (check_resp, resp) {
                detect_response(r, image_id).map_err(|m| format!("response: {m}"))?;
            }
        }
        AgentRole::Classifier => {
            let cands = classify_request(req).map_err(|m| format!("request: {m}"))?;
            if let (true, Some(r)) = (check_resp, resp) {
                classify_response(r, &cands).map_err(|m| format!("response: {m}"))?;
            }
        }
    }
    Ok(())
}

/// Validates every line; a malformed line is a violation and does not stop
/// the remaining records from being checked.
pub fn validate_transcript(text: &str) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let record = k + 1;
        let outcome = serde_json::from_str::<Value>(line)
            .map_err(|e| format!("truncated or malformed JSON ({e})"))
            .and_then(|v| check_envelope(&v, &mut seen));
        if let Err(message) = outcome {
            report.violations.push(Violation { record, message });
        }
    }
    report
}
