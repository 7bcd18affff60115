//! JSON bodies exchanged with agent servers.
//!
//! * `POST /v1/chat/completions`: `{model, messages: [{role: "user", content}],
//!   temperature: 0, user: "vla-image-<id>"}`, answered with the usual
//!   `choices[0].message.content`.
//! * `POST /detect`: `{image_id, image?}`, answered with an array of COCO
//!   result entries, optionally carrying `id` and an open-vocabulary `label`.
//! * `POST /classify`: `{image_id, image?, det_id, region: [x1, y1, x2, y2],
//!   candidates}`, answered with `{label, confidence}`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use vla_core::pipeline::{ChatKind, ChatRequest, Classification};
use vla_core::{BoundingBox, CategoryMap, Detection, ImageId, SceneRecord};

pub const CHAT_ROUTE: &str = "/v1/chat/completions";
pub const DETECT_ROUTE: &str = "/detect";
pub const CLASSIFY_ROUTE: &str = "/classify";
pub const HEALTH_ROUTE: &str = "/healthz";

const USER_PREFIX: &str = "vla-image-";

pub fn chat_purpose(request: &ChatRequest, image_url: bool) -> String {
    match request.kind {
        ChatKind::Caption if image_url => "caption:image-url".to_string(),
        ChatKind::Caption => "caption".to_string(),
        ChatKind::Review => format!("review:{}", request.format.as_str()),
    }
}

pub fn chat_body(model: &str, image_id: ImageId, message: &str, image_url: Option<&str>) -> Value {
    let content = match image_url {
        Some(url) => json!([
            {"type": "text", "text": message},
            {"type": "image_url", "image_url": {"url": url}},
        ]),
        None => Value::String(message.to_string()),
    };
    json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "temperature": 0,
        "user": format!("{USER_PREFIX}{image_id}"),
    })
}

pub fn chat_reply(model: &str, content: &str) -> Value {
    json!({
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    })
}

pub fn chat_reply_content(body: &Value) -> Result<String, String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "response has no choices[0].message.content string".to_string())
}

/// The text of the last user message, joining text parts of multimodal content.
pub fn chat_user_text(body: &Value) -> Option<String> {
    let content = body.get("messages")?.as_array()?.last()?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        _ => None,
    }
}

pub fn chat_image_id(body: &Value) -> Option<ImageId> {
    body.get("user")?.as_str()?.strip_prefix(USER_PREFIX)?.parse().ok()
}

pub fn detect_body(scene: &SceneRecord) -> Value {
    let mut body = json!({"image_id": scene.image_id});
    if let Some(name) = &scene.file_name {
        body["image"] = Value::String(name.clone());
    }
    body
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub image_id: ImageId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Detections in wire form; labels outside the category map travel as `label`.
pub fn wire_detections(dets: &[Detection], cats: &CategoryMap) -> Vec<WireDetection> {
    dets.iter()
        .map(|d| {
            let category_id = cats.by_name(&d.label).map(|c| c.id);
            WireDetection {
                id: Some(d.id),
                image_id: d.image_id,
                category_id,
                label: category_id.is_none().then(|| d.label.clone()),
                bbox: d.bbox.to_xywh(),
                score: d.score,
            }
        })
        .collect()
}

/// Converts a `/detect` answer. Entries without an `id` are numbered `1..`
/// in response order.
pub fn detections_from_wire(body: Value, scene: &SceneRecord, cats: &CategoryMap) -> Result<Vec<Detection>, String> {
    let entries: Vec<WireDetection> =
        serde_json::from_value(body).map_err(|e| format!("detection array does not match the results schema: {e}"))?;
    let mut out = Vec::with_capacity(entries.len());
    for (k, e) in entries.into_iter().enumerate() {
        if e.image_id != scene.image_id {
            return Err(format!(
                "entry {k} is for image {}, expected {}",
                e.image_id, scene.image_id
            ));
        }
        let label = match (e.category_id, e.label) {
            (Some(cid), _) => cats
                .name_of(cid)
                .map(str::to_string)
                .ok_or_else(|| format!("entry {k} has unknown category {cid}"))?,
            (None, Some(l)) => l,
            (None, None) => return Err(format!("entry {k} has neither category_id nor label")),
        };
        let bbox = BoundingBox::from_xywh(e.bbox).map_err(|err| format!("entry {k}: {err}"))?;
        let id = e.id.unwrap_or(k as u64 + 1);
        out.push(
            Detection::new(id, e.image_id, bbox, label, e.score, "detector")
                .map_err(|err| format!("entry {k}: {err}"))?,
        );
    }
    Ok(out)
}

pub fn classification_reply(c: &Classification) -> Value {
    json!({"label": c.label, "confidence": c.confidence})
}

pub fn classification_from_wire(body: Value, candidates: &[String]) -> Result<Classification, String> {
    let c: Classification = serde_json::from_value(body)
        .map_err(|e| format!("classification does not match {{label, confidence}}: {e}"))?;
    if !candidates.iter().any(|k| vla_core::model::same_label(k, &c.label)) {
        return Err(format!("label {:?} is not one of the candidates", c.label));
    }
    if let Some(conf) = c.confidence {
        if !(0.0..=1.0).contains(&conf) {
            return Err(format!("confidence {conf} outside [0, 1]"));
        }
    }
    Ok(c)
}
