//! HTTP server exposing the oracle agents over the gateway wire schemas.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};
use vla_core::oracle::{ground_truth_caption, oracle_classify, oracle_review, OracleConfig};
use vla_core::prompt::{
    parse_prompt_lines, render_free_text_verdicts, render_structured_verdicts, ClassificationRequest, CLOSING_QUESTION,
};
use vla_core::{CategoryMap, Detection, ImageId, SceneRecord};

use crate::wire;
use crate::GatewayError;

/// Everything the mock server answers from.
pub struct MockState {
    pub categories: CategoryMap,
    pub scenes: HashMap<ImageId, SceneRecord>,
    pub oracle: OracleConfig,
    pub model: String,
    /// Required credential; requests without it get 401.
    pub api_key: Option<String>,
    /// The first `n` requests on each route answer 503.
    pub transient_failures: u32,
    failures: Mutex<HashMap<String, u32>>,
}

impl MockState {
    /// `scenes` carry ground truth and the detections `/detect` serves.
    pub fn new(categories: CategoryMap, scenes: Vec<SceneRecord>, oracle: OracleConfig) -> Self {
        Self {
            categories,
            scenes: scenes.into_iter().map(|s| (s.image_id, s)).collect(),
            oracle,
            model: "vla-mock".to_string(),
            api_key: None,
            transient_failures: 0,
            failures: Mutex::new(HashMap::new()),
        }
    }

    fn authorized(&self, headers: &[(String, String)]) -> bool {
        let Some(key) = &self.api_key else { return true };
        headers.iter().any(|(k, v)| {
            (k.eq_ignore_ascii_case("authorization") && v.strip_prefix("Bearer ") == Some(key.as_str()))
                || (k.eq_ignore_ascii_case("x-api-key") && v == key)
        })
    }

    fn inject_failure(&self, route: &str) -> bool {
        let mut seen = self.failures.lock().expect("failure lock");
        let n = seen.entry(route.to_string()).or_insert(0);
        *n += 1;
        *n <= self.transient_failures
    }

    fn scene(&self, image_id: ImageId) -> Result<&SceneRecord, (u16, Value)> {
        self.scenes
            .get(&image_id)
            .ok_or_else(|| error(404, &format!("unknown image {image_id}")))
    }

    /// Routes one request. Pure apart from the failure counters.
    pub fn handle(&self, method: &str, route: &str, headers: &[(String, String)], body: &str) -> (u16, Value) {
        let route = route.split('?').next().unwrap_or(route);
        if method == "GET" && route == wire::HEALTH_ROUTE {
            return (200, json!({"status": "ok"}));
        }
        if method != "POST" {
            return error(405, "only POST is supported");
        }
        if !self.authorized(headers) {
            return error(401, "missing or wrong credential");
        }
        if self.inject_failure(route) {
            return error(503, "injected transient failure");
        }
        let body: Value = match serde_json::from_str(body) {
            Ok(v) => v,
            Err(e) => return error(400, &format!("body is not JSON: {e}")),
        };
        let out = match route {
            wire::CHAT_ROUTE => self.chat(&body),
            wire::DETECT_ROUTE => self.detect(&body),
            wire::CLASSIFY_ROUTE => self.classify(body),
            _ => Err(error(404, &format!("no route {route}"))),
        };
        out.unwrap_or_else(|e| e)
    }

    fn chat(&self, body: &Value) -> Result<(u16, Value), (u16, Value)> {
        let image_id = wire::chat_image_id(body).ok_or_else(|| error(400, "user field must be vla-image-<id>"))?;
        let text = wire::chat_user_text(body).ok_or_else(|| error(400, "no user message"))?;
        let scene = self.scene(image_id)?;
        let reply = if text.contains(CLOSING_QUESTION) {
            let lines = parse_prompt_lines(&text);
            let oracle_err = |e: vla_core::Error| error(422, &e.to_string());
            if lines.is_empty() {
                // Free-text prompts carry no ids; answer about the known detections.
                let verdicts = oracle_review(scene, &self.oracle).map_err(oracle_err)?;
                render_free_text_verdicts(&verdicts, &scene.detections)
            } else {
                let mut view = scene.clone();
                view.detections = lines
                    .iter()
                    .map(|l| {
                        Detection::new(
                            l.det_id,
                            image_id,
                            l.bbox,
                            l.label.clone(),
                            l.score.unwrap_or(1.0),
                            "prompt",
                        )
                    })
                    .collect::<Result<_, _>>()
                    .map_err(|e| error(400, &e.to_string()))?;
                render_structured_verdicts(&oracle_review(&view, &self.oracle).map_err(oracle_err)?)
            }
        } else {
            ground_truth_caption(scene)
        };
        Ok((200, wire::chat_reply(&self.model, &reply)))
    }

    fn detect(&self, body: &Value) -> Result<(u16, Value), (u16, Value)> {
        let image_id = body
            .get("image_id")
            .and_then(Value::as_u64)
            .ok_or_else(|| error(400, "image_id is required"))?;
        let scene = self.scene(image_id)?;
        let entries = wire::wire_detections(&scene.detections, &self.categories);
        Ok((200, serde_json::to_value(entries).expect("detections serialize")))
    }

    fn classify(&self, body: Value) -> Result<(u16, Value), (u16, Value)> {
        let req: ClassificationRequest =
            serde_json::from_value(body).map_err(|e| error(400, &format!("bad classify request: {e}")))?;
        if req.candidates.is_empty() {
            return Err(error(400, "candidates must not be empty"));
        }
        let scene = self.scene(req.image_id)?;
        if req.region.x2() > scene.width || req.region.y2() > scene.height {
            return Err(error(400, "region outside image"));
        }
        let c = oracle_classify(scene, &req, &self.oracle).map_err(|e| error(422, &e.to_string()))?;
        if !req.candidates.iter().any(|k| vla_core::model::same_label(k, &c.label)) {
            // The oracle answers "unknown" when the region matches nothing;
            // the wire contract only allows candidates, so report it as 422.
            return Err(error(422, &format!("no candidate fits region ({})", c.label)));
        }
        Ok((200, wire::classification_reply(&c)))
    }
}

fn error(status: u16, message: &str) -> (u16, Value) {
    (status, json!({"error": {"message": message}}))
}

/// Running server; stops when dropped or on [`MockServer::shutdown`].
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(bind: &str, state: MockState) -> Result<Self, GatewayError> {
        let server =
            tiny_http::Server::http(bind).map_err(|e| GatewayError::Server(format!("cannot bind {bind}: {e}")))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| GatewayError::Server("server has no IP address".into()))?;
        let server = Arc::new(server);
        let state = Arc::new(state);
        let srv = server.clone();
        let handle = std::thread::spawn(move || {
            for request in srv.incoming_requests() {
                let state = state.clone();
                std::thread::spawn(move || respond(&state, request));
            }
        });
        Ok(Self {
            server,
            addr,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn respond(state: &MockState, mut request: tiny_http::Request) {
    let mut body = String::new();
    let (status, value) = match request.as_reader().read_to_string(&mut body) {
        Ok(_) => {
            let headers: Vec<(String, String)> = request
                .headers()
                .iter()
                .map(|h| (h.field.as_str().to_string(), h.value.to_string()))
                .collect();
            state.handle(&request.method().to_string(), request.url(), &headers, &body)
        }
        Err(e) => error(400, &format!("unreadable body: {e}")),
    };
    log::debug!("{} {} -> {status}", request.method(), request.url());
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(value.to_string())
        .with_status_code(status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        log::warn!("failed to send response: {e}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vla_core::{BoundingBox, GroundTruthObject};

    fn state() -> MockState {
        let mut cats = CategoryMap::new();
        cats.insert(1, "airplane", true).unwrap();
        cats.insert(2, "orange", true).unwrap();
        let mut s = SceneRecord::new(1, 640.0, 480.0);
        s.annotated = true;
        let moon = BoundingBox::new(100.0, 350.0, 190.0, 480.0).unwrap();
        s.ground_truth.push(GroundTruthObject {
            id: 1,
            image_id: 1,
            bbox: moon,
            category_id: 0,
            label: "moon".into(),
            iscrowd: false,
            area: moon.area(),
        });
        s.detections
            .push(Detection::new(2, 1, moon, "orange", 0.9, "d").unwrap());
        MockState::new(cats, vec![s], OracleConfig::perfect(1))
    }

    #[test]
    fn health_and_routing_errors() {
        let st = state();
        assert_eq!(st.handle("GET", "/healthz", &[], "").0, 200);
        assert_eq!(st.handle("POST", "/nope", &[], "{}").0, 404);
        assert_eq!(st.handle("POST", "/detect", &[], "not json").0, 400);
        assert_eq!(st.handle("POST", "/detect", &[], r#"{"image_id": 42}"#).0, 404);
    }

    #[test]
    fn classify_moon_region() {
        let st = state();
        let body = r#"{"image_id":1,"det_id":2,"region":[100,350,190,480],"candidates":["airplane","orange","moon"]}"#;
        let (status, v) = st.handle("POST", "/classify", &[], body);
        assert_eq!(status, 200);
        assert_eq!(v["label"], "moon");
        let c = v["confidence"].as_f64().unwrap();
        assert!(c > 0.0 && c <= 1.0);
    }

    #[test]
    fn credential_and_injected_failures() {
        let mut st = state();
        st.api_key = Some("k".into());
        st.transient_failures = 1;
        let auth = [("Authorization".to_string(), "Bearer k".to_string())];
        let body = r#"{"image_id":1}"#;
        assert_eq!(st.handle("POST", "/detect", &[], body).0, 401);
        assert_eq!(st.handle("POST", "/detect", &auth, body).0, 503);
        assert_eq!(st.handle("POST", "/detect", &auth, body).0, 200);
    }
}
