//! Agent implementations over the gateway transports.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::Value;
use vla_core::coco::{load_coco_results, ParseMode};
use vla_core::model::same_label;
use vla_core::oracle::{OracleClassifier, OracleConfig, OracleLinguist, PrecomputedDetector};
use vla_core::pipeline::{Agents, ChatRequest, Classification, ClassificationAgent, LinguisticAgent, VisualAgent};
use vla_core::prompt::ClassificationRequest;
use vla_core::{AgentError, CategoryMap, Detection, ImageId, SceneRecord};

use crate::config::{AgentEndpointConfig, Transport};
use crate::envelope::{AgentRole, AttemptRecord, Transcript};
use crate::http::Endpoint;
use crate::wire;
use crate::GatewayError;

const DEFAULT_MODEL: &str = "mock";

fn protocol(message: String, raw: &Value) -> AgentError {
    AgentError::Protocol {
        message,
        raw: raw.to_string(),
    }
}

pub struct HttpLinguist {
    endpoint: Endpoint,
    model: String,
    image_base: Option<String>,
}

impl HttpLinguist {
    pub fn new(endpoint: Endpoint) -> Self {
        let cfg = endpoint.config();
        Self {
            model: cfg.model.clone().unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            image_base: cfg.image_base.clone(),
            endpoint,
        }
    }

    fn image_url(&self, scene: &SceneRecord, request: &ChatRequest) -> Option<String> {
        if request.kind != vla_core::pipeline::ChatKind::Caption {
            return None;
        }
        Some(format!("{}{}", self.image_base.as_ref()?, scene.file_name.as_ref()?))
    }
}

impl LinguisticAgent for HttpLinguist {
    fn chat(&self, scene: &SceneRecord, request: &ChatRequest) -> Result<String, AgentError> {
        let url = self.image_url(scene, request);
        let body = wire::chat_body(&self.model, scene.image_id, &request.message, url.as_deref());
        let purpose = wire::chat_purpose(request, url.is_some());
        let reply = self.endpoint.post(scene.image_id, &purpose, wire::CHAT_ROUTE, &body)?;
        wire::chat_reply_content(&reply).map_err(|m| protocol(m, &reply))
    }
}

pub struct HttpDetector {
    endpoint: Endpoint,
    cats: CategoryMap,
}

impl HttpDetector {
    pub fn new(endpoint: Endpoint, cats: CategoryMap) -> Self {
        Self { endpoint, cats }
    }
}

impl VisualAgent for HttpDetector {
    fn detect(&self, scene: &SceneRecord) -> Result<Vec<Detection>, AgentError> {
        let body = wire::detect_body(scene);
        let reply = self
            .endpoint
            .post(scene.image_id, "detect", wire::DETECT_ROUTE, &body)?;
        wire::detections_from_wire(reply.clone(), scene, &self.cats).map_err(|m| protocol(m, &reply))
    }
}

pub struct HttpClassifier {
    endpoint: Endpoint,
}

impl HttpClassifier {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

impl ClassificationAgent for HttpClassifier {
    fn classify(&self, scene: &SceneRecord, request: &ClassificationRequest) -> Result<Classification, AgentError> {
        let body = serde_json::to_value(request).expect("request serializes");
        let reply = self
            .endpoint
            .post(scene.image_id, "classify", wire::CLASSIFY_ROUTE, &body)?;
        wire::classification_from_wire(reply.clone(), &request.candidates).map_err(|m| protocol(m, &reply))
    }
}

fn answered(response: Value) -> AttemptRecord {
    AttemptRecord {
        response: Some(response),
        ..Default::default()
    }
}

/// Records in-process calls in the same wire shape an HTTP endpoint would see.
struct Recorder {
    transcript: Arc<Transcript>,
    role: AgentRole,
    endpoint: String,
}

impl Recorder {
    fn run<T>(
        &self,
        image_id: ImageId,
        purpose: &str,
        request: Value,
        call: impl FnOnce() -> Result<T, AgentError>,
        render: impl FnOnce(&T) -> AttemptRecord,
    ) -> Result<T, AgentError> {
        let ticket = self.transcript.open_call(image_id, self.role, purpose, &self.endpoint);
        let sent = self.transcript.now(image_id);
        let out = call();
        let record = match &out {
            Ok(v) => render(v),
            Err(e) => AttemptRecord {
                error: Some(e.to_string()),
                ..Default::default()
            },
        };
        self.transcript.record(&ticket, 1, &request, sent, record);
        out
    }
}

pub struct RecordedDetector<A> {
    inner: A,
    cats: CategoryMap,
    rec: Recorder,
}

impl<A: VisualAgent> RecordedDetector<A> {
    pub fn new(inner: A, cats: CategoryMap, transcript: Arc<Transcript>, endpoint: &str) -> Self {
        Self {
            inner,
            cats,
            rec: Recorder {
                transcript,
                role: AgentRole::Detector,
                endpoint: endpoint.to_string(),
            },
        }
    }
}

impl<A: VisualAgent> VisualAgent for RecordedDetector<A> {
    fn detect(&self, scene: &SceneRecord) -> Result<Vec<Detection>, AgentError> {
        self.rec.run(
            scene.image_id,
            "detect",
            wire::detect_body(scene),
            || self.inner.detect(scene),
            |dets| {
                answered(serde_json::to_value(wire::wire_detections(dets, &self.cats)).expect("detections serialize"))
            },
        )
    }
}

pub struct RecordedLinguist<A> {
    inner: A,
    model: String,
    rec: Recorder,
}

impl<A: LinguisticAgent> RecordedLinguist<A> {
    pub fn new(inner: A, model: &str, transcript: Arc<Transcript>, endpoint: &str) -> Self {
        Self {
            inner,
            model: model.to_string(),
            rec: Recorder {
                transcript,
                role: AgentRole::Linguistic,
                endpoint: endpoint.to_string(),
            },
        }
    }
}

impl<A: LinguisticAgent> LinguisticAgent for RecordedLinguist<A> {
    fn chat(&self, scene: &SceneRecord, request: &ChatRequest) -> Result<String, AgentError> {
        self.rec.run(
            scene.image_id,
            &wire::chat_purpose(request, false),
            wire::chat_body(&self.model, scene.image_id, &request.message, None),
            || self.inner.chat(scene, request),
            |text| answered(wire::chat_reply(&self.model, text)),
        )
    }
}

pub struct RecordedClassifier<A> {
    inner: A,
    rec: Recorder,
}

impl<A: ClassificationAgent> RecordedClassifier<A> {
    pub fn new(inner: A, transcript: Arc<Transcript>, endpoint: &str) -> Self {
        Self {
            inner,
            rec: Recorder {
                transcript,
                role: AgentRole::Classifier,
                endpoint: endpoint.to_string(),
            },
        }
    }
}

impl<A: ClassificationAgent> ClassificationAgent for RecordedClassifier<A> {
    fn classify(&self, scene: &SceneRecord, request: &ClassificationRequest) -> Result<Classification, AgentError> {
        self.rec.run(
            scene.image_id,
            "classify",
            serde_json::to_value(request).expect("request serializes"),
            || self.inner.classify(scene, request),
            |c| {
                let mut rec = answered(wire::classification_reply(c));
                if !request.candidates.iter().any(|k| same_label(k, &c.label)) {
                    // Mirrors the 422 an HTTP classifier gives for an unfit region.
                    rec.error = Some(format!("no candidate fits the region (answered {:?})", c.label));
                }
                rec
            },
        )
    }
}

/// Linguistic mock answering from a fixed script: the k-th chat of an image
/// gets the k-th reply, and the last reply repeats.
pub struct ScriptedLinguist {
    replies: Vec<String>,
    calls: Mutex<HashMap<ImageId, usize>>,
}

impl ScriptedLinguist {
    pub fn new(replies: Vec<String>) -> Self {
        Self {
            replies,
            calls: Mutex::new(HashMap::new()),
        }
    }
}

impl LinguisticAgent for ScriptedLinguist {
    fn chat(&self, scene: &SceneRecord, _request: &ChatRequest) -> Result<String, AgentError> {
        let mut calls = self.calls.lock().expect("script lock");
        let k = calls.entry(scene.image_id).or_insert(0);
        let reply = self
            .replies
            .get((*k).min(self.replies.len().saturating_sub(1)))
            .cloned();
        *k += 1;
        reply.ok_or_else(|| AgentError::Unavailable {
            endpoint: "mock:script".into(),
            attempts: 1,
            reason: "empty script".into(),
        })
    }
}

/// Endpoint settings for the three roles.
#[derive(Clone, Debug)]
pub struct AgentConfigs {
    pub detector: AgentEndpointConfig,
    pub linguistic: AgentEndpointConfig,
    pub classifier: AgentEndpointConfig,
}

impl AgentConfigs {
    pub fn mock() -> Self {
        Self {
            detector: AgentEndpointConfig::mock(),
            linguistic: AgentEndpointConfig::mock(),
            classifier: AgentEndpointConfig::mock(),
        }
    }

    pub fn get(&self, role: AgentRole) -> &AgentEndpointConfig {
        match role {
            AgentRole::Detector => &self.detector,
            AgentRole::Linguistic => &self.linguistic,
            AgentRole::Classifier => &self.classifier,
        }
    }

    pub fn all_offline(&self) -> bool {
        AgentRole::ALL.iter().all(|r| !self.get(*r).transport.is_http())
    }
}

/// Inputs for constructing agents that do not come from endpoint configs.
pub struct AgentContext<'a> {
    pub categories: &'a CategoryMap,
    pub scenes: &'a [SceneRecord],
    pub oracle: OracleConfig,
    /// Detections served by a mock detector.
    pub detections: Vec<Detection>,
    pub parse_mode: ParseMode,
}

pub struct AgentSet {
    detector: Box<dyn VisualAgent>,
    linguist: Box<dyn LinguisticAgent>,
    classifier: Box<dyn ClassificationAgent>,
    transcript: Arc<Transcript>,
}

impl AgentSet {
    pub fn agents(&self) -> Agents<'_> {
        Agents {
            detector: self.detector.as_ref(),
            linguist: self.linguist.as_ref(),
            classifier: self.classifier.as_ref(),
        }
    }

    pub fn transcript(&self) -> &Arc<Transcript> {
        &self.transcript
    }
}

fn endpoint_for(
    role: AgentRole,
    cfg: &AgentEndpointConfig,
    transcript: &Arc<Transcript>,
) -> Result<Endpoint, GatewayError> {
    let key = cfg.credential(role)?;
    Ok(Endpoint::new(role, cfg.clone(), key, transcript.clone()))
}

/// Validates the configs, resolves credentials and builds recording agents.
pub fn build_agents(
    configs: &AgentConfigs,
    ctx: AgentContext<'_>,
    transcript: Arc<Transcript>,
) -> Result<AgentSet, GatewayError> {
    for role in AgentRole::ALL {
        configs.get(role).validate(role, &format!("agents.{role}"))?;
    }
    let t = &transcript;

    let d = &configs.detector;
    let detector: Box<dyn VisualAgent> = match d.transport {
        Transport::HttpVision => Box::new(HttpDetector::new(
            endpoint_for(AgentRole::Detector, d, t)?,
            ctx.categories.clone(),
        )),
        Transport::File => {
            let path = d.path.as_ref().expect("validated");
            let loaded = load_coco_results(path, ctx.categories, ctx.scenes, ctx.parse_mode)?;
            let name = format!("file:{}", path.display());
            Box::new(RecordedDetector::new(
                PrecomputedDetector::new(loaded.detections),
                ctx.categories.clone(),
                t.clone(),
                &name,
            ))
        }
        _ => Box::new(RecordedDetector::new(
            PrecomputedDetector::new(ctx.detections),
            ctx.categories.clone(),
            t.clone(),
            "mock",
        )),
    };

    let l = &configs.linguistic;
    let model = l.model.clone().unwrap_or_else(|| DEFAULT_MODEL.to_string());
    let linguist: Box<dyn LinguisticAgent> = match (&l.transport, &l.script) {
        (Transport::HttpChat, _) => Box::new(HttpLinguist::new(endpoint_for(AgentRole::Linguistic, l, t)?)),
        (_, Some(script)) => Box::new(RecordedLinguist::new(
            ScriptedLinguist::new(script.clone()),
            &model,
            t.clone(),
            "mock:script",
        )),
        _ => Box::new(RecordedLinguist::new(
            OracleLinguist::new(ctx.oracle),
            &model,
            t.clone(),
            "mock",
        )),
    };

    let c = &configs.classifier;
    let classifier: Box<dyn ClassificationAgent> = match c.transport {
        Transport::HttpVision => Box::new(HttpClassifier::new(endpoint_for(AgentRole::Classifier, c, t)?)),
        _ => Box::new(RecordedClassifier::new(
            OracleClassifier::new(ctx.oracle),
            t.clone(),
            "mock",
        )),
    };

    Ok(AgentSet {
        detector,
        linguist,
        classifier,
        transcript,
    })
}
