//! The three-stage review pipeline for one image: detect and caption,
//! review and flag, reclassify flagged regions.

use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Error, Result};
use crate::model::{same_label, BoundingBox, CategoryMap, DetId, Detection, ImageId, SceneRecord, Stage};
use crate::prompt::{
    build_caption_request, build_classification_request, build_review_prompt, parse_verdicts, ClassificationRequest,
    Judgment, PromptTemplates, ResponseFormat, Verdict,
};

pub const DETECTOR: &str = "detector";
pub const LINGUIST: &str = "linguistic";
pub const CLASSIFIER: &str = "classifier";

/// Label the classification agent returns when it cannot decide.
pub const UNKNOWN_LABEL: &str = "unknown";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatKind {
    Caption,
    Review,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub kind: ChatKind,
    pub format: ResponseFormat,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    #[serde(default)]
    pub confidence: Option<f64>,
}

pub trait VisualAgent: Send + Sync {
    fn detect(&self, scene: &SceneRecord) -> Result<Vec<Detection>, AgentError>;
}

pub trait LinguisticAgent: Send + Sync {
    fn chat(&self, scene: &SceneRecord, request: &ChatRequest) -> Result<String, AgentError>;
}

pub trait ClassificationAgent: Send + Sync {
    fn classify(&self, scene: &SceneRecord, request: &ClassificationRequest) -> Result<Classification, AgentError>;
}

#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub detector: &'a dyn VisualAgent,
    pub linguist: &'a dyn LinguisticAgent,
    pub classifier: &'a dyn ClassificationAgent,
}

/// What happens to a flagged detection the classifier could not relabel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncorrectablePolicy {
    #[default]
    RetainOriginal,
    Drop,
}

/// Reaction to an unparseable structured review response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolFallback {
    #[default]
    FreeText,
    AllReasonable,
    Fail,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub format: ResponseFormat,
    pub uncorrectable: UncorrectablePolicy,
    pub protocol_fallback: ProtocolFallback,
    /// Include detector confidences in the review prompt.
    pub include_scores: bool,
    pub templates: PromptTemplates,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disposition {
    Kept,
    Relabeled,
    Dropped,
    ExcludedFromExport,
}

/// Per-detection trail of one pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub image_id: ImageId,
    pub det_id: DetId,
    pub bbox: BoundingBox,
    pub original_label: String,
    pub original_score: f64,
    pub judgment: Judgment,
    pub suspected_label: Option<String>,
    pub classifier: Option<Classification>,
    pub final_label: String,
    pub final_score: f64,
    pub disposition: Disposition,
}

impl AuditRecord {
    pub fn flagged(&self) -> bool {
        self.judgment == Judgment::Unreasonable
    }

    pub fn relabeled(&self) -> bool {
        self.flagged() && self.disposition != Disposition::Dropped && self.final_label != self.original_label
    }
}

/// Counts over a run. Accumulation is order independent.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub images: usize,
    pub failed_images: Vec<ImageId>,
    pub detections: usize,
    pub flagged: usize,
    pub relabeled: usize,
    pub retained_after_flag: usize,
    pub dropped: usize,
    pub excluded: usize,
    pub exported: usize,
}

impl RunSummary {
    pub fn absorb(&mut self, records: &[AuditRecord]) {
        self.images += 1;
        for r in records {
            self.detections += 1;
            if r.flagged() {
                self.flagged += 1;
                if r.disposition == Disposition::Dropped {
                    self.dropped += 1;
                } else if r.relabeled() {
                    self.relabeled += 1;
                } else {
                    self.retained_after_flag += 1;
                }
            }
            match r.disposition {
                Disposition::ExcludedFromExport => self.excluded += 1,
                Disposition::Kept | Disposition::Relabeled => self.exported += 1,
                Disposition::Dropped => {}
            }
        }
    }

    pub fn record_failure(&mut self, image_id: ImageId) {
        self.images += 1;
        if let Err(pos) = self.failed_images.binary_search(&image_id) {
            self.failed_images.insert(pos, image_id);
        }
    }
}

fn stage_one(scene: &mut SceneRecord, agents: &Agents<'_>, opts: &PipelineOptions) -> Result<()> {
    let detections = agents.detector.detect(scene)?;
    scene.ingest_detections(detections);
    if scene.caption.is_none() {
        let request = ChatRequest {
            kind: ChatKind::Caption,
            format: opts.format,
            message: build_caption_request(scene, &opts.templates),
        };
        let caption = agents.linguist.chat(scene, &request)?;
        scene.caption = Some(caption.trim().to_string());
    }
    Ok(())
}

fn stage_two(scene: &mut SceneRecord, agents: &Agents<'_>, opts: &PipelineOptions) -> Result<()> {
    if scene.detections.is_empty() {
        scene.verdicts.clear();
        return Ok(());
    }
    let caption = scene.caption.clone().unwrap_or_default();
    let prompt = build_review_prompt(
        &caption,
        &scene.detections,
        opts.format,
        opts.include_scores,
        &opts.templates,
    )?;
    let request = ChatRequest {
        kind: ChatKind::Review,
        format: opts.format,
        message: prompt.text,
    };
    let response = agents.linguist.chat(scene, &request)?;
    let verdicts = match parse_verdicts(&response, &scene.detections, opts.format) {
        Ok(v) => v,
        Err(Error::Protocol { .. }) if opts.format == ResponseFormat::StructuredJson => match opts.protocol_fallback {
            ProtocolFallback::FreeText => parse_verdicts(&response, &scene.detections, ResponseFormat::FreeText)?,
            ProtocolFallback::AllReasonable => scene.detections.iter().map(|d| Verdict::reasonable(d.id)).collect(),
            ProtocolFallback::Fail => return parse_verdicts(&response, &scene.detections, opts.format).map(|_| ()),
        },
        Err(e) => return Err(e),
    };
    for (det, v) in scene.detections.iter_mut().zip(&verdicts) {
        let change = match (&v.judgment, &v.suspected_label) {
            (Judgment::Reasonable, _) => "reasonable".to_string(),
            (Judgment::Unreasonable, Some(s)) => format!("unreasonable (likely {s})"),
            (Judgment::Unreasonable, None) => "unreasonable".to_string(),
        };
        det.record(Stage::Review, change, LINGUIST);
    }
    scene.verdicts = verdicts;
    Ok(())
}

fn stage_three(
    scene: &mut SceneRecord,
    cats: &CategoryMap,
    agents: &Agents<'_>,
    opts: &PipelineOptions,
) -> Result<Vec<AuditRecord>> {
    let mut corrected = Vec::with_capacity(scene.detections.len());
    let mut records = Vec::with_capacity(scene.detections.len());
    let reasonable: Vec<Verdict> = scene.detections.iter().map(|d| Verdict::reasonable(d.id)).collect();
    let verdicts = if scene.verdicts.len() == scene.detections.len() {
        scene.verdicts.clone()
    } else {
        reasonable
    };

    for (det, verdict) in scene.detections.iter().zip(&verdicts) {
        let mut out = det.clone();
        let mut outcome = None;
        let mut dropped = false;
        if verdict.is_flagged() {
            let request = build_classification_request(scene, det, verdict, cats);
            let result = match agents.classifier.classify(scene, &request) {
                Ok(c) if request.candidates.iter().any(|k| same_label(k, &c.label)) => Ok(c),
                // "unknown" and out-of-candidate labels are both uncorrectable
                Ok(c) => Err(c),
                Err(AgentError::Protocol { .. }) => Err(Classification {
                    label: UNKNOWN_LABEL.to_string(),
                    confidence: None,
                }),
                Err(e) => return Err(e.into()),
            };
            match result {
                Ok(c) => {
                    if !same_label(&c.label, &det.label) {
                        let label = cats
                            .by_name(&c.label)
                            .map(|k| k.name.clone())
                            .unwrap_or_else(|| c.label.trim().to_string());
                        out.relabel(&label, c.confidence, CLASSIFIER)?;
                    } else {
                        out.record(Stage::Correct, "confirmed original label", CLASSIFIER);
                    }
                    outcome = Some(c);
                }
                Err(c) => {
                    match opts.uncorrectable {
                        UncorrectablePolicy::RetainOriginal => {
                            out.record(Stage::Correct, "uncorrectable, retained", CLASSIFIER)
                        }
                        UncorrectablePolicy::Drop => {
                            out.record(Stage::Correct, "uncorrectable, dropped", CLASSIFIER);
                            dropped = true;
                        }
                    }
                    outcome = Some(c);
                }
            }
        }

        let disposition = if dropped {
            Disposition::Dropped
        } else if !cats.is_scoring(&out.label) {
            Disposition::ExcludedFromExport
        } else if out.label != det.label {
            Disposition::Relabeled
        } else {
            Disposition::Kept
        };
        match disposition {
            Disposition::Dropped => {}
            Disposition::ExcludedFromExport => {
                out.record(Stage::Export, "excluded: outside scoring vocabulary", "exporter")
            }
            _ => out.record(Stage::Export, "exported", "exporter"),
        }
        records.push(AuditRecord {
            image_id: scene.image_id,
            det_id: det.id,
            bbox: det.bbox,
            original_label: det.label.clone(),
            original_score: det.score,
            judgment: verdict.judgment,
            suspected_label: verdict.suspected_label.clone(),
            classifier: outcome,
            final_label: out.label.clone(),
            final_score: out.score,
            disposition,
        });
        if !dropped {
            corrected.push(out);
        }
    }
    scene.corrected = Some(corrected);
    Ok(records)
}

/// Runs all three stages on one scene, leaving its verdicts and corrected
/// detections populated. Returns one audit record per detection.
pub fn process_scene(
    scene: &mut SceneRecord,
    cats: &CategoryMap,
    agents: &Agents<'_>,
    opts: &PipelineOptions,
) -> Result<Vec<AuditRecord>> {
    stage_one(scene, agents, opts)?;
    stage_two(scene, agents, opts)?;
    stage_three(scene, cats, agents, opts)
}

/// Sequential run over many scenes. A scene whose agents fail is counted
/// in `failed_images` and left uncorrected.
pub fn run_scenes(
    scenes: &mut [SceneRecord],
    cats: &CategoryMap,
    agents: &Agents<'_>,
    opts: &PipelineOptions,
) -> (RunSummary, Vec<AuditRecord>) {
    let mut summary = RunSummary::default();
    let mut audit = Vec::new();
    for scene in scenes.iter_mut() {
        match process_scene(scene, cats, agents, opts) {
            Ok(records) => {
                summary.absorb(&records);
                audit.extend(records);
            }
            Err(_) => summary.record_failure(scene.image_id),
        }
    }
    (summary, audit)
}
