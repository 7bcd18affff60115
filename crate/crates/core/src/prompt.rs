//! Prompts sent to the linguistic agent and parsing of its verdicts.
//!
//! Two response formats are supported. `structured-json` asks for a JSON
//! array of verdict objects keyed by det-id:
//!
//! ```json
//! [{"det_id": 2, "judgment": "unreasonable", "suspected_label": "moon", "rationale": "..."}]
//! ```
//!
//! `free-text` accepts sentences such as
//! `Orange detection is unreasonable, as the object is likely the moon`,
//! matched to detections by label and list order.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_label, BoundingBox, CategoryMap, DetId, Detection, ImageId, SceneRecord};

/// Closing question of every review prompt.
pub const CLOSING_QUESTION: &str = "Are these results reasonable based on the scene context?";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResponseFormat {
    #[default]
    #[serde(rename = "structured-json")]
    StructuredJson,
    #[serde(rename = "free-text")]
    FreeText,
}

impl ResponseFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResponseFormat::StructuredJson => "structured-json",
            ResponseFormat::FreeText => "free-text",
        }
    }
}

/// Prompt wording. Defaults follow the phrasing the pipeline was designed
/// around; every field can be overridden from the run config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    /// `{image}` is replaced by the image reference.
    pub caption_request: String,
    /// Prefix placed before the caption in the review prompt.
    pub caption_prefix: String,
    pub detections_intro: String,
    pub structured_directive: String,
    pub free_text_directive: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            caption_request: "Generate a contextual caption for the image {image}. \
                Summarize the scene in one to three sentences, beginning with \"The image shows\"."
                .to_string(),
            caption_prefix: "Scene caption:".to_string(),
            detections_intro: "The object detector identified the following objects:".to_string(),
            structured_directive: "Respond only with a JSON array containing exactly one object per \
                detection: {\"det_id\": <id in brackets>, \"judgment\": \"reasonable\" or \
                \"unreasonable\", \"suspected_label\": <the likely true object as a string, or null>, \
                \"rationale\": <short explanation>}."
                .to_string(),
            free_text_directive: "Answer with one sentence per detection, of the form \
                \"<Label> detection is reasonable.\" or \"<Label> detection is unreasonable, as the \
                object is likely the <object>.\""
                .to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionLine {
    pub det_id: DetId,
    pub label: String,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewPrompt {
    pub caption: String,
    pub lines: Vec<DetectionLine>,
    pub format: ResponseFormat,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgment {
    Reasonable,
    Unreasonable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub det_id: DetId,
    pub judgment: Judgment,
    pub suspected_label: Option<String>,
    pub rationale: String,
}

impl Verdict {
    pub fn reasonable(det_id: DetId) -> Self {
        Self {
            det_id,
            judgment: Judgment::Reasonable,
            suspected_label: None,
            rationale: String::new(),
        }
    }

    pub fn is_flagged(&self) -> bool {
        self.judgment == Judgment::Unreasonable
    }
}

/// Rounds half away from zero (what `f64::round` does).
pub fn round_coord(v: f64) -> i64 {
    v.round() as i64
}

/// `(x1, y1), (x2, y2)` with integer coordinates.
pub fn format_corners(b: &BoundingBox) -> String {
    format!(
        "({}, {}), ({}, {})",
        round_coord(b.x1()),
        round_coord(b.y1()),
        round_coord(b.x2()),
        round_coord(b.y2())
    )
}

/// First letter upper-cased, as labels appear in prompts.
pub fn display_label(label: &str) -> String {
    let label = label.trim();
    let mut chars = label.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn build_caption_request(scene: &SceneRecord, templates: &PromptTemplates) -> String {
    templates.caption_request.replace("{image}", &scene.image_ref())
}

pub fn build_review_prompt(
    caption: &str,
    dets: &[Detection],
    format: ResponseFormat,
    include_scores: bool,
    templates: &PromptTemplates,
) -> Result<ReviewPrompt> {
    if dets.is_empty() {
        return Err(Error::EmptyInput("review prompt needs at least one detection"));
    }
    let lines: Vec<DetectionLine> = dets
        .iter()
        .map(|d| DetectionLine {
            det_id: d.id,
            label: d.label.clone(),
            bbox: d.bbox,
            score: include_scores.then_some(d.score),
        })
        .collect();

    let mut text = String::new();
    if !caption.trim().is_empty() {
        text.push_str(&format!("{} {}\n\n", templates.caption_prefix, caption.trim()));
    }
    text.push_str(&templates.detections_intro);
    text.push('\n');
    for line in &lines {
        text.push_str(&format!(
            "- {}, coordinates: {}",
            display_label(&line.label),
            format_corners(&line.bbox)
        ));
        if let Some(s) = line.score {
            text.push_str(&format!(", confidence: {s:.2}"));
        }
        if format == ResponseFormat::StructuredJson {
            text.push_str(&format!(" [{}]", line.det_id));
        }
        text.push('\n');
    }
    text.push_str(CLOSING_QUESTION);
    text.push_str("\n\n");
    text.push_str(match format {
        ResponseFormat::StructuredJson => &templates.structured_directive,
        ResponseFormat::FreeText => &templates.free_text_directive,
    });

    Ok(ReviewPrompt {
        caption: caption.to_string(),
        lines,
        format,
        text,
    })
}

/// Recovers the detection lines of a rendered structured-mode prompt.
///
/// Used by mock servers that only see the prompt text.
pub fn parse_prompt_lines(text: &str) -> Vec<DetectionLine> {
    text.lines().filter_map(parse_prompt_line).collect()
}

fn parse_prompt_line(line: &str) -> Option<DetectionLine> {
    let rest = line.trim().strip_prefix("- ")?;
    let (label, rest) = rest.split_once(", coordinates: ")?;
    let open = rest.rfind('[')?;
    let det_id = rest[open + 1..].trim_end().strip_suffix(']')?.parse().ok()?;
    let nums: Vec<f64> = rest[..open]
        .split(|c: char| !(c.is_ascii_digit() || c == '-' || c == '.'))
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse().ok())
        .collect();
    if nums.len() < 4 {
        return None;
    }
    Some(DetectionLine {
        det_id,
        label: normalize_label(label),
        bbox: BoundingBox::new(nums[0], nums[1], nums[2], nums[3]).ok()?,
        score: nums.get(4).copied(),
    })
}

#[derive(Deserialize)]
struct WireVerdict {
    det_id: DetId,
    judgment: String,
    #[serde(default)]
    suspected_label: Option<String>,
    #[serde(default)]
    rationale: Option<String>,
}

/// Serializes verdicts in the structured response schema.
pub fn render_structured_verdicts(verdicts: &[Verdict]) -> String {
    serde_json::to_string(verdicts).expect("verdicts serialize")
}

/// Renders verdicts as free-text sentences naming each detection's label.
pub fn render_free_text_verdicts(verdicts: &[Verdict], dets: &[Detection]) -> String {
    let labels: HashMap<DetId, &str> = dets.iter().map(|d| (d.id, d.label.as_str())).collect();
    let sentences: Vec<String> = verdicts
        .iter()
        .filter_map(|v| {
            let label = display_label(labels.get(&v.det_id)?);
            Some(match (&v.judgment, &v.suspected_label) {
                (Judgment::Reasonable, _) => format!("{label} detection is reasonable."),
                (Judgment::Unreasonable, Some(s)) if s.contains(char::is_whitespace) => {
                    format!("{label} detection is unreasonable, as the object is likely the \"{s}\".")
                }
                (Judgment::Unreasonable, Some(s)) => {
                    format!("{label} detection is unreasonable, as the object is likely the {s}.")
                }
                (Judgment::Unreasonable, None) => format!("{label} detection is unreasonable."),
            })
        })
        .collect();
    sentences.join(" ")
}

fn protocol(message: impl Into<String>, raw: &str) -> Error {
    Error::Protocol {
        message: message.into(),
        raw: raw.to_string(),
    }
}

/// Parses a linguistic-agent response into exactly one verdict per
/// detection, in detection order. Unmentioned detections are reasonable.
pub fn parse_verdicts(response: &str, dets: &[Detection], format: ResponseFormat) -> Result<Vec<Verdict>> {
    if response.trim().is_empty() {
        return Err(protocol("empty response", response));
    }
    let found = match format {
        ResponseFormat::StructuredJson => parse_structured(response, dets)?,
        ResponseFormat::FreeText => parse_free_text(response, dets),
    };
    Ok(dets
        .iter()
        .map(|d| found.get(&d.id).cloned().unwrap_or_else(|| Verdict::reasonable(d.id)))
        .collect())
}

fn parse_structured(response: &str, dets: &[Detection]) -> Result<HashMap<DetId, Verdict>> {
    let (start, end) = match (response.find('['), response.rfind(']')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(protocol("no JSON array in structured response", response)),
    };
    let wire: Vec<WireVerdict> = serde_json::from_str(&response[start..=end])
        .map_err(|e| protocol(format!("invalid verdict JSON: {e}"), response))?;
    let known: HashSet<DetId> = dets.iter().map(|d| d.id).collect();
    let mut out = HashMap::new();
    for w in wire {
        let judgment = match w.judgment.trim().to_lowercase().as_str() {
            "reasonable" => Judgment::Reasonable,
            "unreasonable" => Judgment::Unreasonable,
            other => {
                return Err(protocol(
                    format!("unknown judgment {other:?} for det {}", w.det_id),
                    response,
                ))
            }
        };
        if !known.contains(&w.det_id) {
            return Err(protocol(format!("verdict for unknown det {}", w.det_id), response));
        }
        let suspected_label = match judgment {
            Judgment::Unreasonable => w.suspected_label.filter(|s| !s.trim().is_empty()),
            Judgment::Reasonable => None,
        };
        let verdict = Verdict {
            det_id: w.det_id,
            judgment,
            suspected_label,
            rationale: w.rationale.unwrap_or_default(),
        };
        if out.insert(w.det_id, verdict).is_some() {
            return Err(protocol(format!("duplicate verdict for det {}", w.det_id), response));
        }
    }
    Ok(out)
}

const DETECTION_IS: &str = " detection is ";

fn parse_free_text(response: &str, dets: &[Detection]) -> HashMap<DetId, Verdict> {
    let mut out = HashMap::new();
    let labels: Vec<String> = dets.iter().map(|d| normalize_label(&d.label)).collect();
    for sentence in split_sentences(response) {
        let lower = sentence.to_lowercase();
        let Some(pos) = lower.find(DETECTION_IS) else {
            continue;
        };
        let subject = lower[..pos].trim_end();
        let tail = &lower[pos + DETECTION_IS.len()..];
        let judgment = if tail.starts_with("unreasonable") || tail.starts_with("not reasonable") {
            Judgment::Unreasonable
        } else if tail.starts_with("reasonable") {
            Judgment::Reasonable
        } else {
            continue;
        };
        // Longest label ending the subject, first unassigned detection wins.
        let best = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| ends_with_word(subject, l))
            .map(|(_, l)| l.len())
            .max();
        let Some(len) = best else { continue };
        let Some(idx) = labels
            .iter()
            .enumerate()
            .position(|(k, l)| l.len() == len && ends_with_word(subject, l) && !out.contains_key(&dets[k].id))
        else {
            continue;
        };
        let suspected_label = match judgment {
            Judgment::Unreasonable => suspected_from(&sentence[pos + DETECTION_IS.len()..]),
            Judgment::Reasonable => None,
        };
        out.insert(
            dets[idx].id,
            Verdict {
                det_id: dets[idx].id,
                judgment,
                suspected_label,
                rationale: sentence.trim().to_string(),
            },
        );
    }
    out
}

fn ends_with_word(text: &str, word: &str) -> bool {
    text.strip_suffix(word)
        .is_some_and(|head| head.is_empty() || head.ends_with(|c: char| !c.is_alphanumeric()))
}

fn split_sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?', '\n', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Label after "likely the" or "likely a/an": a quoted phrase or one word.
fn suspected_from(clause: &str) -> Option<String> {
    let lower = clause.to_lowercase();
    let mut at = None;
    for marker in ["likely the ", "likely an ", "likely a "] {
        if let Some(p) = lower.find(marker) {
            at = Some(p + marker.len());
            break;
        }
    }
    let rest = clause[at?..].trim_start();
    let quotes = ['"', '\'', '`', '\u{201c}', '\u{201d}'];
    if let Some(open) = rest.chars().next().filter(|c| quotes.contains(c)) {
        let inner = &rest[open.len_utf8()..];
        let close = inner.find(quotes).unwrap_or(inner.len());
        let phrase = normalize_label(&inner[..close]);
        return (!phrase.is_empty()).then_some(phrase);
    }
    let word: String = rest
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '-' || *c == '_')
        .collect();
    (!word.is_empty()).then(|| word.to_lowercase())
}

/// Region reclassification request for the classification agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRequest {
    pub image_id: ImageId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub det_id: DetId,
    pub region: BoundingBox,
    pub candidates: Vec<String>,
}

impl ClassificationRequest {
    pub fn describe(&self) -> String {
        format!("Region {}", format_corners(&self.region))
    }
}

/// Candidates are the scoring vocabulary plus the suspected label, without
/// case-insensitive duplicates.
pub fn build_classification_request(
    scene: &SceneRecord,
    det: &Detection,
    verdict: &Verdict,
    cats: &CategoryMap,
) -> ClassificationRequest {
    let mut seen = HashSet::new();
    let candidates = cats
        .scoring_names()
        .into_iter()
        .chain(verdict.suspected_label.clone())
        .filter(|c| seen.insert(normalize_label(c)))
        .collect();
    ClassificationRequest {
        image_id: scene.image_id,
        image: scene.file_name.clone(),
        det_id: det.id,
        region: det.bbox,
        candidates,
    }
}
