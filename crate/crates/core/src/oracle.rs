//! Deterministic stand-ins for the three agents, answering from ground
//! truth with configurable error rates.
//!
//! Randomness is counter based: every draw comes from a ChaCha stream keyed
//! by `(seed, image-id, det-id, purpose)`, so outcomes do not depend on the
//! order in which images are processed.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Error, Result};
use crate::eval::greedy_iou_match;
use crate::geometry::iou;
use crate::model::{
    normalize_label, same_label, BoundingBox, CategoryMap, DetId, Detection, GroundTruthObject, ImageId, SceneRecord,
};
use crate::pipeline::{
    ChatKind, ChatRequest, Classification, ClassificationAgent, LinguisticAgent, VisualAgent, UNKNOWN_LABEL,
};
use crate::prompt::{
    render_free_text_verdicts, render_structured_verdicts, ClassificationRequest, Judgment, ResponseFormat, Verdict,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub seed: u64,
    /// Minimum IoU for a detection to count as covering a ground-truth object.
    #[serde(default = "default_match_iou")]
    pub match_iou: f64,
    /// Probability that a true label error is flagged.
    #[serde(default = "one")]
    pub alpha: f64,
    /// Probability that a correct detection is flagged.
    #[serde(default)]
    pub beta: f64,
    /// Probability that the classifier returns the true label.
    #[serde(default = "one")]
    pub gamma: f64,
}

fn default_match_iou() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl OracleConfig {
    pub fn perfect(seed: u64) -> Self {
        Self {
            seed,
            match_iou: 0.5,
            alpha: 1.0,
            beta: 0.0,
            gamma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("oracle {name} = {v} outside [0, 1]")));
            }
        }
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) {
            return Err(Error::Validation(format!(
                "match IoU {} outside (0, 1]",
                self.match_iou
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Draw {
    Review = 1,
    Classify = 2,
    Noise = 3,
}

/// Independent random stream for one `(seed, image, detection, purpose)`.
pub fn keyed_rng(seed: u64, image_id: ImageId, det_id: DetId, draw: Draw) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&image_id.to_le_bytes());
    key[16..24].copy_from_slice(&det_id.to_le_bytes());
    key[24..].copy_from_slice(&(draw as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Non-crowd ground truth with the highest IoU at or above `threshold`.
pub fn best_gt_match<'a>(scene: &'a SceneRecord, bbox: &BoundingBox, threshold: f64) -> Option<&'a GroundTruthObject> {
    let mut best: Option<(f64, &GroundTruthObject)> = None;
    for g in scene.ground_truth.iter().filter(|g| !g.iscrowd) {
        let v = iou(bbox, &g.bbox);
        if v >= threshold && v > 0.0 && best.is_none_or(|(b, _)| v > b) {
            best = Some((v, g));
        }
    }
    best.map(|(_, g)| g)
}

fn require_ground_truth(scene: &SceneRecord) -> Result<()> {
    if !scene.annotated {
        return Err(Error::OracleUnavailable(format!(
            "image {} has no ground truth",
            scene.image_id
        )));
    }
    Ok(())
}

/// Flags label errors with probability `alpha` and correct detections with
/// probability `beta`. Unmatched detections count as label-error candidates.
pub fn oracle_review(scene: &SceneRecord, cfg: &OracleConfig) -> Result<Vec<Verdict>> {
    require_ground_truth(scene)?;
    Ok(scene
        .detections
        .iter()
        .map(|det| {
            let matched = best_gt_match(scene, &det.bbox, cfg.match_iou);
            let is_error = matched.is_none_or(|g| !same_label(&g.label, &det.label));
            let u: f64 = keyed_rng(cfg.seed, scene.image_id, det.id, Draw::Review).gen();
            let flagged = if is_error { u < cfg.alpha } else { u < cfg.beta };
            if !flagged {
                return Verdict::reasonable(det.id);
            }
            let (suspected_label, rationale) = match matched {
                Some(g) if is_error => (
                    Some(normalize_label(&g.label)),
                    format!("the region looks like a {}", g.label),
                ),
                Some(_) => (None, "implausible in this scene".to_string()),
                None => (None, "no matching object in the scene".to_string()),
            };
            Verdict {
                det_id: det.id,
                judgment: Judgment::Unreasonable,
                suspected_label,
                rationale,
            }
        })
        .collect())
}

/// Returns the region's true label with probability `gamma` (confidence 1),
/// otherwise a uniformly chosen wrong candidate (confidence 0.5).
pub fn oracle_classify(
    scene: &SceneRecord,
    request: &ClassificationRequest,
    cfg: &OracleConfig,
) -> Result<Classification> {
    require_ground_truth(scene)?;
    if request.candidates.is_empty() {
        return Err(Error::Validation("classification request without candidates".into()));
    }
    if request.candidates.len() == 1 {
        return Ok(Classification {
            label: request.candidates[0].clone(),
            confidence: Some(1.0),
        });
    }
    let Some(truth) = best_gt_match(scene, &request.region, cfg.match_iou) else {
        return Ok(Classification {
            label: UNKNOWN_LABEL.to_string(),
            confidence: Some(0.0),
        });
    };
    let mut rng = keyed_rng(cfg.seed, request.image_id, request.det_id, Draw::Classify);
    let u: f64 = rng.gen();
    let truth_candidate = request.candidates.iter().find(|c| same_label(c, &truth.label));
    if let Some(t) = truth_candidate {
        if u < cfg.gamma {
            return Ok(Classification {
                label: t.clone(),
                confidence: Some(1.0),
            });
        }
    }
    let wrong: Vec<&String> = request
        .candidates
        .iter()
        .filter(|c| !same_label(c, &truth.label))
        .collect();
    let pick = wrong[rng.gen_range(0..wrong.len())];
    Ok(Classification {
        label: pick.clone(),
        confidence: Some(0.5),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub image_id: ImageId,
    pub det_id: DetId,
    pub original_label: String,
    pub injected_label: String,
}

/// Replaces each correctly labeled detection's label with a different
/// scoring-vocabulary label with probability `rate`. Correctness is judged
/// by one-to-one IoU matching against ground truth at `match_iou`.
pub fn inject_label_noise(
    scenes: &mut [SceneRecord],
    cats: &CategoryMap,
    rate: f64,
    seed: u64,
    match_iou: f64,
) -> Result<Vec<NoiseRecord>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Validation(format!("noise rate {rate} outside [0, 1]")));
    }
    let vocabulary = cats.scoring_names();
    let mut manifest = Vec::new();
    for scene in scenes.iter_mut() {
        let gts: Vec<&GroundTruthObject> = scene.ground_truth.iter().filter(|g| !g.iscrowd).collect();
        let gt_boxes: Vec<BoundingBox> = gts.iter().map(|g| g.bbox).collect();
        let det_boxes: Vec<BoundingBox> = scene.detections.iter().map(|d| d.bbox).collect();
        let matches = greedy_iou_match(&det_boxes, &gt_boxes, match_iou);
        for (det, m) in scene.detections.iter_mut().zip(matches) {
            let Some(gi) = m else { continue };
            if !same_label(&gts[gi].label, &det.label) {
                continue;
            }
            let others: Vec<&String> = vocabulary.iter().filter(|v| !same_label(v, &det.label)).collect();
            if others.is_empty() {
                continue;
            }
            let mut rng = keyed_rng(seed, scene.image_id, det.id, Draw::Noise);
            if rng.gen::<f64>() >= rate {
                continue;
            }
            let injected = others[rng.gen_range(0..others.len())].clone();
            manifest.push(NoiseRecord {
                image_id: scene.image_id,
                det_id: det.id,
                original_label: det.label.clone(),
                injected_label: injected.clone(),
            });
            det.label = injected;
        }
    }
    Ok(manifest)
}

/// File-backed detector: returns precomputed detections per image.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedDetector {
    by_image: HashMap<ImageId, Vec<Detection>>,
}

impl PrecomputedDetector {
    pub fn new(detections: Vec<Detection>) -> Self {
        let mut by_image: HashMap<ImageId, Vec<Detection>> = HashMap::new();
        for d in detections {
            by_image.entry(d.image_id).or_default().push(d);
        }
        Self { by_image }
    }

    pub fn for_image(&self, image_id: ImageId) -> Vec<Detection> {
        self.by_image.get(&image_id).cloned().unwrap_or_default()
    }
}

impl VisualAgent for PrecomputedDetector {
    fn detect(&self, scene: &SceneRecord) -> Result<Vec<Detection>, AgentError> {
        Ok(self.for_image(scene.image_id))
    }
}

/// Caption listing the ground-truth objects, e.g.
/// `The image shows 1 airplane and 2 birds.`
pub fn ground_truth_caption(scene: &SceneRecord) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for g in &scene.ground_truth {
        *counts.entry(normalize_label(&g.label)).or_default() += 1;
    }
    if counts.is_empty() {
        return "The image shows an empty scene.".to_string();
    }
    let parts: Vec<String> = counts
        .into_iter()
        .map(|(label, n)| {
            if n == 1 {
                format!("1 {label}")
            } else {
                format!("{n} {label}s")
            }
        })
        .collect();
    let listed = match parts.split_last() {
        Some((last, rest)) if !rest.is_empty() => format!("{} and {last}", rest.join(", ")),
        _ => parts.join(""),
    };
    format!("The image shows {listed}.")
}

fn oracle_unavailable(err: Error) -> AgentError {
    AgentError::Unavailable {
        endpoint: "oracle".to_string(),
        attempts: 1,
        reason: err.to_string(),
    }
}

/// Linguistic agent that captions from ground truth and reviews with
/// [`oracle_review`], answering in the requested response format.
#[derive(Clone, Copy, Debug)]
pub struct OracleLinguist {
    cfg: OracleConfig,
}

impl OracleLinguist {
    pub fn new(cfg: OracleConfig) -> Self {
        Self { cfg }
    }

    pub fn respond(&self, scene: &SceneRecord, kind: ChatKind, format: ResponseFormat) -> Result<String> {
        match kind {
            ChatKind::Caption => {
                require_ground_truth(scene)?;
                Ok(ground_truth_caption(scene))
            }
            ChatKind::Review => {
                let verdicts = oracle_review(scene, &self.cfg)?;
                Ok(match format {
                    ResponseFormat::StructuredJson => render_structured_verdicts(&verdicts),
                    ResponseFormat::FreeText => render_free_text_verdicts(&verdicts, &scene.detections),
                })
            }
        }
    }
}

impl LinguisticAgent for OracleLinguist {
    fn chat(&self, scene: &SceneRecord, request: &ChatRequest) -> Result<String, AgentError> {
        self.respond(scene, request.kind, request.format)
            .map_err(oracle_unavailable)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OracleClassifier {
    cfg: OracleConfig,
}

impl OracleClassifier {
    pub fn new(cfg: OracleConfig) -> Self {
        Self { cfg }
    }
}

impl ClassificationAgent for OracleClassifier {
    fn classify(&self, scene: &SceneRecord, request: &ClassificationRequest) -> Result<Classification, AgentError> {
        oracle_classify(scene, request, &self.cfg).map_err(oracle_unavailable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(b: [f64; 4]) -> BoundingBox {
        BoundingBox::try_from(b).unwrap()
    }

    fn gt(id: u64, label: &str, b: [f64; 4]) -> GroundTruthObject {
        GroundTruthObject {
            id,
            image_id: 1,
            bbox: bx(b),
            category_id: id,
            label: label.into(),
            iscrowd: false,
            area: bx(b).area(),
        }
    }

    fn moon_scene() -> SceneRecord {
        let mut s = SceneRecord::new(1, 640.0, 480.0);
        s.annotated = true;
        s.ground_truth = vec![
            gt(1, "airplane", [320.0, 49.0, 640.0, 150.0]),
            gt(2, "moon", [100.0, 350.0, 190.0, 480.0]),
        ];
        s.detections = vec![
            Detection::new(1, 1, bx([320.0, 49.0, 640.0, 150.0]), "airplane", 0.9, "detector").unwrap(),
            Detection::new(2, 1, bx([102.0, 352.0, 190.0, 478.0]), "orange", 0.6, "detector").unwrap(),
        ];
        s
    }

    fn request(scene: &SceneRecord, det: usize, candidates: &[&str]) -> ClassificationRequest {
        ClassificationRequest {
            image_id: scene.image_id,
            image: None,
            det_id: scene.detections[det].id,
            region: scene.detections[det].bbox,
            candidates: candidates.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn perfect_oracle_flags_the_orange() {
        let v = oracle_review(&moon_scene(), &OracleConfig::perfect(1)).unwrap();
        assert_eq!(v[0].judgment, Judgment::Reasonable);
        assert_eq!(v[1].judgment, Judgment::Unreasonable);
        assert_eq!(v[1].suspected_label.as_deref(), Some("moon"));
    }

    #[test]
    fn inert_oracle_flags_nothing() {
        let cfg = OracleConfig {
            alpha: 0.0,
            beta: 0.0,
            ..OracleConfig::perfect(3)
        };
        assert!(oracle_review(&moon_scene(), &cfg)
            .unwrap()
            .iter()
            .all(|v| !v.is_flagged()));
    }

    #[test]
    fn review_needs_ground_truth() {
        let mut s = moon_scene();
        s.annotated = false;
        assert!(matches!(
            oracle_review(&s, &OracleConfig::perfect(1)),
            Err(Error::OracleUnavailable(_))
        ));
    }

    #[test]
    fn flag_rate_tracks_alpha() {
        let mut s = SceneRecord::new(9, 1e6, 1e6);
        s.annotated = true;
        for k in 0..10_000u64 {
            let x = (k % 100) as f64 * 20.0;
            let y = (k / 100) as f64 * 20.0;
            s.ground_truth.push(gt(k + 1, "cat", [x, y, x + 10.0, y + 10.0]));
            s.detections
                .push(Detection::new(k + 1, 9, bx([x, y, x + 10.0, y + 10.0]), "dog", 0.5, "d").unwrap());
        }
        let cfg = OracleConfig {
            alpha: 0.5,
            ..OracleConfig::perfect(11)
        };
        let flagged = oracle_review(&s, &cfg)
            .unwrap()
            .iter()
            .filter(|v| v.is_flagged())
            .count();
        let frac = flagged as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn classify_examples() {
        let s = moon_scene();
        let cfg = OracleConfig::perfect(5);
        let c = oracle_classify(&s, &request(&s, 1, &["airplane", "orange", "moon"]), &cfg).unwrap();
        assert_eq!((c.label.as_str(), c.confidence), ("moon", Some(1.0)));

        let forced = OracleConfig { gamma: 0.0, ..cfg };
        let c = oracle_classify(&s, &request(&s, 1, &["moon", "other"]), &forced).unwrap();
        assert_eq!((c.label.as_str(), c.confidence), ("other", Some(0.5)));

        let c = oracle_classify(&s, &request(&s, 1, &["kite"]), &forced).unwrap();
        assert_eq!((c.label.as_str(), c.confidence), ("kite", Some(1.0)));

        let mut stray = request(&s, 1, &["moon", "orange"]);
        stray.region = bx([600.0, 400.0, 610.0, 410.0]);
        let c = oracle_classify(&s, &stray, &cfg).unwrap();
        assert_eq!((c.label.as_str(), c.confidence), (UNKNOWN_LABEL, Some(0.0)));
    }

    #[test]
    fn classify_is_deterministic() {
        let s = moon_scene();
        let cfg = OracleConfig {
            gamma: 0.3,
            ..OracleConfig::perfect(42)
        };
        let req = request(&s, 1, &["airplane", "orange", "moon", "kite", "bird"]);
        let a = oracle_classify(&s, &req, &cfg).unwrap();
        for _ in 0..5 {
            assert_eq!(oracle_classify(&s, &req, &cfg).unwrap(), a);
        }
    }

    fn noise_fixture(n: u64) -> (CategoryMap, Vec<SceneRecord>) {
        let mut cats = CategoryMap::new();
        for (id, name) in ["cat", "dog", "bird", "horse"].iter().enumerate() {
            cats.insert(id as u64 + 1, name, true).unwrap();
        }
        let mut s = SceneRecord::new(1, 1e6, 1e6);
        s.annotated = true;
        for k in 0..n {
            let x = (k % 100) as f64 * 20.0;
            let y = (k / 100) as f64 * 20.0;
            s.ground_truth.push(gt(k + 1, "cat", [x, y, x + 10.0, y + 10.0]));
            let label = if k % 10 == 0 { "dog" } else { "cat" };
            s.detections
                .push(Detection::new(k + 1, 1, bx([x, y, x + 10.0, y + 10.0]), label, 0.5, "d").unwrap());
        }
        (cats, vec![s])
    }

    #[test]
    fn noise_rate_bounds() {
        let (cats, mut scenes) = noise_fixture(100);
        assert!(inject_label_noise(&mut scenes, &cats, 1.5, 1, 0.5).is_err());
        assert!(inject_label_noise(&mut scenes, &cats, 0.0, 1, 0.5).unwrap().is_empty());

        let manifest = inject_label_noise(&mut scenes, &cats, 1.0, 1, 0.5).unwrap();
        assert_eq!(manifest.len(), 90);
        assert!(manifest
            .iter()
            .all(|m| m.original_label == "cat" && m.injected_label != "cat"));
        assert!(scenes[0].detections.iter().all(|d| d.label != "cat"));
    }

    #[test]
    fn noise_count_within_binomial_bounds() {
        // 5000 correct detections at rate 0.1: mean 500, sd sqrt(450) ~ 21.2;
        // 99% two-sided bound is +-2.576 sd.
        let mut cats = CategoryMap::new();
        cats.insert(1, "cat", true).unwrap();
        cats.insert(2, "dog", true).unwrap();
        let mut s = SceneRecord::new(1, 1e6, 1e6);
        s.annotated = true;
        for k in 0..5000u64 {
            let x = (k % 100) as f64 * 20.0;
            let y = (k / 100) as f64 * 20.0;
            s.ground_truth.push(gt(k + 1, "cat", [x, y, x + 10.0, y + 10.0]));
            s.detections
                .push(Detection::new(k + 1, 1, bx([x, y, x + 10.0, y + 10.0]), "cat", 1.0, "d").unwrap());
        }
        let mut scenes = vec![s];
        let n = inject_label_noise(&mut scenes, &cats, 0.1, 2024, 0.5).unwrap().len() as f64;
        let bound = 2.576 * (5000.0f64 * 0.1 * 0.9).sqrt();
        assert!((n - 500.0).abs() <= bound, "{n}");
    }

    #[test]
    fn caption_lists_ground_truth() {
        assert_eq!(
            ground_truth_caption(&moon_scene()),
            "The image shows 1 airplane and 1 moon."
        );
    }

    #[test]
    fn outcomes_do_not_depend_on_processing_order() {
        let mut scenes: Vec<SceneRecord> = (1..=5)
            .map(|id| {
                let mut s = moon_scene();
                s.image_id = id;
                s
            })
            .collect();
        let cfg = OracleConfig {
            alpha: 0.5,
            beta: 0.3,
            ..OracleConfig::perfect(8)
        };
        let forward: Vec<_> = scenes.iter().map(|s| oracle_review(s, &cfg).unwrap()).collect();
        scenes.reverse();
        let mut backward: Vec<_> = scenes.iter().map(|s| oracle_review(s, &cfg).unwrap()).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }
}
