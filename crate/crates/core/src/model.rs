//! Domain types shared by every pipeline stage.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::Verdict;

pub type ImageId = u64;
pub type DetId = u64;

/// Axis-aligned box in corner form, pixel units, origin at the top-left.
///
/// Serialized as `[x1, y1, x2, y2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::Validation(format!(
                "box coordinates must be finite: ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::Validation(format!(
                "box corners out of order: ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Converts a COCO `[x, y, w, h]` box.
    pub fn from_xywh(xywh: [f64; 4]) -> Result<Self> {
        let [x, y, w, h] = xywh;
        if w < 0.0 || h < 0.0 {
            return Err(Error::Validation(format!("negative box extent: [{x}, {y}, {w}, {h}]")));
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> Self {
        let cx = |v: f64| v.clamp(0.0, width.max(0.0));
        let cy = |v: f64| v.clamp(0.0, height.max(0.0));
        Self {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}), ({}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Canonical form used for label comparisons.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

pub fn same_label(a: &str, b: &str) -> bool {
    normalize_label(a) == normalize_label(b)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    /// Whether the evaluator can score this category.
    pub scoring: bool,
}

/// Bidirectional category id/name registry.
#[derive(Clone, Debug, Default)]
pub struct CategoryMap {
    categories: Vec<Category>,
    by_id: HashMap<u64, usize>,
    by_name: HashMap<String, usize>,
}

impl CategoryMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u64, name: &str, scoring: bool) -> Result<()> {
        let key = normalize_label(name);
        if key.is_empty() {
            return Err(Error::Validation(format!("category {id} has an empty name")));
        }
        if self.by_id.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate category id {id}")));
        }
        if self.by_name.contains_key(&key) {
            return Err(Error::Validation(format!("duplicate category name {name:?}")));
        }
        let idx = self.categories.len();
        self.categories.push(Category {
            id,
            name: name.trim().to_string(),
            scoring,
        });
        self.by_id.insert(id, idx);
        self.by_name.insert(key, idx);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter()
    }

    pub fn get(&self, id: u64) -> Option<&Category> {
        self.by_id.get(&id).map(|&i| &self.categories[i])
    }

    pub fn by_name(&self, name: &str) -> Option<&Category> {
        self.by_name.get(&normalize_label(name)).map(|&i| &self.categories[i])
    }

    pub fn name_of(&self, id: u64) -> Option<&str> {
        self.get(id).map(|c| c.name.as_str())
    }

    /// Category id of a label that belongs to the scoring vocabulary.
    pub fn scoring_id(&self, name: &str) -> Option<u64> {
        self.by_name(name).filter(|c| c.scoring).map(|c| c.id)
    }

    pub fn is_scoring(&self, name: &str) -> bool {
        self.scoring_id(name).is_some()
    }

    /// Scoring-vocabulary names in registration order.
    pub fn scoring_names(&self) -> Vec<String> {
        self.categories
            .iter()
            .filter(|c| c.scoring)
            .map(|c| c.name.clone())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Detect,
    Review,
    Correct,
    Export,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: Stage,
    /// Verdict or label change recorded by the stage.
    pub change: String,
    /// Agent that produced the change.
    pub source: String,
}

/// One predicted object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: DetId,
    pub image_id: ImageId,
    pub bbox: BoundingBox,
    pub label: String,
    pub score: f64,
    history: Vec<StageEntry>,
}

impl Detection {
    pub fn new(
        id: DetId,
        image_id: ImageId,
        bbox: BoundingBox,
        label: impl Into<String>,
        score: f64,
        source: &str,
    ) -> Result<Self> {
        check_score(score)?;
        Ok(Self {
            id,
            image_id,
            bbox,
            label: label.into(),
            score,
            history: vec![StageEntry {
                stage: Stage::Detect,
                change: "detected".to_string(),
                source: source.to_string(),
            }],
        })
    }

    pub fn history(&self) -> &[StageEntry] {
        &self.history
    }

    pub fn record(&mut self, stage: Stage, change: impl Into<String>, source: &str) {
        self.history.push(StageEntry {
            stage,
            change: change.into(),
            source: source.to_string(),
        });
    }

    /// Replaces the label (and optionally the score), recording the change.
    pub fn relabel(&mut self, label: &str, score: Option<f64>, source: &str) -> Result<()> {
        if let Some(s) = score {
            check_score(s)?;
            self.score = s;
        }
        let change = format!("{} -> {}", self.label, label);
        self.label = label.to_string();
        self.record(Stage::Correct, change, source);
        Ok(())
    }
}

fn check_score(score: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Validation(format!("score {score} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: u64,
    pub image_id: ImageId,
    pub bbox: BoundingBox,
    pub category_id: u64,
    pub label: String,
    pub iscrowd: bool,
    pub area: f64,
}

/// All state for one image as it moves through the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image_id: ImageId,
    pub width: f64,
    pub height: f64,
    pub file_name: Option<String>,
    /// Whether ground truth was loaded for this image (it may still be empty).
    pub annotated: bool,
    pub ground_truth: Vec<GroundTruthObject>,
    pub detections: Vec<Detection>,
    pub caption: Option<String>,
    pub verdicts: Vec<Verdict>,
    /// Detections after correction; `None` until stage 3 has run.
    pub corrected: Option<Vec<Detection>>,
}

impl SceneRecord {
    pub fn new(image_id: ImageId, width: f64, height: f64) -> Self {
        Self {
            image_id,
            width,
            height,
            file_name: None,
            annotated: false,
            ground_truth: Vec::new(),
            detections: Vec::new(),
            caption: None,
            verdicts: Vec::new(),
            corrected: None,
        }
    }

    /// Stores raw detections, clamping every box to the image bounds.
    pub fn ingest_detections(&mut self, detections: Vec<Detection>) {
        let (w, h) = (self.width, self.height);
        self.detections = detections
            .into_iter()
            .map(|mut d| {
                d.bbox = d.bbox.clamp_to(w, h);
                d
            })
            .collect();
    }

    /// Corrected detections when available, raw detections otherwise.
    pub fn final_detections(&self) -> &[Detection] {
        self.corrected.as_deref().unwrap_or(&self.detections)
    }

    pub fn image_ref(&self) -> String {
        match &self.file_name {
            Some(name) => name.clone(),
            None => format!("image {}", self.image_id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coco_box_converts_to_corners() {
        let b = BoundingBox::from_xywh([100.0, 350.0, 90.0, 130.0]).unwrap();
        assert_eq!(<[f64; 4]>::from(b), [100.0, 350.0, 190.0, 480.0]);
    }

    #[test]
    fn rejects_inverted_and_non_finite_boxes() {
        assert!(BoundingBox::new(5.0, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BoundingBox::from_xywh([0.0, 0.0, -1.0, 1.0]).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[3, 0, 1, 1]").is_err());
    }

    #[test]
    fn clamp_keeps_box_inside_image() {
        let b = BoundingBox::new(-10.0, 5.0, 700.0, 500.0).unwrap();
        let c = b.clamp_to(640.0, 480.0);
        assert_eq!(<[f64; 4]>::from(c), [0.0, 5.0, 640.0, 480.0]);
    }

    #[test]
    fn category_names_are_unique_case_insensitively() {
        let mut cats = CategoryMap::new();
        cats.insert(1, "airplane", true).unwrap();
        assert!(cats.insert(2, " Airplane ", true).is_err());
        assert!(cats.insert(1, "orange", true).is_err());
        cats.insert(2, "moon", false).unwrap();
        assert_eq!(cats.scoring_id("AIRPLANE"), Some(1));
        assert_eq!(cats.scoring_id("moon"), None);
        assert_eq!(cats.scoring_names(), vec!["airplane".to_string()]);
    }

    #[test]
    fn detection_history_starts_at_detect() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Detection::new(1, 1, b, "cat", 1.5, "detector").is_err());
        let mut d = Detection::new(1, 1, b, "orange", 0.8, "detector").unwrap();
        d.relabel("moon", None, "classifier").unwrap();
        assert_eq!(d.score, 0.8);
        let stages: Vec<_> = d.history().iter().map(|e| e.stage).collect();
        assert_eq!(stages, vec![Stage::Detect, Stage::Correct]);
        assert_eq!(d.history()[1].change, "orange -> moon");
    }

    proptest! {
        #[test]
        fn corner_xywh_conversion_is_an_involution(
            x in -1e4f64..1e4, y in -1e4f64..1e4, w in 0f64..1e4, h in 0f64..1e4,
        ) {
            let b = BoundingBox::new(x, y, x + w, y + h).unwrap();
            let back = BoundingBox::from_xywh(b.to_xywh()).unwrap();
            let (a, c): ([f64; 4], [f64; 4]) = (b.into(), back.into());
            for k in 0..4 {
                prop_assert!((a[k] - c[k]).abs() <= 1e-9);
            }
        }
    }
}
