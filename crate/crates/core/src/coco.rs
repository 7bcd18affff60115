//! COCO annotation and results files.
//!
//! Boxes cross this boundary in COCO's `[x, y, w, h]` form and are held
//! internally in corner form.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, CategoryMap, Detection, GroundTruthObject, SceneRecord};

/// Strict parsing rejects questionable entries; lenient parsing skips and
/// counts them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: Option<f64>,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One entry of a COCO results array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedAnnotations {
    pub categories: CategoryMap,
    pub scenes: Vec<SceneRecord>,
    /// Entries skipped in lenient mode, one message each.
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedResults {
    pub detections: Vec<Detection>,
    pub skipped: Vec<String>,
}

/// Counts from writing a results file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub written: usize,
    /// Detections whose final label is outside the scoring vocabulary.
    pub excluded: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_coco_annotations(path: &Path, mode: ParseMode) -> Result<LoadedAnnotations> {
    parse_coco_annotations(&read_text(path)?, mode)
}

pub fn parse_coco_annotations(text: &str, mode: ParseMode) -> Result<LoadedAnnotations> {
    let dataset: CocoDataset = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
    annotations_from_dataset(dataset, mode)
}

pub fn annotations_from_dataset(dataset: CocoDataset, mode: ParseMode) -> Result<LoadedAnnotations> {
    let mut categories = CategoryMap::new();
    for c in &dataset.categories {
        categories.insert(c.id, &c.name, true)?;
    }

    let mut scenes = Vec::with_capacity(dataset.images.len());
    let mut index = HashMap::new();
    for img in &dataset.images {
        if index.insert(img.id, scenes.len()).is_some() {
            return Err(Error::Validation(format!("duplicate image id {}", img.id)));
        }
        let mut scene = SceneRecord::new(img.id, img.width, img.height);
        scene.file_name = img.file_name.clone();
        scene.annotated = true;
        scenes.push(scene);
    }

    let mut skipped = Vec::new();
    for ann in dataset.annotations {
        let Some(label) = categories.name_of(ann.category_id).map(str::to_string) else {
            return Err(Error::UnknownCategory {
                annotation_id: ann.id,
                category_id: ann.category_id,
            });
        };
        let Some(&slot) = index.get(&ann.image_id) else {
            match mode {
                ParseMode::Strict => {
                    return Err(Error::UnknownImage {
                        annotation_id: ann.id,
                        image_id: ann.image_id,
                    })
                }
                ParseMode::Lenient => {
                    skipped.push(format!(
                        "annotation {} references unknown image {}",
                        ann.id, ann.image_id
                    ));
                    continue;
                }
            }
        };
        let bbox = BoundingBox::from_xywh(ann.bbox)?;
        let area = ann.area.unwrap_or_else(|| bbox.area());
        if area <= 0.0 && mode == ParseMode::Strict {
            return Err(Error::Validation(format!(
                "annotation {} has non-positive area {area}",
                ann.id
            )));
        }
        scenes[slot].ground_truth.push(GroundTruthObject {
            id: ann.id,
            image_id: ann.image_id,
            bbox,
            category_id: ann.category_id,
            label,
            iscrowd: ann.iscrowd != 0,
            area,
        });
    }

    Ok(LoadedAnnotations {
        categories,
        scenes,
        skipped,
    })
}

pub fn read_results_entries(path: &Path) -> Result<Vec<CocoResult>> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::from_json(e, &text))
}

/// Loads a results array, assigning det-ids `1..` in file order. Boxes are
/// clamped to the bounds of their image.
pub fn load_coco_results(
    path: &Path,
    cats: &CategoryMap,
    scenes: &[SceneRecord],
    mode: ParseMode,
) -> Result<LoadedResults> {
    detections_from_results(read_results_entries(path)?, cats, scenes, mode)
}

pub fn detections_from_results(
    entries: Vec<CocoResult>,
    cats: &CategoryMap,
    scenes: &[SceneRecord],
    mode: ParseMode,
) -> Result<LoadedResults> {
    let dims: HashMap<u64, (f64, f64)> = scenes.iter().map(|s| (s.image_id, (s.width, s.height))).collect();
    let mut out = LoadedResults::default();
    for (k, entry) in entries.into_iter().enumerate() {
        if !(0.0..=1.0).contains(&entry.score) {
            return Err(Error::Validation(format!(
                "result {k} has score {} outside [0, 1]",
                entry.score
            )));
        }
        let problem = match (dims.get(&entry.image_id), cats.name_of(entry.category_id)) {
            (None, _) => Some(format!("result {k} references unknown image {}", entry.image_id)),
            (_, None) => Some(format!("result {k} references unknown category {}", entry.category_id)),
            _ => None,
        };
        if let Some(msg) = problem {
            match mode {
                ParseMode::Strict => return Err(Error::Validation(msg)),
                ParseMode::Lenient => {
                    out.skipped.push(msg);
                    continue;
                }
            }
        }
        let (w, h) = dims[&entry.image_id];
        let label = cats.name_of(entry.category_id).unwrap_or_default();
        let bbox = BoundingBox::from_xywh(entry.bbox)?.clamp_to(w, h);
        out.detections.push(Detection::new(
            k as u64 + 1,
            entry.image_id,
            bbox,
            label,
            entry.score,
            "detector",
        )?);
    }
    Ok(out)
}

/// Groups detections onto their scenes (clamping at ingest).
pub fn attach_detections(scenes: &mut [SceneRecord], detections: Vec<Detection>) {
    let mut by_image: HashMap<u64, Vec<Detection>> = HashMap::new();
    for d in detections {
        by_image.entry(d.image_id).or_default().push(d);
    }
    for scene in scenes {
        let dets = by_image.remove(&scene.image_id).unwrap_or_default();
        scene.ingest_detections(dets);
    }
}

/// Final detections as COCO results, skipping labels outside the scoring
/// vocabulary.
pub fn results_from_scenes(scenes: &[SceneRecord], cats: &CategoryMap) -> (Vec<CocoResult>, ExportSummary) {
    let mut summary = ExportSummary::default();
    let mut results = Vec::new();
    for scene in scenes {
        for det in scene.final_detections() {
            match cats.scoring_id(&det.label) {
                Some(category_id) => {
                    summary.written += 1;
                    results.push(CocoResult {
                        image_id: det.image_id,
                        category_id,
                        bbox: det.bbox.to_xywh(),
                        score: det.score,
                    });
                }
                None => summary.excluded += 1,
            }
        }
    }
    (results, summary)
}

pub fn write_coco_results(scenes: &[SceneRecord], path: &Path, cats: &CategoryMap) -> Result<ExportSummary> {
    let (results, summary) = results_from_scenes(scenes, cats);
    write_json(path, &results)?;
    Ok(summary)
}

/// Annotation document describing the scenes' ground truth.
pub fn dataset_from_scenes(scenes: &[SceneRecord], cats: &CategoryMap) -> CocoDataset {
    CocoDataset {
        images: scenes
            .iter()
            .map(|s| CocoImage {
                id: s.image_id,
                width: s.width,
                height: s.height,
                file_name: s.file_name.clone(),
            })
            .collect(),
        annotations: scenes
            .iter()
            .flat_map(|s| s.ground_truth.iter())
            .map(|g| CocoAnnotation {
                id: g.id,
                image_id: g.image_id,
                category_id: g.category_id,
                bbox: g.bbox.to_xywh(),
                area: Some(g.area),
                iscrowd: g.iscrowd as u8,
            })
            .collect(),
        categories: cats
            .iter()
            .map(|c| CocoCategory {
                id: c.id,
                name: c.name.clone(),
                supercategory: None,
            })
            .collect(),
    }
}

pub fn write_coco_annotations(scenes: &[SceneRecord], path: &Path, cats: &CategoryMap) -> Result<()> {
    write_json(path, &dataset_from_scenes(scenes, cats))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Image ids present in a set of scenes.
pub fn image_ids(scenes: &[SceneRecord]) -> HashSet<u64> {
    scenes.iter().map(|s| s.image_id).collect()
}
