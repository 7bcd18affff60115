//! Synthetic scenes with controlled overlap, for desk-scale runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::model::{BoundingBox, CategoryMap, Detection, GroundTruthObject, SceneRecord};

pub const COCO_CLASSES: [&str; 80] = [
    "person",
    "bicycle",
    "car",
    "motorcycle",
    "airplane",
    "bus",
    "train",
    "truck",
    "boat",
    "traffic light",
    "fire hydrant",
    "stop sign",
    "parking meter",
    "bench",
    "bird",
    "cat",
    "dog",
    "horse",
    "sheep",
    "cow",
    "elephant",
    "bear",
    "zebra",
    "giraffe",
    "backpack",
    "umbrella",
    "handbag",
    "tie",
    "suitcase",
    "frisbee",
    "skis",
    "snowboard",
    "sports ball",
    "kite",
    "baseball bat",
    "baseball glove",
    "skateboard",
    "surfboard",
    "tennis racket",
    "bottle",
    "wine glass",
    "cup",
    "fork",
    "knife",
    "spoon",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "orange",
    "broccoli",
    "carrot",
    "hot dog",
    "pizza",
    "donut",
    "cake",
    "chair",
    "couch",
    "potted plant",
    "bed",
    "dining table",
    "toilet",
    "tv",
    "laptop",
    "mouse",
    "remote",
    "keyboard",
    "cell phone",
    "microwave",
    "oven",
    "toaster",
    "sink",
    "refrigerator",
    "book",
    "clock",
    "vase",
    "scissors",
    "teddy bear",
    "hair drier",
    "toothbrush",
];

const MAX_ATTEMPTS: usize = 10_000;
const MIN_SIDE: f64 = 8.0;
const CLUSTER_MIN_IOU: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapRegime {
    /// Pairwise IoU is exactly zero.
    Disjoint,
    /// Boxes after the first are jittered copies of an earlier box.
    Clustered,
    /// Each box is free-placed or clustered with equal probability.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub images: usize,
    pub width: f64,
    pub height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub regime: OverlapRegime,
    pub categories: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            images: 10,
            width: 640.0,
            height: 480.0,
            min_objects: 1,
            max_objects: 6,
            regime: OverlapRegime::Mixed,
            categories: 8,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects < 1 || self.max_objects < self.min_objects {
            return Err(Error::Validation(format!(
                "objects per image must satisfy 1 <= min <= max, got {}..={}",
                self.min_objects, self.max_objects
            )));
        }
        if self.categories < 2 {
            return Err(Error::Validation("at least two categories are required".into()));
        }
        if self.width < 2.0 * MIN_SIDE || self.height < 2.0 * MIN_SIDE {
            return Err(Error::Validation(format!(
                "image {}x{} is too small",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Ground truth plus a perfect detection set (every GT box, score 1.0).
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub categories: CategoryMap,
    pub scenes: Vec<SceneRecord>,
}

impl SynthOutput {
    pub fn detections(&self) -> Vec<Detection> {
        self.scenes.iter().flat_map(|s| s.detections.iter().cloned()).collect()
    }
}

pub fn category_name(k: usize) -> String {
    COCO_CLASSES
        .get(k)
        .map_or_else(|| format!("class{}", k + 1), |s| s.to_string())
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn free_box(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> BoundingBox {
    // Side lengths span the small, medium and large COCO strata.
    let max_side = (spec.width.min(spec.height) / 2.5).max(MIN_SIDE + 1.0);
    let w = round2(rng.gen_range(MIN_SIDE..max_side));
    let h = round2((w * rng.gen_range(0.5..2.0)).clamp(MIN_SIDE, spec.height - 1.0));
    let x = round2(rng.gen_range(0.0..(spec.width - w).max(0.5)));
    let y = round2(rng.gen_range(0.0..(spec.height - h).max(0.5)));
    BoundingBox::new(x, y, (x + w).min(spec.width), (y + h).min(spec.height)).expect("ordered corners")
}

fn jittered(rng: &mut ChaCha8Rng, anchor: &BoundingBox, spec: &SynthSpec) -> Option<BoundingBox> {
    let (w, h) = (anchor.width(), anchor.height());
    let nw = round2(w * rng.gen_range(0.85..1.15));
    let nh = round2(h * rng.gen_range(0.85..1.15));
    let x = round2(anchor.x1() + w * rng.gen_range(-0.15..0.15));
    let y = round2(anchor.y1() + h * rng.gen_range(-0.15..0.15));
    if x < 0.0 || y < 0.0 || x + nw > spec.width || y + nh > spec.height || nw < MIN_SIDE || nh < MIN_SIDE {
        return None;
    }
    let b = BoundingBox::new(x, y, x + nw, y + nh).ok()?;
    let v = iou(&b, anchor);
    (CLUSTER_MIN_IOU..0.95).contains(&v).then_some(b)
}

fn place(rng: &mut ChaCha8Rng, placed: &[BoundingBox], spec: &SynthSpec, image_id: u64) -> Result<BoundingBox> {
    for _ in 0..MAX_ATTEMPTS {
        let clustered = match spec.regime {
            OverlapRegime::Disjoint => false,
            OverlapRegime::Clustered => !placed.is_empty(),
            OverlapRegime::Mixed => !placed.is_empty() && rng.gen_bool(0.5),
        };
        if clustered {
            let anchor = placed[rng.gen_range(0..placed.len())];
            if let Some(b) = jittered(rng, &anchor, spec) {
                return Ok(b);
            }
            continue;
        }
        let b = free_box(rng, spec);
        if spec.regime != OverlapRegime::Disjoint || placed.iter().all(|p| iou(p, &b) == 0.0) {
            return Ok(b);
        }
    }
    Err(Error::SpecInfeasible(format!(
        "could not place object {} in image {image_id} within {MAX_ATTEMPTS} attempts",
        placed.len() + 1
    )))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut categories = CategoryMap::new();
    for k in 0..spec.categories {
        categories.insert(k as u64 + 1, &category_name(k), true)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scenes = Vec::with_capacity(spec.images);
    let mut next_id = 1u64;
    for i in 0..spec.images {
        let image_id = i as u64 + 1;
        let mut scene = SceneRecord::new(image_id, spec.width, spec.height);
        scene.file_name = Some(format!("synth_{image_id:06}.jpg"));
        scene.annotated = true;
        let count = rng.gen_range(spec.min_objects..=spec.max_objects);
        let mut placed = Vec::with_capacity(count);
        for _ in 0..count {
            let bbox = place(&mut rng, &placed, spec, image_id)?;
            placed.push(bbox);
            let cat = rng.gen_range(0..spec.categories);
            let label = category_name(cat);
            scene.ground_truth.push(GroundTruthObject {
                id: next_id,
                image_id,
                bbox,
                category_id: cat as u64 + 1,
                label: label.clone(),
                iscrowd: false,
                area: bbox.area(),
            });
            scene
                .detections
                .push(Detection::new(next_id, image_id, bbox, label, 1.0, "synth")?);
            next_id += 1;
        }
        scenes.push(scene);
    }
    Ok(SynthOutput { categories, scenes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou_weights;

    fn spec(regime: OverlapRegime) -> SynthSpec {
        SynthSpec {
            images: 20,
            min_objects: 2,
            max_objects: 6,
            regime,
            seed: 17,
            ..Default::default()
        }
    }

    #[test]
    fn disjoint_regime_has_unit_weights() {
        let out = generate(&spec(OverlapRegime::Disjoint)).unwrap();
        for s in &out.scenes {
            let boxes: Vec<_> = s.ground_truth.iter().map(|g| g.bbox).collect();
            assert!(iou_weights(&boxes).unwrap().iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn clustered_regime_overlaps() {
        let out = generate(&spec(OverlapRegime::Clustered)).unwrap();
        let found = out.scenes.iter().any(|s| {
            let g = &s.ground_truth;
            (0..g.len()).any(|i| (i + 1..g.len()).any(|j| iou(&g[i].bbox, &g[j].bbox) >= 0.3))
        });
        assert!(found);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec(OverlapRegime::Mixed)).unwrap();
        let b = generate(&spec(OverlapRegime::Mixed)).unwrap();
        assert_eq!(a.scenes, b.scenes);
    }

    #[test]
    fn boxes_stay_inside_image() {
        for regime in [OverlapRegime::Disjoint, OverlapRegime::Clustered, OverlapRegime::Mixed] {
            for s in generate(&spec(regime)).unwrap().scenes {
                for g in &s.ground_truth {
                    assert!(g.bbox.x1() >= 0.0 && g.bbox.x2() <= s.width);
                    assert!(g.bbox.y1() >= 0.0 && g.bbox.y2() <= s.height);
                    assert!(g.area > 0.0);
                }
            }
        }
    }

    #[test]
    fn infeasible_and_invalid_specs() {
        let crowded = SynthSpec {
            width: 20.0,
            height: 20.0,
            min_objects: 50,
            max_objects: 50,
            regime: OverlapRegime::Disjoint,
            ..Default::default()
        };
        assert!(matches!(generate(&crowded), Err(Error::SpecInfeasible(_))));
        assert!(generate(&SynthSpec {
            categories: 1,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            min_objects: 0,
            ..Default::default()
        })
        .is_err());
    }
}
