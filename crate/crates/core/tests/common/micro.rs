//! Randomized micro-scenes: few images, few detections, coarse grids so
//! that score and IoU ties actually occur.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vla_core::{BoundingBox, CategoryMap, Detection, GroundTruthObject, SceneRecord};

pub const NAMES: [&str; 4] = ["cat", "dog", "bird", "kite"];

pub fn categories(n: usize) -> CategoryMap {
    let mut cats = CategoryMap::new();
    for (k, name) in NAMES.iter().take(n).enumerate() {
        cats.insert(k as u64 + 1, name, true).unwrap();
    }
    cats
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let side = [4.0, 16.0, 28.0, 36.0, 60.0, 100.0, 140.0];
    let w = side[rng.gen_range(0..side.len())] + rng.gen_range(0..3) as f64 * 2.0;
    let h = side[rng.gen_range(0..side.len())];
    let x = rng.gen_range(0..12) as f64 * 10.0;
    let y = rng.gen_range(0..12) as f64 * 10.0;
    BoundingBox::new(x, y, x + w, y + h).unwrap()
}

fn near(rng: &mut ChaCha8Rng, b: &BoundingBox) -> BoundingBox {
    let dx = rng.gen_range(-3..=3) as f64 * 2.0;
    let dy = rng.gen_range(-3..=3) as f64 * 2.0;
    let dw = rng.gen_range(-2..=2) as f64 * 2.0;
    let x1 = (b.x1() + dx).max(0.0);
    let y1 = (b.y1() + dy).max(0.0);
    let x2 = (b.x2() + dx + dw).max(x1 + 1.0);
    BoundingBox::new(x1, y1, x2, (b.y2() + dy).max(y1 + 1.0)).unwrap()
}

/// Up to 5 images with up to 10 detections each over up to 4 categories.
pub fn micro_scenes(seed: u64) -> (CategoryMap, Vec<SceneRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ncat = rng.gen_range(1..=4);
    let cats = categories(ncat);
    let mut scenes = Vec::new();
    let mut next_gt = 1;
    let mut next_det = 1;
    for image_id in 1..=rng.gen_range(1..=5u64) {
        let mut s = SceneRecord::new(image_id, 400.0, 400.0);
        s.annotated = true;
        for _ in 0..rng.gen_range(0..=6) {
            let bbox = random_box(&mut rng);
            let c = rng.gen_range(0..ncat);
            s.ground_truth.push(GroundTruthObject {
                id: next_gt,
                image_id,
                bbox,
                category_id: c as u64 + 1,
                label: NAMES[c].to_string(),
                iscrowd: rng.gen_bool(0.1),
                area: bbox.area(),
            });
            next_gt += 1;
        }
        for _ in 0..rng.gen_range(0..=10) {
            let bbox = if !s.ground_truth.is_empty() && rng.gen_bool(0.7) {
                let g = &s.ground_truth[rng.gen_range(0..s.ground_truth.len())];
                near(&mut rng, &g.bbox)
            } else {
                random_box(&mut rng)
            };
            let c = rng.gen_range(0..ncat);
            let score = rng.gen_range(1..=10) as f64 / 10.0;
            s.detections
                .push(Detection::new(next_det, image_id, bbox, NAMES[c], score, "detector").unwrap());
            next_det += 1;
        }
        scenes.push(s);
    }
    (cats, scenes)
}
