//! Brute-force COCO box AP, written independently of `vla_core::eval`.
//!
//! Matching is redone per threshold from scratch, and interpolated
//! precision at recall `r` is computed directly as the maximum precision
//! over every ranked prefix whose recall reaches `r`.

use vla_core::{BoundingBox, CategoryMap, Detection, GroundTruthObject, SceneRecord};

pub const THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceReport {
    pub ap_50_95: Option<f64>,
    pub ap_50: Option<f64>,
    pub ap_75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

fn overlap(d: &BoundingBox, g: &BoundingBox, crowd: bool) -> f64 {
    let ix = (d.x2().min(g.x2()) - d.x1().max(g.x1())).max(0.0);
    let iy = (d.y2().min(g.y2()) - d.y1().max(g.y1())).max(0.0);
    let inter = ix * iy;
    let da = (d.x2() - d.x1()) * (d.y2() - d.y1());
    let ga = (g.x2() - g.x1()) * (g.y2() - g.y1());
    let union = if crowd { da } else { da + ga - inter };
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn in_range(area: f64, range: (f64, f64)) -> bool {
    area >= range.0 && area <= range.1
}

/// (score, id, is_tp) for every non-ignored detection of one category.
fn ranked(
    scenes: &[SceneRecord],
    cats: &CategoryMap,
    cat: u64,
    range: (f64, f64),
    thr: f64,
) -> (Vec<(f64, u64, bool)>, usize) {
    let mut out = Vec::new();
    let mut positives = 0;
    for s in scenes {
        let gts: Vec<&GroundTruthObject> = s.ground_truth.iter().filter(|g| g.category_id == cat).collect();
        let ignore: Vec<bool> = gts.iter().map(|g| g.iscrowd || !in_range(g.area, range)).collect();
        positives += ignore.iter().filter(|i| !**i).count();

        let mut dets: Vec<&Detection> = s
            .final_detections()
            .iter()
            .filter(|d| cats.scoring_id(&d.label) == Some(cat))
            .collect();
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.id.cmp(&b.id)));
        dets.truncate(100);

        let mut taken = vec![false; gts.len()];
        let cutoff = thr.min(1.0 - 1e-10);
        for d in dets {
            let pick = |want_ignored: bool, taken: &[bool]| {
                let mut best: Option<(usize, f64)> = None;
                for (gi, g) in gts.iter().enumerate() {
                    if ignore[gi] != want_ignored || (taken[gi] && !g.iscrowd) {
                        continue;
                    }
                    let v = overlap(&d.bbox, &g.bbox, g.iscrowd);
                    let floor = best.map_or(cutoff, |(_, b)| b);
                    if v >= floor {
                        best = Some((gi, v));
                    }
                }
                best.map(|(gi, _)| gi)
            };
            let matched = pick(false, &taken).or_else(|| pick(true, &taken));
            match matched {
                Some(gi) => {
                    taken[gi] = true;
                    if !ignore[gi] {
                        out.push((d.score, d.id, true));
                    }
                }
                None => {
                    let area = (d.bbox.x2() - d.bbox.x1()) * (d.bbox.y2() - d.bbox.y1());
                    if in_range(area, range) {
                        out.push((d.score, d.id, false));
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    (out, positives)
}

fn ap_for(scenes: &[SceneRecord], cats: &CategoryMap, cat: u64, range: (f64, f64), thr: f64) -> Option<f64> {
    let (ranked, positives) = ranked(scenes, cats, cat, range, thr);
    if positives == 0 {
        return None;
    }
    let mut prefix = Vec::new();
    let mut tp = 0usize;
    for (k, (_, _, hit)) in ranked.iter().enumerate() {
        tp += *hit as usize;
        prefix.push((tp as f64 / positives as f64, tp as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let best = prefix
            .iter()
            .filter(|(rc, _)| *rc >= r)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max);
        total += best;
    }
    Some(total / 101.0)
}

fn stratum(scenes: &[SceneRecord], cats: &CategoryMap, range: (f64, f64), thresholds: &[f64]) -> Option<f64> {
    let mut values = Vec::new();
    for c in cats.iter().filter(|c| c.scoring) {
        for &t in thresholds {
            if let Some(v) = ap_for(scenes, cats, c.id, range, t) {
                values.push(v);
            }
        }
    }
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn evaluate(scenes: &[SceneRecord], cats: &CategoryMap) -> ReferenceReport {
    let all = (0.0, 1e10);
    ReferenceReport {
        ap_50_95: stratum(scenes, cats, all, &THRESHOLDS),
        ap_50: stratum(scenes, cats, all, &[0.5]),
        ap_75: stratum(scenes, cats, all, &[0.75]),
        ap_small: stratum(scenes, cats, (0.0, 1024.0), &THRESHOLDS),
        ap_medium: stratum(scenes, cats, (1024.0, 9216.0), &THRESHOLDS),
        ap_large: stratum(scenes, cats, (9216.0, 1e10), &THRESHOLDS),
    }
}
