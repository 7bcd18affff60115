//! COCO-protocol box AP and the correction-rate accounting.
//!
//! Matching follows `pycocotools`: per image and category, detections in
//! descending score order take the highest-IoU unmatched ground truth at
//! or above the threshold, crowd regions absorb any number of matches,
//! ignored ground truth is only used when nothing else matches, and the
//! precision envelope is sampled at 101 recall points. Two differences:
//! score ties are broken by det-id (everywhere, including across images),
//! and precision is `tp / (tp + fp)` without an epsilon, so a perfect
//! detection set scores exactly 1.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::model::{same_label, BoundingBox, CategoryMap, DetId, Detection, GroundTruthObject, ImageId, SceneRecord};

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
pub const RECALL_POINTS: usize = 101;
pub const MAX_DETS: usize = 100;
const SMALL_MAX: f64 = 32.0 * 32.0;
const MEDIUM_MAX: f64 = 96.0 * 96.0;
const AREA_MAX: f64 = 1e10;

/// Area stratum on ground-truth area.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub const ALL: [AreaRange; 4] = [AreaRange::All, AreaRange::Small, AreaRange::Medium, AreaRange::Large];

    pub fn bounds(self) -> (f64, f64) {
        match self {
            AreaRange::All => (0.0, AREA_MAX),
            AreaRange::Small => (0.0, SMALL_MAX),
            AreaRange::Medium => (SMALL_MAX, MEDIUM_MAX),
            AreaRange::Large => (MEDIUM_MAX, AREA_MAX),
        }
    }

    pub fn contains(self, area: f64) -> bool {
        let (lo, hi) = self.bounds();
        area >= lo && area <= hi
    }
}

pub fn recall_point(k: usize) -> f64 {
    k as f64 / (RECALL_POINTS - 1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category_id: u64,
    pub name: String,
    pub ap_50_95: Option<f64>,
    pub ap_50: Option<f64>,
    pub ap_75: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub ground_truth: usize,
    pub detections: usize,
}

/// `None` marks a stratum with no ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_50_95: Option<f64>,
    pub ap_50: Option<f64>,
    pub ap_75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    /// AP at each of [`IOU_THRESHOLDS`], all areas.
    pub per_threshold: Vec<Option<f64>>,
    pub per_category: Vec<CategoryAp>,
    pub counts: BTreeMap<String, StratumCounts>,
}

/// Which detections of a scene to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionSet {
    Raw,
    Final,
}

#[derive(Clone, Copy)]
struct EvalDet {
    id: DetId,
    score: f64,
    matched: [bool; 10],
    ignored: [bool; 10],
}

/// Matches one image/category pair under one area range. Returns the
/// evaluated detections and the number of non-ignored ground truths.
fn evaluate_image(gts: &[&GroundTruthObject], dets: &[&Detection], range: AreaRange) -> (Vec<EvalDet>, usize) {
    let mut gts: Vec<(&GroundTruthObject, bool)> =
        gts.iter().map(|g| (*g, g.iscrowd || !range.contains(g.area))).collect();
    gts.sort_by_key(|&(_, ignore)| ignore);
    let npig = gts.iter().filter(|(_, ignore)| !ignore).count();

    let mut dets: Vec<&Detection> = dets.to_vec();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    dets.truncate(MAX_DETS);

    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .map(|(g, _)| box_overlap(&d.bbox, &g.bbox, g.iscrowd))
                .collect()
        })
        .collect();

    let mut out: Vec<EvalDet> = dets
        .iter()
        .map(|d| EvalDet {
            id: d.id,
            score: d.score,
            matched: [false; 10],
            ignored: [false; 10],
        })
        .collect();
    for (t, &thr) in IOU_THRESHOLDS.iter().enumerate() {
        let mut gt_taken = vec![false; gts.len()];
        for (di, row) in ious.iter().enumerate() {
            let mut best = thr.min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for (gi, &(g, g_ignore)) in gts.iter().enumerate() {
                if gt_taken[gi] && !g.iscrowd {
                    continue;
                }
                if let Some(mi) = m {
                    if !gts[mi].1 && g_ignore {
                        break;
                    }
                }
                if row[gi] < best {
                    continue;
                }
                best = row[gi];
                m = Some(gi);
            }
            if let Some(mi) = m {
                gt_taken[mi] = true;
                out[di].matched[t] = true;
                out[di].ignored[t] = gts[mi].1;
            }
        }
        for (di, d) in dets.iter().enumerate() {
            if !out[di].matched[t] && !range.contains(d.bbox.area()) {
                out[di].ignored[t] = true;
            }
        }
    }
    (out, npig)
}

/// IoU, or intersection over detection area for crowd regions.
fn box_overlap(dt: &BoundingBox, gt: &BoundingBox, crowd: bool) -> f64 {
    if !crowd {
        return iou(dt, gt);
    }
    let iw = (dt.x2().min(gt.x2()) - dt.x1().max(gt.x1())).max(0.0);
    let ih = (dt.y2().min(gt.y2()) - dt.y1().max(gt.y1())).max(0.0);
    let area = dt.area();
    if area <= 0.0 {
        0.0
    } else {
        iw * ih / area
    }
}

/// Mean interpolated precision over the recall points for one threshold.
fn average_precision(dets: &mut [EvalDet], t: usize, npig: usize) -> f64 {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for d in dets.iter() {
        if !d.ignored[t] {
            if d.matched[t] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        recall.push(tp as f64 / npig as f64);
        precision.push(if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        });
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut total = 0.0;
    for k in 0..RECALL_POINTS {
        let r = recall_point(k);
        let idx = recall.partition_point(|&rc| rc < r);
        if idx < precision.len() {
            total += precision[idx];
        }
    }
    total / RECALL_POINTS as f64
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores the final detections of `scenes`.
pub fn evaluate_coco(scenes: &[SceneRecord], cats: &CategoryMap) -> EvalReport {
    evaluate_coco_with(scenes, cats, DetectionSet::Final)
}

pub fn evaluate_coco_with(scenes: &[SceneRecord], cats: &CategoryMap, which: DetectionSet) -> EvalReport {
    let scoring: Vec<_> = cats.iter().filter(|c| c.scoring).collect();
    // ap[area][cat][t]
    let mut ap: HashMap<(AreaRange, u64), [f64; 10]> = HashMap::new();
    let mut counts: BTreeMap<String, StratumCounts> = BTreeMap::new();

    for cat in &scoring {
        for range in AreaRange::ALL {
            let mut pooled = Vec::new();
            let mut npig = 0;
            for scene in scenes {
                let gts: Vec<&GroundTruthObject> =
                    scene.ground_truth.iter().filter(|g| g.category_id == cat.id).collect();
                let source = match which {
                    DetectionSet::Raw => scene.detections.as_slice(),
                    DetectionSet::Final => scene.final_detections(),
                };
                let dets: Vec<&Detection> = source
                    .iter()
                    .filter(|d| cats.scoring_id(&d.label) == Some(cat.id))
                    .collect();
                let c = counts.entry(format!("{range:?}").to_lowercase()).or_default();
                c.ground_truth += gts.iter().filter(|g| !g.iscrowd && range.contains(g.area)).count();
                c.detections += dets.iter().filter(|d| range.contains(d.bbox.area())).count();
                if gts.is_empty() && dets.is_empty() {
                    continue;
                }
                let (evaluated, n) = evaluate_image(&gts, &dets, range);
                pooled.extend(evaluated);
                npig += n;
            }
            if npig == 0 {
                continue;
            }
            let mut per_t = [0.0; 10];
            for (t, slot) in per_t.iter_mut().enumerate() {
                *slot = average_precision(&mut pooled, t, npig);
            }
            ap.insert((range, cat.id), per_t);
        }
    }

    let stratum = |range: AreaRange, thresholds: &[usize]| {
        mean(
            scoring
                .iter()
                .filter_map(|c| ap.get(&(range, c.id)))
                .flat_map(|per_t| thresholds.iter().map(move |&t| per_t[t]).collect::<Vec<_>>()),
        )
    };
    let all_t: Vec<usize> = (0..IOU_THRESHOLDS.len()).collect();

    EvalReport {
        ap_50_95: stratum(AreaRange::All, &all_t),
        ap_50: stratum(AreaRange::All, &[0]),
        ap_75: stratum(AreaRange::All, &[5]),
        ap_small: stratum(AreaRange::Small, &all_t),
        ap_medium: stratum(AreaRange::Medium, &all_t),
        ap_large: stratum(AreaRange::Large, &all_t),
        per_threshold: (0..IOU_THRESHOLDS.len())
            .map(|t| stratum(AreaRange::All, &[t]))
            .collect(),
        per_category: scoring
            .iter()
            .map(|c| {
                let per_t = ap.get(&(AreaRange::All, c.id));
                CategoryAp {
                    category_id: c.id,
                    name: c.name.clone(),
                    ap_50_95: per_t.and_then(|v| mean(v.iter().copied())),
                    ap_50: per_t.map(|v| v[0]),
                    ap_75: per_t.map(|v| v[5]),
                }
            })
            .collect(),
        counts,
    }
}

/// One-to-one matching by descending IoU (ties by det index, then gt
/// index). Returns the matched ground-truth index per detection.
pub fn greedy_iou_match(dets: &[BoundingBox], gts: &[BoundingBox], threshold: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (di, d) in dets.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let v = iou(d, g);
            if v >= threshold && v > 0.0 {
                pairs.push((v, di, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_match = vec![None; dets.len()];
    let mut gt_taken = vec![false; gts.len()];
    for (_, di, gi) in pairs {
        if det_match[di].is_none() && !gt_taken[gi] {
            det_match[di] = Some(gi);
            gt_taken[gi] = true;
        }
    }
    det_match
}

/// Error detections (ED), corrected detections (CD) and the correction
/// rate `CR = 100 * CD / ED`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub ed: u64,
    pub cd: u64,
    pub match_iou: f64,
}

impl CorrectionReport {
    pub fn from_counts(ed: u64, cd: u64) -> Result<Self> {
        if cd > ed {
            return Err(Error::Validation(format!("CD {cd} exceeds ED {ed}")));
        }
        Ok(Self { ed, cd, match_iou: 0.5 })
    }

    /// Percentage, undefined when there were no errors.
    pub fn cr(&self) -> Option<f64> {
        (self.ed > 0).then(|| 100.0 * self.cd as f64 / self.ed as f64)
    }

    /// CR in tenths of a percent, truncated.
    pub fn cr_tenths(&self) -> Option<u64> {
        (self.ed > 0).then(|| 1000 * self.cd / self.ed)
    }

    /// One-decimal percentage cell such as `75.0%`, or `—`.
    pub fn cr_display(&self) -> String {
        match self.cr_tenths() {
            Some(t) => format!("{}.{}%", t / 10, t % 10),
            None => UNDEFINED_CELL.to_string(),
        }
    }
}

/// Detection before and after correction, for the ED/CD accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionItem {
    pub image_id: ImageId,
    pub det_id: DetId,
    pub bbox: BoundingBox,
    pub original_label: String,
    /// `None` when the detection was dropped.
    pub final_label: Option<String>,
}

pub fn correction_metrics(scenes: &[SceneRecord], match_iou: f64) -> CorrectionReport {
    let mut ed = 0;
    let mut cd = 0;
    for scene in scenes {
        let finals: HashMap<DetId, &str> = scene
            .final_detections()
            .iter()
            .map(|d| (d.id, d.label.as_str()))
            .collect();
        let items: Vec<CorrectionItem> = scene
            .detections
            .iter()
            .map(|d| CorrectionItem {
                image_id: scene.image_id,
                det_id: d.id,
                bbox: d.bbox,
                original_label: d.label.clone(),
                final_label: finals.get(&d.id).map(|s| s.to_string()),
            })
            .collect();
        let (e, c) = count_corrections(&scene.ground_truth, &items, match_iou);
        ed += e;
        cd += c;
    }
    CorrectionReport { ed, cd, match_iou }
}

/// Same accounting over flat items (e.g. read back from an audit log).
pub fn correction_metrics_from_items(
    ground_truth: &HashMap<ImageId, Vec<GroundTruthObject>>,
    items: &[CorrectionItem],
    match_iou: f64,
) -> CorrectionReport {
    let mut by_image: BTreeMap<ImageId, Vec<CorrectionItem>> = BTreeMap::new();
    for item in items {
        by_image.entry(item.image_id).or_default().push(item.clone());
    }
    let (mut ed, mut cd) = (0, 0);
    for (image_id, mut group) in by_image {
        group.sort_by_key(|i| i.det_id);
        let gts = ground_truth.get(&image_id).map(Vec::as_slice).unwrap_or(&[]);
        let (e, c) = count_corrections(gts, &group, match_iou);
        ed += e;
        cd += c;
    }
    CorrectionReport { ed, cd, match_iou }
}

fn count_corrections(gts: &[GroundTruthObject], items: &[CorrectionItem], match_iou: f64) -> (u64, u64) {
    let gts: Vec<&GroundTruthObject> = gts.iter().filter(|g| !g.iscrowd).collect();
    let gt_boxes: Vec<BoundingBox> = gts.iter().map(|g| g.bbox).collect();
    let det_boxes: Vec<BoundingBox> = items.iter().map(|i| i.bbox).collect();
    let matches = greedy_iou_match(&det_boxes, &gt_boxes, match_iou);
    let (mut ed, mut cd) = (0, 0);
    for (item, m) in items.iter().zip(matches) {
        let Some(gi) = m else { continue };
        let truth = &gts[gi].label;
        if same_label(&item.original_label, truth) {
            continue;
        }
        ed += 1;
        if item.final_label.as_deref().is_some_and(|f| same_label(f, truth)) {
            cd += 1;
        }
    }
    (ed, cd)
}

pub const UNDEFINED_CELL: &str = "—";

/// Fraction in `[0, 1]` as a one-decimal percentage, truncated.
pub fn percent_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => {
            let tenths = (v * 1000.0 + 1e-6).floor() as i64;
            format!("{}.{}", tenths / 10, tenths % 10)
        }
        None => UNDEFINED_CELL.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TextTable,
    Json,
    Csv,
}

/// Flat metric list shared by the JSON and CSV renderings.
pub fn report_values(eval: &EvalReport, corr: &CorrectionReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("ap_50_95", eval.ap_50_95),
        ("ap_50", eval.ap_50),
        ("ap_75", eval.ap_75),
        ("ap_small", eval.ap_small),
        ("ap_medium", eval.ap_medium),
        ("ap_large", eval.ap_large),
        ("ed", Some(corr.ed as f64)),
        ("cd", Some(corr.cd as f64)),
        ("cr", corr.cr()),
        ("match_iou", Some(corr.match_iou)),
    ]
}

pub fn render_report(eval: &EvalReport, corr: &CorrectionReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TextTable => render_text(eval, corr),
        ReportFormat::Json => {
            let mut map = serde_json::Map::new();
            for (k, v) in report_values(eval, corr) {
                map.insert(k.to_string(), serde_json::to_value(v).expect("number"));
            }
            map.insert(
                "per_category".into(),
                serde_json::to_value(&eval.per_category).expect("categories serialize"),
            );
            let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("json");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("metric,value\n");
            for (k, v) in report_values(eval, corr) {
                match v {
                    Some(v) => s.push_str(&format!("{k},{v}\n")),
                    None => s.push_str(&format!("{k},\n")),
                }
            }
            s
        }
    }
}

fn render_text(eval: &EvalReport, corr: &CorrectionReport) -> String {
    let ap_head = ["AP50:95", "AP50", "AP75", "APs", "APm", "APl"];
    let ap_vals = [
        eval.ap_50_95,
        eval.ap_50,
        eval.ap_75,
        eval.ap_small,
        eval.ap_medium,
        eval.ap_large,
    ]
    .map(percent_cell);
    let mut s = String::from("Detection (%)\n");
    s.push_str(&table_row(&ap_head.map(String::from)));
    s.push_str(&table_row(&ap_vals));
    s.push_str(&format!("\nCorrection (match IoU >= {:.2})\n", corr.match_iou));
    s.push_str(&table_row(&["ED", "CD", "CR"].map(String::from)));
    s.push_str(&table_row(&[
        corr.ed.to_string(),
        corr.cd.to_string(),
        corr.cr_display(),
    ]));
    s
}

fn table_row(cells: &[String]) -> String {
    let mut row = String::from("|");
    for c in cells {
        row.push_str(&format!(" {c:>7} |"));
    }
    row.push('\n');
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(id: u64, image_id: u64, cat: u64, b: [f64; 4]) -> GroundTruthObject {
        let bbox = BoundingBox::try_from(b).unwrap();
        GroundTruthObject {
            id,
            image_id,
            bbox,
            category_id: cat,
            label: if cat == 1 { "cat".into() } else { "dog".into() },
            iscrowd: false,
            area: bbox.area(),
        }
    }

    fn det(id: u64, image_id: u64, label: &str, b: [f64; 4], score: f64) -> Detection {
        Detection::new(
            id,
            image_id,
            BoundingBox::try_from(b).unwrap(),
            label,
            score,
            "detector",
        )
        .unwrap()
    }

    fn cats() -> CategoryMap {
        let mut c = CategoryMap::new();
        c.insert(1, "cat", true).unwrap();
        c.insert(2, "dog", true).unwrap();
        c
    }

    fn scene(gts: Vec<GroundTruthObject>, dets: Vec<Detection>) -> SceneRecord {
        let mut s = SceneRecord::new(1, 1000.0, 1000.0);
        s.annotated = true;
        s.ground_truth = gts;
        s.detections = dets;
        s
    }

    #[test]
    fn single_match_at_iou_point_nine() {
        // 100x100 GT; detection shifted so IoU = 0.9 exactly is awkward, use
        // width shrink: det 90x100 inside GT gives IoU 0.9.
        let s = scene(
            vec![gt(1, 1, 1, [0.0, 0.0, 100.0, 100.0])],
            vec![det(1, 1, "cat", [0.0, 0.0, 90.0, 100.0], 0.8)],
        );
        let r = evaluate_coco(&[s], &cats());
        let per_t: Vec<f64> = r.per_threshold.iter().map(|v| v.unwrap()).collect();
        for (t, thr) in IOU_THRESHOLDS.iter().enumerate() {
            assert_eq!(per_t[t], if *thr <= 0.9 { 1.0 } else { 0.0 }, "t={thr}");
        }
        assert_eq!(r.ap_50, Some(1.0));
        assert!((r.ap_50_95.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(r.ap_small, None);
        assert_eq!(r.ap_medium, None);
        assert!((r.ap_large.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn wrong_class_never_matches() {
        let s = scene(
            vec![gt(1, 1, 1, [0.0, 0.0, 100.0, 100.0])],
            vec![det(1, 1, "dog", [0.0, 0.0, 100.0, 100.0], 0.9)],
        );
        let r = evaluate_coco(&[s], &cats());
        assert_eq!(r.ap_50_95, Some(0.0));
        assert_eq!(r.per_category[1].ap_50_95, None);
    }

    #[test]
    fn empty_ground_truth_is_undefined_not_error() {
        let s = scene(vec![], vec![det(1, 1, "cat", [0.0, 0.0, 10.0, 10.0], 0.9)]);
        let r = evaluate_coco(&[s], &cats());
        assert_eq!(r.ap_50_95, None);
        assert!(r.per_threshold.iter().all(Option::is_none));
    }

    #[test]
    fn crowd_region_absorbs_matches() {
        let mut crowd = gt(2, 1, 1, [200.0, 200.0, 400.0, 400.0]);
        crowd.iscrowd = true;
        let s = scene(
            vec![gt(1, 1, 1, [0.0, 0.0, 100.0, 100.0]), crowd],
            vec![
                det(1, 1, "cat", [0.0, 0.0, 100.0, 100.0], 0.9),
                det(2, 1, "cat", [210.0, 210.0, 260.0, 260.0], 0.95),
                det(3, 1, "cat", [300.0, 300.0, 350.0, 350.0], 0.97),
            ],
        );
        let r = evaluate_coco(&[s], &cats());
        assert_eq!(r.ap_50_95, Some(1.0));
    }

    #[test]
    fn false_positive_ranked_first_halves_precision() {
        let s = scene(
            vec![gt(1, 1, 1, [0.0, 0.0, 100.0, 100.0])],
            vec![
                det(1, 1, "cat", [0.0, 0.0, 100.0, 100.0], 0.5),
                det(2, 1, "cat", [500.0, 500.0, 600.0, 600.0], 0.9),
            ],
        );
        let r = evaluate_coco(&[s], &cats());
        assert!((r.ap_50.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn permuting_detection_order_keeps_ap() {
        let dets = vec![
            det(1, 1, "cat", [0.0, 0.0, 100.0, 100.0], 0.5),
            det(2, 1, "cat", [5.0, 0.0, 100.0, 100.0], 0.5),
            det(3, 1, "cat", [500.0, 500.0, 600.0, 600.0], 0.7),
        ];
        let gts = vec![
            gt(1, 1, 1, [0.0, 0.0, 100.0, 100.0]),
            gt(2, 1, 1, [10.0, 10.0, 90.0, 90.0]),
        ];
        let a = evaluate_coco(&[scene(gts.clone(), dets.clone())], &cats());
        let mut rev = dets;
        rev.reverse();
        let b = evaluate_coco(&[scene(gts, rev)], &cats());
        assert_eq!(a, b);
    }

    #[test]
    fn ap_50_95_is_mean_of_thresholds() {
        let s = scene(
            vec![
                gt(1, 1, 1, [0.0, 0.0, 100.0, 100.0]),
                gt(2, 1, 2, [200.0, 0.0, 220.0, 20.0]),
            ],
            vec![
                det(1, 1, "cat", [3.0, 4.0, 100.0, 96.0], 0.7),
                det(2, 1, "dog", [201.0, 0.0, 220.0, 19.0], 0.6),
            ],
        );
        let r = evaluate_coco(&[s], &cats());
        let m: f64 = r.per_threshold.iter().map(|v| v.unwrap()).sum::<f64>() / 10.0;
        assert!((r.ap_50_95.unwrap() - m).abs() < 1e-9);
    }

    #[test]
    fn table_three_arithmetic() {
        let expected = [
            (0, "0.0%"),
            (597, "44.9%"),
            (982, "74.0%"),
            (979, "73.7%"),
            (990, "74.6%"),
            (996, "75.0%"),
        ];
        for (cd, cell) in expected {
            assert_eq!(CorrectionReport::from_counts(1327, cd).unwrap().cr_display(), cell);
        }
        assert_eq!(CorrectionReport::from_counts(0, 0).unwrap().cr(), None);
        assert_eq!(CorrectionReport::from_counts(0, 0).unwrap().cr_display(), "—");
        assert!(CorrectionReport::from_counts(3, 4).is_err());
    }

    #[test]
    fn correction_counts_label_errors_only() {
        let gts = vec![
            gt(1, 1, 1, [0.0, 0.0, 100.0, 100.0]),
            gt(2, 1, 2, [200.0, 0.0, 300.0, 100.0]),
        ];
        let mut s = scene(
            gts,
            vec![
                det(1, 1, "dog", [0.0, 0.0, 100.0, 100.0], 0.9),
                det(2, 1, "dog", [200.0, 0.0, 300.0, 100.0], 0.9),
                det(3, 1, "cat", [600.0, 600.0, 700.0, 700.0], 0.9),
            ],
        );
        let before = correction_metrics(&[s.clone()], 0.5);
        assert_eq!((before.ed, before.cd, before.cr()), (1, 0, Some(0.0)));
        let mut fixed = s.detections.clone();
        fixed[0].relabel("cat", None, "classifier").unwrap();
        s.corrected = Some(fixed);
        let after = correction_metrics(&[s], 0.5);
        assert_eq!((after.ed, after.cd), (1, 1));
        assert_eq!(after.cr_display(), "100.0%");
    }

    #[test]
    fn greedy_match_is_one_to_one() {
        let b = |x: f64| BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap();
        let m = greedy_iou_match(&[b(0.0), b(1.0), b(50.0)], &[b(1.0)], 0.5);
        assert_eq!(m, vec![None, Some(0), None]);
    }

    #[test]
    fn report_cells() {
        assert_eq!(percent_cell(Some(0.521)), "52.1");
        assert_eq!(percent_cell(Some(1.0)), "100.0");
        assert_eq!(percent_cell(None), "—");
        let s = scene(vec![gt(1, 1, 1, [0.0, 0.0, 10.0, 10.0])], vec![]);
        let r = evaluate_coco(&[s], &cats());
        let text = render_report(
            &r,
            &CorrectionReport::from_counts(1327, 996).unwrap(),
            ReportFormat::TextTable,
        );
        assert!(text.contains("75.0%"));
        assert!(text.contains('—'));
    }
}
