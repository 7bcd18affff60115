//! Subcommands other than `run`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vla_core::coco::{
    attach_detections, detections_from_results, load_coco_annotations, load_coco_results, read_results_entries,
    write_coco_annotations, write_coco_results, CocoResult, ParseMode,
};
use vla_core::eval::{
    correction_metrics_from_items, evaluate_coco, render_report, CorrectionItem, CorrectionReport, ReportFormat,
};
use vla_core::geometry::{global_entropy, information_gain, weighted_entropy, RelationEntry, RelationTable};
use vla_core::oracle::{inject_label_noise, OracleConfig};
use vla_core::pipeline::{AuditRecord, Disposition};
use vla_core::synth::{generate, SynthSpec};
use vla_core::{BoundingBox, GroundTruthObject, ImageId};
use vla_gateway::envelope::write_jsonl;
use vla_gateway::{validate_transcript, MockServer, MockState, ValidationReport};

/// Scores a results file against ground truth. Correction counts come from
/// an audit log when one is given and are zero otherwise.
pub fn evaluate(
    annotations: &Path,
    detections: &Path,
    audit: Option<&Path>,
    match_iou: f64,
    format: ReportFormat,
) -> Result<String> {
    let ann = load_coco_annotations(annotations, ParseMode::Strict)
        .with_context(|| format!("annotations {}", annotations.display()))?;
    let dets = load_coco_results(detections, &ann.categories, &ann.scenes, ParseMode::Strict)
        .with_context(|| format!("detections {}", detections.display()))?;
    let mut scenes = ann.scenes;
    attach_detections(&mut scenes, dets.detections);
    let report = evaluate_coco(&scenes, &ann.categories);
    let corr = match audit {
        Some(path) => correction_report(annotations, path, match_iou)?,
        None => CorrectionReport {
            ed: 0,
            cd: 0,
            match_iou,
        },
    };
    Ok(render_report(&report, &corr, format))
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), k + 1)))
        .collect()
}

/// ED, CD and CR recomputed from an audit log and ground truth.
pub fn correction_report(annotations: &Path, audit: &Path, match_iou: f64) -> Result<CorrectionReport> {
    let ann = load_coco_annotations(annotations, ParseMode::Strict)
        .with_context(|| format!("annotations {}", annotations.display()))?;
    let gts: HashMap<ImageId, Vec<GroundTruthObject>> =
        ann.scenes.into_iter().map(|s| (s.image_id, s.ground_truth)).collect();
    let items: Vec<CorrectionItem> = read_audit(audit)?
        .into_iter()
        .map(|r| CorrectionItem {
            image_id: r.image_id,
            det_id: r.det_id,
            bbox: r.bbox,
            original_label: r.original_label,
            final_label: (r.disposition != Disposition::Dropped).then_some(r.final_label),
        })
        .collect();
    Ok(correction_metrics_from_items(&gts, &items, match_iou))
}

pub fn render_correction(report: &CorrectionReport, json: bool) -> String {
    if json {
        let v = serde_json::json!({
            "ed": report.ed,
            "cd": report.cd,
            "cr": report.cr(),
            "match_iou": report.match_iou,
        });
        return format!("{}\n", serde_json::to_string_pretty(&v).expect("json"));
    }
    format!(
        "ED {}\nCD {}\nCR {}\n(match IoU >= {:.2})\n",
        report.ed,
        report.cd,
        report.cr_display(),
        report.match_iou
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageIg {
    pub image_id: ImageId,
    pub weighted_entropy: f64,
    pub global_entropy: f64,
    pub information_gain: f64,
}

/// Per-image values plus their sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgReport {
    pub images: Vec<ImageIg>,
    pub total: ImageIgTotals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageIgTotals {
    pub weighted_entropy: f64,
    pub global_entropy: f64,
    pub information_gain: f64,
}

/// Relation tables: one array applied to every image, or an object keyed
/// by image id.
fn load_relations(path: &Path) -> Result<Relations> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let table = |v: Value, what: &str| -> Result<RelationTable> {
        let entries: Vec<RelationEntry> = serde_json::from_value(v).with_context(|| format!("{what}: bad entries"))?;
        RelationTable::new(entries).with_context(|| what.to_string())
    };
    match v {
        Value::Array(_) => Ok(Relations::Shared(table(v, "relation table")?)),
        Value::Object(map) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let id: ImageId = k.parse().with_context(|| format!("key {k:?} is not an image id"))?;
                out.insert(id, table(v, &format!("relation table for image {id}"))?);
            }
            Ok(Relations::PerImage(out))
        }
        _ => bail!("{}: expected an array or an object of arrays", path.display()),
    }
}

enum Relations {
    Shared(RelationTable),
    PerImage(BTreeMap<ImageId, RelationTable>),
}

/// Detection scores act as `P(y_i)`.
pub fn analyze_ig(detections: &Path, relations: &Path) -> Result<IgReport> {
    let entries = read_results_entries(detections).with_context(|| format!("detections {}", detections.display()))?;
    let relations = load_relations(relations)?;
    let mut by_image: BTreeMap<ImageId, (Vec<f64>, Vec<BoundingBox>)> = BTreeMap::new();
    for (k, e) in entries.iter().enumerate() {
        let b = BoundingBox::from_xywh(e.bbox).with_context(|| format!("detection {k}"))?;
        let slot = by_image.entry(e.image_id).or_default();
        slot.0.push(e.score);
        slot.1.push(b);
    }
    let mut images = Vec::new();
    for (image_id, (probs, boxes)) in by_image {
        let table = match &relations {
            Relations::Shared(t) => t,
            Relations::PerImage(m) => m
                .get(&image_id)
                .with_context(|| format!("no relation table for image {image_id}"))?,
        };
        let hw = weighted_entropy(&probs, &boxes).with_context(|| format!("image {image_id}"))?;
        let hyr = global_entropy(table).with_context(|| format!("image {image_id}"))?;
        images.push(ImageIg {
            image_id,
            weighted_entropy: hw,
            global_entropy: hyr,
            information_gain: information_gain(hw, hyr),
        });
    }
    let total = ImageIgTotals {
        weighted_entropy: images.iter().map(|i| i.weighted_entropy).sum(),
        global_entropy: images.iter().map(|i| i.global_entropy).sum(),
        information_gain: images.iter().map(|i| i.information_gain).sum(),
    };
    Ok(IgReport { images, total })
}

pub fn render_ig(report: &IgReport, json: bool) -> String {
    if json {
        return format!("{}\n", serde_json::to_string_pretty(report).expect("json"));
    }
    let mut s = format!("{:>10}  {:>10}  {:>10}  {:>10}\n", "image", "H_w(Y)", "H(Y,R)", "IG");
    for i in &report.images {
        s.push_str(&format!(
            "{:>10}  {:>10.4}  {:>10.4}  {:>10.4}\n",
            i.image_id, i.weighted_entropy, i.global_entropy, i.information_gain
        ));
    }
    let t = &report.total;
    s.push_str(&format!(
        "{:>10}  {:>10.4}  {:>10.4}  {:>10.4}\n",
        "total", t.weighted_entropy, t.global_entropy, t.information_gain
    ));
    s
}

pub fn validate_protocol(path: &Path) -> Result<ValidationReport> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(validate_transcript(&text))
}

pub fn render_validation(report: &ValidationReport) -> String {
    let mut s = String::new();
    for v in &report.violations {
        s.push_str(&format!("{v}\n"));
    }
    s.push_str(&format!(
        "{} record(s), {} violation(s)\n",
        report.records,
        report.violations.len()
    ));
    s
}

/// Starts the oracle-backed mock server; returns once it is listening.
pub fn start_mock_server(
    bind: &str,
    annotations: &Path,
    detections: Option<&Path>,
    oracle: OracleConfig,
    api_key: Option<String>,
) -> Result<MockServer> {
    oracle.validate().context("oracle")?;
    let ann = load_coco_annotations(annotations, ParseMode::Strict)
        .with_context(|| format!("annotations {}", annotations.display()))?;
    let mut scenes = ann.scenes;
    if let Some(path) = detections {
        let dets = load_coco_results(path, &ann.categories, &scenes, ParseMode::Strict)
            .with_context(|| format!("detections {}", path.display()))?;
        attach_detections(&mut scenes, dets.detections);
    }
    let mut state = MockState::new(ann.categories, scenes, oracle);
    state.api_key = api_key;
    Ok(MockServer::start(bind, state)?)
}

/// Writes `annotations.json` and a perfect `detections.json`.
pub fn synth(spec: &SynthSpec, out_dir: &Path) -> Result<()> {
    let out = generate(spec)?;
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    write_coco_annotations(&out.scenes, &out_dir.join("annotations.json"), &out.categories)?;
    write_coco_results(&out.scenes, &out_dir.join("detections.json"), &out.categories)?;
    Ok(())
}

/// Relabels a fraction of correct detections; output keeps input order.
/// Returns the number of injected errors.
pub fn inject_noise(
    annotations: &Path,
    detections: &Path,
    rate: f64,
    seed: u64,
    match_iou: f64,
    out: &Path,
    manifest: &Path,
) -> Result<usize> {
    let ann = load_coco_annotations(annotations, ParseMode::Strict)
        .with_context(|| format!("annotations {}", annotations.display()))?;
    let mut entries: Vec<CocoResult> = read_results_entries(detections)?;
    let loaded = detections_from_results(entries.clone(), &ann.categories, &ann.scenes, ParseMode::Strict)?;
    let mut scenes = ann.scenes;
    attach_detections(&mut scenes, loaded.detections);
    let records = inject_label_noise(&mut scenes, &ann.categories, rate, seed, match_iou)?;
    for r in &records {
        // Det ids are 1-based positions in the input file.
        let entry = &mut entries[(r.det_id - 1) as usize];
        entry.category_id = ann
            .categories
            .scoring_id(&r.injected_label)
            .context("injected label outside the vocabulary")?;
    }
    let mut text = serde_json::to_string(&entries)?;
    text.push('\n');
    fs::write(out, text).with_context(|| format!("cannot write {}", out.display()))?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    fs::File::create(manifest)
        .and_then(|mut f| f.write_all(&buf))
        .with_context(|| format!("cannot write {}", manifest.display()))?;
    Ok(records.len())
}
