use serde::{Deserialize, Serialize};
use vla_core::coco::results_from_scenes;
use vla_core::eval::{correction_metrics, evaluate_coco_with, DetectionSet};
use vla_core::geometry::{self, iou_weights, RelationEntry, RelationTable};
use vla_core::oracle::{inject_label_noise, OracleClassifier, OracleConfig, OracleLinguist, PrecomputedDetector};
use vla_core::pipeline::{run_scenes, Agents, PipelineOptions};
use vla_core::synth::{generate, SynthSpec};
use vla_core::BoundingBox;

/// Keeps a browser tab responsive.
pub const MAX_IMAGES: usize = 2000;

#[derive(Debug, Deserialize)]
struct EntropyInput {
    boxes: Vec<[f64; 4]>,
    probs: Vec<f64>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyOutput {
    pub weights: Vec<f64>,
    pub weighted_entropy: f64,
    /// Same probabilities with every weight set to 1.
    pub unweighted_entropy: f64,
}

fn parse<'a, T: Deserialize<'a>>(input: &'a str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("invalid input: {e}"))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn weighted_entropy(boxes: &[[f64; 4]], probs: &[f64]) -> Result<EntropyOutput, String> {
    let boxes = boxes
        .iter()
        .enumerate()
        .map(|(k, b)| BoundingBox::new(b[0], b[1], b[2], b[3]).map_err(|e| format!("box {k}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let hw = geometry::weighted_entropy(probs, &boxes).map_err(|e| e.to_string())?;
    let weights = if boxes.is_empty() {
        Vec::new()
    } else {
        iou_weights(&boxes).map_err(|e| e.to_string())?
    };
    let unweighted = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    Ok(EntropyOutput {
        weights,
        weighted_entropy: hw,
        unweighted_entropy: unweighted,
    })
}

pub fn weighted_entropy_json(input: &str) -> Result<String, String> {
    let i: EntropyInput = parse(input)?;
    to_json(&weighted_entropy(&i.boxes, &i.probs)?)
}

#[derive(Debug, Deserialize)]
struct IgInput {
    hw: f64,
    table: Vec<RelationEntry>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct IgOutput {
    pub global_entropy: f64,
    pub information_gain: f64,
}

pub fn information_gain(hw: f64, table: Vec<RelationEntry>) -> Result<IgOutput, String> {
    let table = RelationTable::new(table).map_err(|e| e.to_string())?;
    let h = geometry::global_entropy(&table).map_err(|e| e.to_string())?;
    Ok(IgOutput {
        global_entropy: h,
        information_gain: geometry::information_gain(hw, h),
    })
}

pub fn information_gain_json(input: &str) -> Result<String, String> {
    let i: IgInput = parse(input)?;
    to_json(&information_gain(i.hw, i.table)?)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationParams {
    pub images: usize,
    pub noise: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub injected: usize,
    pub detections: usize,
    pub flagged: usize,
    pub relabeled: usize,
    pub ed: u64,
    pub cd: u64,
    pub cr: Option<f64>,
    pub ap_before: Option<f64>,
    pub ap_after: Option<f64>,
    pub exported: usize,
}

pub fn simulate(p: &SimulationParams) -> Result<SimulationOutput, String> {
    if p.images == 0 || p.images > MAX_IMAGES {
        return Err(format!("images must be in 1..={MAX_IMAGES}"));
    }
    let oracle = OracleConfig {
        seed: p.seed,
        match_iou: 0.5,
        alpha: p.alpha,
        beta: p.beta,
        gamma: p.gamma,
    };
    oracle.validate().map_err(|e| e.to_string())?;
    let synth = generate(&SynthSpec {
        images: p.images,
        seed: p.seed,
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let cats = synth.categories;
    let mut scenes = synth.scenes;
    let injected = inject_label_noise(&mut scenes, &cats, p.noise, p.seed, 0.5)
        .map_err(|e| e.to_string())?
        .len();
    let detector = PrecomputedDetector::new(scenes.iter().flat_map(|s| s.detections.clone()).collect());
    let linguist = OracleLinguist::new(oracle);
    let classifier = OracleClassifier::new(oracle);
    let agents = Agents {
        detector: &detector,
        linguist: &linguist,
        classifier: &classifier,
    };
    let (summary, _) = run_scenes(&mut scenes, &cats, &agents, &PipelineOptions::default());
    let corr = correction_metrics(&scenes, 0.5);
    Ok(SimulationOutput {
        injected,
        detections: summary.detections,
        flagged: summary.flagged,
        relabeled: summary.relabeled,
        ed: corr.ed,
        cd: corr.cd,
        cr: corr.cr(),
        ap_before: evaluate_coco_with(&scenes, &cats, DetectionSet::Raw).ap_50_95,
        ap_after: evaluate_coco_with(&scenes, &cats, DetectionSet::Final).ap_50_95,
        exported: results_from_scenes(&scenes, &cats).0.len(),
    })
}

pub fn simulate_json(input: &str) -> Result<String, String> {
    let p: SimulationParams = parse(input)?;
    to_json(&simulate(&p)?)
}
