//! Batch runner: worker pool, checkpoint journal, resume and output files.
//!
//! Every finished image is appended to `journal.jsonl` in the output
//! directory. Output files are always rebuilt from the journal, so a run
//! that was interrupted and resumed writes the same bytes as one that ran
//! straight through.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vla_core::coco::{load_coco_annotations, load_coco_results, results_from_scenes, LoadedAnnotations};
use vla_core::eval::{correction_metrics, evaluate_coco_with, CorrectionReport, DetectionSet, EvalReport};
use vla_core::pipeline::{process_scene, AuditRecord, RunSummary};
use vla_core::prompt::Verdict;
use vla_core::{CategoryMap, Detection, ImageId, SceneRecord};
use vla_gateway::envelope::write_jsonl;
use vla_gateway::{build_agents, AgentContext, AgentEnvelope, AgentSet, Transcript};

use crate::config::{diff_fields, sha256_hex, RunConfig};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const RESULTS_FILE: &str = "results.json";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalHeader {
    pub config_hash: String,
    pub config: Value,
    /// SHA-256 of every input file, keyed by config field.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: ImageId,
    pub status: ImageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_source: Option<String>,
    pub caption: Option<String>,
    pub detections: Vec<Detection>,
    pub verdicts: Vec<Verdict>,
    pub corrected: Option<Vec<Detection>>,
    pub records: Vec<AuditRecord>,
    pub envelopes: Vec<AgentEnvelope>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JournalLine {
    Header(JournalHeader),
    Image(Box<ImageEntry>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionCounts {
    pub supplied: usize,
    pub generated: usize,
    pub image_url: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ap_50_95: Option<f64>,
    pub ap_50: Option<f64>,
    pub ap_75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

impl From<&EvalReport> for MetricSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            ap_50_95: r.ap_50_95,
            ap_50: r.ap_50,
            ap_75: r.ap_75,
            ap_small: r.ap_small,
            ap_medium: r.ap_medium,
            ap_large: r.ap_large,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub ed: u64,
    pub cd: u64,
    pub cr: Option<f64>,
    pub match_iou: f64,
}

impl From<&CorrectionReport> for CorrectionSummary {
    fn from(c: &CorrectionReport) -> Self {
        Self {
            ed: c.ed,
            cd: c.cd,
            cr: c.cr(),
            match_iou: c.match_iou,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub before: MetricSummary,
    pub after: MetricSummary,
    pub correction: CorrectionSummary,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub config_hash: String,
    pub complete: bool,
    pub pending_images: usize,
    #[serde(flatten)]
    pub counts: RunSummary,
    pub captions: CaptionCounts,
    pub envelopes: usize,
    pub metrics: RunMetrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    /// Every image processed without failures.
    Complete,
    /// Every image processed; some failed.
    Partial,
    /// Stopped before all images were processed; resumable.
    Interrupted,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Complete => 0,
            RunStatus::Partial => 2,
            RunStatus::Interrupted => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub summary: SummaryDoc,
    pub out_dir: PathBuf,
}

/// Controls beyond the config file.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    /// Continue from an existing journal instead of starting over.
    pub resume: bool,
    /// Stop after this many images have been journaled (simulated kill).
    pub stop_after: Option<usize>,
    /// Set by a signal handler; no new images start once it is raised.
    pub interrupt: Option<Arc<AtomicBool>>,
}

struct Inputs {
    annotations: LoadedAnnotations,
    detections: Vec<Detection>,
    captions: HashMap<ImageId, String>,
    hashes: BTreeMap<String, String>,
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn load_captions(path: &Path) -> Result<HashMap<ImageId, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let raw: BTreeMap<String, String> = serde_json::from_str(&text)
        .with_context(|| format!("{}: expected an object of image id -> caption", path.display()))?;
    raw.into_iter()
        .map(|(k, v)| {
            let id = k
                .parse()
                .with_context(|| format!("{}: key {k:?} is not an image id", path.display()))?;
            Ok((id, v))
        })
        .collect()
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let p = &cfg.paths;
    let annotations = load_coco_annotations(&p.annotations, cfg.parse_mode)
        .with_context(|| format!("paths.annotations ({})", p.annotations.display()))?;
    let mut hashes = BTreeMap::new();
    hashes.insert("paths.annotations".to_string(), hash_file(&p.annotations)?);
    let mut detections = Vec::new();
    if let Some(path) = &p.detections {
        detections = load_coco_results(path, &annotations.categories, &annotations.scenes, cfg.parse_mode)
            .with_context(|| format!("paths.detections ({})", path.display()))?
            .detections;
        hashes.insert("paths.detections".to_string(), hash_file(path)?);
    }
    let mut captions = HashMap::new();
    if let Some(path) = &p.captions {
        captions = load_captions(path)?;
        hashes.insert("paths.captions".to_string(), hash_file(path)?);
    }
    if let Some(path) = cfg.agents.detector.as_ref().and_then(|d| d.path.as_ref()) {
        hashes.insert("agents.detector.path".to_string(), hash_file(path)?);
    }
    Ok(Inputs {
        annotations,
        detections,
        captions,
        hashes,
    })
}

fn header_for(cfg: &RunConfig, inputs: &Inputs) -> JournalHeader {
    let config = cfg.canonical();
    let hashed = serde_json::json!({"config": config, "inputs": inputs.hashes});
    JournalHeader {
        config_hash: sha256_hex(hashed.to_string().as_bytes()),
        config,
        inputs: inputs.hashes.clone(),
    }
}

/// Reads a journal, dropping a trailing partial line (and anything after
/// the first unreadable line) from disk so appends continue cleanly.
pub fn read_journal(path: &Path) -> Result<Option<(JournalHeader, Vec<ImageEntry>)>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e).with_context(|| format!("cannot read {}", path.display())),
    };
    let mut header = None;
    let mut entries = Vec::new();
    let mut good = 0usize;
    let mut pos = 0usize;
    while let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') {
        let line = &bytes[pos..pos + nl];
        let parsed: Option<JournalLine> = serde_json::from_slice(line).ok();
        match (parsed, header.is_some()) {
            (Some(JournalLine::Header(h)), false) => header = Some(h),
            (Some(JournalLine::Image(e)), true) => entries.push(*e),
            _ => break,
        }
        pos += nl + 1;
        good = pos;
    }
    if good < bytes.len() {
        log::warn!("{}: discarding {} trailing bytes", path.display(), bytes.len() - good);
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(good as u64)?;
    }
    Ok(header.map(|h| (h, entries)))
}

struct Journal {
    out: BufWriter<File>,
}

impl Journal {
    fn create(path: &Path, header: &JournalHeader) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut j = Self {
            out: BufWriter::new(file),
        };
        j.append(&JournalLine::Header(header.clone()))?;
        Ok(j)
    }

    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    fn append(&mut self, line: &JournalLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

fn process_one(
    template: &SceneRecord,
    supplied: Option<&String>,
    set: &AgentSet,
    cats: &CategoryMap,
    cfg: &RunConfig,
) -> ImageEntry {
    let mut scene = template.clone();
    scene.caption = supplied.cloned();
    let outcome = process_scene(&mut scene, cats, &set.agents(), &cfg.pipeline_options());
    let envelopes = set.transcript().take_image(scene.image_id);
    let caption_source = if supplied.is_some() {
        Some("supplied")
    } else if envelopes.iter().any(|e| e.purpose == "caption:image-url") {
        Some("image-url")
    } else if scene.caption.is_some() {
        Some("generated")
    } else {
        None
    };
    let (status, error, records) = match outcome {
        Ok(records) => (ImageStatus::Ok, None, records),
        Err(e) => {
            log::warn!("image {} failed: {e}", scene.image_id);
            (ImageStatus::Failed, Some(e.to_string()), Vec::new())
        }
    };
    ImageEntry {
        image_id: scene.image_id,
        status,
        error,
        caption_source: caption_source.map(str::to_string),
        caption: scene.caption,
        detections: scene.detections,
        verdicts: scene.verdicts,
        corrected: scene.corrected,
        records,
        envelopes,
    }
}

/// Runs (or resumes) a pipeline run and writes its outputs.
pub fn run_pipeline(cfg: &RunConfig, control: &RunControl) -> Result<RunOutcome> {
    let configs = cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let header = header_for(cfg, &inputs);
    let out_dir = cfg.paths.out_dir.clone();
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let journal_path = out_dir.join(JOURNAL_FILE);

    let mut done: HashSet<ImageId> = HashSet::new();
    let mut journal = match control
        .resume
        .then(|| read_journal(&journal_path))
        .transpose()?
        .flatten()
    {
        Some((old, entries)) => {
            if old.config_hash != header.config_hash {
                let mut changes = diff_fields(&old.config, &header.config);
                for (k, v) in &header.inputs {
                    if old.inputs.get(k) != Some(v) {
                        changes.push(format!("{k}: file contents changed"));
                    }
                }
                bail!(
                    "refusing to resume: configuration differs from the interrupted run\n  {}",
                    changes.join("\n  ")
                );
            }
            done.extend(entries.iter().map(|e| e.image_id));
            log::info!("resuming: {} image(s) already done", done.len());
            Journal::open(&journal_path)?
        }
        None => Journal::create(&journal_path, &header)?,
    };

    let cats = &inputs.annotations.categories;
    let transcript = Arc::new(Transcript::new(cfg.clock(&configs)));
    let set = build_agents(
        &configs,
        AgentContext {
            categories: cats,
            scenes: &inputs.annotations.scenes,
            oracle: cfg.oracle(),
            detections: inputs.detections.clone(),
            parse_mode: cfg.parse_mode,
        },
        transcript,
    )?;

    let mut pending: Vec<&SceneRecord> = inputs
        .annotations
        .scenes
        .iter()
        .filter(|s| !done.contains(&s.image_id))
        .collect();
    pending.sort_by_key(|s| s.image_id);

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let interrupted = || control.interrupt.as_ref().is_some_and(|f| f.load(Ordering::SeqCst));
    let mut written = 0usize;
    let mut fatal: Option<anyhow::Error> = None;
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<ImageEntry>();
        for _ in 0..cfg.parallelism.min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, pending, set) = (&next, &stop, &pending, &set);
            let captions = &inputs.captions;
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) || interrupted() {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(scene) = pending.get(k) else { break };
                let entry = process_one(scene, captions.get(&scene.image_id), set, cats, cfg);
                if tx.send(entry).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for entry in rx {
            if stop.load(Ordering::SeqCst) {
                continue;
            }
            if cfg.strict && entry.status == ImageStatus::Failed {
                stop.store(true, Ordering::SeqCst);
                fatal = Some(anyhow::anyhow!(
                    "image {} failed in strict mode: {}",
                    entry.image_id,
                    entry.error.as_deref().unwrap_or("unknown error")
                ));
                continue;
            }
            if let Err(e) = journal.append(&JournalLine::Image(Box::new(entry))) {
                stop.store(true, Ordering::SeqCst);
                fatal = Some(e);
                continue;
            }
            written += 1;
            if control.stop_after.is_some_and(|n| written >= n) {
                stop.store(true, Ordering::SeqCst);
            }
        }
    });
    drop(journal);
    if let Some(e) = fatal {
        return Err(e);
    }

    let (_, entries) = read_journal(&journal_path)?.context("journal lost its header")?;
    let summary = finalize(&out_dir, &header, &inputs.annotations, entries, cfg.match_iou)?;
    let status = if summary.pending_images > 0 {
        RunStatus::Interrupted
    } else if summary.counts.failed_images.is_empty() {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    Ok(RunOutcome {
        status,
        summary,
        out_dir,
    })
}

fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?);
        write(&mut out)?;
        out.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Rebuilds scenes from journal entries and writes all outputs.
fn finalize(
    out_dir: &Path,
    header: &JournalHeader,
    annotations: &LoadedAnnotations,
    entries: Vec<ImageEntry>,
    match_iou: f64,
) -> Result<SummaryDoc> {
    let mut by_id: BTreeMap<ImageId, ImageEntry> = BTreeMap::new();
    for e in entries {
        by_id.insert(e.image_id, e);
    }
    let mut scenes: Vec<SceneRecord> = annotations
        .scenes
        .iter()
        .filter(|s| by_id.contains_key(&s.image_id))
        .cloned()
        .collect();
    scenes.sort_by_key(|s| s.image_id);

    let mut counts = RunSummary::default();
    let mut captions = CaptionCounts::default();
    let mut audit = Vec::new();
    let mut envelopes = Vec::new();
    for scene in &mut scenes {
        let e = by_id.remove(&scene.image_id).expect("filtered above");
        match e.status {
            ImageStatus::Ok => counts.absorb(&e.records),
            ImageStatus::Failed => counts.record_failure(e.image_id),
        }
        match e.caption_source.as_deref() {
            Some("supplied") => captions.supplied += 1,
            Some("image-url") => captions.image_url += 1,
            Some(_) => captions.generated += 1,
            None => {}
        }
        scene.caption = e.caption;
        scene.detections = e.detections;
        scene.verdicts = e.verdicts;
        scene.corrected = e.corrected;
        audit.extend(e.records);
        envelopes.extend(e.envelopes);
    }

    let cats = &annotations.categories;
    let (results, _) = results_from_scenes(&scenes, cats);
    let metrics = RunMetrics {
        before: (&evaluate_coco_with(&scenes, cats, DetectionSet::Raw)).into(),
        after: (&evaluate_coco_with(&scenes, cats, DetectionSet::Final)).into(),
        correction: (&correction_metrics(&scenes, match_iou)).into(),
    };
    let pending = annotations.scenes.len() - scenes.len();
    let summary = SummaryDoc {
        config_hash: header.config_hash.clone(),
        complete: pending == 0,
        pending_images: pending,
        counts,
        captions,
        envelopes: envelopes.len(),
        metrics,
    };

    write_atomic(&out_dir.join(RESULTS_FILE), |w| {
        serde_json::to_writer(&mut *w, &results)?;
        w.write_all(b"\n")
    })?;
    write_atomic(&out_dir.join(AUDIT_FILE), |w| write_jsonl(w, &audit))?;
    write_atomic(&out_dir.join(TRANSCRIPT_FILE), |w| write_jsonl(w, &envelopes))?;
    write_atomic(&out_dir.join(SUMMARY_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        w.write_all(b"\n")
    })?;
    Ok(summary)
}
