//! Pairs a reconstruction run with ground truth and tabulates every metric.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::data::{load_frame_png, load_mask_png, numbered_pngs};
use crate::encoders::FrozenEncoderTargets;
use crate::error::{Error, Result};
use crate::inference::sample_at;
use crate::rng::stream;
use crate::video::{Frame, Mask};

use super::caption::{bleu, verb_accuracy, Cider, PosTagger, WordEmbedder};
use super::metrics::{clip_pcc, dice, nway_topk, psnr, ssim, ClassifierBackend};

/// Column order of every table and CSV.
pub const METRIC_NAMES: [&str; 14] = [
    "two_way_video",
    "fifty_way_video",
    "clip_pcc",
    "two_way_frame",
    "fifty_way_frame",
    "ssim",
    "psnr",
    "dice",
    "bleu_1",
    "bleu_2",
    "bleu_3",
    "bleu_4",
    "cider",
    "verb_acc",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub two_way_video: f64,
    pub fifty_way_video: f64,
    pub clip_pcc: f64,
    pub two_way_frame: f64,
    pub fifty_way_frame: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub dice: f64,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub cider: f64,
    pub verb_acc: f64,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 14] {
        [
            self.two_way_video,
            self.fifty_way_video,
            self.clip_pcc,
            self.two_way_frame,
            self.fifty_way_frame,
            self.ssim,
            self.psnr,
            self.dice,
            self.bleu_1,
            self.bleu_2,
            self.bleu_3,
            self.bleu_4,
            self.cider,
            self.verb_acc,
        ]
    }

    pub fn from_values(v: [f64; 14]) -> Self {
        Self {
            two_way_video: v[0],
            fifty_way_video: v[1],
            clip_pcc: v[2],
            two_way_frame: v[3],
            fifty_way_frame: v[4],
            ssim: v[5],
            psnr: v[6],
            dice: v[7],
            bleu_1: v[8],
            bleu_2: v[9],
            bleu_3: v[10],
            bleu_4: v[11],
            cider: v[12],
            verb_acc: v[13],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub clip: String,
    pub metrics: MetricRow,
    /// Conventions that applied, e.g. capped PSNR or empty masks.
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub clip: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub mean: MetricRow,
    /// Sample standard deviation (n − 1); zero for a single sample.
    pub std: MetricRow,
    pub samples: Vec<SampleMetrics>,
    pub excluded: Vec<Excluded>,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Trials per N-way test.
    pub repeats: usize,
    pub seed: u64,
    pub verb_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: 100,
            seed: 0,
            verb_threshold: super::caption::VERB_THRESHOLD,
        }
    }
}

pub struct EvalBackends<'a> {
    pub classifier: &'a dyn ClassifierBackend,
    pub embedder: &'a dyn FrozenEncoderTargets,
    pub tagger: &'a dyn PosTagger,
    pub words: &'a dyn WordEmbedder,
}

/// Frames, masks and caption of one clip, from either a dataset directory
/// (caption inside `annotations`) or an inference output (`caption.txt`).
#[derive(Clone, Debug, PartialEq)]
pub struct EvalClip {
    pub frames: Vec<Frame>,
    pub masks: Vec<Mask>,
    pub caption: String,
}

#[derive(Deserialize)]
struct CaptionOnly {
    caption: String,
}

pub fn load_eval_clip(dir: &Path) -> Result<EvalClip> {
    let frames = numbered_pngs(&dir.join("frames"))?
        .iter()
        .map(|p| load_frame_png(p))
        .collect::<Result<Vec<_>>>()?;
    let masks = numbered_pngs(&dir.join("masks"))?
        .iter()
        .map(|p| load_mask_png(p))
        .collect::<Result<Vec<_>>>()?;
    let caption_file = dir.join("caption.txt");
    let caption = if caption_file.exists() {
        fs::read_to_string(&caption_file).map_err(|e| Error::io(&caption_file, e))?
    } else {
        let p = dir.join("annotations");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let c: CaptionOnly = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        c.caption
    };
    Ok(EvalClip {
        frames,
        masks,
        caption: caption.trim().to_string(),
    })
}

fn clip_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?.to_string();
            name.starts_with("clip_").then_some((name, p))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Resamples `frames` to `count` frames at uniform positions.
fn align(frames: &[Frame], count: usize) -> Result<Vec<Frame>> {
    if frames.len() == count {
        return Ok(frames.to_vec());
    }
    if frames.len() < 2 || count < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: frames.len().min(count),
        });
    }
    let n = frames.len() - 1;
    (0..count)
        .map(|j| sample_at(frames, j as f64 * n as f64 / (count - 1) as f64))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Metrics of one predicted clip against its ground truth. Ground-truth
/// frames are resampled to the predicted frame count.
pub fn evaluate_pair(
    clip: &str,
    pred: &EvalClip,
    gt: &EvalClip,
    cider: &Cider,
    backends: &EvalBackends,
    config: &EvalConfig,
) -> Result<SampleMetrics> {
    if pred.frames.is_empty() || gt.frames.is_empty() {
        return Err(Error::InsufficientFrames { needed: 1, got: 0 });
    }
    if pred.masks.len() != gt.masks.len() || pred.masks.is_empty() {
        return Err(Error::shape(format!(
            "{} predicted masks for {} ground-truth masks",
            pred.masks.len(),
            gt.masks.len()
        )));
    }
    let gt_frames = align(&gt.frames, pred.frames.len())?;
    let mut flags = Vec::new();
    let mut rng = stream(config.seed, &format!("eval/nway/{clip}"));
    let c = backends.classifier;

    let gv = c.video_probs(&gt_frames)?;
    let pv = c.video_probs(&pred.frames)?;
    let two_way_video = nway_topk(&gv, &pv, 2, 1, config.repeats, &mut rng)?;
    let fifty_way_video = nway_topk(&gv, &pv, 50, 1, config.repeats, &mut rng)?;

    let (mut two, mut fifty, mut ss, mut ps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut capped = 0;
    for (g, p) in gt_frames.iter().zip(&pred.frames) {
        let gp = c.frame_probs(g)?;
        let pp = c.frame_probs(p)?;
        two.push(nway_topk(&gp, &pp, 2, 1, config.repeats, &mut rng)?);
        fifty.push(nway_topk(&gp, &pp, 50, 1, config.repeats, &mut rng)?);
        ss.push(ssim(p, g)?);
        let s = psnr(p, g)?;
        capped += usize::from(s.capped);
        ps.push(s.db);
    }
    if capped > 0 {
        flags.push(format!("psnr capped on {capped} frames"));
    }

    let pcc = clip_pcc(&pred.frames, backends.embedder)?;
    if pcc.excluded_pairs > 0 {
        flags.push(format!("clip_pcc skipped {} zero-norm pairs", pcc.excluded_pairs));
    }

    let mut dices = Vec::new();
    let mut empty = 0;
    for (p, g) in pred.masks.iter().zip(&gt.masks) {
        let d = dice(p, g)?;
        empty += usize::from(d.both_empty);
        dices.push(d.value);
    }
    if empty > 0 {
        flags.push(format!("dice: {empty} frames with both masks empty"));
    }

    let b = bleu(&pred.caption, &[gt.caption.as_str()])?;
    let cider = cider.score(&pred.caption, &[gt.caption.as_str()])?;
    let verbs = verb_accuracy(&pred.caption, &gt.caption, backends.tagger, backends.words, config.verb_threshold);
    if verbs.no_verbs {
        flags.push("no verbs in prediction".into());
    }

    Ok(SampleMetrics {
        clip: clip.to_string(),
        metrics: MetricRow {
            two_way_video,
            fifty_way_video,
            clip_pcc: pcc.score,
            two_way_frame: mean(&two),
            fifty_way_frame: mean(&fifty),
            ssim: mean(&ss),
            psnr: mean(&ps),
            dice: mean(&dices),
            bleu_1: b[0],
            bleu_2: b[1],
            bleu_3: b[2],
            bleu_4: b[3],
            cider,
            verb_acc: verbs.accuracy,
        },
        flags,
    })
}

/// Mean and sample standard deviation per column.
pub fn summarize(samples: &[SampleMetrics]) -> Result<(MetricRow, MetricRow)> {
    if samples.is_empty() {
        return Err(Error::domain("no samples to summarize"));
    }
    let n = samples.len() as f64;
    let mut m = [0.0; 14];
    for s in samples {
        for (a, v) in m.iter_mut().zip(s.metrics.values()) {
            *a += v / n;
        }
    }
    let mut sd = [0.0; 14];
    if samples.len() > 1 {
        for s in samples {
            for ((a, v), mu) in sd.iter_mut().zip(s.metrics.values()).zip(m) {
                *a += (v - mu) * (v - mu);
            }
        }
        sd = sd.map(|v| (v / (n - 1.0)).sqrt());
    }
    Ok((MetricRow::from_values(m), MetricRow::from_values(sd)))
}

/// Evaluates every `clip_*` directory present in both trees. Clips found in
/// only one tree, or that fail to load or compare, are excluded and listed.
pub fn emit_report(run_dir: &Path, gt_dir: &Path, backends: &EvalBackends, config: &EvalConfig) -> Result<MetricReport> {
    let pred_dirs = clip_dirs(run_dir)?;
    let gt_dirs = clip_dirs(gt_dir)?;
    if pred_dirs.is_empty() {
        return Err(Error::Format(format!("{}: no clip directories", run_dir.display())));
    }
    let mut excluded = Vec::new();
    let mut pairs = Vec::new();
    for (name, p) in &pred_dirs {
        match gt_dirs.iter().find(|(n, _)| n == name) {
            Some((_, g)) => match (load_eval_clip(p), load_eval_clip(g)) {
                (Ok(a), Ok(b)) => pairs.push((name.clone(), a, b)),
                (Err(e), _) | (_, Err(e)) => excluded.push(Excluded {
                    clip: name.clone(),
                    reason: e.to_string(),
                }),
            },
            None => excluded.push(Excluded {
                clip: name.clone(),
                reason: "no ground truth".into(),
            }),
        }
    }
    for (name, _) in &gt_dirs {
        if !pred_dirs.iter().any(|(n, _)| n == name) {
            excluded.push(Excluded {
                clip: name.clone(),
                reason: "no prediction".into(),
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::Format(format!(
            "{}: no clips pair with {}",
            run_dir.display(),
            gt_dir.display()
        )));
    }
    let corpus: Vec<Vec<String>> = pairs.iter().map(|(_, _, g)| vec![g.caption.clone()]).collect();
    let cider = Cider::new(&corpus)?;
    let mut samples = Vec::new();
    for (name, pred, gt) in &pairs {
        match evaluate_pair(name, pred, gt, &cider, backends, config) {
            Ok(s) => samples.push(s),
            Err(e) => excluded.push(Excluded {
                clip: name.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let (mean, std) = summarize(&samples)?;
    excluded.sort_by(|a, b| a.clip.cmp(&b.clip));
    Ok(MetricReport {
        count: samples.len(),
        mean,
        std,
        samples,
        excluded,
        repeats: config.repeats,
        seed: config.seed,
    })
}

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

/// Human-readable tables: video-level semantics, frame-level semantics and
/// pixels, segmentation, captions.
pub fn format_table(r: &MetricReport) -> String {
    let (m, s) = (&r.mean, &r.std);
    let mut out = String::new();
    let w = 17;
    let _ = writeln!(out, "samples: {} (excluded: {})", r.count, r.excluded.len());
    let _ = writeln!(out);
    let _ = writeln!(out, "Video      | {:>w$} | {:>w$} | {:>w$}", "2-way", "50-way", "CLIP-pcc");
    let _ = writeln!(
        out,
        "           | {:>w$} | {:>w$} | {:>w$}",
        pm(m.two_way_video, s.two_way_video),
        pm(m.fifty_way_video, s.fifty_way_video),
        pm(m.clip_pcc, s.clip_pcc)
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Frame      | {:>w$} | {:>w$} | {:>w$} | {:>w$}",
        "2-way", "50-way", "SSIM", "PSNR"
    );
    let _ = writeln!(
        out,
        "           | {:>w$} | {:>w$} | {:>w$} | {:>w$}",
        pm(m.two_way_frame, s.two_way_frame),
        pm(m.fifty_way_frame, s.fifty_way_frame),
        pm(m.ssim, s.ssim),
        pm(m.psnr, s.psnr)
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "Mask       | {:>w$}", "Dice");
    let _ = writeln!(out, "           | {:>w$}", pm(m.dice, s.dice));
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Caption    | {:>w$} | {:>w$} | {:>w$} | {:>w$} | {:>w$} | {:>w$}",
        "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "CIDEr", "Verb Acc"
    );
    let _ = writeln!(
        out,
        "           | {:>w$} | {:>w$} | {:>w$} | {:>w$} | {:>w$} | {:>w$}",
        pm(m.bleu_1, s.bleu_1),
        pm(m.bleu_2, s.bleu_2),
        pm(m.bleu_3, s.bleu_3),
        pm(m.bleu_4, s.bleu_4),
        pm(m.cider, s.cider),
        pm(m.verb_acc, s.verb_acc)
    );
    for e in &r.excluded {
        let _ = writeln!(out, "excluded {}: {}", e.clip, e.reason);
    }
    out
}

/// Per-sample rows, then `mean` and `std` rows.
pub fn format_csv(r: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["clip"];
    header.extend(METRIC_NAMES);
    w.write_record(&header).map_err(fmt_err)?;
    let rows = r
        .samples
        .iter()
        .map(|s| (s.clip.as_str(), &s.metrics))
        .chain([("mean", &r.mean), ("std", &r.std)]);
    for (name, row) in rows {
        let mut rec = vec![name.to_string()];
        rec.extend(row.values().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(fmt_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Writes `<stem>.csv`, `<stem>.txt` and `<stem>.json` next to `out`,
/// whatever extension `out` carries. Returns the three paths.
pub fn write_report(r: &MetricReport, out: &Path) -> Result<[PathBuf; 3]> {
    let csv_path = out.with_extension("csv");
    let txt_path = out.with_extension("txt");
    let json_path = out.with_extension("json");
    write_atomic(&csv_path, format_csv(r)?.as_bytes())?;
    write_atomic(&txt_path, format_table(r).as_bytes())?;
    let json = serde_json::to_string_pretty(r).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&json_path, json.as_bytes())?;
    Ok([csv_path, txt_path, json_path])
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    let p = path.with_extension("json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}
