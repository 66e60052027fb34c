//! Acceptance criteria, one PASS/FAIL line each.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;

use neurons::brain::BrainEpoch;
use neurons::checkpoint::Checkpoint;
use neurons::data::read_dataset;
use neurons::decoupler::{schedule_weight, DecouplerEpoch, ProgressiveSchedule};
use neurons::encoders::EncoderSpec;
use neurons::eval::{bleu, dice, nway_topk, psnr, read_report};
use neurons::harness::layout;
use neurons::inference::{reconstruct_video, InferenceConfig, Reconstructor, StubImageGenerator, StubT2V};
use neurons::losses::{
    bce_loss, bce_with_logits, bimixco_loss, clip_text_loss, cls_loss, prior_loss, rec_loss, token_nll, MixState,
};
use neurons::rng::{stream, Rng};
use neurons::tasks::{discover_key_object, ConceptTaxonomy, KeyObjectRules, ObjectTrack};
use neurons::video::{Frame, Mask, FRAMES_PER_CLIP, SOURCE_FPS, TARGET_FPS};
use neurons::Tensor;

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
const FD_SEEDS: u64 = 20;
const FD_BUDGET: Duration = Duration::from_secs(60);
const REDUCTION_TOL: f64 = 1e-8;
const SCHEDULE_TOL: f64 = 1e-9;
const KEY_OBJECT_SCENES: u64 = 1000;
const BRAIN_DROP: f64 = 0.8;
const DECOUPLER_DROP: f64 = 0.5;
const DICE_MIN: f64 = 0.6;
const PIPELINE_BUDGET: Duration = Duration::from_secs(600);

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(rng: &mut Rng, shape: [usize; 2], lo: f64, hi: f64) -> Tensor {
    let data = (0..shape[0] * shape[1]).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

fn binary_tensor(rng: &mut Rng, shape: [usize; 2]) -> Tensor {
    let data = (0..shape[0] * shape[1]).map(|_| f64::from(rng.random_bool(0.3))).collect();
    Tensor::new(shape, data).unwrap()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the analytic gradient
/// and central differences of `f` at `x`.
fn fd_rel_err(x: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut numeric = vec![0.0; x.len()];
    let mut probe = x.clone();
    for (i, slot) in numeric.iter_mut().enumerate() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = v - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = v;
        *slot = (up - down) / (2.0 * FD_STEP);
    }
    let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };
    for seed in 0..FD_SEEDS {
        let mut rng = stream(seed, "acceptance/fd");

        let logits = random_tensor(&mut rng, [6, 16], -3.0, 3.0);
        let gt = binary_tensor(&mut rng, [6, 16]);
        let (_, g) = bce_with_logits(&logits, &gt).unwrap();
        record("L_seg", fd_rel_err(&logits, &g, |x| bce_with_logits(x, &gt).unwrap().0));

        let logits = random_tensor(&mut rng, [2, 51], -3.0, 3.0);
        let gt = binary_tensor(&mut rng, [2, 51]);
        let (_, g) = cls_loss(&logits, &gt).unwrap();
        record("L_cls", fd_rel_err(&logits, &g, |x| cls_loss(x, &gt).unwrap().0));

        let logits = random_tensor(&mut rng, [5, 12], -2.0, 2.0);
        let targets: Vec<u32> = (0..5).map(|_| rng.random_range(0..12)).collect();
        let (_, g) = token_nll(&logits, &targets).unwrap();
        record("L_txt", fd_rel_err(&logits, &g, |x| token_nll(x, &targets).unwrap().0));

        let pred = random_tensor(&mut rng, [6, 16], -1.0, 1.0);
        let offsets: Vec<f64> = pred.data().iter().map(|v| v + if rng.random_bool(0.5) { 0.5 } else { -0.5 }).collect();
        let target = Tensor::new([6, 16], offsets).unwrap();
        let (_, g) = rec_loss(&pred, &target).unwrap();
        record("L_rec", fd_rel_err(&pred, &g, |x| rec_loss(x, &target).unwrap().0));

        let pred = random_tensor(&mut rng, [4, 32], -1.0, 1.0);
        let target = random_tensor(&mut rng, [4, 32], -1.0, 1.0);
        let (_, g) = prior_loss(&pred, &target).unwrap();
        record("L_prior", fd_rel_err(&pred, &g, |x| prior_loss(x, &target).unwrap().0));

        let emb = random_tensor(&mut rng, [5, 8], -1.0, 1.0);
        let tgt = random_tensor(&mut rng, [5, 8], -1.0, 1.0);
        let (_, ge, gt) = clip_text_loss(&emb, &tgt, 0.1).unwrap();
        record("L_CLIPt", fd_rel_err(&emb, &ge, |x| clip_text_loss(x, &tgt, 0.1).unwrap().0));
        record("L_CLIPt", fd_rel_err(&tgt, &gt, |x| clip_text_loss(&emb, x, 0.1).unwrap().0));

        let state = MixState::sample(5, 0.15, &mut rng).unwrap();
        let (_, ge, gt) = bimixco_loss(&emb, &tgt, &state, 0.1).unwrap();
        record("BiMixCo", fd_rel_err(&emb, &ge, |x| bimixco_loss(x, &tgt, &state, 0.1).unwrap().0));
        record("BiMixCo", fd_rel_err(&tgt, &gt, |x| bimixco_loss(&emb, x, &state, 0.1).unwrap().0));
    }
    let elapsed = start.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = format!(
        "{} losses x {FD_SEEDS} seeds, max rel err {max:.2e} (< {FD_TOL:.0e}), {:.2}s (< {}s); {}",
        worst.len(),
        elapsed.as_secs_f64(),
        FD_BUDGET.as_secs(),
        worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ")
    );
    check(worst.len() == 7 && max < FD_TOL && elapsed < FD_BUDGET, detail)
}

/// Symmetric InfoNCE written out directly: mean over both directions of the
/// cross-entropy of each row of the cosine-similarity logits.
fn infonce(emb: &Tensor, tgt: &Tensor, tau: f64) -> f64 {
    let m = emb.rows();
    let unit = |t: &Tensor, i: usize| {
        let r = t.row(i);
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter().map(|v| v / n).collect::<Vec<f64>>()
    };
    let u: Vec<Vec<f64>> = (0..m).map(|i| unit(emb, i)).collect();
    let t: Vec<Vec<f64>> = (0..m).map(|i| unit(tgt, i)).collect();
    let s = |i: usize, j: usize| u[i].iter().zip(&t[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let lse = |xs: Vec<f64>| {
        let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    let mut total = 0.0;
    for i in 0..m {
        total += lse((0..m).map(|j| s(i, j)).collect()) - s(i, i);
        total += lse((0..m).map(|j| s(j, i)).collect()) - s(i, i);
    }
    total / (2.0 * m as f64)
}

fn bimixco_reduction() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = stream(seed, "acceptance/bimixco");
        let m = rng.random_range(2..9);
        let d = rng.random_range(3..17);
        let emb = random_tensor(&mut rng, [m, d], -1.0, 1.0);
        let tgt = random_tensor(&mut rng, [m, d], -1.0, 1.0);
        let tau = rng.random_range(0.05..1.0);
        let mut state = MixState::sample(m, 0.15, &mut rng).unwrap();
        state.lambda = vec![1.0; m];
        let (v, _, _) = bimixco_loss(&emb, &tgt, &state, tau).unwrap();
        worst = worst.max((v - infonce(&emb, &tgt, tau)).abs());
    }
    check(
        worst <= REDUCTION_TOL,
        format!("100 batches, max |BiMixCo(λ≡1) − InfoNCE| = {worst:.2e} (≤ {REDUCTION_TOL:.0e})"),
    )
}

fn scheduler_suite() -> Outcome {
    let period = 20;
    let nb = 4;
    let sched = ProgressiveSchedule::staggered(period);
    let mut failures = Vec::new();
    if sched.period_starts != [0, 5, 10, 15] {
        failures.push(format!("starts {:?}", sched.period_starts));
    }
    let t = period * nb;
    let mut checked = 0usize;
    for (k, &s) in sched.period_starts.iter().enumerate() {
        let w_at = |c: usize| schedule_weight(s + c / nb, c % nb, nb, s, period);
        for epoch in 0..sched.end() + period {
            for batch in 0..nb {
                checked += 1;
                let w = schedule_weight(epoch, batch, nb, s, period);
                if !(1.0..=10.0).contains(&w) {
                    failures.push(format!("task {k} E{epoch} B{batch}: {w} outside [1, 10]"));
                }
                if (epoch < s || epoch >= s + period) && w != 1.0 {
                    failures.push(format!("task {k} E{epoch} B{batch}: {w} outside the period"));
                }
                if sched.weights(epoch, batch, nb).w[k] != w {
                    failures.push(format!("task {k} E{epoch} B{batch}: schedule disagrees"));
                }
            }
        }
        if (w_at(0) - 1.0).abs() > SCHEDULE_TOL {
            failures.push(format!("task {k}: start weight {}", w_at(0)));
        }
        if (schedule_weight(s + period, 0, nb, s, period) - 1.0).abs() > SCHEDULE_TOL {
            failures.push(format!("task {k}: end weight"));
        }
        if (w_at(t / 2) - 10.0).abs() > SCHEDULE_TOL {
            failures.push(format!("task {k}: midpoint weight {}", w_at(t / 2)));
        }
        for c in 1..t {
            if (w_at(c) - w_at(t - c)).abs() > SCHEDULE_TOL {
                failures.push(format!("task {k}: asymmetric at C={c}"));
            }
        }
    }
    check(
        failures.is_empty(),
        format!(
            "4 staggered periods (P={period}, {nb} batches/epoch), {checked} points; {}",
            if failures.is_empty() {
                "all rules hold".to_string()
            } else {
                failures[..failures.len().min(3)].join("; ")
            }
        ),
    )
}

fn random_scene(rng: &mut Rng, names: &[String]) -> Vec<ObjectTrack> {
    let size = 32;
    let n = rng.random_range(1..=5);
    (0..n)
        .map(|_| {
            let concept = names[rng.random_range(0..names.len())].clone();
            let side = if rng.random_bool(0.2) {
                rng.random_range(23..=30)
            } else {
                rng.random_range(2..=12)
            };
            let max = size - side;
            let (mut x, mut y) = (rng.random_range(0..=max), rng.random_range(0..=max));
            let still = rng.random_bool(0.2);
            let masks = (0..FRAMES_PER_CLIP)
                .map(|_| {
                    let m = Mask::from_fn(size, size, |py, px| (x..x + side).contains(&px) && (y..y + side).contains(&py));
                    if !still {
                        x = (x as i64 + rng.random_range(-3..=3)).clamp(0, max as i64) as usize;
                        y = (y as i64 + rng.random_range(-3..=3)).clamp(0, max as i64) as usize;
                    }
                    m
                })
                .collect();
            ObjectTrack::from_masks(concept, masks).unwrap()
        })
        .collect()
}

/// Direct reading of the rules from the raw masks: drop background and
/// over-half-image tracks; prefer priority tracks; rank by doubled or plain
/// centroid path length; fall back to the largest background track. Ties
/// go to the lower taxonomy index, then the lower track index.
fn brute_force_key(tracks: &[ObjectTrack], tax: &ConceptTaxonomy) -> usize {
    let stats: Vec<(f64, f64)> = tracks
        .iter()
        .map(|t| {
            let mut path = 0.0;
            let mut area = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            for m in &t.per_frame_masks {
                let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
                for y in 0..m.height {
                    for x in 0..m.width {
                        if m.get(y, x) {
                            sx += x as f64;
                            sy += y as f64;
                            n += 1.0;
                        }
                    }
                }
                area += n / (m.height * m.width) as f64;
                let c = (sx / n, sy / n);
                if let Some(p) = prev {
                    path += ((c.0 - p.0).powi(2) + (c.1 - p.1).powi(2)).sqrt();
                }
                prev = Some(c);
            }
            (path, area / t.per_frame_masks.len() as f64)
        })
        .collect();
    let idx = |i: usize| tax.index_of(&tracks[i].concept).unwrap();
    let better = |a: usize, b: usize, ka: f64, kb: f64| {
        ka > kb + 1e-9 || ((ka - kb).abs() <= 1e-9 && (idx(a), a) < (idx(b), b))
    };
    let pick = |pool: Vec<usize>, key: &dyn Fn(usize) -> f64| {
        let mut best = pool[0];
        for &i in &pool[1..] {
            if better(i, best, key(i), key(best)) {
                best = i;
            }
        }
        best
    };
    let survivors: Vec<usize> = (0..tracks.len())
        .filter(|&i| !tax.is_background(&tracks[i].concept) && stats[i].1 <= 0.5)
        .collect();
    let priority: Vec<usize> = survivors.iter().copied().filter(|&i| tax.is_priority(&tracks[i].concept)).collect();
    if !priority.is_empty() {
        return pick(priority, &|i| 2.0 * stats[i].0);
    }
    if !survivors.is_empty() {
        return pick(survivors, &|i| stats[i].0);
    }
    let bg: Vec<usize> = (0..tracks.len()).filter(|&i| tax.is_background(&tracks[i].concept)).collect();
    let pool = if bg.is_empty() { (0..tracks.len()).collect() } else { bg };
    pick(pool, &|i| stats[i].1)
}

fn key_object_oracle() -> Outcome {
    let tax = ConceptTaxonomy::standard();
    let names = tax.names().to_vec();
    let rules = KeyObjectRules::default();
    let mut agree = 0;
    let mut first_miss = None;
    for seed in 0..KEY_OBJECT_SCENES {
        let mut rng = stream(seed, "acceptance/key-object");
        let tracks = random_scene(&mut rng, &names);
        let got = discover_key_object(&tracks, &tax, &rules).unwrap().track_index;
        let want = brute_force_key(&tracks, &tax);
        if got == want {
            agree += 1;
        } else if first_miss.is_none() {
            first_miss = Some(format!("; first miss seed {seed}: {got} vs {want}"));
        }
    }
    check(
        agree == KEY_OBJECT_SCENES,
        format!("{agree}/{KEY_OBJECT_SCENES} scenes agree{}", first_miss.unwrap_or_default()),
    )
}

fn metric_references() -> Outcome {
    let half = Tensor::new([1, 2], vec![0.5, 0.5]).unwrap();
    let gt = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
    let bce = bce_loss(&half, &gt).unwrap().0;
    let bce_ok = (bce - std::f64::consts::LN_2).abs() <= 1e-9;

    let a = Frame::filled(16, 16, [0.4, 0.4, 0.4]);
    let b = Frame::filled(16, 16, [0.5, 0.5, 0.5]);
    let p = psnr(&a, &b).unwrap().db;
    let psnr_ok = (p - 20.0).abs() <= 1e-6;

    let pm = Mask::from_fn(4, 4, |y, x| y == 0 && x < 2);
    let gm = Mask::from_fn(4, 4, |y, x| y == 0 && (1..3).contains(&x));
    let d = dice(&pm, &gm).unwrap().value;
    let dice_ok = d == 0.5;

    let b1 = bleu("a b c d", &["a b c d e"]).unwrap()[0];
    let want = (1.0f64 - 5.0 / 4.0).exp();
    let bleu_ok = (b1 - want).abs() <= 1e-6;

    let labels = 64;
    let uniform = vec![1.0 / labels as f64; labels];
    let mut rng = stream(0, "acceptance/uniform");
    let mut rate = 0.0;
    for _ in 0..50 {
        let mut gt = vec![0.0; labels];
        gt[rng.random_range(0..labels)] = 1.0;
        rate += nway_topk(&gt, &uniform, 2, 1, 100, &mut rng).unwrap();
    }
    rate /= 50.0;
    let uniform_ok = (0.40..=0.60).contains(&rate);

    check(
        bce_ok && psnr_ok && dice_ok && bleu_ok && uniform_ok,
        format!("BCE(0.5) {bce:.12} vs ln2; PSNR {p:.9} dB; Dice {d}; BLEU-1 {b1:.9} vs {want:.9}; uniform 2-way {rate:.3}"),
    )
}

fn history_drop(first: f64, last: f64) -> f64 {
    1.0 - last / first
}

fn overfit_smoke(run: &Path, pipeline: Duration) -> Outcome {
    let brain = Checkpoint::load(&run.join(layout::BRAIN)).map_err(|e| e.to_string())?;
    let bh: Vec<BrainEpoch> = brain.meta("history").map_err(|e| e.to_string())?;
    let brain_drop = history_drop(bh[0].total, bh[bh.len() - 1].total);

    let dec = Checkpoint::load(&run.join(layout::DECOUPLER)).map_err(|e| e.to_string())?;
    let dh: Vec<DecouplerEpoch> = dec.meta("history").map_err(|e| e.to_string())?;
    let (first, last) = (dh[0].losses, dh[dh.len() - 1].losses);
    let drops: Vec<f64> = (0..4).map(|k| history_drop(first[k], last[k])).collect();

    let data = read_dataset(&run.join(layout::DATA)).map_err(|e| e.to_string())?;
    let spec: EncoderSpec = dec.meta("encoders").map_err(|e| e.to_string())?;
    let enc = spec.clip().map_err(|e| e.to_string())?;
    let codec = spec.codec().map_err(|e| e.to_string())?;
    let models = Reconstructor::from_checkpoints(Some(&brain), &dec, &enc, &codec, &StubImageGenerator, InferenceConfig::default())
        .map_err(|e| e.to_string())?;
    let mut dice_sum = 0.0;
    let mut frames = 0;
    for s in &data.samples {
        let heads = models.heads(&s.fmri).map_err(|e| e.to_string())?;
        let masks = models.masks(&heads.seg_probs).map_err(|e| e.to_string())?;
        for (p, g) in masks.iter().zip(&s.annotations.key_masks) {
            dice_sum += dice(p, g).map_err(|e| e.to_string())?.value;
            frames += 1;
        }
    }
    let mean_dice = dice_sum / frames as f64;
    check(
        data.len() == 8
            && brain_drop >= BRAIN_DROP
            && drops.iter().all(|&d| d >= DECOUPLER_DROP)
            && mean_dice >= DICE_MIN
            && pipeline < PIPELINE_BUDGET,
        format!(
            "{} clips; brain loss -{:.1}% (≥ {:.0}%); decoupler seg/cls/txt/rec -{:.1}%/-{:.1}%/-{:.1}%/-{:.1}% (≥ {:.0}%); train Dice {mean_dice:.3} (≥ {DICE_MIN}); pipeline {:.1}s (< {}s)",
            data.len(),
            100.0 * brain_drop,
            100.0 * BRAIN_DROP,
            100.0 * drops[0],
            100.0 * drops[1],
            100.0 * drops[2],
            100.0 * drops[3],
            100.0 * DECOUPLER_DROP,
            pipeline.as_secs_f64(),
            PIPELINE_BUDGET.as_secs()
        ),
    )
}

fn inference_contract(run: &Path) -> Outcome {
    let e = |e: neurons::Error| e.to_string();
    let dec = Checkpoint::load(&run.join(layout::DECOUPLER)).map_err(e)?;
    let data = read_dataset(&run.join(layout::DATA)).map_err(e)?;
    let spec: EncoderSpec = dec.meta("encoders").map_err(e)?;
    let enc = spec.clip().map_err(e)?;
    let codec = spec.codec().map_err(e)?;
    let models =
        Reconstructor::from_checkpoints(None, &dec, &enc, &codec, &StubImageGenerator, InferenceConfig::default()).map_err(e)?;
    let backend = StubT2V::default();
    let mut problems = Vec::new();
    let (mut mask_lo, mut mask_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &data.samples {
        if s.clip.frames.len() != FRAMES_PER_CLIP {
            problems.push(format!("clip {} has {} input frames", s.fmri.clip_id, s.clip.frames.len()));
        }
        let a = reconstruct_video(&s.fmri, &models, &backend, 17).map_err(|e| e.to_string())?;
        let b = reconstruct_video(&s.fmri, &models, &backend, 17).map_err(|e| e.to_string())?;
        if a.frames.len() != 16 || a.fps != TARGET_FPS {
            problems.push(format!("clip {}: {} frames at {} FPS", s.fmri.clip_id, a.frames.len(), a.fps));
        }
        if a.frames.iter().any(|f| f.data.iter().any(|v| !(0.0..=1.0).contains(v))) {
            problems.push(format!("clip {}: pixel outside [0, 1]", s.fmri.clip_id));
        }
        for m in a.bundle.rescaled_masks.iter().flatten() {
            mask_lo = mask_lo.min(*m);
            mask_hi = mask_hi.max(*m);
        }
        let same = a.frames.iter().zip(&b.frames).all(|(x, y)| {
            x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits())
        }) && a.masks == b.masks
            && a.bundle == b.bundle;
        if !same {
            problems.push(format!("clip {}: runs differ", s.fmri.clip_id));
        }
    }
    let masks_ok = (0.5..=1.0).contains(&mask_lo) && (0.5..=1.0).contains(&mask_hi);
    check(
        problems.is_empty() && masks_ok,
        format!(
            "{} clips, {FRAMES_PER_CLIP} frames @{SOURCE_FPS} FPS -> 16 frames @{TARGET_FPS} FPS; masks in [{mask_lo}, {mask_hi}]; {}",
            data.len(),
            if problems.is_empty() {
                "bit-identical reruns".to_string()
            } else {
                problems.join("; ")
            }
        ),
    )
}

fn end_to_end(run: &Path, status_ok: bool, bin: &Path, scratch: &Path) -> Outcome {
    if !status_ok {
        return Err("`neurons run` failed".into());
    }
    let report = read_report(&run.join(layout::REPORT_JSON)).map_err(|e| e.to_string())?;
    let txt = std::fs::read_to_string(run.join(layout::REPORT_TXT)).map_err(|e| e.to_string())?;
    let populated = report.mean.values().iter().chain(report.std.values().iter()).all(|v| v.is_finite());
    let shaped = ["2-way", "50-way", "CLIP-pcc", "SSIM", "PSNR", "±"].iter().all(|h| txt.contains(h));

    let gt_out = scratch.join("gt_vs_gt/report");
    let data = run.join(layout::DATA);
    let status = Command::new(bin)
        .args(["eval", "--run"])
        .arg(&data)
        .arg("--gt")
        .arg(&data)
        .arg("--out")
        .arg(&gt_out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("GT-vs-GT eval failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    let gt = read_report(&gt_out).map_err(|e| e.to_string())?;
    let m = gt.mean;
    let self_ok = m.two_way_video == 1.0 && m.two_way_frame == 1.0 && m.ssim == 1.0 && m.dice == 1.0;
    check(
        report.count >= 8 && populated && shaped && self_ok,
        format!(
            "{} samples, 14 metrics populated: {populated}, table shape: {shaped}; GT-vs-GT 2-way {}/{} SSIM {} Dice {}",
            report.count, m.two_way_video, m.two_way_frame, m.ssim, m.dice
        ),
    )
}

fn main() {
    let bin = Path::new(env!("CARGO_BIN_EXE_neurons"));
    let scratch = tempfile::tempdir().expect("temp dir");
    let run = scratch.path().join("run");
    let start = Instant::now();
    let status = Command::new(bin)
        .args(["run", "--seed", "0", "--out"])
        .arg(&run)
        .env_remove("NEURONS_BACKEND")
        .env_remove("NEURONS_BACKEND_CMD")
        .output()
        .expect("spawn neurons");
    let pipeline = start.elapsed();
    if !status.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&status.stderr));
    }

    let criteria: [Criterion; 8] = [
        ("gradient suite", Box::new(gradient_suite)),
        ("BiMixCo reduction", Box::new(bimixco_reduction)),
        ("scheduler suite", Box::new(scheduler_suite)),
        ("key-object oracle", Box::new(key_object_oracle)),
        ("metric references", Box::new(metric_references)),
        ("overfit smoke", Box::new(|| overfit_smoke(&run, pipeline))),
        ("inference contract", Box::new(|| inference_contract(&run))),
        (
            "end-to-end report",
            Box::new(|| end_to_end(&run, status.status.success(), bin, scratch.path())),
        ),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
