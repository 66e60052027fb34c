use proptest::prelude::*;

use neurons::decoupler::{attention, schedule_weight, DecoderDims, Decoupler, DecouplerConfig, Task};
use neurons::eval::{bleu, dice, nway_topk, psnr};
use neurons::graph::Graph;
use neurons::inference::{interpolate_fps, rescale_mask};
use neurons::rng::stream;
use neurons::video::{Frame, Mask};
use neurons::Tensor;

fn mask(h: usize, w: usize, bits: &[bool]) -> Mask {
    Mask::from_fn(h, w, |y, x| bits[y * w + x])
}

fn dims() -> DecoderDims {
    DecoderDims {
        tokens: 2,
        width: 4,
        text_tokens: 2,
        seg_h: 4,
        seg_w: 4,
        latent_h: 2,
        latent_w: 2,
        latent_channels: 3,
        vocab: 12,
    }
}

fn small_decoupler(seed: u64) -> Decoupler {
    let cfg = DecouplerConfig {
        trunk_hidden: 8,
        feat_channels: 2,
        text_dim: 6,
        max_caption_len: 6,
        ..DecouplerConfig::default()
    };
    Decoupler::init(cfg, dims(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 36), b in prop::collection::vec(any::<bool>(), 36)) {
        let (ma, mb) = (mask(6, 6, &a), mask(6, 6, &b));
        let ab = dice(&ma, &mb).unwrap().value;
        let ba = dice(&mb, &ma).unwrap().value;
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&ma, &ma).unwrap().value, 1.0);
    }

    #[test]
    fn psnr_falls_as_error_grows(base in 0.0f64..0.5, small in 0.01f64..0.2, extra in 0.01f64..0.2) {
        let gt = Frame::filled(8, 8, [base; 3]);
        let near = Frame::filled(8, 8, [base + small; 3]);
        let far = Frame::filled(8, 8, [base + small + extra; 3]);
        prop_assert!(psnr(&gt, &near).unwrap().db > psnr(&gt, &far).unwrap().db);
    }

    #[test]
    fn nway_rate_grows_with_k(seed in any::<u64>(), probs in prop::collection::vec(0.0f64..1.0, 12), gt in 0usize..12) {
        let mut onehot = vec![0.0; 12];
        onehot[gt] = 1.0;
        let mut last = 0.0;
        for k in 1..5 {
            let mut rng = stream(seed, "nway");
            let rate = nway_topk(&onehot, &probs, 5, k, 40, &mut rng).unwrap();
            prop_assert!(rate >= last);
            last = rate;
        }
    }

    #[test]
    fn interpolated_frames_stay_inside_the_input_envelope(values in prop::collection::vec(0.0f64..1.0, 6 * 4 * 3)) {
        let frames: Vec<Frame> = values.chunks(12).map(|c| Frame::new(2, 2, c.to_vec()).unwrap()).collect();
        let out = interpolate_fps(&frames, 3.0, 8.0).unwrap();
        prop_assert_eq!(out.len(), 16);
        prop_assert_eq!(&out[0], &frames[0]);
        prop_assert_eq!(&out[15], &frames[5]);
        for f in &out {
            for (i, v) in f.data.iter().enumerate() {
                let lo = frames.iter().map(|g| g.data[i]).fold(f64::INFINITY, f64::min);
                let hi = frames.iter().map(|g| g.data[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn rescale_is_affine_onto_upper_half(m in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let r = rescale_mask(&m).unwrap();
        for (a, b) in m.iter().zip(&r) {
            prop_assert!((0.5..=1.0).contains(b));
            prop_assert!((b - (0.5 + 0.5 * a)).abs() < 1e-15);
        }
        for (i, j) in (0..m.len()).zip(1..m.len()) {
            prop_assert_eq!(m[i] < m[j], r[i] < r[j]);
        }
    }

    #[test]
    fn attention_is_a_convex_combination_of_values(seed in any::<u64>(), nq in 1usize..5, nk in 1usize..6) {
        let mut rng = stream(seed, "attn");
        let q = Tensor::randn([nq, 3], 2.0, &mut rng);
        let k = Tensor::randn([nk, 3], 2.0, &mut rng);
        let v = Tensor::randn([nk, 2], 1.0, &mut rng);
        let (out, a) = attention(&q, &k, &v).unwrap();
        for i in 0..nq {
            prop_assert!(a.row(i).iter().all(|w| *w >= 0.0));
            prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for c in 0..2 {
                let lo = (0..nk).map(|j| v.row(j)[c]).fold(f64::INFINITY, f64::min);
                let hi = (0..nk).map(|j| v.row(j)[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.row(i)[c] >= lo - 1e-12 && out.row(i)[c] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn bleu_scores_are_bounded(pred in prop::collection::vec(0u8..5, 1..10), refr in prop::collection::vec(0u8..5, 1..10)) {
        let words = |v: &[u8]| v.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ");
        let (p, r) = (words(&pred), words(&refr));
        for s in bleu(&p, &[r.as_str()]).unwrap() {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        if pred.len() >= 4 {
            prop_assert!(bleu(&p, &[p.as_str()]).unwrap().iter().all(|s| (s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn higher_order_bleu_never_exceeds_lower_order(refr in prop::collection::vec(0u8..4, 1..8), tail in prop::collection::vec(0u8..4, 0..4), edits in prop::collection::vec((0usize..12, 0u8..4), 0..4)) {
        let mut pred: Vec<u8> = refr.iter().chain(&tail).copied().collect();
        for (i, t) in edits {
            let n = pred.len();
            pred[i % n] = t;
        }
        let words = |v: &[u8]| v.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ");
        let (p, r) = (words(&pred), words(&refr));
        let s = bleu(&p, &[r.as_str()]).unwrap();
        for n in 1..4 {
            prop_assert!(s[n] <= s[n - 1] + 1e-12, "{p:?} vs {r:?}: {s:?}");
        }
    }

    #[test]
    fn schedule_weight_stays_in_range(epoch in 0usize..100, batch in 0usize..8, start in 0usize..40, period in 1usize..30) {
        let w = schedule_weight(epoch, batch, 8, start, period);
        prop_assert!((1.0..=10.0).contains(&w));
        if epoch < start || epoch >= start + period {
            prop_assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn caption_logits_only_see_earlier_tokens(seed in 0u64..1000, tokens in prop::collection::vec(3u32..12, 2..6), at in 0usize..5, repl in 3u32..12) {
        let at = at % tokens.len();
        let m = small_decoupler(seed);
        let mut rng = stream(seed, "prefix");
        let e_txt = Tensor::randn([1, 8], 1.0, &mut rng);
        let logits = |toks: &[u32]| {
            let mut g = Graph::new();
            let p = m.params.bind(&mut g, |_| false);
            let e = g.constant(e_txt.clone());
            let l = m.txt_logits(&mut g, &p, e, toks).unwrap();
            g.value(l).clone()
        };
        let mut edited = tokens.clone();
        edited[at] = repl;
        let (a, b) = (logits(&tokens), logits(&edited));
        for row in 0..=at {
            prop_assert_eq!(a.row(row), b.row(row));
        }
    }
}

#[test]
fn each_head_loss_reaches_the_shared_trunk_and_only_its_own_head() {
    let m = small_decoupler(5);
    let mut rng = stream(5, "trunk");
    let e_vid_t = Tensor::randn([6, 8], 1.0, &mut rng);
    let cond_t = Tensor::randn([2, 4], 1.0, &mut rng);
    for task in [Task::Seg, Task::Rec] {
        let mut g = Graph::new();
        let p = m.params.bind(&mut g, |_| true);
        let e_vid = g.constant(e_vid_t.clone());
        let cond = g.constant(cond_t.clone());
        let out = match task {
            Task::Seg => m.seg_logits(&mut g, &p, e_vid, cond).unwrap(),
            _ => m.rec_latents(&mut g, &p, e_vid, cond).unwrap(),
        };
        let grads = g.backward(out);
        let touched = |name: &str| {
            grads
                .get(p.get(name).unwrap())
                .is_some_and(|t| t.data().iter().any(|v| *v != 0.0))
        };
        assert!(touched("trunk.fc1.w"), "{task:?} must reach the trunk");
        assert!(touched("attn.q.w"), "{task:?} must reach the cross-attention");
        let own = Decoupler::head_prefixes(task)[0];
        assert!(touched(&format!("{own}w")));
        for other in [Task::Seg, Task::Cls, Task::Txt, Task::Rec].into_iter().filter(|t| *t != task) {
            let prefix = Decoupler::head_prefixes(other)[0];
            for name in m.params.iter().map(|(n, _)| n.as_str()).filter(|n| n.starts_with(prefix)) {
                assert!(!touched(name), "{task:?} leaked into {name}");
            }
        }
    }
}
