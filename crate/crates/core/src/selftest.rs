//! Oracle suites runnable from a release binary: every check compares an
//! optimized routine against a brute-force or closed-form reference.

use std::collections::BTreeMap;

use avhubert_neural::gradcheck::check_params;
use avhubert_neural::{ctc_min_frames, Graph, NeuralError, Segment, Tensor};
use rand::Rng;

use crate::clusterlab::{lloyd, nmi, purity, kmeans_fit};
use crate::decode::beam_decode;
use crate::masking::{corrupt_visual, offset_domain, sample_spans, MaskPlan, Modality, VisualMode};
use crate::model::{masked_loss, AvHubert, Fusion, Mode, ModelConfig, ModelInput};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> SuiteResult {
    SuiteResult { name, passed, detail }
}

fn log_softmax(rng: &mut impl Rng, classes: usize, scale: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(-scale..scale)).collect();
    let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + raw.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    raw.iter().map(|x| x - lse).collect()
}

/// Probability mass of every collapsed labeling, by enumerating all paths.
fn labeling_mass(logp: &[f64], classes: usize) -> BTreeMap<Vec<usize>, f64> {
    let t = logp.len() / classes;
    let blank = classes - 1;
    let mut mass = BTreeMap::new();
    for code in 0..classes.pow(t as u32) {
        let (mut c, mut lp, mut label, mut prev) = (code, 0.0, Vec::new(), None);
        for f in 0..t {
            let k = c % classes;
            c /= classes;
            lp += logp[f * classes + k];
            if k != blank && prev != Some(k) {
                label.push(k);
            }
            prev = Some(k);
        }
        *mass.entry(label).or_insert(0.0) += f64::exp(lp);
    }
    mass
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        dim: 16,
        layers: 2,
        heads: 2,
        ffn_dim: 24,
        dropout: 0.0,
        codebook_size: 5,
        audio_dim: 8,
        image_height: 4,
        image_width: 4,
        visual_hidden: 6,
        ctc_vocab: Some(3),
        ..ModelConfig::default()
    }
}

/// Masked-prediction plus CTC loss gradients of a d=16, 2-layer model
/// against central differences.
pub fn gradients() -> SuiteResult {
    let run = || -> crate::Result<f64> {
        let m = AvHubert::<f64>::new(tiny_model(), 20)?;
        let lengths = [2usize, 3];
        let mut rng = seed::rng(21);
        let audio: Vec<f32> = (0..5 * m.config.audio_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let video: Vec<f32> = (0..5 * m.config.pixels()).map(|_| rng.random_range(0.0..1.0)).collect();
        let audio_mask = [true, false, false, true, false];
        let video_mask = [false, true, false, false, true];
        let fused_mask = [false, false, true, false, false];
        let masked: Vec<bool> = (0..5).map(|i| audio_mask[i] || video_mask[i] || fused_mask[i]).collect();
        let z = [0, 4, 2, 1, 3];
        let to_neural = |e: crate::Error| NeuralError::Param(e.to_string());
        let report = check_params(&m.params, 1e-5, 1e-3, |store, g| {
            let mut model = m.clone();
            model.params = store.clone();
            let input = ModelInput {
                lengths: &lengths,
                audio: &audio,
                video: &video,
                audio_mask: Some(&audio_mask),
                video_mask: Some(&video_mask),
                fused_mask: Some(&fused_mask),
                fusion: &[Fusion::Both, Fusion::Both],
            };
            let e = model.forward(g, &input, Mode::Eval, None).map_err(to_neural)?;
            let lp = model.predict_clusters(g, e).map_err(to_neural)?;
            let l1 = masked_loss(g, lp, &z, &masked, 0.0).map_err(to_neural)?;
            let cp = model.ctc_log_probs(g, e).map_err(to_neural)?;
            let l2 = g.ctc_loss(cp, &Segment::pack(&lengths), &[vec![1], vec![0, 2]], 3)?;
            g.add(l1, l2)
        })?;
        Ok(report.max_rel_err)
    };
    match run() {
        Ok(e) => result("gradients", e < 1e-4, format!("max relative error {e:.3e}")),
        Err(e) => result("gradients", false, e.to_string()),
    }
}

/// CTC loss against path enumeration on random small instances.
pub fn ctc() -> SuiteResult {
    let mut rng = seed::rng(31);
    let mut worst = 0f64;
    let mut checked = 0;
    while checked < 1000 {
        let t = rng.random_range(1..=6);
        let u = rng.random_range(1..=3);
        let len = rng.random_range(1..=3);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(0..u)).collect();
        if ctc_min_frames(&target) > t {
            continue;
        }
        let logp: Vec<f64> = (0..t).flat_map(|_| log_softmax(&mut rng, u + 1, 3.0)).collect();
        let expect = -labeling_mass(&logp, u + 1).get(&target).copied().unwrap_or(0.0).ln();
        let mut g = Graph::<f64>::new();
        let lp = g.leaf(Tensor::new(vec![t, u + 1], logp).expect("shape"));
        let got = match g.ctc_loss(lp, &[Segment::new(0, t)], &[target], u) {
            Ok(l) => g.value(l).data()[0],
            Err(e) => return result("ctc", false, e.to_string()),
        };
        worst = worst.max((got - expect).abs());
        checked += 1;
    }
    result("ctc", worst < 1e-6, format!("{checked} instances, max |delta| {worst:.3e}"))
}

/// Exhaustive-width beam search against the brute-force best labeling.
pub fn beam() -> SuiteResult {
    let mut rng = seed::rng(41);
    for i in 0..500 {
        let t = rng.random_range(1..=4);
        let classes = rng.random_range(2..=3);
        let logp: Vec<f64> = (0..t).flat_map(|_| log_softmax(&mut rng, classes, 3.0)).collect();
        let (label, mass) = labeling_mass(&logp, classes)
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one labeling");
        let lp32: Vec<f32> = logp.iter().map(|&x| x as f32).collect();
        match beam_decode(&lp32, classes, classes.pow(t as u32)) {
            Ok(h) if h.tokens == label && (h.score - mass.ln()).abs() < 1e-5 => {}
            Ok(h) => return result("beam", false, format!("instance {i}: {:?} vs {label:?}", h.tokens)),
            Err(e) => return result("beam", false, e.to_string()),
        }
    }
    result("beam", true, "500 instances".into())
}

/// Purity and NMI against contingency-table formulas.
pub fn metrics() -> SuiteResult {
    let mut rng = seed::rng(51);
    let mut worst = 0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=20);
        let (kz, kc) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..kz)).collect();
        let c: Vec<usize> = (0..n).map(|_| rng.random_range(0..kc)).collect();
        let mut table = vec![vec![0f64; 5]; 5];
        for (&a, &b) in z.iter().zip(&c) {
            table[a][b] += 1.0;
        }
        let nf = n as f64;
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..5).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let pur = table.iter().map(|r| r.iter().cloned().fold(0.0, f64::max)).sum::<f64>() / nf;
        let h = |m: &[f64]| -> f64 { m.iter().filter(|&&x| x > 0.0).map(|&x| -(x / nf) * (x / nf).ln()).sum() };
        let (hz, hc) = (h(&rows), h(&cols));
        let mut mi = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                if table[a][b] > 0.0 {
                    mi += table[a][b] / nf * (table[a][b] * nf / (rows[a] * cols[b])).ln();
                }
            }
        }
        let expect_nmi = match (hz == 0.0, hc == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => (2.0 * mi / (hz + hc)).clamp(0.0, 1.0),
        };
        let (Ok(p), Ok(q)) = (purity(&z, &c), nmi(&z, &c)) else {
            return result("metrics", false, "metric error".into());
        };
        worst = worst.max((p - pur).abs()).max((q - expect_nmi).abs());
    }
    result("metrics", worst < 1e-12, format!("200 partitions, max |delta| {worst:.3e}"))
}

/// Monotone Lloyd objective and the two-cluster line example.
pub fn kmeans() -> SuiteResult {
    let mut rng = seed::rng(61);
    for i in 0..100 {
        let dim = rng.random_range(1..=4);
        let n = rng.random_range(4..60);
        let k = rng.random_range(1..=4);
        let x: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let run = lloyd(&x, dim, k, 30, i);
        if run.trace.windows(2).any(|w| w[1] > w[0] + 1e-9 * w[0].abs().max(1.0)) {
            return result("kmeans", false, format!("problem {i}: objective rose {:?}", run.trace));
        }
    }
    let c = match kmeans_fit(&[0.0, 1.0, 10.0, 11.0], 1, 2, 50, 3, 7) {
        Ok(c) => c,
        Err(e) => return result("kmeans", false, e.to_string()),
    };
    let mut cs = c.centroids.clone();
    cs.sort_by(f32::total_cmp);
    result("kmeans", cs == [0.5, 10.5], format!("line centroids {cs:?}"))
}

/// Segment substitution worked example, same-sequence offset domain and
/// untouched unmasked frames.
pub fn masking() -> SuiteResult {
    let frames: Vec<f32> = (0..5).map(|i| 10.0 + i as f32).collect();
    let imposter: Vec<f32> = (0..5).map(|i| 100.0 + i as f32).collect();
    let mut plan = match MaskPlan::from_spans(5, Modality::Visual, &[(1, 3)]) {
        Ok(p) => p,
        Err(e) => return result("masking", false, e.to_string()),
    };
    plan.offsets = vec![Some(0)];
    plan.imposter_len = 5;
    let Ok(out) = corrupt_visual(&frames, 1, &plan, Some(&imposter), VisualMode::SubSeg, 0) else {
        return result("masking", false, "substitution failed".into());
    };
    let example = out.frames == [10.0, 100.0, 101.0, 13.0, 14.0];
    let domain = offset_domain((4, 6), 10, true) == [(0, 2), (6, 8)];

    let mut rng = seed::rng(71);
    let mut untouched = true;
    for s in 0..200 {
        let len = rng.random_range(1..40);
        let video: Vec<f32> = (0..len * 3).map(|_| rng.random()).collect();
        let Ok(mut plan) = sample_spans(len, 0.1, 5, Modality::Visual, s) else {
            return result("masking", false, "span sampling failed".into());
        };
        crate::masking::assign_offsets(&mut plan, len, true, s + 1);
        let Ok(out) = corrupt_visual(&video, 3, &plan, Some(&video), VisualMode::SubSeg, s) else {
            return result("masking", false, "substitution failed".into());
        };
        for (f, masked) in plan.flags().iter().enumerate() {
            if !masked {
                let (a, b) = (&video[f * 3..f * 3 + 3], &out.frames[f * 3..f * 3 + 3]);
                untouched &= a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
            }
        }
    }
    result(
        "masking",
        example && domain && untouched,
        format!("worked example {example}, offset domain {domain}, unmasked frames identical {untouched}"),
    )
}

/// Branch frequencies at `p_m = p_a = 0.5` and per-sequence uniformity.
pub fn modality_dropout() -> SuiteResult {
    let cfg = tiny_model();
    let Ok(m) = AvHubert::<f32>::new(cfg, 3) else {
        return result("modality-dropout", false, "model init failed".into());
    };
    let half = m.config.half();
    let mut rng = seed::rng(81);
    let mut counts = [0usize; 3];
    let draws = 10_000;
    let mut uniform = true;
    for _ in 0..draws / 4 {
        let lengths: Vec<usize> = (0..4).map(|_| rng.random_range(1..5)).collect();
        let fusion: Vec<Fusion> = lengths.iter().map(|_| Fusion::sample(0.5, 0.5, &mut rng)).collect();
        let rows: usize = lengths.iter().sum();
        let mut g = Graph::<f32>::new();
        let fa = g.leaf(Tensor::from_fn(vec![rows, half], |i| 1.0 + i as f32));
        let fv = g.leaf(Tensor::from_fn(vec![rows, half], |i| -1.0 - i as f32));
        let Ok(f) = m.fuse(&mut g, fa, fv, &lengths, &fusion) else {
            return result("modality-dropout", false, "fusion failed".into());
        };
        let out = g.value(f);
        let mut row = 0;
        for (&len, &fu) in lengths.iter().zip(&fusion) {
            counts[match fu {
                Fusion::Both => 0,
                Fusion::AudioOnly => 1,
                Fusion::VisualOnly => 2,
            }] += 1;
            for r in row..row + len {
                let vals = out.row(r);
                let audio_kept = vals[..half].iter().all(|&v| v != 0.0);
                let audio_zero = vals[..half].iter().all(|&v| v == 0.0);
                let video_kept = vals[half..].iter().all(|&v| v != 0.0);
                let video_zero = vals[half..].iter().all(|&v| v == 0.0);
                uniform &= match fu {
                    Fusion::Both => audio_kept && video_kept,
                    Fusion::AudioOnly => audio_kept && video_zero,
                    Fusion::VisualOnly => audio_zero && video_kept,
                };
            }
            row += len;
        }
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let ok = (freq[0] - 0.5).abs() <= 0.02 && (freq[1] - 0.25).abs() <= 0.02 && (freq[2] - 0.25).abs() <= 0.02;
    result(
        "modality-dropout",
        ok && uniform,
        format!("branch frequencies {freq:.3?}, per-sequence uniform {uniform}"),
    )
}

/// Realized masked fraction for `p = 0.08, l = 10` over 10^5 frames
/// against `1 - (1 - p)^l`.
pub fn span_coverage() -> SuiteResult {
    let analytic = 1.0 - 0.92f64.powi(10);
    match sample_spans(100_000, 0.08, 10, Modality::Audio, 91) {
        Ok(plan) => {
            let f = plan.masked_fraction();
            result(
                "span-coverage",
                (f - analytic).abs() <= 0.01,
                format!("realized {f:.4}, analytic {analytic:.4}"),
            )
        }
        Err(e) => result("span-coverage", false, e.to_string()),
    }
}

pub fn run_all() -> Vec<SuiteResult> {
    vec![
        gradients(),
        ctc(),
        beam(),
        metrics(),
        kmeans(),
        masking(),
        modality_dropout(),
        span_coverage(),
    ]
}
