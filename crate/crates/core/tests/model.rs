use avhubert::model::{
    extract_features, load_model, masked_loss, save_model, AvHubert, Fusion, Mode, ModelConfig, ModelInput,
    UtteranceInput,
};
use avhubert::seed;
use avhubert_neural::gradcheck::check_params;
use avhubert_neural::{Graph, Tensor};
use rand::Rng;

fn tiny(layers: usize) -> ModelConfig {
    ModelConfig {
        dim: 16,
        layers,
        heads: 2,
        ffn_dim: 24,
        dropout: 0.0,
        codebook_size: 5,
        audio_dim: 8,
        image_height: 4,
        image_width: 4,
        visual_hidden: 6,
        ..ModelConfig::default()
    }
}

fn random_input(cfg: &ModelConfig, lengths: &[usize], s: u64) -> (Vec<f32>, Vec<f32>) {
    let rows: usize = lengths.iter().sum();
    let mut rng = seed::rng(s);
    let audio = (0..rows * cfg.audio_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let video = (0..rows * cfg.pixels()).map(|_| rng.random_range(0.0..1.0)).collect();
    (audio, video)
}

fn input<'a>(lengths: &'a [usize], audio: &'a [f32], video: &'a [f32], fusion: &'a [Fusion]) -> ModelInput<'a> {
    ModelInput {
        lengths,
        audio,
        video,
        audio_mask: None,
        video_mask: None,
        fused_mask: None,
        fusion,
    }
}

#[test]
fn audio_encoder_is_pointwise_linear() {
    let mut m = AvHubert::<f64>::new(tiny(1), 1).unwrap();
    let cfg = m.config.clone();
    let mut g = Graph::new();
    let mut frames = vec![0.3f32; cfg.audio_dim];
    frames.extend(vec![0.3f32; cfg.audio_dim]);
    frames[0] = 1.0;
    frames[cfg.audio_dim] = 1.0;
    let e = m.encode_audio(&mut g, &frames, None).unwrap();
    let v = g.value(e);
    assert_eq!(v.shape(), &[2, cfg.dim / 2]);
    assert_eq!(v.row(0), v.row(1));

    // zero input and zero bias give zero output
    let id = m.params.find("audio.b").unwrap();
    m.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let mut g = Graph::new();
    let e = m.encode_audio(&mut g, &vec![0.0; cfg.audio_dim], None).unwrap();
    assert!(g.value(e).data().iter().all(|&x| x == 0.0));
}

#[test]
fn visual_encoder_receptive_field() {
    let m = AvHubert::<f64>::new(tiny(1), 2).unwrap();
    let cfg = &m.config;
    let t = 12;
    let (_, video) = random_input(cfg, &[t], 3);
    let segs = avhubert_neural::Segment::pack(&[t]);
    let run = |v: &[f32]| {
        let mut g = Graph::new();
        let e = m.encode_visual(&mut g, v, &segs, None).unwrap();
        g.value(e).clone()
    };
    let base = run(&video);
    let mut changed = video.clone();
    let k = 6;
    for p in &mut changed[k * cfg.pixels()..(k + 1) * cfg.pixels()] {
        *p = 1.0 - *p;
    }
    let moved = run(&changed);
    for row in 0..t {
        let differs = base.row(row) != moved.row(row);
        assert_eq!(differs, (k - 2..=k + 2).contains(&row), "row {row}");
    }

    // a single frame works and zero frames with zero biases give zero
    let mut z = m.clone();
    for name in ["visual.in.b", "visual.conv.b", "visual.out.b"] {
        let id = z.params.find(name).unwrap();
        z.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let mut g = Graph::new();
    let one = avhubert_neural::Segment::pack(&[1]);
    let e = z.encode_visual(&mut g, &vec![0.0; cfg.pixels()], &one, None).unwrap();
    assert_eq!(g.value(e).shape(), &[1, cfg.dim / 2]);
    assert!(g.value(e).data().iter().all(|&x| x == 0.0));
}

#[test]
fn fusion_branch_frequencies_and_uniformity() {
    let mut rng = seed::rng(17);
    let n = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        match Fusion::sample(0.5, 0.5, &mut rng) {
            Fusion::Both => counts[0] += 1,
            Fusion::AudioOnly => counts[1] += 1,
            Fusion::VisualOnly => counts[2] += 1,
        }
    }
    let f: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    for (got, want) in f.iter().zip([0.5, 0.25, 0.25]) {
        assert!((got - want).abs() < 0.02, "{f:?}");
    }
    assert!((0..1000).all(|_| Fusion::sample(1.0, 0.3, &mut rng) == Fusion::Both));
    assert!((0..1000).all(|_| Fusion::sample(0.0, 1.0, &mut rng) == Fusion::AudioOnly));
}

#[test]
fn fused_rows_follow_sequence_branch() {
    let m = AvHubert::<f64>::new(tiny(1), 4).unwrap();
    let lengths = [3, 4, 2];
    let (audio, video) = random_input(&m.config, &lengths, 5);
    let fusion = [Fusion::AudioOnly, Fusion::VisualOnly, Fusion::Both];
    let segs = avhubert_neural::Segment::pack(&lengths);
    let mut g = Graph::new();
    let fa = m.encode_audio(&mut g, &audio, None).unwrap();
    let fv = m.encode_visual(&mut g, &video, &segs, None).unwrap();
    let f = m.fuse(&mut g, fa, fv, &lengths, &fusion).unwrap();
    let h = m.config.dim / 2;
    let v = g.value(f);
    for r in 0..9 {
        let row = v.row(r);
        let (a, vis) = (&row[..h], &row[h..]);
        match r {
            0..=2 => assert!(vis.iter().all(|&x| x == 0.0) && a.iter().any(|&x| x != 0.0)),
            3..=6 => assert!(a.iter().all(|&x| x == 0.0) && vis.iter().any(|&x| x != 0.0)),
            _ => assert!(a.iter().any(|&x| x != 0.0) && vis.iter().any(|&x| x != 0.0)),
        }
    }
}

#[test]
fn visual_only_output_ignores_audio() {
    let m = AvHubert::<f64>::new(tiny(2), 6).unwrap();
    let lengths = [7];
    let (audio, video) = random_input(&m.config, &lengths, 7);
    let other: Vec<f32> = audio.iter().map(|x| -3.0 * x + 1.0).collect();
    let run = |a: &[f32]| {
        let mut g = Graph::new();
        let e = m.forward(&mut g, &input(&lengths, a, &video, &[Fusion::VisualOnly]), Mode::Eval, None).unwrap();
        g.value(e).clone()
    };
    assert_eq!(run(&audio), run(&other));
}

#[test]
fn zero_layers_is_input_plus_positions() {
    let m = AvHubert::<f64>::new(tiny(0), 8).unwrap();
    let lengths = [5];
    let (audio, video) = random_input(&m.config, &lengths, 9);
    let segs = avhubert_neural::Segment::pack(&lengths);
    let mut g = Graph::new();
    let fa = m.encode_audio(&mut g, &audio, None).unwrap();
    let fv = m.encode_visual(&mut g, &video, &segs, None).unwrap();
    let fused = m.fuse(&mut g, fa, fv, &lengths, &[Fusion::Both]).unwrap();
    let f = g.value(fused).clone();
    let e = m.forward(&mut g, &input(&lengths, &audio, &video, &[Fusion::Both]), Mode::Eval, None).unwrap();
    let d = m.config.dim;
    for t in 0..5 {
        for j in 0..d {
            let expect = f.row(t)[j] + avhubert::model::position_code(t, j, d);
            assert!((g.value(e).row(t)[j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn without_positions_blocks_are_permutation_equivariant() {
    let mut cfg = tiny(2);
    cfg.positions = false;
    let m = AvHubert::<f64>::new(cfg, 10).unwrap();
    let (d, t) = (m.config.dim, 6);
    let mut rng = seed::rng(11);
    let x: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let perm = [3usize, 0, 5, 1, 4, 2];
    let px: Vec<f64> = perm.iter().flat_map(|&p| x[p * d..(p + 1) * d].to_vec()).collect();
    let segs = avhubert_neural::Segment::pack(&[t]);
    let run = |data: Vec<f64>| {
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![t, d], data).unwrap());
        let e = m.transformer(&mut g, v, &segs, None, 2, Mode::Eval).unwrap();
        g.value(e).clone()
    };
    let (out, pout) = (run(x), run(px));
    for (i, &p) in perm.iter().enumerate() {
        for j in 0..d {
            assert!((pout.row(i)[j] - out.row(p)[j]).abs() < 1e-10);
        }
    }
}

#[test]
fn cluster_head_properties() {
    let mut m = AvHubert::<f64>::new(tiny(1), 12).unwrap();
    let lengths = [4];
    let (audio, video) = random_input(&m.config, &lengths, 13);
    let run = |m: &AvHubert<f64>| {
        let mut g = Graph::new();
        let e = m.forward(&mut g, &input(&lengths, &audio, &video, &[Fusion::Both]), Mode::Eval, None).unwrap();
        let lp = m.predict_clusters(&mut g, e).unwrap();
        g.value(lp).clone()
    };
    let lp = run(&m);
    assert_eq!(lp.shape(), &[4, 5]);
    for t in 0..4 {
        let s: f64 = lp.row(t).iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    let argmax = |lp: &Tensor<f64>| -> Vec<usize> {
        (0..4)
            .map(|t| (0..5).max_by(|&a, &b| lp.row(t)[a].total_cmp(&lp.row(t)[b])).unwrap())
            .collect()
    };
    let before = argmax(&lp);
    let b = m.params.find("proj.b").unwrap();
    m.params.get_mut(b).data_mut().iter_mut().for_each(|x| *x += 3.5);
    assert_eq!(argmax(&run(&m)), before);
    let w = m.params.find("proj.w").unwrap();
    m.params.get_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
    m.params.get_mut(b).data_mut().iter_mut().for_each(|x| *x = 0.0);
    assert!(run(&m).data().iter().all(|&v| (v - (0.2f64).ln()).abs() < 1e-12));
}

fn logp_const(g: &mut Graph<f64>, rows: &[Vec<f64>]) -> avhubert_neural::Var {
    let cols = rows[0].len();
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    g.constant(Tensor::new(vec![rows.len(), cols], data).unwrap())
}

#[test]
fn masked_loss_examples() {
    // confident correct predictions
    let mut g = Graph::new();
    let lp = logp_const(&mut g, &[vec![0.0, f64::MIN], vec![f64::MIN, 0.0]]);
    let l = masked_loss(&mut g, lp, &[0, 1], &[true, true], 0.0).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);

    // uniform predictions over V classes
    let v = 7;
    let u = vec![-(v as f64).ln(); v];
    let mut g = Graph::new();
    let lp = logp_const(&mut g, &[u.clone(), u.clone(), u.clone(), u]);
    let l = masked_loss(&mut g, lp, &[0, 3, 6, 2], &[true, false, true, true], 0.0).unwrap();
    assert!((g.value(l).data()[0] - (v as f64).ln()).abs() < 1e-12);

    // alpha = 1 against a plain loop
    let mut rng = seed::rng(14);
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lse = raw.iter().map(|x| x.exp()).sum::<f64>().ln();
            raw.iter().map(|x| x - lse).collect()
        })
        .collect();
    let z = [1, 0, 3, 3, 2];
    let masked = [true, false, false, true, false];
    for alpha in [1.0, 0.3] {
        let mut total = 0.0;
        let mut count = 0.0;
        for t in 0..5 {
            if masked[t] {
                total -= rows[t][z[t]];
                count += 1.0;
            } else {
                total -= alpha * rows[t][z[t]];
                count += 1.0;
            }
        }
        let mut g = Graph::new();
        let lp = logp_const(&mut g, &rows);
        let l = masked_loss(&mut g, lp, &z, &masked, alpha).unwrap();
        assert!((g.value(l).data()[0] - total / count).abs() < 1e-12);
    }

    let mut g = Graph::new();
    let lp = logp_const(&mut g, &rows);
    assert!(matches!(
        masked_loss(&mut g, lp, &z, &[false; 5], 0.0),
        Err(avhubert::Error::Loss(_))
    ));
}

/// Sum over every frame-level path that collapses to `target`.
fn brute_force_ctc(logp: &[Vec<f64>], target: &[usize], blank: usize) -> f64 {
    let (t, c) = (logp.len(), logp[0].len());
    let mut total = 0.0;
    let mut path = vec![0usize; t];
    loop {
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(i, &s)| logp[i][s]).sum::<f64>().exp();
        }
        let mut i = 0;
        loop {
            if i == t {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn ctc_matches_enumeration() {
    let mut rng = seed::rng(15);
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let u = rng.random_range(1..=3);
        let len = rng.random_range(1..=t.min(3));
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(0..u)).collect();
        if avhubert_neural::ctc_min_frames(&target) > t {
            continue;
        }
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                let raw: Vec<f64> = (0..=u).map(|_| rng.random_range(-3.0..3.0)).collect();
                let lse = raw.iter().map(|x| x.exp()).sum::<f64>().ln();
                raw.iter().map(|x| x - lse).collect()
            })
            .collect();
        let mut g = Graph::new();
        let lp = logp_const(&mut g, &rows);
        let l = g.ctc_loss(lp, &[avhubert_neural::Segment::new(0, t)], &[target.clone()], u).unwrap();
        let expect = brute_force_ctc(&rows, &target, u);
        assert!((g.value(l).data()[0] - expect).abs() < 1e-6, "{target:?} T={t}");
    }
}

#[test]
fn ctc_is_order_sensitive_and_rejects_infeasible() {
    let mut rng = seed::rng(16);
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lse = raw.iter().map(|x| x.exp()).sum::<f64>().ln();
            raw.iter().map(|x| x - lse).collect()
        })
        .collect();
    let loss = |target: Vec<usize>| {
        let mut g = Graph::new();
        let lp = logp_const(&mut g, &rows);
        g.ctc_loss(lp, &[avhubert_neural::Segment::new(0, 5)], &[target], 3)
            .map(|l| g.value(l).data()[0])
    };
    assert_ne!(loss(vec![0, 2]).unwrap(), loss(vec![2, 0]).unwrap());
    assert!(loss(vec![1, 1, 1]).is_ok());
    assert!(loss(vec![1, 1, 1, 1]).is_err());
}

#[test]
fn extract_features_contract() {
    let m = AvHubert::<f32>::new(tiny(2), 18).unwrap();
    let (audio, video) = random_input(&m.config, &[6], 19);
    let utt = UtteranceInput { audio: audio.clone(), video: video.clone(), frames: 6 };
    let a = extract_features(&m, &utt, 2).unwrap();
    assert_eq!(a, extract_features(&m, &utt, 2).unwrap());
    assert_eq!((a.frames(), a.dim(), a.rate), (6, 16, 25));
    let mut g = Graph::new();
    let e = m.forward(&mut g, &input(&[6], &audio, &video, &[Fusion::Both]), Mode::Eval, None).unwrap();
    assert_eq!(a.data(), g.value(e).data());
    assert!(extract_features(&m, &utt, 0).is_err());
    assert!(extract_features(&m, &utt, 3).is_err());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut cfg = tiny(2);
    cfg.ctc_vocab = Some(3);
    let m = AvHubert::<f64>::new(cfg, 20).unwrap();
    let lengths = [2, 3];
    let (audio, video) = random_input(&m.config, &lengths, 21);
    let audio_mask = [true, false, false, true, false];
    let video_mask = [false, true, false, false, true];
    let fused_mask = [false, false, true, false, false];
    let z = [0, 4, 2, 1, 3];
    let masked: Vec<bool> = (0..5).map(|i| audio_mask[i] || video_mask[i] || fused_mask[i]).collect();
    let report = check_params(&m.params, 1e-5, 1e-3, |store, g| {
        let mut model = m.clone();
        model.params = store.clone();
        let inp = ModelInput {
            lengths: &lengths,
            audio: &audio,
            video: &video,
            audio_mask: Some(&audio_mask),
            video_mask: Some(&video_mask),
            fused_mask: Some(&fused_mask),
            fusion: &[Fusion::Both, Fusion::Both],
        };
        let e = model.forward(g, &inp, Mode::Eval, None).map_err(to_neural)?;
        let lp = model.predict_clusters(g, e).map_err(to_neural)?;
        let l1 = masked_loss(g, lp, &z, &masked, 0.5).map_err(to_neural)?;
        let cp = model.ctc_log_probs(g, e).map_err(to_neural)?;
        let segs = avhubert_neural::Segment::pack(&lengths);
        let l2 = g.ctc_loss(cp, &segs, &[vec![1], vec![0, 2]], 3)?;
        g.add(l1, l2)
    })
    .unwrap();
    assert!(report.checked > 1000);
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

fn to_neural(e: avhubert::Error) -> avhubert_neural::NeuralError {
    avhubert_neural::NeuralError::Param(e.to_string())
}

#[test]
fn checkpoint_round_trip() {
    let mut cfg = tiny(2);
    cfg.ctc_vocab = Some(4);
    let m = AvHubert::<f32>::new(cfg, 22).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.avp");
    save_model(&path, &m, serde_json::json!({"step": 3})).unwrap();
    let (back, header) = load_model::<f32>(&path).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(header.model, m.config);
    assert_eq!(header.info["step"], 3);
}

#[test]
fn attaching_a_head_keeps_the_encoder() {
    let mut m = AvHubert::<f32>::new(tiny(1), 23).unwrap();
    let before = m.params.clone();
    m.attach_ctc_head(6, 1).unwrap();
    assert!(m.has_ctc_head());
    for (id, name, t) in before.iter() {
        assert_eq!(m.params.get(id), t, "{name}");
    }
    assert!(m.attach_ctc_head(5, 1).is_err());
}
