use std::collections::BTreeMap;
use std::path::PathBuf;

use avhubert::clusterlab::KmeansConfig;
use avhubert::decode::report::{load_inputs, report, DecodeRecord};
use avhubert::decode::*;
use avhubert::model::ModelConfig;
use avhubert::synthcorpus::{gen_corpus, load_corpus, CorpusConfig, SplitCounts};
use avhubert::trainer::{iterative_pretrain, InputMode, IterationPlan, TargetKind, TrainConfig, UttScore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_softmax_rows(rng: &mut ChaCha8Rng, t: usize, classes: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(t * classes);
    for _ in 0..t {
        let row: Vec<f64> = (0..classes).map(|_| rng.random_range(-scale..scale)).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    out
}

/// Best collapsed labeling by summing the probability of every path.
fn brute_force_best(logp: &[f64], classes: usize) -> (Vec<usize>, f64) {
    let t = logp.len() / classes;
    let blank = classes - 1;
    let mut mass: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for code in 0..classes.pow(t as u32) {
        let mut c = code;
        let mut path = Vec::with_capacity(t);
        let mut lp = 0.0;
        for f in 0..t {
            let k = c % classes;
            c /= classes;
            path.push(k);
            lp += logp[f * classes + k];
        }
        let mut label = Vec::new();
        let mut prev = None;
        for &k in &path {
            if k != blank && prev != Some(k) {
                label.push(k);
            }
            prev = Some(k);
        }
        *mass.entry(label).or_insert(0.0) += lp.exp();
    }
    let (label, p) = mass.into_iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    (label, p.ln())
}

#[test]
fn wer_examples() {
    assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    assert_eq!(wer::<u8>(&[], &[1, 2, 3, 4]).unwrap(), 1.0);
    assert_eq!(wer(&['a', 'b', 'c'], &['a', 'x', 'c', 'd']).unwrap(), 0.5);
    assert!(matches!(wer::<u8>(&[1], &[]), Err(avhubert::Error::Param(_))));
}

#[test]
fn collapse_examples() {
    let (a, b, blank) = (0, 1, 2);
    assert_eq!(collapse(&[a, a, blank, b], blank), vec![a, b]);
    assert_eq!(collapse(&[blank, blank], blank), Vec::<usize>::new());
    assert_eq!(collapse(&[a, blank, a], blank), vec![a, a]);
}

#[test]
fn exhaustive_beam_matches_brute_force_labeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..500 {
        let t = rng.random_range(1..=4);
        let classes = rng.random_range(2..=3);
        let logp = log_softmax_rows(&mut rng, t, classes, 3.0);
        let (label, score) = brute_force_best(&logp, classes);
        let lp32: Vec<f32> = logp.iter().map(|&x| x as f32).collect();
        let h = beam_decode(&lp32, classes, classes.pow(t as u32)).unwrap();
        assert_eq!(h.tokens, label, "logp {logp:?}");
        assert!((h.score - score).abs() < 1e-5, "{} vs {score}", h.score);
    }
}

#[test]
fn beam_of_one_equals_greedy_on_peaked_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t = rng.random_range(1..12);
        let classes = 4;
        let mut logp = vec![-8.0f32; t * classes];
        for f in 0..t {
            logp[f * classes + rng.random_range(0..classes)] = -1e-3;
        }
        assert_eq!(beam_decode(&logp, classes, 1).unwrap().tokens, greedy_decode(&logp, classes).unwrap());
    }
}

proptest! {
    #[test]
    fn greedy_inverts_the_collapse(label in proptest::collection::vec(0usize..4, 0..8), pads in proptest::collection::vec(0usize..3, 9)) {
        let classes = 5;
        let blank = 4;
        let mut path = Vec::new();
        for (i, &k) in label.iter().enumerate() {
            path.extend(std::iter::repeat_n(blank, pads[i]));
            if i > 0 && label[i - 1] == k && pads[i] == 0 {
                path.push(blank);
            }
            path.extend(std::iter::repeat_n(k, 1 + pads[i + 1] % 2));
        }
        path.extend(std::iter::repeat_n(blank, pads[8]));
        let mut logp = vec![-30.0f32; path.len() * classes];
        for (f, &k) in path.iter().enumerate() {
            logp[f * classes + k] = 0.0;
        }
        prop_assert_eq!(greedy_decode(&logp, classes).unwrap(), label);
    }

    #[test]
    fn widening_the_beam_never_lowers_the_score(seed in any::<u64>(), t in 1usize..7, w in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logp: Vec<f32> = log_softmax_rows(&mut rng, t, 4, 2.0).iter().map(|&x| x as f32).collect();
        let narrow = beam_decode(&logp, 4, w).unwrap();
        let wide = beam_decode(&logp, 4, w + 3).unwrap();
        prop_assert!(narrow.score.is_finite());
        prop_assert!(wide.score >= narrow.score - 1e-9);
    }

    #[test]
    fn wer_is_invariant_under_relabeling(hyp in proptest::collection::vec(0u8..6, 0..12), reference in proptest::collection::vec(0u8..6, 1..12), shift in 1u8..6) {
        let relabel = |xs: &[u8]| -> Vec<u8> { xs.iter().map(|x| (x + shift) % 6 + 10).collect() };
        prop_assert_eq!(wer(&hyp, &reference).unwrap(), wer(&relabel(&hyp), &relabel(&reference)).unwrap());
    }

    #[test]
    fn wer_bounds(hyp in proptest::collection::vec(0u8..4, 0..12), reference in proptest::collection::vec(0u8..4, 1..12)) {
        prop_assert_eq!(wer(&reference, &reference).unwrap(), 0.0);
        let w = wer(&hyp, &reference).unwrap();
        prop_assert!(w >= 0.0);
        prop_assert!(w <= (hyp.len() + reference.len()) as f64 / reference.len() as f64);
        prop_assert!(w <= hyp.len().max(reference.len()) as f64 / reference.len() as f64);
    }
}

#[test]
fn word_segmentation_and_scoring() {
    let lexicon = vec![vec![0, 1], vec![2], vec![0, 1, 3]];
    assert_eq!(segment_words(&[0, 1, 3, 2], &lexicon), vec![WordToken::Word(2), WordToken::Word(1)]);
    assert_eq!(
        segment_words(&[3, 3, 2, 4], &lexicon),
        vec![WordToken::Unknown(vec![3, 3]), WordToken::Word(1), WordToken::Unknown(vec![4])]
    );
    assert_eq!(word_error_rate(&[0, 1, 2], &[0, 1], &lexicon).unwrap(), (0, 2));
    assert_eq!(word_error_rate(&[0, 1, 3], &[0, 1], &lexicon).unwrap(), (2, 2));
    assert_eq!(word_error_rate(&[], &[2, 1, 0], &lexicon).unwrap(), (3, 3));
}

fn tiny_run(dir: &std::path::Path, iterations: usize) {
    let corpus_dir = dir.join("corpus");
    let cfg = CorpusConfig {
        splits: SplitCounts {
            pretrain: 12,
            labeled: 4,
            validation: 4,
            test: 4,
        },
        ..CorpusConfig::default()
    };
    gen_corpus(&cfg, 2, &corpus_dir).unwrap();
    let corpus = load_corpus(&corpus_dir).unwrap();
    let base = ModelConfig {
        dim: 16,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        visual_hidden: 8,
        codebook_size: 6,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        steps: 2,
        ..TrainConfig::default()
    };
    let mut plan = IterationPlan::desk(iterations, TargetKind::Mfcc, 1, &train).unwrap();
    plan.iterations.iter_mut().for_each(|it| it.k = 6);
    let kmeans = KmeansConfig {
        max_iter: 5,
        n_restarts: 1,
        ..KmeansConfig::default()
    };
    iterative_pretrain::<f32>(&corpus, &base, &plan, "AV/MFCC->AV".parse().unwrap(), &kmeans, 1, &dir.join("run")).unwrap();
}

#[test]
fn report_needs_inputs() {
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(report(&[], out.path()), Err(avhubert::Error::Param(_))));
    let empty = tempfile::tempdir().unwrap();
    match report(&[empty.path().to_path_buf()], out.path()) {
        Err(avhubert::Error::Missing(paths)) => assert_eq!(paths.len(), 2),
        other => panic!("expected missing artifacts, got {other:?}"),
    }
}

#[test]
fn report_tables() {
    let dir = tempfile::tempdir().unwrap();
    tiny_run(dir.path(), 2);
    let utterances = vec![
        UttScore { id: 0, ref_words: 2, errors: 1, hyp_phones: vec![1] },
        UttScore { id: 1, ref_words: 3, errors: 0, hyp_phones: vec![] },
        UttScore { id: 2, ref_words: 2, errors: 2, hyp_phones: vec![] },
        UttScore { id: 3, ref_words: 4, errors: 1, hyp_phones: vec![] },
    ];
    let decode = DecodeRecord {
        run: Some("run".into()),
        iteration: Some(2),
        mode: InputMode::VisualOnly,
        wer: 4.0 / 11.0,
        utterances: utterances.clone(),
    };
    let dec_dir = dir.path().join("dec");
    std::fs::create_dir_all(&dec_dir).unwrap();
    decode.save(&dec_dir).unwrap();

    let dirs: Vec<PathBuf> = vec![dir.path().join("run"), dec_dir];
    let inputs = load_inputs(&dirs).unwrap();
    let rows = inputs.iteration_rows();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][7], "");
    assert_eq!(rows[1][7], (4.0f64 / 11.0).to_string());
    assert_eq!(inputs.variant_rows().len(), 1);

    let buckets = inputs.length_rows();
    let counted: usize = buckets.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(counted, utterances.len());
    let errors: usize = buckets.iter().map(|r| r[3].parse::<usize>().unwrap()).sum();
    assert_eq!(errors, 4);
    assert_eq!(buckets[0][..4], ["dec".to_string(), "2".into(), "2".into(), "3".into()]);

    let out = dir.path().join("report");
    let paths = report(&dirs, &out).unwrap();
    let iterations = std::fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(iterations.lines().next().unwrap(), "run,variant,iteration,layer,K,purity,nmi,wer");
    assert_eq!(iterations.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(&paths[2]).unwrap().lines().count(), 1 + buckets.len());
}
