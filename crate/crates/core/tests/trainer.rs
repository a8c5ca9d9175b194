use s2a_core::corpus::{gen_corpus, gen_utterance, Corpus, CorpusSpec, Example, Split};
use s2a_core::model::{ModelConfig, ModelInput, Params, S2aModel, Variant};
use s2a_core::numerics::{RngState, Tensor};
use s2a_core::trainer::{
    batch_gradients_padded, make_batches, overfit_run, overfit_single, train, train_examples, TrainConfig,
    OVERFIT_MAX_STEPS, OVERFIT_THRESHOLD,
};
use s2a_core::S2aError;

fn examples(seed: u64, n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let mut rng = RngState::new(seed).split(i as u64);
            let gain = rng.range(0.5, 2.0);
            let mut u = gen_utterance(&mut rng, 5, gain).unwrap();
            u.set_id(&format!("u{i}"));
            Example {
                features: u.features,
                animation: u.animation,
                energy_gain: gain,
            }
        })
        .collect()
}

#[test]
fn train_loss_decreases_and_beats_mean_predictor() {
    let data = examples(1, 40);
    let (train_set, val_set) = data.split_at(32);
    let cfg = TrainConfig {
        max_epochs: 40,
        early_stop_patience: 40,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    let out = train_examples(train_set, val_set, &ModelConfig::tiny(), &cfg, Some(&mut log)).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    for w in losses[..5].windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    let lines = String::from_utf8(log).unwrap();
    assert_eq!(lines.lines().count(), out.history.len());
    assert!(lines.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));

    // mean-predictor baseline on the validation split, raw units
    let stats = &out.checkpoint.stats;
    let (mut sse, mut n) = (0.0f64, 0usize);
    for ex in val_set {
        for r in 0..ex.animation.len() {
            for (c, m) in stats.anim_mean.iter().enumerate() {
                sse += ((ex.animation.frames.at(r, c) - m) as f64).powi(2);
                n += 1;
            }
        }
    }
    let baseline = (sse / n as f64).sqrt();
    let best = out.checkpoint.meta.val_rmse.unwrap();
    assert!(best < baseline, "{best} vs {baseline}");
}

#[test]
fn same_seed_gives_identical_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(
        dir.path(),
        &CorpusSpec {
            n_utterances: 12,
            seed: 5,
            ..CorpusSpec::default()
        },
    )
    .unwrap();
    let corpus = Corpus::open(dir.path()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 2,
        early_stop_patience: 2,
        seed: 11,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        dropout: 0.1,
        ..ModelConfig::tiny()
    };
    let run = || {
        let mut log = Vec::new();
        let out = train(&corpus, &model_cfg, &cfg, Some(&mut log)).unwrap();
        (out.checkpoint.to_container().to_bytes().unwrap(), log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let other = train(
        &corpus,
        &model_cfg,
        &TrainConfig { seed: 12, ..cfg.clone() },
        None,
    )
    .unwrap();
    assert_ne!(other.checkpoint.to_container().to_bytes().unwrap(), a);
}

#[test]
fn dense_feature_variant_trains_on_dense_inputs() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(
        dir.path(),
        &CorpusSpec {
            n_utterances: 6,
            seed: 2,
            ..CorpusSpec::default()
        },
    )
    .unwrap();
    let corpus = Corpus::open(dir.path()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 1,
        early_stop_patience: 1,
        ..TrainConfig::default()
    };
    let mc = ModelConfig::tiny().for_variant(Variant::DenseFeatures);
    let out = train(&corpus, &mc, &cfg, None).unwrap();
    assert_eq!(out.checkpoint.config.ppg_dim, 20);
    // a PPG-input model refuses dense features
    let ppg_train = corpus.load_split(Split::Train, true).unwrap();
    let val = corpus.load_split(Split::Val, true).unwrap();
    assert!(train_examples(&ppg_train, &val, &ModelConfig::tiny(), &cfg, None).is_err());
}

#[test]
fn overfit_single_converges_for_moe_and_dense() {
    for (seed, variant) in [(0, Variant::Moe), (1, Variant::Moe), (0, Variant::Dense), (2, Variant::Dense)] {
        let ex = &examples(seed, 1)[0];
        let cfg = ModelConfig::tiny().for_variant(variant);
        let report = overfit_single(ex, &cfg, &TrainConfig::overfit(), OVERFIT_MAX_STEPS, OVERFIT_THRESHOLD).unwrap();
        assert!(report.final_rmse < OVERFIT_THRESHOLD);
        assert!(report.steps <= OVERFIT_MAX_STEPS);
    }
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let ex = &examples(4, 1)[0];
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let report = overfit_run(ex, &ModelConfig::tiny(), &cfg, 6, 0.0).unwrap();
    assert_eq!(report.losses.len(), 6);
    assert!(report.losses.iter().all(|&l| l == report.losses[0]));
    assert!(!report.converged);
    assert!(overfit_single(ex, &ModelConfig::tiny(), &cfg, 3, 0.02).is_err());
}

#[test]
fn padding_leaves_gradients_unchanged() {
    for variant in [Variant::Moe, Variant::Dense] {
        let model = S2aModel::new(ModelConfig::tiny().for_variant(variant)).unwrap();
        let params: Params<f32> = model.init_params(&mut RngState::new(8));
        let mut rng = RngState::new(9);
        let mk = |rng: &mut RngState, t: usize| {
            let content = Tensor::from_fn(&[t, 64], |_| rng.uniform() as f32);
            let prosody = Tensor::from_fn(&[t, 2], |_| rng.normal() as f32);
            let target = Tensor::from_fn(&[t, 32], |_| rng.normal() as f32);
            (ModelInput::new(content, prosody).unwrap(), target)
        };
        let (a, ta) = mk(&mut rng, 9);
        let (b, tb) = mk(&mut rng, 12);
        let tight = batch_gradients_padded(
            &model,
            &params,
            &[a.padded(12), b.clone()],
            &[ta.pad_rows(12), tb.clone()],
            None,
        )
        .unwrap();
        let mut pa = a.padded(20);
        pa.content.row_mut(15).iter_mut().for_each(|v| *v = 5.0);
        let mut ta_pad = ta.pad_rows(20);
        ta_pad.row_mut(18).iter_mut().for_each(|v| *v = -7.0);
        let loose = batch_gradients_padded(&model, &params, &[pa, b.padded(20)], &[ta_pad, tb.pad_rows(20)], None).unwrap();
        assert!((tight.0 - loose.0).abs() <= 1e-5 * tight.0.abs());
        for (x, y) in tight.1.iter().flatten().zip(loose.1.iter().flatten()) {
            let scale = x.abs().max(y.abs()).max(1e-3);
            assert!((x - y).abs() / scale < 1e-4, "{x} vs {y}");
        }
    }
}

#[test]
fn divergence_is_reported() {
    let data = examples(6, 6);
    let cfg = TrainConfig {
        learning_rate: 1e30,
        grad_clip_norm: 1e30,
        max_epochs: 5,
        early_stop_patience: 5,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let err = train_examples(&data[..4], &data[4..], &ModelConfig::tiny(), &cfg, None).unwrap_err();
    assert!(matches!(err, S2aError::Divergence(_)), "{err}");
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { early_stop_patience: 200, ..TrainConfig::default() },
        TrainConfig { beta2: 1.0, ..TrainConfig::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn batches_cover_every_index_once() {
    let lengths = [30usize, 5, 17, 5, 44, 12, 9, 30, 1];
    let batches = make_batches(&lengths, 4, &mut RngState::new(1));
    let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
    all.sort();
    assert_eq!(all, (0..lengths.len()).collect::<Vec<_>>());
    assert!(batches.iter().all(|b| b.len() <= 4));
    // buckets hold neighbours in length order
    let mut spans: Vec<(usize, usize)> = batches
        .iter()
        .map(|b| {
            let ls: Vec<usize> = b.iter().map(|&i| lengths[i]).collect();
            (*ls.iter().min().unwrap(), *ls.iter().max().unwrap())
        })
        .collect();
    spans.sort();
    for w in spans.windows(2) {
        assert!(w[0].1 <= w[1].0);
    }
}
