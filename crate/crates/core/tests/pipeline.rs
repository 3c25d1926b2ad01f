use latentcomm::autoencoder::{encode, train, ModelFile, TrainConfig};
use latentcomm::eval::{evaluate, EvalConfig, EvalReport, TrainingSummary};
use latentcomm::experiment::preset_basic;
use latentcomm::synthgen::{generate, Dataset, GeneratorConfig};

fn small_data(seed: u64) -> Dataset {
    let g = GeneratorConfig {
        n_samples: 1500,
        ..GeneratorConfig::default()
    };
    generate(&g, seed).unwrap().0
}

#[test]
fn generate_train_evaluate_and_reload() {
    let data = small_data(4);
    let cfg = TrainConfig {
        epochs: 15,
        seed: 4,
        ..TrainConfig::default()
    };
    let (model, log) = train(&data, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 15);
    let report = evaluate(
        &model,
        &data,
        cfg.holdout_fraction,
        &EvalConfig::default(),
        serde_json::json!({"note": "pipeline"}),
        TrainingSummary::from_log(&log),
    )
    .unwrap();
    assert!((0.0..=1.0).contains(&report.mcc));
    assert_eq!(report.r2_blocks.values.rows(), 3);
    assert_eq!(report.n_eval_rows, 150);
    let back = EvalReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ModelFile::new(&model, &cfg, None).save(&path).unwrap();
    let reloaded = ModelFile::load(&path).unwrap().model().unwrap();
    assert_eq!(reloaded, model);
    assert_eq!(encode(&reloaded, &data.states).unwrap(), encode(&model, &data.states).unwrap());

    data.save(dir.path()).unwrap();
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded.support, data.support);
    assert!(loaded.states.max_abs_diff(&data.states) < 1e-4);
    let again = dir.path().join("again");
    loaded.save(&again).unwrap();
    for f in ["states.bin", "latents.bin", "meta.json"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn same_seed_gives_the_same_model_and_log() {
    let data = small_data(7);
    let cfg = TrainConfig {
        epochs: 12,
        seed: 7,
        restarts: 2,
        ..TrainConfig::default()
    };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn large_penalty_leaves_a_sparser_decoder() {
    let data = small_data(2);
    let run = |lambda_sparse: f64| {
        let cfg = TrainConfig {
            epochs: 40,
            seed: 2,
            lambda_sparse,
            ..TrainConfig::default()
        };
        let (_, log) = train(&data, &cfg).unwrap();
        let last = log.epochs.last().unwrap();
        last.penalty / lambda_sparse
    };
    assert!(run(100.0) < run(0.01));
}

#[test]
fn basic_setup_reconstructs_held_out_states() {
    let mut cfg = preset_basic(1).resolved();
    cfg.training.restarts = 1;
    let (data, _) = generate(&cfg.generator, cfg.seed).unwrap();
    let (_, log) = train(&data, &cfg.training).unwrap();
    let best = log.epochs[log.best_epoch.unwrap()];
    assert!(best.holdout_recon < 0.1, "held-out recon {}", best.holdout_recon);
}
