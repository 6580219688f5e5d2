use tcnn::checkpoint::Checkpoint;
use tcnn::data::{split, synthetic, Dataset, SyntheticKind, SyntheticSpec};
use tcnn::metrics::MetricsReport;
use tcnn::nn::Layer;
use tcnn::train::{evaluate, evaluate_loss, log_csv, OptimizerConfig, Schedule, TrainConfig, Trainer};
use tcnn::zoo::{build, ModelConfig, VariantId};
use tcnn::{Error, Tensor};

fn blobs(kind: SyntheticKind, n: usize, classes: usize, sep: f32) -> Dataset {
    synthetic(&SyntheticSpec::new(kind, n, classes, 17).with_separation(sep)).unwrap()
}

fn trainer(v: VariantId, ds: &Dataset, config: TrainConfig) -> Trainer {
    let cfg = ModelConfig::new(v, ds.sample_shape(), ds.num_classes).with_seed(3);
    Trainer::new(build(&cfg).unwrap(), config).unwrap()
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let ds = blobs(SyntheticKind::Blobs1d, 40, 2, 1.0);
    for opt in [OptimizerConfig::adam(0.0), OptimizerConfig::sgd(0.0, 0.9)] {
        let mut t = trainer(VariantId::CAb, &ds, TrainConfig { optimizer: opt, batch_size: 8, ..Default::default() });
        let before = t.model.clone();
        let eval = evaluate_loss(&t.model, &ds).unwrap();
        let log = t.train_epoch(&ds).unwrap();
        t.train_epoch(&ds).unwrap();
        assert_eq!(t.model, before);
        assert!((log.train_loss - eval).abs() < 1e-5, "{} vs {eval}", log.train_loss);
    }
}

#[test]
fn loss_decreases_on_separable_data() {
    let ds = blobs(SyntheticKind::Blobs1d, 50, 2, 2.0);
    for v in [VariantId::LeNetReLU, VariantId::CAb, VariantId::F1] {
        let mut t = trainer(v, &ds, TrainConfig { batch_size: 10, epochs: 5, ..Default::default() });
        let logs = t.fit(&ds, None, |_| {}).unwrap();
        assert_eq!(logs.len(), 5);
        assert!(logs[4].train_loss < logs[0].train_loss, "{v}: {logs:?}");
    }
}

#[test]
fn replay_is_bit_identical() {
    let ds = blobs(SyntheticKind::Blobs2d, 60, 3, 1.0);
    let run = || {
        let mut t = trainer(VariantId::PAb, &ds, TrainConfig { batch_size: 16, epochs: 2, seed: 5, ..Default::default() });
        let logs = t.fit(&ds, Some(&ds), |_| {}).unwrap();
        (t.model, log_csv(&logs))
    };
    assert_eq!(run(), run());
}

#[test]
fn tropical_lenet_learns_blobs_2d() {
    let ds = blobs(SyntheticKind::Blobs2d, 500, 3, 3.0);
    let (train, test) = split(&ds, 0.8, 1).unwrap();
    for v in [VariantId::F1, VariantId::F2, VariantId::CAb] {
        let mut t = trainer(v, &train, TrainConfig { epochs: 10, batch_size: 32, ..Default::default() });
        t.fit(&train, None, |_| {}).unwrap();
        let acc = evaluate(&t.model, &test).unwrap().accuracy;
        assert!(acc >= 0.9, "{v}: {acc}");
    }
}

#[test]
fn zero_separation_is_not_learnable() {
    let ds = blobs(SyntheticKind::Blobs2d, 600, 3, 0.0);
    let (train, test) = split(&ds, 0.5, 1).unwrap();
    let mut t = trainer(VariantId::F1, &train, TrainConfig { epochs: 5, batch_size: 32, ..Default::default() });
    t.fit(&train, None, |_| {}).unwrap();
    let acc = evaluate(&t.model, &test).unwrap().accuracy;
    // 300 held-out draws at p = 1/3: 0.45 is more than four standard deviations above chance.
    assert!(acc < 0.45, "{acc}");
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let ds = blobs(SyntheticKind::Blobs1d, 48, 2, 1.0);
    let config = TrainConfig { batch_size: 12, epochs: 3, seed: 2, ..Default::default() };
    let cfg = ModelConfig::new(VariantId::CmAb, ds.sample_shape(), 2).with_seed(8);

    let mut straight = Trainer::new(build(&cfg).unwrap(), config.clone()).unwrap();
    straight.fit(&ds, None, |_| {}).unwrap();

    let mut first = Trainer::new(build(&cfg).unwrap(), config).unwrap();
    first.train_epoch(&ds).unwrap();
    first.train_epoch(&ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.tcnn");
    Checkpoint::from_trainer(&cfg, &first).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let path2 = dir.path().join("ck2.tcnn");
    loaded.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

    let mut resumed = loaded.restore().unwrap();
    assert_eq!(resumed.epoch, 2);
    resumed.fit(&ds, None, |_| {}).unwrap();
    assert_eq!(resumed.model, straight.model);
    assert_eq!(resumed.optimizer, straight.optimizer);
}

#[test]
fn sgd_with_multistep_schedule_trains() {
    let ds = blobs(SyntheticKind::Blobs1d, 40, 2, 2.0);
    let config = TrainConfig {
        optimizer: OptimizerConfig::Sgd { lr: 0.05, momentum: 0.9, weight_decay: 1e-4 },
        schedule: Schedule::MultiStep { milestones: vec![2, 3], factor: 0.1 },
        batch_size: 8,
        epochs: 4,
        seed: 0,
    };
    let mut t = trainer(VariantId::LeNetReLU, &ds, config);
    let logs = t.fit(&ds, None, |_| {}).unwrap();
    let lrs: Vec<f64> = logs.iter().map(|l| l.lr).collect();
    assert_eq!(lrs[0], 0.05);
    assert!((lrs[2] - 0.005).abs() < 1e-12 && (lrs[3] - 0.0005).abs() < 1e-12);
    assert!(logs.iter().all(|l| l.train_loss.is_finite()));
}

#[test]
fn empty_or_mismatched_data_is_rejected() {
    let ds = blobs(SyntheticKind::Blobs2d, 10, 2, 1.0);
    let mut t = trainer(VariantId::F2, &blobs(SyntheticKind::Blobs1d, 10, 2, 1.0), TrainConfig::default());
    assert!(matches!(t.train_epoch(&ds), Err(Error::Shape(_))));
    assert!(Dataset::new(Tensor::zeros(&[1, 1, 4]).unwrap(), vec![], 2, "e").is_err());
}

/// Overwrites the parameters of the final linear layer.
fn with_last_linear(model: &mut tcnn::nn::Model, weight: Tensor, bias: Tensor) {
    let last = model.layers.iter_mut().rev().find(|l| matches!(l, Layer::Linear(_))).unwrap();
    if let Layer::Linear(l) = last {
        l.weight = weight;
        l.bias = bias;
    }
}

#[test]
fn evaluate_extremes_and_oracle() {
    let ds = blobs(SyntheticKind::Blobs1d, 100, 10, 1.0);
    let mut t = trainer(VariantId::LeNetReLU, &ds, TrainConfig::default());
    let mut bias = vec![0.0; 10];
    bias[0] = 5.0;
    with_last_linear(&mut t.model, Tensor::zeros(&[84, 10]).unwrap(), Tensor::from_vec(&[10], bias).unwrap());
    let r = evaluate(&t.model, &ds).unwrap();
    assert!((r.accuracy - 0.1).abs() < 1e-12);
    assert_eq!(r.auc, Some(0.5));

    // a perfect fit on a trivially separable set, cross-checked against the
    // metrics module
    let easy = blobs(SyntheticKind::Blobs1d, 60, 3, 4.0);
    let mut t = trainer(VariantId::LeNetReLU, &easy, TrainConfig { batch_size: 10, epochs: 8, ..Default::default() });
    t.fit(&easy, None, |_| {}).unwrap();
    let r = evaluate(&t.model, &easy).unwrap();
    assert_eq!(r.accuracy, 1.0);
    let probs = tcnn::train::predict_proba(&t.model, &easy).unwrap();
    assert_eq!(r, MetricsReport::from_scores(&probs, &easy.labels).unwrap());
}
