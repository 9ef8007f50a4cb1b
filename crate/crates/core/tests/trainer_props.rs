mod common;

use std::fs;

use common::seeded;
use rand::Rng;
use semco::model::{ImageTensor, ModelConfig, ModelState};
use semco::trainer::{
    evaluate, load_dataset, synthetic_spec, Dataset, MetricsWriter, RunConfig, Sample, Trainer, CIFAR10_CLASSES,
};

fn small_config() -> RunConfig {
    RunConfig {
        n_labeled: 16,
        emb_dim: 8,
        batch_size: 8,
        mu: 2,
        epochs: 2,
        steps_per_epoch: 5,
        warmup_epochs: 1,
        conv_channels: [4, 6],
        hidden: 12,
        ema_decay: 0.9,
        synthetic_train_per_class: 12,
        synthetic_test_per_class: 4,
        ..RunConfig::default()
    }
}

fn metrics_bytes(cfg: RunConfig) -> Vec<u8> {
    let mut t = Trainer::from_config(cfg).unwrap();
    let mut w = MetricsWriter::new(Vec::new()).unwrap();
    t.run(&mut w).unwrap();
    w.into_inner()
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let a = metrics_bytes(small_config());
    assert_eq!(a, metrics_bytes(small_config()));
    let other = RunConfig { seed: 9, ..small_config() };
    assert_ne!(a, metrics_bytes(other));
}

#[test]
fn random_classifier_errs_nine_times_in_ten() {
    let mut rng = seeded(41);
    let model = ModelState::new(ModelConfig::new(4, 4, 3, 4, 10), 3).unwrap();
    let test: Vec<Sample> = (0..1000)
        .map(|i| Sample {
            image: ImageTensor::new(i, 4, 4, 3, (0..48).map(|_| rng.gen()).collect()).unwrap(),
            label: rng.gen_range(0..10),
        })
        .collect();
    let err = evaluate(&model, &test).unwrap();
    assert!((err - 0.9).abs() <= 0.05, "{err}");
}

#[test]
fn memorizes_a_tiny_labeled_set() {
    let cfg = RunConfig {
        n_labeled: 16,
        lambda_u: 0.0,
        lambda_co: 0.0,
        batch_size: 16,
        epochs: 10,
        steps_per_epoch: 30,
        lr_max: 0.05,
        conv_channels: [16, 32],
        hidden: 64,
        ema_decay: 0.5,
        synthetic_train_per_class: 2,
        ..small_config()
    };
    let mut data = load_dataset("synthetic", &synthetic_spec(&cfg)).unwrap();
    data.test = data.train.clone();
    let mut t = Trainer::new(cfg, data).unwrap();
    let mut w = MetricsWriter::new(Vec::new()).unwrap();
    let summary = t.run(&mut w).unwrap();
    assert_eq!(summary.final_test_error, 0.0, "{:?}", summary.test_errors);
}

#[test]
fn cifar10_binary_directory_loads() {
    let dir = tempfile::tempdir().unwrap();
    let record = |label: u8, shade: u8| {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(shade, 3072));
        r
    };
    for b in 1..=5 {
        let bytes: Vec<u8> = (0..4u8).flat_map(|i| record((i + b) % 10, i * 40)).collect();
        fs::write(dir.path().join(format!("data_batch_{b}.bin")), bytes).unwrap();
    }
    fs::write(dir.path().join("test_batch.bin"), record(3, 255)).unwrap();
    let d = load_dataset(&format!("cifar10:{}", dir.path().display()), &synthetic_spec(&RunConfig::default())).unwrap();
    assert_eq!(d.class_names, CIFAR10_CLASSES);
    assert_eq!((d.train.len(), d.test.len()), (20, 1));
    assert_eq!(d.test[0].label, 3);
    assert_eq!(d.test[0].image.at(31, 31, 2), 1.0);
    assert_eq!(d.image_shape().unwrap(), (32, 32, 3));
    let ids: std::collections::HashSet<u64> = d.train.iter().chain(&d.test).map(|s| s.image.id).collect();
    assert_eq!(ids.len(), 21);

    fs::write(dir.path().join("test_batch.bin"), vec![0u8; 100]).unwrap();
    assert!(load_dataset(&format!("cifar10:{}", dir.path().display()), &synthetic_spec(&RunConfig::default())).is_err());
}

#[test]
fn png_directory_loads_sorted_classes() {
    let dir = tempfile::tempdir().unwrap();
    for (split, class, n) in [("train", "zebra", 2), ("train", "ant", 3), ("test", "ant", 1)] {
        let d = dir.path().join(split).join(class);
        fs::create_dir_all(&d).unwrap();
        for i in 0..n {
            let img = image::RgbImage::from_pixel(5, 4, image::Rgb([255, 0, i as u8 * 100]));
            img.save(d.join(format!("{i}.png"))).unwrap();
        }
    }
    let d: Dataset = load_dataset(&format!("dir:{}", dir.path().display()), &synthetic_spec(&RunConfig::default())).unwrap();
    assert_eq!(d.class_names, ["ant", "zebra"]);
    assert_eq!((d.train.len(), d.test.len()), (5, 1));
    assert_eq!(d.image_shape().unwrap(), (4, 5, 3));
    assert_eq!(d.train[4].label, 1);
    assert_eq!(d.train[1].image.at(0, 0, 2), 100.0 / 255.0);
}
