use scalenet_core::{Image, ScaleRatio};
use scalenet_net::{EncoderConfig, ScaleNet, ScaleNetConfig};
use scalenet_train::{train, TrainConfig, TrainSample, Trainer};

fn samples() -> Vec<TrainSample> {
    (0..6)
        .map(|k| {
            let img = |shift: usize| {
                Image::from_fn(64, 64, move |y, x| {
                    let v = (((x + shift) / (2 + k % 3) + y / 3) % 5) as f32 / 4.0;
                    [v, 0.5 * v, 1.0 - v]
                })
            };
            let s = ScaleRatio::from_log2(k as f64 * 0.5 - 1.0).unwrap();
            TrainSample::new(img(0), img(k), s).unwrap()
        })
        .collect()
}

fn model() -> ScaleNet<f32> {
    let cfg = ScaleNetConfig {
        encoder: EncoderConfig::small_random(vec![4, 8, 8, 8]),
        resolution: 64,
        regressor_width: 8,
        ..ScaleNetConfig::default()
    };
    ScaleNet::new(cfg, 5).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        input_resolution: 64,
        learning_rate: 1e-3,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn resumed_trainer_continues_the_same_trajectory() {
    let data = samples();
    let (_, full) = train(model(), &data, &config()).unwrap();
    assert_eq!(full.len(), 6);

    let mut first = Trainer::new(model(), config()).unwrap();
    assert_eq!(first.run_steps(&data, 4).unwrap(), 4);
    let bytes = first.to_archive().unwrap().to_bytes().unwrap();
    let archive = scalenet_net::checkpoint::Archive::from_bytes(&bytes).unwrap();
    let mut second = Trainer::from_archive(&archive, None).unwrap();
    second.run(&data).unwrap();
    assert!(second.finished());
    assert_eq!(second.history().len(), full.len());
    for (a, b) in full.iter().zip(second.history()) {
        assert_eq!((a.epoch, a.step), (b.epoch, b.step));
        assert!((a.total - b.total).abs() <= 1e-6, "{a:?} vs {b:?}");
    }
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let data = samples();
    let cfg = TrainConfig { epochs: 0, ..config() };
    let (trained, history) = train(model(), &data, &cfg).unwrap();
    assert!(history.is_empty());
    for ((_, a), (_, b)) in trained.store().iter().zip(model().store().iter()) {
        assert_eq!(a.data, b.data);
    }
}

#[test]
fn mismatched_resolution_is_rejected() {
    let cfg = TrainConfig {
        input_resolution: 96,
        ..config()
    };
    assert!(Trainer::new(model(), cfg).is_err());
}
