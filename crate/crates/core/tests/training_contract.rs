use ladder_core::neural::{load_checkpoint, save_checkpoint};
use ladder_core::synth::{generate_dataset, ChainSpecRange};
use ladder_core::training::{build_examples, evaluate_loss, example_keys, train, EpochRecord};
use ladder_core::{AdamConfig, AugmentConfig, NetConfig, Network, TrainConfig};

fn config(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs,
        patience: 10,
        min_improvement: 1e-3,
        seed: 5,
        augment: Some(AugmentConfig {
            seed: 6,
            ..Default::default()
        }),
    }
}

fn adam() -> AdamConfig {
    AdamConfig {
        lr: 1e-3,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_history() {
    let train_set = generate_dataset(4, &ChainSpecRange::lumbar_like(), 20).unwrap();
    let val_set = generate_dataset(2, &ChainSpecRange::lumbar_like(), 21).unwrap();
    let run = || {
        let net = Network::<f32>::new(NetConfig::desk(), 1).unwrap();
        train(net, &train_set, &val_set, &adam(), &config(2)).unwrap()
    };
    let (a, b) = (run(), run());
    let losses = |h: &[EpochRecord]| h.iter().map(|r| (r.train_loss, r.val_loss)).collect::<Vec<_>>();
    assert_eq!(losses(&a.history), losses(&b.history));
    assert_eq!(a.network.params.trainable(), b.network.params.trainable());
}

#[test]
fn returned_network_is_the_best_validation_epoch() {
    let train_set = generate_dataset(4, &ChainSpecRange::lumbar_like(), 30).unwrap();
    let val_set = generate_dataset(2, &ChainSpecRange::lumbar_like(), 31).unwrap();
    let net = Network::<f32>::new(NetConfig::desk(), 2).unwrap();
    let out = train(net, &train_set, &val_set, &adam(), &config(4)).unwrap();
    let best = out.best_val_loss().unwrap();
    let min = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best, min);

    let val = build_examples(&val_set, &example_keys(&val_set), None, 56).unwrap();
    let again = evaluate_loss(&out.network, &val, 8).unwrap();
    assert!((again - best).abs() <= 1e-6 * best.max(1.0), "{again} vs {best}");

    // the checkpoint preserves the selected network exactly
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    save_checkpoint(&out.network, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(evaluate_loss(&loaded, &val, 8).unwrap(), again);
}

#[test]
fn empty_splits_are_rejected() {
    let set = generate_dataset(2, &ChainSpecRange::lumbar_like(), 40).unwrap();
    let net = Network::<f32>::new(NetConfig::desk(), 3).unwrap();
    assert!(train(net.clone(), &[], &set, &adam(), &config(1)).is_err());
    assert!(train(net, &set, &[], &adam(), &config(1)).is_err());
}
