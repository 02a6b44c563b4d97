use std::fs;

use meixnernet_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
use meixnernet_core::data::{synthetic_two_cluster, SyntheticSpec};
use meixnernet_core::error::Error;
use meixnernet_core::model::{ModelKind, NetConfig, TwoLayerNet};
use meixnernet_core::train::{evaluate, train_model, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logit_bits(net: &TwoLayerNet, kind: ModelKind) -> Vec<u64> {
    let b = synthetic_two_cluster(&SyntheticSpec {
        n_per_class: 15,
        num_features: 6,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let op = kind.operator(&b.graph).unwrap();
    net.logits(&op, &b.features)
        .unwrap()
        .data()
        .iter()
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn save_load_eval_is_exact() {
    for kind in [ModelKind::Meixner, ModelKind::Cheby] {
        let mut net = TwoLayerNet::new(NetConfig::new(kind, 6, 5, 2, 3), 21).unwrap();
        // Move away from the initial values so every buffer carries noise.
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for (_, p) in net.store_mut().iter_mut() {
            for v in p.value.data_mut() {
                *v += r.random_range(-0.1..0.1);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&net, None, &path).unwrap();
        let (back, rng) = load_checkpoint(&path).unwrap();
        assert!(rng.is_none());
        assert_eq!(back.store(), net.store());
        assert_eq!(back.config(), net.config());
        assert_eq!(back.learned_meixner_params(), net.learned_meixner_params());
        assert_eq!(logit_bits(&back, kind), logit_bits(&net, kind), "{kind}");
    }
}

#[test]
fn truncated_file_is_an_error() {
    let net = TwoLayerNet::new(NetConfig::new(ModelKind::Meixner, 4, 3, 2, 2), 0).unwrap();
    let json = Checkpoint::new(&net, None).to_json().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    for cut in [0, 1, json.len() / 3, json.len() / 2, json.len() - 1] {
        fs::write(&path, &json[..cut]).unwrap();
        assert!(load_checkpoint(&path).is_err(), "cut at {cut}");
    }
    assert!(load_checkpoint(dir.path().join("absent.json")).is_err());
}

#[test]
fn version_mismatch_is_reported() {
    let net = TwoLayerNet::new(NetConfig::new(ModelKind::Cheby, 4, 3, 2, 2), 0).unwrap();
    let json = Checkpoint::new(&net, None).to_json().unwrap();
    let bumped = json.replacen(
        &format!("\"version\":{CHECKPOINT_VERSION}"),
        &format!("\"version\":{}", CHECKPOINT_VERSION + 1),
        1,
    );
    assert_ne!(bumped, json);
    match Checkpoint::from_json(&bumped) {
        Err(Error::Version { expected, found }) => {
            assert_eq!((expected, found), (CHECKPOINT_VERSION, CHECKPOINT_VERSION + 1));
        }
        other => panic!("unexpected {other:?}"),
    }
    let foreign = json.replacen("meixnernet-checkpoint", "something-else", 1);
    assert!(matches!(Checkpoint::from_json(&foreign), Err(Error::Checkpoint(_))));
}

#[test]
fn mismatched_buffers_are_rejected() {
    let net = TwoLayerNet::new(NetConfig::new(ModelKind::Meixner, 4, 3, 2, 2), 0).unwrap();
    let mut ckpt = Checkpoint::new(&net, None);
    ckpt.net.hidden = 7;
    assert!(ckpt.into_net().is_err());
}

#[test]
fn trained_checkpoint_reproduces_test_accuracy() {
    let bundle = synthetic_two_cluster(&SyntheticSpec {
        noise: 1.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        k: 3,
        epochs: 60,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train_model(&cfg, &bundle).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&out.net, Some(&out.rng), &path).unwrap();

    let (net, rng) = load_checkpoint(&path).unwrap();
    let op = cfg.model.operator(&bundle.graph).unwrap();
    let acc = evaluate(&net, &op, &bundle, &bundle.masks.test).unwrap();
    assert_eq!(acc, out.report.test_acc);
    assert_eq!(net.learned_meixner_params(), out.report.learned);

    // The dropout generator resumes where training stopped.
    let state = rng.unwrap();
    assert_eq!(state, out.rng);
    let mut a = state.restore().unwrap();
    let mut b = out.rng.restore().unwrap();
    let xs: Vec<u64> = (0..8).map(|_| a.random()).collect();
    let ys: Vec<u64> = (0..8).map(|_| b.random()).collect();
    assert_eq!(xs, ys);
    assert_eq!(state.epochs, 60);
}

#[test]
fn rng_state_rejects_garbage_position() {
    let net = TwoLayerNet::new(NetConfig::new(ModelKind::Meixner, 4, 3, 2, 2), 0).unwrap();
    let bundle = synthetic_two_cluster(&SyntheticSpec {
        n_per_class: 5,
        num_features: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut state = train_model(&cfg, &bundle).unwrap().rng;
    state.word_pos = "not-a-number".into();
    assert!(state.restore().is_err());
    let json = Checkpoint::new(&net, Some(state)).to_json().unwrap();
    assert!(Checkpoint::from_json(&json).is_ok());
}
