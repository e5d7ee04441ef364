use mldgseg_core::diffcore::{Mode, Tensor};
use mldgseg_core::segnet::{encoder_bottleneck_freeze_mask, NetworkConfig, SegNet};
use mldgseg_core::trainer::{outer_step, OptimizerState, TrainConfig};
use mldgseg_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_level() -> SegNet {
    SegNet::new(NetworkConfig {
        encoder_channels: vec![4, 8],
        patch_extent: 16,
        ..NetworkConfig::desk()
    })
    .unwrap()
}

fn random_patch(rng: &mut ChaCha8Rng, p: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, p, p, p], |_| rng.gen_range(0.0..1.0))
}

#[test]
fn probabilities_are_normalized_and_deterministic() {
    let net = two_level();
    let params = net.init_params::<f32>(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_patch(&mut rng, 16);
    let probs = net.predict_patch(&params, &x, Mode::Eval, 0).unwrap();
    assert_eq!(probs.shape(), &[2, 16, 16, 16]);
    let n = 16 * 16 * 16;
    for i in 0..n {
        let (a, b) = (probs.data()[i], probs.data()[n + i]);
        assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        assert!(((a + b) as f64 - 1.0).abs() <= 1e-6);
    }
    assert_eq!(probs, net.predict_patch(&params, &x, Mode::Eval, 0).unwrap());
}

#[test]
fn bottleneck_features_have_the_expected_length() {
    let net = two_level();
    let params = net.init_params::<f32>(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_patch(&mut rng, 16);
    let f = net.extract_bottleneck_features(&params, &x).unwrap();
    assert_eq!(f.len(), 4096);
    assert_eq!(f, net.extract_bottleneck_features(&params, &x).unwrap());
    let wrong = random_patch(&mut rng, 8);
    assert!(matches!(net.predict_patch(&params, &wrong, Mode::Eval, 0), Err(Error::Shape { .. })));
}

#[test]
fn masked_step_moves_only_decoder_and_head() {
    let net = two_level();
    let mut params = net.init_params::<f64>(4);
    let before = params.clone();
    let mask = encoder_bottleneck_freeze_mask(&params).unwrap();
    assert_eq!(mask.frozen_count() + mask.trainable_count(), params.len());
    let grad = params.map(|_| 1.0);
    let mut state = OptimizerState::new(&params);
    outer_step(&mut params, &grad, &mut state, &TrainConfig::default(), Some(&mask)).unwrap();
    for i in 0..params.len() {
        let same = params.tensor(i) == before.tensor(i);
        assert_eq!(same, params.name(i).starts_with("enc"), "{}", params.name(i));
    }
}
