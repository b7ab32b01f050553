use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revise_core::data::{synth_mixed, Encoder};
use revise_core::gradcheck::{grad_check, primitive_suite};
use revise_core::nn::{Activation, DenseNetwork, Output};
use revise_core::tensor::Tensor;
use revise_core::vae::{Vae, VaeConfig};

#[test]
fn every_primitive_passes() {
    let suite = primitive_suite(100, 1e-4, 1).unwrap();
    assert!(suite.len() >= 25);
    for e in &suite {
        assert!(e.report.passed, "{}: {:?}", e.name, e.report);
        assert_eq!(e.report.trials, 100);
    }
}

#[test]
fn wrong_derivative_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let report = grad_check(
        |t, v| t.map(v[0], |x| x * x * x, |x| 2.0 * x * x),
        || vec![Tensor::row(&[rng.gen_range(0.5..2.0), rng.gen_range(-2.0..-0.5)])],
        20,
        1e-4,
    )
    .unwrap();
    assert!(!report.passed);
    let w = report.worst.unwrap();
    assert!((w.analytic / w.numeric - 2.0 / 3.0).abs() < 1e-6);
}

#[test]
fn two_layer_tanh_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNetwork::init(&[4, 6, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
    let mut sampler = ChaCha8Rng::seed_from_u64(4);
    let report = grad_check(
        |t, v| {
            // inputs: x, then W1, b1, W2, b2
            net.forward_on(t, &v[1..], v[0], Output::Activated).unwrap()
        },
        || {
            let mut draw = |r, c| Tensor::new(r, c, (0..r * c).map(|_| sampler.gen_range(-2.0..2.0)).collect()).unwrap();
            vec![draw(5, 4), draw(4, 6), draw(1, 6), draw(6, 3), draw(1, 3)]
        },
        20,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn encode_decode_chain() {
    let (data, _) = synth_mixed(200, 5).unwrap();
    let features = Encoder::fit(data.schema(), data.rows()).unwrap();
    let config = VaeConfig {
        k: 2,
        hidden: vec![5],
        ..VaeConfig::default()
    };
    let vae = Vae::init(features.clone(), &config, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let x = features.encode_rows(&data.rows()[..4]).unwrap();
    let noise = Tensor::new(4, 2, vec![0.3, -1.2, 0.5, 0.1, -0.7, 1.4, 0.0, 0.9]).unwrap();
    let n_enc = vae.encoder_net().layers().len() * 2;
    let params: Vec<Tensor> = vae
        .encoder_net()
        .params()
        .into_iter()
        .chain(vae.decoder_net().params())
        .cloned()
        .collect();
    let report = grad_check(
        |t, v| {
            let xv = t.constant(x.clone());
            let (mu, lv) = vae.encode_on(t, &v[..n_enc], xv).unwrap();
            let z = revise_core::vae::reparam_on(t, mu, lv, noise.clone());
            let (_, expected) = vae.decode_on(t, &v[n_enc..], z, None).unwrap();
            expected
        },
        || params.clone(),
        1,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}
