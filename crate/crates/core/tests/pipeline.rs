use revise_core::audit::{confounding_audit, AuditReport};
use revise_core::causal::{train_causal, CausalModelConfig};
use revise_core::classifier::{train_classifier, Architecture, ClassifierConfig, Classifier};
use revise_core::data::{synth_causal, synth_classification, CausalConfig, ClassificationConfig, Dataset, Label};
use revise_core::nn::{Activation, DenseNetwork};
use revise_core::persist::PersistedModel;
use revise_core::revise::{lambda_sweep_batch, lambda_sweep_causal, revise_causal, ReviseConfig};
use revise_core::tensor::Tensor;
use revise_core::vae::{train_vae, Vae, VaeConfig};
use revise_core::Error;

fn setup() -> (Dataset, Classifier, Vae) {
    let data = synth_classification(600, ClassificationConfig::default(), 21).unwrap();
    let enc = data.fit_encoder().unwrap();
    let (clf, _) = train_classifier(&data, &enc, &ClassifierConfig::default()).unwrap();
    let vae_cfg = VaeConfig {
        epochs: 15,
        ..VaeConfig::default()
    };
    let (vae, _) = train_vae(&data, &enc, &vae_cfg).unwrap();
    (data, clf, vae)
}

#[test]
fn sweep_results_are_valid() {
    let (data, clf, vae) = setup();
    let preds = clf.predict(data.rows()).unwrap();
    let rows: Vec<Vec<f64>> = data
        .rows()
        .iter()
        .zip(&preds)
        .filter(|(_, p)| **p == Label::Negative)
        .take(15)
        .map(|(r, _)| r.clone())
        .collect();
    let config = ReviseConfig {
        tau_max: 200,
        ..ReviseConfig::default()
    };
    let outs = lambda_sweep_batch(&rows, &clf, &vae, &config).unwrap();
    let group = data.schema().index_of("group").unwrap();
    for (x, o) in rows.iter().zip(&outs) {
        for r in &o.results {
            assert_eq!(r.counterfactual[group].to_bits(), x[group].to_bits());
            if r.success {
                assert_eq!(clf.predict_row(&r.counterfactual).unwrap(), Label::Positive);
                assert!(r.crossing.unwrap() <= r.iterations);
            }
            assert!(r.changes.iter().all(|c| c.index != group));
        }
    }
    let report = AuditReport::from_sweeps(&outs).unwrap();
    assert_eq!(report.rows.len(), 7);
    assert!(report.rows[6].lambda.is_none());
}

#[test]
fn constant_reference_never_flips() {
    let (data, clf, vae) = setup();
    let mut net = DenseNetwork::zeros(&[clf.encoder().width(), 2], Activation::Relu, Activation::Softmax).unwrap();
    net.layers_mut()[0].bias = Tensor::row(&[1.0, 0.0]);
    let g = Classifier::new(clf.encoder().clone(), net).unwrap();
    let config = ReviseConfig {
        tau_max: 100,
        ..ReviseConfig::default()
    };
    let e = confounding_audit(&[("t", &clf)], &g, &vae, &data.rows()[..20], 0.1, &config).unwrap();
    assert_eq!(e[0].flips, 0);
    assert_eq!(e[0].audited, 20);
    if e[0].successes > 0 {
        assert_eq!(e[0].fraction, Some(0.0));
    }
}

#[test]
fn models_persist_exactly() {
    let (data, _, vae) = setup();
    let text = PersistedModel::Vae(vae.clone()).to_text();
    let back = PersistedModel::from_text(&text).unwrap().into_vae().unwrap();
    let x = vae.features().encode_rows(&data.rows()[..100]).unwrap();
    let (a, _) = vae.encode(&x).unwrap();
    let (b, _) = back.encode(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(vae.decode(&a, None).unwrap(), back.decode(&b, None).unwrap());

    let (cdata, _) = synth_causal(400, CausalConfig::default(), 4).unwrap();
    let enc = cdata.fit_encoder().unwrap();
    let cfg = CausalModelConfig {
        epochs: 2,
        ..CausalModelConfig::default()
    };
    let (m, _) = train_causal(&cdata, &enc, &[], &cfg).unwrap();
    let back = PersistedModel::from_text(&PersistedModel::Causal(m.clone()).to_text())
        .unwrap()
        .into_causal()
        .unwrap();
    let x = enc.encode_rows(cdata.rows()).unwrap();
    let (t, y) = (cdata.treatment().unwrap(), cdata.outcome().unwrap());
    let (mu, _) = m.infer_z(&x, t, y).unwrap();
    let (mu2, _) = back.infer_z(&x, t, y).unwrap();
    assert_eq!(mu, mu2);
    assert_eq!(m.predict_outcome_do(&mu, &x, 1).unwrap(), back.predict_outcome_do(&mu2, &x, 1).unwrap());
}

#[test]
fn causal_recourse_contract() {
    let (data, _) = synth_causal(600, CausalConfig::default(), 8).unwrap();
    let enc = data.fit_encoder().unwrap();
    let cfg = CausalModelConfig {
        epochs: 3,
        ..CausalModelConfig::default()
    };
    let (m, _) = train_causal(&data, &enc, &[], &cfg).unwrap();
    let y = data.outcome().unwrap();
    let t = data.treatment().unwrap();
    let ok = (0..data.len()).find(|&i| y[i] == 1).unwrap();
    let err = revise_causal(&data.rows()[ok], (t[ok], 1), &m, 1, 0.1, &ReviseConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    let neg = ReviseConfig {
        target: Label::Negative,
        ..ReviseConfig::default()
    };
    let bad = (0..data.len()).find(|&i| y[i] == 0).unwrap();
    assert!(revise_causal(&data.rows()[bad], (t[bad], 0), &m, 1, 0.1, &neg).is_err());

    let config = ReviseConfig {
        tau_max: 100,
        ..ReviseConfig::default()
    };
    let sex = data.schema().index_of("sex").unwrap();
    let o = lambda_sweep_causal(&data.rows()[bad], (t[bad], 0), &m, 1, &config).unwrap();
    for r in &o.results {
        assert_eq!(r.counterfactual[sex], data.rows()[bad][sex]);
    }
}

#[test]
fn mlp_target_is_supported() {
    let data = synth_classification(300, ClassificationConfig::default(), 2).unwrap();
    let enc = data.fit_encoder().unwrap();
    let cfg = ClassifierConfig {
        architecture: Architecture::Mlp { hidden: vec![8, 8] },
        ..ClassifierConfig::default()
    };
    let (clf, _) = train_classifier(&data, &enc, &cfg).unwrap();
    assert_eq!(clf.network().layers().len(), 3);
}
