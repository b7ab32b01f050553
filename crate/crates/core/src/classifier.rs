//! Softmax classifiers over encoded rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::data::{Dataset, Encoder, Label};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNetwork, Output};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    LinearSoftmax,
    /// Hidden widths, relu activations.
    Mlp { hidden: Vec<usize> },
}

impl Architecture {
    pub fn default_mlp() -> Self {
        Architecture::Mlp {
            hidden: vec![32, 32, 32],
        }
    }

    fn sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        if let Architecture::Mlp { hidden } = self {
            sizes.extend(hidden);
        }
        sizes.push(2);
        sizes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    pub l1_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::LinearSoftmax,
            l1_weight: 0.0,
            epochs: 50,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Per-epoch means over mini-batches. `losses` include the ℓ1 penalty,
/// `data_losses` are the cross-entropy alone.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub data_losses: Vec<f64>,
}

/// A trained network together with the encoder whose statistics it was
/// trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    encoder: Encoder,
    network: DenseNetwork,
}

impl Classifier {
    pub fn new(encoder: Encoder, network: DenseNetwork) -> Result<Self> {
        if network.input_dim() != encoder.width() || network.output_dim() != 2 {
            return Err(Error::shape(
                "classifier",
                format!(
                    "network {} -> {} for encoded width {} and 2 classes",
                    network.input_dim(),
                    network.output_dim(),
                    encoder.width()
                ),
            ));
        }
        if network.output_activation() != Activation::Softmax {
            return Err(Error::config("classifier networks end in softmax"));
        }
        Ok(Self { encoder, network })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn network(&self) -> &DenseNetwork {
        &self.network
    }

    /// Class probabilities for encoded rows, `n x 2`.
    pub fn probabilities(&self, encoded: &Tensor) -> Result<Tensor> {
        self.network.forward(encoded)
    }

    pub fn predict_encoded(&self, encoded: &Tensor) -> Result<Vec<Label>> {
        Ok(self
            .network
            .predict_class(encoded)?
            .into_iter()
            .map(Label::from_class)
            .collect())
    }

    pub fn predict_row(&self, raw: &[f64]) -> Result<Label> {
        let enc = Tensor::row(&self.encoder.encode_row(raw)?);
        Ok(self.predict_encoded(&enc)?[0])
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<Label>> {
        self.predict_encoded(&self.encoder.encode_rows(rows)?)
    }
}

/// Fraction of rows whose prediction equals the dataset label.
pub fn accuracy(clf: &Classifier, data: &Dataset) -> Result<f64> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::InvalidData("dataset has no label column".into()))?;
    accuracy_against(clf, data.rows(), labels)
}

pub fn accuracy_against(clf: &Classifier, rows: &[Vec<f64>], labels: &[Label]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::InvalidData("accuracy of an empty dataset".into()));
    }
    let pred = clf.predict(rows)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Trains on the dataset's own label column.
pub fn train_classifier(
    data: &Dataset,
    encoder: &Encoder,
    config: &ClassifierConfig,
) -> Result<(Classifier, TrainReport)> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::InvalidData("dataset has no label column".into()))?;
    train_classifier_on(data.rows(), labels, encoder, config)
}

/// Minimizes mean cross-entropy plus `l1_weight · Σ|W|` (weights only,
/// not biases) with Adam over shuffled mini-batches.
pub fn train_classifier_on(
    rows: &[Vec<f64>],
    labels: &[Label],
    encoder: &Encoder,
    config: &ClassifierConfig,
) -> Result<(Classifier, TrainReport)> {
    if rows.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::InvalidData(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    if !(config.l1_weight >= 0.0) {
        return Err(Error::config(format!("l1 weight must be >= 0, got {}", config.l1_weight)));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let x = encoder.encode_rows(rows)?;
    let sizes = config.architecture.sizes(encoder.width());
    let targets: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();

    if let Some(only) = single_class(labels) {
        log::warn!("training labels contain a single class ({}); fitting a constant predictor", only.sign());
        let mut net = DenseNetwork::zeros(&sizes, Activation::Relu, Activation::Softmax)?;
        let last = net.layers_mut().last_mut().expect("nonempty");
        last.bias.set(0, only.class_index(), 10.0);
        return Ok((Classifier::new(encoder.clone(), net)?, TrainReport::default()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = DenseNetwork::init(&sizes, Activation::Relu, Activation::Softmax, &mut rng)?;
    let mut adam = AdamState::new(config.adam, &net.params());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut report = TrainReport::default();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut data_total) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let xb = x.select_rows(batch);
            let tb: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();

            let mut tape = Tape::new();
            let params = net.bind(&mut tape, true);
            let input = tape.constant(xb);
            let logits = net.forward_on(&mut tape, &params, input, Output::PreActivation)?;
            let ce = tape.softmax_cross_entropy(logits, &tb);
            let data_loss = tape.mean(ce);
            let mut penalty_terms = Vec::new();
            for w in params.iter().step_by(2) {
                let a = tape.abs(*w);
                penalty_terms.push(tape.sum(a));
            }
            let mut penalty = penalty_terms[0];
            for &p in &penalty_terms[1..] {
                penalty = tape.add(penalty, p);
            }
            let penalty = tape.scale(penalty, config.l1_weight);
            let loss = tape.add(data_loss, penalty);

            let weight = batch.len() as f64 / rows.len() as f64;
            total += weight * tape.value(loss).item();
            data_total += weight * tape.value(data_loss).item();

            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor> = params.iter().map(|&p| grads.take(p)).collect();
            adam.step(&mut net.params_mut(), &g)?;
        }
        report.losses.push(total);
        report.data_losses.push(data_total);
    }
    Ok((Classifier::new(encoder.clone(), net)?, report))
}

fn single_class(labels: &[Label]) -> Option<Label> {
    let first = labels[0];
    labels.iter().all(|&l| l == first).then_some(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_classification, ClassificationConfig};

    #[test]
    fn separable_blobs_are_learned() {
        let cfg = ClassificationConfig {
            dims: 2,
            margin: 4.0,
            nuisance: false,
        };
        let train = synth_classification(1000, cfg, 1).unwrap();
        let test = synth_classification(500, cfg, 2).unwrap();
        let enc = train.fit_encoder().unwrap();
        let config = ClassifierConfig {
            epochs: 30,
            adam: AdamConfig::with_learning_rate(1e-2),
            ..ClassifierConfig::default()
        };
        let (clf, report) = train_classifier(&train, &enc, &config).unwrap();
        assert!(accuracy(&clf, &test).unwrap() >= 0.99);
        assert!(report.losses.last() < report.losses.first());
    }

    #[test]
    fn single_class_gives_constant_predictor() {
        let data = synth_classification(40, ClassificationConfig::default(), 3).unwrap();
        let neg: Vec<usize> = (0..data.len())
            .filter(|&i| data.labels().unwrap()[i] == Label::Negative)
            .collect();
        let only = data.subset(&neg);
        let enc = only.fit_encoder().unwrap();
        let (clf, report) = train_classifier(&only, &enc, &ClassifierConfig::default()).unwrap();
        assert!(report.losses.is_empty());
        assert_eq!(accuracy(&clf, &only).unwrap(), 1.0);
    }

    #[test]
    fn zero_l1_matches_unpenalized_loss() {
        let data = synth_classification(300, ClassificationConfig::default(), 4).unwrap();
        let enc = data.fit_encoder().unwrap();
        let config = ClassifierConfig {
            architecture: Architecture::Mlp { hidden: vec![8] },
            epochs: 3,
            ..ClassifierConfig::default()
        };
        let (_, report) = train_classifier(&data, &enc, &config).unwrap();
        assert_eq!(report.losses, report.data_losses);
        let (_, penalized) = train_classifier(
            &data,
            &enc,
            &ClassifierConfig {
                l1_weight: 1e-2,
                ..config.clone()
            },
        )
        .unwrap();
        assert!(penalized.losses[0] > penalized.data_losses[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_classification(200, ClassificationConfig::default(), 5).unwrap();
        let enc = data.fit_encoder().unwrap();
        let config = ClassifierConfig {
            architecture: Architecture::Mlp { hidden: vec![4, 4] },
            epochs: 2,
            seed: 11,
            ..ClassifierConfig::default()
        };
        let a = train_classifier(&data, &enc, &config).unwrap();
        let b = train_classifier(&data, &enc, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = synth_classification(20, ClassificationConfig::default(), 5).unwrap();
        let enc = data.fit_encoder().unwrap();
        let empty = data.subset(&[]);
        assert!(train_classifier(&empty, &enc, &ClassifierConfig::default()).is_err());
    }
}
