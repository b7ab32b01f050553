//! Hand-built models with known recourse, for checking the search.

use crate::classifier::Classifier;
use crate::data::{Attribute, AttributeKind, ColumnStats, Encoder, Schema};
use crate::error::Result;
use crate::nn::{Activation, DenseLayer, DenseNetwork};
use crate::tensor::Tensor;
use crate::vae::Vae;

fn layer(rows: usize, cols: usize, weights: Vec<f64>, activation: Activation) -> Result<DenseLayer> {
    Ok(DenseLayer {
        weights: Tensor::new(rows, cols, weights)?,
        bias: Tensor::zeros(1, cols),
        activation,
    })
}

/// Two real attributes `x1, x2` with identity encoding, a generator whose
/// decoder mean is `z` itself and whose encoder mean is `x`, and a logistic
/// classifier with positive-class logit `slope·x1`.
pub fn identity_logistic(slope: f64) -> Result<(Classifier, Vae)> {
    let real = |name: &str| Attribute {
        name: name.into(),
        kind: AttributeKind::Real,
        immutable: false,
    };
    let schema = Schema::new(vec![real("x1"), real("x2")])?;
    let unit = Some(ColumnStats {
        mean: 0.0,
        std: 1.0,
        mad: 1.0,
    });
    let features = Encoder::from_parts(schema, vec![unit, unit])?;

    // encoder output [mu1, mu2, logvar1, logvar2]
    let enc = DenseNetwork::new(vec![layer(
        2,
        4,
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        Activation::Identity,
    )?])?;
    // decoder heads [mean1, lv1, mean2, lv2]
    let dec = DenseNetwork::new(vec![layer(
        2,
        4,
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        Activation::Identity,
    )?])?;
    let vae = Vae::from_parts(features.clone(), 2, false, enc, dec)?;

    let clf_net = DenseNetwork::new(vec![layer(2, 2, vec![0.0, slope, 0.0, 0.0], Activation::Softmax)?])?;
    let clf = Classifier::new(features, clf_net)?;
    Ok((clf, vae))
}
