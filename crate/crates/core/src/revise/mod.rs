//! Gradient search for recourse in the latent space of a generative model.
//!
//! Starting from the posterior mean of `x*`, plain gradient descent on
//! `ℓ(f(G(z)), target) + λ·c(x*, G(z))` runs for up to `τ_max` steps. The
//! first iteration whose decoded point reaches the target is recorded as
//! the crossing; the search then keeps descending so the reported point
//! approaches the minimizer of the objective, and stops early once the
//! steps vanish. The reported point is the final iterate if it has the
//! target label, otherwise the latest iterate that did.

mod cost;

use rayon::prelude::*;

pub use cost::{cost, cost_on, CostKind};

use crate::causal::CausalModel;
use crate::classifier::Classifier;
use crate::data::{AttributeKind, Encoder, Label};
use crate::error::{Error, Result};
use crate::nn::Output;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vae::{HeadParams, Vae};

/// Encoded differences below this are treated as no change.
pub const DELTA_EPSILON: f64 = 1e-6;

/// Steps whose largest coordinate is below this end the search.
const CONVERGED_STEP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ReviseConfig {
    /// Positive weights of the cost term; any order, swept from largest.
    pub lambda_grid: Vec<f64>,
    pub eta: f64,
    pub tau_max: usize,
    pub cost: CostKind,
    pub target: Label,
    pub record_trajectory: bool,
}

impl Default for ReviseConfig {
    fn default() -> Self {
        Self {
            lambda_grid: vec![10.0, 1.0, 0.1, 1e-2, 1e-3, 1e-5],
            eta: 0.05,
            tau_max: 500,
            cost: CostKind::L1Mad,
            target: Label::Positive,
            record_trajectory: false,
        }
    }
}

impl ReviseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::config("the lambda grid is empty"));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::config(format!("lambda values must be positive, got {l}")));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config(format!("step size must be positive, got {}", self.eta)));
        }
        if self.tau_max == 0 {
            return Err(Error::config("tau_max must be at least 1"));
        }
        Ok(())
    }

    /// The grid sorted from largest to smallest.
    pub fn descending_grid(&self) -> Vec<f64> {
        let mut g = self.lambda_grid.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        g.dedup();
        g
    }
}

/// One suggested change; `delta = original − proposed` (class indices for
/// categoricals).
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeChange {
    pub index: usize,
    pub original: f64,
    pub proposed: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub label: Label,
    /// Probability of the target outcome.
    pub probability: f64,
    pub decoded: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecourseResult {
    pub success: bool,
    pub lambda: f64,
    pub target: Label,
    pub original: Vec<f64>,
    /// Decoded point estimate with immutables copied from the original.
    pub counterfactual: Vec<f64>,
    pub z0: Vec<f64>,
    /// Latent code of the reported counterfactual.
    pub z_final: Vec<f64>,
    /// Gradient steps taken.
    pub iterations: usize,
    /// First iteration whose decoded point had the target outcome.
    pub crossing: Option<usize>,
    pub changes: Vec<AttributeChange>,
    /// Configured cost between the original and the counterfactual.
    pub cost: f64,
    /// `Σ |x*_j − x′_j|` in raw units.
    pub raw_l1: f64,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
}

impl RecourseResult {
    /// `‖z_final − z0‖₂`.
    pub fn delta_z(&self) -> f64 {
        self.z0
            .iter()
            .zip(&self.z_final)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// What the shared search loop needs from a model pair.
trait Landscape: Sync {
    fn features(&self) -> &Encoder;
    /// Records the objective at `z`; returns the loss and head parameters.
    fn record(&self, tape: &mut Tape, z: Var, lambda: f64) -> Result<(Var, Vec<HeadParams>)>;
    /// Probability of the target outcome at `z` with decoded raw row `x`.
    fn target_probability(&self, z: &[f64], x: &[f64]) -> Result<f64>;
    /// Whether the outcome at `(z, x)` is the target.
    fn reached(&self, z: &[f64], x: &[f64]) -> Result<(bool, f64)>;
}

/// Raw counterfactual from head parameters: immutables and unmodeled
/// attributes copied from `x*`, numeric changes below [`DELTA_EPSILON`]
/// (in encoded units) snapped back.
fn assemble(features: &Encoder, heads: &[HeadParams], x_star: &[f64]) -> Vec<f64> {
    let schema = features.schema();
    heads
        .iter()
        .enumerate()
        .map(|(j, h)| {
            if schema.attributes()[j].immutable {
                return x_star[j];
            }
            match h {
                HeadParams::Given => x_star[j],
                HeadParams::Categorical { probabilities } => crate::tensor::argmax(probabilities) as f64,
                HeadParams::Gaussian { mean, .. } => {
                    let orig = features.encode_numeric(j, x_star[j]);
                    if (mean - orig).abs() < DELTA_EPSILON {
                        x_star[j]
                    } else {
                        let v = features.decode_numeric(j, *mean);
                        // decoding may land back on the original value
                        if (features.encode_numeric(j, v) - orig).abs() < DELTA_EPSILON {
                            x_star[j]
                        } else {
                            v
                        }
                    }
                }
            }
        })
        .collect()
}

/// Attributes that differ between `x_star` and `x`.
pub fn recourse_tuple(features: &Encoder, x_star: &[f64], x: &[f64]) -> Vec<AttributeChange> {
    let schema = features.schema();
    (0..schema.len())
        .filter(|&j| match schema.attributes()[j].kind {
            AttributeKind::Categorical(_) => x_star[j] != x[j],
            _ => x_star[j] != x[j] && (features.encode_numeric(j, x_star[j]) - features.encode_numeric(j, x[j])).abs() >= DELTA_EPSILON,
        })
        .map(|j| AttributeChange {
            index: j,
            original: x_star[j],
            proposed: x[j],
            delta: x_star[j] - x[j],
        })
        .collect()
}

/// Replaces immutable blocks of an encoded candidate with those of `x*`.
fn pin_immutables(tape: &mut Tape, features: &Encoder, expected: Var, x_star_enc: &Tensor) -> Var {
    let schema = features.schema();
    if schema.immutable_indices().is_empty() {
        return expected;
    }
    let xs = tape.constant(x_star_enc.clone());
    let parts: Vec<Var> = schema
        .blocks()
        .into_iter()
        .enumerate()
        .map(|(j, b)| {
            let src = if schema.attributes()[j].immutable { xs } else { expected };
            tape.slice_cols(src, b.start, b.end)
        })
        .collect();
    tape.concat_cols(&parts)
}

fn search(
    land: &impl Landscape,
    x_star: &[f64],
    z0: Vec<f64>,
    lambda: f64,
    config: &ReviseConfig,
) -> Result<RecourseResult> {
    let features = land.features();
    let mut z = z0.clone();
    let mut trajectory = config.record_trajectory.then(Vec::new);
    let mut crossing = None;
    let mut latest_valid: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut last_point = x_star.to_vec();
    let mut steps = 0;
    let mut converged = false;

    for it in 0..=config.tau_max {
        let mut tape = Tape::new();
        let zv = tape.leaf(Tensor::row(&z));
        let (loss, heads) = land.record(&mut tape, zv, lambda)?;
        tape.check_finite()?;
        let point = assemble(features, &heads, x_star);
        let (ok, prob) = land.reached(&z, &point)?;
        if ok {
            crossing.get_or_insert(it);
            latest_valid = Some((z.clone(), point.clone()));
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(TrajectoryPoint {
                iteration: it,
                label: if ok { config.target } else { config.target.flipped() },
                probability: prob,
                decoded: point.clone(),
            });
        }
        last_point = point;
        if it == config.tau_max || converged {
            break;
        }
        let grads = tape.backward(loss)?;
        let g = grads.wrt(zv);
        let mut largest: f64 = 0.0;
        for (zi, gi) in z.iter_mut().zip(g.data()) {
            let step = config.eta * gi;
            largest = largest.max(step.abs());
            *zi -= step;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("revise step"));
        }
        steps += 1;
        converged = largest < CONVERGED_STEP;
    }

    let (success, z_final, counterfactual) = match latest_valid {
        Some((zv, p)) => (true, zv, p),
        None => (false, z.clone(), last_point),
    };
    finish(land, x_star, z0, z_final, counterfactual, success, lambda, steps, crossing, trajectory, config)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    land: &impl Landscape,
    x_star: &[f64],
    z0: Vec<f64>,
    z_final: Vec<f64>,
    counterfactual: Vec<f64>,
    mut success: bool,
    lambda: f64,
    iterations: usize,
    crossing: Option<usize>,
    trajectory: Option<Vec<TrajectoryPoint>>,
    config: &ReviseConfig,
) -> Result<RecourseResult> {
    let features = land.features();
    if success {
        // the reported row is re-encoded and rechecked as a whole
        let (ok, _) = land.reached(&z_final, &counterfactual)?;
        success = ok;
    }
    let xs_enc = features.encode_row(x_star)?;
    let x_enc = features.encode_row(&counterfactual)?;
    Ok(RecourseResult {
        success,
        lambda,
        target: config.target,
        original: x_star.to_vec(),
        changes: recourse_tuple(features, x_star, &counterfactual),
        cost: cost(&xs_enc, &x_enc, features, config.cost)?,
        raw_l1: x_star.iter().zip(&counterfactual).map(|(a, b)| (a - b).abs()).sum(),
        counterfactual,
        z0,
        z_final,
        iterations,
        crossing,
        trajectory,
    })
}

fn trivial(land: &impl Landscape, x_star: &[f64], z0: Vec<f64>, lambda: f64, config: &ReviseConfig, prob: f64) -> Result<RecourseResult> {
    let trajectory = config.record_trajectory.then(|| {
        vec![TrajectoryPoint {
            iteration: 0,
            label: config.target,
            probability: prob,
            decoded: x_star.to_vec(),
        }]
    });
    finish(land, x_star, z0.clone(), z0, x_star.to_vec(), true, lambda, 0, Some(0), trajectory, config)
}

struct ClassifierLandscape<'a> {
    clf: &'a Classifier,
    vae: &'a Vae,
    features: Encoder,
    x_star_enc: Tensor,
    cost: CostKind,
    target: Label,
}

impl Landscape for ClassifierLandscape<'_> {
    fn features(&self) -> &Encoder {
        &self.features
    }

    fn record(&self, tape: &mut Tape, z: Var, lambda: f64) -> Result<(Var, Vec<HeadParams>)> {
        let dec = self.vae.decoder_net().bind(tape, false);
        let (out, expected) = self.vae.decode_on(tape, &dec, z, Some(&self.x_star_enc))?;
        let x = pin_immutables(tape, &self.features, expected, &self.x_star_enc);
        let net = self.clf.network();
        let params = net.bind(tape, false);
        let logits = net.forward_on(tape, &params, x, Output::PreActivation)?;
        let ce = tape.softmax_cross_entropy(logits, &[self.target.class_index()]);
        let c = cost_on(tape, self.x_star_enc.data(), x, &self.features, self.cost);
        let weighted = tape.scale(c, lambda);
        let loss = tape.add(ce, weighted);
        let heads = self.vae.heads_row(tape.value(out), 0);
        Ok((loss, heads))
    }

    fn target_probability(&self, _z: &[f64], x: &[f64]) -> Result<f64> {
        let enc = Tensor::row(&self.features.encode_row(x)?);
        Ok(self.clf.probabilities(&enc)?.get(0, self.target.class_index()))
    }

    fn reached(&self, z: &[f64], x: &[f64]) -> Result<(bool, f64)> {
        let p = self.target_probability(z, x)?;
        Ok((self.clf.predict_row(x)? == self.target, p))
    }
}

/// Checks that a classifier and a generative model encode rows identically.
pub fn ensure_same_encoding(a: &Encoder, b: &Encoder) -> Result<()> {
    a.schema().ensure_compatible(b.schema())?;
    if a.stats() != b.stats() {
        return Err(Error::SchemaMismatch(
            "the models were trained with different encoding statistics".into(),
        ));
    }
    Ok(())
}

fn check_row(features: &Encoder, x_star: &[f64]) -> Result<()> {
    if x_star.len() != features.schema().len() {
        return Err(Error::shape(
            "revise",
            format!("row has {} values for {} attributes", x_star.len(), features.schema().len()),
        ));
    }
    features.encode_row(x_star).map(|_| ())
}

fn classifier_landscape<'a>(
    x_star: &[f64],
    clf: &'a Classifier,
    vae: &'a Vae,
    config: &ReviseConfig,
) -> Result<ClassifierLandscape<'a>> {
    config.validate()?;
    ensure_same_encoding(clf.encoder(), vae.features())?;
    check_row(vae.features(), x_star)?;
    Ok(ClassifierLandscape {
        clf,
        vae,
        features: vae.features().clone(),
        x_star_enc: Tensor::row(&vae.features().encode_row(x_star)?),
        cost: config.cost,
        target: config.target,
    })
}

fn revise_with(land: &ClassifierLandscape<'_>, x_star: &[f64], lambda: f64, config: &ReviseConfig) -> Result<RecourseResult> {
    let (mu, _) = land.vae.encode(&land.x_star_enc)?;
    let z0 = mu.into_data();
    if land.clf.predict_row(x_star)? == config.target {
        let p = land.target_probability(&z0, x_star)?;
        return trivial(land, x_star, z0, lambda, config, p);
    }
    search(land, x_star, z0, lambda, config)
}

/// Recourse for `x*` (raw row) at a single `λ`.
pub fn revise(x_star: &[f64], clf: &Classifier, vae: &Vae, lambda: f64, config: &ReviseConfig) -> Result<RecourseResult> {
    let land = classifier_landscape(x_star, clf, vae, config)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    revise_with(&land, x_star, lambda, config)
}

/// `ℓ(f(G(z)), target) + λ·c(x*, G(z))` at `z`.
pub fn objective(z: &[f64], x_star: &[f64], clf: &Classifier, vae: &Vae, lambda: f64, config: &ReviseConfig) -> Result<f64> {
    let land = classifier_landscape(x_star, clf, vae, config)?;
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::row(z));
    let (loss, _) = land.record(&mut tape, zv, lambda)?;
    tape.check_finite()?;
    Ok(tape.value(loss).item())
}

/// Every per-`λ` result plus the selected one.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    /// In descending `λ` order.
    pub results: Vec<RecourseResult>,
    pub best: usize,
}

impl SweepOutcome {
    pub fn best(&self) -> &RecourseResult {
        &self.results[self.best]
    }
}

/// Picks the successful result with the largest `λ` (ties: smallest cost),
/// or the failure at the smallest `λ`.
pub fn select_best(results: &[RecourseResult]) -> Option<usize> {
    let successes = (0..results.len()).filter(|&i| results[i].success);
    let best = successes.reduce(|a, b| {
        let (ra, rb) = (&results[a], &results[b]);
        match rb.lambda.total_cmp(&ra.lambda) {
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Equal => {
                if rb.cost < ra.cost {
                    b
                } else {
                    a
                }
            }
        }
    });
    best.or_else(|| (0..results.len()).min_by(|&a, &b| results[a].lambda.total_cmp(&results[b].lambda)))
}

fn sweep(grid: &[f64], mut run: impl FnMut(f64) -> Result<RecourseResult>) -> Result<SweepOutcome> {
    let results = grid.iter().map(|&l| run(l)).collect::<Result<Vec<_>>>()?;
    let best = select_best(&results).ok_or_else(|| Error::config("the lambda grid is empty"))?;
    Ok(SweepOutcome { results, best })
}

/// Runs [`revise`] for every `λ` of the grid.
pub fn lambda_sweep(x_star: &[f64], clf: &Classifier, vae: &Vae, config: &ReviseConfig) -> Result<SweepOutcome> {
    let land = classifier_landscape(x_star, clf, vae, config)?;
    sweep(&config.descending_grid(), |l| revise_with(&land, x_star, l, config))
}

/// [`lambda_sweep`] over many rows, in parallel on the current rayon pool.
/// The search is deterministic, so results do not depend on scheduling.
pub fn lambda_sweep_batch(rows: &[Vec<f64>], clf: &Classifier, vae: &Vae, config: &ReviseConfig) -> Result<Vec<SweepOutcome>> {
    rows.par_iter().map(|r| lambda_sweep(r, clf, vae, config)).collect()
}

struct CausalLandscape<'a> {
    model: &'a CausalModel,
    x_star_enc: Tensor,
    do_t: u8,
    cost: CostKind,
}

impl CausalLandscape<'_> {
    fn probability(&self, z: &[f64]) -> Result<f64> {
        Ok(self.model.predict_outcome_do(&Tensor::row(z), &self.x_star_enc, self.do_t)?[0])
    }
}

impl Landscape for CausalLandscape<'_> {
    fn features(&self) -> &Encoder {
        self.model.features()
    }

    fn record(&self, tape: &mut Tape, z: Var, lambda: f64) -> Result<(Var, Vec<HeadParams>)> {
        let vars = self.model.bind(tape, false);
        let (out, expected) = self.model.decode_on(tape, &vars, z, &self.x_star_enc)?;
        let logit = self.model.outcome_logit_on(tape, &vars, z, &self.x_star_enc, self.do_t)?;
        // −log p(y = 1) = softplus(−logit)
        let neg = tape.scale(logit, -1.0);
        let bce = tape.softplus(neg);
        let c = cost_on(tape, self.x_star_enc.data(), expected, self.features(), self.cost);
        let weighted = tape.scale(c, lambda);
        let loss = tape.add(bce, weighted);
        let heads = self.model.heads_row(tape.value(out), 0);
        Ok((loss, heads))
    }

    fn target_probability(&self, z: &[f64], _x: &[f64]) -> Result<f64> {
        self.probability(z)
    }

    fn reached(&self, z: &[f64], _x: &[f64]) -> Result<(bool, f64)> {
        let p = self.probability(z)?;
        Ok((p > 0.5, p))
    }
}

fn causal_landscape<'a>(
    x_star: &[f64],
    factual: (u8, u8),
    model: &'a CausalModel,
    do_t: u8,
    config: &ReviseConfig,
) -> Result<(CausalLandscape<'a>, Vec<f64>)> {
    config.validate()?;
    check_row(model.features(), x_star)?;
    if do_t > 1 || factual.0 > 1 || factual.1 > 1 {
        return Err(Error::InvalidData("treatment and outcome must be 0 or 1".into()));
    }
    if factual.1 == 1 {
        return Err(Error::contract("recourse needs an undesirable factual outcome (y = 0)"));
    }
    if config.target != Label::Positive {
        return Err(Error::config("causal recourse always targets y = 1"));
    }
    let x_star_enc = Tensor::row(&model.features().encode_row(x_star)?);
    let (mu, _) = model.infer_z(&x_star_enc, &[factual.0], &[factual.1])?;
    Ok((
        CausalLandscape {
            model,
            x_star_enc,
            do_t,
            cost: config.cost,
        },
        mu.into_data(),
    ))
}

/// Recourse under the intervention `do(t = do_t)`: improve
/// `p(y = 1 | do(t), z, x_I)` past 0.5 while staying close to `x*`.
/// `factual` is the observed `(t, y)`.
pub fn revise_causal(
    x_star: &[f64],
    factual: (u8, u8),
    model: &CausalModel,
    do_t: u8,
    lambda: f64,
    config: &ReviseConfig,
) -> Result<RecourseResult> {
    let (land, z0) = causal_landscape(x_star, factual, model, do_t, config)?;
    search(&land, x_star, z0, lambda, config)
}

pub fn lambda_sweep_causal(
    x_star: &[f64],
    factual: (u8, u8),
    model: &CausalModel,
    do_t: u8,
    config: &ReviseConfig,
) -> Result<SweepOutcome> {
    let (land, z0) = causal_landscape(x_star, factual, model, do_t, config)?;
    sweep(&config.descending_grid(), |l| search(&land, x_star, z0.clone(), l, config))
}

/// Probability of the target outcome at the original row under the
/// classifier.
pub fn target_probability(x_star: &[f64], clf: &Classifier, target: Label) -> Result<f64> {
    let enc = Tensor::row(&clf.encoder().encode_row(x_star)?);
    Ok(clf.probabilities(&enc)?.get(0, target.class_index()))
}
