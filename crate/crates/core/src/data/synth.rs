//! Synthetic generators with stored ground truth.
//!
//! Every generator is a pure function of its parameters and seed.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::dataset::{Dataset, Label};
use crate::data::schema::{Attribute, AttributeKind, Schema};
use crate::error::{Error, Result};
use crate::tape::sigmoid;
use crate::tensor::argmax;

/// Quantities known only to the generator. Never used for training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub z_true: Option<Vec<Vec<f64>>>,
    pub y0: Option<Vec<u8>>,
    pub y1: Option<Vec<u8>>,
    pub a: Option<Vec<u8>>,
}

impl GroundTruth {
    /// Mean of `y(1) - y(0)` over the stored potential outcomes.
    pub fn ate(&self) -> Option<f64> {
        let (y0, y1) = (self.y0.as_ref()?, self.y1.as_ref()?);
        if y0.is_empty() {
            return None;
        }
        let diff: f64 = y0.iter().zip(y1).map(|(&a, &b)| b as f64 - a as f64).sum();
        Some(diff / y0.len() as f64)
    }

    pub fn subset(&self, indices: &[usize]) -> GroundTruth {
        fn pick<T: Clone>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i].clone()).collect())
        }
        GroundTruth {
            z_true: pick(&self.z_true, indices),
            y0: pick(&self.y0, indices),
            y1: pick(&self.y1, indices),
            a: pick(&self.a, indices),
        }
    }

    /// Columns `z_true_0.., y0, y1, a`, each only when present.
    pub fn to_csv_string(&self) -> String {
        let k = self.z_true.as_ref().and_then(|z| z.first()).map_or(0, Vec::len);
        let n = [
            self.z_true.as_ref().map(Vec::len),
            self.y0.as_ref().map(Vec::len),
            self.a.as_ref().map(Vec::len),
        ]
        .into_iter()
        .flatten()
        .next()
        .unwrap_or(0);
        let mut header: Vec<String> = (0..k).map(|j| format!("z_true_{j}")).collect();
        if self.y0.is_some() {
            header.push("y0".into());
        }
        if self.y1.is_some() {
            header.push("y1".into());
        }
        if self.a.is_some() {
            header.push("a".into());
        }
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..n {
            let mut f: Vec<String> = Vec::new();
            if let Some(z) = &self.z_true {
                f.extend(z[i].iter().map(|v| format!("{v}")));
            }
            for col in [&self.y0, &self.y1, &self.a].into_iter().flatten() {
                f.push(col[i].to_string());
            }
            let _ = writeln!(out, "{}", f.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn attr(name: impl Into<String>, kind: AttributeKind, immutable: bool) -> Attribute {
    Attribute {
        name: name.into(),
        kind,
        immutable,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationConfig {
    /// Number of real-valued signal dimensions (2 to 10).
    pub dims: usize,
    /// Class means sit at `±margin` along a unit direction, noise is unit
    /// variance, so the Bayes accuracy is `Φ(margin)`.
    pub margin: f64,
    /// Adds an uninformative mutable categorical column.
    pub nuisance: bool,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            dims: 4,
            margin: 3.0,
            nuisance: true,
        }
    }
}

/// Two Gaussian blobs. Besides the real signal dimensions there is a
/// positive-real column that also carries signal, an optional nuisance
/// categorical, and an immutable uninformative categorical `group`.
pub fn synth_classification(n: usize, config: ClassificationConfig, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::config(format!("synth_classification needs n >= 10, got {n}")));
    }
    if !(2..=10).contains(&config.dims) {
        return Err(Error::config(format!("dims must be in 2..=10, got {}", config.dims)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.dims;
    let u = 1.0 / (d as f64).sqrt();

    let mut attrs: Vec<Attribute> = (0..d).map(|j| attr(format!("x{j}"), AttributeKind::Real, false)).collect();
    attrs.push(attr("amount", AttributeKind::PositiveReal, false));
    if config.nuisance {
        attrs.push(attr("channel", AttributeKind::Categorical(3), false));
    }
    attrs.push(attr("group", AttributeKind::Categorical(2), true));
    let schema = Schema::new(attrs)?.with_label("y")?;

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = if rng.gen_bool(0.5) { Label::Positive } else { Label::Negative };
        let s = label.sign() as f64 * config.margin;
        let mut row: Vec<f64> = (0..d).map(|_| s * u + normal(&mut rng)).collect();
        let proj: f64 = row.iter().sum::<f64>() * u;
        row.push((2.0 + 0.4 * proj + 0.3 * normal(&mut rng)).exp_m1().max(0.0));
        if config.nuisance {
            row.push(rng.gen_range(0..3) as f64);
        }
        row.push(rng.gen_range(0..2) as f64);
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(schema, rows, Some(labels), None, None)
}

/// Random loadings mapping a latent vector to mixed-kind attributes.
struct MixedMap {
    reals: Vec<Vec<f64>>,
    positive: Vec<f64>,
    categorical: Vec<Vec<Vec<f64>>>,
    noise: f64,
}

impl MixedMap {
    fn new(k: usize, n_real: usize, cards: &[usize], noise: f64, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (k as f64).sqrt();
        let mut vec = |len: usize| -> Vec<f64> { (0..len).map(|_| normal(rng) * scale).collect() };
        let reals = (0..n_real).map(|_| vec(k)).collect();
        let positive = vec(k);
        let categorical = cards
            .iter()
            .map(|&c| (0..c).map(|_| vec(k).into_iter().map(|w| 3.0 * w).collect()).collect())
            .collect();
        Self {
            reals,
            positive,
            categorical,
            noise,
        }
    }

    fn attributes(&self, cards: &[usize]) -> Vec<Attribute> {
        let mut a: Vec<Attribute> = (0..self.reals.len())
            .map(|j| attr(format!("r{j}"), AttributeKind::Real, false))
            .collect();
        a.push(attr("p0", AttributeKind::PositiveReal, false));
        a.extend(
            cards
                .iter()
                .enumerate()
                .map(|(j, &c)| attr(format!("c{j}"), AttributeKind::Categorical(c), false)),
        );
        a
    }

    fn sample(&self, z: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let dot = |w: &[f64]| w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let mut row: Vec<f64> = self
            .reals
            .iter()
            .map(|w| dot(w) + self.noise * normal(rng))
            .collect();
        row.push((1.5 + 0.7 * dot(&self.positive) + self.noise * normal(rng)).exp_m1().max(0.0));
        for weights in &self.categorical {
            let scores: Vec<f64> = weights.iter().map(|w| dot(w) + self.noise * normal(rng)).collect();
            row.push(argmax(&scores) as f64);
        }
        row
    }
}

fn latent(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..k).map(|_| normal(rng)).collect()
}

/// Low-noise mixed-type data on a 2-dimensional latent manifold: four
/// reals, one positive real, categoricals of cardinality 3 and 4.
pub fn synth_mixed(n: usize, seed: u64) -> Result<(Dataset, GroundTruth)> {
    if n == 0 {
        return Err(Error::config("synth_mixed needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cards = [3, 4];
    let map = MixedMap::new(2, 4, &cards, 0.05, &mut rng);
    let schema = Schema::new(map.attributes(&cards))?;
    let mut rows = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for _ in 0..n {
        let z = latent(2, &mut rng);
        rows.push(map.sample(&z, &mut rng));
        zs.push(z);
    }
    let ds = Dataset::new(schema, rows, None, None, None)?;
    Ok((
        ds,
        GroundTruth {
            z_true: Some(zs),
            ..GroundTruth::default()
        },
    ))
}

/// `E[σ(s + b + γ) − σ(s + b)]` for `s ~ N(0, sd²)`, by quadrature.
fn mean_uplift(b: f64, gamma: f64, sd: f64) -> f64 {
    const STEPS: usize = 4000;
    let (lo, hi) = (-10.0, 10.0);
    let h = (hi - lo) / STEPS as f64;
    let mut acc = 0.0;
    for i in 0..=STEPS {
        let u = lo + i as f64 * h;
        let w = if i == 0 || i == STEPS { 0.5 } else { 1.0 };
        let density = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let s = sd * u;
        acc += w * density * (sigmoid(s + b + gamma) - sigmoid(s + b));
    }
    acc * h
}

/// Logit-scale shift whose population mean effect is `tau`.
pub fn solve_uplift(b: f64, sd: f64, tau: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_uplift(b, mid, sd) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CausalConfig {
    pub k: usize,
    pub tau: f64,
    pub confounded: bool,
    /// Standard deviation of the attribute noise.
    pub noise: f64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tau: 0.2,
            confounded: false,
            noise: 0.1,
        }
    }
}

/// Outcome intercept and loading norm shared by every causal dataset.
const OUTCOME_BIAS: f64 = -0.5;
const OUTCOME_SCALE: f64 = 1.5;
const PROPENSITY_SCALE: f64 = 2.0;

/// Hidden-confounder data with both potential outcomes stored.
///
/// Attributes are mixed-kind proxies of `z_true`, plus two immutable
/// categoricals (`sex`, `month`) independent of everything else. The
/// treatment is a fair coin (RCT) or `Bernoulli(σ(w·z))`; both potential
/// outcomes share one uniform draw so `y(t) = 1[u < p_t]`.
pub fn synth_causal(n: usize, config: CausalConfig, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let CausalConfig { k, tau, confounded, noise } = config;
    if n == 0 {
        return Err(Error::config("synth_causal needs n >= 1"));
    }
    if k == 0 {
        return Err(Error::config("latent dimension must be at least 1"));
    }
    if !(tau > -1.0 && tau < 1.0) {
        return Err(Error::config(format!("tau must lie in (-1, 1), got {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cards = [3];
    let n_real = (3 * k).max(6);
    let map = MixedMap::new(k, n_real, &cards, noise, &mut rng);
    // The outcome loading `v` and propensity loading `w` share a direction,
    // so confounding biases naive comparisons upwards.
    let mut dir = latent(k, &mut rng);
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dir.iter_mut().for_each(|x| *x /= norm);
    let gamma = solve_uplift(OUTCOME_BIAS, OUTCOME_SCALE, tau);

    let mut attrs = map.attributes(&cards);
    attrs.push(attr("sex", AttributeKind::Categorical(2), true));
    attrs.push(attr("month", AttributeKind::Categorical(4), true));
    let schema = Schema::new(attrs)?.with_treatment_outcome("t", "y")?;

    let mut rows = Vec::with_capacity(n);
    let (mut ts, mut ys, mut y0s, mut y1s, mut zs) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let z = latent(k, &mut rng);
        let mut row = map.sample(&z, &mut rng);
        row.push(rng.gen_range(0..2) as f64);
        row.push(rng.gen_range(0..4) as f64);
        let s: f64 = dir.iter().zip(&z).map(|(a, b)| a * b).sum();
        let p_treat = if confounded { sigmoid(PROPENSITY_SCALE * s) } else { 0.5 };
        let t = u8::from(rng.gen::<f64>() < p_treat);
        let u: f64 = rng.gen();
        let base = OUTCOME_SCALE * s + OUTCOME_BIAS;
        let y0 = u8::from(u < sigmoid(base));
        let y1 = u8::from(u < sigmoid(base + gamma));
        rows.push(row);
        ts.push(t);
        ys.push(if t == 1 { y1 } else { y0 });
        y0s.push(y0);
        y1s.push(y1);
        zs.push(z);
    }
    let ds = Dataset::new(schema, rows, None, Some(ts), Some(ys))?;
    Ok((
        ds,
        GroundTruth {
            z_true: Some(zs),
            y0: Some(y0s),
            y1: Some(y1s),
            a: None,
        },
    ))
}

/// Label `L` and an auxiliary binary attribute `a` with `a = L` with
/// probability `bias` and an independent fair coin otherwise.
///
/// `a` is visible to classifiers through the categorical column `aux`
/// and through two real columns that shift with it; `L` drives the
/// `s*` columns.
pub fn synth_aux_confounded(n: usize, bias: f64, seed: u64) -> Result<(Dataset, GroundTruth)> {
    if n < 100 {
        return Err(Error::config(format!("synth_aux_confounded needs n >= 100, got {n}")));
    }
    if !(0.0..=1.0).contains(&bias) {
        return Err(Error::config(format!("bias must lie in [0, 1], got {bias}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs: Vec<Attribute> = (0..3).map(|j| attr(format!("s{j}"), AttributeKind::Real, false)).collect();
    attrs.extend((0..2).map(|j| attr(format!("a{j}"), AttributeKind::Real, false)));
    attrs.push(attr("aux", AttributeKind::Categorical(2), false));
    let schema = Schema::new(attrs)?.with_label("y")?;

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut aux = Vec::with_capacity(n);
    for _ in 0..n {
        let label = if rng.gen_bool(0.5) { Label::Positive } else { Label::Negative };
        let a = if rng.gen::<f64>() < bias {
            label.class_index() as u8
        } else {
            u8::from(rng.gen_bool(0.5))
        };
        let ls = label.sign() as f64;
        let as_ = if a == 1 { 1.0 } else { -1.0 };
        let mut row: Vec<f64> = (0..3).map(|_| 1.2 * ls + 0.8 * normal(&mut rng)).collect();
        row.extend((0..2).map(|_| 1.5 * as_ + 0.5 * normal(&mut rng)));
        row.push(a as f64);
        rows.push(row);
        labels.push(label);
        aux.push(a);
    }
    let ds = Dataset::new(schema, rows, Some(labels), None, None)?;
    Ok((
        ds,
        GroundTruth {
            a: Some(aux),
            ..GroundTruth::default()
        },
    ))
}
