//! Latent-confounder decision model with treatment and outcome heads.
//!
//! Generative part, all conditioned on the encoded immutables `x_I`:
//! `p(x_M | z)`, `p(t | z)` and one outcome head per treatment value, so an
//! intervention `do(t)` simply selects a head. Inference uses
//! `q(z | x, t, y)` on the factual triple.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::data::{Dataset, Encoder, Schema};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNetwork, Output};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;
use crate::vae::{gather_blocks, reparam_on, standard_normal, Decoded, HeadLayout};

#[derive(Clone, Debug, PartialEq)]
pub struct CausalModelConfig {
    pub k: usize,
    pub hidden: Vec<usize>,
    /// Hidden widths of the treatment and outcome heads.
    pub head_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for CausalModelConfig {
    fn default() -> Self {
        Self {
            k: 3,
            hidden: vec![64],
            head_hidden: vec![16],
            epochs: 30,
            batch_size: 128,
            adam: AdamConfig::with_learning_rate(3e-3),
            seed: 0,
        }
    }
}

/// Networks of a causal model, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalNetworks {
    pub inference: DenseNetwork,
    pub attributes: DenseNetwork,
    pub treatment: DenseNetwork,
    pub outcome0: DenseNetwork,
    pub outcome1: DenseNetwork,
}

impl CausalNetworks {
    fn all(&self) -> [&DenseNetwork; 5] {
        [&self.inference, &self.attributes, &self.treatment, &self.outcome0, &self.outcome1]
    }

    fn all_mut(&mut self) -> [&mut DenseNetwork; 5] {
        [
            &mut self.inference,
            &mut self.attributes,
            &mut self.treatment,
            &mut self.outcome0,
            &mut self.outcome1,
        ]
    }
}

/// Parameter handles of every network, in [`CausalNetworks`] order.
pub struct CausalVars {
    pub nets: [Vec<Var>; 5],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CausalElbo {
    pub loss: f64,
    pub attributes: f64,
    pub treatment: f64,
    pub outcome: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CausalReport {
    pub losses: Vec<f64>,
    pub min_batch_kl: f64,
}

struct ElboVars {
    loss: Var,
    attributes: Var,
    treatment: Var,
    outcome: Var,
    kl: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CausalModel {
    features: Encoder,
    k: usize,
    nets: CausalNetworks,
    layout: HeadLayout,
}

fn check_binary(name: &str, v: &[u8]) -> Result<()> {
    if v.iter().any(|&b| b > 1) {
        return Err(Error::InvalidData(format!("{name} must be binary 0/1")));
    }
    Ok(())
}

fn as_column(v: &[u8]) -> Tensor {
    Tensor::column(&v.iter().map(|&b| b as f64).collect::<Vec<_>>())
}

impl CausalModel {
    fn build(
        features: Encoder,
        config: &CausalModelConfig,
        mut net: impl FnMut(&[usize], Activation) -> Result<DenseNetwork>,
    ) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::config("latent dimension k must be at least 1"));
        }
        let schema = features.schema();
        let mutable = schema.mutable_indices();
        if mutable.is_empty() {
            return Err(Error::config("the causal model needs at least one mutable attribute"));
        }
        let layout = HeadLayout::new(schema, &mutable);
        let cond: usize = schema
            .immutable_indices()
            .iter()
            .map(|&j| schema.attributes()[j].kind.encoded_width())
            .sum();
        let sizes = |input: usize, hidden: &[usize], out: usize| -> Vec<usize> {
            std::iter::once(input)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect()
        };
        let k = config.k;
        let nets = CausalNetworks {
            inference: net(&sizes(features.width() + 2, &config.hidden, 2 * k), Activation::Identity)?,
            attributes: net(&sizes(k + cond, &config.hidden, layout.width()), Activation::Identity)?,
            treatment: net(&sizes(k + cond, &config.head_hidden, 1), Activation::Identity)?,
            outcome0: net(&sizes(k + cond, &config.head_hidden, 1), Activation::Identity)?,
            outcome1: net(&sizes(k + cond, &config.head_hidden, 1), Activation::Identity)?,
        };
        Ok(Self {
            features,
            k,
            nets,
            layout,
        })
    }

    pub fn init(features: Encoder, config: &CausalModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::build(features, config, |s, a| DenseNetwork::init(s, Activation::Tanh, a, rng))
    }

    pub fn zeros(features: Encoder, config: &CausalModelConfig) -> Result<Self> {
        Self::build(features, config, |s, a| DenseNetwork::zeros(s, Activation::Tanh, a))
    }

    pub fn from_parts(features: Encoder, k: usize, nets: CausalNetworks) -> Result<Self> {
        let shell = Self::zeros(
            features,
            &CausalModelConfig {
                k,
                ..CausalModelConfig::default()
            },
        )?;
        for (a, b) in shell.nets.all().iter().zip(nets.all()) {
            if a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim() {
                return Err(Error::InvalidData("stored networks do not match the schema".into()));
            }
        }
        Ok(Self { nets, ..shell })
    }

    pub fn features(&self) -> &Encoder {
        &self.features
    }

    pub fn schema(&self) -> &Schema {
        self.features.schema()
    }

    pub fn latent_dim(&self) -> usize {
        self.k
    }

    pub fn networks(&self) -> &CausalNetworks {
        &self.nets
    }

    pub fn networks_mut(&mut self) -> &mut CausalNetworks {
        &mut self.nets
    }

    pub(crate) fn heads_row(&self, out: &Tensor, r: usize) -> Vec<crate::vae::HeadParams> {
        self.layout.params_row(out, r)
    }

    /// Whether attribute `attr` has a decoder head (only mutable ones do).
    pub fn reconstructs(&self, attr: usize) -> bool {
        self.layout.is_modeled(attr)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> CausalVars {
        let [a, b, c, d, e] = self.nets.all();
        CausalVars {
            nets: [
                a.bind(tape, trainable),
                b.bind(tape, trainable),
                c.bind(tape, trainable),
                d.bind(tape, trainable),
                e.bind(tape, trainable),
            ],
        }
    }

    /// `z ⊕ x_I` for the generative networks.
    fn conditioned(&self, tape: &mut Tape, z: Var, reference: &Tensor) -> Var {
        let imm = self.schema().immutable_indices();
        if imm.is_empty() {
            return z;
        }
        let x_i = tape.constant(gather_blocks(self.schema(), reference, &imm));
        tape.concat_cols(&[z, x_i])
    }

    fn check_rows(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.features.width() {
            return Err(Error::LayerShape {
                layer: 0,
                expected: self.features.width(),
                actual: x.cols(),
            });
        }
        Ok(())
    }

    pub fn infer_on(&self, tape: &mut Tape, vars: &CausalVars, x: &Tensor, t: &[u8], y: &[u8]) -> Result<(Var, Var)> {
        self.check_rows(x)?;
        let input = Tensor::concat_cols(&[x, &as_column(t), &as_column(y)])?;
        let iv = tape.constant(input);
        let h = self.nets.inference.forward_on(tape, &vars.nets[0], iv, Output::Activated)?;
        Ok((tape.slice_cols(h, 0, self.k), tape.slice_cols(h, self.k, 2 * self.k)))
    }

    /// Posterior `q(z | x, t, y)` for encoded rows and their factual
    /// treatment and outcome.
    pub fn infer_z(&self, x: &Tensor, t: &[u8], y: &[u8]) -> Result<(Tensor, Tensor)> {
        check_binary("treatment", t)?;
        check_binary("outcome", y)?;
        if t.len() != x.rows() || y.len() != x.rows() {
            return Err(Error::shape("infer_z", "treatment/outcome length differs from row count"));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (mu, lv) = self.infer_on(&mut tape, &vars, x, t, y)?;
        tape.check_finite()?;
        Ok((tape.value(mu).clone(), tape.value(lv).clone()))
    }

    /// Logit of `p(y = 1 | do(t), z, x_I)`, `n x 1`.
    pub fn outcome_logit_on(&self, tape: &mut Tape, vars: &CausalVars, z: Var, reference: &Tensor, t: u8) -> Result<Var> {
        let input = self.conditioned(tape, z, reference);
        let (net, params) = match t {
            0 => (&self.nets.outcome0, &vars.nets[3]),
            1 => (&self.nets.outcome1, &vars.nets[4]),
            _ => return Err(Error::InvalidData(format!("treatment must be 0 or 1, got {t}"))),
        };
        net.forward_on(tape, params, input, Output::Activated)
    }

    /// `p(y = 1 | do(t), z, x_I)` per row; `reference` supplies the
    /// encoded immutables.
    pub fn predict_outcome_do(&self, z: &Tensor, reference: &Tensor, t: u8) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let logit = self.outcome_logit_on(&mut tape, &vars, zv, reference, t)?;
        tape.check_finite()?;
        Ok(tape.value(logit).data().iter().map(|&l| sigmoid(l)).collect())
    }

    /// Records the attribute decoder; returns head outputs and the expected
    /// encoded rows with immutables copied from `reference`.
    pub fn decode_on(&self, tape: &mut Tape, vars: &CausalVars, z: Var, reference: &Tensor) -> Result<(Var, Var)> {
        let input = self.conditioned(tape, z, reference);
        let out = self
            .nets
            .attributes
            .forward_on(tape, &vars.nets[1], input, Output::Activated)?;
        let r = tape.constant(reference.clone());
        let expected = self.layout.expected(tape, out, Some(r));
        Ok((out, expected))
    }

    pub fn decode(&self, z: &Tensor, reference: &Tensor) -> Result<Decoded> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let (out, expected) = self.decode_on(&mut tape, &vars, zv, reference)?;
        tape.check_finite()?;
        let out_t = tape.value(out);
        Ok(Decoded {
            expected: tape.value(expected).clone(),
            heads: (0..z.rows()).map(|r| self.layout.params_row(out_t, r)).collect(),
        })
    }

    /// Per-row attribute negative log-likelihood at latent codes `z`.
    pub fn attribute_nll(&self, z: &Tensor, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let input = self.conditioned(&mut tape, zv, x);
        let out = self
            .nets
            .attributes
            .forward_on(&mut tape, &vars.nets[1], input, Output::Activated)?;
        let nll = self.layout.nll(&mut tape, out, x);
        tape.check_finite()?;
        Ok(tape.value(nll).data().to_vec())
    }

    fn elbo_on(&self, tape: &mut Tape, vars: &CausalVars, x: &Tensor, t: &[u8], y: &[u8], noise: Tensor) -> Result<ElboVars> {
        let (mu, lv) = self.infer_on(tape, vars, x, t, y)?;
        let z = reparam_on(tape, mu, lv, noise);
        let input = self.conditioned(tape, z, x);
        let out = self
            .nets
            .attributes
            .forward_on(tape, &vars.nets[1], input, Output::Activated)?;
        let x_nll = self.layout.nll(tape, out, x);

        let t_logit = self
            .nets
            .treatment
            .forward_on(tape, &vars.nets[2], input, Output::Activated)?;
        let t_nll = tape.bce_with_logits(t_logit, as_column(t));

        let l0 = self.nets.outcome0.forward_on(tape, &vars.nets[3], input, Output::Activated)?;
        let l1 = self.nets.outcome1.forward_on(tape, &vars.nets[4], input, Output::Activated)?;
        let treated = tape.constant(as_column(t));
        let control = tape.constant(as_column(t).map(|v| 1.0 - v));
        let a = tape.mul(l0, control);
        let b = tape.mul(l1, treated);
        let factual = tape.add(a, b);
        let y_nll = tape.bce_with_logits(factual, as_column(y));

        let kl = tape.kl_std_normal(mu, lv);
        let s1 = tape.add(x_nll, t_nll);
        let s2 = tape.add(s1, y_nll);
        let per_row = tape.add(s2, kl);
        Ok(ElboVars {
            loss: tape.mean(per_row),
            attributes: tape.mean(x_nll),
            treatment: tape.mean(t_nll),
            outcome: tape.mean(y_nll),
            kl: tape.mean(kl),
        })
    }

    /// Negative ELBO averaged over rows, with reparameterization noise
    /// `n x k`.
    pub fn causal_elbo(&self, x: &Tensor, t: &[u8], y: &[u8], noise: &Tensor) -> Result<CausalElbo> {
        check_binary("treatment", t)?;
        check_binary("outcome", y)?;
        if noise.shape() != [x.rows(), self.k] {
            return Err(Error::shape("causal_elbo", format!("noise {:?}", noise.shape())));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let e = self.elbo_on(&mut tape, &vars, x, t, y, noise.clone())?;
        tape.check_finite()?;
        let v = |var: Var| tape.value(var).item();
        Ok(CausalElbo {
            loss: v(e.loss),
            attributes: v(e.attributes),
            treatment: v(e.treatment),
            outcome: v(e.outcome),
            kl: v(e.kl),
        })
    }
}

fn roles(data: &Dataset) -> Result<(&[u8], &[u8])> {
    match (data.treatment(), data.outcome()) {
        (Some(t), Some(y)) => Ok((t, y)),
        _ => Err(Error::InvalidData("dataset needs treatment and outcome columns".into())),
    }
}

/// Trains the model. `immutable` names the attributes the decoder conditions
/// on instead of reconstructing; it overrides the schema's flags.
pub fn train_causal(
    data: &Dataset,
    features: &Encoder,
    immutable: &[String],
    config: &CausalModelConfig,
) -> Result<(CausalModel, CausalReport)> {
    if data.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    data.schema().ensure_compatible(features.schema())?;
    let schema = data.schema().with_immutable(immutable)?;
    let features = Encoder::from_parts(schema, features.stats().to_vec())?;
    let (t, y) = roles(data)?;
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let x = features.encode_rows(data.rows())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CausalModel::init(features, config, &mut rng)?;
    let mut adam = {
        let params: Vec<&Tensor> = model.nets.all().into_iter().flat_map(|n| n.params()).collect();
        AdamState::new(config.adam, &params)
    };
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut report = CausalReport {
        losses: Vec::with_capacity(config.epochs),
        min_batch_kl: f64::INFINITY,
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select_rows(batch);
            let tb: Vec<u8> = batch.iter().map(|&i| t[i]).collect();
            let yb: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
            let noise = standard_normal(batch.len(), model.k, &mut rng);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let e = model.elbo_on(&mut tape, &vars, &xb, &tb, &yb, noise)?;
            let kl = tape.value(e.kl).item();
            if !(kl >= 0.0) {
                return Err(Error::numeric("kl_std_normal"));
            }
            report.min_batch_kl = report.min_batch_kl.min(kl);
            epoch_loss += tape.value(e.loss).item() * batch.len() as f64 / x.rows() as f64;

            let mut grads = tape.backward(e.loss)?;
            let g: Vec<Tensor> = vars.nets.iter().flatten().map(|&v| grads.take(v)).collect();
            let mut params: Vec<&mut Tensor> = model
                .nets
                .all_mut()
                .into_iter()
                .flat_map(|n| n.params_mut())
                .collect();
            adam.step(&mut params, &g)?;
        }
        report.losses.push(epoch_loss);
    }
    Ok((model, report))
}

/// Mean over rows of `p(y | do(1)) − p(y | do(0))` with `z` the posterior
/// mean on each factual triple.
pub fn estimate_ate(model: &CausalModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidData("cannot estimate an effect on an empty dataset".into()));
    }
    data.schema().ensure_compatible(model.schema())?;
    let (t, y) = roles(data)?;
    let x = model.features().encode_rows(data.rows())?;
    let (mu, _) = model.infer_z(&x, t, y)?;
    let p1 = model.predict_outcome_do(&mu, &x, 1)?;
    let p0 = model.predict_outcome_do(&mu, &x, 0)?;
    Ok(p1.iter().zip(&p0).map(|(a, b)| a - b).sum::<f64>() / p0.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_causal, CausalConfig};

    fn small() -> (Dataset, Encoder) {
        let (data, _) = synth_causal(200, CausalConfig::default(), 1).unwrap();
        let enc = data.fit_encoder().unwrap();
        (data, enc)
    }

    #[test]
    fn zero_model_examples() {
        let (data, enc) = small();
        let model = CausalModel::zeros(enc, &CausalModelConfig::default()).unwrap();
        let x = model.features().encode_rows(&data.rows()[..4]).unwrap();
        let (t, y) = (&data.treatment().unwrap()[..4], &data.outcome().unwrap()[..4]);
        let e = model.causal_elbo(&x, t, y, &Tensor::zeros(4, 3)).unwrap();
        assert!((e.treatment - 2f64.ln()).abs() < 1e-15);
        assert!((e.outcome - 2f64.ln()).abs() < 1e-15);
        assert_eq!(e.kl, 0.0);
        let (mu, lv) = model.infer_z(&x, t, y).unwrap();
        assert!(mu.data().iter().chain(lv.data()).all(|&v| v == 0.0));
        assert_eq!(model.predict_outcome_do(&mu, &x, 0).unwrap(), vec![0.5; 4]);
        assert_eq!(model.predict_outcome_do(&mu, &x, 1).unwrap(), vec![0.5; 4]);
        assert_eq!(estimate_ate(&model, &data).unwrap(), 0.0);
    }

    #[test]
    fn identical_heads_mean_no_effect() {
        let (data, enc) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = CausalModel::init(enc, &CausalModelConfig::default(), &mut rng).unwrap();
        model.nets.outcome1 = model.nets.outcome0.clone();
        let x = model.features().encode_rows(data.rows()).unwrap();
        let z = standard_normal(x.rows(), 3, &mut rng);
        assert_eq!(
            model.predict_outcome_do(&z, &x, 0).unwrap(),
            model.predict_outcome_do(&z, &x, 1).unwrap()
        );
        assert_eq!(estimate_ate(&model, &data).unwrap(), 0.0);
    }

    #[test]
    fn immutables_have_no_heads_and_roles_are_rejected() {
        let (data, enc) = small();
        let cfg = CausalModelConfig {
            epochs: 1,
            ..CausalModelConfig::default()
        };
        let imm = vec!["sex".to_string(), "month".to_string()];
        let (model, _) = train_causal(&data, &enc, &imm, &cfg).unwrap();
        let s = model.schema();
        assert!(!model.reconstructs(s.index_of("sex").unwrap()));
        assert!(!model.reconstructs(s.index_of("month").unwrap()));
        assert!(model.reconstructs(0));
        for role in ["t", "y"] {
            let err = train_causal(&data, &enc, &[role.to_string()], &cfg).unwrap_err();
            assert!(matches!(err, Error::Contract(_)));
        }
    }

    #[test]
    fn non_binary_roles_rejected() {
        let (data, enc) = small();
        let model = CausalModel::zeros(enc, &CausalModelConfig::default()).unwrap();
        let x = model.features().encode_rows(&data.rows()[..1]).unwrap();
        assert!(model.causal_elbo(&x, &[2], &[0], &Tensor::zeros(1, 3)).is_err());
        assert!(model.infer_z(&x, &[0], &[3]).is_err());
    }
}
