//! Variational autoencoder with one likelihood head per attribute.
//!
//! Reals and positive reals get a Gaussian head (mean and log-variance) in
//! encoded units; positive reals are therefore Gaussian in standardized
//! `log1p` space. Categoricals get a softmax head. A conditional model
//! feeds the encoded immutable attributes to the decoder next to `z` and
//! does not reconstruct them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adam::{AdamConfig, AdamState};
use crate::data::{AttributeKind, Dataset, Encoder, Schema};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNetwork, Output};
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, Tensor};

/// Log-variances of Gaussian heads are squashed into `(-B, B)`.
pub const LOGVAR_BOUND: f64 = 4.0;

/// Which attributes a decoder reconstructs and where their heads sit.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct HeadLayout {
    kinds: Vec<AttributeKind>,
    blocks: Vec<std::ops::Range<usize>>,
    /// Head offset of each attribute, `None` when not reconstructed.
    offsets: Vec<Option<usize>>,
    width: usize,
}

impl HeadLayout {
    pub(crate) fn new(schema: &Schema, modeled: &[usize]) -> Self {
        let mut offsets = vec![None; schema.len()];
        let mut width = 0;
        for (j, a) in schema.attributes().iter().enumerate() {
            if modeled.contains(&j) {
                offsets[j] = Some(width);
                width += a.kind.head_width();
            }
        }
        Self {
            kinds: schema.attributes().iter().map(|a| a.kind).collect(),
            blocks: schema.blocks(),
            offsets,
            width,
        }
    }

    pub(crate) fn width(&self) -> usize {
        self.width
    }

    pub(crate) fn is_modeled(&self, attr: usize) -> bool {
        self.offsets[attr].is_some()
    }

    fn gaussian(tape: &mut Tape, out: Var, offset: usize) -> (Var, Var) {
        let mean = tape.slice_cols(out, offset, offset + 1);
        let raw = tape.slice_cols(out, offset + 1, offset + 2);
        let shrunk = tape.scale(raw, 1.0 / LOGVAR_BOUND);
        let squashed = tape.tanh(shrunk);
        let logvar = tape.scale(squashed, LOGVAR_BOUND);
        (mean, logvar)
    }

    /// Per-row negative log-likelihood of the encoded rows `x`, `n x 1`.
    pub(crate) fn nll(&self, tape: &mut Tape, out: Var, x: &Tensor) -> Var {
        let mut total: Option<Var> = None;
        for (j, offset) in self.offsets.iter().enumerate() {
            let Some(o) = *offset else { continue };
            let block = &self.blocks[j];
            let term = match self.kinds[j] {
                AttributeKind::Categorical(card) => {
                    let logits = tape.slice_cols(out, o, o + card);
                    let targets = x.slice_cols(block.start, block.end).argmax_rows();
                    tape.softmax_cross_entropy(logits, &targets)
                }
                _ => {
                    let (mean, logvar) = Self::gaussian(tape, out, o);
                    tape.gaussian_nll(x.slice_cols(block.start, block.end), mean, logvar)
                }
            };
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        total.expect("at least one reconstructed attribute")
    }

    /// Expected encoded row: means for numeric heads, probabilities for
    /// categorical heads, and blocks copied from `reference` for attributes
    /// that are not reconstructed.
    pub(crate) fn expected(&self, tape: &mut Tape, out: Var, reference: Option<Var>) -> Var {
        let mut parts = Vec::with_capacity(self.kinds.len());
        for (j, offset) in self.offsets.iter().enumerate() {
            let part = match (*offset, self.kinds[j]) {
                (Some(o), AttributeKind::Categorical(card)) => {
                    let logits = tape.slice_cols(out, o, o + card);
                    tape.softmax_rows(logits)
                }
                (Some(o), _) => tape.slice_cols(out, o, o + 1),
                (None, _) => {
                    let r = reference.expect("reference rows for unmodeled attributes");
                    tape.slice_cols(r, self.blocks[j].start, self.blocks[j].end)
                }
            };
            parts.push(part);
        }
        tape.concat_cols(&parts)
    }

    /// Head parameters for every attribute of row `r` of `out`.
    pub(crate) fn params_row(&self, out: &Tensor, r: usize) -> Vec<HeadParams> {
        let row = out.row_slice(r);
        self.offsets
            .iter()
            .zip(&self.kinds)
            .map(|(offset, kind)| match (*offset, *kind) {
                (None, _) => HeadParams::Given,
                (Some(o), AttributeKind::Categorical(card)) => {
                    let mut p = row[o..o + card].to_vec();
                    crate::tensor::softmax_in_place(&mut p);
                    HeadParams::Categorical { probabilities: p }
                }
                (Some(o), _) => HeadParams::Gaussian {
                    mean: row[o],
                    log_variance: LOGVAR_BOUND * (row[o + 1] / LOGVAR_BOUND).tanh(),
                },
            })
            .collect()
    }
}

/// Distribution parameters of one attribute.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadParams {
    /// In encoded units (standardized, `log1p` space for positive reals).
    Gaussian { mean: f64, log_variance: f64 },
    Categorical { probabilities: Vec<f64> },
    /// Not reconstructed; supplied by the caller.
    Given,
}

/// Decoder output for a batch of latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// `n x encoded_width`: means, class probabilities, and copied blocks.
    pub expected: Tensor,
    /// Per row, per attribute.
    pub heads: Vec<Vec<HeadParams>>,
}

impl Decoded {
    /// Raw-space point estimate of row `r`. Attributes the decoder does not
    /// reconstruct are copied from `reference_raw`.
    pub fn point(&self, r: usize, encoder: &Encoder, reference_raw: &[f64]) -> Vec<f64> {
        self.heads[r]
            .iter()
            .enumerate()
            .map(|(j, h)| match h {
                HeadParams::Gaussian { mean, .. } => encoder.decode_numeric(j, *mean),
                HeadParams::Categorical { probabilities } => argmax(probabilities) as f64,
                HeadParams::Given => reference_raw[j],
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub k: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub conditional: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            k: 5,
            hidden: vec![64],
            epochs: 50,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            conditional: false,
        }
    }
}

/// Mean ELBO components over a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboValue {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VaeReport {
    /// Mean loss per epoch.
    pub losses: Vec<f64>,
    /// Smallest per-row KL seen on any batch.
    pub min_batch_kl: f64,
}

/// Parameter handles of a VAE bound on a tape.
pub struct VaeVars {
    pub encoder: Vec<Var>,
    pub decoder: Vec<Var>,
}

pub(crate) struct ElboVars {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    features: Encoder,
    k: usize,
    conditional: bool,
    encoder_net: DenseNetwork,
    decoder_net: DenseNetwork,
    layout: HeadLayout,
}

/// Concatenated encoded blocks of the given attributes.
pub(crate) fn gather_blocks(schema: &Schema, x: &Tensor, attrs: &[usize]) -> Tensor {
    let blocks = schema.blocks();
    let parts: Vec<Tensor> = attrs
        .iter()
        .map(|&j| x.slice_cols(blocks[j].start, blocks[j].end))
        .collect();
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_cols(&refs).expect("same row count")
}

/// `z = μ + exp(½ log σ²) ⊙ ε` on values.
pub fn reparam_sample(mu: &Tensor, logvar: &Tensor, noise: &Tensor) -> Result<Tensor> {
    if !mu.same_shape(logvar) || !mu.same_shape(noise) {
        return Err(Error::shape(
            "reparam_sample",
            format!("{:?}, {:?}, {:?}", mu.shape(), logvar.shape(), noise.shape()),
        ));
    }
    let mut tape = Tape::new();
    let (m, l) = (tape.constant(mu.clone()), tape.constant(logvar.clone()));
    let z = reparam_on(&mut tape, m, l, noise.clone());
    Ok(tape.value(z).clone())
}

/// Records the reparameterized sample on a tape.
pub fn reparam_on(tape: &mut Tape, mu: Var, logvar: Var, noise: Tensor) -> Var {
    let half = tape.scale(logvar, 0.5);
    let sd = tape.exp(half);
    let eps = tape.constant(noise);
    let spread = tape.mul(sd, eps);
    tape.add(mu, spread)
}

pub(crate) fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

impl Vae {
    /// Fresh model with Glorot-initialized networks.
    pub fn init(features: Encoder, config: &VaeConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::build(features, config, |sizes, out| {
            DenseNetwork::init(sizes, Activation::Tanh, out, rng)
        })
    }

    /// Model whose networks are all zero.
    pub fn zeros(features: Encoder, config: &VaeConfig) -> Result<Self> {
        Self::build(features, config, |sizes, out| {
            DenseNetwork::zeros(sizes, Activation::Tanh, out)
        })
    }

    fn build(
        features: Encoder,
        config: &VaeConfig,
        mut net: impl FnMut(&[usize], Activation) -> Result<DenseNetwork>,
    ) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::config("latent dimension k must be at least 1"));
        }
        let schema = features.schema();
        let width = features.width();
        if config.k >= width {
            log::warn!("latent dimension {} is not below the encoded width {width}", config.k);
        }
        let modeled: Vec<usize> = if config.conditional {
            schema.mutable_indices()
        } else {
            (0..schema.len()).collect()
        };
        if modeled.is_empty() {
            return Err(Error::config("a conditional model needs at least one mutable attribute"));
        }
        let layout = HeadLayout::new(schema, &modeled);
        let cond_width: usize = if config.conditional {
            schema
                .immutable_indices()
                .iter()
                .map(|&j| schema.attributes()[j].kind.encoded_width())
                .sum()
        } else {
            0
        };
        let enc_sizes: Vec<usize> = std::iter::once(width)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(2 * config.k))
            .collect();
        let dec_sizes: Vec<usize> = std::iter::once(config.k + cond_width)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(layout.width()))
            .collect();
        Ok(Self {
            encoder_net: net(&enc_sizes, Activation::Identity)?,
            decoder_net: net(&dec_sizes, Activation::Identity)?,
            features,
            k: config.k,
            conditional: config.conditional,
            layout,
        })
    }

    /// Reassembles a model from stored networks.
    pub fn from_parts(
        features: Encoder,
        k: usize,
        conditional: bool,
        encoder_net: DenseNetwork,
        decoder_net: DenseNetwork,
    ) -> Result<Self> {
        let config = VaeConfig {
            k,
            hidden: encoder_net.layers()[..encoder_net.layers().len() - 1]
                .iter()
                .map(|l| l.output_dim())
                .collect(),
            conditional,
            ..VaeConfig::default()
        };
        let shell = Self::zeros(features, &config)?;
        let fits = |a: &DenseNetwork, b: &DenseNetwork| {
            a.input_dim() == b.input_dim() && a.output_dim() == b.output_dim()
        };
        if !fits(&shell.encoder_net, &encoder_net) || !fits(&shell.decoder_net, &decoder_net) {
            return Err(Error::InvalidData("stored networks do not match the schema".into()));
        }
        Ok(Self {
            encoder_net,
            decoder_net,
            ..shell
        })
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

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn encoder_net(&self) -> &DenseNetwork {
        &self.encoder_net
    }

    pub fn decoder_net(&self) -> &DenseNetwork {
        &self.decoder_net
    }

    pub(crate) fn heads_row(&self, out: &Tensor, r: usize) -> Vec<HeadParams> {
        self.layout.params_row(out, r)
    }

    /// Whether the decoder has a head for attribute `attr`.
    pub fn reconstructs(&self, attr: usize) -> bool {
        self.layout.is_modeled(attr)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> VaeVars {
        VaeVars {
            encoder: self.encoder_net.bind(tape, trainable),
            decoder: self.decoder_net.bind(tape, trainable),
        }
    }

    pub fn encode_on(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<(Var, Var)> {
        let h = self.encoder_net.forward_on(tape, params, x, Output::Activated)?;
        let mu = tape.slice_cols(h, 0, self.k);
        let logvar = tape.slice_cols(h, self.k, 2 * self.k);
        Ok((mu, logvar))
    }

    /// Posterior mean and log-variance for encoded rows.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let params = self.encoder_net.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (mu, lv) = self.encode_on(&mut tape, &params, xv)?;
        tape.check_finite()?;
        Ok((tape.value(mu).clone(), tape.value(lv).clone()))
    }

    fn decoder_input(&self, tape: &mut Tape, z: Var, reference: Option<&Tensor>) -> Result<Var> {
        if !self.conditional {
            return Ok(z);
        }
        let reference = reference
            .ok_or_else(|| Error::contract("conditional decoder needs the immutable attributes"))?;
        let imm = self.schema().immutable_indices();
        if imm.is_empty() {
            return Ok(z);
        }
        let x_i = tape.constant(gather_blocks(self.schema(), reference, &imm));
        Ok(tape.concat_cols(&[z, x_i]))
    }

    /// Records the decoder. Returns the raw head outputs and the expected
    /// encoded rows; `reference` supplies immutable attributes and must be
    /// encoded rows aligned with `z`.
    pub fn decode_on(
        &self,
        tape: &mut Tape,
        params: &[Var],
        z: Var,
        reference: Option<&Tensor>,
    ) -> Result<(Var, Var)> {
        let input = self.decoder_input(tape, z, reference)?;
        let out = self.decoder_net.forward_on(tape, params, input, Output::Activated)?;
        let reference_var = reference.map(|r| tape.constant(r.clone()));
        let expected = self.layout.expected(tape, out, reference_var);
        Ok((out, expected))
    }

    pub fn decode(&self, z: &Tensor, reference: Option<&Tensor>) -> Result<Decoded> {
        let mut tape = Tape::new();
        let params = self.decoder_net.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let (out, expected) = self.decode_on(&mut tape, &params, zv, reference)?;
        tape.check_finite()?;
        let out_t = tape.value(out);
        Ok(Decoded {
            expected: tape.value(expected).clone(),
            heads: (0..z.rows()).map(|r| self.layout.params_row(out_t, r)).collect(),
        })
    }

    pub(crate) fn elbo_on(&self, tape: &mut Tape, vars: &VaeVars, x: &Tensor, noise: Tensor) -> Result<ElboVars> {
        let xv = tape.constant(x.clone());
        let (mu, lv) = self.encode_on(tape, &vars.encoder, xv)?;
        let z = reparam_on(tape, mu, lv, noise);
        let input = self.decoder_input(tape, z, Some(x))?;
        let out = self.decoder_net.forward_on(tape, &vars.decoder, input, Output::Activated)?;
        let nll = self.layout.nll(tape, out, x);
        let kl = tape.kl_std_normal(mu, lv);
        let per_row = tape.add(nll, kl);
        Ok(ElboVars {
            loss: tape.mean(per_row),
            reconstruction: tape.mean(nll),
            kl: tape.mean(kl),
        })
    }

    /// Negative ELBO averaged over the rows of `x`, with the given
    /// reparameterization noise (`n x k`).
    pub fn elbo_loss(&self, x: &Tensor, noise: &Tensor) -> Result<ElboValue> {
        if noise.shape() != [x.rows(), self.k] {
            return Err(Error::shape("elbo_loss", format!("noise {:?}", noise.shape())));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let e = self.elbo_on(&mut tape, &vars, x, noise.clone())?;
        tape.check_finite()?;
        Ok(ElboValue {
            loss: tape.value(e.loss).item(),
            reconstruction: tape.value(e.reconstruction).item(),
            kl: tape.value(e.kl).item(),
        })
    }

    /// Encodes raw rows, decodes the posterior means, and returns point
    /// estimates with unmodeled attributes copied from the input.
    pub fn reconstruct(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let x = self.features.encode_rows(rows)?;
        let (mu, _) = self.encode(&x)?;
        let d = self.decode(&mu, Some(&x))?;
        Ok((0..rows.len()).map(|r| d.point(r, &self.features, &rows[r])).collect())
    }

    /// Fraction of reconstructed categorical cells that match the input.
    pub fn categorical_accuracy(&self, rows: &[Vec<f64>]) -> Result<f64> {
        let cats: Vec<usize> = (0..self.schema().len())
            .filter(|&j| self.schema().attributes()[j].kind.is_categorical() && self.reconstructs(j))
            .collect();
        if cats.is_empty() || rows.is_empty() {
            return Err(Error::InvalidData("no categorical cells to score".into()));
        }
        let rec = self.reconstruct(rows)?;
        let hits: usize = rows
            .iter()
            .zip(&rec)
            .map(|(a, b)| cats.iter().filter(|&&j| a[j] == b[j]).count())
            .sum();
        Ok(hits as f64 / (rows.len() * cats.len()) as f64)
    }
}

/// Trains a VAE by minimizing the negative ELBO with Adam.
pub fn train_vae(data: &Dataset, features: &Encoder, config: &VaeConfig) -> Result<(Vae, VaeReport)> {
    if data.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    data.schema().ensure_compatible(features.schema())?;
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let x = features.encode_rows(data.rows())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vae = Vae::init(features.clone(), config, &mut rng)?;
    let mut adam = {
        let params: Vec<&Tensor> = vae.encoder_net.params().into_iter().chain(vae.decoder_net.params()).collect();
        AdamState::new(config.adam, &params)
    };
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut report = VaeReport {
        losses: Vec::with_capacity(config.epochs),
        min_batch_kl: f64::INFINITY,
    };

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select_rows(batch);
            let noise = standard_normal(batch.len(), vae.k, &mut rng);
            let mut tape = Tape::new();
            let vars = vae.bind(&mut tape, true);
            let e = vae.elbo_on(&mut tape, &vars, &xb, noise)?;
            let kl = tape.value(e.kl).item();
            if !(kl >= 0.0) {
                return Err(Error::numeric("kl_std_normal"));
            }
            report.min_batch_kl = report.min_batch_kl.min(kl);
            epoch_loss += tape.value(e.loss).item() * batch.len() as f64 / x.rows() as f64;

            let mut grads = tape.backward(e.loss)?;
            let g: Vec<Tensor> = vars
                .encoder
                .iter()
                .chain(&vars.decoder)
                .map(|&v| grads.take(v))
                .collect();
            let mut params: Vec<&mut Tensor> = vae
                .encoder_net
                .params_mut()
                .into_iter()
                .chain(vae.decoder_net.params_mut())
                .collect();
            adam.step(&mut params, &g)?;
        }
        report.losses.push(epoch_loss);
    }
    Ok((vae, report))
}
