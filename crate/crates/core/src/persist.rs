//! Text model files.
//!
//! ```text
//! REVISE-MODEL v1
//! kind vae
//! schema 3
//! <schema lines>
//! stats 2
//! <mean> <std> <mad> | none      (one line per attribute)
//! meta k 5
//! network encoder 2
//! layer 12 64 tanh
//! <weights, row-major>
//! <bias>
//! ...
//! end
//! ```
//!
//! Numbers are written with 17 significant digits, so loading restores every
//! parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::causal::{CausalModel, CausalNetworks};
use crate::classifier::Classifier;
use crate::data::{ColumnStats, Encoder, Schema};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, DenseNetwork};
use crate::tensor::Tensor;
use crate::vae::Vae;

pub const FORMAT_VERSION: &str = "REVISE-MODEL v1";

#[derive(Clone, Debug)]
pub enum PersistedModel {
    Classifier(Classifier),
    Vae(Vae),
    Causal(CausalModel),
}

impl PersistedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            PersistedModel::Classifier(_) => "classifier",
            PersistedModel::Vae(_) => "vae",
            PersistedModel::Causal(_) => "causal",
        }
    }

    pub fn encoder(&self) -> &Encoder {
        match self {
            PersistedModel::Classifier(m) => m.encoder(),
            PersistedModel::Vae(m) => m.features(),
            PersistedModel::Causal(m) => m.features(),
        }
    }

    pub fn into_classifier(self) -> Result<Classifier> {
        match self {
            PersistedModel::Classifier(m) => Ok(m),
            other => Err(Error::config(format!("expected a classifier model, found {}", other.kind()))),
        }
    }

    pub fn into_vae(self) -> Result<Vae> {
        match self {
            PersistedModel::Vae(m) => Ok(m),
            other => Err(Error::config(format!("expected a vae model, found {}", other.kind()))),
        }
    }

    pub fn into_causal(self) -> Result<CausalModel> {
        match self {
            PersistedModel::Causal(m) => Ok(m),
            other => Err(Error::config(format!("expected a causal model, found {}", other.kind()))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_VERSION}");
        let _ = writeln!(out, "kind {}", self.kind());
        write_encoder(&mut out, self.encoder());
        match self {
            PersistedModel::Classifier(m) => write_network(&mut out, "classifier", m.network()),
            PersistedModel::Vae(m) => {
                let _ = writeln!(out, "meta k {}", m.latent_dim());
                let _ = writeln!(out, "meta conditional {}", m.is_conditional());
                write_network(&mut out, "encoder", m.encoder_net());
                write_network(&mut out, "decoder", m.decoder_net());
            }
            PersistedModel::Causal(m) => {
                let _ = writeln!(out, "meta k {}", m.latent_dim());
                let n = m.networks();
                write_network(&mut out, "inference", &n.inference);
                write_network(&mut out, "attributes", &n.attributes);
                write_network(&mut out, "treatment", &n.treatment);
                write_network(&mut out, "outcome0", &n.outcome0);
                write_network(&mut out, "outcome1", &n.outcome1);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        let (off, version) = r.line()?;
        if version.trim() != FORMAT_VERSION {
            if version.starts_with("REVISE-MODEL") {
                return Err(Error::UnsupportedVersion(format!(
                    "'{}' (this build reads '{FORMAT_VERSION}')",
                    version.trim()
                )));
            }
            return Err(Error::Format {
                offset: off,
                message: "missing version line".into(),
            });
        }
        let kind = r.keyword("kind")?;
        let encoder = read_encoder(&mut r)?;
        let model = match kind.as_str() {
            "classifier" => {
                let net = read_network(&mut r, "classifier")?;
                PersistedModel::Classifier(Classifier::new(encoder, net)?)
            }
            "vae" => {
                let k = r.meta("k")?;
                let conditional = r.meta("conditional")?;
                let enc = read_network(&mut r, "encoder")?;
                let dec = read_network(&mut r, "decoder")?;
                PersistedModel::Vae(Vae::from_parts(encoder, k, conditional, enc, dec)?)
            }
            "causal" => {
                let k = r.meta("k")?;
                let nets = CausalNetworks {
                    inference: read_network(&mut r, "inference")?,
                    attributes: read_network(&mut r, "attributes")?,
                    treatment: read_network(&mut r, "treatment")?,
                    outcome0: read_network(&mut r, "outcome0")?,
                    outcome1: read_network(&mut r, "outcome1")?,
                };
                PersistedModel::Causal(CausalModel::from_parts(encoder, k, nets)?)
            }
            other => {
                return Err(Error::Format {
                    offset: r.last,
                    message: format!("unknown model kind '{other}'"),
                })
            }
        };
        let (off, end) = r.line()?;
        if end.trim() != "end" {
            return Err(Error::Format {
                offset: off,
                message: format!("expected 'end', found '{}'", end.trim()),
            });
        }
        Ok(model)
    }
}

pub fn save_model(model: &PersistedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PersistedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PersistedModel::from_text(&text)
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_encoder(out: &mut String, encoder: &Encoder) {
    let schema = encoder.schema().to_text();
    let _ = writeln!(out, "schema {}", schema.lines().count());
    out.push_str(&schema);
    let _ = writeln!(out, "stats {}", encoder.stats().len());
    for s in encoder.stats() {
        match s {
            Some(s) => {
                let _ = writeln!(out, "{} {} {}", num(s.mean), num(s.std), num(s.mad));
            }
            None => out.push_str("none\n"),
        }
    }
}

fn write_network(out: &mut String, name: &str, net: &DenseNetwork) {
    let _ = writeln!(out, "network {name} {}", net.layers().len());
    for layer in net.layers() {
        let _ = writeln!(
            out,
            "layer {} {} {}",
            layer.input_dim(),
            layer.output_dim(),
            layer.activation.name()
        );
        for t in [&layer.weights, &layer.bias] {
            let vals: Vec<String> = t.data().iter().map(|&v| num(v)).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
    }
}

struct Reader<'a> {
    text: &'a str,
    pos: usize,
    /// Offset of the most recently read line.
    last: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0, last: 0 }
    }

    fn line(&mut self) -> Result<(usize, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(Error::Format {
                offset: self.text.len(),
                message: "unexpected end of file".into(),
            });
        }
        let rest = &self.text[self.pos..];
        let (line, advance) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.last = self.pos;
        self.pos += advance;
        Ok((self.last, line))
    }

    fn bad(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Reads `<word> <value>` and returns the value.
    fn keyword(&mut self, word: &str) -> Result<String> {
        let (off, line) = self.line()?;
        match line.split_once(' ') {
            Some((w, v)) if w == word => Ok(v.trim().to_string()),
            _ => Err(self.bad(off, format!("expected '{word}'"))),
        }
    }

    fn count(&mut self, word: &str) -> Result<usize> {
        let off = self.pos;
        let v = self.keyword(word)?;
        v.parse().map_err(|_| self.bad(off, format!("bad count '{v}'")))
    }

    fn meta<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let off = self.pos;
        let v = self.keyword("meta")?;
        match v.split_once(' ') {
            Some((k, val)) if k == key => val.parse().map_err(|_| self.bad(off, format!("bad value for {key}"))),
            _ => Err(self.bad(off, format!("expected meta '{key}'"))),
        }
    }

    fn numbers(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (off, line) = self.line()?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.bad(off, "malformed number"))?;
        if vals.len() != expected {
            return Err(self.bad(off, format!("expected {expected} numbers, found {}", vals.len())));
        }
        Ok(vals)
    }
}

fn read_encoder(r: &mut Reader<'_>) -> Result<Encoder> {
    let n = r.count("schema")?;
    let start = r.pos;
    let mut text = String::new();
    for _ in 0..n {
        let (_, line) = r.line()?;
        text.push_str(line);
        text.push('\n');
    }
    let schema = Schema::parse(&text, "model file").map_err(|e| r.bad(start, e.to_string()))?;
    let m = r.count("stats")?;
    if m != schema.len() {
        return Err(r.bad(r.last, format!("{m} stats lines for {} attributes", schema.len())));
    }
    let mut stats = Vec::with_capacity(m);
    for _ in 0..m {
        let peek = r.pos;
        if r.text[peek..].starts_with("none") {
            r.line()?;
            stats.push(None);
        } else {
            let v = r.numbers(3)?;
            stats.push(Some(ColumnStats {
                mean: v[0],
                std: v[1],
                mad: v[2],
            }));
        }
    }
    let at = r.last;
    Encoder::from_parts(schema, stats).map_err(|e| r.bad(at, e.to_string()))
}

fn read_network(r: &mut Reader<'_>, name: &str) -> Result<DenseNetwork> {
    let off = r.pos;
    let header = r.keyword("network")?;
    let n = match header.split_once(' ') {
        Some((found, n)) if found == name => n.parse::<usize>().map_err(|_| r.bad(off, "bad layer count"))?,
        _ => return Err(r.bad(off, format!("expected network '{name}'"))),
    };
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let off = r.pos;
        let spec = r.keyword("layer")?;
        let parts: Vec<&str> = spec.split_whitespace().collect();
        let (inp, outp, act) = match parts.as_slice() {
            [i, o, a] => (
                i.parse::<usize>().map_err(|_| r.bad(off, "bad layer width"))?,
                o.parse::<usize>().map_err(|_| r.bad(off, "bad layer width"))?,
                Activation::parse(a).ok_or_else(|| r.bad(off, format!("unknown activation '{a}'")))?,
            ),
            _ => return Err(r.bad(off, "expected 'layer <in> <out> <activation>'")),
        };
        let w = r.numbers(inp * outp)?;
        let b = r.numbers(outp)?;
        layers.push(DenseLayer {
            weights: Tensor::new(inp, outp, w)?,
            bias: Tensor::new(1, outp, b)?,
            activation: act,
        });
    }
    DenseNetwork::new(layers).map_err(|e| r.bad(off, e.to_string()))
}
