//! Feature encoding.
//!
//! Categoricals are one-hot, reals are standardized, positive reals are
//! standardized in `log1p` space. All statistics come from the training
//! split and are reused verbatim for every other split.

use crate::data::schema::{AttributeKind, Schema};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

/// Floor applied to standard deviations and MADs before division.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Statistics of one numeric column, in its transformed space
/// (`x` for reals, `log1p(x)` for positive reals). `mad` is measured on the
/// standardized column, i.e. in encoded units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    pub mad: f64,
}

impl ColumnStats {
    pub fn scale(&self) -> f64 {
        self.std.max(SCALE_FLOOR)
    }

    pub fn mad_floored(&self) -> f64 {
        self.mad.max(SCALE_FLOOR)
    }
}

/// Median with ties resolved to the lower middle element.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// `median(|x - median(x)|)` using lower medians.
pub fn median_absolute_deviation(values: &[f64]) -> f64 {
    let m = lower_median(values);
    let dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    lower_median(&dev)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    schema: Schema,
    stats: Vec<Option<ColumnStats>>,
}

fn transform(kind: AttributeKind, raw: f64) -> f64 {
    match kind {
        AttributeKind::PositiveReal => raw.ln_1p(),
        _ => raw,
    }
}

/// Point estimate of a positive real from its `log1p`-space mean.
pub fn positive_point(log1p_mean: f64) -> f64 {
    log1p_mean.exp_m1().max(0.0)
}

impl Encoder {
    /// Fits statistics on raw training rows.
    pub fn fit(schema: &Schema, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidData("cannot fit encoder on an empty dataset".into()));
        }
        let mut stats = Vec::with_capacity(schema.len());
        for (j, attr) in schema.attributes().iter().enumerate() {
            if attr.kind.is_categorical() {
                stats.push(None);
                continue;
            }
            let col: Vec<f64> = rows.iter().map(|r| transform(attr.kind, r[j])).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let scale = std.max(SCALE_FLOOR);
            let standardized: Vec<f64> = col.iter().map(|x| (x - mean) / scale).collect();
            let mad = median_absolute_deviation(&standardized);
            stats.push(Some(ColumnStats { mean, std, mad }));
        }
        Ok(Self {
            schema: schema.clone(),
            stats,
        })
    }

    pub fn from_parts(schema: Schema, stats: Vec<Option<ColumnStats>>) -> Result<Self> {
        if stats.len() != schema.len() {
            return Err(Error::InvalidData(format!(
                "{} statistics for {} attributes",
                stats.len(),
                schema.len()
            )));
        }
        for (a, s) in schema.attributes().iter().zip(&stats) {
            if a.kind.is_categorical() != s.is_none() {
                return Err(Error::InvalidData(format!(
                    "statistics for '{}' do not match its kind",
                    a.name
                )));
            }
        }
        Ok(Self { schema, stats })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn stats(&self) -> &[Option<ColumnStats>] {
        &self.stats
    }

    pub fn column_stats(&self, attr: usize) -> Option<&ColumnStats> {
        self.stats[attr].as_ref()
    }

    pub fn width(&self) -> usize {
        self.schema.encoded_width()
    }

    /// Encoded value of a numeric attribute.
    pub fn encode_numeric(&self, attr: usize, raw: f64) -> f64 {
        let kind = self.schema.attributes()[attr].kind;
        let s = self.stats[attr].as_ref().expect("numeric attribute");
        (transform(kind, raw) - s.mean) / s.scale()
    }

    /// Raw value of a numeric attribute from its encoded value.
    pub fn decode_numeric(&self, attr: usize, encoded: f64) -> f64 {
        let kind = self.schema.attributes()[attr].kind;
        let s = self.stats[attr].as_ref().expect("numeric attribute");
        let t = encoded * s.scale() + s.mean;
        match kind {
            AttributeKind::PositiveReal => positive_point(t),
            _ => t,
        }
    }

    pub fn encode_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.schema.len() {
            return Err(Error::shape(
                "encode_row",
                format!("{} values for {} attributes", raw.len(), self.schema.len()),
            ));
        }
        let mut out = Vec::with_capacity(self.width());
        for (j, attr) in self.schema.attributes().iter().enumerate() {
            self.schema.validate_value(j, raw[j]).map_err(Error::InvalidData)?;
            match attr.kind {
                AttributeKind::Categorical(card) => {
                    let k = raw[j] as usize;
                    out.extend((0..card).map(|c| if c == k { 1.0 } else { 0.0 }));
                }
                _ => out.push(self.encode_numeric(j, raw[j])),
            }
        }
        Ok(out)
    }

    pub fn encode_rows(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for (i, r) in rows.iter().enumerate() {
            let enc = self.encode_row(r).map_err(|e| Error::Data {
                row: i,
                message: e.to_string(),
            })?;
            data.extend(enc);
        }
        Tensor::new(rows.len(), self.width(), data)
    }

    /// Inverse of [`Encoder::encode_row`]; categorical blocks decode to
    /// their argmax so probability vectors are accepted too.
    pub fn decode_row(&self, encoded: &[f64]) -> Vec<f64> {
        self.schema
            .blocks()
            .into_iter()
            .enumerate()
            .map(|(j, block)| match self.schema.attributes()[j].kind {
                AttributeKind::Categorical(_) => argmax(&encoded[block]) as f64,
                _ => self.decode_numeric(j, encoded[block.start]),
            })
            .collect()
    }
}
