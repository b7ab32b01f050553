//! In-memory datasets and their CSV form.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::encode::Encoder;
use crate::data::schema::{AttributeKind, Schema};
use crate::error::{Error, Result};

/// Binary decision outcome. `Negative` is the undesirable outcome (-1),
/// `Positive` the desirable one (+1). Class index 0 is negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_class(class: usize) -> Self {
        if class == 0 {
            Label::Negative
        } else {
            Label::Positive
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    /// Accepts `-1`/`1`, and `0` as the negative class.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "-1" | "0" => Some(Label::Negative),
            "1" | "+1" => Some(Label::Positive),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<Label>>,
    treatment: Option<Vec<u8>>,
    outcome: Option<Vec<u8>>,
}

fn format_number(v: f64) -> String {
    format!("{v}")
}

fn parse_binary(s: &str) -> Option<u8> {
    match s.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

impl Dataset {
    /// Builds a dataset after validating every value against `schema`.
    /// Role vectors must be present exactly when the schema declares them.
    pub fn new(
        schema: Schema,
        rows: Vec<Vec<f64>>,
        labels: Option<Vec<Label>>,
        treatment: Option<Vec<u8>>,
        outcome: Option<Vec<u8>>,
    ) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Data {
                    row: i + 1,
                    message: format!("{} values for {} attributes", row.len(), schema.len()),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                schema
                    .validate_value(j, v)
                    .map_err(|message| Error::Data { row: i + 1, message })?;
            }
        }
        let check = |present: bool, declared: bool, len: Option<usize>, role: &str| -> Result<()> {
            if present != declared {
                return Err(Error::InvalidData(format!(
                    "{role} column {} by schema but {} in data",
                    if declared { "declared" } else { "not declared" },
                    if present { "present" } else { "absent" }
                )));
            }
            if let Some(n) = len {
                if n != rows.len() {
                    return Err(Error::InvalidData(format!(
                        "{role} has {n} entries for {} rows",
                        rows.len()
                    )));
                }
            }
            Ok(())
        };
        check(labels.is_some(), schema.label().is_some(), labels.as_ref().map(Vec::len), "label")?;
        check(
            treatment.is_some(),
            schema.treatment().is_some(),
            treatment.as_ref().map(Vec::len),
            "treatment",
        )?;
        check(
            outcome.is_some(),
            schema.outcome().is_some(),
            outcome.as_ref().map(Vec::len),
            "outcome",
        )?;
        for v in treatment.iter().chain(outcome.iter()).flatten() {
            if *v > 1 {
                return Err(Error::InvalidData("treatment and outcome must be binary".into()));
            }
        }
        Ok(Self {
            schema,
            rows,
            labels,
            treatment,
            outcome,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn treatment(&self) -> Option<&[u8]> {
        self.treatment.as_deref()
    }

    pub fn outcome(&self) -> Option<&[u8]> {
        self.outcome.as_deref()
    }

    /// Replaces the schema with a compatible one (e.g. different mutability
    /// flags).
    pub fn with_schema(mut self, schema: Schema) -> Result<Self> {
        self.schema.ensure_compatible(&schema)?;
        self.schema = schema;
        Ok(self)
    }

    /// Labels derived from a binary categorical attribute (class 1 positive).
    pub fn labels_from_attribute(&self, name: &str) -> Result<Vec<Label>> {
        let j = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::config(format!("no attribute named '{name}'")))?;
        if self.schema.attributes()[j].kind != AttributeKind::Categorical(2) {
            return Err(Error::config(format!("'{name}' is not a binary categorical")));
        }
        Ok(self.rows.iter().map(|r| Label::from_class(r[j] as usize)).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        fn pick<T: Copy>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect())
        }
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: pick(&self.labels, indices),
            treatment: pick(&self.treatment, indices),
            outcome: pick(&self.outcome, indices),
        }
    }

    pub fn fit_encoder(&self) -> Result<Encoder> {
        Encoder::fit(&self.schema, &self.rows)
    }

    pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, schema)
    }

    pub fn from_csv_reader(reader: impl Read, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let find = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidData(format!("header is missing column '{name}'")))
        };
        let attr_cols: Vec<usize> = schema
            .attributes()
            .iter()
            .map(|a| find(&a.name))
            .collect::<Result<_>>()?;
        let label_col = schema.label().map(find).transpose()?;
        let t_col = schema.treatment().map(find).transpose()?;
        let y_col = schema.outcome().map(find).transpose()?;
        let expected = schema.len() + schema.role_columns().len();
        if header.len() != expected {
            return Err(Error::InvalidData(format!(
                "header has {} columns, schema describes {expected}",
                header.len()
            )));
        }

        let mut rows = Vec::new();
        let mut labels = label_col.map(|_| Vec::new());
        let mut treatment = t_col.map(|_| Vec::new());
        let mut outcome = y_col.map(|_| Vec::new());
        for (i, record) in rdr.records().enumerate() {
            let row_no = i + 1;
            let record = record.map_err(|e| Error::Data {
                row: row_no,
                message: e.to_string(),
            })?;
            if record.len() != header.len() {
                return Err(Error::Data {
                    row: row_no,
                    message: format!("{} fields, header has {}", record.len(), header.len()),
                });
            }
            let mut row = Vec::with_capacity(schema.len());
            for (j, &c) in attr_cols.iter().enumerate() {
                let v: f64 = record[c].parse().map_err(|_| Error::Data {
                    row: row_no,
                    message: format!(
                        "unparseable number '{}' in column '{}'",
                        &record[c],
                        schema.attributes()[j].name
                    ),
                })?;
                schema
                    .validate_value(j, v)
                    .map_err(|message| Error::Data { row: row_no, message })?;
                row.push(v);
            }
            rows.push(row);
            if let (Some(c), Some(l)) = (label_col, labels.as_mut()) {
                l.push(Label::parse(&record[c]).ok_or_else(|| Error::Data {
                    row: row_no,
                    message: format!("label '{}' is not -1/1", &record[c]),
                })?);
            }
            for (col, out) in [(t_col, treatment.as_mut()), (y_col, outcome.as_mut())] {
                if let (Some(c), Some(out)) = (col, out) {
                    out.push(parse_binary(&record[c]).ok_or_else(|| Error::Data {
                        row: row_no,
                        message: format!("'{}' is not binary 0/1", &record[c]),
                    })?);
                }
            }
        }
        Self::new(schema.clone(), rows, labels, treatment, outcome)
    }

    /// CSV text: attributes in schema order, then role columns.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let mut names: Vec<&str> = self.schema.attributes().iter().map(|a| a.name.as_str()).collect();
        names.extend(self.schema.role_columns().into_iter().map(|(_, n)| n));
        out.push_str(&names.join(","));
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|&v| format_number(v)).collect();
            if let Some(l) = &self.labels {
                fields.push(l[i].sign().to_string());
            }
            if let Some(t) = &self.treatment {
                fields.push(t[i].to_string());
            }
            if let Some(y) = &self.outcome {
                fields.push(y[i].to_string());
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Shuffled train/validation/test index sets. The first two sizes are
/// `round(n * ratio)`; the last split takes the remainder.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = ((n as f64) * ratios[0]).round() as usize;
    let b = (((n as f64) * ratios[1]).round() as usize).min(n - a.min(n));
    let a = a.min(n);
    let test = idx.split_off(a + b);
    let valid = idx.split_off(a);
    Ok([idx, valid, test])
}
