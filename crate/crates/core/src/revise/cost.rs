//! Distances between an original row and a candidate, in encoded space.
//!
//! Categorical blocks of the candidate may hold probabilities. For `l1-mad`
//! a categorical attribute costs `1 − p(original class)`, which is the 0/1
//! mismatch once the candidate is one-hot. Immutable attributes never cost
//! anything.

use std::fmt;
use std::str::FromStr;

use crate::data::{AttributeKind, Encoder};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum CostKind {
    /// Numeric `|Δ| / MAD` plus categorical mismatch mass.
    #[default]
    L1Mad,
    L1,
    L2Squared,
}

impl CostKind {
    pub fn name(self) -> &'static str {
        match self {
            CostKind::L1Mad => "l1-mad",
            CostKind::L1 => "l1",
            CostKind::L2Squared => "l2-squared",
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1-mad" | "l1_mad" => Ok(CostKind::L1Mad),
            "l1" => Ok(CostKind::L1),
            "l2-squared" | "l2_squared" | "l2sq" => Ok(CostKind::L2Squared),
            other => Err(Error::config(format!(
                "unknown cost kind '{other}' (expected l1-mad, l1 or l2-squared)"
            ))),
        }
    }
}

/// Per-column weights: `numeric[j]` multiplies `|Δ_j|` (or `Δ_j²`) and
/// `categorical[j]` multiplies `x*_j − x_j`.
struct Weights {
    numeric: Vec<f64>,
    categorical: Vec<f64>,
}

fn weights(x_star: &[f64], encoder: &Encoder, kind: CostKind) -> Weights {
    let schema = encoder.schema();
    let width = encoder.width();
    let mut numeric = vec![0.0; width];
    let mut categorical = vec![0.0; width];
    for (j, block) in schema.blocks().into_iter().enumerate() {
        let attr = &schema.attributes()[j];
        if attr.immutable {
            continue;
        }
        match (kind, attr.kind) {
            (CostKind::L1Mad, AttributeKind::Categorical(_)) => {
                for c in block {
                    categorical[c] = x_star[c];
                }
            }
            (CostKind::L1Mad, _) => {
                let s = encoder.column_stats(j).expect("numeric stats");
                numeric[block.start] = 1.0 / s.mad_floored();
            }
            _ => block.for_each(|c| numeric[c] = 1.0),
        }
    }
    Weights { numeric, categorical }
}

/// Cost between encoded rows `x_star` and `x`.
pub fn cost(x_star: &[f64], x: &[f64], encoder: &Encoder, kind: CostKind) -> Result<f64> {
    if x_star.len() != encoder.width() || x.len() != encoder.width() {
        return Err(Error::shape(
            "cost",
            format!("rows of width {} and {} for encoded width {}", x_star.len(), x.len(), encoder.width()),
        ));
    }
    let w = weights(x_star, encoder, kind);
    let mut total = 0.0;
    for c in 0..x.len() {
        let d = x[c] - x_star[c];
        total += match kind {
            CostKind::L2Squared => w.numeric[c] * d * d,
            _ => w.numeric[c] * d.abs(),
        };
        total -= w.categorical[c] * d;
    }
    Ok(total.max(0.0))
}

/// Records the cost of the candidate `x` (`1 x width`) against the fixed
/// encoded row `x_star`.
pub fn cost_on(tape: &mut Tape, x_star: &[f64], x: Var, encoder: &Encoder, kind: CostKind) -> Var {
    let w = weights(x_star, encoder, kind);
    let xs = tape.constant(Tensor::row(x_star));
    let d = tape.sub(x, xs);
    let spread = match kind {
        CostKind::L2Squared => tape.square(d),
        _ => tape.abs(d),
    };
    let wn = tape.constant(Tensor::row(&w.numeric));
    let weighted = tape.mul(spread, wn);
    let numeric = tape.sum(weighted);
    if w.categorical.iter().all(|&c| c == 0.0) {
        return numeric;
    }
    let wc = tape.constant(Tensor::row(&w.categorical));
    let mass = tape.mul(d, wc);
    let mass = tape.sum(mass);
    tape.sub(numeric, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Attribute, ColumnStats, Schema};

    fn encoder() -> Encoder {
        let schema = Schema::new(vec![
            Attribute {
                name: "a".into(),
                kind: AttributeKind::Real,
                immutable: false,
            },
            Attribute {
                name: "c".into(),
                kind: AttributeKind::Categorical(3),
                immutable: false,
            },
            Attribute {
                name: "i".into(),
                kind: AttributeKind::Real,
                immutable: true,
            },
        ])
        .unwrap();
        let s = |mad| {
            Some(ColumnStats {
                mean: 0.0,
                std: 1.0,
                mad,
            })
        };
        Encoder::from_parts(schema, vec![s(2.0), None, s(1.0)]).unwrap()
    }

    #[test]
    fn identical_rows_cost_nothing() {
        let enc = encoder();
        let x = [0.3, 0.0, 1.0, 0.0, -2.0];
        for kind in [CostKind::L1Mad, CostKind::L1, CostKind::L2Squared] {
            assert_eq!(cost(&x, &x, &enc, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn mad_scaled_difference() {
        let enc = encoder();
        let xs = [0.0, 1.0, 0.0, 0.0, 0.0];
        let x = [1.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(cost(&xs, &x, &enc, CostKind::L1Mad).unwrap(), 0.5);
    }

    #[test]
    fn categorical_terms() {
        let enc = encoder();
        let xs = [0.0, 1.0, 0.0, 0.0, 0.0];
        let soft = [0.0, 0.7, 0.2, 0.1, 5.0];
        assert!((cost(&xs, &soft, &enc, CostKind::L1Mad).unwrap() - 0.3).abs() < 1e-15);
        let flipped = [0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(cost(&xs, &flipped, &enc, CostKind::L1Mad).unwrap(), 1.0);
        assert_eq!(cost(&xs, &flipped, &enc, CostKind::L1).unwrap(), 2.0);
        assert_eq!(cost(&xs, &flipped, &enc, CostKind::L2Squared).unwrap(), 2.0);
    }

    #[test]
    fn tape_matches_value() {
        let enc = encoder();
        let xs = [0.5, 0.0, 1.0, 0.0, 1.0];
        let x = [-0.25, 0.1, 0.6, 0.3, 7.0];
        for kind in [CostKind::L1Mad, CostKind::L1, CostKind::L2Squared] {
            let mut tape = Tape::new();
            let xv = tape.constant(Tensor::row(&x));
            let c = cost_on(&mut tape, &xs, xv, &enc, kind);
            let direct = cost(&xs, &x, &enc, kind).unwrap();
            assert!((tape.value(c).item() - direct).abs() < 1e-14, "{kind}");
        }
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("l2-squared".parse::<CostKind>().unwrap(), CostKind::L2Squared);
        assert!("manhattan".parse::<CostKind>().is_err());
    }
}
