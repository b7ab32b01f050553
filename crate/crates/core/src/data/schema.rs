//! Plain-text attribute schemas.
//!
//! One declaration per line:
//!
//! ```text
//! # comment
//! MaritalStatus categorical:3 mutable
//! Age categorical:4 immutable
//! MaxBillAmount positive-real mutable
//! Balance real mutable
//! Default label
//! ```
//!
//! Besides attributes, a line may designate a role column (`label`,
//! `treatment` or `outcome`). Role columns are binary and are never part of
//! the feature vector.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Real,
    PositiveReal,
    Categorical(usize),
}

impl AttributeKind {
    /// Width of the attribute in the encoded feature vector.
    pub fn encoded_width(self) -> usize {
        match self {
            AttributeKind::Real | AttributeKind::PositiveReal => 1,
            AttributeKind::Categorical(card) => card,
        }
    }

    /// Number of decoder outputs needed to parameterize the attribute.
    pub fn head_width(self) -> usize {
        match self {
            AttributeKind::Real | AttributeKind::PositiveReal => 2,
            AttributeKind::Categorical(card) => card,
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, AttributeKind::Categorical(_))
    }

    pub fn token(self) -> String {
        match self {
            AttributeKind::Real => "real".into(),
            AttributeKind::PositiveReal => "positive-real".into(),
            AttributeKind::Categorical(c) => format!("categorical:{c}"),
        }
    }

    fn parse(token: &str) -> std::result::Result<Self, String> {
        match token {
            "real" => Ok(AttributeKind::Real),
            "positive-real" | "positive_real" | "positive" => Ok(AttributeKind::PositiveReal),
            _ => {
                let Some(card) = token.strip_prefix("categorical:") else {
                    return Err(format!("unknown kind '{token}'"));
                };
                let card: usize = card
                    .parse()
                    .map_err(|_| format!("bad categorical cardinality in '{token}'"))?;
                if card < 2 {
                    return Err(format!("categorical cardinality must be at least 2, got {card}"));
                }
                Ok(AttributeKind::Categorical(card))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    pub immutable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Schema {
    attributes: Vec<Attribute>,
    label: Option<String>,
    treatment: Option<String>,
    outcome: Option<String>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let schema = Self {
            attributes,
            ..Self::default()
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_label(mut self, name: impl Into<String>) -> Result<Self> {
        self.label = Some(name.into());
        self.validate()?;
        Ok(self)
    }

    pub fn with_treatment_outcome(
        mut self,
        treatment: impl Into<String>,
        outcome: impl Into<String>,
    ) -> Result<Self> {
        self.treatment = Some(treatment.into());
        self.outcome = Some(outcome.into());
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::InvalidData("no attributes".into()));
        }
        let mut seen = HashSet::new();
        for name in self
            .attributes
            .iter()
            .map(|a| a.name.as_str())
            .chain(self.role_columns().into_iter().map(|(_, n)| n))
        {
            if !seen.insert(name) {
                return Err(Error::InvalidData(format!("duplicate name '{name}'")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses schema text; `source` only labels error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Schema {
            path: source.to_string(),
            line,
            message,
        };
        let mut schema = Schema::default();
        let mut seen = HashSet::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let name = tokens[0].to_string();
            if !seen.insert(name.clone()) {
                return Err(err(line_no, format!("duplicate name '{name}'")));
            }
            match tokens.as_slice() {
                [_, "label"] => schema.label = Some(name),
                [_, "treatment"] => schema.treatment = Some(name),
                [_, "outcome"] => schema.outcome = Some(name),
                [_, kind, flag] => {
                    let kind = AttributeKind::parse(kind).map_err(|m| err(line_no, m))?;
                    let immutable = match *flag {
                        "mutable" => false,
                        "immutable" => true,
                        other => {
                            return Err(err(
                                line_no,
                                format!("expected 'mutable' or 'immutable', got '{other}'"),
                            ))
                        }
                    };
                    schema.attributes.push(Attribute {
                        name,
                        kind,
                        immutable,
                    });
                }
                [_, kind] => {
                    return Err(err(line_no, format!("unknown kind or role '{kind}'")));
                }
                _ => {
                    return Err(err(
                        line_no,
                        "expected '<name> <kind> <mutable|immutable>' or '<name> <role>'".into(),
                    ))
                }
            }
        }
        if schema.attributes.is_empty() {
            return Err(err(0, "no attributes".into()));
        }
        Ok(schema)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.attributes {
            let flag = if a.immutable { "immutable" } else { "mutable" };
            let _ = writeln!(out, "{} {} {}", a.name, a.kind.token(), flag);
        }
        for (role, name) in self.role_columns() {
            let _ = writeln!(out, "{name} {role}");
        }
        out
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn treatment(&self) -> Option<&str> {
        self.treatment.as_deref()
    }

    pub fn outcome(&self) -> Option<&str> {
        self.outcome.as_deref()
    }

    /// `(role, column name)` pairs in a fixed order.
    pub fn role_columns(&self) -> Vec<(&'static str, &str)> {
        [
            ("label", &self.label),
            ("treatment", &self.treatment),
            ("outcome", &self.outcome),
        ]
        .into_iter()
        .filter_map(|(r, n)| n.as_deref().map(|n| (r, n)))
        .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn immutable_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.attributes[i].immutable).collect()
    }

    pub fn mutable_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.attributes[i].immutable).collect()
    }

    /// Also marks the named attributes immutable.
    pub fn with_immutable(&self, names: &[String]) -> Result<Schema> {
        for n in names {
            if self.role_columns().iter().any(|(_, r)| r == n) {
                return Err(Error::contract(format!(
                    "role column '{n}' cannot be declared immutable"
                )));
            }
            if self.index_of(n).is_none() {
                return Err(Error::contract(format!("unknown attribute '{n}'")));
            }
        }
        let mut out = self.clone();
        for a in &mut out.attributes {
            a.immutable |= names.contains(&a.name);
        }
        Ok(out)
    }

    /// Checks a raw value against its attribute declaration.
    pub fn validate_value(&self, attr: usize, raw: f64) -> std::result::Result<(), String> {
        let a = &self.attributes[attr];
        if !raw.is_finite() {
            return Err(format!("non-finite value for '{}'", a.name));
        }
        match a.kind {
            AttributeKind::Categorical(card) => {
                if raw.fract() != 0.0 || raw < 0.0 || raw >= card as f64 {
                    return Err(format!(
                        "category {raw} out of range for '{}' (cardinality {card})",
                        a.name
                    ));
                }
            }
            AttributeKind::PositiveReal if raw < 0.0 => {
                return Err(format!("negative value {raw} for positive-real '{}'", a.name));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn encoded_width(&self) -> usize {
        self.attributes.iter().map(|a| a.kind.encoded_width()).sum()
    }

    /// Column range of each attribute in the encoded vector.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.attributes
            .iter()
            .map(|a| {
                let w = a.kind.encoded_width();
                start += w;
                start - w..start
            })
            .collect()
    }

    /// `(name, kind)` pairs; two schemas are compatible when these agree.
    pub fn signature(&self) -> Vec<(&str, AttributeKind)> {
        self.attributes
            .iter()
            .map(|a| (a.name.as_str(), a.kind))
            .collect()
    }

    pub fn ensure_compatible(&self, other: &Schema) -> Result<()> {
        let (a, b) = (self.signature(), other.signature());
        if a != b {
            let first = a
                .iter()
                .zip(&b)
                .position(|(x, y)| x != y)
                .unwrap_or(a.len().min(b.len()));
            return Err(Error::SchemaMismatch(format!(
                "attribute lists differ at position {first} ({} vs {} attributes)",
                a.len(),
                b.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_credit_style_lines() {
        let s = Schema::parse(
            "MaritalStatus categorical:3 mutable\nAge categorical:4 immutable\n",
            "t",
        )
        .unwrap();
        assert_eq!(s.attributes()[0].kind, AttributeKind::Categorical(3));
        assert!(!s.attributes()[0].immutable);
        assert_eq!(s.attributes()[1].kind, AttributeKind::Categorical(4));
        assert!(s.attributes()[1].immutable);
        assert_eq!(s.encoded_width(), 7);
        assert_eq!(s.blocks(), vec![0..3, 3..7]);
    }

    #[test]
    fn empty_file_has_no_attributes() {
        let e = Schema::parse("# nothing\n\n", "t").unwrap_err();
        assert!(e.to_string().contains("no attributes"), "{e}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dup = Schema::parse("a real mutable\n\nb real mutable\na real mutable\n", "s.txt")
            .unwrap_err();
        assert!(matches!(dup, Error::Schema { line: 4, .. }), "{dup}");

        let kind = Schema::parse("a complex mutable\n", "s.txt").unwrap_err();
        assert!(matches!(kind, Error::Schema { line: 1, .. }));
        assert!(kind.to_string().contains("unknown kind"));

        let card = Schema::parse("a real mutable\nb categorical:1 mutable\n", "s.txt").unwrap_err();
        assert!(matches!(card, Error::Schema { line: 2, .. }));
    }

    #[test]
    fn roles_and_text_round_trip() {
        let text = "x real mutable\nsex categorical:2 immutable\nt treatment\ny outcome\n";
        let s = Schema::parse(text, "t").unwrap();
        assert_eq!(s.treatment(), Some("t"));
        assert_eq!(s.outcome(), Some("y"));
        assert_eq!(s.to_text(), text);
        assert_eq!(Schema::parse(&s.to_text(), "t").unwrap(), s);
    }

    #[test]
    fn immutable_override_rejects_roles() {
        let s = Schema::parse("x real mutable\nt treatment\ny outcome\n", "t").unwrap();
        assert!(matches!(s.with_immutable(&["t".into()]), Err(Error::Contract(_))));
        let s2 = s.with_immutable(&["x".into()]).unwrap();
        assert_eq!(s2.immutable_indices(), vec![0]);
    }

    #[test]
    fn compatibility_checks_names_and_kinds() {
        let a = Schema::parse("x real mutable\n", "a").unwrap();
        let b = Schema::parse("x real immutable\n", "b").unwrap();
        let c = Schema::parse("x positive-real mutable\n", "c").unwrap();
        assert!(a.ensure_compatible(&b).is_ok());
        assert!(a.ensure_compatible(&c).is_err());
    }
}
