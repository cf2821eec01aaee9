//! Assumption expressions over named condition variables.
//!
//! The grammar is a conjunction of atoms joined by `&&`:
//! `Nom`, `!Nom`, `BL >= 30`, `CW < 15`. The literal `NA` stands for
//! "no assumption" and is represented outside this type.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CondValue {
    Bool(bool),
    Num(f64),
}

impl fmt::Display for CondValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CondValue::Bool(b) => write!(f, "{b}"),
            CondValue::Num(n) => write!(f, "{n}"),
        }
    }
}

/// Named condition variables at one instant (battery level, crosswind, ...).
pub type ConditionSnapshot = BTreeMap<String, CondValue>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("cannot parse assumption {text:?}: {reason}")]
    Parse { text: String, reason: String },
    #[error("condition variable {name:?} is not in the snapshot")]
    Missing { name: String },
    #[error("condition variable {name:?} has the wrong type for {atom}")]
    Type { name: String, atom: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Flag { name: String, negated: bool },
    Compare { name: String, op: CmpOp, value: f64 },
}

impl Atom {
    pub fn variable(&self) -> &str {
        match self {
            Atom::Flag { name, .. } | Atom::Compare { name, .. } => name,
        }
    }

    pub fn eval(&self, conditions: &ConditionSnapshot) -> Result<bool, ExprError> {
        let name = self.variable();
        let value = conditions.get(name).ok_or_else(|| ExprError::Missing {
            name: name.to_string(),
        })?;
        match (self, value) {
            (Atom::Flag { negated, .. }, CondValue::Bool(b)) => Ok(*b != *negated),
            (Atom::Compare { op, value: rhs, .. }, CondValue::Num(n)) => Ok(op.apply(*n, *rhs)),
            _ => Err(ExprError::Type {
                name: name.to_string(),
                atom: self.to_string(),
            }),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Flag { name, negated } => write!(f, "{}{name}", if *negated { "!" } else { "" }),
            Atom::Compare { name, op, value } => write!(f, "{name} {} {value}", op.symbol()),
        }
    }
}

/// Conjunction of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CondExpr {
    atoms: Vec<Atom>,
}

impl CondExpr {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.atoms.iter().map(Atom::variable)
    }

    pub fn eval(&self, conditions: &ConditionSnapshot) -> Result<bool, ExprError> {
        // evaluate every atom so missing variables are reported even after a false atom
        let mut all = true;
        for atom in &self.atoms {
            all &= atom.eval(conditions)?;
        }
        Ok(all)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

impl FromStr for CondExpr {
    type Err = ExprError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| ExprError::Parse {
            text: text.to_string(),
            reason,
        };
        let mut atoms = Vec::new();
        for raw in text.split("&&") {
            let part = raw.trim();
            if part.is_empty() {
                return Err(err("empty conjunct".into()));
            }
            let ops = [
                ("<=", CmpOp::Le),
                (">=", CmpOp::Ge),
                ("==", CmpOp::Eq),
                ("!=", CmpOp::Ne),
                ("<", CmpOp::Lt),
                (">", CmpOp::Gt),
            ];
            let split = ops
                .iter()
                .find_map(|(sym, op)| part.find(sym).map(|at| (at, sym.len(), *op)));
            let atom = match split {
                Some((at, len, op)) => {
                    let name = part[..at].trim();
                    let rhs = part[at + len..].trim();
                    if !is_ident(name) {
                        return Err(err(format!("bad variable name {name:?}")));
                    }
                    let value: f64 = rhs
                        .parse()
                        .map_err(|_| err(format!("bad number {rhs:?}")))?;
                    if !value.is_finite() {
                        return Err(err(format!("non-finite number {rhs:?}")));
                    }
                    Atom::Compare {
                        name: name.to_string(),
                        op,
                        value,
                    }
                }
                None => {
                    let (negated, name) = match part.strip_prefix('!') {
                        Some(rest) => (true, rest.trim()),
                        None => (false, part),
                    };
                    if !is_ident(name) || name == "NA" {
                        return Err(err(format!("bad flag {name:?}")));
                    }
                    Atom::Flag {
                        name: name.to_string(),
                        negated,
                    }
                }
            };
            atoms.push(atom);
        }
        Ok(Self { atoms })
    }
}

impl fmt::Display for CondExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, atom) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(" && ")?;
            }
            write!(f, "{atom}")?;
        }
        Ok(())
    }
}

/// One side of a constraint-assumption pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Assumption {
    NotApplicable,
    Holds(CondExpr),
}

impl Assumption {
    pub fn eval(&self, conditions: &ConditionSnapshot) -> Result<bool, ExprError> {
        match self {
            Assumption::NotApplicable => Ok(true),
            Assumption::Holds(expr) => expr.eval(conditions),
        }
    }

    pub fn is_na(&self) -> bool {
        matches!(self, Assumption::NotApplicable)
    }
}

impl FromStr for Assumption {
    type Err = ExprError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        if text.trim() == "NA" {
            Ok(Assumption::NotApplicable)
        } else {
            text.parse().map(Assumption::Holds)
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assumption::NotApplicable => f.write_str("NA"),
            Assumption::Holds(expr) => write!(f, "{expr}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot() -> ConditionSnapshot {
        let mut c = ConditionSnapshot::new();
        c.insert("BL".into(), CondValue::Num(60.0));
        c.insert("Nom".into(), CondValue::Bool(true));
        c
    }

    #[test]
    fn parse_and_eval() {
        let e: CondExpr = "BL >= 30 && Nom".parse().unwrap();
        assert!(e.eval(&snapshot()).unwrap());
        let e: CondExpr = "!Nom".parse().unwrap();
        assert!(!e.eval(&snapshot()).unwrap());
        assert_eq!(e.to_string(), "!Nom");
    }

    #[test]
    fn missing_and_mistyped_variables() {
        let e: CondExpr = "CW < 15".parse().unwrap();
        assert_eq!(
            e.eval(&snapshot()),
            Err(ExprError::Missing { name: "CW".into() })
        );
        let e: CondExpr = "Nom > 1".parse().unwrap();
        assert!(matches!(e.eval(&snapshot()), Err(ExprError::Type { .. })));
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "&&", "BL >= x", "1abc", "BL >= inf", "NA"] {
            assert!(bad.parse::<CondExpr>().is_err(), "{bad}");
        }
        assert_eq!("NA".parse::<Assumption>().unwrap(), Assumption::NotApplicable);
    }
}
