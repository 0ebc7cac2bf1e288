//! Generalized Lotka-Volterra model: `dx/dt = diag(x) (b + A x)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by model construction, evaluation and (de)serialization.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid model: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// A single broken model invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Field the violation refers to (`b`, `A`, `x0`, `labels`).
    pub field: &'static str,
    /// 1-based entry index, when the violation is tied to one entry.
    pub index: Option<(usize, Option<usize>)>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some((i, Some(j))) => write!(f, "{}[{},{}] {}", self.field, i, j, self.reason),
            Some((i, None)) => write!(f, "{}[{}] {}", self.field, i, self.reason),
            None => write!(f, "{} {}", self.field, self.reason),
        }
    }
}

/// GLV model with `S` species. The interaction matrix is stored dense, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GlvModel {
    growth: Vec<f64>,
    interaction: Vec<f64>,
    initial: Vec<f64>,
    labels: Option<Vec<String>>,
}

/// On-disk layout of a model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub b: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl GlvModel {
    /// Builds a model and checks every invariant.
    pub fn new(
        b: Vec<f64>,
        a: Vec<Vec<f64>>,
        x0: Vec<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self, ModelError> {
        let doc = ModelDocument { b, a, x0, labels };
        let violations = validate_document(&doc);
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        Ok(Self::from_document_unchecked(doc))
    }

    fn from_document_unchecked(doc: ModelDocument) -> Self {
        Self {
            growth: doc.b,
            interaction: doc.a.into_iter().flatten().collect(),
            initial: doc.x0,
            labels: doc.labels,
        }
    }

    /// Number of species `S`.
    pub fn dim(&self) -> usize {
        self.growth.len()
    }

    pub fn growth(&self) -> &[f64] {
        &self.growth
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Interaction coefficient `a_ij` (0-based indices).
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.interaction[i * self.dim() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let s = self.dim();
        &self.interaction[i * s..(i + 1) * s]
    }

    pub fn explicit_labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Label of species `i` (0-based); defaults to `x<i+1>`.
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => format!("x{}", i + 1),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| self.label(i)).collect()
    }

    /// Returns a copy with `a_ij` forced to exactly zero (0-based indices).
    pub fn with_zeroed(&self, i: usize, j: usize) -> Result<Self, ModelError> {
        let s = self.dim();
        if i >= s || j >= s {
            return Err(ModelError::Dimension(format!(
                "entry ({}, {}) outside a {s}x{s} matrix",
                i + 1,
                j + 1
            )));
        }
        let mut m = self.clone();
        m.interaction[i * s + j] = 0.0;
        Ok(m)
    }

    /// Returns a copy with a different initial state.
    pub fn with_initial(&self, x0: Vec<f64>) -> Result<Self, ModelError> {
        let mut doc = self.to_document();
        doc.x0 = x0;
        let violations = validate_document(&doc);
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        Ok(Self::from_document_unchecked(doc))
    }

    /// Relabels species so that new species `k` is old species `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, ModelError> {
        let s = self.dim();
        let mut seen = vec![false; s];
        if order.len() != s || order.iter().any(|&i| i >= s || std::mem::replace(&mut seen[i], true)) {
            return Err(ModelError::Dimension(format!("{order:?} is not a permutation of {s} species")));
        }
        Ok(Self {
            growth: order.iter().map(|&i| self.growth[i]).collect(),
            interaction: order.iter().flat_map(|&i| order.iter().map(move |&j| (i, j))).map(|(i, j)| self.a(i, j)).collect(),
            initial: order.iter().map(|&i| self.initial[i]).collect(),
            labels: self.labels.as_ref().map(|l| order.iter().map(|&i| l[i].clone()).collect()),
        })
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            b: self.growth.clone(),
            a: (0..self.dim()).map(|i| self.row(i).to_vec()).collect(),
            x0: self.initial.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Per-capita growth `b_i + sum_j a_ij x_j` of species `i`.
    #[inline]
    pub fn per_capita(&self, i: usize, x: &[f64]) -> f64 {
        self.growth[i] + self.row(i).iter().zip(x).map(|(a, x)| a * x).sum::<f64>()
    }

    /// Writes `x_i (b_i + sum_j a_ij x_j)` into `out` without dimension checks.
    pub fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i] * self.per_capita(i, x);
        }
    }

    /// Evaluates the right-hand side at `x`.
    pub fn rhs(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::Dimension(format!(
                "state has length {} but the model has {} species",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Dimension("state contains non-finite values".into()));
        }
        let mut out = vec![0.0; x.len()];
        self.rhs_into(x, &mut out);
        Ok(out)
    }
}

/// Lists every invariant violation of a model document. Empty means valid.
pub fn validate_document(doc: &ModelDocument) -> Vec<Violation> {
    let mut v = Vec::new();
    let s = doc.b.len();
    if s == 0 {
        v.push(Violation {
            field: "b",
            index: None,
            reason: "must contain at least one species".into(),
        });
    }
    if doc.x0.len() != s {
        v.push(Violation {
            field: "x0",
            index: None,
            reason: format!("dimension mismatch: length {} but b has length {s}", doc.x0.len()),
        });
    }
    if doc.a.len() != s {
        v.push(Violation {
            field: "A",
            index: None,
            reason: format!("dimension mismatch: {} rows but b has length {s}", doc.a.len()),
        });
    }
    for (i, row) in doc.a.iter().enumerate() {
        if row.len() != s {
            v.push(Violation {
                field: "A",
                index: Some((i + 1, None)),
                reason: format!("dimension mismatch: row has {} entries, expected {s}", row.len()),
            });
        }
        for (j, a) in row.iter().enumerate() {
            if !a.is_finite() {
                v.push(Violation {
                    field: "A",
                    index: Some((i + 1, Some(j + 1))),
                    reason: "not finite".into(),
                });
            }
        }
    }
    for (i, b) in doc.b.iter().enumerate() {
        if !b.is_finite() {
            v.push(Violation {
                field: "b",
                index: Some((i + 1, None)),
                reason: "not finite".into(),
            });
        }
    }
    for (i, x) in doc.x0.iter().enumerate() {
        if !x.is_finite() {
            v.push(Violation {
                field: "x0",
                index: Some((i + 1, None)),
                reason: "not finite".into(),
            });
        } else if *x <= 0.0 {
            v.push(Violation {
                field: "x0",
                index: Some((i + 1, None)),
                reason: "not positive".into(),
            });
        }
    }
    if let Some(labels) = &doc.labels {
        if labels.len() != s {
            v.push(Violation {
                field: "labels",
                index: None,
                reason: format!("dimension mismatch: {} labels for {s} species", labels.len()),
            });
        }
    }
    v
}

/// Validates a model; an empty list means every invariant holds.
pub fn validate(model: &GlvModel) -> Vec<Violation> {
    validate_document(&model.to_document())
}

/// Parses and validates a JSON model document.
pub fn load_model(bytes: &[u8]) -> Result<GlvModel, ModelError> {
    let doc: ModelDocument = serde_json::from_slice(bytes).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let violations = validate_document(&doc);
    if !violations.is_empty() {
        return Err(ModelError::Invalid(violations));
    }
    Ok(GlvModel::from_document_unchecked(doc))
}

/// Serializes a model as pretty-printed JSON.
pub fn save_model(model: &GlvModel) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&model.to_document()).expect("model serializes");
    out.push(b'\n');
    out
}
