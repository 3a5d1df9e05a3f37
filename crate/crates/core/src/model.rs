//! Switched systems `ẋ = f_σ(x)` with linear or polynomial subsystems.
//!
//! Mode indices are zero-based in the Rust API. The JSON documents and every
//! file written by the CLI use one-based mode numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: constant monomial violates the common equilibrium f(0) = 0")]
    EquilibriumViolation { path: String },
    #[error("mode {index} out of range (system has {count} modes)")]
    ModeOutOfRange { index: usize, count: usize },
    #[error("state has dimension {actual}, system expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("weights are not a probability vector: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl ModelError {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        ModelError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// `coefficient · x₁^e₁ ⋯ xₙ^eₙ`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    #[serde(rename = "coeff")]
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(coefficient: f64, exponents: Vec<u32>) -> Self {
        Monomial { coefficient, exponents }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exponents.iter().all(|&e| e == 0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .fold(self.coefficient, |acc, (&e, &xi)| acc * xi.powi(e as i32))
    }
}

/// A polynomial stored as a flat monomial list (like terms are merged on construction).
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    /// Builds a polynomial in `n` variables, merging like terms and dropping zeros.
    pub fn new(n: usize, terms: Vec<Monomial>) -> Self {
        let mut merged: Vec<Monomial> = Vec::new();
        for t in terms {
            debug_assert_eq!(t.exponents.len(), n);
            if t.coefficient == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|m| m.exponents == t.exponents) {
                Some(m) => m.coefficient += t.coefficient,
                None => merged.push(t),
            }
        }
        merged.retain(|m| m.coefficient != 0.0);
        Polynomial { terms: merged }
    }

    pub fn zero() -> Self {
        Polynomial { terms: Vec::new() }
    }

    /// The linear form `Σ_j c_j x_j`.
    pub fn linear(coeffs: &[f64]) -> Self {
        let n = coeffs.len();
        let terms = coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let mut e = vec![0; n];
                e[j] = 1;
                Monomial::new(c, e)
            })
            .collect();
        Polynomial::new(n, terms)
    }

    /// The quadratic form `xᵀ S x` for a square `S`.
    pub fn quadratic_form(s: &Matrix) -> Self {
        let n = s.rows();
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut e = vec![0; n];
                e[i] += 1;
                e[j] += 1;
                terms.push(Monomial::new(s[(i, j)], e));
            }
        }
        Polynomial::new(n, terms)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|m| m.eval(x)).sum()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn has_constant_term(&self) -> bool {
        self.terms.iter().any(Monomial::is_constant)
    }

    /// Term-wise partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Self {
        let n = self.terms.first().map(|t| t.exponents.len()).unwrap_or(0);
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exponents[var] > 0)
            .map(|t| {
                let mut e = t.exponents.clone();
                let k = e[var];
                e[var] -= 1;
                Monomial::new(t.coefficient * k as f64, e)
            })
            .collect();
        Polynomial::new(n, terms)
    }

    pub fn gradient(&self, n: usize) -> Vec<Polynomial> {
        (0..n).map(|v| self.derivative(v)).collect()
    }

    pub fn add(&self, other: &Polynomial, n: usize) -> Self {
        let terms = self.terms.iter().chain(&other.terms).cloned().collect();
        Polynomial::new(n, terms)
    }

    pub fn scale(&self, s: f64, n: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Monomial::new(s * t.coefficient, t.exponents.clone()))
            .collect();
        Polynomial::new(n, terms)
    }

    pub fn mul(&self, other: &Polynomial, n: usize) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let e = a.exponents.iter().zip(&b.exponents).map(|(x, y)| x + y).collect();
                terms.push(Monomial::new(a.coefficient * b.coefficient, e));
            }
        }
        Polynomial::new(n, terms)
    }

    /// `Σ_k a_k · b_k`
    pub fn inner(a: &[Polynomial], b: &[Polynomial], n: usize) -> Self {
        a.iter()
            .zip(b)
            .fold(Polynomial::zero(), |acc, (p, q)| acc.add(&p.mul(q, n), n))
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, t| m.max(t.coefficient.abs()))
    }

    pub(crate) fn validate(&self, n: usize, path: &str) -> Result<(), ModelError> {
        for (k, t) in self.terms.iter().enumerate() {
            let tp = format!("{path}[{k}]");
            if t.exponents.len() != n {
                return Err(ModelError::invalid(
                    format!("{tp}.exponents"),
                    format!("expected {n} exponents, found {}", t.exponents.len()),
                ));
            }
            if !t.coefficient.is_finite() {
                return Err(ModelError::invalid(format!("{tp}.coeff"), "coefficient must be finite"));
            }
        }
        Ok(())
    }
}

/// One subsystem vector field.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorField {
    Linear(Matrix),
    Polynomial(Vec<Polynomial>),
}

impl VectorField {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Linear(a) => a.mul_vec(x),
            VectorField::Polynomial(components) => components.iter().map(|p| p.eval(x)).collect(),
        }
    }

    pub fn as_linear(&self) -> Option<&Matrix> {
        match self {
            VectorField::Linear(a) => Some(a),
            VectorField::Polynomial(_) => None,
        }
    }

    /// Component polynomials (exact for linear fields as well).
    pub fn to_polynomials(&self, n: usize) -> Vec<Polynomial> {
        match self {
            VectorField::Linear(a) => (0..n).map(|i| Polynomial::linear(&a.to_rows()[i])).collect(),
            VectorField::Polynomial(c) => c.clone(),
        }
    }
}

/// `ẋ = f_σ(x)`, σ ∈ {0, …, M-1}, with the origin a common equilibrium.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchedSystem {
    dimension: usize,
    subsystems: Vec<VectorField>,
}

impl SwitchedSystem {
    pub fn new(dimension: usize, subsystems: Vec<VectorField>) -> Result<Self, ModelError> {
        if dimension == 0 {
            return Err(ModelError::invalid("dimension", "must be at least 1"));
        }
        if subsystems.is_empty() {
            return Err(ModelError::invalid("subsystems", "at least one subsystem is required"));
        }
        for (i, f) in subsystems.iter().enumerate() {
            let path = format!("subsystems[{i}]");
            match f {
                VectorField::Linear(a) => {
                    if a.rows() != dimension || a.cols() != dimension {
                        return Err(ModelError::invalid(
                            format!("{path}.A"),
                            format!("expected {dimension}x{dimension}, found {}x{}", a.rows(), a.cols()),
                        ));
                    }
                }
                VectorField::Polynomial(components) => {
                    if components.len() != dimension {
                        return Err(ModelError::invalid(
                            format!("{path}.components"),
                            format!("expected {dimension} components, found {}", components.len()),
                        ));
                    }
                    for (c, p) in components.iter().enumerate() {
                        let cp = format!("{path}.components[{c}]");
                        p.validate(dimension, &cp)?;
                        if let Some(k) = p.terms.iter().position(Monomial::is_constant) {
                            return Err(ModelError::EquilibriumViolation {
                                path: format!("{cp}[{k}]"),
                            });
                        }
                    }
                }
            }
        }
        Ok(SwitchedSystem { dimension, subsystems })
    }

    /// Convenience constructor for a switched linear system.
    pub fn linear(matrices: Vec<Matrix>) -> Result<Self, ModelError> {
        let n = matrices.first().map(Matrix::rows).unwrap_or(0);
        Self::new(n, matrices.into_iter().map(VectorField::Linear).collect())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn mode_count(&self) -> usize {
        self.subsystems.len()
    }

    pub fn subsystems(&self) -> &[VectorField] {
        &self.subsystems
    }

    pub fn is_linear(&self) -> bool {
        self.subsystems.iter().all(|f| f.as_linear().is_some())
    }

    /// The matrices `A_i` when every subsystem is linear.
    pub fn linear_matrices(&self) -> Option<Vec<&Matrix>> {
        self.subsystems.iter().map(VectorField::as_linear).collect()
    }

    fn check(&self, i: usize, x: &[f64]) -> Result<(), ModelError> {
        if i >= self.subsystems.len() {
            return Err(ModelError::ModeOutOfRange {
                index: i,
                count: self.subsystems.len(),
            });
        }
        if x.len() != self.dimension {
            return Err(ModelError::DimensionMismatch {
                expected: self.dimension,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `f_i(x)`
    pub fn eval_field(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check(i, x)?;
        Ok(self.subsystems[i].eval(x))
    }

    /// `f_i(x)` without bounds checks; callers guarantee `i` and `x` are valid.
    pub(crate) fn field(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.subsystems[i].eval(x)
    }

    /// All subsystem fields at `x`.
    pub fn fields(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.subsystems.iter().map(|f| f.eval(x)).collect()
    }

    /// `Σ α_i f_i(x)` for a probability vector given as `(mode, α)` pairs.
    pub fn eval_convex_combination(&self, weights: &[(usize, f64)], x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::InvalidWeights("empty weight list".into()));
        }
        let mut total = 0.0;
        for &(i, a) in weights {
            self.check(i, x)?;
            if !(a >= 0.0) {
                return Err(ModelError::InvalidWeights(format!("negative weight {a} on mode {i}")));
            }
            total += a;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidWeights(format!("weights sum to {total}")));
        }
        let mut out = vec![0.0; self.dimension];
        for &(i, a) in weights {
            for (o, v) in out.iter_mut().zip(self.subsystems[i].eval(x)) {
                *o += a * v;
            }
        }
        Ok(out)
    }

    pub fn to_document(&self) -> SystemDocument {
        SystemDocument {
            dimension: self.dimension,
            subsystems: self
                .subsystems
                .iter()
                .map(|f| match f {
                    VectorField::Linear(a) => SubsystemDocument::Linear { a: a.to_rows() },
                    VectorField::Polynomial(c) => SubsystemDocument::Polynomial { components: c.clone() },
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("system document serializes")
    }
}

/// On-disk system schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDocument {
    pub dimension: usize,
    pub subsystems: Vec<SubsystemDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubsystemDocument {
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    Polynomial {
        components: Vec<Polynomial>,
    },
}

impl SystemDocument {
    pub fn into_system(self) -> Result<SwitchedSystem, ModelError> {
        let n = self.dimension;
        let mut fields = Vec::with_capacity(self.subsystems.len());
        for (i, s) in self.subsystems.into_iter().enumerate() {
            fields.push(match s {
                SubsystemDocument::Linear { a } => VectorField::Linear(
                    Matrix::from_rows(&a)
                        .map_err(|e| ModelError::invalid(format!("subsystems[{i}].A"), e.to_string()))?,
                ),
                SubsystemDocument::Polynomial { components } => {
                    // validate raw terms before merging so paths point at the input
                    for (c, p) in components.iter().enumerate() {
                        let path = format!("subsystems[{i}].components[{c}]");
                        p.validate(n, &path)?;
                        if let Some(k) = p.terms.iter().position(|t| t.is_constant() && t.coefficient != 0.0) {
                            return Err(ModelError::EquilibriumViolation {
                                path: format!("{path}[{k}]"),
                            });
                        }
                    }
                    VectorField::Polynomial(components.into_iter().map(|p| Polynomial::new(n, p.terms)).collect())
                }
            });
        }
        SwitchedSystem::new(n, fields)
    }
}

/// Parses and validates a system document.
pub fn load_system(document: &str) -> Result<SwitchedSystem, ModelError> {
    let doc: SystemDocument = serde_json::from_str(document).map_err(ModelError::from_json)?;
    doc.into_system()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE1: &str = r#"{
        "dimension": 2,
        "subsystems": [
            {"kind": "linear", "A": [[-3, -1], [12, 2]]},
            {"kind": "linear", "A": [[-3, 1], [-12, 2]]}
        ]
    }"#;

    const NONLINEAR: &str = r#"{
        "dimension": 2,
        "subsystems": [
            {"kind": "polynomial", "components": [
                [{"coeff": -1, "exponents": [1, 0]}, {"coeff": -1, "exponents": [0, 1]}],
                [{"coeff": 1, "exponents": [3, 0]}, {"coeff": 0.5, "exponents": [0, 1]}]
            ]},
            {"kind": "polynomial", "components": [
                [{"coeff": 1, "exponents": [1, 0]}, {"coeff": -1, "exponents": [0, 1]}],
                [{"coeff": 1, "exponents": [3, 0]}, {"coeff": -1.5, "exponents": [0, 1]}]
            ]}
        ]
    }"#;

    #[test]
    fn eval_field_examples() {
        let ex1 = load_system(EXAMPLE1).unwrap();
        assert_eq!((ex1.dimension(), ex1.mode_count()), (2, 2));
        // [-3·0.5 + 2, 12·0.5 - 4]
        assert_eq!(ex1.eval_field(0, &[0.5, -2.0]).unwrap(), vec![0.5, 2.0]);

        let nl = load_system(NONLINEAR).unwrap();
        assert_eq!(nl.mode_count(), 2);
        assert!(!nl.is_linear());
        assert_eq!(nl.eval_field(0, &[1.0, 0.0]).unwrap(), vec![-1.0, 1.0]);

        for sys in [&ex1, &nl] {
            for i in 0..sys.mode_count() {
                assert_eq!(sys.eval_field(i, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
            }
        }
    }

    #[test]
    fn eval_field_errors() {
        let ex1 = load_system(EXAMPLE1).unwrap();
        assert!(matches!(
            ex1.eval_field(2, &[0.0, 0.0]),
            Err(ModelError::ModeOutOfRange { .. })
        ));
        assert!(matches!(
            ex1.eval_field(0, &[0.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn convex_combination_examples() {
        let ex1 = load_system(EXAMPLE1).unwrap();
        let v = ex1.eval_convex_combination(&[(0, 0.5), (1, 0.5)], &[0.0, 1.0]).unwrap();
        assert_eq!(v, vec![0.0, 2.0]);
        let x = [0.3, -0.7];
        assert_eq!(
            ex1.eval_convex_combination(&[(1, 1.0)], &x).unwrap(),
            ex1.eval_field(1, &x).unwrap()
        );

        // Example 2 uses the same matrices; on x₂ = 0 the average drifts as ẋ₁ = -3x₁
        let v = ex1.eval_convex_combination(&[(0, 0.5), (1, 0.5)], &[1.0, 0.0]).unwrap();
        assert_eq!(v, vec![-3.0, 0.0]);

        assert!(matches!(
            ex1.eval_convex_combination(&[(0, 0.7), (1, 0.7)], &x),
            Err(ModelError::InvalidWeights(_))
        ));
        assert!(matches!(
            ex1.eval_convex_combination(&[(0, -0.5), (1, 1.5)], &x),
            Err(ModelError::InvalidWeights(_))
        ));
    }

    #[test]
    fn constant_monomial_is_rejected() {
        let doc = r#"{"dimension": 1, "subsystems": [
            {"kind": "polynomial", "components": [[{"coeff": 1, "exponents": [1]}, {"coeff": 2, "exponents": [0]}]]}
        ]}"#;
        match load_system(doc) {
            Err(ModelError::EquilibriumViolation { path }) => {
                assert_eq!(path, "subsystems[0].components[0][1]")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_location() {
        match load_system("{\"dimension\": 2,\n \"subsystems\": [ {\"kind\": \"cubic\"} ]}") {
            Err(ModelError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_shape =
            r#"{"dimension": 2, "subsystems": [{"kind": "linear", "A": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}]}"#;
        match load_system(bad_shape) {
            Err(ModelError::Invalid { path, .. }) => assert_eq!(path, "subsystems[0].A"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn polynomial_calculus() {
        // V = x₁⁴ + 2x₂²
        let v = Polynomial::new(2, vec![Monomial::new(1.0, vec![4, 0]), Monomial::new(2.0, vec![0, 2])]);
        let g = v.gradient(2);
        assert_eq!(g[0].eval(&[1.0, 1.0]), 4.0);
        assert_eq!(g[1].eval(&[1.0, 1.0]), 4.0);
        let q = Polynomial::quadratic_form(&Matrix::new(&[[2.0, 0.0], [0.0, 1.0]]));
        assert_eq!(q.eval(&[1.0, 1.0]), 3.0);
        assert_eq!(v.mul(&v, 2).eval(&[1.0, 1.0]), 9.0);
    }
}
