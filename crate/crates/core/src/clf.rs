//! Piecewise smooth control-Lyapunov functions.
//!
//! Five concrete families are supported: smooth quadratic, smooth polynomial,
//! piecewise quadratic on regions `{x : xᵀH_jx > xᵀH_kx ∀k≠j}`, and the
//! pointwise minimum / maximum of quadratics. Every family exposes the same
//! queries: the value `V(x)`, the active piece set `J(x)`, per-piece gradients,
//! and one-sided directional derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, norm_sq, LinalgError, Matrix};
use crate::model::{ModelError, Monomial, Polynomial};

pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 1e-9;
/// Relative gap allowed between adjacent piece values before `value` reports a discontinuity.
pub const DEFAULT_CONTINUITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClfError {
    #[error("state has dimension {actual}, function expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("piece {piece} is not active at {x:?}")]
    PieceInactive { piece: usize, x: Vec<f64> },
    #[error("pieces {a} and {b} disagree by {gap:e} at {x:?}")]
    Discontinuity { a: usize, b: usize, gap: f64, x: Vec<f64> },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ClfError {
    ClfError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClfKind {
    SmoothQuadratic {
        p: Matrix,
    },
    SmoothPolynomial {
        poly: Polynomial,
        gradient: Vec<Polynomial>,
    },
    PiecewiseQuadratic {
        pieces: Vec<Matrix>,
        regions: Vec<Matrix>,
    },
    PointwiseMin {
        pieces: Vec<Matrix>,
    },
    PointwiseMax {
        pieces: Vec<Matrix>,
    },
}

/// A piecewise smooth candidate control-Lyapunov function.
#[derive(Clone, Debug, PartialEq)]
pub struct Pwsclf {
    dimension: usize,
    kind: ClfKind,
    boundary_tolerance: f64,
    continuity_tolerance: f64,
}

fn check_square_symmetric(m: &Matrix, n: usize, path: &str) -> Result<(), ClfError> {
    if m.rows() != n || m.cols() != n {
        return Err(invalid(
            path,
            format!("expected {n}x{n}, found {}x{}", m.rows(), m.cols()),
        ));
    }
    m.ensure_symmetric().map_err(|e| invalid(path, e.to_string()))?;
    Ok(())
}

fn check_pieces(pieces: &[Matrix], name: &str) -> Result<usize, ClfError> {
    let n = pieces
        .first()
        .map(Matrix::rows)
        .ok_or_else(|| invalid(name, "at least one matrix is required"))?;
    for (j, p) in pieces.iter().enumerate() {
        check_square_symmetric(p, n, &format!("{name}[{j}]"))?;
    }
    Ok(n)
}

impl Pwsclf {
    fn with_kind(dimension: usize, kind: ClfKind) -> Self {
        Pwsclf {
            dimension,
            kind,
            boundary_tolerance: DEFAULT_BOUNDARY_TOLERANCE,
            continuity_tolerance: DEFAULT_CONTINUITY_TOLERANCE,
        }
    }

    pub fn smooth_quadratic(p: Matrix) -> Result<Self, ClfError> {
        let n = check_pieces(std::slice::from_ref(&p), "P")?;
        Ok(Self::with_kind(n, ClfKind::SmoothQuadratic { p }))
    }

    /// Smooth polynomial in `n` variables; the gradient is derived term by term.
    pub fn smooth_polynomial(n: usize, poly: Polynomial) -> Result<Self, ClfError> {
        poly.validate(n, "poly")?;
        if poly.has_constant_term() {
            return Err(invalid("poly", "constant term makes V(0) nonzero"));
        }
        let poly = Polynomial::new(n, poly.terms);
        let gradient = poly.gradient(n);
        Ok(Self::with_kind(n, ClfKind::SmoothPolynomial { poly, gradient }))
    }

    /// Smooth polynomial with a caller-supplied gradient, checked against the symbolic one.
    pub fn smooth_polynomial_with_gradient(
        n: usize,
        poly: Polynomial,
        gradient: Vec<Polynomial>,
    ) -> Result<Self, ClfError> {
        let v = Self::smooth_polynomial(n, poly)?;
        let derived = match &v.kind {
            ClfKind::SmoothPolynomial { gradient, .. } => gradient.clone(),
            _ => unreachable!(),
        };
        if gradient.len() != n {
            return Err(invalid("gradient", format!("expected {n} components")));
        }
        for (k, (g, d)) in gradient.iter().zip(&derived).enumerate() {
            let g = Polynomial::new(n, g.terms.clone());
            let diff = g.add(&d.scale(-1.0, n), n);
            if diff.max_abs_coefficient() > 1e-12 * (1.0 + d.max_abs_coefficient()) {
                return Err(invalid(
                    format!("gradient[{k}]"),
                    "does not match the partial derivative of poly",
                ));
            }
        }
        Ok(v)
    }

    pub fn piecewise_quadratic(pieces: Vec<Matrix>, regions: Vec<Matrix>) -> Result<Self, ClfError> {
        let n = check_pieces(&pieces, "P")?;
        if regions.len() != pieces.len() {
            return Err(invalid(
                "H",
                format!("expected {} region matrices, found {}", pieces.len(), regions.len()),
            ));
        }
        for (j, h) in regions.iter().enumerate() {
            check_square_symmetric(h, n, &format!("H[{j}]"))?;
        }
        Ok(Self::with_kind(n, ClfKind::PiecewiseQuadratic { pieces, regions }))
    }

    pub fn pointwise_min(pieces: Vec<Matrix>) -> Result<Self, ClfError> {
        let n = check_pieces(&pieces, "P")?;
        Ok(Self::with_kind(n, ClfKind::PointwiseMin { pieces }))
    }

    pub fn pointwise_max(pieces: Vec<Matrix>) -> Result<Self, ClfError> {
        let n = check_pieces(&pieces, "P")?;
        Ok(Self::with_kind(n, ClfKind::PointwiseMax { pieces }))
    }

    pub fn with_boundary_tolerance(mut self, tol: f64) -> Result<Self, ClfError> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(invalid("boundary_tolerance", "must be a positive finite number"));
        }
        self.boundary_tolerance = tol;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> &ClfKind {
        &self.kind
    }

    pub fn boundary_tolerance(&self) -> f64 {
        self.boundary_tolerance
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ClfKind::SmoothQuadratic { .. } => "smooth_quadratic",
            ClfKind::SmoothPolynomial { .. } => "smooth_polynomial",
            ClfKind::PiecewiseQuadratic { .. } => "piecewise_quadratic",
            ClfKind::PointwiseMin { .. } => "pointwise_min",
            ClfKind::PointwiseMax { .. } => "pointwise_max",
        }
    }

    pub fn piece_count(&self) -> usize {
        match &self.kind {
            ClfKind::SmoothQuadratic { .. } | ClfKind::SmoothPolynomial { .. } => 1,
            ClfKind::PiecewiseQuadratic { pieces, .. }
            | ClfKind::PointwiseMin { pieces }
            | ClfKind::PointwiseMax { pieces } => pieces.len(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(
            self.kind,
            ClfKind::SmoothQuadratic { .. } | ClfKind::SmoothPolynomial { .. }
        )
    }

    /// True when every piece is a quadratic form (degree-2 homogeneous).
    pub fn is_quadratic(&self) -> bool {
        !matches!(self.kind, ClfKind::SmoothPolynomial { .. })
    }

    /// Quadratic piece matrix `P_j`, if the family is quadratic.
    pub fn piece_matrix(&self, j: usize) -> Option<&Matrix> {
        match &self.kind {
            ClfKind::SmoothQuadratic { p } if j == 0 => Some(p),
            ClfKind::PiecewiseQuadratic { pieces, .. }
            | ClfKind::PointwiseMin { pieces }
            | ClfKind::PointwiseMax { pieces } => pieces.get(j),
            _ => None,
        }
    }

    /// Matrix `R_j` whose quadratic form selects piece `j` (largest `xᵀR_jx` wins).
    ///
    /// `H_j` for piecewise quadratics, `-P_j` for minima, `P_j` for maxima.
    pub fn region_matrix(&self, j: usize) -> Option<Matrix> {
        match &self.kind {
            ClfKind::PiecewiseQuadratic { regions, .. } => regions.get(j).cloned(),
            ClfKind::PointwiseMin { pieces } => pieces.get(j).map(|p| p.scale(-1.0)),
            ClfKind::PointwiseMax { pieces } => pieces.get(j).cloned(),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ClfError> {
        if x.len() != self.dimension {
            return Err(ClfError::DimensionMismatch {
                expected: self.dimension,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Region-function values, one per piece. Smooth kinds return `[0]`.
    pub fn region_scores(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ClfKind::SmoothQuadratic { .. } | ClfKind::SmoothPolynomial { .. } => vec![0.0],
            ClfKind::PiecewiseQuadratic { regions, .. } => regions.iter().map(|h| h.quad_form(x)).collect(),
            ClfKind::PointwiseMin { pieces } => pieces.iter().map(|p| -p.quad_form(x)).collect(),
            ClfKind::PointwiseMax { pieces } => pieces.iter().map(|p| p.quad_form(x)).collect(),
        }
    }

    /// Membership slack for `J(x)`.
    pub fn boundary_slack(&self, x: &[f64]) -> f64 {
        self.boundary_tolerance * (1.0 + norm_sq(x))
    }

    /// `J(x)`: pieces whose closure contains `x` (all pieces at the origin).
    pub fn active_pieces(&self, x: &[f64]) -> Vec<usize> {
        let m = self.piece_count();
        if m == 1 {
            return vec![0];
        }
        if x.iter().all(|&v| v == 0.0) {
            return (0..m).collect();
        }
        let scores = self.region_scores(x);
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = self.boundary_slack(x);
        (0..m).filter(|&j| scores[j] >= best - slack).collect()
    }

    /// The piece containing `x` in its interior, if `J(x)` is a singleton.
    pub fn interior_piece(&self, x: &[f64]) -> Option<usize> {
        match self.active_pieces(x).as_slice() {
            [j] => Some(*j),
            _ => None,
        }
    }

    /// `V_j(x)` evaluated from the closed-form expression of piece `j`.
    pub fn piece_value(&self, j: usize, x: &[f64]) -> f64 {
        match &self.kind {
            ClfKind::SmoothPolynomial { poly, .. } => poly.eval(x),
            _ => self.piece_matrix(j).expect("piece index in range").quad_form(x),
        }
    }

    /// `∇V_j(x)` without an activity check.
    pub fn piece_gradient_unchecked(&self, j: usize, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ClfKind::SmoothPolynomial { gradient, .. } => gradient.iter().map(|g| g.eval(x)).collect(),
            _ => self
                .piece_matrix(j)
                .expect("piece index in range")
                .mul_vec(x)
                .into_iter()
                .map(|v| 2.0 * v)
                .collect(),
        }
    }

    /// `V(x)`; on a boundary every active piece must agree within the continuity tolerance.
    pub fn value(&self, x: &[f64]) -> Result<f64, ClfError> {
        self.check_dim(x)?;
        let active = self.active_pieces(x);
        let values: Vec<f64> = active.iter().map(|&j| self.piece_value(j, x)).collect();
        let limit = self.continuity_tolerance * (1.0 + norm_sq(x));
        for a in 0..values.len() {
            for b in (a + 1)..values.len() {
                let gap = (values[a] - values[b]).abs();
                if gap > limit {
                    return Err(ClfError::Discontinuity {
                        a: active[a],
                        b: active[b],
                        gap,
                        x: x.to_vec(),
                    });
                }
            }
        }
        Ok(values[0])
    }

    /// `V(x)` from the best-scoring piece, skipping the continuity check.
    pub fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.piece_value(self.active_pieces(x)[0], x)
    }

    pub fn piece_gradient(&self, j: usize, x: &[f64]) -> Result<Vec<f64>, ClfError> {
        self.check_dim(x)?;
        if !self.active_pieces(x).contains(&j) {
            return Err(ClfError::PieceInactive {
                piece: j,
                x: x.to_vec(),
            });
        }
        Ok(self.piece_gradient_unchecked(j, x))
    }

    /// `DV_j(x; η) = ⟨∇V_j(x), η⟩`
    pub fn piece_directional_derivative(&self, j: usize, x: &[f64], eta: &[f64]) -> Result<f64, ClfError> {
        let g = self.piece_gradient(j, x)?;
        if eta.len() != self.dimension {
            return Err(ClfError::DimensionMismatch {
                expected: self.dimension,
                actual: eta.len(),
            });
        }
        Ok(dot(&g, eta))
    }

    /// The piece whose region `x + δη` enters for small `δ > 0`.
    ///
    /// Ties on the first-order slope `2xᵀR_jη` are broken by the curvature
    /// `ηᵀR_jη`, then by the lowest index.
    pub fn entered_piece(&self, x: &[f64], eta: &[f64]) -> usize {
        let active = self.active_pieces(x);
        if active.len() == 1 {
            return active[0];
        }
        let r: Vec<Matrix> = active
            .iter()
            .map(|&j| self.region_matrix(j).expect("piecewise kinds have region matrices"))
            .collect();
        let slopes: Vec<f64> = r.iter().map(|m| 2.0 * m.bilinear(x, eta)).collect();
        let tol1 = self.boundary_tolerance * (1.0 + norm(x) * norm(eta));
        let best1 = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let stage1: Vec<usize> = (0..active.len()).filter(|&k| slopes[k] >= best1 - tol1).collect();
        if stage1.len() == 1 {
            return active[stage1[0]];
        }
        let curv: Vec<f64> = stage1.iter().map(|&k| r[k].quad_form(eta)).collect();
        let tol2 = self.boundary_tolerance * (1.0 + norm_sq(eta));
        let best2 = curv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pick = stage1
            .iter()
            .zip(&curv)
            .find(|(_, &c)| c >= best2 - tol2)
            .map(|(&k, _)| k)
            .unwrap_or(stage1[0]);
        active[pick]
    }

    /// One-sided directional derivative `DV(x; η) = lim_{δ↓0} (V(x+δη) − V(x)) / δ`.
    pub fn directional_derivative(&self, x: &[f64], eta: &[f64]) -> Result<f64, ClfError> {
        self.check_dim(x)?;
        if eta.len() != self.dimension {
            return Err(ClfError::DimensionMismatch {
                expected: self.dimension,
                actual: eta.len(),
            });
        }
        if x.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let active = self.active_pieces(x);
        let dv = |j: usize| dot(&self.piece_gradient_unchecked(j, x), eta);
        Ok(match &self.kind {
            ClfKind::SmoothQuadratic { .. } | ClfKind::SmoothPolynomial { .. } => dv(0),
            ClfKind::PointwiseMin { .. } => active.iter().map(|&j| dv(j)).fold(f64::INFINITY, f64::min),
            ClfKind::PointwiseMax { .. } => active.iter().map(|&j| dv(j)).fold(f64::NEG_INFINITY, f64::max),
            ClfKind::PiecewiseQuadratic { .. } => dv(self.entered_piece(x, eta)),
        })
    }

    pub fn to_document(&self) -> ClfDocument {
        let rows = |ms: &[Matrix]| ms.iter().map(Matrix::to_rows).collect();
        let body = match &self.kind {
            ClfKind::SmoothQuadratic { p } => ClfBody::SmoothQuadratic { p: p.to_rows() },
            ClfKind::SmoothPolynomial { poly, .. } => ClfBody::SmoothPolynomial { poly: poly.clone() },
            ClfKind::PiecewiseQuadratic { pieces, regions } => ClfBody::PiecewiseQuadratic {
                p: rows(pieces),
                h: rows(regions),
            },
            ClfKind::PointwiseMin { pieces } => ClfBody::PointwiseMin { p: rows(pieces) },
            ClfKind::PointwiseMax { pieces } => ClfBody::PointwiseMax { p: rows(pieces) },
        };
        ClfDocument {
            body,
            boundary_tolerance: Some(self.boundary_tolerance),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("clf document serializes")
    }
}

/// On-disk CLF schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClfDocument {
    #[serde(flatten)]
    pub body: ClfBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_tolerance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClfBody {
    SmoothQuadratic {
        #[serde(rename = "P")]
        p: Vec<Vec<f64>>,
    },
    SmoothPolynomial {
        poly: Polynomial,
    },
    PiecewiseQuadratic {
        #[serde(rename = "P")]
        p: Vec<Vec<Vec<f64>>>,
        #[serde(rename = "H")]
        h: Vec<Vec<Vec<f64>>>,
    },
    PointwiseMin {
        #[serde(rename = "P")]
        p: Vec<Vec<Vec<f64>>>,
    },
    PointwiseMax {
        #[serde(rename = "P")]
        p: Vec<Vec<Vec<f64>>>,
    },
}

fn matrices(raw: Vec<Vec<Vec<f64>>>, name: &str) -> Result<Vec<Matrix>, ClfError> {
    raw.iter()
        .enumerate()
        .map(|(j, rows)| Matrix::from_rows(rows).map_err(|e| invalid(format!("{name}[{j}]"), e.to_string())))
        .collect()
}

impl ClfDocument {
    pub fn into_clf(self) -> Result<Pwsclf, ClfError> {
        let clf = match self.body {
            ClfBody::SmoothQuadratic { p } => {
                Pwsclf::smooth_quadratic(Matrix::from_rows(&p).map_err(|e| invalid("P", e.to_string()))?)?
            }
            ClfBody::SmoothPolynomial { poly } => {
                let n = poly
                    .terms
                    .first()
                    .map(|t| t.exponents.len())
                    .ok_or_else(|| invalid("poly", "polynomial has no terms"))?;
                Pwsclf::smooth_polynomial(n, poly)?
            }
            ClfBody::PiecewiseQuadratic { p, h } => Pwsclf::piecewise_quadratic(matrices(p, "P")?, matrices(h, "H")?)?,
            ClfBody::PointwiseMin { p } => Pwsclf::pointwise_min(matrices(p, "P")?)?,
            ClfBody::PointwiseMax { p } => Pwsclf::pointwise_max(matrices(p, "P")?)?,
        };
        match self.boundary_tolerance {
            Some(tol) => clf.with_boundary_tolerance(tol),
            None => Ok(clf),
        }
    }
}

pub fn load_clf(document: &str) -> Result<Pwsclf, ClfError> {
    let doc: ClfDocument = serde_json::from_str(document).map_err(ModelError::from_json)?;
    doc.into_clf()
}

/// The rate function `W` of a CLF pair `(V, W)`.
#[derive(Clone, Debug, PartialEq)]
pub enum RateFunction {
    /// `W(x) = η‖x‖²`
    QuadraticNorm {
        eta: f64,
    },
    Polynomial(Polynomial),
}

impl RateFunction {
    pub fn quadratic_norm(eta: f64) -> Result<Self, ClfError> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", "must be positive"));
        }
        Ok(RateFunction::QuadraticNorm { eta })
    }

    pub fn polynomial(n: usize, poly: Polynomial) -> Result<Self, ClfError> {
        poly.validate(n, "rate")?;
        if poly.has_constant_term() {
            return Err(invalid("rate", "constant term makes W(0) nonzero"));
        }
        Ok(RateFunction::Polynomial(Polynomial::new(n, poly.terms)))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RateFunction::QuadraticNorm { eta } => eta * norm_sq(x),
            RateFunction::Polynomial(p) => p.eval(x),
        }
    }

    /// True when `W` is a multiple of `‖x‖²` (degree-2 homogeneous).
    pub fn is_quadratic(&self) -> bool {
        match self {
            RateFunction::QuadraticNorm { .. } => true,
            RateFunction::Polynomial(p) => p.terms.iter().all(|t| t.degree() == 2),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            RateFunction::QuadraticNorm { eta } => format!("quadratic:{eta}"),
            RateFunction::Polynomial(p) => format!(
                "polynomial:{}",
                serde_json::to_string(p).expect("polynomial serializes")
            ),
        }
    }
}

/// Convenience: polynomial from `(coefficient, exponents)` pairs.
pub fn poly(n: usize, terms: &[(f64, &[u32])]) -> Polynomial {
    Polynomial::new(n, terms.iter().map(|(c, e)| Monomial::new(*c, e.to_vec())).collect())
}
