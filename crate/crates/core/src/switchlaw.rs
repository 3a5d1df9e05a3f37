//! The switching law `ν = S[V]` and its point queries.
//!
//! `ν(x)` picks, for every active piece `j ∈ J(x)`, the modes minimizing
//! `⟨∇V_j(x), f_i(x)⟩`. A single overall minimizer means `x` is inside a
//! switching region; otherwise `x` is on a switching boundary and the least
//! index is used. Limit-defined sets (`I_sm`, `M_j`) and the regularity test
//! are realized by deterministic probing on small rings around `x`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clf::{ClfError, ClfKind, Pwsclf};
use crate::linalg::{dot, norm, norm_sq, Matrix};
use crate::model::{ModelError, Polynomial, SwitchedSystem};
use crate::sampling::{circle_points, sphere_points};

/// Probe radii, as multiples of `probe_radius_factor · (1 + ‖x‖)`, largest first.
pub const PROBE_SCALES: [f64; 3] = [1e-4, 1e-5, 1e-6];
/// Step sizes tried by the regularity probe, as multiples of `1 + ‖x‖`.
pub const REGULARITY_GRID: [f64; 5] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7];
/// Sliding weights at or below this value do not count as active.
pub const ACTIVE_WEIGHT: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LawError {
    #[error("system dimension {system} does not match CLF dimension {clf}")]
    DimensionMismatch { system: usize, clf: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mode {mode} has a zero vector field at {x:?}")]
    DegenerateDirection { mode: usize, x: Vec<f64> },
    #[error("surface normal vanishes at {x:?}")]
    DegenerateNormal { x: Vec<f64> },
    #[error("both fields are tangent to the surface at {x:?} (⟨n, f_q − f_p⟩ = {denominator:e})")]
    Tangency { denominator: f64, x: Vec<f64> },
    #[error("point {x:?} is not on the surface (s = {value:e})")]
    OffSurface { value: f64, x: Vec<f64> },
    #[error("surface side modes are not resolved")]
    UnresolvedSides,
    #[error("region law: {0}")]
    RegionLaw(String),
    #[error(transparent)]
    Clf(#[from] ClfError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Anything that maps a state to a mode of a switched system.
pub trait SwitchingRule {
    fn system(&self) -> &SwitchedSystem;
    fn mode(&self, x: &[f64]) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawConfig {
    pub tie_tolerance: f64,
    pub probe_radius_factor: f64,
    pub probe_count: usize,
}

impl Default for LawConfig {
    fn default() -> Self {
        LawConfig {
            tie_tolerance: 1e-9,
            probe_radius_factor: 1.0,
            probe_count: 64,
        }
    }
}

/// `ν = S[V]` for a switched system and a PSCLF.
#[derive(Clone, Debug)]
pub struct SwitchingLaw {
    system: SwitchedSystem,
    clf: Pwsclf,
    config: LawConfig,
    directions: Vec<Vec<f64>>,
}

/// Modes seen on each probe ring, largest radius first.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub radii: Vec<f64>,
    pub modes: Vec<Vec<usize>>,
}

fn sorted_union(mut a: Vec<usize>, b: &[usize]) -> Vec<usize> {
    a.extend_from_slice(b);
    a.sort_unstable();
    a.dedup();
    a
}

impl SwitchingLaw {
    pub fn new(system: SwitchedSystem, clf: Pwsclf, config: LawConfig) -> Result<Self, LawError> {
        if system.dimension() != clf.dimension() {
            return Err(LawError::DimensionMismatch {
                system: system.dimension(),
                clf: clf.dimension(),
            });
        }
        if !(config.tie_tolerance > 0.0) {
            return Err(LawError::Config("tie_tolerance must be positive".into()));
        }
        if !(config.probe_radius_factor > 0.0) {
            return Err(LawError::Config("probe_radius_factor must be positive".into()));
        }
        if config.probe_count < 8 {
            return Err(LawError::Config("probe_count must be at least 8".into()));
        }
        let directions = if system.dimension() == 2 {
            circle_points(config.probe_count, 0.5)
        } else {
            sphere_points(system.dimension(), config.probe_count)
        };
        Ok(SwitchingLaw {
            system,
            clf,
            config,
            directions,
        })
    }

    pub fn system(&self) -> &SwitchedSystem {
        &self.system
    }

    pub fn clf(&self) -> &Pwsclf {
        &self.clf
    }

    pub fn config(&self) -> &LawConfig {
        &self.config
    }

    /// `⟨∇V_j(x), f_i(x)⟩` for every mode `i`.
    pub fn scores(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let g = self.clf.piece_gradient_unchecked(j, x);
        self.system.fields(x).iter().map(|f| dot(&g, f)).collect()
    }

    fn tie_slack(&self, x: &[f64]) -> f64 {
        let fmax = self.system.fields(x).iter().map(|f| norm(f)).fold(0.0, f64::max);
        self.config.tie_tolerance * (1.0 + norm_sq(x)) * (1.0 + fmax)
    }

    /// Modes within the tie slack of the minimum score on piece `j`.
    pub fn minimizers(&self, j: usize, x: &[f64]) -> Vec<usize> {
        let s = self.scores(j, x);
        let best = s.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = self.tie_slack(x);
        (0..s.len()).filter(|&i| s[i] <= best + slack).collect()
    }

    /// Union over `j ∈ J(x)` of the per-piece minimizer sets.
    pub fn tie_set(&self, x: &[f64]) -> Vec<usize> {
        self.clf
            .active_pieces(x)
            .into_iter()
            .fold(Vec::new(), |acc, j| sorted_union(acc, &self.minimizers(j, x)))
    }

    /// `ν(x)`
    pub fn nu(&self, x: &[f64]) -> usize {
        self.tie_set(x)[0]
    }

    /// Decision scores used by the relay: the scores of the best-ranked active piece.
    pub fn decision_scores(&self, x: &[f64]) -> Vec<f64> {
        let j = self.clf.active_pieces(x)[0];
        self.scores(j, x)
    }

    fn probe_ring(&self, x: &[f64], radius: f64) -> Vec<Vec<f64>> {
        self.directions
            .iter()
            .map(|d| x.iter().zip(d).map(|(a, b)| a + radius * b).collect())
            .collect()
    }

    fn probe_radii(&self, x: &[f64]) -> Vec<f64> {
        let base = self.config.probe_radius_factor * (1.0 + norm(x));
        PROBE_SCALES.iter().map(|e| base * e).collect()
    }

    /// Modes chosen by `ν` on each probe ring around `x`.
    pub fn probe(&self, x: &[f64]) -> ProbeReport {
        let radii = self.probe_radii(x);
        let modes = radii
            .iter()
            .map(|&r| {
                let mut m: Vec<usize> = self.probe_ring(x, r).iter().map(|p| self.nu(p)).collect();
                m.sort_unstable();
                m.dedup();
                m
            })
            .collect();
        ProbeReport { radii, modes }
    }

    /// `I_sm(x)`: modes whose switching region has `x` on its boundary.
    pub fn sliding_candidate_modes(&self, x: &[f64]) -> Vec<usize> {
        let report = self.probe(x);
        let smallest = report.modes.last().cloned().unwrap_or_default();
        sorted_union(smallest, &self.tie_set(x))
    }

    /// True when `x` lies on a switching boundary `∂D`.
    pub fn on_switching_boundary(&self, x: &[f64]) -> bool {
        self.sliding_candidate_modes(x).len() > 1
    }

    /// `M_j(x)`: modes chosen by `ν` arbitrarily close to `x` inside piece `j`.
    pub fn boundary_limit_modes(&self, j: usize, x: &[f64]) -> Result<Vec<usize>, LawError> {
        if !self.clf.active_pieces(x).contains(&j) {
            return Err(ClfError::PieceInactive {
                piece: j,
                x: x.to_vec(),
            }
            .into());
        }
        let mut radii = self.probe_radii(x);
        radii.reverse();
        for r in radii {
            let mut modes: Vec<usize> = self
                .probe_ring(x, r)
                .iter()
                .filter(|p| self.clf.interior_piece(p) == Some(j))
                .map(|p| self.nu(p))
                .collect();
            if !modes.is_empty() {
                modes.sort_unstable();
                modes.dedup();
                return Ok(modes);
            }
        }
        Ok(vec![self.nu(x)])
    }

    /// `ν̂(x)`: modes minimizing the true one-sided derivative `DV(x; f_i(x))`, with the minimum.
    pub fn nu_hat(&self, x: &[f64]) -> Result<(f64, Vec<usize>), LawError> {
        let d: Vec<f64> = self
            .system
            .fields(x)
            .iter()
            .map(|f| self.clf.directional_derivative(x, f))
            .collect::<Result<_, _>>()?;
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = self.tie_slack(x);
        Ok((best, (0..d.len()).filter(|&i| d[i] <= best + slack).collect()))
    }

    /// Closed-form switching surfaces for the supported families.
    ///
    /// Piece boundaries `xᵀ(R_j − R_k)x = 0` for every pair of pieces, and
    /// within-piece mode boundaries `⟨∇V_j(x), f_p(x) − f_q(x)⟩ = 0` for every
    /// piece and pair of modes. Side modes are left for the caller to resolve.
    pub fn analytic_surfaces(&self) -> Vec<SlidingSurface> {
        let mut out = Vec::new();
        let m = self.clf.piece_count();
        for j in 0..m {
            for k in (j + 1)..m {
                out.push(piece_boundary_surface(&self.clf, j, k).expect("piecewise kinds"));
            }
        }
        let modes = self.system.mode_count();
        for j in 0..m {
            for p in 0..modes {
                for q in (p + 1)..modes {
                    let mut s = mode_boundary_surface(&self.system, &self.clf, j, p, q);
                    s.side_modes = None;
                    out.push(s);
                }
            }
        }
        out
    }
}

impl SwitchingRule for SwitchingLaw {
    fn system(&self) -> &SwitchedSystem {
        &self.system
    }

    fn mode(&self, x: &[f64]) -> usize {
        self.nu(x)
    }
}

/// Numerical realization of regularity: every active mode `i` has
/// `ν(x − δ f_i(x)/‖f_i(x)‖) = i` for `δ = ε` and `δ = ε/2` at some grid step `ε`.
pub fn is_regular(rule: &dyn SwitchingRule, x: &[f64], active_weights: &[(usize, f64)]) -> Result<bool, LawError> {
    let scale = 1.0 + norm(x);
    for &(i, alpha) in active_weights {
        if alpha <= ACTIVE_WEIGHT {
            continue;
        }
        let f = rule.system().eval_field(i, x)?;
        let len = norm(&f);
        if len == 0.0 {
            return Err(LawError::DegenerateDirection { mode: i, x: x.to_vec() });
        }
        let back = |delta: f64| -> Vec<f64> { x.iter().zip(&f).map(|(a, b)| a - delta * b / len).collect() };
        let ok = REGULARITY_GRID.iter().any(|&e| {
            let eps = e * scale;
            rule.mode(&back(eps)) == i && rule.mode(&back(0.5 * eps)) == i
        });
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Scalar surface function with an exact gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceForm {
    /// `cᵀx`
    Linear(Vec<f64>),
    /// `xᵀSx` with symmetric `S`
    Quadratic(Matrix),
    Polynomial {
        poly: Polynomial,
        gradient: Vec<Polynomial>,
    },
}

impl SurfaceForm {
    pub fn polynomial(n: usize, poly: Polynomial) -> Self {
        let gradient = poly.gradient(n);
        SurfaceForm::Polynomial { poly, gradient }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SurfaceForm::Linear(c) => dot(c, x),
            SurfaceForm::Quadratic(s) => s.quad_form(x),
            SurfaceForm::Polynomial { poly, .. } => poly.eval(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SurfaceForm::Linear(c) => c.clone(),
            SurfaceForm::Quadratic(s) => s.mul_vec(x).into_iter().map(|v| 2.0 * v).collect(),
            SurfaceForm::Polynomial { gradient, .. } => gradient.iter().map(|g| g.eval(x)).collect(),
        }
    }

    /// One Newton step towards `s = 0` along the gradient.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let n = self.gradient(x);
        let nn = norm_sq(&n);
        if nn == 0.0 {
            return x.to_vec();
        }
        let step = self.value(x) / nn;
        x.iter().zip(&n).map(|(a, b)| a - step * b).collect()
    }
}

/// A codimension-1 switching surface `s(x) = 0`.
///
/// `side_modes = (p, q)` means mode `p` is active where `s < 0` and mode `q` where `s > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlidingSurface {
    pub form: SurfaceForm,
    pub side_modes: Option<(usize, usize)>,
    pub label: String,
}

impl SlidingSurface {
    pub fn new(form: SurfaceForm, side_modes: Option<(usize, usize)>, label: impl Into<String>) -> Self {
        SlidingSurface {
            form,
            side_modes,
            label: label.into(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.form.value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.form.gradient(x)
    }

    /// Copy with side modes read off `rule` at `x ∓ h·n/‖n‖`.
    pub fn resolved(&self, rule: &dyn SwitchingRule, x: &[f64]) -> SlidingSurface {
        let n = self.gradient(x);
        let len = norm(&n);
        let mut out = self.clone();
        if len == 0.0 {
            return out;
        }
        let h = 1e-7 * (1.0 + norm(x));
        let off = |sign: f64| -> Vec<f64> { x.iter().zip(&n).map(|(a, b)| a + sign * h * b / len).collect() };
        out.side_modes = Some((rule.mode(&off(-1.0)), rule.mode(&off(1.0))));
        out
    }
}

/// Boundary `xᵀ(R_j − R_k)x = 0` between pieces `j` and `k`; positive on piece `j`'s side.
pub fn piece_boundary_surface(clf: &Pwsclf, j: usize, k: usize) -> Option<SlidingSurface> {
    let rj = clf.region_matrix(j)?;
    let rk = clf.region_matrix(k)?;
    Some(SlidingSurface::new(
        SurfaceForm::Quadratic(rj.sub(&rk)),
        None,
        format!("piece {} | piece {}", j + 1, k + 1),
    ))
}

/// Within-piece boundary `⟨∇V_j(x), f_p(x) − f_q(x)⟩ = 0`; mode `p` wins where it is negative.
pub fn mode_boundary_surface(system: &SwitchedSystem, clf: &Pwsclf, j: usize, p: usize, q: usize) -> SlidingSurface {
    let n = system.dimension();
    let label = format!("piece {}: mode {} | mode {}", j + 1, p + 1, q + 1);
    let linear = (clf.piece_matrix(j), system.linear_matrices());
    if let (Some(pj), Some(a)) = linear {
        let form = Matrix::lyapunov_form(a[p], pj).sub(&Matrix::lyapunov_form(a[q], pj));
        return SlidingSurface::new(SurfaceForm::Quadratic(form.symmetrized()), Some((p, q)), label);
    }
    let grad: Vec<Polynomial> = match clf.kind() {
        ClfKind::SmoothPolynomial { gradient, .. } => gradient.clone(),
        _ => {
            let pj = clf.piece_matrix(j).expect("quadratic piece");
            (0..n)
                .map(|r| Polynomial::linear(&pj.scale(2.0).to_rows()[r]))
                .collect()
        }
    };
    let fp = system.subsystems()[p].to_polynomials(n);
    let fq = system.subsystems()[q].to_polynomials(n);
    let diff: Vec<Polynomial> = fp.iter().zip(&fq).map(|(a, b)| a.add(&b.scale(-1.0, n), n)).collect();
    let poly = Polynomial::inner(&grad, &diff, n);
    SlidingSurface::new(SurfaceForm::polynomial(n, poly), Some((p, q)), label)
}

/// Filippov convex-combination weights on a two-mode surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SlidingCoefficients {
    /// Weight on the `s < 0` mode `p`; `1 − alpha` goes to `q`.
    pub alpha: f64,
    pub modes: (usize, usize),
    /// Both fields point toward the surface.
    pub attractive: bool,
    /// `alpha ∈ [0, 1]`; false means the trajectory crosses instead of sliding.
    pub sliding: bool,
    pub velocity: Vec<f64>,
}

impl SlidingCoefficients {
    /// `(mode, weight)` pairs with weight above [`ACTIVE_WEIGHT`].
    pub fn active_weights(&self) -> Vec<(usize, f64)> {
        if !self.sliding {
            return Vec::new();
        }
        [(self.modes.0, self.alpha), (self.modes.1, 1.0 - self.alpha)]
            .into_iter()
            .filter(|&(_, a)| a > ACTIVE_WEIGHT)
            .collect()
    }
}

/// Coefficients without the on-surface precondition (used inside integrators).
pub(crate) fn coefficients_at(
    surface: &SlidingSurface,
    system: &SwitchedSystem,
    x: &[f64],
) -> Result<SlidingCoefficients, LawError> {
    let (p, q) = surface.side_modes.ok_or(LawError::UnresolvedSides)?;
    let n = surface.gradient(x);
    let nlen = norm(&n);
    if nlen == 0.0 {
        return Err(LawError::DegenerateNormal { x: x.to_vec() });
    }
    let fp = system.eval_field(p, x)?;
    let fq = system.eval_field(q, x)?;
    let a = dot(&n, &fp);
    let b = dot(&n, &fq);
    let denom = b - a;
    let scale = nlen * norm(&fp).max(norm(&fq));
    if !(denom.abs() > 1e-12 * scale) {
        return Err(LawError::Tangency {
            denominator: denom,
            x: x.to_vec(),
        });
    }
    let alpha = b / denom;
    let velocity = fp.iter().zip(&fq).map(|(u, v)| alpha * u + (1.0 - alpha) * v).collect();
    Ok(SlidingCoefficients {
        alpha,
        modes: (p, q),
        attractive: a > 0.0 && b < 0.0,
        sliding: (0.0..=1.0).contains(&alpha),
        velocity,
    })
}

/// Solves `⟨n(x), α f_p(x) + (1 − α) f_q(x)⟩ = 0` for a point on the surface.
pub fn sliding_coefficients(
    surface: &SlidingSurface,
    system: &SwitchedSystem,
    x: &[f64],
) -> Result<SlidingCoefficients, LawError> {
    let value = surface.value(x);
    if value.abs() > 1e-8 * (1.0 + norm_sq(x)) {
        return Err(LawError::OffSurface { value, x: x.to_vec() });
    }
    coefficients_at(surface, system, x)
}

/// Explicit state-feedback law from sign patterns of linear switching functions.
#[derive(Clone, Debug)]
pub struct RegionLaw {
    system: SwitchedSystem,
    surfaces: Vec<Vec<f64>>,
    table: Vec<usize>,
    document: RegionLawDocument,
}

/// On-disk region-law schema.
///
/// `surfaces` lists coefficient vectors `c_k` of the switching functions
/// `s_k(x) = c_kᵀx`. Each rule maps a sign pattern (one character per surface:
/// `+` for `s_k ≥ 0`, `-` for `s_k < 0`, `*` for either) to a one-based mode.
/// The first matching rule wins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionLawDocument {
    pub surfaces: Vec<Vec<f64>>,
    pub rules: Vec<RegionRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionRule {
    pub signs: String,
    pub mode: usize,
}

impl RegionLaw {
    pub fn new(system: SwitchedSystem, document: RegionLawDocument) -> Result<Self, LawError> {
        let k = document.surfaces.len();
        if k == 0 || k > 16 {
            return Err(LawError::RegionLaw("between 1 and 16 surfaces are required".into()));
        }
        for (i, c) in document.surfaces.iter().enumerate() {
            if c.len() != system.dimension() {
                return Err(LawError::RegionLaw(format!(
                    "surfaces[{i}] has {} coefficients, expected {}",
                    c.len(),
                    system.dimension()
                )));
            }
        }
        let mut parsed = Vec::with_capacity(document.rules.len());
        for (r, rule) in document.rules.iter().enumerate() {
            if rule.mode == 0 || rule.mode > system.mode_count() {
                return Err(LawError::RegionLaw(format!(
                    "rules[{r}].mode {} is not in 1..={}",
                    rule.mode,
                    system.mode_count()
                )));
            }
            let pattern: Vec<Option<bool>> = rule
                .signs
                .chars()
                .map(|c| match c {
                    '+' => Ok(Some(true)),
                    '-' => Ok(Some(false)),
                    '*' => Ok(None),
                    other => Err(LawError::RegionLaw(format!(
                        "rules[{r}].signs: bad character {other:?}"
                    ))),
                })
                .collect::<Result<_, _>>()?;
            if pattern.len() != k {
                return Err(LawError::RegionLaw(format!(
                    "rules[{r}].signs has {} entries, expected {k}",
                    pattern.len()
                )));
            }
            parsed.push((pattern, rule.mode - 1));
        }
        let mut table = Vec::with_capacity(1 << k);
        for bits in 0..(1usize << k) {
            let signs: Vec<bool> = (0..k).map(|s| bits >> s & 1 == 1).collect();
            let mode = parsed
                .iter()
                .find(|(pat, _)| pat.iter().zip(&signs).all(|(p, s)| p.map_or(true, |v| v == *s)))
                .map(|(_, m)| *m)
                .ok_or_else(|| {
                    let pat: String = signs.iter().map(|&s| if s { '+' } else { '-' }).collect();
                    LawError::RegionLaw(format!("sign pattern {pat} is not covered by any rule"))
                })?;
            table.push(mode);
        }
        Ok(RegionLaw {
            system,
            surfaces: document.surfaces.clone(),
            table,
            document,
        })
    }

    pub fn from_json(system: SwitchedSystem, document: &str) -> Result<Self, LawError> {
        let doc: RegionLawDocument =
            serde_json::from_str(document).map_err(|e| LawError::Model(ModelError::from_json(e)))?;
        Self::new(system, doc)
    }

    pub fn document(&self) -> &RegionLawDocument {
        &self.document
    }

    pub fn switching_values(&self, x: &[f64]) -> Vec<f64> {
        self.surfaces.iter().map(|c| dot(c, x)).collect()
    }

    pub fn signs(&self, x: &[f64]) -> Vec<bool> {
        self.switching_values(x).into_iter().map(|v| v >= 0.0).collect()
    }

    pub fn mode_for_signs(&self, signs: &[bool]) -> usize {
        let bits = signs
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &s)| acc | (s as usize) << k);
        self.table[bits]
    }

    pub fn surfaces(&self) -> Vec<SlidingSurface> {
        self.surfaces
            .iter()
            .enumerate()
            .map(|(k, c)| SlidingSurface::new(SurfaceForm::Linear(c.clone()), None, format!("s{}", k + 1)))
            .collect()
    }
}

impl SwitchingRule for RegionLaw {
    fn system(&self) -> &SwitchedSystem {
        &self.system
    }

    fn mode(&self, x: &[f64]) -> usize {
        self.mode_for_signs(&self.signs(x))
    }
}
