//! Numerical checks of CLF certificates.
//!
//! Region-restricted sign conditions are checked by deterministic sampling
//! (unit-sphere directions for degree-2 homogeneous data, a box grid
//! otherwise). A `pass` therefore means no violation was found at the sampled
//! resolution. Matrix inequalities are checked exactly by symmetric
//! eigenvalues.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clf::{ClfError, ClfKind, Pwsclf, RateFunction};
use crate::linalg::{dot, eig_general, eig_symmetric, lyapunov_solve, norm, norm_sq, LinalgError, Matrix};
use crate::model::{ModelError, SwitchedSystem};
use crate::sampling::{circle_points, sphere_points};
use crate::switchlaw::{
    coefficients_at, mode_boundary_surface, piece_boundary_surface, LawError, SlidingSurface, SwitchingLaw,
    SwitchingRule,
};

/// Sampled margins within this multiple of the local scale count as numerically tight.
pub const INCONCLUSIVE_BAND: f64 = 1e-7;
/// Eigenvalue margin for matrix inequalities, relative to `1 + max |entry|`.
pub const MATRIX_MARGIN: f64 = 1e-9;
/// Witnesses kept per report, largest violation first.
pub const MAX_WITNESSES: usize = 5;
/// Default sample counts on the unit circle and on higher-dimensional spheres.
pub const DEFAULT_SAMPLES_2D: usize = 720;
pub const DEFAULT_SAMPLES_ND: usize = 20_000;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("at least {min} samples are required, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("this check requires a linear switched system")]
    NotLinear,
    #[error("this check requires a {expected} CLF, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("certificate shape: {0}")]
    Shape(String),
    #[error("simplex gridding supports at most 4 modes, got {0}")]
    TooManyModes(usize),
    #[error(transparent)]
    Clf(#[from] ClfError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    /// Fail dominates inconclusive, which dominates pass.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        verdicts.into_iter().max().unwrap_or(Verdict::Pass)
    }
}

/// A point or matrix at which a condition is violated (or numerically tight).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Eigenvector attaining the violating eigenvalue of `matrix`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    /// Amount by which the inequality is violated (non-positive for tight witnesses).
    pub magnitude: f64,
    pub detail: String,
}

impl Witness {
    fn at(x: &[f64], magnitude: f64, detail: impl Into<String>) -> Self {
        Witness {
            point: Some(x.to_vec()),
            matrix: None,
            vector: None,
            magnitude,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub condition: String,
    pub verdict: Verdict,
    /// Smallest observed margin; negative means violated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_margin: Option<f64>,
    pub witnesses: Vec<Witness>,
    pub samples_used: usize,
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CertReport>,
}

impl CertReport {
    fn leaf(condition: impl Into<String>, verdict: Verdict) -> Self {
        CertReport {
            condition: condition.into(),
            verdict,
            worst_margin: None,
            witnesses: Vec::new(),
            samples_used: 0,
            tolerances: BTreeMap::new(),
            notes: Vec::new(),
            checks: Vec::new(),
        }
    }

    /// Parent report whose verdict combines its sub-checks.
    pub fn group(condition: impl Into<String>, checks: Vec<CertReport>) -> Self {
        let mut r = CertReport::leaf(condition, Verdict::combine(checks.iter().map(|c| c.verdict)));
        r.samples_used = checks.iter().map(|c| c.samples_used).max().unwrap_or(0);
        r.worst_margin = checks
            .iter()
            .filter_map(|c| c.worst_margin)
            .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.min(m))));
        r.checks = checks;
        r
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// Depth-first search for a sub-check by condition id.
    pub fn find(&self, condition: &str) -> Option<&CertReport> {
        if self.condition == condition {
            return Some(self);
        }
        self.checks.iter().find_map(|c| c.find(condition))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Accumulates sampled margins for one condition.
struct Tally {
    condition: String,
    strict: bool,
    worst: Option<f64>,
    violations: Vec<Witness>,
    tight: Option<Witness>,
    tight_count: usize,
    samples: usize,
}

impl Tally {
    fn new(condition: impl Into<String>, strict: bool) -> Self {
        Tally {
            condition: condition.into(),
            strict,
            worst: None,
            violations: Vec::new(),
            tight: None,
            tight_count: 0,
            samples: 0,
        }
    }

    /// Records `margin ≥ 0` (strict: `> 0`) at a point with local scale `scale`.
    fn observe(&mut self, margin: f64, scale: f64, witness: impl FnOnce(f64) -> Witness) {
        self.samples += 1;
        self.worst = Some(self.worst.map_or(margin, |w| w.min(margin)));
        let band = INCONCLUSIVE_BAND * scale;
        if margin < -band || margin.is_nan() {
            let w = witness(-margin);
            let pos = self
                .violations
                .iter()
                .position(|v| v.magnitude < w.magnitude)
                .unwrap_or(self.violations.len());
            if pos < MAX_WITNESSES {
                self.violations.insert(pos, w);
                self.violations.truncate(MAX_WITNESSES);
            }
        } else if self.strict && margin <= band {
            self.tight_count += 1;
            if self.tight.is_none() {
                self.tight = Some(witness(-margin));
            }
        }
    }

    /// Records a violation that needs no sampled margin.
    fn violate(&mut self, w: Witness) {
        self.samples += 1;
        self.worst = Some(self.worst.map_or(-w.magnitude, |m| m.min(-w.magnitude)));
        if self.violations.len() < MAX_WITNESSES {
            self.violations.push(w);
        }
    }

    fn finish(self) -> CertReport {
        let verdict = if !self.violations.is_empty() {
            Verdict::Fail
        } else if self.tight_count > 0 {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        let mut r = CertReport::leaf(self.condition, verdict);
        r.worst_margin = self.worst;
        r.samples_used = self.samples;
        r.tolerances.insert("inconclusive_band".into(), INCONCLUSIVE_BAND);
        r.witnesses = self.violations;
        if verdict == Verdict::Inconclusive {
            r.notes.push(format!(
                "{} sample(s) within the inconclusive band of zero; no violation found",
                self.tight_count
            ));
            r.witnesses.extend(self.tight);
        }
        if verdict == Verdict::Pass && self.samples > 0 {
            r.notes.push("no violation found at the sampled resolution".into());
        }
        r
    }
}

/// `self + s·other` by value.
trait Plus {
    fn plus(self, other: &Matrix, s: f64) -> Matrix;
}

impl Plus for Matrix {
    fn plus(mut self, other: &Matrix, s: f64) -> Matrix {
        self.add_scaled(s, other);
        self
    }
}

fn check_dims(what: &str, expected: usize, actual: usize) -> Result<(), CertError> {
    if expected == actual {
        Ok(())
    } else {
        Err(CertError::DimensionMismatch(format!(
            "{what} has dimension {actual}, expected {expected}"
        )))
    }
}

fn linear(sys: &SwitchedSystem) -> Result<Vec<Matrix>, CertError> {
    sys.linear_matrices()
        .map(|m| m.into_iter().cloned().collect())
        .ok_or(CertError::NotLinear)
}

/// Unit directions: equi-angular on the circle, low-discrepancy otherwise.
pub fn unit_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    if n == 2 {
        circle_points(count, 0.0)
    } else {
        sphere_points(n, count)
    }
}

/// Nonzero points of the box `[−2, 2]^n`: a tensor grid in 2D, scaled sphere points otherwise.
pub fn box_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    if n == 2 {
        // odd so that the coordinate axes are sampled
        let k = (count as f64).sqrt().ceil().max(3.0) as usize | 1;
        let coord = |i: usize| -2.0 + 4.0 * i as f64 / (k - 1) as f64;
        let mut out = Vec::with_capacity(k * k);
        for a in 0..k {
            for b in 0..k {
                let x = vec![coord(a), coord(b)];
                if norm(&x) > 1e-12 {
                    out.push(x);
                }
            }
        }
        out
    } else {
        let golden = 0.5 * (5f64.sqrt() - 1.0);
        sphere_points(n, count)
            .into_iter()
            .enumerate()
            .map(|(i, u)| {
                let r = 2.0 * (((i + 1) as f64 * golden).fract()).max(1e-3);
                u.into_iter().map(|v| v * r).collect()
            })
            .collect()
    }
}

fn min_samples(samples: usize) -> Result<(), CertError> {
    if samples < 100 {
        Err(CertError::TooFewSamples { min: 100, got: samples })
    } else {
        Ok(())
    }
}

/// Directional derivatives `DV(x; f_i(x))` for every mode.
fn mode_derivatives(v: &Pwsclf, sys: &SwitchedSystem, x: &[f64]) -> Result<Vec<f64>, CertError> {
    sys.fields(x)
        .iter()
        .map(|f| v.directional_derivative(x, f).map_err(CertError::from))
        .collect()
}

/// PSCLF conditions: positivity of `V` and `W`, bounded sublevel sets, and
/// `min_i DV(x; f_i(x)) ≤ −W(x)`.
pub fn check_psclf(
    v: &Pwsclf,
    w: &RateFunction,
    sys: &SwitchedSystem,
    samples: usize,
) -> Result<CertReport, CertError> {
    check_psclf_at_radius(v, w, sys, samples, 1.0)
}

/// As [`check_psclf`], with homogeneous data sampled on the sphere of radius `radius`.
pub fn check_psclf_at_radius(
    v: &Pwsclf,
    w: &RateFunction,
    sys: &SwitchedSystem,
    samples: usize,
    radius: f64,
) -> Result<CertReport, CertError> {
    min_samples(samples)?;
    let n = sys.dimension();
    check_dims("CLF", n, v.dimension())?;
    let homogeneous = sys.is_linear() && v.is_quadratic() && w.is_quadratic();
    let points = if homogeneous {
        unit_directions(n, samples)
            .into_iter()
            .map(|u| u.into_iter().map(|c| c * radius).collect())
            .collect()
    } else {
        box_points(n, samples)
    };
    let domain = if homogeneous {
        format!(
            "{} points of the sphere of radius {radius} (degree-2 homogeneity)",
            points.len()
        )
    } else {
        format!("{} points of the box [-2, 2]^{n}", points.len())
    };

    let mut pos_v = Tally::new("psclf.positive_v", true);
    let mut pos_w = Tally::new("psclf.positive_w", true);
    let mut decrease = Tally::new("psclf.decrease", false);
    for x in &points {
        let r2 = norm_sq(x);
        if v.is_quadratic() {
            for j in v.active_pieces(x) {
                let vj = v.piece_value(j, x);
                pos_v.observe(vj, r2 + vj.abs(), |m| {
                    Witness::at(x, m, format!("piece {} value {vj:e}", j + 1))
                });
            }
        } else {
            let val = v.value_unchecked(x);
            pos_v.observe(val, r2 + val.abs(), |m| Witness::at(x, m, format!("V = {val:e}")));
        }
        let wx = w.eval(x);
        pos_w.observe(wx, r2 + wx.abs(), |m| Witness::at(x, m, format!("W = {wx:e}")));
        let d = mode_derivatives(v, sys, x)?;
        let (best, arg) = d.iter().enumerate().fold(
            (f64::INFINITY, 0),
            |acc, (i, &di)| if di < acc.0 { (di, i) } else { acc },
        );
        let scale = r2 + d.iter().fold(0.0f64, |a, b| a.max(b.abs())) + wx.abs();
        decrease.observe(-(best + wx), scale, |m| {
            Witness::at(x, m, format!("min_i DV = {best:e} (mode {}), -W = {:e}", arg + 1, -wx))
        });
    }
    let mut pos_v = pos_v.finish();
    let mut pos_w = pos_w.finish();
    if pos_w.verdict == Verdict::Inconclusive {
        pos_w
            .notes
            .push("W vanishes at nonzero samples: W is only positive semidefinite".into());
    }
    let decrease = decrease.finish();

    let radial = if v.is_quadratic() {
        let mut r = CertReport::leaf("psclf.radially_unbounded", pos_v.verdict);
        r.notes
            .push("implied by positive definiteness of each piece on its region".into());
        r
    } else {
        let dirs = unit_directions(n, samples);
        let mut t = Tally::new("psclf.radially_unbounded", true);
        let mut prev: Option<f64> = None;
        for k in 0..7 {
            let r = f64::powi(2.0, k);
            let m = dirs
                .iter()
                .map(|u| v.value_unchecked(&u.iter().map(|c| c * r).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min);
            if let Some(p) = prev {
                t.observe(m - p, 1.0 + m.abs(), |g| {
                    Witness::at(
                        &vec![r; 1],
                        g,
                        format!("sphere minimum {m:e} at radius {r} does not exceed {p:e}"),
                    )
                });
            }
            prev = Some(m);
        }
        let mut r = t.finish();
        r.notes
            .push("sphere minima of V strictly increase over radii 1, 2, ..., 64".into());
        r
    };
    pos_v.notes.push(domain.clone());

    let mut report = CertReport::group("psclf", vec![pos_v, pos_w, radial, decrease]);
    report.tolerances.insert("inconclusive_band".into(), INCONCLUSIVE_BAND);
    Ok(report.note(domain))
}

/// A point on the boundary between pieces `a < b` (both active).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    pub pieces: (usize, usize),
}

/// Unit directions on the piece boundaries, found by bisecting sign changes of
/// `xᵀ(R_a − R_b)x` between consecutive sample directions.
pub fn piece_boundary_directions(v: &Pwsclf, count: usize) -> Vec<BoundaryPoint> {
    let n = v.dimension();
    let m = v.piece_count();
    let regions: Vec<Matrix> = (0..m).filter_map(|j| v.region_matrix(j)).collect();
    if regions.len() < 2 {
        return Vec::new();
    }
    let dirs = unit_directions(n, count);
    let mut out: Vec<BoundaryPoint> = Vec::new();
    let push = |x: Vec<f64>, a: usize, b: usize, out: &mut Vec<BoundaryPoint>| {
        let active = v.active_pieces(&x);
        if !(active.contains(&a) && active.contains(&b)) {
            return;
        }
        let dup = out
            .iter()
            .any(|p| p.pieces == (a, b) && p.x.iter().zip(&x).map(|(u, w)| (u - w).abs()).fold(0.0, f64::max) < 1e-9);
        if !dup {
            out.push(BoundaryPoint { x, pieces: (a, b) });
        }
    };
    let unit = |x: Vec<f64>| -> Vec<f64> {
        let l = norm(&x);
        x.into_iter().map(|c| c / l).collect()
    };
    for a in 0..m {
        for b in (a + 1)..m {
            let d = regions[a].sub(&regions[b]);
            if d.max_abs() == 0.0 {
                continue;
            }
            let g = |x: &[f64]| d.quad_form(x);
            for i in 0..dirs.len() {
                let u = &dirs[i];
                let w = &dirs[(i + 1) % dirs.len()];
                let gu = g(u);
                if gu == 0.0 {
                    push(u.clone(), a, b, &mut out);
                    continue;
                }
                if gu * g(w) >= 0.0 || dot(u, w) < -0.99 {
                    continue;
                }
                let at = |t: f64| unit(u.iter().zip(w).map(|(p, q)| p + t * (q - p)).collect());
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if g(&at(mid)) * gu > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let (xl, xh) = (at(lo), at(hi));
                let x = if g(&xl).abs() <= g(&xh).abs() { xl } else { xh };
                push(x, a, b, &mut out);
            }
        }
    }
    out
}

fn search_count(n: usize, samples: usize) -> usize {
    if n == 2 {
        (5 * samples).max(3600)
    } else {
        samples
    }
}

/// Active sliding modes `I_sm^a(x)` and whether the conservative fallback `I_sm` was used.
///
/// Empty where both adjacent fields point away from the surface.
pub fn active_sliding_modes(law: &SwitchingLaw, x: &[f64], pieces: (usize, usize)) -> (Vec<usize>, bool) {
    let ism = law.sliding_candidate_modes(x);
    if ism.len() == 2 {
        let clf = law.clf();
        let mut candidates: Vec<SlidingSurface> = piece_boundary_surface(clf, pieces.0, pieces.1).into_iter().collect();
        for j in clf.active_pieces(x) {
            candidates.push(mode_boundary_surface(law.system(), clf, j, ism[0], ism[1]));
        }
        let on = 1e-8 * (1.0 + norm_sq(x));
        for s in candidates {
            if s.value(x).abs() > on * (1.0 + norm(&s.gradient(x))) {
                continue;
            }
            let s = s.resolved(law as &dyn SwitchingRule, x);
            let Some((p, q)) = s.side_modes else { continue };
            let mut sides = [p, q];
            sides.sort_unstable();
            if sides[..] != ism[..] {
                continue;
            }
            if let Ok(c) = coefficients_at(&s, law.system(), x) {
                // a repelling crossing carries no persistent sliding motion
                if !c.attractive {
                    return (Vec::new(), false);
                }
                let mut modes: Vec<usize> = c.active_weights().into_iter().map(|(i, _)| i).collect();
                modes.sort_unstable();
                return (modes, false);
            }
        }
    }
    (ism, true)
}

/// Boundary condition for stability including sliding motions: on sampled
/// points of `∂Ω ∩ ∂D`, some `j ∈ J(x)` has `DV_j(x; f_q(x)) ≤ −W(x)` for every
/// `q ∈ I_sm^a(x)` outside `M_j(x)`.
pub fn check_sliding_condition(
    law: &SwitchingLaw,
    w: &RateFunction,
    boundary_samples: usize,
) -> Result<CertReport, CertError> {
    let v = law.clf();
    let sys = law.system();
    let n = sys.dimension();
    let condition = "sliding";
    if v.piece_count() < 2 || v.is_smooth() {
        let mut r = CertReport::leaf(condition, Verdict::Pass);
        r.notes
            .push("vacuous: V is smooth, so the nonsmooth boundary is empty".into());
        return Ok(r);
    }
    let dirs = piece_boundary_directions(v, search_count(n, DEFAULT_SAMPLES_2D.max(boundary_samples)));
    let dirs: Vec<BoundaryPoint> = dirs
        .into_iter()
        .filter(|bp| {
            [0.5, 1.0, 2.0]
                .iter()
                .any(|r| law.on_switching_boundary(&bp.x.iter().map(|c| c * r).collect::<Vec<_>>()))
        })
        .collect();
    let per = boundary_samples.div_ceil(dirs.len().max(1)).max(1);
    let mut t = Tally::new(condition, false);
    let mut fallbacks = 0;
    let mut candidates = 0;
    for bp in &dirs {
        for k in 1..=per {
            let r = 2.0 * k as f64 / per as f64;
            let x: Vec<f64> = bp.x.iter().map(|c| c * r).collect();
            candidates += 1;
            if !law.on_switching_boundary(&x) {
                continue;
            }
            let (active, fallback) = active_sliding_modes(law, &x, bp.pieces);
            fallbacks += fallback as usize;
            let wx = w.eval(&x);
            let fields = sys.fields(&x);
            let mut best = f64::INFINITY;
            let mut scale = norm_sq(&x) + wx.abs();
            let mut detail = Vec::new();
            for j in v.active_pieces(&x) {
                let mj = law.boundary_limit_modes(j, &x)?;
                let g = v.piece_gradient_unchecked(j, &x);
                let mut worst = f64::NEG_INFINITY;
                for &q in active.iter().filter(|q| !mj.contains(q)) {
                    let d = dot(&g, &fields[q]);
                    scale = scale.max(d.abs());
                    worst = worst.max(d + wx);
                }
                detail.push(format!(
                    "j={}: M_j={:?}, worst DV_j + W = {worst:e}",
                    j + 1,
                    mj.iter().map(|i| i + 1).collect::<Vec<_>>()
                ));
                best = best.min(worst);
            }
            let margin = if best == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                -best
            };
            let active1: Vec<usize> = active.iter().map(|i| i + 1).collect();
            t.observe(margin, scale, |m| {
                Witness::at(&x, m, format!("I_sm^a={active1:?}; {}", detail.join("; ")))
            });
        }
    }
    let sampled = t.samples;
    let mut r = t.finish();
    r.notes.push(format!(
        "{} boundary direction(s), {candidates} candidate point(s), {sampled} on the switching boundary",
        dirs.len()
    ));
    if sampled == 0 {
        r.notes
            .push("vacuous: no sampled point of the nonsmooth boundary lies on the switching boundary".into());
    }
    if fallbacks > 0 {
        r.notes.push(format!(
            "I_sm^a taken as I_sm at {fallbacks} point(s): not a two-mode codimension-one surface"
        ));
    }
    r.tolerances.insert("tie_tolerance".into(), law.config().tie_tolerance);
    Ok(r)
}

fn symmetric_margin(m: &Matrix, lower: bool) -> Result<(f64, Vec<f64>), CertError> {
    let (vals, vecs) = eig_symmetric(&m.symmetrized())?;
    let idx = if lower { vals.len() - 1 } else { 0 };
    let v: Vec<f64> = (0..m.rows()).map(|r| vecs[(r, idx)]).collect();
    Ok((vals[idx], v))
}

/// `P ≻ 0` and `min_i xᵀ(A_iᵀP + PA_i)x < 0` on sampled unit directions.
pub fn check_strict_completeness(
    p: &Matrix,
    sys: &SwitchedSystem,
    sphere_samples: usize,
) -> Result<CertReport, CertError> {
    let a = linear(sys)?;
    let n = sys.dimension();
    check_dims("P", n, p.rows())?;
    p.ensure_symmetric()?;
    let (lmin, vec) = symmetric_margin(p, true)?;
    let mut pd = Tally::new("completeness.positive_definite", true);
    pd.observe(lmin, 1.0 + p.max_abs(), |m| Witness {
        point: None,
        matrix: Some(p.to_rows()),
        vector: Some(vec.clone()),
        magnitude: m,
        detail: format!("smallest eigenvalue {lmin:e}"),
    });
    let forms: Vec<Matrix> = a.iter().map(|ai| Matrix::lyapunov_form(ai, p)).collect();
    let mut dec = Tally::new("completeness.min_derivative", true);
    for x in unit_directions(n, sphere_samples) {
        let vals: Vec<f64> = forms.iter().map(|f| f.quad_form(&x)).collect();
        let (best, arg) = vals
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |acc, (i, &v)| if v < acc.0 { (v, i) } else { acc });
        let scale = 1.0 + vals.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        dec.observe(-best, scale, |m| {
            Witness::at(&x, m, format!("min_i xᵀ(A_iᵀP + PA_i)x = {best:e} (mode {})", arg + 1))
        });
    }
    Ok(CertReport::group("completeness", vec![pd.finish(), dec.finish()]))
}

/// Weights `α` on the simplex with `Σ α_i A_i` Hurwitz, and the Lyapunov matrix of that combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableCombination {
    pub weights: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub abscissa: f64,
    pub grid: usize,
}

fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for k in (0..=total).rev() {
        prefix.push(k);
        compositions(total - k, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// Grid search over the simplex at resolution `1/grid`, nearest-to-barycenter first.
///
/// Returns the first Hurwitz combination in that order together with
/// `P` solving `AᵀP + PA + I = 0`, or `None` when no grid point is Hurwitz.
pub fn search_stable_convex_combination(
    sys: &SwitchedSystem,
    grid: usize,
) -> Result<Option<StableCombination>, CertError> {
    let a = linear(sys)?;
    let m = a.len();
    if m > 4 {
        return Err(CertError::TooManyModes(m));
    }
    let grid = grid.max(1);
    let mut points = Vec::new();
    compositions(grid, m, &mut Vec::new(), &mut points);
    let center = grid as f64 / m as f64;
    let dist = |p: &Vec<usize>| p.iter().map(|&k| (k as f64 - center).powi(2)).sum::<f64>();
    let mut keyed: Vec<(f64, Vec<usize>)> = points.into_iter().map(|p| (dist(&p), p)).collect();
    keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| y.1.cmp(&x.1)));
    let n = sys.dimension();
    for (_, p) in keyed {
        let weights: Vec<f64> = p.iter().map(|&k| k as f64 / grid as f64).collect();
        let mut sum = Matrix::zeros(n, n);
        for (w, ai) in weights.iter().zip(&a) {
            sum = sum.plus(ai, *w);
        }
        let spec = eig_general(&sum)?;
        if spec.is_hurwitz() {
            let pm = lyapunov_solve(&sum, &Matrix::identity(n))?;
            return Ok(Some(StableCombination {
                weights,
                p: pm.to_rows(),
                abscissa: spec.abscissa(),
                grid,
            }));
        }
    }
    Ok(None)
}

/// Sign conditions on piece regions shared by the piecewise-quadratic and pointwise-max families.
fn region_conditions(
    prefix: &str,
    v: &Pwsclf,
    a: &[Matrix],
    samples: usize,
    continuity: bool,
) -> Result<CertReport, CertError> {
    let n = v.dimension();
    let m = v.piece_count();
    let p: Vec<Matrix> = (0..m)
        .map(|j| v.piece_matrix(j).expect("quadratic pieces").clone())
        .collect();
    let lie: Vec<Vec<Matrix>> = p
        .iter()
        .map(|pj| a.iter().map(|ai| Matrix::lyapunov_form(ai, pj)).collect())
        .collect();
    let dirs = unit_directions(n, samples);

    let mut seen = vec![false; m];
    let mut positive = Tally::new(format!("{prefix}.positive"), true);
    let mut decrease = Tally::new(format!("{prefix}.decrease"), true);
    for x in &dirs {
        if let Some(j) = v.interior_piece(x) {
            seen[j] = true;
        }
        for j in v.active_pieces(x) {
            let vj = p[j].quad_form(x);
            positive.observe(vj, 1.0 + vj.abs(), |g| {
                Witness::at(x, g, format!("piece {}: xᵀP_jx = {vj:e}", j + 1))
            });
            let vals: Vec<f64> = lie[j].iter().map(|l| l.quad_form(x)).collect();
            let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let scale = 1.0 + vals.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            decrease.observe(-best, scale, |g| {
                Witness::at(x, g, format!("piece {}: min_i xᵀ(A_iᵀP_j + P_jA_i)x = {best:e}", j + 1))
            });
        }
    }

    let boundary = piece_boundary_directions(v, search_count(n, samples));
    let mut checks = vec![positive.finish(), decrease.finish()];
    if continuity {
        let mut cont = Tally::new(format!("{prefix}.continuity"), false);
        for bp in &boundary {
            let (j, k) = bp.pieces;
            let (vj, vk) = (p[j].quad_form(&bp.x), p[k].quad_form(&bp.x));
            cont.observe(-(vj - vk).abs(), 1.0 + vj.abs().max(vk.abs()), |g| {
                Witness::at(&bp.x, g, format!("V_{} = {vj:e}, V_{} = {vk:e}", j + 1, k + 1))
            });
        }
        let mut r = cont.finish();
        if boundary.is_empty() {
            r.notes.push("vacuous: no piece boundary found".into());
        }
        checks.push(r);
    }

    // ∀j ∃k: xᵀ(A_iᵀP_k + P_kA_i)x < 0 on sampled ∂Ω_j for every mode i
    let mut bnd = Tally::new(format!("{prefix}.boundary_decrease"), true);
    let mut notes = Vec::new();
    for j in 0..m {
        let pts: Vec<&Vec<f64>> = boundary
            .iter()
            .filter(|b| b.pieces.0 == j || b.pieces.1 == j)
            .map(|b| &b.x)
            .collect();
        if pts.is_empty() {
            notes.push(format!(
                "piece {}: boundary empty at the sampled resolution, vacuous",
                j + 1
            ));
            continue;
        }
        let mut best: Option<(f64, f64, usize, usize, usize)> = None;
        for k in 0..m {
            let mut worst = (f64::NEG_INFINITY, 1.0, 0, 0);
            for (pi, x) in pts.iter().enumerate() {
                for (i, l) in lie[k].iter().enumerate() {
                    let val = l.quad_form(x);
                    if val > worst.0 {
                        worst = (val, 1.0 + val.abs(), pi, i);
                    }
                }
            }
            if best.map_or(true, |b| worst.0 < b.0) {
                best = Some((worst.0, worst.1, worst.2, worst.3, k));
            }
        }
        let (val, scale, pi, i, k) = best.expect("at least one piece");
        let x = pts[pi];
        bnd.observe(-val, scale, |g| {
            Witness::at(
                x,
                g,
                format!(
                    "piece {}: best k = {} still has xᵀ(A_iᵀP_k + P_kA_i)x = {val:e} for mode {}",
                    j + 1,
                    k + 1,
                    i + 1
                ),
            )
        });
    }
    let mut r = bnd.finish();
    r.notes.extend(notes);
    checks.push(r);

    let mut report = CertReport::group(prefix, checks);
    for (j, s) in seen.iter().enumerate() {
        if !s && m > 1 {
            report.notes.push(format!(
                "region of piece {} is empty at the sampled resolution; its conditions hold vacuously",
                j + 1
            ));
        }
    }
    report.notes.push(format!(
        "{} unit directions, {} boundary directions",
        dirs.len(),
        boundary.len()
    ));
    Ok(report)
}

/// Largest-region style conditions for a piecewise-quadratic CLF on its `H` regions:
/// piecewise positivity, piecewise min-derivative negativity, continuity across
/// boundaries, and a common decreasing piece on each region boundary.
pub fn check_largest_region_conditions(
    v: &Pwsclf,
    sys: &SwitchedSystem,
    sphere_samples: usize,
) -> Result<CertReport, CertError> {
    let a = linear(sys)?;
    check_dims("CLF", sys.dimension(), v.dimension())?;
    if !matches!(v.kind(), ClfKind::PiecewiseQuadratic { .. }) {
        return Err(CertError::WrongKind {
            expected: "piecewise_quadratic",
            actual: v.kind_name(),
        });
    }
    region_conditions("region", v, &a, sphere_samples, true)
}

/// The same family of conditions for a pointwise-maximum CLF on its max-induced partition.
pub fn check_pointwise_max_conditions(
    v: &Pwsclf,
    sys: &SwitchedSystem,
    sphere_samples: usize,
) -> Result<CertReport, CertError> {
    let a = linear(sys)?;
    check_dims("CLF", sys.dimension(), v.dimension())?;
    if !matches!(v.kind(), ClfKind::PointwiseMax { .. }) {
        return Err(CertError::WrongKind {
            expected: "pointwise_max",
            actual: v.kind_name(),
        });
    }
    region_conditions("max", v, &a, sphere_samples, false)
}

/// Which family of matrix inequalities a certificate targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BmiFamily {
    /// Piecewise quadratic on `H` regions.
    PiecewiseQuadratic,
    /// Pointwise maximum; regions come from the `P_j` themselves.
    PointwiseMax,
}

/// Matrices and multipliers for the piecewise-quadratic and pointwise-max
/// matrix-inequality certificates. Omitted multiplier arrays are zero.
///
/// Index order: `xi[j][k]`, `lambda[i][j][k][t]`, `gamma[j][k]`, `beta[j][k]`,
/// `zeta[i][j][k]`, `alpha[i][j]`, with `i` a mode and `j, k, t` pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmiCertificate {
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "H", default)]
    pub h: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub xi: Vec<Vec<f64>>,
    #[serde(default)]
    pub lambda: Vec<Vec<Vec<Vec<f64>>>>,
    pub eta1: f64,
    pub eta2: f64,
    #[serde(default)]
    pub gamma: Vec<Vec<f64>>,
    #[serde(default)]
    pub beta: Vec<Vec<f64>>,
    #[serde(default)]
    pub zeta: Vec<Vec<Vec<f64>>>,
    pub alpha: Vec<Vec<f64>>,
}

fn shape2(name: &str, v: &[Vec<f64>], a: usize, b: usize) -> Result<Vec<Vec<f64>>, CertError> {
    if v.is_empty() {
        return Ok(vec![vec![0.0; b]; a]);
    }
    if v.len() != a || v.iter().any(|r| r.len() != b) {
        return Err(CertError::Shape(format!("{name} must be {a}×{b}")));
    }
    Ok(v.to_vec())
}

fn shape3(name: &str, v: &[Vec<Vec<f64>>], a: usize, b: usize, c: usize) -> Result<Vec<Vec<Vec<f64>>>, CertError> {
    if v.is_empty() {
        return Ok(vec![vec![vec![0.0; c]; b]; a]);
    }
    if v.len() != a || v.iter().any(|r| r.len() != b || r.iter().any(|s| s.len() != c)) {
        return Err(CertError::Shape(format!("{name} must be {a}×{b}×{c}")));
    }
    Ok(v.to_vec())
}

impl BmiCertificate {
    pub fn from_json(document: &str) -> Result<Self, CertError> {
        serde_json::from_str(document).map_err(|e| CertError::Model(ModelError::from_json(e)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

fn matrix_check(
    name: String,
    assembled: &Matrix,
    scale: f64,
    lower: bool,
    strict: bool,
) -> Result<CertReport, CertError> {
    let (eig, vec) = symmetric_margin(assembled, lower)?;
    let margin = if lower { eig } else { -eig };
    let band = MATRIX_MARGIN * scale;
    let verdict = if strict {
        if margin > band {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    } else if margin >= -band {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let mut r = CertReport::leaf(name, verdict);
    r.worst_margin = Some(margin);
    r.samples_used = 1;
    r.tolerances.insert("matrix_margin".into(), band);
    if verdict == Verdict::Fail {
        r.witnesses.push(Witness {
            point: None,
            matrix: Some(assembled.to_rows()),
            vector: Some(vec),
            magnitude: -margin,
            detail: format!(
                "{} eigenvalue {eig:e} of the assembled matrix",
                if lower { "smallest" } else { "largest" }
            ),
        });
    }
    Ok(r)
}

/// Assembles every matrix inequality of the certificate and checks it by symmetric eigenvalues.
///
/// Ids: `bmi.positive[j]` (`P_j − η₁I − Σ_k γ_jk(R_j − R_k) ⪰ 0`),
/// `bmi.decrease[j]` (`Ā_jᵀP_j + P_jĀ_j + η₂P_j − Σ_k β_jk(R_k − R_j) ⪯ 0`),
/// `bmi.continuity[j,k]` (`P_j = P_k + ξ_jk(H_j − H_k)`, piecewise-quadratic only),
/// `bmi.boundary[i,j]` (`Σ_k ζ_ijk(A_iᵀP_k + P_kA_i) + Σ_kt λ_ijkt(R_j − R_t) ≺ 0`),
/// where `R = H` for piecewise-quadratic certificates and `R = P` for pointwise-max ones.
pub fn verify_bmi_certificate(
    cert: &BmiCertificate,
    sys: &SwitchedSystem,
    family: BmiFamily,
) -> Result<CertReport, CertError> {
    let a = linear(sys)?;
    let n = sys.dimension();
    let big_m = a.len();
    let m = cert.p.len();
    if m == 0 {
        return Err(CertError::Shape("P must list at least one matrix".into()));
    }
    let mats = |name: &str, raw: &[Vec<Vec<f64>>]| -> Result<Vec<Matrix>, CertError> {
        raw.iter()
            .enumerate()
            .map(|(j, r)| {
                let mtx = Matrix::from_rows(r).map_err(|e| CertError::Shape(format!("{name}[{j}]: {e}")))?;
                if mtx.rows() != n || mtx.cols() != n {
                    return Err(CertError::Shape(format!("{name}[{j}] must be {n}×{n}")));
                }
                Ok(mtx)
            })
            .collect()
    };
    let p = mats("P", &cert.p)?;
    let h = mats("H", &cert.h)?;
    let regions = match family {
        BmiFamily::PiecewiseQuadratic => {
            if h.len() != m {
                return Err(CertError::Shape(format!("H must list {m} matrices")));
            }
            h.clone()
        }
        BmiFamily::PointwiseMax => {
            if !h.is_empty() {
                return Err(CertError::Shape(
                    "H must be empty for a pointwise-max certificate".into(),
                ));
            }
            p.clone()
        }
    };
    let xi = shape2("xi", &cert.xi, m, m)?;
    let gamma = shape2("gamma", &cert.gamma, m, m)?;
    let beta = shape2("beta", &cert.beta, m, m)?;
    let alpha = shape2("alpha", &cert.alpha, big_m, m)?;
    let zeta = shape3("zeta", &cert.zeta, big_m, m, m)?;
    let lambda = if cert.lambda.is_empty() {
        vec![vec![vec![vec![0.0; m]; m]; m]; big_m]
    } else {
        if cert.lambda.len() != big_m {
            return Err(CertError::Shape(format!("lambda must be {big_m}×{m}×{m}×{m}")));
        }
        cert.lambda
            .iter()
            .map(|l| shape3("lambda", l, m, m, m))
            .collect::<Result<Vec<_>, _>>()?
    };

    // sign and simplex constraints on the multipliers
    let mut mult = Tally::new("bmi.multipliers", false);
    let mut sign = |value: f64, name: String, strict: bool| {
        let witness = |g: f64| Witness {
            point: None,
            matrix: None,
            vector: None,
            magnitude: g,
            detail: format!("{name} = {value:e} violates its sign constraint"),
        };
        if strict && value <= 0.0 {
            mult.violate(witness(-value));
        } else {
            mult.observe(value, 1.0 + value.abs(), witness);
        }
    };
    sign(cert.eta1, "eta1".into(), true);
    sign(cert.eta2, "eta2".into(), true);
    for j in 0..m {
        for k in 0..m {
            sign(gamma[j][k], format!("gamma[{j}][{k}]"), false);
            sign(beta[j][k], format!("beta[{j}][{k}]"), false);
        }
    }
    for i in 0..big_m {
        for j in 0..m {
            for k in 0..m {
                sign(zeta[i][j][k], format!("zeta[{i}][{j}][{k}]"), false);
            }
            sign(alpha[i][j], format!("alpha[{i}][{j}]"), false);
            sign(1.0 - alpha[i][j], format!("1 - alpha[{i}][{j}]"), false);
        }
    }
    for j in 0..m {
        let s: f64 = (0..big_m).map(|i| alpha[i][j]).sum();
        sign(-(s - 1.0).abs(), format!("|sum_i alpha[i][{j}] - 1|"), false);
    }
    let mut checks = vec![mult.finish()];

    let scale_of = |ms: &[&Matrix]| 1.0 + ms.iter().map(|m| m.max_abs()).fold(0.0, f64::max);
    for j in 0..m {
        let mut lhs = p[j].sub(&Matrix::identity(n).scale(cert.eta1));
        for k in 0..m {
            lhs = lhs.plus(&regions[j].sub(&regions[k]), -gamma[j][k]);
        }
        let s = scale_of(&[&p[j], &lhs]);
        checks.push(matrix_check(format!("bmi.positive[{}]", j + 1), &lhs, s, true, false)?);
    }
    for j in 0..m {
        let mut abar = Matrix::zeros(n, n);
        for i in 0..big_m {
            abar = abar.plus(&a[i], alpha[i][j]);
        }
        let mut lhs = Matrix::lyapunov_form(&abar, &p[j]).plus(&p[j], cert.eta2);
        for k in 0..m {
            lhs = lhs.plus(&regions[k].sub(&regions[j]), -beta[j][k]);
        }
        let s = scale_of(&[&p[j], &lhs]);
        checks.push(matrix_check(format!("bmi.decrease[{}]", j + 1), &lhs, s, false, false)?);
    }
    if family == BmiFamily::PiecewiseQuadratic {
        for j in 0..m {
            for k in 0..m {
                if j == k {
                    continue;
                }
                let diff = p[j].sub(&p[k]).plus(&h[j].sub(&h[k]), -xi[j][k]);
                let err = diff.max_abs();
                let band = MATRIX_MARGIN * scale_of(&[&p[j], &p[k]]);
                let ok = err <= band;
                let mut r = CertReport::leaf(
                    format!("bmi.continuity[{},{}]", j + 1, k + 1),
                    if ok { Verdict::Pass } else { Verdict::Fail },
                );
                r.worst_margin = Some(-err);
                r.samples_used = 1;
                r.tolerances.insert("matrix_margin".into(), band);
                if !ok {
                    r.witnesses.push(Witness {
                        point: None,
                        matrix: Some(diff.to_rows()),
                        vector: None,
                        magnitude: err,
                        detail: "largest entry of P_j - P_k - xi_jk (H_j - H_k)".into(),
                    });
                }
                checks.push(r);
            }
        }
    }
    for i in 0..big_m {
        for j in 0..m {
            let mut lhs = Matrix::zeros(n, n);
            for k in 0..m {
                lhs = lhs.plus(&Matrix::lyapunov_form(&a[i], &p[k]), zeta[i][j][k]);
                for t in 0..m {
                    lhs = lhs.plus(&regions[j].sub(&regions[t]), lambda[i][j][k][t]);
                }
            }
            let s = scale_of(&[&lhs]);
            checks.push(matrix_check(
                format!("bmi.boundary[{},{}]", i + 1, j + 1),
                &lhs,
                s,
                false,
                true,
            )?);
        }
    }
    Ok(CertReport::group("bmi", checks))
}

/// Per-piece derivative table at a point and the two minimizer notions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgminDiagnostic {
    pub point: Vec<f64>,
    /// `(j, [DV_j(x; f_i(x)) for every i])` for `j ∈ J(x)`.
    pub table: Vec<(usize, Vec<f64>)>,
    pub table_min: f64,
    /// `(j, i)` pairs attaining the table minimum.
    pub table_argmin: Vec<(usize, usize)>,
    /// Union over `j ∈ J(x)` of per-piece minimizing modes (the law's tie set).
    pub law_modes: Vec<usize>,
    /// Minimum of the true one-sided derivatives `DV(x; f_i(x))`.
    pub one_sided_min: f64,
    pub one_sided_modes: Vec<usize>,
}

pub fn argmin_diagnostic(v: &Pwsclf, sys: &SwitchedSystem, x: &[f64]) -> Result<ArgminDiagnostic, CertError> {
    check_dims("point", sys.dimension(), x.len())?;
    check_dims("CLF", sys.dimension(), v.dimension())?;
    let fields = sys.fields(x);
    let table: Vec<(usize, Vec<f64>)> = v
        .active_pieces(x)
        .into_iter()
        .map(|j| {
            let g = v.piece_gradient_unchecked(j, x);
            (j, fields.iter().map(|f| dot(&g, f)).collect())
        })
        .collect();
    let tol = |m: f64| 1e-12 * (1.0 + m.abs());
    let table_min = table
        .iter()
        .flat_map(|(_, r)| r.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let mut table_argmin = Vec::new();
    let mut law_modes = Vec::new();
    for (j, row) in &table {
        let rmin = row.iter().copied().fold(f64::INFINITY, f64::min);
        for (i, &d) in row.iter().enumerate() {
            if d <= table_min + tol(table_min) {
                table_argmin.push((*j, i));
            }
            if d <= rmin + tol(rmin) {
                law_modes.push(i);
            }
        }
    }
    law_modes.sort_unstable();
    law_modes.dedup();
    let d = mode_derivatives(v, sys, x)?;
    let one_sided_min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let one_sided_modes = (0..d.len())
        .filter(|&i| d[i] <= one_sided_min + tol(one_sided_min))
        .collect();
    Ok(ArgminDiagnostic {
        point: x.to_vec(),
        table,
        table_min,
        table_argmin,
        law_modes,
        one_sided_min,
        one_sided_modes,
    })
}
