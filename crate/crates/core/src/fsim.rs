//! Closed-loop simulation: hysteresis relay and event-driven Filippov integration.
//!
//! Both integrators use fixed-step classical RK4 and are bit-for-bit
//! deterministic. The Filippov integrator locates crossings of the supplied
//! switching surfaces by bisection and follows attractive surfaces with the
//! convex-combination (sliding) field.

use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clf::Pwsclf;
use crate::linalg::{dot, norm, norm_sq};
use crate::model::SwitchedSystem;
use crate::switchlaw::{coefficients_at, LawError, RegionLaw, SlidingSurface, SwitchingLaw, SwitchingRule};

/// Mode column value of a Filippov sliding sample.
pub const SLIDING_MARKER: usize = usize::MAX;
/// Relay samples count as sliding when this many switches fall in the trailing window.
pub const RELAY_CHATTER_SWITCHES: usize = 2;
/// Trailing window length, in steps, for the relay sliding flag.
pub const RELAY_CHATTER_WINDOW: usize = 50;
const BISECTION_LIMIT: usize = 200;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error("initial state has dimension {actual}, system expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("state became non-finite at t = {t}; last finite sample at t = {}", last.t)]
    Overflow { t: f64, last: Box<Sample> },
    #[error(transparent)]
    Law(#[from] LawError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Relay,
    Filippov,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub step: f64,
    pub t_final: f64,
    pub hysteresis: f64,
    pub mode: SimMode,
    pub event_tolerance: f64,
    pub divergence_bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step: 1e-3,
            t_final: 10.0,
            hysteresis: 0.01,
            mode: SimMode::Relay,
            event_tolerance: 1e-10,
            divergence_bound: 1e6,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be positive");
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad("t_final must be positive");
        }
        if self.step > self.t_final {
            return bad("step must not exceed t_final");
        }
        if !(self.hysteresis >= 0.0 && self.hysteresis.is_finite()) {
            return bad("hysteresis must be non-negative");
        }
        if !(self.event_tolerance > 0.0 && self.event_tolerance < self.step) {
            return bad("event_tolerance must be positive and below step");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    /// Active mode, or [`SLIDING_MARKER`] on a Filippov sliding segment.
    pub mode: usize,
    pub sliding: bool,
    pub alpha: Option<f64>,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub outcome: Outcome,
    pub switches: usize,
    /// Crossings where sliding coefficients hit a tangency and a relay step was used.
    pub tangency_fallbacks: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has an initial sample")
    }

    pub fn sliding_fraction(&self) -> f64 {
        let n = self.samples.len().saturating_sub(1);
        if n == 0 {
            return 0.0;
        }
        self.samples[1..].iter().filter(|s| s.sliding).count() as f64 / n as f64
    }

    /// Largest state norm over the trajectory.
    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| norm(&s.x)).fold(0.0, f64::max)
    }

    /// Linear state interpolation at time `t`, clamped to the sampled range.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let s = &self.samples;
        let k = s.partition_point(|p| p.t <= t);
        if k == 0 {
            return s[0].x.clone();
        }
        if k == s.len() {
            return s[k - 1].x.clone();
        }
        let (a, b) = (&s[k - 1], &s[k]);
        let w = (t - a.t) / (b.t - a.t);
        a.x.iter().zip(&b.x).map(|(u, v)| u + w * (v - u)).collect()
    }

    /// Least-squares slope of `ln|x_c|` against `t` over the Filippov sliding samples.
    pub fn sliding_rate(&self, component: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|s| s.sliding && s.x[component] != 0.0)
            .map(|s| (s.t, s.x[component].abs().ln()))
            .collect();
        fit_slope(&pts)
    }
}

/// Least-squares slope through `(t, y)` pairs; `None` with fewer than two distinct `t`.
pub fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// The closed-loop switching rule being simulated.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    Law(&'a SwitchingLaw),
    Region(&'a RegionLaw),
}

impl<'a> Controller<'a> {
    pub fn rule(&self) -> &'a dyn SwitchingRule {
        match *self {
            Controller::Law(l) => l,
            Controller::Region(r) => r,
        }
    }

    pub fn system(&self) -> &'a SwitchedSystem {
        self.rule().system()
    }

    pub fn clf(&self) -> Option<&'a Pwsclf> {
        match *self {
            Controller::Law(l) => Some(l.clf()),
            Controller::Region(_) => None,
        }
    }

    fn v(&self, x: &[f64]) -> f64 {
        match self.clf() {
            Some(c) => c.value_unchecked(x),
            None => norm_sq(x),
        }
    }

    /// Analytic switching surfaces of the rule.
    pub fn surfaces(&self) -> Vec<SlidingSurface> {
        match *self {
            Controller::Law(l) => l.analytic_surfaces(),
            Controller::Region(r) => r.surfaces(),
        }
    }
}

fn rk4(x: &[f64], h: f64, f: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let at = |x: &[f64], k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k1 = f(x);
    let k2 = f(&at(x, &k1, 0.5 * h));
    let k3 = f(&at(x, &k2, 0.5 * h));
    let k4 = f(&at(x, &k3, h));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn mode_step(sys: &SwitchedSystem, mode: usize, x: &[f64], h: f64) -> Vec<f64> {
    rk4(x, h, &mut |y| sys.field(mode, y))
}

fn check_start(ctl: &Controller, x0: &[f64], cfg: &SimConfig) -> Result<(), SimError> {
    cfg.validate()?;
    let n = ctl.system().dimension();
    if x0.len() != n {
        return Err(SimError::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Config("initial state must be finite".into()));
    }
    Ok(())
}

/// Per-step stepping state shared by both integrators.
struct Recorder<'c> {
    ctl: Controller<'c>,
    cfg: SimConfig,
    samples: Vec<Sample>,
}

enum Push {
    Continue,
    Diverged,
}

impl<'c> Recorder<'c> {
    fn push(&mut self, t: f64, x: Vec<f64>, mode: usize, sliding: bool, alpha: Option<f64>) -> Result<Push, SimError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Overflow {
                t,
                last: Box::new(self.samples.last().expect("initial sample").clone()),
            });
        }
        let v = self.ctl.v(&x);
        let diverged = norm(&x) > self.cfg.divergence_bound;
        self.samples.push(Sample {
            t,
            x,
            mode,
            sliding,
            alpha,
            v,
        });
        Ok(if diverged { Push::Diverged } else { Push::Continue })
    }
}

/// Hysteresis state of a relay.
enum Relay {
    /// Switch when the held mode's score exceeds the best score by `Δ·max(|s_σ|, |s_i*|)`.
    Scores,
    /// Held sign per linear surface, flipped when `s_k` passes `∓Δ·‖x‖`.
    Signs(Vec<bool>),
}

/// Fixed-step RK4 with the mode held between relay switches.
pub fn simulate_relay(ctl: Controller, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError> {
    check_start(&ctl, x0, cfg)?;
    let sys = ctl.system();
    let delta = cfg.hysteresis;
    let mut relay = match ctl {
        Controller::Law(_) => Relay::Scores,
        Controller::Region(r) => Relay::Signs(r.signs(x0)),
    };
    let mut sigma = ctl.rule().mode(x0);
    let mut rec = Recorder {
        ctl,
        cfg: *cfg,
        samples: Vec::new(),
    };
    rec.samples.push(Sample {
        t: 0.0,
        x: x0.to_vec(),
        mode: sigma,
        sliding: false,
        alpha: None,
        v: ctl.v(x0),
    });
    let steps = (cfg.t_final / cfg.step).round().max(1.0) as usize;
    let mut x = x0.to_vec();
    let mut recent: VecDeque<usize> = VecDeque::new();
    let mut switches = 0;
    let mut outcome = Outcome::Completed;
    for k in 1..=steps {
        let next = match (&mut relay, ctl) {
            (Relay::Scores, Controller::Law(law)) => {
                let best = law.nu(&x);
                if best != sigma {
                    let s = law.decision_scores(&x);
                    let margin = s[sigma] - s[best];
                    if margin > delta * s[sigma].abs().max(s[best].abs()) {
                        best
                    } else {
                        sigma
                    }
                } else {
                    sigma
                }
            }
            (Relay::Signs(held), Controller::Region(r)) => {
                let band = delta * norm(&x);
                for (h, v) in held.iter_mut().zip(r.switching_values(&x)) {
                    if *h && v < -band {
                        *h = false;
                    } else if !*h && v > band {
                        *h = true;
                    }
                }
                r.mode_for_signs(held)
            }
            _ => unreachable!("relay state matches controller"),
        };
        if next != sigma {
            sigma = next;
            switches += 1;
            recent.push_back(k);
        }
        while recent.front().is_some_and(|&s| s + RELAY_CHATTER_WINDOW <= k) {
            recent.pop_front();
        }
        x = mode_step(sys, sigma, &x, cfg.step);
        let t = k as f64 * cfg.step;
        let chattering = recent.len() >= RELAY_CHATTER_SWITCHES;
        if let Push::Diverged = rec.push(t, x.clone(), sigma, chattering, None)? {
            outcome = Outcome::Diverged;
            break;
        }
    }
    Ok(Trajectory {
        samples: rec.samples,
        outcome,
        switches,
        tangency_fallbacks: 0,
    })
}

struct Sliding {
    index: usize,
    surface: SlidingSurface,
}

/// Event-driven Filippov integration over the given switching surfaces.
///
/// A sign change of a surface counts as an event only when the rule's mode
/// differs across it. Crossing times are bisected to `event_tolerance`; the
/// state just past the surface is kept. Attractive surfaces with `α ∈ (0,1)`
/// are followed with the sliding field plus one Newton projection per step.
pub fn simulate_filippov(
    ctl: Controller,
    surfaces: &[SlidingSurface],
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    check_start(&ctl, x0, cfg)?;
    let sys = ctl.system();
    let rule = ctl.rule();
    let mut sigma = rule.mode(x0);
    let mut rec = Recorder {
        ctl,
        cfg: *cfg,
        samples: Vec::new(),
    };
    rec.samples.push(Sample {
        t: 0.0,
        x: x0.to_vec(),
        mode: sigma,
        sliding: false,
        alpha: None,
        v: ctl.v(x0),
    });
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut sliding: Option<Sliding> = None;
    let mut skip: Option<usize> = None;
    let mut switches = 0;
    let mut fallbacks = 0;
    let mut outcome = Outcome::Completed;
    let end = cfg.t_final - 0.5 * cfg.event_tolerance;

    while t < end {
        let h = cfg.step.min(cfg.t_final - t);
        if let Some(sl) = &sliding {
            match coefficients_at(&sl.surface, sys, &x) {
                Ok(c) if c.attractive && c.sliding => {
                    let mut last = c.velocity.clone();
                    let surf = &sl.surface;
                    let y = rk4(&x, h, &mut |y| match coefficients_at(surf, sys, y) {
                        Ok(c) => {
                            last = c.velocity.clone();
                            c.velocity
                        }
                        Err(_) => last.clone(),
                    });
                    x = surf.form.project(&y);
                    t += h;
                    let alpha = coefficients_at(surf, sys, &x).ok().map(|c| c.alpha);
                    if let Push::Diverged = rec.push(t, x.clone(), SLIDING_MARKER, true, alpha.or(Some(c.alpha)))? {
                        outcome = Outcome::Diverged;
                        break;
                    }
                    continue;
                }
                other => {
                    let (p, q) = sl.surface.side_modes.expect("resolved on entry");
                    let n = sl.surface.gradient(&x);
                    sigma = match other {
                        Ok(_) if dot(&n, &sys.field(p, &x)) <= 0.0 => p,
                        Ok(_) => q,
                        Err(_) => rule.mode(&x),
                    };
                    skip = Some(sl.index);
                    sliding = None;
                    switches += 1;
                }
            }
        }

        let y = mode_step(sys, sigma, &x, h);
        let this_skip = skip.take();
        let new_mode = rule.mode(&y);
        if new_mode == sigma {
            x = y;
            t += h;
            if let Push::Diverged = rec.push(t, x.clone(), sigma, false, None)? {
                outcome = Outcome::Diverged;
                break;
            }
            continue;
        }

        // earliest sign change among the surfaces
        let mut event: Option<(f64, usize)> = None;
        for (k, s) in surfaces.iter().enumerate() {
            if Some(k) == this_skip {
                continue;
            }
            let s0 = s.value(&x);
            if s0 * s.value(&y) > 0.0 || s0 == 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (0.0, h);
            let mut it = 0;
            while hi - lo > cfg.event_tolerance && it < BISECTION_LIMIT {
                let mid = 0.5 * (lo + hi);
                if s0 * s.value(&mode_step(sys, sigma, &x, mid)) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                it += 1;
            }
            if event.map_or(true, |(best, _)| hi < best) {
                event = Some((hi, k));
            }
        }

        let Some((tau, k)) = event else {
            // mode change across a boundary not covered by the surfaces
            x = y;
            t += h;
            sigma = new_mode;
            switches += 1;
            if let Push::Diverged = rec.push(t, x.clone(), sigma, false, None)? {
                outcome = Outcome::Diverged;
                break;
            }
            continue;
        };

        let xc = mode_step(sys, sigma, &x, tau);
        t += tau;
        let surface = surfaces[k].resolved(rule, &xc);
        let (mode, slide, alpha) = match coefficients_at(&surface, sys, &xc) {
            Ok(c) if c.attractive && c.sliding && c.alpha > 0.0 && c.alpha < 1.0 => {
                x = surface.form.project(&xc);
                sliding = Some(Sliding { index: k, surface });
                (SLIDING_MARKER, true, Some(c.alpha))
            }
            Ok(_) => {
                x = xc;
                sigma = rule.mode(&x);
                (sigma, false, None)
            }
            Err(_) => {
                fallbacks += 1;
                let band = cfg.event_tolerance;
                x = xc;
                let s_now = surface.value(&x);
                sigma = if s_now.abs() > band || surface.side_modes.is_none() {
                    rule.mode(&x)
                } else {
                    sigma
                };
                (sigma, false, None)
            }
        };
        switches += 1;
        if let Push::Diverged = rec.push(t, x.clone(), mode, slide, alpha)? {
            outcome = Outcome::Diverged;
            break;
        }
    }
    Ok(Trajectory {
        samples: rec.samples,
        outcome,
        switches,
        tangency_fallbacks: fallbacks,
    })
}

/// Runs the integrator selected by `cfg.mode`; Filippov mode uses the controller's analytic surfaces.
pub fn simulate(ctl: Controller, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError> {
    match cfg.mode {
        SimMode::Relay => simulate_relay(ctl, x0, cfg),
        SimMode::Filippov => simulate_filippov(ctl, &ctl.surfaces(), x0, cfg),
    }
}

/// `V(x(t))` along a trajectory.
pub fn lyapunov_trace(v: &Pwsclf, traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.samples.iter().map(|s| (s.t, v.value_unchecked(&s.x))).collect()
}

/// `%.{digits}g`-style formatting, independent of locale.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `t,x1,...,xn,mode,sliding,alpha,V`; modes are one-based, 0 marks Filippov sliding.
pub fn write_csv<W: Write>(traj: &Trajectory, out: &mut W) -> io::Result<()> {
    let n = traj.samples.first().map_or(0, |s| s.x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["mode", "sliding", "alpha", "V"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for s in &traj.samples {
        let mut row = vec![format_sig(s.t, 12)];
        row.extend(s.x.iter().map(|v| format_sig(*v, 12)));
        row.push(if s.mode == SLIDING_MARKER {
            "0".into()
        } else {
            (s.mode + 1).to_string()
        });
        row.push(if s.sliding { "1" } else { "0" }.into());
        row.push(s.alpha.map(|a| format_sig(a, 12)).unwrap_or_default());
        row.push(format_sig(s.v, 12));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn format_matches_printf_g() {
        assert_eq!(format_sig(0.0, 12), "0");
        assert_eq!(format_sig(1.0, 12), "1");
        assert_eq!(format_sig(-0.5, 12), "-0.5");
        assert_eq!(format_sig(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(format_sig(2.0 / 3.0 * 1e-7, 12), "6.66666666667e-08");
        assert_eq!(format_sig(123456789012345.0, 12), "1.23456789012e+14");
        assert_eq!(format_sig(9.9999999999996, 12), "10");
        assert_eq!(format_sig(1e-5, 12), "1e-05");
        assert_eq!(format_sig(1e-4, 12), "0.0001");
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 3.0 * k as f64 + 1.0)).collect();
        assert!((fit_slope(&pts).unwrap() - 3.0).abs() < 1e-12);
        assert!(fit_slope(&pts[..1]).is_none());
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::default();
        assert!(c.validate().is_ok());
        c.event_tolerance = c.step;
        assert!(c.validate().is_err());
        let c = SimConfig {
            step: 2.0,
            t_final: 1.0,
            ..SimConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_field_is_constant() {
        let sys = SwitchedSystem::linear(vec![Matrix::zeros(2, 2)]).unwrap();
        let law = RegionLaw::from_json(sys, r#"{"surfaces": [[1, 0]], "rules": [{"signs": "*", "mode": 1}]}"#).unwrap();
        let cfg = SimConfig {
            t_final: 1.0,
            step: 0.1,
            ..SimConfig::default()
        };
        for mode in [SimMode::Relay, SimMode::Filippov] {
            let traj = simulate(Controller::Region(&law), &[0.3, -0.4], &SimConfig { mode, ..cfg }).unwrap();
            assert_eq!(traj.samples.len(), 11);
            assert!(traj.samples.iter().all(|s| s.x == vec![0.3, -0.4]));
            assert!(traj.samples.windows(2).all(|w| w[0].t < w[1].t));
        }
    }

    #[test]
    fn overflow_reports_last_sample() {
        let sys = SwitchedSystem::linear(vec![Matrix::diag(&[1e200, 1e200])]).unwrap();
        let law = RegionLaw::from_json(sys, r#"{"surfaces": [[1, 0]], "rules": [{"signs": "*", "mode": 1}]}"#).unwrap();
        let cfg = SimConfig {
            divergence_bound: f64::INFINITY,
            ..SimConfig::default()
        };
        match simulate_relay(Controller::Region(&law), &[1e200, 1e200], &cfg) {
            Err(SimError::Overflow { last, .. }) => assert_eq!(last.t, 0.0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn csv_layout() {
        let traj = Trajectory {
            samples: vec![
                Sample {
                    t: 0.0,
                    x: vec![1.0, -2.0],
                    mode: 0,
                    sliding: false,
                    alpha: None,
                    v: 5.0,
                },
                Sample {
                    t: 0.1,
                    x: vec![0.0, 2.5],
                    mode: SLIDING_MARKER,
                    sliding: true,
                    alpha: Some(0.5),
                    v: 6.25,
                },
            ],
            outcome: Outcome::Completed,
            switches: 1,
            tangency_fallbacks: 0,
        };
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,x1,x2,mode,sliding,alpha,V\n0,1,-2,1,0,,5\n0.1,0,2.5,0,1,0.5,6.25\n"
        );
    }
}
