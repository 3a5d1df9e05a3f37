//! Scripted runs of the bundled examples with embedded expectations.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use psclf_core::certify::{self, argmin_diagnostic, Verdict};
use psclf_core::clf::{poly, RateFunction};
use psclf_core::fixtures;
use psclf_core::fsim::{self, lyapunov_trace, Controller, Outcome, SimConfig, SimMode, Trajectory};
use psclf_core::linalg::{dot, norm, norm_sq};

use crate::ExampleName;

/// Where an expected value comes from.
#[derive(Serialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// A value or behavior stated alongside the example data.
    Stated,
    /// A value derived by hand from the example data.
    Derived,
}

#[derive(Serialize, Debug, Clone)]
pub struct Expectation {
    pub name: String,
    pub source: Source,
    pub expected: Value,
    pub computed: Value,
    pub pass: bool,
}

#[derive(Serialize, Debug, Clone)]
pub struct Summary {
    pub example: String,
    pub pass: bool,
    pub expectations: Vec<Expectation>,
    /// File names written into the output directory.
    pub outputs: Vec<String>,
}

struct Run<'a> {
    dir: &'a Path,
    expectations: Vec<Expectation>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn expect(&mut self, name: &str, source: Source, expected: Value, computed: Value, pass: bool) {
        self.expectations.push(Expectation {
            name: name.into(),
            source,
            expected,
            computed,
            pass,
        });
    }

    fn file(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents).with_context(|| format!("writing {name}"))?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn trajectory(&mut self, name: &str, traj: &Trajectory) -> Result<()> {
        let mut buf = Vec::new();
        fsim::write_csv(traj, &mut buf)?;
        self.file(name, &String::from_utf8(buf)?)
    }
}

fn cfg(mode: SimMode, step: f64, t_final: f64, hysteresis: f64) -> SimConfig {
    SimConfig {
        step,
        t_final,
        hysteresis,
        mode,
        ..SimConfig::default()
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

pub fn run(name: ExampleName, dir: &Path) -> Result<Summary> {
    let mut r = Run {
        dir,
        expectations: Vec::new(),
        outputs: Vec::new(),
    };
    let label = match name {
        ExampleName::Ex1 => {
            ex1(&mut r)?;
            "ex1"
        }
        ExampleName::Ex2 => {
            ex2(&mut r)?;
            "ex2"
        }
        ExampleName::Ex3 => {
            ex3(&mut r)?;
            "ex3"
        }
        ExampleName::Nonlinear => {
            nonlinear(&mut r)?;
            "nonlinear"
        }
    };
    Ok(Summary {
        example: label.into(),
        pass: r.expectations.iter().all(|e| e.pass),
        expectations: r.expectations,
        outputs: r.outputs,
    })
}

fn ex1(r: &mut Run) -> Result<()> {
    r.file("system.json", fixtures::EX1_SYSTEM)?;
    r.file("region_law.json", fixtures::EX1_REGION_LAW)?;
    let law = fixtures::ex1_law();
    let traj = fsim::simulate(
        Controller::Region(&law),
        &[0.5, -2.0],
        &cfg(SimMode::Filippov, 1e-3, 2.0, 0.0),
    )?;
    r.trajectory("filippov.csv", &traj)?;
    let capture = traj.samples.iter().find(|s| s.sliding);
    r.expect(
        "capture onto x1 = 0 with x2 > 0",
        Source::Derived,
        json!(true),
        json!(capture.map(|s| s.x.clone())),
        capture.is_some_and(|s| s.x[0].abs() < 1e-8 && s.x[1] > 0.0),
    );
    let alpha = capture.and_then(|s| s.alpha);
    r.expect(
        "sliding coefficient at capture",
        Source::Derived,
        json!(0.5),
        json!(alpha),
        alpha.is_some_and(|a| (a - 0.5).abs() < 1e-9),
    );
    let rate = traj.sliding_rate(1);
    r.expect(
        "exponential rate of x2 while sliding",
        Source::Derived,
        json!([1.9, 2.1]),
        json!(rate),
        rate.is_some_and(|k| (1.9..=2.1).contains(&k)),
    );
    for (delta, file) in [(0.1, "relay_0.1.csv"), (0.01, "relay_0.01.csv")] {
        let c = SimConfig {
            divergence_bound: 100.0,
            ..cfg(SimMode::Relay, 1e-4, 5.0, delta)
        };
        let traj = fsim::simulate(Controller::Region(&law), &[0.5, -2.0], &c)?;
        r.trajectory(file, &traj)?;
        r.expect(
            &format!("relay with hysteresis {delta} leaves |x| <= 100 before t = 5"),
            Source::Stated,
            json!("diverged"),
            json!({ "outcome": format!("{:?}", traj.outcome).to_lowercase(), "t": traj.last().t }),
            traj.outcome == Outcome::Diverged && traj.last().t <= 5.0,
        );
    }
    Ok(())
}

fn ex2(r: &mut Run) -> Result<()> {
    r.file("system.json", fixtures::EX2_SYSTEM)?;
    r.file("region_law.json", fixtures::EX2_REGION_LAW)?;
    let law = fixtures::ex2_law();
    let traj = fsim::simulate(
        Controller::Region(&law),
        &[1.0, 0.2],
        &cfg(SimMode::Filippov, 1e-3, 3.0, 0.0),
    )?;
    r.trajectory("filippov.csv", &traj)?;
    let rate = traj.sliding_rate(0);
    r.expect(
        "exponential rate of x1 while sliding on x2 = 0",
        Source::Derived,
        json!([-3.15, -2.85]),
        json!(rate),
        rate.is_some_and(|k| (-3.15..=-2.85).contains(&k)),
    );
    let traj = fsim::simulate(
        Controller::Region(&law),
        &[0.0, -0.5],
        &cfg(SimMode::Relay, 1e-3, 10.0, 0.1),
    )?;
    r.trajectory("relay.csv", &traj)?;
    let end = norm(&traj.last().x);
    r.expect("relay |x(10)|", Source::Stated, json!("<= 0.1"), json!(end), end <= 0.1);
    Ok(())
}

fn ex3(r: &mut Run) -> Result<()> {
    r.file("system.json", fixtures::EX3_SYSTEM)?;
    r.file("clf.json", fixtures::EX3_CLF)?;
    let sys = fixtures::ex3_system();
    let v = fixtures::ex3_clf();
    let law = fixtures::ex3_law();

    let d = argmin_diagnostic(&v, &sys, &[1.0, 1.0])?;
    let expected = [[-20.0, -20.0 / 3.0, -16.0, 4.0], [-12.0, -20.0, -12.0, 0.0]];
    let table: Vec<Vec<f64>> = d.table.iter().map(|(_, row)| row.clone()).collect();
    let ok = table.len() == 2
        && table
            .iter()
            .zip(&expected)
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12));
    r.expect(
        "derivative table at z = [1, 1]",
        Source::Stated,
        json!(expected),
        json!(table),
        ok,
    );
    let modes: Vec<usize> = d.law_modes.iter().map(|i| i + 1).collect();
    r.expect(
        "table minimum and its modes",
        Source::Stated,
        json!({ "min": -20.0, "modes": [1, 2] }),
        json!({ "min": d.table_min, "modes": modes }),
        (d.table_min + 20.0).abs() <= 1e-12 && modes == [1, 2],
    );
    let hat: Vec<usize> = d.one_sided_modes.iter().map(|i| i + 1).collect();
    r.expect(
        "one-sided minimum and its modes",
        Source::Stated,
        json!({ "min": -12.0, "modes": [1, 3] }),
        json!({ "min": d.one_sided_min, "modes": hat }),
        (d.one_sided_min + 12.0).abs() <= 1e-12 && hat == [1, 3],
    );
    let d2 = argmin_diagnostic(&v, &sys, &[2.0, 2.0])?;
    let scaled = d2
        .table
        .iter()
        .zip(&d.table)
        .all(|((_, a), (_, b))| a.iter().zip(b).all(|(x, y)| (x - 4.0 * y).abs() <= 1e-12));
    r.expect(
        "table at z = [2, 2] is four times the table at [1, 1]",
        Source::Derived,
        json!(true),
        json!(scaled),
        scaled,
    );

    let a1 = sys.linear_matrices().expect("linear")[0].clone();
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let c = if k < 50 {
            0.04 * (k + 1) as f64
        } else {
            -0.04 * (k - 49) as f64
        };
        let x = [c, c];
        let g = v.piece_gradient_unchecked(1, &x);
        let dv = dot(&g, &a1.mul_vec(&x));
        worst = worst.max((dv + 6.0 * norm_sq(&x)).abs() / norm_sq(&x));
    }
    r.expect(
        "DV_2(x; f_1(x)) = -6|x|^2 on 100 points of x1 = x2 (relative error)",
        Source::Stated,
        json!(0.0),
        json!(worst),
        worst <= 1e-9,
    );
    let w = RateFunction::quadratic_norm(1.0)?;
    let sliding = certify::check_sliding_condition(&law, &w, 100)?;
    r.file("sliding_report.json", &sliding.to_json())?;
    r.expect(
        "sliding boundary condition with W = |x|^2",
        Source::Stated,
        json!("pass"),
        json!(verdict_name(sliding.verdict)),
        sliding.verdict == Verdict::Pass,
    );
    let psclf = certify::check_psclf(&v, &w, &sys, 720)?;
    r.file("psclf_report.json", &psclf.to_json())?;
    r.expect(
        "decrease condition with W = |x|^2 (every mode derivative vanishes on the x1 axis)",
        Source::Derived,
        json!("fail"),
        json!(verdict_name(psclf.verdict)),
        psclf.verdict == Verdict::Fail,
    );
    let traj = fsim::simulate(
        Controller::Law(&law),
        &[1.0, 1.0],
        &cfg(SimMode::Filippov, 1e-3, 5.0, 0.0),
    )?;
    r.trajectory("filippov.csv", &traj)?;
    Ok(())
}

fn nonlinear(r: &mut Run) -> Result<()> {
    r.file("system.json", fixtures::NONLINEAR_SYSTEM)?;
    r.file("clf.json", fixtures::NONLINEAR_CLF)?;
    let sys = fixtures::nonlinear_system();
    let v = fixtures::nonlinear_clf();
    let law = fixtures::nonlinear_law();

    let mut worst: f64 = 0.0;
    for a in 0..=100 {
        for b in 0..=100 {
            let x = [-2.0 + 0.04 * a as f64, -2.0 + 0.04 * b as f64];
            let min = sys
                .fields(&x)
                .iter()
                .map(|f| v.directional_derivative(&x, f))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            let closed = -(4.0 * x[0].powi(4) - 4.0 * x[1].powi(2)).abs() - 2.0 * x[1].powi(2);
            worst = worst.max((min - closed).abs());
        }
    }
    r.expect(
        "min_i DV = -|4x1^4 - 4x2^2| - 2x2^2 on a 101 x 101 grid (absolute error)",
        Source::Stated,
        json!(0.0),
        json!(worst),
        worst <= 1e-12,
    );
    for (x0, file) in [([1.0, 0.0], "relay_a.csv"), ([0.0, -1.0], "relay_b.csv")] {
        let traj = fsim::simulate(Controller::Law(&law), &x0, &cfg(SimMode::Relay, 1e-3, 20.0, 0.01))?;
        r.trajectory(file, &traj)?;
        let end = norm(&traj.last().x);
        let frac = traj.sliding_fraction();
        r.expect(
            &format!("relay from {x0:?} converges while sliding"),
            Source::Stated,
            json!({ "final_norm": "< 0.05", "sliding_fraction": "> 0.01" }),
            json!({ "final_norm": end, "sliding_fraction": frac }),
            end < 0.05 && frac > 0.01,
        );
    }
    let traj = fsim::simulate(
        Controller::Law(&law),
        &[1.0, 0.0],
        &cfg(SimMode::Filippov, 1e-3, 20.0, 0.0),
    )?;
    r.trajectory("filippov.csv", &traj)?;
    let trace = lyapunov_trace(&v, &traj);
    let monotone = trace.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9 * (1.0 + w[0].1));
    r.expect(
        "V is non-increasing along the Filippov solution",
        Source::Derived,
        json!(true),
        json!(monotone),
        monotone,
    );

    let w = RateFunction::polynomial(2, poly(2, &[(2.0, &[0, 2])]))?;
    let report = certify::check_psclf(&v, &w, &sys, 10_000)?;
    r.file("psclf_report.json", &report.to_json())?;
    let decrease = report.find("psclf.decrease").map(|c| c.verdict);
    r.expect(
        "decrease condition holds; W = 2x2^2 is only semidefinite",
        Source::Derived,
        json!({ "verdict": "inconclusive", "decrease": "pass" }),
        json!({ "verdict": verdict_name(report.verdict), "decrease": decrease.map(verdict_name) }),
        report.verdict == Verdict::Inconclusive && decrease == Some(Verdict::Pass),
    );
    Ok(())
}
