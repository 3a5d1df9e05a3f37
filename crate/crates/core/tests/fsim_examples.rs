use psclf_core::fixtures::*;
use psclf_core::fsim::*;
use psclf_core::linalg::norm;

fn cfg(mode: SimMode, step: f64, t_final: f64, hysteresis: f64) -> SimConfig {
    SimConfig {
        step,
        t_final,
        hysteresis,
        mode,
        ..SimConfig::default()
    }
}

#[test]
fn ex1_filippov_slides_with_rate_two() {
    let law = ex1_law();
    let ctl = Controller::Region(&law);
    let traj = simulate(ctl, &[0.5, -2.0], &cfg(SimMode::Filippov, 1e-3, 2.0, 0.0)).unwrap();
    let first = traj.samples.iter().position(|s| s.sliding).expect("captured");
    let s = &traj.samples[first];
    assert!(s.x[0].abs() < 1e-8 && s.x[1] > 0.0);
    assert!((s.alpha.unwrap() - 0.5).abs() < 1e-9);
    let rate = traj.sliding_rate(1).unwrap();
    assert!((rate - 2.0).abs() < 1e-3, "rate {rate}");
    for s in traj.samples.iter().filter(|s| s.sliding) {
        assert!(s.x[0].abs() <= 10.0 * 1e-10);
    }
}

#[test]
fn ex1_relay_diverges() {
    let law = ex1_law();
    for delta in [0.1, 0.01] {
        let traj = simulate(
            Controller::Region(&law),
            &[0.5, -2.0],
            &SimConfig {
                divergence_bound: 100.0,
                ..cfg(SimMode::Relay, 1e-4, 5.0, delta)
            },
        )
        .unwrap();
        assert_eq!(traj.outcome, Outcome::Diverged, "delta {delta}");
        assert!(traj.last().t <= 5.0);
        let capture = traj
            .samples
            .iter()
            .position(|s| s.mode != traj.samples[0].mode)
            .unwrap();
        let tail = &traj.samples[capture..];
        assert!(tail.windows(2).all(|w| w[1].x[1].abs() >= w[0].x[1].abs()));
    }
}

#[test]
fn ex2_filippov_slides_to_origin() {
    let law = ex2_law();
    let traj = simulate(
        Controller::Region(&law),
        &[1.0, 0.2],
        &cfg(SimMode::Filippov, 1e-3, 3.0, 0.0),
    )
    .unwrap();
    assert!(traj.sliding_fraction() > 0.5);
    let rate = traj.sliding_rate(0).unwrap();
    assert!((rate + 3.0).abs() < 1e-3, "rate {rate}");
    assert!(norm(&traj.last().x) < 1e-3);
}

#[test]
fn ex2_relay_converges() {
    let law = ex2_law();
    let traj = simulate(
        Controller::Region(&law),
        &[0.0, -0.5],
        &cfg(SimMode::Relay, 1e-3, 10.0, 0.1),
    )
    .unwrap();
    assert!(norm(&traj.last().x) <= 0.1, "{:?}", traj.last().x);
}

#[test]
fn nonlinear_relay_converges_with_chatter() {
    let law = nonlinear_law();
    for x0 in [[1.0, 0.0], [0.0, -1.0]] {
        let traj = simulate(Controller::Law(&law), &x0, &cfg(SimMode::Relay, 1e-3, 20.0, 0.01)).unwrap();
        let end = norm(&traj.last().x);
        let frac = traj.sliding_fraction();
        assert!(end < 0.05, "{x0:?}: {end}");
        assert!(frac > 0.01, "{x0:?}: {frac}");
    }
}

#[test]
fn nonlinear_filippov_converges_with_sliding() {
    let law = nonlinear_law();
    let traj = simulate(
        Controller::Law(&law),
        &[1.0, 0.0],
        &cfg(SimMode::Filippov, 1e-3, 20.0, 0.0),
    )
    .unwrap();
    assert!(norm(&traj.last().x) < 0.05, "{:?}", traj.last().x);
    assert!(traj.samples.iter().any(|s| s.sliding));
    let v = lyapunov_trace(law.clf(), &traj);
    for w in v.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-9 * (1.0 + w[0].1), "{w:?}");
    }
}

#[test]
fn simulations_are_deterministic() {
    let law = nonlinear_law();
    let c = cfg(SimMode::Filippov, 1e-2, 5.0, 0.0);
    let a = simulate(Controller::Law(&law), &[0.0, -1.0], &c).unwrap();
    let b = simulate(Controller::Law(&law), &[0.0, -1.0], &c).unwrap();
    assert_eq!(a, b);
}
