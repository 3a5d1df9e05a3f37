use proptest::prelude::*;
use psclf_core::certify::piece_boundary_directions;
use psclf_core::clf::{ClfKind, Pwsclf};
use psclf_core::fixtures;
use psclf_core::linalg::{dot, norm, Matrix};
use psclf_core::model::{load_system, Monomial, Polynomial, SwitchedSystem, VectorField};

fn mat2() -> impl Strategy<Value = Matrix> {
    prop::array::uniform4(-4.0f64..4.0).prop_map(|d| Matrix::new(&[[d[0], d[1]], [d[2], d[3]]]))
}

/// Symmetric positive definite with eigenvalues at least `floor`.
fn spd2(floor: f64) -> impl Strategy<Value = Matrix> {
    mat2().prop_map(move |m| m.transpose().matmul(&m).add(&Matrix::identity(2).scale(floor)))
}

fn point2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2).prop_filter("nonzero", |x| norm(x) > 1e-3)
}

fn monomial(n: usize) -> impl Strategy<Value = Monomial> {
    // no constant terms: every field vanishes at the origin
    (-3.0f64..3.0, prop::collection::vec(0u32..4, n))
        .prop_filter("nonconstant", |(_, e)| e.iter().any(|&k| k > 0))
        .prop_map(|(c, e)| Monomial::new(c, e))
}

fn polynomial_field(n: usize) -> impl Strategy<Value = VectorField> {
    prop::collection::vec(prop::collection::vec(monomial(n), 1..4), n)
        .prop_map(move |comps| VectorField::Polynomial(comps.into_iter().map(|t| Polynomial::new(n, t)).collect()))
}

fn linear_system() -> impl Strategy<Value = SwitchedSystem> {
    prop::collection::vec(mat2(), 1..4).prop_map(|a| SwitchedSystem::linear(a).unwrap())
}

fn mixed_system() -> impl Strategy<Value = SwitchedSystem> {
    prop::collection::vec(
        prop_oneof![mat2().prop_map(VectorField::Linear), polynomial_field(2)],
        1..4,
    )
    .prop_map(|f| SwitchedSystem::new(2, f).unwrap())
}

/// Piecewise-quadratic data continuous by construction: `P₂ = P₁ − ξH₁`, `H₂ = 0`.
fn continuous_piecewise() -> impl Strategy<Value = Pwsclf> {
    (spd2(2.0), mat2(), 0.05f64..0.3).prop_map(|(p1, h, xi)| {
        let h1 = h.symmetrized();
        let p2 = p1.sub(&h1.scale(xi));
        Pwsclf::piecewise_quadratic(vec![p1, p2], vec![h1, Matrix::zeros(2, 2)]).unwrap()
    })
}

fn quadratic_clf() -> impl Strategy<Value = Pwsclf> {
    prop_oneof![
        Just(fixtures::ex3_clf()),
        spd2(0.5).prop_map(|p| Pwsclf::smooth_quadratic(p).unwrap()),
        prop::collection::vec(spd2(0.5), 2..4).prop_map(|p| Pwsclf::pointwise_min(p).unwrap()),
        prop::collection::vec(spd2(0.5), 2..4).prop_map(|p| Pwsclf::pointwise_max(p).unwrap()),
        continuous_piecewise(),
    ]
}

fn any_clf() -> impl Strategy<Value = Pwsclf> {
    prop_oneof![quadratic_clf(), Just(fixtures::nonlinear_clf())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn linear_fields_are_homogeneous(sys in linear_system(), x in point2(), lambda in -5.0f64..5.0) {
        let lx: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        for i in 0..sys.mode_count() {
            let a = sys.eval_field(i, &lx).unwrap();
            let b = sys.eval_field(i, &x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - lambda * v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn convex_combination_is_affine(sys in mixed_system(), x in point2(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let m = sys.mode_count();
        let last = m - 1;
        let wa = vec![(0, a), (last, 1.0 - a)];
        let wb = vec![(0, b), (last, 1.0 - b)];
        let mid = 0.5 * (a + b);
        let wm = vec![(0, mid), (last, 1.0 - mid)];
        let (wa, wb, wm) = if m == 1 { (vec![(0, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)]) } else { (wa, wb, wm) };
        let fa = sys.eval_convex_combination(&wa, &x).unwrap();
        let fb = sys.eval_convex_combination(&wb, &x).unwrap();
        let fm = sys.eval_convex_combination(&wm, &x).unwrap();
        for k in 0..2 {
            let avg = 0.5 * (fa[k] + fb[k]);
            prop_assert!((fm[k] - avg).abs() <= 1e-12 * (1.0 + avg.abs() + fa[k].abs() + fb[k].abs()));
        }
    }

    #[test]
    fn system_documents_roundtrip(sys in mixed_system(), x in point2()) {
        let back = load_system(&sys.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), sys.to_json());
        prop_assert_eq!(back.fields(&x), sys.fields(&x));
    }

    #[test]
    fn quadratic_kinds_are_degree_two_homogeneous(v in quadratic_clf(), x in point2(), eta in point2(), lambda in 0.01f64..20.0) {
        let lx: Vec<f64> = x.iter().map(|c| c * lambda).collect();
        let leta: Vec<f64> = eta.iter().map(|c| c * lambda).collect();
        let (v1, v2) = (v.value_unchecked(&x), v.value_unchecked(&lx));
        prop_assert!((v2 - lambda * lambda * v1).abs() <= 1e-10 * (1.0 + v2.abs()));
        let d1 = v.directional_derivative(&x, &eta).unwrap();
        let d2 = v.directional_derivative(&lx, &leta).unwrap();
        prop_assert!((d2 - lambda * lambda * d1).abs() <= 1e-9 * (1.0 + d2.abs()), "{} vs {}", d2, lambda * lambda * d1);
    }

    #[test]
    fn directional_derivative_matches_difference_quotient(v in any_clf(), x in point2(), eta in point2()) {
        let d = v.directional_derivative(&x, &eta).unwrap();
        let h = 1e-7;
        let xh: Vec<f64> = x.iter().zip(&eta).map(|(a, b)| a + h * b).collect();
        let fd = (v.value_unchecked(&xh) - v.value_unchecked(&x)) / h;
        let scale = 1.0 + d.abs() + (1.0 + norm(&x)).powi(3) * norm(&eta);
        prop_assert!((fd - d).abs() <= 1e-4 * scale, "fd {} vs {}", fd, d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn continuity_on_piece_boundaries(v in prop_oneof![Just(fixtures::ex3_clf()), continuous_piecewise(),
        prop::collection::vec(spd2(0.5), 2..4).prop_map(|p| Pwsclf::pointwise_max(p).unwrap())],
        radius in 0.1f64..10.0) {
        for bp in piece_boundary_directions(&v, 3600) {
            let x: Vec<f64> = bp.x.iter().map(|c| c * radius).collect();
            let tol = 1e-9 * (1.0 + radius * radius);
            let active = v.active_pieces(&x);
            for &j in &active {
                for &k in &active {
                    prop_assert!((v.piece_value(j, &x) - v.piece_value(k, &x)).abs() <= tol);
                }
            }
        }
    }

    #[test]
    fn envelope_derivative_ordering(ps in prop::collection::vec(spd2(0.5), 2..4), eta in point2(), radius in 0.1f64..10.0) {
        for v in [Pwsclf::pointwise_min(ps.clone()).unwrap(), Pwsclf::pointwise_max(ps.clone()).unwrap()] {
            let is_min = matches!(v.kind(), ClfKind::PointwiseMin { .. });
            for bp in piece_boundary_directions(&v, 720) {
                let x: Vec<f64> = bp.x.iter().map(|c| c * radius).collect();
                let d = v.directional_derivative(&x, &eta).unwrap();
                for j in v.active_pieces(&x) {
                    let dj = dot(&v.piece_gradient_unchecked(j, &x), &eta);
                    let tol = 1e-9 * (1.0 + dj.abs());
                    if is_min {
                        prop_assert!(d <= dj + tol);
                    } else {
                        prop_assert!(d >= dj - tol);
                    }
                }
            }
        }
    }
}
