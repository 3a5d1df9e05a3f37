use proptest::prelude::*;
use psclf_core::linalg::{eig_general, eig_symmetric, is_positive_definite, lyapunov_solve, Matrix};

fn square(max_n: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |d| {
            let rows: Vec<Vec<f64>> = d.chunks(n).map(|r| r.to_vec()).collect();
            Matrix::from_rows(&rows).unwrap()
        })
    })
}

fn symmetric(max_n: usize) -> impl Strategy<Value = Matrix> {
    square(max_n).prop_map(|m| m.symmetrized())
}

/// Positive definiteness by attempting a Cholesky factorization.
fn cholesky_ok(m: &Matrix) -> bool {
    let n = m.rows();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[(i, i)] - s;
                if d <= 0.0 {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[(i, j)] - s) / l[j][j];
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn symmetric_reconstruction(m in symmetric(8)) {
        let (vals, q) = eig_symmetric(&m).unwrap();
        let recon = q.matmul(&Matrix::diag(&vals)).matmul(&q.transpose());
        prop_assert!(m.sub(&recon).frobenius() <= 1e-10 * (1.0 + m.frobenius()));
        prop_assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn positive_definite_matches_cholesky(m in symmetric(6)) {
        let (vals, _) = eig_symmetric(&m).unwrap();
        // skip matrices too close to singular for either oracle to be decisive
        prop_assume!(vals.iter().all(|v| v.abs() > 1e-9));
        prop_assert_eq!(is_positive_definite(&m, 0.0).unwrap(), cholesky_ok(&m));
    }

    #[test]
    fn gram_matrices_are_positive_definite(m in square(6)) {
        let n = m.rows();
        let g = m.transpose().matmul(&m).add(&Matrix::identity(n));
        prop_assert!(is_positive_definite(&g, 0.0).unwrap());
        prop_assert!(cholesky_ok(&g));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn spectrum_trace_and_determinant(m in square(4)) {
        let spec = eig_general(&m).unwrap();
        let sum: f64 = spec.eigenvalues.iter().map(|l| l.re).sum();
        let imag: f64 = spec.eigenvalues.iter().map(|l| l.im).sum();
        prop_assert!((sum - m.trace()).abs() <= 1e-8 * (1.0 + m.trace().abs()));
        prop_assert!(imag.abs() <= 1e-8 * (1.0 + m.frobenius()));
        let prod = spec.eigenvalues.iter().fold(num_complex::Complex64::new(1.0, 0.0), |a, l| a * l);
        let det = m.determinant().unwrap();
        prop_assert!((prod.re - det).abs() <= 1e-6 * (1.0 + det.abs()), "{} vs {}", prod.re, det);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lyapunov_residual(m in square(4)) {
        let n = m.rows();
        let rho = eig_general(&m).unwrap().eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let a = m.sub(&Matrix::identity(n).scale(1.0 + rho));
        let q = Matrix::identity(n);
        let p = lyapunov_solve(&a, &q).unwrap();
        let residual = Matrix::lyapunov_form(&a, &p).add(&q).frobenius();
        prop_assert!(residual <= 1e-8 * (1.0 + q.frobenius()), "residual {residual}");
        prop_assert!(p.asymmetry() <= 1e-12 * (1.0 + p.max_abs()));
        prop_assert!(is_positive_definite(&p, 0.0).unwrap());
    }
}
