//! Deterministic point sets on the unit sphere.

use std::f64::consts::PI;

use crate::linalg::norm;

/// `count` equi-angular points on the unit circle, the first at angle `offset · 2π/count`.
pub fn circle_points(count: usize, offset: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let t = 2.0 * PI * (k as f64 + offset) / count as f64;
            vec![t.cos(), t.sin()]
        })
        .collect()
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    out
}

/// `count` points on the unit sphere in `R^n`.
///
/// Circles use equi-angular points; higher dimensions push a Halton sequence
/// through Box–Muller and normalize. The same `(n, count)` always yields the
/// same points.
pub fn sphere_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => (0..count).map(|k| vec![if k % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => circle_points(count, 0.0),
        _ => {
            assert!(n <= 2 * PRIMES.len(), "sphere sampling supports n <= 32");
            let pairs = n.div_ceil(2);
            let mut out = Vec::with_capacity(count);
            let mut i: u64 = 1;
            while out.len() < count {
                let mut g = Vec::with_capacity(2 * pairs);
                for p in 0..pairs {
                    let u1 = radical_inverse(i, PRIMES[2 * p]).max(1e-12);
                    let u2 = radical_inverse(i, PRIMES[2 * p + 1]);
                    let r = (-2.0 * u1.ln()).sqrt();
                    g.push(r * (2.0 * PI * u2).cos());
                    g.push(r * (2.0 * PI * u2).sin());
                }
                g.truncate(n);
                let len = norm(&g);
                i += 1;
                if len < 1e-9 {
                    continue;
                }
                out.push(g.into_iter().map(|v| v / len).collect());
            }
            out
        }
    }
}
