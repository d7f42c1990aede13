//! Adaptive Gauss-Kronrod (7/15) quadrature and helpers for oscillatory
//! integrals over half-period panels.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_SUBDIVISIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    /// Integral of |f|, used as the scale for relative tolerances when the
    /// signed integral cancels.
    pub abs_value: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> QuadResult {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    QuadResult {
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
        abs_value: abs_k * half.abs(),
    }
}

/// Globally adaptive integration of `f` over `[a, b]`.
///
/// Converges when the summed error estimate is below
/// `max(rel_tol * |I|, abs_tol)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            abs_value: 0.0,
        });
    }
    let first = gk15(&f, a, b);
    let mut intervals = vec![(a, b, first)];
    loop {
        let value: f64 = intervals.iter().map(|iv| iv.2.value).sum();
        let error: f64 = intervals.iter().map(|iv| iv.2.error).sum();
        let abs_value: f64 = intervals.iter().map(|iv| iv.2.abs_value).sum();
        let target = (rel_tol * value.abs()).max(abs_tol);
        if error <= target || error <= 50.0 * f64::EPSILON * abs_value {
            return Ok(QuadResult {
                value,
                error,
                abs_value,
            });
        }
        if intervals.len() >= MAX_SUBDIVISIONS {
            return Err(Error::QuadratureNotConverged {
                achieved: error,
                requested: target,
            });
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .expect("non-empty interval list");
        let (lo, hi, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        intervals.push((lo, mid, gk15(&f, lo, mid)));
        intervals.push((mid, hi, gk15(&f, mid, hi)));
    }
}

/// Wynn's epsilon algorithm applied to a sequence of partial sums.
/// Returns the extrapolated limit and the difference between the last two
/// extrapolants as an error estimate.
pub fn wynn_epsilon(partial_sums: &[f64]) -> (f64, f64) {
    let n = partial_sums.len();
    if n < 3 {
        let last = *partial_sums.last().unwrap_or(&0.0);
        return (last, f64::INFINITY);
    }
    // e[k] holds column k of the epsilon table along the anti-diagonal.
    let mut prev: Vec<f64> = vec![0.0; n + 1];
    let mut cur: Vec<f64> = partial_sums.to_vec();
    let mut best = *partial_sums.last().unwrap();
    let mut best_prev = partial_sums[n - 2];
    let mut col = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let diff = cur[i + 1] - cur[i];
            let inv = if diff == 0.0 {
                f64::INFINITY
            } else {
                1.0 / diff
            };
            next.push(prev[i + 1] + inv);
        }
        col += 1;
        prev = cur;
        cur = next;
        // even columns carry the extrapolated values
        if col % 2 == 0 && cur.len() >= 2 && cur.iter().all(|v| v.is_finite()) {
            best = cur[cur.len() - 1];
            best_prev = cur[cur.len() - 2];
        }
    }
    (best, (best - best_prev).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x + 1.0, 0.0, 2.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(r.value, 10.0, max_relative = 1e-14);
    }

    #[test]
    fn oscillatory_smooth_integral() {
        let r = integrate(|x: f64| (20.0 * x).cos(), 0.0, 3.0, 1e-10, 0.0).unwrap();
        assert_relative_eq!(r.value, (60.0f64).sin() / 20.0, max_relative = 1e-9);
    }

    #[test]
    fn endpoint_singularity_converges() {
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-8, 0.0).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-7);
    }

    #[test]
    fn non_convergence_is_reported() {
        let err = integrate(|x: f64| 1.0 / x, 0.0, 1.0, 1e-12, 0.0).unwrap_err();
        assert!(matches!(err, Error::QuadratureNotConverged { .. }));
    }

    #[test]
    fn wynn_accelerates_alternating_harmonic() {
        let mut sums = Vec::new();
        let mut s = 0.0;
        for k in 1..=20 {
            s += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
            sums.push(s);
        }
        let (est, _) = wynn_epsilon(&sums);
        assert!((est - std::f64::consts::LN_2).abs() < 1e-9);
    }
}
