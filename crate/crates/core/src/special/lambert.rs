//! Principal branch of the Lambert W function on the nonnegative axis.
//!
//! Two entry points share one solver: [`lambert_w0`] takes `z` directly and
//! [`lambert_w0_exp`] takes `a = ln z`, which is what the saddle-point
//! integrals need since their arguments are products of exponentials that
//! overflow long before W itself becomes large.

use crate::error::{Error, Result};

const MAX_ITER: usize = 32;
// Below this log-argument W(e^a) == e^a to double precision.
const TINY_LOG_ARG: f64 = -745.0;

/// W₀(z) for z ≥ 0, i.e. the nonnegative solution of `w·e^w = z`.
pub fn lambert_w0(z: f64) -> Result<f64> {
    if z.is_nan() || z < 0.0 {
        return Err(Error::Domain(format!("lambert_w0 requires z >= 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z.is_infinite() {
        return Ok(f64::INFINITY);
    }
    if z > std::f64::consts::E {
        Ok(solve_log_form(z.ln()))
    } else {
        Ok(solve_direct(z))
    }
}

/// dW/dz = W(z) / (z (1 + W(z))) for z > 0.
pub fn lambert_w0_derivative(z: f64) -> Result<f64> {
    if z.is_nan() || z <= 0.0 {
        return Err(Error::Domain(format!(
            "lambert_w0_derivative requires z > 0, got {z}"
        )));
    }
    let w = lambert_w0(z)?;
    Ok(w / (z * (1.0 + w)))
}

/// W₀(eᵃ) for any real `a`, without forming eᵃ when it would overflow.
pub fn lambert_w0_exp(a: f64) -> f64 {
    if a.is_nan() {
        return f64::NAN;
    }
    if a == f64::INFINITY {
        return f64::INFINITY;
    }
    if a < TINY_LOG_ARG {
        return a.exp();
    }
    if a > 1.0 {
        solve_log_form(a)
    } else {
        solve_direct(a.exp())
    }
}

/// Halley iteration on `w e^w - z`, for 0 < z <= e.
fn solve_direct(z: f64) -> f64 {
    let mut w = if z < 1e-3 {
        // W(z) = z - z² + 3/2 z³ - 8/3 z⁴ + ...
        z * (1.0 - z * (1.0 - z * (1.5 - z * 8.0 / 3.0)))
    } else {
        // Winitzki's uniform approximation
        let l = z.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    };
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs() {
            break;
        }
    }
    w
}

/// Newton iteration on `w + ln w - a`, for a > 1 (z > e).
///
/// Seeded with the large-argument expansion `a - ln a + ln a / a`.
fn solve_log_form(a: f64) -> f64 {
    let la = a.ln();
    let mut w = (a - la + la / a).max(0.5);
    for _ in 0..MAX_ITER {
        let next = w * (1.0 + a - w.ln()) / (1.0 + w);
        let step = next - w;
        w = next;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn bisect_w(z: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() > z {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn trivial_values() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_bisection_at_ten() {
        let oracle = bisect_w(10.0, 0.0, 5.0);
        let w = lambert_w0(10.0).unwrap();
        assert!((w - oracle).abs() < 1e-12, "{w} vs {oracle}");
    }

    #[test]
    fn negative_input_is_domain_error() {
        assert!(matches!(lambert_w0(-1e-3), Err(Error::Domain(_))));
        assert!(matches!(lambert_w0_derivative(0.0), Err(Error::Domain(_))));
        assert!(matches!(lambert_w0_derivative(-2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_examples() {
        let d = lambert_w0_derivative(E).unwrap();
        assert!((d - 1.0 / (2.0 * E)).abs() < 1e-15);

        let w1 = bisect_w(1.0, 0.0, 1.0);
        let d1 = lambert_w0_derivative(1.0).unwrap();
        assert!((d1 - w1 / (1.0 + w1)).abs() < 1e-12);

        let h = 1e-6;
        let fd = (lambert_w0(5.0 + h).unwrap() - lambert_w0(5.0 - h).unwrap()) / (2.0 * h);
        let d5 = lambert_w0_derivative(5.0).unwrap();
        assert!(((fd - d5) / d5).abs() < 1e-6);
    }

    #[test]
    fn exp_form_agrees_with_direct_form() {
        for &a in &[-800.0, -50.0, -3.0, 0.0, 0.5, 1.0, 1.5, 10.0, 300.0, 700.0] {
            let w = lambert_w0_exp(a);
            // w + ln w = a
            if w > 0.0 {
                let resid = w + w.ln() - a;
                assert!(resid.abs() < 1e-12 * a.abs().max(1.0), "a={a} resid={resid}");
            }
            if a.abs() < 700.0 {
                let direct = lambert_w0(a.exp()).unwrap();
                assert!((w - direct).abs() <= 1e-14 * direct.max(1e-300), "a={a}");
            }
        }
        // arguments far beyond f64 range
        let w = lambert_w0_exp(1e6);
        assert!((w + w.ln() - 1e6).abs() < 1e-8);
    }

    #[test]
    fn relative_accuracy_over_eighteen_decades() {
        let mut z = 1e-9;
        while z < 1e9 {
            let w = lambert_w0(z).unwrap();
            let oracle = bisect_w(z, 0.0, z.max(1.0).ln() + 2.0);
            assert!(((w - oracle) / oracle).abs() < 1e-14, "z={z}: {w} vs {oracle}");
            z *= 3.7;
        }
    }

    proptest! {
        #[test]
        fn defining_equation_holds(z in 0.0f64..1e15) {
            let w = lambert_w0(z).unwrap();
            prop_assert!((w * w.exp() - z).abs() <= 1e-12 * z.max(1.0));
        }

        #[test]
        fn monotone(z in 0.0f64..1e12, gap in 1e-9f64..1.0) {
            let z2 = z * (1.0 + gap) + gap;
            prop_assert!(lambert_w0(z).unwrap() <= lambert_w0(z2).unwrap());
        }

        #[test]
        fn exponential_identity(logz in (1e-6f64).ln()..(1e12f64).ln()) {
            let z = logz.exp();
            let w = lambert_w0(z).unwrap();
            prop_assert!((((-w).exp() - w / z) / (w / z)).abs() < 1e-12);
        }
    }
}
