//! Scalar special functions and quadrature rules.

mod lambert;
mod quadrature;

pub use lambert::{lambert_w0, lambert_w0_derivative, lambert_w0_exp};
pub use quadrature::{
    make_quadrature, QuadratureKind, QuadratureRule, DEFAULT_HERMITE_ORDER,
    DEFAULT_LAGUERRE_ORDER, MAX_ORDER,
};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub fn euler_gamma() -> f64 {
    EULER_GAMMA
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_gamma_digits() {
        assert!((euler_gamma() - 0.577_215_664_901_5).abs() < 1e-13);
        assert_eq!(euler_gamma(), 0.577_215_664_901_532_9);
    }
}
