//! Third-order Taylor jets in one variable.
//!
//! A [`Jet`] carries a value together with its first three derivatives with
//! respect to the radial coordinate. Metric profiles are written once as jet
//! expressions and every curvature quantity downstream is evaluated from the
//! exact derivatives, with no finite differencing of closed-form families.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Jet {
    pub const fn new(v: f64, d1: f64, d2: f64, d3: f64) -> Self {
        Jet { v, d1, d2, d3 }
    }

    pub const fn constant(c: f64) -> Self {
        Jet::new(c, 0.0, 0.0, 0.0)
    }

    /// The independent variable evaluated at `x`.
    pub const fn var(x: f64) -> Self {
        Jet::new(x, 1.0, 0.0, 0.0)
    }

    /// Compose a scalar function with this jet, given the function's value and
    /// first three derivatives at `self.v` (Faà di Bruno to third order).
    pub fn compose(self, f0: f64, f1: f64, f2: f64, f3: f64) -> Self {
        let (a1, a2, a3) = (self.d1, self.d2, self.d3);
        Jet::new(
            f0,
            f1 * a1,
            f2 * a1 * a1 + f1 * a2,
            f3 * a1 * a1 * a1 + 3.0 * f2 * a1 * a2 + f1 * a3,
        )
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e, e)
    }

    pub fn ln(self) -> Self {
        let x = self.v;
        self.compose(x.ln(), 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    pub fn powf(self, p: f64) -> Self {
        let x = self.v;
        let f0 = x.powf(p);
        let f1 = p * x.powf(p - 1.0);
        let f2 = p * (p - 1.0) * x.powf(p - 2.0);
        let f3 = p * (p - 1.0) * (p - 2.0) * x.powf(p - 3.0);
        self.compose(f0, f1, f2, f3)
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    pub fn recip(self) -> Self {
        Jet::constant(1.0) / self
    }

    pub fn scale(self, c: f64) -> Self {
        Jet::new(c * self.v, c * self.d1, c * self.d2, c * self.d3)
    }

    /// Reparameterize: given x(s) as a jet in `s`, turn this jet in `x` into a
    /// jet in `s`.
    pub fn chain(self, x_of_s: Jet) -> Self {
        x_of_s.compose(self.v, self.d1, self.d2, self.d3)
    }

    /// Derivative jet (loses the third derivative).
    pub fn deriv(self) -> Self {
        Jet::new(self.d1, self.d2, self.d3, f64::NAN)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2, self.d3 + o.d3)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2, self.d3 - o.d3)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet::new(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
            self.d3 * o.v + 3.0 * self.d2 * o.d1 + 3.0 * self.d1 * o.d2 + self.v * o.d3,
        )
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let x = o.v;
        let inv = o.compose(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x), -6.0 / (x * x * x * x));
        self * inv
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, c: f64) -> Jet {
        Jet::new(self.v + c, self.d1, self.d2, self.d3)
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, c: f64) -> Jet {
        Jet::new(self.v - c, self.d1, self.d2, self.d3)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, c: f64) -> Jet {
        self.scale(1.0 / c)
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, j: Jet) -> Jet {
        j.scale(self)
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, j: Jet) -> Jet {
        j + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    fn sub(self, j: Jet) -> Jet {
        -j + self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> (f64, f64, f64) {
        let h = 1e-3;
        let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
        let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        let d3 = (f(x + 2.0 * h) - 2.0 * f(x + h) + 2.0 * f(x - h) - f(x - 2.0 * h)) / (2.0 * h * h * h);
        (d1, d2, d3)
    }

    #[test]
    fn composite_expression_matches_finite_differences() {
        let g = |x: f64| (x * x + 1.0).sqrt() * (-x / 3.0).exp() / (1.0 + x.ln() * 0.2);
        let x0 = 1.7;
        let x = Jet::var(x0);
        let j = (x * x + 1.0).sqrt() * (x * (-1.0 / 3.0)).exp() / (1.0 + x.ln() * 0.2);
        let (d1, d2, d3) = fd(g, x0);
        assert_relative_eq!(j.v, g(x0), max_relative = 1e-14);
        assert!((j.d1 - d1).abs() < 1e-6);
        assert!((j.d2 - d2).abs() < 1e-6);
        assert!((j.d3 - d3).abs() < 1e-4);
    }

    #[test]
    fn chain_rule_reparameterizes() {
        // F(x) = x^3, x(s) = s^2 -> F = s^6
        let s0 = 1.3;
        let xs = Jet::var(s0) * Jet::var(s0);
        let fx = Jet::var(xs.v).powf(3.0);
        let fs = fx.chain(xs);
        assert_relative_eq!(fs.v, s0.powi(6), max_relative = 1e-14);
        assert_relative_eq!(fs.d1, 6.0 * s0.powi(5), max_relative = 1e-13);
        assert_relative_eq!(fs.d2, 30.0 * s0.powi(4), max_relative = 1e-13);
        assert_relative_eq!(fs.d3, 120.0 * s0.powi(3), max_relative = 1e-13);
    }
}
