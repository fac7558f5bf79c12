//! Scalar functions of the radial coordinate.

use serde::{Deserialize, Serialize};

use crate::grid::{lagrange_d2, Grid};

/// Anything that can be evaluated as a function of ρ with its first two
/// derivatives.
pub trait Radial: Sync {
    /// `(u, u', u'')` at `rho`.
    fn eval(&self, rho: f64) -> (f64, f64, f64);

    fn value(&self, rho: f64) -> f64 {
        self.eval(rho).0
    }
}

/// Behaviour beyond the last grid node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FarField {
    /// `u ≡ c`.
    Constant(f64),
    /// `u = limit + coeff ρ^{-exponent}`.
    PowerTail { limit: f64, coeff: f64, exponent: f64 },
    /// `u = coeff exp(-ρ²/(8τ))`.
    Gaussian { coeff: f64, tau: f64 },
}

impl FarField {
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        match *self {
            FarField::Constant(c) => (c, 0.0, 0.0),
            FarField::PowerTail { limit, coeff, exponent: p } => {
                let t = coeff * r.powf(-p);
                (limit + t, -p * t / r, p * (p + 1.0) * t / (r * r))
            }
            FarField::Gaussian { coeff, tau } => {
                let g = coeff * (-r * r / (8.0 * tau)).exp();
                let k = -r / (4.0 * tau);
                (g, k * g, (k * k - 1.0 / (4.0 * tau)) * g)
            }
        }
    }

    /// Limit at infinity.
    pub fn limit(&self) -> f64 {
        match *self {
            FarField::Constant(c) => c,
            FarField::PowerTail { limit, .. } => limit,
            FarField::Gaussian { .. } => 0.0,
        }
    }
}

/// Piecewise cubic Hermite function on a graded grid.
#[derive(Clone, Debug)]
pub struct RadialFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub far: FarField,
}

impl RadialFunction {
    pub fn new(grid: Grid, values: Vec<f64>, slopes: Vec<f64>, far: FarField) -> Self {
        assert_eq!(grid.len(), values.len());
        assert_eq!(grid.len(), slopes.len());
        RadialFunction { grid, values, slopes, far }
    }

    /// Nodal values with second-order finite-difference slopes.
    pub fn from_values(grid: Grid, values: Vec<f64>, far: FarField) -> Self {
        let slopes = grid.derivative(&values);
        RadialFunction::new(grid, values, slopes, far)
    }

    /// Sample a closed-form function and its derivative.
    pub fn sample<F: Fn(f64) -> (f64, f64)>(grid: Grid, f: F, far: FarField) -> Self {
        let (values, slopes) = grid.nodes.iter().map(|&r| f(r)).unzip();
        RadialFunction::new(grid, values, slopes, far)
    }

    /// Power tail `limit + c ρ^{-p}` matched to the value at the last node.
    pub fn power_tail_from_end(grid: &Grid, values: &[f64], limit: f64, p: f64) -> FarField {
        let r = grid.last();
        let c = (values[values.len() - 1] - limit) * r.powf(p);
        FarField::PowerTail { limit, coeff: c, exponent: p }
    }

    /// Second derivative at nodes from the nodal values.
    pub fn nodal_second(&self) -> Vec<f64> {
        let x = &self.grid.nodes;
        let u = &self.values;
        let n = x.len();
        (0..n)
            .map(|i| {
                let c = i.clamp(1, n - 2);
                lagrange_d2(x[c - 1], x[c], x[c + 1], u[c - 1], u[c], u[c + 1])
            })
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Radial for RadialFunction {
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        let x = &self.grid.nodes;
        if r >= self.grid.last() {
            if r == self.grid.last() {
                let n = x.len() - 1;
                return (self.values[n], self.slopes[n], 0.0);
            }
            return self.far.eval(r);
        }
        let r = r.max(x[0]);
        let i = self.grid.locate(r);
        let (x0, x1) = (x[i], x[i + 1]);
        let h = x1 - x0;
        let t = (r - x0) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let d = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1;
        let dd = (12.0 * t - 6.0) * y0 + (6.0 * t - 4.0) * m0 + (-12.0 * t + 6.0) * y1 + (6.0 * t - 2.0) * m1;
        (v, d / h, dd / (h * h))
    }
}

/// The Gaussian `Γ_τ = exp(-ρ²/(8τ))`, optionally scaled.
#[derive(Clone, Copy, Debug)]
pub struct Gaussian {
    pub tau: f64,
    pub coeff: f64,
}

impl Gaussian {
    pub fn new(tau: f64) -> Self {
        Gaussian { tau, coeff: 1.0 }
    }
}

impl Radial for Gaussian {
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        FarField::Gaussian { coeff: self.coeff, tau: self.tau }.eval(r)
    }
}

/// A closed-form radial function given as `(u, u', u'')`.
pub struct Closed<F: Fn(f64) -> (f64, f64, f64) + Sync>(pub F);

impl<F: Fn(f64) -> (f64, f64, f64) + Sync> Radial for Closed<F> {
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        (self.0)(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_reproduces_cubics() {
        let g = Grid::geometric(0.0, 0.5, 10.0, 1.3);
        let f = RadialFunction::sample(g, |r| (r * r * r - r, 3.0 * r * r - 1.0), FarField::Constant(0.0));
        for &r in &[0.61, 1.7, 4.44, 9.9] {
            let (v, d, dd) = f.eval(r);
            assert_relative_eq!(v, r * r * r - r, max_relative = 1e-12);
            assert_relative_eq!(d, 3.0 * r * r - 1.0, max_relative = 1e-12);
            assert_relative_eq!(dd, 6.0 * r, max_relative = 1e-10);
        }
    }

    #[test]
    fn far_field_continues_power_tail() {
        let g = Grid::geometric(0.0, 1.0, 10.0, 1.1);
        let vals: Vec<f64> = g.nodes.iter().map(|r| 1.0 - r.powi(-2)).collect();
        let far = RadialFunction::power_tail_from_end(&g, &vals, 1.0, 2.0);
        let f = RadialFunction::from_values(g, vals, far);
        let (v, d, _) = f.eval(40.0);
        assert_relative_eq!(v, 1.0 - 1.0 / 1600.0, max_relative = 1e-12);
        assert_relative_eq!(d, 2.0 / 64000.0, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_derivatives() {
        let g = Gaussian::new(2.0);
        let r = 3.0;
        let (v, d, dd) = g.eval(r);
        let e = (-r * r / 16.0f64).exp();
        assert_relative_eq!(v, e, max_relative = 1e-15);
        assert_relative_eq!(d, -r / 8.0 * e, max_relative = 1e-14);
        assert_relative_eq!(dd, (r * r / 64.0 - 1.0 / 8.0) * e, max_relative = 1e-14);
    }
}
