//! Least-squares fits used for exponents, ladder limits and extrapolation.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    LineFit { slope, intercept, rms }
}

/// Power-law exponent fit with a leave-one-out band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub band: (f64, f64),
    pub rms: f64,
    pub points: usize,
}

impl ExponentFit {
    pub fn below(&self, bound: f64) -> bool {
        self.band.1 < bound
    }

    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.exponent - target).abs() <= tol
    }
}

/// Fit `log|y| = γ log x + c`. The band is the range of leave-one-out slopes,
/// widened by the full-fit slope itself.
pub fn exponent_fit(x: &[f64], y: &[f64]) -> ExponentFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().max(1e-300).ln()).collect();
    let full = linear_fit(&lx, &ly);
    let (mut lo, mut hi) = (full.slope, full.slope);
    if lx.len() >= 4 {
        for k in 0..lx.len() {
            let xs: Vec<f64> = lx.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).collect();
            let ys: Vec<f64> = ly.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).collect();
            let s = linear_fit(&xs, &ys).slope;
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    ExponentFit { exponent: full.slope, band: (lo, hi), rms: full.rms, points: x.len() }
}

/// Exponent fit on the upper half (largest x) of a sweep.
pub fn asymptotic_exponent(x: &[f64], y: &[f64]) -> ExponentFit {
    let k = x.len() / 2;
    let k = k.min(x.len().saturating_sub(3));
    exponent_fit(&x[k..], &y[k..])
}

/// Limit of `F(R) = L + c R^p` by least squares over the ladder; the error
/// estimate is the spread between the fits on the last three and on all
/// points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitFit {
    pub limit: f64,
    pub coeff: f64,
    pub error: f64,
    /// Observed rate from successive differences (None when they vanish).
    pub observed_rate: Option<f64>,
}

fn limit_lsq(r: &[f64], f: &[f64], p: f64) -> (f64, f64) {
    let z: Vec<f64> = r.iter().map(|x| x.powf(p)).collect();
    let fit = linear_fit(&z, f);
    (fit.intercept, fit.slope)
}

pub fn fit_limit(r: &[f64], f: &[f64], p: f64) -> LimitFit {
    let n = r.len();
    let scale = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let spread = f.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - f.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let observed_rate = successive_rate(r, f);
    if !p.is_finite() || spread <= 1e-14 * scale.max(1e-300) {
        let last = f[n - 1];
        return LimitFit { limit: last, coeff: 0.0, error: spread, observed_rate };
    }
    let (l_all, c_all) = limit_lsq(r, f, p);
    let (l_tail, _) = limit_lsq(&r[n - 3..], &f[n - 3..], p);
    LimitFit { limit: l_all, coeff: c_all, error: (l_all - l_tail).abs() + 1e-14 * scale, observed_rate }
}

/// Slope of `log|F(R_{j+1}) − F(R_j)|` against `log R_j`.
pub fn successive_rate(r: &[f64], f: &[f64]) -> Option<f64> {
    let scale = f.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
    let d: Vec<f64> = f.windows(2).map(|w| w[1] - w[0]).collect();
    if d.iter().any(|x| x.abs() <= 1e-13 * scale) {
        return None;
    }
    let x: Vec<f64> = r.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    Some(exponent_fit(&x, &d).exponent)
}

/// As [`successive_rate`], over the leading run of differences that exceed
/// ten times the summed rounding levels `noise` of their endpoints; `None`
/// if fewer than two remain.
pub fn rate_above(r: &[f64], f: &[f64], noise: &[f64]) -> Option<f64> {
    let d: Vec<f64> = (0..f.len() - 1)
        .map(|j| f[j + 1] - f[j])
        .enumerate()
        .take_while(|&(j, d)| d.abs() > 10.0 * (noise[j] + noise[j + 1]))
        .map(|(_, d)| d)
        .collect();
    if d.len() < 2 {
        return None;
    }
    let x: Vec<f64> = r.windows(2).take(d.len()).map(|w| (w[0] * w[1]).sqrt()).collect();
    Some(exponent_fit(&x, &d).exponent)
}

/// Richardson extrapolation of values on grids with spacing `h, h/2, h/4`
/// assuming an error expansion in even powers of `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Richardson {
    pub raw: Vec<f64>,
    pub value: f64,
    pub error: f64,
    pub observed_order: Option<f64>,
}

pub fn richardson(raw: &[f64]) -> Richardson {
    let observed_order = observed_order(raw);
    match raw.len() {
        1 => Richardson { raw: raw.to_vec(), value: raw[0], error: f64::NAN, observed_order },
        2 => {
            let r = (4.0 * raw[1] - raw[0]) / 3.0;
            Richardson { raw: raw.to_vec(), value: r, error: (r - raw[1]).abs(), observed_order }
        }
        _ => {
            let n = raw.len();
            let (a, b, c) = (raw[n - 3], raw[n - 2], raw[n - 1]);
            let r1 = (4.0 * b - a) / 3.0;
            let r2 = (4.0 * c - b) / 3.0;
            let v = (16.0 * r2 - r1) / 15.0;
            Richardson { raw: raw.to_vec(), value: v, error: (v - r2).abs(), observed_order }
        }
    }
}

/// `log₂(|u₁ − u₀| / |u₂ − u₁|)` from the last three refinements.
pub fn observed_order(raw: &[f64]) -> Option<f64> {
    if raw.len() < 3 {
        return None;
    }
    let n = raw.len();
    let d1 = (raw[n - 2] - raw[n - 3]).abs();
    let d2 = (raw[n - 1] - raw[n - 2]).abs();
    if d2 == 0.0 || d1 == 0.0 {
        return None;
    }
    Some((d1 / d2).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_power_law() {
        let x: Vec<f64> = (0..10).map(|i| 10f64.powf(2.0 + 0.4 * i as f64)).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t.powf(-1.5)).collect();
        let f = exponent_fit(&x, &y);
        assert_relative_eq!(f.exponent, -1.5, epsilon = 1e-12);
        assert!(f.below(-1.0));
    }

    #[test]
    fn ladder_limit() {
        let r: Vec<f64> = (0..7).map(|j| 10.0 * 2f64.powi(j)).collect();
        let f: Vec<f64> = r.iter().map(|x| 2.5 + 7.0 / (x * x)).collect();
        let l = fit_limit(&r, &f, -2.0);
        assert_relative_eq!(l.limit, 2.5, epsilon = 1e-12);
        assert_relative_eq!(l.observed_rate.unwrap(), -2.0, epsilon = 1e-9);
    }

    #[test]
    fn richardson_removes_even_orders() {
        let h = [0.1f64, 0.05, 0.025];
        let raw: Vec<f64> = h.iter().map(|x| 1.0 + 3.0 * x * x - 5.0 * x.powi(4)).collect();
        let r = richardson(&raw);
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-13);
        assert!(r.observed_order.unwrap() > 1.9);
    }
}
