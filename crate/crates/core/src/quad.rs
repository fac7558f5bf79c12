//! Gauss–Legendre quadrature on breakpoint partitions and geometric tails.

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// The eight Gauss points and weights mapped onto `[a, b]`.
pub fn gauss_points(a: f64, b: f64) -> [(f64, f64); 8] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        out[2 * k] = (c - h * GL8_X[k], h * GL8_W[k]);
        out[2 * k + 1] = (c + h * GL8_X[k], h * GL8_W[k]);
    }
    out
}

pub fn gauss<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    if b == a {
        return 0.0;
    }
    gauss_points(a, b).iter().map(|&(x, w)| w * f(x)).sum()
}

/// Sum of per-interval Gauss rules over consecutive breakpoints.
pub fn integrate_breaks<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64]) -> f64 {
    breaks.windows(2).map(|w| gauss(&mut f, w[0], w[1])).sum()
}

/// Integral over `[a, b]` with panels `[x, 1.5x]` (requires `a > 0`), stopping
/// once the panels are negligible against the running total.
pub fn integrate_geometric<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    assert!(a > 0.0, "geometric panels need a positive start");
    let mut total = 0.0;
    let mut x = a;
    let mut quiet = 0;
    while x < b {
        let y = (1.5 * x).min(b);
        let p = gauss(&mut f, x, y);
        total += p;
        if p.abs() <= 1e-18 * total.abs().max(1e-300) || p == 0.0 {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
        x = y;
    }
    total
}

/// Integral from `a` to infinity of an integrand decaying at least like a
/// power `x^{-p}` with `p > 1`. Panels run to `a·1e8`; the remainder is
/// closed with the power law fitted from the last two panel endpoints.
pub fn integrate_tail<F: FnMut(f64) -> f64>(mut f: F, a: f64) -> f64 {
    let end = a * 1e8;
    let body = integrate_geometric(&mut f, a, end);
    let f1 = f(end / 1.5);
    let f2 = f(end);
    if f2 == 0.0 || f1 == 0.0 || f1.signum() != f2.signum() {
        return body;
    }
    let p = -(f2 / f1).ln() / 1.5f64.ln();
    if p > 1.05 {
        body + f2 * end / (p - 1.0)
    } else {
        body
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_for_degree_fifteen() {
        let v = gauss(|x| x.powi(15) + x.powi(4), 0.0, 2.0);
        assert_relative_eq!(v, 2f64.powi(16) / 16.0 + 32.0 / 5.0, max_relative = 1e-14);
    }

    #[test]
    fn gaussian_moment_on_tail_panels() {
        // ∫_0^∞ x^3 e^{-x^2/4} dx = 8
        let v = gauss(|x| x.powi(3) * (-x * x / 4.0).exp(), 0.0, 0.1)
            + integrate_tail(|x| x.powi(3) * (-x * x / 4.0).exp(), 0.1);
        assert_relative_eq!(v, 8.0, max_relative = 1e-12);
    }

    #[test]
    fn power_tail_remainder() {
        let v = integrate_tail(|x| x.powi(-3), 2.0);
        assert_relative_eq!(v, 0.125, max_relative = 1e-12);
    }
}
