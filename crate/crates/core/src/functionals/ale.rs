use crate::fit::{fit_limit, rate_above, richardson};
use crate::gauge::{default_ladder, mass_flux, mass_flux_noise};
use crate::geometry::GeometryModel;
use crate::grid::GridSpec;
use crate::radial::{FarField, Radial, RadialFunction};

use super::{
    adm_mass, check_scal, ladder_rate, manifold_integral, model_grid, solve_tridiag, Discretization, FunctionalError,
    FunctionalReport, Result, ScalPolicy,
};

/// Outer radius of the `u_∞` solve.
pub fn u_infinity_extent(g: &GeometryModel) -> f64 {
    g.rho_core.max(0.0) + 1e3 * g.length_scale()
}

pub fn solve_u_infinity(g: &GeometryModel) -> Result<RadialFunction> {
    solve_u_infinity_with(g, &GridSpec::default(), ScalPolicy::Require)
}

/// Solve `−4Δu + Scal u = 0`, `u → 1`, with the Robin closure
/// `u + ρu'/(n−2) = 1` at the outer radius and natural conditions at the core.
pub fn solve_u_infinity_with(g: &GeometryModel, spec: &GridSpec, policy: ScalPolicy) -> Result<RadialFunction> {
    let start = g.grid_start(1e-3 * g.length_scale());
    let end = u_infinity_extent(g);
    let grid = model_grid(g, start, end, spec);
    check_scal(g, &grid, policy)?;
    let n = g.n as f64;
    let d = Discretization::new(g, grid);
    let (sub, mut diag, sup) = d.tridiag(4.0, &d.scal_mass);
    let last = d.len() - 1;
    let fr = g.frame(end);
    let robin = 4.0 * g.angular_measure() * fr.density(g.n) / fr.a.v * (n - 2.0) / end;
    diag[last] += robin;
    let mut rhs = vec![0.0; d.len()];
    rhs[last] = robin;
    let u = solve_tridiag(&sub, &diag, &sup, &rhs)
        .ok_or_else(|| FunctionalError::NonConvergence("singular u_∞ system".into()))?;
    if u.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(FunctionalError::NonConvergence("u_∞ lost positivity (operator not coercive)".into()));
    }
    let far = RadialFunction::power_tail_from_end(&d.grid, &u, 1.0, n - 2.0);
    Ok(RadialFunction::from_values(d.grid, u, far))
}

/// Energy integrand split `(4|∇u|², Scal u²)` over `[start, R]`.
fn energy_parts(g: &GeometryModel, u: &dyn Radial, start: f64, end: f64, extra: &[f64]) -> (f64, f64) {
    let grad = manifold_integral_finite(g, start, end, extra, |r| {
        let (_, du, _) = u.eval(r);
        4.0 * du * du / g.grr(r)
    });
    let scal = manifold_integral_finite(g, start, end, extra, |r| {
        let v = u.value(r);
        g.scal(r) * v * v
    });
    (grad, scal)
}

fn manifold_integral_finite<F: Fn(f64) -> f64>(g: &GeometryModel, a: f64, b: f64, extra: &[f64], f: F) -> f64 {
    let om = g.angular_measure();
    let h = |r: f64| f(r) * g.vol_density(r);
    om * crate::quad::integrate_breaks(h, &super::panels(g, a, b, extra))
}

/// `∫(4|∇u|² + Scal u²) dV` over the whole manifold.
pub fn f_ale_energy(u: &RadialFunction, g: &GeometryModel) -> Result<FunctionalReport> {
    let start = g.grid_start(0.0).max(u.grid.first());
    let far = u.grid.last();
    let nodes = &u.grid.nodes;
    // Integrand `4u'² v / A` at R and 2R must decay faster than 1/ρ.
    let dens = |r: f64| {
        let (_, du, _) = u.eval(r);
        4.0 * du * du / g.grr(r) * g.vol_density(r) * r
    };
    let (a, b) = (dens(4.0 * far), dens(8.0 * far));
    if b > 0.0 && b >= 0.9 * a {
        return Err(FunctionalError::Divergent("|∇u|² is not integrable at infinity".into()));
    }
    let grad = manifold_integral(g, start, far, nodes, |r| {
        let (_, du, _) = u.eval(r);
        4.0 * du * du / g.grr(r)
    });
    let scal = manifold_integral(g, start, far, nodes, |r| {
        let v = u.value(r);
        g.scal(r) * v * v
    });
    let mut rep = FunctionalReport::new("f_ale", g).with_subterms(&[("dirichlet", grad), ("scal", scal)]);
    rep.error = 1e-12 * (grad.abs() + scal.abs());
    Ok(rep)
}

/// `λ⁰_ALE = F_ALE(u_∞)` with a grid-refinement error estimate.
pub fn lambda0_ale(g: &GeometryModel) -> Result<(FunctionalReport, RadialFunction)> {
    lambda0_ale_with(g, ScalPolicy::Require)
}

pub fn lambda0_ale_with(g: &GeometryModel, policy: ScalPolicy) -> Result<(FunctionalReport, RadialFunction)> {
    let spec = GridSpec::default();
    let u0 = solve_u_infinity_with(g, &spec, policy)?;
    let u1 = solve_u_infinity_with(g, &GridSpec { level: spec.level + 1, ..spec.clone() }, policy)?;
    let f0 = f_ale_energy(&u0, g)?;
    let f1 = f_ale_energy(&u1, g)?;
    let r = richardson(&[f0.value, f1.value]);
    let mut rep = FunctionalReport::new("lambda0_ale", g).with_subterms(&[
        ("dirichlet", f1.get("dirichlet").unwrap()),
        ("scal", f1.get("scal").unwrap()),
        ("extrapolation", r.value - f1.value),
    ]);
    rep.error = r.error + f1.error + 1e-13;
    rep.params.insert("u_min".into(), u1.min_value());
    Ok((rep, u1))
}

/// Bulk minus boundary: `∫_{r≤R}(4|∇v|² + Scal v²) − ∫_{r=R}⟨div h − ∇tr h, ν⟩`
/// on each ladder radius.
pub fn bulk_minus_boundary(g: &GeometryModel, v: &dyn Radial, ladder: &[f64], extra: &[f64]) -> Vec<(f64, f64)> {
    let start = g.grid_start(0.0);
    let mut out = Vec::with_capacity(ladder.len());
    let mut acc = (0.0, 0.0);
    let mut prev = start;
    for &r in ladder {
        let (a, b) = energy_parts(g, v, prev, r, extra);
        acc.0 += a;
        acc.1 += b;
        prev = r;
        out.push((acc.0 + acc.1, mass_flux(g, r)));
    }
    out
}

fn ladder_limit_rate(g: &GeometryModel, tail_exponent: Option<f64>) -> f64 {
    let n = g.n as f64;
    let mut p = ladder_rate(g);
    if let Some(e) = tail_exponent {
        p = p.max(n - 2.0 * e - 2.0);
    }
    p
}

/// Route (b) of `λ_ALE` or `G_ALE`: ladder of bulk minus boundary, extrapolated.
fn ladder_route(g: &GeometryModel, v: &RadialFunction, name: &str) -> FunctionalReport {
    let ladder = default_ladder(g);
    let vals = bulk_minus_boundary(g, v, &ladder, &v.grid.nodes);
    let f: Vec<f64> = vals.iter().map(|(b, m)| b - m).collect();
    let tail = match v.far {
        FarField::PowerTail { exponent, coeff, .. } if coeff != 0.0 => Some(exponent),
        _ => None,
    };
    let p = ladder_limit_rate(g, tail);
    let fit = fit_limit(&ladder, &f, if p.is_finite() { p } else { f64::NEG_INFINITY });
    let (bulk, flux) = vals[vals.len() - 1];
    let last = f[f.len() - 1];
    let mut rep = FunctionalReport::new(name, g).param("rate", p).with_subterms(&[
        ("bulk", bulk),
        ("boundary", -flux),
        ("extrapolation", fit.limit - last),
    ]);
    rep.error = fit.error;
    let scale = vals.iter().map(|(b, m)| b.abs() + m.abs()).fold(0.0, f64::max);
    let noise: Vec<f64> = ladder.iter().map(|&r| mass_flux_noise(g, r) + 1e-14 * scale).collect();
    if let Some(r) = rate_above(&ladder, &f, &noise) {
        rep.params.insert("observed_rate".into(), r);
    }
    for (j, (r, x)) in ladder.iter().zip(&f).enumerate() {
        rep.params.insert(format!("R{j}"), *r);
        rep.params.insert(format!("ladder{j}"), *x);
    }
    rep
}

/// `λ_ALE = λ⁰_ALE − 𝔪` by both routes: (a) `F_ALE(u_∞) − 𝔪`, (b) the ladder
/// of bulk minus boundary terms with `u_∞`.
pub fn lambda_ale(g: &GeometryModel) -> Result<FunctionalReport> {
    lambda_ale_with(g, ScalPolicy::Require)
}

/// As [`lambda_ale`]; `AllowIfCoercive` admits the cutoff metrics `g_R`,
/// whose scalar curvature turns negative on the cutoff annulus.
pub fn lambda_ale_with(g: &GeometryModel, policy: ScalPolicy) -> Result<FunctionalReport> {
    let (l0, u) = lambda0_ale_with(g, policy)?;
    let m = adm_mass(g)?;
    let b = ladder_route(g, &u, "lambda_ale_ladder");
    let mut rep = FunctionalReport::new("lambda_ale", g).with_subterms(&[("lambda0", l0.value), ("mass", -m.value)]);
    rep.error = l0.error + m.error;
    let disc = (rep.value - b.value).abs();
    rep.params.insert("route_b".into(), b.value);
    rep.params.insert("route_b_error".into(), b.error);
    rep.params.insert("discrepancy".into(), disc);
    rep.params.insert("u_min".into(), u.min_value());
    let scale = l0.value.abs() + m.value.abs();
    if disc > 3.0 * (rep.error + b.error) + 1e-9 * scale + 1e-12 {
        rep.flag(format!("routes disagree by {disc:.3e}"));
    }
    rep.flags.extend(m.flags);
    if let Some(r) = b.params.get("observed_rate") {
        rep.params.insert("ladder_rate".into(), *r);
    }
    rep.params.insert("expected_rate".into(), b.params["rate"]);
    Ok(rep)
}

/// `G_ALE(v, g)`, the bulk-minus-boundary limit for a competitor `v` with
/// `v − 1` decaying. `permissive` admits negative scalar curvature.
pub fn g_ale_energy(v: &RadialFunction, g: &GeometryModel, permissive: bool) -> Result<FunctionalReport> {
    let policy = if permissive { ScalPolicy::AllowIfCoercive } else { ScalPolicy::Require };
    let min = check_scal(g, &v.grid, policy)?;
    if (v.far.limit() - 1.0).abs() > 1e-12 {
        return Err(FunctionalError::Hypothesis("G_ALE needs v → 1 at infinity".into()));
    }
    let mut rep = ladder_route(g, v, "g_ale");
    if min < 0.0 {
        rep.flag(format!("negative scalar curvature {min:.3e} admitted"));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    #[test]
    fn u_infinity_is_one_on_scalar_flat_models() {
        for g in [
            build_flat_cone(4, 2).unwrap(),
            build_eguchi_hanson(1.0).unwrap(),
            build_schwarzschild_conformal(4, 2, 0.5).unwrap(),
        ] {
            let u = solve_u_infinity(&g).unwrap();
            assert!(u.values.iter().all(|x| (x - 1.0).abs() < 1e-10), "{}", g.family.name());
        }
    }

    /// Shooting on `4(v u')' = Scal v u` from the cap with `u(0⁺) = 1`, then
    /// rescaled so that `u → 1` (the ODE is linear).
    fn shooting(g: &GeometryModel, r_end: f64) -> impl Fn(f64) -> f64 {
        let steps = 400_000;
        let r0 = 1e-4;
        let h = (r_end / r0).ln() / steps as f64;
        let mut xs = vec![r0];
        let mut us = vec![1.0];
        let (mut u, mut w) = (1.0, 0.0); // w = v u' / A
        let rhs = |r: f64, u: f64, w: f64| {
            let fr = g.frame(r);
            let v = fr.density(g.n);
            (w * fr.a.v / v, g.scal(r) * v * u / 4.0)
        };
        let mut t = r0.ln();
        for _ in 0..steps {
            let f = |t: f64, u: f64, w: f64| {
                let r = t.exp();
                let (a, b) = rhs(r, u, w);
                (a * r, b * r)
            };
            let k1 = f(t, u, w);
            let k2 = f(t + h / 2.0, u + h / 2.0 * k1.0, w + h / 2.0 * k1.1);
            let k3 = f(t + h / 2.0, u + h / 2.0 * k2.0, w + h / 2.0 * k2.1);
            let k4 = f(t + h, u + h * k3.0, w + h * k3.1);
            u += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            w += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            t += h;
            xs.push(t.exp());
            us.push(u);
        }
        // Far field u = L − w_end A/(v (n−2)) ρ: harmonic tail c ρ^{2−n}.
        let fr = g.frame(r_end);
        let du = w * fr.a.v / fr.density(g.n);
        let n = g.n as f64;
        let limit = u + du * r_end / (n - 2.0);
        move |r: f64| {
            let i = xs.partition_point(|&x| x < r).clamp(1, xs.len() - 1);
            let s = (r - xs[i - 1]) / (xs[i] - xs[i - 1]);
            (us[i - 1] + s * (us[i] - us[i - 1])) / limit
        }
    }

    #[test]
    fn u_infinity_on_star_matches_shooting() {
        let g = build_conformal(4, 1, 0.0, 0.3, 0.5, None, false).unwrap();
        let u = solve_u_infinity(&g).unwrap();
        let oracle = shooting(&g, 200.0);
        for &r in &[0.05, 0.5, 1.0, 3.0, 20.0] {
            assert_relative_eq!(u.value(r), oracle(r), max_relative = 2e-4);
        }
        assert!(u.max_value() <= 1.0 && u.min_value() > 0.0);
        // Tail exponent −(n−2).
        let rs = [100.0, 200.0, 400.0];
        let d: Vec<f64> = rs.iter().map(|&r| 1.0 - u.value(r)).collect();
        let fit = crate::fit::exponent_fit(&rs, &d);
        assert!((fit.exponent + 2.0).abs() < 0.05);
    }

    #[test]
    fn f_ale_of_power_profile_on_cone() {
        // u = 1 + ρ^{-2}: 4∫|∇u|² = ω/|Γ| · 16 ∫ ρ^{-6} ρ³ dρ = ω/|Γ| · 8/ρ0².
        let g = build_flat_cone(4, 2).unwrap();
        let r0 = g.rho_core;
        let grid = Grid::geometric(0.0, r0, 1e3, 1.01);
        let u = RadialFunction::sample(grid, |r| (1.0 + r.powi(-2), -2.0 * r.powi(-3)), FarField::PowerTail {
            limit: 1.0,
            coeff: 1.0,
            exponent: 2.0,
        });
        let rep = f_ale_energy(&u, &g).unwrap();
        let exact = g.angular_measure() * 8.0 / (r0 * r0);
        assert_relative_eq!(rep.value, exact, max_relative = 1e-6);
    }

    #[test]
    fn constant_profile_does_not_decay() {
        let g = build_flat_cone(4, 1).unwrap();
        let grid = Grid::geometric(0.0, 1e-3, 10.0, 1.05);
        let u = RadialFunction::sample(grid, |r| (r, 1.0), FarField::PowerTail { limit: 0.0, coeff: 1.0, exponent: -1.0 });
        assert!(matches!(f_ale_energy(&u, &g), Err(FunctionalError::Divergent(_))));
    }

    #[test]
    fn lambda_ale_examples() {
        let flat = lambda_ale(&build_flat_cone(4, 2).unwrap()).unwrap();
        assert!(flat.value.abs() < 1e-12);
        let eh = lambda_ale(&build_eguchi_hanson(1.0).unwrap()).unwrap();
        assert!(eh.value.abs() < 1e-6, "{:?}", eh);
        let g = build_schwarzschild_conformal(4, 2, 0.5).unwrap();
        let s = lambda_ale(&g).unwrap();
        let m = adm_mass(&g).unwrap().value;
        assert_relative_eq!(s.value, -m, max_relative = 1e-6);
        assert!(!s.is_flagged(), "{:?}", s);
    }

    #[test]
    fn routes_agree_on_star() {
        let g = build_conformal(4, 1, 0.0, 0.3, 0.5, None, false).unwrap();
        let rep = lambda_ale(&g).unwrap();
        assert!(!rep.is_flagged(), "{:?}", rep);
        assert!(rep.value < 0.0);
    }

    #[test]
    fn g_ale_of_one_is_minus_mass() {
        let g = build_schwarzschild_conformal(4, 2, 0.5).unwrap();
        let grid = Grid::geometric(0.0, g.rho_core, 10.0, 1.05);
        let v = RadialFunction::sample(grid, |_| (1.0, 0.0), FarField::Constant(1.0));
        let rep = g_ale_energy(&v, &g, false).unwrap();
        assert_relative_eq!(rep.value, -adm_mass(&g).unwrap().value, max_relative = 1e-6);
    }
}
