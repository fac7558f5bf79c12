use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::richardson;
use crate::geometry::GeometryModel;
use crate::grid::GridSpec;
use crate::radial::{FarField, Radial, RadialFunction};

use super::{
    check_scal, manifold_integral, model_grid, solve_tridiag, Discretization, FunctionalError, FunctionalReport,
    Result,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `‖u‖² = (4πτ)^{n/2}`: Perelman's `μ`.
    Full,
    /// `‖u‖² = α_τ = (4πτ)^{n/2}/|Γ|`: `μ_ALE`.
    Ale,
}

/// `(4πτ)^{n/2}`.
pub fn heat_volume(n: usize, tau: f64) -> f64 {
    (4.0 * PI * tau).powf(n as f64 / 2.0)
}

fn xlogx2(u: f64) -> f64 {
    let s = u * u;
    if s == 0.0 {
        0.0
    } else {
        s * s.ln()
    }
}

/// `W(u, g, τ) = (4πτ)^{-n/2} ∫[τ(4|∇u|² + Scal u²) − u² log u² − n u²] dV`
/// for any radial `u`; `far` is where tail panels take over.
pub fn w_functional_with(u: &dyn Radial, g: &GeometryModel, tau: f64, far: f64, extra: &[f64]) -> FunctionalReport {
    let n = g.n as f64;
    let c = 1.0 / heat_volume(g.n, tau);
    let start = g.grid_start(0.0);
    let grad = manifold_integral(g, start, far, extra, |r| {
        let (v, dv, _) = u.eval(r);
        tau * (4.0 * dv * dv / g.grr(r) + g.scal(r) * v * v)
    });
    let ent = manifold_integral(g, start, far, extra, |r| -xlogx2(u.value(r)));
    let norm = manifold_integral(g, start, far, extra, |r| u.value(r).powi(2));
    let mut rep = FunctionalReport::new("w", g)
        .param("tau", tau)
        .param("l2_norm_sq", norm)
        .with_subterms(&[("dirichlet_scal", c * grad), ("entropy", c * ent), ("normalization", -c * n * norm)]);
    rep.error = 1e-10 * rep.subterms.iter().map(|s| s.value.abs()).sum::<f64>();
    rep
}

pub fn w_functional(u: &RadialFunction, g: &GeometryModel, tau: f64) -> FunctionalReport {
    w_functional_with(u, g, tau, u.grid.last(), &u.grid.nodes)
}

/// Options of the `μ` minimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuOptions {
    pub grid: GridSpec,
    /// Number of refinement levels used for Richardson extrapolation.
    pub levels: usize,
    /// Override of `R_max(τ) = max(10√τ, 20 ρ_core)`.
    pub rmax: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MuOptions {
    fn default() -> Self {
        MuOptions { grid: GridSpec::default(), levels: 3, rmax: None, max_iter: 4000, tol: 1e-13 }
    }
}

#[derive(Clone, Debug)]
pub struct MuResult {
    pub report: FunctionalReport,
    pub minimizer: RadialFunction,
    /// `W` along the accepted iterates on the finest grid.
    pub history: Vec<f64>,
}

pub fn mu_rmax(g: &GeometryModel, tau: f64) -> f64 {
    let r = (10.0 * tau.sqrt()).max(20.0 * g.rho_core);
    if r <= g.rho_core {
        g.rho_core + 10.0 * tau.sqrt()
    } else {
        r
    }
}

/// Discrete entropy problem on one grid.
struct Problem {
    d: Discretization,
    tau: f64,
    n: f64,
    c: f64,
    z: f64,
}

impl Problem {
    fn parts(&self, u: &[f64]) -> [f64; 3] {
        let d = &self.d;
        let sv: f64 = u.iter().zip(&d.scal_mass).map(|(x, s)| s * x * x).sum();
        let grad = self.tau * (4.0 * d.dirichlet(u) + sv);
        let ent: f64 = u.iter().zip(&d.mass).map(|(x, v)| -v * xlogx2(*x)).sum();
        let norm: f64 = u.iter().zip(&d.mass).map(|(x, v)| v * x * x).sum();
        [self.c * grad, self.c * ent, -self.c * self.n * norm]
    }

    fn energy(&self, u: &[f64]) -> f64 {
        self.parts(u).iter().sum()
    }

    fn normalize(&self, u: &mut [f64]) {
        let norm: f64 = u.iter().zip(&self.d.mass).map(|(x, v)| v * x * x).sum();
        let s = (self.z / norm).sqrt();
        u.iter_mut().for_each(|x| *x *= s);
    }

    /// One semi-implicit step `(V + Δt(4τL + V P̃)) ũ = V u` then renormalize.
    fn flow_step(&self, u: &[f64], dt: f64) -> Option<Vec<f64>> {
        let d = &self.d;
        let p: Vec<f64> = (0..u.len())
            .map(|i| self.tau * d.scal_mass[i] / d.mass[i] - (u[i] * u[i]).ln())
            .collect();
        let pmin = p.iter().cloned().fold(f64::INFINITY, f64::min);
        let diag: Vec<f64> = (0..u.len()).map(|i| d.mass[i] * (1.0 + dt * (p[i] - pmin))).collect();
        let (sub, diag, sup) = d.tridiag(4.0 * self.tau * dt, &diag);
        let rhs: Vec<f64> = u.iter().zip(&d.mass).map(|(x, v)| v * x).collect();
        let mut w = solve_tridiag(&sub, &diag, &sup, &rhs)?;
        if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return None;
        }
        self.normalize(&mut w);
        Some(w)
    }

    /// Euler–Lagrange residual `4τLu + τSV u − V u(log u² + 1 + n) − θ V u`
    /// with the Rayleigh multiplier θ.
    fn residual(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let d = &self.d;
        let lu = d.apply_stiffness(u);
        let mut r: Vec<f64> = (0..u.len())
            .map(|i| {
                4.0 * self.tau * lu[i] + self.tau * d.scal_mass[i] * u[i]
                    - d.mass[i] * u[i] * ((u[i] * u[i]).ln() + 1.0 + self.n)
            })
            .collect();
        let theta = r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / self.z;
        for i in 0..u.len() {
            r[i] -= theta * d.mass[i] * u[i];
        }
        (r, theta)
    }

    fn residual_norm(&self, u: &[f64]) -> f64 {
        let (r, _) = self.residual(u);
        (r.iter().zip(&self.d.mass).map(|(a, v)| a * a / v).sum::<f64>() / self.z).sqrt()
    }

    /// Newton step on the bordered system for `(u, θ)`.
    fn newton_step(&self, u: &[f64]) -> Option<Vec<f64>> {
        let d = &self.d;
        let (r, theta) = self.residual(u);
        let jd: Vec<f64> = (0..u.len())
            .map(|i| self.tau * d.scal_mass[i] - d.mass[i] * ((u[i] * u[i]).ln() + 3.0 + self.n + theta))
            .collect();
        let (sub, diag, sup) = d.tridiag(4.0 * self.tau, &jd);
        let mr: Vec<f64> = r.iter().map(|x| -x).collect();
        let vu: Vec<f64> = u.iter().zip(&d.mass).map(|(x, v)| v * x).collect();
        let a = solve_tridiag(&sub, &diag, &sup, &mr)?;
        let b = solve_tridiag(&sub, &diag, &sup, &vu)?;
        let norm: f64 = u.iter().zip(&vu).map(|(x, y)| x * y).sum();
        let va: f64 = vu.iter().zip(&a).map(|(x, y)| x * y).sum();
        let vb: f64 = vu.iter().zip(&b).map(|(x, y)| x * y).sum();
        let dth = (self.z - norm - 2.0 * va) / (2.0 * vb);
        let mut w: Vec<f64> = (0..u.len()).map(|i| u[i] + a[i] + dth * b[i]).collect();
        if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return None;
        }
        self.normalize(&mut w);
        Some(w)
    }
}

struct LevelSolution {
    u: Vec<f64>,
    parts: [f64; 3],
    history: Vec<f64>,
    residual: f64,
    d: Discretization,
}

fn solve_level(g: &GeometryModel, tau: f64, z: f64, rmax: f64, spec: &GridSpec, opts: &MuOptions) -> Result<LevelSolution> {
    let start = g.grid_start(1e-3 * tau.sqrt().min(g.length_scale()));
    let grid = model_grid(g, start, rmax, spec);
    let d = Discretization::new(g, grid);
    let p = Problem { d, tau, n: g.n as f64, c: 1.0 / heat_volume(g.n, tau), z };
    let gauss = crate::radial::Gaussian::new(tau);
    let mut u: Vec<f64> = p.d.grid.nodes.iter().map(|&r| gauss.value(r)).collect();
    p.normalize(&mut u);
    let mut e = p.energy(&u);
    let mut history = vec![e];
    let mut dt = 1.0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut accepted = false;
        for _ in 0..40 {
            if let Some(w) = p.flow_step(&u, dt) {
                let ew = p.energy(&w);
                if ew <= e {
                    let de = e - ew;
                    u = w;
                    e = ew;
                    history.push(e);
                    accepted = true;
                    dt = (dt * 1.5).min(1e6);
                    if de <= opts.tol * e.abs().max(1.0) {
                        converged = true;
                    }
                    break;
                }
            }
            dt *= 0.5;
        }
        if !accepted {
            // No descent at any step size: stationary to rounding.
            converged = true;
        }
        if converged {
            break;
        }
    }
    // Newton polish, accepted only while the residual drops and W does not rise.
    let mut res = p.residual_norm(&u);
    for _ in 0..8 {
        let Some(w) = p.newton_step(&u) else { break };
        let rw = p.residual_norm(&w);
        let ew = p.energy(&w);
        if rw < res && ew <= e + 1e-13 * e.abs().max(1.0) {
            u = w;
            res = rw;
            e = ew.min(e);
            history.push(e);
        } else {
            break;
        }
    }
    if !converged && res > 1e-6 {
        return Err(FunctionalError::NonConvergence(format!("μ iteration budget exhausted, residual {res:.2e}")));
    }
    Ok(LevelSolution { parts: p.parts(&u), u, history, residual: res, d: p.d })
}

/// Fraction of `‖u‖²` in the outer tenth of the domain.
fn outer_fraction(s: &LevelSolution, z: f64) -> f64 {
    let nodes = &s.d.grid.nodes;
    let (a, b) = (nodes[0], nodes[nodes.len() - 1]);
    let cut = b - 0.1 * (b - a);
    nodes
        .iter()
        .zip(&s.u)
        .zip(&s.d.mass)
        .filter(|((r, _), _)| **r >= cut)
        .map(|((_, u), v)| v * u * u)
        .sum::<f64>()
        / z
}

/// `μ(g, τ)` (or `μ_ALE`) over radial profiles, Richardson-extrapolated over
/// grid refinements.
pub fn mu_minimize(g: &GeometryModel, tau: f64, normalization: Normalization, opts: &MuOptions) -> Result<MuResult> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(FunctionalError::Hypothesis(format!("τ must be positive, got {tau}")));
    }
    let z = heat_volume(g.n, tau);
    let mut rmax = opts.rmax.unwrap_or_else(|| mu_rmax(g, tau));
    let mut flags = Vec::new();
    let mut sols = Vec::new();
    for attempt in 0..4 {
        let probe = model_grid(g, g.grid_start(1e-3 * tau.sqrt().min(g.length_scale())), rmax, &opts.grid);
        check_scal(g, &probe, super::default_policy(g))?;
        sols.clear();
        for l in 0..opts.levels.max(1) {
            let spec = GridSpec { level: opts.grid.level + l as u32, ..opts.grid.clone() };
            sols.push(solve_level(g, tau, z, rmax, &spec, opts)?);
        }
        let leak = outer_fraction(sols.last().unwrap(), z);
        if leak <= 1e-3 {
            break;
        }
        if attempt == 3 {
            flags.push(format!("minimizer mass leak {leak:.2e} at R_max = {rmax:.3e}"));
        } else {
            rmax *= 1.5;
        }
    }
    let raw: Vec<f64> = sols.iter().map(|s| s.parts.iter().sum()).collect();
    let rich = richardson(&raw);
    let fine = sols.pop().unwrap();
    let mu = rich.value;
    // Gaussian tail beyond R_max, `x^{n/2} (1 + x) e^{-x}` with `x = R²/4τ`.
    let x = rmax * rmax / (4.0 * tau);
    let trunc = x.powf(0.5 * g.n as f64) * (1.0 + x) * (-x).exp();
    let solver_err = fine.residual * fine.residual + 1e-12 + trunc;
    let gamma = g.gamma_order as f64;
    let [a, b, c] = fine.parts;
    let extrap = mu - (a + b + c);
    let mut u = fine.u.clone();
    let mut rep = FunctionalReport::new(match normalization {
        Normalization::Full => "mu",
        Normalization::Ale => "mu_ale",
    }, g)
    .param("tau", tau)
    .param("r_max", rmax)
    .param("q", opts.grid.q)
    .param("level", opts.grid.level as f64)
    .param("residual", fine.residual)
    .param("iterations", fine.history.len() as f64);
    for (k, v) in raw.iter().enumerate() {
        rep.params.insert(format!("raw{k}"), *v);
    }
    if let Some(o) = rich.observed_order {
        rep.params.insert("observed_order".into(), o);
    }
    match normalization {
        Normalization::Full => {
            rep = rep.with_subterms(&[
                ("dirichlet_scal", a),
                ("entropy", b),
                ("normalization", c),
                ("extrapolation", extrap),
            ]);
            rep.params.insert("mu_ale".into(), (mu + gamma.ln()) / gamma);
        }
        Normalization::Ale => {
            rep = rep.with_subterms(&[("mu_over_gamma", mu / gamma), ("cone_shift", gamma.ln() / gamma)]);
            rep.params.insert("mu".into(), mu);
            let s = gamma.sqrt().recip();
            u.iter_mut().for_each(|x| *x *= s);
        }
    }
    rep.error = if rich.error.is_finite() { rich.error } else { 0.0 } + solver_err;
    rep.flags = flags;
    let grid = fine.d.grid.clone();
    let last = u[u.len() - 1];
    let r = grid.last();
    let far = FarField::Gaussian { coeff: last * (r * r / (8.0 * tau)).exp(), tau };
    let minimizer = RadialFunction::from_values(grid, u, far);
    Ok(MuResult { report: rep, minimizer, history: fine.history })
}

/// `ν = inf_τ μ(g, τ)` over a finite grid of scales.
pub fn nu(g: &GeometryModel, taus: &[f64], normalization: Normalization, opts: &MuOptions) -> Result<FunctionalReport> {
    if taus.is_empty() {
        return Err(FunctionalError::Hypothesis("ν needs a nonempty τ grid".into()));
    }
    let runs: Vec<Result<MuResult>> = taus.par_iter().map(|&t| mu_minimize(g, t, normalization, opts)).collect();
    let mut vals = Vec::with_capacity(taus.len());
    for r in runs {
        vals.push(r?.report);
    }
    let (k, best) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.partial_cmp(&b.1.value).unwrap())
        .unwrap();
    let mut rep = FunctionalReport::new("nu", g)
        .param("tau_star", taus[k])
        .with_subterms(&[("mu_at_tau_star", best.value)]);
    rep.error = best.error;
    for (t, v) in taus.iter().zip(&vals) {
        rep.params.insert(format!("mu@{t}"), v.value);
    }
    let spread = vals.iter().map(|v| v.value).fold(f64::NEG_INFINITY, f64::max) - best.value;
    if taus.len() > 1 && (k == 0 || k == taus.len() - 1) && spread > 10.0 * best.error.max(1e-9) {
        rep.flag(format!("infimum attained at the boundary of the τ grid (τ = {})", taus[k]));
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
    fn w_of_gaussian_on_euclidean_space_vanishes() {
        let g = build_flat_cone(4, 1).unwrap();
        let tau: f64 = 2.0;
        let w = w_functional_with(&crate::radial::Gaussian::new(tau), &g, tau, 20.0 * tau.sqrt(), &[]);
        assert!(w.value.abs() < 1e-10, "{:?}", w);
        assert_relative_eq!(w.params["l2_norm_sq"], heat_volume(4, tau), max_relative = 1e-8);
    }

    #[test]
    fn w_of_scaled_gaussian_on_cone() {
        let g = build_flat_cone(4, 2).unwrap();
        let tau = 1.0;
        let s = 2f64.sqrt();
        let grid = Grid::geometric(0.0, g.rho_core, 20.0, 1.05);
        let u = RadialFunction::sample(
            grid,
            |r| {
                let e = s * (-r * r / (8.0 * tau)).exp();
                (e, -r / (4.0 * tau) * e)
            },
            FarField::Gaussian { coeff: s, tau },
        );
        assert!((w_functional(&u, &g, tau).value + 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn cone_mu_is_minus_log_gamma() {
        for &k in &[1usize, 2, 4] {
            let g = build_flat_cone(4, k).unwrap();
            let r = mu_minimize(&g, 1.0, Normalization::Full, &MuOptions::default()).unwrap();
            assert!((r.report.value + (k as f64).ln()).abs() < 1e-4, "{k}: {:?}", r.report);
            assert!(r.report.subterms_consistent());
            let dev = r
                .minimizer
                .grid
                .nodes
                .iter()
                .zip(&r.minimizer.values)
                .map(|(x, u)| (u - (k as f64).sqrt() * (-x * x / 8.0).exp()).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-2);
            assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-13 * w[0].abs().max(1.0)));
        }
    }

    #[test]
    fn mu_ale_vanishes_on_cone() {
        let g = build_flat_cone(4, 2).unwrap();
        let r = mu_minimize(&g, 3.0, Normalization::Ale, &MuOptions::default()).unwrap();
        assert!(r.report.value.abs() < 1e-4);
    }

    #[test]
    fn schwarzschild_mu_below_cone() {
        let g = build_schwarzschild_conformal(4, 2, 0.5).unwrap();
        let r = mu_minimize(&g, 10.0, Normalization::Full, &MuOptions::default()).unwrap();
        assert!(r.report.value < -(2f64).ln(), "{:?}", r.report);
    }

    #[test]
    fn mu_is_scale_invariant() {
        let g = build_schwarzschild_conformal(4, 2, 0.5).unwrap();
        let a = mu_minimize(&g, 4.0, Normalization::Full, &MuOptions::default()).unwrap().report.value;
        let s = build_scaled(&g, 2.0).unwrap();
        let b = mu_minimize(&s, 8.0, Normalization::Full, &MuOptions::default()).unwrap().report.value;
        assert_relative_eq!(a, b, max_relative = 1e-6);
    }
}
