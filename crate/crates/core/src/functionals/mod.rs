//! Static functionals: mass, `F_ALE`, `λ⁰_ALE`, `λ_ALE`, `G_ALE`, `W`, `μ`,
//! `μ_ALE` and `ν`.
//!
//! All integrals are over the manifold `M` itself: a radial integrand `F`
//! contributes `Vol(S^{n-1})/|Γ| ∫ F v dρ`.

mod ale;
mod entropy;
mod mass;

pub use ale::*;
pub use entropy::*;
pub use mass::*;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Core, GeometryError, GeometryModel};
use crate::grid::{Grid, GridSpec};
use crate::quad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("negative scalar curvature {value:.3e} at ρ = {rho:.4} (outside the hypotheses)")]
    NegativeScal { rho: f64, value: f64 },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("divergent integral: {0}")]
    Divergent(String),
}

pub type Result<T> = std::result::Result<T, FunctionalError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subterm {
    pub name: String,
    pub value: f64,
}

/// Value of a functional with its error estimate and full provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub name: String,
    pub metric: String,
    pub value: f64,
    pub error: f64,
    pub params: BTreeMap<String, f64>,
    pub subterms: Vec<Subterm>,
    pub flags: Vec<String>,
}

impl FunctionalReport {
    pub fn new(name: &str, g: &GeometryModel) -> Self {
        let mut params = BTreeMap::new();
        params.insert("n".into(), g.n as f64);
        params.insert("gamma_order".into(), g.gamma_order as f64);
        FunctionalReport {
            name: name.into(),
            metric: g.family.name(),
            value: 0.0,
            error: 0.0,
            params,
            subterms: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn param(mut self, k: &str, v: f64) -> Self {
        self.params.insert(k.into(), v);
        self
    }

    /// Set the subterms; the value becomes their sum.
    pub fn with_subterms(mut self, terms: &[(&str, f64)]) -> Self {
        self.subterms = terms.iter().map(|(k, v)| Subterm { name: k.to_string(), value: *v }).collect();
        self.value = self.subterms.iter().map(|s| s.value).sum();
        self
    }

    pub fn flag(&mut self, msg: impl Into<String>) {
        self.flags.push(msg.into());
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn subterms_consistent(&self) -> bool {
        self.subterms.is_empty() || self.subterms.iter().map(|s| s.value).sum::<f64>() == self.value
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.subterms.iter().find(|s| s.name == name).map(|s| s.value)
    }

    pub fn csv_header() -> &'static str {
        "name,metric,value,error,flags"
    }
}

/// How negative scalar curvature is treated by the `λ`-type functionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalPolicy {
    /// Refuse any `Scal < −1e−10`.
    Require,
    /// Accept negative regions if the operator `−4Δ + Scal` stays coercive
    /// (used for the cutoff metrics `g_R`).
    AllowIfCoercive,
}

/// Default policy: truncated metrics may dip below zero on the cutoff annulus.
pub fn default_policy(g: &GeometryModel) -> ScalPolicy {
    if g.family.name().contains("truncated") {
        ScalPolicy::AllowIfCoercive
    } else {
        ScalPolicy::Require
    }
}

pub fn check_scal(g: &GeometryModel, grid: &Grid, policy: ScalPolicy) -> Result<f64> {
    let mut min = f64::INFINITY;
    let mut at = 0.0;
    for w in grid.nodes.windows(2) {
        for &(r, _) in quad::gauss_points(w[0], w[1]).iter() {
            let s = g.scal(r);
            if s < min {
                min = s;
                at = r;
            }
        }
    }
    if min < -1e-10 && policy == ScalPolicy::Require {
        return Err(FunctionalError::NegativeScal { rho: at, value: min });
    }
    Ok(min)
}

/// Quadrature panels for a radial integral over `[start, end]`: geometric in
/// `ρ − origin` with ratio `1.1`, plus the given breakpoints.
pub fn panels(g: &GeometryModel, start: f64, end: f64, extra: &[f64]) -> Vec<f64> {
    let origin = g.grid_origin();
    let mut pts = vec![start, end];
    let first = if g.core == Core::SmoothCap || start <= origin {
        let s = start + 1e-6 * g.length_scale().max(1e-300);
        pts.push(s);
        s
    } else {
        start
    };
    if end > first {
        let o = if first > origin { origin } else { first - g.length_scale() };
        pts.extend(Grid::geometric(o, first, end, 1.1).nodes);
    }
    pts.extend(extra.iter().cloned().filter(|&x| x > start && x < end));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * a.abs().max(1.0));
    pts
}

/// `Vol(S^{n-1})/|Γ| ∫_start^∞ F(ρ) v(ρ) dρ` with `F` given as a closure of ρ.
/// Beyond `far` the integral uses geometric tail panels.
pub fn manifold_integral<F: Fn(f64) -> f64>(g: &GeometryModel, start: f64, far: f64, extra: &[f64], f: F) -> f64 {
    let om = g.angular_measure();
    let h = |r: f64| f(r) * g.vol_density(r);
    let body = quad::integrate_breaks(&h, &panels(g, start, far, extra));
    let tail = if far > 0.0 { quad::integrate_tail(&h, far) } else { 0.0 };
    om * (body + tail)
}

/// Vertex-centred finite-volume data on a grid: lumped masses `V_i`, scalar
/// curvature masses `∫_{cell_i} Scal dV`, and P1 stiffness weights
/// `K_{i+½} = ∫ v g^{rr} dρ / Δρ²`, all including the angular measure.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub grid: Grid,
    pub mass: Vec<f64>,
    pub scal_mass: Vec<f64>,
    pub stiff: Vec<f64>,
}

impl Discretization {
    pub fn new(g: &GeometryModel, grid: Grid) -> Self {
        let om = g.angular_measure();
        let n = grid.len();
        let mut mass = vec![0.0; n];
        let mut scal_mass = vec![0.0; n];
        let mut stiff = vec![0.0; n - 1];
        // Each dual cell splits into the two half cells adjacent to node i.
        for i in 0..n - 1 {
            let (a, b) = (grid.nodes[i], grid.nodes[i + 1]);
            let m = grid.dual(i).1;
            let mut k = 0.0;
            for (lo, hi, node) in [(a, m, i), (m, b, i + 1)] {
                for &(r, w) in quad::gauss_points(lo, hi).iter() {
                    let fr = g.frame(r);
                    let v = fr.density(g.n);
                    mass[node] += w * v;
                    let s = g.scal(r);
                    scal_mass[node] += w * v * s;
                    k += w * v / fr.a.v;
                }
            }
            stiff[i] = om * k / ((b - a) * (b - a));
        }
        for x in mass.iter_mut().chain(scal_mass.iter_mut()) {
            *x *= om;
        }
        Discretization { grid, mass, scal_mass, stiff }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// `Σ K (Δu)²`.
    pub fn dirichlet(&self, u: &[f64]) -> f64 {
        self.stiff.iter().enumerate().map(|(i, k)| k * (u[i + 1] - u[i]).powi(2)).sum()
    }

    /// `(L u)_i = Σ_faces K (u_i − u_j)`.
    pub fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut out = vec![0.0; n];
        for i in 0..n - 1 {
            let f = self.stiff[i] * (u[i] - u[i + 1]);
            out[i] += f;
            out[i + 1] -= f;
        }
        out
    }

    /// Tridiagonal `(sub, diag, sup)` of `c·L + diag(d)`.
    pub fn tridiag(&self, c: f64, d: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut sub = vec![0.0; n];
        let mut diag = d.to_vec();
        let mut sup = vec![0.0; n];
        for i in 0..n - 1 {
            let k = c * self.stiff[i];
            diag[i] += k;
            diag[i + 1] += k;
            sup[i] = -k;
            sub[i + 1] = -k;
        }
        (sub, diag, sup)
    }
}

/// Thomas algorithm; `None` on a vanishing pivot.
pub fn solve_tridiag(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 || !piv.is_finite() {
        return None;
    }
    c[0] = sup[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - sub[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { sup[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}

/// Grid for a PDE solve on `[start, end]` of model `g`.
pub fn model_grid(g: &GeometryModel, start: f64, end: f64, spec: &GridSpec) -> Grid {
    let origin = g.grid_origin();
    let o = if start > origin { origin } else { start - g.length_scale() };
    Grid::from_spec(o, start, end, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_flat_cone;
    use approx::assert_relative_eq;

    #[test]
    fn flat_masses_sum_to_ball_volume() {
        let g = build_flat_cone(4, 2).unwrap();
        let grid = model_grid(&g, g.rho_core, 3.0, &GridSpec::default());
        let d = Discretization::new(&g, grid);
        let vol: f64 = d.mass.iter().sum();
        let exact = std::f64::consts::PI.powi(2) / 2.0 * (3f64.powi(4) - 1e-12) / 2.0;
        assert_relative_eq!(vol, exact, max_relative = 1e-12);
    }

    #[test]
    fn tridiagonal_solver() {
        let sub = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let sup = [-1.0, -1.0, 0.0];
        let x = solve_tridiag(&sub, &diag, &sup, &[1.0, 0.0, 1.0]).unwrap();
        for v in x {
            assert_relative_eq!(v, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn gaussian_weight_on_cone() {
        let g = build_flat_cone(4, 2).unwrap();
        let tau = 1.0;
        let v = manifold_integral(&g, g.rho_core, 20.0, &[], |r| (-r * r / (4.0 * tau)).exp());
        let exact = (4.0 * std::f64::consts::PI * tau).powi(2) / 2.0;
        assert_relative_eq!(v, exact, max_relative = 1e-9);
    }
}
