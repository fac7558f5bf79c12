//! Cohomogeneity-one Ricci flow, the conjugate heat flow and the dynamical
//! `λ` functional.
//!
//! The metric is kept in radial gauge, `ds² + Σ f_i(s,t)² (block metrics)`,
//! by adding the Lie derivative along `V ∂_s` with `V(s) = ∫_{s₀}^s Ric_ss`:
//! `∂_t f_i = −Ric_ii f_i + V ∂_s f_i`. The unknowns are the deviations from
//! the initial profiles; the right-hand side combines the exact jets of the
//! initial model with finite-difference jets of the deviation, so static
//! solutions stay static to rounding. The far field is the initial model
//! translated by `σ(t) = ∫ V(R_max)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{exponent_fit, fit_limit, ExponentFit};
use crate::functionals::{
    adm_mass_on_ladder, lambda_ale_with, solve_tridiag, Discretization, FunctionalError, FunctionalReport,
    ScalPolicy,
};
use crate::geometry::{
    build_arclength, build_sampled, verify_ale_order, Blocks, Core, Frame, GeometryError, GeometryModel, Sampled,
};
use crate::grid::{lagrange_d1, lagrange_d2, Grid};
use crate::jet::Jet;
use crate::quad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("invalid flow request: {0}")]
    Invalid(String),
    #[error("conjugate heat flow lost positivity at t = {t}: min u = {min_u:.3e}")]
    Positivity { t: f64, min_u: f64 },
}

pub type Result<T> = std::result::Result<T, FlowError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowOptions {
    pub horizon: f64,
    /// Stored time levels (uniform); the conjugate flow steps between them.
    pub levels: usize,
    /// Number of diagnostic snapshots, evenly spaced over the levels.
    pub snapshots: usize,
    /// Explicit step as a fraction of `min h² A`.
    pub cfl: f64,
    /// Spacing at the core in units of the length scale.
    pub spacing: f64,
    /// Growth ratio of the spacing.
    pub ratio: f64,
    /// `R_max` in units of the length scale.
    pub extent: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { horizon: 0.5, levels: 400, snapshots: 6, cfl: 0.2, spacing: 0.02, ratio: 1.03, extent: 2e4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerBoundary {
    /// Reflection across a minimal sphere.
    Neumann,
    /// Core region held at the initial metric.
    Frozen,
}

/// One diagnostic slice of a flow.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub level: usize,
    pub model: GeometryModel,
    pub mass: f64,
    pub mass_error: f64,
    pub beta_fit: f64,
    pub beta_band: (f64, f64),
    /// `sup_x max(|Ric_rr|, |Ric_ii|)` in the orthonormal frame.
    pub sup_ricci: f64,
}

#[derive(Clone, Debug)]
struct Level {
    t: f64,
    delta: Vec<Vec<f64>>,
    shift: f64,
    /// Gauge velocity `V` at the nodes.
    velocity: Vec<f64>,
}

struct Rate {
    d: Vec<Vec<f64>>,
    velocity: Vec<f64>,
    sup_ricci: f64,
    /// Curvature part of `∂_t f` at the last node, relative to its interior maximum.
    edge: f64,
}

#[derive(Clone, Debug)]
pub struct Flow {
    pub g0: GeometryModel,
    pub grid: Grid,
    pub inner: InnerBoundary,
    pub options: FlowOptions,
    pub ladder: Vec<f64>,
    pub states: Vec<FlowState>,
    pub steps: usize,
    /// Largest `|∂_t g|` at the last interior node relative to the interior maximum.
    pub boundary_flux: f64,
    pub flags: Vec<String>,
    base: Vec<Frame>,
    levels: Vec<Level>,
    discs: Vec<Discretization>,
    /// `∫_{R_max}^∞ Scal dV` of the frozen far field.
    scal_tail: f64,
    ric_tail: f64,
    /// `V` of the initial metric: by quadrature, and by the nodal formula.
    base_velocity: Vec<(f64, f64)>,
}

fn components(fr: &Frame) -> Vec<Jet> {
    match fr.blocks {
        Blocks::Round(b) => vec![fr.a, b],
        Blocks::Berger { b, c } => vec![fr.a, b, c],
    }
}

fn frame_of(c: &[Jet]) -> Frame {
    let blocks = if c.len() == 2 { Blocks::Round(c[1]) } else { Blocks::Berger { b: c[1], c: c[2] } };
    Frame { a: c[0], blocks }
}

impl Flow {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.t).collect()
    }

    pub fn time(&self, j: usize) -> f64 {
        self.levels[j].t
    }

    /// Index of the stored level nearest to `t`.
    pub fn level_of(&self, t: f64) -> usize {
        let mut best = 0;
        for (j, l) in self.levels.iter().enumerate() {
            if (l.t - t).abs() < (self.levels[best].t - t).abs() {
                best = j;
            }
        }
        best
    }

    /// Value, first and second derivative of the deviation in component `c`.
    fn delta_jets(&self, delta: &[f64]) -> Vec<(f64, f64, f64)> {
        let x = &self.grid.nodes;
        let o = self.grid.origin;
        let n = x.len();
        (0..n)
            .map(|i| {
                if i == 0 {
                    return match self.inner {
                        InnerBoundary::Neumann => {
                            let h = x[1] - x[0];
                            (delta[0], 0.0, 2.0 * (delta[1] - delta[0]) / (h * h))
                        }
                        InnerBoundary::Frozen => (
                            delta[0],
                            lagrange_d1(x[0], x[1], x[2], delta[0], delta[1], delta[2], x[0]),
                            lagrange_d2(x[0], x[1], x[2], delta[0], delta[1], delta[2]),
                        ),
                    };
                }
                // Quadratic in `ξ = log(x − origin)`, where the grid is uniform.
                let c = i.min(n - 2);
                let (a, b, d) = (c - 1, c, c + 1);
                let xi = |k: usize| (x[k] - o).ln();
                let d1 = lagrange_d1(xi(a), xi(b), xi(d), delta[a], delta[b], delta[d], xi(i));
                let d2 = lagrange_d2(xi(a), xi(b), xi(d), delta[a], delta[b], delta[d]);
                let r = x[i] - o;
                (delta[i], d1 / r, (d2 - d1) / (r * r))
            })
            .collect()
    }

    fn jets(&self, delta: &[Vec<f64>]) -> Vec<Vec<Jet>> {
        let per: Vec<Vec<(f64, f64, f64)>> = delta.iter().map(|d| self.delta_jets(d)).collect();
        (0..self.grid.len())
            .map(|i| {
                components(&self.base[i])
                    .iter()
                    .enumerate()
                    .map(|(c, j)| {
                        let (v, d1, d2) = per[c][i];
                        *j + Jet::new(v, d1, d2, 0.0)
                    })
                    .collect()
            })
            .collect()
    }

    fn first_active(&self) -> usize {
        match self.inner {
            InnerBoundary::Neumann => 0,
            InnerBoundary::Frozen => 1,
        }
    }

    fn rate(&self, delta: &[Vec<f64>]) -> Rate {
        let n = self.g0.n;
        let jets = self.jets(delta);
        let x = &self.grid.nodes;
        let m = x.len();
        let curv: Vec<_> = jets.iter().map(|c| frame_of(c).curvature(n)).collect();
        // `V = ∫ Ric_ss = −Σ m_b [f_b'/f_b] − Σ m_b ∫ (f_b'/f_b)²`, anchored to the
        // initial profile at the core.
        let log_slopes = |c: &[Jet], mult: &[usize]| -> (f64, f64) {
            let mut lin = 0.0;
            let mut sq = 0.0;
            for b in 1..c.len() {
                let q = c[b].d1 / c[b].v;
                lin += mult[b - 1] as f64 * q;
                sq += mult[b - 1] as f64 * q * q;
            }
            (lin, sq)
        };
        let mult = curv[0].mult;
        let slopes: Vec<(f64, f64)> = jets.iter().map(|c| log_slopes(c, &mult)).collect();
        let anchor = log_slopes(&components(&self.base[0]), &mult).0;
        // Cumulative integral in `ξ = log(x − origin)` from the quadratic
        // through neighbouring nodes.
        let o = self.grid.origin;
        let g: Vec<f64> = (0..m).map(|i| slopes[i].1 * (x[i] - o)).collect();
        let mut velocity = vec![0.0; m];
        let mut acc = 0.0;
        for i in 0..m {
            if i > 0 {
                let h = ((x[i] - o) / (x[i - 1] - o)).ln();
                acc += if i == 1 {
                    h / 12.0 * (5.0 * g[0] + 8.0 * g[1] - g[2])
                } else {
                    h / 12.0 * (-g[i - 2] + 8.0 * g[i - 1] + 5.0 * g[i])
                };
            }
            velocity[i] = anchor - slopes[i].0 - acc;
        }
        for i in 0..m {
            velocity[i] += self.base_velocity[i].0 - self.base_velocity[i].1;
        }
        if self.inner == InnerBoundary::Frozen {
            velocity[0] = 0.0;
        }
        let mut d = vec![vec![0.0; m]; delta.len()];
        let (mut sup, mut interior, mut edge) = (0.0f64, 0.0f64, 0.0f64);
        for i in self.first_active()..m {
            let (c, k) = (&jets[i], &curv[i]);
            sup = sup.max(k.ric_rad.abs());
            for b in 1..c.len() {
                let r = -k.ric_ang[b - 1] * c[b].v;
                d[b][i] = r + velocity[i] * c[b].d1;
                sup = sup.max(k.ric_ang[b - 1].abs());
                if i == m - 1 {
                    edge = edge.max(r.abs());
                } else {
                    interior = interior.max(r.abs());
                }
            }
        }
        let edge = if interior > 1e-10 { edge / interior } else { 0.0 };
        Rate { d, velocity, sup_ricci: sup, edge }
    }


    fn model(&self, delta: &[Vec<f64>], shift: f64) -> GeometryModel {
        let jets = self.jets(delta);
        let ncomp = delta.len();
        let comps: Vec<[Vec<f64>; 3]> = (0..ncomp)
            .map(|c| {
                [
                    jets.iter().map(|j| j[c].v).collect(),
                    jets.iter().map(|j| j[c].d1).collect(),
                    jets.iter().map(|j| j[c].d2).collect(),
                ]
            })
            .collect();
        let g0 = Arc::new(self.g0.clone());
        let sampled = Sampled {
            nodes: self.grid.nodes.clone(),
            comps,
            berger: ncomp == 3,
            outer: Some(g0.clone()),
            inner: if self.inner == InnerBoundary::Frozen { Some(g0) } else { None },
            shift,
            scale: self.g0.length_scale(),
            scal: Some(jets.iter().map(|c| frame_of(c).curvature(self.g0.n).scal).collect()),
        };
        let mut g = build_sampled(&self.g0, sampled);
        g.rho_core = self.g0.rho_core + shift;
        g
    }

    /// Flow grid in the coordinates of the level-`j` model.
    pub fn grid_at(&self, j: usize) -> Grid {
        let s = self.levels[j].shift;
        Grid { origin: self.grid.origin + s, nodes: self.grid.nodes.iter().map(|x| x + s).collect() }
    }

    /// Translation `σ(t)` of the far field at level `j`.
    pub fn shift(&self, j: usize) -> f64 {
        self.levels[j].shift
    }

    /// Metric at stored level `j`.
    pub fn model_at(&self, j: usize) -> GeometryModel {
        self.model(&self.levels[j].delta, self.levels[j].shift)
    }


    /// Largest deviation `|g(t) − g(0)|` over nodes, components and levels.
    pub fn max_drift(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.delta.iter().flat_map(|d| d.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn state(&self, j: usize) -> Result<FlowState> {
        let model = self.model_at(j);
        let sup = self.rate(&self.levels[j].delta).sup_ricci;
        let (mass, mass_error) = if self.g0.beta > (self.g0.n as f64 - 2.0) / 2.0 {
            // Nodes carry the profiles without interpolation error.
            let grid = self.grid_at(j);
            let snapped: Vec<f64> = self
                .ladder
                .iter()
                .map(|&r| grid.nodes[grid.nodes.partition_point(|&x| x < r).min(grid.len() - 1)])
                .collect();
            match area_radius_mass(&model, &snapped) {
                Some(v) => v,
                None => {
                    let r = adm_mass_on_ladder(&model, &self.ladder)?;
                    (r.value, r.error)
                }
            }
        } else {
            (f64::NAN, f64::NAN)
        };
        let fit = verify_ale_order(&model, Some(&self.ladder))?;
        Ok(FlowState {
            t: self.levels[j].t,
            level: j,
            model,
            mass,
            mass_error,
            beta_fit: fit.beta_fit,
            beta_band: fit.beta_band,
            sup_ricci: sup,
        })
    }

    /// Relative mass drift over the snapshots (absolute when the mass is zero).
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.states[0].mass;
        let scale = if m0.abs() > 0.0 { m0.abs() } else { 1.0 };
        self.states.iter().map(|s| (s.mass - m0).abs() / scale).fold(0.0, f64::max)
    }

    /// Whether each fitted `β(t)` stays above its predecessor's band.
    pub fn beta_non_decreasing(&self) -> bool {
        self.states.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            if a.beta_fit.is_infinite() {
                return b.beta_fit.is_infinite();
            }
            let slack = (a.beta_band.1 - a.beta_band.0).max(b.beta_band.1 - b.beta_band.0);
            b.beta_fit >= a.beta_fit - slack - 1e-9
        })
    }
}

/// ADM mass of a round radial-gauge metric from `(n−1) Vol(S^{n−1}/Γ) f^{n−2}(1 − f_s²)`
/// on the ladder, extrapolated at the flux rate. The quantity depends only on
/// the geometry of each sphere, so the gauge translation of the flow does not
/// enter.
pub fn area_radius_mass(g: &GeometryModel, ladder: &[f64]) -> Option<(f64, f64)> {
    let n = g.n as f64;
    let c = (n - 1.0) * g.angular_measure();
    let mut vals = Vec::with_capacity(ladder.len());
    for &r in ladder {
        let fr = g.frame(r);
        let Blocks::Round(f) = fr.blocks else { return None };
        let fs = f.d1 / fr.a.v.sqrt();
        vals.push(c * f.v.powf(n - 2.0) * (1.0 - fs * fs));
    }
    let fit = fit_limit(ladder, &vals, crate::functionals::ladder_rate(g));
    Some((fit.limit, fit.error))
}

/// Diagnostic ladder: far enough out that the evolving core has not reached
/// it, close enough in that `1 − f_s²` is above rounding.
fn flow_ladder(g: &GeometryModel, r_max: f64) -> Vec<f64> {
    let l = g.length_scale();
    let r0 = 64.0 * l + g.rho_core.abs();
    let mut v: Vec<f64> = (0..4).map(|j| r0 * 2f64.powi(j)).take_while(|&r| r <= r_max / 10.0).collect();
    if v.len() < 3 {
        v = (0..3).map(|j| r_max / 40.0 * 2f64.powi(j)).collect();
    }
    v
}

pub fn ricci_flow(g0: &GeometryModel, opts: &FlowOptions) -> Result<Flow> {
    if !(opts.horizon > 0.0) || opts.levels < 2 || opts.snapshots < 2 || !(opts.cfl > 0.0 && opts.cfl <= 0.5) {
        return Err(FlowError::Invalid("need horizon > 0, levels ≥ 2, snapshots ≥ 2, 0 < cfl ≤ 0.5".into()));
    }
    let g = build_arclength(g0)?;
    if matches!(g.family, crate::geometry::Family::Sampled(_)) {
        return Err(FlowError::Invalid("restart from a sampled slice is not supported".into()));
    }
    let l = g.length_scale();
    let minimal = {
        let fr = g.frame(g.rho_core);
        components(&fr)[1..].iter().all(|f| f.d1.abs() < 1e-6)
    };
    let inner =
        if g.core == Core::NeumannBoundary && minimal { InnerBoundary::Neumann } else { InnerBoundary::Frozen };
    let h0 = opts.spacing * l;
    let x0 = match inner {
        InnerBoundary::Neumann => g.rho_core,
        InnerBoundary::Frozen => g.rho_core + h0,
    };
    let r_max = x0 + opts.extent * l;
    let origin = x0 - h0 / (opts.ratio - 1.0);
    let grid = Grid::geometric(origin, x0, r_max, opts.ratio);
    let base: Vec<Frame> = grid.nodes.iter().map(|&x| g.frame(x)).collect();
    let ncomp = if g.is_berger() { 3 } else { 2 };
    let ladder = flow_ladder(&g, r_max);
    let om = g.angular_measure();
    let scal_tail = om * quad::integrate_tail(|r| g.scal(r) * g.vol_density(r), r_max);
    let ric_tail = om
        * quad::integrate_tail(
            |r| {
                let k = g.curvature(r);
                let s: f64 = k.ric_rad.powi(2) + (0..k.blocks).map(|i| k.mult[i] as f64 * k.ric_ang[i].powi(2)).sum::<f64>();
                s * g.vol_density(r)
            },
            r_max,
        );
    let mut flow = Flow {
        g0: g,
        grid,
        inner,
        options: opts.clone(),
        ladder,
        states: Vec::new(),
        steps: 0,
        boundary_flux: 0.0,
        flags: Vec::new(),
        base,
        levels: Vec::new(),
        discs: Vec::new(),
        scal_tail,
        ric_tail,
        base_velocity: Vec::new(),
    };
    {
        let x = &flow.grid.nodes;
        let mut exact = vec![0.0; x.len()];
        for i in 1..x.len() {
            exact[i] = exact[i - 1] + quad::gauss(|r| flow.g0.curvature(r).ric_rad, x[i - 1], x[i]);
        }
        flow.base_velocity = vec![(0.0, 0.0); x.len()];
        let zero = vec![vec![0.0; x.len()]; ncomp];
        let nodal = flow.rate(&zero).velocity;
        flow.base_velocity = exact.into_iter().zip(nodal).collect();
    }
    let m = flow.grid.len();
    let mut delta = vec![vec![0.0; m]; ncomp];
    let mut shift = 0.0;
    let r0 = flow.rate(&delta);
    if inner == InnerBoundary::Frozen {
        let core_rate = (1..ncomp).map(|c| r0.d[c][1].abs()).fold(0.0, f64::max);
        if core_rate > 1e-8 {
            flow.flags.push(format!("core held fixed although ∂_t g = {core_rate:.2e} next to it"));
        }
    }
    let dt_level = opts.horizon / opts.levels as f64;
    flow.levels.push(Level { t: 0.0, delta: delta.clone(), shift, velocity: r0.velocity });
    let x = flow.grid.nodes.clone();
    let stable_dt = |d: &[Vec<f64>], v: &[f64]| -> f64 {
        (0..m - 1)
            .map(|i| {
                let h = x[i + 1] - x[i];
                let f = (1..d.len()).map(|c| components(&flow.base[i])[c].v + d[c][i]).fold(f64::INFINITY, f64::min);
                (h * h).min(f * f).min(h / v[i].abs().max(1e-300))
            })
            .fold(f64::INFINITY, f64::min)
    };
    let axpy = |a: f64, u: &[Vec<f64>], b: f64, w: &[Vec<f64>], c: f64, r: &[Vec<f64>]| -> Vec<Vec<f64>> {
        u.iter()
            .zip(w)
            .zip(r)
            .map(|((u, w), r)| (0..m).map(|i| a * u[i] + b * w[i] + c * r[i]).collect())
            .collect()
    };
    let mut rate = flow.rate(&delta);
    'outer: for j in 1..=opts.levels {
        let dt_max = opts.cfl * stable_dt(&delta, &rate.velocity);
        if !(dt_max > 1e-12 * opts.horizon) {
            flow.flags.push(format!("step size underflow at t = {:.4}: horizon truncated", flow.levels.last().unwrap().t));
            break;
        }
        let k = (dt_level / dt_max).ceil().max(1.0) as usize;
        let dt = dt_level / k as f64;
        for _ in 0..k {
            let r1 = &rate;
            let u1 = axpy(1.0, &delta, 0.0, &delta, dt, &r1.d);
            let s1 = shift + dt * r1.velocity[m - 1];
            let r2 = flow.rate(&u1);
            let u2 = axpy(0.75, &delta, 0.25, &u1, 0.25 * dt, &r2.d);
            let s2 = 0.75 * shift + 0.25 * (s1 + dt * r2.velocity[m - 1]);
            let r3 = flow.rate(&u2);
            let next = axpy(1.0 / 3.0, &delta, 2.0 / 3.0, &u2, 2.0 / 3.0 * dt, &r3.d);
            let ok = (0..m).all(|i| {
                (1..ncomp).all(|c| {
                    let v = components(&flow.base[i])[c].v + next[c][i];
                    v.is_finite() && v > 0.0
                })
            });
            if !ok {
                flow.flags
                    .push(format!("metric degenerated near t = {:.4}: horizon truncated", flow.levels.last().unwrap().t));
                break 'outer;
            }
            shift = shift / 3.0 + 2.0 / 3.0 * (s2 + dt * r3.velocity[m - 1]);
            delta = next;
            rate = flow.rate(&delta);
            flow.steps += 1;
        }
        flow.boundary_flux = flow.boundary_flux.max(rate.edge);
        flow.levels.push(Level { t: j as f64 * dt_level, delta: delta.clone(), shift, velocity: rate.velocity.clone() });
    }
    if flow.boundary_flux > 1e-8 {
        flow.flags.push(format!("far boundary carries {:.2e} of the interior rate", flow.boundary_flux));
    }
    let last = flow.levels.len() - 1;
    let picks: Vec<usize> = {
        let mut v: Vec<usize> = (0..opts.snapshots).map(|k| (k * last + (opts.snapshots - 1) / 2) / (opts.snapshots - 1)).collect();
        v.dedup();
        v
    };
    let states: Vec<Result<FlowState>> = picks.par_iter().map(|&j| flow.state(j)).collect();
    flow.states = states.into_iter().collect::<Result<Vec<_>>>()?;
    let discs: Vec<Discretization> =
        (0..flow.levels.len()).into_par_iter().map(|j| Discretization::new(&flow.model_at(j), flow.grid_at(j))).collect();
    flow.discs = discs;
    Ok(flow)
}

/// `u = e^{−f^{t₀}}` at every stored level `j ≤ j₀`.
#[derive(Clone, Debug)]
pub struct ConjugateFlow {
    pub t0: f64,
    pub j0: usize,
    pub u: Vec<Vec<f64>>,
    pub max_u: f64,
    pub min_u: f64,
    pub flags: Vec<String>,
}

impl ConjugateFlow {
    /// `f = −log u` at level `j`.
    pub fn potential(&self, j: usize) -> Vec<f64> {
        self.u[j].iter().map(|u| -u.ln()).collect()
    }
}

/// Integrate `∂_τ u = Δu − Scal u`, `τ = t₀ − t`, from `u ≡ 1` at `t₀`
/// backward over the stored levels (backward Euler, `u = 1` at `R_max`).
pub fn conjugate_heat_flow(flow: &Flow, t0: f64) -> Result<ConjugateFlow> {
    conjugate_heat_flow_from(flow, t0, &|_| 1.0)
}

/// As [`conjugate_heat_flow`] with the initial datum `u(·, t₀) = seed`.
pub fn conjugate_heat_flow_from(flow: &Flow, t0: f64, seed: &(dyn Fn(f64) -> f64 + Sync)) -> Result<ConjugateFlow> {
    let j0 = flow.level_of(t0);
    if (flow.time(j0) - t0).abs() > 0.5 * flow.options.horizon / flow.options.levels as f64 + 1e-12 {
        return Err(FlowError::Invalid(format!("t₀ = {t0} lies outside the computed flow")));
    }
    for d in &flow.discs[..=j0] {
        // Truncation error of the finite differences can leave Scal slightly
        // negative where the continuous flow has it positive.
        let floor = 1e-3 * (0..d.len()).map(|i| (d.scal_mass[i] / d.mass[i]).abs()).fold(1e-7, f64::max);
        if let Some(i) = (0..d.len()).find(|&i| d.scal_mass[i] < -floor * d.mass[i]) {
            return Err(FunctionalError::NegativeScal { rho: d.grid.nodes[i], value: d.scal_mass[i] / d.mass[i] }.into());
        }
    }
    let m = flow.grid.len();
    let mut u: Vec<Vec<f64>> = vec![Vec::new(); j0 + 1];
    u[j0] = flow.grid_at(j0).nodes.iter().map(|&x| seed(x)).collect();
    u[j0][m - 1] = 1.0;
    let mut flags = Vec::new();
    for j in (0..j0).rev() {
        let dtau = flow.time(j + 1) - flow.time(j);
        let d = &flow.discs[j];
        let diag: Vec<f64> = (0..m).map(|i| d.mass[i] + dtau * d.scal_mass[i]).collect();
        let (mut sub, mut dg, mut sup) = d.tridiag(dtau, &diag);
        // Transport by the gauge field, `−V ∂_s u`, upwinded.
        let x = &flow.grid.nodes;
        let vel = &flow.levels[j].velocity;
        for i in 1..m - 1 {
            let v = vel[i];
            if v > 0.0 {
                let c = dtau * d.mass[i] * v / (x[i] - x[i - 1]);
                dg[i] += c;
                sub[i] -= c;
            } else {
                let c = -dtau * d.mass[i] * v / (x[i + 1] - x[i]);
                dg[i] += c;
                sup[i] -= c;
            }
        }
        let mut rhs: Vec<f64> = (0..m).map(|i| d.mass[i] * u[j + 1][i]).collect();
        sub[m - 1] = 0.0;
        dg[m - 1] = 1.0;
        sup[m - 1] = 0.0;
        rhs[m - 1] = 1.0;
        let next = solve_tridiag(&sub, &dg, &sup, &rhs)
            .ok_or_else(|| FunctionalError::NonConvergence("singular conjugate heat step".into()))?;
        let min = next.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(FlowError::Positivity { t: flow.time(j), min_u: min });
        }
        u[j] = next;
    }
    let max_u = u.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_u = u.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    if max_u > 1.0 + 1e-8 {
        flags.push(format!("maximum principle violated: max u = {max_u}"));
    }
    Ok(ConjugateFlow { t0: flow.time(j0), j0, u, max_u, min_u, flags })
}

/// Nodal `(u, u_x, u_xx)`, with the reflection closure at a Neumann neck.
fn nodal_derivatives(flow: &Flow, u: &[f64]) -> Vec<(f64, f64, f64)> {
    let x = &flow.grid.nodes;
    let n = x.len();
    (0..n)
        .map(|i| {
            if i == 0 && flow.inner == InnerBoundary::Neumann {
                let h = x[1] - x[0];
                return (u[0], 0.0, 2.0 * (u[1] - u[0]) / (h * h));
            }
            let c = i.clamp(1, n - 2);
            let (a, b, d) = (c - 1, c, c + 1);
            (u[i], lagrange_d1(x[a], x[b], x[d], u[a], u[b], u[d], x[i]), lagrange_d2(x[a], x[b], x[d], u[a], u[b], u[d]))
        })
        .collect()
}

/// `λ^{t₀}_dym(t) = ∫(|∇f|² + Scal) e^{−f} dV − 𝔪` at level `j`, written as
/// `∫ 4|∇√u|² + Scal u` on the finite-volume cells.
pub fn lambda_dym(flow: &Flow, conj: &ConjugateFlow, j: usize) -> Result<FunctionalReport> {
    if j > conj.j0 {
        return Err(FlowError::Invalid(format!("level {j} is after t₀")));
    }
    let d = &flow.discs[j];
    let u = &conj.u[j];
    let w: Vec<f64> = u.iter().map(|v| v.sqrt()).collect();
    let dir = 4.0 * d.dirichlet(&w);
    let scal: f64 = d.scal_mass.iter().zip(u).map(|(s, v)| s * v).sum::<f64>() + flow.scal_tail;
    let mass = flow.states[0].mass;
    let g = flow.model_at(j);
    let mut rep = FunctionalReport::new("lambda_dym", &g)
        .param("t", flow.time(j))
        .param("t0", conj.t0)
        .with_subterms(&[("dirichlet", dir), ("scal", scal), ("mass", -mass)]);
    rep.metric = format!("flow({})", flow.g0.family.name());
    // Consistency with the quadrature of the interpolated profile.
    let rf = crate::radial::RadialFunction::from_values(
        flow.grid_at(j),
        w.clone(),
        crate::radial::FarField::Constant(1.0),
    );
    let mut e = 0.0;
    for c in flow.grid_at(j).nodes.windows(2) {
        e += quad::gauss(
            |x| {
                let (_, dw, _) = crate::radial::Radial::eval(&rf, x);
                let fr = g.frame(x);
                4.0 * dw * dw / fr.a.v * fr.density(g.n)
            },
            c[0],
            c[1],
        );
    }
    rep.error = (e * g.angular_measure() - dir).abs() + flow.states[0].mass_error;
    if conj.j0 == j {
        rep.params.insert("scal_integral".into(), scal);
    }
    Ok(rep)
}

/// `2∫|Ric + Hess f|² e^{−f} dV` at level `j`.
pub fn monotonicity_integral(flow: &Flow, conj: &ConjugateFlow, j: usize) -> f64 {
    let n = flow.g0.n;
    let delta = &flow.levels[j].delta;
    let jets = flow.jets(delta);
    let ud = nodal_derivatives(flow, &conj.u[j]);
    let vals: Vec<f64> = (0..flow.grid.len())
        .map(|i| {
            let fr = frame_of(&jets[i]);
            let k = fr.curvature(n);
            let (u, ux, uxx) = ud[i];
            let a = fr.a;
            let fx = -ux / u;
            let fxx = -uxx / u + (ux / u).powi(2);
            let h_rr = (fxx - a.d1 * fx / (2.0 * a.v)) / a.v;
            let fs = fx / a.v.sqrt();
            let mut s = (k.ric_rad + h_rr).powi(2);
            for b in 0..k.blocks {
                s += k.mult[b] as f64 * (k.ric_ang[b] + fs * k.dlog[b]).powi(2);
            }
            s * u * fr.density(n)
        })
        .collect();
    let x = &flow.grid.nodes;
    let body: f64 = (0..x.len() - 1).map(|i| 0.5 * (vals[i] + vals[i + 1]) * (x[i + 1] - x[i])).sum();
    2.0 * (flow.g0.angular_measure() * body + flow.ric_tail)
}

/// Finite-difference `dλ_dym/dt` at level `j` against the integral form.
pub fn monotonicity_defect(flow: &Flow, conj: &ConjugateFlow, j: usize) -> Result<FunctionalReport> {
    if j == 0 || j >= conj.j0 {
        return Err(FlowError::Invalid("defect needs an interior level before t₀".into()));
    }
    let lm = lambda_dym(flow, conj, j - 1)?.value;
    let lp = lambda_dym(flow, conj, j + 1)?.value;
    let dt = flow.time(j + 1) - flow.time(j - 1);
    let lhs = (lp - lm) / dt;
    let rhs = monotonicity_integral(flow, conj, j);
    let scale = rhs.abs().max(lhs.abs());
    let defect = if scale > 1e-12 { (lhs - rhs).abs() / scale } else { 0.0 };
    let g = flow.model_at(j);
    let mut rep = FunctionalReport::new("monotonicity_defect", &g)
        .param("t", flow.time(j))
        .param("t0", conj.t0)
        .param("d_dt_lambda", lhs)
        .param("integral", rhs);
    rep.metric = format!("flow({})", flow.g0.family.name());
    rep.value = defect;
    if rhs < -1e-12 {
        rep.flag(format!("negative integral side {rhs:.3e}"));
    }
    if defect > 0.05 {
        rep.flag(format!("monotonicity defect {:.1}% exceeds 5%", 100.0 * defect));
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DymComparison {
    pub t0: f64,
    pub t: f64,
    pub lambda_dym: f64,
    pub lambda_ale: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// `λ^{t₀}_dym(t) ≥ λ_ALE(g(t))` at level `j`.
pub fn lambda_dym_vs_lambda_ale(flow: &Flow, conj: &ConjugateFlow, j: usize) -> Result<DymComparison> {
    let dym = lambda_dym(flow, conj, j)?;
    let g = flow.model_at(j);
    let ale = lambda_ale_with(&g, ScalPolicy::AllowIfCoercive)?;
    let tolerance = dym.error + ale.error + 1e-6 * ale.value.abs().max(1.0);
    let margin = dym.value - ale.value;
    Ok(DymComparison {
        t0: conj.t0,
        t: flow.time(j),
        lambda_dym: dym.value,
        lambda_ale: ale.value,
        margin,
        tolerance,
        holds: margin >= -tolerance,
    })
}

/// `λ^∞_dym(t)` reported as the value at the largest `t₀` with the trend
/// over the preceding ones.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DymInfinity {
    pub t: f64,
    pub t0s: Vec<f64>,
    pub values: Vec<f64>,
    pub value: f64,
    pub trend: f64,
}

pub fn lambda_dym_infinity(flow: &Flow, t0s: &[f64], t: f64) -> Result<DymInfinity> {
    let j = flow.level_of(t);
    let mut pairs = Vec::new();
    for &t0 in t0s {
        let c = conjugate_heat_flow(flow, t0)?;
        if c.j0 >= j {
            pairs.push((c.t0, lambda_dym(flow, &c, j)?.value));
        }
    }
    if pairs.is_empty() {
        return Err(FlowError::Invalid("no t₀ at or after t".into()));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (t0s, values): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let k = values.len();
    let trend = if k >= 2 { (values[k - 1] - values[k - 2]) / (t0s[k - 1] - t0s[k - 2]) } else { 0.0 };
    Ok(DymInfinity { t: flow.time(j), value: values[k - 1], t0s, values, trend })
}

/// Spatial decay of `f^{t₀}` at level `j` against `C(τ) r^{−2−β}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialDecay {
    pub tau: f64,
    pub max_f: f64,
    pub fit: ExponentFit,
    pub bound_exponent: f64,
    pub holds: bool,
}

pub fn potential_decay(flow: &Flow, conj: &ConjugateFlow, j: usize) -> PotentialDecay {
    let f = conj.potential(j);
    let grid = flow.grid_at(j);
    let x = &grid.nodes;
    let l = flow.g0.length_scale();
    let lo = flow.g0.rho_core.max(0.0) + 8.0 * l;
    let hi = flow.g0.rho_core.max(0.0) + 64.0 * l;
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(&f)
        .filter(|(r, v)| **r >= lo && **r <= hi && **v > 1e-14)
        .map(|(r, v)| (*r, *v))
        .unzip();
    let fit = exponent_fit(&xs, &ys);
    let bound_exponent = -2.0 - flow.g0.beta;
    let max_f = f.iter().cloned().fold(0.0, f64::max);
    let holds = xs.len() < 3 || fit.exponent <= bound_exponent + 0.3;
    PotentialDecay { tau: conj.t0 - flow.time(j), max_f, fit, bound_exponent, holds }
}

/// Per-snapshot row of a flow run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowRow {
    pub t: f64,
    pub mass: f64,
    pub beta: f64,
    pub sup_ricci: f64,
    /// `(t₀, λ^{t₀}_dym(t))` for every `t₀ ≥ t`.
    pub lambda_dym: Vec<(f64, f64)>,
    pub lambda_ale: f64,
    pub defect: Option<f64>,
}

/// Everything the flow acceptance checks need, over a list of `t₀`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowSummary {
    pub metric: String,
    pub horizon: f64,
    pub steps: usize,
    pub rows: Vec<FlowRow>,
    pub mass_drift: f64,
    pub beta_non_decreasing: bool,
    pub max_u: f64,
    pub lambda_dym_monotone: bool,
    pub max_defect: f64,
    pub dominates_lambda_ale: bool,
    pub min_margin: f64,
    pub decay: Vec<PotentialDecay>,
    pub flags: Vec<String>,
}

impl FlowSummary {
    pub fn passes(&self) -> bool {
        self.flags.is_empty()
    }
}

pub fn summarize(flow: &Flow, t0s: &[f64]) -> Result<FlowSummary> {
    let conj: Vec<ConjugateFlow> = t0s.par_iter().map(|&t0| conjugate_heat_flow(flow, t0)).collect::<Result<_>>()?;
    let mut flags = flow.flags.clone();
    let max_u = conj.iter().map(|c| c.max_u).fold(f64::NEG_INFINITY, f64::max);
    for c in &conj {
        flags.extend(c.flags.iter().cloned());
    }
    let rows: Vec<Result<FlowRow>> = flow
        .states
        .par_iter()
        .map(|s| {
            let mut lambda_dym_vals = Vec::new();
            let mut defect: Option<f64> = None;
            for c in &conj {
                if c.j0 >= s.level {
                    lambda_dym_vals.push((c.t0, lambda_dym(flow, c, s.level)?.value));
                    if s.level > 0 && s.level < c.j0 {
                        let d = monotonicity_defect(flow, c, s.level)?.value;
                        defect = Some(defect.map_or(d, |e: f64| e.max(d)));
                    }
                }
            }
            let lambda_ale = lambda_ale_with(&s.model, ScalPolicy::AllowIfCoercive)?.value;
            Ok(FlowRow {
                t: s.t,
                mass: s.mass,
                beta: s.beta_fit,
                sup_ricci: s.sup_ricci,
                lambda_dym: lambda_dym_vals,
                lambda_ale,
                defect,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut monotone = true;
    let mut min_margin = f64::INFINITY;
    let mut dominates = true;
    for c in &conj {
        let series: Vec<(usize, f64, f64)> = flow
            .states
            .iter()
            .filter(|s| s.level <= c.j0)
            .map(|s| {
                let r = lambda_dym(flow, c, s.level).unwrap();
                (s.level, r.value, r.error)
            })
            .collect();
        for w in series.windows(2) {
            if w[1].1 < w[0].1 - (w[0].2 + w[1].2) {
                monotone = false;
            }
        }
        for s in flow.states.iter().filter(|s| s.level <= c.j0) {
            let cmp = lambda_dym_vs_lambda_ale(flow, c, s.level)?;
            min_margin = min_margin.min(cmp.margin);
            dominates &= cmp.holds;
        }
    }
    let max_defect = rows.iter().filter_map(|r| r.defect).fold(0.0, f64::max);
    let decay: Vec<PotentialDecay> = conj.iter().map(|c| potential_decay(flow, c, 0)).collect();
    let mass_drift = flow.mass_drift();
    let beta_ok = flow.beta_non_decreasing();
    if mass_drift > 1e-5 {
        flags.push(format!("mass drift {mass_drift:.2e} exceeds 1e-5"));
    }
    if !beta_ok {
        flags.push("fitted β decreased beyond the fit band".into());
    }
    if !monotone {
        flags.push("λ_dym decreased".into());
    }
    if max_defect > 0.05 {
        flags.push(format!("monotonicity defect {:.1}%", 100.0 * max_defect));
    }
    if !dominates {
        flags.push(format!("λ_dym fell below λ_ALE (margin {min_margin:.3e})"));
    }
    for d in &decay {
        if !d.holds {
            flags.push(format!("f decays at rate {:.2}, slower than {:.2}", d.fit.exponent, d.bound_exponent));
        }
    }
    Ok(FlowSummary {
        metric: flow.g0.family.name(),
        horizon: flow.time(flow.len() - 1),
        steps: flow.steps,
        rows,
        mass_drift,
        beta_non_decreasing: beta_ok,
        max_u,
        lambda_dym_monotone: monotone,
        max_defect,
        dominates_lambda_ale: dominates,
        min_margin,
        decay,
        flags,
    })
}

/// The warped bump used by the flow checks: a positive-mass conformal star
/// with a concentrated region of positive scalar curvature, in radial gauge
/// with a Neumann neck.
pub fn warped_bump() -> std::result::Result<GeometryModel, GeometryError> {
    let g = crate::geometry::build_conformal(4, 1, 2.0, 0.1, 0.5, None, false)?;
    build_arclength(&g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::*;

    fn quick() -> FlowOptions {
        FlowOptions { horizon: 0.1, levels: 40, snapshots: 3, ..FlowOptions::default() }
    }

    #[test]
    fn flat_cone_is_static() {
        let g = build_flat_cone(4, 2).unwrap();
        let f = ricci_flow(&g, &quick()).unwrap();
        assert!(f.max_drift() < 1e-12, "{}", f.max_drift());
        let c = conjugate_heat_flow(&f, 0.1).unwrap();
        assert!(c.u.iter().flatten().all(|u| (u - 1.0).abs() < 1e-12));
        assert!(lambda_dym(&f, &c, 0).unwrap().value.abs() < 1e-10);
    }

    #[test]
    fn eguchi_hanson_is_static() {
        let g = build_eguchi_hanson(1.0).unwrap();
        let f = ricci_flow(&g, &FlowOptions { horizon: 1.0, levels: 20, snapshots: 2, ..FlowOptions::default() }).unwrap();
        assert!(f.max_drift() < 1e-6, "{}", f.max_drift());
        assert!(f.flags.is_empty(), "{:?}", f.flags);
    }

    #[test]
    fn schwarzschild_neck_flows_with_constant_mass() {
        let g = build_schwarzschild_conformal(4, 1, 0.5).unwrap();
        let f = ricci_flow(&g, &FlowOptions { horizon: 0.1, levels: 20, snapshots: 3, ..FlowOptions::default() }).unwrap();
        assert_eq!(f.inner, InnerBoundary::Neumann);
        assert!(f.max_drift() > 1e-3);
        assert!(f.mass_drift() < 1e-5, "{}", f.mass_drift());
    }

    #[test]
    fn neck_scalar_curvature_stays_positive() {
        let g = build_schwarzschild_conformal(4, 1, 2.0).unwrap();
        let f = ricci_flow(&g, &FlowOptions { horizon: 0.01, levels: 4, snapshots: 2, ..FlowOptions::default() })
            .unwrap();
        let last = f.len() - 1;
        let m = f.model_at(last);
        let k = f.g0.curvature(f.g0.rho_core);
        let ric2 = k.ric_rad.powi(2) + 3.0 * k.ric_ang[0].powi(2);
        let scal = m.scal(m.rho_core + 1e-9);
        // `∂_t Scal = ΔScal + 2|Ric|²` with `Scal(0) = 0`.
        assert!(scal > 0.0);
        assert!((scal / f.time(last) - 2.0 * ric2).abs() < 0.1 * ric2, "{scal} {ric2}");
    }

    #[test]
    fn conjugate_flow_respects_the_maximum_principle() {
        let g = warped_bump().unwrap();
        let f = ricci_flow(&g, &quick()).unwrap();
        let c = conjugate_heat_flow(&f, 0.1).unwrap();
        assert!(c.max_u <= 1.0 + 1e-12 && c.min_u > 0.0);
        assert!(c.min_u < 1.0);
    }

    #[test]
    fn lambda_dym_at_t0_is_total_scalar_curvature_minus_mass() {
        let g = warped_bump().unwrap();
        let f = ricci_flow(&g, &quick()).unwrap();
        let c = conjugate_heat_flow(&f, 0.1).unwrap();
        let r = lambda_dym(&f, &c, c.j0).unwrap();
        assert!(r.get("dirichlet").unwrap().abs() < 1e-12);
        let gm = f.model_at(c.j0);
        let gr = f.grid_at(c.j0);
        let direct = crate::functionals::manifold_integral(&gm, gm.rho_core, gr.last(), &gr.nodes, |x| gm.scal(x));
        let scal = r.get("scal").unwrap();
        assert!((scal - direct).abs() < 1e-3 * direct.abs(), "{scal} vs {direct}");
    }
}
