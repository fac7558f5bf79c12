//! Radially symmetric ALE metrics.
//!
//! Every model is a diagonal cohomogeneity-one metric
//! `g = A(ρ) dρ² + Σ_i f_i(ρ)² (orbit block i)` over `(ρ_core, ∞) × S^{n-1}/Γ`.
//! Two orbit types are supported: the round sphere with a single warp `B`
//! (multiplicity `n − 1`), and for `n = 4` the Berger sphere
//! `b²(σ₁² + σ₂²) + c²σ₃²` with `dσ_i = 2σ_j ∧ σ_k`, so that `b = c = ρ` is the
//! Euclidean metric. Profiles are evaluated as [`Jet`]s, which gives exact
//! derivatives to all curvature formulas below.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::jet::Jet;
use crate::quad;
use crate::radial::{FarField, Radial, RadialFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("input is not ALE of the declared order: {0}")]
    NonAle(String),
    #[error("radius {rho} lies inside the core (ρ_core = {rho_core})")]
    InsideCore { rho: f64, rho_core: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("insufficient far-field coverage: {0}")]
    Coverage(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Core {
    SmoothCap,
    Bolt,
    NeumannBoundary,
}

impl fmt::Display for Core {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Core::SmoothCap => "smooth_cap",
            Core::Bolt => "bolt",
            Core::NeumannBoundary => "neumann",
        };
        f.write_str(s)
    }
}

/// Decaying warp profiles for the arclength family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warp {
    /// `B = ρ (1 + c ρ^{-p})`.
    Power { c: f64, p: f64 },
    /// `B = ρ (1 + c ρ^{-p})^{1/2}`, i.e. `h = c ρ^{-p} ρ² g_{S}`.
    Psi { c: f64, p: f64 },
}

impl Warp {
    fn b(&self, x: Jet) -> Jet {
        match *self {
            Warp::Power { c, p } => x * (1.0 + x.powf(-p) * c),
            Warp::Psi { c, p } => x * (1.0 + x.powf(-p) * c).sqrt(),
        }
    }

    /// `B²/ρ² − 1` without cancellation.
    pub fn psi(&self, x: Jet) -> Jet {
        match *self {
            Warp::Power { c, p } => {
                let b = x.powf(-p) * c;
                b * (b + 2.0)
            }
            Warp::Psi { c, p } => x.powf(-p) * c,
        }
    }

    fn decay(&self) -> (f64, f64) {
        match *self {
            Warp::Power { c, p } | Warp::Psi { c, p } => (c, p),
        }
    }
}

/// The angular part of a [`Frame`].
#[derive(Clone, Copy, Debug)]
pub enum Blocks {
    Round(Jet),
    Berger { b: Jet, c: Jet },
}

/// Metric coefficients at one radius, as jets in the chart coordinate.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub a: Jet,
    pub blocks: Blocks,
}

impl Frame {
    pub fn flat(rho: f64, berger: bool) -> Frame {
        let x = Jet::var(rho);
        let blocks = if berger { Blocks::Berger { b: x, c: x } } else { Blocks::Round(x) };
        Frame { a: Jet::constant(1.0), blocks }
    }

    /// `(jet, multiplicity)` for each block.
    pub fn parts(&self, n: usize) -> ([(Jet, usize); 2], usize) {
        match self.blocks {
            Blocks::Round(b) => ([(b, n - 1), (b, 0)], 1),
            Blocks::Berger { b, c } => ([(b, 2), (c, 1)], 2),
        }
    }

    /// `log(√A Π f_i^{m_i})` as a jet.
    pub fn log_density(&self, n: usize) -> Jet {
        let (parts, k) = self.parts(n);
        let mut s = self.a.ln() * 0.5;
        for &(f, m) in parts.iter().take(k) {
            s = s + f.ln() * m as f64;
        }
        s
    }

    pub fn density(&self, n: usize) -> f64 {
        let (parts, k) = self.parts(n);
        let mut v = self.a.v.sqrt();
        for &(f, m) in parts.iter().take(k) {
            v *= f.v.powi(m as i32);
        }
        v
    }

    /// Euclidean-frame trace of the angular perturbation, `Σ m_i (f_i²/ρ² − 1)`,
    /// with its ρ-derivative.
    pub fn angular_trace(&self, n: usize, rho: f64) -> (f64, f64) {
        let (parts, k) = self.parts(n);
        let mut t = 0.0;
        let mut dt = 0.0;
        for &(f, m) in parts.iter().take(k) {
            let q = f.v / rho;
            t += m as f64 * (q * q - 1.0);
            dt += m as f64 * 2.0 * q * (f.d1 * rho - f.v) / (rho * rho);
        }
        (t, dt)
    }

    pub fn curvature(&self, n: usize) -> Curvature {
        let inv = self.a.sqrt().recip();
        let (parts, k) = self.parts(n);
        let mut x = [0.0; 2];
        let mut y = [0.0; 2];
        let mut mult = [0usize; 2];
        for i in 0..k {
            let (f, m) = parts[i];
            let fs = f.deriv() * inv;
            x[i] = fs.v / f.v;
            y[i] = fs.d1 * inv.v / f.v;
            mult[i] = m;
        }
        let orb = match self.blocks {
            Blocks::Round(b) => [(n as f64 - 2.0) / (b.v * b.v), 0.0],
            Blocks::Berger { b, c } => {
                let (b2, c2) = (b.v * b.v, c.v * c.v);
                [4.0 / b2 - 2.0 * c2 / (b2 * b2), 2.0 * c2 / (b2 * b2)]
            }
        };
        let sum_x: f64 = (0..k).map(|i| mult[i] as f64 * x[i]).sum();
        let ric_rad = -(0..k).map(|i| mult[i] as f64 * y[i]).sum::<f64>();
        let mut ric_ang = [0.0; 2];
        for i in 0..k {
            ric_ang[i] = -y[i] - x[i] * (sum_x - x[i]) + orb[i];
        }
        let mut scal = ric_rad + (0..k).map(|i| mult[i] as f64 * ric_ang[i]).sum::<f64>();
        // Zero out values below the rounding level of the summed terms.
        let size: f64 = (0..k)
            .map(|i| mult[i] as f64 * (2.0 * y[i].abs() + x[i].abs() * (sum_x.abs() + x[i].abs()) + orb[i].abs()))
            .sum();
        if scal.abs() <= 1e-14 * size {
            scal = 0.0;
        }
        Curvature { scal, ric_rad, ric_ang, dlog: x, mult, blocks: k }
    }
}

/// Orthonormal-frame Ricci components and Scal of a cohomogeneity-one metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvature {
    pub scal: f64,
    pub ric_rad: f64,
    pub ric_ang: [f64; 2],
    /// Arclength log-derivatives `f_{i,s}/f_i`.
    pub dlog: [f64; 2],
    pub mult: [usize; 2],
    pub blocks: usize,
}

#[derive(Clone, Debug)]
pub enum Family {
    FlatCone,
    Warped { warp: Warp },
    EguchiHanson { a: f64 },
    /// `φ = 1 + m/(2ρ^{n-2}) + k(ρ² + ℓ²)^{-(n-2)/2}`, `g = φ^{4/(n-2)} g_e`.
    Conformal { m: f64, k: f64, ell: f64 },
    Truncated { base: Arc<GeometryModel>, r: f64 },
    Scaled { base: Arc<GeometryModel>, s: f64 },
    Arclength(Arc<Arclength>),
    Sampled(Arc<Sampled>),
}

impl Family {
    pub fn name(&self) -> String {
        match self {
            Family::FlatCone => "flat_cone".into(),
            Family::Warped { .. } => "warped".into(),
            Family::EguchiHanson { .. } => "eguchi_hanson".into(),
            Family::Conformal { k, .. } if *k == 0.0 => "schwarzschild_conformal".into(),
            Family::Conformal { .. } => "conformal_star".into(),
            Family::Truncated { base, .. } => format!("truncated({})", base.family.name()),
            Family::Scaled { base, .. } => format!("scaled({})", base.family.name()),
            Family::Arclength(a) => format!("radial_gauge({})", a.base.family.name()),
            Family::Sampled(_) => "sampled".into(),
        }
    }
}

/// A radially symmetric ALE metric.
#[derive(Clone, Debug)]
pub struct GeometryModel {
    pub n: usize,
    pub gamma_order: usize,
    pub core: Core,
    pub rho_core: f64,
    /// Declared ALE order; `f64::INFINITY` for metrics flat near infinity.
    pub beta: f64,
    pub family: Family,
    pub family_params: BTreeMap<String, f64>,
}

/// Area of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    // Γ(n/2) by recurrence from Γ(1) = 1, Γ(1/2) = √π.
    let mut g = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if n % 2 == 0 { 1.0 } else { 0.5 };
    while x < n as f64 / 2.0 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    2.0 * PI.powf(n as f64 / 2.0) / g
}

/// Quintic smoothstep `6x⁵ − 15x⁴ + 10x³` clamped to `[0, 1]`, as a jet.
pub fn smoothstep(x: Jet) -> Jet {
    if x.v <= 0.0 {
        return Jet::constant(0.0);
    }
    if x.v >= 1.0 {
        return Jet::constant(1.0);
    }
    let t = x.v;
    let f0 = t * t * t * (t * (6.0 * t - 15.0) + 10.0);
    let f1 = 30.0 * t * t * (t - 1.0) * (t - 1.0);
    let f2 = 60.0 * t * (2.0 * t - 1.0) * (t - 1.0);
    let f3 = 60.0 * (6.0 * t * t - 6.0 * t + 1.0);
    x.compose(f0, f1, f2, f3)
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl GeometryModel {
    pub fn is_berger(&self) -> bool {
        match &self.family {
            Family::EguchiHanson { .. } => true,
            Family::Truncated { base, .. } | Family::Scaled { base, .. } => base.is_berger(),
            Family::Arclength(a) => a.base.is_berger(),
            Family::Sampled(s) => s.berger,
            _ => false,
        }
    }

    /// Angular measure `Vol(S^{n-1})/|Γ|`.
    pub fn angular_measure(&self) -> f64 {
        sphere_area(self.n) / self.gamma_order as f64
    }

    /// True where the metric is exactly Euclidean in its chart.
    pub fn is_flat_at(&self, rho: f64) -> bool {
        match &self.family {
            Family::FlatCone => true,
            Family::Truncated { r, .. } => rho >= 2.0 * r,
            Family::Scaled { base, s } => base.is_flat_at(rho / s.sqrt()),
            _ => false,
        }
    }

    pub fn frame(&self, rho: f64) -> Frame {
        let n = self.n as f64;
        match &self.family {
            Family::FlatCone => Frame::flat(rho, false),
            Family::Warped { warp } => Frame { a: Jet::constant(1.0), blocks: Blocks::Round(warp.b(Jet::var(rho))) },
            Family::EguchiHanson { a } => {
                let x = Jet::var(rho);
                let f = 1.0 - x.powf(-4.0) * a.powi(4);
                Frame { a: f.recip(), blocks: Blocks::Berger { b: x, c: x * f.sqrt() } }
            }
            Family::Conformal { m, k, ell } => {
                let x = Jet::var(rho);
                let mut phi = 1.0 + x.powf(2.0 - n) * (0.5 * m);
                if *k != 0.0 {
                    phi = phi + (x * x + ell * ell).powf(1.0 - 0.5 * n) * *k;
                }
                let a = phi.powf(4.0 / (n - 2.0));
                let b = phi.powf(2.0 / (n - 2.0)) * x;
                Frame { a, blocks: Blocks::Round(b) }
            }
            Family::Truncated { base, r } => {
                if rho >= 2.0 * r {
                    return Frame::flat(rho, base.is_berger());
                }
                let bf = base.frame(rho);
                if rho <= *r {
                    return bf;
                }
                let x = Jet::var(rho);
                let chi = smoothstep((2.0 * r - x) / *r);
                let one_m = 1.0 - chi;
                let a = chi * bf.a + one_m;
                let blend = |f: Jet| (chi * f * f + one_m * x * x).sqrt();
                let blocks = match bf.blocks {
                    Blocks::Round(b) => Blocks::Round(blend(b)),
                    Blocks::Berger { b, c } => Blocks::Berger { b: blend(b), c: blend(c) },
                };
                Frame { a, blocks }
            }
            Family::Scaled { base, s } => {
                let rs = s.sqrt();
                let x = Jet::new(rho / rs, 1.0 / rs, 0.0, 0.0);
                let bf = base.frame(rho / rs);
                let a = bf.a.chain(x);
                let blocks = match bf.blocks {
                    Blocks::Round(b) => Blocks::Round(b.chain(x) * rs),
                    Blocks::Berger { b, c } => Blocks::Berger { b: b.chain(x) * rs, c: c.chain(x) * rs },
                };
                Frame { a, blocks }
            }
            Family::Arclength(al) => al.frame(rho),
            Family::Sampled(sp) => sp.frame(rho),
        }
    }

    pub fn grr(&self, rho: f64) -> f64 {
        self.frame(rho).a.v
    }

    /// `g_rr − 1` without cancellation at large radii.
    pub fn grr_minus_one(&self, rho: f64) -> f64 {
        let n = self.n as f64;
        match &self.family {
            Family::FlatCone | Family::Warped { .. } | Family::Arclength(_) => 0.0,
            Family::EguchiHanson { a } => {
                let q = (a / rho).powi(4);
                q / (1.0 - q)
            }
            Family::Conformal { m, k, ell } => {
                let d = 0.5 * m * rho.powf(2.0 - n) + k * (rho * rho + ell * ell).powf(1.0 - 0.5 * n);
                (4.0 / (n - 2.0) * d.ln_1p()).exp_m1()
            }
            Family::Truncated { base, r } => {
                if rho >= 2.0 * r {
                    0.0
                } else {
                    smoothstep(Jet::constant((2.0 * r - rho) / r)).v * base.grr_minus_one(rho)
                }
            }
            Family::Scaled { base, s } => base.grr_minus_one(rho / s.sqrt()),
            Family::Sampled(_) => self.grr(rho) - 1.0,
        }
    }

    /// `√g_rr − 1` without cancellation.
    pub fn sqrt_grr_minus_one(&self, rho: f64) -> f64 {
        let d = self.grr_minus_one(rho);
        d / ((1.0 + d).sqrt() + 1.0)
    }

    pub fn vol_density(&self, rho: f64) -> f64 {
        self.frame(rho).density(self.n)
    }

    pub fn curvature(&self, rho: f64) -> Curvature {
        self.frame(rho).curvature(self.n)
    }

    /// Scal at ρ (errors inside the core).
    pub fn scalar_curvature(&self, rho: f64) -> Result<f64> {
        if rho < self.rho_core || (rho == self.rho_core && self.core == Core::Bolt) {
            return Err(GeometryError::InsideCore { rho, rho_core: self.rho_core });
        }
        Ok(self.scal(rho))
    }

    /// Scal without the core check (callers sample strictly outside the core).
    pub fn scal(&self, rho: f64) -> f64 {
        if self.is_flat_at(rho) {
            return 0.0;
        }
        let n = self.n as f64;
        match &self.family {
            Family::EguchiHanson { .. } => 0.0,
            Family::Conformal { m, k, ell } => {
                if *k == 0.0 || *ell == 0.0 {
                    return 0.0;
                }
                let q = rho * rho + ell * ell;
                let phi = 1.0 + 0.5 * m * rho.powf(2.0 - n) + k * q.powf(1.0 - 0.5 * n);
                4.0 * (n - 1.0) * n * ell * ell * k * q.powf(-0.5 * (n + 2.0)) * phi.powf(-(n + 2.0) / (n - 2.0))
            }
            Family::Scaled { base, s } => base.scal(rho / s.sqrt()) / s,
            Family::Truncated { base, r } if rho <= *r => base.scal(rho),
            Family::Sampled(sp) => sp.nodal_scal(rho).unwrap_or_else(|| self.curvature(rho).scal),
            _ => self.curvature(rho).scal,
        }
    }

    /// Characteristic inner length of the model.
    pub fn length_scale(&self) -> f64 {
        let n = self.n as f64;
        match &self.family {
            Family::FlatCone => 1.0,
            Family::Warped { warp } => {
                let (c, p) = warp.decay();
                c.abs().powf(1.0 / p).max(self.rho_core).max(1e-3)
            }
            Family::EguchiHanson { a } => *a,
            Family::Conformal { m, k, ell } => (0.5 * m.abs())
                .powf(1.0 / (n - 2.0))
                .max(k.abs().powf(1.0 / (n - 2.0)))
                .max(*ell)
                .max(self.rho_core)
                .max(1e-3),
            Family::Truncated { r, .. } => 2.0 * r,
            Family::Scaled { base, s } => base.length_scale() * s.sqrt(),
            Family::Arclength(al) => al.base.length_scale(),
            Family::Sampled(sp) => sp.scale,
        }
    }

    /// Origin of the geometric grading used by grid builders.
    pub fn grid_origin(&self) -> f64 {
        match &self.family {
            Family::Arclength(_) | Family::Sampled(_) => self.rho_core - self.length_scale(),
            Family::Scaled { base, s } => base.grid_origin() * s.sqrt(),
            _ => 0.0,
        }
    }

    /// First grid node for a grid whose finest cells near the core have
    /// size `~ delta` (used only for smooth caps, where the axis is excluded).
    pub fn grid_start(&self, delta: f64) -> f64 {
        match self.core {
            Core::SmoothCap => self.rho_core + delta,
            _ => self.rho_core,
        }
    }

    /// `log(v_g / ρ^{n-1})` as a jet, the weighted-volume correction.
    pub fn log_volume_ratio(&self, rho: f64) -> Jet {
        let x = Jet::var(rho);
        self.frame(rho).log_density(self.n) - x.ln() * (self.n as f64 - 1.0)
    }

    /// Export `(ρ, g_rr, v, Scal)` rows.
    pub fn table(&self, grid: &Grid) -> Vec<[f64; 4]> {
        grid.nodes
            .iter()
            .filter(|&&r| r > self.rho_core || self.core == Core::NeumannBoundary)
            .map(|&r| {
                let fr = self.frame(r);
                [r, fr.a.v, fr.density(self.n), self.scal(r)]
            })
            .collect()
    }
}

/// Flat cone `ℝⁿ/Γ`.
pub fn build_flat_cone(n: usize, gamma_order: usize) -> Result<GeometryModel> {
    if n < 3 {
        return Err(GeometryError::InvalidParameter(format!("dimension {n} < 3")));
    }
    if gamma_order < 1 {
        return Err(GeometryError::InvalidParameter("group order must be ≥ 1".into()));
    }
    let (core, rho_core) = if gamma_order == 1 { (Core::SmoothCap, 0.0) } else { (Core::NeumannBoundary, 1e-3) };
    Ok(GeometryModel {
        n,
        gamma_order,
        core,
        rho_core,
        beta: f64::INFINITY,
        family: Family::FlatCone,
        family_params: BTreeMap::new(),
    })
}

/// Warped model `dρ² + B(ρ)² g_{S^{n-1}/Γ}` with `B = ρ(1 + b)`.
///
/// When `B` has an interior minimum the core is the Neumann neck there;
/// otherwise `rho_core` must be supplied.
pub fn build_warped(n: usize, gamma_order: usize, warp: Warp, beta: f64, rho_core: Option<f64>) -> Result<GeometryModel> {
    let base = build_flat_cone(n, gamma_order)?;
    let (c, p) = warp.decay();
    if c == 0.0 {
        return Ok(base);
    }
    if !(beta > 0.0) {
        return Err(GeometryError::InvalidParameter("β must be positive".into()));
    }
    // ρ^{β+k}|b^{(k)}| must stay bounded along a dyadic ladder.
    let b_of = |r: f64| {
        let x = Jet::var(r);
        warp.b(x) / x - 1.0
    };
    let scale = c.abs().powf(1.0 / p);
    let probe: Vec<f64> = (0..12).map(|j| 4.0 * scale * 2f64.powi(j)).collect();
    for k in 0..3 {
        let w: Vec<f64> = probe
            .iter()
            .map(|&r| {
                let j = b_of(r);
                let d = [j.v, j.d1, j.d2][k];
                r.powf(beta + k as f64) * d.abs()
            })
            .collect();
        if w.last().unwrap() > &(2.0 * w[0].max(1e-300)) && w.last().unwrap() > &1e-12 {
            return Err(GeometryError::NonAle(format!(
                "ρ^(β+{k})|b^({k})| grows along the ladder ({:.3e} → {:.3e})",
                w[0],
                w.last().unwrap()
            )));
        }
    }
    let neck = find_neck(|r| warp.b(Jet::var(r)), 1e-6 * scale, 1e3 * scale);
    let rho_core = match (rho_core, neck) {
        (Some(r), _) => r,
        (None, Some(r)) => r,
        (None, None) => {
            return Err(GeometryError::InvalidParameter("warp has no neck; rho_core required".into()))
        }
    };
    if warp.b(Jet::var(rho_core)).v <= 0.0 {
        return Err(GeometryError::InvalidParameter("B ≤ 0 at the core radius".into()));
    }
    Ok(GeometryModel {
        n,
        gamma_order,
        core: Core::NeumannBoundary,
        rho_core,
        beta,
        family: Family::Warped { warp },
        family_params: params(&[("c", c), ("p", p), ("beta", beta)]),
    })
}

/// Threshold of the large-τ expansion theorem: `β > n/3` for `n ≤ 6`,
/// `β > (n−2)/2` otherwise.
pub fn expansion_threshold(n: usize) -> f64 {
    if n <= 6 {
        n as f64 / 3.0
    } else {
        (n as f64 - 2.0) / 2.0
    }
}

/// Outermost local minimum of `B` on `[lo, hi]`, located on `B' = 0`.
fn find_neck<F: Fn(f64) -> Jet>(b: F, lo: f64, hi: f64) -> Option<f64> {
    let grid = Grid::geometric(0.0, lo, hi, 1.05);
    let mut found = None;
    for w in grid.nodes.windows(2) {
        let (d0, d1) = (b(w[0]).d1, b(w[1]).d1);
        if d0 < 0.0 && d1 >= 0.0 {
            let (mut a, mut c) = (w[0], w[1]);
            for _ in 0..200 {
                let m = 0.5 * (a + c);
                if b(m).d1 < 0.0 {
                    a = m;
                } else {
                    c = m;
                }
                if c - a <= 1e-16 * c {
                    break;
                }
            }
            found = Some(0.5 * (a + c));
        }
    }
    found
}

/// Eguchi–Hanson metric `dr²/F + r²(σ₁² + σ₂²) + r² F σ₃²`, `F = 1 − (a/r)⁴`,
/// on `T*S²` with group `ℤ₂` at infinity.
pub fn build_eguchi_hanson(a: f64) -> Result<GeometryModel> {
    if !(a > 0.0) {
        return Err(GeometryError::InvalidParameter(format!("bolt radius a = {a} must be positive")));
    }
    Ok(GeometryModel {
        n: 4,
        gamma_order: 2,
        core: Core::Bolt,
        rho_core: a,
        beta: 4.0,
        family: Family::EguchiHanson { a },
        family_params: params(&[("a", a)]),
    })
}

/// Scalar-flat conformally flat model `(1 + m/(2ρ^{n-2}))^{4/(n-2)} g_e`.
pub fn build_schwarzschild_conformal(n: usize, gamma_order: usize, m: f64) -> Result<GeometryModel> {
    build_conformal(n, gamma_order, m, 0.0, 1.0, None, false)
}

/// Conformal family `φ^{4/(n-2)} g_e` with
/// `φ = 1 + m/(2ρ^{n-2}) + k(ρ² + ℓ²)^{-(n-2)/2}`; `k > 0` adds a compactly
/// concentrated region of positive scalar curvature.
///
/// Core: for `m > 0` the minimal sphere (Neumann neck); for `m = 0` and
/// trivial Γ the smooth origin; otherwise a Neumann boundary at `rho_core`.
pub fn build_conformal(
    n: usize,
    gamma_order: usize,
    m: f64,
    k: f64,
    ell: f64,
    rho_core: Option<f64>,
    allow_negative_mass: bool,
) -> Result<GeometryModel> {
    let flat = build_flat_cone(n, gamma_order)?;
    if m == 0.0 && k == 0.0 {
        return Ok(flat);
    }
    if m < 0.0 && !allow_negative_mass {
        return Err(GeometryError::InvalidParameter("negative mass parameter requires the negative-mass flag".into()));
    }
    if k < 0.0 || !(ell > 0.0) {
        return Err(GeometryError::InvalidParameter("need k ≥ 0 and ℓ > 0".into()));
    }
    let nf = n as f64;
    let family = Family::Conformal { m, k, ell };
    let mut model = GeometryModel {
        n,
        gamma_order,
        core: Core::NeumannBoundary,
        rho_core: 0.0,
        beta: nf - 2.0,
        family,
        family_params: params(&[("m", m), ("k", k), ("ell", ell)]),
    };
    let phi = |r: f64| 1.0 + 0.5 * m * r.powf(2.0 - nf) + k * (r * r + ell * ell).powf(1.0 - 0.5 * nf);
    let core = if let Some(r) = rho_core {
        r
    } else if m > 0.0 {
        let l = model.length_scale();
        let probe = model.clone();
        find_neck(move |r| match probe.frame(r).blocks {
            Blocks::Round(b) => b,
            Blocks::Berger { b, .. } => b,
        }, 1e-4 * l, 1e2 * l)
        .ok_or_else(|| GeometryError::InvalidParameter("no minimal sphere found".into()))?
    } else if gamma_order == 1 {
        model.core = Core::SmoothCap;
        0.0
    } else {
        return Err(GeometryError::InvalidParameter("nontrivial Γ without neck requires rho_core".into()));
    };
    if model.core != Core::SmoothCap && phi(core) <= 0.0 {
        return Err(GeometryError::InvalidParameter(format!("conformal factor nonpositive at ρ_core = {core}")));
    }
    model.rho_core = core;
    Ok(model)
}

/// `g_R = χ_R g + (1 − χ_R) g_e` with `χ_R = smoothstep((2R − ρ)/R)`.
pub fn build_truncated(g: &GeometryModel, r: f64) -> Result<GeometryModel> {
    if !(r > g.rho_core) {
        return Err(GeometryError::InvalidParameter(format!("truncation radius {r} inside core")));
    }
    if let Family::FlatCone = g.family {
        return Ok(g.clone());
    }
    let mut fp = g.family_params.clone();
    fp.insert("R".into(), r);
    Ok(GeometryModel {
        n: g.n,
        gamma_order: g.gamma_order,
        core: g.core,
        rho_core: g.rho_core,
        beta: f64::INFINITY,
        family: Family::Truncated { base: Arc::new(g.clone()), r },
        family_params: fp,
    })
}

/// The rescaled metric `s·g`, in the coordinate `√s ρ`.
pub fn build_scaled(g: &GeometryModel, s: f64) -> Result<GeometryModel> {
    if !(s > 0.0) {
        return Err(GeometryError::InvalidParameter("scale must be positive".into()));
    }
    let mut fp = g.family_params.clone();
    fp.insert("s".into(), s);
    Ok(GeometryModel {
        n: g.n,
        gamma_order: g.gamma_order,
        core: g.core,
        rho_core: g.rho_core * s.sqrt(),
        beta: g.beta,
        family: Family::Scaled { base: Arc::new(g.clone()), s },
        family_params: fp,
    })
}

/// Arclength reparameterization `s(ρ) = ρ − ∫_ρ^∞ (√A − 1)` of a base model.
#[derive(Debug)]
pub struct Arclength {
    pub base: Arc<GeometryModel>,
    nodes: Vec<f64>,
    s: Vec<f64>,
}

impl Arclength {
    pub fn new(base: &GeometryModel) -> Result<Arclength> {
        if !(base.beta > 1.0) {
            return Err(GeometryError::InvalidParameter("arclength gauge needs β > 1 (integrable g_rr − 1)".into()));
        }
        let l = base.length_scale();
        let c = base.rho_core;
        let mut nodes = vec![c];
        nodes.extend(Grid::geometric(c, c + 1e-6 * l.max(c), c + 1e4 * l.max(c), 1.05).nodes);
        let base = Arc::new(base.clone());
        let mut al = Arclength { base, nodes, s: Vec::new() };
        let far = *al.nodes.last().unwrap();
        let b = al.base.clone();
        let tail = quad::integrate_tail(|x| b.sqrt_grr_minus_one(x), far);
        let mut s = vec![0.0; al.nodes.len()];
        let last = s.len() - 1;
        s[last] = far - tail;
        for i in (0..last).rev() {
            s[i] = s[i + 1] - al.cell_length(i, al.nodes[i]);
        }
        al.s = s;
        Ok(al)
    }

    /// `∫_{ρ}^{node_{i+1}} √A`, with `ρ = core + t²` on the first cell of a bolt.
    fn cell_length(&self, i: usize, rho: f64) -> f64 {
        let hi = self.nodes[i + 1];
        let b = &self.base;
        if i == 0 && b.core == Core::Bolt {
            let c = b.rho_core;
            let (t0, t1) = ((rho - c).max(0.0).sqrt(), (hi - c).sqrt());
            quad::gauss(|t| 2.0 * t * b.grr(c + t * t).sqrt(), t0, t1)
        } else {
            quad::gauss(|x| b.grr(x).sqrt(), rho, hi)
        }
    }

    pub fn s_of(&self, rho: f64) -> f64 {
        let last = self.nodes.len() - 1;
        if rho >= self.nodes[last] {
            let b = self.base.clone();
            return rho - quad::integrate_tail(|x| b.sqrt_grr_minus_one(x), rho);
        }
        let i = match self.nodes.binary_search_by(|p| p.partial_cmp(&rho).unwrap()) {
            Ok(i) => return self.s[i],
            Err(i) => i.max(1) - 1,
        };
        self.s[i + 1] - self.cell_length(i, rho)
    }

    pub fn s_core(&self) -> f64 {
        self.s[0]
    }

    pub fn rho_of(&self, s: f64) -> f64 {
        let last = self.nodes.len() - 1;
        let (mut lo, mut hi) = if s >= self.s[last] {
            let mut hi = self.nodes[last].max(s) * 2.0;
            while self.s_of(hi) < s {
                hi *= 2.0;
            }
            (self.nodes[last], hi)
        } else if s <= self.s[0] {
            return self.nodes[0];
        } else {
            let i = match self.s.binary_search_by(|p| p.partial_cmp(&s).unwrap()) {
                Ok(i) => return self.nodes[i],
                Err(i) => i - 1,
            };
            (self.nodes[i], self.nodes[i + 1])
        };
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.s_of(x) - s;
            if f == 0.0 {
                return x;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.base.grr(x).sqrt();
            let mut nx = x - f / d;
            if !(nx > lo && nx < hi) {
                nx = 0.5 * (lo + hi);
            }
            if (nx - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * hi {
                return nx;
            }
            x = nx;
        }
        x
    }

    fn frame(&self, s: f64) -> Frame {
        let rho = self.rho_of(s);
        let bf = self.base.frame(rho);
        let q = bf.a.powf(-0.5);
        let x = Jet::new(rho, q.v, q.d1 * q.v, q.d2 * q.v * q.v + q.d1 * q.d1 * q.v);
        let blocks = match bf.blocks {
            Blocks::Round(b) => Blocks::Round(b.chain(x)),
            Blocks::Berger { b, c } => Blocks::Berger { b: b.chain(x), c: c.chain(x) },
        };
        Frame { a: Jet::constant(1.0), blocks }
    }
}

/// Model in the arclength chart of `base` (radial gauge).
pub fn build_arclength(base: &GeometryModel) -> Result<GeometryModel> {
    if matches!(base.family, Family::FlatCone | Family::Warped { .. } | Family::Arclength(_)) {
        return Ok(base.clone());
    }
    let al = Arclength::new(base)?;
    Ok(GeometryModel {
        n: base.n,
        gamma_order: base.gamma_order,
        core: base.core,
        rho_core: al.s_core(),
        beta: base.beta,
        family: Family::Arclength(Arc::new(al)),
        family_params: base.family_params.clone(),
    })
}

/// Metric profiles stored on a grid (value, first and second derivative),
/// interpolated by quintic Hermite polynomials. Beyond the last node the
/// `outer` model is used, below the first node the `inner` one.
#[derive(Debug)]
pub struct Sampled {
    pub nodes: Vec<f64>,
    /// Components `[A, f_1, (f_2)]`, each `[values, d1, d2]`.
    pub comps: Vec<[Vec<f64>; 3]>,
    pub berger: bool,
    pub outer: Option<Arc<GeometryModel>>,
    /// Model used below the first node.
    pub inner: Option<Arc<GeometryModel>>,
    /// Model coordinate minus node coordinate; the inner model is evaluated
    /// in node coordinates, the outer one in model coordinates.
    pub shift: f64,
    pub scale: f64,
    /// Nodal scalar curvature; when present `scal` interpolates it linearly
    /// instead of differentiating the interpolated profiles.
    pub scal: Option<Vec<f64>>,
}

fn quintic_hermite(h: f64, t: f64, y0: [f64; 3], y1: [f64; 3]) -> Jet {
    // Basis on [0,1] for values, slopes and curvatures at both ends.
    let (p0, v0, a0) = (y0[0], y0[1] * h, y0[2] * h * h);
    let (p1, v1, a1) = (y1[0], y1[1] * h, y1[2] * h * h);
    let c0 = p0;
    let c1 = v0;
    let c2 = 0.5 * a0;
    let c3 = -10.0 * p0 - 6.0 * v0 - 1.5 * a0 + 10.0 * p1 - 4.0 * v1 + 0.5 * a1;
    let c4 = 15.0 * p0 + 8.0 * v0 + 1.5 * a0 - 15.0 * p1 + 7.0 * v1 - a1;
    let c5 = -6.0 * p0 - 3.0 * v0 - 0.5 * a0 + 6.0 * p1 - 3.0 * v1 + 0.5 * a1;
    let v = c0 + t * (c1 + t * (c2 + t * (c3 + t * (c4 + t * c5))));
    let d1 = c1 + t * (2.0 * c2 + t * (3.0 * c3 + t * (4.0 * c4 + t * 5.0 * c5)));
    let d2 = 2.0 * c2 + t * (6.0 * c3 + t * (12.0 * c4 + t * 20.0 * c5));
    let d3 = 6.0 * c3 + t * (24.0 * c4 + t * 60.0 * c5);
    Jet::new(v, d1 / h, d2 / (h * h), d3 / (h * h * h))
}

impl Sampled {
    fn nodal_scal(&self, rho: f64) -> Option<f64> {
        let v = self.scal.as_ref()?;
        let x = &self.nodes;
        let y = rho - self.shift;
        if y < x[0] || y > *x.last().unwrap() {
            return None;
        }
        let i = x.partition_point(|&p| p <= y).clamp(1, x.len() - 1);
        let t = (y - x[i - 1]) / (x[i] - x[i - 1]);
        Some((1.0 - t) * v[i - 1] + t * v[i])
    }

    fn comp(&self, c: usize, i: usize, rho: f64) -> Jet {
        let x = &self.nodes;
        let h = x[i + 1] - x[i];
        let t = (rho - x[i]) / h;
        let k = &self.comps[c];
        quintic_hermite(h, t, [k[0][i], k[1][i], k[2][i]], [k[0][i + 1], k[1][i + 1], k[2][i + 1]])
    }

    fn frame(&self, rho: f64) -> Frame {
        let x = &self.nodes;
        let last = *x.last().unwrap();
        let y = rho - self.shift;
        if y > last {
            if let Some(o) = &self.outer {
                return o.frame(rho);
            }
        }
        if y < x[0] {
            if let Some(o) = &self.inner {
                return o.frame(y);
            }
        }
        let r = y.clamp(x[0], last);
        let i = match x.binary_search_by(|p| p.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(x.len() - 2),
            Err(i) => (i.max(1) - 1).min(x.len() - 2),
        };
        let a = self.comp(0, i, r);
        let blocks = if self.berger {
            Blocks::Berger { b: self.comp(1, i, r), c: self.comp(2, i, r) }
        } else {
            Blocks::Round(self.comp(1, i, r))
        };
        Frame { a, blocks }
    }
}

/// Wrap stored profiles as a model.
pub fn build_sampled(template: &GeometryModel, sampled: Sampled) -> GeometryModel {
    GeometryModel {
        n: template.n,
        gamma_order: template.gamma_order,
        core: template.core,
        rho_core: sampled.nodes[0] + sampled.shift,
        beta: template.beta,
        family: Family::Sampled(Arc::new(sampled)),
        family_params: template.family_params.clone(),
    }
}

/// `Δu = v⁻¹ (v g^{rr} u')'` at the nodes of `u`'s grid.
pub fn radial_laplacian(g: &GeometryModel, u: &RadialFunction) -> Result<RadialFunction> {
    if u.grid.first() < g.rho_core - 1e-12 * g.rho_core.abs().max(1.0) {
        return Err(GeometryError::InvalidParameter("grid extends inside the core".into()));
    }
    let d1 = u.grid.derivative(&u.values);
    let d2 = u.nodal_second();
    let vals: Vec<f64> = u
        .grid
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let fr = g.frame(r);
            let ginv = fr.a.recip();
            let lv = fr.log_density(g.n);
            ginv.v * d2[i] + (ginv.v * lv.d1 + ginv.d1) * d1[i]
        })
        .collect();
    let far = FarField::Constant(0.0);
    Ok(RadialFunction::from_values(u.grid.clone(), vals, far))
}

/// Result of [`verify_ale_order`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AleOrderFit {
    pub beta_fit: f64,
    /// Leave-one-out range of the fitted order.
    pub beta_band: (f64, f64),
    pub beta_declared: f64,
    /// `C_k = sup_ladder ρ^{β_fit} ρ^k |∂^k h|` for `k = 0..3`.
    pub constants: [f64; 4],
    pub radii: Vec<f64>,
    pub consistent: bool,
}

/// Components of `h = g − g_e` in the Euclidean frame: `A − 1` and
/// `f_i²/ρ² − 1`, as jets.
fn h_components(g: &GeometryModel, rho: f64) -> Vec<Jet> {
    let fr = g.frame(rho);
    let x = Jet::var(rho);
    let mut out = vec![fr.a - 1.0];
    let (parts, k) = fr.parts(g.n);
    for &(f, _) in parts.iter().take(k) {
        out.push(f * f / (x * x) - 1.0);
    }
    out
}

/// Log–log fit of `Σ_k ρ^k |∂^k h|` over a dyadic ladder.
pub fn verify_ale_order(g: &GeometryModel, ladder: Option<&[f64]>) -> Result<AleOrderFit> {
    let radii: Vec<f64> = match ladder {
        Some(l) => l.to_vec(),
        None => {
            let r0 = 16.0 * g.length_scale().max(g.rho_core.abs());
            (0..7).map(|j| r0 * 2f64.powi(j)).collect()
        }
    };
    if radii.len() < 3 {
        return Err(GeometryError::Coverage("need at least three ladder radii".into()));
    }
    if radii[0] <= g.rho_core {
        return Err(GeometryError::Coverage("ladder starts inside the core".into()));
    }
    let mut per_k = vec![[0.0f64; 4]; radii.len()];
    for (j, &r) in radii.iter().enumerate() {
        for c in h_components(g, r) {
            let d = [c.v, c.d1, c.d2, c.d3];
            for k in 0..4 {
                let w = r.powi(k as i32) * d[k].abs();
                per_k[j][k] = per_k[j][k].max(w);
            }
        }
    }
    let total: Vec<f64> = per_k.iter().map(|w| w.iter().sum()).collect();
    let tiny = total.iter().all(|&t| t < 1e-13);
    if tiny {
        return Ok(AleOrderFit {
            beta_fit: f64::INFINITY,
            beta_band: (f64::INFINITY, f64::INFINITY),
            beta_declared: g.beta,
            constants: [0.0; 4],
            radii,
            consistent: g.beta.is_infinite() || g.beta > 0.0,
        });
    }
    let fit = crate::fit::exponent_fit(&radii, &total);
    let beta_fit = -fit.exponent;
    let beta_band = (-fit.band.1, -fit.band.0);
    let mut constants = [0.0f64; 4];
    for (j, &r) in radii.iter().enumerate() {
        for k in 0..4 {
            constants[k] = constants[k].max(per_k[j][k] * r.powf(beta_fit));
        }
    }
    let consistent = g.beta.is_infinite() || beta_fit >= g.beta - 0.1 * g.beta.max(1.0);
    Ok(AleOrderFit { beta_fit, beta_band, beta_declared: g.beta, constants, radii, consistent })
}

/// `u(ρ)` as an exact closed-form test field for Laplacian checks.
pub struct Power(pub f64);

impl Radial for Power {
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        let p = self.0;
        (r.powf(p), p * r.powf(p - 1.0), p * (p - 1.0) * r.powf(p - 2.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent warped-product oracle, written directly from
    /// `(n−1)[(n−2)(1−B′²)/B² − 2B″/B]` with hand-derived B′, B″.
    fn warped_scal_oracle(n: f64, c: f64, p: f64, r: f64) -> f64 {
        let b = r + c * r.powf(1.0 - p);
        let b1 = 1.0 + c * (1.0 - p) * r.powf(-p);
        let b2 = -c * p * (1.0 - p) * r.powf(-p - 1.0);
        (n - 1.0) * ((n - 2.0) * (1.0 - b1 * b1) / (b * b) - 2.0 * b2 / b)
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(3), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(sphere_area(4), 2.0 * PI * PI, max_relative = 1e-15);
        assert_relative_eq!(sphere_area(5), 8.0 * PI * PI / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn warped_scalar_curvature_matches_oracle() {
        let g = build_warped(4, 1, Warp::Power { c: 1.0, p: 2.0 }, 2.0, None).unwrap();
        for &r in &[1.3, 2.0, 10.0, 37.0] {
            let s = g.scalar_curvature(r).unwrap();
            let o = warped_scal_oracle(4.0, 1.0, 2.0, r);
            assert!((s - o).abs() <= 1e-10 * o.abs().max(1e-6), "{r}: {s} vs {o}");
        }
    }

    #[test]
    fn eguchi_hanson_is_scalar_flat_and_ricci_flat() {
        let g = build_eguchi_hanson(1.0).unwrap();
        for &r in &[1.01, 1.5, 2.0, 3.0, 10.0] {
            let c = g.curvature(r);
            assert!(c.scal.abs() < 1e-8, "Scal({r}) = {}", c.scal);
            assert!(c.ric_rad.abs() < 1e-8 && c.ric_ang[0].abs() < 1e-8 && c.ric_ang[1].abs() < 1e-8);
        }
        assert_relative_eq!(g.vol_density(2.5), 2.5f64.powi(3), max_relative = 1e-14);
    }

    #[test]
    fn schwarzschild_scalar_flat_and_star_positive() {
        let g = build_schwarzschild_conformal(4, 2, 0.5).unwrap();
        assert_relative_eq!(g.rho_core, 0.5, max_relative = 1e-12);
        for &r in &[0.6, 1.0, 5.0, 100.0] {
            assert!(g.scal(r).abs() < 1e-8);
        }
        let n = 5.0;
        let (k, ell) = (0.3, 0.7);
        let s = build_conformal(5, 1, 0.0, k, ell, None, false).unwrap();
        for &r in &[0.1, 0.8, 3.0] {
            let phi = 1.0 + k * (r * r + ell * ell).powf(1.0 - n / 2.0);
            let oracle =
                4.0 * (n - 1.0) * n * ell * ell * k * (r * r + ell * ell).powf(-(n + 2.0) / 2.0) * phi.powf(-(n + 2.0) / (n - 2.0));
            assert_relative_eq!(s.scal(r), oracle, max_relative = 1e-9);
        }
    }

    #[test]
    fn truncation_is_flat_beyond_twice_radius() {
        let g = build_schwarzschild_conformal(4, 2, 0.5).unwrap();
        let t = build_truncated(&g, 50.0).unwrap();
        assert_eq!(t.scal(150.0), 0.0);
        assert_eq!(t.grr(101.0), 1.0);
        assert_relative_eq!(t.grr(30.0), g.grr(30.0), max_relative = 1e-15);
    }

    #[test]
    fn scaling_rescales_curvature() {
        let g = build_conformal(4, 1, 0.0, 0.2, 0.5, None, false).unwrap();
        let s = 3.0;
        let gs = build_scaled(&g, s).unwrap();
        let r = 0.8;
        assert_relative_eq!(gs.scal(r * s.sqrt()), g.scal(r) / s, max_relative = 1e-12);
        assert_relative_eq!(gs.vol_density(r * s.sqrt()), g.vol_density(r) * s.powf(1.5), max_relative = 1e-12);
    }

    #[test]
    fn arclength_chart_preserves_curvature() {
        let g = build_schwarzschild_conformal(4, 2, 0.5).unwrap();
        let al = build_arclength(&g).unwrap();
        assert!(al.rho_core.abs() < 1e-10, "neck at s = {}", al.rho_core);
        if let Family::Arclength(a) = &al.family {
            for &r in &[0.7, 2.0, 9.0] {
                let s = a.s_of(r);
                assert_relative_eq!(a.rho_of(s), r, max_relative = 1e-12);
                let fr = al.frame(s);
                assert_eq!(fr.a.v, 1.0);
                assert_relative_eq!(fr.density(4), g.vol_density(r) / g.grr(r).sqrt(), max_relative = 1e-10);
                assert!(al.scal(s).abs() < 1e-7);
            }
            // s = ρ − m/(2ρ) and B = ρ + m/(2ρ), so B² = s² + 2m for n = 4.
            let s = 3.0;
            if let Blocks::Round(b) = al.frame(s).blocks {
                assert_relative_eq!(b.v, (s * s + 1.0f64).sqrt(), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_of_gaussian_on_flat_cone() {
        let g = build_flat_cone(4, 1).unwrap();
        let tau = 1.0;
        let grid = Grid::geometric(0.0, 0.05, 8.0, 1.01);
        let u = RadialFunction::sample(
            grid,
            |r| {
                let e = (-r * r / (8.0 * tau)).exp();
                (e, -r / (4.0 * tau) * e)
            },
            FarField::Constant(0.0),
        );
        let lap = radial_laplacian(&g, &u).unwrap();
        for (i, &r) in lap.grid.nodes.iter().enumerate().skip(2).step_by(40) {
            let e = (-r * r / (8.0 * tau)).exp();
            let exact = (-4.0 / (4.0 * tau) + r * r / (16.0 * tau * tau)) * e;
            assert!((lap.values[i] - exact).abs() < 2e-3, "{r}");
        }
    }

    #[test]
    fn ale_order_fits() {
        let s = build_schwarzschild_conformal(4, 1, 0.5).unwrap();
        let f = verify_ale_order(&s, None).unwrap();
        assert!((f.beta_fit - 2.0).abs() < 0.05, "{}", f.beta_fit);
        let eh = build_eguchi_hanson(1.0).unwrap();
        let f = verify_ale_order(&eh, None).unwrap();
        assert!((f.beta_fit - 4.0).abs() < 0.1, "{}", f.beta_fit);
        let flat = build_flat_cone(4, 2).unwrap();
        assert!(verify_ale_order(&flat, None).unwrap().beta_fit.is_infinite());
    }

    #[test]
    fn warped_decay_checks() {
        assert!(build_warped(4, 1, Warp::Power { c: 1.0, p: 1.0 }, 2.0, None).is_err());
        let g = build_warped(4, 1, Warp::Power { c: 1.0, p: 1.0 }, 1.0, Some(0.5)).unwrap();
        assert!(g.beta <= expansion_threshold(4));
    }
}
