//! Euclidean-gauge asymptotic data and the radial (arclength) gauge.
//!
//! For `h = φ dρ² + Σ_i (f_i² − ρ²)(block i)` the Euclidean normal fluxes on
//! the sphere of radius ρ are
//! `⟨div_e h, ν⟩ = φ' + (n−1)φ/ρ − T/ρ` and `⟨∇tr_e h, ν⟩ = φ' + T'`,
//! where `T = Σ m_i (f_i²/ρ² − 1)` is the angular trace. The angular term of
//! the divergence survives in radial gauge (`φ = 0`), so mass is always
//! computed from both fluxes.

use serde::{Deserialize, Serialize};

use crate::geometry::{build_arclength, GeometryError, GeometryModel, Result};

/// Tolerance on unit-frame components for gauge checks.
pub const GAUGE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartRecord {
    pub radius: f64,
    /// `h(ν, ν)` in the Euclidean frame.
    pub h_rr: f64,
    /// Mixed components `h(ν, e_a)`; identically zero for diagonal families.
    pub h_rw: f64,
    /// Per-block angular traces `m_i (f_i²/ρ² − 1)`.
    pub h_blocks: Vec<f64>,
    pub tr_h: f64,
    pub div_flux: f64,
    pub grad_tr_flux: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticChart {
    pub n: usize,
    pub gamma_order: usize,
    pub records: Vec<ChartRecord>,
    pub radial_gauge: bool,
}

impl AsymptoticChart {
    pub fn radii(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.radius).collect()
    }

    /// `∫_{S_R} ⟨div_e h − ∇tr_e h, ν⟩ dA_e` at each ladder radius.
    pub fn mass_fluxes(&self, angular_measure: f64) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| (r.div_flux - r.grad_tr_flux) * r.radius.powi(self.n as i32 - 1) * angular_measure)
            .collect()
    }
}

/// Default dyadic ladder `R_j = R_min 2^j`, `j = 0..6`.
pub fn default_ladder(g: &GeometryModel) -> Vec<f64> {
    let r0 = 16.0 * g.length_scale() + g.rho_core.abs();
    (0..7).map(|j| r0 * 2f64.powi(j)).collect()
}

pub fn chart_record(g: &GeometryModel, rho: f64) -> ChartRecord {
    let n = g.n as f64;
    let fr = g.frame(rho);
    let phi = g.grr_minus_one(rho);
    let dphi = fr.a.d1;
    let (parts, k) = fr.parts(g.n);
    let mut blocks = Vec::with_capacity(k);
    let mut t = 0.0;
    let mut dt = 0.0;
    for &(f, m) in parts.iter().take(k) {
        let q = f.v / rho;
        let e = (q - 1.0) * (q + 1.0);
        blocks.push(m as f64 * e);
        t += m as f64 * e;
        dt += m as f64 * 2.0 * q * (f.d1 * rho - f.v) / (rho * rho);
    }
    ChartRecord {
        radius: rho,
        h_rr: phi,
        h_rw: 0.0,
        h_blocks: blocks,
        tr_h: phi + t,
        div_flux: dphi + (n - 1.0) * phi / rho - t / rho,
        grad_tr_flux: dphi + dt,
    }
}

/// Euclidean-gauge data of `g` on a radius ladder.
pub fn asymptotic_chart(g: &GeometryModel, ladder: &[f64]) -> Result<AsymptoticChart> {
    if let Some(&r) = ladder.iter().find(|&&r| r <= g.rho_core) {
        return Err(GeometryError::Coverage(format!("ladder radius {r} is not beyond the core")));
    }
    let records: Vec<ChartRecord> = ladder.iter().map(|&r| chart_record(g, r)).collect();
    let radial_gauge = records.iter().all(|r| r.h_rr.abs() <= GAUGE_TOL && r.h_rw.abs() <= GAUGE_TOL);
    Ok(AsymptoticChart { n: g.n, gamma_order: g.gamma_order, records, radial_gauge })
}

/// Mass flux through the coordinate sphere of radius `r`.
pub fn mass_flux(g: &GeometryModel, r: f64) -> f64 {
    let rec = chart_record(g, r);
    (rec.div_flux - rec.grad_tr_flux) * r.powi(g.n as i32 - 1) * g.angular_measure()
}

/// Rounding level of [`mass_flux`] at `r`, from the sizes of the summed terms.
pub fn mass_flux_noise(g: &GeometryModel, r: f64) -> f64 {
    let rec = chart_record(g, r);
    let n = g.n as f64;
    let size = rec.h_rr.abs() * (n - 1.0) / r + rec.tr_h.abs() / r + rec.div_flux.abs() + rec.grad_tr_flux.abs();
    let fr = g.frame(r);
    let slope = fr.a.d1.abs() + rec.h_blocks.iter().map(|b| b.abs()).sum::<f64>() / r;
    1e-14 * (size + slope + 1.0 / r) * r.powi(g.n as i32 - 1) * g.angular_measure()
}

/// Re-parameterize by arclength so that `h(∂_s, ·) = 0`, with `s − ρ → 0`.
pub fn to_radial_gauge(g: &GeometryModel) -> Result<(GeometryModel, AsymptoticChart)> {
    let out = build_arclength(g)?;
    let ladder = default_ladder(&out);
    let chart = asymptotic_chart(&out, &ladder)?;
    Ok((out, chart))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeCheck {
    pub radial: bool,
    /// Largest `|h(ν, ·)|` over the ladder.
    pub max_violation: f64,
    /// Largest `|⟨div_e h, ν⟩|`, reported separately: it does not vanish in
    /// radial gauge when the angular block is perturbed.
    pub max_div_flux: f64,
    pub worst_radius: f64,
}

pub fn check_radial_gauge(chart: &AsymptoticChart) -> GaugeCheck {
    let mut worst = (0.0f64, chart.records.first().map(|r| r.radius).unwrap_or(0.0));
    let mut div = 0.0f64;
    for r in &chart.records {
        let v = r.h_rr.abs().max(r.h_rw.abs());
        if v > worst.0 {
            worst = (v, r.radius);
        }
        div = div.max(r.div_flux.abs());
    }
    GaugeCheck { radial: worst.0 <= GAUGE_TOL, max_violation: worst.0, max_div_flux: div, worst_radius: worst.1 }
}
