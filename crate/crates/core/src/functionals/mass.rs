use crate::fit::{fit_limit, rate_above};
use crate::gauge::{default_ladder, mass_flux, mass_flux_noise};
use crate::geometry::GeometryModel;

use super::{FunctionalError, FunctionalReport, Result};

/// Ladder decay rate `n − 2β − 2` of boundary terms.
pub fn ladder_rate(g: &GeometryModel) -> f64 {
    let n = g.n as f64;
    if g.beta.is_finite() {
        n - 2.0 * g.beta - 2.0
    } else {
        f64::NEG_INFINITY
    }
}

pub fn adm_mass(g: &GeometryModel) -> Result<FunctionalReport> {
    adm_mass_on_ladder(g, &default_ladder(g))
}

/// ADM mass from the flux on a ladder of coordinate spheres, extrapolated at
/// rate `R^{n−2β−2}`.
pub fn adm_mass_on_ladder(g: &GeometryModel, ladder: &[f64]) -> Result<FunctionalReport> {
    let n = g.n as f64;
    if g.beta <= (n - 2.0) / 2.0 {
        return Err(FunctionalError::Hypothesis(format!(
            "mass needs β > (n−2)/2, got β = {}",
            g.beta
        )));
    }
    if ladder.len() < 3 {
        return Err(FunctionalError::Hypothesis("mass ladder needs at least three radii".into()));
    }
    if let Some(&r) = ladder.iter().find(|&&r| r <= g.rho_core) {
        return Err(crate::geometry::GeometryError::Coverage(format!("ladder radius {r} inside the core")).into());
    }
    let flux: Vec<f64> = ladder.iter().map(|&r| mass_flux(g, r)).collect();
    let p = ladder_rate(g);
    let fit = fit_limit(ladder, &flux, p);
    let last = flux[flux.len() - 1];
    let mut rep = FunctionalReport::new("adm_mass", g)
        .param("beta", g.beta)
        .param("rate", p)
        .with_subterms(&[("ladder_last", last), ("extrapolation", fit.limit - last)]);
    for (j, (r, f)) in ladder.iter().zip(&flux).enumerate() {
        rep.params.insert(format!("R{j}"), *r);
        rep.params.insert(format!("flux{j}"), *f);
    }
    rep.error = fit.error;
    let noises: Vec<f64> = ladder.iter().map(|&r| mass_flux_noise(g, r)).collect();
    let noise = noises.iter().cloned().fold(0.0, f64::max);
    rep.params.insert("noise".into(), noise);
    let signal = flux.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    if signal <= 100.0 * noise {
        rep.error = rep.error.max(noise);
    } else if let Some(rate) = rate_above(ladder, &flux, &noises) {
        rep.params.insert("observed_rate".into(), rate);
        if rate > -0.2 || (p.is_finite() && rate > p + 0.5) {
            rep.flag(format!("flux ladder decays at rate {rate:.2}, slower than the declared {p:.2}"));
        }
    }
    Ok(rep)
}
