//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use ale_entropy::fit::{exponent_fit, observed_order};
use ale_entropy::flow::{ricci_flow, summarize, warped_bump, FlowOptions};
use ale_entropy::functionals::{
    adm_mass, default_policy, f_ale_energy, lambda_ale_with, mu_minimize, solve_u_infinity_with, FunctionalReport, MuOptions,
    Normalization,
};
use ale_entropy::geometry::{
    build_arclength, build_conformal, build_eguchi_hanson, build_flat_cone, build_scaled, build_schwarzschild_conformal, build_truncated,
    build_warped, GeometryModel, Warp,
};
use ale_entropy::grid::GridSpec;
use ale_entropy::testfn::{
    control_residual, default_taus, noncompact_expansion_residual, region_sweep, verify_expansion, TestFunctionSpec, Variant,
};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn star() -> GeometryModel {
    build_conformal(4, 1, 0.0, 0.3, 0.5, None, false).unwrap()
}

fn schwarzschild() -> GeometryModel {
    build_schwarzschild_conformal(4, 2, 0.5).unwrap()
}

fn truncated_bump() -> GeometryModel {
    let s = build_conformal(4, 1, 0.0, 0.05, 0.25, None, false).unwrap();
    build_truncated(&s, 0.5).unwrap()
}

fn warped() -> GeometryModel {
    build_warped(4, 1, Warp::Psi { c: 1.0, p: 2.0 }, 2.0, Some(0.5)).unwrap()
}

fn mu(g: &GeometryModel, tau: f64) -> Result<FunctionalReport, String> {
    mu_minimize(g, tau, Normalization::Full, &MuOptions::default()).map(|r| r.report).map_err(|e| e.to_string())
}

fn lambda(g: &GeometryModel) -> Result<FunctionalReport, String> {
    lambda_ale_with(g, default_policy(g)).map_err(|e| e.to_string())
}

fn cone_baseline() -> Check {
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for k in [1usize, 2, 4] {
        let g = build_flat_cone(4, k).unwrap();
        for tau in [1.0, 10.0, 100.0] {
            let t = Instant::now();
            let m = mu(&g, tau)?;
            slowest = slowest.max(t.elapsed().as_secs_f64());
            let dev = (m.value + (k as f64).ln()).abs();
            worst = worst.max(dev);
            if dev >= 1e-3 {
                return Err(format!("|Γ| = {k}, τ = {tau}: μ = {:.6} vs {:.6}", m.value, -(k as f64).ln()));
            }
        }
    }
    ensure(slowest < 60.0, format!("max |μ + log|Γ|| = {worst:.2e} (tol 1e-3), slowest case {slowest:.2}s (limit 60s)"))
}

fn scale_invariance() -> Check {
    let mut worst_mu = 0.0f64;
    let mut worst_l = 0.0f64;
    for g in [schwarzschild(), star()] {
        let tau = 4.0;
        let m0 = mu(&g, tau)?.value;
        let l0 = lambda(&g)?.value;
        for s in [0.5, 2.0, 10.0] {
            let gs = build_scaled(&g, s).unwrap();
            let m = mu(&gs, s * tau)?.value;
            let l = lambda(&gs)?.value;
            let want = s.powf(g.n as f64 / 2.0 - 1.0) * l0;
            worst_mu = worst_mu.max((m - m0).abs() / m0.abs());
            worst_l = worst_l.max((l - want).abs() / want.abs());
        }
    }
    ensure(
        worst_mu < 1e-6 && worst_l < 1e-6,
        format!("max relative deviation: μ {worst_mu:.2e}, λ_ALE {worst_l:.2e} (tol 1e-6)"),
    )
}

fn route_agreement() -> Check {
    let catalog = [
        ("flat_cone", build_flat_cone(4, 2).unwrap()),
        ("eguchi_hanson", build_eguchi_hanson(1.0).unwrap()),
        ("schwarzschild", schwarzschild()),
        ("conformal_star", star()),
        ("warped", warped()),
        ("truncated_bump", truncated_bump()),
    ];
    let mut notes = Vec::new();
    for (name, g) in &catalog {
        let l = lambda(g)?;
        let gap = (l.value - l.params["route_b"]).abs();
        let budget = l.error + l.params["route_b_error"];
        if gap > budget {
            return Err(format!("{name}: routes differ by {gap:.2e} > combined error {budget:.2e}"));
        }
        let n = g.n as f64;
        let expected = n - 2.0 * g.beta - 2.0;
        match l.params.get("ladder_rate") {
            Some(&rate) if expected.is_finite() => {
                if (rate - expected).abs() > 0.3 {
                    return Err(format!("{name}: ladder rate {rate:.3} vs R^{expected}"));
                }
                notes.push(format!("{name} rate {rate:.2}/{expected}"));
            }
            // Ladder differences never rise above the rounding floor.
            _ => notes.push(format!("{name} flat ladder")),
        }
    }
    Ok(format!("routes within combined error on {} metrics; {}", catalog.len(), notes.join(", ")))
}

fn equality_case() -> Check {
    let g = build_eguchi_hanson(1.0).unwrap();
    let m = adm_mass(&g).map_err(|e| e.to_string())?.value;
    let l = lambda(&g)?.value;
    // The competitor sweep needs the radial gauge; μ itself stalls at the
    // solver floor long before the residual is resolved.
    let radial = build_arclength(&g).map_err(|e| e.to_string())?;
    let tmpl = TestFunctionSpec::new(4, 1.0, Variant::RadialGaugeGeneral);
    let sw = verify_expansion(&radial, &default_taus(), &tmpl, false).map_err(|e| e.to_string())?;
    let mu5 = mu(&g, 1e5)?;
    let floor = (mu5.value + 2f64.ln()).abs() <= mu5.error;
    ensure(
        m.abs() < 1e-6 && l.abs() < 1e-6 && sw.fit.exponent < 1.0 - g.n as f64 / 2.0 && floor,
        format!(
            "|m| = {:.1e}, |λ_ALE| = {:.1e} (tol 1e-6); residual slope {:.3} (need < −1); |μ(10⁵) + log 2| = {:.1e} within solver tol {:.1e}",
            m.abs(),
            l.abs(),
            sw.fit.exponent,
            (mu5.value + 2f64.ln()).abs(),
            mu5.error
        ),
    )
}

fn negative_lambda() -> Check {
    let g = schwarzschild();
    // 𝔪 = (n−1) · 2m · Vol(S³)/|Γ| for φ = 1 + m/(2ρ²).
    let oracle = 3.0 * 2.0 * 0.5 * 2.0 * PI * PI / 2.0;
    let mass = adm_mass(&g).map_err(|e| e.to_string())?.value;
    let l = lambda(&g)?.value;
    let mu5 = mu(&g, 1e5)?;
    let margin = -2f64.ln() - mu5.value;
    let ok = (mass - oracle).abs() < 1e-6 * oracle
        && (l + mass).abs() < 1e-6 * mass
        && l < 0.0
        && margin > 3.0 * mu5.error;
    ensure(
        ok,
        format!(
            "𝔪 = {mass:.8} (closed form {oracle:.8}), λ_ALE = {l:.8}; −log 2 − μ(10⁵) = {margin:.3e} vs 3×tol {:.3e}",
            3.0 * mu5.error
        ),
    )
}

fn truncated_expansion() -> Check {
    let g = truncated_bump();
    let taus = default_taus();
    let tmpl = TestFunctionSpec::new(4, 1.0, Variant::GrGaussian);
    let sw = verify_expansion(&g, &taus, &tmpl, false).map_err(|e| e.to_string())?;
    let rs = region_sweep(&g, &taus, &tmpl).map_err(|e| e.to_string())?;
    let bad: Vec<String> = rs
        .series
        .iter()
        .filter(|s| !s.within(0.3))
        .map(|s| format!("{} {:.3}/{:.3}", s.name, s.fit.exponent, s.expected))
        .collect();
    let ok = sw.fit.exponent < 1.0 - g.n as f64 / 2.0 && sw.fit.band.1 < -1.0 && bad.is_empty();
    let regions: Vec<String> = rs.series.iter().map(|s| format!("{} {:.2}", s.name, s.fit.exponent)).collect();
    ensure(
        ok,
        format!(
            "residual slope {:.3}, band [{:.3}, {:.3}]; regions: {}{}",
            sw.fit.exponent,
            sw.fit.band.0,
            sw.fit.band.1,
            regions.join(", "),
            if bad.is_empty() { String::new() } else { format!("; off: {}", bad.join(", ")) }
        ),
    )
}

fn radial_gauge_machinery() -> Check {
    let g = warped();
    let n = g.n as f64;
    let beta = g.beta;
    let tmpl = TestFunctionSpec::new(4, 1.0, Variant::RadialGaugeGeneral);
    let rs = region_sweep(&g, &default_taus(), &tmpl).map_err(|e| e.to_string())?;
    let c2 = rs.get("normalization").ok_or("missing normalization series")?;
    let c2_expected = tmpl.epsilon * n - n / 2.0;
    let radii: Vec<f64> = (0..8).map(|k| 10.0 * 2f64.powi(k)).collect();
    let (_, f_fit) = control_residual(&g, &radii);
    let tau = 1e6;
    let rr: Vec<f64> = (0..6).map(|k| 10.0 * 2f64.powi(k)).collect();
    let mut by_r = Vec::new();
    let mut mismatch = 0.0f64;
    for &r in &rr {
        let rep = noncompact_expansion_residual(&g, tau, r).map_err(|e| e.to_string())?;
        if rep.is_flagged() {
            return Err(format!("R = {r}: {:?}", rep.flags));
        }
        mismatch = mismatch.max(rep.params["ibp_mismatch"] / rep.error);
        by_r.push(rep.params["residual"]);
    }
    let taus: Vec<f64> = (0..6).map(|k| 1e4 * 4f64.powi(k)).collect();
    let mut by_tau = Vec::new();
    for &t in &taus {
        let rep = noncompact_expansion_residual(&g, t, 10.0).map_err(|e| e.to_string())?;
        mismatch = mismatch.max(rep.params["ibp_mismatch"] / rep.error);
        by_tau.push(rep.params["residual"]);
    }
    let fr = exponent_fit(&rr, &by_r);
    let ft = exponent_fit(&taus, &by_tau);
    let r_expected = n - (2.0 * beta + 2.0).min(3.0 * beta);
    let ok = c2.fit.within(c2_expected, 0.3)
        && f_fit.within(-2.0 * beta, 0.3)
        && ft.within(-1.0, 0.3)
        && fr.within(r_expected, 0.3)
        && mismatch <= 1.0;
    ensure(
        ok,
        format!(
            "c²−1 slope {:.3} ({c2_expected:.3}); f slope {:.3} ({}); noncompact τ slope {:.3} (−1), R slope {:.3} ({r_expected}); direct vs decomposition {:.2} of tolerance",
            c2.fit.exponent,
            f_fit.exponent,
            -2.0 * beta,
            ft.exponent,
            fr.exponent,
            mismatch
        ),
    )
}

fn flow_suite() -> Check {
    let g = warped_bump().map_err(|e| e.to_string())?;
    let opts = FlowOptions { horizon: 0.5, levels: 200, ..FlowOptions::default() };
    let flow = ricci_flow(&g, &opts).map_err(|e| e.to_string())?;
    let t0s = [0.25, 0.5];
    let sm = summarize(&flow, &t0s).map_err(|e| e.to_string())?;
    let m0 = flow.states[0].mass;
    let drift = flow.states.iter().map(|s| (s.mass - m0).abs() / m0.abs()).fold(0.0, f64::max);
    let beta_ok = flow.states.windows(2).all(|w| {
        let slack = (w[0].beta_band.1 - w[0].beta_band.0).abs() + (w[1].beta_band.1 - w[1].beta_band.0).abs();
        w[1].beta_fit >= w[0].beta_fit - slack
    });
    let mut monotone = true;
    let mut dominates = true;
    for &t0 in &t0s {
        let series: Vec<(f64, f64)> = sm
            .rows
            .iter()
            .filter_map(|r| r.lambda_dym.iter().find(|(a, _)| *a == t0).map(|&(_, v)| (v, r.lambda_ale)))
            .collect();
        monotone &= series.windows(2).all(|w| w[1].0 >= w[0].0);
        dominates &= series.iter().all(|(d, a)| d >= a);
    }
    let ok = drift < 1e-5 && beta_ok && sm.max_u <= 1.0 + 1e-8 && monotone && sm.max_defect < 0.05 && dominates;
    ensure(
        ok,
        format!(
            "mass drift {drift:.2e} (tol 1e-5); β non-decreasing {beta_ok}; max u − 1 = {:.1e} (tol 1e-8); λ_dym monotone {monotone}, defect {:.2e} (tol 5%); λ_dym ≥ λ_ALE {dominates} (min margin {:.3})",
            sm.max_u - 1.0,
            sm.max_defect,
            sm.min_margin
        ),
    )
}

fn lambda0_order(g: &GeometryModel) -> Result<Option<(f64, f64)>, String> {
    let mut raw = Vec::new();
    for level in 0..3 {
        let spec = GridSpec { level, ..GridSpec::default() };
        let u = solve_u_infinity_with(g, &spec, default_policy(g)).map_err(|e| e.to_string())?;
        raw.push(f_ale_energy(&u, g).map_err(|e| e.to_string())?.value);
    }
    let drift = (raw[2] - raw[1]).abs().max((raw[1] - raw[0]).abs());
    Ok(observed_order(&raw).map(|p| (p, drift)))
}

fn numerical_hygiene() -> Check {
    let mut notes = Vec::new();
    for (name, g) in [("flat_cone", build_flat_cone(4, 2).unwrap()), ("conformal_star", star())] {
        let m = mu(&g, 1.0)?;
        let p = m.params.get("observed_order").copied().ok_or(format!("{name}: μ has no observed order"))?;
        if p < 1.7 {
            return Err(format!("{name}: μ observed order {p:.2}"));
        }
        notes.push(format!("{name} μ order {p:.2}"));
        match lambda0_order(&g)? {
            Some((p, _)) if p >= 1.7 => notes.push(format!("{name} λ order {p:.2}")),
            Some((p, drift)) if drift > 1e-12 => return Err(format!("{name}: λ observed order {p:.2}")),
            // Exact at every level: no drift to converge.
            _ => notes.push(format!("{name} λ exact on every grid")),
        }
    }
    Ok(notes.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("cone baseline", cone_baseline),
        ("scale invariance", scale_invariance),
        ("λ_ALE route agreement", route_agreement),
        ("equality case (Eguchi–Hanson)", equality_case),
        ("negative λ_ALE (Schwarzschild, ℤ₂)", negative_lambda),
        ("large-τ expansion on g_R", truncated_expansion),
        ("radial-gauge machinery", radial_gauge_machinery),
        ("flow suite", flow_suite),
        ("numerical hygiene", numerical_hygiene),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = check();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS {} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
