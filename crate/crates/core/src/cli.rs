//! Batch verbs behind the `alefn` binary.
//!
//! Each verb writes `<verb>.json` (a deterministic report embedding the
//! resolved configuration), an optional CSV table, and `<verb>.meta.json`
//! holding the wall-clock fields that would otherwise break determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, MetricSpec, NormalizationChoice, RunConfig};
use crate::fit::exponent_fit;
use crate::flow::{ricci_flow, summarize, warped_bump, FlowError, FlowOptions};
use crate::functionals::{
    adm_mass, adm_mass_on_ladder, default_policy, lambda_ale_with, model_grid, mu_minimize, nu, FunctionalError, MuOptions,
    Normalization,
};
use crate::geometry::{verify_ale_order, Family, GeometryError, GeometryModel, Warp};
use crate::testfn::{
    control_residual, default_epsilon, default_taus, effective_beta, noncompact_expansion_residual, region_exponents,
    region_sweep, verify_expansion, TestFunctionSpec, Variant,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionalKind {
    Mass,
    Lambda,
    Mu,
    Nu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    Describe,
    Functional(FunctionalKind),
    Sweep,
    Regions,
    Residual,
    Flow,
    VerifyAll,
}

impl Verb {
    pub fn name(&self) -> &'static str {
        match self {
            Verb::Describe => "describe",
            Verb::Functional(FunctionalKind::Mass) => "functional_mass",
            Verb::Functional(FunctionalKind::Lambda) => "functional_lambda",
            Verb::Functional(FunctionalKind::Mu) => "functional_mu",
            Verb::Functional(FunctionalKind::Nu) => "functional_nu",
            Verb::Sweep => "sweep",
            Verb::Regions => "regions",
            Verb::Residual => "residual",
            Verb::Flow => "flow",
            Verb::VerifyAll => "verify_all",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Flagged,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Flagged => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    pub flags: Vec<String>,
    /// Human-readable summary printed by the binary.
    pub text: String,
    pub artifacts: Vec<PathBuf>,
}

/// Computation errors become flags; they never abort the report.
#[derive(Debug, Error)]
enum Compute {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

struct Report {
    result: Value,
    flags: Vec<String>,
    text: String,
    csv: Option<(Vec<String>, Vec<Vec<String>>)>,
}

type Computed = std::result::Result<Report, Compute>;

pub fn run(config: &RunConfig, verb: Verb) -> Result<Outcome, CliError> {
    config.validate()?;
    let clock = Instant::now();
    let computed = match verb {
        Verb::VerifyAll => verify_all(config),
        _ => {
            let g = config.model()?;
            match verb {
                Verb::Describe => describe(config, &g),
                Verb::Functional(k) => functional(config, &g, k),
                Verb::Sweep => sweep(config, &g),
                Verb::Regions => regions(config, &g),
                Verb::Residual => residual(config, &g),
                Verb::Flow => flow(config, &g),
                Verb::VerifyAll => unreachable!(),
            }
        }
    };
    let report = computed.unwrap_or_else(|e| Report {
        result: Value::Null,
        flags: vec![format!("computation failed: {e}")],
        text: format!("error: {e}\n"),
        csv: None,
    });
    let status = if report.flags.is_empty() { Status::Pass } else { Status::Flagged };
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
    let name = verb.name();
    let mut artifacts = Vec::new();
    let doc = json!({
        "verb": name,
        "status": status,
        "flags": report.flags,
        "config": config,
        "result": report.result,
    });
    let path = dir.join(format!("{name}.json"));
    write(&path, serde_json::to_string_pretty(&doc).expect("report serializes") + "\n")?;
    artifacts.push(path);
    if let Some((header, rows)) = &report.csv {
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| output_error(&path, e))?;
        w.write_record(header).map_err(|e| output_error(&path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| output_error(&path, e))?;
        }
        w.flush().map_err(|e| output_error(&path, e))?;
        artifacts.push(path);
    }
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = json!({
        "verb": name,
        "created_unix": created,
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let path = dir.join(format!("{name}.meta.json"));
    write(&path, serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n")?;
    artifacts.push(path);
    Ok(Outcome { status, flags: report.flags, text: report.text, artifacts })
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output { path: path.display().to_string(), message: e.to_string() }
}

fn write(path: &Path, text: String) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| output_error(path, e))
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result serializes")
}

fn describe(config: &RunConfig, g: &GeometryModel) -> Computed {
    let mut flags = Vec::new();
    let order = verify_ale_order(g, None)?;
    if !order.consistent {
        flags.push(format!("fitted order {:.3} below declared β = {}", order.beta_fit, g.beta));
    }
    let mass = adm_mass(g)?;
    flags.extend(mass.flags.iter().cloned());
    let start = g.grid_start(1e-3 * g.length_scale());
    let end = 64.0 * g.length_scale().max(g.rho_core.abs()) + start;
    let grid = model_grid(g, start, end, &config.grid.spec());
    let table = g.table(&grid);
    let min_scal = table.iter().map(|r| r[3]).fold(f64::INFINITY, f64::min);
    let beta = |b: f64| if b.is_finite() { format!("{b:.4}") } else { "∞".into() };
    let mut text = String::new();
    for (k, v) in [
        ("family", g.family.name()),
        ("n", g.n.to_string()),
        ("|Γ|", g.gamma_order.to_string()),
        ("core", g.core.to_string()),
        ("ρ_core", format!("{:.6}", g.rho_core)),
        ("β declared", beta(g.beta)),
        ("β fit", beta(order.beta_fit)),
        ("β band", format!("[{}, {}]", beta(order.beta_band.0), beta(order.beta_band.1))),
        ("mass", format!("{:.6e} ± {:.1e}", mass.value, mass.error)),
        ("min Scal", format!("{min_scal:.3e}")),
    ] {
        text.push_str(&format!("{k:<12} {v}\n"));
    }
    let result = json!({
        "family": g.family.name(),
        "n": g.n,
        "gamma_order": g.gamma_order,
        "core": g.core,
        "rho_core": g.rho_core,
        "family_params": g.family_params,
        "ale_order": order,
        "mass": mass,
        "min_scal": min_scal,
    });
    let rows = table.iter().map(|r| r.iter().map(|&x| num(x)).collect()).collect();
    let header = ["rho", "g_rr", "v", "scal"].map(String::from).to_vec();
    Ok(Report { result, flags, text, csv: Some((header, rows)) })
}

fn mu_options(config: &RunConfig) -> MuOptions {
    MuOptions {
        grid: config.grid.spec(),
        levels: config.grid.richardson_levels,
        rmax: config.grid.rmax,
        tol: config.tolerances.mu_solver,
        ..MuOptions::default()
    }
}

fn normalization(config: &RunConfig) -> Normalization {
    match config.functional.normalization {
        NormalizationChoice::Full => Normalization::Full,
        NormalizationChoice::Ale => Normalization::Ale,
    }
}

fn functional(config: &RunConfig, g: &GeometryModel, kind: FunctionalKind) -> Computed {
    let f = &config.functional;
    let reports = match kind {
        FunctionalKind::Mass if f.ladder.is_empty() => vec![adm_mass(g)?],
        FunctionalKind::Mass => vec![adm_mass_on_ladder(g, &f.ladder)?],
        FunctionalKind::Lambda => vec![lambda_ale_with(g, default_policy(g))?],
        FunctionalKind::Mu => {
            let opts = mu_options(config);
            let norm = normalization(config);
            f.taus
                .par_iter()
                .map(|&t| mu_minimize(g, t, norm, &opts).map(|r| r.report))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
        FunctionalKind::Nu => vec![nu(g, &f.taus, normalization(config), &mu_options(config))?],
    };
    let flags: Vec<String> = reports.iter().flat_map(|r| r.flags.iter().cloned()).collect();
    let mut text = String::new();
    let mut rows = Vec::new();
    for r in &reports {
        let tau = r.params.get("tau").map(|t| format!(" τ = {t}")).unwrap_or_default();
        text.push_str(&format!("{}{tau}: {:.10} ± {:.1e}\n", r.name, r.value, r.error));
        rows.push(vec![
            r.name.clone(),
            r.metric.clone(),
            r.params.get("tau").map(|&t| num(t)).unwrap_or_default(),
            num(r.value),
            num(r.error),
            r.flags.join("; "),
        ]);
    }
    let header = ["name", "metric", "tau", "value", "error", "flags"].map(String::from).to_vec();
    Ok(Report { result: to_value(&reports), flags, text, csv: Some((header, rows)) })
}

fn template(config: &RunConfig, g: &GeometryModel) -> TestFunctionSpec {
    let variant = config.sweep.variant.unwrap_or(match g.family {
        Family::Truncated { .. } => Variant::GrGaussian,
        _ => Variant::RadialGaugeGeneral,
    });
    let mut spec = TestFunctionSpec::new(g.n, 1.0, variant);
    spec.epsilon = config.sweep.epsilon.unwrap_or_else(|| default_epsilon(g.n));
    spec
}

fn sweep_taus(config: &RunConfig) -> Vec<f64> {
    if config.sweep.taus.is_empty() {
        default_taus()
    } else {
        config.sweep.taus.clone()
    }
}

fn sweep(config: &RunConfig, g: &GeometryModel) -> Computed {
    let taus = sweep_taus(config);
    let sw = verify_expansion(g, &taus, &template(config, g), config.sweep.check_mu)?;
    let rows = (0..taus.len())
        .map(|i| {
            [sw.taus[i], sw.w_values[i], sw.predictions[i], sw.residuals[i], sw.c2_minus_one[i]]
                .iter()
                .map(|&x| num(x))
                .collect()
        })
        .collect();
    let header = ["tau", "w", "prediction", "residual", "c2_minus_one"].map(String::from).to_vec();
    let text = format!(
        "λ_ALE = {:.6e}\nresidual exponent {:.3} (band [{:.3}, {:.3}]), threshold {}\n",
        sw.lambda_ale, sw.fit.exponent, sw.fit.band.0, sw.fit.band.1, sw.threshold
    );
    let flags = sw.flags.clone();
    let result = json!({
        "metric": sw.metric,
        "variant": sw.variant,
        "epsilon": sw.epsilon,
        "lambda_ale": sw.lambda_ale,
        "fit": sw.fit,
        "threshold": sw.threshold,
        "c2_minus_one_fit": exponent_fit(&sw.taus, &sw.c2_minus_one.iter().map(|x| x.abs()).collect::<Vec<_>>()),
        "mu_checks": sw.mu_checks,
    });
    Ok(Report { result, flags, text, csv: Some((header, rows)) })
}

fn regions(config: &RunConfig, g: &GeometryModel) -> Computed {
    let taus = sweep_taus(config);
    let sw = region_sweep(g, &taus, &template(config, g))?;
    let tol = config.tolerances.exponent;
    let mut flags = Vec::new();
    let mut text = String::new();
    for s in &sw.series {
        text.push_str(&format!(
            "{:<18} exponent {:>7.3} expected {:>7.3}{}\n",
            s.name,
            s.fit.exponent,
            s.expected,
            if s.negligible { " (negligible)" } else { "" }
        ));
        if !s.within(tol) {
            flags.push(format!("{}: exponent {:.3} vs expected {:.3}", s.name, s.fit.exponent, s.expected));
        }
    }
    let mut header = vec!["tau".to_string()];
    header.extend(sw.series.iter().map(|s| s.name.clone()));
    let rows = (0..taus.len())
        .map(|i| {
            let mut r = vec![num(taus[i])];
            r.extend(sw.series.iter().map(|s| num(s.values[i])));
            r
        })
        .collect();
    Ok(Report { result: to_value(&sw), flags, text, csv: Some((header, rows)) })
}

fn residual(config: &RunConfig, g: &GeometryModel) -> Computed {
    let s = &config.sweep;
    let tol = config.tolerances.exponent;
    let n = g.n as f64;
    let beta = effective_beta(g);
    let tau_r = s.residual_taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut flags = Vec::new();
    let by_r: Vec<f64> = s
        .residual_radii
        .par_iter()
        .map(|&r| noncompact_expansion_residual(g, tau_r, r))
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .map(|rep| rep.params["residual"])
        .collect();
    let by_tau: Vec<f64> = s
        .residual_taus
        .par_iter()
        .map(|&t| noncompact_expansion_residual(g, t, s.residual_r).map(|rep| rep.params["residual"]))
        .collect::<std::result::Result<_, _>>()?;
    let fit_r = exponent_fit(&s.residual_radii, &by_r);
    let fit_tau = exponent_fit(&s.residual_taus, &by_tau);
    let expected_r = n - (2.0 * beta + 2.0).min(3.0 * beta);
    let expected_tau = -1.0;
    let (control, fit_f) = control_residual(g, &s.residual_radii);
    let expected_f = -2.0 * beta;
    for (what, fit, e) in [("R", &fit_r, expected_r), ("τ", &fit_tau, expected_tau), ("f", &fit_f, expected_f)] {
        if !fit.within(e, tol) {
            flags.push(format!("{what} slope {:.3} vs expected {e:.3}", fit.exponent));
        }
    }
    let text = format!(
        "noncompact residual: R slope {:.3} (expected {expected_r:.3}), τ slope {:.3} (expected {expected_tau})\n\
         control residual of f: slope {:.3} (expected {expected_f:.3})\n",
        fit_r.exponent, fit_tau.exponent, fit_f.exponent
    );
    let mut rows = Vec::new();
    for (i, &r) in s.residual_radii.iter().enumerate() {
        rows.push(vec!["R".into(), num(r), num(tau_r), num(by_r[i])]);
        rows.push(vec!["control".into(), num(r), String::new(), num(control[i])]);
    }
    for (i, &t) in s.residual_taus.iter().enumerate() {
        rows.push(vec!["tau".into(), num(s.residual_r), num(t), num(by_tau[i])]);
    }
    let header = ["series", "r", "tau", "value"].map(String::from).to_vec();
    let result = json!({
        "beta_effective": beta,
        "fit_r": fit_r,
        "expected_r": expected_r,
        "fit_tau": fit_tau,
        "expected_tau": expected_tau,
        "fit_control": fit_f,
        "expected_control": expected_f,
        "regions_expected": region_exponents(g.n, beta, template(config, g).epsilon),
    });
    Ok(Report { result, flags, text, csv: Some((header, rows)) })
}

fn flow(config: &RunConfig, g: &GeometryModel) -> Computed {
    flow_with(g, &config.flow.options(), &config.flow.t0s, config)
}

fn flow_with(g: &GeometryModel, opts: &FlowOptions, t0s: &[f64], config: &RunConfig) -> Computed {
    let tol = &config.tolerances;
    let fl = ricci_flow(g, opts)?;
    let sm = summarize(&fl, t0s)?;
    let mut flags = sm.flags.clone();
    if sm.mass_drift > tol.mass_drift {
        flags.push(format!("relative mass drift {:.3e} exceeds {:.1e}", sm.mass_drift, tol.mass_drift));
    }
    if !sm.beta_non_decreasing {
        flags.push("fitted ALE order decreases along the flow".into());
    }
    if sm.max_u > 1.0 + tol.max_u {
        flags.push(format!("max u = {:.12} exceeds 1 + {:.1e}", sm.max_u, tol.max_u));
    }
    if !sm.lambda_dym_monotone {
        flags.push("λ_dym decreases".into());
    }
    if sm.max_defect > tol.defect {
        flags.push(format!("monotonicity defect {:.3} exceeds {}", sm.max_defect, tol.defect));
    }
    if !sm.dominates_lambda_ale {
        flags.push(format!("λ_dym < λ_ALE on some slice (margin {:.3e})", sm.min_margin));
    }
    flags.sort();
    flags.dedup();
    let mut header = vec!["t".to_string(), "mass".into(), "beta_fit".into(), "lambda_ale".into()];
    header.extend(t0s.iter().map(|t| format!("lambda_dym_t0={t}")));
    header.push("defect".into());
    let rows = sm
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![num(r.t), num(r.mass), num(r.beta), num(r.lambda_ale)];
            for t0 in t0s {
                row.push(r.lambda_dym.iter().find(|(a, _)| a == t0).map(|(_, v)| num(*v)).unwrap_or_default());
            }
            row.push(r.defect.map(num).unwrap_or_default());
            row
        })
        .collect();
    let text = format!(
        "{} steps to t = {}\nmass drift {:.3e}, max u − 1 {:.3e}, max defect {:.3e}, min λ_dym − λ_ALE {:.3e}\n",
        sm.steps,
        sm.horizon,
        sm.mass_drift,
        sm.max_u - 1.0,
        sm.max_defect,
        sm.min_margin
    );
    Ok(Report { result: to_value(&sm), flags, text, csv: Some((header, rows)) })
}

/// The metric catalog checked by `verify-all`.
pub fn catalog() -> Vec<(&'static str, MetricSpec, crate::config::Transform)> {
    use crate::config::Transform;
    let plain = Transform::default();
    vec![
        ("flat_cone", MetricSpec::FlatCone { n: 4, gamma_order: 2 }, plain.clone()),
        ("eguchi_hanson", MetricSpec::EguchiHanson { a: 1.0 }, plain.clone()),
        ("schwarzschild", MetricSpec::SchwarzschildConformal { n: 4, gamma_order: 2, m: 0.5 }, plain.clone()),
        (
            "conformal_star",
            MetricSpec::Conformal {
                n: 4,
                gamma_order: 1,
                m: 0.0,
                k: 0.3,
                ell: 0.5,
                rho_core: None,
                allow_negative_mass: false,
            },
            plain.clone(),
        ),
        (
            "warped",
            MetricSpec::Warped {
                n: 4,
                gamma_order: 1,
                warp: Warp::Psi { c: 1.0, p: 2.0 },
                beta: 2.0,
                rho_core: Some(0.5),
            },
            plain,
        ),
        (
            "truncated_bump",
            MetricSpec::Conformal {
                n: 4,
                gamma_order: 1,
                m: 0.0,
                k: 0.05,
                ell: 0.25,
                rho_core: None,
                allow_negative_mass: false,
            },
            Transform { truncate: Some(0.5), ..Transform::default() },
        ),
    ]
}

#[derive(Serialize)]
struct Cell {
    metric: &'static str,
    check: &'static str,
    pass: bool,
    detail: String,
}

fn cell(metric: &'static str, check: &'static str, r: std::result::Result<(bool, String), Compute>) -> Cell {
    match r {
        Ok((pass, detail)) => Cell { metric, check, pass, detail },
        Err(e) => Cell { metric, check, pass: false, detail: e.to_string() },
    }
}

fn verify_all(config: &RunConfig) -> Computed {
    let entries = catalog();
    let mut cells: Vec<Cell> = entries
        .par_iter()
        .flat_map_iter(|(name, spec, transform)| {
            let mut c = RunConfig::new(spec.clone());
            c.transform = transform.clone();
            let g = match c.model() {
                Ok(g) => g,
                Err(e) => return vec![Cell { metric: name, check: "build", pass: false, detail: e.to_string() }],
            };
            let mut out = Vec::new();
            out.push(cell(name, "ale_order", (|| {
                let o = verify_ale_order(&g, None)?;
                Ok((o.consistent, format!("β fit {:.3}, declared {}", o.beta_fit, g.beta)))
            })()));
            out.push(cell(name, "lambda_routes", (|| {
                let l = lambda_ale_with(&g, default_policy(&g))?;
                let d = l.params["discrepancy"];
                Ok((!l.is_flagged(), format!("λ_ALE {:.6e}, route gap {d:.1e}", l.value)))
            })()));
            out.push(cell(name, "mu_scale_invariance", (|| {
                let opts = MuOptions::default();
                let a = mu_minimize(&g, 4.0, Normalization::Full, &opts)?.report.value;
                let s = crate::geometry::build_scaled(&g, 2.0)?;
                let b = mu_minimize(&s, 8.0, Normalization::Full, &opts)?.report.value;
                let rel = (a - b).abs() / a.abs().max(1e-300);
                Ok((rel < 1e-6, format!("μ(g,4) {a:.8}, μ(2g,8) {b:.8}")))
            })()));
            out
        })
        .collect();
    let cone = crate::geometry::build_flat_cone(4, 2).map_err(Compute::from)?;
    cells.push(cell("flat_cone", "mu_cone_value", (|| {
        let m = mu_minimize(&cone, 1.0, Normalization::Full, &MuOptions::default())?.report.value;
        Ok(((m + 2f64.ln()).abs() < 1e-3, format!("μ(τ=1) {m:.6}")))
    })()));
    let bump = warped_bump().map_err(Compute::from)?;
    let opts = FlowOptions { levels: 100, ..FlowOptions::default() };
    let flow_report = flow_with(&bump, &opts, &[0.25, 0.5], config);
    cells.push(match flow_report {
        Ok(r) => Cell { metric: "warped_bump", check: "flow_suite", pass: r.flags.is_empty(), detail: r.text.trim().replace('\n', "; ") },
        Err(e) => Cell { metric: "warped_bump", check: "flow_suite", pass: false, detail: e.to_string() },
    });
    let flags: Vec<String> =
        cells.iter().filter(|c| !c.pass).map(|c| format!("{} / {}: {}", c.metric, c.check, c.detail)).collect();
    let mut text = String::new();
    for c in &cells {
        text.push_str(&format!("{:<16} {:<20} {:<4} {}\n", c.metric, c.check, if c.pass { "PASS" } else { "FAIL" }, c.detail));
    }
    let rows = cells
        .iter()
        .map(|c| vec![c.metric.to_string(), c.check.to_string(), c.pass.to_string(), c.detail.clone()])
        .collect();
    let header = ["metric", "check", "pass", "detail"].map(String::from).to_vec();
    Ok(Report { result: to_value(&cells), flags, text, csv: Some((header, rows)) })
}
