//! Run configuration: a TOML file naming a metric family, grid and verb
//! parameters, output paths and tolerance overrides.
//!
//! The schema is documented in `schema/run_config.md`; every field has a
//! default except the metric family, and the resolved configuration (with
//! all defaults filled in) is embedded in each emitted report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowOptions;
use crate::geometry::{
    build_arclength, build_conformal, build_eguchi_hanson, build_flat_cone, build_scaled, build_truncated,
    build_warped, GeometryModel, Warp,
};
use crate::grid::GridSpec;
use crate::testfn::Variant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn field(name: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: name.into(), message: message.into() }
}

/// Metric family and its parameters, tagged by `family`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    FlatCone {
        #[serde(default = "four")]
        n: usize,
        #[serde(default = "one")]
        gamma_order: usize,
    },
    Warped {
        #[serde(default = "four")]
        n: usize,
        #[serde(default = "one")]
        gamma_order: usize,
        warp: Warp,
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho_core: Option<f64>,
    },
    EguchiHanson {
        #[serde(default = "unit")]
        a: f64,
    },
    SchwarzschildConformal {
        #[serde(default = "four")]
        n: usize,
        #[serde(default = "one")]
        gamma_order: usize,
        m: f64,
    },
    Conformal {
        #[serde(default = "four")]
        n: usize,
        #[serde(default = "one")]
        gamma_order: usize,
        #[serde(default)]
        m: f64,
        #[serde(default)]
        k: f64,
        #[serde(default = "unit")]
        ell: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho_core: Option<f64>,
        #[serde(default)]
        allow_negative_mass: bool,
    },
}

fn four() -> usize {
    4
}
fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}

/// Operations applied to the base metric, in the order listed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Transform {
    /// Rewrite in the arclength (radial) gauge.
    pub radial_gauge: bool,
    /// Cutoff radius `R` of `g_R`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncate: Option<f64>,
    /// Homothety factor `s` of `s·g`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub q: f64,
    pub level: u32,
    /// Outer radius override for the `μ` solves.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmax: Option<f64>,
    /// Refinement levels used for Richardson extrapolation of `μ`.
    pub richardson_levels: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { q: 1.02, level: 0, rmax: None, richardson_levels: 3 }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec { q: self.q, level: self.level }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationChoice {
    Full,
    Ale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalConfig {
    pub taus: Vec<f64>,
    pub normalization: NormalizationChoice,
    /// Mass ladder radii; empty selects the model's default ladder.
    pub ladder: Vec<f64>,
}

impl Default for FunctionalConfig {
    fn default() -> Self {
        FunctionalConfig { taus: vec![1.0], normalization: NormalizationChoice::Full, ladder: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Empty selects 12 geometric points from 10² to 10⁶.
    pub taus: Vec<f64>,
    /// `None` selects `1/(2(n+2))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `None` picks `gr_gaussian` for cutoff metrics and `radial_gauge_general` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    /// Compare `μ` with the competitor at the two largest τ.
    pub check_mu: bool,
    /// Radii of the noncompact residual fit in `R`.
    pub residual_radii: Vec<f64>,
    /// Fixed `R` of the noncompact residual fit in τ.
    pub residual_r: f64,
    pub residual_taus: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            taus: Vec::new(),
            epsilon: None,
            variant: None,
            check_mu: false,
            residual_radii: (0..6).map(|k| 10.0 * 2f64.powi(k)).collect(),
            residual_r: 10.0,
            residual_taus: (0..6).map(|k| 1e4 * 4f64.powi(k)).collect(),
        }
    }
}

/// Flow options (see [`FlowOptions`]) and the `t₀` list of the conjugate flows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub horizon: f64,
    pub levels: usize,
    pub snapshots: usize,
    pub cfl: f64,
    pub spacing: f64,
    pub ratio: f64,
    pub extent: f64,
    pub t0s: Vec<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let o = FlowOptions::default();
        FlowConfig {
            horizon: o.horizon,
            levels: o.levels,
            snapshots: o.snapshots,
            cfl: o.cfl,
            spacing: o.spacing,
            ratio: o.ratio,
            extent: o.extent,
            t0s: vec![0.25, 0.5],
        }
    }
}

impl FlowConfig {
    pub fn options(&self) -> FlowOptions {
        FlowOptions {
            horizon: self.horizon,
            levels: self.levels,
            snapshots: self.snapshots,
            cfl: self.cfl,
            spacing: self.spacing,
            ratio: self.ratio,
            extent: self.extent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Acceptance tolerances; any of them can be overridden with `--tol name=value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed deviation of fitted exponents.
    pub exponent: f64,
    /// Allowed deviation of the fitted ALE order.
    pub beta: f64,
    /// Relative mass drift along the flow.
    pub mass_drift: f64,
    /// `max u − 1` for the conjugate heat flow.
    pub max_u: f64,
    /// Relative monotonicity defect of `λ_dym`.
    pub defect: f64,
    /// Stopping tolerance of the `μ` iteration.
    pub mu_solver: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { exponent: 0.3, beta: 0.1, mass_drift: 1e-5, max_u: 1e-8, defect: 0.05, mu_solver: 1e-13 }
    }
}

impl Tolerances {
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "exponent" => &mut self.exponent,
            "beta" => &mut self.beta,
            "mass_drift" => &mut self.mass_drift,
            "max_u" => &mut self.max_u,
            "defect" => &mut self.defect,
            "mu_solver" => &mut self.mu_solver,
            _ => return Err(field(&format!("tolerances.{name}"), "unknown tolerance")),
        };
        if !(value > 0.0 && value.is_finite()) {
            return Err(field(&format!("tolerances.{name}"), format!("must be positive, got {value}")));
        }
        *slot = value;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub metric: MetricSpec,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub functional: FunctionalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn new(metric: MetricSpec) -> Self {
        RunConfig {
            metric,
            transform: Transform::default(),
            grid: GridConfig::default(),
            functional: FunctionalConfig::default(),
            sweep: SweepConfig::default(),
            flow: FlowConfig::default(),
            output: OutputConfig::default(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn from_toml(text: &str, path: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: path.into(), message: locate_key(text, e.to_string()) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
        Self::from_toml(&text, &p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid.q > 1.0) {
            return Err(field("grid.q", format!("grid ratio must exceed 1, got {}", self.grid.q)));
        }
        if self.grid.richardson_levels < 2 {
            return Err(field("grid.richardson_levels", "need at least two levels"));
        }
        if let Some(r) = self.grid.rmax {
            if !(r > 0.0) {
                return Err(field("grid.rmax", "must be positive"));
            }
        }
        positive_list("functional.taus", &self.functional.taus)?;
        positive_list("functional.ladder", &self.functional.ladder)?;
        positive_list("sweep.taus", &self.sweep.taus)?;
        positive_list("sweep.residual_radii", &self.sweep.residual_radii)?;
        positive_list("sweep.residual_taus", &self.sweep.residual_taus)?;
        if self.functional.taus.is_empty() {
            return Err(field("functional.taus", "need at least one τ"));
        }
        if self.functional.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field("functional.ladder", "radii must increase"));
        }
        let o = &self.flow;
        if !(o.horizon > 0.0) {
            return Err(field("flow.horizon", "must be positive"));
        }
        if o.levels < 2 {
            return Err(field("flow.levels", "need at least two levels"));
        }
        if o.snapshots < 2 {
            return Err(field("flow.snapshots", "need at least two snapshots"));
        }
        if !(o.cfl > 0.0 && o.spacing > 0.0 && o.ratio > 1.0 && o.extent > 1.0) {
            return Err(field("flow", "need cfl > 0, spacing > 0, ratio > 1 and extent > 1"));
        }
        if self.flow.t0s.iter().any(|&t| !(t > 0.0 && t <= o.horizon)) {
            return Err(field("flow.t0s", format!("every t₀ must lie in (0, {}]", o.horizon)));
        }
        if let Some(s) = self.transform.scale {
            if !(s > 0.0) {
                return Err(field("transform.scale", "must be positive"));
            }
        }
        Ok(())
    }

    /// Build the metric, reporting failures against the offending field.
    pub fn model(&self) -> Result<GeometryModel> {
        let built = match self.metric.clone() {
            MetricSpec::FlatCone { n, gamma_order } => build_flat_cone(n, gamma_order),
            MetricSpec::Warped { n, gamma_order, warp, beta, rho_core } => {
                build_warped(n, gamma_order, warp, beta, rho_core)
            }
            MetricSpec::EguchiHanson { a } => build_eguchi_hanson(a),
            MetricSpec::SchwarzschildConformal { n, gamma_order, m } => {
                build_conformal(n, gamma_order, m, 0.0, 1.0, None, false)
            }
            MetricSpec::Conformal { n, gamma_order, m, k, ell, rho_core, allow_negative_mass } => {
                build_conformal(n, gamma_order, m, k, ell, rho_core, allow_negative_mass)
            }
        };
        let mut g = built.map_err(|e| field("metric", e.to_string()))?;
        let t = &self.transform;
        if t.radial_gauge {
            g = build_arclength(&g).map_err(|e| field("transform.radial_gauge", e.to_string()))?;
        }
        if let Some(r) = t.truncate {
            g = build_truncated(&g, r).map_err(|e| field("transform.truncate", e.to_string()))?;
        }
        if let Some(s) = t.scale {
            g = build_scaled(&g, s).map_err(|e| field("transform.scale", e.to_string()))?;
        }
        Ok(g)
    }
}

/// Tagged tables are parsed as a whole, so toml reports their header line;
/// point at the offending key instead when it can be found.
fn locate_key(text: &str, message: String) -> String {
    let key = message.split("unknown field `").nth(1).and_then(|r| r.split('`').next());
    let Some(key) = key else { return message };
    let hit = text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    });
    match hit {
        Some(i) => format!("{message}\n(key `{key}` at line {})", i + 1),
        None => message,
    }
}

fn positive_list(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        Some(x) => Err(field(name, format!("entries must be positive and finite, got {x}"))),
        None => Ok(()),
    }
}

/// `a,b,c` or the geometric range `start:end:count`.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    if let Some((a, rest)) = s.split_once(':') {
        let (b, k) = rest.split_once(':').ok_or_else(|| format!("range `{s}` must read start:end:count"))?;
        let a: f64 = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
        let b: f64 = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
        let k: usize = k.trim().parse().map_err(|_| format!("bad range count `{k}`"))?;
        if !(a > 0.0 && b > a) || k < 2 {
            return Err(format!("range `{s}` needs 0 < start < end and count ≥ 2"));
        }
        let r = (b / a).ln() / (k - 1) as f64;
        return Ok((0..k).map(|i| a * (r * i as f64).exp()).collect());
    }
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number `{x}`"))).collect()
}

/// `name=value`.
pub fn parse_tol(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("tolerance `{s}` must read name=value"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("bad tolerance value `{v}`"))?;
    Ok((k.trim().to_string(), v))
}

/// Command-line overrides, applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub taus: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub rmax: Option<f64>,
    pub ladder: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub snapshots: Option<usize>,
    pub t0s: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub tols: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(t) = &o.taus {
            self.functional.taus = t.clone();
            self.sweep.taus = t.clone();
        }
        if o.epsilon.is_some() {
            self.sweep.epsilon = o.epsilon;
        }
        if o.rmax.is_some() {
            self.grid.rmax = o.rmax;
        }
        if let Some(l) = &o.ladder {
            self.functional.ladder = l.clone();
        }
        if let Some(h) = o.horizon {
            self.flow.horizon = h;
            self.flow.t0s.retain(|&t| t <= h);
            if self.flow.t0s.is_empty() {
                self.flow.t0s.push(h);
            }
        }
        if let Some(s) = o.snapshots {
            self.flow.snapshots = s;
        }
        if let Some(t) = &o.t0s {
            self.flow.t0s = t.clone();
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        for (k, v) in &o.tols {
            self.tolerances.set(k, *v)?;
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EH: &str = "[metric]\nfamily = \"eguchi_hanson\"\na = 1.0\n";

    #[test]
    fn round_trip_is_lossless() {
        let cfg = RunConfig::from_toml(EH, "eh.toml").unwrap();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text, "resolved").unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_toml());
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let bad = "[metric]\nfamily = \"eguchi_hanson\"\nb = 1.0\n";
        let e = RunConfig::from_toml(bad, "x.toml").unwrap_err().to_string();
        assert!(e.contains("key `b` at line 3"), "{e}");
        let bad = "[metric]\nfamily = \"flat_cone\"\n[grid]\nq = 0.9\n";
        let e = RunConfig::from_toml(bad, "x.toml").unwrap_err().to_string();
        assert!(e.contains("grid.q"), "{e}");
    }

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_list("1, 10,100").unwrap(), vec![1.0, 10.0, 100.0]);
        let r = parse_list("1e2:1e6:5").unwrap();
        assert_eq!(r.len(), 5);
        assert!((r[2] - 1e4).abs() < 1e-8);
        assert!(parse_list("1:2").is_err());
        assert_eq!(parse_tol("beta=0.2").unwrap(), ("beta".into(), 0.2));
    }

    #[test]
    fn builds_every_family() {
        let texts = [
            "[metric]\nfamily = \"flat_cone\"\ngamma_order = 2\n",
            EH,
            "[metric]\nfamily = \"schwarzschild_conformal\"\ngamma_order = 2\nm = 0.5\n",
            "[metric]\nfamily = \"conformal\"\nk = 0.05\nell = 0.25\n[transform]\ntruncate = 0.5\n",
            "[metric]\nfamily = \"warped\"\nbeta = 2.0\nrho_core = 0.5\nwarp = { kind = \"psi\", c = 1.0, p = 2.0 }\n",
        ];
        for t in texts {
            let cfg = RunConfig::from_toml(t, "t").unwrap();
            cfg.model().unwrap();
        }
    }
}
