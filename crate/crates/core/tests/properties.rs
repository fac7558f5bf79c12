use std::f64::consts::PI;

use ale_entropy::config::{parse_list, RunConfig};
use ale_entropy::functionals::{adm_mass, lambda_ale, mu_minimize, MuOptions, Normalization};
use ale_entropy::geometry::{build_flat_cone, build_scaled, build_schwarzschild_conformal, build_warped, Warp};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cone_entropy_is_minus_log_gamma(k in prop::sample::select(vec![1usize, 2, 3, 4, 6]), tau in 0.5f64..200.0) {
        let g = build_flat_cone(4, k).unwrap();
        let m = mu_minimize(&g, tau, Normalization::Full, &MuOptions::default()).unwrap();
        prop_assert!((m.report.value + (k as f64).ln()).abs() < 1e-5, "{}", m.report.value);
    }

    #[test]
    fn conformal_mass_matches_closed_form(m in 0.05f64..2.0, k in 1usize..4) {
        let g = build_schwarzschild_conformal(4, k, m).unwrap();
        let mass = adm_mass(&g).unwrap().value;
        // (n−1) · 2m · Vol(S³)/|Γ|
        let oracle = 3.0 * 2.0 * m * 2.0 * PI * PI / k as f64;
        prop_assert!((mass - oracle).abs() < 1e-6 * oracle, "{mass} vs {oracle}");
    }

    #[test]
    fn lambda_scales_with_the_homothety(m in 0.1f64..1.0, s in 0.3f64..5.0) {
        let g = build_schwarzschild_conformal(4, 2, m).unwrap();
        let a = lambda_ale(&g).unwrap().value;
        let b = lambda_ale(&build_scaled(&g, s).unwrap()).unwrap().value;
        prop_assert!((b - s * a).abs() < 1e-6 * a.abs(), "{b} vs {}", s * a);
    }

    #[test]
    fn warped_scalar_curvature_matches_hand_derivatives(c in 0.1f64..2.0, p in 1.5f64..3.0, r in 1.0f64..50.0) {
        let g = build_warped(4, 1, Warp::Power { c, p }, p, Some(0.5)).unwrap();
        // B = ρ + cρ^{1−p}; Scal = −6B''/B + 6(1 − B'²)/B² in dimension four.
        let b = r + c * r.powf(1.0 - p);
        let b1 = 1.0 + c * (1.0 - p) * r.powf(-p);
        let b2 = -c * p * (1.0 - p) * r.powf(-p - 1.0);
        let oracle = -6.0 * b2 / b + 6.0 * (1.0 - b1 * b1) / (b * b);
        let s = g.scal(r);
        prop_assert!((s - oracle).abs() <= 1e-6 * oracle.abs().max(1e-12), "{s} vs {oracle}");
    }

    #[test]
    fn config_round_trips(q in 1.001f64..1.2, taus in prop::collection::vec(1e-2f64..1e6, 1..6), m in 0.01f64..3.0) {
        let list = taus.iter().map(|t| format!("{t:e}")).collect::<Vec<_>>().join(", ");
        let text = format!(
            "[metric]\nfamily = \"schwarzschild_conformal\"\nm = {m:e}\n[grid]\nq = {q:e}\n[functional]\ntaus = [{list}]\n"
        );
        let cfg = RunConfig::from_toml(&text, "prop").unwrap();
        prop_assert_eq!(&cfg.functional.taus, &taus);
        let again = RunConfig::from_toml(&cfg.to_toml(), "again").unwrap();
        prop_assert_eq!(cfg, again);
    }

    #[test]
    fn comma_lists_parse(xs in prop::collection::vec(1e-3f64..1e3, 1..8)) {
        let s = xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        prop_assert_eq!(parse_list(&s).unwrap(), xs);
    }
}
