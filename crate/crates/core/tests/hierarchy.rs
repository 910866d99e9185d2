mod common;

use qdr_core::hierarchy::{
    build_hierarchy, flow_equation, recursion_step, verify_all, verify_commutativity, HierarchySetup,
};
use qdr_core::seeds::{
    dispersionless_kdv_oracle, seed_by_name, seed_kdv, seed_toda, toda_miura_inverse,
    toda_miura_substitute,
};
use qdr_core::{Error, Metric, TruncationSpec};

use common::parse;

#[test]
fn corrupted_seed_fails_verification() {
    // Rescaling u³ keeps the flows commuting but breaks the string equation
    // and the seed is no longer reproduced by the recursion.
    let t = TruncationSpec::new(4, 2);
    let seed = parse(1, "u^3/5 + eps^2/24*u*u[2] - i*hbar/24*u", t, &[]);
    let s = HierarchySetup::new("bad", Metric::scalar(), seed, t, 1).unwrap();
    let report = verify_all(&build_hierarchy(&s, 2).unwrap(), &s, 2).unwrap();
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    assert!(failed.contains(&"string G[1,1]"), "{failed:?}");
    assert!(failed.contains(&"G[1,1] reproduces the seed"), "{failed:?}");
    assert!(report.failures().all(|c| !c.residual.is_empty()));
}

#[test]
fn non_integrable_seed_is_not_exact() {
    let t = TruncationSpec::new(4, 2);
    let seed = parse(1, "u^3/6 + eps^2/24*u*u[2] - i*hbar/24*u + eps^2*u^2*u[2]/7", t, &[]);
    let s = HierarchySetup::new("bad", Metric::scalar(), seed, t, 1).unwrap();
    assert!(matches!(build_hierarchy(&s, 1), Err(Error::NotExact { .. })));
}

#[test]
fn corrupted_density_breaks_commutativity() {
    let s = seed_kdv(TruncationSpec::new(4, 2)).unwrap();
    let mut table = build_hierarchy(&s, 2).unwrap();
    let g2 = table.densities.get_mut(&(1, 2)).unwrap();
    *g2 = &*g2 + &parse(1, "u^4/7", s.trunc, &[]);
    let checks = verify_commutativity(&table, &s, 2).unwrap();
    let c12 = checks.iter().find(|c| c.name == "commute G[1,1] G[1,2]").unwrap();
    assert!(!c12.passed && !c12.residual.is_empty());
    // Ḡ₀ = ∫u²/2 generates translations, so it still commutes with anything.
    let c02 = checks.iter().find(|c| c.name == "commute G[1,0] G[1,2]").unwrap();
    assert!(c02.passed);
}

#[test]
fn casimir_pairs_vanish() {
    let s = seed_kdv(TruncationSpec::new(4, 2)).unwrap();
    let table = build_hierarchy(&s, 2).unwrap();
    for c in verify_commutativity(&table, &s, 2).unwrap() {
        if c.name.contains("G[1,-1]") {
            assert!(c.passed && c.residual.is_empty(), "{}", c.name);
        }
    }
}

#[test]
fn kdv_recursion_steps_match_printed_constant_free_parts() {
    let s = seed_kdv(TruncationSpec::new(6, 2)).unwrap();
    let g0 = recursion_step(&s, &s.g_minus_one(1)).unwrap();
    assert_eq!(g0, parse(1, "u^2/2 + eps^2/24*u[2]", s.trunc, &[]));
    let g1 = recursion_step(&s, &g0).unwrap();
    let want = parse(
        1,
        "u^3/6 + eps^2/24*u*u[2] + eps^4/1152*u[4] - i*hbar*(u + u[2])/24",
        s.trunc,
        &[],
    );
    assert_eq!(g1, want);
}

#[test]
fn classical_limit_of_kdv_seed() {
    let s = seed_kdv(TruncationSpec::new(4, 2)).unwrap();
    let table = build_hierarchy(&s, 1).unwrap();
    let g1 = table.get(1, 1).unwrap().hbar_part(0);
    assert_eq!(g1, parse(1, "u^3/6 + eps^2/24*u*u[2] + eps^4/1152*u[4]", s.trunc, &[]));
}

#[test]
fn flows() {
    let s = seed_kdv(TruncationSpec::new(4, 2)).unwrap();
    let table = build_hierarchy(&s, 1).unwrap();
    let f = flow_equation(&table, &s, 1, 1, 1).unwrap().hbar_part(0);
    assert_eq!(f, parse(1, "u*u[1] + eps^2/12*u[3]", f.trunc(), &[]));
    assert!(flow_equation(&table, &s, 1, 1, -1).unwrap().is_zero());
    assert!(matches!(flow_equation(&table, &s, 3, 1, 0), Err(Error::InvalidField { .. })));
}

#[test]
fn dispersionless_string_identity() {
    // ∂G(y)/∂u = y·G(y) + 1/y, coefficientwise.
    let g = dispersionless_kdv_oracle(5, 2).unwrap();
    assert_eq!(g[&-1].partial(1, 0), parse(1, "1", g[&-1].trunc(), &[]));
    for d in 0..=5 {
        assert_eq!(g[&d].partial(1, 0), g[&(d - 1)].with_trunc(g[&d].trunc()), "d = {d}");
    }
}

#[test]
fn dispersionless_classical_pipelines_agree() {
    let g = dispersionless_kdv_oracle(4, 0).unwrap();
    let s = seed_kdv(TruncationSpec::new(0, 0)).unwrap();
    let table = build_hierarchy(&s, 4).unwrap();
    for d in -1..=4 {
        assert_eq!(table.get(1, d).unwrap(), &g[&d]);
    }
}

#[test]
fn seed_registry() {
    assert!(seed_by_name("kdv").is_some());
    assert_eq!(seed_by_name("toda").unwrap().params, &["q"]);
    assert!(seed_by_name("nope").is_none());
    let t = TruncationSpec::new(2, 1);
    assert!(matches!((seed_by_name("toda").unwrap().build)(t), Err(Error::UnboundedUDegree)));
}

#[test]
fn built_seeds_pass_parity_and_degree() {
    for (name, t) in [
        ("kdv", TruncationSpec::new(4, 2)),
        ("ilw", TruncationSpec::new(4, 2)),
        ("toda", TruncationSpec::new(2, 1).with_udeg(3)),
    ] {
        let s = (seed_by_name(name).unwrap().build)(t).unwrap();
        let d = &s.seed.density;
        assert!(qdr_core::hierarchy::check_eps_parity(d).is_empty(), "{name}");
        assert!(qdr_core::hierarchy::check_degree_bound(d).is_empty(), "{name}");
        let table = build_hierarchy(&s, 1).unwrap();
        let report = verify_all(&table, &s, 1).unwrap();
        assert!(report.all_passed(), "{name}: {:?}", report.failures().collect::<Vec<_>>());
    }
}

#[test]
fn toda_miura_round_trips_on_built_density() {
    let s = seed_toda(TruncationSpec::new(3, 1).with_udeg(3)).unwrap();
    let table = build_hierarchy(&s, 0).unwrap();
    let g = table.get(1, 1).unwrap();
    let t = g.trunc();
    let v = toda_miura_substitute(g, t).unwrap();
    assert_eq!(toda_miura_inverse(&v, t).unwrap(), g.truncate(t));
    assert_eq!(v.eps_part(0), g.eps_part(0));
}

#[test]
fn setup_validation() {
    let t = TruncationSpec::new(2, 1);
    let seed = parse(1, "u^3/6", t, &[]);
    assert!(matches!(
        HierarchySetup::new("x", Metric::scalar(), seed.clone(), t, 2),
        Err(Error::InvalidField { .. })
    ));
    assert!(matches!(
        HierarchySetup::new("x", Metric::antidiagonal(), seed, t, 1),
        Err(Error::FieldMismatch(..))
    ));
}
