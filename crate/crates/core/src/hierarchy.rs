//! Reconstruction of all densities `G_{α,d}` from the seed `Ḡ_{1,1}`, and
//! the identities a built table has to satisfy.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::bracket::{commutator_density_functional, commutator_truncated, commutator_trunc, Metric};
use crate::error::{Error, Result};
use crate::jets::{JetMonomial, LocalFunctional, QDiffPoly, TermKey, TruncationSpec, Var};
use crate::scalars::{GaussianRational, ParamSet};

/// Everything the recursion needs to know about a theory.
#[derive(Clone, Debug)]
pub struct HierarchySetup {
    pub name: String,
    pub n_fields: u8,
    pub eta: Metric,
    /// `Ḡ_{1,1}`. Its truncation may be wider than `trunc`.
    pub seed: LocalFunctional,
    /// Truncation every density of the table is exact to.
    pub trunc: TruncationSpec,
    pub unit_field: u8,
    pub params: ParamSet,
    /// Field names accepted by the text parser besides `u[f,j]`.
    pub aliases: Vec<(String, u8)>,
    /// Whether the coefficient of every `ħ^m` term must lie in `i^m·ℚ`.
    pub i_pattern: bool,
}

impl HierarchySetup {
    pub fn new(
        name: impl Into<String>,
        eta: Metric,
        seed: QDiffPoly,
        trunc: TruncationSpec,
        unit_field: u8,
    ) -> Result<Self> {
        let n_fields = eta.dim();
        if seed.n_fields() != n_fields {
            return Err(Error::FieldMismatch(seed.n_fields(), n_fields));
        }
        seed.check_fields(n_fields)?;
        if unit_field == 0 || unit_field > n_fields {
            return Err(Error::InvalidField { index: unit_field, count: n_fields });
        }
        Ok(Self {
            name: name.into(),
            n_fields,
            eta,
            seed: LocalFunctional::new(seed),
            trunc,
            unit_field,
            params: ParamSet::new(),
            aliases: Vec::new(),
            i_pattern: false,
        })
    }

    pub fn with_params(mut self, params: ParamSet) -> Self {
        self.params = params;
        self
    }

    pub fn with_alias(mut self, name: &str, field: u8) -> Self {
        self.aliases.push((name.to_string(), field));
        self
    }

    pub fn with_i_pattern(mut self, on: bool) -> Self {
        self.i_pattern = on;
        self
    }

    /// `G_{α,−1} = η_{αμ} u^μ`.
    pub fn g_minus_one(&self, alpha: u8) -> QDiffPoly {
        let mut p = QDiffPoly::zero(self.n_fields, self.trunc);
        for mu in 1..=self.n_fields {
            let e = self.eta.lower(alpha, mu);
            p.add_term(
                TermKey::new(0, 0, JetMonomial::var(Var::new(mu, 0)), Default::default()),
                GaussianRational::real(e.clone()),
            );
        }
        p
    }
}

/// Densities `G_{α,d}` for `d = −1..=d_max+1`.
#[derive(Clone, Debug)]
pub struct HierarchyTable {
    pub densities: BTreeMap<(u8, i32), QDiffPoly>,
    pub const_fixed: BTreeMap<(u8, i32), bool>,
    pub d_max: i32,
}

impl HierarchyTable {
    pub fn get(&self, alpha: u8, d: i32) -> Option<&QDiffPoly> {
        self.densities.get(&(alpha, d))
    }

    pub fn is_const_fixed(&self, alpha: u8, d: i32) -> bool {
        self.const_fixed.get(&(alpha, d)).copied().unwrap_or(false)
    }

    /// Entries whose constants are final, in `(α, d)` order.
    pub fn fixed_entries(&self) -> impl Iterator<Item = ((u8, i32), &QDiffPoly)> {
        self.densities
            .iter()
            .filter(|(k, _)| self.is_const_fixed(k.0, k.1))
            .map(|(k, v)| (*k, v))
    }
}

/// One application of `∂ₓ(D − 1)G_{p+1} = (1/ħ)[G_p, Ḡ_{1,1}]`, with zero constant term.
pub fn recursion_step(setup: &HierarchySetup, g_prev: &QDiffPoly) -> Result<QDiffPoly> {
    let c = commutator_density_functional(g_prev, &setup.seed, &setup.eta)?;
    let h = c.divide_by_hbar()?.antiderivative()?.invert_d_minus_1()?;
    Ok(h.truncate(setup.trunc))
}

/// Builds the table up to `d_max + 1` and fixes constants of `d ≤ d_max` by the
/// string equation.
pub fn build_hierarchy(setup: &HierarchySetup, d_max: i32) -> Result<HierarchyTable> {
    if d_max < 0 {
        return Err(Error::Schema(format!("d_max must be non-negative, got {d_max}")));
    }
    let chains: Vec<Result<Vec<QDiffPoly>>> = (1..=setup.n_fields)
        .into_par_iter()
        .map(|alpha| {
            let mut chain = vec![setup.g_minus_one(alpha)];
            for _ in 0..=d_max + 1 {
                let next = recursion_step(setup, chain.last().expect("nonempty"))?;
                chain.push(next);
            }
            Ok(chain)
        })
        .collect();

    let mut table = HierarchyTable {
        densities: BTreeMap::new(),
        const_fixed: BTreeMap::new(),
        d_max,
    };
    for (alpha, chain) in (1..=setup.n_fields).zip(chains) {
        let mut chain = chain?;
        for d in (0..=d_max + 1).rev() {
            let idx = (d + 1) as usize;
            let constants = chain[idx].partial(setup.unit_field, 0).u_free_part();
            let target = &mut chain[idx - 1];
            let mut fixed = target.without_u_free_part();
            for (k, c) in constants.terms() {
                fixed.add_term(k.clone(), c.clone());
            }
            *target = fixed;
        }
        for (d, g) in (-1..).zip(chain) {
            table.const_fixed.insert((alpha, d), d <= d_max);
            table.densities.insert((alpha, d), g);
        }
    }
    Ok(table)
}

/// `(1/ħ)[u^field, Ḡ_{β,q}]`.
pub fn flow_equation(
    table: &HierarchyTable,
    setup: &HierarchySetup,
    field: u8,
    beta: u8,
    q: i32,
) -> Result<QDiffPoly> {
    if field == 0 || field > setup.n_fields {
        return Err(Error::InvalidField { index: field, count: setup.n_fields });
    }
    let g = table
        .get(beta, q)
        .ok_or_else(|| Error::Schema(format!("table has no entry G[{beta},{q}]")))?;
    let u = QDiffPoly::var(setup.n_fields, g.trunc(), field, 0);
    commutator_density_functional(&u, &LocalFunctional::new(g.clone()), &setup.eta)?.divide_by_hbar()
}

/// One checked identity; `residual` is empty exactly when it passed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub residual: String,
}

impl Check {
    fn from_residual(name: String, residual: &QDiffPoly) -> Self {
        Self::from_residuals(name, std::slice::from_ref(residual))
    }

    fn from_residuals(name: String, residuals: &[QDiffPoly]) -> Self {
        let parts: Vec<String> = residuals
            .iter()
            .filter(|r| !r.is_zero())
            .map(ToString::to_string)
            .collect();
        Self { name, passed: parts.is_empty(), residual: parts.join("; ") }
    }

    fn flag(name: String, offenders: Vec<String>) -> Self {
        Self { name, passed: offenders.is_empty(), residual: offenders.join("; ") }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub setup: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// `a − b` on the terms both truncations admit.
pub fn difference_mod_trunc(a: &QDiffPoly, b: &QDiffPoly) -> Result<QDiffPoly> {
    let t = a.trunc().meet(&b.trunc());
    a.truncate(t).checked_sub(&b.truncate(t))
}

/// `[Ḡ_{α,p}, Ḡ_{β,q}] = 0` for all `−1 ≤ p, q ≤ p_max`.
pub fn verify_commutativity(table: &HierarchyTable, setup: &HierarchySetup, p_max: i32) -> Result<Vec<Check>> {
    let mut pairs = Vec::new();
    for a in 1..=setup.n_fields {
        for p in -1..=p_max {
            for b in 1..=setup.n_fields {
                for q in -1..=p_max {
                    if (a, p) <= (b, q) {
                        pairs.push(((a, p), (b, q)));
                    }
                }
            }
        }
    }
    pairs
        .into_par_iter()
        .map(|((a, p), (b, q))| {
            let f = entry(table, a, p)?;
            let g = LocalFunctional::new(entry(table, b, q)?.clone());
            let c = LocalFunctional::new(commutator_density_functional(f, &g, &setup.eta)?);
            Ok(Check::from_residuals(format!("commute G[{a},{p}] G[{b},{q}]"), &c.gradient()))
        })
        .collect()
}

fn entry(table: &HierarchyTable, a: u8, d: i32) -> Result<&QDiffPoly> {
    table
        .get(a, d)
        .ok_or_else(|| Error::Schema(format!("table has no entry G[{a},{d}]")))
}

/// `∂G_{α,d+1}/∂u^{unit} = G_{α,d}` on every entry with fixed constants.
pub fn verify_string(table: &HierarchyTable, setup: &HierarchySetup) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for ((a, d), g) in table.fixed_entries() {
        let Some(next) = table.get(a, d + 1) else { continue };
        let r = difference_mod_trunc(&next.partial(setup.unit_field, 0), g)?;
        out.push(Check::from_residual(format!("string G[{a},{d}]"), &r));
    }
    Ok(out)
}

/// `∂ₓ ∂G_{α,p+1}/∂u^β = (1/ħ)[G_{α,p}, Ḡ_{β,0}]` for every built `(α, p)` and every `β`.
pub fn verify_recursion_identity(table: &HierarchyTable, setup: &HierarchySetup) -> Result<Vec<Check>> {
    let mut jobs = Vec::new();
    for &(a, p) in table.densities.keys() {
        if table.get(a, p + 1).is_none() {
            continue;
        }
        for b in 1..=setup.n_fields {
            jobs.push((a, p, b));
        }
    }
    jobs.into_par_iter()
        .map(|(a, p, b)| {
            let lhs = entry(table, a, p + 1)?.partial(b, 0).d_x();
            let g0 = LocalFunctional::new(entry(table, b, 0)?.clone());
            let f = entry(table, a, p)?;
            let t = commutator_trunc(&f.trunc(), &g0.density.trunc());
            let rhs = commutator_truncated(f, &g0.density, &setup.eta, t)?.divide_by_hbar()?;
            let r = difference_mod_trunc(&lhs, &rhs)?;
            Ok(Check::from_residual(format!("recursion G[{a},{}] wrt u^{b}", p + 1), &r))
        })
        .collect()
}

/// Only even powers of `ε` occur.
pub fn check_eps_parity(p: &QDiffPoly) -> Vec<String> {
    offenders(p, |k, _| k.eps % 2 == 0)
}

/// A term with `ε^k ħ^j` carries at most `k + 2j` x-derivatives.
pub fn check_degree_bound(p: &QDiffPoly) -> Vec<String> {
    offenders(p, |k, _| k.degree() <= 0)
}

/// The coefficient of every `ħ^m` term lies in `i^m·ℚ`.
pub fn check_i_pattern(p: &QDiffPoly) -> Vec<String> {
    offenders(p, |k, c| c.in_i_power_line(k.hbar))
}

fn offenders(p: &QDiffPoly, ok: impl Fn(&TermKey, &GaussianRational) -> bool) -> Vec<String> {
    p.terms()
        .filter(|(k, c)| !ok(k, c))
        .map(|(k, c)| crate::text::format_term(k, c))
        .collect()
}

/// Structural invariants of every entry: ε-parity, degree bound, the
/// i-pattern when the setup asks for it, `G_{α,−1} = η_{αμ}u^μ`, and
/// `Ḡ_{1,1}` of the table equal to the seed.
pub fn verify_invariants(table: &HierarchyTable, setup: &HierarchySetup) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (&(a, d), g) in &table.densities {
        out.push(Check::flag(format!("eps-parity G[{a},{d}]"), check_eps_parity(g)));
        out.push(Check::flag(format!("degree G[{a},{d}]"), check_degree_bound(g)));
        if setup.i_pattern {
            out.push(Check::flag(format!("i-pattern G[{a},{d}]"), check_i_pattern(g)));
        }
    }
    for a in 1..=setup.n_fields {
        let r = difference_mod_trunc(entry(table, a, -1)?, &setup.g_minus_one(a))?;
        out.push(Check::from_residual(format!("G[{a},-1] = eta u"), &r));
    }
    let u = setup.unit_field;
    let r = difference_mod_trunc(entry(table, u, 1)?, &setup.seed.density)?;
    out.push(Check::from_residuals(
        format!("G[{u},1] reproduces the seed"),
        &LocalFunctional::new(r).gradient(),
    ));
    Ok(out)
}

/// Every check above, in a fixed order.
pub fn verify_all(table: &HierarchyTable, setup: &HierarchySetup, p_max: i32) -> Result<Report> {
    let mut checks = verify_commutativity(table, setup, p_max)?;
    checks.extend(verify_string(table, setup)?);
    checks.extend(verify_recursion_identity(table, setup)?);
    checks.extend(verify_invariants(table, setup)?);
    Ok(Report { setup: setup.name.clone(), checks })
}
