//! Quantum differential polynomials: sparse sums of `ε^a ħ^b · (params) · ∏ u^α_s`
//! with Gaussian-rational coefficients, together with the calculus acting on
//! them (`∂ₓ`, partial and variational derivatives, the dilaton operator,
//! and exact inversion of `∂ₓ` and `D − 1`).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_traits::One;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::scalars::{rat_int, GaussianRational, Param, ParamMono, Rational};

/// The jet variable `u^field_jet`. Fields are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub field: u8,
    pub jet: u16,
}

impl Var {
    pub fn new(field: u8, jet: u16) -> Self {
        Self { field, jet }
    }

    pub fn raised(self) -> Self {
        Self::new(self.field, self.jet + 1)
    }
}

/// A product of jet variables, stored as `(var, power)` pairs sorted by
/// field then jet. The empty product is the constant monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct JetMonomial(SmallVec<[(Var, u32); 4]>);

impl JetMonomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn var(v: Var) -> Self {
        Self::pow(v, 1)
    }

    pub fn pow(v: Var, p: u32) -> Self {
        let mut m = Self::one();
        if p > 0 {
            m.0.push((v, p));
        }
        m
    }

    pub fn from_factors(factors: impl IntoIterator<Item = (Var, u32)>) -> Self {
        let mut m = Self::one();
        for (v, p) in factors {
            m.mul_var(v, p);
        }
        m
    }

    pub fn factors(&self) -> &[(Var, u32)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of u-factors counted with multiplicity.
    pub fn udeg(&self) -> u32 {
        self.0.iter().map(|&(_, p)| p).sum()
    }

    /// Total number of x-derivatives, `Σ jets`.
    pub fn jet_order(&self) -> u32 {
        self.0.iter().map(|&(v, p)| u32::from(v.jet) * p).sum()
    }

    pub fn max_jet(&self) -> Option<u16> {
        self.0.iter().map(|&(v, _)| v.jet).max()
    }

    pub fn power_of(&self, v: Var) -> u32 {
        match self.0.binary_search_by(|(w, _)| w.cmp(&v)) {
            Ok(i) => self.0[i].1,
            Err(_) => 0,
        }
    }

    pub fn mul_var(&mut self, v: Var, p: u32) {
        if p == 0 {
            return;
        }
        match self.0.binary_search_by(|(w, _)| w.cmp(&v)) {
            Ok(i) => self.0[i].1 += p,
            Err(i) => self.0.insert(i, (v, p)),
        }
    }

    /// Divides out `v^p`; `None` when the power present is smaller.
    pub fn div_var(&self, v: Var, p: u32) -> Option<JetMonomial> {
        let i = self.0.binary_search_by(|(w, _)| w.cmp(&v)).ok()?;
        let have = self.0[i].1;
        if have < p {
            return None;
        }
        let mut out = self.clone();
        if have == p {
            out.0.remove(i);
        } else {
            out.0[i].1 -= p;
        }
        Some(out)
    }

    pub fn mul(&self, o: &JetMonomial) -> JetMonomial {
        if o.is_one() {
            return self.clone();
        }
        if self.is_one() {
            return o.clone();
        }
        let mut out: SmallVec<[(Var, u32); 4]> = SmallVec::with_capacity(self.0.len() + o.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < o.0.len() {
            let (a, b) = (self.0[i], o.0[j]);
            match a.0.cmp(&b.0) {
                Ordering::Less => {
                    out.push(a);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a.0, a.1 + b.1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&o.0[j..]);
        JetMonomial(out)
    }

    pub fn max_field(&self) -> u8 {
        self.0.iter().map(|(v, _)| v.field).max().unwrap_or(0)
    }
}

impl PartialOrd for JetMonomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for JetMonomial {
    /// Graded by u-degree, then by total jet order, then lexicographic on factors.
    fn cmp(&self, other: &Self) -> Ordering {
        self.udeg()
            .cmp(&other.udeg())
            .then_with(|| self.jet_order().cmp(&other.jet_order()))
            .then_with(|| self.0.cmp(&other.0))
    }
}

/// Key of one term: `ħ^hbar ε^eps · params · mono`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermKey {
    pub hbar: u32,
    pub eps: u32,
    pub mono: JetMonomial,
    pub params: ParamMono,
}

impl TermKey {
    pub fn new(eps: u32, hbar: u32, mono: JetMonomial, params: ParamMono) -> Self {
        Self { hbar, eps, mono, params }
    }

    pub fn constant() -> Self {
        Self::new(0, 0, JetMonomial::one(), ParamMono::one())
    }

    pub fn mul(&self, o: &TermKey) -> TermKey {
        TermKey {
            hbar: self.hbar + o.hbar,
            eps: self.eps + o.eps,
            mono: self.mono.mul(&o.mono),
            params: self.params.mul(&o.params),
        }
    }

    /// Weight under `D = ε∂_ε + 2ħ∂_ħ + Σ u ∂_u`.
    pub fn dilaton_weight(&self) -> u32 {
        self.eps + 2 * self.hbar + self.mono.udeg()
    }

    /// Degree with `deg u_s = s`, `deg ε = −1`, `deg ħ = −2`.
    pub fn degree(&self) -> i64 {
        i64::from(self.mono.jet_order()) - i64::from(self.eps) - 2 * i64::from(self.hbar)
    }
}

/// Truncation of the formal series in `ε`, `ħ` and the fields `u^α_0`.
///
/// `udeg` bounds the number of u-factors of a term. `weighted` bounds
/// `udeg + hbar`, the grading the quantum commutator degrades by at most one
/// per bracket, which keeps power series in `u` consistent through the
/// reconstruction recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TruncationSpec {
    pub eps: u32,
    pub hbar: u32,
    pub udeg: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted: Option<u32>,
}

fn min_opt(a: Option<u32>, b: Option<u32>) -> Option<u32> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

impl TruncationSpec {
    pub fn new(eps: u32, hbar: u32) -> Self {
        Self { eps, hbar, udeg: None, weighted: None }
    }

    pub fn with_udeg(mut self, u: u32) -> Self {
        self.udeg = Some(u);
        self
    }

    pub fn with_weighted(mut self, w: u32) -> Self {
        self.weighted = Some(w);
        self
    }

    pub fn admits(&self, k: &TermKey) -> bool {
        if k.eps > self.eps || k.hbar > self.hbar {
            return false;
        }
        let d = k.mono.udeg();
        if self.udeg.is_some_and(|u| d > u) {
            return false;
        }
        !self.weighted.is_some_and(|w| d + k.hbar > w)
    }

    /// Tightest common truncation.
    pub fn meet(&self, o: &TruncationSpec) -> TruncationSpec {
        TruncationSpec {
            eps: self.eps.min(o.eps),
            hbar: self.hbar.min(o.hbar),
            udeg: min_opt(self.udeg, o.udeg),
            weighted: min_opt(self.weighted, o.weighted),
        }
    }

    pub fn has_finite_u(&self) -> bool {
        self.udeg.is_some() || self.weighted.is_some()
    }

    /// Bounds valid after an operation that removes one u-factor.
    pub fn lowered_u(&self) -> TruncationSpec {
        TruncationSpec {
            udeg: self.udeg.map(|u| u.saturating_sub(1)),
            weighted: self.weighted.map(|w| w.saturating_sub(1)),
            ..*self
        }
    }
}

/// A quantum differential polynomial over `n_fields` fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QDiffPoly {
    n_fields: u8,
    trunc: TruncationSpec,
    terms: BTreeMap<TermKey, GaussianRational>,
}

impl QDiffPoly {
    pub fn zero(n_fields: u8, trunc: TruncationSpec) -> Self {
        Self { n_fields, trunc, terms: BTreeMap::new() }
    }

    pub fn constant(n_fields: u8, trunc: TruncationSpec, c: GaussianRational) -> Self {
        let mut p = Self::zero(n_fields, trunc);
        p.add_term(TermKey::constant(), c);
        p
    }

    /// The single jet variable `u^field_jet`.
    pub fn var(n_fields: u8, trunc: TruncationSpec, field: u8, jet: u16) -> Self {
        let mut p = Self::zero(n_fields, trunc);
        p.add_term(
            TermKey::new(0, 0, JetMonomial::var(Var::new(field, jet)), ParamMono::one()),
            GaussianRational::one(),
        );
        p
    }

    /// `coeff · ε^eps ħ^hbar · params · mono` as a polynomial.
    pub fn monomial(
        n_fields: u8,
        trunc: TruncationSpec,
        coeff: GaussianRational,
        eps: u32,
        hbar: u32,
        params: ParamMono,
        mono: JetMonomial,
    ) -> Self {
        let mut p = Self::zero(n_fields, trunc);
        p.add_term(TermKey::new(eps, hbar, mono, params), coeff);
        p
    }

    pub fn from_terms(
        n_fields: u8,
        trunc: TruncationSpec,
        terms: impl IntoIterator<Item = (TermKey, GaussianRational)>,
    ) -> Self {
        let mut p = Self::zero(n_fields, trunc);
        for (k, c) in terms {
            p.add_term(k, c);
        }
        p
    }

    pub fn n_fields(&self) -> u8 {
        self.n_fields
    }

    pub fn trunc(&self) -> TruncationSpec {
        self.trunc
    }

    pub fn terms(&self) -> impl Iterator<Item = (&TermKey, &GaussianRational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, k: &TermKey) -> GaussianRational {
        self.terms.get(k).cloned().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `c` to the coefficient of `k`; terms outside the truncation are dropped.
    pub fn add_term(&mut self, k: TermKey, c: GaussianRational) {
        if c.is_zero() || !self.trunc.admits(&k) {
            return;
        }
        debug_assert!(k.mono.max_field() <= self.n_fields, "field index out of range");
        match self.terms.entry(k) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += &c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    fn add_term_ref(&mut self, k: &TermKey, c: &GaussianRational) {
        if c.is_zero() || !self.trunc.admits(k) {
            return;
        }
        if let Some(slot) = self.terms.get_mut(k) {
            *slot += c;
            if slot.is_zero() {
                self.terms.remove(k);
            }
        } else {
            self.terms.insert(k.clone(), c.clone());
        }
    }

    /// Re-truncates to `trunc` (intersected with the current truncation).
    pub fn truncate(&self, trunc: TruncationSpec) -> QDiffPoly {
        let trunc = self.trunc.meet(&trunc);
        QDiffPoly {
            n_fields: self.n_fields,
            trunc,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| trunc.admits(k))
                .map(|(k, c)| (k.clone(), c.clone()))
                .collect(),
        }
    }

    /// Replaces the truncation metadata without dropping terms that it admits.
    pub fn with_trunc(&self, trunc: TruncationSpec) -> QDiffPoly {
        let mut out = QDiffPoly::zero(self.n_fields, trunc);
        for (k, c) in &self.terms {
            out.add_term_ref(k, c);
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(&TermKey) -> bool) -> QDiffPoly {
        QDiffPoly {
            n_fields: self.n_fields,
            trunc: self.trunc,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, c)| (k.clone(), c.clone()))
                .collect(),
        }
    }

    /// Part of the polynomial with exactly `ħ^m`.
    pub fn hbar_part(&self, m: u32) -> QDiffPoly {
        self.filter(|k| k.hbar == m)
    }

    /// Part of the polynomial with exactly `ε^m`.
    pub fn eps_part(&self, m: u32) -> QDiffPoly {
        self.filter(|k| k.eps == m)
    }

    /// The u-free part (constants in the jet variables, possibly carrying ε, ħ, params).
    pub fn u_free_part(&self) -> QDiffPoly {
        self.filter(|k| k.mono.is_one())
    }

    pub fn without_u_free_part(&self) -> QDiffPoly {
        self.filter(|k| !k.mono.is_one())
    }

    /// Sets the formal parameter `p` to the value `v`.
    pub fn specialize_param(&self, p: Param, v: &GaussianRational) -> QDiffPoly {
        let mut out = QDiffPoly::zero(self.n_fields, self.trunc);
        for (k, c) in &self.terms {
            let (e, rest) = k.params.split_off(p);
            if e == 0 {
                out.add_term_ref(k, c);
                continue;
            }
            let mut f = c.clone();
            for _ in 0..e {
                f = &f * v;
            }
            out.add_term(TermKey { params: rest, ..k.clone() }, f);
        }
        out
    }

    pub fn max_jet(&self) -> Option<u16> {
        self.terms.keys().filter_map(|k| k.mono.max_jet()).max()
    }

    pub fn max_udeg(&self) -> u32 {
        self.terms.keys().map(|k| k.mono.udeg()).max().unwrap_or(0)
    }

    /// All jet variables that occur.
    pub fn vars(&self) -> Vec<Var> {
        let mut vs: Vec<Var> = self
            .terms
            .keys()
            .flat_map(|k| k.mono.factors().iter().map(|&(v, _)| v))
            .collect();
        vs.sort();
        vs.dedup();
        vs
    }

    pub fn check_fields(&self, n: u8) -> Result<()> {
        for k in self.terms.keys() {
            for &(v, _) in k.mono.factors() {
                if v.field == 0 || v.field > n {
                    return Err(Error::InvalidField { index: v.field, count: n });
                }
            }
        }
        Ok(())
    }

    fn same_ring(&self, o: &QDiffPoly) -> Result<()> {
        if self.n_fields == o.n_fields {
            Ok(())
        } else {
            Err(Error::FieldMismatch(self.n_fields, o.n_fields))
        }
    }

    pub fn checked_add(&self, o: &QDiffPoly) -> Result<QDiffPoly> {
        self.same_ring(o)?;
        let mut out = self.with_trunc(self.trunc.meet(&o.trunc));
        for (k, c) in &o.terms {
            out.add_term_ref(k, c);
        }
        Ok(out)
    }

    pub fn checked_sub(&self, o: &QDiffPoly) -> Result<QDiffPoly> {
        self.same_ring(o)?;
        let mut out = self.with_trunc(self.trunc.meet(&o.trunc));
        for (k, c) in &o.terms {
            out.add_term(k.clone(), -c);
        }
        Ok(out)
    }

    pub fn checked_mul(&self, o: &QDiffPoly) -> Result<QDiffPoly> {
        self.same_ring(o)?;
        Ok(self.mul_truncated(o, self.trunc.meet(&o.trunc)))
    }

    /// Product with terms outside `trunc` discarded as they are generated.
    pub fn mul_truncated(&self, o: &QDiffPoly, trunc: TruncationSpec) -> QDiffPoly {
        let mut out = QDiffPoly::zero(self.n_fields, trunc);
        for (ka, ca) in &self.terms {
            if ka.eps > trunc.eps || ka.hbar > trunc.hbar {
                continue;
            }
            for (kb, cb) in &o.terms {
                if ka.eps + kb.eps > trunc.eps || ka.hbar + kb.hbar > trunc.hbar {
                    continue;
                }
                let d = ka.mono.udeg() + kb.mono.udeg();
                if trunc.udeg.is_some_and(|u| d > u)
                    || trunc.weighted.is_some_and(|w| d + ka.hbar + kb.hbar > w)
                {
                    continue;
                }
                out.add_term(ka.mul(kb), ca * cb);
            }
        }
        out
    }

    pub fn scale(&self, c: &GaussianRational) -> QDiffPoly {
        if c.is_zero() {
            return QDiffPoly::zero(self.n_fields, self.trunc);
        }
        QDiffPoly {
            n_fields: self.n_fields,
            trunc: self.trunc,
            terms: self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
        }
    }

    /// Multiplies every term by `ε^eps ħ^hbar · params`, dropping what leaves the truncation.
    pub fn shift(&self, eps: u32, hbar: u32, params: &ParamMono) -> QDiffPoly {
        let unit = TermKey::new(eps, hbar, JetMonomial::one(), params.clone());
        let mut out = QDiffPoly::zero(self.n_fields, self.trunc);
        for (k, c) in &self.terms {
            out.add_term(k.mul(&unit), c.clone());
        }
        out
    }

    /// Accumulates `c · self` into `acc`, respecting `acc`'s truncation.
    pub fn add_scaled_into(&self, acc: &mut QDiffPoly, c: &GaussianRational) {
        for (k, v) in &self.terms {
            acc.add_term(k.clone(), v * c);
        }
    }

    /// The total x-derivative `∂ₓ = Σ u_{s+1} ∂/∂u_s`.
    pub fn d_x(&self) -> QDiffPoly {
        let mut out = QDiffPoly::zero(self.n_fields, self.trunc);
        for (k, c) in &self.terms {
            for &(v, p) in k.mono.factors() {
                let mut mono = k.mono.div_var(v, 1).expect("factor present");
                mono.mul_var(v.raised(), 1);
                out.add_term(
                    TermKey { mono, ..k.clone() },
                    c.scale(&rat_int(i64::from(p))),
                );
            }
        }
        out
    }

    pub fn d_x_pow(&self, j: u32) -> QDiffPoly {
        let mut out = self.clone();
        for _ in 0..j {
            out = out.d_x();
        }
        out
    }

    /// `∂f/∂u^field_jet`.
    pub fn partial(&self, field: u8, jet: u16) -> QDiffPoly {
        self.partial_var(Var::new(field, jet))
    }

    pub fn partial_var(&self, v: Var) -> QDiffPoly {
        let mut out = QDiffPoly::zero(self.n_fields, self.trunc.lowered_u());
        for (k, c) in &self.terms {
            let p = k.mono.power_of(v);
            if p == 0 {
                continue;
            }
            let mono = k.mono.div_var(v, 1).expect("factor present");
            out.add_term(TermKey { mono, ..k.clone() }, c.scale(&rat_int(i64::from(p))));
        }
        out
    }

    /// The Euler operator `δ/δu^field = Σ_k (−∂ₓ)^k ∂/∂u^field_k`.
    pub fn variational_derivative(&self, field: u8) -> QDiffPoly {
        let mut out = QDiffPoly::zero(self.n_fields, self.trunc.lowered_u());
        let max = self.max_jet().unwrap_or(0);
        for jet in 0..=max {
            let mut part = self.partial(field, jet);
            if part.is_zero() {
                continue;
            }
            for _ in 0..jet {
                part = part.d_x();
            }
            let sign = if jet % 2 == 0 { 1 } else { -1 };
            part.add_scaled_into(&mut out, &GaussianRational::from_int(sign));
        }
        out
    }

    /// The dilaton operator: every term scaled by its D-weight.
    pub fn dilaton(&self) -> QDiffPoly {
        let mut out = QDiffPoly::zero(self.n_fields, self.trunc);
        for (k, c) in &self.terms {
            out.add_term(k.clone(), c.scale(&rat_int(i64::from(k.dilaton_weight()))));
        }
        out
    }

    /// Solves `(D − 1) h = self` term by term.
    pub fn invert_d_minus_1(&self) -> Result<QDiffPoly> {
        let mut out = QDiffPoly::zero(self.n_fields, self.trunc);
        for (k, c) in &self.terms {
            let w = k.dilaton_weight();
            if w == 1 {
                return Err(Error::WeightOneObstruction {
                    term: crate::text::format_term(k, c),
                });
            }
            let d = rat_int(i64::from(w) - 1);
            out.add_term(k.clone(), c.scale(&(Rational::one() / d)));
        }
        Ok(out)
    }

    /// Lowers the ħ-power of every term by one.
    pub fn divide_by_hbar(&self) -> Result<QDiffPoly> {
        let trunc = TruncationSpec {
            hbar: self.trunc.hbar.saturating_sub(1),
            weighted: self.trunc.weighted.map(|w| w.saturating_sub(1)),
            ..self.trunc
        };
        let mut out = QDiffPoly::zero(self.n_fields, trunc);
        for (k, c) in &self.terms {
            if k.hbar == 0 {
                return Err(Error::NotDivisible { term: crate::text::format_term(k, c) });
            }
            out.terms.insert(TermKey { hbar: k.hbar - 1, ..k.clone() }, c.clone());
        }
        Ok(out)
    }

    /// The unique `h` without u-free terms such that `∂ₓ h = self`.
    ///
    /// Within each block of fixed (ε, ħ, params, u-degree, jet order) the
    /// map `m ↦ ∂ₓ m` is triangular for the order comparing the
    /// descending list of `(jet, field)` factors: the largest monomial of
    /// `∂ₓ m` raises the largest factor of `m`. The linear system is solved
    /// by back substitution on that triangle; anything left over is the
    /// obstruction to exactness.
    pub fn antiderivative(&self) -> Result<QDiffPoly> {
        type Desc = SmallVec<[(u16, u8); 8]>;
        type Block = (u32, u32, ParamMono, u32, u32);

        fn to_desc(m: &JetMonomial) -> Desc {
            let mut d: Desc = SmallVec::new();
            for &(v, p) in m.factors() {
                for _ in 0..p {
                    d.push((v.jet, v.field));
                }
            }
            d.sort_unstable_by(|a, b| b.cmp(a));
            d
        }
        fn from_desc(d: &[(u16, u8)]) -> JetMonomial {
            JetMonomial::from_factors(d.iter().map(|&(j, f)| (Var::new(f, j), 1)))
        }
        // Terms of ∂ₓ applied to the monomial `d`.
        fn dx_desc(d: &Desc) -> Vec<(Desc, u32)> {
            let mut out = Vec::new();
            let mut i = 0;
            while i < d.len() {
                let mut mult = 1;
                while i + mult < d.len() && d[i + mult] == d[i] {
                    mult += 1;
                }
                let mut r = d.clone();
                r[i].0 += 1;
                r.sort_unstable_by(|a, b| b.cmp(a));
                out.push((r, mult as u32));
                i += mult;
            }
            out
        }

        let mut blocks: BTreeMap<Block, BTreeMap<Desc, GaussianRational>> = BTreeMap::new();
        for (k, c) in &self.terms {
            let key = (k.eps, k.hbar, k.params.clone(), k.mono.udeg(), k.mono.jet_order());
            blocks.entry(key).or_default().insert(to_desc(&k.mono), c.clone());
        }

        let mut out = QDiffPoly::zero(self.n_fields, self.trunc);
        for ((eps, hbar, params, _, _), mut block) in blocks {
            while let Some((lead, c)) = block.iter().next_back().map(|(d, c)| (d.clone(), c.clone())) {
                let head = lead.first().copied();
                let pre = match head {
                    Some((j, f)) if j > 0 => {
                        let lowered = (j - 1, f);
                        if lead.len() > 1 && lead[1] > lowered {
                            None
                        } else {
                            let mut h = lead.clone();
                            h[0] = lowered;
                            Some(h)
                        }
                    }
                    _ => None,
                };
                let Some(h) = pre else {
                    let residual = QDiffPoly::from_terms(
                        self.n_fields,
                        self.trunc,
                        block.iter().map(|(d, c)| {
                            (TermKey::new(eps, hbar, from_desc(d), params.clone()), c.clone())
                        }),
                    );
                    return Err(Error::NotExact { residual: residual.to_string() });
                };
                let mult = h.iter().filter(|&&x| x == h[0]).count() as i64;
                let hc = c.scale(&(Rational::one() / rat_int(mult)));
                for (m, w) in dx_desc(&h) {
                    let delta = hc.scale(&rat_int(i64::from(w)));
                    let slot = block.entry(m.clone()).or_default();
                    *slot -= &delta;
                    if slot.is_zero() {
                        block.remove(&m);
                    }
                }
                debug_assert!(!block.contains_key(&lead));
                out.add_term(TermKey::new(eps, hbar, from_desc(&h), params.clone()), hc);
            }
        }
        Ok(out)
    }

    /// Replaces every `u^α_s` by `∂ₓ^s(rules[α])`; fields without a rule are kept.
    pub fn substitute(&self, rules: &BTreeMap<u8, QDiffPoly>) -> Result<QDiffPoly> {
        let mut trunc = self.trunc;
        for img in rules.values() {
            self.same_ring(img)?;
            trunc = trunc.meet(&img.trunc);
            if self.trunc.has_finite_u() && img.terms.keys().any(|k| k.mono.is_one()) {
                return Err(Error::TruncationOverflow(
                    self.trunc.udeg.or(self.trunc.weighted).unwrap_or(0),
                ));
            }
        }
        let mut images: HashMap<Var, QDiffPoly> = HashMap::new();
        let mut powers: HashMap<(Var, u32), QDiffPoly> = HashMap::new();
        let mut out = QDiffPoly::zero(self.n_fields, trunc);
        for (k, c) in &self.terms {
            let mut acc = QDiffPoly::monomial(
                self.n_fields,
                trunc,
                c.clone(),
                k.eps,
                k.hbar,
                k.params.clone(),
                JetMonomial::one(),
            );
            for &(v, p) in k.mono.factors() {
                let Some(rule) = rules.get(&v.field) else {
                    acc = acc.mul_truncated(
                        &QDiffPoly::monomial(
                            self.n_fields,
                            trunc,
                            GaussianRational::one(),
                            0,
                            0,
                            ParamMono::one(),
                            JetMonomial::pow(v, p),
                        ),
                        trunc,
                    );
                    continue;
                };
                let img = images
                    .entry(v)
                    .or_insert_with(|| rule.d_x_pow(u32::from(v.jet)).with_trunc(trunc))
                    .clone();
                let pw = powers
                    .entry((v, p))
                    .or_insert_with(|| {
                        let mut r = img.clone();
                        for _ in 1..p {
                            r = r.mul_truncated(&img, trunc);
                        }
                        r
                    })
                    .clone();
                acc = acc.mul_truncated(&pw, trunc);
                if acc.is_zero() {
                    break;
                }
            }
            for (kk, cc) in acc.terms {
                out.add_term(kk, cc);
            }
        }
        Ok(out)
    }
}

macro_rules! poly_op {
    ($tr:ident, $m:ident, $checked:ident) => {
        impl std::ops::$tr for &QDiffPoly {
            type Output = QDiffPoly;
            /// Panics when the operands live over different field counts.
            fn $m(self, o: &QDiffPoly) -> QDiffPoly {
                self.$checked(o).expect("incompatible polynomial rings")
            }
        }
        impl std::ops::$tr for QDiffPoly {
            type Output = QDiffPoly;
            fn $m(self, o: QDiffPoly) -> QDiffPoly {
                (&self).$m(&o)
            }
        }
    };
}
poly_op!(Add, add, checked_add);
poly_op!(Sub, sub, checked_sub);
poly_op!(Mul, mul, checked_mul);

impl std::ops::Neg for &QDiffPoly {
    type Output = QDiffPoly;
    fn neg(self) -> QDiffPoly {
        self.scale(&GaussianRational::from_int(-1))
    }
}

impl fmt::Display for QDiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::text::format_poly(self))
    }
}

/// A density regarded modulo constants and total x-derivatives.
#[derive(Clone, Debug)]
pub struct LocalFunctional {
    pub density: QDiffPoly,
}

impl LocalFunctional {
    pub fn new(density: QDiffPoly) -> Self {
        Self { density }
    }

    /// All variational derivatives.
    pub fn gradient(&self) -> Vec<QDiffPoly> {
        (1..=self.density.n_fields())
            .map(|a| self.density.variational_derivative(a))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.gradient().iter().all(QDiffPoly::is_zero)
    }

    /// Equality as local functionals: all variational derivatives of the difference vanish.
    pub fn functional_equal(&self, o: &LocalFunctional) -> Result<bool> {
        Ok(LocalFunctional::new(self.density.checked_sub(&o.density)?).is_zero())
    }

    pub fn truncate(&self, t: TruncationSpec) -> LocalFunctional {
        LocalFunctional::new(self.density.truncate(t))
    }
}

/// Free-function spelling of [`LocalFunctional::functional_equal`].
pub fn functional_equal(a: &LocalFunctional, b: &LocalFunctional) -> Result<bool> {
    a.functional_equal(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalars::rat;

    fn t() -> TruncationSpec {
        TruncationSpec::new(8, 4)
    }
    fn u(j: u16) -> QDiffPoly {
        QDiffPoly::var(1, t(), 1, j)
    }
    fn c(n: i64, d: i64) -> GaussianRational {
        GaussianRational::ratio(n, d)
    }
    fn eps(k: u32) -> QDiffPoly {
        QDiffPoly::monomial(1, t(), c(1, 1), k, 0, ParamMono::one(), JetMonomial::one())
    }
    fn ihbar() -> QDiffPoly {
        QDiffPoly::monomial(1, t(), GaussianRational::i(), 0, 1, ParamMono::one(), JetMonomial::one())
    }

    #[test]
    fn add_and_cancel() {
        assert_eq!(&u(0) + &u(0), u(0).scale(&c(2, 1)));
        let a = &(&u(0) * &u(0)).scale(&c(1, 2)) + &(&eps(2) * &u(2)).scale(&c(1, 24));
        let b = (&eps(2) * &u(2)).scale(&c(-1, 24));
        assert_eq!(&a + &b, (&u(0) * &u(0)).scale(&c(1, 2)));
        assert_eq!(&a + &QDiffPoly::zero(1, t()), a);
    }

    #[test]
    fn mul_truncates() {
        let e1 = TruncationSpec::new(1, 4);
        let eu = QDiffPoly::monomial(1, e1, c(1, 1), 1, 0, ParamMono::one(), JetMonomial::var(Var::new(1, 0)));
        assert!((&eu * &eu).is_zero());
        let eu1 = &eps(1) * &u(1);
        assert_eq!(&eu1 * &eu1, &eps(2) * &(&u(1) * &u(1)));
    }

    #[test]
    fn total_derivative() {
        let half_u2 = (&u(0) * &u(0)).scale(&c(1, 2));
        assert_eq!(half_u2.d_x(), &u(0) * &u(1));
        assert_eq!((&u(0) * &u(2)).d_x(), &(&u(1) * &u(2)) + &(&u(0) * &u(3)));
        assert!(QDiffPoly::constant(1, t(), c(1, 1)).d_x().is_zero());
    }

    #[test]
    fn partials() {
        let cube = (&(&u(0) * &u(0)) * &u(0)).scale(&c(1, 6));
        assert_eq!(cube.partial(1, 0), (&u(0) * &u(0)).scale(&c(1, 2)));
        assert_eq!((&u(0) * &u(2)).partial(1, 2), u(0));
    }

    #[test]
    fn variational_examples() {
        let f = &(&(&u(0) * &u(0)) * &u(0)).scale(&c(1, 6))
            + &(&eps(2) * &(&u(0) * &u(2))).scale(&c(1, 24));
        let expected = &(&u(0) * &u(0)).scale(&c(1, 2)) + &(&eps(2) * &u(2)).scale(&c(1, 12));
        assert_eq!(f.variational_derivative(1).with_trunc(t()), expected);
        assert_eq!(
            (&u(0) * &u(0)).scale(&c(1, 2)).variational_derivative(1).with_trunc(t()),
            u(0)
        );
    }

    #[test]
    fn dilaton_examples() {
        let cube = (&(&u(0) * &u(0)) * &u(0)).scale(&c(1, 6));
        assert_eq!(cube.dilaton(), cube.scale(&c(3, 1)));
        assert_eq!(ihbar().dilaton(), ihbar().scale(&c(2, 1)));
        let t4 = &eps(2) * &(&u(0) * &u(2));
        assert_eq!(t4.dilaton(), t4.scale(&c(4, 1)));
    }

    #[test]
    fn invert_dilaton() {
        let cube = (&(&u(0) * &u(0)) * &u(0)).scale(&c(1, 6));
        assert_eq!(cube.invert_d_minus_1().unwrap(), cube.scale(&c(1, 2)));
        assert_eq!(ihbar().invert_d_minus_1().unwrap(), ihbar());
        assert!(matches!(
            u(0).invert_d_minus_1(),
            Err(Error::WeightOneObstruction { .. })
        ));
    }

    #[test]
    fn antiderivative_examples() {
        assert_eq!(
            (&u(0) * &u(1)).antiderivative().unwrap(),
            (&u(0) * &u(0)).scale(&c(1, 2))
        );
        let f = &(&u(1) * &u(2)) + &(&u(0) * &u(3));
        assert_eq!(f.antiderivative().unwrap(), &u(0) * &u(2));
        assert!(matches!(
            (&u(0) * &u(0)).antiderivative(),
            Err(Error::NotExact { .. })
        ));
        assert!(matches!(
            QDiffPoly::constant(1, t(), c(1, 1)).antiderivative(),
            Err(Error::NotExact { .. })
        ));
    }

    #[test]
    fn antiderivative_two_fields() {
        let v = |f: u8, j: u16| QDiffPoly::var(2, t(), f, j);
        let h = &(&(&v(1, 0) * &v(2, 2)) * &v(2, 0)) + &(&v(1, 1) * &v(2, 1)).scale(&c(3, 7));
        assert_eq!(h.d_x().antiderivative().unwrap(), h);
    }

    #[test]
    fn functional_equality() {
        let lf = LocalFunctional::new;
        let uu2 = &u(0) * &u(2);
        let mu1sq = -&(&u(1) * &u(1));
        assert!(lf(uu2).functional_equal(&lf(mu1sq)).unwrap());
        let sq = &u(0) * &u(0);
        let sq7 = &sq + &QDiffPoly::constant(1, t(), c(7, 1));
        assert!(lf(sq.clone()).functional_equal(&lf(sq7)).unwrap());
        assert!(!lf(sq.clone()).functional_equal(&lf(&sq * &u(0))).unwrap());
    }

    #[test]
    fn substitution_examples() {
        let v = |j| QDiffPoly::var(1, t(), 1, j);
        let rule = &v(0) + &(&eps(1) * &v(1));
        let rules = BTreeMap::from([(1u8, rule)]);
        let got = (&u(0) * &u(0)).substitute(&rules).unwrap();
        let want = &(&(&v(0) * &v(0)) + &(&eps(1) * &(&v(0) * &v(1))).scale(&c(2, 1)))
            + &(&eps(2) * &(&v(1) * &v(1)));
        assert_eq!(got, want);

        let rules = BTreeMap::from([(1u8, &v(0) * &v(0))]);
        assert_eq!(u(1).substitute(&rules).unwrap(), (&v(0) * &v(1)).scale(&c(2, 1)));

        let ident = BTreeMap::from([(1u8, v(0))]);
        let f = &(&u(0) * &u(3)) + &eps(2);
        assert_eq!(f.substitute(&ident).unwrap(), f);
    }

    #[test]
    fn substitution_shift_overflows_finite_u() {
        let tu = TruncationSpec::new(2, 2).with_udeg(3);
        let f = QDiffPoly::var(1, tu, 1, 0);
        let shift = &QDiffPoly::var(1, tu, 1, 0) + &QDiffPoly::constant(1, tu, c(1, 1));
        let rules = BTreeMap::from([(1u8, shift)]);
        assert!(matches!(f.substitute(&rules), Err(Error::TruncationOverflow(_))));
    }

    #[test]
    fn hbar_division() {
        let hu1 = QDiffPoly::monomial(1, t(), c(1, 1), 0, 1, ParamMono::one(), JetMonomial::var(Var::new(1, 1)));
        assert_eq!(hu1.divide_by_hbar().unwrap().with_trunc(t()), u(1));
        let h2 = QDiffPoly::monomial(1, t(), c(1, 1), 0, 2, ParamMono::one(), JetMonomial::var(Var::new(1, 0)));
        assert_eq!(h2.divide_by_hbar().unwrap().hbar_part(1).len(), 1);
        assert!(matches!(u(0).divide_by_hbar(), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn degree_and_weight() {
        let k = TermKey::new(2, 1, JetMonomial::from_factors([(Var::new(1, 0), 1), (Var::new(1, 2), 1)]), ParamMono::one());
        assert_eq!(k.degree(), 2 - 2 - 2);
        assert_eq!(k.dilaton_weight(), 2 + 2 + 2);
    }

    #[test]
    fn weighted_truncation_admits() {
        let tr = TruncationSpec::new(4, 2).with_weighted(3);
        let k = |h, d| TermKey::new(0, h, JetMonomial::pow(Var::new(1, 0), d), ParamMono::one());
        assert!(tr.admits(&k(0, 3)));
        assert!(!tr.admits(&k(1, 3)));
        assert!(tr.admits(&k(2, 1)));
        let _ = rat(1, 1);
    }
}
