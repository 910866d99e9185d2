//! Built-in seeds `Ḡ_{1,1}` (quantum KdV, ILW, extended Toda), the closed
//! generating series of dispersionless quantum KdV, and the Toda Miura map.

use std::collections::BTreeMap;

use num_traits::{One, Pow, Zero};

use crate::bracket::Metric;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchySetup;
use crate::jets::{JetMonomial, QDiffPoly, TruncationSpec, Var};
use crate::powersums::{bernoulli, bernoulli_abs, invert_series, s_inverse_series, s_series};
use crate::scalars::{rat, rat_int, GaussianRational, Param, ParamMono, ParamSet, Rational};

/// A named built-in theory.
pub struct SeedSpec {
    pub name: &'static str,
    pub params: &'static [&'static str],
    pub build: fn(TruncationSpec) -> Result<HierarchySetup>,
}

pub const SEEDS: [SeedSpec; 3] = [
    SeedSpec { name: "kdv", params: &[], build: seed_kdv },
    SeedSpec { name: "ilw", params: &["mu"], build: seed_ilw },
    SeedSpec { name: "toda", params: &["q"], build: seed_toda },
];

pub fn seed_by_name(name: &str) -> Option<&'static SeedSpec> {
    SEEDS.iter().find(|s| s.name == name)
}

fn term(n: u8, t: TruncationSpec, c: GaussianRational, eps: u32, hbar: u32, params: ParamMono, f: &[(u8, u16)]) -> QDiffPoly {
    let mono = JetMonomial::from_factors(f.iter().map(|&(a, j)| (Var::new(a, j), 1)));
    QDiffPoly::monomial(n, t, c, eps, hbar, params, mono)
}

fn real(r: Rational) -> GaussianRational {
    GaussianRational::real(r)
}

fn imag(r: Rational) -> GaussianRational {
    GaussianRational::imag(r)
}

/// `u³/6 + ε²/24·u·u₂ − iħ/24·u`.
pub fn kdv_seed_density(t: TruncationSpec) -> QDiffPoly {
    let one = ParamMono::one;
    let mut p = term(1, t, real(rat(1, 6)), 0, 0, one(), &[(1, 0), (1, 0), (1, 0)]);
    p = &p + &term(1, t, real(rat(1, 24)), 2, 0, one(), &[(1, 0), (1, 2)]);
    &p + &term(1, t, imag(rat(-1, 24)), 0, 1, one(), &[(1, 0)])
}

pub fn seed_kdv(t: TruncationSpec) -> Result<HierarchySetup> {
    Ok(HierarchySetup::new("kdv", Metric::scalar(), kdv_seed_density(t), t, 1)?
        .with_alias("u", 1)
        .with_i_pattern(true))
}

/// `u³/6 + Σ_g ε^{2g}μ^{g−1} b_g·u·u_{2g} − iħ/24·u − iħ Σ_g ε^{2g−2}μ^g b_g·u·u_{2g}`
/// with `b_g = |B_{2g}|/(2·(2g)!)`.
pub fn ilw_seed_density(t: TruncationSpec) -> QDiffPoly {
    let mu = Param::intern("mu");
    let b = |g: u32| bernoulli_abs(g) / (rat_int(2) * factorial(2 * g));
    let mut p = term(1, t, real(rat(1, 6)), 0, 0, ParamMono::one(), &[(1, 0), (1, 0), (1, 0)]);
    p = &p + &term(1, t, imag(rat(-1, 24)), 0, 1, ParamMono::one(), &[(1, 0)]);
    for g in 1..=t.eps / 2 {
        let pm = ParamMono::single(mu, g - 1);
        p = &p + &term(1, t, real(b(g)), 2 * g, 0, pm, &[(1, 0), (1, 2 * g as u16)]);
    }
    if t.hbar >= 1 {
        for g in 1..=t.eps / 2 + 1 {
            let pm = ParamMono::single(mu, g);
            p = &p + &term(1, t, imag(-b(g)), 2 * g - 2, 1, pm, &[(1, 0), (1, 2 * g as u16)]);
        }
    }
    p
}

pub fn seed_ilw(t: TruncationSpec) -> Result<HierarchySetup> {
    Ok(HierarchySetup::new("ilw", Metric::scalar(), ilw_seed_density(t), t, 1)?
        .with_params(ParamSet::with(&["mu"]))
        .with_alias("u", 1)
        .with_i_pattern(true))
}

fn factorial(n: u32) -> Rational {
    (1..=n).fold(Rational::one(), |acc, k| acc * rat_int(i64::from(k)))
}

/// The exactness bound `udeg + ħ` of the densities built from a Toda seed at `t`.
fn toda_weight(t: &TruncationSpec) -> Result<u32> {
    match (t.udeg, t.weighted) {
        (None, None) => Err(Error::UnboundedUDegree),
        (Some(u), w) => Ok(w.map_or(u + t.hbar, |w| w.min(u + t.hbar))),
        (None, Some(w)) => Ok(w),
    }
}

/// The Toda seed density. Fields: 1 is `u¹`, 2 is `u^ω`. `t` must bound the u-degree.
pub fn toda_seed_density(t: TruncationSpec) -> Result<QDiffPoly> {
    if !t.has_finite_u() {
        return Err(Error::UnboundedUDegree);
    }
    let q = ParamMono::single(Param::intern("q"), 1);
    let one = ParamMono::one;
    let e = t.eps;
    let mut p = term(2, t, real(rat(1, 2)), 0, 0, one(), &[(1, 0), (1, 0), (2, 0)]);
    for g in 1..=e / 2 {
        let c = bernoulli(2 * g) / factorial(2 * g);
        p = &p + &term(2, t, real(c), 2 * g, 0, one(), &[(1, 0), (1, 2 * g as u16)]);
    }

    // q·((e^{ε∂/2} + e^{−ε∂/2})/2 u^ω − 2)·e^{S(ε∂)u^ω} + q·u^ω
    let s = s_series(e as usize / 2);
    let mut x = QDiffPoly::zero(2, t);
    let mut cosh = QDiffPoly::constant(2, t, real(rat_int(-2)));
    for k in 0..=e / 2 {
        let jet = 2 * k as u16;
        x = &x + &term(2, t, real(s[k as usize].clone()), 2 * k, 0, one(), &[(2, jet)]);
        let c = Rational::one() / (rat_int(4).pow(k as i32) * factorial(2 * k));
        cosh = &cosh + &term(2, t, real(c), 2 * k, 0, one(), &[(2, jet)]);
    }
    let max_u = t.udeg.into_iter().chain(t.weighted).min().expect("finite u-degree");
    let mut exp = QDiffPoly::constant(2, t, GaussianRational::one());
    let mut power = exp.clone();
    for n in 1..=max_u {
        power = (&power * &x).scale(&real(Rational::one() / rat_int(i64::from(n))));
        exp = &exp + &power;
    }
    let qpart = &(&cosh * &exp) + &term(2, t, GaussianRational::one(), 0, 0, one(), &[(2, 0)]);
    p = &p + &qpart.shift(0, 0, &q);

    // −iħ/12·u¹ + iħ Σ_g ε^{2g−2} B_{2g}/(2g)!·u^ω_{2g}·u¹
    p = &p + &term(2, t, imag(rat(-1, 12)), 0, 1, one(), &[(1, 0)]);
    if t.hbar >= 1 {
        for g in 1..=e / 2 + 1 {
            let c = bernoulli(2 * g) / factorial(2 * g);
            p = &p + &term(2, t, imag(c), 2 * g - 2, 1, one(), &[(1, 0), (2, 2 * g as u16)]);
        }
    }
    Ok(p)
}

/// Toda setup. The densities are exact up to `udeg + ħ ≤ U + H`; the seed
/// is built one step wider because each recursion step loses one unit of
/// that grading.
pub fn seed_toda(t: TruncationSpec) -> Result<HierarchySetup> {
    let w = toda_weight(&t)?;
    let work = TruncationSpec { udeg: None, weighted: Some(w), ..t };
    let seed = toda_seed_density(TruncationSpec { weighted: Some(w + 1), ..work })?;
    Ok(HierarchySetup::new("toda", Metric::antidiagonal(), seed, work, 1)?
        .with_params(ParamSet::with(&["q"]))
        .with_alias("omega", 2))
}

/// An element `plain + √i·root` of `R[√i]` over a coefficient ring `R ∋ i`.
#[derive(Clone, Debug)]
struct RootExt {
    plain: QDiffPoly,
    root: QDiffPoly,
}

impl RootExt {
    fn scalar(c: GaussianRational, t: TruncationSpec, root_power: u32) -> Self {
        // (√i)^m = i^{⌊m/2⌋}·(√i)^{m mod 2}
        let c = &c * &GaussianRational::i_pow(i64::from(root_power / 2));
        let zero = QDiffPoly::zero(1, t);
        let val = QDiffPoly::constant(1, t, c);
        if root_power.is_multiple_of(2) {
            Self { plain: val, root: zero }
        } else {
            Self { plain: zero, root: val }
        }
    }

    fn mul(&self, o: &RootExt) -> RootExt {
        let bd = (&self.root * &o.root).scale(&GaussianRational::i());
        RootExt {
            plain: &(&self.plain * &o.plain) + &bd,
            root: &(&self.plain * &o.root) + &(&self.root * &o.plain),
        }
    }

    fn add_into(&self, acc: &mut RootExt) {
        self.plain.add_scaled_into(&mut acc.plain, &GaussianRational::one());
        self.root.add_scaled_into(&mut acc.root, &GaussianRational::one());
    }

    fn scale(&self, c: &GaussianRational) -> RootExt {
        RootExt { plain: self.plain.scale(c), root: self.root.scale(c) }
    }
}

/// Series in `y` and `λ`, keyed by `(y-power, λ-power)`.
type YLambda = BTreeMap<(u32, u32), RootExt>;

fn ylambda_mul(a: &YLambda, b: &YLambda, ymax: u32, lmax: u32) -> YLambda {
    let mut out = YLambda::new();
    for (&(ya, la), va) in a {
        for (&(yb, lb), vb) in b {
            if ya + yb > ymax || la + lb > lmax {
                continue;
            }
            let prod = va.mul(vb);
            match out.entry((ya + yb, la + lb)) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(prod);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => prod.add_into(e.get_mut()),
            }
        }
    }
    out
}

/// Coefficients of `S(z)` at every power `z^0..=z^{2·order+1}`, odd ones zero.
fn s_full(order: usize) -> Vec<Rational> {
    s_series(order)
        .into_iter()
        .flat_map(|c| [c, Rational::zero()])
        .collect()
}

/// `G_d|_{ε=0}` for `d = −1..=d_max` read off
/// `y^{−2}(e^{y·S(λy∂ₓ/√i)u}/S(√i·λy) − 1)` with `λ² = ħ`, through `ħ^H`.
pub fn dispersionless_kdv_oracle(d_max: i32, h: u32) -> Result<BTreeMap<i32, QDiffPoly>> {
    let ymax = (d_max + 2).max(0) as u32;
    let lmax = 2 * h + 1;
    let inner = TruncationSpec::new(0, 0);
    let order = (lmax / 2 + 1) as usize;

    // 1/S(√i λy): z^m = (√i)^m λ^m y^m
    let inv_s = invert_series(&s_full(order));
    let mut a = YLambda::new();
    for (m, c) in inv_s.iter().enumerate() {
        let m = m as u32;
        if m > ymax || m > lmax || c.is_zero() {
            continue;
        }
        a.insert((m, m), RootExt::scalar(real(c.clone()), inner, m));
    }

    // y·S(λy∂/√i)u: (λy∂/√i)^m u = λ^m y^m (−i)^m (√i)^m u_m
    let mut tser = YLambda::new();
    for (m, c) in s_full(order).iter().enumerate() {
        let m = m as u32;
        if m + 1 > ymax || m > lmax || c.is_zero() {
            continue;
        }
        let coeff = &real(c.clone()) * &GaussianRational::i_pow(-i64::from(m));
        let r = RootExt::scalar(coeff, inner, m);
        let u_m = QDiffPoly::var(1, inner, 1, m as u16);
        let val = RootExt { plain: &r.plain * &u_m, root: &r.root * &u_m };
        tser.insert((m + 1, m), val);
    }

    let mut exp = YLambda::new();
    exp.insert((0, 0), RootExt::scalar(GaussianRational::one(), inner, 0));
    let mut power = exp.clone();
    for k in 1..=ymax {
        power = ylambda_mul(&power, &tser, ymax, lmax);
        let inv_k = real(Rational::one() / rat_int(i64::from(k)));
        power = power.into_iter().map(|(key, v)| (key, v.scale(&inv_k))).collect();
        for (key, v) in &power {
            match exp.get_mut(key) {
                Some(slot) => v.add_into(slot),
                None => {
                    exp.insert(*key, v.clone());
                }
            }
        }
    }
    let total = ylambda_mul(&a, &exp, ymax, lmax);

    let out_t = TruncationSpec::new(0, h);
    let mut out: BTreeMap<i32, QDiffPoly> = (-1..=d_max).map(|d| (d, QDiffPoly::zero(1, out_t))).collect();
    for (&(y, l), v) in &total {
        let d = y as i32 - 2;
        if d < -1 || d > d_max {
            continue;
        }
        if !v.root.is_zero() || (l % 2 == 1 && !v.plain.is_zero()) {
            let shown = if v.root.is_zero() { &v.plain } else { &v.root };
            return Err(Error::OddLambdaResidue(format!("y^{y} lambda^{l}: {shown}")));
        }
        if l / 2 > h {
            continue;
        }
        let slot = out.get_mut(&d).expect("d in range");
        v.plain.with_trunc(TruncationSpec::new(0, h)).shift(0, l / 2, &ParamMono::one()).add_scaled_into(slot, &GaussianRational::one());
    }
    Ok(out)
}

fn exp_shift_rule(t: TruncationSpec, field: u8, half: Rational) -> QDiffPoly {
    // e^{c·ε∂ₓ} u = Σ_k c^k ε^k/k! u_k
    let mut p = QDiffPoly::zero(2, t);
    let mut c = Rational::one();
    for k in 0..=t.eps {
        if k > 0 {
            c = c * &half / rat_int(i64::from(k));
        }
        p = &p + &term(2, t, real(c.clone()), k, 0, ParamMono::one(), &[(field, k as u16)]);
    }
    p
}

fn even_series_rule(t: TruncationSpec, field: u8, coeffs: &[Rational]) -> QDiffPoly {
    let mut p = QDiffPoly::zero(2, t);
    for (k, c) in coeffs.iter().enumerate().take(t.eps as usize / 2 + 1) {
        let k = k as u32;
        p = &p + &term(2, t, real(c.clone()), 2 * k, 0, ParamMono::one(), &[(field, 2 * k as u16)]);
    }
    p
}

/// Rewrites `f(u¹, u^ω)` in `v¹ = e^{ε∂ₓ/2}u¹`, `v² = S(ε∂ₓ)u^ω`, through `ε^E`.
pub fn toda_miura_substitute(f: &QDiffPoly, trunc: TruncationSpec) -> Result<QDiffPoly> {
    let t = f.trunc().meet(&trunc);
    let rules = BTreeMap::from([
        (1, exp_shift_rule(t, 1, rat(-1, 2))),
        (2, even_series_rule(t, 2, &s_inverse_series(t.eps as usize / 2))),
    ]);
    Ok(f.truncate(t).substitute(&rules)?.truncate(t))
}

/// The inverse of [`toda_miura_substitute`]: rewrites `g(v¹, v²)` in `u¹, u^ω`.
pub fn toda_miura_inverse(g: &QDiffPoly, trunc: TruncationSpec) -> Result<QDiffPoly> {
    let t = g.trunc().meet(&trunc);
    let rules = BTreeMap::from([
        (1, exp_shift_rule(t, 1, rat(1, 2))),
        (2, even_series_rule(t, 2, &s_series(t.eps as usize / 2))),
    ]);
    Ok(g.truncate(t).substitute(&rules)?.truncate(t))
}
