//! The normal-ordering quantum commutator `[f, ḡ]` of a density with a
//! local functional, and its classical limit.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jets::{JetMonomial, LocalFunctional, QDiffPoly, TermKey, TruncationSpec, Var};
use crate::powersums::c_coeffs;
use crate::scalars::{rat_int, GaussianRational, Rational};

/// A symmetric nondegenerate pairing `η^{αβ}` (upper indices) and its inverse `η_{αβ}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Metric {
    upper: Vec<Vec<Rational>>,
    lower: Vec<Vec<Rational>>,
}

impl Metric {
    pub fn new(upper: Vec<Vec<Rational>>) -> Result<Self> {
        let n = upper.len();
        if n == 0 || upper.iter().any(|r| r.len() != n) {
            return Err(Error::Schema("metric must be a non-empty square matrix".into()));
        }
        if (0..n).any(|a| (0..a).any(|b| upper[a][b] != upper[b][a])) {
            return Err(Error::Schema("metric must be symmetric".into()));
        }
        let lower = invert(&upper).ok_or_else(|| Error::Schema("metric is degenerate".into()))?;
        Ok(Self { upper, lower })
    }

    /// `η = (1)`.
    pub fn scalar() -> Self {
        Self::new(vec![vec![Rational::one()]]).expect("identity metric")
    }

    /// The antidiagonal pairing `η^{12} = η^{21} = 1`.
    pub fn antidiagonal() -> Self {
        let (z, o) = (Rational::zero(), Rational::one());
        Self::new(vec![vec![z.clone(), o.clone()], vec![o, z]]).expect("antidiagonal metric")
    }

    pub fn dim(&self) -> u8 {
        self.upper.len() as u8
    }

    /// `η^{αβ}` with 1-based indices.
    pub fn upper(&self, a: u8, b: u8) -> &Rational {
        &self.upper[usize::from(a) - 1][usize::from(b) - 1]
    }

    /// `η_{αβ}` with 1-based indices.
    pub fn lower(&self, a: u8, b: u8) -> &Rational {
        &self.lower[usize::from(a) - 1][usize::from(b) - 1]
    }
}

fn invert(m: &[Vec<Rational>]) -> Option<Vec<Vec<Rational>>> {
    let n = m.len();
    let mut a: Vec<Vec<Rational>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Rational::one() } else { Rational::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        let p = a[col][col].clone();
        for x in a[col].iter_mut() {
            *x /= &p;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                let pivot_row = a[col].clone();
                for (x, y) in a[r].iter_mut().zip(pivot_row) {
                    *x -= &f * y;
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Every `∂ⁿp/∂u^{x₁}…∂u^{xₙ}` that is nonzero, keyed by the sorted variable list.
fn multi_partials(p: &QDiffPoly, n: usize, trunc: TruncationSpec) -> BTreeMap<Vec<Var>, QDiffPoly> {
    let mut out: BTreeMap<Vec<Var>, QDiffPoly> = BTreeMap::new();
    for (k, c) in p.terms() {
        let factors = k.mono.factors();
        let mut counts = vec![0u32; factors.len()];
        // Enumerate sub-multisets of size n by filling counts left to right.
        fn rec(
            i: usize,
            left: u32,
            factors: &[(Var, u32)],
            counts: &mut Vec<u32>,
            emit: &mut dyn FnMut(&[u32]),
        ) {
            if left == 0 {
                emit(counts);
                return;
            }
            if i == factors.len() {
                return;
            }
            let cap = factors[i].1.min(left);
            for take in (0..=cap).rev() {
                counts[i] = take;
                rec(i + 1, left - take, factors, counts, emit);
            }
            counts[i] = 0;
        }
        let mut emit = |counts: &[u32]| {
            let mut key = Vec::with_capacity(n);
            let mut mono = k.mono.clone();
            let mut mult = Rational::one();
            for (&(v, p), &t) in factors.iter().zip(counts) {
                if t == 0 {
                    continue;
                }
                for q in 0..t {
                    mult *= rat_int(i64::from(p - q));
                    key.push(v);
                }
                mono = mono.div_var(v, t).expect("sub-multiset");
            }
            out.entry(key)
                .or_insert_with(|| QDiffPoly::zero(p.n_fields(), trunc))
                .add_term(TermKey { mono, ..k.clone() }, c.scale(&mult));
        };
        rec(0, n as u32, factors, &mut counts, &mut emit);
    }
    out.retain(|_, v| !v.is_zero());
    out
}

/// Calls `f` once for each distinct ordering of the sorted slice `items`.
fn for_each_distinct_permutation<T: Ord + Clone>(items: &[T], mut f: impl FnMut(&[T])) {
    let mut v = items.to_vec();
    v.sort();
    loop {
        f(&v);
        // next lexicographic permutation
        let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
            return;
        };
        let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("successor");
        v.swap(i - 1, j);
        v[i..].reverse();
    }
}

fn multiplicity_factorial(key: &[Var]) -> Rational {
    let mut out = Rational::one();
    let mut i = 0;
    while i < key.len() {
        let mut m = 1;
        while i + m < key.len() && key[i + m] == key[i] {
            m += 1;
            out *= rat_int(m as i64);
        }
        i += m;
    }
    out
}

/// Output truncation of `[f, ḡ]` that is exact given the inputs' truncations.
///
/// Each ħⁿ term of the commutator needs only the ħ-orders below it, so the
/// ħ-bound grows by one. A term of `f` or `g` beyond a u-degree bound can still
/// feed lower u-degrees of the result through the n-fold contractions; the
/// bounds below are the ones all such contributions provably exceed.
pub fn commutator_trunc(f: &TruncationSpec, g: &TruncationSpec) -> TruncationSpec {
    let hbar = f.hbar.min(g.hbar) + 1;
    let n = i64::from(hbar);
    let udeg = match (f.udeg, g.udeg) {
        (None, None) => None,
        (a, b) => {
            let fa = a.map_or(i64::MAX, |x| i64::from(x) + 1 - n);
            let gb = b.map_or(i64::MAX, |x| i64::from(x) - n);
            Some(fa.min(gb).max(0) as u32)
        }
    };
    let weighted = match (f.weighted, g.weighted) {
        (None, None) => None,
        (a, b) => Some(a.map_or(u32::MAX, |x| x + 1).min(b.unwrap_or(u32::MAX))),
    };
    TruncationSpec { eps: f.eps.min(g.eps), hbar, udeg, weighted }
}

/// `[f, ḡ]` with the exact output truncation of [`commutator_trunc`].
pub fn commutator_density_functional(f: &QDiffPoly, g: &LocalFunctional, eta: &Metric) -> Result<QDiffPoly> {
    let trunc = commutator_trunc(&f.trunc(), &g.density.trunc());
    commutator_truncated(f, &g.density, eta, trunc)
}

/// The commutator
///
/// `[f, ḡ] = Σ_{n≥1} (−i)^{n−1} ħⁿ/n! · ∂ⁿf/∂u^{α₁}_{s₁}…∂u^{αₙ}_{sₙ} · (−1)^{Σr}
///  ∏η^{α_k β_k} · Σ_j C_j^{s₁+r₁+1,…,sₙ+rₙ+1} ∂ₓ^j ∂ⁿg/∂u^{β₁}_{r₁}…∂u^{βₙ}_{rₙ}`,
///
/// evaluated up to `trunc`. The sum over ordered index tuples is folded into
/// a sum over multisets: for a fixed multiset `A` of f-variables and `B` of
/// g-variables the weight is `1/∏ mult(A)!` times a sum over the distinct
/// orderings of `B`.
pub fn commutator_truncated(f: &QDiffPoly, g: &QDiffPoly, eta: &Metric, trunc: TruncationSpec) -> Result<QDiffPoly> {
    if f.n_fields() != g.n_fields() {
        return Err(Error::FieldMismatch(f.n_fields(), g.n_fields()));
    }
    if eta.dim() != f.n_fields() {
        return Err(Error::FieldMismatch(eta.dim(), f.n_fields()));
    }
    let nf = f.n_fields();
    let mut total = QDiffPoly::zero(nf, trunc);
    let min_of = |p: &QDiffPoly, sel: fn(&TermKey) -> u32| p.terms().map(|(k, _)| sel(k)).min().unwrap_or(0);

    for n in 1..=trunc.hbar as usize {
        let wide = TruncationSpec::new(u32::MAX / 4, u32::MAX / 4);
        let fa = multi_partials(f, n, wide);
        let mut gb = multi_partials(g, n, wide);
        for v in gb.values_mut() {
            *v = v.without_u_free_part();
        }
        gb.retain(|_, v| !v.is_zero());
        if fa.is_empty() || gb.is_empty() {
            continue;
        }
        let minus_i = GaussianRational::imag(-Rational::one());
        let prefactor = (1..n).fold(GaussianRational::one(), |acc, _| &acc * &minus_i);

        // Derivatives ∂ₓ^j ∂_B g, computed on demand.
        let gb: Vec<(Vec<Var>, QDiffPoly, u32, u32)> = gb
            .into_iter()
            .map(|(k, v)| {
                let e = min_of(&v, |k| k.eps);
                let h = min_of(&v, |k| k.hbar);
                (k, v, e, h)
            })
            .collect();

        let pieces: Vec<Result<QDiffPoly>> = fa
            .par_iter()
            .map(|(akey, fpart)| {
                let fe = min_of(fpart, |k| k.eps);
                let fh = min_of(fpart, |k| k.hbar);
                let inv_mult = Rational::one() / multiplicity_factorial(akey);
                let mut acc = QDiffPoly::zero(nf, trunc);
                for (bkey, gpart, ge, gh) in &gb {
                    if fe + ge > trunc.eps || fh + gh + n as u32 > trunc.hbar {
                        continue;
                    }
                    let sign_r: u32 = bkey.iter().map(|v| u32::from(v.jet)).sum();
                    let mut weights: BTreeMap<u32, Rational> = BTreeMap::new();
                    for_each_distinct_permutation(bkey, |perm| {
                        let mut etaprod = Rational::one();
                        let mut args = Vec::with_capacity(n);
                        for (x, y) in akey.iter().zip(perm) {
                            let e = eta.upper(x.field, y.field);
                            if e.is_zero() {
                                return;
                            }
                            etaprod *= e;
                            args.push(u32::from(x.jet) + u32::from(y.jet) + 1);
                        }
                        for (&j, c) in &c_coeffs(&args).coeffs {
                            *weights.entry(j).or_insert_with(Rational::zero) += &etaprod * c;
                        }
                    });
                    weights.retain(|_, w| !w.is_zero());
                    if weights.is_empty() {
                        continue;
                    }
                    let mut combo = QDiffPoly::zero(nf, TruncationSpec::new(trunc.eps, trunc.hbar));
                    let mut dj = gpart.clone();
                    let mut at = 0;
                    for (&j, w) in &weights {
                        while at < j {
                            dj = dj.d_x();
                            at += 1;
                        }
                        dj.add_scaled_into(&mut combo, &GaussianRational::real(w.clone()));
                    }
                    let mut scale = &prefactor * &GaussianRational::real(inv_mult.clone());
                    if sign_r % 2 == 1 {
                        scale = -scale;
                    }
                    let prod = fpart.mul_truncated(
                        &combo.shift(0, n as u32, &Default::default()),
                        trunc,
                    );
                    prod.add_scaled_into(&mut acc, &scale);
                }
                Ok(acc)
            })
            .collect();
        for p in pieces {
            for (k, c) in p?.terms() {
                total.add_term(k.clone(), c.clone());
            }
        }
    }
    Ok(total)
}

/// `(1/ħ)·f`; fails if some term carries no ħ.
pub fn divide_by_hbar(f: &QDiffPoly) -> Result<QDiffPoly> {
    f.divide_by_hbar()
}

/// `{f̄, ḡ} = ∫ δf/δu^α η^{αβ} ∂ₓ δg/δu^β dx`.
pub fn classical_bracket(f: &LocalFunctional, g: &LocalFunctional, eta: &Metric) -> Result<LocalFunctional> {
    let nf = f.density.n_fields();
    if g.density.n_fields() != nf {
        return Err(Error::FieldMismatch(nf, g.density.n_fields()));
    }
    let df = f.gradient();
    let dg: Vec<QDiffPoly> = g.gradient().iter().map(QDiffPoly::d_x).collect();
    let trunc = df
        .iter()
        .chain(&dg)
        .fold(f.density.trunc().meet(&g.density.trunc()), |t, p| t.meet(&p.trunc()));
    let mut out = QDiffPoly::zero(nf, trunc);
    for a in 1..=nf {
        for b in 1..=nf {
            let e = eta.upper(a, b);
            if e.is_zero() {
                continue;
            }
            let prod = df[usize::from(a) - 1].mul_truncated(&dg[usize::from(b) - 1], trunc);
            prod.add_scaled_into(&mut out, &GaussianRational::real(e.clone()));
        }
    }
    Ok(LocalFunctional::new(out))
}

/// `[f̄, ḡ]` as a local functional.
pub fn commutator_functionals(f: &LocalFunctional, g: &LocalFunctional, eta: &Metric) -> Result<LocalFunctional> {
    Ok(LocalFunctional::new(commutator_density_functional(&f.density, g, eta)?))
}

/// `∫ ½ η_{μν} u^μ u^ν dx`, the translation generator.
pub fn translation_functional(n_fields: u8, trunc: TruncationSpec, eta: &Metric) -> LocalFunctional {
    let mut p = QDiffPoly::zero(n_fields, trunc);
    for a in 1..=n_fields {
        for b in 1..=n_fields {
            let e = eta.lower(a, b);
            if e.is_zero() {
                continue;
            }
            let mono = JetMonomial::from_factors([(Var::new(a, 0), 1), (Var::new(b, 0), 1)]);
            p.add_term(
                TermKey::new(0, 0, mono, Default::default()),
                GaussianRational::real(e / rat_int(2)),
            );
        }
    }
    LocalFunctional::new(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalars::rat;

    fn t() -> TruncationSpec {
        TruncationSpec::new(6, 3)
    }
    fn u(j: u16) -> QDiffPoly {
        QDiffPoly::var(1, t(), 1, j)
    }
    fn hbar(p: &QDiffPoly) -> QDiffPoly {
        p.shift(0, 1, &Default::default())
    }

    #[test]
    fn metric_inverse() {
        let m = Metric::new(vec![vec![rat(2, 1), rat(1, 1)], vec![rat(1, 1), rat(1, 1)]]).unwrap();
        assert_eq!(*m.lower(1, 1), rat(1, 1));
        assert_eq!(*m.lower(1, 2), rat(-1, 1));
        assert_eq!(*m.lower(2, 2), rat(2, 1));
        assert!(Metric::new(vec![vec![rat(1, 1), rat(1, 1)], vec![rat(1, 1), rat(1, 1)]]).is_err());
    }

    #[test]
    fn translation_on_u() {
        let g = translation_functional(1, t(), &Metric::scalar());
        let c = commutator_density_functional(&u(0), &g, &Metric::scalar()).unwrap();
        assert_eq!(c.with_trunc(t()), hbar(&u(1)));
    }

    #[test]
    fn translation_on_product() {
        let g = translation_functional(1, t(), &Metric::scalar());
        let f = &u(0) * &u(2);
        let c = commutator_density_functional(&f, &g, &Metric::scalar()).unwrap();
        assert_eq!(c.with_trunc(t()), hbar(&f.d_x()));
    }

    #[test]
    fn hbar_grading_and_division() {
        let f = &(&u(0) * &u(0)) * &u(1);
        let g = LocalFunctional::new(&(&u(0) * &u(0)) * &(&u(0) * &u(2)));
        let c = commutator_density_functional(&f, &g, &Metric::scalar()).unwrap();
        assert!(c.terms().all(|(k, _)| k.hbar >= 1));
        assert!(c.terms().any(|(k, _)| k.hbar >= 2));
        divide_by_hbar(&c).unwrap();
    }

    #[test]
    fn classical_examples() {
        let m = Metric::scalar();
        let g10 = translation_functional(1, t(), &m);
        assert!(classical_bracket(&g10, &g10, &m).unwrap().is_zero());
        let cube = LocalFunctional::new((&(&u(0) * &u(0)) * &u(0)).scale(&GaussianRational::ratio(1, 6)));
        let b = classical_bracket(&cube, &g10, &m).unwrap();
        let want = (&(&u(0) * &u(0)) * &u(1)).scale(&GaussianRational::ratio(1, 2));
        assert_eq!(b.density.with_trunc(t()), want);
        assert!(b.is_zero());
    }

    #[test]
    fn permutations_are_distinct() {
        let mut seen = Vec::new();
        for_each_distinct_permutation(&[1, 1, 2], |p| seen.push(p.to_vec()));
        assert_eq!(seen, vec![vec![1, 1, 2], vec![1, 2, 1], vec![2, 1, 1]]);
    }
}
