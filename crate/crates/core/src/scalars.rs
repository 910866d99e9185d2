//! Exact coefficients: Gaussian rationals `a + b·i` and monomials in the
//! commuting formal parameters (`mu`, `q`, ...).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::{Mutex, OnceLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Shorthand for the rational `num/den`. Panics on a zero denominator.
pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_int(n: i64) -> Rational {
    BigRational::from_integer(BigInt::from(n))
}

/// Prints a rational as `a` or `a/b`.
pub fn fmt_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// An element `re + im·i` of ℚ(i).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct GaussianRational {
    pub re: Rational,
    pub im: Rational,
}

impl GaussianRational {
    pub fn new(re: Rational, im: Rational) -> Self {
        Self { re, im }
    }

    pub fn real(re: Rational) -> Self {
        Self { re, im: Rational::zero() }
    }

    pub fn imag(im: Rational) -> Self {
        Self { re: Rational::zero(), im }
    }

    pub fn from_int(n: i64) -> Self {
        Self::real(rat_int(n))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Self::real(rat(num, den))
    }

    pub fn i() -> Self {
        Self::imag(Rational::one())
    }

    /// `i^k` for any integer `k`.
    pub fn i_pow(k: i64) -> Self {
        match k.rem_euclid(4) {
            0 => Self::one(),
            1 => Self::i(),
            2 => Self::from_int(-1),
            _ => Self::imag(-Rational::one()),
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::real(Rational::one())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.re.is_one() && self.im.is_zero()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.re.clone(), -self.im.clone())
    }

    pub fn norm_sqr(&self) -> Rational {
        &self.re * &self.re + &self.im * &self.im
    }

    pub fn scale(&self, r: &Rational) -> Self {
        Self::new(&self.re * r, &self.im * r)
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let n = self.norm_sqr();
        Some(Self::new(&self.re / &n, -&self.im / &n))
    }

    /// True when the value lies on the line `i^m·ℚ`.
    pub fn in_i_power_line(&self, m: u32) -> bool {
        if m.is_multiple_of(2) {
            self.im.is_zero()
        } else {
            self.re.is_zero()
        }
    }
}

impl fmt::Display for GaussianRational {
    /// `a/b`, `a/b*i`, or `a/b+c/d*i`; zero prints as `0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let re = !self.re.is_zero();
        let im = !self.im.is_zero();
        match (re, im) {
            (false, false) => write!(f, "0"),
            (true, false) => write!(f, "{}", fmt_rational(&self.re)),
            (false, true) => write!(f, "{}*i", fmt_rational(&self.im)),
            (true, true) => {
                let sign = if self.im.is_negative() { "" } else { "+" };
                write!(
                    f,
                    "{}{}{}*i",
                    fmt_rational(&self.re),
                    sign,
                    fmt_rational(&self.im)
                )
            }
        }
    }
}

impl Add for &GaussianRational {
    type Output = GaussianRational;
    fn add(self, o: &GaussianRational) -> GaussianRational {
        GaussianRational::new(&self.re + &o.re, &self.im + &o.im)
    }
}

impl Sub for &GaussianRational {
    type Output = GaussianRational;
    fn sub(self, o: &GaussianRational) -> GaussianRational {
        GaussianRational::new(&self.re - &o.re, &self.im - &o.im)
    }
}

impl Mul for &GaussianRational {
    type Output = GaussianRational;
    fn mul(self, o: &GaussianRational) -> GaussianRational {
        if self.im.is_zero() && o.im.is_zero() {
            return GaussianRational::real(&self.re * &o.re);
        }
        GaussianRational::new(
            &self.re * &o.re - &self.im * &o.im,
            &self.re * &o.im + &self.im * &o.re,
        )
    }
}

impl Neg for &GaussianRational {
    type Output = GaussianRational;
    fn neg(self) -> GaussianRational {
        GaussianRational::new(-&self.re, -&self.im)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for GaussianRational {
            type Output = GaussianRational;
            fn $m(self, o: GaussianRational) -> GaussianRational {
                (&self).$m(&o)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for GaussianRational {
    type Output = GaussianRational;
    fn neg(self) -> GaussianRational {
        -&self
    }
}

impl AddAssign<&GaussianRational> for GaussianRational {
    fn add_assign(&mut self, o: &GaussianRational) {
        self.re += &o.re;
        self.im += &o.im;
    }
}

impl SubAssign<&GaussianRational> for GaussianRational {
    fn sub_assign(&mut self, o: &GaussianRational) {
        self.re -= &o.re;
        self.im -= &o.im;
    }
}

impl MulAssign<&GaussianRational> for GaussianRational {
    fn mul_assign(&mut self, o: &GaussianRational) {
        *self = &*self * o;
    }
}

impl From<Rational> for GaussianRational {
    fn from(r: Rational) -> Self {
        Self::real(r)
    }
}

/// An interned formal-parameter name.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Param(&'static str);

fn interner() -> &'static Mutex<HashSet<&'static str>> {
    static TABLE: OnceLock<Mutex<HashSet<&'static str>>> = OnceLock::new();
    TABLE.get_or_init(|| Mutex::new(HashSet::new()))
}

impl Param {
    pub fn intern(name: &str) -> Param {
        let mut table = interner().lock().expect("param interner poisoned");
        if let Some(s) = table.get(name) {
            return Param(s);
        }
        let leaked: &'static str = Box::leak(name.to_owned().into_boxed_str());
        table.insert(leaked);
        Param(leaked)
    }

    pub fn name(&self) -> &'static str {
        self.0
    }
}

impl fmt::Debug for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// The formal parameters declared for one computation session.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamSet(BTreeSet<Param>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(names: &[&str]) -> Self {
        let mut s = Self::new();
        for n in names {
            s.declare(n);
        }
        s
    }

    pub fn declare(&mut self, name: &str) -> Param {
        let p = Param::intern(name);
        self.0.insert(p);
        p
    }

    /// Looks up a declared parameter.
    pub fn get(&self, name: &str) -> Result<Param> {
        self.0
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::UndeclaredParam(name.to_owned()))
    }

    pub fn contains(&self, p: Param) -> bool {
        self.0.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = Param> + '_ {
        self.0.iter().copied()
    }
}

/// A monomial in formal parameters. Zero exponents are never stored.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ParamMono(SmallVec<[(Param, u32); 2]>);

impl ParamMono {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn single(p: Param, exp: u32) -> Self {
        let mut m = Self::one();
        if exp > 0 {
            m.0.push((p, exp));
        }
        m
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Param, u32)>) -> Self {
        let mut map: BTreeMap<Param, u32> = BTreeMap::new();
        for (p, e) in pairs {
            *map.entry(p).or_default() += e;
        }
        ParamMono(map.into_iter().filter(|&(_, e)| e > 0).collect())
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn exponent(&self, p: Param) -> u32 {
        self.0
            .iter()
            .find(|(q, _)| *q == p)
            .map_or(0, |&(_, e)| e)
    }

    pub fn factors(&self) -> &[(Param, u32)] {
        &self.0
    }

    /// Removes `p`, returning its exponent and the remaining monomial.
    pub fn split_off(&self, p: Param) -> (u32, ParamMono) {
        let e = self.exponent(p);
        let rest = ParamMono(self.0.iter().copied().filter(|(q, _)| *q != p).collect());
        (e, rest)
    }

    pub fn mul(&self, o: &ParamMono) -> ParamMono {
        if o.is_one() {
            return self.clone();
        }
        if self.is_one() {
            return o.clone();
        }
        let mut out: SmallVec<[(Param, u32); 2]> = SmallVec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < o.0.len() {
            let (a, b) = (self.0[i], o.0[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => {
                    out.push(a);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a.0, a.1 + b.1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&o.0[j..]);
        ParamMono(out)
    }
}

impl fmt::Display for ParamMono {
    /// `mu^2*q`; the empty monomial prints as nothing.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (p, e)) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("*")?;
            }
            if *e == 1 {
                write!(f, "{p}")?;
            } else {
                write!(f, "{p}^{e}")?;
            }
        }
        Ok(())
    }
}

/// A Gaussian-rational coefficient times a parameter monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Scalar {
    pub coeff: GaussianRational,
    pub params: ParamMono,
}

impl Scalar {
    pub fn new(coeff: GaussianRational, params: ParamMono) -> Self {
        Self { coeff, params }
    }

    pub fn constant(coeff: GaussianRational) -> Self {
        Self::new(coeff, ParamMono::one())
    }

    pub fn is_zero(&self) -> bool {
        self.coeff.is_zero()
    }
}

impl Mul for &Scalar {
    type Output = Scalar;
    fn mul(self, o: &Scalar) -> Scalar {
        Scalar::new(&self.coeff * &o.coeff, self.params.mul(&o.params))
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, o: Scalar) -> Scalar {
        &self * &o
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.coeff;
        let compound = !c.re.is_zero() && !c.im.is_zero();
        if compound && !self.params.is_one() {
            write!(f, "({c})")?;
        } else {
            write!(f, "{c}")?;
        }
        if !self.params.is_one() {
            write!(f, "*{}", self.params)?;
        }
        Ok(())
    }
}

/// A finite sum of scalars with distinct parameter monomials.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ScalarSum(BTreeMap<ParamMono, GaussianRational>);

impl ScalarSum {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = Scalar> + '_ {
        self.0
            .iter()
            .map(|(p, c)| Scalar::new(c.clone(), p.clone()))
    }

    pub fn add_scalar(&mut self, s: &Scalar) {
        if s.is_zero() {
            return;
        }
        let slot = self.0.entry(s.params.clone()).or_default();
        *slot += &s.coeff;
        if slot.is_zero() {
            self.0.remove(&s.params);
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Scalar> for ScalarSum {
    fn from(s: Scalar) -> Self {
        let mut out = ScalarSum::zero();
        out.add_scalar(&s);
        out
    }
}

impl Add for &ScalarSum {
    type Output = ScalarSum;
    fn add(self, o: &ScalarSum) -> ScalarSum {
        let mut out = self.clone();
        for s in o.terms() {
            out.add_scalar(&s);
        }
        out
    }
}

impl Mul for &ScalarSum {
    type Output = ScalarSum;
    fn mul(self, o: &ScalarSum) -> ScalarSum {
        let mut out = ScalarSum::zero();
        for a in self.terms() {
            for b in o.terms() {
                out.add_scalar(&(&a * &b));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(re: (i64, i64), im: (i64, i64), params: &[(&str, u32)]) -> Scalar {
        Scalar::new(
            GaussianRational::new(rat(re.0, re.1), rat(im.0, im.1)),
            ParamMono::from_pairs(params.iter().map(|&(n, e)| (Param::intern(n), e))),
        )
    }

    #[test]
    fn rational_sums() {
        let half = ScalarSum::from(sc((1, 2), (0, 1), &[]));
        let sum = &half + &half;
        assert_eq!(sum, ScalarSum::from(sc((1, 1), (0, 1), &[])));

        let a = ScalarSum::from(sc((0, 1), (1, 24), &[]));
        let b = ScalarSum::from(sc((0, 1), (-1, 24), &[]));
        assert!((&a + &b).is_zero());

        let m = ScalarSum::from(sc((1, 6), (0, 1), &[("mu", 1)]));
        assert_eq!(&m + &m, ScalarSum::from(sc((1, 3), (0, 1), &[("mu", 1)])));
    }

    #[test]
    fn gaussian_products() {
        let i = GaussianRational::i();
        assert_eq!(&i * &i, GaussianRational::from_int(-1));
        let a = GaussianRational::imag(rat(1, 2));
        let b = GaussianRational::imag(rat(-1, 3));
        assert_eq!(&a * &b, GaussianRational::ratio(1, 6));

        let mu = sc((1, 1), (0, 1), &[("mu", 1)]);
        let mu2 = sc((1, 1), (0, 1), &[("mu", 2)]);
        assert_eq!(&mu * &mu2, sc((1, 1), (0, 1), &[("mu", 3)]));
    }

    #[test]
    fn zero_exponents_dropped() {
        let m = ParamMono::from_pairs([(Param::intern("mu"), 0), (Param::intern("q"), 2)]);
        assert_eq!(m.factors().len(), 1);
        assert_eq!(m.exponent(Param::intern("mu")), 0);
    }

    #[test]
    fn inverse_and_powers() {
        let z = GaussianRational::new(rat(3, 1), rat(-4, 1));
        assert!((&z * &z.inv().unwrap()).is_one());
        assert!(GaussianRational::zero().inv().is_none());
        assert_eq!(GaussianRational::i_pow(-1), GaussianRational::imag(rat(-1, 1)));
        assert_eq!(GaussianRational::i_pow(6), GaussianRational::from_int(-1));
    }

    #[test]
    fn display_forms() {
        assert_eq!(sc((1, 2), (0, 1), &[]).to_string(), "1/2");
        assert_eq!(sc((0, 1), (-1, 24), &[]).to_string(), "-1/24*i");
        assert_eq!(
            sc((1, 2), (0, 1), &[("mu", 2), ("q", 1)]).to_string(),
            "1/2*mu^2*q"
        );
        assert_eq!(sc((1, 2), (1, 3), &[("q", 1)]).to_string(), "(1/2+1/3*i)*q");
    }
}
