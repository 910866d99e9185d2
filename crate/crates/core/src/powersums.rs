//! Sums of powers over compositions and the coefficients that rewrite a
//! product of derivatives of the half delta function `δ₊` as a linear
//! combination of its derivatives.
//!
//! `C̃^{d₁..d_k}(N) = Σ_{a₁+…+a_k = N, aᵢ ≥ 0} a₁^{d₁}⋯a_k^{d_k}` (with
//! `0⁰ = 1`) is a polynomial in `N` of degree `k − 1 + Σdᵢ`. It is
//! obtained here by exact interpolation through its values at
//! `N = 0..=degree`, then checked against the closed-form degree, top
//! coefficient and parity properties before it is cached.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_traits::{One, Pow, Signed, Zero};

use crate::scalars::{rat_int, Rational};

/// `C̃^{d₁..d_k}(N)` in the monomial basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PowerSumPoly {
    pub exponents: Vec<u32>,
    /// `coeffs[j]` is the coefficient of `N^j`, for `j = 0..=degree`.
    pub coeffs: Vec<Rational>,
}

impl PowerSumPoly {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, n: u64) -> Rational {
        let x = Rational::from_integer(BigInt::from(n));
        self.coeffs
            .iter()
            .rev()
            .fold(Rational::zero(), |acc, c| acc * &x + c)
    }

    pub fn coeff(&self, j: usize) -> Rational {
        self.coeffs.get(j).cloned().unwrap_or_default()
    }
}

/// Coefficients `C_j^{a₁..a_n}` with
/// `∏ δ₊^{(aᵢ)} = (−i)^{n−1} Σ_j C_j δ₊^{(j)}`. Only nonzero entries are stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CCoeffs {
    pub exponents: Vec<u32>,
    pub coeffs: BTreeMap<u32, Rational>,
}

impl CCoeffs {
    pub fn get(&self, j: u32) -> Rational {
        self.coeffs.get(&j).cloned().unwrap_or_default()
    }
}

fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn binomial(n: u32, k: u32) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Values `C̃^{d}(N)` for `N = 0..=max_n`, by convolving the sequences `a^{dᵢ}`.
pub fn power_sum_values(d: &[u32], max_n: usize) -> Vec<BigInt> {
    let seq = |e: u32| -> Vec<BigInt> {
        (0..=max_n)
            .map(|a| if e == 0 { BigInt::one() } else { BigInt::from(a).pow(e) })
            .collect()
    };
    let mut acc = seq(d[0]);
    for &e in &d[1..] {
        let s = seq(e);
        acc = (0..=max_n)
            .map(|n| (0..=n).map(|a| &acc[a] * &s[n - a]).sum())
            .collect();
    }
    acc
}

/// Monomial coefficients of the unique polynomial of degree `≤ values.len()-1`
/// through `(N, values[N])`, via Newton forward differences.
fn interpolate(values: &[BigInt]) -> Vec<Rational> {
    let deg = values.len() - 1;
    let mut diffs: Vec<BigInt> = values.to_vec();
    let mut newton = Vec::with_capacity(values.len());
    for m in 0..=deg {
        newton.push(diffs[0].clone());
        for i in 0..deg - m {
            diffs[i] = &diffs[i + 1] - &diffs[i];
        }
    }
    // binom(N, m) = N(N−1)…(N−m+1)/m!
    let mut out = vec![Rational::zero(); deg + 1];
    let mut falling: Vec<BigInt> = vec![BigInt::one()];
    for (m, delta) in newton.iter().enumerate() {
        if m > 0 {
            let mut next = vec![BigInt::zero(); falling.len() + 1];
            let shift = BigInt::from(m as i64 - 1);
            for (j, c) in falling.iter().enumerate() {
                next[j + 1] += c;
                next[j] -= c * &shift;
            }
            falling = next;
        }
        let fm = Rational::from_integer(factorial(m as u32));
        for (j, c) in falling.iter().enumerate() {
            out[j] += Rational::from_integer(c * delta) / &fm;
        }
    }
    out
}

fn memo<K: std::hash::Hash + Eq + Clone, V: Clone>(
    table: &'static OnceLock<Mutex<HashMap<K, V>>>,
    key: K,
    make: impl FnOnce() -> V,
) -> V {
    let cell = table.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cell.lock().expect("memo poisoned").get(&key) {
        return v.clone();
    }
    let v = make();
    cell.lock().expect("memo poisoned").insert(key, v.clone());
    v
}

/// `C̃^{d₁..d_k}(N)` as an exact polynomial. Panics on an empty list.
pub fn power_sum_poly(d: &[u32]) -> Arc<PowerSumPoly> {
    assert!(!d.is_empty(), "power_sum_poly needs at least one exponent");
    let mut key = d.to_vec();
    key.sort_unstable();
    static TABLE: OnceLock<Mutex<HashMap<Vec<u32>, Arc<PowerSumPoly>>>> = OnceLock::new();
    memo(&TABLE, key.clone(), || {
        let k = key.len() as u32;
        let sum: u32 = key.iter().sum();
        let deg = (k - 1 + sum) as usize;
        let coeffs = interpolate(&power_sum_values(&key, deg));
        let poly = PowerSumPoly { exponents: key.clone(), coeffs };

        let top = key.iter().fold(BigInt::one(), |acc, &e| acc * factorial(e));
        let expected_top = Rational::new(top, factorial(deg as u32));
        assert_eq!(poly.coeff(deg), expected_top, "top coefficient of C~{key:?}");
        if sum > 0 {
            assert!(poly.coeff(0).is_zero(), "C~{key:?} has a constant term");
        }
        if key.iter().all(|&e| e >= 1) {
            for j in 0..=deg {
                if (j + deg) % 2 == 1 {
                    assert!(poly.coeff(j).is_zero(), "parity of C~{key:?} at {j}");
                }
            }
        }
        Arc::new(poly)
    })
}

/// The `δ₊`-product coefficients for `a₁..a_n ≥ 1`.
pub fn c_coeffs(a: &[u32]) -> Arc<CCoeffs> {
    assert!(!a.is_empty() && a.iter().all(|&x| x >= 1), "c_coeffs needs exponents ≥ 1");
    let mut key = a.to_vec();
    key.sort_unstable();
    static TABLE: OnceLock<Mutex<HashMap<Vec<u32>, Arc<CCoeffs>>>> = OnceLock::new();
    memo(&TABLE, key.clone(), || {
        let tilde = power_sum_poly(&key);
        let top = tilde.degree() as u32;
        let mut coeffs = BTreeMap::new();
        for j in 1..=top {
            if !(top - j).is_multiple_of(2) {
                continue;
            }
            let c = tilde.coeff(j as usize);
            if c.is_zero() {
                continue;
            }
            let c = if ((top - j) / 2) % 2 == 1 { -c } else { c };
            coeffs.insert(j, c);
        }
        Arc::new(CCoeffs { exponents: key, coeffs })
    })
}

/// Bernoulli number `B_n` (with `B_1 = −1/2`).
pub fn bernoulli(n: u32) -> Rational {
    static TABLE: OnceLock<Mutex<Vec<Rational>>> = OnceLock::new();
    let cell = TABLE.get_or_init(|| Mutex::new(vec![Rational::one()]));
    let mut b = cell.lock().expect("bernoulli table poisoned");
    while b.len() <= n as usize {
        let m = b.len() as u32;
        let s: Rational = (0..m)
            .map(|k| Rational::from_integer(binomial(m + 1, k)) * &b[k as usize])
            .sum();
        b.push(-s / rat_int(i64::from(m) + 1));
    }
    b[n as usize].clone()
}

/// `|B_{2g}|`.
pub fn bernoulli_abs(g: u32) -> Rational {
    assert!(g >= 1);
    bernoulli(2 * g).abs()
}

/// Coefficients `s_0..=s_order` of `S(z) = (e^{z/2} − e^{−z/2})/z = Σ s_i z^{2i}`.
pub fn s_series(order: usize) -> Vec<Rational> {
    (0..=order as u32)
        .map(|i| {
            Rational::new(
                BigInt::one(),
                BigInt::from(4).pow(i) * factorial(2 * i + 1),
            )
        })
        .collect()
}

/// Coefficients of the even series `1/S(z) = Σ t_i z^{2i}` through `z^{2·order}`.
pub fn s_inverse_series(order: usize) -> Vec<Rational> {
    invert_series(&s_series(order))
}

/// Inverse of a power series with nonzero constant term, truncated to the input length.
pub fn invert_series(a: &[Rational]) -> Vec<Rational> {
    let mut out: Vec<Rational> = Vec::with_capacity(a.len());
    let inv0 = Rational::one() / &a[0];
    for n in 0..a.len() {
        if n == 0 {
            out.push(inv0.clone());
            continue;
        }
        let s: Rational = (1..=n).map(|k| &a[k] * &out[n - k]).sum();
        out.push(-s * &inv0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalars::rat;

    #[test]
    fn constant_for_zero_exponent() {
        let p = power_sum_poly(&[0]);
        assert_eq!(p.coeffs, vec![rat(1, 1)]);
    }

    #[test]
    fn one_one_is_cubic() {
        let p = power_sum_poly(&[1, 1]);
        assert_eq!(p.coeffs, vec![rat(0, 1), rat(-1, 6), rat(0, 1), rat(1, 6)]);
    }

    #[test]
    fn c_coeffs_examples() {
        for s in 1..6 {
            let c = c_coeffs(&[s]);
            assert_eq!(c.coeffs, BTreeMap::from([(s, rat(1, 1))]));
        }
        let c = c_coeffs(&[1, 1]);
        assert_eq!(c.get(1), rat(1, 6));
        assert_eq!(c.get(3), rat(1, 6));
        assert_eq!(c.get(2), rat(0, 1));
        let c = c_coeffs(&[2, 1]);
        assert!(c.coeffs.keys().all(|j| j % 2 == 0));
    }

    #[test]
    fn bernoulli_values() {
        assert_eq!(bernoulli_abs(1), rat(1, 6));
        assert_eq!(bernoulli_abs(2), rat(1, 30));
        assert_eq!(bernoulli(4), rat(-1, 30));
        assert_eq!(bernoulli(3), rat(0, 1));
        // ILW normalisation |B₂|/(2·2!) matches the KdV ε²-coefficient.
        assert_eq!(bernoulli_abs(1) / rat(4, 1), rat(1, 24));
    }

    #[test]
    fn s_coefficients() {
        let s = s_series(2);
        assert_eq!(s, vec![rat(1, 1), rat(1, 24), rat(1, 1920)]);
        assert_eq!(s_inverse_series(1), vec![rat(1, 1), rat(-1, 24)]);
    }
}
