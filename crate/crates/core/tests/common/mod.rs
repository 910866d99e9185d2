#![allow(dead_code)]

use qdr_core::text::{parse_poly, ParseContext};
use qdr_core::{GaussianRational, JetMonomial, ParamSet, QDiffPoly, TermKey, TruncationSpec, Var};
use rand::rngs::StdRng;
use rand::Rng;

pub fn parse(n: u8, src: &str, t: TruncationSpec, params: &[&str]) -> QDiffPoly {
    let ctx = ParseContext::new(n, t, ParamSet::with(params)).alias("u", 1).alias("omega", 2);
    parse_poly(src, &ctx).unwrap_or_else(|e| panic!("bad fixture {src:?}: {e}"))
}

pub fn small_coeff(rng: &mut StdRng) -> GaussianRational {
    let re = rng.gen_range(-5..=5);
    let im = if rng.gen_bool(0.3) { rng.gen_range(-3..=3) } else { 0 };
    let den = rng.gen_range(1..=4);
    let c = GaussianRational::new(
        qdr_core::scalars::rat(re, den),
        qdr_core::scalars::rat(im, den),
    );
    if c.is_zero() {
        GaussianRational::one()
    } else {
        c
    }
}

/// A random density with up to `terms` terms, u-degree ≤ 3 and jets ≤ 3.
pub fn random_density(rng: &mut StdRng, n: u8, t: TruncationSpec, terms: usize, with_hbar: bool) -> QDiffPoly {
    let mut p = QDiffPoly::zero(n, t);
    for _ in 0..rng.gen_range(1..=terms) {
        let deg = rng.gen_range(0..=3);
        let mono = JetMonomial::from_factors(
            (0..deg).map(|_| (Var::new(rng.gen_range(1..=n), rng.gen_range(0..=3)), 1)),
        );
        let eps = rng.gen_range(0..=t.eps.min(2));
        let hbar = if with_hbar { rng.gen_range(0..=t.hbar.min(1)) } else { 0 };
        p.add_term(TermKey::new(eps, hbar, mono, Default::default()), small_coeff(rng));
    }
    p
}
