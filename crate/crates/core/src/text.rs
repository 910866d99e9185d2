//! Canonical text form and structured (JSON) form of polynomials and scalars.
//!
//! Text grammar (whitespace is ignored):
//!
//! ```text
//! expr   := ['+'|'-'] term (('+'|'-') term)*
//! term   := power (('*' power) | ('/' INT))*
//! power  := atom ['^' INT]
//! atom   := INT | 'i' | 'eps' | 'hbar' | '(' expr ')'
//!         | 'u' '[' INT ',' INT ']'      -- u^field_jet
//!         | ALIAS ['[' INT ']']          -- declared field alias, jet defaults to 0
//!         | PARAM                        -- declared formal parameter
//! ```
//!
//! The printer emits one term per summand as
//! `(coeff)*hbar^b*eps^a*params*u[f,j]^p*...`, joined by ` + `, in the
//! order (ħ-power, ε-power, jet monomial). `parse(print(p)) == p`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{JetMonomial, QDiffPoly, TermKey, TruncationSpec, Var};
use crate::scalars::{fmt_rational, GaussianRational, Param, ParamMono, ParamSet, Rational, Scalar};

pub fn format_term(k: &TermKey, c: &GaussianRational) -> String {
    let mut s = format!("({c})");
    let mut pw = |name: &str, e: u32| {
        if e == 1 {
            let _ = write!(s, "*{name}");
        } else if e > 1 {
            let _ = write!(s, "*{name}^{e}");
        }
    };
    pw("hbar", k.hbar);
    pw("eps", k.eps);
    for (p, e) in k.params.factors() {
        pw(p.name(), *e);
    }
    for (v, e) in k.mono.factors() {
        pw(&format!("u[{},{}]", v.field, v.jet), *e);
    }
    s
}

pub fn format_poly(p: &QDiffPoly) -> String {
    if p.is_zero() {
        return "0".to_owned();
    }
    p.terms()
        .map(|(k, c)| format_term(k, c))
        .collect::<Vec<_>>()
        .join(" + ")
}

/// Names and bounds used while parsing text.
#[derive(Clone, Debug)]
pub struct ParseContext {
    pub n_fields: u8,
    pub trunc: TruncationSpec,
    pub params: ParamSet,
    pub aliases: BTreeMap<String, u8>,
}

impl ParseContext {
    pub fn new(n_fields: u8, trunc: TruncationSpec, params: ParamSet) -> Self {
        Self { n_fields, trunc, params, aliases: BTreeMap::new() }
    }

    pub fn alias(mut self, name: &str, field: u8) -> Self {
        self.aliases.insert(name.to_owned(), field);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Int(BigInt),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let mut out = Vec::new();
    let b = src.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let ch = b[i] as char;
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() {
            let st = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let n: BigInt = src[st..i].parse().expect("digits");
            out.push((st, Tok::Int(n)));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let st = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((st, Tok::Ident(src[st..i].to_owned())));
        } else if "+-*/^()[],".contains(ch) {
            out.push((i, Tok::Sym(ch)));
            i += 1;
        } else {
            return Err(Error::Parse { pos: i, msg: format!("unexpected character `{ch}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    ctx: &'a ParseContext,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn at(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.at(), msg: msg.into() })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn int(&mut self) -> Result<BigInt> {
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(n)
            }
            _ => self.err("expected an integer"),
        }
    }

    fn small(&mut self) -> Result<u32> {
        let n = self.int()?;
        u32::try_from(n).or_else(|_| self.err("integer too large"))
    }

    fn zero(&self) -> QDiffPoly {
        QDiffPoly::zero(self.ctx.n_fields, self.ctx.trunc)
    }

    fn lift(&self, c: GaussianRational, eps: u32, hbar: u32, params: ParamMono, mono: JetMonomial) -> QDiffPoly {
        QDiffPoly::monomial(self.ctx.n_fields, self.ctx.trunc, c, eps, hbar, params, mono)
    }

    fn expr(&mut self) -> Result<QDiffPoly> {
        let mut acc = self.zero();
        let mut sign = 1;
        if self.eat('-') {
            sign = -1;
        } else {
            self.eat('+');
        }
        loop {
            let t = self.term()?;
            t.add_scaled_into(&mut acc, &GaussianRational::from_int(sign));
            if self.eat('+') {
                sign = 1;
            } else if self.eat('-') {
                sign = -1;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<QDiffPoly> {
        let mut acc = self.power()?;
        loop {
            if self.eat('*') {
                let rhs = self.power()?;
                acc = acc.mul_truncated(&rhs, self.ctx.trunc);
            } else if self.eat('/') {
                let d = self.int()?;
                if d == BigInt::from(0) {
                    return self.err("division by zero");
                }
                let inv = BigRational::new(BigInt::from(1), d);
                acc = acc.scale(&GaussianRational::real(inv));
            } else {
                return Ok(acc);
            }
        }
    }

    fn power(&mut self) -> Result<QDiffPoly> {
        let base = self.atom()?;
        if self.eat('^') {
            let e = self.small()?;
            let mut acc = self.lift(GaussianRational::one(), 0, 0, ParamMono::one(), JetMonomial::one());
            for _ in 0..e {
                acc = acc.mul_truncated(&base, self.ctx.trunc);
            }
            return Ok(acc);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<QDiffPoly> {
        let one = GaussianRational::one();
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(self.lift(
                    GaussianRational::real(Rational::from_integer(n)),
                    0,
                    0,
                    ParamMono::one(),
                    JetMonomial::one(),
                ))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "i" => Ok(self.lift(GaussianRational::i(), 0, 0, ParamMono::one(), JetMonomial::one())),
                    "eps" => Ok(self.lift(one, 1, 0, ParamMono::one(), JetMonomial::one())),
                    "hbar" => Ok(self.lift(one, 0, 1, ParamMono::one(), JetMonomial::one())),
                    _ => self.named(&name),
                }
            }
            _ => self.err("expected a factor"),
        }
    }

    fn named(&mut self, name: &str) -> Result<QDiffPoly> {
        let alias = self.ctx.aliases.get(name).copied();
        if self.eat('[') {
            let a = self.small()?;
            let (field, jet) = if self.eat(',') {
                if name != "u" {
                    return self.err(format!("`{name}[field,jet]` form is reserved for `u`"));
                }
                (a, self.small()?)
            } else {
                match alias {
                    Some(f) => (u32::from(f), a),
                    None => return self.err(format!("`{name}` is not a declared field alias")),
                }
            };
            self.expect(']')?;
            return self.jet_var(field, jet);
        }
        if let Some(f) = alias {
            return self.jet_var(u32::from(f), 0);
        }
        let p = self.ctx.params.get(name)?;
        Ok(self.lift(
            GaussianRational::one(),
            0,
            0,
            ParamMono::single(p, 1),
            JetMonomial::one(),
        ))
    }

    fn jet_var(&self, field: u32, jet: u32) -> Result<QDiffPoly> {
        if field == 0 || field > u32::from(self.ctx.n_fields) {
            return self.err(format!("field index {field} outside 1..={}", self.ctx.n_fields));
        }
        let jet = u16::try_from(jet).or_else(|_| self.err("jet index too large"))?;
        Ok(QDiffPoly::var(self.ctx.n_fields, self.ctx.trunc, field as u8, jet))
    }
}

/// Parses a density expression.
pub fn parse_poly(src: &str, ctx: &ParseContext) -> Result<QDiffPoly> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len(), ctx };
    if p.peek().is_none() {
        return p.err("empty expression");
    }
    let out = p.expr()?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    Ok(out)
}

/// Parses a single scalar such as `1/2`, `-1/24*i`, `(1/2+1/3*i)*mu^2*q`.
pub fn parse_scalar(src: &str, params: &ParamSet) -> Result<Scalar> {
    let wide = TruncationSpec::new(1 << 16, 1 << 16);
    let ctx = ParseContext::new(0, wide, params.clone());
    let p = parse_poly(src, &ctx)?;
    let mut it = p.terms();
    let bad = || Error::Parse { pos: 0, msg: "not a single scalar".to_owned() };
    let Some((k, c)) = it.next() else {
        return Ok(Scalar::constant(GaussianRational::zero()));
    };
    if it.next().is_some() || k.eps != 0 || k.hbar != 0 || !k.mono.is_one() {
        return Err(bad());
    }
    Ok(Scalar::new(c.clone(), k.params.clone()))
}

/// Structured coefficient: exact rationals as strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoeffDoc {
    pub re: String,
    pub im: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermDoc {
    pub eps: u32,
    pub hbar: u32,
    pub params: BTreeMap<String, u32>,
    /// `[field, jet]` pairs, repeated according to multiplicity.
    pub monomial: Vec<[u32; 2]>,
    pub coeff: CoeffDoc,
}

/// Structured form of one density.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setup: Option<String>,
    pub n_fields: u8,
    pub truncation: TruncationSpec,
    pub terms: Vec<TermDoc>,
}

fn parse_rational(s: &str) -> Result<Rational> {
    let bad = || Error::Schema(format!("bad rational `{s}`"));
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n, d),
        None => (s, "1"),
    };
    let n: BigInt = n.trim().parse().map_err(|_| bad())?;
    let d: BigInt = d.trim().parse().map_err(|_| bad())?;
    if d == BigInt::from(0) {
        return Err(bad());
    }
    Ok(BigRational::new(n, d))
}

impl DensityDoc {
    pub fn from_poly(p: &QDiffPoly, setup: Option<&str>) -> Self {
        let terms = p
            .terms()
            .map(|(k, c)| TermDoc {
                eps: k.eps,
                hbar: k.hbar,
                params: k
                    .params
                    .factors()
                    .iter()
                    .map(|(p, e)| (p.name().to_owned(), *e))
                    .collect(),
                monomial: k
                    .mono
                    .factors()
                    .iter()
                    .flat_map(|&(v, e)| {
                        std::iter::repeat_n([u32::from(v.field), u32::from(v.jet)], e as usize)
                    })
                    .collect(),
                coeff: CoeffDoc { re: fmt_rational(&c.re), im: fmt_rational(&c.im) },
            })
            .collect();
        DensityDoc {
            setup: setup.map(str::to_owned),
            n_fields: p.n_fields(),
            truncation: p.trunc(),
            terms,
        }
    }

    pub fn to_poly(&self) -> Result<QDiffPoly> {
        let mut p = QDiffPoly::zero(self.n_fields, self.truncation);
        for t in &self.terms {
            let mut mono = JetMonomial::one();
            for &[f, j] in &t.monomial {
                if f == 0 || f > u32::from(self.n_fields) {
                    return Err(Error::Schema(format!("field {f} out of range")));
                }
                let j = u16::try_from(j).map_err(|_| Error::Schema("jet too large".into()))?;
                mono.mul_var(Var::new(f as u8, j), 1);
            }
            let params = ParamMono::from_pairs(t.params.iter().map(|(n, e)| (Param::intern(n), *e)));
            let c = GaussianRational::new(parse_rational(&t.coeff.re)?, parse_rational(&t.coeff.im)?);
            p.add_term(TermKey::new(t.eps, t.hbar, mono, params), c);
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalars::rat;

    fn ctx() -> ParseContext {
        ParseContext::new(2, TruncationSpec::new(6, 3), ParamSet::with(&["mu", "q"]))
            .alias("u", 1)
            .alias("omega", 2)
    }

    #[test]
    fn canonical_term_text() {
        let p = parse_poly("(1/24)*eps^2*u[1,2]", &ctx()).unwrap();
        assert_eq!(p.to_string(), "(1/24)*eps^2*u[1,2]");
        let g0 = parse_poly("u^2/2", &ctx()).unwrap();
        assert_eq!(g0.to_string(), "(1/2)*u[1,0]^2");
    }

    #[test]
    fn aliases_and_params() {
        let a = parse_poly("omega[2]*u - i*hbar/12*u*mu", &ctx()).unwrap();
        let b = parse_poly("u[2,2]*u[1,0] + (-1/12*i)*hbar*mu*u[1,0]", &ctx()).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            parse_poly("nu*u", &ctx()),
            Err(Error::UndeclaredParam(_))
        ));
        assert!(parse_poly("u[3,0]", &ctx()).is_err());
        assert!(parse_poly("u +", &ctx()).is_err());
    }

    #[test]
    fn scalars_round_trip() {
        let ps = ParamSet::with(&["mu", "q"]);
        for s in ["1/2", "-1/24*i", "(1/2+1/3*i)*mu^2*q", "7*q", "0"] {
            let v = parse_scalar(s, &ps).unwrap();
            assert_eq!(parse_scalar(&v.to_string(), &ps).unwrap(), v, "{s}");
        }
        assert_eq!(
            parse_scalar("1/2*i", &ps).unwrap().coeff,
            GaussianRational::imag(rat(1, 2))
        );
    }

    #[test]
    fn structured_round_trip() {
        let p = parse_poly("(3/4-2*i)*hbar*mu*u^2*omega[3] + eps^2*q", &ctx()).unwrap();
        let doc = DensityDoc::from_poly(&p, Some("test"));
        let json = serde_json::to_string(&doc).unwrap();
        let back: DensityDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_poly().unwrap(), p);
    }
}
