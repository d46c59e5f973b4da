//! Exact coefficient arithmetic for the whole engine.
//!
//! A [`Scalar`] is a polynomial over arbitrary-precision rationals in two
//! opaque commuting symbols: `sigma` (one unit of 2*pi*i; every identity we
//! check is homogeneous in it, so no relations are imposed) and `q` (one unit
//! of e^-1, for Gaussian constants instantiated at concrete integers).
//!
//! A [`ZExp`] is a formal z-exponent: an integer grade plus integer multiples
//! of positive sigma powers, as produced by diagonalised log-factors such as
//! z raised to sigma-quadratic eigenvalues.

use std::collections::BTreeMap;
use std::fmt;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Zero};

use crate::EngineError;

/// Arbitrary-precision rational, the ground field of the engine.
pub type Rat = BigRational;

/// Build a rational from an integer.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Build the rational p/q. Panics if q == 0.
pub fn rat(p: i64, q: i64) -> Rat {
    assert!(q != 0, "rational with zero denominator");
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// Exact binomial coefficient as a rational.
pub fn binomial(n: u32, k: u32) -> Rat {
    if k > n {
        return Rat::zero();
    }
    let mut acc = Rat::one();
    for i in 0..k {
        acc *= Rat::new(BigInt::from(n - i), BigInt::from(i + 1));
    }
    acc
}

/// Exact factorial as a rational.
pub fn factorial(n: u32) -> Rat {
    let mut acc = Rat::one();
    for i in 1..=n {
        acc *= rat_int(i as i64);
    }
    acc
}

// ---------------------------------------------------------------------------
// Scalar
// ---------------------------------------------------------------------------

/// Exact coefficient: rational polynomial in `sigma` and `q`.
///
/// Canonical form: no zero coefficients are stored, so structural equality
/// is semantic equality.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Scalar {
    /// (sigma degree, q degree) -> coefficient.
    terms: BTreeMap<(u32, u32), Rat>,
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar::default()
    }

    pub fn one() -> Self {
        Scalar::from_rat(Rat::one())
    }

    pub fn from_int(n: i64) -> Self {
        Scalar::from_rat(rat_int(n))
    }

    pub fn from_rat(r: Rat) -> Self {
        let mut s = Scalar::default();
        if !r.is_zero() {
            s.terms.insert((0, 0), r);
        }
        s
    }

    /// The symbol sigma (one unit of 2*pi*i).
    pub fn sigma() -> Self {
        Scalar::monomial(1, 0, Rat::one())
    }

    /// `c * sigma^a * q^b`.
    pub fn monomial(sigma_deg: u32, q_deg: u32, c: Rat) -> Self {
        let mut s = Scalar::default();
        if !c.is_zero() {
            s.terms.insert((sigma_deg, q_deg), c);
        }
        s
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1
            && self
                .terms
                .get(&(0, 0))
                .map(|c| c.is_one())
                .unwrap_or(false)
    }

    pub fn add(&self, other: &Scalar) -> Scalar {
        let mut terms = self.terms.clone();
        for (k, v) in &other.terms {
            let e = terms.entry(*k).or_insert_with(Rat::zero);
            *e += v;
        }
        terms.retain(|_, v| !v.is_zero());
        Scalar { terms }
    }

    pub fn neg(&self) -> Scalar {
        Scalar {
            terms: self.terms.iter().map(|(k, v)| (*k, -v.clone())).collect(),
        }
    }

    pub fn sub(&self, other: &Scalar) -> Scalar {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        let mut terms: BTreeMap<(u32, u32), Rat> = BTreeMap::new();
        for ((sa, qa), ca) in &self.terms {
            for ((sb, qb), cb) in &other.terms {
                let e = terms.entry((sa + sb, qa + qb)).or_insert_with(Rat::zero);
                *e += ca * cb;
            }
        }
        terms.retain(|_, v| !v.is_zero());
        Scalar { terms }
    }

    pub fn scale(&self, r: &Rat) -> Scalar {
        if r.is_zero() {
            return Scalar::zero();
        }
        Scalar {
            terms: self.terms.iter().map(|(k, v)| (*k, v * r)).collect(),
        }
    }

    /// Exact division by a nonzero integer. The zero divisor case signals a
    /// malformed mode index (1/n factors require n != 0).
    pub fn div_int(&self, n: i64) -> Result<Scalar, EngineError> {
        if n == 0 {
            return Err(EngineError::ZeroModeIndexDivision);
        }
        Ok(self.scale(&rat(1, n)))
    }

    /// The coefficient at (sigma_deg, q_deg), zero if absent.
    pub fn coeff(&self, sigma_deg: u32, q_deg: u32) -> Rat {
        self.terms
            .get(&(sigma_deg, q_deg))
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u32, u32), &Rat)> {
        self.terms.iter()
    }

    /// Integer power.
    pub fn pow(&self, e: u32) -> Scalar {
        let mut acc = Scalar::one();
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    /// If this scalar is a pure sigma-polynomial with integer coefficients,
    /// return it as a formal z-exponent offset.
    pub fn as_zexp(&self) -> Option<ZExp> {
        let mut z = ZExp::zero();
        for ((sd, qd), c) in &self.terms {
            if *qd != 0 || !c.is_integer() {
                return None;
            }
            let i: BigInt = c.to_integer();
            let small: i64 = i64::try_from(&i).ok()?;
            z.terms.insert(*sd, small);
        }
        Some(z)
    }

    fn render_term(sigma_deg: u32, q_deg: u32, c: &Rat) -> String {
        let mut parts: Vec<String> = Vec::new();
        let minus_one = c == &(-Rat::one());
        if sigma_deg == 0 && q_deg == 0 {
            return format!("{}", c);
        }
        if minus_one {
            // handled by prefix below
        } else if !c.is_one() {
            parts.push(format!("{}", c));
        }
        if sigma_deg == 1 {
            parts.push("sigma".into());
        } else if sigma_deg > 1 {
            parts.push(format!("sigma^{}", sigma_deg));
        }
        if q_deg == 1 {
            parts.push("q".into());
        } else if q_deg > 1 {
            parts.push(format!("q^{}", q_deg));
        }
        let body = parts.join("*");
        if minus_one {
            format!("-{}", body)
        } else {
            body
        }
    }

    /// Canonical text rendering, e.g. `1 + -1/2*sigma^2*q`.
    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        self.terms
            .iter()
            .map(|((s, q), c)| Scalar::render_term(*s, *q, c))
            .collect::<Vec<_>>()
            .join(" + ")
    }

    /// Parse the grammar emitted by [`Scalar::render`].
    pub fn parse(input: &str) -> Result<Scalar, EngineError> {
        let mut acc = Scalar::zero();
        for raw in input.split('+') {
            let term = raw.trim();
            if term.is_empty() {
                return Err(EngineError::parse(input, "empty scalar term"));
            }
            acc = acc.add(&parse_scalar_term(term).map_err(|m| EngineError::parse(input, &m))?);
        }
        Ok(acc)
    }
}

fn parse_scalar_term(term: &str) -> Result<Scalar, String> {
    let mut coeff = Rat::one();
    let mut sigma_deg: u32 = 0;
    let mut q_deg: u32 = 0;
    let mut body = term;
    let mut negate = false;
    if let Some(rest) = body.strip_prefix('-') {
        negate = true;
        body = rest.trim_start();
    }
    if body == "0" {
        return Ok(Scalar::zero());
    }
    let mut saw_coeff = false;
    for factor in body.split('*') {
        let f = factor.trim();
        if f.is_empty() {
            return Err("empty factor".into());
        }
        if f.starts_with(|c: char| c.is_ascii_digit()) {
            if saw_coeff {
                return Err(format!("duplicate numeric factor in '{}'", term));
            }
            saw_coeff = true;
            coeff = parse_rat(f)?;
        } else if let Some(rest) = f.strip_prefix("sigma") {
            sigma_deg += parse_exponent(rest)?;
        } else if let Some(rest) = f.strip_prefix('q') {
            q_deg += parse_exponent(rest)?;
        } else {
            return Err(format!("unknown factor '{}'", f));
        }
    }
    if negate {
        coeff = -coeff;
    }
    Ok(Scalar::monomial(sigma_deg, q_deg, coeff))
}

fn parse_exponent(rest: &str) -> Result<u32, String> {
    if rest.is_empty() {
        Ok(1)
    } else if let Some(e) = rest.strip_prefix('^') {
        e.parse::<u32>().map_err(|_| format!("bad exponent '{}'", e))
    } else {
        Err(format!("bad symbol suffix '{}'", rest))
    }
}

fn parse_rat(s: &str) -> Result<Rat, String> {
    if let Some((p, q)) = s.split_once('/') {
        let pn: i128 = p.trim().parse().map_err(|_| format!("bad numerator '{}'", p))?;
        let qn: i128 = q.trim().parse().map_err(|_| format!("bad denominator '{}'", q))?;
        if qn == 0 {
            return Err("zero denominator".into());
        }
        Ok(Rat::new(BigInt::from(pn), BigInt::from(qn)))
    } else {
        let n: i128 = s.trim().parse().map_err(|_| format!("bad integer '{}'", s))?;
        Ok(Rat::from_integer(BigInt::from(n)))
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

// ---------------------------------------------------------------------------
// ZExp
// ---------------------------------------------------------------------------

/// Formal z-exponent: the sigma-degree-0 entry is the integer grade, higher
/// sigma degrees hold integer multiples coming from diagonalised log-terms.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ZExp {
    /// sigma degree -> integer coefficient, no zeros stored.
    terms: BTreeMap<u32, i64>,
}

impl ZExp {
    pub fn zero() -> Self {
        ZExp::default()
    }

    pub fn from_grade(g: i64) -> Self {
        let mut z = ZExp::default();
        if g != 0 {
            z.terms.insert(0, g);
        }
        z
    }

    /// `c * sigma^d` as an exponent contribution.
    pub fn sigma_multiple(d: u32, c: i64) -> Self {
        let mut z = ZExp::default();
        if c != 0 {
            z.terms.insert(d, c);
        }
        z
    }

    /// The integer grade (sigma-degree-0 entry).
    pub fn grade(&self) -> i64 {
        self.terms.get(&0).copied().unwrap_or(0)
    }

    /// The formal part: everything of positive sigma degree.
    pub fn formal_part(&self) -> ZExp {
        ZExp {
            terms: self
                .terms
                .iter()
                .filter(|(d, _)| **d > 0)
                .map(|(d, c)| (*d, *c))
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_integer(&self) -> bool {
        self.formal_part().is_zero()
    }

    pub fn add(&self, other: &ZExp) -> ZExp {
        let mut terms = self.terms.clone();
        for (d, c) in &other.terms {
            let e = terms.entry(*d).or_insert(0);
            *e += c;
        }
        terms.retain(|_, c| *c != 0);
        ZExp { terms }
    }

    pub fn add_grade(&self, g: i64) -> ZExp {
        self.add(&ZExp::from_grade(g))
    }

    /// The exponent as a scalar, for d/dz prefactors.
    pub fn to_scalar(&self) -> Scalar {
        let mut s = Scalar::zero();
        for (d, c) in &self.terms {
            s = s.add(&Scalar::monomial(*d, 0, rat_int(*c)));
        }
        s
    }

    /// Canonical text rendering, e.g. `-2 + sigma^2` or `0`.
    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        self.terms
            .iter()
            .map(|(d, c)| match d {
                0 => format!("{}", c),
                _ => {
                    let sym = if *d == 1 {
                        "sigma".to_string()
                    } else {
                        format!("sigma^{}", d)
                    };
                    match c {
                        1 => sym,
                        -1 => format!("-{}", sym),
                        _ => format!("{}*{}", c, sym),
                    }
                }
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn parse(input: &str) -> Result<ZExp, EngineError> {
        let mut acc = ZExp::zero();
        for raw in input.split('+') {
            let mut term = raw.trim();
            if term.is_empty() {
                return Err(EngineError::parse(input, "empty exponent term"));
            }
            let mut sign = 1i64;
            if let Some(rest) = term.strip_prefix('-') {
                sign = -1;
                term = rest.trim_start();
            }
            let (c, d) = if let Some(idx) = term.find("sigma") {
                let (cs, ss) = term.split_at(idx);
                let c = if cs.trim_end().is_empty() {
                    1
                } else {
                    let cs = cs.trim_end().trim_end_matches('*').trim();
                    cs.parse::<i64>()
                        .map_err(|_| EngineError::parse(input, "bad exponent coefficient"))?
                };
                let d = parse_exponent(&ss["sigma".len()..])
                    .map_err(|m| EngineError::parse(input, &m))?;
                (c, d)
            } else {
                let c = term
                    .parse::<i64>()
                    .map_err(|_| EngineError::parse(input, "bad integer grade"))?;
                (c, 0)
            };
            acc = acc.add(&ZExp::sigma_multiple(d, sign * c));
        }
        Ok(acc)
    }
}

impl fmt::Debug for ZExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

impl fmt::Display for ZExp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(n: i64) -> Scalar {
        Scalar::from_int(n)
    }

    #[test]
    fn half_sigma_twice_is_sigma() {
        let half = Scalar::sigma().scale(&rat(1, 2));
        assert_eq!(half.add(&half), Scalar::sigma());
    }

    #[test]
    fn monomial_product_adds_exponents() {
        let a = Scalar::monomial(1, 4, rat_int(1));
        let b = Scalar::monomial(1, 9, rat_int(1));
        assert_eq!(a.mul(&b), Scalar::monomial(2, 13, rat_int(1)));
    }

    #[test]
    fn exact_division_round_trip() {
        let sq = Scalar::sigma().pow(2);
        let back = sq.div_int(2).unwrap().scale(&rat_int(2));
        assert_eq!(back, sq);
    }

    #[test]
    fn division_by_zero_index_is_an_error() {
        assert!(s(1).div_int(0).is_err());
    }

    #[test]
    fn zexp_grade_arithmetic() {
        let a = ZExp::from_grade(2);
        let b = ZExp::from_grade(-3);
        assert_eq!(a.add(&b).grade(), -1);
        let c = ZExp::sigma_multiple(2, 1);
        let d = ZExp::sigma_multiple(2, -1);
        assert!(c.add(&d).is_zero());
        let e = ZExp::from_grade(3).add(&ZExp::sigma_multiple(2, 5));
        assert_eq!(e.grade(), 3);
    }

    #[test]
    fn render_parse_round_trip_examples() {
        for sc in [
            Scalar::zero(),
            s(7),
            s(-3).mul(&Scalar::sigma()),
            Scalar::monomial(2, 1, rat(-1, 2)).add(&s(1)),
            Scalar::monomial(0, 3, rat(5, 7)),
        ] {
            assert_eq!(Scalar::parse(&sc.render()).unwrap(), sc);
        }
        for ze in [
            ZExp::zero(),
            ZExp::from_grade(-4),
            ZExp::from_grade(1).add(&ZExp::sigma_multiple(2, -3)),
            ZExp::sigma_multiple(1, 1),
        ] {
            assert_eq!(ZExp::parse(&ze.render()).unwrap(), ze);
        }
    }

    fn arb_scalar() -> impl Strategy<Value = Scalar> {
        prop::collection::vec(((0u32..3, 0u32..3), -6i64..6, 1i64..5), 0..4).prop_map(|v| {
            let mut acc = Scalar::zero();
            for ((sd, qd), p, q) in v {
                acc = acc.add(&Scalar::monomial(sd, qd, rat(p, q)));
            }
            acc
        })
    }

    proptest! {
        #[test]
        fn ring_laws(a in arb_scalar(), b in arb_scalar(), c in arb_scalar()) {
            prop_assert_eq!(a.add(&b).add(&c), a.add(&b.add(&c)));
            prop_assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
            prop_assert_eq!(a.mul(&b), b.mul(&a));
            prop_assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
        }

        #[test]
        fn canonical_form_unique(a in arb_scalar()) {
            prop_assert!(a.sub(&a).is_zero());
        }

        #[test]
        fn scalar_round_trip(a in arb_scalar()) {
            prop_assert_eq!(Scalar::parse(&a.render()).unwrap(), a);
        }
    }
}
