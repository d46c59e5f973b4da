//! The mode Lie algebra: six frame generators with their affinization,
//! the derived position/momentum operators, and symbolic commutators.
//!
//! All brackets are taken at level one (K acts as the identity in every
//! module here, so the closed bracket table bakes that in).
//!
//! Two routes coexist on purpose. The closed bracket table covers every
//! pair drawn from `alpha`, `beta`, `x`, `xs` and `K` and drives the fast
//! action path, with `x`/`xs` creators kept as PBW letters. Independently,
//! `W`, `P` and the nonzero `x`/`xs` modes expand through [`expand_derived`]
//! into alpha/beta modes, zero-mode symbols and formal quadratic sums that
//! collapse against states; the relation suite replays the whole table
//! through that expansion oracle, so the fast path never certifies itself.

use std::fmt;

use crate::funcspace::{eps, xi};
use crate::scalar::{rat, Scalar};
use crate::EngineError;

/// Structure data of the algebra: the antisymmetric symbol, the polarization
/// symbol and the invariant pairing `<beta_i, alpha^j> = delta_ij`.
#[derive(Clone, Copy, Debug, Default)]
pub struct StructureData;

impl StructureData {
    pub fn epsilon(&self, i: usize, j: usize, k: usize) -> i64 {
        eps(i, j, k)
    }

    pub fn xi(&self, i: usize, j: usize, k: usize) -> i64 {
        xi(i, j, k)
    }

    /// `<beta_i, alpha^j> = delta_ij`; all other pairings vanish.
    pub fn pairing(&self, a: &Mode, b: &Mode) -> i64 {
        match (a.kind, b.kind) {
            (ModeKind::Beta, ModeKind::Alpha) | (ModeKind::Alpha, ModeKind::Beta) => {
                if a.dir == b.dir {
                    1
                } else {
                    0
                }
            }
            _ => 0,
        }
    }

    /// The defining relation between the two symbols, asserted at startup.
    pub fn check(&self) -> bool {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    if self.xi(i, j, k) - self.xi(i, k, j) != self.epsilon(i, j, k) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Kinds of modes. `W` and `P` carry no index; `K` is central.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ModeKind {
    Alpha,
    Beta,
    X,
    XStar,
    W,
    P,
    K,
}

/// A single mode `kind(dir)_n`, directions zero-based.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Mode {
    pub kind: ModeKind,
    pub dir: usize,
    pub n: i64,
}

impl Mode {
    pub fn alpha(dir: usize, n: i64) -> Self {
        Mode {
            kind: ModeKind::Alpha,
            dir,
            n,
        }
    }

    pub fn beta(dir: usize, n: i64) -> Self {
        Mode {
            kind: ModeKind::Beta,
            dir,
            n,
        }
    }

    pub fn x(dir: usize, n: i64) -> Self {
        Mode {
            kind: ModeKind::X,
            dir,
            n,
        }
    }

    pub fn xstar(dir: usize, n: i64) -> Self {
        Mode {
            kind: ModeKind::XStar,
            dir,
            n,
        }
    }

    pub fn w(dir: usize) -> Self {
        Mode {
            kind: ModeKind::W,
            dir,
            n: 0,
        }
    }

    pub fn p(dir: usize) -> Self {
        Mode {
            kind: ModeKind::P,
            dir,
            n: 0,
        }
    }

    pub fn k() -> Self {
        Mode {
            kind: ModeKind::K,
            dir: 0,
            n: 0,
        }
    }

    /// Modes with a closed bracket table row (everything except W and P,
    /// which expand first).
    pub fn is_primitive(&self) -> bool {
        !matches!(self.kind, ModeKind::W | ModeKind::P)
    }

    /// Letters allowed in PBW words: negative alpha, beta and xs modes.
    pub fn is_pbw_letter(&self) -> bool {
        self.n < 0
            && matches!(
                self.kind,
                ModeKind::Alpha | ModeKind::Beta | ModeKind::XStar
            )
    }

    pub fn render(&self) -> String {
        let d = self.dir + 1;
        match self.kind {
            ModeKind::Alpha => format!("a({},{})", d, self.n),
            ModeKind::Beta => format!("b({},{})", d, self.n),
            ModeKind::X => format!("x({},{})", d, self.n),
            ModeKind::XStar => format!("xs({},{})", d, self.n),
            ModeKind::W => format!("W({})", d),
            ModeKind::P => format!("P({})", d),
            ModeKind::K => "K".into(),
        }
    }

    pub fn parse(input: &str) -> Result<Mode, EngineError> {
        let s = input.trim();
        if s == "K" {
            return Ok(Mode::k());
        }
        let (head, args) = s
            .split_once('(')
            .ok_or_else(|| EngineError::parse(input, "expected mode like a(1,-2)"))?;
        let args = args
            .strip_suffix(')')
            .ok_or_else(|| EngineError::parse(input, "missing ')'"))?;
        let parts: Vec<&str> = args.split(',').map(|p| p.trim()).collect();
        let dir_of = |p: &str| -> Result<usize, EngineError> {
            let d: usize = p
                .parse()
                .map_err(|_| EngineError::parse(input, "bad direction"))?;
            if !(1..=3).contains(&d) {
                return Err(EngineError::parse(input, "direction must be 1..3"));
            }
            Ok(d - 1)
        };
        match (head, parts.as_slice()) {
            ("a", [d, n]) => Ok(Mode::alpha(
                dir_of(d)?,
                n.parse().map_err(|_| EngineError::parse(input, "bad index"))?,
            )),
            ("b", [d, n]) => Ok(Mode::beta(
                dir_of(d)?,
                n.parse().map_err(|_| EngineError::parse(input, "bad index"))?,
            )),
            ("x", [d, n]) => Ok(Mode::x(
                dir_of(d)?,
                n.parse().map_err(|_| EngineError::parse(input, "bad index"))?,
            )),
            ("xs", [d, n]) => Ok(Mode::xstar(
                dir_of(d)?,
                n.parse().map_err(|_| EngineError::parse(input, "bad index"))?,
            )),
            ("W", [d]) => Ok(Mode::w(dir_of(d)?)),
            ("P", [d]) => Ok(Mode::p(dir_of(d)?)),
            _ => Err(EngineError::parse(input, "unknown mode head")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

// ---------------------------------------------------------------------------
// Operator expressions
// ---------------------------------------------------------------------------

/// One factor of an operator monomial.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum OpFactor {
    Mode(Mode),
    /// The formal quadratic sum `sum_s s x(j)_{n-s} x(k)_s`, resolved only
    /// against a state, where it collapses to finitely many terms.
    XxSum { j: usize, k: usize, n: i64 },
}

impl OpFactor {
    pub fn render(&self) -> String {
        match self {
            OpFactor::Mode(m) => m.render(),
            OpFactor::XxSum { j, k, n } => {
                format!("S[x({0},{2}-s)*x({1},s)]", j + 1, k + 1, n)
            }
        }
    }
}

/// An operator monomial: factors applied right to left.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct OpMonomial(pub Vec<OpFactor>);

impl OpMonomial {
    pub fn one() -> Self {
        OpMonomial(Vec::new())
    }

    pub fn single(m: Mode) -> Self {
        OpMonomial(vec![OpFactor::Mode(m)])
    }
}

/// A finite linear combination of operator monomials with scalar
/// coefficients. The empty monomial is the identity.
#[derive(Clone, PartialEq, Eq, Default, Debug)]
pub struct OpExpr {
    terms: std::collections::BTreeMap<OpMonomial, Scalar>,
}

impl OpExpr {
    pub fn zero() -> Self {
        OpExpr::default()
    }

    pub fn identity() -> Self {
        OpExpr::from_monomial(OpMonomial::one(), Scalar::one())
    }

    pub fn from_mode(m: Mode) -> Self {
        OpExpr::from_monomial(OpMonomial::single(m), Scalar::one())
    }

    pub fn from_monomial(m: OpMonomial, c: Scalar) -> Self {
        let mut e = OpExpr::zero();
        e.accumulate(m, c);
        e
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&OpMonomial, &Scalar)> {
        self.terms.iter()
    }

    fn accumulate(&mut self, m: OpMonomial, c: Scalar) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(e) => {
                *e = e.add(&c);
                if e.is_zero() {
                    self.terms.remove(&m);
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn add(&self, other: &OpExpr) -> OpExpr {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.accumulate(m.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, s: &Scalar) -> OpExpr {
        let mut out = OpExpr::zero();
        for (m, c) in &self.terms {
            out.accumulate(m.clone(), c.mul(s));
        }
        out
    }

    pub fn neg(&self) -> OpExpr {
        self.scale(&Scalar::from_int(-1))
    }

    pub fn sub(&self, other: &OpExpr) -> OpExpr {
        self.add(&other.neg())
    }

    /// Operator product: concatenates monomials (right factor applied first).
    pub fn mul(&self, other: &OpExpr) -> OpExpr {
        let mut out = OpExpr::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut factors = ma.0.clone();
                factors.extend(mb.0.iter().cloned());
                out.accumulate(OpMonomial(factors), ca.mul(cb));
            }
        }
        out
    }

    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        self.terms
            .iter()
            .map(|(m, c)| {
                if m.0.is_empty() {
                    format!("({})", c.render())
                } else {
                    let body = m
                        .0
                        .iter()
                        .map(|f| f.render())
                        .collect::<Vec<_>>()
                        .join("*");
                    format!("({})*{}", c.render(), body)
                }
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl fmt::Display for OpExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

// ---------------------------------------------------------------------------
// Brackets and expansions
// ---------------------------------------------------------------------------

/// Commutator of two table modes: the affinization bracket, the imposed
/// zero-mode relations, and the derived rows of the commutator tables (all
/// at level one). Nonzero x modes normalize through x^i_n = -(1/n) alpha^i_n;
/// x(k, 0) denotes the coordinate multiplication operator.
///
/// Panics (debug) on W/P input; callers expand those first.
pub fn affine_commutator(a: &Mode, b: &Mode) -> OpExpr {
    debug_assert!(a.is_primitive() && b.is_primitive(), "{} vs {}", a, b);
    use ModeKind::*;
    // normalize nonzero x modes to alpha
    if a.kind == X && a.n != 0 {
        return affine_commutator(&Mode::alpha(a.dir, a.n), b)
            .scale(&Scalar::from_int(-1).div_int(a.n).expect("n != 0"));
    }
    if b.kind == X && b.n != 0 {
        return affine_commutator(a, &Mode::alpha(b.dir, b.n))
            .scale(&Scalar::from_int(-1).div_int(b.n).expect("n != 0"));
    }
    match (a.kind, b.kind) {
        (K, _) | (_, K) => OpExpr::zero(),
        (Alpha, Alpha) => OpExpr::zero(),
        (Alpha, Beta) => {
            // [alpha^i_m, beta_{j,n}] = m <alpha, beta> delta_{m,-n} K
            if a.dir == b.dir && a.n == -b.n {
                OpExpr::from_mode(Mode::k()).scale(&Scalar::from_int(a.n))
            } else {
                OpExpr::zero()
            }
        }
        (Beta, Alpha) => affine_commutator(b, a).neg(),
        (Beta, Beta) => {
            // [beta_{i,m}, beta_{j,n}] = eps_{ijk} alpha^k_{m+n}
            let mut out = OpExpr::zero();
            for k in 0..3 {
                let e = eps(a.dir, b.dir, k);
                if e != 0 {
                    out = out.add(
                        &OpExpr::from_mode(Mode::alpha(k, a.n + b.n)).scale(&Scalar::from_int(e)),
                    );
                }
            }
            out
        }
        (Alpha, X) | (X, Alpha) | (X, X) => OpExpr::zero(),
        (Beta, X) => {
            // [beta_{j,m}, x^i_0] = delta_ij delta_{m,0} K
            if a.dir == b.dir && a.n == 0 {
                OpExpr::from_mode(Mode::k())
            } else {
                OpExpr::zero()
            }
        }
        (X, Beta) => affine_commutator(b, a).neg(),
        (Alpha, XStar) => {
            // [alpha^j_m, xs_{i,n}] = delta_ij delta_{n,-m} K
            if a.dir == b.dir && b.n == -a.n {
                OpExpr::from_mode(Mode::k())
            } else {
                OpExpr::zero()
            }
        }
        (XStar, Alpha) => affine_commutator(b, a).neg(),
        (Beta, XStar) => {
            // [beta_{j,m}, xs_{i,n}] = -(1/2) eps_{ijk} x^k_{m+n}
            let mut out = OpExpr::zero();
            for k in 0..3 {
                let e = eps(b.dir, a.dir, k);
                if e != 0 {
                    out = out.add(&x_mode_expr(k, a.n + b.n).scale(&Scalar::from_rat(rat(-e, 2))));
                }
            }
            out
        }
        (XStar, Beta) => affine_commutator(b, a).neg(),
        (X, XStar) => {
            // [x_{i,m}, xs_{j,n}] = -(1/m) delta_ij delta_{m,-n} K for m != 0
            // (the m = 0 multiplication operator commutes); this is the
            // oracle-resolved form of the unstarred table row.
            debug_assert!(a.n == 0, "nonzero x normalized above");
            OpExpr::zero()
        }
        (XStar, X) => OpExpr::zero(),
        (XStar, XStar) => {
            let m = a.n;
            let n = b.n;
            if m == 0 && n == 0 {
                return OpExpr::zero();
            }
            if n == 0 {
                // [xs_{i,m}, xs_{j,0}] = (eps_{ijk} / 2m) x^k_m
                let mut out = OpExpr::zero();
                for k in 0..3 {
                    let e = eps(a.dir, b.dir, k);
                    if e != 0 {
                        out = out.add(
                            &x_mode_expr(k, m)
                                .scale(&Scalar::from_rat(rat(e, 2 * m))),
                        );
                    }
                }
                return out;
            }
            if m == 0 {
                return affine_commutator(b, a).neg();
            }
            // the oracle-resolved starred row:
            // (m+n)/(2mn) eps_{ijk} x^k_{m+n} + (1/m^2) eps_{ijk} W^k delta_{m,-n}
            let mut out = OpExpr::zero();
            for k in 0..3 {
                let e = eps(a.dir, b.dir, k);
                if e == 0 {
                    continue;
                }
                if m + n != 0 {
                    out = out.add(
                        &x_mode_expr(k, m + n)
                            .scale(&Scalar::from_rat(rat(e * (m + n), 2 * m * n))),
                    );
                } else {
                    out = out.add(
                        &OpExpr::from_mode(Mode::alpha(k, 0))
                            .scale(&Scalar::from_rat(rat(e, m * m))),
                    );
                }
            }
            out
        }
        _ => unreachable!("W/P handled by expansion"),
    }
}

/// x^k_t as an operator expression: the multiplication operator at t = 0,
/// otherwise -(1/t) alpha^k_t.
fn x_mode_expr(k: usize, t: i64) -> OpExpr {
    if t == 0 {
        OpExpr::from_mode(Mode::x(k, 0))
    } else {
        OpExpr::from_mode(Mode::alpha(k, t)).scale(&Scalar::from_rat(rat(-1, t)))
    }
}

/// Expansion of a derived mode into primitives and formal sums.
pub fn expand_derived(m: &Mode) -> Result<OpExpr, EngineError> {
    match m.kind {
        ModeKind::W => Ok(OpExpr::from_mode(Mode::alpha(m.dir, 0))),
        ModeKind::X => {
            if m.n == 0 {
                Ok(OpExpr::from_mode(*m))
            } else {
                // x^i_n = -(1/n) alpha^i_n
                Ok(OpExpr::from_mode(Mode::alpha(m.dir, m.n))
                    .scale(&Scalar::from_int(-1).div_int(m.n)?))
            }
        }
        ModeKind::P => {
            // P_i = beta_{i,0} + eps_{ijk} x^j_0 W^k - (1/2) eps_{ijk} Sum
            let i = m.dir;
            let mut out = OpExpr::from_mode(Mode::beta(i, 0));
            for j in 0..3 {
                for k in 0..3 {
                    let e = eps(i, j, k);
                    if e == 0 {
                        continue;
                    }
                    out = out.add(
                        &OpExpr::from_monomial(
                            OpMonomial(vec![
                                OpFactor::Mode(Mode::x(j, 0)),
                                OpFactor::Mode(Mode::alpha(k, 0)),
                            ]),
                            Scalar::from_int(e),
                        ),
                    );
                    out = out.add(&OpExpr::from_monomial(
                        OpMonomial(vec![OpFactor::XxSum { j, k, n: 0 }]),
                        Scalar::from_rat(rat(-e, 2)),
                    ));
                }
            }
            Ok(out)
        }
        ModeKind::XStar => {
            if m.n == 0 {
                return Ok(OpExpr::from_mode(*m));
            }
            // xs_{i,n} = -(1/n)(beta_{i,n} + eps_{ijk} x^j_n W^k - (1/2) eps Sum_n)
            let i = m.dir;
            let n = m.n;
            let c = Scalar::from_int(-1).div_int(n)?;
            let mut out = OpExpr::from_mode(Mode::beta(i, n)).scale(&c);
            for j in 0..3 {
                for k in 0..3 {
                    let e = eps(i, j, k);
                    if e == 0 {
                        continue;
                    }
                    out = out.add(
                        &OpExpr::from_monomial(
                            OpMonomial(vec![
                                OpFactor::Mode(Mode::x(j, n)),
                                OpFactor::Mode(Mode::alpha(k, 0)),
                            ]),
                            c.mul(&Scalar::from_int(e)),
                        ),
                    );
                    out = out.add(&OpExpr::from_monomial(
                        OpMonomial(vec![OpFactor::XxSum { j, k, n }]),
                        c.mul(&Scalar::from_rat(rat(-e, 2))),
                    ));
                }
            }
            Ok(out)
        }
        ModeKind::Alpha | ModeKind::Beta | ModeKind::K => Ok(OpExpr::from_mode(*m)),
    }
}

/// Bracket extended linearly to expressions whose monomials are single
/// primitive modes (plus identity/K terms). Used for the finite Jacobi check.
pub fn linear_bracket(a: &OpExpr, b: &OpExpr) -> Result<OpExpr, EngineError> {
    let mut out = OpExpr::zero();
    for (ma, ca) in a.terms() {
        for (mb, cb) in b.terms() {
            let fa = match ma.0.as_slice() {
                [] => None,
                [OpFactor::Mode(m)] => Some(*m),
                _ => {
                    return Err(EngineError::NotExpandable(format!(
                        "linear_bracket on non-linear term {}",
                        a.render()
                    )))
                }
            };
            let fb = match mb.0.as_slice() {
                [] => None,
                [OpFactor::Mode(m)] => Some(*m),
                _ => {
                    return Err(EngineError::NotExpandable(format!(
                        "linear_bracket on non-linear term {}",
                        b.render()
                    )))
                }
            };
            if let (Some(x), Some(y)) = (fa, fb) {
                out = out.add(&affine_commutator(&x, &y).scale(&ca.mul(cb)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_data_relation_holds() {
        assert!(StructureData.check());
    }

    #[test]
    fn beta_beta_gives_alpha() {
        // [beta_{1,m}, beta_{2,n}] = alpha^3_{m+n}
        let got = affine_commutator(&Mode::beta(0, 2), &Mode::beta(1, -5));
        assert_eq!(got, OpExpr::from_mode(Mode::alpha(2, -3)));
    }

    #[test]
    fn beta_alpha_pairing_gives_central_term() {
        // [beta_{1,m}, alpha^1_{-m}] = m K
        let got = affine_commutator(&Mode::beta(0, 3), &Mode::alpha(0, -3));
        assert_eq!(got, OpExpr::from_mode(Mode::k()).scale(&Scalar::from_int(3)));
        let zero = affine_commutator(&Mode::beta(0, 3), &Mode::alpha(1, -3));
        assert!(zero.is_zero());
    }

    #[test]
    fn alphas_commute() {
        assert!(affine_commutator(&Mode::alpha(0, 4), &Mode::alpha(2, -4)).is_zero());
    }

    #[test]
    fn expand_x_mode() {
        let got = expand_derived(&Mode::x(0, 5)).unwrap();
        let expected =
            OpExpr::from_mode(Mode::alpha(0, 5)).scale(&Scalar::from_rat(rat(-1, 5)));
        assert_eq!(got, expected);
        assert!(expand_derived(&Mode::x(0, 0)).unwrap() == OpExpr::from_mode(Mode::x(0, 0)));
    }

    #[test]
    fn expand_w_is_zero_mode_alpha() {
        assert_eq!(
            expand_derived(&Mode::w(1)).unwrap(),
            OpExpr::from_mode(Mode::alpha(1, 0))
        );
    }

    #[test]
    fn antisymmetry_of_primitive_brackets() {
        let modes = [
            Mode::alpha(0, 2),
            Mode::alpha(2, -1),
            Mode::beta(1, 0),
            Mode::beta(2, -2),
            Mode::x(0, 0),
            Mode::xstar(1, 0),
            Mode::k(),
        ];
        for a in &modes {
            for b in &modes {
                let ab = affine_commutator(a, b);
                let ba = affine_commutator(b, a);
                assert_eq!(ab, ba.neg(), "[{}, {}]", a, b);
            }
        }
    }

    #[test]
    fn jacobi_on_bounded_grid() {
        let mut modes = vec![Mode::k()];
        for d in 0..3 {
            for n in -2..=2 {
                modes.push(Mode::alpha(d, n));
                modes.push(Mode::beta(d, n));
            }
        }
        for a in &modes {
            for b in &modes {
                for c in &modes {
                    let t1 = linear_bracket(&affine_commutator(a, b), &OpExpr::from_mode(*c))
                        .unwrap();
                    let t2 = linear_bracket(&affine_commutator(b, c), &OpExpr::from_mode(*a))
                        .unwrap();
                    let t3 = linear_bracket(&affine_commutator(c, a), &OpExpr::from_mode(*b))
                        .unwrap();
                    assert!(
                        t1.add(&t2).add(&t3).is_zero(),
                        "jacobi fails on {}, {}, {}",
                        a,
                        b,
                        c
                    );
                }
            }
        }
    }

    #[test]
    fn mode_render_parse() {
        for m in [
            Mode::alpha(0, -3),
            Mode::beta(2, 11),
            Mode::x(1, 0),
            Mode::xstar(2, -1),
            Mode::w(0),
            Mode::p(2),
            Mode::k(),
        ] {
            assert_eq!(Mode::parse(&m.render()).unwrap(), m);
        }
    }
}
