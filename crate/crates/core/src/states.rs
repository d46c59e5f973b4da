//! The induced modules as concrete vector spaces with exact mode actions.
//!
//! A state is a linear combination of PBW monomials of negative primitive
//! modes applied to a function slot. Positive modes annihilate the slot,
//! zero modes act as frame vector fields or coordinate multiplications, and
//! the central element acts as the identity (level one). Derived modes and
//! the formal quadratic sums collapse to finitely many terms against a
//! state: an annihilator of index s only pairs with the state's own
//! creators, which bounds every index range by the state's energy.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::funcspace::{theta_embed, CoordSystem, FTerm, FuncExpr, UPoly, VectorField};
use crate::modealg::{affine_commutator, expand_derived, Mode, ModeKind, OpExpr, OpFactor};
use crate::scalar::Scalar;
use crate::EngineError;

/// Which induced module a state lives in.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, serde::Serialize)]
pub enum Space {
    /// Induced from polynomials in the coordinates.
    Hf,
    /// Induced from functions on the base three-torus (x-plane waves).
    Vt3,
    /// Induced from functions on the Heisenberg nilmanifold (waves with
    /// rho_3 = 0 and theta sectors), polarized coordinates.
    Vn,
    /// Induced from all functions on the double twisted torus.
    Hc,
}

impl Space {
    pub fn tag(&self) -> &'static str {
        match self {
            Space::Hf => "hf",
            Space::Vt3 => "vt3",
            Space::Vn => "vn",
            Space::Hc => "hc",
        }
    }

    pub fn parse(s: &str) -> Result<Space, EngineError> {
        match s {
            "hf" => Ok(Space::Hf),
            "vt3" => Ok(Space::Vt3),
            "vn" => Ok(Space::Vn),
            "hc" => Ok(Space::Hc),
            other => Err(EngineError::parse(other, "unknown space tag")),
        }
    }

    /// Slot membership. The Vn class is the polynomial closure of the
    /// sector decomposition: x^1/x^2 monomial dressings arise from the
    /// algebra action on theta vectors and stay admissible.
    pub fn allows(&self, t: &FTerm) -> bool {
        match self {
            Space::Hc => true,
            Space::Hf => t.omega == [0; 3] && t.rho == [0; 3] && t.theta.is_none(),
            Space::Vt3 => t.omega == [0; 3] && t.mono == [0; 6] && t.theta.is_none(),
            Space::Vn => {
                let poly_dress_ok =
                    t.mono[2] == 0 && t.mono[3] == 0 && t.mono[4] == 0 && t.mono[5] == 0;
                match &t.theta {
                    None => t.omega == [0; 3] && t.rho[2] == 0 && poly_dress_ok,
                    Some(th) => t.omega == [0, 0, th.n] && t.rho == [0; 3] && poly_dress_ok,
                }
            }
        }
    }
}

/// Rank used to order modes inside a PBW word: larger mode indices go left,
/// alpha before beta at equal index, directions ascending.
fn pbw_rank(m: &Mode) -> (i64, u8, usize) {
    let kind = match m.kind {
        ModeKind::Alpha => 0u8,
        ModeKind::Beta => 1,
        _ => 2,
    };
    (-m.n, kind, m.dir)
}

fn pbw_cmp(a: &Mode, b: &Mode) -> Ordering {
    pbw_rank(a).cmp(&pbw_rank(b))
}

/// A normal-ordered word of negative primitive modes.
pub type PbwWord = Vec<Mode>;

/// One basis state: a PBW word applied to a function-slot term.
pub type StateKey = (PbwWord, FTerm);

/// An element of an induced module.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct State {
    pub space: Space,
    pub coords: CoordSystem,
    terms: BTreeMap<StateKey, Scalar>,
}

impl State {
    pub fn zero(space: Space, coords: CoordSystem) -> Self {
        State {
            space,
            coords,
            terms: BTreeMap::new(),
        }
    }

    /// The vacuum: constant 1 slot, empty PBW part.
    pub fn vacuum(space: Space, coords: CoordSystem) -> Self {
        State::from_slot_term(space, coords, FTerm::one(), Scalar::one())
    }

    pub fn from_slot_term(space: Space, coords: CoordSystem, t: FTerm, c: Scalar) -> Self {
        let mut s = State::zero(space, coords);
        s.accumulate((Vec::new(), t), c);
        s
    }

    pub fn from_slot(space: Space, slot: &FuncExpr) -> Self {
        let mut s = State::zero(space, slot.coords);
        for (t, c) in slot.terms() {
            s.accumulate((Vec::new(), t.clone()), c.clone());
        }
        s
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&StateKey, &Scalar)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn accumulate(&mut self, key: StateKey, c: Scalar) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&key) {
            Some(e) => {
                *e = e.add(&c);
                if e.is_zero() {
                    self.terms.remove(&key);
                }
            }
            None => {
                self.terms.insert(key, c);
            }
        }
    }

    pub fn add(&self, other: &State) -> State {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    /// In-place accumulation, the hot path of every evaluator.
    pub fn add_assign(&mut self, other: &State) {
        debug_assert_eq!(self.space, other.space);
        debug_assert_eq!(self.coords, other.coords);
        for (k, c) in &other.terms {
            self.accumulate(k.clone(), c.clone());
        }
    }

    pub fn scale(&self, s: &Scalar) -> State {
        let mut out = State::zero(self.space, self.coords);
        for (k, c) in &self.terms {
            out.accumulate(k.clone(), c.mul(s));
        }
        out
    }

    pub fn neg(&self) -> State {
        self.scale(&Scalar::from_int(-1))
    }

    pub fn sub(&self, other: &State) -> State {
        self.add(&other.neg())
    }

    /// Maximum total creation depth over the terms: bounds every annihilator
    /// index that can act without vanishing.
    pub fn energy(&self) -> i64 {
        self.terms
            .keys()
            .map(|(w, _)| w.iter().map(|m| -m.n).sum::<i64>())
            .max()
            .unwrap_or(0)
    }

    /// Dress each term's PBW word with a creation mode (straightened).
    pub fn dress(&self, mode: Mode) -> State {
        debug_assert!(mode.n < 0);
        let mut out = State::zero(self.space, self.coords);
        for ((word, slot), c) in &self.terms {
            for (w, s) in insert_creation(word, mode) {
                out.accumulate((w, slot.clone()), c.mul(&s));
            }
        }
        out
    }

    fn dress_word(&self, word: &[Mode]) -> State {
        let mut out = self.clone();
        for m in word.iter().rev() {
            out = out.dress(*m);
        }
        out
    }

    /// Multiply the function slot of every term, without space checking.
    /// Field evaluators use this for intermediate products.
    pub fn mul_slot(&self, f: &FuncExpr) -> Result<State, EngineError> {
        let mut out = State::zero(self.space, self.coords);
        for ((word, slot), c) in &self.terms {
            let base = FuncExpr::from_term(self.coords, slot.clone(), Scalar::one());
            let product = base.mul(f)?;
            for (t, s) in product.terms() {
                out.accumulate((word.clone(), t.clone()), c.mul(s));
            }
        }
        Ok(out)
    }

    /// Apply a function to every slot, linearly.
    pub fn map_slots<F>(&self, mut f: F) -> Result<State, EngineError>
    where
        F: FnMut(&FTerm) -> Result<FuncExpr, EngineError>,
    {
        let mut out = State::zero(self.space, self.coords);
        for ((word, slot), c) in &self.terms {
            let image = f(slot)?;
            for (t, s) in image.terms() {
                out.accumulate((word.clone(), t.clone()), c.mul(s));
            }
        }
        Ok(out)
    }

    /// Group terms by the x*-frequency sector of their slots.
    pub fn sector_components(&self) -> Vec<([i64; 3], State)> {
        let mut groups: BTreeMap<[i64; 3], State> = BTreeMap::new();
        for ((word, slot), c) in &self.terms {
            groups
                .entry(slot.omega)
                .or_insert_with(|| State::zero(self.space, self.coords))
                .accumulate((word.clone(), slot.clone()), c.clone());
        }
        groups.into_iter().collect()
    }

    /// Check every slot against the space, as the action entry points do.
    pub fn check_space(&self) -> Result<(), EngineError> {
        for ((_, slot), _) in &self.terms {
            if !self.space.allows(slot) {
                return Err(EngineError::SpaceViolation {
                    space: self.space.tag().into(),
                    term: slot.render(),
                });
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return format!("{}/{}: 0", self.space.tag(), self.coords.tag());
        }
        let body = self
            .terms
            .iter()
            .map(|((word, slot), c)| {
                let pbw = word
                    .iter()
                    .map(|m| m.render())
                    .collect::<Vec<_>>()
                    .join(" ");
                format!("({})*pbw[{}]@slot{{{}}}", c.render(), pbw, slot.render())
            })
            .collect::<Vec<_>>()
            .join(" + ");
        format!("{}/{}: {}", self.space.tag(), self.coords.tag(), body)
    }

    pub fn parse(input: &str) -> Result<State, EngineError> {
        let (head, body) = input
            .split_once(':')
            .ok_or_else(|| EngineError::parse(input, "missing space/coords header"))?;
        let (space_tag, coords_tag) = head
            .trim()
            .split_once('/')
            .ok_or_else(|| EngineError::parse(input, "header must be space/coords"))?;
        let space = Space::parse(space_tag.trim())?;
        let coords = match coords_tag.trim() {
            "original" => CoordSystem::Original,
            "polarized" => CoordSystem::Polarized,
            other => return Err(EngineError::parse(other, "unknown coordinate tag")),
        };
        let body = body.trim();
        let mut out = State::zero(space, coords);
        if body == "0" {
            return Ok(out);
        }
        for raw in split_plus(body) {
            let raw = raw.trim();
            if !raw.starts_with('(') {
                return Err(EngineError::parse(raw, "term must start with (scalar)"));
            }
            let close = matching(raw, '(', ')')
                .ok_or_else(|| EngineError::parse(raw, "unbalanced parenthesis"))?;
            let coeff = Scalar::parse(&raw[1..close])?;
            let rest = raw[close + 1..].trim();
            let rest = rest
                .strip_prefix("*pbw[")
                .ok_or_else(|| EngineError::parse(raw, "expected *pbw["))?;
            let rb = rest
                .find(']')
                .ok_or_else(|| EngineError::parse(raw, "missing ] after pbw"))?;
            let mut word: PbwWord = Vec::new();
            for tok in rest[..rb].split_whitespace() {
                let m = Mode::parse(tok)?;
                if !m.is_pbw_letter() {
                    return Err(EngineError::parse(
                        raw,
                        "pbw modes must be negative alpha/beta/xs modes",
                    ));
                }
                word.push(m);
            }
            let mut sorted = word.clone();
            sorted.sort_by(pbw_cmp);
            if sorted != word {
                return Err(EngineError::parse(raw, "pbw word not in normal order"));
            }
            let rest = rest[rb + 1..]
                .strip_prefix("@slot{")
                .ok_or_else(|| EngineError::parse(raw, "expected @slot{"))?;
            let sb = rest
                .rfind('}')
                .ok_or_else(|| EngineError::parse(raw, "missing } after slot"))?;
            let slot_body = rest[..sb].trim();
            let slot_expr = if slot_body == "1" {
                FuncExpr::one(coords)
            } else {
                FuncExpr::parse(&format!("{}: (1)*{}", coords.tag(), slot_body))?
            };
            for (t, c2) in slot_expr.terms() {
                out.accumulate((word.clone(), t.clone()), coeff.mul(c2));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

fn split_plus(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            '+' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn matching(s: &str, open: char, close: char) -> Option<usize> {
    let mut depth = 0i32;
    for (i, ch) in s.char_indices() {
        if ch == open {
            depth += 1;
        } else if ch == close {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Mode action
// ---------------------------------------------------------------------------

/// Insert a creation mode into a normal-ordered word, straightening with
/// bracket corrections. Brackets of two creation modes are again creation
/// modes, so the recursion stays inside PBW words.
fn insert_creation(word: &[Mode], m: Mode) -> Vec<(PbwWord, Scalar)> {
    if word.is_empty() || pbw_cmp(&m, &word[0]) != Ordering::Greater {
        let mut w = Vec::with_capacity(word.len() + 1);
        w.push(m);
        w.extend_from_slice(word);
        return vec![(w, Scalar::one())];
    }
    let head = word[0];
    let rest = &word[1..];
    let mut out: Vec<(PbwWord, Scalar)> = Vec::new();
    // m * head = head * m + [m, head]
    for (w, c) in insert_creation(rest, m) {
        let mut full = Vec::with_capacity(w.len() + 1);
        full.push(head);
        full.extend(w);
        out.push((full, c));
    }
    let bracket = affine_commutator(&m, &head);
    for (mono, c) in bracket.terms() {
        match mono.0.as_slice() {
            [OpFactor::Mode(mu)] => {
                debug_assert!(mu.is_pbw_letter(), "creation bracket produced {}", mu);
                for (w, c2) in insert_creation(rest, *mu) {
                    out.push((w, c.mul(&c2)));
                }
            }
            other => unreachable!("creation bracket produced {:?}", other),
        }
    }
    out
}

/// Apply one table mode (alpha, beta, K, x, xs of any index) to a state.
fn apply_single(mode: &Mode, v: &State, check_space: bool) -> Result<State, EngineError> {
    if mode.kind == ModeKind::X && mode.n != 0 {
        return Ok(apply_single(&Mode::alpha(mode.dir, mode.n), v, check_space)?
            .scale(&Scalar::from_int(-1).div_int(mode.n)?));
    }
    debug_assert!(mode.is_primitive(), "apply_single on {}", mode);
    if mode.kind == ModeKind::K {
        return Ok(v.clone());
    }
    let mut out = State::zero(v.space, v.coords);
    for ((word, slot), c) in &v.terms {
        if mode.n < 0 {
            for (w, s) in insert_creation(word, *mode) {
                out.accumulate((w, slot.clone()), c.mul(&s));
            }
        } else {
            let res = apply_lowering(mode, word, slot, v.space, v.coords, check_space)?;
            for (k, s) in res.terms {
                out.accumulate(k, c.mul(&s));
            }
        }
    }
    Ok(out)
}

/// Apply an annihilation or zero mode to a single PBW term, commuting it
/// rightward until it reaches the slot.
fn apply_lowering(
    mode: &Mode,
    word: &[Mode],
    slot: &FTerm,
    space: Space,
    coords: CoordSystem,
    check_space: bool,
) -> Result<State, EngineError> {
    debug_assert!(mode.n >= 0);
    if word.is_empty() {
        let slot_expr = FuncExpr::from_term(coords, slot.clone(), Scalar::one());
        let image: FuncExpr = match (mode.kind, mode.n) {
            (ModeKind::Alpha, 0) => slot_expr.apply_vector_field(VectorField::Alpha(mode.dir))?,
            (ModeKind::Beta, 0) => slot_expr.apply_vector_field(VectorField::Beta(mode.dir))?,
            (ModeKind::Alpha, _) | (ModeKind::Beta, _) => FuncExpr::zero(coords),
            (ModeKind::X, 0) => slot_expr.mul_coordinate(mode.dir),
            (ModeKind::XStar, 0) => slot_expr.mul_coordinate(3 + mode.dir),
            // derived annihilators also kill the slot: every term of their
            // expansion ends in a positive mode or a zero-weight summand
            (ModeKind::XStar, _) => FuncExpr::zero(coords),
            _ => unreachable!(),
        };
        if check_space {
            for (t, _) in image.terms() {
                if !space.allows(t) {
                    return Err(EngineError::SpaceViolation {
                        space: space.tag().into(),
                        term: t.render(),
                    });
                }
            }
        }
        return Ok(State::from_slot(space, &image));
    }
    let head = word[0];
    let rest = &word[1..];
    // mode * head * rest = head * (mode * rest) + [mode, head] * rest
    let mut out = State::zero(space, coords);
    let tail = apply_lowering(mode, rest, slot, space, coords, check_space)?;
    for ((w, t), c) in &tail.terms {
        for (w2, c2) in insert_creation(w, head) {
            out.accumulate((w2, t.clone()), c.mul(&c2));
        }
    }
    let bracket = affine_commutator(mode, &head);
    for (mono, c) in bracket.terms() {
        match mono.0.as_slice() {
            [OpFactor::Mode(mu)] => {
                let base = State::from_slot_term(space, coords, slot.clone(), Scalar::one())
                    .dress_word(rest);
                let sub = if mu.kind == ModeKind::K {
                    base
                } else {
                    apply_single(mu, &base, check_space)?
                };
                for (k, s) in sub.terms {
                    out.accumulate(k, c.mul(&s));
                }
            }
            other => unreachable!("primitive bracket produced {:?}", other),
        }
    }
    Ok(out)
}

/// Apply a single table mode without space checking (hot path for field
/// evaluation; avoids building an operator expression).
pub fn apply_one_mode(m: &Mode, v: &State) -> Result<State, EngineError> {
    match m.kind {
        ModeKind::W | ModeKind::P => {
            let expanded = expand_derived(m)?;
            act_impl(&expanded, v, false, false)
        }
        _ => apply_single(m, v, false),
    }
}

/// Apply an operator expression to a state. The closed bracket table drives
/// x/xs modes directly; W and P expand; formal quadratic sums collapse
/// against the state; K acts as the identity.
pub fn act(op: &OpExpr, v: &State) -> Result<State, EngineError> {
    act_impl(op, v, true, false)
}

/// Action without slot space checking, for engine-internal intermediates.
pub fn act_unchecked(op: &OpExpr, v: &State) -> Result<State, EngineError> {
    act_impl(op, v, false, false)
}

/// The expansion oracle: every derived mode (nonzero x/xs, W, P) is expanded
/// into alpha/beta modes, zero-mode symbols and formal sums before acting,
/// so this route never consults the derived rows of the bracket table.
pub fn act_oracle(op: &OpExpr, v: &State) -> Result<State, EngineError> {
    act_impl(op, v, false, true)
}

fn act_impl(op: &OpExpr, v: &State, check_space: bool, oracle: bool) -> Result<State, EngineError> {
    let mut out = State::zero(v.space, v.coords);
    for (mono, c) in op.terms() {
        let mut current = v.scale(c);
        for factor in mono.0.iter().rev() {
            if current.is_zero() {
                break;
            }
            current = apply_factor(factor, &current, check_space, oracle)?;
        }
        out.add_assign(&current);
    }
    Ok(out)
}

fn apply_factor(
    factor: &OpFactor,
    v: &State,
    check_space: bool,
    oracle: bool,
) -> Result<State, EngineError> {
    match factor {
        OpFactor::Mode(m) => apply_mode(m, v, check_space, oracle),
        OpFactor::XxSum { j, k, n } => {
            // sum_s s x^j_{n-s} x^k_s: the annihilating branches need
            // s <= E or n - s <= E; the doubly-creating branch needs
            // n <= s <= 0. Everything else acts by zero.
            let e = v.energy();
            let lo = (*n - e).min(*n).min(1);
            let hi = e.max(0);
            let mut out = State::zero(v.space, v.coords);
            for s in lo..=hi {
                if s == 0 {
                    continue;
                }
                let first = apply_mode(&Mode::x(*k, s), v, check_space, oracle)?;
                if first.is_zero() {
                    continue;
                }
                let second = apply_mode(&Mode::x(*j, n - s), &first, check_space, oracle)?;
                out.add_assign(&second.scale(&Scalar::from_int(s)));
            }
            Ok(out)
        }
    }
}

fn apply_mode(m: &Mode, v: &State, check_space: bool, oracle: bool) -> Result<State, EngineError> {
    match m.kind {
        ModeKind::Alpha | ModeKind::Beta | ModeKind::K | ModeKind::X => {
            apply_single(m, v, check_space)
        }
        ModeKind::XStar if m.n == 0 => apply_single(m, v, check_space),
        ModeKind::XStar if !oracle => apply_single(m, v, check_space),
        _ => {
            let expanded = expand_derived(m)?;
            act_impl(&expanded, v, check_space, oracle)
        }
    }
}

// ---------------------------------------------------------------------------
// Fixture families
// ---------------------------------------------------------------------------

/// The documented deterministic fixture list for a space. Order is fixed;
/// every suite iterates it in this order.
pub fn generating_family(space: Space, coords: CoordSystem) -> Vec<State> {
    let mut family: Vec<State> = Vec::new();
    let vac = State::vacuum(space, coords);
    match space {
        Space::Hf => {
            family.push(vac.clone());
            family.push(State::from_slot_term(
                space,
                coords,
                FTerm::coordinate(0),
                Scalar::one(),
            ));
            family.push(State::from_slot_term(
                space,
                coords,
                FTerm::coordinate(4),
                Scalar::one(),
            ));
            let mut prod = FTerm::coordinate(1);
            prod.mono[5] = 1;
            family.push(State::from_slot_term(space, coords, prod, Scalar::one()));
            family.push(vac.dress(Mode::alpha(0, -1)));
            family.push(
                State::from_slot_term(space, coords, FTerm::coordinate(3), Scalar::one())
                    .dress(Mode::beta(1, -1)),
            );
            family.push(vac.dress(Mode::beta(2, -2)));
        }
        Space::Vt3 => {
            family.push(vac.clone());
            for rho in [[1, 0, 0], [0, -1, 0], [0, 0, 1], [1, 1, 0]] {
                family.push(State::from_slot_term(
                    space,
                    coords,
                    FTerm::x_wave(rho),
                    Scalar::one(),
                ));
            }
            family.push(vac.dress(Mode::alpha(0, -1)));
            family.push(vac.dress(Mode::beta(1, -1)));
            family.push(
                State::from_slot_term(space, coords, FTerm::x_wave([1, 0, 0]), Scalar::one())
                    .dress(Mode::alpha(1, -1)),
            );
            family.push(
                State::from_slot_term(space, coords, FTerm::x_wave([0, 0, 1]), Scalar::one())
                    .dress(Mode::beta(0, -2)),
            );
        }
        Space::Vn => {
            family.push(vac.clone());
            for rho in [[1, 0, 0], [0, 1, 0]] {
                family.push(State::from_slot_term(
                    space,
                    coords,
                    FTerm::x_wave(rho),
                    Scalar::one(),
                ));
            }
            for n in [1i64, -1, 2] {
                family.push(State::from_slot(
                    space,
                    &crate::funcspace::gaussian_vector(n, 0).unwrap(),
                ));
            }
            family.push(State::from_slot(
                space,
                &theta_embed(2, 1, &UPoly::one()).unwrap(),
            ));
            family.push(State::from_slot(
                space,
                &theta_embed(1, 0, &UPoly::monomial(1, Scalar::one())).unwrap(),
            ));
            family.push(
                State::from_slot(space, &crate::funcspace::gaussian_vector(1, 0).unwrap())
                    .dress(Mode::alpha(0, -1)),
            );
            family.push(
                State::from_slot_term(space, coords, FTerm::x_wave([1, 0, 0]), Scalar::one())
                    .dress(Mode::beta(1, -1)),
            );
            family.push(vac.dress(Mode::beta(2, -1)));
        }
        Space::Hc => {
            family.push(vac.clone());
            // the sector with nonzero first frequency: log terms survive here
            family.push(State::from_slot_term(
                space,
                coords,
                FTerm::xs_wave([1, 0, 0]),
                Scalar::one(),
            ));
            family.push(State::from_slot_term(
                space,
                coords,
                FTerm::xs_wave([0, 1, 0]),
                Scalar::one(),
            ));
            let mut mixed = FTerm::xs_wave([1, 0, 0]);
            mixed.rho = [0, 1, 0];
            family.push(State::from_slot_term(space, coords, mixed, Scalar::one()));
            family.push(State::from_slot_term(
                space,
                coords,
                FTerm::x_wave([1, 0, 0]),
                Scalar::one(),
            ));
            family.push(
                State::from_slot_term(space, coords, FTerm::xs_wave([1, 0, 0]), Scalar::one())
                    .dress(Mode::alpha(0, -1)),
            );
            family.push(
                State::from_slot_term(space, coords, FTerm::xs_wave([1, 0, 0]), Scalar::one())
                    .dress(Mode::beta(0, -1)),
            );
            family.push(State::from_slot_term(
                space,
                coords,
                FTerm::coordinate(0),
                Scalar::one(),
            ));
        }
    }
    family
}

/// Fixtures whose slots carry no theta factor, for checks that compose theta
/// fields (their products with theta slots are not representable).
pub fn theta_free_family(space: Space, coords: CoordSystem) -> Vec<State> {
    generating_family(space, coords)
        .into_iter()
        .filter(|s| s.terms().all(|((_, t), _)| t.theta.is_none()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::gaussian_vector;
    use crate::modealg::OpMonomial;
    use crate::scalar::{rat, rat_int};

    fn vt3_vac() -> State {
        State::vacuum(Space::Vt3, CoordSystem::Original)
    }

    #[test]
    fn positive_mode_kills_vacuum() {
        let v = vt3_vac();
        let got = act(&OpExpr::from_mode(Mode::alpha(0, 2)), &v).unwrap();
        assert!(got.is_zero());
    }

    #[test]
    fn bracket_with_creation_gives_central_term() {
        // beta_{1,1} alpha^1_{-1} vac = K vac = vac
        let v = vt3_vac().dress(Mode::alpha(0, -1));
        let got = act(&OpExpr::from_mode(Mode::beta(0, 1)), &v).unwrap();
        assert_eq!(got, vt3_vac());
    }

    #[test]
    fn alpha3_zero_mode_scales_theta_sector() {
        let v = State::from_slot(Space::Vn, &gaussian_vector(2, 1).unwrap());
        let got = act(&OpExpr::from_mode(Mode::alpha(2, 0)), &v).unwrap();
        assert_eq!(got, v.scale(&Scalar::sigma().scale(&rat_int(2))));
    }

    #[test]
    fn x_zero_mode_on_vt3_is_space_violation() {
        let v = vt3_vac();
        let err = act(&OpExpr::from_mode(Mode::x(0, 0)), &v);
        assert!(matches!(err, Err(EngineError::SpaceViolation { .. })));
        // the same action is legal in Hc
        let w = State::vacuum(Space::Hc, CoordSystem::Original);
        assert!(act(&OpExpr::from_mode(Mode::x(0, 0)), &w).is_ok());
    }

    #[test]
    fn w_has_sector_eigenvalue() {
        let v = State::from_slot_term(
            Space::Hc,
            CoordSystem::Original,
            FTerm::xs_wave([1, 0, 0]),
            Scalar::one(),
        );
        let got = act(&OpExpr::from_mode(Mode::w(0)), &v).unwrap();
        assert_eq!(got, v.scale(&Scalar::sigma()));
        let got2 = act(&OpExpr::from_mode(Mode::w(1)), &v).unwrap();
        assert!(got2.is_zero());
    }

    #[test]
    fn act_respects_composition() {
        let family = generating_family(Space::Hc, CoordSystem::Original);
        let ops = [
            Mode::alpha(0, 1),
            Mode::alpha(2, -1),
            Mode::beta(0, 0),
            Mode::beta(1, -2),
            Mode::beta(2, 1),
            Mode::x(0, 0),
            Mode::xstar(2, 0),
        ];
        for v in &family {
            for a in &ops {
                for b in &ops {
                    let ab = OpExpr::from_monomial(
                        OpMonomial(vec![OpFactor::Mode(*a), OpFactor::Mode(*b)]),
                        Scalar::one(),
                    );
                    let lhs = act(&ab, v).unwrap();
                    let rhs =
                        act(&OpExpr::from_mode(*a), &act(&OpExpr::from_mode(*b), v).unwrap())
                            .unwrap();
                    assert_eq!(lhs, rhs, "composition {} {} on {}", a, b, v.render());
                }
            }
        }
    }

    #[test]
    fn commutator_realization_on_family() {
        // act([a,b], v) = act(a, act(b, v)) - act(b, act(a, v)) for primitive
        // pairs with small indices, on the Hc fixture family.
        let family = generating_family(Space::Hc, CoordSystem::Original);
        let mut modes: Vec<Mode> = Vec::new();
        for d in 0..3 {
            for n in -2..=2i64 {
                modes.push(Mode::alpha(d, n));
                modes.push(Mode::beta(d, n));
            }
            modes.push(Mode::x(d, 0));
            modes.push(Mode::xstar(d, 0));
        }
        for v in &family {
            for a in &modes {
                for b in &modes {
                    let lhs = act(&affine_commutator(a, b), v).unwrap();
                    let av = act(&OpExpr::from_mode(*a), v).unwrap();
                    let bv = act(&OpExpr::from_mode(*b), v).unwrap();
                    let rhs = act(&OpExpr::from_mode(*a), &bv)
                        .unwrap()
                        .sub(&act(&OpExpr::from_mode(*b), &av).unwrap());
                    assert_eq!(lhs, rhs, "[{}, {}] on {}", a, b, v.render());
                }
            }
        }
    }

    #[test]
    fn xstar_negative_mode_on_vacuum_expands() {
        // xs(3,-1) vac = b(3,-1) vac + 1/2 x^2_{-1} (x^1 vac) - 1/2 x^1_{-1} (x^2 vac)
        let v = State::vacuum(Space::Hc, CoordSystem::Polarized);
        let got = act(&OpExpr::from_mode(Mode::xstar(2, -1)), &v).unwrap();
        let x1 = State::from_slot_term(
            Space::Hc,
            CoordSystem::Polarized,
            FTerm::coordinate(0),
            Scalar::one(),
        );
        let x2 = State::from_slot_term(
            Space::Hc,
            CoordSystem::Polarized,
            FTerm::coordinate(1),
            Scalar::one(),
        );
        let expected = v
            .dress(Mode::beta(2, -1))
            .add(&x1.dress(Mode::alpha(1, -1)).scale(&Scalar::from_rat(rat(1, 2))))
            .add(&x2.dress(Mode::alpha(0, -1)).scale(&Scalar::from_rat(rat(-1, 2))));
        assert_eq!(got, expected);
    }

    #[test]
    fn render_parse_round_trip() {
        let states = vec![
            vt3_vac(),
            vt3_vac().dress(Mode::alpha(0, -1)).dress(Mode::beta(2, -3)),
            State::from_slot(Space::Vn, &gaussian_vector(2, 1).unwrap()).dress(Mode::alpha(1, -2)),
            State::from_slot_term(
                Space::Hc,
                CoordSystem::Original,
                FTerm::xs_wave([1, 0, 0]),
                Scalar::sigma(),
            ),
        ];
        for s in states {
            let text = s.render();
            let back = State::parse(&text).unwrap();
            assert_eq!(back, s, "{}", text);
        }
    }
}
