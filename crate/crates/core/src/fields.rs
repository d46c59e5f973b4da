//! The truncated logarithmic-field calculus.
//!
//! A field evaluates a state into a [`LogSeries`]: entries indexed by a
//! formal z-exponent and a power of `zeta` (the formal logarithm of z).
//! Every evaluation is complete below: all nonzero entries with integer
//! grade at most the requested top are present, because annihilation is
//! bounded by the state's energy. Truncation only happens upward (z) and in
//! the zeta degree, and is recorded in a flag. Derived operations widen the
//! tops they request from their inputs so that every retained entry is
//! exact.
//!
//! Exponential evaluation works factor by factor: the exponent of a vertex
//! operator here is a sum of mutually commuting elementary terms (the jets),
//! so the exponential splits into a product of single-term exponentials
//! applied in any fixed order. An annihilating jet only contracts with the
//! input state's own creators, never with jet-created modes, which bounds
//! every annihilator index by the input's energy and guarantees termination.

use std::collections::BTreeMap;
use std::fmt;

use crate::funcspace::{eps, CoordSystem, FTerm, FuncExpr, UPoly, UkPoly};
use crate::modealg::{Mode, ModeKind, OpExpr};
use crate::scalar::{binomial, factorial, rat, rat_int, Rat, Scalar, ZExp};
use crate::states::{act_unchecked, apply_one_mode, Space, State};
use crate::EngineError;

// ---------------------------------------------------------------------------
// Windows and series
// ---------------------------------------------------------------------------

/// Retained integer z-grades (relative to each entry's formal exponent
/// offset) and retained zeta degree.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize)]
pub struct Window {
    pub z_min: i64,
    pub z_max: i64,
    pub zeta_max: u32,
}

impl Window {
    pub fn new(z_min: i64, z_max: i64, zeta_max: u32) -> Self {
        assert!(z_min <= z_max, "window requires z_min <= z_max");
        Window {
            z_min,
            z_max,
            zeta_max,
        }
    }

    /// The default window: every verified identity is conclusive here.
    pub fn default_window() -> Self {
        Window::new(-6, 6, 3)
    }
}

/// Key of a series entry: formal z-exponent, zeta degree, and a formal
/// monodromy marker exponent (zero except after [`Field::Monodromy`]).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct SeriesKey {
    pub zexp: ZExp,
    pub zeta: u32,
    pub marker: ZExp,
}

impl SeriesKey {
    pub fn new(zexp: ZExp, zeta: u32) -> Self {
        SeriesKey {
            zexp,
            zeta,
            marker: ZExp::zero(),
        }
    }
}

/// A truncated logarithmic series with state coefficients: complete below,
/// exact up to `z_top` and `zeta_top`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LogSeries {
    pub space: Space,
    pub coords: CoordSystem,
    entries: BTreeMap<SeriesKey, State>,
    pub z_top: i64,
    pub zeta_top: u32,
    pub truncated: bool,
}

impl LogSeries {
    pub fn empty(space: Space, coords: CoordSystem, z_top: i64, zeta_top: u32) -> Self {
        LogSeries {
            space,
            coords,
            entries: BTreeMap::new(),
            z_top,
            zeta_top,
            truncated: false,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&SeriesKey, &State)> {
        self.entries.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add_entry(&mut self, key: SeriesKey, state: State) {
        if state.is_zero() {
            return;
        }
        if key.zexp.grade() > self.z_top || key.zeta > self.zeta_top {
            self.truncated = true;
            return;
        }
        match self.entries.get_mut(&key) {
            Some(slot) => {
                slot.add_assign(&state);
                if slot.is_zero() {
                    self.entries.remove(&key);
                }
            }
            None => {
                self.entries.insert(key, state);
            }
        }
    }

    pub fn add(&self, other: &LogSeries) -> LogSeries {
        let mut out = self.clone();
        out.truncated |= other.truncated;
        for (k, s) in &other.entries {
            out.add_entry(k.clone(), s.clone());
        }
        out
    }

    pub fn scale(&self, c: &Scalar) -> LogSeries {
        let mut out = LogSeries::empty(self.space, self.coords, self.z_top, self.zeta_top);
        out.truncated = self.truncated;
        for (k, s) in &self.entries {
            out.add_entry(k.clone(), s.scale(c));
        }
        out
    }

    pub fn sub(&self, other: &LogSeries) -> LogSeries {
        self.add(&other.scale(&Scalar::from_int(-1)))
    }

    pub fn map_states<F>(&self, mut f: F) -> Result<LogSeries, EngineError>
    where
        F: FnMut(&State) -> Result<State, EngineError>,
    {
        let mut out = LogSeries::empty(self.space, self.coords, self.z_top, self.zeta_top);
        out.truncated = self.truncated;
        for (k, s) in &self.entries {
            out.add_entry(k.clone(), f(s)?);
        }
        Ok(out)
    }

    /// Smallest integer grade with a nonzero entry.
    pub fn min_grade(&self) -> Option<i64> {
        self.entries.keys().map(|k| k.zexp.grade()).min()
    }

    /// Nonzero entries whose integer grade lies inside the window.
    pub fn masked(&self, w: &Window) -> Vec<(&SeriesKey, &State)> {
        self.entries
            .iter()
            .filter(|(k, _)| {
                let g = k.zexp.grade();
                g >= w.z_min && g <= w.z_max && k.zeta <= w.zeta_max
            })
            .collect()
    }

    /// Exact equality of the retained entries inside the window.
    pub fn equal_within(&self, other: &LogSeries, w: &Window) -> bool {
        self.difference_within(other, w).is_empty()
    }

    /// Entries of `self - other` inside the window, fully normalized.
    pub fn difference_within(&self, other: &LogSeries, w: &Window) -> Vec<(SeriesKey, State)> {
        let mut diff: BTreeMap<SeriesKey, State> = BTreeMap::new();
        for (k, s) in self.masked(w) {
            diff.insert(k.clone(), s.clone());
        }
        for (k, s) in other.masked(w) {
            match diff.get_mut(k) {
                Some(e) => {
                    *e = e.sub(s);
                }
                None => {
                    diff.insert(k.clone(), s.neg());
                }
            }
        }
        diff.into_iter().filter(|(_, s)| !s.is_zero()).collect()
    }

    /// JSON value of the window-masked series, sorted.
    pub fn to_json(&self, w: &Window) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .masked(w)
            .into_iter()
            .map(|(k, s)| {
                let mut obj = serde_json::Map::new();
                obj.insert("z".into(), k.zexp.render().into());
                obj.insert("zeta".into(), k.zeta.into());
                if !k.marker.is_zero() {
                    obj.insert(
                        "monodromy_marker".into(),
                        format!("exp(sigma*({}))", k.marker.render()).into(),
                    );
                }
                obj.insert("state".into(), s.render().into());
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "truncated": self.truncated, "entries": rows })
    }
}

/// A two-variable series for brackets, propagators and n-products.
///
/// Entries above the per-variable tops would mix in sources beyond the
/// computed quadrant, so they are dropped (and flagged) to keep every
/// retained entry exact.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TwoVarSeries {
    pub space: Space,
    pub coords: CoordSystem,
    entries: BTreeMap<(ZExp, u32, ZExp, u32), State>,
    pub z1_top: i64,
    pub z2_top: i64,
    pub truncated: bool,
}

impl TwoVarSeries {
    pub fn empty(space: Space, coords: CoordSystem, z1_top: i64, z2_top: i64) -> Self {
        TwoVarSeries {
            space,
            coords,
            entries: BTreeMap::new(),
            z1_top,
            z2_top,
            truncated: false,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(ZExp, u32, ZExp, u32), &State)> {
        self.entries.iter()
    }

    fn add_entry(&mut self, key: (ZExp, u32, ZExp, u32), state: State) {
        if state.is_zero() {
            return;
        }
        if key.0.grade() > self.z1_top || key.2.grade() > self.z2_top {
            self.truncated = true;
            return;
        }
        match self.entries.get_mut(&key) {
            Some(slot) => {
                slot.add_assign(&state);
                if slot.is_zero() {
                    self.entries.remove(&key);
                }
            }
            None => {
                self.entries.insert(key, state);
            }
        }
    }

    pub fn sub(&self, other: &TwoVarSeries) -> TwoVarSeries {
        let mut out = self.clone();
        out.truncated |= other.truncated;
        for (k, s) in &other.entries {
            out.add_entry(k.clone(), s.neg());
        }
        out
    }

    /// Multiply by (z1 - z2)^N. The tops stay fixed: a product entry above
    /// them would need sources beyond the computed quadrant.
    pub fn mul_z1_minus_z2_pow(&self, n: u32) -> TwoVarSeries {
        let mut out = TwoVarSeries::empty(self.space, self.coords, self.z1_top, self.z2_top);
        out.truncated = self.truncated;
        for ((e1, d1, e2, d2), s) in &self.entries {
            for j in 0..=n {
                // binom(n, j) z1^j (-z2)^(n-j)
                let sign = if (n - j) % 2 == 0 { 1 } else { -1 };
                let c = Scalar::from_rat(binomial(n, j) * rat_int(sign));
                out.add_entry(
                    (
                        e1.add_grade(j as i64),
                        *d1,
                        e2.add_grade((n - j) as i64),
                        *d2,
                    ),
                    s.scale(&c),
                );
            }
        }
        out
    }

    /// One application of D_{z1} = d/dz1 + z1^{-1} d/dzeta1.
    pub fn d_z1(&self) -> TwoVarSeries {
        let mut out = TwoVarSeries::empty(self.space, self.coords, self.z1_top, self.z2_top);
        out.truncated = self.truncated;
        for ((e1, d1, e2, d2), s) in &self.entries {
            let down = e1.add_grade(-1);
            let c = e1.to_scalar();
            if !c.is_zero() {
                out.add_entry((down.clone(), *d1, e2.clone(), *d2), s.scale(&c));
            }
            if *d1 > 0 {
                out.add_entry(
                    (down, d1 - 1, e2.clone(), *d2),
                    s.scale(&Scalar::from_int(*d1 as i64)),
                );
            }
        }
        out
    }

    /// Divided power D_{z1}^{(k)} = D_{z1}^k / k!.
    pub fn d_z1_divided(&self, k: u32) -> TwoVarSeries {
        let mut cur = self.clone();
        for _ in 0..k {
            cur = cur.d_z1();
        }
        let inv = Scalar::from_rat(Rat::from_integer(1.into()) / factorial(k));
        let mut out = TwoVarSeries::empty(self.space, self.coords, self.z1_top, self.z2_top);
        out.truncated = cur.truncated;
        for (key, s) in &cur.entries {
            out.add_entry(key.clone(), s.scale(&inv));
        }
        out
    }

    /// Restrict to the diagonal z1 = z2 = z, zeta1 = zeta2 = zeta.
    pub fn diagonal(&self, z_top: i64, zeta_top: u32) -> LogSeries {
        let mut out = LogSeries::empty(self.space, self.coords, z_top, zeta_top);
        out.truncated = self.truncated;
        for ((e1, d1, e2, d2), s) in &self.entries {
            out.add_entry(SeriesKey::new(e1.add(e2), d1 + d2), s.clone());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// A logarithmic field: a named, deterministic, linear evaluation rule.
#[derive(Clone, PartialEq, Debug)]
pub enum Field {
    Zero,
    /// Y(vacuum) = id.
    Identity,
    Alpha(usize),
    Beta(usize),
    /// x^i(z) = W^i zeta + sum_n x^i_n z^{-n}.
    X(usize),
    /// x^i(z) - W^i zeta.
    XTilde(usize),
    /// Original-coordinates x*_i(z) with its log terms.
    XStarOrig(usize),
    /// Polarized x*_3(z), including the quadratic and zeta-quadratic terms.
    XStar3Pol,
    /// The plain mode series sum_n xs_{3,n} z^{-n}.
    XStarTilde3,
    /// The normally ordered exponential of the x-plane wave with frequency rho.
    Exp([i64; 3]),
    /// The theta vertex operator of sector (n, m); payload 1 is the field of
    /// the Gaussian cyclic vector of the sector.
    Theta { n: i64, m: i64, payload: UPoly },
    Dz(Box<Field>),
    Dzeta(Box<Field>),
    /// Entries of nonnegative integer grade (modes n <= 0 and zeta terms).
    CreationPart(Box<Field>),
    /// Entries of negative integer grade (modes n >= 1).
    AnnihilationPart(Box<Field>),
    /// Normally ordered product at coincident arguments.
    Non(Box<Field>, Box<Field>),
    /// n-product of two fields with a verified locality order.
    NProduct {
        a: Box<Field>,
        b: Box<Field>,
        n: i64,
        locality: u32,
    },
    Sum(Vec<(Scalar, Field)>),
    /// The plain formal derivative d/dzeta (entrywise, no z shift).
    DelZeta(Box<Field>),
    /// zeta -> zeta + sigma with a formal factor on noninteger exponents.
    Monodromy(Box<Field>),
}

impl Field {
    pub fn name(&self) -> String {
        match self {
            Field::Zero => "0".into(),
            Field::Identity => "id".into(),
            Field::Alpha(i) => format!("alpha{}(z)", i + 1),
            Field::Beta(i) => format!("beta{}(z)", i + 1),
            Field::X(i) => format!("x{}(z)", i + 1),
            Field::XTilde(i) => format!("x~{}(z)", i + 1),
            Field::XStarOrig(i) => format!("xs{}(z)", i + 1),
            Field::XStar3Pol => "xs3_pol(z)".into(),
            Field::XStarTilde3 => "xs~3(z)".into(),
            Field::Exp(rho) => format!("E[{},{},{}](z)", rho[0], rho[1], rho[2]),
            Field::Theta { n, m, payload } => {
                format!("Y(theta({},{},p={}))(z)", n, m, payload.render())
            }
            Field::Dz(f) => format!("Dz {}", f.name()),
            Field::Dzeta(f) => format!("Dzeta {}", f.name()),
            Field::CreationPart(f) => format!("({})+", f.name()),
            Field::AnnihilationPart(f) => format!("({})-", f.name()),
            Field::Non(a, b) => format!(":{} {}:", a.name(), b.name()),
            Field::NProduct { a, b, n, .. } => format!("({})_({})({})", a.name(), n, b.name()),
            Field::Sum(parts) => parts
                .iter()
                .map(|(c, f)| format!("({})*{}", c.render(), f.name()))
                .collect::<Vec<_>>()
                .join(" + "),
            Field::DelZeta(f) => format!("dzeta {}", f.name()),
            Field::Monodromy(f) => format!("monodromy {}", f.name()),
        }
    }

    /// Whether the split into creation and annihilation parts is defined.
    pub fn splittable(&self) -> bool {
        !matches!(self, Field::Monodromy(_))
    }

    /// The split along nonnegative / negative integer grades.
    pub fn split(&self) -> Result<(Field, Field), EngineError> {
        if !self.splittable() {
            return Err(EngineError::NoSplitMetadata(self.name()));
        }
        Ok((
            Field::CreationPart(Box::new(self.clone())),
            Field::AnnihilationPart(Box::new(self.clone())),
        ))
    }

    pub fn dz(self) -> Field {
        Field::Dz(Box::new(self))
    }

    pub fn dzeta(self) -> Field {
        Field::Dzeta(Box::new(self))
    }

    /// Divided derivative D_z^{(k)} = D_z^k / k!.
    pub fn dz_divided(self, k: u32) -> Field {
        let mut f = self;
        for _ in 0..k {
            f = f.dz();
        }
        if k <= 1 {
            f
        } else {
            Field::Sum(vec![(
                Scalar::from_rat(Rat::from_integer(1.into()) / factorial(k)),
                f,
            )])
        }
    }

    /// Evaluate on a state. Complete below; exact up to the requested tops.
    pub fn eval_raw(&self, v: &State, z_top: i64, zeta_top: u32) -> Result<LogSeries, EngineError> {
        if v.is_zero() {
            return Ok(LogSeries::empty(v.space, v.coords, z_top, zeta_top));
        }
        match self {
            Field::Zero => Ok(LogSeries::empty(v.space, v.coords, z_top, zeta_top)),
            Field::Identity => {
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                out.add_entry(SeriesKey::new(ZExp::zero(), 0), v.clone());
                Ok(out)
            }
            Field::Alpha(i) => mode_series(v, z_top, zeta_top, |g| {
                Some((Mode::alpha(*i, -1 - g), Scalar::one()))
            }),
            Field::Beta(i) => mode_series(v, z_top, zeta_top, |g| {
                Some((Mode::beta(*i, -1 - g), Scalar::one()))
            }),
            Field::X(i) => {
                let mut out = x_tilde_series(v, *i, z_top, zeta_top)?;
                if zeta_top >= 1 {
                    let wv = act_unchecked(&OpExpr::from_mode(Mode::alpha(*i, 0)), v)?;
                    out.add_entry(SeriesKey::new(ZExp::zero(), 1), wv);
                } else {
                    out.truncated = true;
                }
                Ok(out)
            }
            Field::XTilde(i) => x_tilde_series(v, *i, z_top, zeta_top),
            Field::XStarOrig(i) => {
                // P_i zeta + sum_n xs_{i,n} z^{-n} + (zeta/2) eps_{ijk} W^j x^k(z)
                let mut out = mode_series(v, z_top, zeta_top, |g| {
                    Some((Mode::xstar(*i, -g), Scalar::one()))
                })?;
                if zeta_top >= 1 {
                    let pv = act_unchecked(&OpExpr::from_mode(Mode::p(*i)), v)?;
                    out.add_entry(SeriesKey::new(ZExp::zero(), 1), pv);
                } else {
                    out.truncated = true;
                }
                for j in 0..3 {
                    for k in 0..3 {
                        let e = eps(*i, j, k);
                        if e == 0 {
                            continue;
                        }
                        let xk = Field::X(k).eval_raw(v, z_top, zeta_top.saturating_sub(1))?;
                        out.truncated |= xk.truncated;
                        for (key, s) in xk.entries() {
                            if key.zeta + 1 > zeta_top {
                                out.truncated = true;
                                continue;
                            }
                            let wj = act_unchecked(&OpExpr::from_mode(Mode::alpha(j, 0)), s)?;
                            out.add_entry(
                                SeriesKey::new(key.zexp.clone(), key.zeta + 1),
                                wj.scale(&Scalar::from_rat(rat(e, 2))),
                            );
                        }
                    }
                }
                Ok(out)
            }
            Field::XStarTilde3 => mode_series(v, z_top, zeta_top, |g| {
                Some((Mode::xstar(2, -g), Scalar::one()))
            }),
            Field::XStar3Pol => {
                // P_3 zeta + xs~3(z) + zeta W^1 x~2(z) + (1/2) x~1(z) x~2(z)
                //   + (1/2) W^1 W^2 zeta^2
                let mut out = mode_series(v, z_top, zeta_top, |g| {
                    Some((Mode::xstar(2, -g), Scalar::one()))
                })?;
                if zeta_top >= 1 {
                    let pv = act_unchecked(&OpExpr::from_mode(Mode::p(2)), v)?;
                    out.add_entry(SeriesKey::new(ZExp::zero(), 1), pv);
                    let x2 = Field::XTilde(1).eval_raw(v, z_top, zeta_top - 1)?;
                    out.truncated |= x2.truncated;
                    for (key, s) in x2.entries() {
                        let w1 = act_unchecked(&OpExpr::from_mode(Mode::alpha(0, 0)), s)?;
                        out.add_entry(SeriesKey::new(key.zexp.clone(), key.zeta + 1), w1);
                    }
                } else {
                    out.truncated = true;
                }
                if zeta_top >= 2 {
                    let w12 = act_unchecked(
                        &OpExpr::from_mode(Mode::alpha(0, 0)),
                        &act_unchecked(&OpExpr::from_mode(Mode::alpha(1, 0)), v)?,
                    )?;
                    out.add_entry(
                        SeriesKey::new(ZExp::zero(), 2),
                        w12.scale(&Scalar::from_rat(rat(1, 2))),
                    );
                }
                // (1/2) x~1(z) x~2(z): bounded diagonal product; an x~1
                // annihilator only pairs with the state's beta content, so
                // the inner factor's top is z_top + energy.
                let e = v.energy();
                let s2 = Field::XTilde(1).eval_raw(v, z_top + e + 2, zeta_top)?;
                out.truncated |= s2.truncated;
                for (k2, u) in s2.entries() {
                    let g2 = k2.zexp.grade();
                    let s1 = Field::XTilde(0).eval_raw(u, z_top - g2, zeta_top)?;
                    for (k1, w) in s1.entries() {
                        out.add_entry(
                            SeriesKey::new(k1.zexp.add(&k2.zexp), k1.zeta + k2.zeta),
                            w.scale(&Scalar::from_rat(rat(1, 2))),
                        );
                    }
                }
                Ok(out)
            }
            Field::Exp(rho) => exp_eval(rho, v, z_top, zeta_top),
            Field::Theta { n, m, payload } => theta_eval(*n, *m, payload, v, z_top, zeta_top),
            Field::Dz(f) => {
                let inner = f.eval_raw(v, z_top + 1, zeta_top + 1)?;
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                out.truncated = inner.truncated;
                for (key, s) in inner.entries() {
                    let down = key.zexp.add_grade(-1);
                    let c = key.zexp.to_scalar();
                    if !c.is_zero() {
                        let mut k2 = key.clone();
                        k2.zexp = down.clone();
                        out.add_entry(k2, s.scale(&c));
                    }
                    if key.zeta > 0 {
                        let mut k2 = key.clone();
                        k2.zexp = down;
                        k2.zeta = key.zeta - 1;
                        out.add_entry(k2, s.scale(&Scalar::from_int(key.zeta as i64)));
                    }
                }
                Ok(out)
            }
            Field::Dzeta(f) => {
                let inner = f.eval_raw(v, z_top, zeta_top + 1)?;
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                out.truncated = inner.truncated;
                for (key, s) in inner.entries() {
                    let c = key.zexp.to_scalar();
                    if !c.is_zero() {
                        out.add_entry(key.clone(), s.scale(&c));
                    }
                    if key.zeta > 0 {
                        let mut k2 = key.clone();
                        k2.zeta = key.zeta - 1;
                        out.add_entry(k2, s.scale(&Scalar::from_int(key.zeta as i64)));
                    }
                }
                Ok(out)
            }
            Field::CreationPart(f) => {
                let inner = f.eval_raw(v, z_top, zeta_top)?;
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                out.truncated = inner.truncated;
                for (key, s) in inner.entries() {
                    if key.zexp.grade() >= 0 {
                        out.add_entry(key.clone(), s.clone());
                    }
                }
                Ok(out)
            }
            Field::AnnihilationPart(f) => {
                let inner = f.eval_raw(v, z_top.min(-1), zeta_top)?;
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                out.truncated = inner.truncated;
                for (key, s) in inner.entries() {
                    if key.zexp.grade() <= -1 {
                        out.add_entry(key.clone(), s.clone());
                    }
                }
                Ok(out)
            }
            Field::Non(a, b) => {
                // :a b:(z) = a_+(z) b(z) + b(z) a_-(z), diagonal taken after
                // expansion; both compositions have finite antidiagonals.
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                let sb = b.eval_raw(v, z_top, zeta_top)?;
                out.truncated |= sb.truncated;
                for (k2, u) in sb.entries() {
                    let g2 = k2.zexp.grade();
                    let sa = a.eval_raw(u, z_top - g2, zeta_top)?;
                    out.truncated |= sa.truncated;
                    for (k1, w) in sa.entries() {
                        if k1.zexp.grade() < 0 {
                            continue;
                        }
                        if k1.zeta + k2.zeta > zeta_top {
                            out.truncated = true;
                            continue;
                        }
                        out.add_entry(
                            SeriesKey::new(k1.zexp.add(&k2.zexp), k1.zeta + k2.zeta),
                            w.clone(),
                        );
                    }
                }
                let sa_min = a.eval_raw(v, -1, zeta_top)?;
                out.truncated |= sa_min.truncated;
                for (k1, u) in sa_min.entries() {
                    if k1.zexp.grade() >= 0 {
                        continue;
                    }
                    let g1 = k1.zexp.grade();
                    let sb2 = b.eval_raw(u, z_top - g1, zeta_top)?;
                    out.truncated |= sb2.truncated;
                    for (k2, w) in sb2.entries() {
                        if k1.zeta + k2.zeta > zeta_top {
                            out.truncated = true;
                            continue;
                        }
                        out.add_entry(
                            SeriesKey::new(k1.zexp.add(&k2.zexp), k1.zeta + k2.zeta),
                            w.clone(),
                        );
                    }
                }
                Ok(out)
            }
            Field::NProduct { a, b, n, locality } => {
                n_product_eval(a, b, *n, *locality, v, z_top, zeta_top, false)
            }
            Field::Sum(parts) => {
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                for (c, f) in parts {
                    out = out.add(&f.eval_raw(v, z_top, zeta_top)?.scale(c));
                }
                Ok(out)
            }
            Field::DelZeta(f) => {
                let inner = f.eval_raw(v, z_top, zeta_top + 1)?;
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                out.truncated = inner.truncated;
                for (key, s) in inner.entries() {
                    if key.zeta > 0 {
                        let mut k2 = key.clone();
                        k2.zeta = key.zeta - 1;
                        out.add_entry(k2, s.scale(&Scalar::from_int(key.zeta as i64)));
                    }
                }
                Ok(out)
            }
            Field::Monodromy(f) => {
                let inner = f.eval_raw(v, z_top, zeta_top)?;
                let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
                out.truncated = inner.truncated;
                for (key, s) in inner.entries() {
                    // zeta -> zeta + sigma
                    for j in 0..=key.zeta {
                        let c = Scalar::monomial(key.zeta - j, 0, binomial(key.zeta, j));
                        let mut k2 = key.clone();
                        k2.zeta = j;
                        // e^{sigma * zexp}: exactly 1 on integer exponents,
                        // otherwise kept as a formal marker.
                        let formal = key.zexp.formal_part();
                        if !formal.is_zero() {
                            k2.marker = k2.marker.add(&formal);
                        }
                        out.add_entry(k2, s.scale(&c));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Evaluate up to the window tops (masking happens at comparison time).
    pub fn eval(&self, v: &State, w: &Window) -> Result<LogSeries, EngineError> {
        self.eval_raw(v, w.z_max, w.zeta_max)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Series with one mode per grade: grade g carries `mode_at(g)` applied to v.
fn mode_series<F>(
    v: &State,
    z_top: i64,
    zeta_top: u32,
    mode_at: F,
) -> Result<LogSeries, EngineError>
where
    F: Fn(i64) -> Option<(Mode, Scalar)>,
{
    let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
    out.truncated = true; // the creation tail continues above every finite top
    let bottom = -(v.energy() + 2);
    for g in bottom..=z_top {
        if let Some((mode, c)) = mode_at(g) {
            let s = act_unchecked(&OpExpr::from_mode(mode), v)?;
            out.add_entry(SeriesKey::new(ZExp::from_grade(g), 0), s.scale(&c));
        }
    }
    Ok(out)
}

fn x_tilde_series(v: &State, i: usize, z_top: i64, zeta_top: u32) -> Result<LogSeries, EngineError> {
    mode_series(v, z_top, zeta_top, |g| Some((Mode::x(i, -g), Scalar::one())))
}

// ---------------------------------------------------------------------------
// Exponential evaluation machinery
// ---------------------------------------------------------------------------

/// One elementary commuting term of a vertex-operator exponent.
#[derive(Clone, Debug)]
struct JetTerm {
    grade: i64,
    zeta: u32,
    k_deg: u32,
    coeff: Scalar,
    ops: Vec<JetOp>,
}

#[derive(Clone, Debug)]
enum JetOp {
    Mode(Mode),
    MulCoord(usize),
}

impl JetTerm {
    fn apply_once(&self, v: &State) -> Result<State, EngineError> {
        let mut cur: Option<State> = None;
        for op in self.ops.iter().rev() {
            let stage = cur.as_ref().unwrap_or(v);
            if stage.is_zero() {
                break;
            }
            cur = Some(match op {
                JetOp::Mode(m) => apply_one_mode(m, stage)?,
                JetOp::MulCoord(slot) => stage.mul_slot(&FuncExpr::from_term(
                    stage.coords,
                    FTerm::coordinate(*slot),
                    Scalar::one(),
                ))?,
            });
        }
        Ok(match cur {
            Some(s) => s.scale(&self.coeff),
            None => v.scale(&self.coeff),
        })
    }
}

/// Intermediate representation during exponential evaluation: entries keyed
/// by exponent, zeta degree and the power of the formal theta index k.
#[derive(Clone)]
struct Working {
    entries: BTreeMap<(ZExp, u32, u32), State>,
    truncated: bool,
}

impl Working {
    fn start(v: &State) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert((ZExp::zero(), 0u32, 0u32), v.clone());
        Working {
            entries,
            truncated: false,
        }
    }

    fn add(&mut self, key: (ZExp, u32, u32), s: State) {
        if s.is_zero() {
            return;
        }
        match self.entries.get_mut(&key) {
            Some(e) => {
                e.add_assign(&s);
                if e.is_zero() {
                    self.entries.remove(&key);
                }
            }
            None => {
                self.entries.insert(key, s);
            }
        }
    }

    /// Multiply by exp(jet): expand the single-term exponential on every
    /// entry, truncating at the tops.
    fn apply_exp(
        mut self,
        jet: &JetTerm,
        z_top: i64,
        zeta_top: u32,
    ) -> Result<Working, EngineError> {
        let mut out = Working {
            entries: BTreeMap::new(),
            truncated: self.truncated,
        };
        for ((zexp, zeta, kd), state) in std::mem::take(&mut self.entries) {
            out.add((zexp.clone(), zeta, kd), state.clone());
            let mut cur = state;
            let mut j: u32 = 0;
            loop {
                j += 1;
                if j > 400 {
                    return Err(EngineError::InternalInconsistency(
                        "runaway jet exponential".into(),
                    ));
                }
                let new_grade = zexp.grade() + jet.grade * j as i64;
                let new_zeta = zeta + jet.zeta * j;
                if new_grade > z_top || new_zeta > zeta_top {
                    if !cur.is_zero() && !jet.apply_once(&cur)?.is_zero() {
                        out.truncated = true;
                    }
                    break;
                }
                cur = jet.apply_once(&cur)?;
                if cur.is_zero() {
                    break;
                }
                let inv = Scalar::from_rat(Rat::from_integer(1.into()) / rat_int(j as i64));
                cur = cur.scale(&inv);
                out.add(
                    (
                        zexp.add_grade(jet.grade * j as i64),
                        new_zeta,
                        kd + jet.k_deg * j,
                    ),
                    cur.clone(),
                );
            }
        }
        Ok(out)
    }

    /// Multiply by a polynomial in a linear operator: sum_d c_d T^d where T
    /// is a sum of jet terms, each applied once per power.
    fn apply_polynomial(
        self,
        coeffs: &[(u32, Scalar)],
        t_jets: &[JetTerm],
        z_top: i64,
        zeta_top: u32,
    ) -> Result<Working, EngineError> {
        let max_d = coeffs.iter().map(|(d, _)| *d).max().unwrap_or(0);
        let mut powers: Vec<Working> = vec![self];
        for _ in 0..max_d {
            let prev = powers.last().unwrap();
            let mut next = Working {
                entries: BTreeMap::new(),
                truncated: prev.truncated,
            };
            for ((zexp, zeta, kd), state) in &prev.entries {
                for jet in t_jets {
                    let new_grade = zexp.grade() + jet.grade;
                    let new_zeta = zeta + jet.zeta;
                    if new_grade > z_top || new_zeta > zeta_top {
                        if !jet.apply_once(state)?.is_zero() {
                            next.truncated = true;
                        }
                        continue;
                    }
                    let image = jet.apply_once(state)?;
                    next.add((zexp.add_grade(jet.grade), new_zeta, kd + jet.k_deg), image);
                }
            }
            powers.push(next);
        }
        let mut out = Working {
            entries: BTreeMap::new(),
            truncated: powers.iter().any(|w| w.truncated),
        };
        for (d, c) in coeffs {
            for (key, s) in &powers[*d as usize].entries {
                out.add(key.clone(), s.scale(c));
            }
        }
        Ok(out)
    }

    fn add_offset(mut self, off: &ZExp) -> Working {
        if off.is_zero() {
            return self;
        }
        let mut entries = BTreeMap::new();
        for ((zexp, zeta, kd), s) in std::mem::take(&mut self.entries) {
            entries.insert((zexp.add(off), zeta, kd), s);
        }
        Working {
            entries,
            truncated: self.truncated,
        }
    }
}

/// Creation index cap: creating jets can climb from the lowest reachable
/// grade up to the top.
fn creation_cap(z_top: i64, energy: i64) -> i64 {
    (z_top + energy + 2).max(0)
}

/// E_rho(z) on a single sector component.
fn exp_eval_component(
    rho: &[i64; 3],
    omega: [i64; 3],
    v: &State,
    z_top: i64,
    zeta_top: u32,
) -> Result<Working, EngineError> {
    let e = v.energy();
    let mut working = Working::start(v);
    // annihilating part: sigma rho_i x^i_s, s in [1, E]
    for i in 0..3 {
        if rho[i] == 0 {
            continue;
        }
        let c = Scalar::sigma().scale(&rat_int(rho[i]));
        for s in 1..=e {
            let jet = JetTerm {
                grade: -s,
                zeta: 0,
                k_deg: 0,
                coeff: c.clone(),
                ops: vec![JetOp::Mode(Mode::x(i, s))],
            };
            working = working.apply_exp(&jet, z_top, zeta_top)?;
        }
    }
    // zero modes: slot multiplication by the plane wave
    let wave = FuncExpr::from_term(v.coords, FTerm::x_wave(*rho), Scalar::one());
    let mut shifted = Working {
        entries: BTreeMap::new(),
        truncated: working.truncated,
    };
    for (key, s) in &working.entries {
        shifted.add(key.clone(), s.mul_slot(&wave)?);
    }
    working = shifted;
    // z^{sigma rho.W}: the diagonalized log factor
    let dot: i64 = (0..3).map(|i| rho[i] * omega[i]).sum();
    working = working.add_offset(&ZExp::sigma_multiple(2, dot));
    // creating part: sigma rho_i x^i_{-s}
    for i in 0..3 {
        if rho[i] == 0 {
            continue;
        }
        let c = Scalar::sigma().scale(&rat_int(rho[i]));
        for s in 1..=creation_cap(z_top, e) {
            let jet = JetTerm {
                grade: s,
                zeta: 0,
                k_deg: 0,
                coeff: c.clone(),
                ops: vec![JetOp::Mode(Mode::x(i, -s))],
            };
            working = working.apply_exp(&jet, z_top, zeta_top)?;
        }
    }
    Ok(working)
}

fn working_to_series(
    w: Working,
    space: Space,
    coords: CoordSystem,
    z_top: i64,
    zeta_top: u32,
) -> Result<LogSeries, EngineError> {
    let mut out = LogSeries::empty(space, coords, z_top, zeta_top);
    out.truncated = w.truncated;
    for ((zexp, zeta, kd), s) in w.entries {
        if kd != 0 {
            return Err(EngineError::InternalInconsistency(
                "unabsorbed formal theta index".into(),
            ));
        }
        out.add_entry(SeriesKey::new(zexp, zeta), s);
    }
    Ok(out)
}

fn exp_eval(
    rho: &[i64; 3],
    v: &State,
    z_top: i64,
    zeta_top: u32,
) -> Result<LogSeries, EngineError> {
    let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
    for (omega, comp) in v.sector_components() {
        let w = exp_eval_component(rho, omega, &comp, z_top, zeta_top)?;
        out = out.add(&working_to_series(w, v.space, v.coords, z_top, zeta_top)?);
    }
    Ok(out)
}

/// The theta vertex operator on a single sector component.
///
/// The exponent decomposes into mutually commuting elementary terms. The
/// zero-mode block assembles theta factors in the slot (absorbing the powers
/// of the formal index k), the scalar log factors diagonalize into exponent
/// offsets where the sector eigenvalues allow, and everything else expands
/// as capped jet exponentials.
fn theta_eval_component(
    n: i64,
    m: i64,
    payload: &UPoly,
    omega: [i64; 3],
    v: &State,
    z_top: i64,
    zeta_top: u32,
) -> Result<Working, EngineError> {
    let e = v.energy();
    let w1 = omega[0]; // W^1 acts by sigma * w1 on this component
    let w2 = omega[1];
    let sigma = Scalar::sigma();
    let sig_n = sigma.scale(&rat_int(n));
    let cap = creation_cap(z_top, e);

    let mut jets: Vec<JetTerm> = Vec::new();
    // sigma n xs~3(z), nonzero modes
    for s in -cap..=e {
        if s == 0 {
            continue;
        }
        jets.push(JetTerm {
            grade: -s,
            zeta: 0,
            k_deg: 0,
            coeff: sig_n.clone(),
            ops: vec![JetOp::Mode(Mode::xstar(2, s))],
        });
    }
    // sigma (n k + m) x~1(z) and -2 k x~2(z), nonzero modes
    for s in -cap..=e {
        if s == 0 {
            continue;
        }
        if m != 0 {
            jets.push(JetTerm {
                grade: -s,
                zeta: 0,
                k_deg: 0,
                coeff: sigma.scale(&rat_int(m)),
                ops: vec![JetOp::Mode(Mode::x(0, s))],
            });
        }
        jets.push(JetTerm {
            grade: -s,
            zeta: 0,
            k_deg: 1,
            coeff: sig_n.clone(),
            ops: vec![JetOp::Mode(Mode::x(0, s))],
        });
        jets.push(JetTerm {
            grade: -s,
            zeta: 0,
            k_deg: 1,
            coeff: Scalar::from_int(-2),
            ops: vec![JetOp::Mode(Mode::x(1, s))],
        });
    }
    // (sigma n / 2) x~1 x~2 and -(x~2)^2, all mode pairs except (0,0)
    let xop = |dir: usize, s: i64| {
        if s == 0 {
            JetOp::MulCoord(dir)
        } else {
            JetOp::Mode(Mode::x(dir, s))
        }
    };
    for s1 in -cap..=e {
        for s2 in -cap..=e {
            if s1 == 0 && s2 == 0 {
                continue;
            }
            let grade = -s1 - s2;
            if grade > cap {
                continue;
            }
            jets.push(JetTerm {
                grade,
                zeta: 0,
                k_deg: 0,
                coeff: sig_n.scale(&rat(1, 2)),
                ops: vec![xop(0, s1), xop(1, s2)],
            });
            jets.push(JetTerm {
                grade,
                zeta: 0,
                k_deg: 0,
                coeff: Scalar::from_int(-1),
                ops: vec![xop(1, s1), xop(1, s2)],
            });
        }
    }
    // zeta-carrying field terms: (sigma n W^1 - 2 W^2) zeta x~2(z), with the
    // W eigenvalues substituted on this component
    let cross = sig_n
        .mul(&sigma.scale(&rat_int(w1)))
        .add(&sigma.scale(&rat_int(-2 * w2)));
    if !cross.is_zero() {
        for s in -cap..=e {
            jets.push(JetTerm {
                grade: -s,
                zeta: 1,
                k_deg: 0,
                coeff: cross.clone(),
                ops: vec![xop(1, s)],
            });
        }
    }
    // scalar zeta terms carrying k: (sigma n W^1 - 2 W^2) k zeta
    if !cross.is_zero() {
        jets.push(JetTerm {
            grade: 0,
            zeta: 1,
            k_deg: 1,
            coeff: cross.clone(),
            ops: vec![],
        });
    }
    // scalar zeta^2 terms: -(W^2)^2 + (sigma n / 2) W^1 W^2
    let zeta2 = sigma
        .scale(&rat_int(w2))
        .mul(&sigma.scale(&rat_int(-w2)))
        .add(
            &sig_n
                .scale(&rat(1, 2))
                .mul(&sigma.scale(&rat_int(w1)))
                .mul(&sigma.scale(&rat_int(w2))),
        );
    if !zeta2.is_zero() {
        jets.push(JetTerm {
            grade: 0,
            zeta: 2,
            k_deg: 0,
            coeff: zeta2,
            ops: vec![],
        });
    }

    let mut working = Working::start(v);
    for jet in &jets {
        working = working.apply_exp(jet, z_top, zeta_top)?;
    }

    // sigma n P_3 zeta: diagonalize when P_3 acts as a fitting scalar
    let p3v = act_unchecked(&OpExpr::from_mode(Mode::p(2)), v)?;
    let mut p3_offset: Option<ZExp> = None;
    if p3v.is_zero() {
        p3_offset = Some(ZExp::zero());
    } else if let Some(lambda) = scalar_ratio(&p3v, v) {
        if let Some(z) = sig_n.mul(&lambda).as_zexp() {
            p3_offset = Some(z);
        }
    }
    match p3_offset {
        Some(off) => {
            working = working.add_offset(&off);
        }
        None => {
            let jet = JetTerm {
                grade: 0,
                zeta: 1,
                k_deg: 0,
                coeff: sig_n.clone(),
                ops: vec![JetOp::Mode(Mode::p(2))],
            };
            working = working.apply_exp(&jet, z_top, zeta_top)?;
        }
    }
    // sigma m W^1 zeta: k-free, diagonalizes into an exponent offset
    working = working.add_offset(&ZExp::sigma_multiple(2, m * w1));

    // payload insertion: p(x^2(z) + k) as a polynomial in T = k + W^2 zeta + x~2(z)
    let payload_is_one = {
        let mut it = payload.iter();
        matches!((it.next(), it.next()), (Some((0, c)), None) if c.is_one())
    };
    if !payload_is_one {
        let mut t_jets: Vec<JetTerm> = vec![JetTerm {
            grade: 0,
            zeta: 0,
            k_deg: 1,
            coeff: Scalar::one(),
            ops: vec![],
        }];
        if w2 != 0 {
            t_jets.push(JetTerm {
                grade: 0,
                zeta: 1,
                k_deg: 0,
                coeff: sigma.scale(&rat_int(w2)),
                ops: vec![],
            });
        }
        for s in -cap..=e {
            t_jets.push(JetTerm {
                grade: -s,
                zeta: 0,
                k_deg: 0,
                coeff: Scalar::one(),
                ops: vec![xop(1, s)],
            });
        }
        let coeffs: Vec<(u32, Scalar)> = payload.iter().map(|(d, c)| (*d, c.clone())).collect();
        working = working.apply_polynomial(&coeffs, &t_jets, z_top, zeta_top)?;
    }

    // final assembly: conjugate beta creators through the x*_3 wave, then
    // absorb the k powers and the Gaussian into a theta slot factor
    let mut assembled = Working {
        entries: BTreeMap::new(),
        truncated: working.truncated,
    };
    for ((zexp, zeta, kd), state) in working.entries {
        let s2 = assemble_theta_state(&state, n, m, kd)?;
        assembled.add((zexp, zeta, 0), s2);
    }
    Ok(assembled)
}

/// Multiply a state by the theta zero-mode block
/// `e^{sigma n x*_3} e^{sigma(nk+m) x^1} e^{-(x^2+k)^2} k^kd` (summed over k).
///
/// The x*_3 wave does not commute with beta creators:
/// `e^A b_{j,-s} = (b_{j,-s} + [A, b_{j,-s}]) e^A` with the finite correction
/// `[sigma n xs_{3,0}, b_{j,-s}] = (sigma n / 2) eps_{3jk} x^k_{-s}`.
fn assemble_theta_state(v: &State, n: i64, m: i64, kd: u32) -> Result<State, EngineError> {
    let mut out = State::zero(v.space, v.coords);
    for ((word, slot), c) in v.terms() {
        if slot.theta.is_some() {
            return Err(EngineError::UnsupportedProduct(format!(
                "theta field applied to a theta slot {}",
                slot
            )));
        }
        let mut base_term = slot.clone();
        base_term.omega[2] += n;
        let mut slot_expr = FuncExpr::zero(v.coords);
        slot_expr.add_raw(
            base_term,
            Some((n, m, 0, UkPoly::monomial(0, kd, Scalar::one()))),
            Scalar::one(),
        );
        let mut acc = State::from_slot(v.space, &slot_expr).scale(c);
        for mode in word.iter().rev() {
            // e^A C = (C + [A, C]) e^A for A = sigma n xs_{3,0} and a creator
            // C; the bracket is an x-type creator commuting with A, so the
            // series stops after one term.
            let mut dressed = acc.dress(*mode);
            let bracket =
                crate::modealg::affine_commutator(&Mode::xstar(2, 0), mode);
            for (mono, bc) in bracket.terms() {
                match mono.0.as_slice() {
                    [crate::modealg::OpFactor::Mode(mu)] => {
                        debug_assert!(mu.is_pbw_letter(), "conjugation correction {}", mu);
                        let coeff = Scalar::sigma().scale(&rat_int(n)).mul(bc);
                        dressed = dressed.add(&acc.dress(*mu).scale(&coeff));
                    }
                    other => unreachable!("conjugation bracket produced {:?}", other),
                }
            }
            acc = dressed;
        }
        out = out.add(&acc);
    }
    Ok(out)
}

fn theta_eval(
    n: i64,
    m: i64,
    payload: &UPoly,
    v: &State,
    z_top: i64,
    zeta_top: u32,
) -> Result<LogSeries, EngineError> {
    if v.coords != CoordSystem::Polarized {
        return Err(EngineError::MixedCoordSystem(
            "theta fields are native to polarized coordinates".into(),
        ));
    }
    if n == 0 || m < 0 || m >= n.abs() {
        return Err(EngineError::ThetaIndexRange { n, m });
    }
    let mut out = LogSeries::empty(v.space, v.coords, z_top, zeta_top);
    for (omega, comp) in v.sector_components() {
        let w = theta_eval_component(n, m, payload, omega, &comp, z_top, zeta_top)?;
        out = out.add(&working_to_series(w, v.space, v.coords, z_top, zeta_top)?);
    }
    Ok(out)
}

/// If a == lambda * b for a scalar lambda, return it.
pub fn scalar_ratio(a: &State, b: &State) -> Option<Scalar> {
    if b.is_zero() {
        return if a.is_zero() {
            Some(Scalar::zero())
        } else {
            None
        };
    }
    if a.is_zero() {
        return Some(Scalar::zero());
    }
    let (k0, c0) = b.terms().next()?;
    let a0 = a.terms().find(|(k, _)| *k == k0).map(|(_, c)| c.clone())?;
    let c0_inv = invert_simple(c0)?;
    let lambda = a0.mul(&c0_inv);
    if a == &b.scale(&lambda) {
        Some(lambda)
    } else {
        None
    }
}

/// Inverse of a single-term scalar of sigma/q degree zero.
fn invert_simple(c: &Scalar) -> Option<Scalar> {
    let mut it = c.iter();
    let ((sd, qd), r) = it.next()?;
    if it.next().is_some() || *sd != 0 || *qd != 0 {
        return None;
    }
    Some(Scalar::from_rat(Rat::from_integer(1.into()) / r.clone()))
}

// ---------------------------------------------------------------------------
// Two-variable machinery: brackets, locality, propagators, n-products
// ---------------------------------------------------------------------------

/// The composition a(z1) b(z2) v, exact on the quadrant below the tops.
pub fn composition_series(
    a: &Field,
    b: &Field,
    v: &State,
    z1_top: i64,
    z2_top: i64,
    zeta_top: u32,
) -> Result<TwoVarSeries, EngineError> {
    let mut out = TwoVarSeries::empty(v.space, v.coords, z1_top, z2_top);
    let sb = b.eval_raw(v, z2_top, zeta_top)?;
    out.truncated |= sb.truncated;
    for (k2, u) in sb.entries() {
        let sa = a.eval_raw(u, z1_top, zeta_top)?;
        out.truncated |= sa.truncated;
        for (k1, w) in sa.entries() {
            out.add_entry(
                (k1.zexp.clone(), k1.zeta, k2.zexp.clone(), k2.zeta),
                w.clone(),
            );
        }
    }
    Ok(out)
}

/// The composition with the first field applied first: b(z2) a(z1) v, keyed
/// with variable one on the a-side.
fn reverse_composition_series(
    a: &Field,
    b: &Field,
    v: &State,
    z1_top: i64,
    z2_top: i64,
    zeta_top: u32,
) -> Result<TwoVarSeries, EngineError> {
    let mut out = TwoVarSeries::empty(v.space, v.coords, z1_top, z2_top);
    let sa = a.eval_raw(v, z1_top, zeta_top)?;
    out.truncated |= sa.truncated;
    for (k1, u) in sa.entries() {
        let sb = b.eval_raw(u, z2_top, zeta_top)?;
        out.truncated |= sb.truncated;
        for (k2, w) in sb.entries() {
            out.add_entry(
                (k1.zexp.clone(), k1.zeta, k2.zexp.clone(), k2.zeta),
                w.clone(),
            );
        }
    }
    Ok(out)
}

/// The commutator [a(z1), b(z2)] v as a two-variable series.
pub fn commutator_series(
    a: &Field,
    b: &Field,
    v: &State,
    z1_top: i64,
    z2_top: i64,
    zeta_top: u32,
) -> Result<TwoVarSeries, EngineError> {
    let ab = composition_series(a, b, v, z1_top, z2_top, zeta_top)?;
    let ba = reverse_composition_series(a, b, v, z1_top, z2_top, zeta_top)?;
    Ok(ab.sub(&ba))
}

/// Outcome of a locality search.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LocalityOutcome {
    Local(u32),
    NotLocal,
}

/// The smallest N <= n_cap with (z1 - z2)^N [a(z1), b(z2)] = 0 on the family.
///
/// The window must be wide enough that multiplying by (z1 - z2)^N is
/// conclusive; otherwise the check refuses to answer.
pub fn locality_order(
    a: &Field,
    b: &Field,
    family: &[State],
    w: &Window,
    n_cap: u32,
) -> Result<LocalityOutcome, EngineError> {
    let e_max = family.iter().map(|v| v.energy()).max().unwrap_or(0);
    if w.z_max - w.z_min < 2 * n_cap as i64 + e_max + 2 {
        return Err(EngineError::Inconclusive(format!(
            "window width {} too small for locality cap {} at family energy {}",
            w.z_max - w.z_min,
            n_cap,
            e_max
        )));
    }
    let mut brackets = Vec::new();
    for v in family {
        brackets.push(commutator_series(a, b, v, w.z_max, w.z_max, w.zeta_max)?);
    }
    for n in 0..=n_cap {
        if brackets.iter().all(|t| t.mul_z1_minus_z2_pow(n).is_zero()) {
            return Ok(LocalityOutcome::Local(n));
        }
    }
    Ok(LocalityOutcome::NotLocal)
}

/// A priori lower bound on the support of a field applied to v. Generator
/// fields annihilate at most down to the state's energy.
fn support_floor(f: &Field, v: &State) -> i64 {
    match f {
        Field::Zero | Field::Identity => 0,
        Field::Alpha(_) | Field::Beta(_) => -(v.energy() + 1),
        Field::X(_) | Field::XTilde(_) | Field::XStarOrig(_) | Field::XStarTilde3 => {
            -v.energy()
        }
        _ => -(v.energy() + 2),
    }
}

/// The n-product evaluation, through the defining diagonal formula or the
/// propagator route (n >= 0 only).
#[allow(clippy::too_many_arguments)]
fn n_product_eval(
    a: &Field,
    b: &Field,
    n: i64,
    locality: u32,
    v: &State,
    z_top: i64,
    zeta_top: u32,
    via_propagator: bool,
) -> Result<LogSeries, EngineError> {
    if n >= locality as i64 {
        return Ok(LogSeries::empty(v.space, v.coords, z_top, zeta_top));
    }
    let d = (locality as i64 - n - 1) as u32;
    let b1 = support_floor(a, v);
    let b2 = support_floor(b, v);
    // output grade c = (G1 - D) + G2 over product entries with G1, G2
    // bounded below by the support floors, so the needed quadrant is
    let z1_top = z_top + d as i64 - b2;
    let z2_top = z_top + d as i64 - b1;
    let zeta_inner = zeta_top + d;
    let base = if via_propagator {
        propagator_series(a, b, v, z1_top, z2_top, zeta_inner)?
    } else {
        composition_series(a, b, v, z1_top, z2_top, zeta_inner)?
    };
    let t = base.mul_z1_minus_z2_pow(locality).d_z1_divided(d);
    Ok(t.diagonal(z_top, zeta_top))
}

/// The propagator P(a, b; z1, z2) v = [a(z1)_-, b(z2)] v, computed through
/// both defining expressions; a disagreement is an engine bug.
pub fn propagator_series(
    a: &Field,
    b: &Field,
    v: &State,
    z1_top: i64,
    z2_top: i64,
    zeta_top: u32,
) -> Result<TwoVarSeries, EngineError> {
    if !a.splittable() {
        return Err(EngineError::NoSplitMetadata(a.name()));
    }
    let a_minus = Field::AnnihilationPart(Box::new(a.clone()));
    let a_plus = Field::CreationPart(Box::new(a.clone()));
    let route1 = commutator_series(&a_minus, b, v, z1_top, z2_top, zeta_top)?;
    // route 2: a(z1) b(z2) - :a(z1) b(z2):
    let full = composition_series(a, b, v, z1_top, z2_top, zeta_top)?;
    let plus_part = composition_series(&a_plus, b, v, z1_top, z2_top, zeta_top)?;
    let minus_part = reverse_composition_series(&a_minus, b, v, z1_top, z2_top, zeta_top)?;
    let route2 = full.sub(&plus_part).sub(&minus_part);
    if route1 != route2 {
        return Err(EngineError::InternalInconsistency(format!(
            "propagator routes disagree for {} and {}",
            a.name(),
            b.name()
        )));
    }
    Ok(route1)
}

/// n-product field through the defining diagonal formula.
pub fn n_product(a: &Field, b: &Field, n: i64, locality: u32) -> Field {
    Field::NProduct {
        a: Box::new(a.clone()),
        b: Box::new(b.clone()),
        n,
        locality,
    }
}

/// Evaluate the n-product through the propagator proposition (n >= 0).
pub fn n_product_via_propagator(
    a: &Field,
    b: &Field,
    n: i64,
    locality: u32,
    v: &State,
    z_top: i64,
    zeta_top: u32,
) -> Result<LogSeries, EngineError> {
    assert!(n >= 0, "the propagator route needs n >= 0");
    n_product_eval(a, b, n, locality, v, z_top, zeta_top, true)
}

// ---------------------------------------------------------------------------
// The state-field correspondence
// ---------------------------------------------------------------------------

/// The field of a state of the algebra: iterated normally ordered products
/// of divided derivatives of generator fields applied to the slot field.
pub fn state_field(v: &State) -> Result<Field, EngineError> {
    let mut parts: Vec<(Scalar, Field)> = Vec::new();
    for ((word, slot), c) in v.terms() {
        let mut f = slot_field(slot)?;
        for mode in word.iter().rev() {
            let gen = match mode.kind {
                ModeKind::Alpha => Field::Alpha(mode.dir),
                ModeKind::Beta => Field::Beta(mode.dir),
                _ => {
                    return Err(EngineError::NotExpandable(format!(
                        "state-field map on non-primitive pbw mode {}",
                        mode
                    )))
                }
            };
            let depth = (-mode.n) as u32;
            debug_assert!(depth >= 1);
            let derived = gen.dz_divided(depth - 1);
            f = Field::Non(Box::new(derived), Box::new(f));
        }
        parts.push((c.clone(), f));
    }
    if parts.len() == 1 && parts[0].0.is_one() {
        return Ok(parts.pop().map(|(_, f)| f).unwrap());
    }
    Ok(match parts.len() {
        0 => Field::Zero,
        _ => Field::Sum(parts),
    })
}

/// The field of a single slot term of an algebra state.
fn slot_field(slot: &FTerm) -> Result<Field, EngineError> {
    if slot.mono[3] != 0 || slot.mono[4] != 0 || slot.mono[5] != 0 {
        return Err(EngineError::NotExpandable(format!(
            "no field for x*-monomial slot {}",
            slot
        )));
    }
    let mut f: Option<Field> = None;
    match &slot.theta {
        Some(th) => {
            if slot.omega != [0, 0, th.n] || slot.rho != [0; 3] || th.shift != 0 {
                return Err(EngineError::NotExpandable(format!(
                    "no field for shifted or wave-dressed theta slot {}",
                    slot
                )));
            }
            f = Some(Field::Theta {
                n: th.n,
                m: th.m,
                payload: UPoly::monomial(th.u_deg, Scalar::one()),
            });
        }
        None => {
            if slot.omega != [0; 3] {
                return Err(EngineError::NotExpandable(format!(
                    "no field for x*-wave slot {}",
                    slot
                )));
            }
            if slot.rho != [0; 3] {
                f = Some(Field::Exp(slot.rho));
            }
        }
    }
    // x-monomial dressings insert full x^i(z) factors
    for dir in 0..3 {
        for _ in 0..slot.mono[dir] {
            let inner = f.take().unwrap_or(Field::Identity);
            f = Some(Field::Non(Box::new(Field::X(dir)), Box::new(inner)));
        }
    }
    Ok(f.unwrap_or(Field::Identity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::gaussian_vector;
    use crate::states::generating_family;

    fn vac(space: Space, coords: CoordSystem) -> State {
        State::vacuum(space, coords)
    }

    #[test]
    fn alpha_field_on_vacuum() {
        let v = vac(Space::Vt3, CoordSystem::Original);
        let s = Field::Alpha(0).eval_raw(&v, 3, 2).unwrap();
        // coefficient of z^0 is alpha^1_{-1} vac
        let key = SeriesKey::new(ZExp::zero(), 0);
        let expect = v.dress(Mode::alpha(0, -1));
        let got = s.entries().find(|(k, _)| **k == key).unwrap().1;
        assert_eq!(got, &expect);
        assert!(s.min_grade().unwrap() >= -1);
    }

    #[test]
    fn x_field_zeta_entry_is_w_eigenvalue() {
        let v = State::from_slot_term(
            Space::Hc,
            CoordSystem::Original,
            FTerm::xs_wave([1, 0, 0]),
            Scalar::one(),
        );
        let s = Field::X(0).eval_raw(&v, 2, 2).unwrap();
        let key = SeriesKey::new(ZExp::zero(), 1);
        let got = s.entries().find(|(k, _)| **k == key).unwrap().1;
        assert_eq!(got, &v.scale(&Scalar::sigma()));
    }

    #[test]
    fn xstar_orig_on_vacuum_grade_one() {
        // the z^1 entry of the original x*_3(z) on the vacuum is xs(3,-1) vac
        let v = vac(Space::Hc, CoordSystem::Original);
        let s = Field::XStarOrig(2).eval_raw(&v, 2, 2).unwrap();
        let key = SeriesKey::new(ZExp::from_grade(1), 0);
        let got = s.entries().find(|(k, _)| **k == key).unwrap().1;
        let expect = act_unchecked(&OpExpr::from_mode(Mode::xstar(2, -1)), &v).unwrap();
        assert_eq!(got, &expect);
        // and the z^0 zeta^0 entry is the x*_3 multiplication of the slot
        let key0 = SeriesKey::new(ZExp::zero(), 0);
        let got0 = s.entries().find(|(k, _)| **k == key0).unwrap().1;
        let expect0 = act_unchecked(&OpExpr::from_mode(Mode::xstar(2, 0)), &v).unwrap();
        assert_eq!(got0, &expect0);
    }

    #[test]
    fn exp_field_vacuum_axiom_shape() {
        let v = vac(Space::Vt3, CoordSystem::Original);
        let s = Field::Exp([2, 0, -1]).eval_raw(&v, 4, 2).unwrap();
        assert!(s.min_grade().unwrap() >= 0);
        let key = SeriesKey::new(ZExp::zero(), 0);
        let got = s.entries().find(|(k, _)| **k == key).unwrap().1;
        let expect = State::from_slot_term(
            Space::Vt3,
            CoordSystem::Original,
            FTerm::x_wave([2, 0, -1]),
            Scalar::one(),
        );
        assert_eq!(got, &expect);
    }

    #[test]
    fn exp_field_adds_offset_on_twisted_sector() {
        // on the sector omega = (1,0,0) with rho = (1,0,0): offset sigma^2
        let v = State::from_slot_term(
            Space::Hc,
            CoordSystem::Original,
            FTerm::xs_wave([1, 0, 0]),
            Scalar::one(),
        );
        let s = Field::Exp([1, 0, 0]).eval_raw(&v, 2, 2).unwrap();
        assert!(!s.is_zero());
        for (k, _) in s.entries() {
            assert_eq!(k.zexp.formal_part(), ZExp::sigma_multiple(2, 1));
        }
    }

    #[test]
    fn theta_field_vacuum_axiom() {
        let v = vac(Space::Vn, CoordSystem::Polarized);
        let f = Field::Theta {
            n: 2,
            m: 1,
            payload: UPoly::one(),
        };
        let s = f.eval_raw(&v, 3, 3).unwrap();
        assert!(s.min_grade().unwrap() >= 0);
        assert!(s.entries().all(|(k, _)| k.zeta == 0));
        let key = SeriesKey::new(ZExp::zero(), 0);
        let got = s.entries().find(|(k, _)| **k == key).unwrap().1;
        let expect = State::from_slot(Space::Vn, &gaussian_vector(2, 1).unwrap());
        assert_eq!(got, &expect);
    }

    #[test]
    fn theta_field_no_zeta_on_vn_family() {
        let f = Field::Theta {
            n: 1,
            m: 0,
            payload: UPoly::one(),
        };
        for v in generating_family(Space::Vn, CoordSystem::Polarized) {
            if v.terms().any(|((_, t), _)| t.theta.is_some()) {
                continue;
            }
            let s = f.eval_raw(&v, 3, 3).unwrap();
            assert!(
                s.entries().all(|(k, _)| k.zeta == 0),
                "zeta entry on {}",
                v.render()
            );
        }
    }

    #[test]
    fn theta_field_zeta_entries_on_twisted_sector() {
        // on the omega_1 = 1 sector the log terms survive
        let v = State::from_slot_term(
            Space::Hc,
            CoordSystem::Polarized,
            FTerm::xs_wave([1, 0, 0]),
            Scalar::one(),
        );
        let f = Field::Theta {
            n: 1,
            m: 0,
            payload: UPoly::one(),
        };
        let s = f.eval_raw(&v, 2, 2).unwrap();
        assert!(s.entries().any(|(k, _)| k.zeta == 1));
    }

    #[test]
    fn dz_of_x_field_is_alpha_field() {
        let w = Window::new(-4, 4, 2);
        for v in generating_family(Space::Hc, CoordSystem::Original) {
            let lhs = Field::X(1).dz().eval(&v, &w).unwrap();
            let rhs = Field::Alpha(1).eval(&v, &w).unwrap();
            assert!(
                lhs.equal_within(&rhs, &w),
                "Dz x(z) != alpha(z) on {}",
                v.render()
            );
        }
    }

    #[test]
    fn split_parts_sum_to_field() {
        let w = Window::new(-3, 3, 2);
        let v = vac(Space::Vt3, CoordSystem::Original).dress(Mode::beta(0, -1));
        for f in [Field::Alpha(0), Field::Beta(1), Field::Exp([1, 0, 0])] {
            let (plus, minus) = f.split().unwrap();
            let total = plus.eval(&v, &w).unwrap().add(&minus.eval(&v, &w).unwrap());
            let direct = f.eval(&v, &w).unwrap();
            assert!(total.equal_within(&direct, &w));
        }
    }

    #[test]
    fn locality_of_generator_pairs() {
        let w = Window::new(-6, 6, 2);
        let family = generating_family(Space::Vt3, CoordSystem::Original);
        // same direction: central term, order two
        let got = locality_order(&Field::Alpha(0), &Field::Beta(0), &family, &w, 4).unwrap();
        assert_eq!(got, LocalityOutcome::Local(2));
        // different directions: commuting
        let got = locality_order(&Field::Alpha(0), &Field::Beta(1), &family, &w, 4).unwrap();
        assert_eq!(got, LocalityOutcome::Local(0));
        // distinct beta pair: a delta, order one
        let got = locality_order(&Field::Beta(0), &Field::Beta(1), &family, &w, 4).unwrap();
        assert_eq!(got, LocalityOutcome::Local(1));
    }

    #[test]
    fn propagator_of_commuting_pair_vanishes() {
        let v = vac(Space::Vt3, CoordSystem::Original).dress(Mode::alpha(0, -1));
        let p = propagator_series(&Field::Alpha(0), &Field::Alpha(1), &v, 3, 3, 2).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn zero_product_of_beta_with_exp() {
        // beta_i(z)_(0) E_rho(z) = sigma rho_i E_rho(z)
        let w = Window::new(-4, 4, 2);
        let family = generating_family(Space::Vt3, CoordSystem::Original);
        let rho = [2, 0, 0];
        let e = Field::Exp(rho);
        let b = Field::Beta(0);
        let prod = n_product(&b, &e, 0, 1);
        for v in &family {
            let lhs = prod.eval(v, &w).unwrap();
            let rhs = e
                .eval(v, &w)
                .unwrap()
                .scale(&Scalar::sigma().scale(&rat_int(rho[0])));
            assert!(lhs.equal_within(&rhs, &w), "on {}", v.render());
            let via_prop = n_product_via_propagator(&b, &e, 0, 1, v, w.z_max, w.zeta_max).unwrap();
            assert!(via_prop.equal_within(&rhs, &w));
        }
    }

    #[test]
    fn monodromy_examples() {
        let w = Window::new(-3, 3, 2);
        let v = vac(Space::Hc, CoordSystem::Original);
        // alpha has no zeta entries and integer exponents: fixed
        let m = Field::Monodromy(Box::new(Field::Alpha(0)));
        let direct = Field::Alpha(0).eval(&v, &w).unwrap();
        let twisted = m.eval(&v, &w).unwrap();
        assert!(twisted.equal_within(&direct, &w));
        // x picks up sigma W from the zeta shift
        let hc = State::from_slot_term(
            Space::Hc,
            CoordSystem::Original,
            FTerm::xs_wave([1, 0, 0]),
            Scalar::one(),
        );
        let mx = Field::Monodromy(Box::new(Field::X(0)));
        let tx = mx.eval(&hc, &w).unwrap();
        let expect = Field::X(0).eval(&hc, &w).unwrap().add(
            &Field::Identity
                .eval(&hc, &w)
                .unwrap()
                .scale(&Scalar::sigma().mul(&Scalar::sigma())),
        );
        assert!(tx.equal_within(&expect, &w));
    }

    #[test]
    fn state_field_of_pbw_state_matches_divided_derivative() {
        // the field of alpha^1_{-2} vac is Dz^{(1)} alpha^1(z)
        let w = Window::new(-4, 4, 1);
        let v = vac(Space::Vt3, CoordSystem::Original).dress(Mode::alpha(0, -2));
        let f = state_field(&v).unwrap();
        let g = Field::Alpha(0).dz_divided(1);
        for u in generating_family(Space::Vt3, CoordSystem::Original) {
            let lhs = f.eval(&u, &w).unwrap();
            let rhs = g.eval(&u, &w).unwrap();
            assert!(lhs.equal_within(&rhs, &w), "on {}", u.render());
        }
    }
}
