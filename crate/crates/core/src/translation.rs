//! The translation operator of the vertex algebras.
//!
//! On PBW words it acts as the derivation with `[T, a_n] = -n a_{n-1}`; on
//! the function slot it acts through the frame pairing,
//!
//! ```text
//!   T(f) = sum_i  alpha^i_{-1} (x) beta_{i,0}(f)  +  beta_{i,-1} (x) alpha^i_0(f),
//! ```
//!
//! the zero modes acting as the coordinate system's frame vector fields.
//! This rule reproduces the forced anchor values: on a plane wave it gives
//! `sigma rho_i e^{sigma rho.x} alpha^i_{-1}` and on a theta vector it gives
//! the z-coefficient of the theta vertex operator applied to the vacuum.

use crate::funcspace::{FTerm, FuncExpr, VectorField};
use crate::modealg::Mode;
use crate::scalar::Scalar;
use crate::states::State;
use crate::EngineError;

/// The translation endomorphism of an induced module.
#[derive(Clone, Copy, Debug, Default)]
pub struct TranslationOp;

impl TranslationOp {
    /// T applied to a state: PBW derivation plus the slot rule. T(vacuum) = 0.
    pub fn apply(&self, v: &State) -> Result<State, EngineError> {
        let mut out = State::zero(v.space, v.coords);
        for ((word, slot), c) in v.terms() {
            // derivation over the word: [T, a_{-s}] = s a_{-s-1}
            for pos in 0..word.len() {
                let mut base =
                    State::from_slot_term(v.space, v.coords, slot.clone(), Scalar::one());
                for (i, mode) in word.iter().enumerate().rev() {
                    let m = if i == pos {
                        Mode {
                            kind: mode.kind,
                            dir: mode.dir,
                            n: mode.n - 1,
                        }
                    } else {
                        *mode
                    };
                    base = base.dress(m);
                }
                out = out.add(&base.scale(&c.mul(&Scalar::from_int(-word[pos].n))));
            }
            // slot rule
            let image = self.slot_rule(v, slot)?;
            let mut dressed = image;
            for mode in word.iter().rev() {
                dressed = dressed.dress(*mode);
            }
            out = out.add(&dressed.scale(c));
        }
        Ok(out)
    }

    /// T on a pure slot term.
    fn slot_rule(&self, v: &State, slot: &FTerm) -> Result<State, EngineError> {
        let expr = FuncExpr::from_term(v.coords, slot.clone(), Scalar::one());
        let mut out = State::zero(v.space, v.coords);
        for i in 0..3 {
            let beta_f = expr.apply_vector_field(VectorField::Beta(i))?;
            out = out.add(&State::from_slot(v.space, &beta_f).dress(Mode::alpha(i, -1)));
            let alpha_f = expr.apply_vector_field(VectorField::Alpha(i))?;
            out = out.add(&State::from_slot(v.space, &alpha_f).dress(Mode::beta(i, -1)));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::{gaussian_vector, theta_embed, CoordSystem, UPoly};
    use crate::modealg::OpExpr;
    use crate::scalar::rat_int;
    use crate::states::{act_unchecked, Space};

    #[test]
    fn vacuum_is_annihilated() {
        for (space, coords) in [
            (Space::Vt3, CoordSystem::Original),
            (Space::Vn, CoordSystem::Polarized),
        ] {
            let t = TranslationOp;
            assert!(t.apply(&State::vacuum(space, coords)).unwrap().is_zero());
        }
    }

    #[test]
    fn plane_wave_rule() {
        // T(e^{sigma rho.x}) = sigma rho_i alpha^i_{-1} (x) e^{sigma rho.x}
        let t = TranslationOp;
        let rho = [2i64, 0, -1];
        let v = State::from_slot_term(
            Space::Vt3,
            CoordSystem::Original,
            FTerm::x_wave(rho),
            Scalar::one(),
        );
        let got = t.apply(&v).unwrap();
        let mut expect = State::zero(Space::Vt3, CoordSystem::Original);
        for i in 0..3 {
            expect = expect.add(
                &v.dress(Mode::alpha(i, -1))
                    .scale(&Scalar::sigma().scale(&rat_int(rho[i]))),
            );
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn pbw_rule_deepens_modes() {
        let t = TranslationOp;
        let v = State::vacuum(Space::Vt3, CoordSystem::Original).dress(Mode::alpha(0, -2));
        let got = t.apply(&v).unwrap();
        let expect = State::vacuum(Space::Vt3, CoordSystem::Original)
            .dress(Mode::alpha(0, -3))
            .scale(&Scalar::from_int(2));
        assert_eq!(got, expect);
    }

    #[test]
    fn theta_vector_rule_matches_forced_anchor() {
        // T(F_m) has the x^1-dressed theta correction from the beta_2 frame
        let t = TranslationOp;
        let n = 1;
        let f = gaussian_vector(n, 0).unwrap();
        let v = State::from_slot(Space::Vn, &f);
        let got = t.apply(&v).unwrap();
        // alpha^1_{-1} (x) d_1 F + alpha^2_{-1} (x) beta_2 F
        //   + beta_{3,-1} (x) sigma n F
        let d1 = f.partial_x(0);
        let b2 = f.apply_vector_field(VectorField::Beta(1)).unwrap();
        let mut expect = State::from_slot(Space::Vn, &d1).dress(Mode::alpha(0, -1));
        expect = expect.add(&State::from_slot(Space::Vn, &b2).dress(Mode::alpha(1, -1)));
        expect = expect.add(
            &State::from_slot(Space::Vn, &f)
                .dress(Mode::beta(2, -1))
                .scale(&Scalar::sigma().scale(&rat_int(n))),
        );
        assert_eq!(got, expect);
        // d_2 F_0 = -2 Theta(u G)
        let theta_u = theta_embed(n, 0, &UPoly::monomial(1, Scalar::from_int(-2))).unwrap();
        assert_eq!(f.partial_x(1), theta_u, "Gaussian derivative payload sanity");
    }

    #[test]
    fn commutator_with_x_zero_mode() {
        // T(x^1 f) - x^1 T(f) = alpha^1_{-1} f on slots of Hc
        let t = TranslationOp;
        let f = State::from_slot_term(
            Space::Hc,
            CoordSystem::Polarized,
            FTerm::x_wave([0, 1, 0]),
            Scalar::one(),
        );
        let xf = act_unchecked(&OpExpr::from_mode(Mode::x(0, 0)), &f).unwrap();
        let lhs = t.apply(&xf).unwrap().sub(
            &act_unchecked(&OpExpr::from_mode(Mode::x(0, 0)), &t.apply(&f).unwrap()).unwrap(),
        );
        assert_eq!(lhs, f.dress(Mode::alpha(0, -1)));
    }

    #[test]
    fn commutator_with_xstar3_zero_mode_documented() {
        // The engine's T satisfies
        //   T(xs_3 f) - xs_3 T(f) = beta_{3,-1} f + alpha^2_{-1} (x^1 f)
        // in polarized coordinates (the xi-weighted form of the bracket).
        let t = TranslationOp;
        let f = State::vacuum(Space::Hc, CoordSystem::Polarized);
        let xsf = act_unchecked(&OpExpr::from_mode(Mode::xstar(2, 0)), &f).unwrap();
        let lhs = t.apply(&xsf).unwrap().sub(
            &act_unchecked(&OpExpr::from_mode(Mode::xstar(2, 0)), &t.apply(&f).unwrap()).unwrap(),
        );
        let x1f = act_unchecked(&OpExpr::from_mode(Mode::x(0, 0)), &f).unwrap();
        let expect = f
            .dress(Mode::beta(2, -1))
            .add(&x1f.dress(Mode::alpha(1, -1)));
        assert_eq!(lhs, expect);
    }
}
