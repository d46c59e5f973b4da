#[test]
fn perf_probe_theta_scaling() {
    use nilva_core::fields::Field;
    use nilva_core::funcspace::{CoordSystem, FTerm, UPoly};
    use nilva_core::scalar::Scalar;
    use nilva_core::states::{Space, State};
    let v = State::from_slot_term(
        Space::Hc,
        CoordSystem::Polarized,
        FTerm::xs_wave([1, 0, 0]),
        Scalar::one(),
    );
    let f = Field::Theta { n: 1, m: 0, payload: UPoly::one() };
    for top in [4i64, 6] {
        let t0 = std::time::Instant::now();
        let s = f.eval_raw(&v, top, 3).unwrap();
        println!("theta top={} zeta=3: {:?}, entries={}, total_terms={}",
            top, t0.elapsed(), s.entries().count(),
            s.entries().map(|(_, st)| st.num_terms()).sum::<usize>());
    }
}
