use num_traits::{One, Signed, Zero};
use proptest::prelude::*;
use recurlab::builders::{build_stage, CuttingStackingRecipe};
use recurlab::rational::{q, qi};
use recurlab::towerplex::{run_towerplex, side_rescaling, slow_mixing_window, solve_rescaling, Schedule, TowerplexConfig, TowerplexError};
use recurlab::{IntervalSet, Q};

fn run(stages: usize) -> recurlab::towerplex::TowerplexRun {
    let r = build_stage(&CuttingStackingRecipe::builtin("odometer").unwrap(), 6).unwrap();
    let s = build_stage(&CuttingStackingRecipe::builtin("staircase").unwrap(), 5).unwrap();
    run_towerplex(r, s, &TowerplexConfig { stages, ..Default::default() }).unwrap()
}

#[test]
fn first_exchange_by_mass_accounting() {
    let run = run(1);
    let (one, two) = (&run.states[0], &run.states[1]);
    assert_eq!(one.x.measure(), q(1, 2));
    assert_eq!(one.y.measure(), q(1, 2));
    assert_eq!((one.r.clone(), one.s.clone()), (q(1, 2), q(1, 6)));
    let tr = &run.transitions[0];
    // Oracle: X_2 loses h μ(I'_1) and gains h μ(J'_1).
    let hq = qi(tr.h as i64);
    assert_eq!(two.x.measure(), q(1, 2) - &hq * tr.i_prime.measure() + &hq * tr.j_prime.measure());
    assert_eq!(tr.i_prime.measure(), &tr.r_tower.base().measure() * q(1, 2));
    assert_eq!(tr.j_prime.measure(), &tr.s_tower.base().measure() * q(1, 6));
    let mx = two.x.measure();
    assert!(mx > q(1, 4) && mx < q(1, 2));
    assert_eq!(two.x.union(&two.y), IntervalSet::unit());
    // R_2 agrees with R_1 on the kept R levels below the top.
    let ck = &run.checks[0];
    assert!(ck.r_conjugacy_equal && ck.s_conjugacy_equal && ck.partition_exact);
    assert!(ck.e_measure < qi(8) * &tr.eps);
    let kept = tr.r_tower.strands().iter().fold(IntervalSet::empty(), |acc, s| {
        let w = &s.width / qi(2);
        acc.union(&IntervalSet::from_pairs((0..tr.h - 1).map(|i| (&s.positions[i] + &w, &s.positions[i] + &s.width))))
    });
    assert!(tr.r_next_cases.restrict(&kept).disagreement(&one.r_n.restrict(&kept)).is_empty());
    for p in tr.retained_atoms.iter().filter(|p| !p.is_empty()) {
        let img = tr.psi.image(p).unwrap();
        assert_eq!(p.measure() / img.measure(), two.y.measure() / one.y.measure());
    }
}

#[test]
fn schedules_and_ledger_sums() {
    let cfg = TowerplexConfig::default();
    assert_eq!(cfg.eps.at(1), q(1, 4));
    assert_eq!(cfg.s.at(3), q(1, 10));
    assert_eq!(Schedule::Geometric { first: q(1, 2), ratio: q(1, 3) }.at(3), q(1, 18));
    let run = run(2);
    assert_eq!(run.ledger.eps_partial_sum(), q(1, 4) + q(1, 16));
    assert_eq!(run.ledger.r_partial_sum(), Q::one());
    assert_eq!(run.ledger.s_partial_sum(), q(1, 6) + q(1, 8));
    assert!(run.ledger.holds());
}

#[test]
fn window_threshold_at_stage_one() {
    let run = run(1);
    let st = &run.states[0];
    let a = run.transitions[0].r_tower.level(0).union(&run.transitions[0].s_tower.level(0));
    match slow_mixing_window(st, &a, &q(1, 2)) {
        Ok(w) => {
            let alpha = a.intersect(&st.y).measure();
            assert_eq!(w.s_threshold, &alpha * &alpha / qi(2));
            assert!(w.margin.is_positive());
        }
        Err(e) => assert!(matches!(e, TowerplexError::WindowExhausted(_))),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn rescaling_solves_both_equations(an in 1i64..=500, bn in -300i64..=300, bd in 1i64..400) {
        let a = q(an, 1000);
        let b = q(bn, bd);
        match solve_rescaling(&a, &b) {
            Ok((c, d)) => {
                prop_assert_eq!(&a + &b - &d, &c * &a);
                prop_assert_eq!(q(1, 2) - &a + &d, &c * (q(1, 2) - &a));
                prop_assert_eq!(d, (Q::one() - qi(2) * &a) * &b);
            }
            Err(TowerplexError::DegenerateScale(_)) => prop_assert!(!(Q::one() + qi(2) * &b).is_positive()),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn side_rescaling_keeps_both_parts(mn in 1i64..100, an in 0i64..100, g in -50i64..50) {
        let mu = q(mn, 100);
        let a = &mu * q(an, 100);
        let gain = q(g, 1000);
        if let Ok((c, d)) = side_rescaling(&mu, &a, &gain) {
            prop_assert_eq!(&a + &gain - &d, &c * &a);
            prop_assert_eq!(&mu - &a + &d, &c * (&mu - &a));
            if a == mu {
                prop_assert!(d.is_zero());
            }
        }
        if mu == q(1, 2) && a.is_positive() {
            prop_assert_eq!(side_rescaling(&mu, &a, &gain).ok(), solve_rescaling(&a, &gain).ok());
        }
    }
}
