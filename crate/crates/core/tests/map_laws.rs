mod common;

use common::rational_set;
use proptest::prelude::*;
use recurlab::interval::RationalInterval;
use recurlab::rational::q;
use recurlab::{normalized_transport, IntervalSet, PiecewiseAffineMap, PiecewiseTranslation, Q};

/// Interval exchange: cut `[0, 1)` at `cuts/den` and lay the pieces out in `order`.
fn exchange(mut cuts: Vec<i64>, den: i64, order: Vec<usize>) -> PiecewiseTranslation {
    cuts.push(0);
    cuts.push(den);
    cuts.sort();
    cuts.dedup();
    let pieces: Vec<(i64, i64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    let mut idx: Vec<usize> = (0..pieces.len()).collect();
    idx.sort_by_key(|&i| order.get(i).copied().unwrap_or(i));
    let mut at = 0;
    let mut out = Vec::new();
    for &i in &idx {
        let (lo, hi) = pieces[i];
        out.push((RationalInterval::new(q(lo, den), q(hi, den)).unwrap(), q(at - lo, den)));
        at += hi - lo;
    }
    PiecewiseTranslation::new(out).unwrap()
}

fn iet() -> impl Strategy<Value = PiecewiseTranslation> {
    (prop::collection::vec(1i64..60, 0..5), prop::collection::vec(0usize..100, 6)).prop_map(|(c, o)| exchange(c, 60, o))
}

fn agree_on(f: &PiecewiseTranslation, g: &PiecewiseTranslation, den: i64) -> bool {
    (0..den).all(|k| f.apply(&q(k, den)) == g.apply(&q(k, den)))
}

#[test]
fn rotation_quarter_cycles() {
    let r = PiecewiseTranslation::rotation(&q(1, 4));
    assert!(agree_on(&r.iterate(4), &PiecewiseTranslation::identity(), 97));
    assert!(agree_on(&r.iterate(0), &PiecewiseTranslation::identity(), 97));
    let half = IntervalSet::interval(q(0, 1), q(1, 4));
    assert_eq!(PiecewiseTranslation::rotation(&q(1, 2)).image(&half).unwrap(), IntervalSet::interval(q(1, 2), q(3, 4)));
}

#[test]
fn transport_halves_normalized_measure() {
    // Oracle: lengths of images of three test subintervals.
    let m = normalized_transport(&IntervalSet::interval(q(0, 1), q(1, 2)), &IntervalSet::interval(q(0, 1), q(1, 4))).unwrap();
    assert_eq!(m.pieces().len(), 1);
    for (a, b) in [(q(0, 1), q(1, 8)), (q(1, 5), q(1, 3)), (q(1, 3), q(1, 2))] {
        let img = m.image(&IntervalSet::interval(a.clone(), b.clone())).unwrap();
        assert_eq!(img.measure() / q(1, 4), (b - a) / q(1, 2));
    }
    let two = normalized_transport(
        &IntervalSet::from_pairs([(q(0, 1), q(1, 4)), (q(1, 2), q(3, 4))]),
        &IntervalSet::interval(q(0, 1), q(1, 2)),
    )
    .unwrap();
    assert_eq!(two.pieces().len(), 2);
    assert!(two.pieces().iter().all(|p| p.scale == q(1, 1)));
    assert_eq!(two.range(), IntervalSet::interval(q(0, 1), q(1, 2)));
}

proptest! {
    #[test]
    fn images_preserve_measure(t in iet(), s in rational_set(48)) {
        prop_assert_eq!(t.image(&s).unwrap().measure(), s.measure());
        prop_assert_eq!(t.preimage(&s).measure(), s.measure());
    }

    #[test]
    fn inverse_undoes(t in iet(), s in rational_set(48)) {
        prop_assert_eq!(t.inverse().image(&t.image(&s).unwrap()).unwrap(), s);
        let id = t.inverse().compose(&t);
        prop_assert!(agree_on(&id, &PiecewiseTranslation::identity(), 113));
    }

    #[test]
    fn composition_is_associative(f in iet(), g in iet(), h in iet()) {
        let l = f.compose(&g).compose(&h);
        let r = f.compose(&g.compose(&h));
        prop_assert!(l.disagreement(&r).is_empty());
    }

    #[test]
    fn iterate_matches_stepping(t in iet(), s in rational_set(30), n in -5i64..6) {
        prop_assert_eq!(t.iterate(n).image(&s).unwrap(), t.image_iter(&s, n).unwrap());
    }

    #[test]
    fn transport_is_normalized(a in rational_set(24), b in rational_set(40)) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        let m = normalized_transport(&a, &b).unwrap();
        prop_assert_eq!(m.domain(), a.clone());
        prop_assert_eq!(m.range(), b.clone());
        let scale = b.measure() / a.measure();
        prop_assert!(m.pieces().iter().all(|p| p.scale == scale));
        let back: PiecewiseAffineMap = m.inverse();
        prop_assert_eq!(back.compose(&m).pieces().iter().all(|p| p.scale == Q::from_integer(1.into()) && p.offset == Q::from_integer(0.into())), true);
    }
}
