mod common;

use common::{dyadic_set, rational_set, stepped_correlation};
use num_traits::Zero;
use proptest::prelude::*;
use recurlab::builders::{build_stage, CuttingStackingRecipe, StagedTransformation};
use recurlab::rational::{q, qu};
use recurlab::recurrence::{correlation_bounds, lemma_pair_search, mean_ergodic_average, required_n, under_recurrence_witness, Correlator};
use recurlab::{IntervalSet, Q};

fn staged(name: &str, stage: u32) -> StagedTransformation {
    build_stage(&CuttingStackingRecipe::builtin(name).unwrap(), stage).unwrap()
}

fn closed_odometer(stage: u32) -> StagedTransformation {
    build_stage(&CuttingStackingRecipe::from_text("name: odometer\ncuts: 2\nclosed: yes\n").unwrap(), stage).unwrap()
}

#[test]
fn mean_average_over_one_period() {
    let t = closed_odometer(4);
    let a = t.column.levels_set([2, 7, 11]);
    let mu = a.measure();
    let avg = mean_ergodic_average(&t, &a, 16).unwrap();
    // Oracle: the 16-cycle moves each level once around, so the average counts
    // each ordered pair of chosen levels once.
    assert_eq!(avg, qu(9) / qu(16 * 16));
    assert_eq!(avg, &mu * &mu);
}

#[test]
fn odometer_finds_an_under_recurrent_time() {
    let t = staged("odometer", 4);
    let a = IntervalSet::from_pairs([(q(0, 1), q(1, 3)), (q(5, 8), q(7, 9))]);
    let n = under_recurrence_witness(&t, &a, 1, 15).unwrap().expect("some n in 1..=15");
    let mu = a.measure();
    let (lo, unc) = correlation_bounds(&t, &a, &a, n);
    assert!(lo + unc < &mu * &mu);
}

#[test]
fn pair_search_example() {
    let sets = [
        IntervalSet::interval(q(0, 1), q(1, 2)),
        IntervalSet::interval(q(1, 4), q(3, 4)),
        IntervalSet::from_pairs([(q(0, 1), q(1, 4)), (q(1, 2), q(3, 4))]),
    ];
    let r = lemma_pair_search(&sets, &q(1, 4)).unwrap();
    let oracle = [(0, 1), (0, 2), (1, 2)].map(|(j, k)| sets[j].intersect(&sets[k]).measure());
    assert_eq!(oracle, [q(1, 4), q(1, 4), q(1, 4)]);
    assert_eq!(r.value, q(1, 4));
    assert_eq!(required_n(&q(1, 2), &q(1, 10)), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn column_correlation_matches_stepping(a in rational_set(50), b in rational_set(30), n in -20i64..=20, which in 0usize..3) {
        let t = [staged("staircase", 4), staged("odometer", 5), staged("chacon", 3)][which].clone();
        let (known, unc) = correlation_bounds(&t, &a, &b, n);
        if let Some(v) = stepped_correlation(&t.map, &a, &b, n) {
            prop_assert!(unc.is_zero());
            prop_assert_eq!(known, v);
        } else {
            prop_assert!(known <= a.measure().min(b.measure()));
        }
    }

    #[test]
    fn bounds_contain_the_deeper_stage_value(a in dyadic_set(5), n in 1i64..40) {
        // Oracle: the closed stage-8 odometer agrees with the limit on stage-5 sets.
        let deep = closed_odometer(8);
        let exact = stepped_correlation(&deep.map, &a, &a, n).unwrap();
        let (lo, unc) = correlation_bounds(&staged("odometer", 6), &a, &a, n);
        prop_assert!(lo <= exact && exact <= &lo + &unc);
    }

    #[test]
    fn pair_search_is_the_maximum(masks in prop::collection::vec(prop::collection::vec(any::<bool>(), 8), 2..9), k in 1usize..8) {
        // Equal-measure sets: the first k selected cells of each mask, padded from the rest.
        let sets: Vec<IntervalSet> = masks
            .iter()
            .map(|m| {
                let mut cells: Vec<usize> = (0..8).filter(|&i| m[i]).chain((0..8).filter(|&i| !m[i])).take(k).collect();
                cells.sort();
                IntervalSet::from_pairs(cells.into_iter().map(|c| (q(c as i64, 8), q(c as i64 + 1, 8))))
            })
            .collect();
        let r = lemma_pair_search(&sets, &q(1, 20)).unwrap();
        let mut best = Q::from_integer((-1).into());
        for j in 0..sets.len() {
            for l in j + 1..sets.len() {
                let v = sets[j].intersect(&sets[l]).measure();
                if v > best {
                    best = v;
                }
            }
        }
        prop_assert_eq!(&r.value, &best);
        prop_assert!(r.j < r.k);
        prop_assert_eq!(sets[r.j].intersect(&sets[r.k]).measure(), best);
    }

    #[test]
    fn required_n_is_smallest(num in 1i64..20, den in 1i64..20, en in 1i64..30) {
        prop_assume!(num <= den);
        let alpha = q(num, den);
        let eps = q(1, en + 1);
        let n = required_n(&alpha, &eps);
        prop_assert!(&alpha / qu(n as u128) < eps);
        prop_assert!(n == 1 || &alpha / qu(n as u128 - 1) >= eps);
    }

    #[test]
    fn correlator_is_symmetric_in_time(a in rational_set(40), b in rational_set(40), n in 0i64..30) {
        let t = staged("staircase", 4);
        let ab = Correlator::new(&t.column, &a, &b).bounds(n);
        let ba = Correlator::new(&t.column, &b, &a).bounds(-n);
        prop_assert_eq!(ab, ba);
    }
}
