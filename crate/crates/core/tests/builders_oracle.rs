mod common;

use common::{dyadic_set, stepped_correlation};
use proptest::prelude::*;
use recurlab::builders::{build_stage, rigidity_sequence, CuttingStackingRecipe};
use recurlab::recurrence::correlation;
use recurlab::IntervalSet;

fn recipe(name: &str) -> CuttingStackingRecipe {
    CuttingStackingRecipe::builtin(name).unwrap()
}

#[test]
fn heights_follow_their_recursions() {
    let mut h = 1u128;
    let mut st = vec![1u128];
    let mut ch = vec![1u128];
    for n in 0..8u128 {
        h = (n + 1) * h + n * (n + 1) / 2;
        st.push(h);
        ch.push(3 * ch.last().unwrap() + 1);
    }
    assert_eq!(recipe("staircase").heights(8).unwrap(), st);
    assert_eq!(recipe("chacon").heights(8).unwrap(), ch);
    assert_eq!(recipe("odometer").heights(10).unwrap(), (0..=10).map(|n| 1u128 << n).collect::<Vec<_>>());
    assert_eq!(rigidity_sequence(&recipe("odometer"), 3).unwrap(), vec![2, 4, 8]);
    assert!(rigidity_sequence(&recipe("odometer"), 0).unwrap().is_empty());
}

#[test]
fn columns_are_stacked_images_of_the_base() {
    for (name, stage) in [("odometer", 5), ("staircase", 4), ("chacon", 3)] {
        let t = build_stage(&recipe(name), stage).unwrap();
        let h = t.height();
        let levels: Vec<IntervalSet> = (0..h).map(|i| t.level(i)).collect();
        for i in 0..h - 1 {
            assert_eq!(t.map.image(&levels[i]).unwrap(), levels[i + 1], "{name} level {i}");
        }
        let all = IntervalSet::union_all(levels.iter());
        assert_eq!(all.measure(), t.column.coverage());
        assert_eq!(t.map.residual().clone(), levels[h - 1].union(&all.complement()));
    }
}

#[test]
fn odometer_level_returns_at_its_period() {
    // Oracle: the stage-3 column as a permutation of 8 levels, stepped 4 times.
    let t = build_stage(&recipe("odometer"), 3).unwrap();
    let stage2 = build_stage(&recipe("odometer"), 2).unwrap();
    let a = stage2.level(1);
    assert_eq!(t.column.decompose(&a).levels(), vec![1, 5]);
    assert_eq!(stepped_correlation(&t.map, &a, &a, 4), None);
    let closed = build_stage(&CuttingStackingRecipe::from_text("name: odo\ncuts: 2\nclosed: yes\n").unwrap(), 3).unwrap();
    assert_eq!(stepped_correlation(&closed.map, &a, &a, 4), Some(a.measure()));
    assert_eq!(correlation(&closed, &a, &a, 4).unwrap(), a.measure());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn staged_maps_preserve_measure(stage in 1u32..7, s in dyadic_set(7), name in prop::sample::select(vec!["odometer", "staircase", "chacon"])) {
        prop_assume!(name != "chacon" || stage <= 4);
        let t = build_stage(&recipe(name), stage).unwrap();
        let (img, blocked) = t.map.image_partial(&s);
        prop_assert_eq!(img.measure(), s.measure() - blocked.measure());
        prop_assert!(blocked.is_subset(t.map.residual()));
        let (pre, _) = t.map.inverse().image_partial(&img);
        prop_assert_eq!(pre, s.difference(&blocked));
    }
}
