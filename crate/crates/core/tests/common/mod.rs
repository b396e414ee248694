#![allow(dead_code)]

use proptest::prelude::*;
use recurlab::rational::{q, qu};
use recurlab::{IntervalSet, PiecewiseTranslation, Q};

/// Union of the cells `[k/2^bits, (k+1)/2^bits)` selected by `mask`.
pub fn dyadic(mask: &[bool]) -> IntervalSet {
    let n = mask.len() as u128;
    IntervalSet::from_pairs(mask.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| (qu(k as u128) / qu(n), qu(k as u128 + 1) / qu(n))))
}

pub fn dyadic_set(bits: u32) -> impl Strategy<Value = IntervalSet> {
    prop::collection::vec(any::<bool>(), 1usize << bits).prop_map(|m| dyadic(&m))
}

/// Finite unions of intervals with endpoints `k/den`.
pub fn rational_set(den: i64) -> impl Strategy<Value = IntervalSet> {
    prop::collection::vec((0..den, 1..=den), 0..5).prop_map(move |v| {
        IntervalSet::from_pairs(v.into_iter().filter_map(|(a, len)| {
            let b = (a + len).min(den);
            (a < b).then(|| (q(a, den), q(b, den)))
        }))
    })
}

/// `μ(TⁿA ∩ B)` by stepping images one application at a time; `None` if some
/// mass of `A` leaves the domain on the way.
pub fn stepped_correlation(t: &PiecewiseTranslation, a: &IntervalSet, b: &IntervalSet, n: i64) -> Option<Q> {
    let step = if n < 0 { t.inverse() } else { t.clone() };
    let mut cur = a.clone();
    for _ in 0..n.unsigned_abs() {
        let (img, blocked) = step.image_partial(&cur);
        if !blocked.is_empty() {
            return None;
        }
        cur = img;
    }
    Some(cur.intersection_measure(b))
}
