//! Half-open rational intervals and their finite disjoint unions.

use crate::rational::{frac, parse_q, zero, Q};
use num_traits::{One, Zero};
use std::fmt;

/// The half-open interval `[lo, hi)` with `lo < hi`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RationalInterval {
    lo: Q,
    hi: Q,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IntervalError {
    #[error("empty or reversed interval [{lo}, {hi})")]
    Empty { lo: String, hi: String },
    #[error("interval [{lo}, {hi}) leaves the unit interval")]
    OutOfRange { lo: String, hi: String },
    #[error("malformed interval text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl RationalInterval {
    /// Interval inside `[0, 1]`; fails when empty or out of range.
    pub fn new(lo: Q, hi: Q) -> Result<Self, IntervalError> {
        if lo >= hi {
            return Err(IntervalError::Empty { lo: frac(&lo), hi: frac(&hi) });
        }
        if lo < zero() || hi > Q::one() {
            return Err(IntervalError::OutOfRange { lo: frac(&lo), hi: frac(&hi) });
        }
        Ok(RationalInterval { lo, hi })
    }

    /// Skips the unit-range check; still requires `lo < hi`.
    pub(crate) fn raw(lo: Q, hi: Q) -> Self {
        debug_assert!(lo < hi);
        RationalInterval { lo, hi }
    }

    pub fn lo(&self) -> &Q {
        &self.lo
    }

    pub fn hi(&self) -> &Q {
        &self.hi
    }

    pub fn len(&self) -> Q {
        &self.hi - &self.lo
    }

    pub fn contains(&self, x: &Q) -> bool {
        &self.lo <= x && x < &self.hi
    }

    pub fn intersect(&self, other: &RationalInterval) -> Option<RationalInterval> {
        let lo = if self.lo >= other.lo { &self.lo } else { &other.lo };
        let hi = if self.hi <= other.hi { &self.hi } else { &other.hi };
        (lo < hi).then(|| RationalInterval::raw(lo.clone(), hi.clone()))
    }

    pub fn translate(&self, by: &Q) -> RationalInterval {
        RationalInterval::raw(&self.lo + by, &self.hi + by)
    }
}

impl fmt::Display for RationalInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", frac(&self.lo), frac(&self.hi))
    }
}

/// A finite union of half-open intervals kept in canonical form:
/// sorted, pairwise disjoint, and with no two pieces touching.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct IntervalSet {
    pieces: Vec<RationalInterval>,
}

#[derive(Clone, Copy)]
enum Op {
    Union,
    Intersect,
    Difference,
    SymmetricDifference,
}

impl Op {
    fn keep(self, a: bool, b: bool) -> bool {
        match self {
            Op::Union => a || b,
            Op::Intersect => a && b,
            Op::Difference => a && !b,
            Op::SymmetricDifference => a != b,
        }
    }
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet { pieces: Vec::new() }
    }

    /// The whole unit interval `[0, 1)`.
    pub fn unit() -> Self {
        IntervalSet { pieces: vec![RationalInterval::raw(Q::zero(), Q::one())] }
    }

    pub fn interval(lo: Q, hi: Q) -> Self {
        if lo < hi {
            IntervalSet { pieces: vec![RationalInterval::raw(lo, hi)] }
        } else {
            IntervalSet::empty()
        }
    }

    /// Canonicalizes an arbitrary list of (possibly overlapping) intervals.
    pub fn from_intervals(mut v: Vec<RationalInterval>) -> Self {
        v.sort_by(|a, b| a.lo.cmp(&b.lo));
        let mut out: Vec<RationalInterval> = Vec::with_capacity(v.len());
        for iv in v {
            match out.last_mut() {
                Some(last) if iv.lo <= last.hi => {
                    if iv.hi > last.hi {
                        last.hi = iv.hi;
                    }
                }
                _ => out.push(iv),
            }
        }
        IntervalSet { pieces: out }
    }

    /// Builds from `(lo, hi)` pairs, dropping empty ones.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Q, Q)>) -> Self {
        Self::from_intervals(
            pairs
                .into_iter()
                .filter(|(a, b)| a < b)
                .map(|(a, b)| RationalInterval::raw(a, b))
                .collect(),
        )
    }

    pub fn pieces(&self) -> &[RationalInterval] {
        &self.pieces
    }

    pub fn into_pieces(self) -> Vec<RationalInterval> {
        self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    /// Lebesgue measure, exact.
    pub fn measure(&self) -> Q {
        self.pieces.iter().fold(Q::zero(), |acc, p| acc + p.len())
    }

    pub fn contains(&self, x: &Q) -> bool {
        let i = self.pieces.partition_point(|p| &p.hi <= x);
        i < self.pieces.len() && self.pieces[i].contains(x)
    }

    /// True when all pieces lie inside `[0, 1)`.
    pub fn in_unit(&self) -> bool {
        match (self.pieces.first(), self.pieces.last()) {
            (Some(f), Some(l)) => f.lo >= Q::zero() && l.hi <= Q::one(),
            _ => true,
        }
    }

    fn combine(&self, other: &IntervalSet, op: Op) -> IntervalSet {
        // Merge-walk over the boundary points of both sets.
        let (a, b) = (&self.pieces, &other.pieces);
        let (mut i, mut j) = (0usize, 0usize);
        let (mut in_a, mut in_b) = (false, false);
        let mut out: Vec<RationalInterval> = Vec::new();
        let mut open: Option<Q> = None;
        loop {
            let next_a = a.get(i).map(|p| if in_a { &p.hi } else { &p.lo });
            let next_b = b.get(j).map(|p| if in_b { &p.hi } else { &p.lo });
            let x = match (next_a, next_b) {
                (None, None) => break,
                (Some(x), None) => x.clone(),
                (None, Some(y)) => y.clone(),
                (Some(x), Some(y)) => {
                    if x <= y {
                        x.clone()
                    } else {
                        y.clone()
                    }
                }
            };
            if next_a == Some(&x) {
                if in_a {
                    i += 1;
                }
                in_a = !in_a;
            }
            if next_b == Some(&x) {
                if in_b {
                    j += 1;
                }
                in_b = !in_b;
            }
            let keep = op.keep(in_a, in_b);
            match (&open, keep) {
                (None, true) => open = Some(x),
                (Some(_), false) => {
                    let lo = open.take().unwrap();
                    if lo < x {
                        push_merge(&mut out, RationalInterval::raw(lo, x));
                    }
                }
                _ => {}
            }
        }
        IntervalSet { pieces: out }
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        self.combine(other, Op::Union)
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        self.combine(other, Op::Intersect)
    }

    pub fn difference(&self, other: &IntervalSet) -> IntervalSet {
        self.combine(other, Op::Difference)
    }

    pub fn symmetric_difference(&self, other: &IntervalSet) -> IntervalSet {
        self.combine(other, Op::SymmetricDifference)
    }

    pub fn union_all<'a>(sets: impl IntoIterator<Item = &'a IntervalSet>) -> IntervalSet {
        let mut v = Vec::new();
        for s in sets {
            v.extend(s.pieces.iter().cloned());
        }
        IntervalSet::from_intervals(v)
    }

    pub fn complement(&self) -> IntervalSet {
        IntervalSet::unit().difference(self)
    }

    pub fn is_subset(&self, other: &IntervalSet) -> bool {
        self.difference(other).is_empty()
    }

    pub fn is_disjoint(&self, other: &IntervalSet) -> bool {
        self.intersect(other).is_empty()
    }

    /// Measure of the intersection without materializing it.
    pub fn intersection_measure(&self, other: &IntervalSet) -> Q {
        let (a, b) = (&self.pieces, &other.pieces);
        let (mut i, mut j) = (0, 0);
        let mut acc = Q::zero();
        while i < a.len() && j < b.len() {
            if let Some(x) = a[i].intersect(&b[j]) {
                acc += x.len();
            }
            if a[i].hi <= b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        acc
    }

    pub fn translate(&self, by: &Q) -> IntervalSet {
        IntervalSet { pieces: self.pieces.iter().map(|p| p.translate(by)).collect() }
    }

    /// Left part of the set with the given measure (order of `[0, 1)`).
    pub fn prefix_by_measure(&self, m: &Q) -> IntervalSet {
        self.slice_by_measure(&Q::zero(), m)
    }

    /// The part of the set lying between cumulative measures `from` and `to`,
    /// counting from the left.
    pub fn slice_by_measure(&self, from: &Q, to: &Q) -> IntervalSet {
        let mut out = Vec::new();
        let mut seen = Q::zero();
        for p in &self.pieces {
            let len = p.len();
            let start = &seen;
            let end = &seen + &len;
            if &end <= from {
                seen = end;
                continue;
            }
            if start >= to {
                break;
            }
            let lo = if start < from { &p.lo + (from - start) } else { p.lo.clone() };
            let hi = if &end > to { &p.lo + (to - start) } else { p.hi.clone() };
            if lo < hi {
                out.push(RationalInterval::raw(lo, hi));
            }
            seen = end;
        }
        IntervalSet { pieces: out }
    }

    /// Position of the point at cumulative measure `m` from the left.
    pub fn point_at_measure(&self, m: &Q) -> Option<Q> {
        let mut seen = Q::zero();
        for p in &self.pieces {
            let len = p.len();
            if &(&seen + &len) > m {
                return Some(&p.lo + (m - &seen));
            }
            seen += len;
        }
        None
    }

    /// Serializes as a header line `intervals <k>` followed by one `lo hi` line per piece.
    pub fn to_text(&self) -> String {
        let mut s = format!("intervals {}\n", self.pieces.len());
        for p in &self.pieces {
            s.push_str(&format!("{} {}\n", frac(&p.lo), frac(&p.hi)));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<IntervalSet, IntervalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let set = parse_interval_block(&mut lines, "intervals")?;
        Ok(set)
    }

    /// Parses the `lo:hi,lo:hi` form used on the command line.
    pub fn parse_spec(spec: &str) -> Result<IntervalSet, IntervalError> {
        let mut v = Vec::new();
        for (k, part) in spec.split(',').enumerate() {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let bad = |reason: &str| IntervalError::Parse { line: k + 1, reason: reason.into() };
            let (a, b) = part.split_once(':').ok_or_else(|| bad("expected lo:hi"))?;
            let lo = parse_q(a).map_err(|e| bad(&e.to_string()))?;
            let hi = parse_q(b).map_err(|e| bad(&e.to_string()))?;
            v.push(RationalInterval::new(lo, hi)?);
        }
        Ok(IntervalSet::from_intervals(v))
    }
}

fn push_merge(out: &mut Vec<RationalInterval>, iv: RationalInterval) {
    if let Some(last) = out.last_mut() {
        if last.hi == iv.lo {
            last.hi = iv.hi;
            return;
        }
    }
    out.push(iv);
}

pub(crate) fn parse_interval_block<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    header: &str,
) -> Result<IntervalSet, IntervalError> {
    let (ln, head) = lines.next().ok_or(IntervalError::Parse { line: 0, reason: "missing header".into() })?;
    let count = parse_header(ln, head, header)?;
    let mut v = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, line) = lines
            .next()
            .ok_or(IntervalError::Parse { line: ln + 1, reason: "truncated block".into() })?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 {
            return Err(IntervalError::Parse { line: ln + 1, reason: "expected `lo hi`".into() });
        }
        let lo = parse_q(f[0]).map_err(|e| IntervalError::Parse { line: ln + 1, reason: e.to_string() })?;
        let hi = parse_q(f[1]).map_err(|e| IntervalError::Parse { line: ln + 1, reason: e.to_string() })?;
        v.push(RationalInterval::new(lo, hi)?);
    }
    let set = IntervalSet::from_intervals(v.clone());
    if set.pieces != v {
        return Err(IntervalError::Parse { line: ln + 1, reason: "pieces not canonical".into() });
    }
    Ok(set)
}

pub(crate) fn parse_header(ln: usize, line: &str, header: &str) -> Result<usize, IntervalError> {
    let mut f = line.split_whitespace();
    if f.next() != Some(header) {
        return Err(IntervalError::Parse { line: ln + 1, reason: format!("expected `{header} <count>`") });
    }
    f.next()
        .and_then(|c| c.parse().ok())
        .ok_or(IntervalError::Parse { line: ln + 1, reason: "bad count".into() })
}

impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pieces.is_empty() {
            return write!(f, "∅");
        }
        for (k, p) in self.pieces.iter().enumerate() {
            if k > 0 {
                write!(f, " ∪ ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Exact measure of a set.
pub fn set_measure(s: &IntervalSet) -> Q {
    s.measure()
}

/// Which boolean operation [`set_algebra`] performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Intersect,
    Difference,
    SymmetricDifference,
}

pub fn set_algebra(a: &IntervalSet, b: &IntervalSet, kind: SetOp) -> IntervalSet {
    match kind {
        SetOp::Union => a.union(b),
        SetOp::Intersect => a.intersect(b),
        SetOp::Difference => a.difference(b),
        SetOp::SymmetricDifference => a.symmetric_difference(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn iv(a: i64, b: i64, d: i64) -> IntervalSet {
        IntervalSet::interval(q(a, d), q(b, d))
    }

    #[test]
    fn measures() {
        assert_eq!(iv(0, 1, 2).measure(), q(1, 2));
        assert_eq!(IntervalSet::empty().measure(), q(0, 1));
        let s = IntervalSet::interval(q(0, 1), q(1, 3)).union(&IntervalSet::interval(q(1, 2), q(2, 3)));
        assert_eq!(s.measure(), q(1, 2));
    }

    #[test]
    fn algebra_examples() {
        assert_eq!(iv(0, 2, 4).intersect(&iv(1, 3, 4)), iv(1, 2, 4));
        let u = iv(0, 1, 4).union(&iv(1, 2, 4));
        assert_eq!(u, iv(0, 1, 2));
        assert_eq!(u.len(), 1);
        assert!(u.symmetric_difference(&u).is_empty());
        assert_eq!(iv(0, 4, 4).difference(&iv(1, 2, 4)), iv(0, 1, 4).union(&iv(2, 4, 4)));
    }

    #[test]
    fn canonical_merges_overlaps() {
        let s = IntervalSet::from_pairs(vec![(q(1, 2), q(3, 4)), (q(0, 1), q(1, 2)), (q(1, 8), q(1, 4))]);
        assert_eq!(s, iv(0, 3, 4));
    }

    #[test]
    fn slices_by_measure() {
        let s = iv(0, 1, 4).union(&iv(2, 3, 4));
        assert_eq!(s.prefix_by_measure(&q(3, 8)), iv(0, 2, 8).union(&iv(4, 5, 8)));
        assert_eq!(s.slice_by_measure(&q(1, 8), &q(3, 8)), iv(1, 2, 8).union(&iv(4, 5, 8)));
        assert_eq!(s.point_at_measure(&q(1, 4)), Some(q(1, 2)));
        assert_eq!(s.point_at_measure(&q(1, 2)), None);
    }

    #[test]
    fn text_round_trip() {
        let s = iv(0, 1, 3).union(&iv(1, 2, 2));
        let t = s.to_text();
        assert_eq!(t, "intervals 2\n0/1 1/3\n1/2 1/1\n");
        assert_eq!(IntervalSet::from_text(&t).unwrap(), s);
        assert!(IntervalSet::from_text("intervals 2\n0/1 1/2\n").is_err());
        assert!(IntervalSet::from_text("intervals 2\n0/1 1/2\n1/2 1/1\n").is_err());
    }

    #[test]
    fn parse_spec_form() {
        assert_eq!(IntervalSet::parse_spec("0/1:1/2").unwrap(), iv(0, 1, 2));
        assert!(IntervalSet::parse_spec("1/2:1/4").is_err());
    }

    #[test]
    fn intersection_measure_matches() {
        let a = iv(0, 3, 8).union(&iv(5, 7, 8));
        let b = iv(2, 6, 8);
        assert_eq!(a.intersection_measure(&b), a.intersect(&b).measure());
    }
}
