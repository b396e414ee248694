//! Single columns of equal-width levels and the level-indexed set form used
//! for fast exact correlation sweeps.

use crate::interval::{IntervalSet, RationalInterval};
use crate::rational::{qu, Q};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use std::collections::HashMap;

/// Where the levels of a column sit inside `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Layout {
    /// Level `ℓ` starts at `positions[ℓ]` frame units.
    Explicit { positions: Vec<u128>, slot_level: Vec<u32> },
    /// Base-`base` digit reversal: the adding-machine layout.
    DigitReversal { base: u32, digits: u32 },
}

/// A column of `height` levels, each a single interval of width `width_units`
/// frame units, inside a frame of `total_units` units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    layout: Layout,
    height: usize,
    width_units: u128,
    total_units: u128,
    closed: bool,
}

const NO_LEVEL: u32 = u32::MAX;

impl Column {
    pub(crate) fn explicit(positions: Vec<u128>, width_units: u128, total_units: u128, closed: bool) -> Self {
        let slots = (total_units / width_units) as usize;
        let mut slot_level = vec![NO_LEVEL; slots];
        for (l, p) in positions.iter().enumerate() {
            slot_level[(p / width_units) as usize] = l as u32;
        }
        Column { height: positions.len(), layout: Layout::Explicit { positions, slot_level }, width_units, total_units, closed }
    }

    pub(crate) fn digit_reversal(base: u32, digits: u32, closed: bool) -> Self {
        let h = (base as u128).pow(digits);
        Column { layout: Layout::DigitReversal { base, digits }, height: h as usize, width_units: 1, total_units: h, closed }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Whether the top level wraps onto the bottom (periodic maps).
    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn width(&self) -> Q {
        Q::new(BigInt::from(self.width_units), BigInt::from(self.total_units))
    }

    pub fn width_units(&self) -> u128 {
        self.width_units
    }

    pub fn total_units(&self) -> u128 {
        self.total_units
    }

    /// Measure covered by the column.
    pub fn coverage(&self) -> Q {
        self.width() * qu(self.height as u128)
    }

    fn slots(&self) -> usize {
        (self.total_units / self.width_units) as usize
    }

    pub fn position_units(&self, level: usize) -> u128 {
        match &self.layout {
            Layout::Explicit { positions, .. } => positions[level],
            Layout::DigitReversal { base, digits } => reverse_digits(level as u128, *base, *digits),
        }
    }

    fn slot_level(&self, slot: usize) -> Option<usize> {
        match &self.layout {
            Layout::Explicit { slot_level, .. } => {
                let l = slot_level[slot];
                (l != NO_LEVEL).then_some(l as usize)
            }
            Layout::DigitReversal { base, digits } => Some(reverse_digits(slot as u128, *base, *digits) as usize),
        }
    }

    pub fn level_interval(&self, level: usize) -> RationalInterval {
        let p = self.position_units(level);
        let t = BigInt::from(self.total_units);
        RationalInterval::raw(Q::new(BigInt::from(p), t.clone()), Q::new(BigInt::from(p + self.width_units), t))
    }

    pub fn level_set(&self, level: usize) -> IntervalSet {
        let iv = self.level_interval(level);
        IntervalSet::interval(iv.lo().clone(), iv.hi().clone())
    }

    /// Union of the given levels as an interval set.
    pub fn levels_set(&self, levels: impl IntoIterator<Item = usize>) -> IntervalSet {
        IntervalSet::from_intervals(levels.into_iter().map(|l| self.level_interval(l)).collect())
    }

    /// Everything the column does not cover.
    pub fn uncovered(&self) -> IntervalSet {
        let covered = self.levels_set(0..self.height);
        covered.complement()
    }

    /// Splits `s` into per-level local shapes (normalized to `[0, 1)` inside the level).
    pub fn decompose(&self, s: &IntervalSet) -> ColumnSet {
        let total = qu(self.total_units);
        let w = self.width_units;
        let wq = qu(w);
        let mut per_level: HashMap<usize, Vec<RationalInterval>> = HashMap::new();
        let mut outside = Vec::new();
        for iv in s.pieces() {
            let lo = iv.lo() * &total;
            let hi = iv.hi() * &total;
            let first = (lo.floor().to_integer() / BigInt::from(w)).to_usize().unwrap_or(0);
            let last_excl = {
                let c = hi.ceil().to_integer();
                let (d, r) = c.div_rem(&BigInt::from(w));
                (if r.is_zero() { d } else { d + 1 }).to_usize().unwrap_or(0)
            };
            for slot in first..last_excl.min(self.slots()) {
                let slo = qu(slot as u128 * w);
                let shi = &slo + &wq;
                let a = if lo > slo { lo.clone() } else { slo.clone() };
                let b = if hi < shi { hi.clone() } else { shi.clone() };
                if a >= b {
                    continue;
                }
                match self.slot_level(slot) {
                    Some(l) => per_level
                        .entry(l)
                        .or_default()
                        .push(RationalInterval::raw((&a - &slo) / &wq, (&b - &slo) / &wq)),
                    None => outside.push(RationalInterval::raw(a / &total, b / &total)),
                }
            }
        }
        let mut b = ColumnSetBuilder::new(self);
        let mut levels: Vec<_> = per_level.into_iter().collect();
        levels.sort_by_key(|(l, _)| *l);
        for (l, ivs) in levels {
            b.add(l, IntervalSet::from_intervals(ivs));
        }
        let mut cs = b.finish();
        cs.outside = IntervalSet::from_intervals(outside);
        cs
    }

    /// Translation offset carrying level `from` onto level `to`.
    pub fn offset(&self, from: usize, to: usize) -> Q {
        let a = self.position_units(from) as i128;
        let b = self.position_units(to) as i128;
        Q::new(BigInt::from(b - a), BigInt::from(self.total_units))
    }
}

fn reverse_digits(mut x: u128, base: u32, digits: u32) -> u128 {
    let b = base as u128;
    let mut r = 0u128;
    for _ in 0..digits {
        r = r * b + x % b;
        x /= b;
    }
    r
}

/// A set described level by level: each level carries a local shape
/// (a subset of `[0, 1)` in level-normalized coordinates), grouped into bitsets.
#[derive(Clone, Debug)]
pub struct ColumnSet {
    height: usize,
    closed: bool,
    width: Q,
    shapes: Vec<(IntervalSet, Vec<u64>)>,
    outside: IntervalSet,
}

pub(crate) struct ColumnSetBuilder {
    height: usize,
    closed: bool,
    width: Q,
    index: HashMap<IntervalSet, usize>,
    shapes: Vec<(IntervalSet, Vec<u64>)>,
}

impl ColumnSetBuilder {
    pub(crate) fn new(col: &Column) -> Self {
        ColumnSetBuilder { height: col.height, closed: col.closed, width: col.width(), index: HashMap::new(), shapes: Vec::new() }
    }

    pub(crate) fn add(&mut self, level: usize, shape: IntervalSet) {
        if shape.is_empty() {
            return;
        }
        let words = self.height.div_ceil(64);
        let k = *self.index.entry(shape.clone()).or_insert_with(|| {
            self.shapes.push((shape, vec![0u64; words]));
            self.shapes.len() - 1
        });
        self.shapes[k].1[level / 64] |= 1 << (level % 64);
    }

    pub(crate) fn finish(self) -> ColumnSet {
        ColumnSet { height: self.height, closed: self.closed, width: self.width, shapes: self.shapes, outside: IntervalSet::empty() }
    }
}

fn full_shape() -> IntervalSet {
    IntervalSet::unit()
}

impl ColumnSet {
    /// Union of whole levels.
    pub fn from_levels(col: &Column, levels: impl IntoIterator<Item = usize>) -> ColumnSet {
        let mut b = ColumnSetBuilder::new(col);
        for l in levels {
            b.add(l, full_shape());
        }
        b.finish()
    }

    pub fn measure(&self) -> Q {
        let mut acc = self.outside.measure();
        for (shape, bits) in &self.shapes {
            acc += shape.measure() * &self.width * qu(popcount(bits) as u128);
        }
        acc
    }

    /// Mass lying off the column (unused spacer reserve).
    pub fn outside(&self) -> &IntervalSet {
        &self.outside
    }

    pub fn shape_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn levels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = Vec::new();
        for (_, bits) in &self.shapes {
            v.extend(ones(bits));
        }
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn max_level(&self) -> Option<usize> {
        self.levels().last().copied()
    }

    pub fn min_level(&self) -> Option<usize> {
        self.levels().first().copied()
    }

    /// Mass on levels `>= from`.
    pub fn mass_from_level(&self, from: usize) -> Q {
        let mut acc = Q::zero();
        for (shape, bits) in &self.shapes {
            let c = ones(bits).filter(|&l| l >= from).count();
            acc += shape.measure() * &self.width * qu(c as u128);
        }
        acc
    }

    /// Mass on levels `< below`.
    pub fn mass_below_level(&self, below: usize) -> Q {
        let mut acc = Q::zero();
        for (shape, bits) in &self.shapes {
            let c = ones(bits).filter(|&l| l < below).count();
            acc += shape.measure() * &self.width * qu(c as u128);
        }
        acc
    }

    /// Mass carried by each level.
    pub fn level_masses(&self) -> Vec<Q> {
        let mut v = vec![Q::zero(); self.height];
        for (shape, bits) in &self.shapes {
            let m = shape.measure() * &self.width;
            for l in ones(bits) {
                v[l] += &m;
            }
        }
        v
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    /// Rebuilds the interval-set form.
    pub fn to_interval_set(&self, col: &Column) -> IntervalSet {
        let mut v = Vec::new();
        for (shape, bits) in &self.shapes {
            for l in ones(bits) {
                let iv = col.level_interval(l);
                let w = iv.len();
                for p in shape.pieces() {
                    v.push(RationalInterval::raw(iv.lo() + &w * p.lo(), iv.lo() + &w * p.hi()));
                }
            }
        }
        v.extend(self.outside.pieces().iter().cloned());
        IntervalSet::from_intervals(v)
    }

    /// `Σ` over level pairs `(ℓ, ℓ + n)` of the overlap of this set's shape at
    /// `ℓ` with `other`'s shape at `ℓ + n` (cyclically for closed columns):
    /// the part of `μ(T^n A ∩ B)` resolved inside the column, for `n >= 0`.
    pub fn shifted_overlap(&self, other: &ColumnSet, n: usize) -> Q {
        self.shifted_overlap_with(other, &self.shape_overlaps(other), n)
    }

    /// Nonzero `(i, j, μ(sᵢ ∩ tⱼ))` over this set's shapes `s` and `other`'s `t`.
    pub(crate) fn shape_overlaps(&self, other: &ColumnSet) -> Vec<(usize, usize, Q)> {
        let mut out = Vec::new();
        for (i, (sa, _)) in self.shapes.iter().enumerate() {
            for (j, (sb, _)) in other.shapes.iter().enumerate() {
                let m = sa.intersection_measure(sb);
                if !m.is_zero() {
                    out.push((i, j, m));
                }
            }
        }
        out
    }

    /// `shifted_overlap` with the overlaps precomputed; `transposed` reads the
    /// pairs as `(j, i)`.
    pub(crate) fn shifted_overlap_pairs(&self, other: &ColumnSet, overlaps: &[(usize, usize, Q)], transposed: bool, n: usize) -> Q {
        debug_assert_eq!(self.height, other.height);
        let h = self.height;
        let mut known = Q::zero();
        for (i, j, m) in overlaps {
            let (i, j) = if transposed { (*j, *i) } else { (*i, *j) };
            let (ba, bb) = (&self.shapes[i].1, &other.shapes[j].1);
            let c = if self.closed { cyclic_shift_and_count(ba, bb, n % h.max(1), h) } else { shift_and_count(ba, bb, n) };
            if c > 0 {
                known += m * qu(c as u128);
            }
        }
        known * &self.width
    }

    fn shifted_overlap_with(&self, other: &ColumnSet, overlaps: &[(usize, usize, Q)], n: usize) -> Q {
        self.shifted_overlap_pairs(other, overlaps, false, n)
    }
}

fn popcount(bits: &[u64]) -> u32 {
    bits.iter().map(|w| w.count_ones()).sum()
}

fn ones(bits: &[u64]) -> impl Iterator<Item = usize> + '_ {
    bits.iter().enumerate().flat_map(|(i, &w)| {
        let mut w = w;
        std::iter::from_fn(move || {
            if w == 0 {
                None
            } else {
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + t)
            }
        })
    })
}

/// Number of `ℓ` with bit `ℓ` of `a` and bit `ℓ + n` of `b` both set.
fn shift_and_count(a: &[u64], b: &[u64], n: usize) -> u64 {
    let (q, r) = (n / 64, n % 64);
    let mut c = 0u64;
    for j in q..b.len() {
        let lo = a.get(j - q).copied().unwrap_or(0);
        let shifted = if r == 0 {
            lo
        } else {
            let below = if j > q { a[j - q - 1] } else { 0 };
            (lo << r) | (below >> (64 - r))
        };
        c += (shifted & b[j]).count_ones() as u64;
    }
    c
}

fn cyclic_shift_and_count(a: &[u64], b: &[u64], n: usize, h: usize) -> u64 {
    if n == 0 {
        return shift_and_count(a, b, 0);
    }
    // Levels ℓ < h - n move up by n; the rest wrap to ℓ + n - h.
    let up = shift_and_count(a, b, n);
    let mut c = 0u64;
    for l in ones(a).filter(|&l| l >= h - n) {
        let t = l + n - h;
        if b[t / 64] >> (t % 64) & 1 == 1 {
            c += 1;
        }
    }
    up + c
}

/// Exact `width = 1/levels` helper for tests and small builders.
pub fn unit_width(levels: u128) -> Q {
    Q::new(BigInt::one(), BigInt::from(levels))
}
