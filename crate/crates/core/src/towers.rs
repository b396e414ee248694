//! Rokhlin towers over staged transformations.
//!
//! A tower is stored as *strands*: intervals of the base that move rigidly
//! through every level, each with its per-level left endpoint.

use crate::builders::StagedTransformation;
use crate::interval::{IntervalSet, RationalInterval};
use crate::maps::{MapError, PiecewiseTranslation};
use crate::rational::{frac, qu, Q};
use num_traits::Zero;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TowerError {
    #[error("tower of height {height} cannot reach coverage {requested} (best {available})")]
    CoverageUnattainable { height: usize, requested: String, available: String },
    #[error("target sweep measure {target} exceeds the full-base sweep {max}")]
    TargetTooLarge { target: String, max: String },
    #[error(transparent)]
    Map(#[from] MapError),
}

/// A base interval `[positions[0], positions[0] + width)` and the left
/// endpoints of its copies in each level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Strand {
    pub width: Q,
    pub positions: Vec<Q>,
}

impl Strand {
    pub fn interval(&self, level: usize) -> RationalInterval {
        let p = &self.positions[level];
        RationalInterval::raw(p.clone(), p + &self.width)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tower {
    base: IntervalSet,
    height: usize,
    strands: Vec<Strand>,
}

impl Tower {
    /// Builds a tower from strands; strands are kept sorted by base position.
    pub fn from_strands(height: usize, mut strands: Vec<Strand>) -> Tower {
        strands.sort_by(|a, b| a.positions[0].cmp(&b.positions[0]));
        let base = IntervalSet::from_intervals(strands.iter().map(|s| s.interval(0)).collect());
        Tower { base, height, strands }
    }

    /// Follows `base` through `height - 1` applications of `map`, splitting
    /// strands wherever a map piece boundary cuts them.
    pub fn trace(map: &PiecewiseTranslation, base: &IntervalSet, height: usize) -> Result<Tower, MapError> {
        let pieces: Vec<(RationalInterval, Q)> = map.pieces().map(|(iv, off)| (iv.clone(), off.clone())).collect();
        let mut work: Vec<Strand> =
            base.pieces().iter().map(|iv| Strand { width: iv.len(), positions: vec![iv.lo().clone()] }).collect();
        let mut done = Vec::new();
        let mut blocked = Q::zero();
        while let Some(mut s) = work.pop() {
            loop {
                if s.positions.len() == height {
                    done.push(s);
                    break;
                }
                let cur = s.interval(s.positions.len() - 1);
                let start = pieces.partition_point(|(iv, _)| iv.hi() <= cur.lo());
                let mut covered = cur.lo().clone();
                let mut parts: Vec<(Q, Q, Q)> = Vec::new();
                for (iv, off) in &pieces[start..] {
                    if iv.lo() >= cur.hi() {
                        break;
                    }
                    let Some(x) = iv.intersect(&cur) else { continue };
                    if x.lo() > &covered {
                        blocked += x.lo() - &covered;
                    }
                    covered = x.hi().clone();
                    parts.push((x.lo() - cur.lo(), x.len(), off.clone()));
                }
                if &covered < cur.hi() {
                    blocked += cur.hi() - &covered;
                }
                if parts.len() == 1 && parts[0].1 == s.width {
                    let next = s.positions.last().unwrap() + &parts[0].2;
                    s.positions.push(next);
                    continue;
                }
                for (shift, width, off) in parts {
                    let mut positions: Vec<Q> = s.positions.iter().map(|p| p + &shift).collect();
                    let next = positions.last().unwrap() + &off;
                    positions.push(next);
                    work.push(Strand { width, positions });
                }
                break;
            }
        }
        if !blocked.is_zero() {
            return Err(MapError::PartiallyUndefined { blocked });
        }
        Ok(Tower::from_strands(height, done))
    }

    pub fn base(&self) -> &IntervalSet {
        &self.base
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn strands(&self) -> &[Strand] {
        &self.strands
    }

    pub fn level(&self, i: usize) -> IntervalSet {
        IntervalSet::from_intervals(self.strands.iter().map(|s| s.interval(i)).collect())
    }

    pub fn levels(&self) -> Vec<IntervalSet> {
        (0..self.height).map(|i| self.level(i)).collect()
    }

    /// Union of all levels.
    pub fn support(&self) -> IntervalSet {
        IntervalSet::from_intervals(
            self.strands.iter().flat_map(|s| (0..self.height).map(move |i| s.interval(i))).collect(),
        )
    }

    pub fn coverage(&self) -> Q {
        self.base.measure() * qu(self.height as u128)
    }

    /// Exact check that the levels are pairwise disjoint.
    pub fn levels_disjoint(&self) -> bool {
        self.support().measure() == self.coverage()
    }

    /// Sub-tower over `sub ⊆ base`.
    pub fn restrict_base(&self, sub: &IntervalSet) -> Tower {
        let mut strands = Vec::new();
        for s in &self.strands {
            let b = s.interval(0);
            for iv in sub.pieces() {
                if let Some(x) = iv.intersect(&b) {
                    let shift = x.lo() - b.lo();
                    strands.push(Strand { width: x.len(), positions: s.positions.iter().map(|p| p + &shift).collect() });
                }
            }
        }
        Tower::from_strands(self.height, strands)
    }

    /// `{T^i x : x ∈ sub, 0 ≤ i < height} \ avoid`.
    pub fn sweep(&self, sub: &IntervalSet, avoid: &IntervalSet) -> IntervalSet {
        self.restrict_base(sub).support().difference(avoid)
    }

    /// Left-anchored base prefix whose sweep avoiding `avoid` has measure
    /// exactly `target`; the smallest such prefix.
    pub fn select_base_subset(&self, avoid: &IntervalSet, target: &Q) -> Result<IntervalSet, TowerError> {
        if target.is_zero() {
            return Ok(IntervalSet::empty());
        }
        let mut acc = Q::zero();
        let mut width_before = Q::zero();
        for s in &self.strands {
            let f = StrandSweep::new(s, avoid);
            let full = f.value_at_end();
            if &acc + &full >= *target {
                let u = f.invert(&(target - &acc));
                return Ok(self.base.prefix_by_measure(&(width_before + u)));
            }
            acc += full;
            width_before += &s.width;
        }
        Err(TowerError::TargetTooLarge { target: frac(target), max: frac(&acc) })
    }
}

/// `u ↦ Σ_i μ([pos_i, pos_i + u) \ avoid)` on `[0, width]`: piecewise linear
/// with slope equal to the number of levels whose point at `u` is outside `avoid`.
struct StrandSweep {
    width: Q,
    start_slope: i64,
    events: Vec<(Q, i64)>,
}

impl StrandSweep {
    fn new(s: &Strand, avoid: &IntervalSet) -> StrandSweep {
        let av = avoid.pieces();
        let mut start_slope = 0i64;
        let mut events = Vec::new();
        for p in &s.positions {
            let end = p + &s.width;
            if !avoid.contains(p) {
                start_slope += 1;
            }
            let first = av.partition_point(|iv| iv.hi() <= p);
            for iv in &av[first..] {
                if iv.lo() >= &end {
                    break;
                }
                if iv.lo() > p {
                    events.push((iv.lo() - p, -1));
                }
                if iv.hi() < &end {
                    events.push((iv.hi() - p, 1));
                }
            }
        }
        events.sort();
        StrandSweep { width: s.width.clone(), start_slope, events }
    }

    fn value_at_end(&self) -> Q {
        let mut v = Q::zero();
        let mut slope = self.start_slope;
        let mut at = Q::zero();
        for (u, d) in &self.events {
            v += (u - &at) * qu(slope as u128);
            at = u.clone();
            slope += d;
        }
        v + (&self.width - &at) * qu(slope as u128)
    }

    /// Smallest `u` with value `target` (which must not exceed the end value).
    fn invert(&self, target: &Q) -> Q {
        let mut v = Q::zero();
        let mut slope = self.start_slope;
        let mut at = Q::zero();
        let ends = self.events.iter().map(|(u, d)| (u.clone(), *d)).chain(std::iter::once((self.width.clone(), 0)));
        for (u, d) in ends {
            let seg = (&u - &at) * qu(slope as u128);
            if slope > 0 && &v + &seg >= *target {
                return at + (target - &v) / qu(slope as u128);
            }
            v += seg;
            at = u;
            slope += d;
        }
        self.width.clone()
    }
}

/// The native tower of height `height` cut from the column: blocks of
/// `height` consecutive levels starting at levels `0, height, 2·height, …`.
pub fn extract_tower(t: &StagedTransformation, height: usize, min_coverage: &Q) -> Result<Tower, TowerError> {
    let col = &t.column;
    let unattainable = |available: Q| TowerError::CoverageUnattainable {
        height,
        requested: frac(min_coverage),
        available: frac(&available),
    };
    if height == 0 || height > col.height() {
        return Err(unattainable(Q::zero()));
    }
    let blocks = col.height() / height;
    let coverage = col.width() * qu((blocks * height) as u128);
    if coverage <= *min_coverage {
        return Err(unattainable(coverage));
    }
    let width = col.width();
    let strands = (0..blocks)
        .map(|b| Strand {
            width: width.clone(),
            positions: (0..height).map(|i| col.level_interval(b * height + i).lo().clone()).collect(),
        })
        .collect();
    Ok(Tower::from_strands(height, strands))
}

/// Greedy Rokhlin tower for an arbitrary map: starting from `candidate`, the
/// part that can climb `height - 1` steps is kept, then for each `i` the points
/// of the base that return to it after `i` steps are removed.
pub fn greedy_tower(map: &PiecewiseTranslation, candidate: &IntervalSet, height: usize) -> Result<Tower, MapError> {
    let reach = map.iterate((height as i64 - 1).max(0));
    let mut base = candidate.intersect(&reach.domain());
    let mut step = map.clone();
    for _ in 1..height {
        let (img, _) = step.image_partial(&base);
        base = base.difference(&img);
        step = step.compose(map);
    }
    Tower::trace(map, &base, height)
}
