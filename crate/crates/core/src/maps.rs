//! Piecewise affine maps and piecewise translations of `[0, 1)`.

use crate::interval::{parse_header, IntervalError, IntervalSet, RationalInterval};
use crate::rational::{frac, parse_q, Q};
use num_traits::{One, Signed, Zero};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MapError {
    /// The query touched points where the finite stage leaves the map undefined.
    #[error("partially undefined: blocked mass {}", frac(.blocked))]
    PartiallyUndefined { blocked: Q },
    #[error("map pieces overlap or images collide: {0}")]
    NotInjective(String),
    #[error("scale must be positive: {0}")]
    BadScale(String),
    #[error("image leaves the unit interval: {0}")]
    OutOfRange(String),
    #[error("sources and residual do not tile [0, 1): {0}")]
    BadResidual(String),
    #[error("cannot transport between empty sets")]
    EmptySet,
    #[error(transparent)]
    Parse(#[from] IntervalError),
}

/// One piece `x ↦ scale·x + offset` on `source`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffinePiece {
    pub source: RationalInterval,
    pub scale: Q,
    pub offset: Q,
}

impl AffinePiece {
    pub fn apply(&self, x: &Q) -> Q {
        &self.scale * x + &self.offset
    }

    pub fn target(&self) -> RationalInterval {
        RationalInterval::raw(self.apply(self.source.lo()), self.apply(self.source.hi()))
    }

    fn restrict(&self, iv: &RationalInterval) -> Option<AffinePiece> {
        self.source.intersect(iv).map(|s| AffinePiece { source: s, scale: self.scale.clone(), offset: self.offset.clone() })
    }

    /// Restricts to the part whose image lies in `iv`.
    fn restrict_target(&self, iv: &RationalInterval) -> Option<AffinePiece> {
        let t = self.target().intersect(iv)?;
        let lo = (t.lo() - &self.offset) / &self.scale;
        let hi = (t.hi() - &self.offset) / &self.scale;
        Some(AffinePiece { source: RationalInterval::raw(lo, hi), scale: self.scale.clone(), offset: self.offset.clone() })
    }
}

/// Order-preserving affine pieces with disjoint sources and disjoint images.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PiecewiseAffineMap {
    pieces: Vec<AffinePiece>,
}

impl PiecewiseAffineMap {
    pub fn new(mut pieces: Vec<AffinePiece>) -> Result<Self, MapError> {
        for p in &pieces {
            if !p.scale.is_positive() {
                return Err(MapError::BadScale(frac(&p.scale)));
            }
        }
        pieces.sort_by(|a, b| a.source.lo().cmp(b.source.lo()));
        let m = PiecewiseAffineMap { pieces };
        m.check_injective()?;
        Ok(m.merged())
    }

    pub(crate) fn from_sorted_unchecked(pieces: Vec<AffinePiece>) -> Self {
        PiecewiseAffineMap { pieces }.merged()
    }

    pub fn identity_on(set: &IntervalSet) -> Self {
        PiecewiseAffineMap {
            pieces: set
                .pieces()
                .iter()
                .map(|s| AffinePiece { source: s.clone(), scale: Q::one(), offset: Q::zero() })
                .collect(),
        }
    }

    fn check_injective(&self) -> Result<(), MapError> {
        for w in self.pieces.windows(2) {
            if w[0].source.hi() > w[1].source.lo() {
                return Err(MapError::NotInjective(format!("sources {} and {}", w[0].source, w[1].source)));
            }
        }
        let mut t: Vec<RationalInterval> = self.pieces.iter().map(|p| p.target()).collect();
        t.sort();
        for w in t.windows(2) {
            if w[0].hi() > w[1].lo() {
                return Err(MapError::NotInjective(format!("images {} and {}", w[0], w[1])));
            }
        }
        Ok(())
    }

    /// Fuses neighbouring pieces that continue the same affine law.
    fn merged(self) -> Self {
        let mut out: Vec<AffinePiece> = Vec::with_capacity(self.pieces.len());
        for p in self.pieces {
            if let Some(last) = out.last_mut() {
                if last.source.hi() == p.source.lo() && last.scale == p.scale && last.offset == p.offset {
                    last.source = RationalInterval::raw(last.source.lo().clone(), p.source.hi().clone());
                    continue;
                }
            }
            out.push(p);
        }
        PiecewiseAffineMap { pieces: out }
    }

    pub fn pieces(&self) -> &[AffinePiece] {
        &self.pieces
    }

    pub fn domain(&self) -> IntervalSet {
        IntervalSet::from_intervals(self.pieces.iter().map(|p| p.source.clone()).collect())
    }

    pub fn range(&self) -> IntervalSet {
        IntervalSet::from_intervals(self.pieces.iter().map(|p| p.target()).collect())
    }

    pub fn is_translation(&self) -> bool {
        self.pieces.iter().all(|p| p.scale.is_one())
    }

    fn piece_index(&self, x: &Q) -> Option<usize> {
        let i = self.pieces.partition_point(|p| p.source.hi() <= x);
        (i < self.pieces.len() && self.pieces[i].source.contains(x)).then_some(i)
    }

    pub fn apply(&self, x: &Q) -> Option<Q> {
        self.piece_index(x).map(|i| self.pieces[i].apply(x))
    }

    /// Image of the part of `s` inside the domain, and the part outside it.
    pub fn image_partial(&self, s: &IntervalSet) -> (IntervalSet, IntervalSet) {
        let mut img = Vec::new();
        let mut covered = Vec::new();
        for iv in s.pieces() {
            let start = self.pieces.partition_point(|p| p.source.hi() <= iv.lo());
            for p in &self.pieces[start..] {
                if p.source.lo() >= iv.hi() {
                    break;
                }
                if let Some(r) = p.restrict(iv) {
                    covered.push(r.source.clone());
                    img.push(r.target());
                }
            }
        }
        let covered = IntervalSet::from_intervals(covered);
        (IntervalSet::from_intervals(img), s.difference(&covered))
    }

    pub fn image(&self, s: &IntervalSet) -> Result<IntervalSet, MapError> {
        let (img, blocked) = self.image_partial(s);
        if blocked.is_empty() {
            Ok(img)
        } else {
            Err(MapError::PartiallyUndefined { blocked: blocked.measure() })
        }
    }

    pub fn inverse(&self) -> PiecewiseAffineMap {
        let mut v: Vec<AffinePiece> = self
            .pieces
            .iter()
            .map(|p| {
                let scale = Q::one() / &p.scale;
                let offset = -(&p.offset * &scale);
                AffinePiece { source: p.target(), scale, offset }
            })
            .collect();
        v.sort_by(|a, b| a.source.lo().cmp(b.source.lo()));
        PiecewiseAffineMap { pieces: v }.merged()
    }

    /// Preimage of `s`: the points of the domain mapped into `s`.
    pub fn preimage(&self, s: &IntervalSet) -> IntervalSet {
        self.inverse().image_partial(s).0
    }

    /// `self ∘ inner`, defined where `inner` is defined and lands in `self`'s domain.
    pub fn compose(&self, inner: &PiecewiseAffineMap) -> PiecewiseAffineMap {
        let mut out = Vec::new();
        for g in &inner.pieces {
            let t = g.target();
            let start = self.pieces.partition_point(|p| p.source.hi() <= t.lo());
            for f in &self.pieces[start..] {
                if f.source.lo() >= t.hi() {
                    break;
                }
                if let Some(part) = g.restrict_target(&f.source) {
                    out.push(AffinePiece {
                        source: part.source,
                        scale: &f.scale * &g.scale,
                        offset: &f.scale * &g.offset + &f.offset,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.source.lo().cmp(b.source.lo()));
        PiecewiseAffineMap { pieces: out }.merged()
    }

    pub fn restrict(&self, s: &IntervalSet) -> PiecewiseAffineMap {
        let mut out = Vec::new();
        for iv in s.pieces() {
            let start = self.pieces.partition_point(|p| p.source.hi() <= iv.lo());
            for p in &self.pieces[start..] {
                if p.source.lo() >= iv.hi() {
                    break;
                }
                if let Some(r) = p.restrict(iv) {
                    out.push(r);
                }
            }
        }
        PiecewiseAffineMap { pieces: out }.merged()
    }

    /// Joins maps with disjoint domains and disjoint images.
    pub fn join(parts: impl IntoIterator<Item = PiecewiseAffineMap>) -> Result<PiecewiseAffineMap, MapError> {
        let pieces: Vec<AffinePiece> = parts.into_iter().flat_map(|m| m.pieces).collect();
        PiecewiseAffineMap::new(pieces)
    }

    /// Points of the common domain where the two maps take different values.
    pub fn disagreement(&self, other: &PiecewiseAffineMap) -> IntervalSet {
        let mut bad = Vec::new();
        let (a, b) = (&self.pieces, &other.pieces);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            if let Some(x) = a[i].source.intersect(&b[j].source) {
                // Two affine laws agree on a nondegenerate interval only if identical.
                if a[i].scale != b[j].scale || a[i].offset != b[j].offset {
                    bad.push(x);
                }
            }
            if a[i].source.hi() <= b[j].source.hi() {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet::from_intervals(bad)
    }
}

/// An invertible, measure-preserving, finite-stage map of `[0, 1)` given by
/// translated pieces, plus the explicit set where it is left undefined.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PiecewiseTranslation {
    map: PiecewiseAffineMap,
    residual: IntervalSet,
}

impl PiecewiseTranslation {
    /// Pieces as `(source, offset)`; the residual is everything not covered by a source.
    pub fn new(pieces: Vec<(RationalInterval, Q)>) -> Result<Self, MapError> {
        let map = PiecewiseAffineMap::new(
            pieces.into_iter().map(|(source, offset)| AffinePiece { source, scale: Q::one(), offset }).collect(),
        )?;
        Self::from_affine(map)
    }

    /// Pieces plus an explicitly stated residual, which must tile `[0, 1)` with the sources.
    pub fn with_residual(pieces: Vec<(RationalInterval, Q)>, residual: IntervalSet) -> Result<Self, MapError> {
        let t = Self::new(pieces)?;
        if t.residual != residual {
            return Err(MapError::BadResidual(format!("stated {residual}, actual {}", t.residual)));
        }
        Ok(t)
    }

    pub fn from_affine(map: PiecewiseAffineMap) -> Result<Self, MapError> {
        if !map.is_translation() {
            return Err(MapError::BadScale("translation pieces need scale 1".into()));
        }
        let dom = map.domain();
        let rng = map.range();
        if !dom.in_unit() {
            return Err(MapError::OutOfRange(format!("source {dom}")));
        }
        if !rng.in_unit() {
            return Err(MapError::OutOfRange(format!("image {rng}")));
        }
        Ok(PiecewiseTranslation { residual: dom.complement(), map })
    }

    pub(crate) fn from_affine_unchecked(map: PiecewiseAffineMap) -> Self {
        let residual = map.domain().complement();
        PiecewiseTranslation { map, residual }
    }

    /// Sorted, non-overlapping translation pieces with their exact residual.
    pub(crate) fn from_pieces_unchecked(pieces: Vec<(RationalInterval, Q)>, residual: IntervalSet) -> Self {
        let one = Q::one();
        let pieces = pieces.into_iter().map(|(source, offset)| AffinePiece { source, scale: one.clone(), offset }).collect();
        PiecewiseTranslation { map: PiecewiseAffineMap::from_sorted_unchecked(pieces), residual }
    }

    pub fn identity() -> Self {
        PiecewiseTranslation { map: PiecewiseAffineMap::identity_on(&IntervalSet::unit()), residual: IntervalSet::empty() }
    }

    /// Translation `x ↦ x + p/q mod 1`, fully defined.
    pub fn rotation(shift: &Q) -> Self {
        let s = shift - shift.floor();
        if s.is_zero() {
            return Self::identity();
        }
        let cut = Q::one() - &s;
        let pieces = vec![
            (RationalInterval::raw(Q::zero(), cut.clone()), s.clone()),
            (RationalInterval::raw(cut, Q::one()), s - Q::one()),
        ];
        Self::new(pieces).expect("rotation pieces are valid")
    }

    pub fn as_affine(&self) -> &PiecewiseAffineMap {
        &self.map
    }

    pub fn pieces(&self) -> impl Iterator<Item = (&RationalInterval, &Q)> {
        self.map.pieces.iter().map(|p| (&p.source, &p.offset))
    }

    pub fn piece_count(&self) -> usize {
        self.map.pieces.len()
    }

    pub fn residual(&self) -> &IntervalSet {
        &self.residual
    }

    pub fn domain(&self) -> IntervalSet {
        self.map.domain()
    }

    pub fn range(&self) -> IntervalSet {
        self.map.range()
    }

    pub fn apply(&self, x: &Q) -> Option<Q> {
        self.map.apply(x)
    }

    /// Image of `s`; fails when `s` meets the undefined residual.
    pub fn image(&self, s: &IntervalSet) -> Result<IntervalSet, MapError> {
        self.map.image(s)
    }

    pub fn image_partial(&self, s: &IntervalSet) -> (IntervalSet, IntervalSet) {
        self.map.image_partial(s)
    }

    pub fn inverse(&self) -> PiecewiseTranslation {
        PiecewiseTranslation::from_affine_unchecked(self.map.inverse())
    }

    pub fn preimage(&self, s: &IntervalSet) -> IntervalSet {
        self.map.preimage(s)
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &PiecewiseTranslation) -> PiecewiseTranslation {
        PiecewiseTranslation::from_affine_unchecked(self.map.compose(&inner.map))
    }

    /// The `n`-fold composite (inverse composites for `n < 0`); `n = 0` is the identity on the domain.
    pub fn iterate(&self, n: i64) -> PiecewiseTranslation {
        if n == 0 {
            return PiecewiseTranslation::from_affine_unchecked(PiecewiseAffineMap::identity_on(&self.domain()));
        }
        let base = if n < 0 { self.inverse() } else { self.clone() };
        let mut k = n.unsigned_abs();
        let mut acc: Option<PiecewiseTranslation> = None;
        let mut pow = base;
        loop {
            if k & 1 == 1 {
                acc = Some(match acc {
                    None => pow.clone(),
                    Some(a) => a.compose(&pow),
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            pow = pow.compose(&pow);
        }
        acc.expect("n != 0")
    }

    /// Applies the map `n` times to `s`, one step at a time.
    pub fn image_iter(&self, s: &IntervalSet, n: i64) -> Result<IntervalSet, MapError> {
        let step = if n < 0 { self.inverse() } else { self.clone() };
        let mut cur = s.clone();
        for _ in 0..n.unsigned_abs() {
            cur = step.image(&cur)?;
        }
        Ok(cur)
    }

    pub fn restrict(&self, s: &IntervalSet) -> PiecewiseTranslation {
        PiecewiseTranslation::from_affine_unchecked(self.map.restrict(s))
    }

    /// Points where the maps differ, counting points where exactly one is defined.
    pub fn disagreement(&self, other: &PiecewiseTranslation) -> IntervalSet {
        let one_sided = self.residual.symmetric_difference(&other.residual);
        self.map.disagreement(&other.map).union(&one_sided)
    }

    /// Header `pieces <k>`, then `lo hi offset` per piece, then the residual block.
    pub fn to_text(&self) -> String {
        let mut s = format!("pieces {}\n", self.map.pieces.len());
        for p in &self.map.pieces {
            s.push_str(&format!("{} {} {}\n", frac(p.source.lo()), frac(p.source.hi()), frac(&p.offset)));
        }
        s.push_str(&self.residual.to_text().replacen("intervals", "residual", 1));
        s
    }

    pub fn from_text(text: &str) -> Result<PiecewiseTranslation, MapError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (ln, head) = lines.next().ok_or(IntervalError::Parse { line: 0, reason: "empty".into() })?;
        let count = parse_header(ln, head, "pieces")?;
        let mut pieces = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, line) = lines.next().ok_or(IntervalError::Parse { line: ln + 1, reason: "truncated".into() })?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |r: String| IntervalError::Parse { line: ln + 1, reason: r };
            if f.len() != 3 {
                return Err(bad("expected `lo hi offset`".into()).into());
            }
            let lo = parse_q(f[0]).map_err(|e| bad(e.to_string()))?;
            let hi = parse_q(f[1]).map_err(|e| bad(e.to_string()))?;
            let off = parse_q(f[2]).map_err(|e| bad(e.to_string()))?;
            pieces.push((RationalInterval::new(lo, hi)?, off));
        }
        let residual = crate::interval::parse_interval_block(&mut lines, "residual")?;
        let t = PiecewiseTranslation::with_residual(pieces, residual)?;
        if t.map.pieces.len() != count {
            return Err(MapError::NotInjective("pieces not in merged canonical form".into()));
        }
        Ok(t)
    }
}

/// Order-preserving bijection from `from` onto `to` with the single scale
/// `μ(to)/μ(from)`; it carries normalized measure on `from` to normalized measure on `to`.
pub fn normalized_transport(from: &IntervalSet, to: &IntervalSet) -> Result<PiecewiseAffineMap, MapError> {
    let (mf, mt) = (from.measure(), to.measure());
    if mf.is_zero() || mt.is_zero() {
        return Err(MapError::EmptySet);
    }
    let scale = &mt / &mf;
    let mut out = Vec::new();
    let (a, b) = (from.pieces(), to.pieces());
    let (mut i, mut j) = (0usize, 0usize);
    // Current positions inside piece i of `from` and piece j of `to`.
    let mut x = a[0].lo().clone();
    let mut y = b[0].lo().clone();
    while i < a.len() && j < b.len() {
        let room_src = a[i].hi() - &x;
        let room_dst = (b[j].hi() - &y) / &scale;
        let step = if room_src <= room_dst { room_src.clone() } else { room_dst.clone() };
        let x1 = &x + &step;
        out.push(AffinePiece { source: RationalInterval::raw(x.clone(), x1.clone()), offset: &y - &scale * &x, scale: scale.clone() });
        y = &y + &scale * &step;
        x = x1;
        if x == *a[i].hi() {
            i += 1;
            if i < a.len() {
                x = a[i].lo().clone();
            }
        }
        if y == *b[j].hi() {
            j += 1;
            if j < b.len() {
                y = b[j].lo().clone();
            }
        }
    }
    Ok(PiecewiseAffineMap::from_sorted_unchecked(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn iv(a: i64, b: i64, d: i64) -> IntervalSet {
        IntervalSet::interval(q(a, d), q(b, d))
    }

    fn ri(a: i64, b: i64, d: i64) -> RationalInterval {
        RationalInterval::new(q(a, d), q(b, d)).unwrap()
    }

    fn swap_halves_truncated() -> PiecewiseTranslation {
        PiecewiseTranslation::new(vec![(ri(0, 1, 2), q(1, 2))]).unwrap()
    }

    fn quarter_cycle() -> PiecewiseTranslation {
        PiecewiseTranslation::rotation(&q(1, 4))
    }

    #[test]
    fn image_examples() {
        let rot = PiecewiseTranslation::rotation(&q(1, 2));
        assert_eq!(rot.image(&iv(0, 1, 4)).unwrap(), iv(2, 3, 4));
        let s = iv(1, 3, 7);
        assert_eq!(PiecewiseTranslation::identity().image(&s).unwrap(), s);
        assert_eq!(swap_halves_truncated().image(&iv(0, 1, 2)).unwrap(), iv(1, 2, 2));
    }

    #[test]
    fn residual_blocks_image() {
        let m = swap_halves_truncated();
        assert_eq!(m.residual(), &iv(1, 2, 2));
        match m.image(&iv(1, 3, 4)) {
            Err(MapError::PartiallyUndefined { blocked }) => assert_eq!(blocked, q(1, 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iterate_examples() {
        let m = quarter_cycle();
        assert_eq!(m.iterate(0), PiecewiseTranslation::identity());
        assert_eq!(m.iterate(4), PiecewiseTranslation::identity());
        assert_eq!(m.iterate(-1).compose(&m), PiecewiseTranslation::identity());
        assert_eq!(m.iterate(3), m.iterate(-1));
        let t = swap_halves_truncated();
        // Second power is nowhere defined: the only piece lands on the residual.
        assert!(t.iterate(2).domain().is_empty());
        assert_eq!(t.iterate(-1).compose(&t), PiecewiseTranslation::from_affine(PiecewiseAffineMap::identity_on(&iv(0, 1, 2))).unwrap());
    }

    #[test]
    fn rejects_overlaps() {
        assert!(PiecewiseTranslation::new(vec![(ri(0, 1, 2), q(0, 1)), (ri(1, 3, 4), q(0, 1))]).is_err());
        assert!(PiecewiseTranslation::new(vec![(ri(0, 1, 4), q(1, 2)), (ri(1, 2, 4), q(1, 4))]).is_err());
        assert!(PiecewiseTranslation::new(vec![(ri(1, 2, 2), q(1, 4))]).is_err());
    }

    #[test]
    fn transport_examples() {
        let t = normalized_transport(&iv(0, 1, 2), &iv(1, 2, 2)).unwrap();
        assert_eq!(t.pieces().len(), 1);
        assert_eq!((t.pieces()[0].scale.clone(), t.pieces()[0].offset.clone()), (q(1, 1), q(1, 2)));

        let t = normalized_transport(&iv(0, 1, 2), &iv(0, 1, 4)).unwrap();
        assert_eq!((t.pieces()[0].scale.clone(), t.pieces()[0].offset.clone()), (q(1, 2), q(0, 1)));
        // Normalized measure is carried over, checked on three subintervals.
        for (a, b) in [(0, 1), (1, 3), (2, 4)] {
            let s = iv(a, b, 8);
            let img = t.image(&s).unwrap();
            assert_eq!(img.measure() / q(1, 4), s.measure() / q(1, 2));
        }

        let from = iv(0, 1, 4).union(&iv(2, 3, 4));
        let t = normalized_transport(&from, &iv(0, 1, 2)).unwrap();
        assert_eq!(t.pieces().len(), 2);
        assert!(t.pieces().iter().all(|p| p.scale == q(1, 1)));
        assert_eq!(t.range(), iv(0, 1, 2));
        assert_eq!(t.domain(), from);
        assert!(matches!(normalized_transport(&IntervalSet::empty(), &iv(0, 1, 2)), Err(MapError::EmptySet)));
    }

    #[test]
    fn transport_round_trip_is_identity() {
        let f = iv(0, 1, 5).union(&iv(1, 2, 3));
        let t = iv(1, 2, 4).union(&iv(5, 6, 7)).union(&iv(6, 7, 7));
        let there = normalized_transport(&f, &t).unwrap();
        let back = normalized_transport(&t, &f).unwrap();
        assert_eq!(back.compose(&there), PiecewiseAffineMap::identity_on(&f));
    }

    #[test]
    fn text_round_trip() {
        let m = quarter_cycle();
        let text = m.to_text();
        assert_eq!(PiecewiseTranslation::from_text(&text).unwrap(), m);
        let t = swap_halves_truncated();
        assert_eq!(t.to_text(), "pieces 1\n0/1 1/2 1/2\nresidual 1\n1/2 1/1\n");
        assert_eq!(PiecewiseTranslation::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn disagreement_finds_changed_piece() {
        let a = PiecewiseTranslation::rotation(&q(1, 2));
        let b = PiecewiseTranslation::new(vec![(ri(0, 1, 4), q(3, 4)), (ri(1, 2, 4), q(1, 4)), (ri(2, 4, 4), q(-1, 2))]).unwrap();
        assert_eq!(a.disagreement(&b), iv(0, 2, 4));
    }
}
