//! Exact correlations `μ(TⁿA ∩ B)`, finite-horizon recurrence verdicts, the
//! pairwise-intersection search and ergodic-average diagnostics.

use crate::builders::StagedTransformation;
use crate::column::{Column, ColumnSet};
use crate::interval::IntervalSet;
use crate::maps::{MapError, PiecewiseTranslation};
use crate::rational::{frac, qi, qu, Q};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecurrenceError {
    #[error("correlation at n = {n} is blocked by residual mass {}", frac(.blocked))]
    PartiallyUndefined { n: i64, blocked: Q },
    #[error("set measure {} must lie strictly between 0 and 1", frac(.0))]
    BadMeasure(Q),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("sets do not share a common measure")]
    UnequalMeasures,
    #[error("need at least two sets")]
    TooFewSets,
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Precomputed level decompositions of `A` and `B` for repeated correlation
/// queries against one column.
pub struct Correlator {
    a: ColumnSet,
    b: ColumnSet,
    a_prefix: Vec<Q>,
    b_prefix: Vec<Q>,
    overlaps: Vec<(usize, usize, Q)>,
    height: usize,
    closed: bool,
}

fn prefix_sums(masses: Vec<Q>) -> Vec<Q> {
    let mut out = Vec::with_capacity(masses.len() + 1);
    let mut acc = Q::zero();
    out.push(acc.clone());
    for m in masses {
        acc += m;
        out.push(acc.clone());
    }
    out
}

impl Correlator {
    pub fn new(column: &Column, a: &IntervalSet, b: &IntervalSet) -> Correlator {
        Self::from_column_sets(column.decompose(a), column.decompose(b))
    }

    pub fn from_column_sets(a: ColumnSet, b: ColumnSet) -> Correlator {
        let a_prefix = prefix_sums(a.level_masses());
        let b_prefix = prefix_sums(b.level_masses());
        let (height, closed) = (a.height(), a.closed());
        let overlaps = a.shape_overlaps(&b);
        Correlator { a, b, a_prefix, b_prefix, overlaps, height, closed }
    }

    pub fn measure_a(&self) -> Q {
        self.a.measure()
    }

    pub fn measure_b(&self) -> Q {
        self.b.measure()
    }

    /// `(known, uncertain)`: the true `μ(TⁿA ∩ B)` lies in
    /// `[known, known + uncertain]`, and `uncertain = 0` means it is exact.
    pub fn bounds(&self, n: i64) -> (Q, Q) {
        let (src, dst, src_prefix, dst_prefix) = if n >= 0 {
            (&self.a, &self.b, &self.a_prefix, &self.b_prefix)
        } else {
            (&self.b, &self.a, &self.b_prefix, &self.a_prefix)
        };
        let k = n.unsigned_abs() as usize;
        let known = src.shifted_overlap_pairs(dst, &self.overlaps, n < 0, k);
        if k == 0 {
            return (known + src.outside().intersection_measure(dst.outside()), Q::zero());
        }
        if self.closed {
            return (known, src.outside().measure().min(dst.outside().measure()));
        }
        let h = self.height;
        // Mass of the source pushed past the top, and mass of the target not
        // reachable from inside the column.
        let off_top = &src_prefix[h] - &src_prefix[h.saturating_sub(k)] + src.outside().measure();
        let unreached = &dst_prefix[k.min(h)] + dst.outside().measure();
        (known, off_top.min(unreached))
    }

    /// Largest `k` such that `μ(TⁿA ∩ B)` is exact for every `0 ≤ n ≤ k`
    /// (forward) or every `−k ≤ n ≤ 0` (backward), as `(forward, backward)`.
    pub fn reach(&self) -> (u64, u64) {
        if self.closed {
            return (u64::MAX, u64::MAX);
        }
        let h = self.height;
        let top_free = |p: &Vec<Q>, outside: bool| -> u64 {
            if outside {
                return 0;
            }
            // Largest k with no mass on the top k levels.
            (0..=h).rev().find(|&k| p[h] == p[h - k]).unwrap_or(0) as u64
        };
        let bottom_free = |p: &Vec<Q>, outside: bool| -> u64 {
            if outside {
                return 0;
            }
            (0..=h).rev().find(|&k| p[k].is_zero()).unwrap_or(0) as u64
        };
        let a_out = !self.a.outside().is_empty();
        let b_out = !self.b.outside().is_empty();
        let forward = top_free(&self.a_prefix, a_out).max(bottom_free(&self.b_prefix, b_out));
        let backward = top_free(&self.b_prefix, b_out).max(bottom_free(&self.a_prefix, a_out));
        (forward, backward)
    }

    pub fn at(&self, n: i64) -> Result<Q, RecurrenceError> {
        let (known, blocked) = self.bounds(n);
        if blocked.is_zero() {
            Ok(known)
        } else {
            Err(RecurrenceError::PartiallyUndefined { n, blocked })
        }
    }
}

/// Exact `μ(TⁿA ∩ B)`.
pub fn correlation(t: &StagedTransformation, a: &IntervalSet, b: &IntervalSet, n: i64) -> Result<Q, RecurrenceError> {
    Correlator::new(&t.column, a, b).at(n)
}

/// Lower and uncertainty bounds for `μ(TⁿA ∩ B)`, usable where only a strict
/// lower bound matters.
pub fn correlation_bounds(t: &StagedTransformation, a: &IntervalSet, b: &IntervalSet, n: i64) -> (Q, Q) {
    Correlator::new(&t.column, a, b).bounds(n)
}

/// `μ(TⁿA ∩ B)` by iterating images under the map itself; falls back to
/// `μ(A ∩ T⁻ⁿB)` when the forward images are blocked.
pub fn correlation_generic(map: &PiecewiseTranslation, a: &IntervalSet, b: &IntervalSet, n: i64) -> Result<Q, RecurrenceError> {
    match map.image_iter(a, n) {
        Ok(img) => Ok(img.intersection_measure(b)),
        Err(MapError::PartiallyUndefined { blocked }) => match map.image_iter(b, -n) {
            Ok(img) => Ok(img.intersection_measure(a)),
            Err(_) => Err(RecurrenceError::PartiallyUndefined { n, blocked }),
        },
        Err(e) => Err(e.into()),
    }
}

/// `μ(TⁿA ∩ B)` for `n ∈ [−horizon, horizon]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrelationTable {
    pub a: IntervalSet,
    pub b: IntervalSet,
    pub horizon: u64,
    pub values: BTreeMap<i64, Q>,
    /// Blocked `n` with the uncertain mass.
    pub undefined: BTreeMap<i64, Q>,
}

impl CorrelationTable {
    pub fn compute(t: &StagedTransformation, a: &IntervalSet, b: &IntervalSet, horizon: u64) -> CorrelationTable {
        let c = Correlator::new(&t.column, a, b);
        let h = horizon as i64;
        let results: Vec<(i64, Q, Q)> = (-h..=h)
            .into_par_iter()
            .map(|n| {
                let (k, u) = c.bounds(n);
                (n, k, u)
            })
            .collect();
        let mut values = BTreeMap::new();
        let mut undefined = BTreeMap::new();
        for (n, k, u) in results {
            if u.is_zero() {
                values.insert(n, k);
            } else {
                undefined.insert(n, u);
            }
        }
        CorrelationTable { a: a.clone(), b: b.clone(), horizon, values, undefined }
    }

    /// Reference product `μ(A)μ(B)` (`μ(A)²` when `A = B`).
    pub fn reference(&self) -> Q {
        self.a.measure() * self.b.measure()
    }

    /// One row per defined `n`: `n,num,den,muA2_num,muA2_den,margin_num,margin_den`
    /// with margin = value − reference.
    pub fn to_csv(&self) -> String {
        let r = self.reference();
        let mut out = String::from("n,num,den,muA2_num,muA2_den,margin_num,margin_den\n");
        for (n, v) in &self.values {
            let m = v - &r;
            out.push_str(&format!(
                "{n},{},{},{},{},{},{}\n",
                v.numer(),
                v.denom(),
                r.numer(),
                r.denom(),
                m.numer(),
                m.denom()
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VerdictKind {
    StrictlyOverRecurrent,
    StrictlyUnderRecurrent,
    OverRecurrent,
    UnderRecurrent,
    EpsOverRecurrent(Q),
    EpsUnderRecurrent(Q),
    None,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerdictKind::StrictlyOverRecurrent => write!(f, "strictlyOverRecurrent"),
            VerdictKind::StrictlyUnderRecurrent => write!(f, "strictlyUnderRecurrent"),
            VerdictKind::OverRecurrent => write!(f, "overRecurrent"),
            VerdictKind::UnderRecurrent => write!(f, "underRecurrent"),
            VerdictKind::EpsOverRecurrent(e) => write!(f, "epsOverRecurrent({})", frac(e)),
            VerdictKind::EpsUnderRecurrent(e) => write!(f, "epsUnderRecurrent({})", frac(e)),
            VerdictKind::None => write!(f, "none"),
        }
    }
}

/// A finite-horizon recurrence certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecurrenceVerdict {
    pub kind: VerdictKind,
    pub horizon: u64,
    /// Worst slack of the certified inequality over the horizon; for `None`,
    /// the worst slack of the over-recurrence inequality (negative).
    pub margin: Q,
    /// For `None`: the first `n` that breaks over-recurrence.
    pub witness: Option<i64>,
}

/// Autocorrelations `μ(TⁿA ∩ A)` for `n = 1..=horizon`; negative `n` give the
/// same values since `μ(T⁻ⁿA ∩ A) = μ(A ∩ TⁿA)`.
pub fn autocorrelations(t: &StagedTransformation, a: &IntervalSet, horizon: u64) -> Result<Vec<Q>, RecurrenceError> {
    let c = Correlator::new(&t.column, a, a);
    (1..=horizon as i64).into_par_iter().map(|n| c.at(n)).collect()
}

/// Checks the recurrence inequalities for `0 < |n| ≤ horizon` (over-variants)
/// and `0 < n ≤ horizon` (under-variants) and returns the strongest verdict.
pub fn classify(t: &StagedTransformation, a: &IntervalSet, horizon: u64, eps: Option<&Q>) -> Result<RecurrenceVerdict, RecurrenceError> {
    let mu = a.measure();
    if mu.is_zero() || mu >= Q::one() {
        return Err(RecurrenceError::BadMeasure(mu));
    }
    if horizon == 0 {
        return Err(RecurrenceError::EmptyHorizon);
    }
    let values = autocorrelations(t, a, horizon)?;
    Ok(classify_values(&mu, &values, horizon, eps))
}

/// The verdict for autocorrelation values `c_1..c_horizon` of a set of measure `mu`.
pub fn classify_values(mu: &Q, values: &[Q], horizon: u64, eps: Option<&Q>) -> RecurrenceVerdict {
    let m2 = mu * mu;
    let min_over = values.iter().map(|c| c - &m2).min().expect("nonempty horizon");
    let min_under = values.iter().map(|c| &m2 - c).min().expect("nonempty horizon");
    let verdict = |kind, margin| RecurrenceVerdict { kind, horizon, margin, witness: None };
    if min_over.is_positive() {
        return verdict(VerdictKind::StrictlyOverRecurrent, min_over);
    }
    if min_under.is_positive() {
        return verdict(VerdictKind::StrictlyUnderRecurrent, min_under);
    }
    if !min_over.is_negative() {
        return verdict(VerdictKind::OverRecurrent, min_over);
    }
    if !min_under.is_negative() {
        return verdict(VerdictKind::UnderRecurrent, min_under);
    }
    if let Some(e) = eps {
        let lo = (Q::one() - e) * &m2;
        let hi = (Q::one() + e) * &m2;
        let eo = values.iter().map(|c| c - &lo).min().unwrap();
        if eo.is_positive() {
            return verdict(VerdictKind::EpsOverRecurrent(e.clone()), eo);
        }
        let eu = values.iter().map(|c| &hi - c).min().unwrap();
        if eu.is_positive() {
            return verdict(VerdictKind::EpsUnderRecurrent(e.clone()), eu);
        }
    }
    let witness = values.iter().position(|c| c < &m2).map(|i| i as i64 + 1);
    RecurrenceVerdict { kind: VerdictKind::None, horizon, margin: min_over, witness }
}

/// A certified finite-horizon lower bound for `μ(TⁿA ∩ A) − μ(A)²`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverCertificate {
    pub horizon: u64,
    /// `min` over `0 < |n| ≤ horizon` of the certified lower bound on `μ(TⁿA ∩ A) − μ(A)²`.
    pub margin: Q,
    /// Whether every value was resolved exactly (not just bounded below).
    pub exact: bool,
    /// `|n|` attaining the margin.
    pub worst_n: i64,
}

/// Certifies strict over-recurrence over `0 < |n| ≤ horizon` from lower
/// bounds, which suffices where only `>` matters. A positive margin is a
/// certificate; otherwise the verdict is left to [`classify`].
pub fn certify_over(t: &StagedTransformation, a: &IntervalSet, horizon: u64) -> Result<OverCertificate, RecurrenceError> {
    let mu = a.measure();
    if mu.is_zero() || mu >= Q::one() {
        return Err(RecurrenceError::BadMeasure(mu));
    }
    if horizon == 0 {
        return Err(RecurrenceError::EmptyHorizon);
    }
    let m2 = &mu * &mu;
    let c = Correlator::new(&t.column, a, a);
    let rows: Vec<(i64, Q, bool)> = (1..=horizon as i64)
        .into_par_iter()
        .flat_map_iter(|n| [n, -n])
        .map(|n| {
            let (lo, unc) = c.bounds(n);
            (n, lo - &m2, unc.is_zero())
        })
        .collect();
    let exact = rows.iter().all(|r| r.2);
    let (worst_n, margin, _) = rows.into_iter().min_by(|x, y| x.1.cmp(&y.1).then(x.0.abs().cmp(&y.0.abs()))).unwrap();
    Ok(OverCertificate { horizon, margin, exact, worst_n })
}

/// Smallest `N` with `α/N < ε`.
pub fn required_n(alpha: &Q, eps: &Q) -> u64 {
    let r = (alpha / eps).floor().to_integer() + 1;
    u64::try_from(r).expect("required N fits in u64")
}

/// Result of the pairwise-intersection search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSearch {
    /// Zero-based indices `j < k` of the maximizing pair.
    pub j: usize,
    pub k: usize,
    pub value: Q,
    /// Mean of `μ(A_i ∩ A_l)` over ordered pairs `i ≠ l`.
    pub average: Q,
    /// Whether `N` was large enough for the guarantee `value > α² − ε`.
    pub bound_met: bool,
}

/// Finds the pair of sets with the largest intersection among sets of common
/// measure `α`; with `N ≥ required_n(α, ε)` sets that value exceeds `α² − ε`.
pub fn lemma_pair_search(sets: &[IntervalSet], eps: &Q) -> Result<PairSearch, RecurrenceError> {
    if sets.len() < 2 {
        return Err(RecurrenceError::TooFewSets);
    }
    let alpha = sets[0].measure();
    if sets.iter().any(|s| s.measure() != alpha) {
        return Err(RecurrenceError::UnequalMeasures);
    }
    let n = sets.len();
    let pairs: Vec<(usize, usize, Q)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|j| (j + 1..n).map(move |k| (j, k, sets[j].intersection_measure(&sets[k]))))
        .collect();
    let total: Q = pairs.iter().map(|(_, _, v)| v.clone()).sum();
    let average = total * qi(2) / qu((n * (n - 1)) as u128);
    let (j, k, value) = pairs
        .into_iter()
        .reduce(|best, cur| if cur.2 > best.2 { cur } else { best })
        .expect("at least one pair");
    let bound_met = n as u64 >= required_n(&alpha, eps);
    Ok(PairSearch { j, k, value, average, bound_met })
}

/// `(1/h) Σ_{i<h} μ(TⁱA ∩ A)`.
pub fn mean_ergodic_average(t: &StagedTransformation, a: &IntervalSet, h: u64) -> Result<Q, RecurrenceError> {
    let c = Correlator::new(&t.column, a, a);
    let terms: Result<Vec<Q>, _> = (0..h as i64).into_par_iter().map(|i| c.at(i)).collect();
    Ok(terms?.into_iter().sum::<Q>() / qu(h as u128))
}

/// Smallest `n` in `from..=to` with `μ(TⁿA ∩ A) < μ(A)²`, certified from the
/// upper bound; `n` whose bounds straddle `μ(A)²` are skipped.
pub fn under_recurrence_witness(t: &StagedTransformation, a: &IntervalSet, from: i64, to: i64) -> Result<Option<i64>, RecurrenceError> {
    let mu = a.measure();
    if mu.is_zero() || mu >= Q::one() {
        return Err(RecurrenceError::BadMeasure(mu));
    }
    let m2 = &mu * &mu;
    let c = Correlator::new(&t.column, a, a);
    for n in from..=to {
        let (known, unc) = c.bounds(n);
        if known + unc < m2 {
            return Ok(Some(n));
        }
    }
    Ok(None)
}
