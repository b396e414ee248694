//! Tower multiplexing: two staged transformations `R` (on `X_n`) and `S`
//! (on `Y_n`) exchange subcolumns stage by stage, with exact rescaling of the
//! towers against their residuals.
//!
//! `R_n` and `S_n` are carried as conjugates of the source stages:
//! `R_n = φ_n⁻¹ ∘ R ∘ φ_n` with `φ_n : X_n → [0, 1)` of constant scale, and
//! likewise `S_n` through `χ_n`. Each step composes the conjugacies with the
//! transfer maps `τ_n` and `ψ_n`.

use crate::builders::StagedTransformation;
use crate::interval::{IntervalSet, RationalInterval};
use crate::maps::{normalized_transport, AffinePiece, MapError, PiecewiseAffineMap, PiecewiseTranslation};
use crate::rational::{frac, q, qi, qu, Q};
use crate::recurrence::{required_n, Correlator};
use crate::towers::{extract_tower, Strand, Tower, TowerError};
use num_traits::{One, Signed, Zero};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TowerplexError {
    #[error("rescaling degenerates: scale factor {0}")]
    DegenerateScale(String),
    #[error("stage {stage}: {source}")]
    Coverage { stage: usize, source: TowerError },
    #[error("stage {stage}: tower coverage {coverage} does not exceed 1 - ε = {required}")]
    CoverageUnattainable { stage: usize, coverage: String, required: String },
    #[error("stage {stage}: case needs a nonempty {what}")]
    CaseMismatch { stage: usize, what: &'static str },
    #[error("stage {stage}: μ(E_n) = {measure} is not below κ ε_n = {bound}")]
    LedgerViolation { stage: usize, measure: String, bound: String },
    #[error("hypothesis ε_n + μ(X_n) < δ/6 fails: {0}")]
    HypothesisUnmet(String),
    #[error("lemma fails for atoms ({a}, {b}) at i = {i}")]
    LemmaViolated { a: usize, b: usize, i: u64 },
    #[error("no witness among {0} rigidity times")]
    WindowExhausted(u64),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// `(c, d)` with `d = (1 − 2a) b` and `c = 1 + 2b`, the solution of
/// `a + b − d = c a` and `1/2 − a + d = c (1/2 − a)`.
pub fn solve_rescaling(a: &Q, b: &Q) -> Result<(Q, Q), TowerplexError> {
    if !a.is_positive() || *a > q(1, 2) {
        return Err(TowerplexError::BadParameter(format!("tower mass a = {} must lie in (0, 1/2]", frac(a))));
    }
    let d = (Q::one() - qi(2) * a) * b;
    let c = Q::one() + qi(2) * b;
    if !c.is_positive() {
        return Err(TowerplexError::DegenerateScale(frac(&c)));
    }
    debug_assert_eq!(a + b - &d, &c * a);
    Ok((c, d))
}

/// Rescaling for one side holding mass `mu` with tower mass `a`, after the
/// exchange changes that side by `gain`: `c = 1 + gain/mu`,
/// `d = (mu − a) gain / mu`; `d > 0` moves mass from the tower to the residual.
pub fn side_rescaling(mu: &Q, a: &Q, gain: &Q) -> Result<(Q, Q), TowerplexError> {
    let c = Q::one() + gain / mu;
    if !c.is_positive() {
        return Err(TowerplexError::DegenerateScale(frac(&c)));
    }
    let d = (mu - a) * gain / mu;
    debug_assert_eq!(a + gain - &d, &c * a);
    debug_assert_eq!(mu - a + &d, &c * (mu - a));
    Ok((c, d))
}

/// A parameter schedule over the stage index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant(Q),
    /// `1 / (2 (n + offset))`.
    HalfInverse(u64),
    /// `first · ratio^(n−1)`.
    Geometric { first: Q, ratio: Q },
}

impl Schedule {
    pub fn at(&self, n: usize) -> Q {
        match self {
            Schedule::Constant(x) => x.clone(),
            Schedule::HalfInverse(o) => Q::one() / qu(2 * (n as u128 + *o as u128)),
            Schedule::Geometric { first, ratio } => {
                let mut x = first.clone();
                for _ in 1..n {
                    x *= ratio;
                }
                x
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TowerplexConfig {
    pub stages: usize,
    pub h1: usize,
    pub eps: Schedule,
    pub r: Schedule,
    pub s: Schedule,
    pub kappa: Q,
}

impl Default for TowerplexConfig {
    fn default() -> Self {
        TowerplexConfig {
            stages: 3,
            h1: 8,
            eps: Schedule::Geometric { first: q(1, 4), ratio: q(1, 4) },
            r: Schedule::Constant(q(1, 2)),
            s: Schedule::HalfInverse(2),
            kappa: qi(8),
        }
    }
}

/// `R_n` on `X_n` and `S_n` on `Y_n` at stage `n`.
#[derive(Clone, Debug)]
pub struct TowerplexState {
    pub n: usize,
    pub x: IntervalSet,
    pub y: IntervalSet,
    /// `φ_n : X_n → [0, 1)`.
    pub phi: PiecewiseAffineMap,
    /// `χ_n : Y_n → [0, 1)`.
    pub chi: PiecewiseAffineMap,
    pub h: usize,
    pub eps: Q,
    pub r: Q,
    pub s: Q,
    pub r_source: Arc<StagedTransformation>,
    pub s_source: Arc<StagedTransformation>,
    /// `R_n` and `S_n` as explicit maps.
    pub r_n: PiecewiseTranslation,
    pub s_n: PiecewiseTranslation,
}

fn conjugate(conj: &PiecewiseAffineMap, map: &PiecewiseTranslation) -> PiecewiseTranslation {
    let m = conj.inverse().compose(&map.as_affine().compose(conj));
    PiecewiseTranslation::from_affine(m).expect("conjugate of a translation by a constant-scale map is a translation")
}

impl TowerplexState {
    /// `T_n`: `R_n` on `X_n`, `S_n` on `Y_n`.
    pub fn t_map(&self) -> PiecewiseTranslation {
        let joined = PiecewiseAffineMap::join([self.r_n.as_affine().clone(), self.s_n.as_affine().clone()])
            .expect("R_n and S_n live on disjoint sets");
        PiecewiseTranslation::from_affine(joined).expect("translation pieces")
    }

    /// `μ(R_nⁱ A ∩ B)` bounds for `A, B ⊆ X_n`, through the source column.
    pub fn r_correlation_bounds(&self, a: &IntervalSet, b: &IntervalSet, i: i64) -> (Q, Q) {
        scaled_bounds(&self.phi, &self.r_source, &self.x, a, b, i)
    }

    /// `μ(S_nⁱ A ∩ B)` bounds for `A, B ⊆ Y_n`.
    pub fn s_correlation_bounds(&self, a: &IntervalSet, b: &IntervalSet, i: i64) -> (Q, Q) {
        scaled_bounds(&self.chi, &self.s_source, &self.y, a, b, i)
    }


    /// `μ(S_nⁱ A ∩ B)` bounds for every `i` in `range`.
    pub fn s_correlation_sweep(&self, a: &IntervalSet, b: &IntervalSet, range: std::ops::RangeInclusive<i64>) -> Vec<(i64, Q, Q)> {
        let c = scaled_correlator(&self.chi, &self.s_source, &self.y, a, b);
        let m = self.y.measure();
        range.map(|i| {
            let (k, u) = c.bounds(i);
            (i, k * &m, u * &m)
        })
        .collect()
    }
}

fn scaled_correlator(conj: &PiecewiseAffineMap, src: &StagedTransformation, dom: &IntervalSet, a: &IntervalSet, b: &IntervalSet) -> Correlator {
    let fa = conj.image(&a.intersect(dom)).expect("inside the domain");
    let fb = conj.image(&b.intersect(dom)).expect("inside the domain");
    Correlator::new(&src.column, &fa, &fb)
}

fn scaled_bounds(conj: &PiecewiseAffineMap, src: &StagedTransformation, dom: &IntervalSet, a: &IntervalSet, b: &IntervalSet, i: i64) -> (Q, Q) {
    let (k, u) = scaled_correlator(conj, src, dom, a, b).bounds(i);
    let m = dom.measure();
    (k * &m, u * m)
}

/// `X_1 = [0, 1/2)`, `Y_1 = [1/2, 1)` with `R_1`, `S_1` conjugate to the sources.
pub fn init_stage1(r: StagedTransformation, s: StagedTransformation, cfg: &TowerplexConfig) -> Result<TowerplexState, TowerplexError> {
    let x = IntervalSet::interval(Q::zero(), q(1, 2));
    let y = IntervalSet::interval(q(1, 2), Q::one());
    let phi = normalized_transport(&x, &IntervalSet::unit())?;
    let chi = normalized_transport(&y, &IntervalSet::unit())?;
    let eps = cfg.eps.at(1);
    let r_n = conjugate(&phi, &r.map);
    let s_n = conjugate(&chi, &s.map);
    let state = TowerplexState {
        r_n,
        s_n,
        n: 1,
        x,
        y,
        phi,
        chi,
        h: cfg.h1,
        eps,
        r: cfg.r.at(1),
        s: cfg.s.at(1),
        r_source: Arc::new(r),
        s_source: Arc::new(s),
    };
    // Both towers must leave residual below ε_1/2.
    let min_cov = Q::one() - &state.eps;
    for src in [&state.r_source, &state.s_source] {
        extract_tower(src, state.h, &min_cov).map_err(|e| TowerplexError::Coverage { stage: 1, source: e })?;
    }
    Ok(state)
}

/// Pulls a source-coordinate tower back through `inv`, splitting strands
/// wherever a piece boundary of `inv` falls inside any level.
fn pullback(src: &Tower, inv: &PiecewiseAffineMap) -> Tower {
    let pieces = inv.pieces();
    let mut out = Vec::new();
    for s in src.strands() {
        let mut cuts: Vec<Q> = vec![Q::zero(), s.width.clone()];
        for p in &s.positions {
            let end = p + &s.width;
            let first = pieces.partition_point(|pc| pc.source.hi() <= p);
            for pc in &pieces[first..] {
                if pc.source.lo() >= &end {
                    break;
                }
                for bnd in [pc.source.lo(), pc.source.hi()] {
                    if bnd > p && bnd < &end {
                        cuts.push(bnd - p);
                    }
                }
            }
        }
        cuts.sort();
        cuts.dedup();
        for w in cuts.windows(2) {
            let positions: Vec<Q> = s.positions.iter().map(|p| inv.apply(&(p + &w[0])).expect("inverse conjugacy is total")).collect();
            let scale = &pieces[pieces.partition_point(|pc| pc.source.hi() <= &(&s.positions[0] + &w[0]))].scale;
            out.push(Strand { width: (&w[1] - &w[0]) * scale, positions });
        }
    }
    Tower::from_strands(src.height(), out)
}

fn split_strand(s: &Strand, at: &Q) -> (Strand, Strand) {
    let left = Strand { width: at.clone(), positions: s.positions.clone() };
    let right = Strand { width: &s.width - at, positions: s.positions.iter().map(|p| p + at).collect() };
    (left, right)
}

/// Left `frac` of every strand, and the rest.
fn split_fraction(strands: &[Strand], frac: &Q) -> (Vec<Strand>, Vec<Strand>) {
    let mut l = Vec::new();
    let mut r = Vec::new();
    for s in strands {
        let at = &s.width * frac;
        if at.is_zero() {
            r.push(s.clone());
        } else if at == s.width {
            l.push(s.clone());
        } else {
            let (a, b) = split_strand(s, &at);
            l.push(a);
            r.push(b);
        }
    }
    (l, r)
}

/// Strands in order until their base measure reaches `m`, and the rest.
fn take_prefix(strands: &[Strand], m: &Q) -> (Vec<Strand>, Vec<Strand>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut need = m.clone();
    for s in strands {
        if need.is_zero() {
            right.push(s.clone());
        } else if s.width <= need {
            need -= &s.width;
            left.push(s.clone());
        } else {
            let (a, b) = split_strand(s, &need);
            need = Q::zero();
            left.push(a);
            right.push(b);
        }
    }
    (left, right)
}

fn levels_of(strands: &[Strand], levels: std::ops::Range<usize>) -> IntervalSet {
    IntervalSet::from_intervals(strands.iter().flat_map(|s| levels.clone().map(move |i| s.interval(i))).collect())
}

fn base_of(strands: &[Strand]) -> IntervalSet {
    levels_of(strands, 0..1)
}

/// Consecutive chunks `C(0), …, C(h−1)` of `set`, each of measure `m`, the
/// translation carrying each chunk onto the next, and the column strands.
fn chunk_column(set: &IntervalSet, m: &Q, h: usize) -> Result<(Vec<IntervalSet>, PiecewiseTranslation, Vec<Strand>), TowerplexError> {
    let chunks: Vec<IntervalSet> = (0..h).map(|i| set.slice_by_measure(&(m * qu(i as u128)), &(m * qu(i as u128 + 1)))).collect();
    let mut parts = Vec::new();
    for i in 0..h.saturating_sub(1) {
        parts.push(normalized_transport(&chunks[i], &chunks[i + 1])?);
    }
    let step = PiecewiseTranslation::from_affine(PiecewiseAffineMap::join(parts)?)?;
    let tower = Tower::trace(&step, &chunks[0], h)?;
    Ok((chunks, step, tower.strands().to_vec()))
}

/// Extends `base_map : new base → old base` level by level: a point on level
/// `i` of a new strand goes to level `i` of the old strand containing the
/// image of its base point.
fn extend_through_towers(new: &[Strand], base_map: &PiecewiseAffineMap, old: &Tower) -> Vec<AffinePiece> {
    let olds = old.strands();
    let mut out = Vec::new();
    let bpieces = base_map.pieces();
    for s in new {
        let b0 = s.interval(0);
        let first = bpieces.partition_point(|p| p.source.hi() <= b0.lo());
        for pc in &bpieces[first..] {
            if pc.source.lo() >= b0.hi() {
                break;
            }
            let Some(sub) = pc.source.intersect(&b0) else { continue };
            let y0 = pc.apply(sub.lo());
            let y1 = pc.apply(sub.hi());
            let mut j = olds.partition_point(|o| o.interval(0).hi() <= &y0);
            while j < olds.len() && olds[j].positions[0] < y1 {
                let o = &olds[j];
                let ob = o.interval(0);
                let z0 = if ob.lo() > &y0 { ob.lo().clone() } else { y0.clone() };
                let z1 = if ob.hi() < &y1 { ob.hi().clone() } else { y1.clone() };
                if z0 < z1 {
                    let x0 = (&z0 - &pc.offset) / &pc.scale;
                    let x1 = (&z1 - &pc.offset) / &pc.scale;
                    for i in 0..s.positions.len() {
                        let shift = &s.positions[i] - &s.positions[0];
                        let offset = &o.positions[i] - &o.positions[0] + &pc.offset - &pc.scale * &shift;
                        out.push(AffinePiece {
                            source: RationalInterval::raw(&x0 + &shift, &x1 + &shift),
                            scale: pc.scale.clone(),
                            offset,
                        });
                    }
                }
                j += 1;
            }
        }
    }
    out
}

/// Which way mass moved between a tower and its residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    /// `d ≥ 0`.
    NonNegative,
    /// `d < 0`.
    Negative,
}

impl Case {
    fn of(d: &Q) -> Case {
        if d.is_negative() {
            Case::Negative
        } else {
            Case::NonNegative
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Case::NonNegative => "d>=0",
            Case::Negative => "d<0",
        })
    }
}

/// Everything produced by one multiplexing step `n → n + 1`.
#[derive(Clone, Debug)]
pub struct Transition {
    pub n: usize,
    pub h: usize,
    pub eps: Q,
    pub r: Q,
    pub s: Q,
    pub mu_x: Q,
    pub mu_y: Q,
    /// `I_n`, `J_n`.
    pub r_tower: Tower,
    pub s_tower: Tower,
    pub i_prime: IntervalSet,
    pub j_prime: IntervalSet,
    pub x_residual: IntervalSet,
    pub y_residual: IntervalSet,
    /// `a` of the stage-1 equations: the `R_n`-tower mass.
    pub a_r: Q,
    pub a_s: Q,
    pub b: Q,
    pub c_r: Q,
    pub d_r: Q,
    pub c_s: Q,
    pub d_s: Q,
    pub r_case: Case,
    pub s_case: Case,
    /// `I*_n` (or `I*_n(0)`), `J*_n` (or `J*_n(0)`).
    pub i_star: IntervalSet,
    pub j_star: IntervalSet,
    pub tau: PiecewiseAffineMap,
    pub psi: PiecewiseAffineMap,
    pub alpha: Option<PiecewiseTranslation>,
    pub beta: Option<PiecewiseTranslation>,
    /// Retained `S_n` levels `S_nⁱ(J_n ∖ J'_n)` (minus `J*` when `d < 0`): the atoms of `P'_n`.
    pub retained_atoms: Vec<IntervalSet>,
    pub r_next_cases: PiecewiseTranslation,
    pub s_next_cases: PiecewiseTranslation,
    pub r_next_conjugate: PiecewiseTranslation,
    pub s_next_conjugate: PiecewiseTranslation,
    pub e_set: IntervalSet,
}

/// Exact checks attached to one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageChecks {
    pub partition_exact: bool,
    pub tower_coverage: Q,
    pub coverage_ok: bool,
    pub r_conjugacy_equal: bool,
    pub s_conjugacy_equal: bool,
    pub next_union_formula: bool,
    pub psi_ratio_exact: bool,
    pub psi_containment: bool,
    /// Every piece of `τ_n` has scale `μ(X_n)/μ(X_{n+1})`, and likewise `ψ_n`.
    pub tau_normalized: bool,
    pub psi_normalized: bool,
    pub e_measure: Q,
    pub e_bound: Q,
    pub ledger_ok: bool,
}

/// One ledger row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub n: usize,
    pub e_measure: Q,
    pub eps: Q,
    pub h: usize,
    pub r: Q,
    pub s: Q,
}

/// Per-stage difference sets and the schedule monitors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LimitLedger {
    pub kappa: Q,
    pub entries: Vec<LedgerEntry>,
}

impl LimitLedger {
    pub fn eps_partial_sum(&self) -> Q {
        self.entries.iter().map(|e| e.eps.clone()).sum()
    }

    pub fn r_partial_sum(&self) -> Q {
        self.entries.iter().map(|e| e.r.clone()).sum()
    }

    pub fn s_partial_sum(&self) -> Q {
        self.entries.iter().map(|e| e.s.clone()).sum()
    }

    pub fn e_partial_sum(&self) -> Q {
        self.entries.iter().map(|e| e.e_measure.clone()).sum()
    }

    /// `Σ μ(E_n) ≤ κ Σ ε_n` and every `μ(E_n) < κ ε_n`.
    pub fn holds(&self) -> bool {
        self.entries.iter().all(|e| e.e_measure < &self.kappa * &e.eps) && self.e_partial_sum() <= &self.kappa * self.eps_partial_sum()
    }
}

/// Performs one multiplexing step.
pub fn advance_stage(state: &TowerplexState, cfg: &TowerplexConfig) -> Result<(TowerplexState, Transition, StageChecks), TowerplexError> {
    let n = state.n;
    let h = state.h;
    let mu_x = state.x.measure();
    let mu_y = state.y.measure();
    let min_cov = Q::one() - &state.eps;
    let cov_err = |e| TowerplexError::Coverage { stage: n, source: e };
    // Only the combined coverage matters past stage 1.
    let r_src_tower = extract_tower(&state.r_source, h, &Q::zero()).map_err(cov_err)?;
    let s_src_tower = extract_tower(&state.s_source, h, &Q::zero()).map_err(cov_err)?;
    let r_tower = pullback(&r_src_tower, &state.phi.inverse());
    let s_tower = pullback(&s_src_tower, &state.chi.inverse());
    let a_r = r_tower.coverage();
    let a_s = s_tower.coverage();
    let tower_coverage = &a_r + &a_s;
    if tower_coverage <= min_cov {
        return Err(TowerplexError::CoverageUnattainable { stage: n, coverage: frac(&tower_coverage), required: frac(&min_cov) });
    }
    let x_residual = state.x.difference(&r_tower.support());
    let y_residual = state.y.difference(&s_tower.support());

    let (i_prime_strands, i_rest) = split_fraction(r_tower.strands(), &state.r);
    let (j_prime_strands, j_rest) = split_fraction(s_tower.strands(), &state.s);
    let i_prime = base_of(&i_prime_strands);
    let j_prime = base_of(&j_prime_strands);
    let hq = qu(h as u128);
    let b = &hq * (j_prime.measure() - i_prime.measure());
    let (c_r, d_r) = side_rescaling(&mu_x, &a_r, &b)?;
    let (c_s, d_s) = side_rescaling(&mu_y, &a_s, &(-&b))?;
    // The S side gains -b; its d > 0 means mass leaves its tower. Flip so that
    // d_s > 0 means residual → tower.
    let d_s = -d_s;
    let r_case = Case::of(&d_r);
    let s_case = Case::of(&d_s);
    let r_next_map = &state.r_n;
    let s_next_map = &state.s_n;

    // R side.
    let mut new_r_strands: Vec<Strand> = i_rest.clone();
    let mut alpha = None;
    let mut alpha_levels: Vec<IntervalSet> = Vec::new();
    let (i_star, x_prime, j_kept_for_r) = match r_case {
        Case::NonNegative => {
            let (star, kept) = take_prefix(&j_prime_strands, &(&d_r / &hq));
            let x_prime = x_residual.union(&levels_of(&star, 0..h));
            new_r_strands.extend(kept.iter().cloned());
            (base_of(&star), x_prime, kept)
        }
        Case::Negative => {
            let m = -&d_r / &hq;
            if x_residual.measure() < &m * &hq {
                return Err(TowerplexError::CaseMismatch { stage: n, what: "R residual large enough for the transfer column" });
            }
            let (chunks, step, strands) = chunk_column(&x_residual, &m, h)?;
            let used = IntervalSet::union_all(chunks.iter());
            new_r_strands.extend(j_prime_strands.iter().cloned());
            new_r_strands.extend(strands.iter().cloned());
            alpha = Some(step);
            alpha_levels = chunks.clone();
            (chunks[0].clone(), x_residual.difference(&used), j_prime_strands.clone())
        }
    };
    let new_r_base = base_of(&new_r_strands);
    let tau_base = normalized_transport(&new_r_base, r_tower.base())?;
    let mut tau_pieces = extend_through_towers(&new_r_strands, &tau_base, &r_tower);
    if !x_prime.is_empty() {
        if x_residual.is_empty() {
            return Err(TowerplexError::CaseMismatch { stage: n, what: "R residual" });
        }
        tau_pieces.extend(normalized_transport(&x_prime, &x_residual)?.pieces().iter().cloned());
    }
    let tau = PiecewiseAffineMap::new(tau_pieces)?;
    let x_next = tau.domain();

    // S side.
    let (j_star_strands, retained) = match s_case {
        Case::Negative => take_prefix(&j_rest, &(-&d_s / &hq)),
        Case::NonNegative => (Vec::new(), j_rest.clone()),
    };
    let mut new_s_strands: Vec<Strand> = retained.clone();
    new_s_strands.extend(i_prime_strands.iter().cloned());
    let mut beta = None;
    let mut beta_levels: Vec<IntervalSet> = Vec::new();
    let (j_star, y_prime) = match s_case {
        Case::NonNegative => {
            if d_s.is_zero() {
                (IntervalSet::empty(), y_residual.clone())
            } else {
                let m = &d_s / &hq;
                if y_residual.measure() < &m * &hq {
                    return Err(TowerplexError::CaseMismatch { stage: n, what: "S residual large enough for the transfer column" });
                }
                let (chunks, step, strands) = chunk_column(&y_residual, &m, h)?;
                let used = IntervalSet::union_all(chunks.iter());
                new_s_strands.extend(strands.iter().cloned());
                beta = Some(step);
                beta_levels = chunks.clone();
                (chunks[0].clone(), y_residual.difference(&used))
            }
        }
        Case::Negative => (base_of(&j_star_strands), y_residual.union(&levels_of(&j_star_strands, 0..h))),
    };
    let retained_base = base_of(&retained);
    let incoming_base = base_of(&new_s_strands).difference(&retained_base);
    // ψ on the base: the retained part keeps its place up to the common scale
    // 1/c_S (growing into J' or shrinking inside itself), the incoming part
    // fills what is left of J_n.
    let inv_c = Q::one() / &c_s;
    let (retained_target, rest_target) = if c_s <= Q::one() {
        let grow = retained_base.measure() * (&inv_c - Q::one());
        let extra = j_prime.prefix_by_measure(&grow);
        (retained_base.union(&extra), j_prime.difference(&extra))
    } else {
        let shrunk = IntervalSet::from_intervals(
            retained_base.pieces().iter().map(|iv| RationalInterval::raw(iv.lo().clone(), iv.lo() + iv.len() * &inv_c)).collect(),
        );
        (shrunk.clone(), s_tower.base().difference(&shrunk))
    };
    let mut psi_base_parts = Vec::new();
    if !retained_base.is_empty() {
        let pieces = retained_base
            .pieces()
            .iter()
            .map(|iv| AffinePiece { source: iv.clone(), scale: inv_c.clone(), offset: Q::zero() })
            .collect::<Vec<_>>();
        if c_s > Q::one() {
            // Each retained interval keeps its left endpoint.
            let pieces = pieces
                .into_iter()
                .map(|p| {
                    let lo = p.source.lo().clone();
                    AffinePiece { offset: &lo - &p.scale * &lo, ..p }
                })
                .collect();
            psi_base_parts.push(PiecewiseAffineMap::new(pieces)?);
        } else {
            psi_base_parts.push(normalized_transport(&retained_base, &retained_target)?);
        }
    }
    if !incoming_base.is_empty() {
        psi_base_parts.push(normalized_transport(&incoming_base, &rest_target)?);
    }
    let psi_base = PiecewiseAffineMap::join(psi_base_parts)?;
    let mut psi_pieces = extend_through_towers(&new_s_strands, &psi_base, &s_tower);
    if !y_prime.is_empty() {
        if y_residual.is_empty() {
            return Err(TowerplexError::CaseMismatch { stage: n, what: "S residual" });
        }
        psi_pieces.extend(normalized_transport(&y_prime, &y_residual)?.pieces().iter().cloned());
    }
    let psi = PiecewiseAffineMap::new(psi_pieces)?;
    let y_next = psi.domain();

    // Case tables.
    let below_top = 0..h.saturating_sub(1);
    let mut r_parts = vec![
        r_next_map.as_affine().restrict(&levels_of(&i_rest, below_top.clone())),
        s_next_map.as_affine().restrict(&levels_of(&j_kept_for_r, below_top.clone())),
    ];
    if let Some(a) = &alpha {
        r_parts.push(a.as_affine().restrict(&IntervalSet::union_all(alpha_levels[..h - 1].iter())));
    }
    let r_conj = PiecewiseTranslation::from_affine(tau.inverse().compose(&r_next_map.as_affine().compose(&tau)))?;
    let r_tabled = IntervalSet::union_all(r_parts.iter().map(|p| p.domain()).collect::<Vec<_>>().iter());
    r_parts.push(r_conj.as_affine().restrict(&x_next.difference(&r_tabled)));
    let r_next_cases = PiecewiseTranslation::from_affine(PiecewiseAffineMap::join(r_parts)?)?;

    let mut s_parts = vec![
        r_next_map.as_affine().restrict(&levels_of(&i_prime_strands, below_top.clone())),
        s_next_map.as_affine().restrict(&levels_of(&retained, below_top.clone())),
    ];
    if let Some(bm) = &beta {
        s_parts.push(bm.as_affine().restrict(&IntervalSet::union_all(beta_levels[..h - 1].iter())));
    }
    let s_conj = PiecewiseTranslation::from_affine(psi.inverse().compose(&s_next_map.as_affine().compose(&psi)))?;
    let s_tabled = IntervalSet::union_all(s_parts.iter().map(|p| p.domain()).collect::<Vec<_>>().iter());
    s_parts.push(s_conj.as_affine().restrict(&y_next.difference(&s_tabled)));
    let s_next_cases = PiecewiseTranslation::from_affine(PiecewiseAffineMap::join(s_parts)?)?;

    let next = TowerplexState {
        n: n + 1,
        x: x_next.clone(),
        y: y_next.clone(),
        phi: state.phi.compose(&tau),
        chi: state.chi.compose(&psi),
        h: h * 2,
        eps: cfg.eps.at(n + 1),
        r: cfg.r.at(n + 1),
        s: cfg.s.at(n + 1),
        r_source: state.r_source.clone(),
        s_source: state.s_source.clone(),
        r_n: r_conj.clone(),
        s_n: s_conj.clone(),
    };

    let t_now = state.t_map();
    let t_next = PiecewiseTranslation::from_affine(PiecewiseAffineMap::join([
        r_next_cases.as_affine().clone(),
        s_next_cases.as_affine().clone(),
    ])?)?;
    let e_set = t_next.disagreement(&t_now);
    let e_measure = e_set.measure();
    let e_bound = &cfg.kappa * &state.eps;

    let common = |a: &PiecewiseTranslation, b: &PiecewiseTranslation| {
        a.disagreement(b).intersect(&a.domain()).intersect(&b.domain()).is_empty()
    };
    let formula_x = levels_of(&i_rest, 0..h).union(&levels_of(&j_prime_strands, 0..h)).union(&x_residual);
    let formula_y = levels_of(&j_rest, 0..h).union(&levels_of(&i_prime_strands, 0..h)).union(&y_residual);
    let retained_atoms: Vec<IntervalSet> = (0..h).map(|i| levels_of(&retained, i..i + 1)).collect();
    let ratio = &y_next.measure() / &mu_y;
    let mut psi_ratio_exact = true;
    let mut psi_containment = true;
    for p in &retained_atoms {
        if p.is_empty() {
            continue;
        }
        let img = psi.image(p)?;
        psi_ratio_exact &= p.measure() / img.measure() == ratio;
        psi_containment &= if ratio > Q::one() {
            img.is_subset(p)
        } else if ratio < Q::one() {
            p.is_subset(&img)
        } else {
            &img == p
        };
    }
    let tau_scale = &mu_x / x_next.measure();
    let psi_scale = &mu_y / y_next.measure();
    let checks = StageChecks {
        partition_exact: x_next.union(&y_next) == IntervalSet::unit() && x_next.is_disjoint(&y_next),
        tower_coverage,
        coverage_ok: true,
        r_conjugacy_equal: common(&r_next_cases, &r_conj),
        s_conjugacy_equal: common(&s_next_cases, &s_conj),
        next_union_formula: formula_x == x_next && formula_y == y_next,
        psi_ratio_exact,
        psi_containment,
        tau_normalized: tau.pieces().iter().all(|p| p.scale == tau_scale) && tau.range() == state.x,
        psi_normalized: psi.pieces().iter().all(|p| p.scale == psi_scale) && psi.range() == state.y,
        ledger_ok: e_measure < e_bound,
        e_measure,
        e_bound,
    };
    let transition = Transition {
        n,
        h,
        eps: state.eps.clone(),
        r: state.r.clone(),
        s: state.s.clone(),
        mu_x,
        mu_y,
        r_tower,
        s_tower,
        i_prime,
        j_prime,
        x_residual,
        y_residual,
        a_r,
        a_s,
        b,
        c_r,
        d_r,
        c_s,
        d_s,
        r_case,
        s_case,
        i_star,
        j_star,
        tau,
        psi,
        alpha,
        beta,
        retained_atoms,
        r_next_cases,
        s_next_cases,
        r_next_conjugate: r_conj,
        s_next_conjugate: s_conj,
        e_set,
    };
    Ok((next, transition, checks))
}

/// A full multiplexing run.
#[derive(Clone, Debug)]
pub struct TowerplexRun {
    pub states: Vec<TowerplexState>,
    pub transitions: Vec<Transition>,
    pub checks: Vec<StageChecks>,
    pub ledger: LimitLedger,
}

/// Runs `cfg.stages` steps; stops with `LedgerViolation` if a difference set
/// exceeds its bound.
pub fn run_towerplex(r: StagedTransformation, s: StagedTransformation, cfg: &TowerplexConfig) -> Result<TowerplexRun, TowerplexError> {
    let mut states = vec![init_stage1(r, s, cfg)?];
    let mut transitions = Vec::new();
    let mut checks = Vec::new();
    let mut ledger = LimitLedger { kappa: cfg.kappa.clone(), entries: Vec::new() };
    for _ in 0..cfg.stages {
        let cur = states.last().unwrap();
        let (next, tr, ck) = advance_stage(cur, cfg)?;
        ledger.entries.push(LedgerEntry {
            n: tr.n,
            e_measure: ck.e_measure.clone(),
            eps: tr.eps.clone(),
            h: tr.h,
            r: tr.r.clone(),
            s: tr.s.clone(),
        });
        if !ck.ledger_ok {
            return Err(TowerplexError::LedgerViolation { stage: tr.n, measure: frac(&ck.e_measure), bound: frac(&ck.e_bound) });
        }
        states.push(next);
        transitions.push(tr);
        checks.push(ck);
    }
    Ok(TowerplexRun { states, transitions, checks, ledger })
}

/// Result of the rescaling-lemma sweep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LemmaReport {
    pub delta: Q,
    pub pairs: usize,
    pub i_max: u64,
    /// Largest `|μ(S_{n+1}ⁱA∩B) − μAμB| − |μ(S_nⁱA∩B) − μAμB|` seen, taken
    /// at the unfavourable end of every uncertainty interval.
    pub max_excess: Q,
    /// Largest `μ(A △ ψ_n A)` over the atoms and their union.
    pub max_symmetric_difference: Q,
    /// `|μ(Y_{n+1})/μ(Y_n) − 1|`.
    pub ratio_gap: Q,
}

fn abs_range(lo: &Q, unc: &Q, target: &Q) -> (Q, Q) {
    let hi = lo + unc;
    let a = (lo - target).abs();
    let b = (&hi - target).abs();
    let max = if a > b { a.clone() } else { b.clone() };
    let min = if lo <= target && target <= &hi { Q::zero() } else if a < b { a } else { b };
    (min, max)
}

/// Checks the rescaling lemma for `A, B` among the images `ψ_n(p)` of the
/// retained atoms (and their union) and `1 ≤ i ≤ i_max`.
pub fn check_rescaling_lemma(before: &TowerplexState, after: &TowerplexState, tr: &Transition, delta: &Q, i_max: u64) -> Result<LemmaReport, TowerplexError> {
    let hyp = &before.eps + before.x.measure();
    if hyp >= delta / qi(6) {
        return Err(TowerplexError::HypothesisUnmet(format!("{} is not below δ/6 = {}", frac(&hyp), frac(&(delta / qi(6))))));
    }
    let mut atoms: Vec<IntervalSet> = Vec::new();
    for p in &tr.retained_atoms {
        if !p.is_empty() {
            atoms.push(tr.psi.image(p)?);
        }
    }
    let union = IntervalSet::union_all(atoms.iter());
    atoms.push(union);
    let ratio_gap = (after.y.measure() / before.y.measure() - Q::one()).abs();
    let mut max_sd = Q::zero();
    for p in tr.retained_atoms.iter().filter(|p| !p.is_empty()).chain(std::iter::once(&IntervalSet::union_all(tr.retained_atoms.iter()))) {
        let sd = p.symmetric_difference(&tr.psi.image(p)?).measure();
        if sd > max_sd {
            max_sd = sd;
        }
    }
    let decompose = |st: &TowerplexState, set: &IntervalSet| st.s_source.column.decompose(&st.chi.image(set).expect("inside Y"));
    let now: Vec<_> = atoms.iter().map(|a| decompose(before, a)).collect();
    let inside = atoms.iter().all(|a| a.is_subset(&after.y));
    let next: Vec<_> = if inside { atoms.iter().map(|a| decompose(after, a)).collect() } else { Vec::new() };
    let t_next = if inside { None } else { Some(after.t_map()) };
    let (my_now, my_next) = (before.y.measure(), after.y.measure());
    let mut max_excess: Option<Q> = None;
    for (ia, a) in atoms.iter().enumerate() {
        for (ib, bset) in atoms.iter().enumerate() {
            let prod = a.measure() * bset.measure();
            let c_now = Correlator::from_column_sets(now[ia].clone(), now[ib].clone());
            let c_next = inside.then(|| Correlator::from_column_sets(next[ia].clone(), next[ib].clone()));
            for i in 1..=i_max as i64 {
                let (lo, unc) = c_now.bounds(i);
                let (rhs_min, _) = abs_range(&(lo * &my_now), &(unc * &my_now), &prod);
                let (lo_next, unc_next) = match (&c_next, &t_next) {
                    (Some(c), _) => {
                        let (lo, unc) = c.bounds(i);
                        (lo * &my_next, unc * &my_next)
                    }
                    (None, Some(t)) => match crate::recurrence::correlation_generic(t, a, bset, i) {
                        Ok(v) => (v, Q::zero()),
                        Err(_) => (Q::zero(), a.measure().min(bset.measure())),
                    },
                    (None, None) => unreachable!(),
                };
                let (_, lhs_max) = abs_range(&lo_next, &unc_next, &prod);
                let excess = &lhs_max - &rhs_min;
                if excess >= *delta {
                    return Err(TowerplexError::LemmaViolated { a: ia, b: ib, i: i as u64 });
                }
                if max_excess.as_ref().is_none_or(|m| &excess > m) {
                    max_excess = Some(excess);
                }
            }
        }
    }
    Ok(LemmaReport {
        delta: delta.clone(),
        pairs: atoms.len() * atoms.len(),
        i_max,
        max_excess: max_excess.unwrap_or_else(Q::zero),
        max_symmetric_difference: max_sd,
        ratio_gap,
    })
}

/// A time at which both components recur.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlowMixingWitness {
    pub i: u64,
    /// Rigidity times checked, `ρ_k = k h_n`.
    pub rigidity_times: Vec<u64>,
    /// Lower bound for `μ(S_nⁱ A_S ∩ A_S)` against `(1 − δ/n) μ(A_S)²`.
    pub s_value: Q,
    pub s_threshold: Q,
    /// Lower bounds for `μ(R_n^{ρ_k} A_R ∩ A_R)` against `(1 − δ/n) μ(A_R)`.
    pub r_values: Vec<Q>,
    pub r_threshold: Q,
    /// Lower bound for `μ(T_nⁱ A ∩ A) − μ(A)²`.
    pub margin: Q,
}

/// Finds a common recurrence time `i = ρ_k − ρ_j` from a window of `N`
/// rigidity times, `N` sized by the pairwise-intersection bound.
pub fn slow_mixing_window(state: &TowerplexState, a: &IntervalSet, delta: &Q) -> Result<SlowMixingWitness, TowerplexError> {
    let nq = qu(state.n as u128);
    let keep = Q::one() - delta / &nq;
    let a_r = a.intersect(&state.x);
    let a_s = a.intersect(&state.y);
    let alpha = a_s.measure();
    let count = if alpha.is_zero() { 2 } else { required_n(&alpha, &(delta / &nq * &alpha * &alpha)).max(2) };
    let h = state.h as u64;
    let rho: Vec<u64> = (1..=count).map(|k| k * h).collect();
    let r_threshold = &keep * a_r.measure();
    let mut r_values = Vec::new();
    for &t in &rho {
        let (lo, _) = state.r_correlation_bounds(&a_r, &a_r, t as i64);
        if !a_r.is_empty() && lo <= r_threshold {
            return Err(TowerplexError::WindowExhausted(count));
        }
        r_values.push(lo);
    }
    let s_threshold = &keep * &alpha * &alpha;
    let mut best: Option<(u64, Q)> = None;
    for m in 1..count {
        let i = m * h;
        let (lo, _) = state.s_correlation_bounds(&a_s, &a_s, i as i64);
        if best.as_ref().is_none_or(|b| lo > b.1) {
            best = Some((i, lo));
        }
    }
    let (i, s_value) = best.ok_or(TowerplexError::WindowExhausted(count))?;
    if !a_s.is_empty() && s_value <= s_threshold {
        return Err(TowerplexError::WindowExhausted(count));
    }
    let (r_lo, _) = state.r_correlation_bounds(&a_r, &a_r, i as i64);
    let mu = a.measure();
    let margin = r_lo + &s_value - &mu * &mu;
    if !margin.is_positive() {
        return Err(TowerplexError::WindowExhausted(count));
    }
    Ok(SlowMixingWitness { i, rigidity_times: rho, s_value, s_threshold, r_values, r_threshold, margin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{build_stage, CuttingStackingRecipe};

    #[test]
    fn rescaling_examples() {
        let (c, d) = solve_rescaling(&q(2, 5), &q(1, 100)).unwrap();
        assert_eq!((c.clone(), d.clone()), (q(51, 50), q(1, 500)));
        assert_eq!(q(2, 5) + q(1, 100) - &d, &c * q(2, 5));
        assert_eq!(q(1, 2) - q(2, 5) + &d, &c * (q(1, 2) - q(2, 5)));
        assert_eq!(solve_rescaling(&q(1, 3), &Q::zero()).unwrap(), (Q::one(), Q::zero()));
        let (c, d) = solve_rescaling(&q(1, 2), &q(1, 7)).unwrap();
        assert_eq!((c, d), (q(9, 7), Q::zero()));
        assert!(matches!(solve_rescaling(&q(1, 4), &q(-1, 2)), Err(TowerplexError::DegenerateScale(_))));
        // Half measure sides reduce to the stage-1 formulas.
        let (c, d) = side_rescaling(&q(1, 2), &q(2, 5), &q(1, 100)).unwrap();
        assert_eq!((c, d), (q(51, 50), q(1, 500)));
    }

    #[test]
    fn schedules() {
        let cfg = TowerplexConfig::default();
        assert_eq!(cfg.s.at(1), q(1, 6));
        assert_eq!(cfg.r.at(1), q(1, 2));
        assert_eq!(cfg.eps.at(3), q(1, 64));
    }

    fn sources(m: u32, s: u32) -> (StagedTransformation, StagedTransformation) {
        (
            build_stage(&CuttingStackingRecipe::builtin("odometer").unwrap(), m).unwrap(),
            build_stage(&CuttingStackingRecipe::builtin("staircase").unwrap(), s).unwrap(),
        )
    }

    #[test]
    fn stage_one_halves_are_invariant() {
        let (r, s) = sources(6, 5);
        let st = init_stage1(r, s, &TowerplexConfig::default()).unwrap();
        assert_eq!(st.x.measure(), q(1, 2));
        let t = st.t_map();
        let (img, _) = t.image_partial(&st.x);
        assert!(img.is_subset(&st.x));
        let (img, _) = t.image_partial(&st.y);
        assert!(img.is_subset(&st.y));
    }

    fn all_checks(ck: &StageChecks) {
        assert!(ck.partition_exact, "partition");
        assert!(ck.r_conjugacy_equal, "R conjugacy");
        assert!(ck.s_conjugacy_equal, "S conjugacy");
        assert!(ck.next_union_formula, "unions");
        assert!(ck.psi_ratio_exact, "ψ ratio");
        assert!(ck.psi_containment, "ψ containment");
        assert!(ck.tau_normalized, "τ scale");
        assert!(ck.psi_normalized, "ψ scale");
    }

    fn conjugates_agree(st: &TowerplexState) {
        assert!(conjugate(&st.phi, &st.r_source.map).disagreement(&st.r_n).is_empty());
        assert!(conjugate(&st.chi, &st.s_source.map).disagreement(&st.s_n).is_empty());
    }

    #[test]
    fn default_schedule_two_steps() {
        let (r, s) = sources(6, 5);
        let cfg = TowerplexConfig { stages: 2, ..Default::default() };
        let run = run_towerplex(r, s, &cfg).unwrap();
        for ck in &run.checks {
            all_checks(ck);
            assert!(ck.ledger_ok);
        }
        let t = &run.transitions[0];
        assert_eq!(t.r_case, Case::NonNegative);
        assert!(t.d_r.is_zero());
        assert!(t.b.is_negative());
        // Exact mass accounting of the switched subcolumns.
        assert_eq!(run.states[1].x.measure(), q(1, 2) + &t.b);
        let mx2 = run.states[1].x.measure();
        assert!(mx2 > q(1, 4) && mx2 < q(1, 2));
        conjugates_agree(&run.states[2]);
        // X_2 is T_2-invariant.
        let t2 = run.states[1].t_map();
        let (img, _) = t2.image_partial(&run.states[1].x);
        assert!(img.is_subset(&run.states[1].x));
        assert!(run.ledger.holds());
    }

    #[test]
    fn alpha_column_when_r_residual_grows_the_tower() {
        let (r, s) = sources(5, 5);
        let cfg = TowerplexConfig { stages: 1, h1: 6, ..Default::default() };
        let run = run_towerplex(r, s, &cfg).unwrap();
        let t = &run.transitions[0];
        assert_eq!((t.r_case, t.s_case), (Case::Negative, Case::Negative));
        let alpha = t.alpha.as_ref().unwrap();
        assert_eq!(alpha.domain().measure(), -&t.d_r * q(5, 6));
        assert!(t.i_star.is_subset(&t.x_residual));
        all_checks(&run.checks[0]);
        conjugates_agree(&run.states[1]);
    }

    #[test]
    fn beta_column_and_inflation() {
        let (r, s) = sources(5, 5);
        let cfg = TowerplexConfig {
            stages: 1,
            h1: 6,
            r: Schedule::Constant(q(1, 16)),
            s: Schedule::Constant(q(1, 2)),
            ..Default::default()
        };
        let run = run_towerplex(r, s, &cfg).unwrap();
        let t = &run.transitions[0];
        assert!(t.b.is_positive());
        assert_eq!((t.r_case, t.s_case), (Case::NonNegative, Case::NonNegative));
        assert!(t.d_r.is_positive() && t.d_s.is_positive());
        assert!(t.beta.is_some());
        assert!(t.i_star.is_subset(&t.j_prime));
        assert!(t.c_s < Q::one());
        all_checks(&run.checks[0]);
        conjugates_agree(&run.states[1]);
    }

    #[test]
    fn balanced_exchange_keeps_psi_identity() {
        let odo = CuttingStackingRecipe::builtin("odometer").unwrap();
        let r = build_stage(&odo, 5).unwrap();
        let s = build_stage(&odo, 5).unwrap();
        let cfg = TowerplexConfig { stages: 1, r: Schedule::Constant(q(1, 2)), s: Schedule::Constant(q(1, 2)), ..Default::default() };
        let run = run_towerplex(r, s, &cfg).unwrap();
        let t = &run.transitions[0];
        assert!(t.b.is_zero() && t.d_s.is_zero());
        assert_eq!(t.c_s, Q::one());
        for p in &t.retained_atoms {
            assert_eq!(&t.psi.image(p).unwrap(), p);
        }
        all_checks(&run.checks[0]);
    }

    #[test]
    fn lemma_and_window_on_small_sources() {
        let (r, s) = sources(6, 5);
        let cfg = TowerplexConfig { stages: 1, ..Default::default() };
        let run = run_towerplex(r, s, &cfg).unwrap();
        let (before, after) = (&run.states[0], &run.states[1]);
        let delta = qi(6) * (&before.eps + before.x.measure()) + &before.eps;
        let rep = check_rescaling_lemma(before, after, &run.transitions[0], &delta, 8).unwrap();
        assert!(rep.max_excess < delta);
        assert!(rep.max_symmetric_difference < rep.ratio_gap);
        assert!(matches!(check_rescaling_lemma(before, after, &run.transitions[0], &qi(4), 8), Err(TowerplexError::HypothesisUnmet(_))));
        let level = run.transitions[0].r_tower.level(0);
        let w = slow_mixing_window(before, &level, &q(1, 2)).unwrap();
        assert_eq!(w.i % before.h as u64, 0);
        assert!(w.margin.is_positive());
    }
}
