//! Strictly over-recurrent sets for mixing transformations, ε-over-recurrent
//! transfer to other towers, and the witness search showing that discrete
//! spectrum maps have no over-recurrent sets.

use crate::builders::{build_in_frame, BuildError, BuildOptions, CuttingStackingRecipe, StagedTransformation};
use crate::interval::IntervalSet;
use crate::rational::{frac, q, qi, qu, Q};
use crate::recurrence::{classify_values, Correlator, RecurrenceError, RecurrenceVerdict, VerdictKind};
use crate::towers::{extract_tower, TowerError};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OverRecError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error(
        "step {k}: no mixing scale with window factor {window} above {above} within the stage height {reach} \
         (every window deviates from μ(C)² by at least {best_deviation} relative, tolerance {tolerance})"
    )]
    NotFoundWithinStage { k: usize, window: u64, above: u64, reach: u64, best_deviation: String, tolerance: String },
    #[error("step {k}: {source}")]
    Tower { k: usize, source: TowerError },
    #[error("step {k}: per-step guarantee fails at i = {i}")]
    StepGuaranteeViolated { k: usize, i: i64 },
    #[error("{context}: the stage cannot decide the inequality at n = {n}")]
    Uncertified { context: String, n: i64 },
    #[error("over-recurrence margin violated at n = {n}")]
    MarginViolated { n: i64 },
    #[error("tolerance unmet: {0}")]
    ToleranceUnmet(String),
    #[error(transparent)]
    Recurrence(#[from] RecurrenceError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

impl OverRecError {
    /// Whether the failure means the finite stage ran out of room.
    pub fn is_stage_exhaustion(&self) -> bool {
        matches!(self, OverRecError::NotFoundWithinStage { .. } | OverRecError::Uncertified { .. } | OverRecError::Tower { .. } | OverRecError::Build(BuildError::StageTooLarge { .. }))
    }
}

/// `a_i = a / (i(i+1))`.
pub fn budget(a: &Q, i: u64) -> Q {
    a / qu((i as u128) * (i as u128 + 1))
}

/// `q_j = (j(1−2a) + (1−4a)) / ((j+1)(j+2))`.
pub fn excess_ratio(j: u64, a: &Q) -> Q {
    let j = qu(j as u128);
    (&j * (Q::one() - qi(2) * a) + (Q::one() - qi(4) * a)) / ((&j + Q::one()) * (&j + qi(2)))
}

/// Half of the largest ε allowed by `(1 − ε)(1 + q_j) > 1`: `q_j / (2(1 + q_j))`.
pub fn choose_epsilon(j: u64, a: &Q) -> Result<Q, OverRecError> {
    if !a.is_positive() || *a >= q(1, 4) || j == 0 {
        return Err(OverRecError::BadParameter(format!("need 0 < a < 1/4 and j ≥ 1, got a = {}, j = {j}", frac(a))));
    }
    let r = excess_ratio(j, a);
    let eps = &r / (qi(2) * (Q::one() + &r));
    debug_assert!((Q::one() - &eps) * (Q::one() + &r) > Q::one());
    Ok(eps)
}

/// A verified finite-window mixing scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixingScale {
    pub n: u64,
    /// Last `|n|` checked: `n · window`.
    pub window_end: u64,
    /// Largest `|μ(TⁿC ∩ C) − μ(C)²| / μ(C)²` over the window.
    pub max_deviation: Q,
}

/// Smallest `N > above` such that `|μ(TⁿC ∩ C) − μ(C)²| < ε μ(C)²` for every
/// `N ≤ |n| ≤ window · N`, where the whole window lies within the stage's reach.
pub fn detect_mixing_scale(t: &StagedTransformation, c: &IntervalSet, eps: &Q, window: u64, above: u64) -> Result<MixingScale, OverRecError> {
    detect_scale_for_step(t, c, eps, window, above, 1)
}

fn detect_scale_for_step(t: &StagedTransformation, c: &IntervalSet, eps: &Q, window: u64, above: u64, k: usize) -> Result<MixingScale, OverRecError> {
    let mu = c.measure();
    if mu.is_zero() || mu >= Q::one() {
        return Err(RecurrenceError::BadMeasure(mu).into());
    }
    if window == 0 {
        return Err(OverRecError::BadParameter("window factor must be positive".into()));
    }
    let corr = Correlator::new(&t.column, c, c);
    let reach = t.column.height() as u64;
    let m2 = &mu * &mu;
    // For each n: the certified worst relative deviation (known value range
    // pushed to its far end) and the optimistic one (nearest point of the range).
    let devs: Vec<(Q, Q)> = (0..=reach as i64)
        .into_par_iter()
        .map(|n| {
            if n == 0 {
                return (Q::zero(), Q::zero());
            }
            let (lo, unc) = corr.bounds(n);
            let hi = &lo + &unc;
            let worst = (&lo - &m2).abs().max((&hi - &m2).abs()) / &m2;
            let best = if lo > m2 {
                (&lo - &m2) / &m2
            } else if hi < m2 {
                (&m2 - &hi) / &m2
            } else {
                Q::zero()
            };
            (worst, best)
        })
        .collect();
    let mut next_bad = vec![u64::MAX; reach as usize + 2];
    for n in (1..=reach as usize).rev() {
        next_bad[n] = if devs[n].0 >= *eps { n as u64 } else { next_bad[n + 1] };
    }
    let mut best: Option<Q> = None;
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut right = 0usize;
    let mut n = above + 1;
    while n.saturating_mul(window) <= reach {
        let end = n * window;
        if next_bad[n as usize] > end {
            let max_deviation = devs[n as usize..=end as usize].iter().map(|d| d.0.clone()).max().unwrap();
            return Ok(MixingScale { n, window_end: end, max_deviation });
        }
        // Sliding maximum of the optimistic deviation over [n, end].
        while right < end as usize {
            right += 1;
            while deque.back().is_some_and(|&b| devs[b].1 <= devs[right].1) {
                deque.pop_back();
            }
            deque.push_back(right);
        }
        while deque.front().is_some_and(|&f| f < n as usize) {
            deque.pop_front();
        }
        let m = &devs[*deque.front().unwrap()].1;
        if best.as_ref().is_none_or(|b| m < b) {
            best = Some(m.clone());
        }
        n += 1;
    }
    Err(OverRecError::NotFoundWithinStage {
        k,
        window,
        above,
        reach,
        best_deviation: best.map_or("none (window does not fit)".into(), |b| frac(&b)),
        tolerance: frac(eps),
    })
}

/// Summary of one Rokhlin tower used by the construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TowerRecord {
    pub height: usize,
    pub coverage: Q,
}

/// The inductive state after `K` steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverRecState {
    pub a: Q,
    pub stages: usize,
    pub window: u64,
    /// `a_1..a_{K+1}`.
    pub budgets: Vec<Q>,
    /// `ε_1..ε_K`.
    pub epsilons: Vec<Q>,
    pub scales: Vec<MixingScale>,
    /// Averaging factors `m_1..m_K`.
    pub factors: Vec<u64>,
    pub towers: Vec<TowerRecord>,
    pub bases: Vec<IntervalSet>,
    pub base_subsets: Vec<IntervalSet>,
    /// `A_1..A_{K+1}`.
    pub parts: Vec<IntervalSet>,
}

impl OverRecState {
    /// `C_k = A_1 ∪ … ∪ A_k`.
    pub fn accumulated(&self, k: usize) -> IntervalSet {
        IntervalSet::union_all(self.parts[..k].iter())
    }

    pub fn set(&self) -> IntervalSet {
        self.accumulated(self.parts.len())
    }

    /// `N_K − 1`, the horizon of the final certificate (0 when `K = 0`).
    pub fn horizon(&self) -> u64 {
        self.scales.last().map_or(0, |s| s.n - 1)
    }
}

/// Runs the construction for `stages` steps on `t`.
pub fn build_strictly_over_recurrent_set(t: &StagedTransformation, a: &Q, stages: usize, window: u64) -> Result<(IntervalSet, OverRecState), OverRecError> {
    if !a.is_positive() || *a >= q(1, 4) {
        return Err(OverRecError::BadParameter(format!("a = {} must lie in (0, 1/4)", frac(a))));
    }
    let mut state = OverRecState {
        a: a.clone(),
        stages,
        window,
        budgets: (1..=stages as u64 + 1).map(|i| budget(a, i)).collect(),
        epsilons: Vec::new(),
        scales: Vec::new(),
        factors: Vec::new(),
        towers: Vec::new(),
        bases: Vec::new(),
        base_subsets: Vec::new(),
        parts: vec![IntervalSet::interval(Q::zero(), a / qi(2))],
    };
    let height = t.column.height();
    for k in 1..=stages {
        let eps = choose_epsilon(k as u64, a)?;
        let c = state.accumulated(k);
        let above = state.scales.last().map_or(0, |s| s.n);
        let scale = detect_scale_for_step(t, &c, &eps, window, above, k)?;
        let target = state.budgets[k].clone();
        let mut m = (Q::one() / &eps).floor().to_integer().try_into().unwrap_or(u64::MAX) + 1;
        let min_cov = Q::one() - &eps;
        let (tower, m) = loop {
            let h = m.saturating_mul(scale.n);
            if h > height as u64 {
                return Err(OverRecError::Tower {
                    k,
                    source: TowerError::CoverageUnattainable {
                        height: h as usize,
                        requested: frac(&min_cov),
                        available: "tower taller than the stage column".into(),
                    },
                });
            }
            if let Ok(tower) = extract_tower(t, h as usize, &min_cov) {
                if tower.sweep(tower.base(), &c).measure() >= target {
                    break (tower, m);
                }
            }
            m *= 2;
        };
        let sub = tower.select_base_subset(&c, &target).map_err(|e| OverRecError::Tower { k, source: e })?;
        let part = tower.sweep(&sub, &c);
        debug_assert_eq!(part.measure(), target);
        state.epsilons.push(eps);
        state.scales.push(scale);
        state.factors.push(m);
        state.towers.push(TowerRecord { height: tower.height(), coverage: tower.coverage() });
        state.bases.push(tower.base().clone());
        state.base_subsets.push(sub);
        state.parts.push(part);
    }
    verify_step_guarantees(&state, t)?;
    Ok((state.set(), state))
}

/// Re-checks `μ(TⁱA_{k+1} ∩ A) > (1 − ε_k) μ(A_{k+1})` for `0 < |i| < N_k`
/// by independent correlation sweeps; returns the worst slack per step.
pub fn verify_step_guarantees(state: &OverRecState, t: &StagedTransformation) -> Result<Vec<Q>, OverRecError> {
    let a = state.set();
    let mut slacks = Vec::new();
    for k in 1..=state.scales.len() {
        let part = &state.parts[k];
        let bound = (Q::one() - &state.epsilons[k - 1]) * part.measure();
        let corr = Correlator::new(&t.column, part, &a);
        let n = state.scales[k - 1].n as i64;
        let rows = (1..n)
            .into_par_iter()
            .flat_map_iter(|i| [i, -i])
            .map(|i| {
                let (lo, unc) = corr.bounds(i);
                (i, &lo - &bound, lo + unc > bound)
            })
            .collect::<Vec<_>>();
        if let Some((i, _, possible)) = rows.iter().filter(|r| !r.1.is_positive()).min_by_key(|r| r.0.abs()) {
            return Err(if *possible {
                OverRecError::Uncertified { context: format!("step {k} guarantee"), n: *i }
            } else {
                OverRecError::StepGuaranteeViolated { k, i: *i }
            });
        }
        if let Some(w) = rows.into_iter().map(|r| r.1).min() {
            slacks.push(w);
        }
    }
    Ok(slacks)
}

/// The `|n| < N_1` branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LowBranch {
    /// `(1/3 + a/2) a`.
    pub bound: Q,
    /// `(1/3 + a/2) a > a²`.
    pub bound_exceeds_square: bool,
    /// `ε_1 < (2 − 6a)/6`, which gives `(1/2)(1 − ε_1)a > (1/3 + a/2)a`.
    pub epsilon_condition: Option<bool>,
    /// Certified lower bound on `min μ(TⁿA ∩ A) − μ(A)²` over `0 < |n| < N_1`.
    pub measured_margin: Option<Q>,
}

/// The `N_k ≤ |n| < N_{k+1}` branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub k: usize,
    pub from: u64,
    /// Inclusive end.
    pub to: u64,
    /// `(1 − ε_k)((a − a/(k+1))² + a/(k+2))`.
    pub chain_bound: Q,
    pub chain_exceeds_square: bool,
    /// The three-part split reproduces `μ(TⁿA ∩ A)` exactly wherever all
    /// parts are resolved by the stage.
    pub decomposition_exact: bool,
    /// Number of `n` where the split could be checked exactly.
    pub decomposition_checked: usize,
    /// The truncated lower bound `(1 − ε_k)(μ(C_{k,1})² + μ(C_{k,3}))` held at every `n`.
    pub lower_bound_held: bool,
    /// Certified lower bound on `min μ(TⁿA ∩ A) − μ(A)²` over the branch.
    pub measured_margin: Q,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarginReport {
    pub low: LowBranch,
    pub branches: Vec<Branch>,
}

/// Recomputes the margin chain for every branch inside the verified windows.
pub fn verify_over_rec_margins(state: &OverRecState, t: &StagedTransformation) -> Result<MarginReport, OverRecError> {
    let a = &state.a;
    let set = state.set();
    let mu2 = set.measure() * set.measure();
    let bound = (q(1, 3) + a / qi(2)) * a;
    let mut low = LowBranch {
        bound_exceeds_square: bound > a * a,
        bound,
        epsilon_condition: state.epsilons.first().map(|e| *e < (qi(2) - qi(6) * a) / qi(6)),
        measured_margin: None,
    };
    let full = Correlator::new(&t.column, &set, &set);
    let margin_over = |from: u64, to: u64| -> Result<Q, OverRecError> {
        let vals = (from as i64..=to as i64)
            .into_par_iter()
            .flat_map_iter(|n| [n, -n])
            .map(|n| {
                let (lo, unc) = full.bounds(n);
                (n, &lo - &mu2, lo + unc > mu2)
            })
            .collect::<Vec<_>>();
        let (n, m, possible) = vals.into_iter().min_by(|x, y| x.1.cmp(&y.1).then(x.0.abs().cmp(&y.0.abs()))).expect("nonempty range");
        if !m.is_positive() {
            return Err(if possible {
                OverRecError::Uncertified { context: "over-recurrence margin".into(), n }
            } else {
                OverRecError::MarginViolated { n }
            });
        }
        Ok(m)
    };
    if let Some(s) = state.scales.first() {
        if s.n > 1 {
            low.measured_margin = Some(margin_over(1, s.n - 1)?);
        }
    }
    let mut branches = Vec::new();
    let kk = state.scales.len();
    for k in 1..=kk {
        let from = state.scales[k - 1].n;
        let to = if k < kk { state.scales[k].n - 1 } else { state.scales[k - 1].window_end };
        let eps = &state.epsilons[k - 1];
        let kq = qu(k as u128);
        let c1m = a - a / (&kq + Q::one());
        let chain_bound = (Q::one() - eps) * (&c1m * &c1m + a / (&kq + qi(2)));
        let c1 = state.accumulated(k);
        let c2 = state.parts[k].clone();
        let c3 = IntervalSet::union_all(state.parts[k + 1..].iter());
        let lower = (Q::one() - eps) * (c1.measure() * c1.measure() + c3.measure());
        let pieces = [&c1, &c2, &c3];
        let first_row: Vec<Correlator> = pieces.iter().map(|ci| Correlator::new(&t.column, &c1, ci)).collect();
        let rest: Vec<Correlator> = pieces[1..].iter().map(|ci| Correlator::new(&t.column, ci, &set)).collect();
        let checks = (from as i64..=to as i64)
            .into_par_iter()
            .map(|n| {
                let row: Vec<(Q, Q)> = first_row.iter().map(|c| c.bounds(n)).collect();
                let tail: Vec<(Q, Q)> = rest.iter().map(|c| c.bounds(n)).collect();
                let (whole, whole_unc) = full.bounds(n);
                let exact = whole_unc.is_zero() && row.iter().chain(tail.iter()).all(|r| r.1.is_zero());
                let split: Q = row.iter().chain(tail.iter()).map(|r| r.0.clone()).sum();
                let lb = &row[0].0 + &tail[1].0;
                (exact.then_some(split == whole), lb > lower)
            })
            .collect::<Vec<_>>();
        branches.push(Branch {
            k,
            from,
            to,
            chain_exceeds_square: chain_bound > a * a,
            chain_bound,
            decomposition_exact: checks.iter().all(|c| c.0 != Some(false)),
            decomposition_checked: checks.iter().filter(|c| c.0.is_some()).count(),
            lower_bound_held: checks.iter().all(|c| c.1),
            measured_margin: margin_over(from, to)?,
        });
    }
    Ok(MarginReport { low, branches })
}

/// Level correspondence between a source column and a target tower.
#[derive(Clone, Debug)]
pub struct TransferPlan {
    pub source: StagedTransformation,
    pub target: StagedTransformation,
    /// Common tower height `h` (the source column height).
    pub height: usize,
    /// Source levels `J` approximating the set.
    pub source_levels: Vec<usize>,
    /// Number of height-`h` blocks of the target column carrying `K`.
    pub target_blocks: usize,
    pub eps: Q,
    pub horizon: u64,
    pub set_measure: Q,
    /// `μ(A △ J)`.
    pub approximation_error: Q,
    /// Measure outside the target tower.
    pub target_residual: Q,
}

/// Chooses `J` and the smallest target stage whose height-`h` tower leaves a
/// residual below `ε μ(A) / (4h)`.
pub fn plan_transfer(
    source: &StagedTransformation,
    a: &IntervalSet,
    target: &CuttingStackingRecipe,
    eps: &Q,
    horizon: u64,
) -> Result<TransferPlan, OverRecError> {
    let col = &source.column;
    let h = col.height();
    let mu = a.measure();
    if h <= 1 || horizon == 0 {
        return Err(OverRecError::ToleranceUnmet(format!("tower of height {h} with horizon {horizon} is too shallow")));
    }
    let quarter = eps * &mu / qi(4);
    let source_residual = Q::one() - col.coverage();
    if source_residual >= quarter {
        return Err(OverRecError::ToleranceUnmet(format!("source tower misses {}", frac(&source_residual))));
    }
    let decomposed = col.decompose(a);
    let masses = decomposed.level_masses();
    let w = col.width();
    let half = &w / qi(2);
    let mut levels = Vec::new();
    let mut err = decomposed.outside().measure();
    for (l, m) in masses.iter().enumerate() {
        if *m > half {
            levels.push(l);
            err += &w - m;
        } else {
            err += m;
        }
    }
    if err >= quarter {
        return Err(OverRecError::ToleranceUnmet(format!("μ(A △ J) = {} is not below (ε/4)μ(A) = {}", frac(&err), frac(&quarter))));
    }
    let limit = &quarter / qu(h as u128);
    let opts = BuildOptions { max_levels: 1 << 62 };
    for stage in 1..=62u32 {
        let ht = match target.height(stage) {
            Ok(x) => x,
            Err(_) => break,
        };
        if ht < h as u128 {
            continue;
        }
        let blocks = (ht / h as u128) as usize;
        let residual = Q::one() - Q::new((blocks as u128 * h as u128).into(), ht.into());
        if residual < limit {
            let t = build_in_frame(target, stage, stage, if target.spacer_free() { opts } else { BuildOptions::default() })?;
            if !(Q::one() - t.column.coverage()).is_zero() {
                continue;
            }
            return Ok(TransferPlan {
                source: source.clone(),
                target: t,
                height: h,
                source_levels: levels,
                target_blocks: blocks,
                eps: eps.clone(),
                horizon,
                set_measure: mu,
                approximation_error: err,
                target_residual: residual,
            });
        }
    }
    Err(OverRecError::ToleranceUnmet(format!("no target stage leaves residual below {}", frac(&limit))))
}

/// The transferred set: the pattern `J` repeated in every block of the target tower.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferredSet {
    pub height: usize,
    pub blocks: usize,
    pub pattern: Vec<usize>,
    pub measure: Q,
}

impl TransferredSet {
    /// Interval form (for small targets).
    pub fn to_interval_set(&self, target: &StagedTransformation) -> IntervalSet {
        target.column.levels_set((0..self.blocks).flat_map(|b| self.pattern.iter().map(move |l| b * self.height + l)))
    }
}

/// Builds `K` and certifies it over the plan's horizon.
pub fn transfer_eps_over_recurrent(plan: &TransferPlan) -> Result<(TransferredSet, RecurrenceVerdict), OverRecError> {
    let h = plan.height;
    let q_blocks = plan.target_blocks;
    let ht = plan.target.column.height() as u128;
    let width = plan.target.column.width();
    let mut mask = vec![false; h];
    for &l in &plan.source_levels {
        mask[l] = true;
    }
    let size = plan.source_levels.len();
    let measure = &width * qu((size * q_blocks) as u128);
    let k = TransferredSet { height: h, blocks: q_blocks, pattern: plan.source_levels.clone(), measure: measure.clone() };
    if measure.is_zero() || measure >= Q::one() {
        return Err(RecurrenceError::BadMeasure(measure).into());
    }
    let top = (q_blocks - 1) * h + plan.source_levels.last().copied().unwrap_or(0);
    let bottom = plan.source_levels.first().copied().unwrap_or(0);
    let values = (1..=plan.horizon)
        .into_par_iter()
        .map(|n| {
            // Exact when no point of K leaves the column, or no point of K is entered from outside it.
            if top as u128 + n as u128 >= ht && (n as usize) > bottom {
                return Err(RecurrenceError::PartiallyUndefined { n: n as i64, blocked: width.clone() });
            }
            let (d, r) = ((n as usize) / h, (n as usize) % h);
            let mut same = 0u128;
            let mut carry = 0u128;
            for &l in &plan.source_levels {
                if l + r < h {
                    same += mask[l + r] as u128;
                } else {
                    carry += mask[l + r - h] as u128;
                }
            }
            let count = same * q_blocks.saturating_sub(d) as u128 + carry * q_blocks.saturating_sub(d + 1) as u128;
            Ok(&width * qu(count))
        })
        .collect::<Result<Vec<Q>, _>>()?;
    let verdict = classify_values(&measure, &values, plan.horizon, Some(&plan.eps));
    let ok = matches!(verdict.kind, VerdictKind::StrictlyOverRecurrent | VerdictKind::OverRecurrent | VerdictKind::EpsOverRecurrent(_));
    if !ok {
        return Err(OverRecError::ToleranceUnmet(format!(
            "transferred set is {} over horizon {} (witness {:?})",
            verdict.kind, verdict.horizon, verdict.witness
        )));
    }
    Ok((k, verdict))
}

/// For a set on a spacer-free (discrete spectrum) stage: the smallest `n ≥ 1`
/// within reach with `μ(TⁿA ∩ A) < μ(A)²`.
pub fn discrete_spectrum_witness(t: &StagedTransformation, a: &IntervalSet) -> Result<Option<i64>, OverRecError> {
    let corr = Correlator::new(&t.column, a, a);
    let (fwd, bwd) = corr.reach();
    let reach = fwd.max(bwd).min(t.column.height() as u64 * 2) as i64;
    Ok(crate::recurrence::under_recurrence_witness(t, a, 1, reach)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::build_stage;

    #[test]
    fn epsilon_examples() {
        // Oracle: substitute back into (1 − ε)(1 + q) > 1.
        let a = q(1, 5);
        assert_eq!(excess_ratio(1, &a), q(2, 15));
        assert_eq!(choose_epsilon(1, &a).unwrap(), q(1, 17));
        assert_eq!(excess_ratio(2, &a), q(7, 60));
        assert_eq!(choose_epsilon(2, &a).unwrap(), q(7, 134));
        for j in 1..20 {
            let e = choose_epsilon(j, &a).unwrap();
            assert!((Q::one() - &e) * (Q::one() + excess_ratio(j, &a)) > Q::one());
        }
        let near = q(1, 4) - q(1, 1_000_000);
        assert!(choose_epsilon(1, &near).unwrap().is_positive());
        assert!(choose_epsilon(1, &q(1, 4)).is_err());
    }

    #[test]
    fn budgets_telescope() {
        let a = q(1, 5);
        for k in 1..30u64 {
            let s: Q = (1..=k).map(|i| budget(&a, i)).sum();
            assert_eq!(s, &a * qu(k as u128) / qu(k as u128 + 1));
        }
        assert_eq!((1..=3).map(|i| budget(&a, i)).sum::<Q>(), q(3, 20));
    }

    #[test]
    fn no_scale_for_rigid_maps() {
        let rot = build_stage(&CuttingStackingRecipe::builtin("rotation2").unwrap(), 1).unwrap();
        let half = IntervalSet::interval(q(0, 1), q(1, 2));
        assert!(matches!(detect_mixing_scale(&rot, &half, &q(1, 10), 4, 0), Err(OverRecError::NotFoundWithinStage { .. })));
        let id = build_stage(&CuttingStackingRecipe::builtin("rotation2").unwrap(), 0).unwrap();
        assert!(matches!(detect_mixing_scale(&id, &half, &q(1, 10), 4, 0), Err(OverRecError::NotFoundWithinStage { .. })));
    }

    #[test]
    fn zero_steps_gives_first_part() {
        let t = build_stage(&CuttingStackingRecipe::builtin("staircase").unwrap(), 4).unwrap();
        let (a, state) = build_strictly_over_recurrent_set(&t, &q(1, 5), 0, 4).unwrap();
        assert_eq!(a, IntervalSet::interval(q(0, 1), q(1, 10)));
        assert_eq!(state.horizon(), 0);
        let report = verify_over_rec_margins(&state, &t).unwrap();
        assert!(report.branches.is_empty());
        assert_eq!(report.low.bound, q(13, 150));
        assert!(report.low.bound_exceeds_square);
    }
}
