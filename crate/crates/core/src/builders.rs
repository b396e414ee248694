//! Cutting-and-stacking builders: the dyadic odometer, finite rotations,
//! Chacon's transformation and the staircase.
//!
//! Stage 0 is the unit column (one level, the whole base interval). Stage
//! `n + 1` cuts the stage-`n` column into `cuts(n)` subcolumns, puts
//! `spacers(n, j)` new levels on top of subcolumn `j`, and stacks the
//! subcolumns left to right.
//!
//! A stage is always realized inside a *frame*: the frame stage fixes where the
//! spacer reserve sits, so that stages built in the same frame live on the same
//! copy of `[0, 1)` and can be compared.

use crate::column::Column;
use crate::interval::{IntervalSet, RationalInterval};
use crate::maps::PiecewiseTranslation;
use crate::rational::{qu, Q};
use num_bigint::BigInt;
use num_traits::{One, Zero};
use std::fmt;

/// A small expression over the stage index `n` and the subcolumn index `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Const(u64),
    /// `n + c`
    N(i64),
    /// `j + c`
    J(i64),
    /// `[v0, v1, ...]`, indexed by `j`.
    List(Vec<u64>),
}

impl Expr {
    pub fn eval(&self, n: u32, j: u64) -> i64 {
        match self {
            Expr::Const(c) => *c as i64,
            Expr::N(c) => n as i64 + c,
            Expr::J(c) => j as i64 + c,
            Expr::List(v) => v.get(j as usize).copied().unwrap_or(0) as i64,
        }
    }

    pub fn parse(s: &str) -> Result<Expr, String> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let v = inner
                .split(',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<u64>().map_err(|_| format!("bad list entry `{t}`")))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(Expr::List(v));
        }
        let var = |rest: &str| -> Result<i64, String> {
            if rest.is_empty() {
                return Ok(0);
            }
            let (sign, num) = match rest.as_bytes()[0] {
                b'+' => (1, &rest[1..]),
                b'-' => (-1, &rest[1..]),
                _ => return Err(format!("expected `+c` or `-c`, got `{rest}`")),
            };
            num.parse::<i64>().map(|c| sign * c).map_err(|_| format!("bad constant `{num}`"))
        };
        if let Some(rest) = s.strip_prefix('n') {
            return var(rest).map(Expr::N);
        }
        if let Some(rest) = s.strip_prefix('j') {
            return var(rest).map(Expr::J);
        }
        s.parse::<u64>().map(Expr::Const).map_err(|_| format!("cannot parse expression `{s}`"))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let var = |f: &mut fmt::Formatter<'_>, v: char, c: i64| match c {
            0 => write!(f, "{v}"),
            c if c > 0 => write!(f, "{v}+{c}"),
            c => write!(f, "{v}{c}"),
        };
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::N(c) => var(f, 'n', *c),
            Expr::J(c) => var(f, 'j', *c),
            Expr::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("stage {stage} needs {levels} levels, budget is {budget}")]
    StageTooLarge { stage: u32, levels: u128, budget: u128 },
    #[error("recipe `{0}` does not produce a rigidity sequence")]
    NotRigid(String),
    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),
    #[error("invalid recipe: {0}")]
    BadRecipe(String),
    #[error("frame stage {frame} is below stage {stage}")]
    BadFrame { stage: u32, frame: u32 },
}

/// A rank-one cut-and-stack recipe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CuttingStackingRecipe {
    pub name: String,
    pub cuts: Expr,
    pub spacers: Expr,
    /// Whether the top level wraps onto the bottom (finite rotations).
    pub closed: bool,
}

impl CuttingStackingRecipe {
    pub fn new(name: &str, cuts: Expr, spacers: Expr, closed: bool) -> Result<Self, BuildError> {
        if let Expr::J(_) | Expr::List(_) = cuts {
            return Err(BuildError::BadRecipe("cuts may not depend on j".into()));
        }
        if closed && !matches!(spacers, Expr::Const(0)) {
            return Err(BuildError::BadRecipe("closed recipes take no spacers".into()));
        }
        Ok(CuttingStackingRecipe { name: name.to_string(), cuts, spacers, closed })
    }

    /// `odometer`, `chacon`, `staircase` and `rotation<q>` for `q >= 2`.
    pub fn builtin(name: &str) -> Result<Self, BuildError> {
        match name {
            "odometer" => Self::new("odometer", Expr::Const(2), Expr::Const(0), false),
            "chacon" => Self::new("chacon", Expr::Const(3), Expr::List(vec![0, 1, 0]), false),
            "staircase" => Self::new("staircase", Expr::N(1), Expr::J(0), false),
            _ => match name.strip_prefix("rotation").and_then(|q| q.parse::<u64>().ok()) {
                Some(q) if q >= 2 => Self::new(name, Expr::Const(q), Expr::Const(0), true),
                _ => Err(BuildError::UnknownRecipe(name.to_string())),
            },
        }
    }

    /// Reads the recipe text form:
    ///
    /// ```text
    /// name: staircase
    /// cuts: n+1
    /// spacers: j
    /// closed: no
    /// ```
    pub fn from_text(text: &str) -> Result<Self, BuildError> {
        let mut name = None;
        let mut cuts = None;
        let mut spacers = None;
        let mut closed = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = match line.split_once(':') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => match line.split_once(char::is_whitespace) {
                    Some((k, v)) if k == "name" => (k, v.trim()),
                    _ => return Err(BuildError::BadRecipe(format!("line {}: expected `key: value`", i + 1))),
                },
            };
            let bad = |e: String| BuildError::BadRecipe(format!("line {}: {e}", i + 1));
            match key {
                "name" => name = Some(value.to_string()),
                "cuts" => cuts = Some(Expr::parse(value).map_err(bad)?),
                "spacers" => spacers = Some(Expr::parse(value).map_err(bad)?),
                "closed" => {
                    closed = match value {
                        "yes" | "true" => true,
                        "no" | "false" => false,
                        v => return Err(bad(format!("expected yes or no, got `{v}`"))),
                    }
                }
                k => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        let name = name.ok_or_else(|| BuildError::BadRecipe("missing name".into()))?;
        let cuts = cuts.ok_or_else(|| BuildError::BadRecipe("missing cuts".into()))?;
        Self::new(&name, cuts, spacers.unwrap_or(Expr::Const(0)), closed)
    }

    pub fn to_text(&self) -> String {
        format!(
            "name: {}\ncuts: {}\nspacers: {}\nclosed: {}\n",
            self.name,
            self.cuts,
            self.spacers,
            if self.closed { "yes" } else { "no" }
        )
    }

    pub fn cuts_at(&self, n: u32) -> Result<u64, BuildError> {
        let c = self.cuts.eval(n, 0);
        if c < 1 {
            return Err(BuildError::BadRecipe(format!("cuts({n}) = {c}")));
        }
        Ok(c as u64)
    }

    pub fn spacers_at(&self, n: u32, j: u64) -> Result<u64, BuildError> {
        let s = self.spacers.eval(n, j);
        if s < 0 {
            return Err(BuildError::BadRecipe(format!("spacers({n}, {j}) = {s}")));
        }
        Ok(s as u64)
    }

    /// Total spacers added at step `n`.
    pub fn spacer_total(&self, n: u32) -> Result<u64, BuildError> {
        let c = self.cuts_at(n)?;
        (0..c).map(|j| self.spacers_at(n, j)).sum()
    }

    /// Whether the recipe never adds spacers: its stage heights are then
    /// rigidity times.
    pub fn spacer_free(&self) -> bool {
        matches!(self.spacers, Expr::Const(0)) || matches!(&self.spacers, Expr::List(v) if v.iter().all(|&x| x == 0))
    }

    fn constant_cuts(&self) -> Option<u64> {
        match self.cuts {
            Expr::Const(c) if c >= 2 => Some(c),
            _ => None,
        }
    }

    /// Column heights for stages `0..=stage`.
    pub fn heights(&self, stage: u32) -> Result<Vec<u128>, BuildError> {
        let mut h = vec![1u128];
        for n in 0..stage {
            let prev = *h.last().unwrap();
            let next = (self.cuts_at(n)? as u128)
                .checked_mul(prev)
                .and_then(|x| x.checked_add(self.spacer_total(n).ok()? as u128))
                .ok_or(BuildError::StageTooLarge { stage: n + 1, levels: u128::MAX, budget: u128::MAX })?;
            h.push(next);
        }
        Ok(h)
    }

    pub fn height(&self, stage: u32) -> Result<u128, BuildError> {
        Ok(*self.heights(stage)?.last().unwrap())
    }
}

/// Limits for stage construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildOptions {
    /// Largest number of frame levels an explicit column may have.
    pub max_levels: u128,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { max_levels: 1 << 26 }
    }
}

/// A recipe realized at a given stage inside a given frame.
#[derive(Clone, Debug)]
pub struct StagedTransformation {
    pub recipe: CuttingStackingRecipe,
    pub stage: u32,
    pub frame: u32,
    pub column: Column,
    pub map: PiecewiseTranslation,
}

pub fn build_stage(recipe: &CuttingStackingRecipe, stage: u32) -> Result<StagedTransformation, BuildError> {
    build_in_frame(recipe, stage, stage, BuildOptions::default())
}

/// Builds `stage` with spacer positions fixed by `frame >= stage`.
pub fn build_in_frame(
    recipe: &CuttingStackingRecipe,
    stage: u32,
    frame: u32,
    opts: BuildOptions,
) -> Result<StagedTransformation, BuildError> {
    if frame < stage {
        return Err(BuildError::BadFrame { stage, frame });
    }
    if let (Some(base), true) = (recipe.constant_cuts(), recipe.spacer_free()) {
        if (base as u128).checked_pow(stage).is_none_or(|h| h > opts.max_levels) {
            let levels = (base as u128).saturating_pow(stage);
            return Err(BuildError::StageTooLarge { stage, levels, budget: opts.max_levels });
        }
        let column = Column::digit_reversal(base as u32, stage, recipe.closed);
        let map = adding_machine(base, stage, recipe.closed);
        return Ok(StagedTransformation { recipe: recipe.clone(), stage, frame, column, map });
    }
    let column = explicit_column(recipe, stage, frame, opts)?;
    let map = column_map(&column);
    Ok(StagedTransformation { recipe: recipe.clone(), stage, frame, column, map })
}

fn explicit_column(recipe: &CuttingStackingRecipe, stage: u32, frame: u32, opts: BuildOptions) -> Result<Column, BuildError> {
    let heights = recipe.heights(frame)?;
    let top = heights[frame as usize];
    if top > opts.max_levels {
        return Err(BuildError::StageTooLarge { stage: frame, levels: top, budget: opts.max_levels });
    }
    let too_large = BuildError::StageTooLarge { stage: frame, levels: u128::MAX, budget: opts.max_levels };
    // widths[n] = product of cuts(m) for n <= m < frame, in frame-level units.
    let mut widths = vec![1u128; frame as usize + 1];
    for n in (0..frame).rev() {
        widths[n as usize] = widths[n as usize + 1].checked_mul(recipe.cuts_at(n)? as u128).ok_or(too_large.clone())?;
    }
    let mut positions = vec![0u128];
    let mut next_free = widths[0];
    for n in 0..stage {
        let w = widths[n as usize + 1];
        let cuts = recipe.cuts_at(n)?;
        let mut next = Vec::with_capacity(heights[n as usize + 1] as usize);
        for j in 0..cuts as u128 {
            next.extend(positions.iter().map(|p| p + j * w));
            for _ in 0..recipe.spacers_at(n, j as u64)? {
                next.push(next_free);
                next_free += w;
            }
        }
        positions = next;
    }
    Ok(Column::explicit(positions, widths[stage as usize], top, recipe.closed))
}

/// The map sending each level onto the next, merged into maximal pieces.
fn column_map(column: &Column) -> PiecewiseTranslation {
    let h = column.height();
    let mut pieces: Vec<(u128, u128, i128)> = Vec::with_capacity(h);
    let w = column.width_units();
    for l in 0..h {
        let next = if l + 1 < h {
            l + 1
        } else if column.closed() {
            0
        } else {
            continue;
        };
        let p = column.position_units(l);
        pieces.push((p, p + w, column.position_units(next) as i128 - p as i128));
    }
    pieces.sort_unstable();
    let mut merged: Vec<(u128, u128, i128)> = Vec::new();
    for (lo, hi, off) in pieces {
        match merged.last_mut() {
            Some(last) if last.1 == lo && last.2 == off => last.1 = hi,
            _ => merged.push((lo, hi, off)),
        }
    }
    let t = BigInt::from(column.total_units());
    let q = |x: i128| Q::new(BigInt::from(x), t.clone());
    let pieces: Vec<(RationalInterval, Q)> =
        merged.into_iter().map(|(lo, hi, off)| (RationalInterval::raw(q(lo as i128), q(hi as i128)), q(off))).collect();
    let domain = IntervalSet::from_intervals(pieces.iter().map(|(iv, _)| iv.clone()).collect());
    PiecewiseTranslation::from_pieces_unchecked(pieces, domain.complement())
}

/// The base-`q` adding machine on `stage` digits: one piece per carry length.
fn adding_machine(q: u64, stage: u32, closed: bool) -> PiecewiseTranslation {
    let qb = qu(q as u128);
    let one = Q::one();
    let mut pieces = Vec::new();
    // Points whose first k digits are all q-1 start at 1 - q^-k.
    let mut tail = Q::zero();
    let mut scale = one.clone();
    for _ in 0..stage {
        let next_scale = &scale / &qb;
        let hi = &one - &next_scale;
        pieces.push((RationalInterval::raw(tail.clone(), hi.clone()), &next_scale - &tail));
        tail = hi;
        scale = next_scale;
    }
    let top = RationalInterval::raw(tail.clone(), one);
    if closed {
        pieces.push((top, -tail));
        PiecewiseTranslation::from_pieces_unchecked(pieces, IntervalSet::empty())
    } else {
        PiecewiseTranslation::from_pieces_unchecked(pieces, IntervalSet::from_intervals(vec![top]))
    }
}

/// Stage heights `h_1..h_count`, which are rigidity times for spacer-free recipes.
pub fn rigidity_sequence(recipe: &CuttingStackingRecipe, count: u32) -> Result<Vec<u128>, BuildError> {
    if !recipe.spacer_free() {
        return Err(BuildError::NotRigid(recipe.name.clone()));
    }
    Ok(recipe.heights(count)?.into_iter().skip(1).collect())
}

/// Exact comparison of stages `n < m` inside frame `m`: the measure where the
/// two maps differ, and the allowance (stage-`n` top level plus the spacer
/// mass added between the stages).
pub fn stage_consistency(recipe: &CuttingStackingRecipe, n: u32, m: u32) -> Result<(Q, Q), BuildError> {
    let lo = build_in_frame(recipe, n, m, BuildOptions::default())?;
    let hi = build_in_frame(recipe, m, m, BuildOptions::default())?;
    let diff = lo.map.disagreement(&hi.map).measure();
    let mut allowance = hi.column.coverage() - lo.column.coverage();
    if !recipe.closed {
        allowance += lo.column.width();
    }
    Ok((diff, allowance))
}

impl StagedTransformation {
    pub fn height(&self) -> usize {
        self.column.height()
    }

    /// Level `i` of the native column.
    pub fn level(&self, i: usize) -> IntervalSet {
        self.column.level_set(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::q;

    fn recipe(name: &str) -> CuttingStackingRecipe {
        CuttingStackingRecipe::builtin(name).unwrap()
    }

    #[test]
    fn staircase_heights_follow_the_recursion() {
        let h = recipe("staircase").heights(8).unwrap();
        // Independent recursion: h_{n+1} = (n+1) h_n + n(n+1)/2.
        let mut oracle = vec![1u128];
        for n in 0..8u128 {
            let prev = *oracle.last().unwrap();
            oracle.push((n + 1) * prev + n * (n + 1) / 2);
        }
        assert_eq!(h, oracle);
        assert_eq!(h, vec![1, 1, 3, 12, 54, 280, 1695, 11886, 95116]);
    }

    #[test]
    fn odometer_stage_one() {
        let t = build_stage(&recipe("odometer"), 1).unwrap();
        assert_eq!(t.height(), 2);
        assert_eq!(t.map.piece_count(), 1);
        assert_eq!(t.map.apply(&q(1, 4)), Some(q(3, 4)));
        assert_eq!(t.map.residual(), &IntervalSet::interval(q(1, 2), q(1, 1)));
    }

    #[test]
    fn odometer_heights_and_rigidity() {
        assert_eq!(recipe("odometer").height(10).unwrap(), 1024);
        assert_eq!(rigidity_sequence(&recipe("odometer"), 3).unwrap(), vec![2, 4, 8]);
        assert!(rigidity_sequence(&recipe("odometer"), 0).unwrap().is_empty());
        assert!(matches!(rigidity_sequence(&recipe("staircase"), 3), Err(BuildError::NotRigid(_))));
        assert!(matches!(rigidity_sequence(&recipe("chacon"), 3), Err(BuildError::NotRigid(_))));
    }

    #[test]
    fn adding_machine_matches_explicit_column() {
        for (name, stage) in [("odometer", 4), ("rotation3", 3), ("rotation2", 3)] {
            let r = recipe(name);
            let fast = build_stage(&r, stage).unwrap();
            let col = explicit_column(&r, stage, stage, BuildOptions::default()).unwrap();
            assert_eq!(fast.map, column_map(&col), "{name}");
        }
    }

    #[test]
    fn levels_are_images_of_the_base() {
        for (name, stage) in [("staircase", 4), ("chacon", 3), ("odometer", 5)] {
            let t = build_stage(&recipe(name), stage).unwrap();
            let mut cur = t.level(0);
            for i in 1..t.height() {
                cur = t.map.image(&cur).unwrap();
                assert_eq!(cur, t.level(i), "{name} level {i}");
            }
            assert!(t.map.image(&cur).is_err());
        }
    }

    #[test]
    fn odometer_period_is_identity_on_levels() {
        for n in 1..=6 {
            let h = 1usize << n;
            let closed = build_stage(&recipe("rotation2"), n).unwrap();
            assert_eq!(closed.map.iterate(h as i64), PiecewiseTranslation::identity());
            let t = build_in_frame(&recipe("odometer"), n, n + 2, BuildOptions::default()).unwrap();
            let deep = build_stage(&recipe("odometer"), n + 2).unwrap();
            let power = deep.map.iterate(h as i64);
            for l in 0..h {
                let a = t.level(l);
                let (img, blocked) = power.image_partial(&a);
                assert_eq!(img.measure() + blocked.measure(), a.measure());
                assert_eq!(blocked.measure(), a.measure() / crate::rational::qi(4));
                assert!(img.is_subset(&a));
            }
        }
    }

    #[test]
    fn rotations_are_closed() {
        let t = build_stage(&recipe("rotation2"), 1).unwrap();
        assert!(t.map.residual().is_empty());
        assert_eq!(t.map.iterate(2), PiecewiseTranslation::identity());
        let t4 = build_stage(&recipe("rotation4"), 1).unwrap();
        assert_eq!(t4.map.apply(&q(3, 8)), Some(q(5, 8)));
        assert_eq!(t4.map.iterate(4), PiecewiseTranslation::identity());
    }

    #[test]
    fn stage_consistency_within_allowance() {
        for name in ["staircase", "chacon", "odometer"] {
            for (n, m) in [(1, 3), (2, 4), (3, 4)] {
                let (diff, allowance) = stage_consistency(&recipe(name), n, m).unwrap();
                assert!(diff <= allowance, "{name} {n}->{m}: {diff} > {allowance}");
            }
        }
    }

    #[test]
    fn recipe_text_round_trip() {
        for name in ["staircase", "chacon", "odometer", "rotation5"] {
            let r = recipe(name);
            assert_eq!(CuttingStackingRecipe::from_text(&r.to_text()).unwrap(), r);
        }
        let r = CuttingStackingRecipe::from_text("name mine\ncuts: n+2 # grows\nspacers: [1,0]\n").unwrap();
        assert_eq!(r.heights(2).unwrap(), vec![1, 3, 10]);
        assert!(CuttingStackingRecipe::from_text("name x\ncuts: j\n").is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let opts = BuildOptions { max_levels: 100 };
        assert!(matches!(
            build_in_frame(&recipe("staircase"), 5, 5, opts),
            Err(BuildError::StageTooLarge { .. })
        ));
        assert!(build_in_frame(&recipe("odometer"), 8, 8, opts).is_err());
    }
}
