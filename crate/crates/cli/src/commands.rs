//! Subcommand bodies.

use num_traits::{Signed, Zero};
use recurlab::builders::{build_stage, rigidity_sequence, stage_consistency, StagedTransformation};
use recurlab::overrec::{build_strictly_over_recurrent_set, plan_transfer, transfer_eps_over_recurrent, verify_over_rec_margins};
use recurlab::rational::{frac, parse_q, qi, Q};
use recurlab::recurrence::{certify_over, classify, CorrelationTable};
use recurlab::towerplex::{check_rescaling_lemma, init_stage1, advance_stage, slow_mixing_window, LedgerEntry, LimitLedger, Schedule, TowerplexConfig};
use recurlab::IntervalSet;
use std::collections::BTreeMap;
use std::time::Instant;

use crate::config::RunConfig;
use crate::error::{CliError, ErrorClass};
use crate::manifest::{emit, RunManifest};
use crate::svg::line_chart;

pub fn dispatch(cfg: &RunConfig, m: &mut RunManifest) -> Result<(), CliError> {
    match cfg.subcommand.as_str() {
        "build" => build(cfg, m),
        "correlate" => correlate(cfg, m, false),
        "classify" => correlate(cfg, m, true),
        "construct-overrec" => construct_overrec(cfg, m),
        "transfer" => transfer(cfg, m),
        "towerplex" => towerplex(cfg, m),
        "report" => report(cfg, m),
        other => Err(CliError::precondition("Usage", format!("unknown subcommand {other}"))),
    }
}

fn timed<T>(cfg: &RunConfig, m: &mut RunManifest, op: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    if cfg.timing {
        m.push(&format!("timing.{op}_ms"), start.elapsed().as_millis());
    }
    out
}

fn stage(cfg: &RunConfig, m: &mut RunManifest, recipe_key: &str, stage_key: &str) -> Result<StagedTransformation, CliError> {
    let recipe = cfg.recipe(recipe_key)?;
    let n = cfg.integer(stage_key)?;
    let n = u32::try_from(n).map_err(|_| CliError::precondition("BadInteger", format!("--{stage_key} {n} is too large")))?;
    Ok(timed(cfg, m, &format!("build_{recipe_key}"), || build_stage(&recipe, n))?)
}

fn build(cfg: &RunConfig, m: &mut RunManifest) -> Result<(), CliError> {
    let recipe = cfg.recipe("recipe")?;
    let t = stage(cfg, m, "recipe", "stage")?;
    m.push("recipe.name", &recipe.name);
    m.push("recipe.cuts", &recipe.cuts);
    m.push("recipe.spacers", &recipe.spacers);
    m.push("recipe.closed", recipe.closed);
    let heights = recipe.heights(t.stage)?;
    m.push("heights", heights.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
    m.push("column.height", t.height());
    m.push("column.level_width", frac(&t.column.width()));
    m.push("column.coverage", frac(&t.column.coverage()));
    m.push("map.pieces", t.map.piece_count());
    m.push("map.residual_measure", frac(&t.map.residual().measure()));
    if recipe.spacer_free() {
        let times = rigidity_sequence(&recipe, t.stage.min(8))?;
        m.push("rigidity_times", times.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
    }
    if t.stage >= 1 {
        let (diff, allowance) = stage_consistency(&recipe, t.stage - 1, t.stage)?;
        m.push("stage_consistency.disagreement", frac(&diff));
        m.push("stage_consistency.allowance", frac(&allowance));
    }
    let dir = cfg.out.as_deref();
    emit(m, dir, "recipe.txt", recipe.to_text().as_bytes())?;
    emit(m, dir, "map.txt", t.map.to_text().as_bytes())?;
    Ok(())
}

fn table_artifacts(m: &mut RunManifest, dir: Option<&std::path::Path>, title: &str, table: &CorrelationTable) -> Result<(), CliError> {
    let points: Vec<(i64, Q)> = table.values.iter().map(|(n, v)| (*n, v.clone())).collect();
    emit(m, dir, "correlation.csv", table.to_csv().as_bytes())?;
    emit(m, dir, "correlation.svg", line_chart(title, &points, &table.reference()).as_bytes())?;
    Ok(())
}

fn correlate(cfg: &RunConfig, m: &mut RunManifest, verdict: bool) -> Result<(), CliError> {
    let t = stage(cfg, m, "recipe", "stage")?;
    let a = cfg.set("set")?;
    let b = if cfg.get("set-b").is_some() { cfg.set("set-b")? } else { a.clone() };
    let horizon = cfg.integer("horizon")?;
    m.push("measure.a", frac(&a.measure()));
    m.push("measure.b", frac(&b.measure()));
    let table = timed(cfg, m, "correlate", || CorrelationTable::compute(&t, &a, &b, horizon));
    m.push("reference", frac(&table.reference()));
    m.push("rows.defined", table.values.len());
    m.push("rows.undefined", table.undefined.len());
    for n in 1..=horizon.min(32) as i64 {
        match table.values.get(&n) {
            Some(v) => m.push(&format!("correlation.{n}"), frac(v)),
            None => m.push(&format!("correlation.{n}"), "undefined"),
        }
    }
    if verdict {
        let eps = cfg.opt_rational("eps")?;
        let v = timed(cfg, m, "classify", || classify(&t, &a, horizon, eps.as_ref()))?;
        m.push("verdict", &v.kind);
        m.push("verdict.horizon", v.horizon);
        m.push("verdict.margin", frac(&v.margin));
        m.push("verdict.witness", v.witness.map_or("none".to_string(), |w| w.to_string()));
    }
    table_artifacts(m, cfg.out.as_deref(), "n ↦ μ(TⁿA ∩ B)", &table)
}

fn list(v: impl IntoIterator<Item = String>) -> String {
    v.into_iter().collect::<Vec<_>>().join(",")
}

fn construct_overrec(cfg: &RunConfig, m: &mut RunManifest) -> Result<(), CliError> {
    let t = stage(cfg, m, "recipe", "stage")?;
    let a = cfg.rational("a")?;
    let stages = cfg.integer("stages")? as usize;
    let window = cfg.integer("window")?;
    let (set, state) = timed(cfg, m, "construct", || build_strictly_over_recurrent_set(&t, &a, stages, window))?;
    m.push("set.measure", frac(&set.measure()));
    m.push("set.intervals", set.len());
    m.push("budgets", list(state.budgets.iter().map(frac)));
    m.push("epsilons", list(state.epsilons.iter().map(frac)));
    m.push("scales", list(state.scales.iter().map(|s| s.n.to_string())));
    m.push("scales.window_end", list(state.scales.iter().map(|s| s.window_end.to_string())));
    m.push("scales.max_deviation", list(state.scales.iter().map(|s| frac(&s.max_deviation))));
    m.push("factors", list(state.factors.iter().map(|f| f.to_string())));
    m.push("towers.height", list(state.towers.iter().map(|t| t.height.to_string())));
    m.push("towers.coverage", list(state.towers.iter().map(|t| frac(&t.coverage))));
    let report = timed(cfg, m, "margins", || verify_over_rec_margins(&state, &t))?;
    m.push("low.bound", frac(&report.low.bound));
    m.push("low.bound_exceeds_square", report.low.bound_exceeds_square);
    m.push("low.epsilon_condition", report.low.epsilon_condition.map_or("n/a".into(), |b| b.to_string()));
    m.push("low.measured_margin", report.low.measured_margin.as_ref().map_or("n/a".into(), frac));
    for b in &report.branches {
        let p = format!("branch.{}", b.k);
        m.push(&format!("{p}.range"), format!("{}..={}", b.from, b.to));
        m.push(&format!("{p}.chain_bound"), frac(&b.chain_bound));
        m.push(&format!("{p}.chain_exceeds_square"), b.chain_exceeds_square);
        m.push(&format!("{p}.decomposition_exact"), b.decomposition_exact);
        m.push(&format!("{p}.decomposition_checked"), b.decomposition_checked);
        m.push(&format!("{p}.lower_bound_held"), b.lower_bound_held);
        m.push(&format!("{p}.measured_margin"), frac(&b.measured_margin));
    }
    let dir = cfg.out.as_deref();
    emit(m, dir, "set.txt", set.to_text().as_bytes())?;
    let horizon = state.horizon();
    m.push("horizon", horizon);
    if horizon == 0 {
        m.push("verdict", "none");
        return Ok(());
    }
    let cert = timed(cfg, m, "certify", || certify_over(&t, &set, horizon))?;
    m.push("certificate.margin", frac(&cert.margin));
    m.push("certificate.exact", cert.exact);
    m.push("certificate.worst_n", cert.worst_n);
    let table = timed(cfg, m, "correlate", || CorrelationTable::compute(&t, &set, &set, horizon));
    table_artifacts(m, dir, "n ↦ μ(TⁿA ∩ A)", &table)?;
    if !cert.margin.is_positive() {
        return Err(CliError::new(ErrorClass::Verification, "MarginViolated", format!("over-recurrence margin violated at n = {}", cert.worst_n)));
    }
    m.push("verdict", "strictlyOverRecurrent");
    m.push("verdict.margin", frac(&cert.margin));
    Ok(())
}

fn transfer(cfg: &RunConfig, m: &mut RunManifest) -> Result<(), CliError> {
    let t = stage(cfg, m, "recipe", "stage")?;
    let (set, horizon) = if cfg.get("set").is_some() {
        (cfg.set("set")?, cfg.integer("horizon")?)
    } else {
        let a = cfg.rational("a")?;
        let stages = cfg.integer("stages")? as usize;
        let window = cfg.integer("window")?;
        let (set, state) = timed(cfg, m, "construct", || build_strictly_over_recurrent_set(&t, &a, stages, window))?;
        let h = cfg.opt_integer("horizon")?.unwrap_or(state.horizon());
        (set, h)
    };
    let target = cfg.recipe("target")?;
    let eps = cfg.rational("eps")?;
    m.push("source.measure", frac(&set.measure()));
    m.push("horizon", horizon);
    let plan = timed(cfg, m, "plan", || plan_transfer(&t, &set, &target, &eps, horizon))?;
    m.push("plan.height", plan.height);
    m.push("plan.source_levels", plan.source_levels.len());
    m.push("plan.approximation_error", frac(&plan.approximation_error));
    m.push("plan.target_stage", plan.target.stage);
    m.push("plan.target_blocks", plan.target_blocks);
    m.push("plan.target_residual", frac(&plan.target_residual));
    let (k, verdict) = timed(cfg, m, "transfer", || transfer_eps_over_recurrent(&plan))?;
    m.push("transferred.measure", frac(&k.measure));
    m.push("transferred.pattern", list(k.pattern.iter().map(|l| l.to_string())));
    m.push("verdict", &verdict.kind);
    m.push("verdict.horizon", verdict.horizon);
    m.push("verdict.margin", frac(&verdict.margin));
    Ok(())
}

fn schedule(cfg: &RunConfig, key: &str) -> Result<Schedule, CliError> {
    let v = cfg.require(key)?;
    let bad = || CliError::precondition("BadSchedule", format!("--{key} {v}: expected geometric:<ratio>, geometric:<first>:<ratio>, const:<p/q> or half-inverse:<offset>"));
    let parts: Vec<&str> = v.split(':').collect();
    let rat = |s: &str| parse_q(s).map_err(|_| bad());
    match parts.as_slice() {
        ["geometric", r] => Ok(Schedule::Geometric { first: rat(r)?, ratio: rat(r)? }),
        ["geometric", f, r] => Ok(Schedule::Geometric { first: rat(f)?, ratio: rat(r)? }),
        ["const", c] => Ok(Schedule::Constant(rat(c)?)),
        ["half-inverse", o] => Ok(Schedule::HalfInverse(o.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn towerplex(cfg: &RunConfig, m: &mut RunManifest) -> Result<(), CliError> {
    let r = stage(cfg, m, "seed-R", "stage-R")?;
    let s = stage(cfg, m, "seed-S", "stage-S")?;
    let tcfg = TowerplexConfig {
        stages: cfg.integer("stages")? as usize,
        h1: cfg.integer("h1")? as usize,
        eps: schedule(cfg, "eps")?,
        r: schedule(cfg, "r")?,
        s: schedule(cfg, "s")?,
        kappa: cfg.rational("kappa")?,
    };
    let mut states = vec![timed(cfg, m, "init", || init_stage1(r, s, &tcfg))?];
    let mut ledger = LimitLedger { kappa: tcfg.kappa.clone(), entries: Vec::new() };
    let dir = cfg.out.as_deref();
    let mut failed_checks = Vec::new();
    for _ in 0..tcfg.stages {
        let cur = states.last().unwrap();
        let n = cur.n;
        let (next, tr, ck) = timed(cfg, m, &format!("stage{n}"), || advance_stage(cur, &tcfg))?;
        let p = format!("stage.{n}");
        m.push(&format!("{p}.mu_x"), frac(&tr.mu_x));
        m.push(&format!("{p}.mu_y"), frac(&tr.mu_y));
        m.push(&format!("{p}.h"), tr.h);
        m.push(&format!("{p}.eps"), frac(&tr.eps));
        m.push(&format!("{p}.r"), frac(&tr.r));
        m.push(&format!("{p}.s"), frac(&tr.s));
        m.push(&format!("{p}.tower_mass_r"), frac(&tr.a_r));
        m.push(&format!("{p}.tower_mass_s"), frac(&tr.a_s));
        m.push(&format!("{p}.tower_coverage"), frac(&ck.tower_coverage));
        m.push(&format!("{p}.b"), frac(&tr.b));
        m.push(&format!("{p}.c_r"), frac(&tr.c_r));
        m.push(&format!("{p}.d_r"), frac(&tr.d_r));
        m.push(&format!("{p}.case_r"), tr.r_case);
        m.push(&format!("{p}.c_s"), frac(&tr.c_s));
        m.push(&format!("{p}.d_s"), frac(&tr.d_s));
        m.push(&format!("{p}.case_s"), tr.s_case);
        m.push(&format!("{p}.pieces.tau"), tr.tau.pieces().len());
        m.push(&format!("{p}.pieces.psi"), tr.psi.pieces().len());
        m.push(&format!("{p}.pieces.r_next"), next.r_n.piece_count());
        m.push(&format!("{p}.pieces.s_next"), next.s_n.piece_count());
        let checks = [
            ("partition_exact", ck.partition_exact),
            ("r_conjugacy_equal", ck.r_conjugacy_equal),
            ("s_conjugacy_equal", ck.s_conjugacy_equal),
            ("union_formula", ck.next_union_formula),
            ("psi_ratio_exact", ck.psi_ratio_exact),
            ("psi_containment", ck.psi_containment),
            ("tau_normalized", ck.tau_normalized),
            ("psi_normalized", ck.psi_normalized),
        ];
        for (name, ok) in checks {
            m.push(&format!("{p}.check.{name}"), ok);
            if !ok {
                failed_checks.push(format!("{p}.{name}"));
            }
        }
        m.push(&format!("{p}.e_measure"), frac(&ck.e_measure));
        m.push(&format!("{p}.e_bound"), frac(&ck.e_bound));
        m.push(&format!("{p}.ledger_ok"), ck.ledger_ok);
        m.push(&format!("stage.{}.mu_x", n + 1), frac(&next.x.measure()));
        ledger.entries.push(LedgerEntry { n, e_measure: ck.e_measure.clone(), eps: tr.eps.clone(), h: tr.h, r: tr.r.clone(), s: tr.s.clone() });
        if !ck.ledger_ok {
            return Err(CliError::new(
                ErrorClass::Verification,
                "LedgerViolation",
                format!("stage {n}: μ(E_n) = {} is not below κ ε_n = {}", frac(&ck.e_measure), frac(&ck.e_bound)),
            ));
        }
        // μ(S_nⁱ Q ∩ Q) for the union Q of the ψ-images of the retained atoms.
        let atoms = tr.retained_atoms.iter().map(|p| tr.psi.image(p)).collect::<Result<Vec<_>, _>>()?;
        let q_union = IntervalSet::union_all(atoms.iter());
        let hz = tr.h as i64;
        let mut values = BTreeMap::new();
        let mut undefined = BTreeMap::new();
        for (i, lo, unc) in cur.s_correlation_sweep(&q_union, &q_union, -hz..=hz) {
            if unc.is_zero() {
                values.insert(i, lo);
            } else {
                undefined.insert(i, unc);
            }
        }
        let table = CorrelationTable { a: q_union.clone(), b: q_union, horizon: tr.h as u64, values, undefined };
        emit(m, dir, &format!("towerplex_stage{n}.csv"), table.to_csv().as_bytes())?;
        if n == 1 {
            let delta = match cfg.opt_rational("delta")? {
                Some(d) => d,
                None => qi(6) * (&cur.eps + cur.x.measure()) + &cur.eps,
            };
            let rep = timed(cfg, m, "lemma", || check_rescaling_lemma(cur, &next, &tr, &delta, tcfg.h1 as u64))?;
            m.push("lemma.delta", frac(&rep.delta));
            m.push("lemma.pairs", rep.pairs);
            m.push("lemma.i_max", rep.i_max);
            m.push("lemma.max_excess", frac(&rep.max_excess));
            m.push("lemma.max_symmetric_difference", frac(&rep.max_symmetric_difference));
            m.push("lemma.ratio_gap", frac(&rep.ratio_gap));
            m.push("lemma.holds", true);
        }
        if n == 2 {
            let level = tr.r_tower.level(0);
            let w = timed(cfg, m, "window", || slow_mixing_window(cur, &level, &Q::new(1.into(), 2.into())))?;
            m.push("window.i", w.i);
            m.push("window.rigidity_times", w.rigidity_times.len());
            m.push("window.margin", frac(&w.margin));
        }
        states.push(next);
    }
    m.push("ledger.kappa", frac(&ledger.kappa));
    m.push("ledger.e_sum", frac(&ledger.e_partial_sum()));
    m.push("ledger.eps_sum", frac(&ledger.eps_partial_sum()));
    m.push("ledger.r_sum", frac(&ledger.r_partial_sum()));
    m.push("ledger.s_sum", frac(&ledger.s_partial_sum()));
    m.push("ledger.holds", ledger.holds());
    if !failed_checks.is_empty() {
        return Err(CliError::new(ErrorClass::Verification, "CheckFailed", failed_checks.join(",")));
    }
    Ok(())
}

/// Parses a correlation CSV back into rows.
pub fn parse_correlation_csv(text: &str) -> Result<Vec<(i64, Q, Q)>, CliError> {
    let bad = |i: usize, why: &str| CliError::precondition("CsvParse", format!("line {}: {why}", i + 1));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i, "expected 7 fields"));
        }
        let n: i64 = f[0].trim().parse().map_err(|_| bad(i, "bad n"))?;
        let ratio = |a: &str, b: &str| parse_q(&format!("{}/{}", a.trim(), b.trim())).map_err(|e| bad(i, &e.to_string()));
        rows.push((n, ratio(f[1], f[2])?, ratio(f[3], f[4])?));
    }
    Ok(rows)
}

fn report(cfg: &RunConfig, m: &mut RunManifest) -> Result<(), CliError> {
    let path = cfg.require("csv")?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let rows = parse_correlation_csv(&text)?;
    let reference = rows.first().map(|r| r.2.clone()).unwrap_or_else(Q::zero);
    let margins: Vec<Q> = rows.iter().map(|(_, v, r)| v - r).collect();
    m.push("rows", rows.len());
    m.push("rows.above", margins.iter().filter(|x| x.is_positive()).count());
    m.push("rows.equal", margins.iter().filter(|x| x.is_zero()).count());
    m.push("rows.below", margins.iter().filter(|x| x.is_negative()).count());
    if let (Some(lo), Some(hi)) = (margins.iter().min(), margins.iter().max()) {
        m.push("margin.min", frac(lo));
        m.push("margin.max", frac(hi));
    }
    let points: Vec<(i64, Q)> = rows.iter().map(|(n, v, _)| (*n, v.clone())).collect();
    let title = cfg.get("title").unwrap_or("correlations");
    emit(m, cfg.out.as_deref(), "report.svg", line_chart(title, &points, &reference).as_bytes())?;
    Ok(())
}
