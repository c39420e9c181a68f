use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::barrier::{cadlag_approx_sequence, random_irregular, BarrierFlag, BarrierSpec, LadlagBarrier};
use crate::driver::{BuiltinDriver, Driver};
use crate::error::{LabError, Result};
use crate::mc::{
    simulate_paths, solve_reflected_mc, Basis, Dynamics, Increments, MarkovBarrier, Payoff,
    RegressionSpec,
};
use crate::process::{AdaptedProcess, SlotProcess};
use crate::rbsde::{
    check_quadruple, right_shift_solution, sample_xi_star, peng_xu_check, skorokhod_residuals,
    solve_reflected, solve_via_monotone_approx, solve_via_penalization,
};
use crate::rbsde::penalty::doubling_schedule;
use crate::stopping::{
    bellman_scaling_check, brute_force_family, check_supermartingale_family,
    shift_envelope, snell_dp, DEFAULT_RULE_BUDGET,
};
use crate::process::Slot;

use super::{fmt, random_driver, rng, unit_model, CriterionConfig, CriterionReport, DriverKind, Instance, Table};

fn report(passed: bool, instances: usize, detail: String, metrics: &[(&str, f64)], tables: Vec<Table>) -> CriterionReport {
    CriterionReport {
        id: 0,
        title: String::new(),
        passed,
        instances,
        detail,
        metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        tables,
    }
}

fn instance(
    seed: u64,
    depth: usize,
    mu: &[f64],
    kind: DriverKind,
    flags: &[BarrierFlag],
) -> Result<Instance> {
    let model = unit_model(depth, mu)?;
    let mut r = rng(seed ^ 0x5eed);
    let (dlabel, driver) = random_driver(kind, &mut r, mu);
    let barrier = random_irregular(&model, seed, flags)?;
    let flag_names: Vec<&str> = flags.iter().map(|f| f.name()).collect();
    Ok(Instance {
        label: format!("seed={seed} depth={depth} marks={mu:?} driver={dlabel} flags={flag_names:?}"),
        model,
        driver,
        barrier,
    })
}

fn marks_for(idx: usize) -> &'static [f64] {
    if idx % 2 == 0 {
        &[]
    } else {
        &[0.4]
    }
}

fn kind_for(idx: usize) -> DriverKind {
    DriverKind::ORACLE[idx % DriverKind::ORACLE.len()]
}

/// `max |a - r| / (1 + |r|)` over all slots.
fn relative_gap(a: &SlotProcess<f64>, r: &SlotProcess<f64>) -> Result<f64> {
    let d = a.zip_with(r, |x, y| (x - y).abs() / (1.0 + y.abs()))?;
    Ok(d.max_abs())
}

/// `max(b - a)` over all slots: how far `a` fails to dominate `b`.
fn excess(a: &SlotProcess<f64>, b: &SlotProcess<f64>) -> Result<f64> {
    a.max_shortfall(b)
}

fn random_nonneg(model: &crate::lattice::LatticeModel<f64>, seed: u64) -> SlotProcess<f64> {
    let mut r = rng(seed);
    let mut h = SlotProcess::zeros(model);
    for s in Slot::ALL {
        for v in h.layer_mut(s).iter_mut().flatten() {
            *v = r.random_range(0.0..1.0);
        }
    }
    h
}

fn shifted(b: &LadlagBarrier<f64>, model: &crate::lattice::LatticeModel<f64>, h: &SlotProcess<f64>, scale: f64) -> Result<LadlagBarrier<f64>> {
    LadlagBarrier::from_slots(model, b.slots().zip_with(h, |x, y| x + scale * y)?)
}

pub(super) fn oracle_equivalence(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("gap")?;
    let shapes: [(usize, &[f64]); 4] = [(2, &[]), (3, &[]), (1, &[0.5]), (2, &[0.5])];
    let mut table = Table::new(
        "oracle",
        &["instance", "hash", "ruleCount", "dpValue", "bruteForceValue", "maxGap", "argmax"],
    );
    let mut worst = 0.0f64;
    for idx in 0..cfg.instances {
        let (depth, mu) = shapes[idx % shapes.len()];
        let inst = instance(cfg.seed + idx as u64, depth, mu, kind_for(idx), &[])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let bf = brute_force_family(m, d, b, DEFAULT_RULE_BUDGET)?.values;
        let dp = snell_dp(m, d, b)?.values;
        let q = solve_reflected(m, d, b)?;
        let gap = bf.max_abs_diff(&dp)?.max(dp.max_abs_diff(&q.y)?);
        worst = worst.max(gap);
        let rules = crate::stopping::enumerate_stopping_rules(m, 0, 0, Slot::At, 0, DEFAULT_RULE_BUDGET)?;
        let count = rules.len();
        let (v, rule) = crate::stopping::brute_force_over(m, d, b.slots(), 0, rules)?;
        table.push(vec![
            inst.label.clone(),
            inst.hash(),
            count.to_string(),
            format!("{}", dp.at[0][0]),
            format!("{v}"),
            fmt(gap),
            serde_json::to_string(&rule.stops).expect("serializable"),
        ]);
    }
    let passed = worst <= tol;
    Ok(report(
        passed,
        cfg.instances,
        format!("max |BF - DP|, |DP - Y| = {worst:e} over every node-slot (tol {tol:e})"),
        &[("maxGap", worst)],
        vec![table],
    ))
}

pub(super) fn comparison(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("violation")?;
    let mut table = Table::new("comparison", &["instance", "sequence", "maxViolation"]);
    let mut worst = 0.0f64;
    for idx in 0..cfg.instances {
        let seed = cfg.seed + idx as u64;
        let inst = instance(seed, 3, marks_for(idx), kind_for(idx), &[BarrierFlag::RightUsc])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let runs = solve_via_monotone_approx(m, d, b, 10)?;
        let mut v_approx = 0.0f64;
        for w in runs.windows(2) {
            v_approx = v_approx.max(excess(&w[0].restricted, &w[1].restricted)?);
        }
        let h = random_nonneg(m, seed + 77);
        let mut prev = solve_reflected(m, d, b)?.y;
        let mut v_shift = 0.0f64;
        for k in 1..=5 {
            let bk = shifted(b, m, &h, -(k as f64))?;
            let y = solve_reflected(m, d, &bk)?.y;
            v_shift = v_shift.max(excess(&prev, &y)?);
            prev = y;
        }
        worst = worst.max(v_approx).max(v_shift);
        table.push(vec![inst.label.clone(), "cadlagApprox".into(), fmt(v_approx)]);
        table.push(vec![inst.label, "downwardShift".into(), fmt(v_shift)]);
    }
    Ok(report(
        worst <= tol,
        cfg.instances,
        format!("largest Y^(n+1) - Y^n = {worst:e} (tol {tol:e})"),
        &[("maxViolation", worst)],
        vec![table],
    ))
}

pub(super) fn monotone_approximation(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("relative")?;
    let mut table = Table::new("convergence", &["instance", "n", "relativeGap"]);
    let mut monotone = true;
    let mut final_worst = 0.0f64;
    for idx in 0..cfg.instances {
        let inst = instance(cfg.seed + idx as u64, 3, marks_for(idx), kind_for(idx), &[BarrierFlag::RightUsc])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let direct = solve_reflected(m, d, b)?.y;
        let mut prev = f64::INFINITY;
        for run in solve_via_monotone_approx(m, d, b, 10)? {
            let gap = relative_gap(&run.restricted, &direct)?;
            monotone &= gap <= prev;
            prev = gap;
            table.push(vec![inst.label.clone(), run.n.to_string(), fmt(gap)]);
        }
        final_worst = final_worst.max(prev);
    }
    Ok(report(
        monotone && final_worst <= tol,
        cfg.instances,
        format!("gaps nonincreasing: {monotone}; worst relative gap at n=10: {final_worst:e} (tol {tol:e})"),
        &[("finalRelativeGap", final_worst), ("monotone", monotone as u8 as f64)],
        vec![table],
    ))
}

pub(super) fn penalization(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("relative")?;
    let mut table = Table::new("penalization", &["instance", "n", "relativeGap", "minIncrease"]);
    let mut nondecreasing = true;
    let mut decreasing_gap = true;
    let mut final_worst = 0.0f64;
    let schedule = doubling_schedule::<f64>(10);
    for idx in 0..cfg.instances {
        let inst = instance(cfg.seed + idx as u64, 3, marks_for(idx), kind_for(idx), &[BarrierFlag::RightUsc])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let run = solve_via_penalization(m, d, b, &schedule)?;
        let direct = solve_reflected(m, d, b)?.y;
        let mut prev: Option<(f64, &SlotProcess<f64>)> = None;
        for step in &run.steps {
            let gap = relative_gap(&step.y_bar, &direct)?;
            let mut min_inc = f64::NAN;
            if let Some((pg, py)) = prev {
                let inc = step.y_bar.zip_with(py, |a, b| a - b)?;
                min_inc = inc.iter().map(|(_, _, _, v)| v).fold(f64::INFINITY, f64::min);
                nondecreasing &= min_inc >= 0.0;
                if step.n > 1.0 {
                    decreasing_gap &= gap < pg || pg == 0.0;
                }
            }
            table.push(vec![inst.label.clone(), format!("{}", step.n), fmt(gap), fmt(min_inc)]);
            prev = Some((gap, &step.y_bar));
        }
        final_worst = final_worst.max(prev.map_or(f64::INFINITY, |p| p.0));
    }
    Ok(report(
        nondecreasing && decreasing_gap && final_worst <= tol,
        cfg.instances,
        format!(
            "nondecreasing: {nondecreasing}; gap shrinks on doubling: {decreasing_gap}; worst relative gap at n=1024: {final_worst:e} (tol {tol:e})"
        ),
        &[
            ("finalRelativeGap", final_worst),
            ("nondecreasing", nondecreasing as u8 as f64),
            ("gapDecreasing", decreasing_gap as u8 as f64),
        ],
        vec![table],
    ))
}

const FLAG_CYCLE: [&[BarrierFlag]; 6] = [
    &[],
    &[BarrierFlag::RightUsc],
    &[BarrierFlag::LeftUsc],
    &[BarrierFlag::XiLeqXiPlus],
    &[BarrierFlag::StrictLeftGap],
    &[BarrierFlag::Cadlag],
];

pub(super) fn skorokhod(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("residual")?;
    let mut table = Table::new("skorokhod", &["instance", "output", "s1", "s2", "s3"]);
    let mut worst = 0.0f64;
    let mut outputs = 0usize;
    let mut push = |label: &str, what: &str, r: crate::rbsde::SkorokhodReport| {
        worst = worst.max(r.max_abs());
        outputs += 1;
        table.push(vec![label.into(), what.into(), fmt(r.s1), fmt(r.s2), fmt(r.s3)]);
    };
    for idx in 0..cfg.instances {
        let flags = FLAG_CYCLE[idx % FLAG_CYCLE.len()];
        let inst = instance(cfg.seed + idx as u64, 3, marks_for(idx / 6), kind_for(idx), flags)?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let q = solve_reflected(m, d, b)?;
        push(&inst.label, "direct", skorokhod_residuals(m, &q, b)?);
        if b.flags().right_usc {
            for n in 1..=3 {
                let (refined, xi_n) = cadlag_approx_sequence(m, b, n)?;
                let qn = solve_reflected(&refined, d, &xi_n)?;
                push(&inst.label, &format!("cadlag n={n}"), skorokhod_residuals(&refined, &qn, &xi_n)?);
            }
        }
        if b.flags().strict_left_gap {
            let (s, plus, _) = right_shift_solution(m, d, &q, b)?;
            push(&inst.label, "rightShift", skorokhod_residuals(m, &s, &plus)?);
        }
    }
    Ok(report(
        worst <= tol,
        cfg.instances,
        format!("{outputs} solver outputs, largest |residual sum| = {worst:e} (tol {tol:e})"),
        &[("maxResidual", worst), ("outputs", outputs as f64)],
        vec![table],
    ))
}

/// Mismatches of `Y_at = xi_at v Y_post` and `Y_pre = xi_pre v Y_at`.
fn identity_mismatches(
    model: &crate::lattice::LatticeModel<f64>,
    y: &SlotProcess<f64>,
    b: &LadlagBarrier<f64>,
) -> usize {
    let last = model.depth();
    let mut bad = 0;
    for j in 0..=last {
        for i in 0..model.count(j) {
            let at_ok = if j < last {
                y.at[j][i] == b.at(j)[i].max(y.post[j][i])
            } else {
                y.at[j][i] == b.terminal()[i]
            };
            let pre_ok = j == 0 || y.pre[j][i] == b.pre(j)[i].max(y.at[j][i]);
            bad += usize::from(!at_ok) + usize::from(!pre_ok);
        }
    }
    bad
}

pub(super) fn reflection_identities(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let mut table = Table::new("identities", &["instance", "mismatches"]);
    let mut total = 0usize;
    let mut run = |label: String, m: &crate::lattice::LatticeModel<f64>, d: &dyn Driver<f64>, b: &LadlagBarrier<f64>| -> Result<()> {
        let q = solve_reflected(m, d, b)?;
        let bad = identity_mismatches(m, &q.y, b);
        total += bad;
        table.push(vec![label, bad.to_string()]);
        Ok(())
    };
    for idx in 0..cfg.instances {
        let flags = FLAG_CYCLE[idx % FLAG_CYCLE.len()];
        let inst = instance(cfg.seed + idx as u64, 3, marks_for(idx / 6), kind_for(idx), flags)?;
        run(inst.label.clone(), &inst.model, &inst.driver, &inst.barrier)?;
    }
    let m = unit_model(2, &[])?;
    let put = BarrierSpec::AmericanPut { strike: 100.0, spot: 100.0, up: 1.2, down: 0.8 }.build(&m, Path::new("."))?;
    run("americanPut depth=2".into(), &m, &BuiltinDriver::Zero, &put)?;
    Ok(report(
        total == 0,
        cfg.instances + 1,
        format!("{total} nodes violate an identity (exact comparison)"),
        &[("mismatches", total as f64)],
        vec![table],
    ))
}

pub(super) fn regularity(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let mut table = Table::new("regularity", &["instance", "flag", "nonzeroIncrements", "rightGaps"]);
    let mut bad = 0usize;
    for idx in 0..cfg.instances {
        let flag = if idx % 2 == 0 { BarrierFlag::LeftUsc } else { BarrierFlag::XiLeqXiPlus };
        let inst = instance(cfg.seed + idx as u64, 3, marks_for(idx / 2), kind_for(idx), &[flag])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let q = solve_reflected(m, d, b)?;
        let (nonzero, gaps) = match flag {
            BarrierFlag::LeftUsc => (q.da.pre.iter().flatten().filter(|v| **v != 0.0).count(), 0),
            _ => {
                let nz = q.da.at[..m.depth()].iter().flatten().filter(|v| **v != 0.0).count();
                let gaps = (0..m.depth())
                    .map(|j| q.y.at[j].iter().zip(&q.y.post[j]).filter(|(a, p)| a != p).count())
                    .sum();
                (nz, gaps)
            }
        };
        bad += nonzero + gaps;
        table.push(vec![inst.label, flag.name().into(), nonzero.to_string(), gaps.to_string()]);
    }
    Ok(report(
        bad == 0,
        cfg.instances,
        format!("{bad} nonzero increments or right gaps where the flag forbids them"),
        &[("violations", bad as f64)],
        vec![table],
    ))
}

pub(super) fn supermartingale(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("pair")?;
    let mut table = Table::new(
        "supermartingale",
        &["instance", "family", "pairs", "maxViolation", "dominates", "dpExcess", "passed"],
    );
    let mut ok = true;
    let mut constructed = 0usize;
    let mut row = |label: &str, family: &str, r: &crate::stopping::SupermartReport| {
        table.push(vec![
            label.into(),
            family.into(),
            r.pairs_checked.to_string(),
            fmt(r.max_violation),
            format!("{:?}", r.dominates),
            r.dp_excess.map_or(String::new(), fmt),
            r.passed.to_string(),
        ]);
    };
    for idx in 0..cfg.instances {
        let seed = cfg.seed + idx as u64;
        let inst = instance(seed, 3, marks_for(idx), kind_for(idx), &[])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let r = snell_dp(m, d, b)?.values;
        let rep = check_supermartingale_family(m, d, &r, Some(b), tol)?;
        ok &= rep.passed;
        row(&inst.label, "R^g[xi]", &rep);
        // the value of a larger barrier is a supermartingale above xi
        let big = shifted(b, m, &random_nonneg(m, seed + 5), 1.0)?;
        let u = snell_dp(m, d, &big)?.values;
        let rep = check_supermartingale_family(m, d, &u, Some(b), tol)?;
        ok &= rep.passed && rep.dominates == Some(true);
        constructed += 1;
        row(&inst.label, "R^g[xi + h]", &rep);
    }
    // negative control: a barrier that rises later is not a supermartingale
    let m = unit_model(2, &[])?;
    let mut v = LadlagBarrier::constant(&m, 0.0).slots().clone();
    v.at[2] = vec![10.0; m.count(2)];
    let spike = LadlagBarrier::from_slots(&m, v.clone())?;
    let neg = check_supermartingale_family(&m, &BuiltinDriver::Zero, &v, Some(&spike), tol)?;
    row("late spike", "xi", &neg);
    let negative_fails = !neg.passed;
    Ok(report(
        ok && negative_fails && constructed >= 5,
        cfg.instances,
        format!(
            "R^g[xi] and {constructed} dominating supermartingales pass: {ok}; late-spike control rejected: {negative_fails}"
        ),
        &[("constructed", constructed as f64)],
        vec![table],
    ))
}

pub(super) fn bellman(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("gap")?;
    let shapes: [(usize, &[f64]); 3] = [(2, &[]), (3, &[]), (2, &[0.5])];
    let mut table = Table::new("bellman", &["instance", "theta", "alpha", "lhs", "rhs", "gap", "rules"]);
    let mut worst = 0.0f64;
    for idx in 0..cfg.instances {
        let seed = cfg.seed + idx as u64;
        let (depth, mu) = shapes[idx % shapes.len()];
        let inst = instance(seed, depth, mu, kind_for(idx), &[])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let theta = 1 + idx % depth;
        let n = m.count(theta);
        let mut r = rng(seed + 9);
        let alphas: [(&str, Vec<f64>); 3] = [
            ("0", vec![0.0; n]),
            ("1", vec![1.0; n]),
            ("random", (0..n).map(|_| r.random_range(0.0..2.0)).collect()),
        ];
        for (name, alpha) in alphas {
            let rep = bellman_scaling_check(m, d, b, theta, &alpha, DEFAULT_RULE_BUDGET, tol)?;
            worst = worst.max(rep.gap);
            table.push(vec![
                inst.label.clone(),
                theta.to_string(),
                name.into(),
                format!("{}", rep.lhs),
                format!("{}", rep.rhs),
                fmt(rep.gap),
                rep.rule_count.to_string(),
            ]);
        }
    }
    Ok(report(
        worst <= tol,
        cfg.instances,
        format!("largest |lhs - rhs| = {worst:e} over alpha in {{0, 1, random}} (tol {tol:e})"),
        &[("maxGap", worst)],
        vec![table],
    ))
}

pub(super) fn envelope(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("gap")?;
    let mut table = Table::new(
        "envelope",
        &["instance", "shift", "dominance", "valueGap", "upwardLeftJump", "quadrupleGap", "passed"],
    );
    let mut ok = true;
    for idx in 0..cfg.instances {
        let seed = cfg.seed + idx as u64;
        // nonzero shifts need a driver that commutes with adding constants
        let kind = match idx % 3 {
            0 => kind_for(idx),
            1 => DriverKind::Constant,
            _ => DriverKind::Zero,
        };
        let inst = instance(seed, 3, marks_for(idx), kind, &[])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let (name, x) = match idx % 3 {
            0 => ("zero", AdaptedProcess::constant(m, 0.0)),
            1 => ("staircase", AdaptedProcess::from_fn(m, |j, _| 2.0 - 0.5 * j as f64)),
            _ => {
                let mut r = rng(seed + 3);
                let mut level = 1.0;
                let steps: Vec<f64> = (0..m.levels())
                    .map(|_| {
                        let v = level;
                        level -= r.random_range(0.0..1.0);
                        v
                    })
                    .collect();
                ("randomDecreasing", AdaptedProcess::from_fn(m, |j, _| steps[j]))
            }
        };
        let (_, rep) = shift_envelope(m, d, b, &x, tol)?;
        ok &= rep.passed;
        table.push(vec![
            inst.label,
            name.into(),
            fmt(rep.dominance_shortfall),
            fmt(rep.value_gap),
            fmt(rep.upward_left_jump),
            fmt(rep.quadruple_gap),
            rep.passed.to_string(),
        ]);
    }
    // negative control: an increasing ramp breaks the hypothesis
    let m = unit_model(3, &[])?;
    let b = random_irregular(&m, cfg.seed, &[])?;
    let ramp = AdaptedProcess::from_fn(&m, |j, _| 3.0 * j as f64);
    let refused = matches!(
        shift_envelope(&m, &BuiltinDriver::Zero, &b, &ramp, tol),
        Err(LabError::Precondition { .. })
    );
    table.push(vec!["ramp".into(), "increasing".into(), String::new(), String::new(), String::new(), String::new(), format!("refused={refused}")]);
    Ok(report(
        ok && refused,
        cfg.instances,
        format!("all admissible shifts verified: {ok}; increasing ramp refused: {refused}"),
        &[],
        vec![table],
    ))
}

pub(super) fn right_shift(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("residual")?;
    let mut table = Table::new("rightShift", &["instance", "maxResidual", "directGap", "outcome"]);
    let mut ok = true;
    for idx in 0..cfg.instances {
        let inst = instance(cfg.seed + idx as u64, 3, marks_for(idx), kind_for(idx), &[BarrierFlag::StrictLeftGap])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let q = solve_reflected(m, d, b)?;
        let (s, plus, rep) = right_shift_solution(m, d, &q, b)?;
        let check = check_quadruple(m, d, &s, &plus)?;
        let pass = rep.passed && check.passes(tol) && rep.direct_gap <= tol;
        ok &= pass;
        table.push(vec![inst.label, fmt(check.max_residual()), fmt(rep.direct_gap), pass.to_string()]);
    }
    let mut refusals = 0;
    for idx in 0..3 {
        let flags: &[BarrierFlag] = if idx == 0 { &[BarrierFlag::LeftUsc] } else { &[] };
        let inst = instance(cfg.seed + 500 + idx, 3, &[], DriverKind::Zero, flags)?;
        if inst.barrier.flags().strict_left_gap {
            continue;
        }
        let q = solve_reflected(&inst.model, &inst.driver, &inst.barrier)?;
        let out = right_shift_solution(&inst.model, &inst.driver, &q, &inst.barrier);
        let refused = matches!(out, Err(LabError::Precondition { .. }));
        refusals += usize::from(refused);
        ok &= refused;
        table.push(vec![inst.label, String::new(), String::new(), format!("refused={refused}")]);
    }
    Ok(report(
        ok && refusals > 0,
        cfg.instances,
        format!("strict-gap instances verified and {refusals} non-strict instances refused: {ok}"),
        &[("refusals", refusals as f64)],
        vec![table],
    ))
}

pub(super) fn peng_xu(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let tol = cfg.tol("residual")?;
    let count = cfg.tol("candidates")? as usize;
    let min_accepted = cfg.tol("minAccepted")? as usize;
    let mut table = Table::new("pengXu", &["instance", "accepted", "rejected", "maxResidual", "maxRightJump"]);
    let mut ok = true;
    let mut worst = 0.0f64;
    for idx in 0..cfg.instances {
        let seed = cfg.seed + idx as u64;
        let inst = instance(seed, 3, marks_for(idx), kind_for(idx), &[BarrierFlag::XiLeqXiPlus])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let q = solve_reflected(m, d, b)?;
        let cands = sample_xi_star(m, b, &q.y, count, seed);
        let rep = peng_xu_check(m, &q, b, &cands, tol)?;
        ok &= rep.passed && rep.accepted >= min_accepted;
        worst = worst.max(rep.max_residual);
        table.push(vec![
            inst.label,
            rep.accepted.to_string(),
            rep.rejected.to_string(),
            fmt(rep.max_residual),
            fmt(rep.max_right_jump),
        ]);
    }
    Ok(report(
        ok,
        cfg.instances,
        format!("largest residual {worst:e} with at least {min_accepted} admissible candidates each: {ok}"),
        &[("maxResidual", worst)],
        vec![table],
    ))
}

pub(super) fn s4(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let target = cfg.tol("target")?;
    let steps = cfg.tol("steps")? as i32;
    let mut table = Table::new("s4", &["instance", "n", "instantDistance", "s4"]);
    let mut monotone = true;
    let mut final_worst = 0.0f64;
    for idx in 0..cfg.instances {
        let seed = cfg.seed + idx as u64;
        let inst = instance(seed, 3, marks_for(idx), kind_for(idx), &[])?;
        let (m, d, b) = (&inst.model, &inst.driver, &inst.barrier);
        let base = snell_dp(m, d, b)?.values;
        let h = random_nonneg(m, seed + 11);
        let h_at = h.at.iter().flatten().fold(0.0f64, |a, &v| a.max(v));
        let mut prev = f64::INFINITY;
        for n in 0..=steps {
            let eps = 2f64.powi(-n);
            let yn = snell_dp(m, d, &shifted(b, m, &h, eps)?)?.values;
            let s4 = yn.max_abs_diff(&base)?.powi(4);
            monotone &= s4 <= prev;
            prev = s4;
            table.push(vec![inst.label.clone(), n.to_string(), fmt(eps * h_at), fmt(s4)]);
        }
        final_worst = final_worst.max(prev);
    }
    Ok(report(
        monotone && final_worst <= target,
        cfg.instances,
        format!("nonincreasing: {monotone}; worst final max|dR|^4 = {final_worst:e} (target {target:e})"),
        &[("finalS4", final_worst)],
        vec![table],
    ))
}

pub(super) fn monte_carlo(cfg: &CriterionConfig) -> Result<CriterionReport> {
    let paths = cfg.tol("paths")? as usize;
    let batches = cfg.tol("batches")? as usize;
    let sigmas = cfg.tol("sigmas")?;
    let coverage = cfg.tol("coverage")?;
    let m = unit_model(2, &[])?;
    let put = BarrierSpec::AmericanPut { strike: 100.0, spot: 100.0, up: 1.2, down: 0.8 }.build(&m, Path::new("."))?;
    let lattice = solve_reflected(&m, &BuiltinDriver::Zero, &put)?.y.at[0][0];
    let dynamics = Dynamics::Geometric { spot: 100.0, up: 1.2, down: 0.8 };
    let barrier = MarkovBarrier {
        running: Payoff::Put { strike: 100.0 },
        terminal: Payoff::Put { strike: 100.0 },
    };
    let spec = RegressionSpec { basis: Basis::Bins { count: 8 }, ridge: 0.0 };
    let mut table = Table::new("mc", &["seed", "y0", "se", "lattice", "zScore", "within", "momentsOk"]);
    let mut within = 0usize;
    for run in 0..cfg.instances {
        let seed = cfg.seed + run as u64;
        let ens = simulate_paths(&m, &dynamics, Increments::Rademacher, paths, seed)?;
        let est = solve_reflected_mc(&ens, &BuiltinDriver::Zero, &barrier, &spec, batches)?;
        let z = (est.y0 - lattice) / est.se;
        let inside = z.abs() <= sigmas;
        within += usize::from(inside);
        table.push(vec![
            seed.to_string(),
            format!("{}", est.y0),
            format!("{}", est.se),
            format!("{lattice}"),
            format!("{z:.4}"),
            inside.to_string(),
            ens.moment_check().ok.to_string(),
        ]);
    }
    let frac = within as f64 / cfg.instances as f64;
    Ok(report(
        frac >= coverage,
        cfg.instances,
        format!("{within}/{} runs within {sigmas} SE of the lattice value {lattice} (need {coverage})", cfg.instances),
        &[("coverage", frac), ("lattice", lattice)],
        vec![table],
    ))
}
