//! Strong g-supermartingale checks on value families.

use serde::Serialize;

use crate::barrier::LadlagBarrier;
use crate::bsde::g_expectation;
use crate::driver::Driver;
use crate::error::Result;
use crate::lattice::LatticeModel;
use crate::process::{Slot, SlotProcess};
use crate::scalar::Real;

use super::rule::StoppingRule;
use super::snell::snell_dp;

/// Where a pair check failed: the start position, the rule used and the
/// worst node at the start level.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PairFailure {
    pub level: usize,
    pub slot: Slot,
    pub node: usize,
    /// `"to <level>/<slot>"` for deterministic pairs, `"hit <label>"` for
    /// hitting rules.
    pub pair: String,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SupermartReport {
    pub pairs_checked: usize,
    pub max_violation: f64,
    pub worst: Option<PairFailure>,
    /// Whether `U >= xi` (within tolerance); only present with a barrier.
    pub dominates: Option<bool>,
    /// `max(R^g[xi] - U)`; checked when `U` dominates the barrier.
    pub dp_excess: Option<f64>,
    pub passed: bool,
}

fn positions(levels: usize) -> Vec<(usize, Slot)> {
    let mut out = Vec::new();
    for j in 0..levels {
        for s in Slot::ALL {
            let ok = match s {
                Slot::Pre => j > 0,
                Slot::At => true,
                Slot::Post => j + 1 < levels,
            };
            if ok {
                out.push((j, s));
            }
        }
    }
    out
}

/// Checks `E^g_{θ,θ'}(U(θ')) <= U(θ) + tol` for all deterministic
/// position pairs and, given a barrier, for rules hitting where `U`
/// meets it or where the barrier crosses its quartiles. With a barrier
/// the report also covers minimality against the dynamic program.
pub fn check_supermartingale_family<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    u: &SlotProcess<T>,
    barrier: Option<&LadlagBarrier<T>>,
    tol: f64,
) -> Result<SupermartReport> {
    u.check(model)?;
    let pos = positions(model.levels());
    let mut report = SupermartReport {
        pairs_checked: 0,
        max_violation: 0.0,
        worst: None,
        dominates: None,
        dp_excess: None,
        passed: true,
    };
    let run = |report: &mut SupermartReport,
                   level: usize,
                   slot: Slot,
                   rule: &StoppingRule,
                   pair: String|
     -> Result<()> {
        let vals = g_expectation(model, driver, rule, u)?;
        report.pairs_checked += 1;
        for (i, v) in vals.iter().enumerate() {
            let Some(v) = v else { continue };
            let excess = (*v - u.layer(slot)[level][i]).to_f64_lossy();
            if excess > report.max_violation {
                report.max_violation = excess;
                report.worst = Some(PairFailure {
                    level,
                    slot,
                    node: i,
                    pair: pair.clone(),
                    excess,
                });
            }
        }
        Ok(())
    };

    for (a, &(j, s)) in pos.iter().enumerate() {
        for &(j2, s2) in &pos[a + 1..] {
            let rule = StoppingRule::deterministic(model, j, s, j2, s2);
            run(&mut report, j, s, &rule, format!("to {j2}/{}", s2.name()))?;
        }
    }

    if let Some(b) = barrier {
        let mut xs: Vec<f64> = b.slots().iter().map(|(_, _, _, v)| v.to_f64_lossy()).collect();
        xs.sort_by(f64::total_cmp);
        let quartiles: Vec<f64> = [1, 2, 3].iter().map(|q| xs[q * (xs.len() - 1) / 4]).collect();
        for &(j, s) in &pos {
            let meet = StoppingRule::first_hitting(model, j, s, |l, i, sl| {
                match (u.get(l, sl, i), b.get(l, sl, i)) {
                    (Some(x), Some(y)) => (x - y).abs().to_f64_lossy() <= tol,
                    _ => false,
                }
            });
            run(&mut report, j, s, &meet, "hit U=xi".into())?;
            for &q in &quartiles {
                let rule = StoppingRule::first_hitting(model, j, s, |l, i, sl| {
                    b.get(l, sl, i).is_some_and(|y| y.to_f64_lossy() >= q)
                });
                run(&mut report, j, s, &rule, format!("hit xi>={q}"))?;
            }
        }
        let shortfall = u.max_shortfall(b.slots())?.to_f64_lossy();
        let dominates = shortfall <= tol;
        report.dominates = Some(dominates);
        if dominates {
            let dp = snell_dp(model, driver, b)?.values;
            let excess = dp
                .iter()
                .map(|(j, s, i, v)| (v - u.layer(s)[j][i]).to_f64_lossy())
                .fold(f64::NEG_INFINITY, f64::max);
            report.dp_excess = Some(excess);
        }
    }
    report.passed = report.max_violation <= tol && report.dp_excess.is_none_or(|e| e <= tol);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{random_irregular, BarrierSpec};
    use crate::bsde::solve_bsde;
    use crate::driver::BuiltinDriver;
    use crate::lattice::TimeGrid;
    use std::path::Path;

    fn model(depth: usize, marks: &[f64]) -> LatticeModel<f64> {
        LatticeModel::build(TimeGrid::new(1.0, depth).unwrap(), marks).unwrap()
    }

    #[test]
    fn snell_envelope_passes() {
        let m = model(3, &[0.3]);
        let d = BuiltinDriver::linear(-0.3, 0.4, vec![0.2], &[0.3]);
        for seed in 0..4 {
            let b = random_irregular(&m, seed, &[]).unwrap();
            let u = snell_dp(&m, &d, &b).unwrap().values;
            let rep = check_supermartingale_family(&m, &d, &u, Some(&b), 1e-12).unwrap();
            assert!(rep.passed, "{rep:?}");
            assert_eq!(rep.dominates, Some(true));
        }
    }

    #[test]
    fn martingale_passes_with_equality() {
        let m = model(3, &[]);
        let b = BarrierSpec::AmericanPut { strike: 100.0, spot: 100.0, up: 1.2, down: 0.8 }
            .build(&m, Path::new("."))
            .unwrap();
        let y = solve_bsde(&m, &BuiltinDriver::Zero, b.terminal()).unwrap().y;
        let u = SlotProcess::from_adapted(&m, &y);
        let rep = check_supermartingale_family(&m, &BuiltinDriver::Zero, &u, None, 1e-12).unwrap();
        assert!(rep.passed);
        assert!(rep.max_violation.abs() < 1e-12);
    }

    #[test]
    fn barrier_with_later_spike_fails() {
        let m = model(2, &[]);
        let mut slots = LadlagBarrier::constant(&m, 0.0).slots().clone();
        slots.at[2] = vec![10.0; m.count(2)];
        let b = LadlagBarrier::from_slots(&m, slots.clone()).unwrap();
        let rep = check_supermartingale_family(&m, &BuiltinDriver::Zero, &slots, Some(&b), 1e-12)
            .unwrap();
        assert!(!rep.passed);
        let w = rep.worst.unwrap();
        assert_eq!(w.level, 0);
        assert!(w.excess >= 10.0 - 1e-12);
    }

    #[test]
    fn larger_envelope_is_not_minimal_violation() {
        // R^g of a larger barrier dominates and stays above R^g[xi]
        let m = model(3, &[]);
        let d = BuiltinDriver::linear(0.1, 0.3, vec![], &[]);
        let b = random_irregular(&m, 3, &[]).unwrap();
        let big = b.map(|v| v + 0.5);
        let u = snell_dp(&m, &d, &big).unwrap().values;
        let rep = check_supermartingale_family(&m, &d, &u, Some(&b), 1e-12).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.dp_excess.unwrap() < 0.0);
    }
}
