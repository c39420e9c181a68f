//! Envelope shift: replacing `xi` by `R^g[xi + X] - X` leaves the value and
//! the reflected solution unchanged.

use serde::Serialize;

use crate::barrier::LadlagBarrier;
use crate::driver::Driver;
use crate::error::{LabError, Result};
use crate::lattice::LatticeModel;
use crate::process::{AdaptedProcess, SlotProcess};
use crate::rbsde::{solve_reflected, SolutionQuadruple};
use crate::scalar::Real;

use super::snell::snell_dp;
use super::supermart::{check_supermartingale_family, SupermartReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvelopeReport {
    pub hypothesis: SupermartReport,
    /// `max(xi - xi_bar)`.
    pub dominance_shortfall: f64,
    /// `max |R^g[xi_bar] - R^g[xi]|`.
    pub value_gap: f64,
    /// `max(xi_bar_at - xi_bar_pre)`, zero when there is no upward left
    /// jump.
    pub upward_left_jump: f64,
    /// Largest difference between the two reflected solutions over `Y`,
    /// the martingale coefficients and the increments of `A`.
    pub quadruple_gap: f64,
    pub passed: bool,
}

fn quadruple_gap<T: Real>(a: &SolutionQuadruple<T>, b: &SolutionQuadruple<T>) -> Result<f64> {
    let mut gap = a.y.max_abs_diff(&b.y)?.to_f64_lossy();
    gap = gap.max(a.da.max_abs_diff(&b.da)?.to_f64_lossy());
    for (ca, cb) in a.coeffs.iter().zip(&b.coeffs) {
        let zs = ca.z.iter().zip(&cb.z);
        let ls = ca.l.iter().flatten().zip(cb.l.iter().flatten());
        for (x, y) in zs.chain(ls) {
            gap = gap.max((*x - *y).abs().to_f64_lossy());
        }
    }
    Ok(gap)
}

/// Builds `xi_bar = R^g[xi + X] - X` slotwise (with its own left limits)
/// and verifies it against `xi`. Refuses when `R^g[xi] + X` is not a
/// g-supermartingale family. `X` takes one value per node, shared by all
/// slots of the node.
pub fn shift_envelope<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    x: &AdaptedProcess<T>,
    tol: f64,
) -> Result<(LadlagBarrier<T>, EnvelopeReport)> {
    x.check(model)?;
    let xs = SlotProcess::from_adapted(model, x);
    let r = snell_dp(model, driver, barrier)?.values;
    let hypothesis =
        check_supermartingale_family(model, driver, &r.zip_with(&xs, |a, b| a + b)?, None, tol)?;
    if !hypothesis.passed {
        let w = hypothesis.worst.clone().expect("a failed check has a worst pair");
        return Err(LabError::Precondition {
            what: format!(
                "R^g[xi] + X is not a g-supermartingale at slot {} ({}, excess {:e})",
                w.slot.name(),
                w.pair,
                w.excess
            ),
            level: w.level,
            node: w.node,
        });
    }

    let lifted = LadlagBarrier::from_slots(model, barrier.slots().zip_with(&xs, |a, b| a + b)?)?;
    let r_lifted = snell_dp(model, driver, &lifted)?.values;
    let xi_bar = LadlagBarrier::from_slots(model, r_lifted.zip_with(&xs, |a, b| a - b)?)?;

    let dominance_shortfall = xi_bar.slots().max_shortfall(barrier.slots())?.to_f64_lossy();
    let value_gap = snell_dp(model, driver, &xi_bar)?
        .values
        .max_abs_diff(&r)?
        .to_f64_lossy();
    let mut upward_left_jump = 0.0f64;
    for j in 1..model.levels() {
        for (a, p) in xi_bar.at(j).iter().zip(xi_bar.pre(j)) {
            upward_left_jump = upward_left_jump.max((*a - *p).to_f64_lossy());
        }
    }
    let quadruple_gap = quadruple_gap(
        &solve_reflected(model, driver, barrier)?,
        &solve_reflected(model, driver, &xi_bar)?,
    )?;
    let passed = dominance_shortfall <= tol
        && value_gap <= tol
        && upward_left_jump <= tol
        && quadruple_gap <= tol;
    Ok((
        xi_bar,
        EnvelopeReport {
            hypothesis,
            dominance_shortfall,
            value_gap,
            upward_left_jump,
            quadruple_gap,
            passed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::random_irregular;
    use crate::driver::BuiltinDriver;
    use crate::lattice::TimeGrid;

    fn model(depth: usize, marks: &[f64]) -> LatticeModel<f64> {
        LatticeModel::build(TimeGrid::new(1.0, depth).unwrap(), marks).unwrap()
    }

    #[test]
    fn zero_shift_gives_the_value() {
        let m = model(3, &[0.4]);
        let d = BuiltinDriver::linear(-0.2, 0.3, vec![0.1], &[0.4]);
        let b = random_irregular(&m, 2, &[]).unwrap();
        let (bar, rep) = shift_envelope(&m, &d, &b, &AdaptedProcess::constant(&m, 0.0), 1e-12).unwrap();
        assert!(rep.passed, "{rep:?}");
        let r = snell_dp(&m, &d, &b).unwrap().values;
        assert!(bar.slots().max_abs_diff(&r).unwrap() < 1e-12);
    }

    #[test]
    fn decreasing_staircase() {
        let m = model(3, &[]);
        let x = AdaptedProcess::from_fn(&m, |j, _| 2.0 - 0.5 * j as f64);
        for seed in 0..3 {
            let b = random_irregular(&m, seed, &[]).unwrap();
            let (_, rep) = shift_envelope(&m, &BuiltinDriver::Zero, &b, &x, 1e-12).unwrap();
            assert!(rep.passed, "{rep:?}");
        }
    }

    #[test]
    fn increasing_ramp_refused() {
        let m = model(3, &[]);
        let x = AdaptedProcess::from_fn(&m, |j, _| 3.0 * j as f64);
        let b = random_irregular(&m, 0, &[]).unwrap();
        let err = shift_envelope(&m, &BuiltinDriver::Zero, &b, &x, 1e-12);
        assert!(matches!(err, Err(LabError::Precondition { .. })), "{err:?}");
    }
}
