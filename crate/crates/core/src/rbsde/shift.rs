//! Right-limit shift: under a strict left gap, `(Y_post, Z, l, A_post)`
//! solves the reflected equation whose barrier is the open-interval layer.

use serde::Serialize;

use crate::barrier::{BarrierFlag, LadlagBarrier};
use crate::driver::Driver;
use crate::error::Result;
use crate::lattice::LatticeModel;
use crate::process::SlotProcess;
use crate::scalar::Real;

use super::{check_quadruple, solve_reflected, QuadrupleCheck, SolutionQuadruple};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub check: QuadrupleCheck,
    /// Largest slot gap to a direct solve against the shifted barrier.
    pub direct_gap: f64,
    pub passed: bool,
}

/// Barrier `xi^+`: instant and open layers both equal to `xi_open`, the
/// terminal value unchanged, left limits kept from `xi`.
pub fn shifted_barrier<T: Real>(
    model: &LatticeModel<T>,
    barrier: &LadlagBarrier<T>,
) -> Result<LadlagBarrier<T>> {
    let last = model.depth();
    let mut v: SlotProcess<T> = barrier.slots().clone();
    for j in 0..last {
        v.at[j].clone_from(&v.post[j]);
    }
    LadlagBarrier::from_slots(model, v)
}

/// Builds the shifted quadruple from `q` (the solution for `barrier`) and
/// verifies it against `xi^+`. Refuses unless `xi_at < xi_pre` everywhere.
pub fn right_shift_solution<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    q: &SolutionQuadruple<T>,
    barrier: &LadlagBarrier<T>,
) -> Result<(SolutionQuadruple<T>, LadlagBarrier<T>, ShiftReport)> {
    barrier.require(BarrierFlag::StrictLeftGap)?;
    let last = model.depth();
    let mut shifted = q.clone();
    for j in 0..=last {
        if j < last {
            shifted.y.at[j].clone_from(&q.y.post[j]);
            shifted.da.at[j].iter_mut().for_each(|v| *v = T::zero());
        }
        if j > 0 {
            // the right jump at t_j moves into the left jump
            for i in 0..model.count(j) {
                let right = if j < last { q.da.at[j][i] } else { T::zero() };
                shifted.da.pre[j][i] = q.da.pre[j][i] + right;
            }
        }
    }
    let plus = shifted_barrier(model, barrier)?;
    let check = check_quadruple(model, driver, &shifted, &plus)?;
    let direct = solve_reflected(model, driver, &plus)?;
    let direct_gap = direct
        .y
        .max_abs_diff(&shifted.y)?
        .max(direct.da.max_abs_diff(&shifted.da)?)
        .to_f64_lossy();
    let passed = check.passes(1e-12) && direct_gap <= 1e-12;
    Ok((
        shifted,
        plus,
        ShiftReport {
            check,
            direct_gap,
            passed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::random_irregular;
    use crate::driver::BuiltinDriver;
    use crate::error::LabError;
    use crate::lattice::TimeGrid;

    #[test]
    fn one_step_strict_gap() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 1).unwrap(), &[]).unwrap();
        let mut v = SlotProcess::zeros(&m);
        v.pre[1] = vec![2.0, 2.0];
        v.at[0][0] = 1.0;
        v.post[0][0] = 0.5;
        let b = LadlagBarrier::from_slots(&m, v).unwrap();
        let q = solve_reflected(&m, &BuiltinDriver::Zero, &b).unwrap();
        assert_eq!(q.da.pre[1], vec![2.0, 2.0]);
        let (s, _, rep) = right_shift_solution(&m, &BuiltinDriver::Zero, &q, &b).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(s.y.at[0][0], 2.0);
        assert_eq!(s.da.at[0][0], 0.0);
    }

    #[test]
    fn random_strict_gap_instances() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 3).unwrap(), &[0.2]).unwrap();
        let d = BuiltinDriver::linear(0.2, 0.1, vec![0.1], &[0.2]);
        for seed in 0..5 {
            let b = random_irregular(&m, seed, &[BarrierFlag::StrictLeftGap]).unwrap();
            let q = solve_reflected(&m, &d, &b).unwrap();
            let (_, _, rep) = right_shift_solution(&m, &d, &q, &b).unwrap();
            assert!(rep.passed, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn cadlag_barrier_is_refused() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 2).unwrap(), &[]).unwrap();
        let b = LadlagBarrier::constant(&m, 1.0);
        let q = solve_reflected(&m, &BuiltinDriver::Zero, &b).unwrap();
        let err = right_shift_solution(&m, &BuiltinDriver::Zero, &q, &b).unwrap_err();
        assert!(matches!(err, LabError::Precondition { level: 1, node: 0, .. }));
    }
}
