//! Penalization route: `Y^n` solves the backward equation with the extra
//! generator `n (c - y)^+`, and `xi v Y^n` increases to the reflected
//! solution.

use crate::barrier::{BarrierFlag, LadlagBarrier};
use crate::bsde::solve_penalized_bsde;
use crate::driver::Driver;
use crate::error::{LabError, Result};
use crate::lattice::LatticeModel;
use crate::process::{AdaptedProcess, SlotProcess};
use crate::scalar::Real;

use super::solve_reflected;

/// One penalty weight of the schedule.
#[derive(Debug, Clone)]
pub struct PenaltyStep<T> {
    pub n: T,
    /// Penalized solution on every level.
    pub y: AdaptedProcess<T>,
    /// `xi v Y^n` slotwise.
    pub y_bar: SlotProcess<T>,
}

#[derive(Debug, Clone)]
pub struct PenaltyRun<T> {
    /// Reflected value used as the constraint's source (`R^g[xi]`).
    pub reference: SlotProcess<T>,
    pub steps: Vec<PenaltyStep<T>>,
}

fn lift<T: Real>(
    model: &LatticeModel<T>,
    barrier: &LadlagBarrier<T>,
    y: &AdaptedProcess<T>,
) -> SlotProcess<T> {
    let last = model.depth();
    let mut out = SlotProcess::zeros(model);
    for j in 0..=last {
        for i in 0..model.count(j) {
            let v = y.values[j][i];
            out.at[j][i] = if j < last { barrier.at(j)[i].max(v) } else { v };
            if j < last {
                out.post[j][i] = barrier.open(j)[i].max(v);
            }
            if j > 0 {
                out.pre[j][i] = barrier.pre(j)[i].max(out.at[j][i]);
            }
        }
    }
    out
}

fn run<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    penalties: &[T],
    constraint: AdaptedProcess<T>,
    reference: SlotProcess<T>,
) -> Result<PenaltyRun<T>> {
    if let Some(bad) = penalties.iter().find(|&&n| !(n >= T::zero())) {
        return Err(LabError::Config(format!("penalty weight {bad} must be nonnegative")));
    }
    let steps = penalties
        .iter()
        .map(|&n| {
            let sol = solve_penalized_bsde(model, driver, barrier.terminal(), &constraint, n)?;
            let y_bar = lift(model, barrier, &sol.y);
            Ok(PenaltyStep { n, y: sol.y, y_bar })
        })
        .collect::<Result<_>>()?;
    Ok(PenaltyRun { reference, steps })
}

/// Penalizes against the right layer of `R^g[xi]`, computed by the direct
/// solver. Requires a right-USC barrier.
pub fn solve_via_penalization<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    penalties: &[T],
) -> Result<PenaltyRun<T>> {
    barrier.require(BarrierFlag::RightUsc)?;
    let q = solve_reflected(model, driver, barrier)?;
    let last = model.depth();
    let constraint = AdaptedProcess {
        values: (0..=last)
            .map(|j| {
                if j < last {
                    q.y.post[j].clone()
                } else {
                    barrier.terminal().to_vec()
                }
            })
            .collect(),
    };
    run(model, driver, barrier, penalties, constraint, q.y)
}

/// Penalizes directly against the open-interval barrier. Provided for
/// comparison only; the limit need not be the reflected solution.
pub fn solve_via_open_penalization<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    penalties: &[T],
) -> Result<PenaltyRun<T>> {
    let q = solve_reflected(model, driver, barrier)?;
    let last = model.depth();
    let constraint = AdaptedProcess {
        values: (0..=last)
            .map(|j| {
                if j < last {
                    barrier.open(j).to_vec()
                } else {
                    barrier.terminal().to_vec()
                }
            })
            .collect(),
    };
    run(model, driver, barrier, penalties, constraint, q.y)
}

/// Doubling schedule `1, 2, 4, ..., 2^k`, prefixed by 0.
pub fn doubling_schedule<T: Real>(k: u32) -> Vec<T> {
    std::iter::once(T::zero())
        .chain((0..=k).map(|e| T::lit(2f64.powi(e as i32))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::random_irregular;
    use crate::bsde::solve_bsde;
    use crate::driver::BuiltinDriver;
    use crate::lattice::TimeGrid;

    #[test]
    fn pinned_one_step() {
        // E = 0, g = 0, c = 1: y = n dt / (1 + n dt)
        let m = LatticeModel::<f64>::build(TimeGrid::new(0.5, 1).unwrap(), &[]).unwrap();
        let c = AdaptedProcess { values: vec![vec![1.0], vec![0.0, 0.0]] };
        for n in [0.0, 1.0, 8.0, 1024.0] {
            let s = solve_penalized_bsde(&m, &BuiltinDriver::Zero, &[0.0, 0.0], &c, n).unwrap();
            let want = n * 0.5 / (1.0 + n * 0.5);
            assert!((s.y.values[0][0] - want).abs() < 1e-15);
        }
        let b = LadlagBarrier::constant(&m, 1.0);
        let r = solve_via_penalization(&m, &BuiltinDriver::Zero, &b, &[1.0, 2.0]).unwrap();
        for s in &r.steps {
            assert_eq!(s.y_bar.at[0][0], 1.0);
        }
    }

    #[test]
    fn never_binding_constraint() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 3).unwrap(), &[0.2]).unwrap();
        let d = BuiltinDriver::linear(0.1, 0.2, vec![0.3], &[0.2]);
        let t: Vec<f64> = (0..m.count(3)).map(|i| (i as f64).sqrt()).collect();
        let c = AdaptedProcess::constant(&m, -1e9);
        let plain = solve_bsde(&m, &d, &t).unwrap();
        for n in [0.0, 5.0, 1e6] {
            let s = solve_penalized_bsde(&m, &d, &t, &c, n).unwrap();
            assert_eq!(s.y, plain.y);
        }
    }

    #[test]
    fn increases_to_reflected_solution() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 3).unwrap(), &[0.3]).unwrap();
        let d = BuiltinDriver::linear(0.3, 0.1, vec![0.2], &[0.3]);
        let b = random_irregular(&m, 3, &[BarrierFlag::RightUsc]).unwrap();
        let r = solve_via_penalization(&m, &d, &b, &doubling_schedule(12)).unwrap();
        let mut prev_gap = f64::INFINITY;
        for w in r.steps.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            assert!(hi.y_bar.max_shortfall(&lo.y_bar).unwrap() == 0.0);
            let gap = r.reference.max_abs_diff(&hi.y_bar).unwrap();
            assert!(gap <= prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-2);
        // the limit never overshoots
        let last = &r.steps.last().unwrap().y_bar;
        assert!(r.reference.max_shortfall(last).unwrap() <= 1e-12);
    }
}
