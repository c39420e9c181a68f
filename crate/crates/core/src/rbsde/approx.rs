//! Monotone approximation through cadlag barriers on refined lattices.

use crate::barrier::{cadlag_approx_sequence, restrict_to_base, LadlagBarrier};
use crate::driver::Driver;
use crate::error::Result;
use crate::lattice::LatticeModel;
use crate::process::SlotProcess;
use crate::scalar::Real;

use super::{solve_reflected, SolutionQuadruple};

/// One member of the approximating sequence.
#[derive(Debug, Clone)]
pub struct ApproxRun<T> {
    pub n: u32,
    pub refined: LatticeModel<T>,
    pub quadruple: SolutionQuadruple<T>,
    /// `Y^n` restricted to the base grid's slots.
    pub restricted: SlotProcess<T>,
}

/// Solves the cadlag problems `xi^1, ..., xi^{n_max}` on their refined
/// lattices. Requires a right-USC barrier.
pub fn solve_via_monotone_approx<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    n_max: u32,
) -> Result<Vec<ApproxRun<T>>> {
    (1..=n_max)
        .map(|n| {
            let (refined, xi_n) = cadlag_approx_sequence(model, barrier, n)?;
            let quadruple = solve_reflected(&refined, driver, &xi_n)?;
            let restricted = restrict_to_base(model, &quadruple.y)?;
            Ok(ApproxRun {
                n,
                refined,
                quadruple,
                restricted,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{random_irregular, BarrierFlag};
    use crate::driver::BuiltinDriver;
    use crate::lattice::TimeGrid;

    #[test]
    fn spike_value_is_kept_for_every_n() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 1).unwrap(), &[]).unwrap();
        let b = LadlagBarrier::new(&m, vec![vec![5.0], vec![0.0, 0.0]], vec![vec![-1e9]]).unwrap();
        let runs = solve_via_monotone_approx(&m, &BuiltinDriver::Zero, &b, 5).unwrap();
        for r in &runs {
            assert_eq!(r.restricted.at[0][0], 5.0);
            assert_eq!(r.restricted.post[0][0], 0.0);
            // micro slot right after t_0 still holds the spike
            assert_eq!(r.quadruple.y.post[0][0], 5.0);
        }
    }

    #[test]
    fn agrees_with_direct_solver_at_base_slots() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 3).unwrap(), &[0.5]).unwrap();
        let d = BuiltinDriver::linear(0.4, 0.3, vec![-0.2], &[0.5]);
        let b = random_irregular(&m, 7, &[BarrierFlag::RightUsc]).unwrap();
        let direct = solve_reflected(&m, &d, &b).unwrap();
        for r in solve_via_monotone_approx(&m, &d, &b, 4).unwrap() {
            assert!(r.restricted.max_abs_diff(&direct.y).unwrap() < 1e-12);
        }
    }
}
