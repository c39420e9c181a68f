//! Bellman principle with a nonnegative scaling factor known at an
//! intermediate level.

use serde::Serialize;

use crate::barrier::LadlagBarrier;
use crate::bsde::g_expectation;
use crate::driver::{Dependence, Driver, Site};
use crate::error::{LabError, Result};
use crate::lattice::LatticeModel;
use crate::process::{Slot, SlotProcess};
use crate::scalar::Real;

use super::rule::{enumerate_stopping_rules, StoppingRule};
use super::snell::{brute_force_over, snell_dp};

/// `alpha g(y / alpha, z / alpha, l / alpha)`, zero where `alpha = 0`.
/// `alpha` is given per node of every level.
pub struct ScaledDriver<'a, T, D: ?Sized> {
    pub inner: &'a D,
    pub alpha: Vec<Vec<T>>,
}

impl<T: Real, D: Driver<T> + ?Sized> ScaledDriver<'_, T, D> {
    fn alpha(&self, site: Site<T>) -> T {
        self.alpha[site.level][site.node]
    }
}

impl<T: Real, D: Driver<T> + ?Sized> Driver<T> for ScaledDriver<'_, T, D> {
    fn eval(&self, site: Site<T>, y: T, z: T, l: &[T]) -> T {
        let a = self.alpha(site);
        if a == T::zero() {
            return T::zero();
        }
        let ls: Vec<T> = l.iter().map(|&v| v / a).collect();
        a * self.inner.eval(site, y / a, z / a, &ls)
    }

    fn lipschitz(&self) -> T {
        self.inner.lipschitz()
    }

    fn dependence(&self) -> Dependence {
        self.inner.dependence()
    }

    fn affine_in_y(&self, site: Site<T>, z: T, l: &[T]) -> Option<(T, T)> {
        let a = self.alpha(site);
        if a == T::zero() {
            return Some((T::zero(), T::zero()));
        }
        let ls: Vec<T> = l.iter().map(|&v| v / a).collect();
        self.inner
            .affine_in_y(site, z / a, &ls)
            .map(|(slope, icpt)| (slope, a * icpt))
    }
}

/// Extends `alpha` given at the nodes of `theta` to the whole tree:
/// inherited below `theta`, conditional expectations above it.
pub fn extend_alpha<T: Real>(
    model: &LatticeModel<T>,
    theta: usize,
    alpha: &[T],
) -> Result<Vec<Vec<T>>> {
    if theta > model.depth() {
        return Err(LabError::Shape(format!("theta level {theta} beyond depth")));
    }
    if alpha.len() != model.count(theta) {
        return Err(LabError::Shape(format!(
            "alpha has {} values, level {theta} has {} nodes",
            alpha.len(),
            model.count(theta)
        )));
    }
    if let Some(i) = alpha.iter().position(|a| !(a.is_finite() && *a >= T::zero())) {
        return Err(LabError::Precondition {
            what: "alpha must be finite and nonnegative".into(),
            level: theta,
            node: i,
        });
    }
    let mut out = vec![Vec::new(); model.levels()];
    out[theta] = alpha.to_vec();
    for j in theta + 1..model.levels() {
        out[j] = (0..model.count(j)).map(|i| alpha[model.ancestor(j, i, theta)]).collect();
    }
    for j in (0..theta).rev() {
        out[j] = model.cond_exp(j, &out[j + 1])?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BellmanReport {
    pub theta: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub rule_count: usize,
    /// Stops of the maximizing rule on the right side.
    pub argmax: StoppingRule,
    pub passed: bool,
}

/// Compares, at the root, `E^{alpha g}_{0,theta}(alpha R^g[xi](theta))`
/// with the best `E^{alpha g}_{0,tau}(alpha xi_tau)` over every rule that
/// does not stop before `theta`.
pub fn bellman_scaling_check<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    theta: usize,
    alpha: &[T],
    budget: u128,
    tol: f64,
) -> Result<BellmanReport> {
    let a = extend_alpha(model, theta, alpha)?;
    let scaled = ScaledDriver {
        inner: driver,
        alpha: a.clone(),
    };
    let scale = |p: &SlotProcess<T>| {
        let mut out = p.clone();
        for s in Slot::ALL {
            for (j, layer) in out.layer_mut(s).iter_mut().enumerate() {
                for (i, v) in layer.iter_mut().enumerate() {
                    *v = *v * a[j][i];
                }
            }
        }
        out
    };
    let r = snell_dp(model, driver, barrier)?.values;
    let left_rule = StoppingRule::deterministic(model, 0, Slot::At, theta, Slot::At);
    let lhs = g_expectation(model, &scaled, &left_rule, &scale(&r))?[0]
        .ok_or(LabError::MissingValue { level: 0, node: 0 })?;

    let rules = enumerate_stopping_rules(model, 0, 0, Slot::At, theta, budget)?;
    let rule_count = rules.len();
    let (rhs, argmax) = brute_force_over(model, &scaled, &scale(barrier.slots()), 0, rules)?;
    let (lhs, rhs) = (lhs.to_f64_lossy(), rhs.to_f64_lossy());
    let gap = (lhs - rhs).abs();
    Ok(BellmanReport {
        theta,
        lhs,
        rhs,
        gap,
        rule_count,
        argmax,
        passed: gap <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::random_irregular;
    use crate::driver::{BuiltinDriver, FnDriver};
    use crate::lattice::TimeGrid;

    fn model(depth: usize) -> LatticeModel<f64> {
        LatticeModel::build(TimeGrid::new(1.0, depth).unwrap(), &[]).unwrap()
    }

    #[test]
    fn alpha_one_is_dp_consistency() {
        let m = model(3);
        let d = BuiltinDriver::linear(-0.2, 0.3, vec![], &[]);
        let b = random_irregular(&m, 4, &[]).unwrap();
        let rep = bellman_scaling_check(&m, &d, &b, 1, &[1.0, 1.0], 1_000_000, 1e-10).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn alpha_zero_gives_zero() {
        let m = model(2);
        let d = BuiltinDriver::Constant(0.7);
        let b = random_irregular(&m, 1, &[]).unwrap();
        let rep = bellman_scaling_check(&m, &d, &b, 1, &[0.0, 0.0], 1_000_000, 1e-10).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.rhs, 0.0);
    }

    #[test]
    fn indicator_of_up_node() {
        let m = model(2);
        let d = FnDriver::new(
            0.5,
            Dependence { y: true, z: true, l: false },
            |_: Site<f64>, y: f64, z: f64, _: &[f64]| -0.5 * y + 0.3 * z.abs() + 0.4,
        );
        for seed in 0..3 {
            let b = random_irregular(&m, seed, &[]).unwrap();
            let rep = bellman_scaling_check(&m, &d, &b, 1, &[2.0, 0.0], 1_000_000, 1e-10).unwrap();
            assert!(rep.passed, "{rep:?}");
        }
    }

    #[test]
    fn negative_alpha_refused() {
        let m = model(2);
        let b = random_irregular(&m, 1, &[]).unwrap();
        let err = bellman_scaling_check(&m, &BuiltinDriver::Zero, &b, 1, &[1.0, -1.0], 100, 1e-10);
        assert!(matches!(err, Err(LabError::Precondition { node: 1, .. })));
    }
}
