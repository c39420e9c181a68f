//! Backward equations on a lattice: the implicit one-step solver, plain and
//! penalized backward sweeps, and nonlinear expectations along stopping
//! rules.

use crate::driver::{Driver, Site};
use crate::error::{LabError, Result};
use crate::lattice::{LatticeModel, MartingaleCoeffs};
use crate::process::{AdaptedProcess, Slot, SlotProcess};
use crate::scalar::Real;
use crate::stopping::rule::{Decision, StoppingRule};

/// Iteration cap for the fixed-point solve of one implicit step.
pub const MAX_PICARD_ITERATIONS: usize = 10_000;

fn picard_tolerance<T: Real>() -> T {
    T::lit(1e-13).max(T::epsilon() * T::lit(4.0))
}

/// Refuses drivers with `K * dt >= 1`, for which the implicit step is not a
/// contraction.
pub fn check_step_size<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
) -> Result<()> {
    let w = model
        .steps()
        .iter()
        .fold(T::zero(), |m, s| m.max(s.weight));
    let product = driver.lipschitz() * w;
    if product >= T::one() {
        return Err(LabError::StepSize {
            product: product.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Solves `y = base + w g(y, z, l) + p (c - y)^+` for `y`, where `penalty`
/// is `Some((p, c))`. Requires `w K < 1`.
pub fn implicit_step<T: Real, D: Driver<T> + ?Sized>(
    driver: &D,
    site: Site<T>,
    base: T,
    w: T,
    z: T,
    l: &[T],
    penalty: Option<(T, T)>,
) -> Result<T> {
    if w == T::zero() {
        return Ok(base);
    }
    if let Some((a, b)) = driver.affine_in_y(site, z, l) {
        let y = (base + w * b) / (T::one() - w * a);
        return Ok(match penalty {
            Some((p, c)) if y < c => (base + w * b + p * c) / (T::one() - w * a + p),
            _ => y,
        });
    }
    // The left-hand side minus the right is strictly increasing in y, so the
    // unpenalized root decides which branch of (c - y)^+ is active.
    let y = picard(|y| base + w * driver.eval(site, y, z, l), base)?;
    match penalty {
        Some((p, c)) if y < c => picard(
            |y| (base + w * driver.eval(site, y, z, l) + p * c) / (T::one() + p),
            y,
        ),
        _ => Ok(y),
    }
}

fn picard<T: Real>(f: impl Fn(T) -> T, start: T) -> Result<T> {
    let tol = picard_tolerance::<T>();
    let mut y = start;
    let mut delta = T::zero();
    for _ in 0..MAX_PICARD_ITERATIONS {
        let next = f(y);
        delta = (next - y).abs();
        y = next;
        if delta <= tol * T::one().max(y.abs()) {
            return Ok(y);
        }
    }
    Err(LabError::NonConvergence {
        iterations: MAX_PICARD_ITERATIONS,
        residual: delta.to_f64_lossy(),
    })
}

/// One backward step at `(level, node)` from the children's values.
/// Returns `(y, z)` and leaves the jump coefficients in `l`.
pub fn step_node<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    level: usize,
    node: usize,
    kids: &[T],
    l: &mut [T],
    penalty: Option<(T, T)>,
) -> Result<(T, T)> {
    let base = model.node_cond_exp(level, kids);
    let z = model.node_coeffs(level, kids, l);
    let step = model.step(level);
    let site = Site::new(level, node, model.time(level));
    let penalty = penalty.map(|(n, c)| (n * step.weight, c));
    let y = implicit_step(driver, site, base, step.weight, z, l, penalty)?;
    Ok((y, z))
}

/// Solution of a backward equation: `y` on every level and the martingale
/// coefficients on every non-terminal level.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution<T> {
    pub y: AdaptedProcess<T>,
    pub coeffs: Vec<MartingaleCoeffs<T>>,
}

fn sweep<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    terminal: &[T],
    penalty: Option<(T, &AdaptedProcess<T>)>,
) -> Result<BsdeSolution<T>> {
    check_step_size(model, driver)?;
    let last = model.depth();
    if terminal.len() != model.count(last) {
        return Err(LabError::MissingValue {
            level: last,
            node: terminal.len().min(model.count(last)),
        });
    }
    if let Some((_, c)) = penalty {
        c.check(model)?;
    }
    let marks = model.marks();
    let mut y = vec![Vec::new(); model.levels()];
    y[last] = terminal.to_vec();
    let mut coeffs = vec![MartingaleCoeffs::zeros(0, marks); last];
    let mut l = vec![T::zero(); marks];
    for j in (0..last).rev() {
        let n = model.count(j);
        let b = model.branching(j);
        let mut yj = Vec::with_capacity(n);
        let mut mc = MartingaleCoeffs::zeros(n, marks);
        mc.degenerate = !model.step(j).is_stochastic();
        for (i, kids) in y[j + 1].chunks_exact(b).enumerate() {
            let pen = penalty.map(|(p, c)| (p, c.values[j][i]));
            let (v, z) = step_node(model, driver, j, i, kids, &mut l, pen)?;
            yj.push(v);
            mc.z[i] = z;
            for (m, &lm) in l.iter().enumerate() {
                mc.l[m][i] = lm;
            }
        }
        y[j] = yj;
        coeffs[j] = mc;
    }
    Ok(BsdeSolution {
        y: AdaptedProcess { values: y },
        coeffs,
    })
}

/// Backward sweep for `Y_T = terminal`.
pub fn solve_bsde<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    terminal: &[T],
) -> Result<BsdeSolution<T>> {
    sweep(model, driver, terminal, None)
}

/// Backward sweep with the extra generator term `n (c_k - Y_k)^+` pushing
/// `Y` above the constraint `c`.
pub fn solve_penalized_bsde<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    terminal: &[T],
    constraint: &AdaptedProcess<T>,
    n: T,
) -> Result<BsdeSolution<T>> {
    sweep(model, driver, terminal, Some((n, constraint)))
}

/// Nonlinear expectation of `reward` along `rule`, seen from the rule's
/// start slot. Entry `i` is `Some` for every root node `i` of the start level.
pub fn g_expectation<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    rule: &StoppingRule,
    reward: &SlotProcess<T>,
) -> Result<Vec<Option<T>>> {
    check_step_size(model, driver)?;
    reward.check(model)?;
    let table = rule.resolve(model)?;
    let start = rule.start_level;
    let last = model.depth();
    let mut l = vec![T::zero(); model.marks()];
    let mut next: Vec<Option<T>> = Vec::new();
    for j in (start..=last).rev() {
        let mut cur = vec![None; model.count(j)];
        for (i, slot) in cur.iter_mut().enumerate() {
            let Some(d) = table.get(j, i) else { continue };
            *slot = Some(match d {
                Decision::Stop(s) => reward
                    .get(j, s, i)
                    .ok_or(LabError::MissingValue { level: j, node: i })?,
                Decision::Continue => {
                    let kids: Vec<T> = model
                        .children(j, i)
                        .map(|c| next[c].ok_or(LabError::MissingValue { level: j + 1, node: c }))
                        .collect::<Result<_>>()?;
                    step_node(model, driver, j, i, &kids, &mut l, None)?.0
                }
            });
        }
        next = cur;
    }
    Ok(next)
}

/// Nonlinear expectation at level 0 of a deterministic stop.
pub fn g_expectation_at<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    stop_level: usize,
    stop_slot: Slot,
    reward: &SlotProcess<T>,
) -> Result<T> {
    let rule = StoppingRule::deterministic(model, 0, Slot::At, stop_level, stop_slot);
    let v = g_expectation(model, driver, &rule, reward)?;
    v[0].ok_or(LabError::MissingValue { level: 0, node: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{BuiltinDriver, Dependence, FnDriver};
    use crate::lattice::TimeGrid;
    use approx::assert_abs_diff_eq;

    fn model(n: usize, marks: &[f64]) -> LatticeModel<f64> {
        LatticeModel::build(TimeGrid::new(1.0, n).unwrap(), marks).unwrap()
    }

    #[test]
    fn zero_driver_is_conditional_expectation() {
        let m = model(3, &[0.2]);
        let terminal: Vec<f64> = (0..m.count(3)).map(|i| (i as f64).sin()).collect();
        let sol = solve_bsde(&m, &BuiltinDriver::Zero, &terminal).unwrap();
        let probs = m.path_probs(3);
        let mean: f64 = terminal.iter().zip(probs).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(sol.y.values[0][0], mean, epsilon = 1e-14);
    }

    #[test]
    fn discount_driver_closed_form() {
        // Y_k = Y_{k+1} / (1 + r dt) for constant terminal
        let m = model(4, &[]);
        let d = BuiltinDriver::Discount(0.1);
        let sol = solve_bsde(&m, &d, &vec![1.0; m.count(4)]).unwrap();
        assert_abs_diff_eq!(sol.y.values[0][0], (1.0f64 / 1.025).powi(4), epsilon = 1e-14);
    }

    #[test]
    fn picard_matches_closed_form() {
        let m = model(3, &[0.5]);
        let linear = BuiltinDriver::linear(0.3, -0.2, vec![0.4], &[0.5]);
        let k = linear.lipschitz();
        let lin2 = linear.clone();
        let opaque = FnDriver::new(k, Dependence { y: true, z: true, l: true }, move |s, y, z, l: &[f64]| {
            lin2.eval(s, y, z, l)
        });
        let terminal: Vec<f64> = (0..m.count(3)).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = solve_bsde(&m, &linear, &terminal).unwrap();
        let b = solve_bsde(&m, &opaque, &terminal).unwrap();
        for j in 0..=3 {
            for (x, y) in a.y.values[j].iter().zip(&b.y.values[j]) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn step_size_violation() {
        let m = model(1, &[]);
        let d = BuiltinDriver::linear(2.0, 0.0, vec![], &[]);
        assert!(matches!(
            solve_bsde(&m, &d, &[0.0, 0.0]),
            Err(LabError::StepSize { .. })
        ));
    }

    #[test]
    fn penalized_step_branches() {
        let d = BuiltinDriver::<f64>::Zero;
        let site = Site::new(0, 0, 0.0);
        // y = 1 + 10 (2 - y)^+  ->  y = 21 / 11
        let y = implicit_step(&d, site, 1.0, 0.5, 0.0, &[], Some((10.0, 2.0))).unwrap();
        assert_abs_diff_eq!(y, 21.0 / 11.0, epsilon = 1e-15);
        let y = implicit_step(&d, site, 3.0, 0.5, 0.0, &[], Some((10.0, 2.0))).unwrap();
        assert_eq!(y, 3.0);
    }

    #[test]
    fn g_expectation_of_terminal_rule_equals_bsde() {
        let m = model(3, &[0.3]);
        let d = BuiltinDriver::linear(0.2, 0.1, vec![0.1], &[0.3]);
        let reward = SlotProcess::from_adapted(
            &m,
            &AdaptedProcess::from_fn(&m, |j, i| (j * 7 + i) as f64 % 3.0),
        );
        let sol = solve_bsde(&m, &d, &reward.at[3]).unwrap();
        let v = g_expectation_at(&m, &d, 3, Slot::At, &reward).unwrap();
        assert_abs_diff_eq!(v, sol.y.values[0][0], epsilon = 1e-14);
        let now = g_expectation_at(&m, &d, 0, Slot::At, &reward).unwrap();
        assert_eq!(now, reward.at[0][0]);
    }
}
