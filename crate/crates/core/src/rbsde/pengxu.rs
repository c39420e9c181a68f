//! Generalized Skorokhod condition: `A` charges only where `Y` meets every
//! cadlag `xi*` squeezed between the barrier and `Y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barrier::{BarrierFlag, LadlagBarrier};
use crate::error::Result;
use crate::lattice::LatticeModel;
use crate::process::{Slot, SlotProcess};
use crate::scalar::{pairwise_sum, Real};

use super::SolutionQuadruple;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PengXuReport {
    /// Largest right-jump increment (zero when `Y` is right-continuous).
    pub max_right_jump: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// Largest `|sum E[(Y - xi*) dA]|` over accepted candidates.
    pub max_residual: f64,
    pub passed: bool,
}

/// Is `xi*` cadlag (`at == post`) and squeezed as `xi <= xi* <= Y` in all
/// three layers?
pub fn is_admissible<T: Real>(
    barrier: &LadlagBarrier<T>,
    y: &SlotProcess<T>,
    xi_star: &SlotProcess<T>,
) -> bool {
    let last = y.levels() - 1;
    let cadlag = (0..last).all(|j| xi_star.at[j] == xi_star.post[j]);
    cadlag
        && xi_star.iter().all(|(j, s, i, v)| {
            let lo = barrier.get(j, s, i);
            let hi = y.get(j, s, i);
            matches!((lo, hi), (Some(lo), Some(hi)) if lo <= v && v <= hi)
        })
}

/// `sum_k E[(Y - xi*) dA]` over the three increment ledgers.
pub fn peng_xu_residual<T: Real>(
    model: &LatticeModel<T>,
    q: &SolutionQuadruple<T>,
    xi_star: &SlotProcess<T>,
) -> T {
    let terms: Vec<T> = q
        .da
        .iter()
        .map(|(j, s, i, d)| {
            let gap = q.y.layer(s)[j][i] - xi_star.layer(s)[j][i];
            model.path_probs(j)[i] * gap * d
        })
        .collect();
    pairwise_sum(&terms)
}

/// Candidates for `xi*`: the envelope, `Y`, their midpoint, random convex
/// combinations, and occasional deliberately inadmissible perturbations.
pub fn sample_xi_star<T: Real>(
    model: &LatticeModel<T>,
    barrier: &LadlagBarrier<T>,
    y: &SlotProcess<T>,
    count: usize,
    seed: u64,
) -> Vec<SlotProcess<T>> {
    let last = model.depth();
    // cadlag envelope of xi, keeping xi's left limits
    let mut env = barrier.slots().clone();
    for j in 0..last {
        for i in 0..model.count(j) {
            let m = env.at[j][i].max(env.post[j][i]);
            env.at[j][i] = m;
            env.post[j][i] = m;
        }
    }
    let mix = |theta: &dyn Fn(usize, Slot, usize) -> T| {
        let mut out = env.clone();
        for j in 0..=last {
            for i in 0..model.count(j) {
                // y - t (y - env) stays inside [env, y] up to rounding; clamp
                // away the rounding
                let squeeze = |lo: T, hi: T, t: T| (hi - t * (hi - lo)).max(lo).min(hi);
                let v = squeeze(env.at[j][i], y.at[j][i], theta(j, Slot::At, i));
                out.at[j][i] = v;
                if j < last {
                    out.post[j][i] = v;
                }
                if j > 0 {
                    out.pre[j][i] = squeeze(env.pre[j][i], y.pre[j][i], theta(j, Slot::Pre, i));
                }
            }
        }
        out
    };
    let mut out = vec![env.clone(), y.clone(), mix(&|_, _, _| T::lit(0.5))];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        let draws: Vec<f64> = (0..3 * model.total_nodes()).map(|_| rng.random_range(0.0..=1.0)).collect();
        let offsets: Vec<usize> = model
            .counts()
            .iter()
            .scan(0, |acc, &c| {
                let o = *acc;
                *acc += c;
                Some(o)
            })
            .collect();
        let theta = |j: usize, s: Slot, i: usize| {
            let k = 3 * (offsets[j] + i) + s as usize;
            T::lit(draws[k])
        };
        let mut cand = mix(&theta);
        if rng.random_range(0..5) == 0 {
            // push one instant value below the barrier
            let j = rng.random_range(0..=last);
            let i = rng.random_range(0..model.count(j));
            cand.at[j][i] = barrier.at(j)[i] - T::one();
            if j < last {
                cand.post[j][i] = cand.at[j][i];
            }
        }
        out.push(cand);
    }
    out.truncate(count.max(3));
    out
}

/// Checks right-continuity of `Y` and the residual for every admissible
/// candidate. Requires `xi_at <= xi_open`.
pub fn peng_xu_check<T: Real>(
    model: &LatticeModel<T>,
    q: &SolutionQuadruple<T>,
    barrier: &LadlagBarrier<T>,
    candidates: &[SlotProcess<T>],
    tol: f64,
) -> Result<PengXuReport> {
    barrier.require(BarrierFlag::XiLeqXiPlus)?;
    let max_right_jump = q
        .da
        .at
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
    let mut accepted = 0;
    let mut rejected = 0;
    let mut max_residual = 0.0f64;
    for c in candidates {
        if c.check(model).is_err() || !is_admissible(barrier, &q.y, c) {
            rejected += 1;
            continue;
        }
        accepted += 1;
        max_residual = max_residual.max(peng_xu_residual(model, q, c).to_f64_lossy().abs());
    }
    Ok(PengXuReport {
        max_right_jump,
        accepted,
        rejected,
        max_residual,
        passed: max_right_jump == 0.0 && max_residual <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{random_irregular, BarrierSpec};
    use crate::driver::BuiltinDriver;
    use crate::error::LabError;
    use crate::lattice::TimeGrid;
    use crate::rbsde::solve_reflected;
    use std::path::Path;

    #[test]
    fn american_put_candidates() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 3).unwrap(), &[]).unwrap();
        let b = BarrierSpec::AmericanPut { strike: 100.0, spot: 100.0, up: 1.2, down: 0.8 }
            .build(&m, Path::new("."))
            .unwrap();
        let q = solve_reflected(&m, &BuiltinDriver::Zero, &b).unwrap();
        let cands = sample_xi_star(&m, &b, &q.y, 30, 1);
        let rep = peng_xu_check(&m, &q, &b, &cands, 1e-12).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.accepted + rep.rejected, 30);
        assert!(rep.accepted >= 20);
    }

    #[test]
    fn random_xi_leq_plus_instances() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 3).unwrap(), &[0.3]).unwrap();
        let d = BuiltinDriver::linear(0.2, 0.2, vec![0.1], &[0.3]);
        for seed in 0..5 {
            let b = random_irregular(&m, seed, &[BarrierFlag::XiLeqXiPlus]).unwrap();
            let q = solve_reflected(&m, &d, &b).unwrap();
            let cands = sample_xi_star(&m, &b, &q.y, 40, seed);
            let rep = peng_xu_check(&m, &q, &b, &cands, 1e-12).unwrap();
            assert!(rep.passed && rep.accepted >= 20, "{rep:?}");
        }
    }

    #[test]
    fn refuses_without_hypothesis() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 2).unwrap(), &[]).unwrap();
        let b = random_irregular(&m, 0, &[BarrierFlag::RightUsc]).unwrap();
        let q = solve_reflected(&m, &BuiltinDriver::Zero, &b).unwrap();
        assert!(matches!(
            peng_xu_check(&m, &q, &b, &[], 1e-12),
            Err(LabError::Precondition { .. })
        ));
    }
}
