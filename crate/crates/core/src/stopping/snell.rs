//! Snell envelopes under g-expectations: the dynamic program and the
//! exhaustive brute force over stopping rules.

use rayon::prelude::*;
use serde::Serialize;

use crate::barrier::LadlagBarrier;
use crate::bsde::g_expectation;
use crate::driver::Driver;
use crate::error::{LabError, Result};
use crate::lattice::LatticeModel;
use crate::process::{Slot, SlotProcess};
use crate::rbsde::solve_reflected;
use crate::scalar::Real;

use super::rule::{count_subtree_rules, enumerate_stopping_rules, StoppingRule};

/// Default cap on the number of rules enumerated per start node.
pub const DEFAULT_RULE_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Provenance {
    Dp,
    BruteForce,
}

/// Value of optimal stopping at every slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFamily<T> {
    pub values: SlotProcess<T>,
    pub provenance: Provenance,
}

/// Dynamic programming: the reflected solution's `Y`.
pub fn snell_dp<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
) -> Result<ValueFamily<T>> {
    Ok(ValueFamily {
        values: solve_reflected(model, driver, barrier)?.y,
        provenance: Provenance::Dp,
    })
}

/// Brute-force values at one slot of one level.
#[derive(Debug, Clone)]
pub struct BruteForce<T> {
    pub level: usize,
    pub slot: Slot,
    pub values: Vec<T>,
    /// Maximizing rule per node (smallest enumeration index on ties).
    pub argmax: Vec<StoppingRule>,
    pub rule_count: u128,
}

/// Best value over all rules started at `(node, slot)` of `level`, with
/// the barrier as reward.
pub fn brute_force_node<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    reward: &SlotProcess<T>,
    level: usize,
    node: usize,
    slot: Slot,
    budget: u128,
) -> Result<(T, StoppingRule)> {
    brute_force_over(
        model,
        driver,
        reward,
        node,
        enumerate_stopping_rules(model, level, node, slot, level, budget)?,
    )
}

/// Maximum of the g-expectations of `reward` over `rules`, all rooted at
/// `node`. Ties go to the earliest rule.
pub fn brute_force_over<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    reward: &SlotProcess<T>,
    node: usize,
    rules: Vec<StoppingRule>,
) -> Result<(T, StoppingRule)> {
    let values: Vec<T> = rules
        .par_iter()
        .map(|r| {
            g_expectation(model, driver, r, reward)?[node]
                .ok_or(LabError::MissingValue { level: r.start_level, node })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    let value = *values.get(best).ok_or(LabError::RuleInconsistency("no rules".into()))?;
    Ok((value, rules[best].clone()))
}

/// Brute force at every node of `level` for one start slot.
pub fn brute_force_snell<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    level: usize,
    slot: Slot,
    budget: u128,
) -> Result<BruteForce<T>> {
    let rule_count = count_subtree_rules(model, level, slot);
    let mut values = Vec::with_capacity(model.count(level));
    let mut argmax = Vec::with_capacity(model.count(level));
    for node in 0..model.count(level) {
        let (v, r) = brute_force_node(model, driver, barrier.slots(), level, node, slot, budget)?;
        values.push(v);
        argmax.push(r);
    }
    Ok(BruteForce {
        level,
        slot,
        values,
        argmax,
        rule_count,
    })
}

/// Brute force at every slot of every level.
pub fn brute_force_family<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
    budget: u128,
) -> Result<ValueFamily<T>> {
    let mut values = SlotProcess::zeros(model);
    for j in 0..model.levels() {
        for slot in Slot::ALL {
            if values.has_slot(j, slot) {
                values.layer_mut(slot)[j] =
                    brute_force_snell(model, driver, barrier, j, slot, budget)?.values;
            }
        }
    }
    Ok(ValueFamily {
        values,
        provenance: Provenance::BruteForce,
    })
}

/// Rule stopping at the first slot (from the start on) where `value`
/// meets the barrier.
pub fn hitting_rule<T: Real>(
    model: &LatticeModel<T>,
    value: &SlotProcess<T>,
    barrier: &LadlagBarrier<T>,
    level: usize,
    slot: Slot,
) -> StoppingRule {
    StoppingRule::first_hitting(model, level, slot, |j, i, s| {
        value.get(j, s, i) == barrier.get(j, s, i)
    })
}
