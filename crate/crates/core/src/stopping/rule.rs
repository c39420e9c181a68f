//! Adapted stop/continue rules on node-slots and their exhaustive
//! enumeration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::LatticeModel;
use crate::process::Slot;
use crate::scalar::Real;

/// Stop at `slot` of `node` at `level`. Stopping at `Post` earns the open
/// interval value and `Pre` the left limit. A rule can stop at the left
/// limit of any node it reaches through a step, and at its start node only
/// when it starts there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StopPoint {
    pub level: usize,
    pub node: usize,
    pub slot: Slot,
}

/// A stopping rule started at `(start_level, start_slot)` on the subtrees
/// of `roots`. Active terminal nodes without an explicit stop are stopped
/// at their instant slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub start_level: usize,
    pub start_slot: Slot,
    pub roots: Vec<usize>,
    pub stops: Vec<StopPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Decision {
    Continue,
    Stop(Slot),
}

/// Dense form of a rule: `decisions[level - start][node]`, `None` where the
/// node is not reached.
#[derive(Debug, Clone)]
pub(crate) struct RuleTable {
    pub start_level: usize,
    pub decisions: Vec<Vec<Option<Decision>>>,
}

impl RuleTable {
    pub fn get(&self, level: usize, node: usize) -> Option<Decision> {
        self.decisions[level - self.start_level][node]
    }
}

impl StoppingRule {
    /// Every start node stops immediately at `slot`.
    pub fn immediate<T: Real>(model: &LatticeModel<T>, level: usize, slot: Slot) -> Self {
        let roots: Vec<usize> = (0..model.count(level)).collect();
        let stops = roots
            .iter()
            .map(|&node| StopPoint { level, node, slot })
            .collect();
        Self {
            start_level: level,
            start_slot: slot,
            roots,
            stops,
        }
    }

    /// Never stops before the terminal level.
    pub fn terminal<T: Real>(model: &LatticeModel<T>, start_level: usize, start_slot: Slot) -> Self {
        Self {
            start_level,
            start_slot,
            roots: (0..model.count(start_level)).collect(),
            stops: Vec::new(),
        }
    }

    /// Stops everywhere at `(stop_level, stop_slot)`.
    pub fn deterministic<T: Real>(
        model: &LatticeModel<T>,
        start_level: usize,
        start_slot: Slot,
        stop_level: usize,
        stop_slot: Slot,
    ) -> Self {
        Self {
            start_level,
            start_slot,
            roots: (0..model.count(start_level)).collect(),
            stops: (0..model.count(stop_level))
                .map(|node| StopPoint {
                    level: stop_level,
                    node,
                    slot: stop_slot,
                })
                .collect(),
        }
    }

    /// First slot (at or after the start) where `hit` holds.
    pub fn first_hitting<T: Real>(
        model: &LatticeModel<T>,
        start_level: usize,
        start_slot: Slot,
        mut hit: impl FnMut(usize, usize, Slot) -> bool,
    ) -> Self {
        let last = model.depth();
        let mut stops = Vec::new();
        let mut frontier: Vec<usize> = (0..model.count(start_level)).collect();
        for level in start_level..=last {
            let mut next = Vec::new();
            for &node in &frontier {
                let mut slots = vec![Slot::Pre, Slot::At, Slot::Post];
                if level == 0 {
                    slots.retain(|s| *s != Slot::Pre);
                }
                if level == start_level {
                    slots.retain(|s| *s >= start_slot);
                }
                if level == last {
                    slots.retain(|s| *s != Slot::Post);
                }
                if let Some(&slot) = slots.iter().find(|&&s| hit(level, node, s)) {
                    stops.push(StopPoint { level, node, slot });
                } else if level < last {
                    next.extend(model.children(level, node));
                }
            }
            frontier = next;
        }
        Self {
            start_level,
            start_slot,
            roots: (0..model.count(start_level)).collect(),
            stops,
        }
    }

    pub(crate) fn resolve<T: Real>(&self, model: &LatticeModel<T>) -> Result<RuleTable> {
        let last = model.depth();
        if self.start_level > last {
            return Err(LabError::RuleInconsistency(format!(
                "start level {} beyond terminal level {last}",
                self.start_level
            )));
        }
        if self.start_level == last && self.start_slot == Slot::Post {
            return Err(LabError::RuleInconsistency(
                "terminal level has no post slot".into(),
            ));
        }
        if self.start_level == 0 && self.start_slot == Slot::Pre {
            return Err(LabError::RuleInconsistency("level 0 has no pre slot".into()));
        }
        let mut stops: BTreeMap<(usize, usize), Slot> = BTreeMap::new();
        for s in &self.stops {
            if s.level < self.start_level
                || (s.level == self.start_level && s.slot < self.start_slot)
            {
                return Err(LabError::RuleInconsistency(format!(
                    "stop at level {} slot {} precedes the start",
                    s.level,
                    s.slot.name()
                )));
            }
            if s.slot == Slot::Post && s.level == last {
                return Err(LabError::RuleInconsistency(
                    "post-slot stop at the terminal level".into(),
                ));
            }
            if s.node >= model.count(s.level) {
                return Err(LabError::RuleInconsistency(format!(
                    "node {} out of range at level {}",
                    s.node, s.level
                )));
            }
            if stops.insert((s.level, s.node), s.slot).is_some() {
                return Err(LabError::RuleInconsistency(format!(
                    "two decisions at level {}, node {}",
                    s.level, s.node
                )));
            }
        }
        let mut decisions: Vec<Vec<Option<Decision>>> = (self.start_level..=last)
            .map(|j| vec![None; model.count(j)])
            .collect();
        let mut frontier = self.roots.clone();
        frontier.sort_unstable();
        frontier.dedup();
        if frontier.iter().any(|&r| r >= model.count(self.start_level)) {
            return Err(LabError::RuleInconsistency("root out of range".into()));
        }
        let mut used = 0usize;
        for level in self.start_level..=last {
            let mut next = Vec::new();
            for &node in &frontier {
                let d = match stops.get(&(level, node)) {
                    Some(&slot) => {
                        used += 1;
                        Decision::Stop(slot)
                    }
                    None if level == last => Decision::Stop(Slot::At),
                    None => {
                        next.extend(model.children(level, node));
                        Decision::Continue
                    }
                };
                decisions[level - self.start_level][node] = Some(d);
            }
            frontier = next;
        }
        if used != stops.len() {
            return Err(LabError::RuleInconsistency(
                "decisions attached to unreachable node-slots".into(),
            ));
        }
        Ok(RuleTable {
            start_level: self.start_level,
            decisions,
        })
    }

    /// Checks adaptedness and consistency against `model`.
    pub fn validate<T: Real>(&self, model: &LatticeModel<T>) -> Result<()> {
        self.resolve(model).map(|_| ())
    }
}

/// Number of rules on the subtree of one node of `level` whose first
/// allowed slot is `first`.
pub fn count_subtree_rules<T: Real>(model: &LatticeModel<T>, level: usize, first: Slot) -> u128 {
    let last = model.depth();
    // g(L) = 1; g(j) = 2 + (g(j+1) + 1)^b: stop at, stop open, or continue
    // into children that may each stop at their left limit
    let mut g: u128 = 1;
    for j in (level..last).rev() {
        g = 2u128.saturating_add(g.saturating_add(1).saturating_pow(model.branching(j) as u32));
    }
    match first {
        Slot::Pre => g.saturating_add(1),
        Slot::At => g,
        Slot::Post if level == last => 0,
        Slot::Post => g - 1,
    }
}

/// Number of rules starting at `(root_level, first)` under one root node and
/// stopping no earlier than `from_level`.
pub fn count_stopping_rules<T: Real>(
    model: &LatticeModel<T>,
    root_level: usize,
    first: Slot,
    from_level: usize,
) -> u128 {
    if from_level <= root_level {
        return count_subtree_rules(model, root_level, first);
    }
    let per = count_subtree_rules(model, from_level, Slot::At);
    let descendants: u32 = (root_level..from_level)
        .map(|j| model.branching(j) as u32)
        .product();
    per.saturating_pow(descendants)
}

fn subtree_rules<T: Real>(
    model: &LatticeModel<T>,
    level: usize,
    node: usize,
    first: Slot,
) -> Vec<Vec<StopPoint>> {
    let last = model.depth();
    let mut out = Vec::new();
    let candidates: &[Slot] = if level == last {
        &[Slot::Pre, Slot::At]
    } else {
        &[Slot::Pre, Slot::At, Slot::Post]
    };
    for &slot in candidates {
        if slot >= first {
            out.push(vec![StopPoint { level, node, slot }]);
        }
    }
    if level < last {
        let per_child: Vec<Vec<Vec<StopPoint>>> = model
            .children(level, node)
            .map(|c| subtree_rules(model, level + 1, c, Slot::Pre))
            .collect();
        out.extend(cartesian(&per_child));
    }
    out
}

fn cartesian(parts: &[Vec<Vec<StopPoint>>]) -> Vec<Vec<StopPoint>> {
    let mut acc: Vec<Vec<StopPoint>> = vec![Vec::new()];
    for options in parts {
        let mut next = Vec::with_capacity(acc.len() * options.len());
        for prefix in &acc {
            for opt in options {
                let mut v = prefix.clone();
                v.extend_from_slice(opt);
                next.push(v);
            }
        }
        acc = next;
    }
    acc
}

/// Every adapted, consistent rule rooted at `(root_level, root_node)` that
/// starts at slot `first` and stops no earlier than `from_level`, each
/// exactly once. Refuses when the count exceeds `budget`.
pub fn enumerate_stopping_rules<T: Real>(
    model: &LatticeModel<T>,
    root_level: usize,
    root_node: usize,
    first: Slot,
    from_level: usize,
    budget: u128,
) -> Result<Vec<StoppingRule>> {
    let count = count_stopping_rules(model, root_level, first, from_level);
    if count > budget {
        return Err(LabError::BudgetExceeded { count, budget });
    }
    let stop_sets = if from_level <= root_level {
        subtree_rules(model, root_level, root_node, first)
    } else {
        let mut frontier = vec![root_node];
        for j in root_level..from_level {
            frontier = frontier
                .into_iter()
                .flat_map(|n| model.children(j, n))
                .collect();
        }
        let parts: Vec<_> = frontier
            .iter()
            .map(|&n| subtree_rules(model, from_level, n, Slot::At))
            .collect();
        cartesian(&parts)
    };
    Ok(stop_sets
        .into_iter()
        .map(|mut stops| {
            stops.sort();
            StoppingRule {
                start_level: root_level,
                start_slot: first,
                roots: vec![root_node],
                stops,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::TimeGrid;

    fn binomial(n: usize) -> LatticeModel<f64> {
        LatticeModel::build(TimeGrid::new(1.0, n).unwrap(), &[]).unwrap()
    }

    /// Rules that only ever stop at instant slots, for the f(d+1) = 1 + f(d)^2
    /// recursion.
    fn instant_only(model: &LatticeModel<f64>) -> usize {
        enumerate_stopping_rules(model, 0, 0, Slot::At, 0, 1 << 30)
            .unwrap()
            .into_iter()
            .filter(|r| r.stops.iter().all(|s| s.slot == Slot::At))
            .count()
    }

    #[test]
    fn terminal_only_has_one_rule() {
        let m = binomial(2);
        let rules = enumerate_stopping_rules(&m, 2, 0, Slot::At, 2, 10).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(count_subtree_rules(&m, 2, Slot::At), 1);
    }

    #[test]
    fn single_node_with_open_slot() {
        use crate::lattice::{Branch, Step, StepKind};
        // one deterministic step into the terminal level
        let step = Step {
            kind: StepKind::Micro,
            elapsed: 1.0,
            weight: 0.0,
            branches: vec![Branch { prob: 1.0, dw: 0.0, jump: None }],
        };
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let r = LatticeModel::from_parts(grid, vec![], vec![step], vec![Some(0), Some(1)]).unwrap();
        let rules = enumerate_stopping_rules(&r, 0, 0, Slot::At, 0, 100).unwrap();
        // stop-at, stop-open, continue; continuing may also stop at the
        // terminal left limit
        let no_left: Vec<_> = rules
            .iter()
            .filter(|r| r.stops.iter().all(|s| s.slot != Slot::Pre))
            .collect();
        assert_eq!(no_left.len(), 3);
        assert_eq!(rules.len(), 4);
    }

    #[test]
    fn instant_slot_recursion() {
        // f(0)=1, f(1)=2, f(2)=5, f(3)=26
        assert_eq!(instant_only(&binomial(1)), 2);
        assert_eq!(instant_only(&binomial(2)), 5);
        assert_eq!(instant_only(&binomial(3)), 26);
    }

    #[test]
    fn counts_match_generation() {
        for (n, marks) in [(1, vec![]), (2, vec![]), (3, vec![]), (2, vec![0.3])] {
            let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, n).unwrap(), &marks).unwrap();
            for first in Slot::ALL {
                if first == Slot::Pre {
                    continue;
                }
                let c = count_subtree_rules(&m, 0, first);
                let rules = enumerate_stopping_rules(&m, 0, 0, first, 0, 1 << 40).unwrap();
                assert_eq!(rules.len() as u128, c);
                for r in &rules {
                    r.validate(&m).unwrap();
                }
            }
            let c = count_subtree_rules(&m, 1, Slot::Pre);
            assert_eq!(
                enumerate_stopping_rules(&m, 1, 0, Slot::Pre, 1, 1 << 40).unwrap().len() as u128,
                c
            );
        }
        // g(1) = 2 + 2^2, g(2) = 2 + 7^2
        assert_eq!(count_subtree_rules(&binomial(1), 0, Slot::At), 6);
        assert_eq!(count_subtree_rules(&binomial(2), 0, Slot::At), 51);
        // without left-limit stops the open slots give 3 and 11
        let no_left = |n| {
            enumerate_stopping_rules(&binomial(n), 0, 0, Slot::At, 0, 1 << 20)
                .unwrap()
                .into_iter()
                .filter(|r| r.stops.iter().all(|s| s.slot != Slot::Pre))
                .count()
        };
        assert_eq!(no_left(1), 3);
        assert_eq!(no_left(2), 11);
    }

    #[test]
    fn rules_from_later_level() {
        let m = binomial(3);
        let c = count_stopping_rules(&m, 0, Slot::At, 1);
        assert_eq!(c, 51 * 51);
        let rules = enumerate_stopping_rules(&m, 0, 0, Slot::At, 1, 10_000).unwrap();
        assert_eq!(rules.len(), 2601);
        assert!(rules.iter().all(|r| r.stops.iter().all(|s| s.level >= 1)));
    }

    #[test]
    fn budget_refusal() {
        let m = binomial(4);
        assert!(matches!(
            enumerate_stopping_rules(&m, 0, 0, Slot::At, 0, 100),
            Err(LabError::BudgetExceeded { count: 7_327_851, budget: 100 })
        ));
    }

    #[test]
    fn inconsistent_rules_are_rejected() {
        let m = binomial(2);
        let mut r = StoppingRule::immediate(&m, 0, Slot::At);
        r.stops.push(StopPoint { level: 1, node: 0, slot: Slot::At });
        assert!(matches!(r.validate(&m), Err(LabError::RuleInconsistency(_))));

        let r = StoppingRule {
            start_level: 1,
            start_slot: Slot::At,
            roots: vec![0, 1],
            stops: vec![StopPoint { level: 0, node: 0, slot: Slot::At }],
        };
        assert!(r.validate(&m).is_err());

        let r = StoppingRule {
            start_level: 0,
            start_slot: Slot::At,
            roots: vec![0],
            stops: vec![StopPoint { level: 2, node: 0, slot: Slot::Post }],
        };
        assert!(r.validate(&m).is_err());

        let r = StoppingRule {
            start_level: 1,
            start_slot: Slot::At,
            roots: vec![0, 1],
            stops: vec![StopPoint { level: 1, node: 0, slot: Slot::Pre }],
        };
        assert!(r.validate(&m).is_err());
        StoppingRule::terminal(&m, 0, Slot::At).validate(&m).unwrap();
        StoppingRule::deterministic(&m, 0, Slot::At, 1, Slot::Post)
            .validate(&m)
            .unwrap();
    }
}
