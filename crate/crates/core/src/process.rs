//! Node-indexed processes on a lattice.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::LatticeModel;
use crate::scalar::Real;

/// Position inside one grid instant: left limit, the instant itself, and the
/// right limit (which also stands for the following open interval).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Pre,
    At,
    Post,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Pre, Slot::At, Slot::Post];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Pre => "pre",
            Slot::At => "at",
            Slot::Post => "post",
        }
    }

    pub fn parse(s: &str) -> Option<Slot> {
        match s {
            "pre" => Some(Slot::Pre),
            "at" => Some(Slot::At),
            "post" | "open" => Some(Slot::Post),
            _ => None,
        }
    }
}

/// One value per node at every level: `values[level][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess<T> {
    pub values: Vec<Vec<T>>,
}

impl<T: Real> AdaptedProcess<T> {
    pub fn constant(model: &LatticeModel<T>, c: T) -> Self {
        Self {
            values: model.counts().iter().map(|&n| vec![c; n]).collect(),
        }
    }

    pub fn from_fn(model: &LatticeModel<T>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        Self {
            values: (0..model.levels())
                .map(|j| (0..model.count(j)).map(|i| f(j, i)).collect())
                .collect(),
        }
    }

    pub fn level(&self, j: usize) -> &[T] {
        &self.values[j]
    }

    pub fn check(&self, model: &LatticeModel<T>) -> Result<()> {
        if self.values.len() != model.levels() {
            return Err(LabError::Shape(format!(
                "process has {} levels, model has {}",
                self.values.len(),
                model.levels()
            )));
        }
        for (j, v) in self.values.iter().enumerate() {
            if v.len() != model.count(j) {
                return Err(LabError::MissingValue {
                    level: j,
                    node: v.len().min(model.count(j)),
                });
            }
        }
        Ok(())
    }
}

/// Three layers per level. `pre` is empty at level 0 and `post` is empty at
/// the terminal level; every other layer has one value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotProcess<T> {
    pub pre: Vec<Vec<T>>,
    pub at: Vec<Vec<T>>,
    pub post: Vec<Vec<T>>,
}

impl<T: Real> SlotProcess<T> {
    pub fn zeros(model: &LatticeModel<T>) -> Self {
        Self::constant(model, T::zero())
    }

    pub fn constant(model: &LatticeModel<T>, c: T) -> Self {
        let last = model.depth();
        let layer = |skip: Option<usize>| -> Vec<Vec<T>> {
            model
                .counts()
                .iter()
                .enumerate()
                .map(|(j, &n)| if Some(j) == skip { Vec::new() } else { vec![c; n] })
                .collect()
        };
        Self {
            pre: layer(Some(0)),
            at: layer(None),
            post: layer(Some(last)),
        }
    }

    /// Same value in every slot of a node.
    pub fn from_adapted(model: &LatticeModel<T>, x: &AdaptedProcess<T>) -> Self {
        let mut out = Self::zeros(model);
        for j in 0..model.levels() {
            out.at[j].clone_from(&x.values[j]);
            if j > 0 {
                out.pre[j].clone_from(&x.values[j]);
            }
            if j < model.depth() {
                out.post[j].clone_from(&x.values[j]);
            }
        }
        out
    }

    pub fn levels(&self) -> usize {
        self.at.len()
    }

    pub fn layer(&self, slot: Slot) -> &Vec<Vec<T>> {
        match slot {
            Slot::Pre => &self.pre,
            Slot::At => &self.at,
            Slot::Post => &self.post,
        }
    }

    pub fn layer_mut(&mut self, slot: Slot) -> &mut Vec<Vec<T>> {
        match slot {
            Slot::Pre => &mut self.pre,
            Slot::At => &mut self.at,
            Slot::Post => &mut self.post,
        }
    }

    /// `None` for slots that do not exist (pre at 0, post at the end).
    pub fn get(&self, level: usize, slot: Slot, node: usize) -> Option<T> {
        self.layer(slot).get(level)?.get(node).copied()
    }

    pub fn has_slot(&self, level: usize, slot: Slot) -> bool {
        match slot {
            Slot::Pre => level > 0,
            Slot::At => true,
            Slot::Post => level + 1 < self.levels(),
        }
    }

    pub fn check(&self, model: &LatticeModel<T>) -> Result<()> {
        let levels = model.levels();
        if self.pre.len() != levels || self.at.len() != levels || self.post.len() != levels {
            return Err(LabError::Shape(format!(
                "slot process does not have {levels} levels"
            )));
        }
        for j in 0..levels {
            for slot in Slot::ALL {
                let want = if self.has_slot(j, slot) { model.count(j) } else { 0 };
                let got = self.layer(slot)[j].len();
                if got != want {
                    return Err(LabError::Shape(format!(
                        "{} layer at level {j} has {got} values, expected {want}",
                        slot.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `f` slotwise to two processes of identical shape.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        let zip = |a: &Vec<Vec<T>>, b: &Vec<Vec<T>>| -> Result<Vec<Vec<T>>> {
            if a.len() != b.len() {
                return Err(LabError::Shape("level counts differ".into()));
            }
            a.iter()
                .zip(b)
                .map(|(x, y)| {
                    if x.len() != y.len() {
                        return Err(LabError::Shape("node counts differ".into()));
                    }
                    Ok(x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect())
                })
                .collect()
        };
        Ok(Self {
            pre: zip(&self.pre, &other.pre)?,
            at: zip(&self.at, &other.at)?,
            post: zip(&self.post, &other.post)?,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let m = |a: &Vec<Vec<T>>| a.iter().map(|x| x.iter().map(|&v| f(v)).collect()).collect();
        Self {
            pre: m(&self.pre),
            at: m(&self.at),
            post: m(&self.post),
        }
    }

    /// Iterates `(level, slot, node, value)` over every existing slot.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Slot, usize, T)> + '_ {
        (0..self.levels()).flat_map(move |j| {
            Slot::ALL.into_iter().flat_map(move |s| {
                self.layer(s)[j]
                    .iter()
                    .enumerate()
                    .map(move |(i, &v)| (j, s, i, v))
            })
        })
    }

    /// Largest absolute slotwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let d = self.zip_with(other, |a, b| (a - b).abs())?;
        Ok(d.iter().fold(T::zero(), |m, (_, _, _, v)| m.max(v)))
    }

    /// Largest value of `other - self` over all slots (how far `self` fails
    /// to dominate `other`).
    pub fn max_shortfall(&self, other: &Self) -> Result<T> {
        let d = self.zip_with(other, |a, b| b - a)?;
        Ok(d.iter().fold(T::zero(), |m, (_, _, _, v)| m.max(v)))
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, (_, _, _, v)| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::TimeGrid;

    #[test]
    fn shapes_follow_model() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 2).unwrap(), &[]).unwrap();
        let s = SlotProcess::constant(&m, 1.0);
        s.check(&m).unwrap();
        assert!(s.pre[0].is_empty());
        assert!(s.post[2].is_empty());
        assert_eq!(s.at[2].len(), 4);
        assert_eq!(s.get(0, Slot::Pre, 0), None);
        assert_eq!(s.get(1, Slot::Post, 1), Some(1.0));
        assert_eq!(s.iter().count(), 1 + 1 + 2 * 3 + 4 * 2);
    }

    #[test]
    fn diff_helpers() {
        let m = LatticeModel::<f64>::build(TimeGrid::new(1.0, 1).unwrap(), &[]).unwrap();
        let a = SlotProcess::constant(&m, 1.0);
        let b = a.map(|v| v + 0.5);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 0.5);
        assert_eq!(a.max_shortfall(&b).unwrap(), 0.5);
        assert_eq!(b.max_shortfall(&a).unwrap(), 0.0);
    }
}
