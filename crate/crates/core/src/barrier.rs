//! Irregular barriers: ladlag encoding, classification, the upper cadlag
//! envelope, monotone cadlag approximations on refined lattices, and the
//! pathwise sup distance.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::LatticeModel;
use crate::process::{Slot, SlotProcess};
use crate::scalar::Real;

/// Structural properties a barrier may have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BarrierFlag {
    /// `at >= open` before the terminal level.
    #[serde(rename = "rightUSC")]
    RightUsc,
    /// `pre <= at` from level 1 on.
    #[serde(rename = "leftUSC")]
    LeftUsc,
    /// `at <= open` before the terminal level.
    #[serde(rename = "xiLEQxiPlus")]
    XiLeqXiPlus,
    /// `at < pre` from level 1 on.
    #[serde(rename = "strictLeftGap")]
    StrictLeftGap,
    /// `at == open` before the terminal level.
    #[serde(rename = "cadlag")]
    Cadlag,
}

impl BarrierFlag {
    pub const ALL: [BarrierFlag; 5] = [
        BarrierFlag::RightUsc,
        BarrierFlag::LeftUsc,
        BarrierFlag::XiLeqXiPlus,
        BarrierFlag::StrictLeftGap,
        BarrierFlag::Cadlag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BarrierFlag::RightUsc => "rightUSC",
            BarrierFlag::LeftUsc => "leftUSC",
            BarrierFlag::XiLeqXiPlus => "xiLEQxiPlus",
            BarrierFlag::StrictLeftGap => "strictLeftGap",
            BarrierFlag::Cadlag => "cadlag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BarrierFlags {
    #[serde(rename = "rightUSC")]
    pub right_usc: bool,
    #[serde(rename = "leftUSC")]
    pub left_usc: bool,
    #[serde(rename = "xiLEQxiPlus")]
    pub xi_leq_xi_plus: bool,
    #[serde(rename = "strictLeftGap")]
    pub strict_left_gap: bool,
    pub cadlag: bool,
}

impl BarrierFlags {
    pub fn has(&self, flag: BarrierFlag) -> bool {
        match flag {
            BarrierFlag::RightUsc => self.right_usc,
            BarrierFlag::LeftUsc => self.left_usc,
            BarrierFlag::XiLeqXiPlus => self.xi_leq_xi_plus,
            BarrierFlag::StrictLeftGap => self.strict_left_gap,
            BarrierFlag::Cadlag => self.cadlag,
        }
    }
}

/// Barrier given by its value at each instant (`at`), its constant value on
/// the following open interval (`post`), and its left limit (`pre`).
///
/// Unless supplied explicitly, the left limit at level `k + 1` is inherited
/// from the parent's open-interval value.
#[derive(Debug, Clone, PartialEq)]
pub struct LadlagBarrier<T> {
    values: SlotProcess<T>,
    explicit_pre: bool,
}

fn derive_pre<T: Real>(model: &LatticeModel<T>, s: &mut SlotProcess<T>, keep_max: bool) {
    for j in 1..model.levels() {
        for i in 0..model.count(j) {
            let inherited = s.post[j - 1][model.parent(j, i)];
            s.pre[j][i] = if keep_max {
                s.pre[j][i].max(inherited)
            } else {
                inherited
            };
        }
    }
}

fn check_layer<T>(layer: &[Vec<T>], model_counts: &[usize], levels: std::ops::Range<usize>) -> Result<()> {
    if layer.len() < levels.end {
        return Err(LabError::Shape(format!(
            "barrier layer has {} levels, expected {}",
            layer.len(),
            levels.end
        )));
    }
    for j in levels {
        if layer[j].len() != model_counts[j] {
            return Err(LabError::MissingValue {
                level: j,
                node: layer[j].len().min(model_counts[j]),
            });
        }
    }
    Ok(())
}

impl<T: Real> LadlagBarrier<T> {
    /// `at` covers levels `0..=L` (the last one is the terminal value) and
    /// `open` covers `0..L`.
    pub fn new(model: &LatticeModel<T>, at: Vec<Vec<T>>, open: Vec<Vec<T>>) -> Result<Self> {
        let last = model.depth();
        check_layer(&at, model.counts(), 0..last + 1)?;
        check_layer(&open, model.counts(), 0..last)?;
        let mut values = SlotProcess::zeros(model);
        for j in 0..=last {
            values.at[j].clone_from(&at[j]);
            if j < last {
                values.post[j].clone_from(&open[j]);
            }
        }
        derive_pre(model, &mut values, false);
        Ok(Self {
            values,
            explicit_pre: false,
        })
    }

    /// Barrier with every layer given, including left limits.
    pub fn from_slots(model: &LatticeModel<T>, values: SlotProcess<T>) -> Result<Self> {
        values.check(model)?;
        Ok(Self {
            values,
            explicit_pre: true,
        })
    }

    /// Same value in every slot of a node.
    pub fn from_fn(model: &LatticeModel<T>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let at: Vec<Vec<T>> = (0..model.levels())
            .map(|j| (0..model.count(j)).map(|i| f(j, i)).collect())
            .collect();
        let open = at[..model.depth()].to_vec();
        Self::new(model, at, open).expect("shapes follow the model")
    }

    pub fn constant(model: &LatticeModel<T>, c: T) -> Self {
        Self::from_fn(model, |_, _| c)
    }

    /// Left limits set equal to the instant values, as for a payoff of an
    /// underlying that moves continuously between grid instants.
    pub fn with_left_limits_at_instants(mut self) -> Self {
        for j in 1..self.values.levels() {
            let at = self.values.at[j].clone();
            self.values.pre[j] = at;
        }
        self.explicit_pre = true;
        self
    }

    pub fn slots(&self) -> &SlotProcess<T> {
        &self.values
    }

    pub fn has_explicit_pre(&self) -> bool {
        self.explicit_pre
    }

    pub fn at(&self, level: usize) -> &[T] {
        &self.values.at[level]
    }

    pub fn open(&self, level: usize) -> &[T] {
        &self.values.post[level]
    }

    pub fn pre(&self, level: usize) -> &[T] {
        &self.values.pre[level]
    }

    pub fn terminal(&self) -> &[T] {
        self.values.at.last().expect("at least one level")
    }

    pub fn levels(&self) -> usize {
        self.values.levels()
    }

    pub fn depth(&self) -> usize {
        self.levels() - 1
    }

    /// Barrier value at a slot; `post` means the open interval.
    pub fn get(&self, level: usize, slot: Slot, node: usize) -> Option<T> {
        self.values.get(level, slot, node)
    }

    /// Slotwise map keeping the explicit/derived status of `pre`.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.map(f),
            explicit_pre: self.explicit_pre,
        }
    }

    /// Slotwise combination; the result has explicit left limits if either
    /// input does.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        Ok(Self {
            values: self.values.zip_with(&other.values, f)?,
            explicit_pre: self.explicit_pre || other.explicit_pre,
        })
    }

    /// First node violating `flag`, scanning levels then nodes.
    pub fn first_violation(&self, flag: BarrierFlag) -> Option<(usize, usize)> {
        let last = self.depth();
        let v = &self.values;
        let scan = |range: std::ops::Range<usize>, bad: &dyn Fn(usize, usize) -> bool| {
            range
                .flat_map(|j| (0..v.at[j].len()).map(move |i| (j, i)))
                .find(|&(j, i)| bad(j, i))
        };
        match flag {
            BarrierFlag::RightUsc => scan(0..last, &|j, i| !(v.at[j][i] >= v.post[j][i])),
            BarrierFlag::XiLeqXiPlus => scan(0..last, &|j, i| !(v.at[j][i] <= v.post[j][i])),
            BarrierFlag::Cadlag => scan(0..last, &|j, i| v.at[j][i] != v.post[j][i]),
            BarrierFlag::LeftUsc => scan(1..last + 1, &|j, i| !(v.pre[j][i] <= v.at[j][i])),
            BarrierFlag::StrictLeftGap => {
                scan(1..last + 1, &|j, i| !(v.at[j][i] < v.pre[j][i]))
            }
        }
    }

    pub fn flags(&self) -> BarrierFlags {
        let ok = |f| self.first_violation(f).is_none();
        BarrierFlags {
            right_usc: ok(BarrierFlag::RightUsc),
            left_usc: ok(BarrierFlag::LeftUsc),
            xi_leq_xi_plus: ok(BarrierFlag::XiLeqXiPlus),
            strict_left_gap: ok(BarrierFlag::StrictLeftGap),
            cadlag: ok(BarrierFlag::Cadlag),
        }
    }

    /// Refuses with the first violating node unless `flag` holds.
    pub fn require(&self, flag: BarrierFlag) -> Result<()> {
        match self.first_violation(flag) {
            None => Ok(()),
            Some((level, node)) => Err(LabError::Precondition {
                what: format!("barrier is not {}", flag.name()),
                level,
                node,
            }),
        }
    }

    pub fn check(&self, model: &LatticeModel<T>) -> Result<()> {
        self.values.check(model)
    }

    /// Table with columns `level,nodeId,atValue,openValue,preValue`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "nodeId", "atValue", "openValue", "preValue"])?;
        let fmt = |x: Option<T>| x.map_or(String::new(), |v| v.to_f64_lossy().to_string());
        for j in 0..self.levels() {
            for i in 0..self.values.at[j].len() {
                w.write_record([
                    j.to_string(),
                    i.to_string(),
                    fmt(self.get(j, Slot::At, i)),
                    fmt(self.get(j, Slot::Post, i)),
                    fmt(self.get(j, Slot::Pre, i)),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `level,nodeId,atValue,openValue[,preValue]`. Left limits are
    /// derived unless a `preValue` column is present and non-empty.
    pub fn read_csv<R: Read>(model: &LatticeModel<T>, input: R) -> Result<Self> {
        let table = read_barrier_table(input)?;
        let last = model.depth();
        let mut values = SlotProcess::constant(model, T::nan());
        let mut any_pre = false;
        for row in table {
            let (j, i) = (row.level, row.node);
            if j > last || i >= model.count(j) {
                return Err(LabError::Shape(format!("row for level {j}, node {i} outside the model")));
            }
            values.at[j][i] = T::lit(row.at);
            if j < last {
                let open = row.open.ok_or(LabError::MissingValue { level: j, node: i })?;
                values.post[j][i] = T::lit(open);
            }
            if let (Some(p), true) = (row.pre, j > 0) {
                values.pre[j][i] = T::lit(p);
                any_pre = true;
            }
        }
        for (j, slot, i, v) in values.iter() {
            if v.is_nan() && (slot != Slot::Pre || any_pre) {
                return Err(LabError::MissingValue { level: j, node: i });
            }
        }
        if any_pre {
            Self::from_slots(model, values)
        } else {
            derive_pre(model, &mut values, false);
            Ok(Self {
                values,
                explicit_pre: false,
            })
        }
    }
}

/// One row of a barrier table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct BarrierRow {
    pub level: usize,
    #[serde(rename = "nodeId")]
    pub node: usize,
    #[serde(rename = "atValue")]
    pub at: f64,
    #[serde(rename = "openValue", default)]
    pub open: Option<f64>,
    #[serde(rename = "preValue", default)]
    pub pre: Option<f64>,
}

pub fn read_barrier_table<R: Read>(input: R) -> Result<Vec<BarrierRow>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    r.deserialize().map(|row| row.map_err(LabError::from)).collect()
}

/// Barrier whose instant and open-interval layers coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct CadlagBarrier<T>(LadlagBarrier<T>);

impl<T: Real> CadlagBarrier<T> {
    pub fn new(barrier: LadlagBarrier<T>) -> Result<Self> {
        barrier.require(BarrierFlag::Cadlag)?;
        Ok(Self(barrier))
    }

    pub fn as_ladlag(&self) -> &LadlagBarrier<T> {
        &self.0
    }

    pub fn into_ladlag(self) -> LadlagBarrier<T> {
        self.0
    }
}

impl<T> std::ops::Deref for CadlagBarrier<T> {
    type Target = LadlagBarrier<T>;
    fn deref(&self) -> &LadlagBarrier<T> {
        &self.0
    }
}

/// Smallest cadlag barrier above `barrier`: `max(at, open)` on both layers.
pub fn upper_cadlag_envelope<T: Real>(
    model: &LatticeModel<T>,
    barrier: &LadlagBarrier<T>,
) -> Result<CadlagBarrier<T>> {
    barrier.check(model)?;
    let last = model.depth();
    let mut v = barrier.values.clone();
    for j in 0..last {
        for i in 0..model.count(j) {
            let m = v.at[j][i].max(v.post[j][i]);
            v.at[j][i] = m;
            v.post[j][i] = m;
        }
    }
    derive_pre(model, &mut v, barrier.explicit_pre);
    CadlagBarrier::new(LadlagBarrier {
        values: v,
        explicit_pre: barrier.explicit_pre,
    })
}

/// Refined level holding base level `k`.
pub fn refined_level(k: usize) -> usize {
    2 * k
}

/// The `n`-th cadlag approximation: on the refined lattice the barrier holds
/// `max(at, open)` over the micro window after each instant and the open
/// value afterwards.
pub fn cadlag_approx_sequence<T: Real>(
    model: &LatticeModel<T>,
    barrier: &LadlagBarrier<T>,
    n: u32,
) -> Result<(LatticeModel<T>, CadlagBarrier<T>)> {
    if n == 0 {
        return Err(LabError::Config("refinement index must be at least 1".into()));
    }
    barrier.check(model)?;
    barrier.require(BarrierFlag::RightUsc)?;
    let refined = model.refine(n)?;
    let last = model.depth();
    let mut v = SlotProcess::zeros(&refined);
    for k in 0..last {
        for i in 0..model.count(k) {
            let spike = barrier.at(k)[i].max(barrier.open(k)[i]);
            let open = barrier.open(k)[i];
            v.at[2 * k][i] = spike;
            v.post[2 * k][i] = spike;
            v.at[2 * k + 1][i] = open;
            v.post[2 * k + 1][i] = open;
        }
    }
    v.at[2 * last].copy_from_slice(barrier.terminal());
    derive_pre(&refined, &mut v, false);
    if barrier.explicit_pre {
        for k in 1..=last {
            v.pre[2 * k].copy_from_slice(barrier.pre(k));
        }
    }
    let b = CadlagBarrier::new(LadlagBarrier {
        values: v,
        explicit_pre: barrier.explicit_pre,
    })?;
    Ok((refined, b))
}

/// Base barrier placed on a refined lattice without smearing: the instant
/// value sits at `2k` and the open value covers the rest of the step.
pub fn lift_to_refined<T: Real>(
    model: &LatticeModel<T>,
    refined: &LatticeModel<T>,
    barrier: &LadlagBarrier<T>,
) -> Result<LadlagBarrier<T>> {
    let last = model.depth();
    if refined.depth() != 2 * last {
        return Err(LabError::Shape("refined lattice does not match the base".into()));
    }
    let mut v = SlotProcess::zeros(refined);
    for k in 0..last {
        v.at[2 * k].copy_from_slice(barrier.at(k));
        v.post[2 * k].copy_from_slice(barrier.open(k));
        v.at[2 * k + 1].copy_from_slice(barrier.open(k));
        v.post[2 * k + 1].copy_from_slice(barrier.open(k));
    }
    v.at[2 * last].copy_from_slice(barrier.terminal());
    derive_pre(refined, &mut v, false);
    if barrier.explicit_pre {
        for k in 1..=last {
            v.pre[2 * k].copy_from_slice(barrier.pre(k));
        }
    }
    Ok(LadlagBarrier {
        values: v,
        explicit_pre: barrier.explicit_pre,
    })
}

/// Restricts a refined slot process to the base grid: instants and left
/// limits come from level `2k`, the right limit from the value just after
/// the micro window (level `2k + 1`).
pub fn restrict_to_base<T: Real>(
    model: &LatticeModel<T>,
    refined: &SlotProcess<T>,
) -> Result<SlotProcess<T>> {
    let last = model.depth();
    if refined.levels() != 2 * last + 1 {
        return Err(LabError::Shape("refined process does not match the base".into()));
    }
    let mut out = SlotProcess::zeros(model);
    for k in 0..=last {
        out.at[k].clone_from(&refined.at[2 * k]);
        if k > 0 {
            out.pre[k].clone_from(&refined.pre[2 * k]);
        }
        if k < last {
            out.post[k].clone_from(&refined.at[2 * k + 1]);
        }
    }
    Ok(out)
}

/// Pathwise supremum of `|a - b|` over every slot on each path, and the
/// probability-weighted L2 norm of those suprema.
pub fn sup_distance<T: Real>(
    model: &LatticeModel<T>,
    a: &SlotProcess<T>,
    b: &SlotProcess<T>,
) -> Result<(Vec<T>, T)> {
    a.check(model)?;
    b.check(model)?;
    let diff = a.zip_with(b, |x, y| (x - y).abs())?;
    let node_max = |j: usize, i: usize| {
        Slot::ALL
            .iter()
            .filter_map(|&s| diff.get(j, s, i))
            .fold(T::zero(), T::max)
    };
    let mut run: Vec<T> = vec![node_max(0, 0)];
    for j in 1..model.levels() {
        run = (0..model.count(j))
            .map(|i| run[model.parent(j, i)].max(node_max(j, i)))
            .collect();
    }
    let l2 = run
        .iter()
        .zip(model.path_probs(model.depth()))
        .map(|(&s, &p)| p * s * s)
        .sum::<T>()
        .sqrt();
    Ok((run, l2))
}

/// Node selection for spike barriers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeSelect {
    /// `"all"`, `"first"`, `"last"`, `"even"` or `"odd"`.
    Named(String),
    Ids(Vec<usize>),
}

impl NodeSelect {
    pub fn matches(&self, node: usize, count: usize) -> Result<bool> {
        Ok(match self {
            NodeSelect::Ids(ids) => ids.contains(&node),
            NodeSelect::Named(name) => match name.as_str() {
                "all" => true,
                "first" => node == 0,
                "last" => node + 1 == count,
                "even" => node % 2 == 0,
                "odd" => node % 2 == 1,
                other => return Err(LabError::Config(format!("unknown node predicate {other:?}"))),
            },
        })
    }
}

/// Barrier description of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
pub enum BarrierSpec {
    /// `(strike - S)^+` with `S` moving by `up`/`down` on the Brownian sign.
    /// Left limits equal the instant payoff.
    AmericanPut {
        strike: f64,
        spot: f64,
        up: f64,
        down: f64,
    },
    Constant { value: f64 },
    /// `base` everywhere plus `height` on the instant slot of the selected
    /// nodes of `level`.
    Spike {
        level: usize,
        nodes: NodeSelect,
        height: f64,
        #[serde(default)]
        base: f64,
    },
    RandomIrregular {
        seed: u64,
        #[serde(default)]
        flags: Vec<BarrierFlag>,
    },
    /// CSV table `level,nodeId,atValue,openValue[,preValue]`, relative to
    /// the scenario file.
    Table { path: String },
}

impl BarrierSpec {
    pub fn build<T: Real>(&self, model: &LatticeModel<T>, base_dir: &Path) -> Result<LadlagBarrier<T>> {
        match self {
            BarrierSpec::AmericanPut { strike, spot, up, down } => {
                if !(*up > 0.0 && *down > 0.0 && *spot > 0.0) {
                    return Err(LabError::Config("american put needs positive spot, up, down".into()));
                }
                let price = asset_prices(model, T::lit(*spot), T::lit(*up), T::lit(*down));
                let k = T::lit(*strike);
                Ok(LadlagBarrier::from_fn(model, |j, i| {
                    crate::scalar::pos_part(k - price[j][i])
                })
                .with_left_limits_at_instants())
            }
            BarrierSpec::Constant { value } => Ok(LadlagBarrier::constant(model, T::lit(*value))),
            BarrierSpec::Spike { level, nodes, height, base } => {
                if *level > model.depth() {
                    return Err(LabError::Config(format!("spike level {level} beyond the lattice")));
                }
                let mut b = LadlagBarrier::constant(model, T::lit(*base));
                let count = model.count(*level);
                for i in 0..count {
                    if nodes.matches(i, count)? {
                        b.values.at[*level][i] += T::lit(*height);
                    }
                }
                Ok(b)
            }
            BarrierSpec::RandomIrregular { seed, flags } => random_irregular(model, *seed, flags),
            BarrierSpec::Table { path } => {
                let file = std::fs::File::open(base_dir.join(path))
                    .map_err(|e| LabError::Config(format!("barrier table {path}: {e}")))?;
                LadlagBarrier::read_csv(model, file)
            }
        }
    }
}

/// Asset price per node: multiplied by `up` on a positive Brownian branch
/// and by `down` on a negative one; jumps and micro-steps leave it alone.
pub fn asset_prices<T: Real>(model: &LatticeModel<T>, spot: T, up: T, down: T) -> Vec<Vec<T>> {
    let mut out = vec![vec![spot]];
    for j in 1..model.levels() {
        let step = model.step(j - 1);
        let prev = &out[j - 1];
        let level: Vec<T> = (0..model.count(j))
            .map(|i| {
                let br = &step.branches[model.branch_index(j, i)];
                let s = prev[model.parent(j, i)];
                if br.dw > T::zero() {
                    s * up
                } else if br.dw < T::zero() {
                    s * down
                } else {
                    s
                }
            })
            .collect();
        out.push(level);
    }
    out
}

/// Random barrier satisfying the requested flags. Contradictory requests
/// (for instance left-USC together with a strict left gap) are refused.
pub fn random_irregular<T: Real>(
    model: &LatticeModel<T>,
    seed: u64,
    flags: &[BarrierFlag],
) -> Result<LadlagBarrier<T>> {
    let want = |f| flags.contains(&f);
    if want(BarrierFlag::LeftUsc) && want(BarrierFlag::StrictLeftGap) {
        return Err(LabError::Config("leftUSC and strictLeftGap exclude each other".into()));
    }
    let cadlag = want(BarrierFlag::Cadlag)
        || (want(BarrierFlag::RightUsc) && want(BarrierFlag::XiLeqXiPlus));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = model.depth();
    let mut at: Vec<Vec<T>> = Vec::with_capacity(last + 1);
    let mut open: Vec<Vec<T>> = Vec::with_capacity(last);
    for j in 0..=last {
        let mut at_j = Vec::with_capacity(model.count(j));
        for i in 0..model.count(j) {
            let v = if j == 0 {
                rng.random_range(-1.0..1.0)
            } else {
                let pre = open[j - 1][model.parent(j, i)].to_f64_lossy();
                let centred = 0.7 * pre;
                if want(BarrierFlag::StrictLeftGap) {
                    pre - rng.random_range(0.05..1.0)
                } else if want(BarrierFlag::LeftUsc) {
                    pre + rng.random_range(0.0..1.0)
                } else {
                    centred + rng.random_range(-1.0..1.0)
                }
            };
            at_j.push(T::lit(v));
        }
        if j < last {
            let open_j = at_j
                .iter()
                .map(|&a| {
                    let a = a.to_f64_lossy();
                    let v = if cadlag {
                        a
                    } else if want(BarrierFlag::RightUsc) {
                        a - rng.random_range(0.0..1.5)
                    } else if want(BarrierFlag::XiLeqXiPlus) {
                        a + rng.random_range(0.0..1.5)
                    } else {
                        a + rng.random_range(-1.5..1.5)
                    };
                    T::lit(v)
                })
                .collect();
            open.push(open_j);
        }
        at.push(at_j);
    }
    LadlagBarrier::new(model, at, open)
}
