//! Reflected backward equations with ladlag barriers.
//!
//! The backward sweep reflects three times per instant: at the left limit
//! (`pre`), on the open interval (`post`) and at the instant itself (`at`).
//! Each reflection charges its own increment ledger.

pub mod approx;
pub mod pengxu;
pub mod penalty;
pub mod shift;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::barrier::{BarrierRow, LadlagBarrier};
use crate::bsde::{check_step_size, step_node};
use crate::driver::{Driver, Site};
use crate::error::{LabError, Result};
use crate::lattice::{LatticeModel, MartingaleCoeffs};
use crate::process::{Slot, SlotProcess};
use crate::scalar::{pairwise_sum, Real};

pub use approx::{solve_via_monotone_approx, ApproxRun};
pub use penalty::{solve_via_penalization, PenaltyRun, PenaltyStep};
pub use pengxu::{peng_xu_check, sample_xi_star, PengXuReport};
pub use shift::{right_shift_solution, ShiftReport};

/// `(Y, Z, l, A)` of a reflected equation. `da` holds the increments of
/// `A`: the `pre` layer is the predictable left jump, `at` the right jump
/// and `post` the open-interval charge.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionQuadruple<T> {
    pub y: SlotProcess<T>,
    /// Martingale coefficients of `Y_pre(k + 1)` at each level `k < L`.
    pub coeffs: Vec<MartingaleCoeffs<T>>,
    pub da: SlotProcess<T>,
    /// Unreflected continuation value at each level `k < L`.
    pub continuation: Vec<Vec<T>>,
}

impl<T: Real> SolutionQuadruple<T> {
    /// Accumulated `A` at every slot, starting from `A_at(0) = 0`.
    pub fn accumulated(&self, model: &LatticeModel<T>) -> SlotProcess<T> {
        let mut a = SlotProcess::zeros(model);
        let last = model.depth();
        for j in 0..=last {
            for i in 0..model.count(j) {
                if j > 0 {
                    let p = model.parent(j, i);
                    a.pre[j][i] = a.post[j - 1][p] + self.da.post[j - 1][p];
                    a.at[j][i] = a.pre[j][i] + self.da.pre[j][i];
                }
                if j < last {
                    a.post[j][i] = a.at[j][i] + self.da.at[j][i];
                }
            }
        }
        a
    }

    /// Total `A_T` per terminal node.
    pub fn terminal_a(&self, model: &LatticeModel<T>) -> Vec<T> {
        self.accumulated(model).at[model.depth()].clone()
    }

    /// CSV with columns `level,nodeId,slot,Y,Z,l_1..l_m,dAd,dAplus,dAopen`.
    /// `Z` and `l` refer to the step leaving the level and are empty at the
    /// terminal level; each row carries only its own slot's increment.
    pub fn write_csv<W: Write>(&self, model: &LatticeModel<T>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let marks = model.marks();
        let mut header = vec!["level".to_string(), "nodeId".into(), "slot".into(), "Y".into(), "Z".into()];
        header.extend((1..=marks).map(|m| format!("l_{m}")));
        header.extend(["dAd".into(), "dAplus".into(), "dAopen".into()]);
        w.write_record(&header)?;
        let num = |v: T| v.to_f64_lossy().to_string();
        for (j, slot, i, y) in self.y.iter() {
            let mut rec = vec![j.to_string(), i.to_string(), slot.name().to_string(), num(y)];
            if let Some(c) = self.coeffs.get(j) {
                rec.push(num(c.z[i]));
                rec.extend((0..marks).map(|m| num(c.l[m][i])));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), marks + 1));
            }
            let d = self.da.get(j, slot, i).unwrap_or_else(T::zero);
            let zero = "0".to_string();
            let (dd, dp, dop) = match slot {
                Slot::Pre => (num(d), zero.clone(), zero),
                Slot::At => (zero.clone(), num(d), zero),
                Slot::Post => (zero.clone(), zero, num(d)),
            };
            rec.extend([dd, dp, dop]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Direct backward recursion for the reflected equation with barrier
/// `barrier`. Runs on any barrier; the theory covers right-USC ones.
pub fn solve_reflected<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    barrier: &LadlagBarrier<T>,
) -> Result<SolutionQuadruple<T>> {
    check_step_size(model, driver)?;
    barrier.check(model)?;
    let last = model.depth();
    let marks = model.marks();
    let mut y = SlotProcess::zeros(model);
    let mut da = SlotProcess::zeros(model);
    let mut coeffs = vec![MartingaleCoeffs::zeros(0, marks); last];
    let mut continuation = vec![Vec::new(); last];
    y.at[last].copy_from_slice(barrier.terminal());
    let mut l = vec![T::zero(); marks];
    for j in (1..=last).rev() {
        for i in 0..model.count(j) {
            let xi = barrier.pre(j)[i];
            let at = y.at[j][i];
            let v = xi.max(at);
            y.pre[j][i] = v;
            da.pre[j][i] = v - at;
        }
        let k = j - 1;
        let n = model.count(k);
        let b = model.branching(k);
        let mut mc = MartingaleCoeffs::zeros(n, marks);
        mc.degenerate = !model.step(k).is_stochastic();
        let mut cont = Vec::with_capacity(n);
        for (i, kids) in y.pre[j].chunks_exact(b).enumerate() {
            let (c, z) = step_node(model, driver, k, i, kids, &mut l, None)?;
            mc.z[i] = z;
            for (m, &lm) in l.iter().enumerate() {
                mc.l[m][i] = lm;
            }
            cont.push(c);
        }
        for i in 0..n {
            let c = cont[i];
            let post = barrier.open(k)[i].max(c);
            y.post[k][i] = post;
            da.post[k][i] = post - c;
            let at = barrier.at(k)[i].max(post);
            y.at[k][i] = at;
            da.at[k][i] = at - post;
        }
        coeffs[k] = mc;
        continuation[k] = cont;
    }
    Ok(SolutionQuadruple {
        y,
        coeffs,
        da,
        continuation,
    })
}

/// Largest violation of `slot` value `(Y - xi) * dA` and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Worst {
    pub level: usize,
    pub node: usize,
    pub value: f64,
}

/// Expected complementarity products of the three increment ledgers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkorokhodReport {
    /// Left-jump ledger against the left-limit barrier.
    pub s1: f64,
    /// Right-jump ledger against the instant barrier.
    pub s2: f64,
    /// Open-interval ledger against the open barrier.
    pub s3: f64,
    pub worst: [Option<Worst>; 3],
}

impl SkorokhodReport {
    pub fn max_abs(&self) -> f64 {
        self.s1.abs().max(self.s2.abs()).max(self.s3.abs())
    }
}

pub fn skorokhod_residuals<T: Real>(
    model: &LatticeModel<T>,
    q: &SolutionQuadruple<T>,
    barrier: &LadlagBarrier<T>,
) -> Result<SkorokhodReport> {
    barrier.check(model)?;
    q.y.check(model)?;
    q.da.check(model)?;
    let mut sums = [T::zero(); 3];
    let mut worst: [Option<Worst>; 3] = [None; 3];
    for (s, slot) in Slot::ALL.into_iter().enumerate() {
        let mut terms = Vec::new();
        for j in 0..model.levels() {
            if !q.y.has_slot(j, slot) {
                continue;
            }
            let probs = model.path_probs(j);
            for i in 0..model.count(j) {
                let gap = q.y.layer(slot)[j][i] - barrier.slots().layer(slot)[j][i];
                let prod = gap * q.da.layer(slot)[j][i];
                terms.push(probs[i] * prod);
                let v = prod.to_f64_lossy().abs();
                if v > 0.0 && worst[s].is_none_or(|w| v > w.value) {
                    worst[s] = Some(Worst { level: j, node: i, value: v });
                }
            }
        }
        sums[s] = pairwise_sum(&terms);
    }
    Ok(SkorokhodReport {
        s1: sums[0].to_f64_lossy(),
        s2: sums[1].to_f64_lossy(),
        s3: sums[2].to_f64_lossy(),
        worst,
    })
}

/// Residuals of every defining property of a solution quadruple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadrupleCheck {
    /// `max(xi - Y)` over all slots (positive means Y dips below).
    pub barrier_shortfall: f64,
    /// Most negative increment (positive number when any is negative).
    pub negative_increment: f64,
    pub right_jump_identity: f64,
    pub left_jump_identity: f64,
    pub terminal: f64,
    /// Backward equation between `post(k)` and `pre(k + 1)`.
    pub equation: f64,
    pub skorokhod: SkorokhodReport,
}

impl QuadrupleCheck {
    pub fn max_residual(&self) -> f64 {
        [
            self.barrier_shortfall,
            self.negative_increment,
            self.right_jump_identity,
            self.left_jump_identity,
            self.terminal,
            self.equation,
            self.skorokhod.max_abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Verifies `q` against `barrier` and the backward equation of `driver`.
pub fn check_quadruple<T: Real, D: Driver<T> + ?Sized>(
    model: &LatticeModel<T>,
    driver: &D,
    q: &SolutionQuadruple<T>,
    barrier: &LadlagBarrier<T>,
) -> Result<QuadrupleCheck> {
    let skorokhod = skorokhod_residuals(model, q, barrier)?;
    let f = |v: T| v.to_f64_lossy();
    let barrier_shortfall = f(q.y.max_shortfall(barrier.slots())?);
    let negative_increment = q
        .da
        .iter()
        .fold(0.0f64, |m, (_, _, _, v)| m.max(-f(v)));
    let last = model.depth();
    let mut right = 0.0f64;
    let mut left = 0.0f64;
    let mut equation = 0.0f64;
    let mut l = vec![T::zero(); model.marks()];
    for j in 0..=last {
        for i in 0..model.count(j) {
            if j < last {
                right = right.max(f((q.y.at[j][i] - q.y.post[j][i] - q.da.at[j][i]).abs()));
            }
            if j > 0 {
                left = left.max(f((q.y.pre[j][i] - q.y.at[j][i] - q.da.pre[j][i]).abs()));
            }
        }
        if j < last {
            let b = model.branching(j);
            let w = model.step(j).weight;
            for (i, kids) in q.y.pre[j + 1].chunks_exact(b).enumerate() {
                let base = model.node_cond_exp(j, kids);
                let z = model.node_coeffs(j, kids, &mut l);
                let c = q.y.post[j][i] - q.da.post[j][i];
                let site = Site::new(j, i, model.time(j));
                let r = c - base - w * driver.eval(site, c, z, &l);
                equation = equation.max(f(r.abs()));
            }
        }
    }
    let terminal = q.y.at[last]
        .iter()
        .zip(barrier.terminal())
        .fold(0.0f64, |m, (&a, &b)| m.max(f((a - b).abs())));
    Ok(QuadrupleCheck {
        barrier_shortfall,
        negative_increment,
        right_jump_identity: right,
        left_jump_identity: left,
        terminal,
        equation,
        skorokhod,
    })
}

/// One row of a quadruple dump.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupleRow {
    pub level: usize,
    pub node: usize,
    pub slot: Slot,
    pub y: f64,
    pub da: f64,
}

pub fn read_quadruple_csv<R: Read>(input: R) -> Result<Vec<QuadrupleRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::Config(format!("quadruple table lacks column {name}")))
    };
    let (cl, cn, cs, cy) = (col("level")?, col("nodeId")?, col("slot")?, col("Y")?);
    let (cd, cp, co) = (col("dAd")?, col("dAplus")?, col("dAopen")?);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|e| LabError::Config(format!("bad number {:?}: {e}", field(c))))
        };
        let uint = |c: usize| -> Result<usize> {
            field(c)
                .parse::<usize>()
                .map_err(|e| LabError::Config(format!("bad index {:?}: {e}", field(c))))
        };
        let slot = Slot::parse(field(cs))
            .ok_or_else(|| LabError::Config(format!("bad slot {:?}", field(cs))))?;
        let da = match slot {
            Slot::Pre => num(cd)?,
            Slot::At => num(cp)?,
            Slot::Post => num(co)?,
        };
        rows.push(QuadrupleRow {
            level: uint(cl)?,
            node: uint(cn)?,
            slot,
            y: num(cy)?,
            da,
        });
    }
    Ok(rows)
}

/// Checks that need no probabilities: barrier domination, nonnegative
/// increments, jump identities, complementarity per node and the terminal
/// condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableVerification {
    pub rows: usize,
    pub barrier_shortfall: f64,
    pub negative_increment: f64,
    pub right_jump_identity: f64,
    pub left_jump_identity: f64,
    pub complementarity: f64,
    pub terminal: f64,
    pub passed: bool,
}

pub fn verify_tables(
    quad: &[QuadrupleRow],
    barrier: &[BarrierRow],
    tol: f64,
) -> Result<TableVerification> {
    let mut y: BTreeMap<(usize, usize, Slot), (f64, f64)> = BTreeMap::new();
    for r in quad {
        if y.insert((r.level, r.node, r.slot), (r.y, r.da)).is_some() {
            return Err(LabError::Config(format!(
                "duplicate row for level {}, node {}, slot {}",
                r.level,
                r.node,
                r.slot.name()
            )));
        }
    }
    let last = quad.iter().map(|r| r.level).max().unwrap_or(0);
    let mut counts = vec![0usize; last + 1];
    let mut xi: BTreeMap<(usize, usize), &BarrierRow> = BTreeMap::new();
    for b in barrier {
        if b.level > last {
            return Err(LabError::Shape(format!("barrier row at level {} beyond the table", b.level)));
        }
        counts[b.level] = counts[b.level].max(b.node + 1);
        xi.insert((b.level, b.node), b);
    }
    let missing = |level, node| LabError::MissingValue { level, node };
    let get = |j: usize, i: usize, s: Slot| y.get(&(j, i, s)).copied().ok_or(missing(j, i));
    let mut rep = TableVerification {
        rows: quad.len(),
        barrier_shortfall: 0.0,
        negative_increment: 0.0,
        right_jump_identity: 0.0,
        left_jump_identity: 0.0,
        complementarity: 0.0,
        terminal: 0.0,
        passed: false,
    };
    for j in 0..=last {
        if counts[j] == 0 {
            return Err(missing(j, 0));
        }
        for i in 0..counts[j] {
            let b = xi.get(&(j, i)).ok_or(missing(j, i))?;
            let mut barrier_at = vec![(Slot::At, b.at)];
            if j < last {
                barrier_at.push((Slot::Post, b.open.ok_or(missing(j, i))?));
            }
            if j > 0 {
                let pre = match b.pre {
                    Some(p) => p,
                    None => {
                        let branching = counts[j] / counts[j - 1].max(1);
                        let parent = xi.get(&(j - 1, i / branching.max(1))).ok_or(missing(j - 1, 0))?;
                        parent.open.ok_or(missing(j - 1, i / branching.max(1)))?
                    }
                };
                barrier_at.push((Slot::Pre, pre));
            }
            for (slot, xv) in barrier_at {
                let (yv, d) = get(j, i, slot)?;
                rep.barrier_shortfall = rep.barrier_shortfall.max(xv - yv);
                rep.negative_increment = rep.negative_increment.max(-d);
                rep.complementarity = rep.complementarity.max(((yv - xv) * d).abs());
            }
            let (y_at, _) = get(j, i, Slot::At)?;
            if j < last {
                let (y_post, _) = get(j, i, Slot::Post)?;
                let (_, d) = get(j, i, Slot::At)?;
                rep.right_jump_identity = rep.right_jump_identity.max((y_at - y_post - d).abs());
            } else {
                rep.terminal = rep.terminal.max((y_at - b.at).abs());
            }
            if j > 0 {
                let (y_pre, d) = get(j, i, Slot::Pre)?;
                rep.left_jump_identity = rep.left_jump_identity.max((y_pre - y_at - d).abs());
            }
        }
    }
    rep.passed = [
        rep.barrier_shortfall,
        rep.negative_increment,
        rep.right_jump_identity,
        rep.left_jump_identity,
        rep.complementarity,
        rep.terminal,
    ]
    .iter()
    .all(|&v| v <= tol);
    Ok(rep)
}
