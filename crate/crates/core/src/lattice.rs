//! Finite event trees carrying a Brownian branch and compensated Poisson
//! jump branches, with exact conditional expectations on them.
//!
//! Nodes at a level are numbered `0..count(level)`. Every node of a level
//! shares the same branch table, so the children of node `i` at level `j`
//! are `i * b_j .. (i + 1) * b_j` where `b_j` is the branch count of step
//! `j`. The tree never recombines.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::scalar::Real;

/// Uniform macro grid `t_k = k * T / N`, with an optional micro width used
/// by refined lattices.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    horizon: T,
    steps: usize,
    micro_width: T,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(horizon: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(LabError::InvalidGrid("N must be at least 1".into()));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(LabError::InvalidGrid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(Self {
            horizon,
            steps,
            micro_width: T::zero(),
        })
    }

    pub fn with_micro_width(mut self, width: T) -> Result<Self> {
        if width < T::zero() || width >= self.dt() {
            return Err(LabError::InvalidGrid(format!(
                "micro width {width} must lie in [0, dt)"
            )));
        }
        self.micro_width = width;
        Ok(self)
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn micro_width(&self) -> T {
        self.micro_width
    }

    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.steps)
    }

    pub fn instant(&self, k: usize) -> T {
        if k == self.steps {
            self.horizon
        } else {
            self.dt() * T::from_usize_lossy(k)
        }
    }

    pub fn instants(&self) -> Vec<T> {
        (0..=self.steps).map(|k| self.instant(k)).collect()
    }
}

/// One outgoing branch of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub prob: T,
    pub dw: T,
    /// Index of the mark that jumps on this branch, if any.
    pub jump: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Stochastic,
    /// Deterministic single-child transition inserted by refinement.
    Micro,
}

/// Transition from level `j` to level `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<T> {
    pub kind: StepKind,
    /// Elapsed calendar time between the two levels.
    pub elapsed: T,
    /// Time weight of the driver integral over this step.
    pub weight: T,
    pub branches: Vec<Branch<T>>,
}

impl<T: Real> Step<T> {
    pub fn branching(&self) -> usize {
        self.branches.len()
    }

    pub fn is_stochastic(&self) -> bool {
        self.kind == StepKind::Stochastic
    }

    fn brownian_variance(&self) -> T {
        self.branches.iter().map(|b| b.prob * b.dw * b.dw).sum()
    }

    fn jump_prob(&self, mark: usize) -> T {
        self.branches
            .iter()
            .filter(|b| b.jump == Some(mark))
            .map(|b| b.prob)
            .sum()
    }
}

/// Non-recombining event tree with exact transition probabilities.
#[derive(Debug, Clone)]
pub struct LatticeModel<T> {
    grid: TimeGrid<T>,
    intensities: Vec<T>,
    steps: Vec<Step<T>>,
    times: Vec<T>,
    base_level: Vec<Option<usize>>,
    counts: Vec<usize>,
    path_probs: Vec<Vec<T>>,
    // per step: (E[dW^2], lambda_i, E[dN_i^2]) derived from the branch table
    moments: Vec<StepMoments<T>>,
}

#[derive(Debug, Clone)]
struct StepMoments<T> {
    var_w: T,
    lambda: Vec<T>,
    var_n: Vec<T>,
}

/// Least-squares martingale coefficients of a level-`k + 1` process.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleCoeffs<T> {
    pub z: Vec<T>,
    /// `l[mark][node]`.
    pub l: Vec<Vec<T>>,
    /// Set when the step is deterministic and the coefficients are zero by
    /// convention.
    pub degenerate: bool,
}

impl<T: Real> MartingaleCoeffs<T> {
    pub fn zeros(nodes: usize, marks: usize) -> Self {
        Self {
            z: vec![T::zero(); nodes],
            l: vec![vec![T::zero(); nodes]; marks],
            degenerate: true,
        }
    }

    /// Jump coefficients of one node as a vector over marks.
    pub fn l_at(&self, node: usize) -> Vec<T> {
        self.l.iter().map(|per_mark| per_mark[node]).collect()
    }
}

/// Residuals of the probability and moment identities of every step.
#[derive(Debug, Clone, Serialize)]
pub struct ModelDiagnostics {
    pub prob_sum: f64,
    pub nonpositive_prob: f64,
    pub mean_dw: f64,
    pub var_dw: f64,
    pub mean_dn: f64,
    pub cross_moment: f64,
    pub skipped_micro_steps: usize,
    pub pass: bool,
}

impl ModelDiagnostics {
    pub fn max_residual(&self) -> f64 {
        [
            self.prob_sum,
            self.nonpositive_prob,
            self.mean_dw,
            self.var_dw,
            self.mean_dn,
            self.cross_moment,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub const MODEL_TOLERANCE: f64 = 1e-12;

fn stochastic_branches<T: Real>(dt: T, intensities: &[T]) -> Vec<Branch<T>> {
    let half = T::lit(0.5);
    let sq = dt.sqrt();
    let lambdas: Vec<T> = intensities.iter().map(|&mu| mu * dt).collect();
    let no_jump = T::one() - lambdas.iter().copied().sum::<T>();
    let mut out = Vec::with_capacity(2 * (intensities.len() + 1));
    let outcomes = std::iter::once((None, no_jump))
        .chain(lambdas.iter().enumerate().map(|(i, &l)| (Some(i), l)));
    for (jump, weight) in outcomes {
        for dw in [sq, -sq] {
            out.push(Branch {
                prob: half * weight,
                dw,
                jump,
            });
        }
    }
    out
}

impl<T: Real> LatticeModel<T> {
    /// Builds the full tree for `grid` with one jump mark per intensity.
    pub fn build(grid: TimeGrid<T>, intensities: &[T]) -> Result<Self> {
        let dt = grid.dt();
        if intensities.iter().any(|&mu| mu < T::zero() || !mu.is_finite()) {
            return Err(LabError::InvalidGrid(
                "intensities must be finite and nonnegative".into(),
            ));
        }
        let total: T = intensities.iter().map(|&mu| mu * dt).sum();
        if total >= T::one() {
            return Err(LabError::ProbabilityOverflow {
                total: total.to_f64_lossy(),
            });
        }
        let branches = stochastic_branches(dt, intensities);
        let steps = (0..grid.steps())
            .map(|_| Step {
                kind: StepKind::Stochastic,
                elapsed: dt,
                weight: dt,
                branches: branches.clone(),
            })
            .collect();
        let base_level = (0..=grid.steps()).map(Some).collect();
        Self::from_parts(grid, intensities.to_vec(), steps, base_level)
    }

    /// Assembles a model from an explicit step table. No probability checks
    /// are made here; run [`LatticeModel::validate`] on the result.
    pub fn from_parts(
        grid: TimeGrid<T>,
        intensities: Vec<T>,
        steps: Vec<Step<T>>,
        base_level: Vec<Option<usize>>,
    ) -> Result<Self> {
        if base_level.len() != steps.len() + 1 {
            return Err(LabError::Shape(format!(
                "{} steps need {} level tags, got {}",
                steps.len(),
                steps.len() + 1,
                base_level.len()
            )));
        }
        if steps.iter().any(|s| s.branches.is_empty()) {
            return Err(LabError::Shape("every step needs a branch".into()));
        }
        let marks = intensities.len();
        if steps
            .iter()
            .flat_map(|s| s.branches.iter())
            .any(|b| b.jump.is_some_and(|m| m >= marks))
        {
            return Err(LabError::Shape("branch references unknown mark".into()));
        }
        let mut times = Vec::with_capacity(steps.len() + 1);
        let mut t = T::zero();
        times.push(t);
        for s in &steps {
            t += s.elapsed;
            times.push(t);
        }
        // snap tagged instants to the grid to avoid accumulated drift
        for (j, tag) in base_level.iter().enumerate() {
            if let Some(k) = tag {
                times[j] = grid.instant(*k);
            }
        }
        let mut counts = vec![1usize];
        let mut path_probs = vec![vec![T::one()]];
        for s in &steps {
            let b = s.branching();
            let prev = path_probs.last().unwrap();
            let mut next = Vec::with_capacity(prev.len() * b);
            for &p in prev {
                for br in &s.branches {
                    next.push(p * br.prob);
                }
            }
            counts.push(next.len());
            path_probs.push(next);
        }
        let moments = steps
            .iter()
            .map(|s| {
                let lambda: Vec<T> = (0..marks).map(|m| s.jump_prob(m)).collect();
                let var_n = (0..marks)
                    .map(|m| {
                        s.branches
                            .iter()
                            .map(|b| {
                                let d = indicator::<T>(b.jump == Some(m)) - lambda[m];
                                b.prob * d * d
                            })
                            .sum()
                    })
                    .collect();
                StepMoments {
                    var_w: s.brownian_variance(),
                    lambda,
                    var_n,
                }
            })
            .collect();
        Ok(Self {
            grid,
            intensities,
            steps,
            times,
            base_level,
            counts,
            path_probs,
            moments,
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn intensities(&self) -> &[T] {
        &self.intensities
    }

    pub fn marks(&self) -> usize {
        self.intensities.len()
    }

    /// Index of the last level.
    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn levels(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn step(&self, level: usize) -> &Step<T> {
        &self.steps[level]
    }

    pub fn steps(&self) -> &[Step<T>] {
        &self.steps
    }

    pub fn time(&self, level: usize) -> T {
        self.times[level]
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn count(&self, level: usize) -> usize {
        self.counts[level]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_nodes(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Base instant index of a level, `None` for the end of a micro-step.
    pub fn base_instant(&self, level: usize) -> Option<usize> {
        self.base_level[level]
    }

    /// Level carrying base instant `k`.
    pub fn level_of_instant(&self, k: usize) -> Option<usize> {
        self.base_level.iter().position(|t| *t == Some(k))
    }

    pub fn is_refined(&self) -> bool {
        self.steps.iter().any(|s| s.kind == StepKind::Micro)
    }

    pub fn branching(&self, level: usize) -> usize {
        self.steps[level].branching()
    }

    pub fn children(&self, level: usize, node: usize) -> std::ops::Range<usize> {
        let b = self.branching(level);
        node * b..(node + 1) * b
    }

    /// Parent of `node` at `level >= 1`.
    pub fn parent(&self, level: usize, node: usize) -> usize {
        node / self.branching(level - 1)
    }

    /// Branch index leading into `node` at `level >= 1`.
    pub fn branch_index(&self, level: usize, node: usize) -> usize {
        node % self.branching(level - 1)
    }

    /// Ancestor of `node` at `level` living at the earlier level `target`.
    pub fn ancestor(&self, mut level: usize, mut node: usize, target: usize) -> usize {
        while level > target {
            node = self.parent(level, node);
            level -= 1;
        }
        node
    }

    /// Unconditional probability of reaching each node of `level`.
    pub fn path_probs(&self, level: usize) -> &[T] {
        &self.path_probs[level]
    }

    /// Declared per-step jump probability `mu_i * dt` of a stochastic step.
    pub fn lambda(&self, level: usize, mark: usize) -> T {
        self.intensities[mark] * self.steps[level].weight
    }

    fn check_len(&self, level: usize, values: &[T]) -> Result<()> {
        if values.len() != self.count(level) {
            return Err(LabError::MissingValue {
                level,
                node: values.len().min(self.count(level)),
            });
        }
        Ok(())
    }

    /// `E[values | F_level]` for a process living on `level + 1`.
    pub fn cond_exp(&self, level: usize, values: &[T]) -> Result<Vec<T>> {
        self.check_len(level + 1, values)?;
        let b = self.branching(level);
        Ok(values
            .chunks_exact(b)
            .map(|kids| self.node_cond_exp(level, kids))
            .collect())
    }

    /// Conditional expectation at one node given its children's values.
    pub fn node_cond_exp(&self, level: usize, kids: &[T]) -> T {
        kids.iter()
            .zip(&self.steps[level].branches)
            .fold(T::zero(), |acc, (&v, br)| acc + br.prob * v)
    }

    /// Projection coefficients `Z = E[v dW]/E[dW^2]` and
    /// `l_i = E[v dN_i]/E[dN_i^2]` per node of `level`.
    pub fn martingale_coeffs(&self, level: usize, values: &[T]) -> Result<MartingaleCoeffs<T>> {
        self.check_len(level + 1, values)?;
        let n = self.count(level);
        let marks = self.marks();
        if !self.steps[level].is_stochastic() {
            return Ok(MartingaleCoeffs::zeros(n, marks));
        }
        let b = self.branching(level);
        let mut z = Vec::with_capacity(n);
        let mut l = vec![Vec::with_capacity(n); marks];
        let mut buf = vec![T::zero(); marks];
        for kids in values.chunks_exact(b) {
            z.push(self.node_coeffs(level, kids, &mut buf));
            for (lm, &v) in l.iter_mut().zip(&buf) {
                lm.push(v);
            }
        }
        Ok(MartingaleCoeffs {
            z,
            l,
            degenerate: false,
        })
    }

    /// Martingale coefficients of one node: returns `Z` and writes `l` into
    /// `l_out` (one entry per mark). Deterministic steps give zeros.
    pub fn node_coeffs(&self, level: usize, kids: &[T], l_out: &mut [T]) -> T {
        let step = &self.steps[level];
        l_out.iter_mut().for_each(|v| *v = T::zero());
        if !step.is_stochastic() {
            return T::zero();
        }
        let mom = &self.moments[level];
        let mut zw = T::zero();
        for (&v, br) in kids.iter().zip(&step.branches) {
            zw += br.prob * v * br.dw;
        }
        for (m, out) in l_out.iter_mut().enumerate() {
            if mom.var_n[m] > T::zero() {
                let mut acc = T::zero();
                for (&v, br) in kids.iter().zip(&step.branches) {
                    let dn = indicator::<T>(br.jump == Some(m)) - mom.lambda[m];
                    acc += br.prob * v * dn;
                }
                *out = acc / mom.var_n[m];
            }
        }
        if mom.var_w > T::zero() {
            zw / mom.var_w
        } else {
            T::zero()
        }
    }

    /// Compensated jump increment of mark `m` along `branch` of step `level`.
    pub fn dn(&self, level: usize, branch: usize, mark: usize) -> T {
        let br = &self.steps[level].branches[branch];
        indicator::<T>(br.jump == Some(mark)) - self.moments[level].lambda[mark]
    }

    /// Residuals of probability sums and the moment identities. Moment checks
    /// are skipped on deterministic steps.
    pub fn validate(&self) -> ModelDiagnostics {
        let mut d = ModelDiagnostics {
            prob_sum: 0.0,
            nonpositive_prob: 0.0,
            mean_dw: 0.0,
            var_dw: 0.0,
            mean_dn: 0.0,
            cross_moment: 0.0,
            skipped_micro_steps: 0,
            pass: true,
        };
        let f = |x: T| x.to_f64_lossy().abs();
        for (j, s) in self.steps.iter().enumerate() {
            let sum: T = s.branches.iter().map(|b| b.prob).sum();
            d.prob_sum = d.prob_sum.max(f(sum - T::one()));
            if !s.is_stochastic() {
                d.skipped_micro_steps += 1;
                continue;
            }
            for b in &s.branches {
                if b.prob <= T::zero() {
                    d.nonpositive_prob = d.nonpositive_prob.max(f(b.prob) + f64::MIN_POSITIVE);
                }
            }
            let mean_w: T = s.branches.iter().map(|b| b.prob * b.dw).sum();
            d.mean_dw = d.mean_dw.max(f(mean_w));
            d.var_dw = d.var_dw.max(f(s.brownian_variance() - s.weight));
            for m in 0..self.marks() {
                let lambda = self.lambda(j, m);
                let dn = |b: &Branch<T>| indicator::<T>(b.jump == Some(m)) - lambda;
                let mean_n: T = s.branches.iter().map(|b| b.prob * dn(b)).sum();
                let cross: T = s.branches.iter().map(|b| b.prob * b.dw * dn(b)).sum();
                d.mean_dn = d.mean_dn.max(f(mean_n));
                d.cross_moment = d.cross_moment.max(f(cross));
            }
        }
        d.pass = d.max_residual() <= MODEL_TOLERANCE;
        d
    }

    /// Inserts one deterministic micro-step of width `dt * 2^-n` right after
    /// every macro instant. Micro-steps carry no driver weight; they only
    /// hold barrier values over the smearing window.
    pub fn refine(&self, n: u32) -> Result<Self> {
        if self.is_refined() {
            return Err(LabError::InvalidGrid("model is already refined".into()));
        }
        if n == 0 {
            return Ok(self.clone());
        }
        let dt = self.grid.dt();
        let delta = dt * T::lit(0.5).powi(n as i32);
        let grid = self.grid.clone().with_micro_width(delta)?;
        let mut steps = Vec::with_capacity(2 * self.steps.len());
        let mut tags = Vec::with_capacity(2 * self.steps.len() + 1);
        for (k, s) in self.steps.iter().enumerate() {
            tags.push(Some(k));
            steps.push(Step {
                kind: StepKind::Micro,
                elapsed: delta,
                weight: T::zero(),
                branches: vec![Branch {
                    prob: T::one(),
                    dw: T::zero(),
                    jump: None,
                }],
            });
            tags.push(None);
            steps.push(Step {
                elapsed: s.elapsed - delta,
                ..s.clone()
            });
        }
        tags.push(Some(self.steps.len()));
        Self::from_parts(grid, self.intensities.clone(), steps, tags)
    }

    /// Same filtration with the branch order of every step reversed; node
    /// `i` of a level maps to node `count - 1 - i`.
    pub fn with_reversed_branches(&self) -> Self {
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.branches.reverse();
                s
            })
            .collect();
        Self::from_parts(
            self.grid.clone(),
            self.intensities.clone(),
            steps,
            self.base_level.clone(),
        )
        .expect("reversal keeps shapes")
    }

    /// Node table as CSV: `level,nodeId,parentId,branchProb,dW,jumpMark`.
    /// `jumpMark` is 0 for no jump and `i + 1` for mark `i`.
    pub fn write_nodes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "nodeId", "parentId", "branchProb", "dW", "jumpMark"])?;
        w.write_record(["0", "0", "", "1", "0", "0"])?;
        for level in 1..self.levels() {
            let s = &self.steps[level - 1];
            for node in 0..self.count(level) {
                let br = &s.branches[self.branch_index(level, node)];
                w.write_record([
                    level.to_string(),
                    node.to_string(),
                    self.parent(level, node).to_string(),
                    br.prob.to_f64_lossy().to_string(),
                    br.dw.to_f64_lossy().to_string(),
                    br.jump.map_or(0, |m| m + 1).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[inline]
fn indicator<T: Real>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

/// Jump mark of the model description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSpec {
    pub intensity: f64,
}

/// Model description: `{T, N, marks: [{intensity}], refinementLevel}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(default)]
    pub marks: Vec<MarkSpec>,
    #[serde(rename = "refinementLevel", default)]
    pub refinement_level: u32,
}

impl ModelSpec {
    pub fn binomial(horizon: f64, steps: usize) -> Self {
        Self {
            horizon,
            steps,
            marks: Vec::new(),
            refinement_level: 0,
        }
    }

    pub fn with_marks(mut self, intensities: &[f64]) -> Self {
        self.marks = intensities
            .iter()
            .map(|&intensity| MarkSpec { intensity })
            .collect();
        self
    }

    /// Unrefined lattice described by this spec.
    pub fn build_base<T: Real>(&self) -> Result<LatticeModel<T>> {
        let grid = TimeGrid::new(T::lit(self.horizon), self.steps)?;
        let mu: Vec<T> = self.marks.iter().map(|m| T::lit(m.intensity)).collect();
        LatticeModel::build(grid, &mu)
    }

    /// Lattice with the requested refinement applied.
    pub fn build<T: Real>(&self) -> Result<LatticeModel<T>> {
        self.build_base::<T>()?.refine(self.refinement_level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binomial(n: usize) -> LatticeModel<f64> {
        LatticeModel::build(TimeGrid::new(1.0, n).unwrap(), &[]).unwrap()
    }

    #[test]
    fn one_step_binomial() {
        let m = binomial(1);
        assert_eq!(m.counts(), &[1, 2]);
        let s = m.step(0);
        assert_eq!(s.branches[0].prob, 0.5);
        assert_eq!(s.branches[1].prob, 0.5);
        assert_eq!(s.branches[0].dw, 1.0);
        assert_eq!(s.branches[1].dw, -1.0);
    }

    #[test]
    fn one_step_with_mark() {
        let m = LatticeModel::build(TimeGrid::new(1.0, 1).unwrap(), &[0.1]).unwrap();
        let probs: Vec<f64> = m.step(0).branches.iter().map(|b| b.prob).collect();
        for (p, want) in probs.iter().zip([0.45, 0.45, 0.05, 0.05]) {
            assert_abs_diff_eq!(*p, want, epsilon = 1e-15);
        }
        assert_eq!(m.count(1), 4);
    }

    #[test]
    fn two_step_binomial_paths() {
        let m = binomial(2);
        assert_eq!(m.counts(), &[1, 2, 4]);
        assert!(m.path_probs(2).iter().all(|&p| p == 0.25));
    }

    #[test]
    fn node_counts_grow_with_marks() {
        let m = LatticeModel::build(TimeGrid::new(1.0, 3).unwrap(), &[0.2, 0.3]).unwrap();
        assert_eq!(m.counts(), &[1, 6, 36, 216]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            TimeGrid::<f64>::new(1.0, 0),
            Err(LabError::InvalidGrid(_))
        ));
        let grid = TimeGrid::new(1.0, 1).unwrap();
        assert!(matches!(
            LatticeModel::build(grid, &[0.6, 0.4]),
            Err(LabError::ProbabilityOverflow { .. })
        ));
    }

    #[test]
    fn cond_exp_examples() {
        let m = binomial(1);
        assert_eq!(m.cond_exp(0, &[4.0, 2.0]).unwrap(), vec![3.0]);
        assert_eq!(m.cond_exp(0, &[7.5, 7.5]).unwrap(), vec![7.5]);
        assert!(matches!(
            m.cond_exp(0, &[1.0]),
            Err(LabError::MissingValue { .. })
        ));
        let r = m.refine(1).unwrap();
        assert_eq!(r.cond_exp(0, &[9.0]).unwrap(), vec![9.0]);
    }

    #[test]
    fn martingale_coeff_examples() {
        let m = LatticeModel::build(TimeGrid::new(1.0, 2).unwrap(), &[0.3]).unwrap();
        let b = m.branching(0);
        let dw: Vec<f64> = m.step(0).branches.iter().map(|br| br.dw).collect();
        let c = m.martingale_coeffs(0, &dw).unwrap();
        assert_abs_diff_eq!(c.z[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.l[0][0], 0.0, epsilon = 1e-14);

        let c = m.martingale_coeffs(0, &vec![3.0; b]).unwrap();
        assert_abs_diff_eq!(c.z[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.l[0][0], 0.0, epsilon = 1e-14);

        let dn: Vec<f64> = (0..b).map(|br| m.dn(0, br, 0)).collect();
        let c = m.martingale_coeffs(0, &dn).unwrap();
        assert_abs_diff_eq!(c.l[0][0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.z[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn micro_step_coeffs_are_flagged() {
        let r = binomial(1).refine(2).unwrap();
        let c = r.martingale_coeffs(0, &[1.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.z, vec![0.0]);
    }

    #[test]
    fn validate_exact_and_corrupted() {
        let m = LatticeModel::build(TimeGrid::new(1.0, 3).unwrap(), &[0.1, 0.2]).unwrap();
        let d = m.validate();
        assert!(d.pass, "{d:?}");
        assert!(d.max_residual() <= 1e-15);

        let mut steps = m.steps().to_vec();
        steps[0].branches = vec![
            Branch { prob: 0.6, dw: 1.0, jump: None },
            Branch { prob: 0.5, dw: -1.0, jump: None },
        ];
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let bad = LatticeModel::from_parts(grid, vec![], steps[..1].to_vec(), vec![Some(0), Some(1)])
            .unwrap();
        let d = bad.validate();
        assert_abs_diff_eq!(d.prob_sum, 0.1, epsilon = 1e-12);
        assert!(!d.pass);

        let r = binomial(2).refine(3).unwrap();
        let d = r.validate();
        assert!(d.pass);
        assert_eq!(d.skipped_micro_steps, 2);
    }

    #[test]
    fn refinement_layout() {
        let r = binomial(2).refine(1).unwrap();
        assert_eq!(r.depth(), 4);
        assert_eq!(r.counts(), &[1, 1, 2, 2, 4]);
        assert_abs_diff_eq!(r.time(1), 0.25, epsilon = 1e-15);
        assert_eq!(r.time(2), 0.5);
        assert_eq!(r.level_of_instant(1), Some(2));
        assert_eq!(r.base_instant(3), None);
        assert_eq!(r.step(0).weight, 0.0);
        assert_eq!(r.step(1).weight, 0.5);
    }

    #[test]
    fn node_csv_has_header_and_rows() {
        let m = binomial(1);
        let mut buf = Vec::new();
        m.write_nodes_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "level,nodeId,parentId,branchProb,dW,jumpMark");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "1,0,0,0.5,1,0");
    }

    #[test]
    fn spec_roundtrip() {
        let json = r#"{"T": 1.0, "N": 2, "marks": [{"intensity": 0.2}], "refinementLevel": 1}"#;
        let spec: ModelSpec = serde_json::from_str(json).unwrap();
        let m: LatticeModel<f64> = spec.build().unwrap();
        assert_eq!(m.depth(), 4);
        assert!(serde_json::from_str::<ModelSpec>(r#"{"T":1,"N":1,"bogus":1}"#).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let m = LatticeModel::<f32>::build(TimeGrid::new(1.0f32, 2).unwrap(), &[0.25]).unwrap();
        assert!(m.validate().max_residual() < 1e-6);
        let e = m.cond_exp(0, &vec![2.0f32; m.count(1)]).unwrap();
        assert!((e[0] - 2.0).abs() < 1e-6);
    }
}
