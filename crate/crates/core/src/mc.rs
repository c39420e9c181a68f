//! Monte Carlo cross-check on Markovian instances: simulated paths,
//! regression estimates of conditional expectations, and a backward sweep
//! that stops where the payoff beats the fitted continuation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::implicit_step;
use crate::driver::{Driver, Site};
use crate::error::{LabError, Result};
use crate::lattice::{LatticeModel, StepKind};
use crate::scalar::{pairwise_sum, Real};

/// Law of the Brownian increment on each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Increments {
    /// Centered Gaussian with variance `dt`.
    #[default]
    Gaussian,
    /// `+-sqrt(dt)` with probability 1/2 each, the law of the lattice.
    Rademacher,
}

/// State recursion driven by the simulated increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Dynamics {
    /// Multiply by `up` on a positive increment and by `down` otherwise,
    /// as the lattice asset does. Jumps leave it alone.
    Geometric { spot: f64, up: f64, down: f64 },
    /// `x * exp((drift - vol^2 / 2) dt + vol dW) * (1 + jump)^{dN}`.
    Gbm {
        spot: f64,
        drift: f64,
        vol: f64,
        #[serde(default)]
        jump: f64,
    },
    /// `x + vol dW + jump dN`.
    Arithmetic {
        start: f64,
        vol: f64,
        #[serde(default)]
        jump: f64,
    },
}

impl Dynamics {
    pub fn initial(&self) -> f64 {
        match *self {
            Dynamics::Geometric { spot, .. } | Dynamics::Gbm { spot, .. } => spot,
            Dynamics::Arithmetic { start, .. } => start,
        }
    }

    pub fn step(&self, x: f64, dt: f64, dw: f64, jumped: bool) -> f64 {
        match *self {
            Dynamics::Geometric { up, down, .. } => {
                if dw > 0.0 {
                    x * up
                } else if dw < 0.0 {
                    x * down
                } else {
                    x
                }
            }
            Dynamics::Gbm { drift, vol, jump, .. } => {
                let j = if jumped { 1.0 + jump } else { 1.0 };
                x * ((drift - 0.5 * vol * vol) * dt + vol * dw).exp() * j
            }
            Dynamics::Arithmetic { vol, jump, .. } => {
                x + vol * dw + if jumped { jump } else { 0.0 }
            }
        }
    }
}

/// Simulated paths: `state[k][p]` for `k = 0..=L`, increments `dw[k][p]`
/// and marks `mark[k][p]` for `k < L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    pub seed: u64,
    pub paths: usize,
    pub times: Vec<T>,
    pub dt: Vec<T>,
    /// `lambda[k][i]`: probability of mark `i` on step `k`.
    pub lambda: Vec<Vec<T>>,
    pub state: Vec<Vec<T>>,
    pub dw: Vec<Vec<T>>,
    pub mark: Vec<Vec<Option<u16>>>,
}

/// Paths follow the steps of `model` (micro-steps contribute nothing).
/// Path `p` draws from its own ChaCha8 stream `p` under the master seed,
/// so the ensemble does not depend on thread scheduling.
pub fn simulate_paths<T: Real>(
    model: &LatticeModel<T>,
    dynamics: &Dynamics,
    increments: Increments,
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if paths == 0 {
        return Err(LabError::Config("at least one path is required".into()));
    }
    let steps = model.depth();
    let dt: Vec<f64> = (0..steps).map(|k| model.step(k).weight.to_f64_lossy()).collect();
    let micro: Vec<bool> = (0..steps).map(|k| model.step(k).kind == StepKind::Micro).collect();
    let lambda: Vec<Vec<f64>> = (0..steps)
        .map(|k| (0..model.marks()).map(|i| model.lambda(k, i).to_f64_lossy()).collect())
        .collect();

    type Path = (Vec<f64>, Vec<f64>, Vec<Option<u16>>);
    let per_path: Vec<Path> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut x = dynamics.initial();
            let mut xs = Vec::with_capacity(steps + 1);
            let mut dws = Vec::with_capacity(steps);
            let mut marks = Vec::with_capacity(steps);
            xs.push(x);
            for k in 0..steps {
                let u: f64 = rng.random();
                let normal: f64 = rng.sample(StandardNormal);
                let sign: bool = rng.random();
                let (dw, mark) = if micro[k] {
                    (0.0, None)
                } else {
                    let h = dt[k].sqrt();
                    let dw = match increments {
                        Increments::Gaussian => normal * h,
                        Increments::Rademacher => {
                            if sign {
                                h
                            } else {
                                -h
                            }
                        }
                    };
                    let mut acc = 0.0;
                    let mut mark = None;
                    for (i, l) in lambda[k].iter().enumerate() {
                        acc += l;
                        if u < acc {
                            mark = Some(i as u16);
                            break;
                        }
                    }
                    (dw, mark)
                };
                x = dynamics.step(x, dt[k], dw, mark.is_some());
                xs.push(x);
                dws.push(dw);
                marks.push(mark);
            }
            (xs, dws, marks)
        })
        .collect();

    let conv = |v: f64| T::lit(v);
    let mut state = vec![Vec::with_capacity(paths); steps + 1];
    let mut dw = vec![Vec::with_capacity(paths); steps];
    let mut mark = vec![Vec::with_capacity(paths); steps];
    for (xs, dws, ms) in per_path {
        for (k, v) in xs.into_iter().enumerate() {
            state[k].push(conv(v));
        }
        for (k, v) in dws.into_iter().enumerate() {
            dw[k].push(conv(v));
        }
        for (k, v) in ms.into_iter().enumerate() {
            mark[k].push(v);
        }
    }
    Ok(PathEnsemble {
        seed,
        paths,
        times: model.times().to_vec(),
        dt: dt.into_iter().map(conv).collect(),
        lambda: lambda
            .into_iter()
            .map(|l| l.into_iter().map(conv).collect())
            .collect(),
        state,
        dw,
        mark,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MomentCheck {
    /// Worst `|mean dW| / bound` over steps.
    pub dw_ratio: f64,
    /// Worst `|mean dN_i| / bound` over steps and marks.
    pub dn_ratio: f64,
    pub ok: bool,
}

impl<T: Real> PathEnsemble<T> {
    pub fn steps(&self) -> usize {
        self.dw.len()
    }

    pub fn marks(&self) -> usize {
        self.lambda.first().map_or(0, Vec::len)
    }

    /// Compensated jump increment of mark `i` on path `p`, step `k`.
    pub fn dn(&self, k: usize, p: usize, i: usize) -> T {
        let hit = if self.mark[k][p] == Some(i as u16) { T::one() } else { T::zero() };
        hit - self.lambda[k][i]
    }

    /// Sanity gate on the sample means: `|mean dW| <= 5 sqrt(dt / M)` and
    /// `|mean dN_i| <= 5 sqrt(lambda_i / M)`.
    pub fn moment_check(&self) -> MomentCheck {
        let m = self.paths as f64;
        let mut dw_ratio = 0.0f64;
        let mut dn_ratio = 0.0f64;
        for k in 0..self.steps() {
            let dt = self.dt[k].to_f64_lossy();
            if dt > 0.0 {
                let mean = pairwise_sum(&self.dw[k]).to_f64_lossy() / m;
                dw_ratio = dw_ratio.max(mean.abs() / (5.0 * (dt / m).sqrt()));
            }
            for i in 0..self.marks() {
                let lam = self.lambda[k][i].to_f64_lossy();
                if lam > 0.0 {
                    let dn: Vec<T> = (0..self.paths).map(|p| self.dn(k, p, i)).collect();
                    let mean = pairwise_sum(&dn).to_f64_lossy() / m;
                    dn_ratio = dn_ratio.max(mean.abs() / (5.0 * (lam / m).sqrt()));
                }
            }
        }
        MomentCheck {
            dw_ratio,
            dn_ratio,
            ok: dw_ratio <= 1.0 && dn_ratio <= 1.0,
        }
    }

    /// One row per path and step. The seed goes in a leading comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={} paths={}", self.seed, self.paths)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "step", "time", "state", "dW", "mark"])
            .map_err(|e| LabError::Io(e.to_string()))?;
        for p in 0..self.paths {
            for k in 0..self.state.len() {
                let (dw, mark) = if k < self.steps() {
                    (
                        format!("{}", self.dw[k][p]),
                        self.mark[k][p].map_or(String::new(), |m| (m + 1).to_string()),
                    )
                } else {
                    (String::new(), String::new())
                };
                w.write_record([
                    p.to_string(),
                    k.to_string(),
                    format!("{}", self.times[k]),
                    format!("{}", self.state[k][p]),
                    dw,
                    mark,
                ])
                .map_err(|e| LabError::Io(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn regress(&self, k: usize, values: &[T], spec: &RegressionSpec) -> Result<Fit<T>> {
        regress_cond_exp(&self.state[k], values, spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Basis {
    /// `1, x, ..., x^degree` of the standardized state.
    Polynomial { degree: usize },
    /// Indicators of equal-width bins over the sample range.
    Bins { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegressionSpec {
    pub basis: Basis,
    #[serde(default)]
    pub ridge: f64,
}

impl RegressionSpec {
    pub fn size(&self) -> usize {
        match self.basis {
            Basis::Polynomial { degree } => degree + 1,
            Basis::Bins { count } => count,
        }
    }

    pub fn validate(&self, paths: usize) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(LabError::Config(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if matches!(self.basis, Basis::Bins { count: 0 }) {
            return Err(LabError::Config("at least one bin is required".into()));
        }
        if self.size() * 10 > paths {
            return Err(LabError::OverfitGuard {
                basis: self.size(),
                paths,
            });
        }
        Ok(())
    }
}

/// In-sample least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit<T> {
    pub values: Vec<T>,
    pub residual_rms: T,
    /// Basis functions actually used (polynomial degree is capped by the
    /// number of distinct states).
    pub basis_used: usize,
}

/// Projects `values` on the basis evaluated at `states`, with ridge
/// regularization.
pub fn regress_cond_exp<T: Real>(states: &[T], values: &[T], spec: &RegressionSpec) -> Result<Fit<T>> {
    if states.len() != values.len() {
        return Err(LabError::Shape(format!(
            "{} states but {} values",
            states.len(),
            values.len()
        )));
    }
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(LabError::Config(format!("non-finite regression target on path {p}")));
    }
    spec.validate(states.len())?;
    let ridge = T::lit(spec.ridge);
    let (fitted, used) = match spec.basis {
        Basis::Bins { count } => (fit_bins(states, values, count, ridge), count),
        Basis::Polynomial { degree } => fit_polynomial(states, values, degree, ridge)?,
    };
    let sq: Vec<T> = fitted
        .iter()
        .zip(values)
        .map(|(f, v)| (*v - *f) * (*v - *f))
        .collect();
    let residual_rms = (pairwise_sum(&sq) / T::from_usize_lossy(values.len())).sqrt();
    Ok(Fit {
        values: fitted,
        residual_rms,
        basis_used: used,
    })
}

fn fit_bins<T: Real>(states: &[T], values: &[T], count: usize, ridge: T) -> Vec<T> {
    let lo = states.iter().copied().fold(T::infinity(), T::min);
    let hi = states.iter().copied().fold(T::neg_infinity(), T::max);
    let width = hi - lo;
    let bin = |x: T| -> usize {
        if width <= T::zero() {
            return 0;
        }
        let b = ((x - lo) / width * T::from_usize_lossy(count)).floor();
        b.to_usize().unwrap_or(0).min(count - 1)
    };
    let idx: Vec<usize> = states.iter().map(|&x| bin(x)).collect();
    let mut members: Vec<Vec<T>> = vec![Vec::new(); count];
    for (&b, &v) in idx.iter().zip(values) {
        members[b].push(v);
    }
    let means: Vec<T> = members
        .iter()
        .map(|m| {
            if m.is_empty() {
                T::zero()
            } else {
                pairwise_sum(m) / (T::from_usize_lossy(m.len()) + ridge)
            }
        })
        .collect();
    idx.iter().map(|&b| means[b]).collect()
}

fn fit_polynomial<T: Real>(
    states: &[T],
    values: &[T],
    degree: usize,
    ridge: T,
) -> Result<(Vec<T>, usize)> {
    let n = T::from_usize_lossy(states.len());
    let mean = pairwise_sum(states) / n;
    let dev: Vec<T> = states.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let sd = (pairwise_sum(&dev) / n).sqrt();
    let mut distinct: Vec<T> = states.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite states"));
    distinct.dedup();
    let degree = degree.min(distinct.len() - 1);
    let degree = if sd > T::zero() { degree } else { 0 };
    let p = degree + 1;
    let x: Vec<T> = states
        .iter()
        .map(|&s| if sd > T::zero() { (s - mean) / sd } else { T::zero() })
        .collect();
    let phi: Vec<Vec<T>> = x
        .iter()
        .map(|&v| {
            let mut row = vec![T::one(); p];
            for d in 1..p {
                row[d] = row[d - 1] * v;
            }
            row
        })
        .collect();
    let mut gram = vec![vec![T::zero(); p]; p];
    let mut rhs = vec![T::zero(); p];
    for a in 0..p {
        for b in 0..=a {
            let terms: Vec<T> = phi.iter().map(|r| r[a] * r[b]).collect();
            let s = pairwise_sum(&terms);
            gram[a][b] = s;
            gram[b][a] = s;
        }
        gram[a][a] += ridge;
        let terms: Vec<T> = phi.iter().zip(values).map(|(r, &v)| r[a] * v).collect();
        rhs[a] = pairwise_sum(&terms);
    }
    let beta = cholesky_solve(gram, rhs)?;
    let fitted = phi
        .iter()
        .map(|r| r.iter().zip(&beta).fold(T::zero(), |acc, (f, b)| acc + *f * *b))
        .collect();
    Ok((fitted, p))
}

/// Solves `G beta = r` for symmetric positive definite `G`.
fn cholesky_solve<T: Real>(g: Vec<Vec<T>>, r: Vec<T>) -> Result<Vec<T>> {
    let p = r.len();
    let scale = (0..p).map(|i| g[i][i]).fold(T::zero(), T::max);
    let floor = scale * T::lit(1e-12);
    let mut l = vec![vec![T::zero(); p]; p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = g[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= floor {
                    return Err(LabError::SingularDesign);
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![T::zero(); p];
    for i in 0..p {
        let mut s = r[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Ok(x)
}

/// Function of the Markov state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Payoff {
    Put { strike: f64 },
    Call { strike: f64 },
    Constant { value: f64 },
}

impl Payoff {
    pub fn eval<T: Real>(&self, x: T) -> T {
        match *self {
            Payoff::Put { strike } => (T::lit(strike) - x).max(T::zero()),
            Payoff::Call { strike } => (x - T::lit(strike)).max(T::zero()),
            Payoff::Constant { value } => T::lit(value),
        }
    }
}

/// Barrier before maturity and terminal value, both functions of the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarkovBarrier {
    pub running: Payoff,
    pub terminal: Payoff,
}

/// Smallest number of batches used for the standard error.
pub const MIN_BATCHES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct McEstimate {
    pub y0: f64,
    pub se: f64,
    pub paths: usize,
    pub batches: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "y0,se,paths,batches")?;
        writeln!(out, "{},{},{},{}", self.y0, self.se, self.paths, self.batches)?;
        Ok(())
    }
}

/// Backward sweep over the ensemble. Conditional expectations come from
/// regression on the state; each path carries its realized value and is
/// reset to the payoff wherever the payoff is at least the fitted
/// continuation. `Y0` is the path average and the standard error comes
/// from `batches` contiguous batches.
pub fn solve_reflected_mc<T: Real, D: Driver<T> + ?Sized>(
    ens: &PathEnsemble<T>,
    driver: &D,
    barrier: &MarkovBarrier,
    spec: &RegressionSpec,
    batches: usize,
) -> Result<McEstimate> {
    if batches < MIN_BATCHES || batches > ens.paths {
        return Err(LabError::Config(format!(
            "batches must be in {MIN_BATCHES}..={} (got {batches})",
            ens.paths
        )));
    }
    spec.validate(ens.paths)?;
    let k_lip = driver.lipschitz();
    if let Some(&w) = ens.dt.iter().max_by(|a, b| a.partial_cmp(b).expect("finite")) {
        if k_lip * w >= T::one() {
            return Err(LabError::StepSize {
                product: (k_lip * w).to_f64_lossy(),
            });
        }
    }
    let dep = driver.dependence();
    let last = ens.steps();
    let mut y: Vec<T> = ens.state[last].iter().map(|&x| barrier.terminal.eval(x)).collect();
    for k in (0..last).rev() {
        let dt = ens.dt[k];
        if dt == T::zero() {
            continue;
        }
        let cond = ens.regress(k, &y, spec)?.values;
        let z = if dep.z {
            let prod: Vec<T> = y.iter().zip(&ens.dw[k]).map(|(a, b)| *a * *b).collect();
            ens.regress(k, &prod, spec)?.values.into_iter().map(|v| v / dt).collect()
        } else {
            vec![T::zero(); ens.paths]
        };
        let mut ls: Vec<Vec<T>> = Vec::new();
        if dep.l {
            for i in 0..ens.marks() {
                let lam = ens.lambda[k][i];
                let var = lam * (T::one() - lam);
                let prod: Vec<T> = (0..ens.paths).map(|p| y[p] * ens.dn(k, p, i)).collect();
                ls.push(if var > T::zero() {
                    ens.regress(k, &prod, spec)?.values.into_iter().map(|v| v / var).collect()
                } else {
                    vec![T::zero(); ens.paths]
                });
            }
        }
        let site = Site::new(k, 0, ens.times[k]);
        let next: Vec<T> = (0..ens.paths)
            .into_par_iter()
            .map(|p| {
                let l: Vec<T> = ls.iter().map(|li| li[p]).collect();
                let cont = implicit_step(driver, site, cond[p], dt, z[p], &l, None)?;
                let xi = barrier.running.eval(ens.state[k][p]);
                Ok(if xi >= cont { xi } else { y[p] + (cont - cond[p]) })
            })
            .collect::<Result<_>>()?;
        y = next;
    }
    let size = ens.paths / batches;
    let means: Vec<T> = (0..batches)
        .map(|b| {
            let end = if b + 1 == batches { ens.paths } else { (b + 1) * size };
            pairwise_sum(&y[b * size..end]) / T::from_usize_lossy(end - b * size)
        })
        .collect();
    let y0 = pairwise_sum(&y) / T::from_usize_lossy(ens.paths);
    let bm = pairwise_sum(&means) / T::from_usize_lossy(batches);
    let dev: Vec<T> = means.iter().map(|m| (*m - bm) * (*m - bm)).collect();
    let var = pairwise_sum(&dev) / T::from_usize_lossy(batches - 1);
    let se = (var / T::from_usize_lossy(batches)).sqrt();
    Ok(McEstimate {
        y0: y0.to_f64_lossy(),
        se: se.to_f64_lossy(),
        paths: ens.paths,
        batches,
        seed: ens.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::BuiltinDriver;
    use crate::lattice::TimeGrid;

    fn model(depth: usize, marks: &[f64]) -> LatticeModel<f64> {
        LatticeModel::build(TimeGrid::new(1.0, depth).unwrap(), marks).unwrap()
    }

    const PUT: Dynamics = Dynamics::Geometric { spot: 100.0, up: 1.2, down: 0.8 };

    #[test]
    fn single_path_reproducible() {
        let m = model(3, &[0.5]);
        let a = simulate_paths(&m, &PUT, Increments::Gaussian, 1, 9).unwrap();
        let b = simulate_paths(&m, &PUT, Increments::Gaussian, 1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.state.len(), 4);
    }

    #[test]
    fn no_intensity_no_jumps() {
        let m = model(4, &[]);
        let e = simulate_paths(&m, &PUT, Increments::Gaussian, 500, 1).unwrap();
        assert!(e.mark.iter().flatten().all(Option::is_none));
    }

    #[test]
    fn moments_within_gate() {
        let m = model(4, &[0.8]);
        let e = simulate_paths(&m, &PUT, Increments::Gaussian, 20_000, 3).unwrap();
        let c = e.moment_check();
        assert!(c.ok, "{c:?}");
        assert!(e.mark.iter().flatten().any(Option::is_some));
    }

    #[test]
    fn constant_values_fit_exactly() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.37).collect();
        let vs = vec![4.5; 100];
        for basis in [Basis::Polynomial { degree: 3 }, Basis::Bins { count: 5 }] {
            let f = regress_cond_exp(&xs, &vs, &RegressionSpec { basis, ridge: 0.0 }).unwrap();
            assert!(f.values.iter().all(|v| (v - 4.5).abs() < 1e-12));
        }
    }

    #[test]
    fn linear_values_fit_exactly() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin() * 3.0).collect();
        let vs: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let spec = RegressionSpec { basis: Basis::Polynomial { degree: 1 }, ridge: 0.0 };
        let f = regress_cond_exp(&xs, &vs, &spec).unwrap();
        assert!(f.values.iter().zip(&vs).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(f.residual_rms < 1e-10);
    }

    #[test]
    fn square_against_closed_form_line() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let vs: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let spec = RegressionSpec { basis: Basis::Polynomial { degree: 1 }, ridge: 0.0 };
        let f = regress_cond_exp(&xs, &vs, &spec).unwrap();
        // ordinary least squares slope and intercept
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = vs.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&vs).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        for (x, v) in xs.iter().zip(&f.values) {
            assert!((my + slope * (x - mx) - v).abs() < 1e-9);
        }
        assert!(f.residual_rms > 0.1);
    }

    #[test]
    fn overfit_guard_and_singular_design() {
        let xs = vec![1.0; 20];
        let vs = vec![0.0; 20];
        let spec = RegressionSpec { basis: Basis::Polynomial { degree: 3 }, ridge: 0.0 };
        assert!(matches!(
            regress_cond_exp(&xs, &vs, &spec),
            Err(LabError::OverfitGuard { basis: 4, paths: 20 })
        ));
        assert!(matches!(
            cholesky_solve(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]),
            Err(LabError::SingularDesign)
        ));
    }

    #[test]
    fn plain_mean_without_driver_or_reflection() {
        let m = model(2, &[]);
        let e = simulate_paths(&m, &PUT, Increments::Rademacher, 6400, 5).unwrap();
        let b = MarkovBarrier {
            running: Payoff::Constant { value: -1e9 },
            terminal: Payoff::Put { strike: 100.0 },
        };
        let spec = RegressionSpec { basis: Basis::Bins { count: 8 }, ridge: 0.0 };
        let est = solve_reflected_mc(&e, &BuiltinDriver::Zero, &b, &spec, 32).unwrap();
        let pay: Vec<f64> = e.state[2].iter().map(|&x| (100.0 - x).max(0.0)).collect();
        let mean = pay.iter().sum::<f64>() / pay.len() as f64;
        assert!((est.y0 - mean).abs() < 1e-9);
        let sd = (pay.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (pay.len() - 1) as f64).sqrt();
        let naive = sd / (pay.len() as f64).sqrt();
        assert!((est.se / naive - 1.0).abs() < 0.5, "{} vs {naive}", est.se);
    }

    #[test]
    fn american_put_within_three_se() {
        let m = model(2, &[]);
        let b = MarkovBarrier {
            running: Payoff::Put { strike: 100.0 },
            terminal: Payoff::Put { strike: 100.0 },
        };
        let spec = RegressionSpec { basis: Basis::Polynomial { degree: 2 }, ridge: 0.0 };
        let e = simulate_paths(&m, &PUT, Increments::Rademacher, 10_000, 11).unwrap();
        let est = solve_reflected_mc(&e, &BuiltinDriver::Zero, &b, &spec, 32).unwrap();
        assert!((est.y0 - 11.0).abs() <= 3.0 * est.se, "{est:?}");
    }

    #[test]
    fn se_halves_when_paths_quadruple() {
        let m = model(2, &[]);
        let b = MarkovBarrier {
            running: Payoff::Put { strike: 100.0 },
            terminal: Payoff::Put { strike: 100.0 },
        };
        let spec = RegressionSpec { basis: Basis::Bins { count: 8 }, ridge: 0.0 };
        let avg = |n: usize| {
            (0..10)
                .map(|s| {
                    let e = simulate_paths(&m, &PUT, Increments::Rademacher, n, s).unwrap();
                    solve_reflected_mc(&e, &BuiltinDriver::Zero, &b, &spec, 32).unwrap().se
                })
                .sum::<f64>()
                / 10.0
        };
        let ratio = avg(4000) / avg(16_000);
        assert!((ratio / 2.0 - 1.0).abs() < 0.3, "{ratio}");
    }
}
