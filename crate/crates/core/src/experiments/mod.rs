//! Randomized experiments, one per acceptance criterion. Each run returns a
//! pass/fail report with metrics and plot-ready tables; the acceptance test
//! target and the command-line runner both call [`run_criterion`].

mod criteria;

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barrier::LadlagBarrier;
use crate::driver::{BuiltinDriver, Dependence, Driver, FnDriver, Site};
use crate::error::{LabError, Result};
use crate::lattice::{LatticeModel, TimeGrid};

/// Named CSV table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| LabError::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one criterion run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CriterionReport {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    pub instances: usize,
    /// One line for humans.
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

/// Parameters of a criterion run. Every tolerance a criterion reads must be
/// present; there are no fallbacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CriterionConfig {
    pub id: u8,
    pub instances: usize,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
}

pub const TITLES: [&str; 14] = [
    "oracle equivalence",
    "comparison",
    "monotone approximation",
    "penalization",
    "Skorokhod complementarity",
    "reflection identities",
    "regularity",
    "supermartingale characterization",
    "Bellman scaling",
    "envelope shift",
    "right shift",
    "generalized Skorokhod",
    "S4 continuity",
    "Monte Carlo cross-check",
];

impl CriterionConfig {
    /// Instance counts and tolerances used by the acceptance suite.
    pub fn standard(id: u8) -> Result<Self> {
        let (instances, tols): (usize, &[(&str, f64)]) = match id {
            1 => (20, &[("gap", 1e-10)]),
            2 => (10, &[("violation", 1e-12)]),
            3 => (10, &[("relative", 1e-3)]),
            4 => (6, &[("relative", 1e-2)]),
            5 => (12, &[("residual", 1e-12)]),
            6 => (12, &[]),
            7 => (10, &[]),
            8 => (6, &[("pair", 1e-12)]),
            9 => (12, &[("gap", 1e-10)]),
            10 => (6, &[("gap", 1e-12)]),
            11 => (6, &[("residual", 1e-12)]),
            12 => (6, &[("residual", 1e-12), ("candidates", 40.0), ("minAccepted", 20.0)]),
            13 => (6, &[("target", 1e-8), ("steps", 14.0)]),
            14 => (40, &[("paths", 1e4), ("batches", 32.0), ("sigmas", 3.0), ("coverage", 0.95)]),
            _ => return Err(LabError::Config(format!("no criterion {id}"))),
        };
        Ok(Self {
            id,
            instances,
            seed: 1000 * id as u64,
            tolerances: tols.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        })
    }

    pub fn tol(&self, key: &str) -> Result<f64> {
        let v = *self.tolerances.get(key).ok_or_else(|| {
            LabError::Config(format!("criterion {} needs tolerance \"{key}\"", self.id))
        })?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(LabError::Config(format!("tolerance \"{key}\" must be positive")));
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=14).contains(&self.id) {
            return Err(LabError::Config(format!("no criterion {}", self.id)));
        }
        if self.instances == 0 {
            return Err(LabError::Config("at least one instance is required".into()));
        }
        for k in self.tolerances.keys() {
            self.tol(k)?;
        }
        Ok(())
    }
}

/// Runs one criterion.
pub fn run_criterion(cfg: &CriterionConfig) -> Result<CriterionReport> {
    cfg.validate()?;
    let mut report = match cfg.id {
        1 => criteria::oracle_equivalence(cfg),
        2 => criteria::comparison(cfg),
        3 => criteria::monotone_approximation(cfg),
        4 => criteria::penalization(cfg),
        5 => criteria::skorokhod(cfg),
        6 => criteria::reflection_identities(cfg),
        7 => criteria::regularity(cfg),
        8 => criteria::supermartingale(cfg),
        9 => criteria::bellman(cfg),
        10 => criteria::envelope(cfg),
        11 => criteria::right_shift(cfg),
        12 => criteria::peng_xu(cfg),
        13 => criteria::s4(cfg),
        14 => criteria::monte_carlo(cfg),
        _ => unreachable!("validated"),
    }?;
    report.id = cfg.id;
    report.title = TITLES[cfg.id as usize - 1].into();
    Ok(report)
}

/// A randomized problem: lattice, driver and barrier.
pub struct Instance {
    pub label: String,
    pub model: LatticeModel<f64>,
    pub driver: Box<dyn Driver<f64>>,
    pub barrier: LadlagBarrier<f64>,
}

impl Instance {
    /// SHA-256 of the label, the node counts and the barrier table.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        h.update(format!("{:?}{:?}", self.model.counts(), self.model.times()).as_bytes());
        let mut csv = Vec::new();
        self.barrier.write_csv(&mut csv).expect("in-memory write");
        h.update(&csv);
        hex::encode(h.finalize())
    }
}

/// Driver families of the randomized instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverKind {
    Zero,
    Constant,
    LinearY,
    /// Linear in `(y, z, l)`.
    Linear,
    /// `a y + b |z| + c . l + k`.
    AbsZ,
}

impl DriverKind {
    pub const ORACLE: [DriverKind; 5] = [
        DriverKind::Zero,
        DriverKind::Constant,
        DriverKind::LinearY,
        DriverKind::Linear,
        DriverKind::AbsZ,
    ];
}

/// Random driver of the requested family. Coefficients are small enough
/// that the one-step scheme stays monotone on the lattices used here.
pub fn random_driver(kind: DriverKind, rng: &mut ChaCha8Rng, mu: &[f64]) -> (String, Box<dyn Driver<f64>>) {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match kind {
        DriverKind::Zero => ("zero".into(), Box::new(BuiltinDriver::Zero)),
        DriverKind::Constant => {
            let c = u(-1.0, 1.0);
            (format!("constant({c:.3})"), Box::new(BuiltinDriver::Constant(c)))
        }
        DriverKind::LinearY => {
            let a = u(-0.5, 0.5);
            (format!("linearY({a:.3})"), Box::new(BuiltinDriver::linear(a, 0.0, vec![], mu)))
        }
        DriverKind::Linear => {
            let a = u(-0.5, 0.5);
            let b = u(-0.5, 0.5);
            let c: Vec<f64> = mu.iter().map(|_| u(-0.2, 0.2)).collect();
            (
                format!("linear({a:.3},{b:.3},{c:.3?})"),
                Box::new(BuiltinDriver::linear(a, b, c, mu)),
            )
        }
        DriverKind::AbsZ => {
            let a = u(-0.5, 0.5);
            let b = u(-0.5, 0.5);
            let k = u(-0.5, 0.5);
            let c: Vec<f64> = mu.iter().map(|_| u(-0.2, 0.2)).collect();
            let lk = c
                .iter()
                .zip(mu)
                .map(|(c, m)| c.abs() / m.sqrt())
                .fold(0.0, f64::max);
            let label = format!("absZ({a:.3},{b:.3},{c:.3?},{k:.3})");
            let dep = Dependence { y: true, z: true, l: !c.is_empty() };
            let f = FnDriver::new(
                a.abs().max(b.abs()).max(lk),
                dep,
                move |_: Site<f64>, y: f64, z: f64, l: &[f64]| {
                    a * y + b * z.abs() + c.iter().zip(l).map(|(c, l)| c * l).sum::<f64>() + k
                },
            );
            (label, Box::new(f))
        }
    }
}

/// Lattice on `[0, 1]` with `depth` steps and the given mark intensities.
pub fn unit_model(depth: usize, mu: &[f64]) -> Result<LatticeModel<f64>> {
    LatticeModel::build(TimeGrid::new(1.0, depth)?, mu)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:e}")
}
