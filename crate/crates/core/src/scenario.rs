//! Scenario files, the built-in registry and the scenario runner.
//!
//! A scenario either runs solver routes on one configured instance or runs
//! one of the randomized criterion experiments. The runner returns the JSON
//! summary and the CSV tables in memory; writing them is up to the caller.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barrier::{lift_to_refined, restrict_to_base, BarrierSpec, LadlagBarrier};
use crate::driver::{BuiltinDriver, DriverSpec};
use crate::error::{LabError, Result};
use crate::experiments::{run_criterion, CriterionConfig, CriterionReport, Table};
use crate::lattice::{LatticeModel, ModelSpec};
use crate::mc::{simulate_paths, solve_reflected_mc, Dynamics, Increments, MarkovBarrier, RegressionSpec};
use crate::process::Slot;
use crate::rbsde::penalty::solve_via_penalization;
use crate::rbsde::{check_quadruple, solve_reflected, solve_via_monotone_approx, SolutionQuadruple};
use crate::stopping::{brute_force_snell, DEFAULT_RULE_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Monotone,
    Penalization,
    Bruteforce,
    Mc,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Direct => "direct",
            Route::Monotone => "monotone",
            Route::Penalization => "penalization",
            Route::Bruteforce => "bruteforce",
            Route::Mc => "mc",
        }
    }

    /// Tolerance key the route reads.
    fn tolerance_key(self) -> &'static str {
        match self {
            Route::Direct => "residual",
            Route::Monotone => "monotone",
            Route::Penalization => "penalization",
            Route::Bruteforce => "oracle",
            Route::Mc => "mcSigmas",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Schedules {
    /// Last member of the cadlag approximation sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub penalties: Vec<f64>,
    /// Refinement levels on which the direct route is repeated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refinements: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct McSettings {
    pub dynamics: Dynamics,
    pub increments: Increments,
    pub paths: usize,
    pub batches: usize,
    pub regression: RegressionSpec,
    pub barrier: MarkovBarrier,
}

/// Checks on the direct solution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Expectations {
    /// `Y_at(0)`, compared with tolerance `value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_value: Option<f64>,
    /// Exactly the `(level, node)` pairs with a nonzero right jump of `A`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_jump_nodes: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CriterionSettings {
    pub id: u8,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<BarrierSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub routes: Vec<Route>,
    #[serde(default)]
    pub schedules: Schedules,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectations>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionSettings>,
}

fn config(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn tol(&self, key: &str) -> Result<f64> {
        self.tolerances
            .get(key)
            .copied()
            .ok_or_else(|| config(format!("scenario {} needs tolerance \"{key}\"", self.name)))
    }

    pub fn validate(&self) -> Result<()> {
        let ok_name = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok_name {
            return Err(config(format!("invalid scenario name {:?}", self.name)));
        }
        for (k, v) in &self.tolerances {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(config(format!("tolerance \"{k}\" must be positive, got {v}")));
            }
        }
        match (&self.criterion, self.routes.is_empty()) {
            (Some(_), false) => return Err(config("a scenario has either routes or a criterion")),
            (None, true) => return Err(config("a scenario needs routes or a criterion")),
            _ => {}
        }
        if let Some(c) = &self.criterion {
            if self.seeds.len() != 1 {
                return Err(config("a criterion scenario takes exactly one seed"));
            }
            return self.criterion_config(c).and_then(|cfg| cfg.validate());
        }
        if self.model.is_none() || self.driver.is_none() || self.barrier.is_none() {
            return Err(config("routes need model, driver and barrier"));
        }
        for r in &self.routes {
            self.tol(r.tolerance_key())?;
        }
        let has = |r| self.routes.contains(&r);
        if has(Route::Monotone) && self.schedules.n_max.is_none_or(|n| n == 0) {
            return Err(config("monotone route needs schedules.nMax >= 1"));
        }
        if has(Route::Penalization) && self.schedules.penalties.is_empty() {
            return Err(config("penalization route needs schedules.penalties"));
        }
        if has(Route::Mc) && (self.mc.is_none() || self.seeds.is_empty()) {
            return Err(config("mc route needs mc settings and a seed"));
        }
        if let Some(e) = &self.expect {
            if !has(Route::Direct) {
                return Err(config("expectations apply to the direct route"));
            }
            if e.root_value.is_some() {
                self.tol("value")?;
            }
        }
        Ok(())
    }

    fn criterion_config(&self, c: &CriterionSettings) -> Result<CriterionConfig> {
        Ok(CriterionConfig {
            id: c.id,
            instances: c.instances,
            seed: self.seeds[0],
            tolerances: self.tolerances.clone(),
        })
    }

    /// The model the routes run on (refinement is applied by the routes
    /// themselves).
    pub fn base_model(&self) -> Result<LatticeModel<f64>> {
        self.model
            .as_ref()
            .ok_or_else(|| config("scenario has no model"))?
            .build_base()
    }
}

/// Output of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Summary,
    /// `(file name, CSV or JSON contents)`.
    pub files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub scenario: String,
    pub route_values: BTreeMap<String, f64>,
    pub max_gaps: BTreeMap<String, f64>,
    pub pass_flags: BTreeMap<String, bool>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionReport>,
}

impl Summary {
    fn new(name: &str) -> Self {
        Self {
            scenario: name.into(),
            route_values: BTreeMap::new(),
            max_gaps: BTreeMap::new(),
            pass_flags: BTreeMap::new(),
            passed: false,
            criterion: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

fn table_bytes(t: &Table) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    t.write_csv(&mut v)?;
    Ok(v)
}

/// Runs a validated scenario. `base_dir` resolves relative table paths in
/// the barrier spec.
pub fn run_scenario(s: &Scenario, base_dir: &Path) -> Result<Outcome> {
    s.validate()?;
    if let Some(c) = &s.criterion {
        let report = run_criterion(&s.criterion_config(c)?)?;
        let mut files = Vec::new();
        for t in &report.tables {
            files.push((format!("{}.csv", t.name), table_bytes(t)?));
        }
        let mut summary = Summary::new(&s.name);
        summary.pass_flags.insert(format!("criterion{}", c.id), report.passed);
        for (k, v) in &report.metrics {
            summary.max_gaps.insert(k.clone(), *v);
        }
        summary.passed = report.passed;
        summary.criterion = Some(report);
        files.insert(0, ("summary.json".into(), summary.to_json().into_bytes()));
        return Ok(Outcome { summary, files });
    }
    run_routes(s, base_dir)
}

fn instance_hash(s: &Scenario, barrier: &LadlagBarrier<f64>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(&(&s.model, &s.driver)).expect("serializable").as_bytes());
    let mut csv = Vec::new();
    barrier.write_csv(&mut csv)?;
    h.update(&csv);
    Ok(hex::encode(h.finalize()))
}

fn run_routes(s: &Scenario, base_dir: &Path) -> Result<Outcome> {
    let model = s.base_model()?;
    let dt = model.time(1) - model.time(0);
    let driver: BuiltinDriver<f64> = s
        .driver
        .as_ref()
        .expect("validated")
        .build(dt, model.intensities())?;
    let barrier = s.barrier.as_ref().expect("validated").build(&model, base_dir)?;
    let mut summary = Summary::new(&s.name);
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut series = Table::new("convergence", &["route", "n", "maxGap"]);

    // every other route is compared with the direct solution
    let q: SolutionQuadruple<f64> = solve_reflected(&model, &driver, &barrier)?;
    let y0 = q.y.at[0][0];
    let mut bw = Vec::new();
    barrier.write_csv(&mut bw)?;
    files.push(("barrier.csv".into(), bw));

    for &route in &s.routes {
        let tol = s.tol(route.tolerance_key())?;
        let key = route.name().to_string();
        match route {
            Route::Direct => {
                let check = check_quadruple(&model, &driver, &q, &barrier)?;
                summary.route_values.insert(key.clone(), y0);
                summary.max_gaps.insert(key.clone(), check.max_residual());
                let mut pass = check.passes(tol);
                let mut qw = Vec::new();
                q.write_csv(&model, &mut qw)?;
                files.push(("quadruple.csv".into(), qw));
                for &r in &s.schedules.refinements {
                    let refined = model.refine(r)?;
                    let lifted = lift_to_refined(&model, &refined, &barrier)?;
                    let qr = solve_reflected(&refined, &driver, &lifted)?;
                    let gap = restrict_to_base(&model, &qr.y)?.max_abs_diff(&q.y)?;
                    pass &= gap <= tol;
                    series.push(vec!["refined".into(), r.to_string(), format!("{gap:e}")]);
                }
                if let Some(e) = &s.expect {
                    if let Some(v) = e.root_value {
                        let gap = (y0 - v).abs();
                        summary.max_gaps.insert("expectedValue".into(), gap);
                        let ok = gap <= s.tol("value")?;
                        summary.pass_flags.insert("expectedValue".into(), ok);
                    }
                    if let Some(nodes) = &e.right_jump_nodes {
                        let want: BTreeSet<(usize, usize)> = nodes.iter().copied().collect();
                        let got: BTreeSet<(usize, usize)> = (0..model.depth())
                            .flat_map(|j| {
                                q.da.at[j]
                                    .iter()
                                    .enumerate()
                                    .filter(|(_, v)| **v != 0.0)
                                    .map(move |(i, _)| (j, i))
                            })
                            .collect();
                        summary.pass_flags.insert("rightJumpNodes".into(), got == want);
                    }
                }
                summary.pass_flags.insert(key, pass);
            }
            Route::Bruteforce => {
                let bf = brute_force_snell(&model, &driver, &barrier, 0, Slot::At, DEFAULT_RULE_BUDGET)?;
                let gap = (bf.values[0] - y0).abs();
                summary.route_values.insert(key.clone(), bf.values[0]);
                summary.max_gaps.insert(key.clone(), gap);
                summary.pass_flags.insert(key, gap <= tol);
                let oracle = serde_json::json!({
                    "instanceHash": instance_hash(s, &barrier)?,
                    "ruleCount": bf.rule_count.to_string(),
                    "dpValue": y0,
                    "bruteForceValue": bf.values[0],
                    "maxGap": gap,
                    "argmax": bf.argmax[0],
                });
                files.push((
                    "oracle.json".into(),
                    (serde_json::to_string_pretty(&oracle).expect("json") + "\n").into_bytes(),
                ));
            }
            Route::Monotone => {
                let runs = solve_via_monotone_approx(&model, &driver, &barrier, s.schedules.n_max.expect("validated"))?;
                let mut prev = f64::INFINITY;
                let mut monotone = true;
                for r in &runs {
                    let gap = r.restricted.max_abs_diff(&q.y)?;
                    monotone &= gap <= prev;
                    prev = gap;
                    series.push(vec![key.clone(), r.n.to_string(), format!("{gap:e}")]);
                }
                let last = runs.last().expect("n_max >= 1");
                summary.route_values.insert(key.clone(), last.restricted.at[0][0]);
                summary.max_gaps.insert(key.clone(), prev);
                summary.pass_flags.insert(key, monotone && prev <= tol * (1.0 + y0.abs()));
            }
            Route::Penalization => {
                let run = solve_via_penalization(&model, &driver, &barrier, &s.schedules.penalties)?;
                let mut prev_y: Option<&crate::process::SlotProcess<f64>> = None;
                let mut nondecreasing = true;
                let mut gap = f64::INFINITY;
                for st in &run.steps {
                    gap = st.y_bar.max_abs_diff(&q.y)?;
                    if let Some(p) = prev_y {
                        nondecreasing &= st.y_bar.max_shortfall(p)? <= 0.0;
                    }
                    prev_y = Some(&st.y_bar);
                    series.push(vec![key.clone(), format!("{}", st.n), format!("{gap:e}")]);
                }
                let last = run.steps.last().expect("validated");
                summary.route_values.insert(key.clone(), last.y_bar.at[0][0]);
                summary.max_gaps.insert(key.clone(), gap);
                summary
                    .pass_flags
                    .insert(key, nondecreasing && gap <= tol * (1.0 + y0.abs()));
            }
            Route::Mc => {
                let mc = s.mc.as_ref().expect("validated");
                let ens = simulate_paths(&model, &mc.dynamics, mc.increments, mc.paths, s.seeds[0])?;
                let est = solve_reflected_mc(&ens, &driver, &mc.barrier, &mc.regression, mc.batches)?;
                let gap = (est.y0 - y0).abs();
                summary.route_values.insert(key.clone(), est.y0);
                summary.route_values.insert("mcStandardError".into(), est.se);
                summary.max_gaps.insert(key.clone(), gap);
                summary.pass_flags.insert(key, gap <= tol * est.se);
                let mut w = Vec::new();
                est.write_csv(&mut w)?;
                files.push(("mc.csv".into(), w));
            }
        }
    }
    if !series.rows.is_empty() {
        files.push(("convergence.csv".into(), table_bytes(&series)?));
    }
    summary.passed = summary.pass_flags.values().all(|&b| b);
    files.insert(0, ("summary.json".into(), summary.to_json().into_bytes()));
    Ok(Outcome { summary, files })
}

/// Ordered list of scenarios.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: Vec<Scenario>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(entries: Vec<Scenario>) -> Self {
        Self { entries }
    }

    pub fn builtin() -> Self {
        Self::new(builtin_scenarios())
    }

    /// `(name, description)` in registry order.
    pub fn list(&self) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .map(|s| (s.name.as_str(), s.description.as_str()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Scenario> {
        self.entries.iter().find(|s| s.name == name)
    }

    pub fn entries(&self) -> &[Scenario] {
        &self.entries
    }
}

fn criterion_scenario(name: &str, description: &str, id: u8) -> Scenario {
    let std = CriterionConfig::standard(id).expect("ids 1..=14");
    Scenario {
        name: name.into(),
        description: description.into(),
        model: None,
        driver: None,
        barrier: None,
        routes: Vec::new(),
        schedules: Schedules::default(),
        seeds: vec![std.seed],
        tolerances: std.tolerances,
        mc: None,
        expect: None,
        criterion: Some(CriterionSettings {
            id,
            instances: std.instances,
        }),
    }
}

fn tolerances(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn builtin_scenarios() -> Vec<Scenario> {
    let put = Scenario {
        name: "american-put".into(),
        description: "two-step American put: direct, brute force, cadlag approximation, penalization and Monte Carlo".into(),
        model: Some(ModelSpec::binomial(1.0, 2)),
        driver: Some(DriverSpec::Zero),
        barrier: Some(BarrierSpec::AmericanPut {
            strike: 100.0,
            spot: 100.0,
            up: 1.2,
            down: 0.8,
        }),
        routes: vec![Route::Direct, Route::Bruteforce, Route::Monotone, Route::Penalization, Route::Mc],
        schedules: Schedules {
            n_max: Some(10),
            penalties: vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0],
            refinements: vec![1, 2, 3],
        },
        seeds: vec![1],
        tolerances: tolerances(&[
            ("residual", 1e-12),
            ("oracle", 1e-10),
            ("monotone", 1e-3),
            ("penalization", 1e-2),
            ("mcSigmas", 3.0),
            ("value", 1e-12),
        ]),
        mc: Some(McSettings {
            dynamics: Dynamics::Geometric { spot: 100.0, up: 1.2, down: 0.8 },
            increments: Increments::Rademacher,
            paths: 10_000,
            batches: 32,
            regression: RegressionSpec {
                basis: crate::mc::Basis::Bins { count: 8 },
                ridge: 0.0,
            },
            barrier: MarkovBarrier {
                running: crate::mc::Payoff::Put { strike: 100.0 },
                terminal: crate::mc::Payoff::Put { strike: 100.0 },
            },
        }),
        expect: Some(Expectations {
            root_value: Some(11.0),
            right_jump_nodes: None,
        }),
        criterion: None,
    };
    let spike = Scenario {
        name: "spike-demo".into(),
        description: "single upward spike at an instant: the right-jump ledger charges exactly there".into(),
        model: Some(ModelSpec::binomial(1.0, 2)),
        driver: Some(DriverSpec::Zero),
        barrier: Some(BarrierSpec::Spike {
            level: 1,
            nodes: crate::barrier::NodeSelect::Ids(vec![0]),
            height: 5.0,
            base: 0.0,
        }),
        routes: vec![Route::Direct, Route::Bruteforce],
        schedules: Schedules::default(),
        seeds: Vec::new(),
        tolerances: tolerances(&[("residual", 1e-12), ("oracle", 1e-10), ("value", 1e-12)]),
        mc: None,
        expect: Some(Expectations {
            root_value: Some(2.5),
            right_jump_nodes: Some(vec![(1, 0)]),
        }),
        criterion: None,
    };
    vec![
        put,
        spike,
        criterion_scenario("monotone-approx", "cadlag approximations converge monotonically to the direct solution", 3),
        criterion_scenario("penalization-convergence", "penalized solutions increase to the direct solution", 4),
        criterion_scenario("s4-continuity", "value perturbation vanishes along a converging barrier schedule", 13),
        criterion_scenario("bellman-scaling", "Bellman principle with a scaling factor known at an intermediate level", 9),
        criterion_scenario("pengxu-check", "generalized Skorokhod condition for sampled cadlag processes", 12),
        criterion_scenario("right-shift", "right-limit shift of the solution under a strict left gap", 11),
        criterion_scenario("mc-vs-lattice", "Monte Carlo regression estimate against the lattice American put", 14),
        criterion_scenario("oracle-equivalence", "brute force over stopping rules equals the dynamic program", 1),
        criterion_scenario("comparison", "decreasing barriers give decreasing solutions", 2),
        criterion_scenario("skorokhod", "complementarity residuals of every solver output", 5),
        criterion_scenario("reflection-identities", "instant and left-limit reflection identities hold exactly", 6),
        criterion_scenario("regularity", "left-USC and xi <= xi+ barriers remove the matching jumps", 7),
        criterion_scenario("supermartingale", "value family is the smallest dominating g-supermartingale", 8),
        criterion_scenario("envelope-shift", "shifted envelope barrier leaves value and solution unchanged", 10),
    ]
}
