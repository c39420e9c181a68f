use std::path::Path;

use proptest::prelude::*;
use rbsde_core::barrier::{random_irregular, BarrierSpec, LadlagBarrier};
use rbsde_core::bsde::g_expectation;
use rbsde_core::driver::BuiltinDriver;
use rbsde_core::lattice::{LatticeModel, TimeGrid};
use rbsde_core::process::SlotProcess;
use rbsde_core::rbsde::{check_quadruple, skorokhod_residuals, solve_reflected};
use rbsde_core::stopping::{brute_force_family, hitting_rule, DEFAULT_RULE_BUDGET};
use rbsde_core::Slot;

fn model(depth: usize, marks: bool) -> LatticeModel<f64> {
    let mu: &[f64] = if marks { &[0.5] } else { &[] };
    LatticeModel::build(TimeGrid::new(1.0, depth).unwrap(), mu).unwrap()
}

/// Children and branch probabilities per level, read back from the node
/// table the lattice writes.
fn tree(m: &LatticeModel<f64>) -> Vec<Vec<Vec<(usize, f64)>>> {
    let mut csv = Vec::new();
    m.write_nodes_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut children: Vec<Vec<Vec<(usize, f64)>>> =
        (0..m.levels()).map(|j| vec![Vec::new(); m.count(j)]).collect();
    for line in text.lines().skip(2) {
        let c: Vec<&str> = line.split(',').collect();
        let (level, node): (usize, usize) = (c[0].parse().unwrap(), c[1].parse().unwrap());
        let parent: usize = c[2].parse().unwrap();
        children[level - 1][parent].push((node, c[3].parse().unwrap()));
    }
    children
}

/// Plain backward recursion for the driver `g = c`, written against the
/// node table only.
fn oracle(m: &LatticeModel<f64>, c: f64, b: &LadlagBarrier<f64>) -> SlotProcess<f64> {
    let kids = tree(m);
    let last = m.depth();
    let mut y = b.slots().clone();
    for j in (0..last).rev() {
        let dt = m.time(j + 1) - m.time(j);
        for i in 0..m.count(j) {
            let mut e = 0.0;
            for &(k, p) in &kids[j][i] {
                let at = y.at[j + 1][k];
                y.pre[j + 1][k] = b.pre(j + 1)[k].max(at);
                e += p * y.pre[j + 1][k];
            }
            y.post[j][i] = b.open(j)[i].max(e + c * dt);
            y.at[j][i] = b.at(j)[i].max(y.post[j][i]);
        }
    }
    y
}

fn driver(a: f64, bz: f64, cl: f64, marks: bool) -> BuiltinDriver<f64> {
    if marks {
        BuiltinDriver::linear(a, bz, vec![cl], &[0.5])
    } else {
        BuiltinDriver::linear(a, bz, vec![], &[])
    }
}

#[test]
fn american_put_values() {
    let m = model(2, false);
    let b = BarrierSpec::AmericanPut { strike: 100.0, spot: 100.0, up: 1.2, down: 0.8 }
        .build(&m, Path::new("."))
        .unwrap();
    let q = solve_reflected(&m, &BuiltinDriver::Zero, &b).unwrap();
    // down node: exercise 20 equals continuation (4 + 36) / 2
    assert_eq!(q.y.at[1], vec![2.0, 20.0]);
    assert_eq!(q.y.at[0][0], 11.0);
}

#[test]
fn f32_agrees_with_f64() {
    let m64 = model(3, true);
    let m32 = LatticeModel::<f32>::build(TimeGrid::new(1.0f32, 3).unwrap(), &[0.5]).unwrap();
    let b64: LadlagBarrier<f64> = random_irregular(&m64, 4, &[]).unwrap();
    let b32: LadlagBarrier<f32> = random_irregular(&m32, 4, &[]).unwrap();
    let d32 = BuiltinDriver::linear(0.3f32, -0.2, vec![0.1], &[0.5]);
    let d64 = BuiltinDriver::linear(0.3, -0.2, vec![0.1], &[0.5]);
    let y32 = solve_reflected(&m32, &d32, &b32).unwrap().y;
    let y64 = solve_reflected(&m64, &d64, &b64).unwrap().y;
    for ((_, _, _, a), (_, _, _, b)) in y32.iter().zip(y64.iter()) {
        assert!((a as f64 - b).abs() < 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_plain_recursion(depth in 1usize..5, marks: bool, seed: u64, c in -1.0f64..1.0) {
        let m = model(depth, marks);
        let b = random_irregular(&m, seed, &[]).unwrap();
        let q = solve_reflected(&m, &BuiltinDriver::Constant(c), &b).unwrap();
        let want = oracle(&m, c, &b);
        prop_assert!(q.y.max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn reflection_and_right_limit_identities(
        depth in 1usize..5, marks: bool, seed: u64,
        a in -0.5f64..0.5, bz in -0.5f64..0.5, cl in -0.2f64..0.2,
    ) {
        let m = model(depth, marks);
        let b = random_irregular(&m, seed, &[]).unwrap();
        let q = solve_reflected(&m, &driver(a, bz, cl, marks), &b).unwrap();
        for j in 0..m.levels() {
            for i in 0..m.count(j) {
                if j < m.depth() {
                    prop_assert_eq!(q.y.post[j][i], b.open(j)[i].max(q.continuation[j][i]));
                    prop_assert_eq!(q.y.at[j][i], b.at(j)[i].max(q.y.post[j][i]));
                }
                if j > 0 {
                    prop_assert_eq!(q.y.pre[j][i], b.pre(j)[i].max(q.y.at[j][i]));
                }
            }
        }
        prop_assert!(skorokhod_residuals(&m, &q, &b).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn monotone_in_the_barrier(
        depth in 1usize..5, marks: bool, s1: u64, s2: u64,
        a in -0.5f64..0.5, bz in -0.5f64..0.5, cl in -0.2f64..0.2,
    ) {
        let m = model(depth, marks);
        let lo = random_irregular(&m, s1, &[]).unwrap();
        let hi = lo.zip_with(&random_irregular(&m, s2, &[]).unwrap(), f64::max).unwrap();
        let d = driver(a, bz, cl, marks);
        let y_lo = solve_reflected(&m, &d, &lo).unwrap().y;
        let y_hi = solve_reflected(&m, &d, &hi).unwrap().y;
        prop_assert!(y_hi.max_shortfall(&y_lo).unwrap() <= 1e-12);
    }

    #[test]
    fn translation_with_zero_driver(depth in 1usize..5, marks: bool, seed: u64, shift in -5.0f64..5.0) {
        let m = model(depth, marks);
        let b = random_irregular(&m, seed, &[]).unwrap();
        let y = solve_reflected(&m, &BuiltinDriver::Zero, &b).unwrap().y;
        let ys = solve_reflected(&m, &BuiltinDriver::Zero, &b.map(|v| v + shift)).unwrap().y;
        prop_assert!(ys.max_abs_diff(&y.map(|v| v + shift)).unwrap() <= 1e-9);
    }

    #[test]
    fn hitting_rule_is_optimal(
        depth in 1usize..5, marks: bool, seed: u64,
        a in -0.5f64..0.5, bz in -0.5f64..0.5, cl in -0.2f64..0.2,
    ) {
        let m = model(depth, marks);
        let b = random_irregular(&m, seed, &[]).unwrap();
        let d = driver(a, bz, cl, marks);
        let q = solve_reflected(&m, &d, &b).unwrap();
        prop_assert!(check_quadruple(&m, &d, &q, &b).unwrap().passes(1e-10));
        for slot in [Slot::At, Slot::Post] {
            let rule = hitting_rule(&m, &q.y, &b, 0, slot);
            let v = g_expectation(&m, &d, &rule, b.slots()).unwrap()[0].unwrap();
            prop_assert!((v - q.y.get(0, slot, 0).unwrap()).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn enumeration_matches_recursion(
        depth in 1usize..3, seed: u64,
        a in -0.5f64..0.5, bz in -0.5f64..0.5,
    ) {
        let m = model(depth, false);
        let b = random_irregular(&m, seed, &[]).unwrap();
        let d = driver(a, bz, 0.0, false);
        let bf = brute_force_family(&m, &d, &b, DEFAULT_RULE_BUDGET).unwrap();
        let q = solve_reflected(&m, &d, &b).unwrap();
        prop_assert!(bf.values.max_abs_diff(&q.y).unwrap() <= 1e-10);
    }
}
