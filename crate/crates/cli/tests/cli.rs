use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rbsde(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbsde"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn list_is_stable_and_has_the_named_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let a = rbsde(&["list"], tmp.path());
    let b = rbsde(&["list"], tmp.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(&names[..2], ["american-put", "spike-demo"]);
    for n in ["monotone-approx", "penalization-convergence", "s4-continuity", "bellman-scaling", "pengxu-check", "right-shift", "mc-vs-lattice"] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn american_put_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rbsde(&["run", "american-put", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = fs::read_to_string(tmp.path().join("o/american-put/summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["routeValues"]["direct"], 11.0);
    assert_eq!(v["routeValues"]["bruteforce"], 11.0);
    assert_eq!(v["passed"], true);
}

#[test]
fn identical_runs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let out = rbsde(&["run", "american-put", "right-shift", "--out", dir], tmp.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["american-put", "right-shift"] {
        let a = read_tree(&tmp.path().join("a").join(name));
        let b = read_tree(&tmp.path().join("b").join(name));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn parallel_matches_serial() {
    let tmp = tempfile::tempdir().unwrap();
    rbsde(&["run", "spike-demo", "comparison", "--out", "s"], tmp.path());
    let out = rbsde(&["run", "spike-demo", "comparison", "--out", "p", "--parallel"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    for name in ["spike-demo", "comparison"] {
        assert_eq!(
            read_tree(&tmp.path().join("s").join(name)),
            read_tree(&tmp.path().join("p").join(name))
        );
    }
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    for (file, text) in [
        ("broken.json", "{ not json"),
        ("neg.json", r#"{"name":"neg","criterion":{"id":2,"instances":3},"seeds":[1],"tolerances":{"violation":-1}}"#),
        ("unknown.json", r#"{"name":"u","routes":["direct"],"model":{"T":1,"N":2,"marks":[]},"driver":{"type":"zero"},"barrier":{"type":"constant","value":1},"tolerances":{"residual":1e-12},"extra":true}"#),
    ] {
        fs::write(tmp.path().join(file), text).unwrap();
        let out = rbsde(&["run", file, "--out", "o"], tmp.path());
        assert_eq!(out.status.code(), Some(2), "{file}");
    }
    assert!(!tmp.path().join("o").exists());
    assert_eq!(rbsde(&["run", "no-such-scenario"], tmp.path()).status.code(), Some(2));
}

#[test]
fn over_budget_brute_force_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s: serde_json::Value =
        serde_json::from_slice(&rbsde(&["show", "spike-demo"], tmp.path()).stdout).unwrap();
    s["name"] = "deep".into();
    s["model"]["N"] = 4.into();
    s["expect"] = serde_json::Value::Null;
    fs::write(tmp.path().join("deep.json"), s.to_string()).unwrap();
    let out = rbsde(&["run", "deep.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn failed_tolerance_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s: serde_json::Value =
        serde_json::from_slice(&rbsde(&["show", "spike-demo"], tmp.path()).stdout).unwrap();
    s["expect"]["rootValue"] = 3.0.into();
    fs::write(tmp.path().join("wrong.json"), s.to_string()).unwrap();
    let out = rbsde(&["run", "wrong.json", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(tmp.path().join("o/spike-demo/summary.json").exists());
}

#[test]
fn verify_round_trip_and_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(rbsde(&["run", "spike-demo", "--out", "o"], tmp.path()).status.success());
    let dir = tmp.path().join("o/spike-demo");
    let q = dir.join("quadruple.csv");
    let b = dir.join("barrier.csv");
    let ok = rbsde(&["verify", q.to_str().unwrap(), b.to_str().unwrap()], tmp.path());
    assert_eq!(ok.status.code(), Some(0));

    // raise the barrier above the solution
    let text = fs::read_to_string(&b).unwrap();
    let mut lines = text.lines();
    let mut raised = vec![lines.next().unwrap().to_string()];
    let at = raised[0].split(',').position(|h| h == "atValue").unwrap();
    for l in lines {
        let mut cols: Vec<String> = l.split(',').map(String::from).collect();
        if let Ok(v) = cols[at].parse::<f64>() {
            cols[at] = (v + 100.0).to_string();
        }
        raised.push(cols.join(","));
    }
    fs::write(&b, raised.join("\n") + "\n").unwrap();
    let bad = rbsde(&["verify", q.to_str().unwrap(), b.to_str().unwrap()], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn dump_model_writes_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rbsde(&["dump-model", "american-put", "--out", "nodes.csv"], tmp.path());
    assert!(out.status.success());
    let text = fs::read_to_string(tmp.path().join("nodes.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 1 + 2 + 4);
    assert!(text.starts_with("level,nodeId,parentId,branchProb,dW,jumpMark"));
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["pass"], true);
    assert_eq!(rbsde(&["dump-model", "comparison"], tmp.path()).status.code(), Some(2));
}
