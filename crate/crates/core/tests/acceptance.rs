//! Acceptance suite: runs every criterion with its standard instance counts
//! and tolerances and prints one line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use rbsde_core::experiments::{run_criterion, CriterionConfig};

fn main() -> ExitCode {
    let only: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for id in 1..=14u8 {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let cfg = CriterionConfig::standard(id).expect("standard config");
        let (ok, title, detail) = match run_criterion(&cfg) {
            Ok(r) => (r.passed, r.title, r.detail),
            Err(e) => (false, format!("criterion {id}"), format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "[{}] {id:>2} {title}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
