//! Optimal stopping over node-slots: rules, Snell envelopes, brute force,
//! and the structural checks built on them.

pub mod bellman;
pub mod envelope;
pub mod rule;
pub mod snell;
pub mod supermart;

pub use bellman::{bellman_scaling_check, BellmanReport, ScaledDriver};
pub use envelope::{shift_envelope, EnvelopeReport};
pub use rule::{
    count_stopping_rules, count_subtree_rules, enumerate_stopping_rules, StopPoint, StoppingRule,
};
pub use snell::{
    brute_force_family, brute_force_node, brute_force_over, brute_force_snell, hitting_rule,
    snell_dp, BruteForce, Provenance, ValueFamily, DEFAULT_RULE_BUDGET,
};
pub use supermart::{check_supermartingale_family, PairFailure, SupermartReport};
