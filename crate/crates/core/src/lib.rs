//! Federated dual subgradient solver for the discrete variable-support
//! Wasserstein barycenter problem.
//!
//! The barycenter support is chosen as `M` points out of `K` candidates. Each
//! client keeps its particles, costs and local multipliers private and sends
//! the coordinator one `K`-vector per round.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bregman;
pub mod datagen;
pub mod dual;
pub mod federation;
pub mod io;
pub mod measures;
pub mod oracle;
pub mod seed;

pub use bregman::{free_support_barycenter, sinkhorn, BaselineConfig, BaselineResult, BregmanError, SinkhornConfig};
pub use datagen::{make_candidates, paper_preset_5, sample_gmm, CandidateMode, CandidateSpec, GmmSpec};
pub use dual::{
    client_report, dual_value, global_subgradient, local_couplings, local_subgradient, select_support, Batch,
    ClientReport, HyperParams, LocalCoupling, ReportValues, Selection, SolveResult, StopRule,
};
pub use federation::{decode, encode, privacy_audit, Message, ProtocolError, RoundLog};
pub use measures::{
    build_cost_profile, pairwise_cost, validate_instance, CandidateSet, Client, CostProfile, InstanceError,
    ParticleCloud, PointSet, ProblemInstance, RawInstance,
};
pub use oracle::{
    barycenter_objective, brute_force_barycenter, exact_transport, wasserstein_pp, DiscreteMeasure, OracleError,
    TransportPlan,
};
