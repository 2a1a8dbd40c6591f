//! Linear structural equation models: total-effect decomposition, analytic
//! moments, and optimal bounded interventions solved as box-constrained
//! convex quadratic programs.
//!
//! The crate is `no_std` with `alloc`. File formats, reporting and the
//! command-line front end live in the `semqp` crate.
//!
//! Variables are partitioned into covariates (`Z`), treatments (`X`) and
//! outputs (`Y`):
//!
//! ```text
//!     Z = mu_z + A_zz Z                 + e_z
//!     X = mu_x + A_xz Z + A_xx X        + e_x
//!     Y = mu_y + A_yz Z + A_yx X + A_yy Y + e_y
//! ```
//!
//! An intervention replaces `A_xz` and/or `mu_x`. [`qp::build_variance_qp`]
//! chooses `A_xz` to minimise a weighted sum of output variances and
//! [`qp::build_mean_qp`] chooses `mu_x` to bring output means onto targets.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod effects;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod qp;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use effects::{
    apply_intervention, enumerate_path_effects, moments, total_effects, EffectsError,
    Intervention, Moments, PathEffect, TotalEffects,
};
pub use linalg::{LinalgError, Matrix};
pub use model::{partition_by_treatment, Bounds, ModelError, SemGraph, SemModel, VariableRole};
pub use qp::{
    build_mean_qp, build_variance_qp, check_kkt, offset_certificate, solve_box_qp, BoxQp,
    KktReport, MeanTarget, QpError, QpSolution,
};
