//! Adversarial training with a rejection option.
//!
//! A classifier `f` is paired with a rejector `r`; the pair abstains whenever
//! `r(x) <= 0` and pays a fixed cost `c` instead of risking a misclassification.
//! This crate trains such pairs against worst-case perturbations inside an
//! L∞ ball, attacks them, measures rejection-aware error, and evaluates the
//! Rademacher-complexity generalization bound for the linear case.
//!
//! Module map:
//!
//! - [`ingest`]: LIBSVM / CSV parsing, normalization, seeded splits, toy data.
//! - [`model`]: feature maps and the `(f, r)` decision rule.
//! - [`loss`]: 0-1-c loss, max-hinge surrogate, closed-form adversarial terms.
//! - [`attack`]: FGSM, PGD, analytic linear maximizers, worst-case 0-1-c.
//! - [`solver`]: subgradient training for the SVM / AT / MH / ATRO modes.
//! - [`neural`]: a small two-headed network trained with inner PGD.
//! - [`bounds`]: Rademacher estimates and the generalization bound.
//! - [`eval`]: TA/TR/FA/FR counts, Err/Rej/PR, and the benchmark table.

pub mod attack;
pub mod bounds;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod neural;
pub mod seed;
pub mod solver;

pub use error::{AtroError, Result};
pub use ingest::{Dataset, Label, LabeledSample};
pub use loss::SurrogateParams;
pub use model::{Decision, FeatureMap, RejectionModel, Verdict};
