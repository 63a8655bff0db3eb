//! Forward stepwise selection over groups of variables with exact
//! truncated-χ significance tests at each step.

pub mod error;
pub mod expansions;
pub mod float;
pub mod grouped_model;
pub mod harness;
pub mod ingest;
pub mod linalg;
pub mod mc_oracle;
pub mod quadratic_selection;
pub mod rng;
pub mod simgen;
pub mod special;
pub mod stepwise_path;
pub mod stopping_rules;
pub mod tchi;

pub use error::{Error, Result};
pub use float::Float;
pub use expansions::{glinternet_expand, spline_expand, ExpandedDesign, InteractionOptions, Provenance};
pub use grouped_model::{encode_categorical, GroupedDesign, NoiseModel, Response};
pub use mc_oracle::{max_chi_pvalue, McEstimate};
pub use quadratic_selection::{slice_event, slice_one, QuadraticConstraint, TruncationRegion};
pub use stepwise_path::{fit_active, forward_stepwise, SelectionPath, StepRecord, StopReason, TestKind};
pub use simgen::{DesignFamily, ScenarioConfig};
pub use stopping_rules::{Penalty, Rule, StoppingDecision};
pub use tchi::{chisq_drop_pvalue, linear_fractional, tchi_step_pvalue, truncated_chi_survival, TChiResult};

pub type Design = GroupedDesign<f64>;
pub type Noise = NoiseModel<f64>;
pub type Path = SelectionPath<f64>;
pub type Region = TruncationRegion<f64>;
pub type Constraint = QuadraticConstraint<f64>;
pub type TChi = TChiResult<f64>;
