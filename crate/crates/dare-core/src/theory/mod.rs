//! Risk formulas, the adversary, and the verification experiments.

pub mod adversary;
pub mod experiments;
pub mod risk;

pub use adversary::{adversary_search, AdversaryBudget, AdversarySpec, FreeBudget, SearchResult};
pub use experiments::{
    classifier_alignment, env_complexity_experiment, jituda_condition, jituda_experiment, lemma1_check,
    loglog_slope, mean_stderr, ComplexityCurve, Lemma1Result, MeanStderr, RiskCurve,
};
pub use risk::{
    adversarial_sup_risk, analytic_excess, delta_matrix, excess_risk_linear, mc_excess, whitener_error,
    RiskReport,
};
