//! The global plan cost function, per-node benefit features, variance
//! based sensitivity analysis, and the logistic benefit predictor.

mod benefit;
mod calibrate;
mod logistic;
mod plan_cost;
mod sobol;

pub use benefit::{
    benefit_delta, gen_benefit_dataset, BenefitScenario, FACTOR_NAMES, FACTOR_RANGES,
};
pub use calibrate::{calibrate_op_costs, fit_multiplier, run_microbench, CalibrationReport};
pub use logistic::{
    log_loss_and_grad, predict_benefit, train_logistic, LogisticModel, NodeCostFeatures,
};
pub use plan_cost::{node_delta_cost, plan_cost, CostConfig, PlanInstance};
pub use sobol::{sobol_indices, SobolResult, SobolSeq};
