//! The mixed quadrants: amortised policies refined per state by iterative
//! inference, and amortised open-loop plans trained by policy gradients.

mod plan_head;
mod refine;

pub use plan_head::{
    amortised_plan_as_warm_start, amortised_plan_train, evaluate_plan_head, open_loop_expected_return,
    plan_head_gradient, plan_head_metrics, planning_trace, AmortisedPlanHead, OpenLoopEval, PlanHeadMetrics,
    PlanTrainConfig, WarmStartTrace,
};
pub use refine::{
    adaptive_refinement_policy, continuation_values, iterative_policy_refine, single_state_elbo, AdaptiveOutcome,
    Continuation, IterativePolicyState, PriorMode, RefineConfig, RefineOutcome, RefineUpdate, Trigger, UsageRecord,
};
