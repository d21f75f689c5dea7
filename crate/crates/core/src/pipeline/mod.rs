//! Model assembly: capacity-matched budgets, single-level and two-level
//! hierarchical models, and the deterministic training loop.

mod budget;
mod hier;
mod single;
mod train;

pub use budget::{match_budget, BudgetSpec, HierBudget, SingleBudget};
pub use hier::{HierForward, HierStepOutcome, HierarchicalModel, LevelOutcome};
pub use single::SingleLevelModel;
pub use train::{
    Arch, EvalReport, Hyper, LevelEval, Model, ModelGeometry, ModelManifest, ResetEvent,
    StepRecord, TrainOptions, TrainReport,
};
