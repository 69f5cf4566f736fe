//! Independent reference values: exact binomial-tree primal and dual
//! recursions, the single-maturity threshold price and the success frequency
//! of the dual-optimal policy.

pub mod success;
pub mod threshold;
pub mod tree;

pub use success::{dual_success_probability, SuccessEstimate};
pub use threshold::{european_threshold_price, threshold_pmin, ThresholdPrice};
pub use tree::{
    neyman_pearson_value, tree_dual, tree_dual_exact, tree_duality_check, tree_primal_dpp, tree_superhedge,
    TreeDual, TreeDualityReport, TreeModel, TreeSurface,
};
