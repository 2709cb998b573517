//! The learned menu mechanism: leave-one-out features, the shared menu
//! network, and the survival-chain assignment rule.

mod assign;
mod features;
mod network;

pub use assign::{
    acceptable_mask, assign, assign_graph, chain_orders, expected_utility, realize_matching,
    survival_chain, AssignmentMatrix,
};
pub use features::{encode_all, encode_features, FEATURE_COUNT, FEATURE_VERSION};
pub use network::{
    generate_menus, menu_row, BoundParams, MenuMatrix, MenuNetwork, NetworkMetadata,
    DEFAULT_HIDDEN, MENU_CEIL, MENU_FLOOR,
};
