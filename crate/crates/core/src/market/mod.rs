//! Market instances, matchings, Mallows preference generation and dataset
//! persistence.

mod dataset;
mod deferred;
mod generate;
mod instance;
mod mallows;

pub use dataset::{read_dataset, write_dataset, DatasetHeader, DATASET_FORMAT, DATASET_VERSION};
pub use deferred::{admission_cutoffs, deferred_acceptance, deferred_acceptance_held};
pub(crate) use deferred::{admission_cutoffs_with, preference_lists};
pub use generate::{generate_instance, generate_split, instance_seed, GenerationConfig, Split};
pub use instance::{
    check_feasible, enumerate_matchings, fairness_violations, preference_order, waste_violations,
    DiscreteMatching, Feasibility, MarketInstance, MatchingEnumerator, MAX_ENUMERATION,
    OUTSIDE_OPTION,
};
pub use mallows::{kendall_tau, mallows_partition, rim_sample, MallowsConfig};
