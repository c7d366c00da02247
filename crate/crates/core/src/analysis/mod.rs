//! Parameter/MAC accounting, effective receptive fields and curve locality.

mod cost;
mod erf;
mod locality;

pub use cost::{
    count_flops, count_params, cost_report, mhss_path_cost, twodss_path_cost, CostReport, PathCost,
};
pub use erf::{erf_map, ErfMap, ImageModel};
pub use locality::{locality_csv, locality_report, LocalityRow};
