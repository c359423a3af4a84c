//! Fixtures shared by the benchmarks: the reference link at 35 dBm and the
//! two-state plant.

use wncs_aoi::aoi::Scheme;
use wncs_aoi::channel::{FblConfig, LinkBudget};
use wncs_aoi::{OptimizerParams, PlantModel, SimConfig};

pub const PT_DBM: f64 = 35.0;
pub const NOISE_DBM: f64 = 23.0;

pub fn budget(k: u32) -> LinkBudget {
    LinkBudget::new(PT_DBM, NOISE_DBM, k).expect("reference link is valid")
}

pub fn optimizer_params(pt_dbm: f64) -> OptimizerParams {
    OptimizerParams::reference(pt_dbm, NOISE_DBM)
}

/// NR at the reference link with `n_packets` arrivals.
pub fn sim_config(k: u32, n_packets: u64) -> SimConfig {
    let mut cfg = SimConfig::new(Scheme::Nr, 1.0, FblConfig::reference(), budget(k));
    cfg.n_packets = n_packets;
    cfg
}

pub fn plant() -> PlantModel {
    PlantModel::smart_grid(0.5).expect("reference plant is valid")
}
