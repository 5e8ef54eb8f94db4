#![allow(dead_code)]

use gridshed::grid::{sample_instance, synthetic_network, InstanceDistribution, NetworkModel, OpsInstance, SyntheticConfig};
use gridshed::ops::{OpsConfig, PenaltyDirection};
use gridshed_milp::SolverConfig;

pub fn network(seed: u64, buses: usize) -> (NetworkModel, InstanceDistribution) {
    synthetic_network(&SyntheticConfig {
        buses,
        seed,
        ..Default::default()
    })
    .expect("synthetic network")
}

pub fn case(seed: u64, buses: usize) -> (NetworkModel, OpsInstance) {
    let (net, dist) = network(seed, buses);
    let inst = sample_instance(&net, &dist, seed % 5);
    (net, inst)
}

pub fn ops(penalize_deenergized: bool) -> OpsConfig {
    OpsConfig {
        penalty_direction: if penalize_deenergized {
            PenaltyDirection::PenalizeDeenergized
        } else {
            PenaltyDirection::AsPrinted
        },
        ..Default::default()
    }
}

pub fn exact() -> SolverConfig {
    SolverConfig {
        mip_gap_tol: 1e-9,
        ..Default::default()
    }
}
