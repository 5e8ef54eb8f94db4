//! Restricted problems built from predicted switch probabilities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use gridshed_milp::{add_constraints, fix_variables, solve_bb, MilpProblem, Row, Sense, SolveStatus, SolveTrace, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::RiskBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Pas,
    DomainPas,
    PasNd,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Pas => "pas",
            Variant::DomainPas => "domain-pas",
            Variant::PasNd => "pas-nd",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pas" => Ok(Variant::Pas),
            "domain-pas" | "domain_pas" => Ok(Variant::DomainPas),
            "pas-nd" | "pas_nd" => Ok(Variant::PasNd),
            _ => Err(Error::InvalidParameter(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub variant: Variant,
    pub phi: f64,
    pub phi_prime: f64,
    /// Classic PaS overrides; `None` picks the defaults described on [`classic_parameters`].
    pub k0: Option<usize>,
    pub k1: Option<usize>,
    pub delta: Option<usize>,
    pub retry_limit: usize,
}

impl RefinementConfig {
    pub fn new(variant: Variant, phi: f64, phi_prime: f64) -> Self {
        Self {
            variant,
            phi,
            phi_prime,
            k0: None,
            k1: None,
            delta: None,
            retry_limit: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi <= 1.0) {
            return Err(Error::InvalidParameter(format!("phi {} outside (0, 1]", self.phi)));
        }
        if !(self.phi_prime >= 0.0 && self.phi_prime.is_finite()) {
            return Err(Error::InvalidParameter(format!("phi' {} must be >= 0", self.phi_prime)));
        }
        Ok(())
    }
}

/// Positions into the target vector (not problem variable indices).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodSets {
    pub zeros: Vec<usize>,
    pub ones: Vec<usize>,
}

fn ascending(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    idx
}

fn descending(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx
}

/// Lowest `k0` scores and highest `k1` of the rest; ties go to the lower index.
pub fn select_sets(p: &[f64], k0: usize, k1: usize) -> Result<NeighborhoodSets> {
    if k0 + k1 > p.len() {
        return Err(Error::InvalidParameter(format!("k0 + k1 = {} exceeds {} variables", k0 + k1, p.len())));
    }
    let mut zeros: Vec<usize> = ascending(p).into_iter().take(k0).collect();
    let mut taken = vec![false; p.len()];
    zeros.iter().for_each(|&i| taken[i] = true);
    let mut ones: Vec<usize> = descending(p).into_iter().filter(|&i| !taken[i]).take(k1).collect();
    zeros.sort_unstable();
    ones.sort_unstable();
    Ok(NeighborhoodSets { zeros, ones })
}

/// Like [`select_sets`], but when `k0 + k1` exceeds the variable count the two
/// sets are drawn independently from either end and may overlap.
pub fn select_extremes(p: &[f64], k0: usize, k1: usize) -> Result<NeighborhoodSets> {
    if k0 > p.len() || k1 > p.len() {
        return Err(Error::InvalidParameter(format!("set size exceeds {} variables", p.len())));
    }
    if k0 + k1 <= p.len() {
        return select_sets(p, k0, k1);
    }
    let mut zeros: Vec<usize> = ascending(p).into_iter().take(k0).collect();
    let mut ones: Vec<usize> = descending(p).into_iter().take(k1).collect();
    zeros.sort_unstable();
    ones.sort_unstable();
    Ok(NeighborhoodSets { zeros, ones })
}

fn check_targets(problem: &MilpProblem, targets: &[usize], p: &[f64]) -> Result<()> {
    if targets.len() != p.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            got: p.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= problem.num_vars()) {
        return Err(Error::InvalidParameter(format!("target {t} out of range")));
    }
    Ok(())
}

/// `sum_{I0} z + sum_{I1} (1 - z) <= delta`.
pub fn ball_row(targets: &[usize], sets: &NeighborhoodSets, delta: usize) -> Row {
    let mut coeffs: Vec<(usize, f64)> = sets.zeros.iter().map(|&i| (targets[i], 1.0)).collect();
    coeffs.extend(sets.ones.iter().map(|&i| (targets[i], -1.0)));
    Row::new("pas_ball", coeffs, Sense::Le, delta as f64 - sets.ones.len() as f64)
}

/// `sum_{I0} z <= delta0`.
pub fn zeros_row(targets: &[usize], zeros: &[usize], delta0: usize) -> Row {
    let coeffs = zeros.iter().map(|&i| (targets[i], 1.0)).collect();
    Row::new("pas_zeros", coeffs, Sense::Le, delta0 as f64)
}

/// `sum_{I1} (1 - z) <= delta1`, written as `sum_{I1} z >= |I1| - delta1`.
pub fn ones_row(targets: &[usize], ones: &[usize], delta1: usize) -> Row {
    let coeffs = ones.iter().map(|&i| (targets[i], 1.0)).collect();
    Row::new("pas_ones", coeffs, Sense::Ge, ones.len() as f64 - delta1 as f64)
}

pub fn build_pas(problem: &MilpProblem, targets: &[usize], sets: &NeighborhoodSets, delta: usize) -> Result<MilpProblem> {
    Ok(add_constraints(problem, &[ball_row(targets, sets, delta)])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainParameters {
    pub k0: usize,
    pub delta0: usize,
    pub k1: usize,
    pub delta1: usize,
}

/// Set sizes and flip budgets from the risk bounds over `n` switchable lines.
pub fn domain_parameters(n: usize, bounds: RiskBounds, phi: f64, phi_prime: f64) -> DomainParameters {
    let k0 = bounds.n0_max.min(n);
    let delta0 = k0.saturating_sub(bounds.n0_min);
    let k1 = ((phi * n as f64 + 1e-9).floor() as usize).min(n);
    let base = k1.saturating_sub(n.saturating_sub(bounds.n0_min));
    let slack = (phi_prime * k1 as f64 - 1e-9).ceil().max(0.0) as usize;
    DomainParameters {
        k0,
        delta0,
        k1,
        delta1: (base + slack).min(k1),
    }
}

/// Classic PaS defaults: `k0 = N0max`, `k1 = floor(phi n)` trimmed to fit,
/// `delta = ceil(0.05 (k0 + k1))`. Explicit overrides win.
pub fn classic_parameters(n: usize, bounds: RiskBounds, cfg: &RefinementConfig) -> Result<(usize, usize, usize)> {
    let k0 = cfg.k0.unwrap_or(bounds.n0_max.min(n));
    let k1 = cfg
        .k1
        .unwrap_or_else(|| (((cfg.phi * n as f64) + 1e-9).floor() as usize).min(n.saturating_sub(k0)));
    if k0 + k1 > n {
        return Err(Error::InvalidParameter(format!("k0 + k1 = {} exceeds {n} switchable lines", k0 + k1)));
    }
    let delta = cfg.delta.unwrap_or(((k0 + k1) as f64 * 0.05 - 1e-9).ceil().max(0.0) as usize);
    Ok((k0, k1, delta))
}

pub fn build_domain_pas(
    problem: &MilpProblem,
    targets: &[usize],
    p: &[f64],
    bounds: RiskBounds,
    phi: f64,
    phi_prime: f64,
) -> Result<(MilpProblem, NeighborhoodSets, DomainParameters)> {
    check_targets(problem, targets, p)?;
    let dp = domain_parameters(p.len(), bounds, phi, phi_prime);
    let sets = select_extremes(p, dp.k0, dp.k1)?;
    let rows = [zeros_row(targets, &sets.zeros, dp.delta0), ones_row(targets, &sets.ones, dp.delta1)];
    Ok((add_constraints(problem, &rows)?, sets, dp))
}

/// Domain PaS with no extra slack. When the flip budget on `I1` is zero the
/// set is fixed to one instead of constrained by a row.
pub fn build_pas_nd(
    problem: &MilpProblem,
    targets: &[usize],
    p: &[f64],
    bounds: RiskBounds,
    phi: f64,
) -> Result<(MilpProblem, NeighborhoodSets, DomainParameters)> {
    check_targets(problem, targets, p)?;
    let dp = domain_parameters(p.len(), bounds, phi, 0.0);
    let sets = select_extremes(p, dp.k0, dp.k1)?;
    let restricted = nd_problem(problem, targets, &sets, dp.delta0, dp.delta1)?;
    Ok((restricted, sets, dp))
}

fn nd_problem(problem: &MilpProblem, targets: &[usize], sets: &NeighborhoodSets, delta0: usize, delta1: usize) -> Result<MilpProblem> {
    let with_zeros = add_constraints(problem, &[zeros_row(targets, &sets.zeros, delta0)])?;
    if delta1 == 0 {
        let fix: BTreeMap<usize, bool> = sets.ones.iter().map(|&i| (targets[i], true)).collect();
        Ok(fix_variables(&with_zeros, &fix)?)
    } else {
        Ok(add_constraints(&with_zeros, &[ones_row(targets, &sets.ones, delta1)])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedSolve {
    pub trace: SolveTrace,
    pub sets: NeighborhoodSets,
    pub delta0: usize,
    pub delta1: usize,
    /// Whether the final attempt fixed `I1` outright.
    pub fixed_ones: bool,
    pub retries: usize,
    /// Restricted problem of the final attempt.
    pub problem: MilpProblem,
}

fn remaining(cfg: &SolverConfig, used_time: f64, used_nodes: usize) -> SolverConfig {
    let mut c = cfg.clone();
    c.time_limit = (cfg.time_limit - used_time).max(0.0);
    c.node_limit = cfg.node_limit.saturating_sub(used_nodes);
    c
}

fn budget_left(cfg: &SolverConfig) -> bool {
    cfg.time_limit > 0.0 && cfg.node_limit > 0
}

/// Builds the variant's restriction and solves it, enlarging the `I1` flip
/// budget after proven infeasibility. Retries share the caller's budget.
pub fn solve_refined(
    problem: &MilpProblem,
    targets: &[usize],
    p: &[f64],
    bounds: RiskBounds,
    cfg: &RefinementConfig,
    solver: &SolverConfig,
) -> Result<RefinedSolve> {
    cfg.validate()?;
    check_targets(problem, targets, p)?;
    let n = p.len();
    if cfg.variant == Variant::Pas {
        let (k0, k1, delta) = classic_parameters(n, bounds, cfg)?;
        let sets = select_sets(p, k0, k1)?;
        let restricted = build_pas(problem, targets, &sets, delta)?;
        let trace = solve_bb(&restricted, solver)?;
        return Ok(RefinedSolve {
            trace,
            sets,
            delta0: delta,
            delta1: delta,
            fixed_ones: false,
            retries: 0,
            problem: restricted,
        });
    }
    let phi_prime = if cfg.variant == Variant::PasNd { 0.0 } else { cfg.phi_prime };
    let dp = domain_parameters(n, bounds, cfg.phi, phi_prime);
    let sets = select_extremes(p, dp.k0, dp.k1)?;
    let step = ((0.05 * dp.k1 as f64 - 1e-9).ceil() as usize).max(1);
    let mut delta1 = dp.delta1;
    let (mut used_time, mut used_nodes) = (0.0, 0usize);
    let mut retries = 0;
    let mut branched = Vec::new();
    loop {
        let restricted = match cfg.variant {
            Variant::PasNd => nd_problem(problem, targets, &sets, dp.delta0, delta1)?,
            _ => add_constraints(
                problem,
                &[zeros_row(targets, &sets.zeros, dp.delta0), ones_row(targets, &sets.ones, delta1)],
            )?,
        };
        let budget = remaining(solver, used_time, used_nodes);
        let attempt = solve_bb(&restricted, &budget)?.shifted(used_time);
        used_time += attempt.elapsed;
        used_nodes += attempt.nodes;
        branched.extend_from_slice(&attempt.branched);
        let exhausted = retries >= cfg.retry_limit || delta1 >= dp.k1 || !budget_left(&remaining(solver, used_time, used_nodes));
        if attempt.status != SolveStatus::Infeasible || exhausted {
            let mut trace = attempt;
            trace.elapsed = used_time;
            trace.nodes = used_nodes;
            branched.sort_unstable();
            branched.dedup();
            trace.branched = branched;
            log::debug!("{} solve: {} retries, delta1 {}", cfg.variant, retries, delta1);
            return Ok(RefinedSolve {
                trace,
                sets,
                delta0: dp.delta0,
                delta1,
                fixed_ones: cfg.variant == Variant::PasNd && delta1 == 0,
                retries,
                problem: restricted,
            });
        }
        retries += 1;
        delta1 = (delta1 + step).min(dp.k1);
    }
}
